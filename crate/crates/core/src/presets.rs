//! Bundled toy systems: two independent unit-rate on/off chains with
//! `B1 = B2 = 10` and `c = 1.5`.

use crate::model::{AgentChain, BackgroundSpec, CtmcSpec, ModelSpec};

pub const NAMES: [&str; 3] = ["toy-symmetric", "toy-asym1", "toy-asym2"];

/// Toy model where agent 1 has `r in {-1.5, 2}` and agent 2 has
/// `r in {-1.5, agent2_surplus}`.
pub fn toy(agent2_surplus: f64) -> ModelSpec {
    let first = AgentChain::on_off(1.0, 1.0, 2.0, -1.5);
    let second = AgentChain::on_off(1.0, 1.0, agent2_surplus, -1.5);
    ModelSpec {
        background: BackgroundSpec::Ctmc(CtmcSpec::product(&first, &second)),
        capacity: [10.0, 10.0],
        transfer_cap: 1.5,
    }
}

pub fn toy_symmetric() -> ModelSpec {
    toy(2.0)
}

pub fn toy_asym1() -> ModelSpec {
    toy(2.15)
}

pub fn toy_asym2() -> ModelSpec {
    toy(2.5)
}

pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "toy-symmetric" => Some(toy_symmetric()),
        "toy-asym1" => Some(toy_asym1()),
        "toy-asym2" => Some(toy_asym2()),
        _ => None,
    }
}
