//! Random valid models shared by the integration tests.

#![allow(dead_code)]

use enshare::{AgentChain, BackgroundSpec, CtmcSpec, ModelSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type TestRng = ChaCha8Rng;

pub fn rng(seed: u64) -> TestRng {
    TestRng::seed_from_u64(seed)
}

/// A random irreducible chain with 4 to `max_states` states whose first four
/// states are the regeneration states: both in surplus, both in deficit, and
/// each agent in surplus while the other sits at its most negative rate.
pub fn random_ctmc_model(rng: &mut TestRng, max_states: usize) -> ModelSpec {
    let n = rng.random_range(4..=max_states.max(4));
    let min1 = -rng.random_range(0.5..3.0);
    let min2 = -rng.random_range(0.5..3.0);
    let pos = |rng: &mut TestRng| rng.random_range(0.2..3.0);
    let mut netgen = vec![
        (pos(rng), pos(rng)),
        (rng.random_range(min1..0.0), rng.random_range(min2..0.0)),
        (pos(rng), min2),
        (min1, pos(rng)),
    ];
    for _ in 4..n {
        netgen.push((rng.random_range(min1..3.0), rng.random_range(min2..3.0)));
    }

    let mut q = vec![vec![0.0; n]; n];
    for i in 0..n {
        q[i][(i + 1) % n] = rng.random_range(0.2..2.0);
        for j in 0..n {
            if j != i && j != (i + 1) % n && rng.random_bool(0.4) {
                q[i][j] = rng.random_range(0.05..2.0);
            }
        }
        q[i][i] = -q[i].iter().sum::<f64>();
    }
    let labels = (0..n).map(|i| format!("s{i}")).collect();
    ModelSpec {
        background: BackgroundSpec::Ctmc(CtmcSpec {
            labels,
            rate_matrix: q,
            netgen,
        }),
        capacity: [rng.random_range(0.5..8.0), rng.random_range(0.5..8.0)],
        transfer_cap: rng.random_range(0.3..3.0),
    }
}

/// Parameters of one random on/off agent.
#[derive(Debug, Clone, Copy)]
pub struct OnOff {
    pub rate_on_to_off: f64,
    pub rate_off_to_on: f64,
    pub r_on: f64,
    pub r_off: f64,
    pub capacity: f64,
}

impl OnOff {
    pub fn random(rng: &mut TestRng) -> OnOff {
        OnOff {
            rate_on_to_off: rng.random_range(0.5..2.0),
            rate_off_to_on: rng.random_range(0.5..2.0),
            r_on: rng.random_range(1.0..3.0),
            r_off: -rng.random_range(0.5..3.0),
            capacity: rng.random_range(1.0..8.0),
        }
    }

    pub fn chain(&self) -> AgentChain {
        AgentChain::on_off(
            self.rate_on_to_off,
            self.rate_off_to_on,
            self.r_on,
            self.r_off,
        )
    }

    pub fn closed_form(&self) -> f64 {
        enshare::analysis::standalone_llr_closed_form(
            self.rate_on_to_off,
            self.rate_off_to_on,
            self.r_on,
            self.r_off,
            self.capacity,
        )
        .expect("non-degenerate on/off agent")
    }

    /// Mean drift relative to the rate scale.
    pub fn relative_drift(&self) -> f64 {
        let p_on = self.rate_off_to_on / (self.rate_on_to_off + self.rate_off_to_on);
        let drift = p_on * self.r_on + (1.0 - p_on) * self.r_off;
        drift.abs() / self.r_on.max(-self.r_off)
    }
}

pub fn two_state_model(a: &OnOff, b: &OnOff, transfer_cap: f64) -> ModelSpec {
    ModelSpec {
        background: BackgroundSpec::Ctmc(CtmcSpec::product(&a.chain(), &b.chain())),
        capacity: [a.capacity, b.capacity],
        transfer_cap,
    }
}

/// A random configuration in `[0, c1max) x [0, c2max)`.
pub fn random_interior(rng: &mut TestRng, model: &ModelSpec) -> enshare::SharingConfig {
    use enshare::Agent;
    let c1 = model.c_max(Agent::One) * rng.random::<f64>();
    let c2 = model.c_max(Agent::Two) * rng.random::<f64>();
    enshare::SharingConfig::new(c1, c2)
}
