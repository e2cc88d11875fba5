//! The two-agent system: background process, net generation, batteries and
//! the transfer capacity, together with sharing configurations.
//!
//! Units are whatever the caller uses consistently: powers and energies must
//! share a time base (e.g. MW and MWh with time in hours).

use std::collections::VecDeque;
use std::fmt;

use crate::error::{Error, Result};

/// Relative slack used when comparing a sharing configuration against its
/// bound `c_{i,max}`.
const CONFIG_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Agent {
    One,
    Two,
}

impl Agent {
    pub fn index(self) -> usize {
        match self {
            Agent::One => 0,
            Agent::Two => 1,
        }
    }

    pub fn other(self) -> Agent {
        match self {
            Agent::One => Agent::Two,
            Agent::Two => Agent::One,
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// A finite continuous-time Markov chain whose states carry a net
/// generation pair `(r1, r2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CtmcSpec {
    pub labels: Vec<String>,
    /// Dense generator matrix, `rate_matrix[i][j]` is the rate of `i -> j`.
    pub rate_matrix: Vec<Vec<f64>>,
    pub netgen: Vec<(f64, f64)>,
}

/// A piecewise-constant replay of sampled net generation.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSpec {
    pub sample_period: f64,
    pub series: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BackgroundSpec {
    Ctmc(CtmcSpec),
    Trace(TraceSpec),
}

/// One agent's own chain, used to build a product background.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentChain {
    pub labels: Vec<String>,
    pub rate_matrix: Vec<Vec<f64>>,
    pub netgen: Vec<f64>,
}

impl AgentChain {
    /// Two-state on/off chain. `rate_on_to_off` is the rate of leaving the
    /// surplus state, `rate_off_to_on` the rate of leaving the deficit state.
    pub fn on_off(rate_on_to_off: f64, rate_off_to_on: f64, r_on: f64, r_off: f64) -> Self {
        AgentChain {
            labels: vec!["on".into(), "off".into()],
            rate_matrix: vec![
                vec![-rate_on_to_off, rate_on_to_off],
                vec![rate_off_to_on, -rate_off_to_on],
            ],
            netgen: vec![r_on, r_off],
        }
    }
}

impl CtmcSpec {
    /// Product of two independent per-agent chains. State `(i, j)` is stored
    /// at index `i * m + j` and labelled `"{a_i}|{b_j}"`.
    pub fn product(first: &AgentChain, second: &AgentChain) -> Self {
        let (n, m) = (first.labels.len(), second.labels.len());
        let size = n * m;
        let mut rate_matrix = vec![vec![0.0; size]; size];
        let mut labels = Vec::with_capacity(size);
        let mut netgen = Vec::with_capacity(size);
        for i in 0..n {
            for j in 0..m {
                let s = i * m + j;
                labels.push(format!("{}|{}", first.labels[i], second.labels[j]));
                netgen.push((first.netgen[i], second.netgen[j]));
                for k in 0..n {
                    if k != i {
                        rate_matrix[s][k * m + j] += first.rate_matrix[i][k];
                    }
                }
                for k in 0..m {
                    if k != j {
                        rate_matrix[s][i * m + k] += second.rate_matrix[j][k];
                    }
                }
                let out: f64 = rate_matrix[s].iter().sum();
                rate_matrix[s][s] = -out;
            }
        }
        CtmcSpec {
            labels,
            rate_matrix,
            netgen,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl BackgroundSpec {
    /// Every net generation pair the background can produce.
    pub fn netgen_values(&self) -> &[(f64, f64)] {
        match self {
            BackgroundSpec::Ctmc(c) => &c.netgen,
            BackgroundSpec::Trace(t) => &t.series,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub background: BackgroundSpec,
    /// Battery capacities `(B1, B2)`.
    pub capacity: [f64; 2],
    /// Physical cap `c` on any instantaneous inter-agent flow.
    pub transfer_cap: f64,
}

/// Peak rates `(c1, c2)` at which each agent covers the other's deficit.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SharingConfig {
    pub c1: f64,
    pub c2: f64,
}

impl SharingConfig {
    pub fn new(c1: f64, c2: f64) -> Self {
        SharingConfig { c1, c2 }
    }

    pub fn get(&self, agent: Agent) -> f64 {
        match agent {
            Agent::One => self.c1,
            Agent::Two => self.c2,
        }
    }

    pub fn with(mut self, agent: Agent, value: f64) -> Self {
        match agent {
            Agent::One => self.c1 = value,
            Agent::Two => self.c2 = value,
        }
        self
    }

    pub fn swapped(self) -> Self {
        SharingConfig {
            c1: self.c2,
            c2: self.c1,
        }
    }
}

impl fmt::Display for SharingConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.c1, self.c2)
    }
}

/// The four states that make the joint battery process regenerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegenerationState {
    /// Both agents in surplus.
    S1,
    /// Both agents in deficit.
    S2,
    /// Agent 1 in surplus, agent 2 at its most negative rate.
    S3,
    /// Agent 2 in surplus, agent 1 at its most negative rate.
    S4,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyStateSpace,
    DimensionMismatch { expected: usize, found: String },
    NonFinite(String),
    NegativeRate { from: usize, to: usize, rate: f64 },
    RowSum { row: usize, sum: f64 },
    Reducible { unreachable: Vec<usize> },
    MissingRegeneration(RegenerationState),
    EmptyTrace,
    NonPositivePeriod(f64),
    NonPositiveCapacity { agent: Agent, value: f64 },
    NegativeTransferCap(f64),
}

impl Violation {
    /// Stable short name, suitable for matching in scripts.
    pub fn name(&self) -> &'static str {
        match self {
            Violation::EmptyStateSpace => "empty state space",
            Violation::DimensionMismatch { .. } => "dimension mismatch",
            Violation::NonFinite(_) => "non-finite value",
            Violation::NegativeRate { .. } => "rate_matrix negative rate",
            Violation::RowSum { .. } => "rate_matrix row sum",
            Violation::Reducible { .. } => "chain not irreducible",
            Violation::MissingRegeneration(RegenerationState::S1) => "s1 missing",
            Violation::MissingRegeneration(RegenerationState::S2) => "s2 missing",
            Violation::MissingRegeneration(RegenerationState::S3) => "s3 missing",
            Violation::MissingRegeneration(RegenerationState::S4) => "s4 missing",
            Violation::EmptyTrace => "empty trace",
            Violation::NonPositivePeriod(_) => "sample_period not positive",
            Violation::NonPositiveCapacity { .. } => "battery capacity not positive",
            Violation::NegativeTransferCap(_) => "transfer capacity negative",
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name())?;
        match self {
            Violation::DimensionMismatch { expected, found } => {
                write!(f, ": expected {expected}, found {found}")
            }
            Violation::NonFinite(what) => write!(f, ": {what}"),
            Violation::NegativeRate { from, to, rate } => {
                write!(f, ": q[{from}][{to}] = {rate}")
            }
            Violation::RowSum { row, sum } => write!(f, ": row {row} sums to {sum:e}"),
            Violation::Reducible { unreachable } => {
                write!(
                    f,
                    ": states {unreachable:?} not mutually reachable from state 0"
                )
            }
            Violation::NonPositivePeriod(p) => write!(f, ": {p}"),
            Violation::NonPositiveCapacity { agent, value } => write!(f, ": B{agent} = {value}"),
            Violation::NegativeTransferCap(c) => write!(f, ": c = {c}"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegenerationCheck {
    Satisfied,
    Violated,
    /// Trace backgrounds are deterministic; the assumption does not apply.
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub regeneration: RegenerationCheck,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, name: &str) -> bool {
        self.violations.iter().any(|v| v.name() == name)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let regen = match self.regeneration {
            RegenerationCheck::Satisfied => "satisfied",
            RegenerationCheck::Violated => "violated",
            RegenerationCheck::NotApplicable => "not applicable",
        };
        if self.violations.is_empty() {
            writeln!(f, "valid")?;
        } else {
            writeln!(f, "invalid ({} violations)", self.violations.len())?;
            for v in &self.violations {
                writeln!(f, "  - {v}")?;
            }
        }
        write!(f, "regeneration states: {regen}")
    }
}

/// Checks every model assumption independently and lists what fails.
pub fn validate_model(model: &ModelSpec) -> ValidationReport {
    let mut violations = Vec::new();
    for (agent, &b) in [Agent::One, Agent::Two].iter().zip(&model.capacity) {
        if !(b > 0.0 && b.is_finite()) {
            violations.push(Violation::NonPositiveCapacity {
                agent: *agent,
                value: b,
            });
        }
    }
    if !(model.transfer_cap >= 0.0) || model.transfer_cap.is_nan() {
        violations.push(Violation::NegativeTransferCap(model.transfer_cap));
    }

    let regeneration = match &model.background {
        BackgroundSpec::Ctmc(chain) => validate_ctmc(chain, &mut violations),
        BackgroundSpec::Trace(trace) => {
            if trace.series.is_empty() {
                violations.push(Violation::EmptyTrace);
            }
            if !(trace.sample_period > 0.0 && trace.sample_period.is_finite()) {
                violations.push(Violation::NonPositivePeriod(trace.sample_period));
            }
            if let Some(i) = trace
                .series
                .iter()
                .position(|(a, b)| !a.is_finite() || !b.is_finite())
            {
                violations.push(Violation::NonFinite(format!("trace sample {i}")));
            }
            RegenerationCheck::NotApplicable
        }
    };
    ValidationReport {
        violations,
        regeneration,
    }
}

fn validate_ctmc(chain: &CtmcSpec, violations: &mut Vec<Violation>) -> RegenerationCheck {
    let n = chain.labels.len();
    if n == 0 {
        violations.push(Violation::EmptyStateSpace);
        return RegenerationCheck::Violated;
    }
    let square = chain.rate_matrix.len() == n && chain.rate_matrix.iter().all(|row| row.len() == n);
    if !square {
        let shape: Vec<usize> = chain.rate_matrix.iter().map(Vec::len).collect();
        violations.push(Violation::DimensionMismatch {
            expected: n,
            found: format!("rate_matrix rows {shape:?}"),
        });
    }
    if chain.netgen.len() != n {
        violations.push(Violation::DimensionMismatch {
            expected: n,
            found: format!("{} netgen entries", chain.netgen.len()),
        });
    }
    if !square || chain.netgen.len() != n {
        return RegenerationCheck::Violated;
    }

    let mut finite = true;
    for (i, row) in chain.rate_matrix.iter().enumerate() {
        if row.iter().any(|q| !q.is_finite()) {
            violations.push(Violation::NonFinite(format!("rate_matrix row {i}")));
            finite = false;
        }
    }
    for (i, (a, b)) in chain.netgen.iter().enumerate() {
        if !a.is_finite() || !b.is_finite() {
            violations.push(Violation::NonFinite(format!("netgen of state {i}")));
            finite = false;
        }
    }
    if !finite {
        return RegenerationCheck::Violated;
    }

    for (i, row) in chain.rate_matrix.iter().enumerate() {
        for (j, &q) in row.iter().enumerate() {
            if i != j && q < 0.0 {
                violations.push(Violation::NegativeRate {
                    from: i,
                    to: j,
                    rate: q,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        let scale = row.iter().fold(1.0_f64, |m, q| m.max(q.abs()));
        if sum.abs() > 1e-9 * scale {
            violations.push(Violation::RowSum { row: i, sum });
        }
    }

    let unreachable = not_strongly_connected(&chain.rate_matrix);
    if !unreachable.is_empty() {
        violations.push(Violation::Reducible { unreachable });
    }

    let missing = missing_regeneration_states(&chain.netgen);
    let check = if missing.is_empty() {
        RegenerationCheck::Satisfied
    } else {
        RegenerationCheck::Violated
    };
    violations.extend(missing.into_iter().map(Violation::MissingRegeneration));
    check
}

/// States that are not both reachable from and able to reach state 0 in the
/// positive-rate transition graph. Empty iff the chain is irreducible.
fn not_strongly_connected(q: &[Vec<f64>]) -> Vec<usize> {
    let n = q.len();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let rate = if forward { q[u][v] } else { q[v][u] };
                if v != u && rate > 0.0 && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    };
    let fwd = reach(true);
    let bwd = reach(false);
    (0..n).filter(|&i| !(fwd[i] && bwd[i])).collect()
}

fn missing_regeneration_states(netgen: &[(f64, f64)]) -> Vec<RegenerationState> {
    let min1 = netgen.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min2 = netgen.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let mut missing = Vec::new();
    if !netgen.iter().any(|&(a, b)| a > 0.0 && b > 0.0) {
        missing.push(RegenerationState::S1);
    }
    if !netgen.iter().any(|&(a, b)| a < 0.0 && b < 0.0) {
        missing.push(RegenerationState::S2);
    }
    if !netgen.iter().any(|&(a, b)| a > 0.0 && b < 0.0 && b <= min2) {
        missing.push(RegenerationState::S3);
    }
    if !netgen.iter().any(|&(a, b)| a < 0.0 && b > 0.0 && a <= min1) {
        missing.push(RegenerationState::S4);
    }
    missing
}

/// `c_{i,max} = min(c, max_s [r_{-i}(s)]_-)`: raising `c_i` past this bound
/// cannot change any transfer.
pub fn c_max(model: &ModelSpec, agent: Agent) -> f64 {
    let other = agent.other().index();
    let worst_deficit = model
        .background
        .netgen_values()
        .iter()
        .map(|p| {
            let r = if other == 0 { p.0 } else { p.1 };
            (-r).max(0.0)
        })
        .fold(0.0_f64, f64::max);
    model.transfer_cap.min(worst_deficit)
}

impl ModelSpec {
    pub fn c_max(&self, agent: Agent) -> f64 {
        c_max(self, agent)
    }

    /// Rejects configurations outside `[0, c_{1,max}] x [0, c_{2,max}]`.
    pub fn check_config(&self, config: &SharingConfig) -> Result<()> {
        for agent in [Agent::One, Agent::Two] {
            let value = config.get(agent);
            let bound = self.c_max(agent);
            if !(value >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "c{agent} = {value} is negative"
                )));
            }
            if value > bound + CONFIG_TOL * bound.max(1.0) {
                return Err(Error::InvalidConfig(format!(
                    "c{agent} = {value} exceeds c{agent},max = {bound}"
                )));
            }
        }
        Ok(())
    }

    /// Errors unless `validate_model` reports no violations.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_model(self);
        if report.is_valid() {
            Ok(())
        } else {
            let names: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidModel(names.join("; ")))
        }
    }

    /// Same system with every power and energy multiplied by `k`.
    pub fn scaled(&self, k: f64) -> ModelSpec {
        let scale = |v: &[(f64, f64)]| v.iter().map(|&(a, b)| (a * k, b * k)).collect();
        let background = match &self.background {
            BackgroundSpec::Ctmc(c) => BackgroundSpec::Ctmc(CtmcSpec {
                labels: c.labels.clone(),
                rate_matrix: c.rate_matrix.clone(),
                netgen: scale(&c.netgen),
            }),
            BackgroundSpec::Trace(t) => BackgroundSpec::Trace(TraceSpec {
                sample_period: t.sample_period,
                series: scale(&t.series),
            }),
        };
        ModelSpec {
            background,
            capacity: [self.capacity[0] * k, self.capacity[1] * k],
            transfer_cap: self.transfer_cap * k,
        }
    }

    /// Mirror image: agent 1 becomes agent 2 and vice versa.
    pub fn swapped(&self) -> ModelSpec {
        let swap = |v: &[(f64, f64)]| v.iter().map(|&(a, b)| (b, a)).collect();
        let background = match &self.background {
            BackgroundSpec::Ctmc(c) => BackgroundSpec::Ctmc(CtmcSpec {
                labels: c.labels.clone(),
                rate_matrix: c.rate_matrix.clone(),
                netgen: swap(&c.netgen),
            }),
            BackgroundSpec::Trace(t) => BackgroundSpec::Trace(TraceSpec {
                sample_period: t.sample_period,
                series: swap(&t.series),
            }),
        };
        ModelSpec {
            background,
            capacity: [self.capacity[1], self.capacity[0]],
            transfer_cap: self.transfer_cap,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    fn two_state(r: [(f64, f64); 2]) -> ModelSpec {
        ModelSpec {
            background: BackgroundSpec::Ctmc(CtmcSpec {
                labels: vec!["a".into(), "b".into()],
                rate_matrix: vec![vec![-1.0, 1.0], vec![2.0, -2.0]],
                netgen: r.to_vec(),
            }),
            capacity: [1.0, 1.0],
            transfer_cap: 1.0,
        }
    }

    #[test]
    fn toy_symmetric_is_valid() {
        let model = presets::toy_symmetric();
        let report = validate_model(&model);
        assert!(report.is_valid(), "{report}");
        assert_eq!(report.regeneration, RegenerationCheck::Satisfied);
        let BackgroundSpec::Ctmc(chain) = &model.background else {
            panic!("toy preset is a CTMC")
        };
        assert_eq!(chain.len(), 4);
    }

    #[test]
    fn bad_row_sum_is_named() {
        let mut model = presets::toy_symmetric();
        if let BackgroundSpec::Ctmc(chain) = &mut model.background {
            chain.rate_matrix[1][0] += 0.5;
        }
        let report = validate_model(&model);
        assert!(report.has("rate_matrix row sum"), "{report}");
    }

    #[test]
    fn all_positive_chain_misses_three_regeneration_states() {
        let report = validate_model(&two_state([(1.0, 2.0), (3.0, 0.5)]));
        assert!(report.has("s2 missing"));
        assert!(report.has("s3 missing"));
        assert!(report.has("s4 missing"));
        assert!(!report.has("s1 missing"));
        assert_eq!(report.regeneration, RegenerationCheck::Violated);
    }

    #[test]
    fn reducible_chain_is_reported() {
        let mut model = presets::toy_symmetric();
        if let BackgroundSpec::Ctmc(chain) = &mut model.background {
            // make state 3 absorbing
            chain.rate_matrix[3] = vec![0.0; 4];
        }
        assert!(validate_model(&model).has("chain not irreducible"));
    }

    #[test]
    fn trace_skips_regeneration() {
        let model = ModelSpec {
            background: BackgroundSpec::Trace(TraceSpec {
                sample_period: 1.0,
                series: vec![(1.0, 1.0)],
            }),
            capacity: [1.0, 1.0],
            transfer_cap: 0.0,
        };
        let report = validate_model(&model);
        assert!(report.is_valid());
        assert_eq!(report.regeneration, RegenerationCheck::NotApplicable);

        let empty = ModelSpec {
            background: BackgroundSpec::Trace(TraceSpec {
                sample_period: 0.0,
                series: vec![],
            }),
            ..model
        };
        let report = validate_model(&empty);
        assert!(report.has("empty trace") && report.has("sample_period not positive"));
    }

    #[test]
    fn capacities_are_checked() {
        let mut model = presets::toy_symmetric();
        model.capacity[1] = 0.0;
        model.transfer_cap = -1.0;
        let report = validate_model(&model);
        assert!(report.has("battery capacity not positive"));
        assert!(report.has("transfer capacity negative"));
    }

    #[test]
    fn c_max_examples() {
        assert_eq!(presets::toy_asym1().c_max(Agent::One), 1.5);
        assert_eq!(presets::toy_asym1().c_max(Agent::Two), 1.5);

        let mut wide = presets::toy_symmetric();
        wide.transfer_cap = 10.0;
        assert_eq!(wide.c_max(Agent::One), 1.5);

        let surplus_two = two_state([(-1.0, 2.0), (3.0, 0.0)]);
        assert_eq!(surplus_two.c_max(Agent::One), 0.0);
        assert_eq!(surplus_two.c_max(Agent::Two), 1.0);
    }

    #[test]
    fn config_bounds() {
        let model = presets::toy_symmetric();
        assert!(model.check_config(&SharingConfig::new(1.5, 0.0)).is_ok());
        assert!(model.check_config(&SharingConfig::new(1.6, 0.0)).is_err());
        assert!(model.check_config(&SharingConfig::new(0.0, -0.1)).is_err());
    }

    #[test]
    fn product_of_irreducible_chains_is_irreducible() {
        let a = AgentChain {
            labels: vec!["x".into(), "y".into(), "z".into()],
            rate_matrix: vec![
                vec![-1.0, 1.0, 0.0],
                vec![0.0, -2.0, 2.0],
                vec![3.0, 0.0, -3.0],
            ],
            netgen: vec![1.0, -1.0, 2.0],
        };
        let b = AgentChain::on_off(0.5, 2.0, 1.0, -2.0);
        let chain = CtmcSpec::product(&a, &b);
        assert_eq!(chain.len(), 6);
        assert!(not_strongly_connected(&chain.rate_matrix).is_empty());
        for row in &chain.rate_matrix {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
