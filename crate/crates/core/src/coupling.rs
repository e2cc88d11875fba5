//! Two sharing configurations driven by one background sample path.
//!
//! Both systems are advanced on a merged event timeline: every step ends at
//! the earliest boundary hit of either system (or the end of the slot), so
//! pathwise comparisons are exact at every event instant. Between events
//! all differences are linear, so the extremes occur at the checked instants.

use crate::background::{BackgroundPath, Slot};
use crate::error::{Error, Result};
use crate::model::{Agent, ModelSpec, SharingConfig};
use crate::simulator::{Accumulators, HybridState, DEFAULT_EVENT_CAP};

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledOptions {
    pub horizon: f64,
    pub seed: u64,
    pub initial: Option<HybridState>,
    pub event_cap: usize,
    /// Keep every merged event in the report.
    pub record_events: bool,
}

impl CoupledOptions {
    pub fn new(horizon: f64, seed: u64) -> Self {
        CoupledOptions {
            horizon,
            seed,
            initial: None,
            event_cap: DEFAULT_EVENT_CAP,
            record_events: false,
        }
    }
}

/// Battery levels of both systems at one merged event instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoupledEvent {
    pub t: f64,
    pub b: [f64; 2],
    pub b_tilde: [f64; 2],
}

/// Largest observed violation of each pathwise ordering. A value `<= 0`
/// means the ordering held everywhere.
///
/// For a perturbation of agent `i`'s share (the `~` system has the larger
/// `c_i`), the orderings are:
/// `b~_j <= b_j` for both `j`, `l~_i >= l_i`, `O~_j <= O_j` for both `j`,
/// `l~_1 + l~_2 <= l_1 + l_2`, and `l~_i <= l_i + eps * t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PathwiseViolations {
    pub battery: [f64; 2],
    pub lost_perturbed: f64,
    pub overflow: [f64; 2],
    pub total_lost: f64,
    pub lipschitz: f64,
}

impl PathwiseViolations {
    fn absorb(&mut self, other: &PathwiseViolations) {
        for i in 0..2 {
            self.battery[i] = self.battery[i].max(other.battery[i]);
            self.overflow[i] = self.overflow[i].max(other.overflow[i]);
        }
        self.lost_perturbed = self.lost_perturbed.max(other.lost_perturbed);
        self.total_lost = self.total_lost.max(other.total_lost);
        self.lipschitz = self.lipschitz.max(other.lipschitz);
    }

    pub fn worst(&self) -> f64 {
        [
            self.battery[0],
            self.battery[1],
            self.lost_perturbed,
            self.overflow[0],
            self.overflow[1],
            self.total_lost,
            self.lipschitz,
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Named checks with their worst violation, in a fixed order.
    pub fn named(&self) -> [(&'static str, f64); 5] {
        [
            ("battery ordering", self.battery[0].max(self.battery[1])),
            ("lost load of perturbed agent", self.lost_perturbed),
            ("overflow ordering", self.overflow[0].max(self.overflow[1])),
            ("total lost load", self.total_lost),
            ("lipschitz bound", self.lipschitz),
        ]
    }
}

/// Which share was raised, and by how much.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub agent: Agent,
    pub epsilon: f64,
}

impl Perturbation {
    /// Recognises `b = a + eps * e_i` with `eps >= 0`.
    pub fn between(a: SharingConfig, b: SharingConfig) -> Option<Perturbation> {
        if a.c2 == b.c2 && b.c1 >= a.c1 {
            Some(Perturbation {
                agent: Agent::One,
                epsilon: b.c1 - a.c1,
            })
        } else if a.c1 == b.c1 && b.c2 >= a.c2 {
            Some(Perturbation {
                agent: Agent::Two,
                epsilon: b.c2 - a.c2,
            })
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledReport {
    pub config: SharingConfig,
    pub config_tilde: SharingConfig,
    pub perturbation: Option<Perturbation>,
    /// Number of merged event instants compared.
    pub events: usize,
    /// Present when the configurations differ in one coordinate only.
    pub violations: Option<PathwiseViolations>,
    /// Whether the two systems stayed bit-identical throughout.
    pub identical: bool,
    pub final_state: HybridState,
    pub final_state_tilde: HybridState,
    pub accumulators: Accumulators,
    pub accumulators_tilde: Accumulators,
    pub trace: Option<Vec<CoupledEvent>>,
}

impl CoupledReport {
    /// Loss-of-load rates `l_i(T) / T` of the original system.
    pub fn llr(&self) -> [f64; 2] {
        let t = self.accumulators.elapsed;
        [self.accumulators.lost[0] / t, self.accumulators.lost[1] / t]
    }

    pub fn llr_tilde(&self) -> [f64; 2] {
        let t = self.accumulators_tilde.elapsed;
        [
            self.accumulators_tilde.lost[0] / t,
            self.accumulators_tilde.lost[1] / t,
        ]
    }

    /// True when every pathwise ordering held up to `slack`.
    pub fn holds(&self, slack: f64) -> bool {
        self.violations.is_none_or(|v| v.worst() <= slack)
    }
}

fn violations_at(
    p: Perturbation,
    t: f64,
    (b, acc): (&HybridState, &Accumulators),
    (bt, acct): (&HybridState, &Accumulators),
) -> PathwiseViolations {
    let i = p.agent.index();
    PathwiseViolations {
        battery: [bt.b[0] - b.b[0], bt.b[1] - b.b[1]],
        lost_perturbed: acc.lost[i] - acct.lost[i],
        overflow: [acct.over[0] - acc.over[0], acct.over[1] - acc.over[1]],
        total_lost: acct.total_lost() - acc.total_lost(),
        lipschitz: acct.lost[i] - acc.lost[i] - p.epsilon * t,
    }
}

/// Runs `config` and `config_tilde` against the same background path from
/// the same initial state.
pub fn coupled_simulate(
    model: &ModelSpec,
    config: SharingConfig,
    config_tilde: SharingConfig,
    opts: &CoupledOptions,
) -> Result<CoupledReport> {
    use crate::simulator::System;

    model.ensure_valid()?;
    model.check_config(&config)?;
    model.check_config(&config_tilde)?;
    if !(opts.horizon > 0.0 && opts.horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "horizon must be positive, got {}",
            opts.horizon
        )));
    }
    let start = opts
        .initial
        .unwrap_or_else(|| HybridState::default_for(model));
    let mut sys = System::new(model, config, start);
    let mut tilde = System::new(model, config_tilde, start);
    let perturbation = Perturbation::between(config, config_tilde);
    let mut worst = perturbation.map(|_| PathwiseViolations {
        battery: [f64::NEG_INFINITY; 2],
        lost_perturbed: f64::NEG_INFINITY,
        overflow: [f64::NEG_INFINITY; 2],
        total_lost: f64::NEG_INFINITY,
        lipschitz: f64::NEG_INFINITY,
    });
    let mut trace = opts.record_events.then(Vec::new);
    let mut events = 0usize;
    let mut identical = true;

    let mut record = |sys: &System, tilde: &System| {
        events += 1;
        identical &= sys.state.b == tilde.state.b && sys.acc == tilde.acc;
        if let (Some(p), Some(w)) = (perturbation, worst.as_mut()) {
            let v = violations_at(
                p,
                sys.acc.elapsed,
                (&sys.state, &sys.acc),
                (&tilde.state, &tilde.acc),
            );
            w.absorb(&v);
        }
        if let Some(trace) = trace.as_mut() {
            trace.push(CoupledEvent {
                t: sys.state.t,
                b: sys.state.b,
                b_tilde: tilde.state.b,
            });
        }
    };
    record(&sys, &tilde);

    let path = BackgroundPath::new(&model.background, opts.seed, start.bg);
    let mut t = start.t;
    let end = start.t + opts.horizon;
    for Slot { bg, r, duration } in path {
        if t >= end {
            break;
        }
        let mut remaining = duration.min(end - t);
        sys.state.bg = bg;
        tilde.state.bg = bg;
        let mut iterations = 0;
        while remaining > 0.0 {
            iterations += 1;
            if iterations > opts.event_cap {
                return Err(Error::EventCap {
                    cap: opts.event_cap,
                    t: sys.state.t,
                });
            }
            let (_, rates) = sys.rates(r)?;
            let (_, rates_t) = tilde.rates(r)?;
            let hits = sys.hit_times(&rates);
            let hits_t = tilde.hit_times(&rates_t);
            let next = hits[0].min(hits[1]).min(hits_t[0]).min(hits_t[1]);
            let tau = next.min(remaining);
            sys.integrate(r, &rates, hits, tau);
            tilde.integrate(r, &rates_t, hits_t, tau);
            tilde.state.t = sys.state.t;
            if next >= remaining {
                break;
            }
            remaining -= tau;
            record(&sys, &tilde);
        }
        t += duration.min(end - t);
        record(&sys, &tilde);
    }

    Ok(CoupledReport {
        config,
        config_tilde,
        perturbation,
        events,
        violations: worst,
        identical,
        final_state: sys.state,
        final_state_tilde: tilde.state,
        accumulators: sys.acc,
        accumulators_tilde: tilde.acc,
        trace,
    })
}
