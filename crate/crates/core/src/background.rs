//! Sample paths of the background process as a sequence of constant-rate
//! slots.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};

use crate::model::{BackgroundSpec, CtmcSpec, TraceSpec};

/// The seeded generator used for every background path.
pub type PathRng = ChaCha8Rng;

/// An interval over which both net generation rates are constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slot {
    /// CTMC state index, or trace sample index.
    pub bg: usize,
    pub r: [f64; 2],
    pub duration: f64,
}

/// Infinite iterator of slots. Durations are drawn lazily, so two paths
/// built from the same spec, seed and start state are identical.
pub enum BackgroundPath<'a> {
    Ctmc(CtmcPath<'a>),
    Trace(TracePath<'a>),
}

impl<'a> BackgroundPath<'a> {
    pub fn new(spec: &'a BackgroundSpec, seed: u64, start: usize) -> Self {
        match spec {
            BackgroundSpec::Ctmc(chain) => BackgroundPath::Ctmc(CtmcPath::new(chain, seed, start)),
            BackgroundSpec::Trace(trace) => BackgroundPath::Trace(TracePath {
                trace,
                next: start % trace.series.len().max(1),
            }),
        }
    }
}

impl Iterator for BackgroundPath<'_> {
    type Item = Slot;

    fn next(&mut self) -> Option<Slot> {
        match self {
            BackgroundPath::Ctmc(p) => p.next(),
            BackgroundPath::Trace(p) => p.next(),
        }
    }
}

pub struct CtmcPath<'a> {
    chain: &'a CtmcSpec,
    rng: PathRng,
    state: usize,
    exit_rate: Vec<f64>,
}

impl<'a> CtmcPath<'a> {
    fn new(chain: &'a CtmcSpec, seed: u64, start: usize) -> Self {
        let exit_rate = chain
            .rate_matrix
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, q)| q)
                    .sum()
            })
            .collect();
        CtmcPath {
            chain,
            rng: PathRng::seed_from_u64(seed),
            state: start,
            exit_rate,
        }
    }

    fn jump_target(&mut self, from: usize) -> usize {
        let row = &self.chain.rate_matrix[from];
        let mut u = self.rng.random::<f64>() * self.exit_rate[from];
        let mut last = from;
        for (j, &q) in row.iter().enumerate() {
            if j == from || q <= 0.0 {
                continue;
            }
            last = j;
            if u < q {
                return j;
            }
            u -= q;
        }
        last
    }
}

impl Iterator for CtmcPath<'_> {
    type Item = Slot;

    fn next(&mut self) -> Option<Slot> {
        let s = self.state;
        let rate = self.exit_rate[s];
        let duration = if rate > 0.0 {
            let e: f64 = Exp1.sample(&mut self.rng);
            e / rate
        } else {
            f64::INFINITY
        };
        if rate > 0.0 {
            self.state = self.jump_target(s);
        }
        let (r1, r2) = self.chain.netgen[s];
        Some(Slot {
            bg: s,
            r: [r1, r2],
            duration,
        })
    }
}

/// Replays trace samples in order, wrapping around at the end.
pub struct TracePath<'a> {
    trace: &'a TraceSpec,
    next: usize,
}

impl Iterator for TracePath<'_> {
    type Item = Slot;

    fn next(&mut self) -> Option<Slot> {
        let i = self.next;
        let (r1, r2) = *self.trace.series.get(i)?;
        self.next = (i + 1) % self.trace.series.len();
        Some(Slot {
            bg: i,
            r: [r1, r2],
            duration: self.trace.sample_period,
        })
    }
}
