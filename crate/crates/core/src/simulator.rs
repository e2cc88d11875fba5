//! Event-driven simulation of the hybrid (background, b1, b2) process.
//!
//! Between background transitions all rates are constant, so both battery
//! paths are piecewise linear. Inside a slot the simulator repeatedly
//! resolves the region labels, solves for the earliest boundary hit in
//! closed form, integrates every accumulator linearly up to that instant and
//! relabels. No step size is involved anywhere.

use std::io::Write;

use crate::background::{BackgroundPath, Slot};
use crate::dynamics::{resolve_regions, RateBundle, Region};
use crate::error::{Error, Result};
use crate::model::{Agent, ModelSpec, SharingConfig};

pub const DEFAULT_BATCHES: usize = 20;
pub const DEFAULT_EVENT_CAP: usize = 1_000;
pub const DEFAULT_WARMUP_FRACTION: f64 = 0.01;

/// Relative window in which two boundary hits count as simultaneous.
const SIMULTANEOUS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridState {
    pub t: f64,
    /// Background state index (CTMC) or sample index (trace).
    pub bg: usize,
    pub b: [f64; 2],
}

impl HybridState {
    /// Half-full batteries in the first background state at time zero.
    pub fn default_for(model: &ModelSpec) -> Self {
        HybridState {
            t: 0.0,
            bg: 0,
            b: [model.capacity[0] / 2.0, model.capacity[1] / 2.0],
        }
    }
}

/// Running energy totals. Index 0 is agent 1.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Accumulators {
    /// Unmet demand.
    pub lost: [f64; 2],
    /// Deficit energy that was covered, from the battery or a transfer.
    pub served: [f64; 2],
    /// Surplus discarded at a full battery.
    pub over: [f64; 2],
    /// `xfer[0]` is energy sent 1 -> 2, `xfer[1]` is 2 -> 1.
    pub xfer: [f64; 2],
    /// Integral of `[r_i]_+`.
    pub surplus: [f64; 2],
    /// Integral of `[r_i]_-`.
    pub deficit: [f64; 2],
    pub elapsed: f64,
}

impl Accumulators {
    fn add(&mut self, r: [f64; 2], rates: &RateBundle, tau: f64) {
        for i in 0..2 {
            let short = (-r[i]).max(0.0);
            self.lost[i] += rates.loss[i] * tau;
            self.served[i] += (short - rates.loss[i]) * tau;
            self.over[i] += rates.over[i] * tau;
            self.xfer[i] += rates.xfer[i] * tau;
            self.surplus[i] += r[i].max(0.0) * tau;
            self.deficit[i] += short * tau;
        }
        self.elapsed += tau;
    }

    /// Integral of `r_i`.
    pub fn net(&self, agent: Agent) -> f64 {
        let i = agent.index();
        self.surplus[i] - self.deficit[i]
    }

    pub fn total_lost(&self) -> f64 {
        self.lost[0] + self.lost[1]
    }

    /// Relative error of the joint energy balance
    /// `sum b(T) - sum b(0) = int (r1 + r2) + lost - over`.
    pub fn balance_residual(&self, start: [f64; 2], end: [f64; 2]) -> f64 {
        let stored = (end[0] + end[1]) - (start[0] + start[1]);
        let flows = (self.surplus[0] - self.deficit[0])
            + (self.surplus[1] - self.deficit[1])
            + (self.lost[0] + self.lost[1])
            - (self.over[0] + self.over[1]);
        let scale = self.surplus.iter().chain(&self.deficit).sum::<f64>()
            + start.iter().chain(&end).map(|b| b.abs()).sum::<f64>();
        (stored - flows).abs() / scale.max(f64::MIN_POSITIVE)
    }
}

/// One row of the optional trajectory log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub bg: usize,
    pub b: [f64; 2],
    pub lost: [f64; 2],
    pub over: [f64; 2],
}

pub const TRAJECTORY_HEADER: &str = "t,bg,b1,b2,lost1,lost2,over1,over2";

pub fn write_trajectory_csv<W: Write>(rows: &[TrajectoryRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{TRAJECTORY_HEADER}")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            row.t, row.bg, row.b[0], row.b[1], row.lost[0], row.lost[1], row.over[0], row.over[1]
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOptions {
    pub horizon: f64,
    pub warmup: f64,
    pub seed: u64,
    pub initial: Option<HybridState>,
    /// Number of batch means for the standard error; fewer than 2 disables it.
    pub batches: usize,
    pub event_cap: usize,
    pub record_trajectory: bool,
}

impl SimOptions {
    /// Horizon and seed with the default 1% warm-up.
    pub fn new(horizon: f64, seed: u64) -> Self {
        SimOptions {
            horizon,
            warmup: DEFAULT_WARMUP_FRACTION * horizon,
            seed,
            initial: None,
            batches: DEFAULT_BATCHES,
            event_cap: DEFAULT_EVENT_CAP,
            record_trajectory: false,
        }
    }

    pub fn warmup(mut self, warmup: f64) -> Self {
        self.warmup = warmup;
        self
    }

    pub fn initial(mut self, initial: HybridState) -> Self {
        self.initial = Some(initial);
        self
    }

    pub fn batches(mut self, batches: usize) -> Self {
        self.batches = batches;
        self
    }

    pub fn record_trajectory(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    fn check(&self) -> Result<()> {
        if !(self.horizon.is_finite() && self.warmup >= 0.0 && self.horizon > self.warmup) {
            return Err(Error::InvalidArgument(format!(
                "need horizon > warmup >= 0, got horizon {} and warmup {}",
                self.horizon, self.warmup
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    /// Lost energy after warm-up divided by `horizon - warmup`.
    pub llr: [f64; 2],
    /// Batch-means standard error of `llr`; NaN when batching is off.
    pub se: [f64; 2],
    /// Per-batch loss-of-load rates, in time order.
    pub batch_llr: Vec<[f64; 2]>,
    /// Totals over the whole run, warm-up included.
    pub accumulators: Accumulators,
    pub initial_state: HybridState,
    pub final_state: HybridState,
    pub trajectory: Option<Vec<TrajectoryRow>>,
}

impl SimulationResult {
    pub fn conservation_residual(&self) -> f64 {
        self.accumulators
            .balance_residual(self.initial_state.b, self.final_state.b)
    }
}

/// One two-battery system under a fixed sharing configuration.
#[derive(Debug, Clone)]
pub(crate) struct System<'a> {
    model: &'a ModelSpec,
    config: SharingConfig,
    pub(crate) state: HybridState,
    pub(crate) acc: Accumulators,
}

impl<'a> System<'a> {
    pub(crate) fn new(model: &'a ModelSpec, config: SharingConfig, state: HybridState) -> Self {
        System {
            model,
            config,
            state,
            acc: Accumulators::default(),
        }
    }

    pub(crate) fn rates(&self, r: [f64; 2]) -> Result<([Region; 2], RateBundle)> {
        resolve_regions(
            self.state.b,
            self.model.capacity,
            r,
            self.config,
            self.model.transfer_cap,
        )
    }

    /// Time until each battery reaches a boundary under constant `rates`.
    pub(crate) fn hit_times(&self, rates: &RateBundle) -> [f64; 2] {
        let mut hits = [f64::INFINITY; 2];
        for (i, hit) in hits.iter_mut().enumerate() {
            let (b, cap, db) = (self.state.b[i], self.model.capacity[i], rates.db[i]);
            if db > 0.0 && b < cap {
                *hit = (cap - b) / db;
            } else if db < 0.0 && b > 0.0 {
                *hit = b / -db;
            }
        }
        hits
    }

    /// Moves the system forward by `tau` at constant rates. Batteries whose
    /// own hit time falls at `tau` are snapped exactly onto the boundary.
    pub(crate) fn integrate(&mut self, r: [f64; 2], rates: &RateBundle, hits: [f64; 2], tau: f64) {
        for i in 0..2 {
            let cap = self.model.capacity[i];
            let b = &mut self.state.b[i];
            if hits[i] <= tau * (1.0 + SIMULTANEOUS) {
                *b = if rates.db[i] > 0.0 { cap } else { 0.0 };
            } else {
                *b = (*b + rates.db[i] * tau).clamp(0.0, cap);
            }
        }
        self.acc.add(r, rates, tau);
        self.state.t += tau;
    }

    fn row(&self) -> TrajectoryRow {
        TrajectoryRow {
            t: self.state.t,
            bg: self.state.bg,
            b: self.state.b,
            lost: self.acc.lost,
            over: self.acc.over,
        }
    }
}

/// Something that can be pushed through constant-rate intervals.
pub(crate) trait Stepper {
    fn advance(&mut self, bg: usize, r: [f64; 2], dt: f64) -> Result<()>;
    fn lost(&self) -> [f64; 2];
}

/// Event-driven stepper with an optional trajectory log.
struct EventStepper<'a> {
    sys: System<'a>,
    cap: usize,
    log: Option<Vec<TrajectoryRow>>,
}

impl Stepper for EventStepper<'_> {
    fn advance(&mut self, bg: usize, r: [f64; 2], dt: f64) -> Result<()> {
        self.sys.state.bg = bg;
        if let Some(log) = &mut self.log {
            log.push(self.sys.row());
        }
        let mut remaining = dt;
        let mut iterations = 0;
        while remaining > 0.0 {
            iterations += 1;
            if iterations > self.cap {
                return Err(Error::EventCap {
                    cap: self.cap,
                    t: self.sys.state.t,
                });
            }
            let (_, rates) = self.sys.rates(r)?;
            let hits = self.sys.hit_times(&rates);
            let next = hits[0].min(hits[1]);
            if next >= remaining {
                self.sys.integrate(r, &rates, hits, remaining);
                break;
            }
            self.sys.integrate(r, &rates, hits, next);
            remaining -= next;
            if let Some(log) = &mut self.log {
                log.push(self.sys.row());
            }
        }
        Ok(())
    }

    fn lost(&self) -> [f64; 2] {
        self.sys.acc.lost
    }
}

/// Advances `state` by `dt` at constant net generation `r`, returning the
/// new state and accumulators.
pub fn advance_slot(
    state: HybridState,
    r: [f64; 2],
    dt: f64,
    config: SharingConfig,
    model: &ModelSpec,
    acc: Accumulators,
) -> Result<(HybridState, Accumulators)> {
    advance_slot_capped(state, r, dt, config, model, acc, DEFAULT_EVENT_CAP)
}

pub fn advance_slot_capped(
    state: HybridState,
    r: [f64; 2],
    dt: f64,
    config: SharingConfig,
    model: &ModelSpec,
    acc: Accumulators,
    event_cap: usize,
) -> Result<(HybridState, Accumulators)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "slot length must be positive, got {dt}"
        )));
    }
    let mut sys = System::new(model, config, state);
    sys.acc = acc;
    let bg = state.bg;
    let mut stepper = EventStepper {
        sys,
        cap: event_cap,
        log: None,
    };
    stepper.advance(bg, r, dt)?;
    Ok((stepper.sys.state, stepper.sys.acc))
}

/// Feeds the background path into `stepper` up to the horizon, cutting
/// slots at warm-up and batch boundaries. Returns the lost-energy snapshot
/// at each checkpoint (warm-up first, horizon last).
pub(crate) fn drive<S: Stepper>(
    model: &ModelSpec,
    opts: &SimOptions,
    start: HybridState,
    stepper: &mut S,
) -> Result<Vec<[f64; 2]>> {
    let batches = opts.batches.max(1);
    let span = opts.horizon - opts.warmup;
    let mut checkpoints: Vec<f64> = (0..=batches)
        .map(|k| opts.warmup + span * k as f64 / batches as f64)
        .collect();
    *checkpoints.last_mut().expect("at least two checkpoints") = opts.horizon;

    let mut snapshots = Vec::with_capacity(checkpoints.len());
    let mut next_cp = 0;
    let mut t = start.t;
    while next_cp < checkpoints.len() && checkpoints[next_cp] <= t {
        snapshots.push(stepper.lost());
        next_cp += 1;
    }
    let path = BackgroundPath::new(&model.background, opts.seed, start.bg);
    for Slot { bg, r, duration } in path {
        if next_cp >= checkpoints.len() {
            break;
        }
        let slot_end = t + duration;
        while next_cp < checkpoints.len() && checkpoints[next_cp] <= slot_end {
            let dt = checkpoints[next_cp] - t;
            if dt > 0.0 {
                stepper.advance(bg, r, dt)?;
            }
            t = checkpoints[next_cp];
            snapshots.push(stepper.lost());
            next_cp += 1;
        }
        if next_cp < checkpoints.len() {
            let dt = slot_end - t;
            if dt > 0.0 {
                stepper.advance(bg, r, dt)?;
            }
            t = slot_end;
        }
    }
    Ok(snapshots)
}

/// Point estimates and batch-means standard errors from checkpoint
/// snapshots.
pub(crate) fn estimates(
    snapshots: &[[f64; 2]],
    opts: &SimOptions,
) -> ([f64; 2], [f64; 2], Vec<[f64; 2]>) {
    let first = snapshots[0];
    let last = *snapshots.last().expect("non-empty");
    let span = opts.horizon - opts.warmup;
    let llr = [(last[0] - first[0]) / span, (last[1] - first[1]) / span];
    let batch_len = span / (snapshots.len() - 1) as f64;
    let batch_llr: Vec<[f64; 2]> = snapshots
        .windows(2)
        .map(|w| {
            [
                (w[1][0] - w[0][0]) / batch_len,
                (w[1][1] - w[0][1]) / batch_len,
            ]
        })
        .collect();
    let se = if opts.batches >= 2 {
        [0, 1].map(|i| batch_standard_error(batch_llr.iter().map(|b| b[i])))
    } else {
        [f64::NAN; 2]
    };
    (llr, se, batch_llr)
}

/// Standard error of the mean of the given batch values.
pub fn batch_standard_error(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    if n < 2.0 {
        return f64::NAN;
    }
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (var / n).sqrt()
}

fn start_state(model: &ModelSpec, opts: &SimOptions) -> Result<HybridState> {
    let start = opts
        .initial
        .unwrap_or_else(|| HybridState::default_for(model));
    for i in 0..2 {
        if !(0.0..=model.capacity[i]).contains(&start.b[i]) {
            return Err(Error::InvalidArgument(format!(
                "initial b{} = {} outside [0, {}]",
                i + 1,
                start.b[i],
                model.capacity[i]
            )));
        }
    }
    let states = model.background.netgen_values().len();
    if start.bg >= states {
        return Err(Error::InvalidArgument(format!(
            "initial background state {} out of range ({states} states)",
            start.bg
        )));
    }
    Ok(start)
}

/// Long-run simulation of the sharing system under `config`.
pub fn simulate(
    model: &ModelSpec,
    config: SharingConfig,
    opts: &SimOptions,
) -> Result<SimulationResult> {
    model.ensure_valid()?;
    model.check_config(&config)?;
    opts.check()?;
    let start = start_state(model, opts)?;
    let mut stepper = EventStepper {
        sys: System::new(model, config, start),
        cap: opts.event_cap,
        log: opts.record_trajectory.then(Vec::new),
    };
    let snapshots = drive(model, opts, start, &mut stepper)?;
    let (llr, se, batch_llr) = estimates(&snapshots, opts);
    let mut trajectory = stepper.log;
    if let Some(log) = &mut trajectory {
        log.push(stepper.sys.row());
    }
    Ok(SimulationResult {
        llr,
        se,
        batch_llr,
        accumulators: stepper.sys.acc,
        initial_state: start,
        final_state: stepper.sys.state,
        trajectory,
    })
}

/// Two batteries evolving on their own, without any transfer.
struct StandaloneStepper {
    capacity: [f64; 2],
    b: [f64; 2],
    acc: Accumulators,
    t: f64,
}

impl Stepper for StandaloneStepper {
    fn advance(&mut self, _bg: usize, r: [f64; 2], dt: f64) -> Result<()> {
        for i in 0..2 {
            let (b, cap, ri) = (self.b[i], self.capacity[i], r[i]);
            // Level at the end of the slot and time spent pinned at a boundary.
            let (end, pinned) = if ri < 0.0 {
                let t_empty = b / -ri;
                if t_empty >= dt {
                    (b + ri * dt, 0.0)
                } else {
                    (0.0, dt - t_empty)
                }
            } else if ri > 0.0 {
                let t_full = (cap - b) / ri;
                if t_full >= dt {
                    (b + ri * dt, 0.0)
                } else {
                    (cap, dt - t_full)
                }
            } else {
                (b, 0.0)
            };
            self.b[i] = end.clamp(0.0, cap);
            let short = (-ri).max(0.0);
            let lost = short * pinned;
            self.acc.lost[i] += lost;
            self.acc.over[i] += ri.max(0.0) * pinned;
            self.acc.served[i] += short * dt - lost;
            self.acc.surplus[i] += ri.max(0.0) * dt;
            self.acc.deficit[i] += short * dt;
        }
        self.acc.elapsed += dt;
        self.t += dt;
        Ok(())
    }

    fn lost(&self) -> [f64; 2] {
        self.acc.lost
    }
}

/// Standalone loss-of-load rates of both agents, estimated on the same
/// background path that [`simulate`] would use for this seed.
pub fn simulate_standalone_both(model: &ModelSpec, opts: &SimOptions) -> Result<SimulationResult> {
    model.ensure_valid()?;
    opts.check()?;
    let start = start_state(model, opts)?;
    let mut stepper = StandaloneStepper {
        capacity: model.capacity,
        b: start.b,
        acc: Accumulators::default(),
        t: start.t,
    };
    let snapshots = drive(model, opts, start, &mut stepper)?;
    let (llr, se, batch_llr) = estimates(&snapshots, opts);
    Ok(SimulationResult {
        llr,
        se,
        batch_llr,
        accumulators: stepper.acc,
        initial_state: start,
        final_state: HybridState {
            t: stepper.t,
            bg: start.bg,
            b: stepper.b,
        },
        trajectory: None,
    })
}

/// Standalone rate `LLR_i^{sa}` and its standard error for one agent.
pub fn simulate_standalone(
    model: &ModelSpec,
    agent: Agent,
    opts: &SimOptions,
) -> Result<(f64, f64)> {
    let res = simulate_standalone_both(model, opts)?;
    let i = agent.index();
    Ok((res.llr[i], res.se[i]))
}

/// Explicit fixed-step reference integrator, for cross-checking the
/// event-driven engine. Labels come from positions only; levels are clamped
/// after each step.
struct FixedStepper<'a> {
    model: &'a ModelSpec,
    config: SharingConfig,
    b: [f64; 2],
    acc: Accumulators,
    step: f64,
}

impl Stepper for FixedStepper<'_> {
    fn advance(&mut self, _bg: usize, r: [f64; 2], dt: f64) -> Result<()> {
        let steps = (dt / self.step).ceil().max(1.0) as u64;
        let h = dt / steps as f64;
        for _ in 0..steps {
            let (_, rates) = resolve_regions(
                self.b,
                self.model.capacity,
                r,
                self.config,
                self.model.transfer_cap,
            )?;
            self.acc.add(r, &rates, h);
            for i in 0..2 {
                let next = self.b[i] + rates.db[i] * h;
                let cap = self.model.capacity[i];
                if next < 0.0 {
                    self.acc.lost[i] -= next;
                    self.acc.served[i] += next;
                } else if next > cap {
                    self.acc.over[i] += next - cap;
                }
                self.b[i] = next.clamp(0.0, cap);
            }
        }
        Ok(())
    }

    fn lost(&self) -> [f64; 2] {
        self.acc.lost
    }
}

/// Same as [`simulate`] but integrating with a fixed step of at most `step`.
pub fn simulate_fixed_step(
    model: &ModelSpec,
    config: SharingConfig,
    opts: &SimOptions,
    step: f64,
) -> Result<SimulationResult> {
    model.ensure_valid()?;
    model.check_config(&config)?;
    opts.check()?;
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let start = start_state(model, opts)?;
    let mut stepper = FixedStepper {
        model,
        config,
        b: start.b,
        acc: Accumulators::default(),
        step,
    };
    let snapshots = drive(model, opts, start, &mut stepper)?;
    let (llr, se, batch_llr) = estimates(&snapshots, opts);
    Ok(SimulationResult {
        llr,
        se,
        batch_llr,
        accumulators: stepper.acc,
        initial_state: start,
        final_state: HybridState {
            t: opts.horizon,
            bg: start.bg,
            b: stepper.b,
        },
        trajectory: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BackgroundSpec, TraceSpec};
    use crate::presets;

    fn unit_model(c: f64) -> ModelSpec {
        let mut m = presets::toy_symmetric();
        m.capacity = [1.0, 1.0];
        m.transfer_cap = c;
        m
    }

    fn at(b: [f64; 2]) -> HybridState {
        HybridState { t: 0.0, bg: 0, b }
    }

    #[test]
    fn empty_pair_with_donor_surplus() {
        let cfg = SharingConfig::new(10.0, 10.0);
        let (s, acc) = advance_slot(
            at([0.0, 0.0]),
            [1.0, -1.0],
            1.0,
            cfg,
            &unit_model(10.0),
            Accumulators::default(),
        )
        .unwrap();
        assert_eq!(s.b, [0.0, 0.0]);
        assert_eq!(acc.lost, [0.0, 0.0]);
        assert_eq!(acc.xfer[0], 1.0);
    }

    #[test]
    fn empty_pair_with_partial_cover() {
        let cfg = SharingConfig::new(10.0, 10.0);
        let (s, acc) = advance_slot(
            at([0.0, 0.0]),
            [-2.0, 1.0],
            1.0,
            cfg,
            &unit_model(10.0),
            Accumulators::default(),
        )
        .unwrap();
        assert_eq!(s.b, [0.0, 0.0]);
        assert_eq!(acc.lost, [1.0, 0.0]);
        assert_eq!(acc.xfer[1], 1.0);
    }

    #[test]
    fn zero_rates_leave_state_alone() {
        let cfg = SharingConfig::new(0.3, 0.7);
        let (s, acc) = advance_slot(
            at([0.5, 0.5]),
            [0.0, 0.0],
            5.0,
            cfg,
            &unit_model(1.0),
            Accumulators::default(),
        )
        .unwrap();
        assert_eq!(s.b, [0.5, 0.5]);
        assert_eq!(s.t, 5.0);
        let expected = Accumulators {
            elapsed: 5.0,
            ..Accumulators::default()
        };
        assert_eq!(acc, expected);
    }

    #[test]
    fn battery_drains_then_covered_by_neighbour() {
        // b1 empties after 0.25, then agent 2 covers 1 of the 2 deficit.
        let cfg = SharingConfig::new(1.0, 1.0);
        let (s, acc) = advance_slot(
            at([0.5, 0.5]),
            [-2.0, 0.0],
            1.0,
            cfg,
            &unit_model(1.0),
            Accumulators::default(),
        )
        .unwrap();
        assert_eq!(s.b[0], 0.0);
        assert!((s.b[1] - 0.0).abs() < 1e-15);
        assert!((acc.xfer[1] - 0.5).abs() < 1e-15);
        // agent 2's battery is gone after another 0.5, then full loss of 2
        // for the final 0.25.
        assert!((acc.lost[0] - (0.5 * 1.0 + 0.25 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_length_slot_rejected() {
        let err = advance_slot(
            at([0.5, 0.5]),
            [1.0, 1.0],
            0.0,
            SharingConfig::default(),
            &unit_model(1.0),
            Accumulators::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn event_cap_is_enforced() {
        let cfg = SharingConfig::new(0.5, 0.5);
        // Three events needed (b1 full, b2 empty, ...) but cap 1.
        let err = advance_slot_capped(
            at([0.9, 0.1]),
            [1.0, -1.0],
            5.0,
            cfg,
            &unit_model(1.0),
            Accumulators::default(),
            1,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EventCap { .. }));
    }

    #[test]
    fn no_deficit_no_loss() {
        let m = ModelSpec {
            background: BackgroundSpec::Trace(TraceSpec {
                sample_period: 1.0,
                series: vec![(0.0, 0.0), (0.0, 0.0)],
            }),
            capacity: [1.0, 1.0],
            transfer_cap: 1.0,
        };
        let res = simulate(&m, SharingConfig::new(0.0, 0.0), &SimOptions::new(100.0, 1)).unwrap();
        assert_eq!(res.llr, [0.0, 0.0]);
    }

    #[test]
    fn deterministic_given_seed() {
        let m = presets::toy_asym1();
        let opts = SimOptions::new(2_000.0, 42).record_trajectory(true);
        let a = simulate(&m, SharingConfig::new(0.5, 1.0), &opts).unwrap();
        let b = simulate(&m, SharingConfig::new(0.5, 1.0), &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.trajectory.as_ref().unwrap().len() > 100);
    }

    #[test]
    fn levels_stay_in_bounds_along_trajectory() {
        let m = presets::toy_asym2();
        let opts = SimOptions::new(5_000.0, 3).record_trajectory(true);
        let res = simulate(&m, SharingConfig::new(1.5, 0.3), &opts).unwrap();
        for row in res.trajectory.as_ref().unwrap() {
            assert!((0.0..=10.0).contains(&row.b[0]) && (0.0..=10.0).contains(&row.b[1]));
        }
        assert!(res.conservation_residual() < 1e-9);
    }

    #[test]
    fn rejects_bad_options() {
        let m = presets::toy_symmetric();
        let cfg = SharingConfig::default();
        assert!(simulate(&m, cfg, &SimOptions::new(10.0, 1).warmup(10.0)).is_err());
        assert!(simulate(&m, SharingConfig::new(2.0, 0.0), &SimOptions::new(10.0, 1)).is_err());
        let opts = SimOptions::new(10.0, 1).initial(at([11.0, 0.0]));
        assert!(simulate(&m, cfg, &opts).is_err());
    }

    #[test]
    fn trajectory_csv_header() {
        let mut buf = Vec::new();
        let row = TrajectoryRow {
            t: 0.5,
            bg: 2,
            b: [1.0, 2.0],
            lost: [0.0, 0.1],
            over: [0.0, 0.0],
        };
        write_trajectory_csv(&[row], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "t,bg,b1,b2,lost1,lost2,over1,over2\n0.5,2,1,2,0,0.1,0,0\n"
        );
    }

    #[test]
    fn standalone_matches_sharing_with_zero_capacity() {
        // With c = 0 nothing can flow between agents.
        let mut m = presets::toy_asym1();
        m.transfer_cap = 0.0;
        let opts = SimOptions::new(20_000.0, 5);
        let shared = simulate(&m, SharingConfig::default(), &opts).unwrap();
        let alone = simulate_standalone_both(&m, &opts).unwrap();
        for i in 0..2 {
            assert!((shared.llr[i] - alone.llr[i]).abs() < 1e-9 * (1.0 + alone.llr[i]));
        }
        assert!(alone.conservation_residual() < 1e-9);
    }

    #[test]
    fn batch_se_of_constant_is_zero() {
        assert_eq!(batch_standard_error([2.0, 2.0, 2.0].into_iter()), 0.0);
        assert!(batch_standard_error([1.0].into_iter()).is_nan());
    }
}
