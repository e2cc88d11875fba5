//! Experiments on top of the simulator: the two-state standalone oracle,
//! the Pareto frontier sweep, the egalitarian bargaining point, the search
//! for mutually beneficial perturbations and coupled monotonicity probes.

use std::io::Write;

use rayon::prelude::*;

use crate::coupling::{coupled_simulate, CoupledOptions, PathwiseViolations};
use crate::error::{Error, Result};
use crate::model::{Agent, ModelSpec, SharingConfig};
use crate::simulator::{batch_standard_error, simulate, simulate_standalone_both, SimOptions};

/// Slack, in batch-means standard errors, for "strictly better" decisions.
pub const STRICT_SLACK_SE: f64 = 2.0;

/// Exact standalone loss-of-load rate of one agent whose net generation
/// alternates between `r_on > 0` and `r_off < 0`.
///
/// The stationary level distribution of this finite-buffer fluid queue is
/// `F(x) = a * pi + b * phi * exp(z x)` with
/// `z = -(rate_off_to_on * r_on + rate_on_to_off * r_off) / (r_on * r_off)`.
/// The boundary conditions (no atom at 0 while charging, no atom at the top
/// while draining) fix `a` and `b`, and the rate is `|r_off|` times the mass
/// of the empty-and-draining atom.
pub fn standalone_llr_closed_form(
    rate_on_to_off: f64,
    rate_off_to_on: f64,
    r_on: f64,
    r_off: f64,
    capacity: f64,
) -> Result<f64> {
    if !(rate_on_to_off > 0.0 && rate_off_to_on > 0.0 && capacity > 0.0) {
        return Err(Error::InvalidArgument(
            "switching rates and capacity must be positive".into(),
        ));
    }
    if !(r_on > 0.0 && r_off < 0.0) {
        return Err(Error::InvalidArgument(format!(
            "need r_on > 0 > r_off, got r_on = {r_on}, r_off = {r_off}"
        )));
    }
    let (to_on, to_off) = (rate_off_to_on, rate_on_to_off);
    let drift_num = to_on * r_on + to_off * r_off;
    if drift_num.abs() <= 1e-12 * (to_on * r_on).abs().max((to_off * r_off).abs()) {
        return Err(Error::InvalidArgument(
            "mean drift is zero; the exponential solution degenerates".into(),
        ));
    }
    let z = -drift_num / (r_on * r_off);
    let p_off = to_off / (to_on + to_off);
    let zb = z * capacity;
    // (to_off + z r_on) e^{zB} - to_off, written to stay accurate near z = 0.
    let denom = to_off * zb.exp_m1() + z * r_on * zb.exp();
    if denom.is_infinite() {
        return Ok(0.0);
    }
    Ok(-r_off * z * r_on * p_off / denom)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontierPoint {
    pub config: SharingConfig,
    pub llr: [f64; 2],
    pub se: [f64; 2],
    /// `[LLR_i^sa - LLR_i]_+`.
    pub benefit: [f64; 2],
    /// Position along `(0, c2max) -> (c1max, c2max) -> (c1max, 0)`.
    pub flatten_coord: f64,
}

impl FrontierPoint {
    pub fn min_benefit(&self) -> f64 {
        self.benefit[0].min(self.benefit[1])
    }

    /// Relative reduction `1 - LLR_i / LLR_i^sa` for each agent.
    pub fn reduction(&self, standalone: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|i| {
            if standalone[i] > 0.0 {
                1.0 - self.llr[i] / standalone[i]
            } else {
                0.0
            }
        })
    }
}

fn benefits(llr: [f64; 2], standalone: [f64; 2]) -> [f64; 2] {
    [
        (standalone[0] - llr[0]).max(0.0),
        (standalone[1] - llr[1]).max(0.0),
    ]
}

/// Grid points of the flattened frontier `X \ X°`, each with its
/// flatten coordinate. Segment endpoints are always included, so a step
/// larger than `c_max` leaves just the two ends of each segment.
pub fn frontier_grid(c1_max: f64, c2_max: f64, step: f64) -> Result<Vec<(f64, SharingConfig)>> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "grid step must be positive, got {step}"
        )));
    }
    let tol = 1e-9 * step;
    let mut out = Vec::new();
    let mut k = 0u64;
    loop {
        let c1 = k as f64 * step;
        if c1 >= c1_max - tol {
            break;
        }
        out.push((c1, SharingConfig::new(c1, c2_max)));
        k += 1;
    }
    out.push((c1_max, SharingConfig::new(c1_max, c2_max)));
    if c2_max > 0.0 {
        let mut k = 1u64;
        loop {
            let c2 = c2_max - k as f64 * step;
            if c2 <= tol {
                break;
            }
            out.push((c1_max + (c2_max - c2), SharingConfig::new(c1_max, c2)));
            k += 1;
        }
        out.push((c1_max + c2_max, SharingConfig::new(c1_max, 0.0)));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    pub points: Vec<FrontierPoint>,
    /// Standalone rates used as the disagreement point.
    pub standalone: [f64; 2],
    pub standalone_se: [f64; 2],
    /// Worst energy-balance residual over every run in the sweep.
    pub conservation: f64,
}

pub const FRONTIER_HEADER: &str = "flatten_coord,c1,c2,llr1,llr2,benefit1,benefit2,se1,se2";

pub fn write_frontier_csv<W: Write>(points: &[FrontierPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "{FRONTIER_HEADER}")?;
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            p.flatten_coord,
            p.config.c1,
            p.config.c2,
            p.llr[0],
            p.llr[1],
            p.benefit[0],
            p.benefit[1],
            p.se[0],
            p.se[1]
        )?;
    }
    Ok(())
}

/// Runs `f` over `items` on `jobs` threads, preserving order.
fn run_parallel<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync + Send,
{
    if jobs <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(f).collect())
}

/// Simulates every grid point of the frontier and the standalone baseline,
/// all on the same background path.
pub fn pareto_sweep(
    model: &ModelSpec,
    grid_step: f64,
    opts: &SimOptions,
    jobs: usize,
) -> Result<Frontier> {
    model.ensure_valid()?;
    let grid = frontier_grid(model.c_max(Agent::One), model.c_max(Agent::Two), grid_step)?;
    let sa = simulate_standalone_both(model, opts)?;
    let runs = run_parallel(&grid, jobs, |(_, cfg)| simulate(model, *cfg, opts))?;
    let conservation = runs
        .iter()
        .chain(std::iter::once(&sa))
        .map(|r| r.conservation_residual())
        .fold(0.0, f64::max);
    let points = grid
        .iter()
        .zip(runs)
        .map(|(&(coord, config), res)| FrontierPoint {
            config,
            llr: res.llr,
            se: res.se,
            benefit: benefits(res.llr, sa.llr),
            flatten_coord: coord,
        })
        .collect();
    Ok(Frontier {
        points,
        standalone: sa.llr,
        standalone_se: sa.se,
        conservation,
    })
}

/// The frontier point maximising `min_i [LLR_i^sa - LLR_i]_+`. Exact ties go
/// to the smaller flatten coordinate.
pub fn egalitarian_solution(
    frontier: &[FrontierPoint],
    standalone: [f64; 2],
) -> Result<FrontierPoint> {
    let mut best: Option<FrontierPoint> = None;
    let mut ordered: Vec<&FrontierPoint> = frontier.iter().collect();
    ordered.sort_by(|a, b| a.flatten_coord.total_cmp(&b.flatten_coord));
    for p in ordered {
        let candidate = FrontierPoint {
            benefit: benefits(p.llr, standalone),
            ..*p
        };
        if best.is_none_or(|b| candidate.min_benefit() > b.min_benefit()) {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("empty frontier".into()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MutualBenefit {
    pub config: SharingConfig,
    pub theta: f64,
    pub llr: [f64; 2],
    pub base_llr: [f64; 2],
    /// Batch-means standard error of the paired difference `llr - base_llr`.
    pub diff_se: [f64; 2],
}

/// Looks for a direction `(1, theta)` from `base` along which both agents
/// improve. Each probe shares the base run's background path, and an
/// improvement counts only when the paired drop exceeds
/// [`STRICT_SLACK_SE`] standard errors of the difference.
pub fn mutual_benefit_search(
    model: &ModelSpec,
    base: SharingConfig,
    step: f64,
    theta_grid: &[f64],
    opts: &SimOptions,
) -> Result<Option<MutualBenefit>> {
    let c1_max = model.c_max(Agent::One);
    let c2_max = model.c_max(Agent::Two);
    if !(base.c1 >= 0.0 && base.c1 < c1_max && base.c2 >= 0.0 && base.c2 < c2_max) {
        return Err(Error::InvalidConfig(format!(
            "base {base} is not in the interior set [0, {c1_max}) x [0, {c2_max})"
        )));
    }
    if !(step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "step must be positive, got {step}"
        )));
    }
    let base_run = simulate(model, base, opts)?;
    for &theta in theta_grid {
        let probe = SharingConfig::new(
            (base.c1 + step).clamp(0.0, c1_max),
            (base.c2 + step * theta).clamp(0.0, c2_max),
        );
        let run = simulate(model, probe, opts)?;
        let mut diff_se = [0.0; 2];
        let mut better = true;
        for i in 0..2 {
            let diffs = run
                .batch_llr
                .iter()
                .zip(&base_run.batch_llr)
                .map(|(a, b)| a[i] - b[i]);
            let se = batch_standard_error(diffs);
            diff_se[i] = se;
            let drop = base_run.llr[i] - run.llr[i];
            better &= drop > STRICT_SLACK_SE * se.max(0.0);
        }
        if better {
            return Ok(Some(MutualBenefit {
                config: probe,
                theta,
                llr: run.llr,
                base_llr: base_run.llr,
                diff_se,
            }));
        }
    }
    Ok(None)
}

/// Coupled finite differences of the loss-of-load rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Deltas {
    /// `LLR(c + eps e_i) - LLR(c)` for agents 1 and 2.
    pub llr: [f64; 2],
    pub total: f64,
    pub violations: PathwiseViolations,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityReport {
    pub config: SharingConfig,
    pub epsilon: f64,
    pub wrt_c1: Deltas,
    pub wrt_c2: Deltas,
}

impl MonotonicityReport {
    pub fn wrt(&self, agent: Agent) -> &Deltas {
        match agent {
            Agent::One => &self.wrt_c1,
            Agent::Two => &self.wrt_c2,
        }
    }

    /// Raising `c_i` must not help agent `i`, must not hurt the other agent
    /// and must not increase the total; the perturbed agent's rate moves by
    /// at most `epsilon`. All up to `slack`.
    pub fn signs_hold(&self, slack: f64) -> bool {
        [Agent::One, Agent::Two].into_iter().all(|a| {
            let d = self.wrt(a);
            let own = d.llr[a.index()];
            let other = d.llr[a.other().index()];
            own >= -slack && other <= slack && d.total <= slack && own <= self.epsilon + slack
        })
    }
}

/// Finite differences of both rates with respect to `c1` and `c2`, each
/// computed from one coupled pair, so the signs are pathwise facts.
pub fn monotonicity_probe(
    model: &ModelSpec,
    config: SharingConfig,
    epsilon: f64,
    opts: &CoupledOptions,
) -> Result<MonotonicityReport> {
    if !(epsilon >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    let probe = |agent: Agent| -> Result<Deltas> {
        let bumped = config.with(agent, config.get(agent) + epsilon);
        let rep = coupled_simulate(model, config, bumped, opts)?;
        let (a, b) = (rep.llr(), rep.llr_tilde());
        let llr = [b[0] - a[0], b[1] - a[1]];
        Ok(Deltas {
            llr,
            total: (b[0] + b[1]) - (a[0] + a[1]),
            violations: rep.violations.unwrap_or_default(),
        })
    };
    Ok(MonotonicityReport {
        config,
        epsilon,
        wrt_c1: probe(Agent::One)?,
        wrt_c2: probe(Agent::Two)?,
    })
}
