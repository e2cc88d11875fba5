use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use enshare::analysis::{egalitarian_solution, pareto_sweep, write_frontier_csv};
use enshare::config::{ExperimentConfig, SharingSection};
use enshare::coupling::{coupled_simulate, CoupledOptions};
use enshare::simulator::{simulate_standalone_both, write_trajectory_csv};
use enshare::{
    presets, validate_model, Agent, BackgroundSpec, ModelSpec, SharingConfig, SimOptions,
};

/// Horizon used for CTMC backgrounds when neither the config nor the
/// command line sets one.
const DEFAULT_HORIZON: f64 = 1e5;
/// Frontier points per edge when no grid step is given.
const DEFAULT_GRID_POINTS: f64 = 10.0;

#[derive(Parser)]
#[command(
    name = "enshare",
    version,
    about = "Dynamic energy sharing between two battery-backed generators"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model against every assumption and list violations.
    Validate {
        /// Config file or bundled preset name.
        source: String,
    },
    /// Estimate both loss-of-load rates for one sharing configuration.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        share: ShareArgs,
        /// Also run both agents standalone on the same path.
        #[arg(long)]
        standalone: bool,
        /// Write the event-level trajectory CSV here.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate the flattened Pareto frontier and write it as CSV.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        grid_step: Option<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find the frontier configuration maximising the smaller benefit.
    Egalitarian {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        grid_step: Option<f64>,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a configuration against `c_i + epsilon` on one path and check
    /// the pathwise orderings at every event.
    Couple {
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        share: ShareArgs,
        #[arg(long)]
        epsilon: f64,
        /// Agent whose share is raised.
        #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
        agent: u8,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Config file or bundled preset name.
    source: String,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long)]
    warmup: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Batches for the batch-means standard error.
    #[arg(long)]
    batches: Option<usize>,
}

#[derive(Args)]
struct ShareArgs {
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long)]
    c2: Option<f64>,
}

/// Failure that maps to exit status 1.
#[derive(Debug)]
struct PropertyFailure(String);

impl std::fmt::Display for PropertyFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for PropertyFailure {}

fn load_source(source: &str) -> Result<ExperimentConfig> {
    let path = Path::new(source);
    if !path.exists() && presets::by_name(source).is_some() {
        return Ok(ExperimentConfig::for_preset(source)?);
    }
    Ok(ExperimentConfig::load(path)?)
}

/// Loads the config, applies command-line overrides and builds the model.
fn resolve(run: &RunArgs) -> Result<(ExperimentConfig, ModelSpec)> {
    let mut cfg = load_source(&run.source)?;
    if let Some(h) = run.horizon {
        cfg.run.horizon = Some(h);
    }
    if let Some(w) = run.warmup {
        cfg.run.warmup = Some(w);
    }
    if let Some(s) = run.seed {
        cfg.run.seed = s;
    }
    if let Some(b) = run.batches {
        cfg.run.batches = Some(b);
    }
    let model = cfg.model()?;
    if cfg.run.horizon.is_none() {
        cfg.run.horizon = Some(match &model.background {
            BackgroundSpec::Ctmc(_) => DEFAULT_HORIZON,
            BackgroundSpec::Trace(_) => cfg.horizon(&model)?,
        });
    }
    cfg.check().map_err(|e| anyhow!("{e}"))?;
    Ok((cfg, model))
}

fn sim_options(cfg: &ExperimentConfig) -> Result<SimOptions> {
    let horizon = cfg.run.horizon.ok_or_else(|| anyhow!("no horizon"))?;
    let mut opts = SimOptions::new(horizon, cfg.run.seed);
    if let Some(w) = cfg.run.warmup {
        opts = opts.warmup(w);
    }
    if let Some(b) = cfg.run.batches {
        opts = opts.batches(b);
    }
    if !(opts.horizon > opts.warmup) {
        bail!(
            "horizon ({}) must exceed warmup ({})",
            opts.horizon,
            opts.warmup
        );
    }
    Ok(opts)
}

fn sharing(cfg: &mut ExperimentConfig, share: &ShareArgs) -> Result<SharingConfig> {
    let base = cfg.sharing();
    let c1 = share.c1.or(base.map(|s| s.c1));
    let c2 = share.c2.or(base.map(|s| s.c2));
    match (c1, c2) {
        (Some(c1), Some(c2)) => {
            cfg.sharing = Some(SharingSection { c1, c2 });
            Ok(SharingConfig::new(c1, c2))
        }
        _ => bail!("no sharing configuration: set [sharing] in the config or pass --c1 and --c2"),
    }
}

fn grid_step(cfg: &mut ExperimentConfig, model: &ModelSpec, flag: Option<f64>) -> f64 {
    let step = flag.or(cfg.run.grid_step).unwrap_or_else(|| {
        let widest = model.c_max(Agent::One).max(model.c_max(Agent::Two));
        if widest > 0.0 {
            widest / DEFAULT_GRID_POINTS
        } else {
            1.0
        }
    });
    cfg.run.grid_step = Some(step);
    step
}

/// The resolved configuration as `#` comment lines.
fn provenance(command: &str, cfg: &ExperimentConfig, extra: &[(&str, String)]) -> Result<String> {
    let mut s = String::new();
    writeln!(s, "# enshare {} {command}", env!("CARGO_PKG_VERSION"))?;
    for (k, v) in extra {
        writeln!(s, "# {k} = {v}")?;
    }
    for line in cfg.to_toml()?.lines() {
        if line.is_empty() {
            writeln!(s, "#")?;
        } else {
            writeln!(s, "# {line}")?;
        }
    }
    Ok(s)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            fs::write(path, text).with_context(|| format!("writing {}", path.display()))
        }
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn cmd_validate(source: &str) -> Result<ExitCode> {
    let cfg = load_source(source)?;
    let model = cfg.model()?;
    let report = validate_model(&model);
    println!("{report}");
    if let Some(s) = cfg.sharing() {
        if report.is_valid() {
            if let Err(e) = model.check_config(&s) {
                println!("sharing {s}: {e}");
                return Ok(ExitCode::from(1));
            }
            println!(
                "sharing {s}: within [0, {}] x [0, {}]",
                model.c_max(Agent::One),
                model.c_max(Agent::Two)
            );
        }
    }
    Ok(if report.is_valid() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_simulate(
    run: &RunArgs,
    share: &ShareArgs,
    standalone: bool,
    trajectory: &Option<PathBuf>,
    out: &Option<PathBuf>,
) -> Result<ExitCode> {
    let (mut cfg, model) = resolve(run)?;
    let config = sharing(&mut cfg, share)?;
    let trajectory = trajectory
        .clone()
        .or_else(|| cfg.output_path(&cfg.outputs.trajectory));
    let out = out
        .clone()
        .or_else(|| cfg.output_path(&cfg.outputs.simulate));
    let opts = sim_options(&cfg)?.record_trajectory(trajectory.is_some());
    let res = enshare::simulate(&model, config, &opts)?;

    let mut text = provenance(
        "simulate",
        &cfg,
        &[("warmup_used", opts.warmup.to_string())],
    )?;
    writeln!(text, "run,c1,c2,llr1,llr2,se1,se2,conservation_residual")?;
    writeln!(
        text,
        "shared,{},{},{},{},{},{},{:e}",
        config.c1,
        config.c2,
        res.llr[0],
        res.llr[1],
        res.se[0],
        res.se[1],
        res.conservation_residual()
    )?;
    if standalone {
        let sa = simulate_standalone_both(&model, &opts)?;
        writeln!(
            text,
            "standalone,,,{},{},{},{},{:e}",
            sa.llr[0],
            sa.llr[1],
            sa.se[0],
            sa.se[1],
            sa.conservation_residual()
        )?;
    }
    emit(&out, &text)?;
    if let (Some(path), Some(rows)) = (&trajectory, &res.trajectory) {
        let mut buf = Vec::new();
        write_trajectory_csv(rows, &mut buf)?;
        emit(&Some(path.clone()), std::str::from_utf8(&buf)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_sweep(
    run: &RunArgs,
    step: Option<f64>,
    jobs: usize,
    out: &Option<PathBuf>,
) -> Result<ExitCode> {
    let (mut cfg, model) = resolve(run)?;
    let step = grid_step(&mut cfg, &model, step);
    let out = out.clone().or_else(|| cfg.output_path(&cfg.outputs.sweep));
    let opts = sim_options(&cfg)?;
    let frontier = pareto_sweep(&model, step, &opts, jobs.max(1))?;
    let mut text = provenance(
        "sweep",
        &cfg,
        &[
            ("warmup_used", opts.warmup.to_string()),
            ("c1max", model.c_max(Agent::One).to_string()),
            ("c2max", model.c_max(Agent::Two).to_string()),
            (
                "standalone_llr",
                format!("{},{}", frontier.standalone[0], frontier.standalone[1]),
            ),
            (
                "standalone_se",
                format!(
                    "{},{}",
                    frontier.standalone_se[0], frontier.standalone_se[1]
                ),
            ),
        ],
    )?;
    let mut buf = Vec::new();
    write_frontier_csv(&frontier.points, &mut buf)?;
    text.push_str(std::str::from_utf8(&buf)?);
    emit(&out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_egalitarian(
    run: &RunArgs,
    step: Option<f64>,
    jobs: usize,
    out: &Option<PathBuf>,
) -> Result<ExitCode> {
    let (mut cfg, model) = resolve(run)?;
    let step = grid_step(&mut cfg, &model, step);
    let opts = sim_options(&cfg)?;
    let frontier = pareto_sweep(&model, step, &opts, jobs.max(1))?;
    let eg = egalitarian_solution(&frontier.points, frontier.standalone)?;
    let red = eg.reduction(frontier.standalone);
    let mut text = provenance(
        "egalitarian",
        &cfg,
        &[("warmup_used", opts.warmup.to_string())],
    )?;
    writeln!(text, "c1 = {}", eg.config.c1)?;
    writeln!(text, "c2 = {}", eg.config.c2)?;
    writeln!(text, "flatten_coord = {}", eg.flatten_coord)?;
    for i in 0..2 {
        let n = i + 1;
        writeln!(text, "standalone_llr{n} = {}", frontier.standalone[i])?;
        writeln!(text, "llr{n} = {}", eg.llr[i])?;
        writeln!(text, "benefit{n} = {}", eg.benefit[i])?;
        writeln!(text, "reduction{n} = {}", red[i])?;
    }
    writeln!(text, "min_benefit = {}", eg.min_benefit())?;
    if eg.min_benefit() <= 0.0 {
        eprintln!("warning: no frontier configuration improves both agents over standalone; minimum benefit is 0");
    }
    emit(out, &text)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_couple(
    run: &RunArgs,
    share: &ShareArgs,
    epsilon: f64,
    agent: u8,
    out: &Option<PathBuf>,
) -> Result<ExitCode> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        bail!("--epsilon must be a non-negative number, got {epsilon}");
    }
    let (mut cfg, model) = resolve(run)?;
    let config = sharing(&mut cfg, share)?;
    model.check_config(&config)?;
    let agent = if agent == 1 { Agent::One } else { Agent::Two };
    let cmax = model.c_max(agent);
    let mut raised = config.get(agent) + epsilon;
    if raised > cmax {
        eprintln!("warning: c{agent} + epsilon = {raised} exceeds c{agent}max = {cmax}; clipped to {cmax}");
        raised = cmax;
    }
    let tilde = config.with(agent, raised);
    let horizon = cfg.run.horizon.ok_or_else(|| anyhow!("no horizon"))?;
    let rep = coupled_simulate(
        &model,
        config,
        tilde,
        &CoupledOptions::new(horizon, cfg.run.seed),
    )?;

    let mut text = provenance(
        "couple",
        &cfg,
        &[
            ("perturbed_agent", agent.to_string()),
            ("epsilon_used", (raised - config.get(agent)).to_string()),
        ],
    )?;
    writeln!(text, "config = {config}")?;
    writeln!(text, "perturbed = {tilde}")?;
    writeln!(text, "merged_events = {}", rep.events)?;
    let llr = rep.llr();
    let llr_t = rep.llr_tilde();
    writeln!(text, "llr = {},{}", llr[0], llr[1])?;
    writeln!(text, "llr_perturbed = {},{}", llr_t[0], llr_t[1])?;
    const SLACK: f64 = 1e-9;
    let mut ok = true;
    if tilde == config {
        writeln!(
            text,
            "{} identical trajectories",
            if rep.identical { "PASS" } else { "FAIL" }
        )?;
        ok &= rep.identical;
    }
    if let Some(v) = rep.violations {
        for (name, worst) in v.named() {
            let pass = worst <= SLACK;
            ok &= pass;
            writeln!(
                text,
                "{} {name} (worst violation {worst:e})",
                if pass { "PASS" } else { "FAIL" }
            )?;
        }
    }
    emit(out, &text)?;
    if ok {
        Ok(ExitCode::SUCCESS)
    } else {
        Err(PropertyFailure("pathwise ordering violated".into()).into())
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Validate { source } => cmd_validate(source),
        Command::Simulate {
            run,
            share,
            standalone,
            trajectory,
            out,
        } => cmd_simulate(run, share, *standalone, trajectory, out),
        Command::Sweep {
            run,
            grid_step,
            jobs,
            out,
        } => cmd_sweep(run, *grid_step, *jobs, out),
        Command::Egalitarian {
            run,
            grid_step,
            jobs,
            out,
        } => cmd_egalitarian(run, *grid_step, *jobs, out),
        Command::Couple {
            run,
            share,
            epsilon,
            agent,
            out,
        } => cmd_couple(run, share, *epsilon, *agent, out),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<PropertyFailure>().is_some() {
        return 1;
    }
    match err.downcast_ref::<enshare::Error>() {
        Some(enshare::Error::InvalidModel(_) | enshare::Error::InvalidConfig(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
