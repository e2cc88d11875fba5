//! Trace-driven models from sampled generation data.
//!
//! Input files are CSV with a `timestamp,power` header, powers in MW and a
//! fixed sample period in minutes. The resulting model measures time in
//! hours, so battery capacities are in MWh and loss-of-load rates in MW.
//! Timestamps are read as local civil time with no DST adjustment.

use std::path::Path;

use chrono::{Duration, NaiveDateTime, NaiveTime, Timelike};

use crate::error::{Error, Result};
use crate::model::{BackgroundSpec, ModelSpec, TraceSpec};

const TIMESTAMP_FORMATS: [&str; 6] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
    "%m/%d/%Y %H:%M",
    "%m/%d/%Y %H:%M:%S",
];

pub fn parse_timestamp(s: &str) -> Option<NaiveDateTime> {
    let s = s.trim();
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(s, f).ok())
}

/// Uniformly sampled non-negative generation.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationTrace {
    pub start: NaiveDateTime,
    /// Sample period in minutes.
    pub period_min: u32,
    /// Power in MW.
    pub values: Vec<f64>,
}

impl GenerationTrace {
    pub fn new(start: NaiveDateTime, period_min: u32, values: Vec<f64>) -> Result<Self> {
        if period_min == 0 {
            return Err(Error::InvalidArgument(
                "sample period must be positive".into(),
            ));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v >= 0.0))
        {
            return Err(Error::InvalidArgument(format!(
                "sample {i} is {v}; powers must be finite and >= 0"
            )));
        }
        Ok(GenerationTrace {
            start,
            period_min,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn timestamp(&self, i: usize) -> NaiveDateTime {
        self.start + Duration::minutes(self.period_min as i64 * i as i64)
    }

    pub fn timestamps(&self) -> impl Iterator<Item = NaiveDateTime> + '_ {
        (0..self.len()).map(|i| self.timestamp(i))
    }

    pub fn period_hours(&self) -> f64 {
        self.period_min as f64 / 60.0
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            return 0.0;
        }
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Energy in MWh.
    pub fn energy(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.period_hours()
    }
}

/// Reads a `timestamp,power` CSV sampled every `period_min` minutes.
pub fn load_trace_csv(path: &Path, period_min: u32) -> Result<GenerationTrace> {
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if period_min == 0 {
        return Err(Error::InvalidArgument(
            "sample period must be positive".into(),
        ));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(parse_err(
            1,
            "empty file; expected header `timestamp,power`".into(),
        ));
    }
    if headers.len() != 2 || &headers[0] != "timestamp" || &headers[1] != "power" {
        return Err(parse_err(
            1,
            format!(
                "expected header `timestamp,power`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let step = Duration::minutes(period_min as i64);
    let mut start = None;
    let mut prev: Option<(NaiveDateTime, usize, String)> = None;
    let mut values = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_err(
                line,
                format!("expected 2 fields, found {}", record.len()),
            ));
        }
        let ts = parse_timestamp(&record[0])
            .ok_or_else(|| parse_err(line, format!("unrecognised timestamp `{}`", &record[0])))?;
        let power: f64 = record[1]
            .parse()
            .map_err(|_| parse_err(line, format!("invalid power `{}`", &record[1])))?;
        if !(power.is_finite() && power >= 0.0) {
            return Err(parse_err(
                line,
                format!("power must be finite and >= 0, got {power}"),
            ));
        }
        if let Some((p, pline, ptext)) = &prev {
            if ts - *p != step {
                return Err(Error::Spacing {
                    path: path.to_path_buf(),
                    line: *pline,
                    next_line: line,
                    prev: ptext.clone(),
                    next: record[0].to_string(),
                    expected: period_min as f64,
                });
            }
        }
        start.get_or_insert(ts);
        prev = Some((ts, line, record[0].to_string()));
        values.push(power);
    }
    let start = start.ok_or_else(|| parse_err(2, "no samples after header".into()))?;
    GenerationTrace::new(start, period_min, values)
}

/// Replicates each sample `period / target` times.
pub fn expand_hourly(trace: &GenerationTrace, target_period_min: u32) -> Result<GenerationTrace> {
    if target_period_min == 0 || !trace.period_min.is_multiple_of(target_period_min) {
        return Err(Error::InvalidArgument(format!(
            "period {} min is not an integer multiple of {target_period_min} min",
            trace.period_min
        )));
    }
    let ratio = (trace.period_min / target_period_min) as usize;
    let values = trace
        .values
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, ratio))
        .collect();
    GenerationTrace::new(trace.start, target_period_min, values)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DemandCurve {
    Constant {
        level: f64,
    },
    /// `level` on `[start, end)` of each day, zero otherwise.
    Windowed {
        start: NaiveTime,
        end: NaiveTime,
        level: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DemandMode {
    Constant,
    Windowed,
}

fn in_window(t: NaiveDateTime, start: NaiveTime, end: NaiveTime) -> bool {
    let tod = t.time().with_nanosecond(0).unwrap_or(t.time());
    tod >= start && tod < end
}

impl DemandCurve {
    pub fn level(&self) -> f64 {
        match *self {
            DemandCurve::Constant { level } | DemandCurve::Windowed { level, .. } => level,
        }
    }

    pub fn at(&self, t: NaiveDateTime) -> f64 {
        match *self {
            DemandCurve::Constant { level } => level,
            DemandCurve::Windowed { start, end, level } => {
                if in_window(t, start, end) {
                    level
                } else {
                    0.0
                }
            }
        }
    }
}

/// Demand equal to `fraction` of the trace mean, taken over the daily
/// window in windowed mode.
pub fn build_demand(
    trace: &GenerationTrace,
    mode: DemandMode,
    fraction: f64,
    window: Option<(NaiveTime, NaiveTime)>,
) -> Result<DemandCurve> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "demand fraction must lie in (0, 1], got {fraction}"
        )));
    }
    if trace.is_empty() {
        return Err(Error::InvalidArgument("empty generation trace".into()));
    }
    match mode {
        DemandMode::Constant => Ok(DemandCurve::Constant {
            level: fraction * trace.mean(),
        }),
        DemandMode::Windowed => {
            let (start, end) = window.ok_or_else(|| {
                Error::InvalidArgument("windowed demand needs a daily window".into())
            })?;
            if start >= end {
                return Err(Error::InvalidArgument(format!(
                    "window start {start} is not before end {end}"
                )));
            }
            let (sum, n) = trace
                .timestamps()
                .zip(&trace.values)
                .filter(|(t, _)| in_window(*t, start, end))
                .fold((0.0, 0usize), |(s, n), (_, v)| (s + v, n + 1));
            if n == 0 {
                return Err(Error::InvalidArgument(format!(
                    "no samples fall inside {start}-{end}"
                )));
            }
            Ok(DemandCurve::Windowed {
                start,
                end,
                level: fraction * sum / n as f64,
            })
        }
    }
}

/// Net generation series `g_i - d_i` for one agent.
pub fn net_series(gen: &GenerationTrace, demand: &DemandCurve) -> Vec<f64> {
    gen.timestamps()
        .zip(&gen.values)
        .map(|(t, g)| g - demand.at(t))
        .collect()
}

/// A trace-driven model with time in hours. Capacities are in MWh and the
/// transfer capacity in MW.
pub fn net_generation_model(
    gen1: &GenerationTrace,
    demand1: &DemandCurve,
    gen2: &GenerationTrace,
    demand2: &DemandCurve,
    capacity: [f64; 2],
    transfer_cap: f64,
) -> Result<ModelSpec> {
    if gen1.period_min != gen2.period_min {
        return Err(Error::InvalidArgument(format!(
            "sample periods differ: {} vs {} min",
            gen1.period_min, gen2.period_min
        )));
    }
    if gen1.len() != gen2.len() {
        return Err(Error::InvalidArgument(format!(
            "trace lengths differ: {} vs {}",
            gen1.len(),
            gen2.len()
        )));
    }
    let r1 = net_series(gen1, demand1);
    let r2 = net_series(gen2, demand2);
    Ok(ModelSpec {
        background: BackgroundSpec::Trace(TraceSpec {
            sample_period: gen1.period_hours(),
            series: r1.into_iter().zip(r2).collect(),
        }),
        capacity,
        transfer_cap,
    })
}
