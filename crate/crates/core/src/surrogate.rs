//! Synthetic wind and solar generation for running the trace pipeline
//! without real data.
//!
//! Wind is a 5-minute series from a mean-reverting wind speed pushed
//! through a turbine power curve, so it swings between calm spells and
//! rated output over hours to days. Solar is an hourly series: a daylight
//! bell whose length follows the season, scaled by a daily cloudiness
//! factor. Both range over 0-16 MW.

use chrono::{NaiveDate, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};

use crate::background::PathRng;
use crate::error::Result;
use crate::ingestion::{self, DemandMode, GenerationTrace};
use crate::model::ModelSpec;

pub const RATED_MW: f64 = 16.0;
/// 500 kWh.
pub const BATTERY_MWH: f64 = 0.5;
const DIURNAL_SWING: f64 = 5.5;
const SOLAR_NOON: f64 = 13.0;

fn epoch() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2010, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid date")
}

fn power_curve(speed: f64) -> f64 {
    const CUT_IN: f64 = 3.0;
    const RATED: f64 = 12.0;
    const CUT_OUT: f64 = 25.0;
    if !(CUT_IN..CUT_OUT).contains(&speed) {
        0.0
    } else if speed >= RATED {
        RATED_MW
    } else {
        RATED_MW * (speed.powi(3) - CUT_IN.powi(3)) / (RATED.powi(3) - CUT_IN.powi(3))
    }
}

/// Five-minute wind power over `days` days.
pub fn wind(days: u32, seed: u64) -> GenerationTrace {
    let mut rng = PathRng::seed_from_u64(seed);
    let n = days as usize * 288;
    // Ornstein-Uhlenbeck speed around a mean that peaks at night.
    let (mean, swing, sd, tau_h): (f64, f64, f64, f64) = (7.5, DIURNAL_SWING, 3.5, 2.0);
    let dt: f64 = 5.0 / 60.0;
    let a = (-dt / tau_h).exp();
    let noise = sd * (1.0 - a * a).sqrt();
    let mut dev = 0.0;
    let values = (0..n)
        .map(|k| {
            let hour = (k % 288) as f64 * dt;
            let z: f64 = StandardNormal.sample(&mut rng);
            dev = a * dev + noise * z;
            let level = mean + swing * (2.0 * std::f64::consts::PI * (hour - 2.0) / 24.0).cos();
            power_curve((level + dev).max(0.0))
        })
        .collect();
    GenerationTrace::new(epoch(), 5, values).expect("non-negative samples")
}

/// Hourly solar power over `days` days. Day length follows the season, so
/// summer output extends past the 7:00-17:00 window.
pub fn solar_hourly(days: u32, seed: u64) -> GenerationTrace {
    let mut rng = PathRng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(days as usize * 24);
    for day in 0..days {
        let season = (2.0 * std::f64::consts::PI * (day as f64 - 80.0) / 365.0).sin();
        let length = 12.2 + 2.2 * season;
        let sunrise = SOLAR_NOON - length / 2.0;
        let peak = RATED_MW * (0.85 + 0.1 * season);
        let clear: f64 = 0.75 + 0.25 * rng.random::<f64>();
        for h in 0..24 {
            let x = (h as f64 + 0.5 - sunrise) / length;
            let v = if (0.0..1.0).contains(&x) {
                let flicker = 0.95 + 0.05 * rng.random::<f64>();
                peak * clear * flicker * (std::f64::consts::PI * x).sin()
            } else {
                0.0
            };
            values.push(v);
        }
    }
    GenerationTrace::new(epoch(), 60, values).expect("non-negative samples")
}

/// Wind agent with constant demand at 90% of its mean, solar agent with
/// demand at 90% of its 7:00-17:00 mean during that window only, both
/// with 500 kWh batteries, on a 5-minute grid.
pub fn case_study_model(
    wind: &GenerationTrace,
    solar: &GenerationTrace,
    transfer_cap: f64,
) -> Result<ModelSpec> {
    let solar = if solar.period_min == wind.period_min {
        solar.clone()
    } else {
        ingestion::expand_hourly(solar, wind.period_min)?
    };
    let n = wind.len().min(solar.len());
    let wind = GenerationTrace::new(wind.start, wind.period_min, wind.values[..n].to_vec())?;
    let solar = GenerationTrace::new(solar.start, solar.period_min, solar.values[..n].to_vec())?;
    let window = (
        epoch().time().with_hour(7).expect("valid hour"),
        epoch().time().with_hour(17).expect("valid hour"),
    );
    let d1 = ingestion::build_demand(&wind, DemandMode::Constant, 0.9, None)?;
    let d2 = ingestion::build_demand(&solar, DemandMode::Windowed, 0.9, Some(window))?;
    ingestion::net_generation_model(&wind, &d1, &solar, &d2, [BATTERY_MWH; 2], transfer_cap)
}
