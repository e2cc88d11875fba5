//! Instantaneous battery dynamics of the two-agent sharing mechanism.
//!
//! Battery derivatives follow the cell-by-cell rate table of the mechanism.
//! Inter-agent transfers follow the deficit-covering rules plus the overflow
//! rule. Lost load and lost overflow are the residual of the per-agent
//! energy balance
//!
//! ```text
//! r_i + in_i - out_i - db_i + loss_i - over_i = 0
//! ```
//!
//! so a rule that disagrees with the table shows up as a negative residual
//! and is reported as [`Error::RateBalance`].

use crate::error::{Error, Result};
use crate::model::SharingConfig;

/// Absolute slack for residual checks, scaled by the magnitudes involved.
const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Empty,
    Interior,
    Full,
}

impl Region {
    /// Label implied by position alone.
    pub fn of(level: f64, capacity: f64) -> Region {
        if level <= 0.0 {
            Region::Empty
        } else if level >= capacity {
            Region::Full
        } else {
            Region::Interior
        }
    }
}

/// Rates at one instant. Index 0 is agent 1, index 1 is agent 2.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateBundle {
    /// Battery derivatives.
    pub db: [f64; 2],
    /// `xfer[i]` is the flow out of agent `i` into the other agent.
    pub xfer: [f64; 2],
    /// Instantaneous lost-load rates.
    pub loss: [f64; 2],
    /// Instantaneous overflow-lost rates.
    pub over: [f64; 2],
}

impl RateBundle {
    pub fn xfer_1to2(&self) -> f64 {
        self.xfer[0]
    }

    pub fn xfer_2to1(&self) -> f64 {
        self.xfer[1]
    }

    /// Agent indices swapped.
    pub fn swapped(&self) -> RateBundle {
        let s = |a: [f64; 2]| [a[1], a[0]];
        RateBundle {
            db: s(self.db),
            xfer: s(self.xfer),
            loss: s(self.loss),
            over: s(self.over),
        }
    }
}

#[inline]
fn pos(x: f64) -> f64 {
    x.max(0.0)
}

#[inline]
fn neg(x: f64) -> f64 {
    (-x).max(0.0)
}

/// Battery derivative of the "own" agent given both regions.
///
/// `own_share` caps what the own agent gives when the other is in deficit;
/// `other_share` caps what it receives.
fn derivative(
    own: Region,
    other: Region,
    r_own: f64,
    r_other: f64,
    own_share: f64,
    other_share: f64,
    cap: f64,
) -> f64 {
    use Region::*;
    // Nominal help flowing in when the own agent runs a deficit, and out
    // when the other agent does.
    let help_in = other_share.min(neg(r_own));
    let help_out = own_share.min(neg(r_other));
    let overflow_in = cap.min(pos(r_other));
    match (own, other) {
        (Empty, Empty) => pos(r_own - help_out),
        (Empty, Interior) => r_own.max(0.0),
        (Empty, Full) => {
            if r_own < 0.0 {
                if r_other >= help_in {
                    pos(r_own + overflow_in)
                } else {
                    0.0
                }
            } else {
                // Not in deficit: charges from its own surplus plus any
                // overflow arriving from the full battery.
                r_own + overflow_in
            }
        }
        (Interior, Empty) => r_own - help_out,
        (Interior, Interior) => r_own,
        (Interior, Full) => r_own + overflow_in,
        (Full, Empty) => {
            if r_own < help_out {
                r_own - help_out
            } else {
                0.0
            }
        }
        (Full, Interior) => r_own.min(0.0),
        (Full, Full) => {
            // A discharging full battery absorbs the other's overflow.
            if r_own < 0.0 {
                (r_own + overflow_in).min(0.0)
            } else {
                0.0
            }
        }
    }
}

/// Flow from the "own" agent into the other agent.
fn outflow(own: Region, other: Region, r_own: f64, r_other: f64, own_share: f64, cap: f64) -> f64 {
    let other_in_deficit = other == Region::Empty && r_other < 0.0;
    if other_in_deficit {
        let nominal = own_share.min(-r_other);
        match own {
            Region::Interior => nominal,
            Region::Empty => {
                if r_own > 0.0 {
                    r_own.min(nominal)
                } else {
                    0.0
                }
            }
            Region::Full => {
                if r_own <= nominal {
                    nominal
                } else {
                    cap.min(r_own)
                }
            }
        }
    } else if own == Region::Full && r_own > 0.0 {
        // Overflow goes wherever it can be stored or consumed.
        let absorb = if other == Region::Full {
            neg(r_other)
        } else {
            f64::INFINITY
        };
        cap.min(r_own).min(absorb)
    } else {
        0.0
    }
}

/// All instantaneous rates for the given regions and net generation.
///
/// Requires `0 <= c_i <= c`; callers that accept user input check this via
/// [`crate::model::ModelSpec::check_config`].
pub fn instantaneous_rates(
    region1: Region,
    region2: Region,
    r1: f64,
    r2: f64,
    config: SharingConfig,
    cap: f64,
) -> Result<RateBundle> {
    let (c1, c2) = (config.c1, config.c2);
    let db = [
        derivative(region1, region2, r1, r2, c1, c2, cap),
        derivative(region2, region1, r2, r1, c2, c1, cap),
    ];
    let xfer = [
        outflow(region1, region2, r1, r2, c1, cap),
        outflow(region2, region1, r2, r1, c2, cap),
    ];
    let regions = [region1, region2];
    let r = [r1, r2];
    let mut loss = [0.0; 2];
    let mut over = [0.0; 2];
    for i in 0..2 {
        let inflow = xfer[1 - i];
        let out = xfer[i];
        let residual = db[i] - r[i] - inflow + out;
        let tol = BALANCE_TOL * (1.0 + r[i].abs() + inflow + out);
        let deficit = regions[i] == Region::Empty && r[i] < 0.0;
        let full = regions[i] == Region::Full;
        if residual > 0.0 {
            if deficit {
                loss[i] = residual;
            } else if residual > tol {
                return Err(balance_error(i, residual, region1, region2, r1, r2));
            }
        } else if residual < 0.0 {
            if full {
                over[i] = -residual;
            } else if -residual > tol {
                return Err(balance_error(i, residual, region1, region2, r1, r2));
            }
        }
    }
    Ok(RateBundle {
        db,
        xfer,
        loss,
        over,
    })
}

fn balance_error(
    i: usize,
    residual: f64,
    region1: Region,
    region2: Region,
    r1: f64,
    r2: f64,
) -> Error {
    Error::RateBalance {
        agent: i as u8 + 1,
        residual,
        region1,
        region2,
        r1,
        r2,
    }
}

/// Labels and rates at a point `levels` on the battery square.
///
/// A battery sitting on a boundary keeps that label while its derivative
/// points outward or is zero; an inward derivative relabels it `Interior`.
/// All relabelling happens jointly and the rates are re-evaluated until the
/// labels are stable.
pub fn resolve_regions(
    levels: [f64; 2],
    capacity: [f64; 2],
    r: [f64; 2],
    config: SharingConfig,
    cap: f64,
) -> Result<([Region; 2], RateBundle)> {
    let mut regions = [
        Region::of(levels[0], capacity[0]),
        Region::of(levels[1], capacity[1]),
    ];
    for _ in 0..4 {
        let rates = instantaneous_rates(regions[0], regions[1], r[0], r[1], config, cap)?;
        let mut changed = false;
        for i in 0..2 {
            let inward = match regions[i] {
                Region::Empty => rates.db[i] > 0.0,
                Region::Full => rates.db[i] < 0.0,
                Region::Interior => false,
            };
            if inward {
                regions[i] = Region::Interior;
                changed = true;
            }
        }
        if !changed {
            return Ok((regions, rates));
        }
    }
    // Two relabel rounds always suffice: each battery can leave its boundary
    // at most once.
    unreachable!("region labels failed to settle at {levels:?} with r = {r:?}")
}
