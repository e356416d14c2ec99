//! First-order stand-in for a path-following controller: the tracking error
//! obeys `ė = −k_pf·e + d(t)` and is advanced with the exact exponential map.

use crate::error::{param, Result};
use crate::topology::TIME_EPS;
use crate::trajectory::{BezierTrajectory, Point3};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DisturbanceProfile {
    None,
    /// Constant velocity bias (m/s) for the whole run.
    ConstantBias(Point3),
    /// Velocity bias active on `[start, end)`.
    WindowedGust { vector: Point3, start: f64, end: f64 },
}

impl DisturbanceProfile {
    pub fn gust(vector: Point3, start: f64, end: f64) -> Result<Self> {
        if !(start.is_finite() && end.is_finite() && start <= end) {
            return Err(param(
                "disturbance.window",
                format!("window must be ordered, got ({start}, {end})"),
            ));
        }
        Ok(Self::WindowedGust { vector, start, end })
    }

    pub fn at(&self, t: f64) -> Point3 {
        match *self {
            Self::None => Point3::zeros(),
            Self::ConstantBias(v) => v,
            Self::WindowedGust { vector, start, end } => {
                if (start..end).contains(&t) {
                    vector
                } else {
                    Point3::zeros()
                }
            }
        }
    }

    /// Largest `‖d(t)‖` over all time.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Self::None => 0.0,
            Self::ConstantBias(v) | Self::WindowedGust { vector: v, .. } => v.norm(),
        }
    }

    /// Instants in `(t0, t1)` where `d` jumps.
    pub fn switch_times_in(&self, t0: f64, t1: f64) -> Vec<f64> {
        match *self {
            Self::WindowedGust { start, end, .. } => [start, end]
                .into_iter()
                .filter(|&s| s > t0 + TIME_EPS && s < t1 - TIME_EPS)
                .collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub position: Point3,
    pub pf_error: Point3,
}

impl VehicleState {
    /// Vehicle placed at `p_d(γ) + offset`.
    pub fn with_offset(tr: &BezierTrajectory, gamma: f64, offset: Point3) -> Result<Self> {
        Ok(Self {
            position: tr.eval(gamma)? + offset,
            pf_error: offset,
        })
    }
}

/// `e_PF = p − p_d(γ)`.
pub fn pf_error(state: &VehicleState, tr: &BezierTrajectory, gamma: f64) -> Result<Point3> {
    Ok(state.position - tr.eval(gamma)?)
}

/// Exact solution of `ė = −k·e + d` over `[t, t + dt]`, split wherever `d`
/// switches.
pub fn propagate_error(e: Point3, k_pf: f64, d: &DisturbanceProfile, t: f64, dt: f64) -> Point3 {
    let mut e = e;
    let mut cur = t;
    let stop = t + dt;
    let mut cuts = d.switch_times_in(t, stop);
    cuts.push(stop);
    for next in cuts {
        let h = next - cur;
        if h > 0.0 {
            let forcing = d.at(0.5 * (cur + next));
            let decay = (-k_pf * h).exp();
            let gain = -(-k_pf * h).exp_m1() / k_pf;
            e = e * decay + forcing * gain;
        }
        cur = next;
    }
    e
}

#[allow(clippy::too_many_arguments)]
pub fn step_vehicle(
    state: &VehicleState,
    tr: &BezierTrajectory,
    _gamma: f64,
    gamma_next: f64,
    dt: f64,
    k_pf: f64,
    d: &DisturbanceProfile,
    t: f64,
) -> Result<VehicleState> {
    if !(dt > 0.0) {
        return Err(param("dt", format!("must be > 0, got {dt}")));
    }
    if !(k_pf > 0.0) {
        return Err(param("k_pf", format!("must be > 0, got {k_pf}")));
    }
    let pf_error = propagate_error(state.pf_error, k_pf, d, t, dt);
    Ok(VehicleState {
        position: tr.eval(gamma_next)? + pf_error,
        pf_error,
    })
}
