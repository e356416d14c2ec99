//! Bezier desired trajectories parameterized by virtual time.

use nalgebra::Vector3;
use serde::Serialize;

use crate::error::{param, Error, Result};

pub type Point3 = Vector3<f64>;

#[derive(Debug, Clone, PartialEq)]
pub struct BezierTrajectory {
    control_points: Vec<Point3>,
    // hodograph control points, already scaled by degree / t_f
    velocity_points: Vec<Point3>,
    t_f: f64,
}

fn de_casteljau(points: &[Point3], u: f64) -> Point3 {
    let mut work = points.to_vec();
    let len = work.len();
    for r in 1..len {
        for i in 0..len - r {
            work[i] = work[i] * (1.0 - u) + work[i + 1] * u;
        }
    }
    work[0]
}

impl BezierTrajectory {
    pub fn new(control_points: Vec<Point3>, t_f: f64) -> Result<Self> {
        if control_points.len() < 2 {
            return Err(param(
                "control_points",
                format!("need at least 2 points (degree >= 1), got {}", control_points.len()),
            ));
        }
        if !(t_f > 0.0 && t_f.is_finite()) {
            return Err(param("t_f", format!("must be finite and > 0, got {t_f}")));
        }
        if control_points.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return Err(param("control_points", "non-finite coordinate"));
        }
        let scale = (control_points.len() - 1) as f64 / t_f;
        let velocity_points = control_points
            .windows(2)
            .map(|w| (w[1] - w[0]) * scale)
            .collect();
        Ok(Self {
            control_points,
            velocity_points,
            t_f,
        })
    }

    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn t_f(&self) -> f64 {
        self.t_f
    }

    pub fn control_points(&self) -> &[Point3] {
        &self.control_points
    }

    fn param(&self, gamma: f64) -> Result<f64> {
        if !(0.0..=self.t_f).contains(&gamma) {
            return Err(param(
                "gamma",
                format!("{gamma} outside trajectory domain [0, {}]", self.t_f),
            ));
        }
        Ok(gamma / self.t_f)
    }

    /// Desired position at virtual time `gamma`.
    pub fn eval(&self, gamma: f64) -> Result<Point3> {
        Ok(de_casteljau(&self.control_points, self.param(gamma)?))
    }

    /// Desired velocity `d p_d / d γ` at virtual time `gamma`.
    pub fn eval_derivative(&self, gamma: f64) -> Result<Point3> {
        Ok(de_casteljau(&self.velocity_points, self.param(gamma)?))
    }

    pub(crate) fn eval_clamped(&self, gamma: f64) -> Point3 {
        de_casteljau(&self.control_points, (gamma / self.t_f).clamp(0.0, 1.0))
    }

    pub(crate) fn eval_derivative_clamped(&self, gamma: f64) -> Point3 {
        de_casteljau(&self.velocity_points, (gamma / self.t_f).clamp(0.0, 1.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySet {
    trajectories: Vec<BezierTrajectory>,
}

impl TrajectorySet {
    pub fn new(trajectories: Vec<BezierTrajectory>) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or(Error::Empty("trajectory set needs at least one trajectory"))?;
        let t_f = first.t_f();
        if let Some((i, tr)) = trajectories.iter().enumerate().find(|(_, tr)| tr.t_f() != t_f) {
            return Err(param(
                "t_f",
                format!("trajectory {i} has t_f = {}, expected common {t_f}", tr.t_f()),
            ));
        }
        Ok(Self { trajectories })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn t_f(&self) -> f64 {
        self.trajectories[0].t_f()
    }

    pub fn get(&self, i: usize) -> &BezierTrajectory {
        &self.trajectories[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &BezierTrajectory> {
        self.trajectories.iter()
    }

    /// Smallest distance between any two desired positions at equal virtual
    /// time, over a uniform grid of `samples` points.
    pub fn min_pairwise_separation(&self, samples: usize) -> f64 {
        let samples = samples.max(2);
        let t_f = self.t_f();
        let mut best = f64::INFINITY;
        for s in 0..samples {
            let gamma = t_f * s as f64 / (samples - 1) as f64;
            let pts: Vec<_> = self.iter().map(|tr| tr.eval_clamped(gamma)).collect();
            for i in 0..pts.len() {
                for j in i + 1..pts.len() {
                    best = best.min((pts[i] - pts[j]).norm());
                }
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedBounds {
    /// `(v_i,min, v_i,max)` per trajectory.
    pub per_agent: Vec<(f64, f64)>,
    /// `max_i v_i,max`.
    pub v_max: f64,
    /// `max_i v_i,min`, as printed in the Lyapunov argument.
    pub v_min: f64,
    /// `min_i v_i,min`, the conservative reading.
    pub v_min_over_agents: f64,
}

pub const DEFAULT_SPEED_SAMPLES: usize = 10_000;

/// Min and max of `‖p_d'(γ)‖` on a uniform grid of `samples` points.
pub fn speed_bounds(ts: &TrajectorySet, samples: usize) -> Result<SpeedBounds> {
    if samples < 2 {
        return Err(param("samples", format!("need at least 2, got {samples}")));
    }
    let per_agent: Vec<(f64, f64)> = ts
        .iter()
        .map(|tr| {
            (0..samples)
                .map(|s| {
                    let gamma = tr.t_f() * s as f64 / (samples - 1) as f64;
                    tr.eval_derivative_clamped(gamma).norm()
                })
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)))
        })
        .collect();
    let v_max = per_agent.iter().map(|p| p.1).fold(0.0, f64::max);
    let v_min = per_agent.iter().map(|p| p.0).fold(0.0, f64::max);
    let v_min_over_agents = per_agent.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    Ok(SpeedBounds {
        per_agent,
        v_max,
        v_min,
        v_min_over_agents,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64, z: f64) -> Point3 {
        Point3::new(x, y, z)
    }

    #[test]
    fn linear_eval_and_derivative() {
        let tr = BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(4.0, 2.0, -2.0)], 2.0).unwrap();
        assert_eq!(tr.degree(), 1);
        assert_eq!(tr.eval(0.0).unwrap(), p(0.0, 0.0, 0.0));
        assert_eq!(tr.eval(1.0).unwrap(), p(2.0, 1.0, -1.0));
        assert_eq!(tr.eval(2.0).unwrap(), p(4.0, 2.0, -2.0));
        for g in [0.0, 0.3, 1.7, 2.0] {
            assert_eq!(tr.eval_derivative(g).unwrap(), p(2.0, 1.0, -1.0));
        }
    }

    #[test]
    fn quadratic_midpoint() {
        let tr = BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0), p(1.0, 1.0, 0.0)], 4.0)
            .unwrap();
        let mid = tr.eval(2.0).unwrap();
        assert!((mid - p(0.75, 0.25, 0.0)).norm() < 1e-15);
        // endpoint derivative n·(P₁ − P₀)/t_f
        assert_eq!(tr.eval_derivative(0.0).unwrap(), p(0.5, 0.0, 0.0));
    }

    #[test]
    fn domain_errors() {
        let tr = BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)], 1.0).unwrap();
        assert!(tr.eval(-1e-9).is_err());
        assert!(tr.eval(1.0 + 1e-9).is_err());
        assert!(tr.eval_derivative(2.0).is_err());
        assert!(BezierTrajectory::new(vec![p(0.0, 0.0, 0.0)], 1.0).is_err());
        assert!(BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)], 0.0).is_err());
        assert!(TrajectorySet::new(vec![]).is_err());
        let other = BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)], 2.0).unwrap();
        assert!(TrajectorySet::new(vec![tr, other]).is_err());
    }

    #[test]
    fn speed_bounds_straight_line() {
        let tr = BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(3.0, 4.0, 0.0)], 2.0).unwrap();
        let ts = TrajectorySet::new(vec![tr.clone(), tr]).unwrap();
        let b = speed_bounds(&ts, 100).unwrap();
        assert!((b.v_min - 2.5).abs() < 1e-12);
        assert!((b.v_max - 2.5).abs() < 1e-12);
        assert_eq!(b.per_agent[0], b.per_agent[1]);
        assert!(speed_bounds(&ts, 1).is_err());
    }

    #[test]
    fn speed_bounds_curved_matches_dense_sampling() {
        let tr = BezierTrajectory::new(
            vec![p(0.0, 0.0, 0.0), p(5.0, 10.0, 0.0), p(-3.0, 12.0, 4.0), p(2.0, 20.0, 1.0)],
            7.0,
        )
        .unwrap();
        let ts = TrajectorySet::new(vec![tr.clone()]).unwrap();
        let b = speed_bounds(&ts, DEFAULT_SPEED_SAMPLES).unwrap();
        let dense = 1_000_000;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for s in 0..dense {
            let v = tr.eval_derivative(7.0 * s as f64 / (dense - 1) as f64).unwrap().norm();
            lo = lo.min(v);
            hi = hi.max(v);
        }
        assert!(((b.v_min - lo) / lo).abs() < 0.01);
        assert!(((b.v_max - hi) / hi).abs() < 0.01);
    }

    #[test]
    fn speed_bounds_aggregation_rules() {
        let slow = BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(1.0, 0.0, 0.0)], 1.0).unwrap();
        let fast = BezierTrajectory::new(vec![p(0.0, 0.0, 0.0), p(3.0, 0.0, 0.0)], 1.0).unwrap();
        let b = speed_bounds(&TrajectorySet::new(vec![slow, fast]).unwrap(), 10).unwrap();
        assert!((b.v_max - 3.0).abs() < 1e-12);
        assert!((b.v_min - 3.0).abs() < 1e-12);
        assert!((b.v_min_over_agents - 1.0).abs() < 1e-12);
    }
}
