//! Distributed time-coordination law.
//!
//! Each agent adjusts the acceleration of its virtual time from its own rate
//! error, the disagreement with the virtual times it hears from its current
//! neighbors, and a coupling term that speeds up or slows down the desired
//! point when the vehicle is ahead of or behind it.

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};
use crate::trajectory::Point3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinationGains {
    /// Consensus gain.
    pub a: f64,
    /// Rate damping gain.
    pub b: f64,
    /// Regularizer in the coupling denominator (m/s).
    pub epsilon: f64,
}

impl CoordinationGains {
    pub fn new(a: f64, b: f64, epsilon: f64) -> Result<Self> {
        let g = Self { a, b, epsilon };
        g.check()?;
        Ok(g)
    }

    pub fn check(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b), ("epsilon", self.epsilon)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(param(name, format!("gain must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentCoordState {
    pub gamma: f64,
    pub gamma_dot: f64,
}

/// `ṗ_dᵀ e_PF / (‖ṗ_d‖ + ε)`.
pub fn alpha_bar(p_dot_d: &Point3, e_pf: &Point3, epsilon: f64) -> f64 {
    p_dot_d.dot(e_pf) / (p_dot_d.norm() + epsilon)
}

/// `γ̈ = −b(γ̇ − γ̇_d) − a·Σ_j (γ − γ_j) + α`, with the sum over the virtual
/// times received from current neighbors only.
pub fn coordination_accel(
    state: &AgentCoordState,
    gamma_dot_d: f64,
    neighbor_gammas: &[f64],
    alpha: f64,
    gains: &CoordinationGains,
) -> f64 {
    let disagreement: f64 = neighbor_gammas.iter().map(|g| state.gamma - g).sum();
    -gains.b * (state.gamma_dot - gamma_dot_d) - gains.a * disagreement + alpha
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GainReport {
    pub ok: bool,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

/// Checks gain positivity and the sufficient condition `ε > v_max − v_min`.
/// Violating the latter only warns: the condition is sufficient, not necessary.
pub fn validate_gains(gains: &CoordinationGains, v_min: f64, v_max: f64) -> GainReport {
    let mut report = GainReport::default();
    if let Err(e) = gains.check() {
        report.errors.push(e.to_string());
    }
    let spread = v_max - v_min;
    if !(gains.epsilon > spread) {
        report.warnings.push(format!(
            "epsilon = {} does not exceed v_max - v_min = {spread}; the convergence guarantee does not apply",
            gains.epsilon
        ));
    }
    report.ok = report.errors.is_empty();
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn alpha_examples() {
        let v = Point3::new(1.0, 0.0, 0.0);
        assert_eq!(alpha_bar(&v, &Point3::zeros(), 1.0), 0.0);
        assert_eq!(alpha_bar(&v, &Point3::new(0.0, 3.0, -1.0), 1.0), 0.0);
        assert_eq!(alpha_bar(&v, &Point3::new(2.0, 0.0, 0.0), 1.0), 1.0);
        assert!(alpha_bar(&v, &Point3::new(-2.0, 0.0, 0.0), 1.0) < 0.0);
    }

    #[test]
    fn accel_examples() {
        let g = CoordinationGains::new(3.75, 4.82, 12.0).unwrap();
        let eq = AgentCoordState { gamma: 2.0, gamma_dot: 0.9 };
        assert_eq!(coordination_accel(&eq, 0.9, &[2.0, 2.0], 0.0, &g), 0.0);

        let fast = AgentCoordState { gamma: 0.0, gamma_dot: 2.0 };
        assert!((coordination_accel(&fast, 1.0, &[], 0.0, &g) + 4.82).abs() < 1e-15);

        let unit = CoordinationGains::new(1.0, 4.82, 12.0).unwrap();
        let ahead = AgentCoordState { gamma: 1.5, gamma_dot: 1.0 };
        assert!((coordination_accel(&ahead, 1.0, &[1.0], 0.0, &unit) + 0.5).abs() < 1e-15);
    }

    #[test]
    fn gains_validation() {
        assert!(CoordinationGains::new(0.0, 1.0, 1.0).is_err());
        assert!(CoordinationGains::new(1.0, -1.0, 1.0).is_err());

        let sec5 = CoordinationGains::new(3.75, 4.82, 12.0).unwrap();
        let r = validate_gains(&sec5, 7.5, 8.3);
        assert!(r.ok && r.warnings.is_empty(), "{r:?}");

        let zero_eps = CoordinationGains { a: 1.0, b: 1.0, epsilon: 0.0 };
        assert!(!validate_gains(&zero_eps, 1.0, 1.0).ok);

        let boundary = CoordinationGains::new(1.0, 1.0, 0.5).unwrap();
        let r = validate_gains(&boundary, 1.0, 1.5);
        assert!(r.ok);
        assert_eq!(r.warnings.len(), 1);
    }
}
