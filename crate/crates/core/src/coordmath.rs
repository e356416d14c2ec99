//! Coordination-error algebra and closed-form convergence constants.
//!
//! `Q` is the `(n−1)×n` projection with `Q·1 = 0` and `Q·Qᵀ = I`; it maps the
//! virtual-time vector onto its disagreement subspace. The consensus and ISS
//! constants are evaluated in double precision; see [`BoundWarning`] for how
//! vanishing `δ′ⁿ` is reported.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{param, Error, Result};

/// Below this, `δ′ⁿ` gives rates so small that the envelope is of no
/// practical use over a mission horizon.
pub const WEAK_BOUND_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct QMatrix {
    matrix: DMatrix<f64>,
}

impl QMatrix {
    pub fn n(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn apply(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(&self.matrix * x)
    }
}

/// Recursive construction
///
/// ```text
/// Q_k = [ sqrt((k-1)/k)   -1/sqrt(k(k-1)) · 1ᵀ ]
///       [ 0               Q_{k-1}              ]
/// ```
///
/// starting from `Q_2 = [1/√2, −1/√2]`.
pub fn build_q(n: usize) -> Result<QMatrix> {
    if n < 2 {
        return Err(param("n", format!("Q needs at least 2 agents, got {n}")));
    }
    let mut q = DMatrix::from_row_slice(1, 2, &[1.0 / 2f64.sqrt(), -1.0 / 2f64.sqrt()]);
    for k in 3..=n {
        let kf = k as f64;
        let mut next = DMatrix::zeros(k - 1, k);
        next[(0, 0)] = ((kf - 1.0) / kf).sqrt();
        let off = -1.0 / (kf * (kf - 1.0)).sqrt();
        for j in 1..k {
            next[(0, j)] = off;
        }
        next.view_mut((1, 1), (k - 2, k - 1)).copy_from(&q);
        q = next;
    }
    Ok(QMatrix { matrix: q })
}

/// `max_i x_i − min_i x_i`.
pub fn diam(x: &[f64]) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Empty("diam of an empty vector"));
    }
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    Ok(hi - lo)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundWarning {
    /// `δ′ⁿ` underflowed: `k = 1`, `λ = 0`, and the envelope is vacuous.
    Degenerate,
    /// `δ′ⁿ` is positive but below [`WEAK_BOUND_THRESHOLD`].
    Weak,
}

impl BoundWarning {
    pub fn message(&self) -> &'static str {
        match self {
            BoundWarning::Degenerate => {
                "bound degenerate: delta_prime^n underflows to 0 in double precision (k = 1, lambda = 0)"
            }
            BoundWarning::Weak => {
                "bound weak: delta_prime^n is below 1e-6; convergence rates are numerically tiny"
            }
        }
    }
}

/// Consensus envelope `diam(x(t)) ≤ diam(x₀)·k·e^{−λt}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusConstants {
    pub delta_prime: f64,
    pub k: f64,
    pub lambda: f64,
    /// `δ′ⁿ`, kept so callers can judge how tight the envelope is.
    pub delta_prime_pow_n: f64,
    pub warning: Option<BoundWarning>,
}

impl ConsensusConstants {
    pub fn envelope(&self, diam0: f64, t: f64) -> f64 {
        diam0 * self.k * (-self.lambda * t).exp()
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(param(name, format!("must be finite and > 0, got {v}")))
    }
}

pub fn consensus_constants(n: usize, window: f64, delta: f64, a: f64, b: f64) -> Result<ConsensusConstants> {
    if n < 2 {
        return Err(param("n", format!("need at least 2 agents, got {n}")));
    }
    positive("T", window)?;
    positive("delta", delta)?;
    positive("a", a)?;
    positive("b", b)?;
    if delta > window {
        return Err(param("delta", format!("must not exceed T = {window}, got {delta}")));
    }
    let ratio = a / b;
    let nf = n as f64;
    let delta_prime = (ratio * delta).min(1.0) * (-(nf - 1.0) * ratio * window).exp();
    // 1 − δ′ⁿ and its log without cancellation
    let log_pow = nf * delta_prime.ln();
    let pow = log_pow.exp();
    let one_minus = -log_pow.exp_m1();
    let k = 1.0 / one_minus;
    let lambda = -(-pow).ln_1p() / (nf * window);
    let warning = if pow == 0.0 {
        Some(BoundWarning::Degenerate)
    } else if pow < WEAK_BOUND_THRESHOLD {
        Some(BoundWarning::Weak)
    } else {
        None
    };
    Ok(ConsensusConstants {
        delta_prime,
        k,
        lambda,
        delta_prime_pow_n: pow,
        warning,
    })
}

/// Free parameters of the ISS bound. `None` selects the defaults
/// (`c₃ = 1`, `β = 2c₁`, `λ_TC` at its cap).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IssInputs {
    pub n: usize,
    pub window: f64,
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub c3: Option<f64>,
    pub beta: Option<f64>,
    pub lambda_tc: Option<f64>,
}

impl IssInputs {
    pub fn new(n: usize, window: f64, delta: f64, a: f64, b: f64) -> Self {
        Self {
            n,
            window,
            delta,
            a,
            b,
            c3: None,
            beta: None,
            lambda_tc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceConstants {
    pub n: usize,
    pub delta_prime: f64,
    pub k: f64,
    pub lambda: f64,
    pub k_phi: f64,
    pub lambda_tc_max: f64,
    pub lambda_tc: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub beta: f64,
    pub s_norm: f64,
    pub s_inv_norm: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    /// Smallest eigenvalue of `U − 3λ_TC·M₂`; the bound is guaranteed by the
    /// Lyapunov argument only when this is ≥ 0 (large enough `b` at fixed `a/b`).
    pub gain_condition_margin: f64,
    pub warning: Option<BoundWarning>,
}

impl ConvergenceConstants {
    /// `κ₁‖ξ(0)‖e^{−λ_TC t} + κ₂·input_sup`.
    pub fn iss_bound(&self, xi0_norm: f64, t: f64, input_sup: f64) -> f64 {
        self.kappa1 * xi0_norm * (-self.lambda_tc * t).exp() + self.kappa2 * input_sup
    }
}

/// `S = [[b·I, Q], [0, I]]`, mapping `ξ_TC` to `(χ, ξ₂)`.
pub fn s_matrix(q: &QMatrix, b: f64) -> DMatrix<f64> {
    let n = q.n();
    let mut s = DMatrix::zeros(2 * n - 1, 2 * n - 1);
    for i in 0..n - 1 {
        s[(i, i)] = b;
    }
    s.view_mut((0, n - 1), (n - 1, n)).copy_from(q.matrix());
    for i in 0..n {
        s[(n - 1 + i, n - 1 + i)] = 1.0;
    }
    s
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(0.0, |acc: f64, &s| acc.max(s))
}

pub fn iss_bounds(inputs: &IssInputs) -> Result<ConvergenceConstants> {
    let IssInputs { n, a, b, .. } = *inputs;
    let cc = consensus_constants(n, inputs.window, inputs.delta, a, b)?;
    let nf = n as f64;
    let k_phi = (2.0 * nf).sqrt() * cc.k;
    let lambda_tc_max = cc.lambda / (6.0 * nf * cc.k * cc.k);
    let lambda_tc = inputs.lambda_tc.unwrap_or(lambda_tc_max);
    if !(lambda_tc > 0.0) || lambda_tc > lambda_tc_max {
        return Err(param(
            "lambda_tc",
            format!("must satisfy 0 < lambda_tc <= {lambda_tc_max:e}, got {lambda_tc:e}"),
        ));
    }
    let c3 = inputs.c3.unwrap_or(1.0);
    positive("c3", c3)?;
    let c4 = c3;
    let c1 = b * c3 / (2.0 * a * nf);
    let c2 = k_phi * k_phi * c4 / (2.0 * cc.lambda);
    let beta = inputs.beta.unwrap_or(2.0 * c1);
    positive("beta", beta)?;

    let q = build_q(n)?;
    let s = s_matrix(&q, b);
    let s_inv = s
        .clone()
        .try_inverse()
        .ok_or_else(|| param("b", "S is singular"))?;
    let s_norm = spectral_norm(&s);
    let s_inv_norm = spectral_norm(&s_inv);

    let lo = c1.min(beta / 2.0);
    let hi = c2.max(beta / 2.0);
    let ratio = (hi / lo).sqrt();
    let kappa1 = s_inv_norm * ratio * s_norm;
    let kappa2 = s_inv_norm * ratio * (k_phi * k_phi * c3 / cc.lambda + beta) / (lambda_tc * lo);

    let ab = a / b;
    let m11 = c3 - lambda_tc * 3.0 * k_phi * k_phi / (2.0 * cc.lambda) * c3;
    let m12 = -0.5 * (ab * nf * k_phi * k_phi / cc.lambda * c3 + beta * ab * nf);
    let m22 = beta * (b - ab * nf - 1.5 * lambda_tc);
    let mid = 0.5 * (m11 + m22);
    let gain_condition_margin = mid - (0.25 * (m11 - m22).powi(2) + m12 * m12).sqrt();

    Ok(ConvergenceConstants {
        n,
        delta_prime: cc.delta_prime,
        k: cc.k,
        lambda: cc.lambda,
        k_phi,
        lambda_tc_max,
        lambda_tc,
        c1,
        c2,
        c3,
        c4,
        beta,
        s_norm,
        s_inv_norm,
        kappa1,
        kappa2,
        gain_condition_margin,
        warning: cc.warning,
    })
}

/// `ξ₁ = Qγ`, `ξ₂ = γ̇ − γ̇_d·1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordErrorState {
    pub xi1: DVector<f64>,
    pub xi2: DVector<f64>,
}

impl CoordErrorState {
    /// Norm of the stacked vector `[ξ₁; ξ₂]`.
    pub fn norm(&self) -> f64 {
        (self.xi1.norm_squared() + self.xi2.norm_squared()).sqrt()
    }
}

pub fn coordination_error(
    gamma: &DVector<f64>,
    gamma_dot: &DVector<f64>,
    gamma_dot_d: f64,
    q: &QMatrix,
) -> Result<CoordErrorState> {
    if gamma_dot.len() != q.n() {
        return Err(Error::DimensionMismatch {
            expected: q.n(),
            got: gamma_dot.len(),
        });
    }
    let xi1 = q.apply(gamma)?;
    let xi2 = gamma_dot.map(|v| v - gamma_dot_d);
    Ok(CoordErrorState { xi1, xi2 })
}

/// `χ = b·ξ₁ + Q·ξ₂`.
pub fn chi_transform(e: &CoordErrorState, b: f64, q: &QMatrix) -> Result<DVector<f64>> {
    if e.xi1.len() + 1 != q.n() {
        return Err(Error::DimensionMismatch {
            expected: q.n() - 1,
            got: e.xi1.len(),
        });
    }
    Ok(&e.xi1 * b + q.apply(&e.xi2)?)
}
