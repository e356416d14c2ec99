//! Deterministic fixed-step closed-loop simulation.
//!
//! Every step of length `dt` is split at topology switches, desired-rate
//! changes, and disturbance window edges. On each piece the topology and
//! desired rate are frozen and `(γ, γ̇)` is advanced with classical RK4; the
//! path-following errors are exogenous and follow their exact exponential
//! solution, which the RK4 stages sample at their own times.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::controller::{alpha_bar, coordination_accel, AgentCoordState, CoordinationGains};
use crate::coordmath::{build_q, coordination_error, diam, ConvergenceConstants, QMatrix};
use crate::error::{param, Error, Result};
use crate::topology::{default_stride, verify_assumption3, DigraphSchedule, TIME_EPS};
use crate::trajectory::{Point3, TrajectorySet};
use crate::vehicle::{propagate_error, DisturbanceProfile};

/// Piecewise-constant desired mission pace `γ̇_d(t)`, right-continuous.
#[derive(Debug, Clone, PartialEq)]
pub struct RateProfile {
    steps: Vec<(f64, f64)>,
}

impl RateProfile {
    pub fn constant(rate: f64) -> Self {
        Self {
            steps: vec![(0.0, rate)],
        }
    }

    /// `steps` are `(t_start, rate)`; the first must start at 0 and starts
    /// must strictly increase.
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self> {
        match steps.first() {
            Some(&(0.0, _)) => {}
            _ => return Err(param("gamma_dot_d", "first entry must start at t = 0")),
        }
        for (k, w) in steps.windows(2).enumerate() {
            if !(w[1].0 > w[0].0) {
                return Err(param(
                    "gamma_dot_d",
                    format!("entry {} starts at {} which is not after {}", k + 1, w[1].0, w[0].0),
                ));
            }
        }
        if let Some(&(_, r)) = steps.iter().find(|(_, r)| !(r.is_finite() && *r >= 0.0)) {
            return Err(param("gamma_dot_d", format!("rates must be finite and >= 0, got {r}")));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }

    pub fn at(&self, t: f64) -> f64 {
        let idx = self.steps.partition_point(|&(s, _)| s <= t + TIME_EPS);
        self.steps[idx.saturating_sub(1)].1
    }

    pub fn switch_times_in(&self, t0: f64, t1: f64) -> impl Iterator<Item = f64> + '_ {
        self.steps
            .iter()
            .map(|&(s, _)| s)
            .filter(move |&s| s > t0 + TIME_EPS && s < t1 - TIME_EPS)
    }

    /// Largest `|Δrate|` over all profile steps.
    pub fn max_jump(&self) -> f64 {
        self.steps
            .windows(2)
            .map(|w| (w[1].1 - w[0].1).abs())
            .fold(0.0, f64::max)
    }

    /// `sup |γ̈_d|` when each step is smoothed into a linear ramp of the given
    /// duration.
    pub fn sup_accel(&self, ramp: f64) -> f64 {
        let jump = self.max_jump();
        if jump == 0.0 {
            0.0
        } else {
            jump / ramp
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    pub initial_pf_error: Point3,
    pub k_pf: f64,
    pub disturbance: DisturbanceProfile,
}

impl Default for VehicleSpec {
    fn default() -> Self {
        Self {
            initial_pf_error: Point3::zeros(),
            k_pf: 1.0,
            disturbance: DisturbanceProfile::None,
        }
    }
}

/// Network quality-of-service parameters `(T, δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Qos {
    pub window: f64,
    pub delta: f64,
}

/// Free constants for ISS bound reporting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsConfig {
    pub c3: Option<f64>,
    pub beta: Option<f64>,
    pub lambda_tc: Option<f64>,
    /// Duration over which a desired-rate step is treated as a ramp when
    /// bounding `|γ̈_d|`.
    pub gamma_dd_ramp: f64,
    pub speed_samples: usize,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            c3: None,
            beta: None,
            lambda_tc: None,
            gamma_dd_ramp: 0.5,
            speed_samples: crate::trajectory::DEFAULT_SPEED_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub trajectories: TrajectorySet,
    pub schedule: DigraphSchedule,
    pub gains: CoordinationGains,
    pub vehicles: Vec<VehicleSpec>,
    pub gamma0: Vec<f64>,
    pub gamma_dot0: Vec<f64>,
    pub rate_profile: RateProfile,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Half-width (m) of uniform noise added to each initial error component,
    /// drawn from `seed`.
    pub pf_error_jitter: f64,
    pub qos: Option<Qos>,
    pub bounds: BoundsConfig,
    pub waive_connectivity: bool,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// Every violated precondition, not just the first.
    pub fn validate(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let n = self.n();
        if self.schedule.n() != n {
            issues.push(format!(
                "schedule has {} nodes but there are {n} trajectories",
                self.schedule.n()
            ));
        }
        for (name, len) in [
            ("vehicles", self.vehicles.len()),
            ("gamma0", self.gamma0.len()),
            ("gamma_dot0", self.gamma_dot0.len()),
        ] {
            if len != n {
                issues.push(format!("{name} has {len} entries, expected {n}"));
            }
        }
        if let Err(e) = self.gains.check() {
            issues.push(format!("gains: {e}"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            issues.push(format!("dt must be > 0, got {}", self.dt));
        } else if self.dt > self.schedule.min_dwell() / 3.0 * (1.0 + 1e-9) {
            issues.push(format!(
                "dt = {} exceeds smallest dwell / 3 = {}",
                self.dt,
                self.schedule.min_dwell() / 3.0
            ));
        }
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            issues.push(format!("t_end must be > 0, got {}", self.t_end));
        }
        if let Some(end) = self.schedule.coverage_end() {
            if self.t_end > end + TIME_EPS {
                issues.push(format!("t_end = {} exceeds schedule coverage {end}", self.t_end));
            }
        }
        let t_f = self.trajectories.t_f();
        for (i, g) in self.gamma0.iter().enumerate() {
            if !(0.0..=t_f).contains(g) {
                issues.push(format!("gamma0[{i}] = {g} outside [0, {t_f}]"));
            }
        }
        for (i, g) in self.gamma_dot0.iter().enumerate() {
            if !(*g >= 0.0 && g.is_finite()) {
                issues.push(format!("gamma_dot0[{i}] = {g} must be >= 0"));
            }
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if !(v.k_pf > 0.0 && v.k_pf.is_finite()) {
                issues.push(format!("vehicles[{i}].k_pf must be > 0, got {}", v.k_pf));
            }
        }
        if !(self.pf_error_jitter >= 0.0) {
            issues.push(format!("pf_error_jitter must be >= 0, got {}", self.pf_error_jitter));
        }
        match self.qos {
            Some(q) => {
                if !(q.window > 0.0) || !(q.delta > 0.0) || q.delta > q.window {
                    issues.push(format!(
                        "qos requires T > 0 and 0 < delta <= T, got T = {}, delta = {}",
                        q.window, q.delta
                    ));
                }
            }
            None if !self.waive_connectivity => {
                issues.push("qos block required unless the connectivity check is waived".into());
            }
            None => {}
        }
        issues
    }

    pub fn step_count(&self) -> usize {
        (self.t_end / self.dt + 1e-9).floor() as usize
    }

    /// Initial path-following errors including seeded jitter.
    pub fn initial_pf_errors(&self) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let j = self.pf_error_jitter;
        self.vehicles
            .iter()
            .map(|v| {
                if j > 0.0 {
                    let noise = Point3::new(
                        rng.gen_range(-j..=j),
                        rng.gen_range(-j..=j),
                        rng.gen_range(-j..=j),
                    );
                    v.initial_pf_error + noise
                } else {
                    v.initial_pf_error
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: f64,
    pub gamma: Vec<f64>,
    pub gamma_dot: Vec<f64>,
    pub epf_norm: Vec<f64>,
    pub gamma_ddot: Vec<f64>,
    pub gamma_dot_d: f64,
    pub xi_tc_norm: f64,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    RateClamp { agent: usize },
    Saturation { agent: usize },
    RateStep { from: f64, to: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Event {
    pub t: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimLog {
    pub n: usize,
    pub dt: f64,
    pub records: Vec<StepRecord>,
    pub events: Vec<Event>,
}

impl SimLog {
    pub fn csv_header(n: usize) -> String {
        let mut cols = vec!["t".to_string()];
        for prefix in ["gamma", "gammadot", "epf"] {
            cols.extend((0..n).map(|i| format!("{prefix}_{i}")));
        }
        cols.push("xi_tc_norm".into());
        cols.push("segment".into());
        cols.join(",")
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::csv_header(self.n);
        out.push('\n');
        for r in &self.records {
            write!(out, "{}", r.t).unwrap();
            for v in r.gamma.iter().chain(&r.gamma_dot).chain(&r.epf_norm) {
                write!(out, ",{v}").unwrap();
            }
            writeln!(out, ",{},{}", r.xi_tc_norm, r.segment).unwrap();
        }
        out
    }

    /// `sup_t ‖e_PF(t)‖` of the stacked error vector.
    pub fn sup_stacked_pf_error(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.epf_norm.iter().map(|e| e * e).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

struct Dynamics<'a> {
    sc: &'a Scenario,
    neighbors: Vec<Vec<usize>>,
    rate: f64,
    frozen: &'a [bool],
    errors_at_start: &'a [Point3],
    piece_start: f64,
}

impl Dynamics<'_> {
    fn errors_at(&self, s: f64) -> Vec<Point3> {
        let h = s - self.piece_start;
        self.errors_at_start
            .iter()
            .zip(&self.sc.vehicles)
            .map(|(&e, v)| {
                if h > 0.0 {
                    propagate_error(e, v.k_pf, &v.disturbance, self.piece_start, h)
                } else {
                    e
                }
            })
            .collect()
    }

    fn accel(&self, gamma: &[f64], gamma_dot: &[f64], errors: &[Point3]) -> Vec<f64> {
        let n = gamma.len();
        let gains = &self.sc.gains;
        let mut out = vec![0.0; n];
        let mut nbr = Vec::with_capacity(n);
        for i in 0..n {
            if self.frozen[i] {
                continue;
            }
            nbr.clear();
            nbr.extend(self.neighbors[i].iter().map(|&j| gamma[j]));
            let tr = self.sc.trajectories.get(i);
            let p_dot = tr.eval_derivative_clamped(gamma[i]);
            let alpha = alpha_bar(&p_dot, &errors[i], gains.epsilon);
            let state = AgentCoordState {
                gamma: gamma[i],
                gamma_dot: gamma_dot[i],
            };
            out[i] = coordination_accel(&state, self.rate, &nbr, alpha, gains);
        }
        out
    }

    fn derivative(&self, s: f64, gamma: &[f64], gamma_dot: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let errors = self.errors_at(s);
        let acc = self.accel(gamma, gamma_dot, &errors);
        let vel = gamma_dot
            .iter()
            .zip(self.frozen)
            .map(|(&v, &f)| if f { 0.0 } else { v })
            .collect();
        (vel, acc)
    }
}

fn axpy(y: &[f64], h: f64, k: &[f64]) -> Vec<f64> {
    y.iter().zip(k).map(|(a, b)| a + h * b).collect()
}

struct RunState {
    gamma: Vec<f64>,
    gamma_dot: Vec<f64>,
    errors: Vec<Point3>,
    frozen: Vec<bool>,
}

fn neighbor_lists(schedule: &DigraphSchedule, segment: usize) -> Vec<Vec<usize>> {
    let g = &schedule.segments()[segment].graph;
    (0..g.n()).map(|i| g.neighbors(i).collect()).collect()
}

/// Simulates the closed loop. Fails with every violated precondition when the
/// scenario is invalid or the connectivity assumption does not hold (unless
/// waived).
pub fn run(sc: &Scenario) -> Result<SimLog> {
    let issues = sc.validate();
    if !issues.is_empty() {
        return Err(Error::Validation(issues));
    }
    if let (Some(qos), false) = (sc.qos, sc.waive_connectivity) {
        let report = verify_assumption3(
            &sc.schedule,
            qos.window,
            qos.delta,
            sc.t_end,
            default_stride(&sc.schedule),
        )?;
        if !report.holds {
            return Err(Error::Validation(vec![format!(
                "connectivity assumption fails: no {}-spanning tree in window starting at t = {} (T = {})",
                qos.delta,
                report.first_violation.unwrap_or(0.0),
                qos.window
            )]));
        }
    }

    let n = sc.n();
    let q = (n >= 2).then(|| build_q(n)).transpose()?;
    let t_f = sc.trajectories.t_f();
    let mut st = RunState {
        gamma: sc.gamma0.clone(),
        gamma_dot: sc.gamma_dot0.clone(),
        errors: sc.initial_pf_errors(),
        frozen: vec![false; n],
    };
    let mut events = Vec::new();
    for i in 0..n {
        if st.gamma[i] >= t_f {
            st.gamma[i] = t_f;
            st.gamma_dot[i] = 0.0;
            st.frozen[i] = true;
            events.push(Event {
                t: 0.0,
                kind: EventKind::Saturation { agent: i },
            });
        }
    }

    let steps = sc.step_count();
    let mut records = Vec::with_capacity(steps + 1);
    records.push(record(sc, q.as_ref(), &st, 0.0)?);

    let mut cached: Option<(usize, Vec<Vec<usize>>)> = None;
    for i in 0..steps {
        let t0 = i as f64 * sc.dt;
        let t1 = (i + 1) as f64 * sc.dt;
        let mut cuts = sc.schedule.switch_times_in(t0, t1)?;
        cuts.extend(sc.rate_profile.switch_times_in(t0, t1));
        for v in &sc.vehicles {
            cuts.extend(v.disturbance.switch_times_in(t0, t1));
        }
        cuts.push(t1);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);

        let mut s0 = t0;
        for &s1 in &cuts {
            let mid = 0.5 * (s0 + s1);
            let seg = sc.schedule.locate(mid)?.index;
            let neighbors = match cached.take() {
                Some((k, lists)) if k == seg => lists,
                _ => neighbor_lists(&sc.schedule, seg),
            };
            let rate_before = sc.rate_profile.at(s0 - 2.0 * TIME_EPS);
            let rate = sc.rate_profile.at(mid);
            if s0 > 0.0 && rate != rate_before {
                events.push(Event {
                    t: s0,
                    kind: EventKind::RateStep {
                        from: rate_before,
                        to: rate,
                    },
                });
            }
            let dynamics = Dynamics {
                sc,
                neighbors,
                rate,
                frozen: &st.frozen,
                errors_at_start: &st.errors,
                piece_start: s0,
            };
            let (gamma, gamma_dot) = rk4_piece(&dynamics, s0, s1 - s0, &st.gamma, &st.gamma_dot);
            cached = Some((seg, dynamics.neighbors));
            st.errors = st
                .errors
                .iter()
                .zip(&sc.vehicles)
                .map(|(&e, v)| propagate_error(e, v.k_pf, &v.disturbance, s0, s1 - s0))
                .collect();
            apply_clamps(&mut st, gamma, gamma_dot, t_f, s1, &mut events);
            s0 = s1;
        }
        records.push(record(sc, q.as_ref(), &st, t1)?);
    }

    Ok(SimLog {
        n,
        dt: sc.dt,
        records,
        events,
    })
}

fn rk4_piece(d: &Dynamics<'_>, s: f64, h: f64, g: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (k1g, k1v) = d.derivative(s, g, v);
    let (k2g, k2v) = d.derivative(s + 0.5 * h, &axpy(g, 0.5 * h, &k1g), &axpy(v, 0.5 * h, &k1v));
    let (k3g, k3v) = d.derivative(s + 0.5 * h, &axpy(g, 0.5 * h, &k2g), &axpy(v, 0.5 * h, &k2v));
    let (k4g, k4v) = d.derivative(s + h, &axpy(g, h, &k3g), &axpy(v, h, &k3v));
    let combine = |y: &[f64], a: &[f64], b: &[f64], c: &[f64], e: &[f64]| -> Vec<f64> {
        (0..y.len())
            .map(|i| y[i] + h / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + e[i]))
            .collect()
    };
    (
        combine(g, &k1g, &k2g, &k3g, &k4g),
        combine(v, &k1v, &k2v, &k3v, &k4v),
    )
}

fn apply_clamps(
    st: &mut RunState,
    gamma: Vec<f64>,
    gamma_dot: Vec<f64>,
    t_f: f64,
    t: f64,
    events: &mut Vec<Event>,
) {
    for i in 0..gamma.len() {
        if st.frozen[i] {
            continue;
        }
        let (mut g, mut v) = (gamma[i], gamma_dot[i]);
        if v < 0.0 || g < st.gamma[i] {
            v = v.max(0.0);
            g = g.max(st.gamma[i]);
            events.push(Event {
                t,
                kind: EventKind::RateClamp { agent: i },
            });
        }
        if g >= t_f {
            g = t_f;
            v = 0.0;
            st.frozen[i] = true;
            events.push(Event {
                t,
                kind: EventKind::Saturation { agent: i },
            });
        }
        st.gamma[i] = g;
        st.gamma_dot[i] = v;
    }
}

fn record(sc: &Scenario, q: Option<&QMatrix>, st: &RunState, t: f64) -> Result<StepRecord> {
    let seg = sc.schedule.locate(t)?.index;
    let rate = sc.rate_profile.at(t);
    let dynamics = Dynamics {
        sc,
        neighbors: neighbor_lists(&sc.schedule, seg),
        rate,
        frozen: &st.frozen,
        errors_at_start: &st.errors,
        piece_start: t,
    };
    let gamma_ddot = dynamics.accel(&st.gamma, &st.gamma_dot, &st.errors);
    let xi_tc_norm = xi_norm(q, &st.gamma, &st.gamma_dot, rate)?;
    Ok(StepRecord {
        t,
        gamma: st.gamma.clone(),
        gamma_dot: st.gamma_dot.clone(),
        epf_norm: st.errors.iter().map(|e| e.norm()).collect(),
        gamma_ddot,
        gamma_dot_d: rate,
        xi_tc_norm,
        segment: seg,
    })
}

fn xi_norm(q: Option<&QMatrix>, gamma: &[f64], gamma_dot: &[f64], rate: f64) -> Result<f64> {
    match q {
        Some(q) => Ok(coordination_error(
            &DVector::from_column_slice(gamma),
            &DVector::from_column_slice(gamma_dot),
            rate,
            q,
        )?
        .norm()),
        // a single agent has no disagreement component
        None => Ok(gamma_dot.iter().map(|v| (v - rate).powi(2)).sum::<f64>().sqrt()),
    }
}

/// Trajectory of a linear switched system sampled on the `dt` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusLog {
    pub t: Vec<f64>,
    pub x: Vec<DVector<f64>>,
    pub segment: Vec<usize>,
}

fn integrate_switched_linear(
    s: &DigraphSchedule,
    system: &[DMatrix<f64>],
    x0: DVector<f64>,
    dt: f64,
    t_end: f64,
) -> Result<ConsensusLog> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(param("dt", format!("must be > 0, got {dt}")));
    }
    if !(t_end > 0.0 && t_end.is_finite()) {
        return Err(param("t_end", format!("must be > 0, got {t_end}")));
    }
    if let Some(end) = s.coverage_end() {
        if t_end > end + TIME_EPS {
            return Err(Error::TimeOutOfRange { t: t_end, end });
        }
    }
    let steps = (t_end / dt + 1e-9).floor() as usize;
    let mut log = ConsensusLog {
        t: Vec::with_capacity(steps + 1),
        x: Vec::with_capacity(steps + 1),
        segment: Vec::with_capacity(steps + 1),
    };
    let mut x = x0;
    log.t.push(0.0);
    log.x.push(x.clone());
    log.segment.push(s.locate(0.0)?.index);
    for i in 0..steps {
        let t0 = i as f64 * dt;
        let t1 = (i + 1) as f64 * dt;
        let mut cuts = s.switch_times_in(t0, t1)?;
        cuts.push(t1);
        let mut s0 = t0;
        for s1 in cuts {
            let a = &system[s.locate(0.5 * (s0 + s1))?.index];
            let h = s1 - s0;
            let k1 = a * &x;
            let k2 = a * (&x + &k1 * (0.5 * h));
            let k3 = a * (&x + &k2 * (0.5 * h));
            let k4 = a * (&x + &k3 * h);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            s0 = s1;
        }
        log.t.push(t1);
        log.x.push(x.clone());
        log.segment.push(s.locate(t1)?.index);
    }
    Ok(log)
}

/// Integrates `ẋ = −(a/b)·L(t)·x`.
pub fn run_auxiliary_consensus(
    s: &DigraphSchedule,
    a_over_b: f64,
    x0: &DVector<f64>,
    dt: f64,
    t_end: f64,
) -> Result<ConsensusLog> {
    if x0.len() != s.n() {
        return Err(Error::DimensionMismatch {
            expected: s.n(),
            got: x0.len(),
        });
    }
    let system: Vec<_> = (0..s.segments().len())
        .map(|k| s.segment_laplacian(k) * -a_over_b)
        .collect();
    integrate_switched_linear(s, &system, x0.clone(), dt, t_end)
}

/// Integrates the projected system `φ̇ = −(a/b)·Q·L(t)·Qᵀ·φ`.
pub fn run_auxiliary_projected(
    s: &DigraphSchedule,
    a_over_b: f64,
    q: &QMatrix,
    phi0: &DVector<f64>,
    dt: f64,
    t_end: f64,
) -> Result<ConsensusLog> {
    if q.n() != s.n() || phi0.len() + 1 != q.n() {
        return Err(Error::DimensionMismatch {
            expected: s.n() - 1,
            got: phi0.len(),
        });
    }
    let qm = q.matrix();
    let system: Vec<_> = (0..s.segments().len())
        .map(|k| qm * s.segment_laplacian(k) * qm.transpose() * -a_over_b)
        .collect();
    integrate_switched_linear(s, &system, phi0.clone(), dt, t_end)
}

/// Length of the trailing window used for residual metrics (seconds).
pub const FINAL_WINDOW: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoordinationMetrics {
    pub t: Vec<f64>,
    /// `max_{i,j} |γ_i − γ_j|`.
    pub max_pairwise_gamma: Vec<f64>,
    /// `max_i |γ̇_i − γ̇_d|`.
    pub max_rate_error: Vec<f64>,
    pub xi_tc_norm: Vec<f64>,
    /// Least-squares decay rate of `ln ‖ξ_TC‖` from its initial peak.
    pub decay_rate: Option<f64>,
    pub final_max_pairwise_gamma: f64,
    pub final_max_rate_error: f64,
    pub final_xi_tc_norm: f64,
}

pub fn extract_metrics(log: &SimLog, q: Option<&QMatrix>, profile: &RateProfile) -> Result<CoordinationMetrics> {
    if log.records.is_empty() {
        return Err(Error::Empty("simulation log"));
    }
    let mut m = CoordinationMetrics {
        t: Vec::with_capacity(log.records.len()),
        max_pairwise_gamma: Vec::with_capacity(log.records.len()),
        max_rate_error: Vec::with_capacity(log.records.len()),
        xi_tc_norm: Vec::with_capacity(log.records.len()),
        decay_rate: None,
        final_max_pairwise_gamma: 0.0,
        final_max_rate_error: 0.0,
        final_xi_tc_norm: 0.0,
    };
    for r in &log.records {
        let rate = profile.at(r.t);
        m.t.push(r.t);
        m.max_pairwise_gamma.push(diam(&r.gamma)?);
        m.max_rate_error
            .push(r.gamma_dot.iter().map(|v| (v - rate).abs()).fold(0.0, f64::max));
        m.xi_tc_norm.push(xi_norm(q, &r.gamma, &r.gamma_dot, rate)?);
    }

    let t_last = *m.t.last().unwrap();
    let final_start = m.t.partition_point(|&t| t < t_last - FINAL_WINDOW);
    let tail_max = |v: &[f64]| v[final_start..].iter().copied().fold(0.0, f64::max);
    m.final_max_pairwise_gamma = tail_max(&m.max_pairwise_gamma);
    m.final_max_rate_error = tail_max(&m.max_rate_error);
    m.final_xi_tc_norm = tail_max(&m.xi_tc_norm);
    m.decay_rate = fit_decay_rate(&m.t, &m.xi_tc_norm, profile);
    Ok(m)
}

// Fit window: from the peak of ‖ξ‖ before the first pace change until ‖ξ‖
// drops below 1e-3 of that peak or the pace changes.
fn fit_decay_rate(t: &[f64], xi: &[f64], profile: &RateProfile) -> Option<f64> {
    let first_change = profile.steps().get(1).map(|s| s.0).unwrap_or(f64::INFINITY);
    let limit = t.partition_point(|&x| x < first_change - TIME_EPS);
    if limit < 2 {
        return None;
    }
    let (peak_idx, &peak) = xi[..limit]
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if !(peak > 0.0) {
        return None;
    }
    let end = (peak_idx..limit)
        .find(|&k| xi[k] < 1e-3 * peak)
        .unwrap_or(limit);
    let pts: Vec<(f64, f64)> = (peak_idx..end)
        .filter(|&k| xi[k] > 0.0)
        .map(|k| (t[k], xi[k].ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let nf = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| -sxy / sxx)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssReport {
    pub holds: bool,
    pub min_margin: f64,
    pub min_margin_t: f64,
    /// `bound(t) − ‖ξ_TC(t)‖` per logged step.
    pub margin: Vec<f64>,
    pub input_sup: f64,
}

/// Pointwise comparison against `κ₁‖ξ(0)‖e^{−λ_TC t} + κ₂(sup‖e_PF‖ + sup|γ̈_d|)`.
pub fn check_iss_bound(
    metrics: &CoordinationMetrics,
    constants: &ConvergenceConstants,
    sup_epf: f64,
    sup_gamma_dd: f64,
) -> IssReport {
    let xi0 = metrics.xi_tc_norm.first().copied().unwrap_or(0.0);
    let input_sup = sup_epf + sup_gamma_dd;
    let margin: Vec<f64> = metrics
        .t
        .iter()
        .zip(&metrics.xi_tc_norm)
        .map(|(&t, &xi)| constants.iss_bound(xi0, t, input_sup) - xi)
        .collect();
    let (idx, min_margin) = margin
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (k, m)| if m < acc.1 { (k, m) } else { acc });
    IssReport {
        holds: min_margin >= 0.0,
        min_margin,
        min_margin_t: metrics.t.get(idx).copied().unwrap_or(0.0),
        margin,
        input_sup,
    }
}
