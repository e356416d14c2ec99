//! Command implementations behind the `vtcoord` binary.
//!
//! Every command returns a [`CliError`] on failure; its [`CliError::exit_code`]
//! is the process exit status (1 for validation failures, 2 for runtime ones).

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use vtcoord::controller::{validate_gains, GainReport};
use vtcoord::coordmath::{build_q, consensus_constants, iss_bounds, ConsensusConstants, ConvergenceConstants, IssInputs};
use vtcoord::engine::{self, check_iss_bound, extract_metrics, CoordinationMetrics, Event, Qos, Scenario, SimLog};
use vtcoord::scenario::ScenarioFile;
use vtcoord::topology::{verify_assumption3_exact, Assumption3Report};
use vtcoord::trajectory::{speed_bounds, SpeedBounds};

pub const LOG_FILE: &str = "log.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const BOUNDS_FILE: &str = "bounds.json";
pub const SUMMARY_FILE: &str = "summary.csv";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<vtcoord::Error> for CliError {
    fn from(e: vtcoord::Error) -> Self {
        match e {
            vtcoord::Error::Validation(issues) => CliError::Validation(issues),
            vtcoord::Error::Parse { .. } | vtcoord::Error::InvalidParameter { .. } => {
                CliError::Validation(vec![e.to_string()])
            }
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub dt: Option<f64>,
    pub t_end: Option<f64>,
    pub seed: Option<u64>,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub epsilon: Option<f64>,
}

impl Overrides {
    pub fn apply(&self, file: &mut ScenarioFile) {
        if let Some(dt) = self.dt {
            file.dt = dt;
        }
        if let Some(t_end) = self.t_end {
            file.t_end = Some(t_end);
        }
        if let Some(seed) = self.seed {
            file.seed = seed;
        }
        if let Some(a) = self.a {
            file.gains.a = a;
        }
        if let Some(b) = self.b {
            file.gains.b = b;
        }
        if let Some(eps) = self.epsilon {
            file.gains.epsilon = eps;
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub overrides: Overrides,
    pub check_bounds: bool,
    pub verify_assumption3: bool,
    pub waive_connectivity: bool,
}

impl RunConfig {
    pub fn new(scenario: impl Into<PathBuf>, out: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            out: out.into(),
            ..Self::default()
        }
    }

    /// Loads the scenario file with overrides applied.
    pub fn load(&self) -> Result<ScenarioFile, CliError> {
        let mut file = ScenarioFile::load(&self.scenario)?;
        self.overrides.apply(&mut file);
        Ok(file)
    }
}

fn build(file: &ScenarioFile, waive: bool) -> Result<Scenario, CliError> {
    let mut sc = file.to_scenario()?;
    sc.waive_connectivity = waive;
    Ok(sc)
}

fn prepare_out(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write(path: PathBuf, contents: &str) -> Result<(), CliError> {
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable report");
    s.push('\n');
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub qos: Qos,
    pub report: Assumption3Report,
}

impl Verification {
    /// `holds` or `fails at t=<first violating window start>`.
    pub fn summary(&self) -> String {
        match (self.report.holds, self.report.first_violation) {
            (true, _) => "holds".into(),
            (false, Some(t)) => format!("fails at t={t}"),
            (false, None) => "fails".into(),
        }
    }
}

/// Exact check of the windowed connectivity condition over `[0, t_end]`.
pub fn cmd_verify(file: &ScenarioFile) -> Result<Verification, CliError> {
    let sc = build(file, true)?;
    let qos = sc
        .qos
        .ok_or_else(|| CliError::Validation(vec!["qos: required for connectivity verification".into()]))?;
    let report = verify_assumption3_exact(&sc.schedule, qos.window, qos.delta, sc.t_end)?;
    Ok(Verification { qos, report })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IssSummary {
    pub holds: bool,
    pub min_margin: f64,
    pub min_margin_t: f64,
    pub sup_epf: f64,
    pub sup_gamma_dd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundsReport {
    pub n: usize,
    #[serde(rename = "T")]
    pub window: f64,
    pub delta: f64,
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    pub consensus: ConsensusConstants,
    pub convergence: ConvergenceConstants,
    pub speed: SpeedBounds,
    pub gains: GainReport,
    pub warnings: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iss: Option<IssSummary>,
}

/// Consensus envelope constants and ISS constants for a scenario.
pub fn bounds_for(sc: &Scenario) -> Result<BoundsReport, CliError> {
    let qos = sc
        .qos
        .ok_or_else(|| CliError::Validation(vec!["qos: required for bound computation".into()]))?;
    let n = sc.n();
    let g = sc.gains;
    let consensus = consensus_constants(n, qos.window, qos.delta, g.a, g.b)?;
    let convergence = iss_bounds(&IssInputs {
        c3: sc.bounds.c3,
        beta: sc.bounds.beta,
        lambda_tc: sc.bounds.lambda_tc,
        ..IssInputs::new(n, qos.window, qos.delta, g.a, g.b)
    })?;
    let speed = speed_bounds(&sc.trajectories, sc.bounds.speed_samples)?;
    let gains = validate_gains(&g, speed.v_min, speed.v_max);
    let mut warnings: Vec<String> = consensus.warning.iter().map(|w| w.message().to_string()).collect();
    warnings.extend(gains.warnings.iter().cloned());
    if speed.v_min_over_agents < speed.v_min && g.epsilon <= speed.v_max - speed.v_min_over_agents {
        warnings.push(format!(
            "epsilon = {} does not exceed v_max - min_i v_i,min = {}",
            g.epsilon,
            speed.v_max - speed.v_min_over_agents
        ));
    }
    if convergence.gain_condition_margin < 0.0 {
        warnings.push(format!(
            "gain condition not met (margin {}); the ISS bound is not guaranteed for these gains",
            convergence.gain_condition_margin
        ));
    }
    Ok(BoundsReport {
        n,
        window: qos.window,
        delta: qos.delta,
        a: g.a,
        b: g.b,
        epsilon: g.epsilon,
        consensus,
        convergence,
        speed,
        gains,
        warnings,
        iss: None,
    })
}

/// Writes `bounds.json` without simulating.
pub fn cmd_bounds(cfg: &RunConfig) -> Result<BoundsReport, CliError> {
    let file = cfg.load()?;
    let sc = build(&file, cfg.waive_connectivity)?;
    let issues = sc.validate();
    if !issues.is_empty() {
        return Err(CliError::Validation(issues));
    }
    let report = bounds_for(&sc)?;
    prepare_out(&cfg.out)?;
    write(cfg.out.join(BOUNDS_FILE), &to_json(&report))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub final_max_pairwise_gamma: f64,
    pub final_max_rate_error: f64,
    pub final_xi_tc_norm: f64,
    pub decay_rate: Option<f64>,
    pub events: Vec<Event>,
    pub series: CoordinationMetrics,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub verification: Option<Verification>,
    pub log: SimLog,
    pub metrics: CoordinationMetrics,
    pub bounds: Option<BoundsReport>,
}

/// Simulates and reports metrics for an already loaded scenario.
pub fn simulate(file: &ScenarioFile, waive: bool) -> Result<(Scenario, SimLog, CoordinationMetrics), CliError> {
    let sc = build(file, waive)?;
    let log = engine::run(&sc)?;
    let q = (sc.n() >= 2).then(|| build_q(sc.n())).transpose()?;
    let metrics = extract_metrics(&log, q.as_ref(), &sc.rate_profile)?;
    Ok((sc, log, metrics))
}

/// Runs one scenario and writes `log.csv`, `metrics.json` and, with
/// `check_bounds`, `bounds.json`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    let file = cfg.load()?;
    let issues = file.check();
    if !issues.is_empty() {
        return Err(CliError::Validation(issues));
    }

    let verification = if cfg.verify_assumption3 {
        let v = cmd_verify(&file)?;
        println!("assumption 3 (T={}, delta={}): {}", v.qos.window, v.qos.delta, v.summary());
        if !v.report.holds && !cfg.waive_connectivity {
            return Err(CliError::Validation(vec![format!(
                "connectivity assumption {}; pass --waive-connectivity to simulate anyway",
                v.summary()
            )]));
        }
        Some(v)
    } else {
        None
    };

    let (sc, log, metrics) = simulate(&file, cfg.waive_connectivity)?;
    let bounds = if cfg.check_bounds {
        let mut report = bounds_for(&sc)?;
        let sup_epf = log.sup_stacked_pf_error();
        let sup_gamma_dd = sc.rate_profile.sup_accel(sc.bounds.gamma_dd_ramp);
        let iss = check_iss_bound(&metrics, &report.convergence, sup_epf, sup_gamma_dd);
        report.iss = Some(IssSummary {
            holds: iss.holds,
            min_margin: iss.min_margin,
            min_margin_t: iss.min_margin_t,
            sup_epf,
            sup_gamma_dd,
        });
        Some(report)
    } else {
        None
    };

    prepare_out(&cfg.out)?;
    write(cfg.out.join(LOG_FILE), &log.to_csv())?;
    let report = MetricsReport {
        name: file.name.clone(),
        n: sc.n(),
        dt: sc.dt,
        t_end: sc.t_end,
        seed: sc.seed,
        final_max_pairwise_gamma: metrics.final_max_pairwise_gamma,
        final_max_rate_error: metrics.final_max_rate_error,
        final_xi_tc_norm: metrics.final_xi_tc_norm,
        decay_rate: metrics.decay_rate,
        events: log.events.clone(),
        series: metrics.clone(),
    };
    write(cfg.out.join(METRICS_FILE), &to_json(&report))?;
    if let Some(b) = &bounds {
        write(cfg.out.join(BOUNDS_FILE), &to_json(b))?;
    }
    Ok(RunOutcome {
        verification,
        log,
        metrics,
        bounds,
    })
}

/// Parameter grid for sweeps. Missing axes keep the scenario's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default)]
    pub a: Vec<f64>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    /// Replaces every segment's dwell; the qos window and threshold are
    /// rescaled by the same factor.
    #[serde(default)]
    pub dwell: Vec<f64>,
    #[serde(default)]
    pub seed: Vec<u64>,
}

impl SweepGrid {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let at = e.path().to_string();
            CliError::Validation(vec![format!("{}: {at}: {}", path.display(), e.into_inner())])
        })
    }

    /// Cartesian product in `a, b, epsilon, dwell, seed` order, last axis fastest.
    pub fn cells(&self) -> Vec<SweepCell> {
        fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().copied().map(Some).collect()
            }
        }
        let mut out = Vec::new();
        for &a in &axis(&self.a) {
            for &b in &axis(&self.b) {
                for &epsilon in &axis(&self.epsilon) {
                    for &dwell in &axis(&self.dwell) {
                        for &seed in &axis(&self.seed) {
                            out.push(SweepCell {
                                a,
                                b,
                                epsilon,
                                dwell,
                                seed,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepCell {
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub epsilon: Option<f64>,
    pub dwell: Option<f64>,
    pub seed: Option<u64>,
}

impl SweepCell {
    fn apply(&self, base: &ScenarioFile) -> ScenarioFile {
        let mut f = base.clone();
        Overrides {
            seed: self.seed,
            a: self.a,
            b: self.b,
            epsilon: self.epsilon,
            ..Overrides::default()
        }
        .apply(&mut f);
        if let Some(dwell) = self.dwell {
            let old = f.schedule.segments.iter().map(|s| s.dwell).fold(f64::INFINITY, f64::min);
            for s in &mut f.schedule.segments {
                s.dwell = dwell;
            }
            if let Some(q) = &mut f.qos {
                if old.is_finite() && old > 0.0 {
                    let scale = dwell / old;
                    q.window *= scale;
                    q.delta *= scale;
                }
            }
        }
        f
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub index: usize,
    pub a: f64,
    pub b: f64,
    pub epsilon: f64,
    pub dwell: Option<f64>,
    pub seed: u64,
    pub result: Result<CellMetrics, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellMetrics {
    pub final_max_pairwise_gamma: f64,
    pub final_max_rate_error: f64,
    pub final_xi_tc_norm: f64,
    pub decay_rate: Option<f64>,
}

impl From<&CoordinationMetrics> for CellMetrics {
    fn from(m: &CoordinationMetrics) -> Self {
        Self {
            final_max_pairwise_gamma: m.final_max_pairwise_gamma,
            final_max_rate_error: m.final_max_rate_error,
            final_xi_tc_norm: m.final_xi_tc_norm,
            decay_rate: m.decay_rate,
        }
    }
}

pub const SUMMARY_HEADER: &str =
    "cell,a,b,epsilon,dwell,seed,status,final_max_pairwise_gamma,final_max_rate_error,final_xi_tc_norm,decay_rate,reason";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl SweepRow {
    pub fn to_csv_line(&self) -> String {
        let dwell = self.dwell.map(|d| d.to_string()).unwrap_or_default();
        let head = format!("{},{},{},{},{},{}", self.index, self.a, self.b, self.epsilon, dwell, self.seed);
        match &self.result {
            Ok(m) => format!(
                "{head},ok,{},{},{},{},",
                m.final_max_pairwise_gamma,
                m.final_max_rate_error,
                m.final_xi_tc_norm,
                m.decay_rate.map(|r| r.to_string()).unwrap_or_default()
            ),
            Err(reason) => format!("{head},rejected,,,,,{}", csv_field(reason)),
        }
    }
}

/// Runs every grid cell in parallel and writes `summary.csv` in grid order.
pub fn cmd_sweep(cfg: &RunConfig, grid: &SweepGrid) -> Result<Vec<SweepRow>, CliError> {
    let base = cfg.load()?;
    let rows: Vec<SweepRow> = grid
        .cells()
        .into_par_iter()
        .enumerate()
        .map(|(index, cell)| {
            let f = cell.apply(&base);
            let result = simulate(&f, cfg.waive_connectivity)
                .map(|(_, _, m)| CellMetrics::from(&m))
                .map_err(|e| match e {
                    CliError::Validation(issues) => issues.join("; "),
                    CliError::Runtime(msg) => msg,
                });
            SweepRow {
                index,
                a: f.gains.a,
                b: f.gains.b,
                epsilon: f.gains.epsilon,
                dwell: cell.dwell,
                seed: f.seed,
                result,
            }
        })
        .collect();

    let mut csv = String::from(SUMMARY_HEADER);
    csv.push('\n');
    for r in &rows {
        if let Err(reason) = &r.result {
            eprintln!("cell {} rejected: {reason}", r.index);
        }
        csv.push_str(&r.to_csv_line());
        csv.push('\n');
    }
    prepare_out(&cfg.out)?;
    write(cfg.out.join(SUMMARY_FILE), &csv)?;
    Ok(rows)
}
