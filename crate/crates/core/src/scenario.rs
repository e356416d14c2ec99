//! JSON scenario files.
//!
//! ```json
//! {
//!   "t_f": 19.86,
//!   "trajectories": [{"control_points": [[0,0,10],[0,150,10]]}],
//!   "schedule": {"segments": [{"edges": [[1,0]], "dwell": 0.03}], "cycle": true},
//!   "gains": {"a": 3.75, "b": 4.82, "epsilon": 12.0},
//!   "vehicles": [{"initial_pf_error": [0,1,0], "k_pf": 1.0, "disturbance": {"kind": "none"}}],
//!   "gamma0": [0], "gamma_dot0": [1],
//!   "gamma_dot_d": [[0.0, 1.0], [15.3, 0.9]],
//!   "dt": 0.005, "t_end": 19.86, "seed": 0,
//!   "qos": {"T": 0.09, "delta": 0.03}
//! }
//! ```
//!
//! Edges are `[receiver, transmitter]` pairs with zero-based indices.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::controller::CoordinationGains;
use crate::engine::{BoundsConfig, Qos, RateProfile, Scenario, VehicleSpec};
use crate::error::{Error, Result};
use crate::topology::{Digraph, DigraphSchedule, Segment};
use crate::trajectory::{BezierTrajectory, Point3, TrajectorySet, DEFAULT_SPEED_SAMPLES};
use crate::vehicle::DisturbanceProfile;

pub const DEFAULT_DT: f64 = 0.005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub t_f: f64,
    pub trajectories: Vec<TrajectoryFile>,
    pub schedule: ScheduleFile,
    pub gains: CoordinationGains,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vehicles: Vec<VehicleFile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_dot0: Option<Vec<f64>>,
    #[serde(default = "default_profile")]
    pub gamma_dot_d: Vec<[f64; 2]>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub pf_error_jitter: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qos: Option<QosFile>,
    #[serde(default)]
    pub bounds: BoundsFile,
}

fn default_profile() -> Vec<[f64; 2]> {
    vec![[0.0, 1.0]]
}

fn default_dt() -> f64 {
    DEFAULT_DT
}

fn default_k_pf() -> f64 {
    1.0
}

fn default_ramp() -> f64 {
    0.5
}

fn default_speed_samples() -> usize {
    DEFAULT_SPEED_SAMPLES
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryFile {
    pub control_points: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleFile {
    pub segments: Vec<SegmentFile>,
    #[serde(default)]
    pub cycle: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentFile {
    pub edges: Vec<[usize; 2]>,
    pub dwell: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleFile {
    #[serde(default)]
    pub initial_pf_error: [f64; 3],
    #[serde(default = "default_k_pf")]
    pub k_pf: f64,
    #[serde(default)]
    pub disturbance: DisturbanceFile,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceFile {
    #[default]
    None,
    ConstantBias {
        vector: [f64; 3],
    },
    WindowedGust {
        vector: [f64; 3],
        window: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QosFile {
    #[serde(rename = "T")]
    pub window: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_tc: Option<f64>,
    #[serde(default = "default_ramp")]
    pub gamma_dd_ramp: f64,
    #[serde(default = "default_speed_samples")]
    pub speed_samples: usize,
}

impl Default for BoundsFile {
    fn default() -> Self {
        Self {
            c3: None,
            beta: None,
            lambda_tc: None,
            gamma_dd_ramp: default_ramp(),
            speed_samples: default_speed_samples(),
        }
    }
}

fn p3(v: [f64; 3]) -> Point3 {
    Point3::new(v[0], v[1], v[2])
}

fn finite_positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| Error::Parse {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn n(&self) -> usize {
        self.trajectories.len()
    }

    /// Structural problems, each prefixed with the JSON path it refers to.
    pub fn check(&self) -> Vec<String> {
        let mut issues = Vec::new();
        let n = self.n();
        if !finite_positive(self.t_f) {
            issues.push(format!("t_f: must be > 0, got {}", self.t_f));
        }
        if n == 0 {
            issues.push("trajectories: at least one trajectory required".into());
        }
        for (i, tr) in self.trajectories.iter().enumerate() {
            if tr.control_points.len() < 2 {
                issues.push(format!(
                    "trajectories[{i}].control_points: need at least 2 points, got {}",
                    tr.control_points.len()
                ));
            }
            if tr.control_points.iter().flatten().any(|c| !c.is_finite()) {
                issues.push(format!("trajectories[{i}].control_points: non-finite coordinate"));
            }
        }
        if self.schedule.segments.is_empty() {
            issues.push("schedule.segments: at least one segment required".into());
        }
        for (k, seg) in self.schedule.segments.iter().enumerate() {
            if !finite_positive(seg.dwell) {
                issues.push(format!(
                    "schedule.segments[{k}].dwell: must be > 0, got {}",
                    seg.dwell
                ));
            }
            for (e, &[i, j]) in seg.edges.iter().enumerate() {
                if i >= n || j >= n {
                    issues.push(format!(
                        "schedule.segments[{k}].edges[{e}]: node index out of range for {n} agents"
                    ));
                } else if i == j {
                    issues.push(format!("schedule.segments[{k}].edges[{e}]: self loop ({i}, {i})"));
                }
            }
        }
        for (name, v) in [
            ("a", self.gains.a),
            ("b", self.gains.b),
            ("epsilon", self.gains.epsilon),
        ] {
            if !finite_positive(v) {
                issues.push(format!("gains.{name}: must be > 0, got {v}"));
            }
        }
        if !self.vehicles.is_empty() && self.vehicles.len() != n {
            issues.push(format!("vehicles: {} entries, expected {n}", self.vehicles.len()));
        }
        for (i, v) in self.vehicles.iter().enumerate() {
            if !finite_positive(v.k_pf) {
                issues.push(format!("vehicles[{i}].k_pf: must be > 0, got {}", v.k_pf));
            }
            if let DisturbanceFile::WindowedGust { window, .. } = v.disturbance {
                if !(window[0] <= window[1]) {
                    issues.push(format!(
                        "vehicles[{i}].disturbance.window: must be ordered, got {window:?}"
                    ));
                }
            }
        }
        for (name, vals) in [("gamma0", &self.gamma0), ("gamma_dot0", &self.gamma_dot0)] {
            if let Some(vals) = vals {
                if vals.len() != n {
                    issues.push(format!("{name}: {} entries, expected {n}", vals.len()));
                }
                for (i, v) in vals.iter().enumerate() {
                    let ok = match name {
                        "gamma0" => (0.0..=self.t_f).contains(v),
                        _ => *v >= 0.0 && v.is_finite(),
                    };
                    if !ok {
                        issues.push(format!("{name}[{i}]: value {v} out of range"));
                    }
                }
            }
        }
        if let Err(e) = self.rate_profile() {
            issues.push(format!("gamma_dot_d: {e}"));
        }
        if !finite_positive(self.dt) {
            issues.push(format!("dt: must be > 0, got {}", self.dt));
        } else {
            let min_dwell = self
                .schedule
                .segments
                .iter()
                .map(|s| s.dwell)
                .fold(f64::INFINITY, f64::min);
            if min_dwell > 0.0 && self.dt > min_dwell / 3.0 * (1.0 + 1e-9) {
                issues.push(format!(
                    "dt: {} exceeds smallest dwell / 3 = {}",
                    self.dt,
                    min_dwell / 3.0
                ));
            }
        }
        let t_end = self.t_end();
        if !finite_positive(t_end) {
            issues.push(format!("t_end: must be > 0, got {t_end}"));
        }
        if !self.schedule.cycle {
            let covered: f64 = self.schedule.segments.iter().map(|s| s.dwell).sum();
            if t_end > covered + 1e-10 {
                issues.push(format!(
                    "t_end: {t_end} exceeds non-cycling schedule coverage {covered}"
                ));
            }
        }
        if !(self.pf_error_jitter >= 0.0) {
            issues.push(format!("pf_error_jitter: must be >= 0, got {}", self.pf_error_jitter));
        }
        if let Some(q) = self.qos {
            if !finite_positive(q.window) {
                issues.push(format!("qos.T: must be > 0, got {}", q.window));
            }
            if !finite_positive(q.delta) || q.delta > q.window {
                issues.push(format!("qos.delta: must satisfy 0 < delta <= T, got {}", q.delta));
            }
        }
        if !finite_positive(self.bounds.gamma_dd_ramp) {
            issues.push(format!(
                "bounds.gamma_dd_ramp: must be > 0, got {}",
                self.bounds.gamma_dd_ramp
            ));
        }
        if self.bounds.speed_samples < 2 {
            issues.push("bounds.speed_samples: must be >= 2".into());
        }
        issues
    }

    pub fn t_end(&self) -> f64 {
        self.t_end.unwrap_or(self.t_f)
    }

    fn rate_profile(&self) -> Result<RateProfile> {
        RateProfile::new(self.gamma_dot_d.iter().map(|&[t, r]| (t, r)).collect())
    }

    /// Validates and builds the simulation scenario.
    pub fn to_scenario(&self) -> Result<Scenario> {
        let issues = self.check();
        if !issues.is_empty() {
            return Err(Error::Validation(issues));
        }
        let n = self.n();
        let trajectories = TrajectorySet::new(
            self.trajectories
                .iter()
                .map(|t| BezierTrajectory::new(t.control_points.iter().copied().map(p3).collect(), self.t_f))
                .collect::<Result<_>>()?,
        )?;
        let segments = self
            .schedule
            .segments
            .iter()
            .map(|s| {
                let edges: Vec<_> = s.edges.iter().map(|&[i, j]| (i, j)).collect();
                Ok(Segment {
                    graph: Digraph::from_edges(n, &edges)?,
                    dwell: s.dwell,
                })
            })
            .collect::<Result<_>>()?;
        let schedule = DigraphSchedule::new(segments, self.schedule.cycle)?;
        let vehicles = if self.vehicles.is_empty() {
            vec![VehicleSpec::default(); n]
        } else {
            self.vehicles
                .iter()
                .map(|v| {
                    let disturbance = match v.disturbance {
                        DisturbanceFile::None => DisturbanceProfile::None,
                        DisturbanceFile::ConstantBias { vector } => DisturbanceProfile::ConstantBias(p3(vector)),
                        DisturbanceFile::WindowedGust { vector, window } => {
                            DisturbanceProfile::gust(p3(vector), window[0], window[1])?
                        }
                    };
                    Ok(VehicleSpec {
                        initial_pf_error: p3(v.initial_pf_error),
                        k_pf: v.k_pf,
                        disturbance,
                    })
                })
                .collect::<Result<_>>()?
        };
        Ok(Scenario {
            trajectories,
            schedule,
            gains: self.gains,
            vehicles,
            gamma0: self.gamma0.clone().unwrap_or_else(|| vec![0.0; n]),
            gamma_dot0: self.gamma_dot0.clone().unwrap_or_else(|| vec![1.0; n]),
            rate_profile: self.rate_profile()?,
            dt: self.dt,
            t_end: self.t_end(),
            seed: self.seed,
            pf_error_jitter: self.pf_error_jitter,
            qos: self.qos.map(|q| Qos {
                window: q.window,
                delta: q.delta,
            }),
            bounds: BoundsConfig {
                c3: self.bounds.c3,
                beta: self.bounds.beta,
                lambda_tc: self.bounds.lambda_tc,
                gamma_dd_ramp: self.bounds.gamma_dd_ramp,
                speed_samples: self.bounds.speed_samples,
            },
            waive_connectivity: false,
        })
    }
}
