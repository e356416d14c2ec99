//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits nonzero if any fails.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vtcoord::controller::CoordinationGains;
use vtcoord::coordmath::{build_q, consensus_constants, diam};
use vtcoord::engine::{run, run_auxiliary_consensus, BoundsConfig, Qos, RateProfile, Scenario, VehicleSpec};
use vtcoord::topology::{
    delta_spanning_tree_root, laplacian, verify_assumption3_exact, Digraph, DigraphSchedule, IntegratedLaplacian,
    Segment,
};
use vtcoord::trajectory::{BezierTrajectory, Point3, TrajectorySet};

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Duration, Box<dyn Fn() -> Check + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn vtcoord(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vtcoord"))
        .args(args)
        .output()
        .expect("spawn vtcoord")
}

fn run_cli(scenario: &str, out: &Path, extra: &[&str]) -> Output {
    let path = scenario_path(scenario);
    let mut args = vec!["--scenario", path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    vtcoord(&args)
}

struct LogTable {
    n: usize,
    rows: Vec<Vec<f64>>,
}

impl LogTable {
    fn read(path: &Path) -> Self {
        let text = std::fs::read_to_string(path).expect("read log.csv");
        let mut lines = text.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let n = header.iter().filter(|h| h.starts_with("gamma_")).count();
        let rows = lines
            .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
            .collect();
        Self { n, rows }
    }
    fn t(&self, k: usize) -> f64 {
        self.rows[k][0]
    }
    fn gamma(&self, k: usize) -> &[f64] {
        &self.rows[k][1..1 + self.n]
    }
    fn gamma_dot(&self, k: usize) -> &[f64] {
        &self.rows[k][1 + self.n..1 + 2 * self.n]
    }
    fn epf(&self, k: usize, i: usize) -> f64 {
        self.rows[k][1 + 2 * self.n + i]
    }
}

// Earliest logged time from which `series` stays below `limit` through the
// last sample in `range`, if any.
fn settles_below(t: &[f64], series: &[f64], limit: f64, range: std::ops::Range<f64>) -> Option<f64> {
    let idx: Vec<usize> = (0..t.len()).filter(|&k| range.contains(&t[k])).collect();
    let last_bad = idx.iter().rposition(|&k| series[k] >= limit);
    match last_bad {
        None => idx.first().map(|&k| t[k]),
        Some(p) if p + 1 < idx.len() => Some(t[idx[p + 1]]),
        Some(_) => None,
    }
}

fn criterion_1() -> Check {
    let mut worst = 0.0f64;
    for n in 2..=50 {
        let q = build_q(n).map_err(|e| e.to_string())?;
        let m = q.matrix();
        let ones = DVector::from_element(n, 1.0);
        let e1 = (m * &ones).norm();
        let e2 = (m * m.transpose() - DMatrix::identity(n - 1, n - 1)).norm();
        let proj = DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
        let e3 = (m.transpose() * m - proj).norm();
        worst = worst.max(e1).max(e2).max(e3);
        ensure(e1 <= 1e-12 && e2 <= 1e-12 && e3 <= 1e-12, || {
            format!("n = {n}: |Q1| = {e1:e}, |QQ'-I| = {e2:e}, |Q'Q-P| = {e3:e}")
        })?;
    }
    Ok(format!("worst residual {worst:.1e}"))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut min_slack = f64::INFINITY;
    for trial in 0..10_000 {
        let n = rng.gen_range(2..=10);
        let scale = 10f64.powi(rng.gen_range(-3..=3));
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let qx = build_q(n)
            .and_then(|q| q.apply(&DVector::from_vec(x.clone())))
            .map_err(|e| e.to_string())?
            .norm();
        let d = diam(&x).map_err(|e| e.to_string())?;
        let lower = d - qx / (n as f64).sqrt();
        let upper = 2f64.sqrt() * qx - d;
        min_slack = min_slack.min(lower).min(upper);
        ensure(lower >= -1e-12 && upper >= -1e-12, || {
            format!("trial {trial}: slacks {lower:e}, {upper:e}")
        })?;
    }
    Ok(format!("min slack {min_slack:.2e}"))
}

fn bfs_root(m: &DMatrix<f64>, delta: f64) -> Option<usize> {
    let n = m.nrows();
    let edge = |from: usize, to: usize| from != to && -m[(to, from)] >= delta - 1e-9;
    (0..n).find(|&r| {
        let mut seen = vec![false; n];
        seen[r] = true;
        let mut queue = VecDeque::from([r]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && edge(u, v) {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    })
}

fn digraph_from_bits(n: usize, mut bits: u64) -> Digraph {
    let mut g = Digraph::empty(n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                if bits & 1 == 1 {
                    g.add_edge(i, j).unwrap();
                }
                bits >>= 1;
            }
        }
    }
    g
}

fn criterion_3() -> Check {
    let mut mismatches = Vec::new();
    let mut compare = |m: DMatrix<f64>, delta: f64, label: &dyn Fn() -> String| {
        let expected = bfs_root(&m, delta);
        let got = delta_spanning_tree_root(&IntegratedLaplacian::from_matrix((0.0, 1.0), m).unwrap(), delta);
        if got != expected {
            mismatches.push(format!("{}: got {got:?}, oracle {expected:?}", label()));
        }
    };
    let mut exhaustive = 0;
    for n in 1..=3usize {
        for bits in 0..(1u64 << (n * (n - 1))) {
            compare(laplacian(&digraph_from_bits(n, bits)), 1.0, &|| format!("n={n} bits={bits:b}"));
            exhaustive += 1;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..10_000 {
        let n = rng.gen_range(4..=5);
        let bits = rng.gen::<u64>() & ((1u64 << (n * (n - 1))) - 1);
        compare(laplacian(&digraph_from_bits(n, bits)), 1.0, &|| format!("sample {k}"));
    }
    for k in 0..1_000 {
        let n = rng.gen_range(1..=8);
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                if i != j && rng.gen_bool(0.5) {
                    let w = rng.gen_range(0.0..1.0);
                    m[(i, j)] = -w;
                    m[(i, i)] += w;
                }
            }
        }
        let delta = rng.gen_range(0.05..0.95);
        compare(m, delta, &|| format!("weighted {k}"));
    }
    ensure(mismatches.is_empty(), || {
        format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
    })?;
    Ok(format!("{exhaustive} exhaustive + 11000 sampled, 0 mismatches"))
}

fn random_certified_schedule(rng: &mut ChaCha8Rng, n: usize) -> (DigraphSchedule, f64, f64) {
    loop {
        let k = rng.gen_range(1..=4);
        let dwell = rng.gen_range(0.02..0.3);
        let segments: Vec<Segment> = (0..k)
            .map(|_| {
                let mut g = Digraph::empty(n);
                for i in 0..n {
                    for j in 0..n {
                        if i != j && rng.gen_bool(0.3) {
                            g.add_edge(i, j).unwrap();
                        }
                    }
                }
                Segment {
                    graph: g,
                    dwell: dwell * rng.gen_range(0.5..1.5),
                }
            })
            .collect();
        let s = DigraphSchedule::new(segments, true).unwrap();
        let window = s.period();
        let delta = s.min_dwell();
        if verify_assumption3_exact(&s, window, delta, window).unwrap().holds {
            return (s, window, delta);
        }
    }
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut min_gap = f64::INFINITY;
    for trial in 0..100 {
        let n = rng.gen_range(2..=6);
        let (s, window, delta) = random_certified_schedule(&mut rng, n);
        let a = rng.gen_range(0.5..5.0);
        let b = rng.gen_range(0.5..5.0);
        let c = consensus_constants(n, window, delta, a, b).map_err(|e| e.to_string())?;
        let x0 = DVector::from_fn(n, |_, _| rng.gen_range(-10.0..10.0));
        let d0 = diam(x0.as_slice()).unwrap();
        let dt = s.min_dwell() / 4.0;
        let log = run_auxiliary_consensus(&s, a / b, &x0, dt, 8.0).map_err(|e| e.to_string())?;
        for (t, x) in log.t.iter().zip(&log.x) {
            let gap = c.envelope(d0, *t) - diam(x.as_slice()).unwrap();
            min_gap = min_gap.min(gap);
            ensure(gap >= -1e-9, || format!("trial {trial}, n = {n}, t = {t}: envelope exceeded by {:e}", -gap))?;
        }
    }
    Ok(format!("100 schedules, min envelope gap {min_gap:.2e}"))
}

fn criterion_5(tmp: &Path) -> Check {
    let out = tmp.join("sec5");
    let o = run_cli("paper_sec5.json", &out, &["--verify-assumption3"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    ensure(o.status.success(), || format!("exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr)))?;
    ensure(stdout.contains("(T=0.09, delta=0.03): holds"), || format!("verification output: {stdout}"))?;

    let log = LogTable::read(&out.join("log.csv"));
    let rows = log.rows.len();
    let t: Vec<f64> = (0..rows).map(|k| log.t(k)).collect();
    let t_f = 19.86;
    let rate_d = |t: f64| if t >= 15.3 - 1e-9 { 0.9 } else { 1.0 };
    let spread: Vec<f64> = (0..rows).map(|k| diam(log.gamma(k)).unwrap()).collect();
    let rate_err: Vec<f64> = (0..rows)
        .map(|k| log.gamma_dot(k).iter().map(|v| (v - rate_d(t[k])).abs()).fold(0.0, f64::max))
        .collect();

    let peak = spread.iter().copied().fold(0.0, f64::max);
    ensure(peak >= 0.01, || format!("no transient: peak spread {peak}"))?;
    let sync = settles_below(&t, &spread, 0.01, 0.0..t_f + 1e-9)
        .filter(|&s| s < t_f)
        .ok_or("spread never settles below 0.01")?;
    let pace1 = settles_below(&t, &rate_err, 0.01, 0.0..15.3 - 1e-9)
        .filter(|&s| s < 15.0)
        .ok_or("rate error not below 0.01 before 15 s")?;
    let spike = (0..rows)
        .filter(|&k| (15.3 - 1e-9..15.5).contains(&t[k]))
        .map(|k| rate_err[k])
        .fold(0.0, f64::max);
    ensure(spike >= 0.01, || format!("no spike at the pace step (max {spike})"))?;
    let pace2 = settles_below(&t, &rate_err, 0.01, 15.3 - 1e-9..t_f + 1e-9)
        .filter(|&s| s < t_f)
        .ok_or("rate error does not re-converge")?;
    for i in 0..log.n {
        for k in 1..rows {
            let (prev, cur) = (log.epf(k - 1, i), log.epf(k, i));
            ensure(cur <= prev + 1e-9, || format!("e_PF[{i}] grows at t = {}: {prev} -> {cur}", t[k]))?;
        }
    }
    Ok(format!(
        "holds; spread < 0.01 from t = {sync:.2}; rate error < 0.01 from t = {pace1:.2}, spike {spike:.3} at 15.3 s, back below from t = {pace2:.2}"
    ))
}

fn criterion_6(tmp: &Path) -> Check {
    let out = tmp.join("two");
    let o = run_cli("two_agent_analytic.json", &out, &["--check-bounds"]);
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let text = std::fs::read_to_string(out.join("bounds.json")).map_err(|e| e.to_string())?;
    let b: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let conv = &b["convergence"];
    let (lambda, k, lambda_tc) = (
        conv["lambda"].as_f64().unwrap(),
        conv["k"].as_f64().unwrap(),
        conv["lambda_tc"].as_f64().unwrap(),
    );
    let cap = lambda / (6.0 * 2.0 * k * k);
    ensure((lambda_tc - cap).abs() <= 1e-15, || format!("lambda_tc {lambda_tc} != {cap}"))?;
    let iss = &b["iss"];
    let margin = iss["min_margin"].as_f64().unwrap();
    ensure(iss["holds"].as_bool() == Some(true) && margin >= 0.0, || format!("bound violated: {iss}"))?;
    Ok(format!(
        "kappa1 = {:.3}, kappa2 = {:.3e}, lambda_TC = {lambda_tc:.3e}, min margin {margin:.3e}",
        conv["kappa1"].as_f64().unwrap(),
        conv["kappa2"].as_f64().unwrap()
    ))
}

fn smooth_scenario(dt: f64) -> Scenario {
    let trajectories = TrajectorySet::new(
        (0..3)
            .map(|i| {
                let x = 20.0 * i as f64;
                BezierTrajectory::new(
                    vec![
                        Point3::new(x, 0.0, 10.0),
                        Point3::new(x + 30.0, 40.0, 20.0),
                        Point3::new(x - 20.0, 80.0, 15.0),
                        Point3::new(x, 120.0, 10.0),
                    ],
                    30.0,
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap();
    let g = Digraph::from_edges(3, &[(1, 0), (2, 1), (0, 2), (1, 2)]).unwrap();
    let errors = [Point3::new(1.0, 2.0, -0.5), Point3::new(-0.5, -1.5, 0.3), Point3::new(0.2, 0.8, 1.0)];
    Scenario {
        trajectories,
        schedule: DigraphSchedule::new(vec![Segment { graph: g, dwell: 100.0 }], false).unwrap(),
        gains: CoordinationGains::new(2.0, 3.0, 8.0).unwrap(),
        vehicles: errors
            .iter()
            .map(|&e| VehicleSpec {
                initial_pf_error: e,
                ..VehicleSpec::default()
            })
            .collect(),
        gamma0: vec![0.0, 0.8, 1.5],
        gamma_dot0: vec![1.0, 0.7, 1.2],
        rate_profile: RateProfile::constant(1.0),
        dt,
        t_end: 10.0,
        seed: 0,
        pf_error_jitter: 0.0,
        qos: Some(Qos { window: 1.0, delta: 1.0 }),
        bounds: BoundsConfig::default(),
        waive_connectivity: false,
    }
}

fn criterion_7() -> Check {
    let finals: Vec<Vec<f64>> = [0.2, 0.1, 0.05, 0.025]
        .into_iter()
        .map(|dt| {
            let log = run(&smooth_scenario(dt)).map_err(|e| e.to_string())?;
            Ok(log.records.last().unwrap().gamma.clone())
        })
        .collect::<Result<_, String>>()?;
    let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let mut orders = Vec::new();
    for w in finals.windows(3) {
        let (e1, e2) = (diff(&w[0], &w[1]), diff(&w[1], &w[2]));
        orders.push((e1 / e2).log2());
    }
    let worst = orders.iter().copied().fold(f64::INFINITY, f64::min);
    ensure(worst >= 3.5, || format!("observed orders {orders:?}"))?;
    Ok(format!("observed orders {:?}", orders.iter().map(|o| format!("{o:.2}")).collect::<Vec<_>>()))
}

fn criterion_8(tmp: &Path) -> Check {
    let out = tmp.join("disc");
    let o = run_cli("disconnected.json", &out, &["--verify-assumption3"]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    ensure(o.status.code() == Some(1), || format!("expected exit 1, got {:?}", o.status.code()))?;
    ensure(stdout.contains("fails at t="), || format!("verification output: {stdout}"))?;

    let o = run_cli("disconnected.json", &out, &["--waive-connectivity"]);
    ensure(o.status.success(), || String::from_utf8_lossy(&o.stderr).into_owned())?;
    let log = LogTable::read(&out.join("log.csv"));
    let min_spread = (0..log.rows.len())
        .map(|k| diam(log.gamma(k)).unwrap())
        .fold(f64::INFINITY, f64::min);
    ensure(min_spread >= 0.01, || format!("spread reached {min_spread}"))?;
    Ok(format!("verification fails; spread stays >= {min_spread:.3}"))
}

fn criterion_9(tmp: &Path) -> Check {
    let mut sizes = Vec::new();
    for name in ["paper_sec5.json", "disconnected.json", "two_agent_analytic.json"] {
        let mut logs = Vec::new();
        for rep in 0..2 {
            let out = tmp.join(format!("det-{name}-{rep}"));
            let o = run_cli(name, &out, &["--waive-connectivity"]);
            ensure(o.status.success(), || format!("{name}: {}", String::from_utf8_lossy(&o.stderr)))?;
            logs.push(std::fs::read(out.join("log.csv")).map_err(|e| e.to_string())?);
        }
        ensure(logs[0] == logs[1], || format!("{name}: logs differ"))?;
        sizes.push(format!("{name} {} B", logs[0].len()));
    }
    Ok(format!("byte-identical: {}", sizes.join(", ")))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let tmp = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("1 Q-matrix identities, n = 2..50", Duration::from_secs(1), Box::new(criterion_1)),
        ("2 |Qx| vs diam equivalence, 10000 vectors", Duration::from_secs(5), Box::new(criterion_2)),
        ("3 spanning-tree checker vs BFS oracle", Duration::from_secs(60), Box::new(criterion_3)),
        ("4 consensus envelope, 100 schedules", Duration::from_secs(60), Box::new(criterion_4)),
        ("5 five-agent scenario reproduction", Duration::from_secs(10), Box::new(|| criterion_5(tmp))),
        ("6 ISS bound, two-agent scenario", Duration::from_secs(5), Box::new(|| criterion_6(tmp))),
        ("7 integrator order >= 3.5", Duration::from_secs(10), Box::new(criterion_7)),
        ("8 disconnected negative control", Duration::from_secs(10), Box::new(|| criterion_8(tmp))),
        ("9 byte-identical logs", Duration::from_secs(20), Box::new(|| criterion_9(tmp))),
    ];

    let mut failed = 0;
    for (name, limit, check) in &criteria {
        let start = Instant::now();
        let result = check();
        let elapsed = start.elapsed();
        let result = match result {
            Ok(detail) if elapsed > *limit => Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}")),
            r => r,
        };
        match result {
            Ok(detail) => println!("PASS criterion {name} ({elapsed:.2?}): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name} ({elapsed:.2?}): {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
