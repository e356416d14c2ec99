//! Static digraphs, piecewise-constant switching schedules, and the
//! integral connectivity certificate (δ-edges, δ-paths, δ-spanning trees).
//!
//! Edge convention: adjacency entry `(i, j) = 1` means node `i` receives
//! information from node `j`. Reachability for spanning trees is traversed
//! from transmitter to receiver, so a root is an information source.

use nalgebra::DMatrix;
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

use crate::error::{param, Error, Result};

/// Time values closer than this to a switch instant are snapped onto it.
pub const TIME_EPS: f64 = 1e-10;

/// Absolute slack (seconds) when comparing an integrated weight against δ.
/// Window overlaps like `0.05 - 0.02` are not exact in binary floating point.
pub const DELTA_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Digraph {
    n: usize,
    // row-major; adjacency[i * n + j] == true iff i receives from j
    adjacency: Vec<bool>,
}

impl Digraph {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            adjacency: vec![false; n * n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    g.adjacency[i * n + j] = true;
                }
            }
        }
        g
    }

    /// Builds a digraph from `(receiver, transmitter)` pairs.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut g = Self::empty(n);
        for &(i, j) in edges {
            g.add_edge(i, j)?;
        }
        Ok(g)
    }

    /// Builds a digraph from a square 0/1 matrix with zero diagonal.
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self> {
        let n = rows.len();
        let mut g = Self::empty(n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidDigraph(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                match (v, i == j) {
                    (0, _) => {}
                    (1, false) => g.adjacency[i * n + j] = true,
                    (1, true) => return Err(Error::SelfLoop(i)),
                    _ => {
                        return Err(Error::InvalidDigraph(format!(
                            "entry ({i}, {j}) = {v}, expected 0 or 1"
                        )))
                    }
                }
            }
        }
        Ok(g)
    }

    pub fn add_edge(&mut self, i: usize, j: usize) -> Result<()> {
        let n = self.n;
        for idx in [i, j] {
            if idx >= n {
                return Err(Error::NodeOutOfRange { index: idx, n });
            }
        }
        if i == j {
            return Err(Error::SelfLoop(i));
        }
        self.adjacency[i * n + j] = true;
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && self.adjacency[i * self.n + j]
    }

    /// Nodes that node `i` receives from.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| self.has_edge(i, j))
    }

    /// All `(receiver, transmitter)` pairs in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in self.neighbors(i) {
                out.push((i, j));
            }
        }
        out
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.iter().filter(|&&b| b).count()
    }
}

/// `L = Δ − A` with `Δ_ii = Σ_{j≠i} A_ij`.
pub fn laplacian(g: &Digraph) -> DMatrix<f64> {
    let n = g.n();
    let mut l = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut degree = 0.0;
        for j in g.neighbors(i) {
            l[(i, j)] = -1.0;
            degree += 1.0;
        }
        l[(i, i)] = degree;
    }
    l
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub graph: Digraph,
    pub dwell: f64,
}

/// Location of the segment active at some instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActiveSegment {
    pub index: usize,
    pub start: f64,
    pub end: f64,
}

/// Piecewise-constant time-varying digraph. Right-continuous: at a switch
/// instant the segment starting there is active.
#[derive(Debug, Clone, PartialEq)]
pub struct DigraphSchedule {
    segments: Vec<Segment>,
    cycle: bool,
    // offsets[k] = start of segment k within one pass; offsets[len] = period
    offsets: Vec<f64>,
    laplacians: Vec<DMatrix<f64>>,
}

impl DigraphSchedule {
    pub fn new(segments: Vec<Segment>, cycle: bool) -> Result<Self> {
        let first = segments
            .first()
            .ok_or_else(|| Error::InvalidSchedule("no segments".into()))?;
        let n = first.graph.n();
        let mut offsets = Vec::with_capacity(segments.len() + 1);
        let mut acc = 0.0;
        offsets.push(acc);
        for (k, seg) in segments.iter().enumerate() {
            if !(seg.dwell.is_finite() && seg.dwell > 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "segment {k}: dwell must be finite and > 0, got {}",
                    seg.dwell
                )));
            }
            if seg.graph.n() != n {
                return Err(Error::InvalidSchedule(format!(
                    "segment {k}: {} nodes, expected {n}",
                    seg.graph.n()
                )));
            }
            acc += seg.dwell;
            offsets.push(acc);
        }
        let laplacians = segments.iter().map(|s| laplacian(&s.graph)).collect();
        Ok(Self {
            segments,
            cycle,
            offsets,
            laplacians,
        })
    }

    /// A single digraph held forever.
    pub fn constant(graph: Digraph) -> Self {
        Self::new(vec![Segment { graph, dwell: 1.0 }], true).expect("valid constant schedule")
    }

    pub fn n(&self) -> usize {
        self.segments[0].graph.n()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_cycling(&self) -> bool {
        self.cycle
    }

    /// Length of one pass through all segments.
    pub fn period(&self) -> f64 {
        self.offsets[self.segments.len()]
    }

    /// End of covered time, `None` when the schedule repeats forever.
    pub fn coverage_end(&self) -> Option<f64> {
        (!self.cycle).then(|| self.period())
    }

    pub fn min_dwell(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.dwell)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn segment_laplacian(&self, index: usize) -> &DMatrix<f64> {
        &self.laplacians[index]
    }

    fn check_covered(&self, t: f64) -> Result<()> {
        if !(t >= -TIME_EPS) || !t.is_finite() {
            return Err(Error::TimeOutOfRange {
                t,
                end: self.coverage_end().unwrap_or(f64::INFINITY),
            });
        }
        if let Some(end) = self.coverage_end() {
            if t > end + TIME_EPS {
                return Err(Error::TimeOutOfRange { t, end });
            }
        }
        Ok(())
    }

    /// Segment active at `t`.
    pub fn locate(&self, t: f64) -> Result<ActiveSegment> {
        self.check_covered(t)?;
        let t = t.max(0.0);
        let period = self.period();
        let last = self.segments.len() - 1;

        let (base, mut local) = if self.cycle {
            let mut m = (t / period).floor();
            let mut local = t - m * period;
            if local >= period - TIME_EPS {
                m += 1.0;
                local = (local - period).max(0.0);
            }
            (m * period, local)
        } else {
            (0.0, t)
        };
        if local < 0.0 {
            local = 0.0;
        }

        // largest k with offsets[k] <= local (+ snap)
        let mut index = self
            .offsets
            .partition_point(|&o| o <= local + TIME_EPS)
            .saturating_sub(1);
        if index > last {
            // only reachable at the end of a non-cycling schedule
            index = last;
        }
        Ok(ActiveSegment {
            index,
            start: base + self.offsets[index],
            end: base + self.offsets[index + 1],
        })
    }

    /// `L(t)`, right-continuous at switch instants.
    pub fn laplacian_at(&self, t: f64) -> Result<&DMatrix<f64>> {
        let seg = self.locate(t)?;
        Ok(&self.laplacians[seg.index])
    }

    /// Switch instants strictly inside `(t0, t1)`, excluding anything within
    /// [`TIME_EPS`] of either end.
    pub fn switch_times_in(&self, t0: f64, t1: f64) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        if t1 <= t0 {
            return Ok(out);
        }
        self.check_covered(t0)?;
        let mut seg = self.locate(t0)?;
        while seg.end < t1 - TIME_EPS {
            if seg.end > t0 + TIME_EPS {
                out.push(seg.end);
            }
            if !self.cycle && seg.index + 1 == self.segments.len() {
                break;
            }
            seg = self.locate(seg.end)?;
        }
        Ok(out)
    }

    /// Exact `∫_t^{t+T} L(τ) dτ` as a sum of dwell overlaps times segment
    /// Laplacians.
    pub fn integrated_laplacian(&self, t: f64, window: f64) -> Result<IntegratedLaplacian> {
        if !(window > 0.0 && window.is_finite()) {
            return Err(param("T", format!("window length must be > 0, got {window}")));
        }
        self.check_covered(t)?;
        self.check_covered(t + window)?;
        let n = self.n();
        let stop = t + window;
        let mut matrix = DMatrix::zeros(n, n);
        let mut cur = t;
        while cur < stop - TIME_EPS {
            let seg = self.locate(cur)?;
            let piece_end = seg.end.min(stop);
            let overlap = piece_end - cur.max(seg.start);
            if overlap > 0.0 {
                matrix += &self.laplacians[seg.index] * overlap;
            }
            if !self.cycle && seg.index + 1 == self.segments.len() && piece_end < stop {
                // stop lies within TIME_EPS of the coverage end
                break;
            }
            cur = piece_end;
        }
        Ok(IntegratedLaplacian {
            window: (t, stop),
            matrix,
        })
    }
}

/// Windowed integral of the Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct IntegratedLaplacian {
    pub window: (f64, f64),
    pub matrix: DMatrix<f64>,
}

impl IntegratedLaplacian {
    /// Wraps an arbitrary Laplacian-shaped matrix, e.g. one built from real
    /// weights rather than a schedule.
    pub fn from_matrix(window: (f64, f64), matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidDigraph(format!(
                "integrated Laplacian must be square, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { window, matrix })
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    /// Integrated weight of edge `(i, j)`, i.e. `−m_ij`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        -self.matrix[(i, j)]
    }
}

/// True iff `∫ −L_ij ≥ δ` (up to [`DELTA_TOL`]).
pub fn is_delta_edge(m: &IntegratedLaplacian, i: usize, j: usize, delta: f64) -> Result<bool> {
    let n = m.n();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::NodeOutOfRange { index: idx, n });
        }
    }
    if i == j {
        return Err(Error::SelfLoop(i));
    }
    if !(delta > 0.0) {
        return Err(param("delta", format!("must be > 0, got {delta}")));
    }
    Ok(delta_edge_unchecked(m, i, j, delta))
}

#[inline]
fn delta_edge_unchecked(m: &IntegratedLaplacian, i: usize, j: usize, delta: f64) -> bool {
    m.weight(i, j) >= delta - DELTA_TOL
}

/// Smallest-index node from which every other node is reachable along
/// δ-edges, or `None` when no δ-spanning tree exists.
///
/// Works on the condensation: a spanning tree exists iff exactly one strongly
/// connected component has no incoming δ-edge from another component, and the
/// admissible roots are precisely the members of that component.
pub fn delta_spanning_tree_root(m: &IntegratedLaplacian, delta: f64) -> Option<usize> {
    let n = m.n();
    if n == 0 {
        return None;
    }
    let mut graph = DiGraph::<usize, ()>::with_capacity(n, n * n);
    let nodes: Vec<_> = (0..n).map(|v| graph.add_node(v)).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && delta_edge_unchecked(m, i, j, delta) {
                // information flows j -> i
                graph.add_edge(nodes[j], nodes[i], ());
            }
        }
    }

    let components = tarjan_scc(&graph);
    let mut component_of = vec![0usize; n];
    for (c, members) in components.iter().enumerate() {
        for v in members {
            component_of[v.index()] = c;
        }
    }
    let mut has_inbound = vec![false; components.len()];
    for e in graph.raw_edges() {
        let (from, to) = (component_of[e.source().index()], component_of[e.target().index()]);
        if from != to {
            has_inbound[to] = true;
        }
    }
    let mut sources = has_inbound
        .iter()
        .enumerate()
        .filter(|(_, &inbound)| !inbound)
        .map(|(c, _)| c);
    let source = sources.next()?;
    if sources.next().is_some() {
        return None;
    }
    components[source].iter().map(|v| v.index()).min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assumption3Report {
    pub holds: bool,
    pub first_violation: Option<f64>,
    /// Number of window start times examined.
    pub checked: usize,
}

fn check_qos(window: f64, delta: f64) -> Result<()> {
    if !(window > 0.0 && window.is_finite()) {
        return Err(param("T", format!("must be > 0, got {window}")));
    }
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(param("delta", format!("must be > 0, got {delta}")));
    }
    Ok(())
}

// Last window start that has to be examined.
fn last_window_start(s: &DigraphSchedule, window: f64, horizon: f64) -> Result<f64> {
    match s.coverage_end() {
        None => Ok(horizon.min(s.period())),
        Some(end) => {
            if window > end + TIME_EPS {
                return Err(Error::TimeOutOfRange { t: window, end });
            }
            Ok(horizon.min(end - window).max(0.0))
        }
    }
}

/// Default sampling stride for [`verify_assumption3`]: a third of the
/// shortest dwell.
pub fn default_stride(s: &DigraphSchedule) -> f64 {
    s.min_dwell() / 3.0
}

/// Samples window starts `0, stride, 2·stride, …` up to `horizon` (one period
/// suffices for cycling schedules) and checks each window for a δ-spanning
/// tree.
pub fn verify_assumption3(
    s: &DigraphSchedule,
    window: f64,
    delta: f64,
    horizon: f64,
    stride: f64,
) -> Result<Assumption3Report> {
    check_qos(window, delta)?;
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(param("stride", format!("must be > 0, got {stride}")));
    }
    if !(horizon >= 0.0) {
        return Err(param("horizon", format!("must be >= 0, got {horizon}")));
    }
    let last = last_window_start(s, window, horizon)?;
    let mut checked = 0;
    let mut k = 0u64;
    loop {
        let t = k as f64 * stride;
        if t > last + TIME_EPS {
            break;
        }
        let t = t.min(last.max(0.0));
        checked += 1;
        let m = s.integrated_laplacian(t, window)?;
        if delta_spanning_tree_root(&m, delta).is_none() {
            return Ok(Assumption3Report {
                holds: false,
                first_violation: Some(t),
                checked,
            });
        }
        k += 1;
    }
    Ok(Assumption3Report {
        holds: true,
        first_violation: None,
        checked,
    })
}

/// Event-based variant of [`verify_assumption3`] that cannot miss a violation.
///
/// Between consecutive instants where `t` or `t + T` crosses a switch, every
/// integrated entry is affine in `t`, so the δ-edge set only changes where an
/// entry crosses δ. Checking every breakpoint, every crossing, and one
/// interior point between each consecutive pair covers all distinct edge sets.
pub fn verify_assumption3_exact(
    s: &DigraphSchedule,
    window: f64,
    delta: f64,
    horizon: f64,
) -> Result<Assumption3Report> {
    check_qos(window, delta)?;
    let last = last_window_start(s, window, horizon)?;
    let n = s.n();

    let mut breaks = vec![0.0, last];
    for sw in s.switch_times_in(0.0, last + window)? {
        breaks.push(sw);
        breaks.push(sw - window);
    }
    breaks.retain(|&b| (0.0..=last).contains(&b));
    breaks.sort_by(f64::total_cmp);
    breaks.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);

    let mut candidates = breaks.clone();
    for pair in breaks.windows(2) {
        let (t0, t1) = (pair[0], pair[1]);
        let m0 = s.integrated_laplacian(t0, window)?;
        let m1 = s.integrated_laplacian(t1, window)?;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let (w0, w1) = (m0.weight(i, j) - delta, m1.weight(i, j) - delta);
                if w0 * w1 < 0.0 {
                    candidates.push(t0 + (t1 - t0) * w0 / (w0 - w1));
                }
            }
        }
    }
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() <= TIME_EPS);
    let mut probes = Vec::with_capacity(2 * candidates.len());
    for (k, &c) in candidates.iter().enumerate() {
        probes.push(c);
        if let Some(&next) = candidates.get(k + 1) {
            probes.push(0.5 * (c + next));
        }
    }

    for (checked, &t) in probes.iter().enumerate() {
        let m = s.integrated_laplacian(t, window)?;
        if delta_spanning_tree_root(&m, delta).is_none() {
            return Ok(Assumption3Report {
                holds: false,
                first_violation: Some(t),
                checked: checked + 1,
            });
        }
    }
    Ok(Assumption3Report {
        holds: true,
        first_violation: None,
        checked: probes.len(),
    })
}
