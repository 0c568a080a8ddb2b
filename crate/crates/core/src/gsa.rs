//! Graphical stepwise selection.
//!
//! Starting from empty neighbourhoods, each iteration
//!
//! 1. scores every non-adjacent pair `(j, l)` by the Pearson correlation
//!    between the residual of `X_j` regressed on its neighbourhood and the
//!    residual of `X_l` regressed on its own, and joins the best pair when
//!    `|f| >= alpha_f` (otherwise the search stops);
//! 2. scores every current edge the same way with the partner removed from
//!    both regressions, and cuts the weakest edge when `|b| <= alpha_b`.
//!
//! The final neighbourhoods give the precision estimate through the residual
//! cross-products of [`assemble_omega`].
//!
//! [`residual_for_node`], [`forward_scan`] and [`backward_scan`] compute the
//! scores from scratch. [`run_gsa`] uses an incremental engine that keeps
//! one residual per node and refreshes only the two nodes touched by each
//! step; its regressions go through the cross-product matrix `X^T X`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{column, least_squares_residuals, pearson_correlation, DenseMatrix, Vector};
use crate::model::{EdgeSet, SampleSet};

/// Residuals whose norm falls below this fraction of the (centred) response
/// norm are exact fits; their correlations are reported as 0.
const DEGENERATE_RESIDUAL: f64 = 1e-10;

/// Relative Cholesky pivot below which the cross-product route hands over to
/// the minimum-norm solver.
const GRAM_PIVOT_TOL: f64 = 1e-10;

/// Forward and backward thresholds, `0 <= alpha_b < alpha_f <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    alpha_f: f64,
    alpha_b: f64,
}

impl Thresholds {
    pub fn new(alpha_f: f64, alpha_b: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_f) || !(0.0..=1.0).contains(&alpha_b) {
            return Err(Error::contract(format!(
                "thresholds must lie in [0, 1], got alpha_f = {alpha_f}, alpha_b = {alpha_b}"
            )));
        }
        if alpha_b >= alpha_f {
            return Err(Error::contract(format!(
                "alpha_b ({alpha_b}) must be strictly below alpha_f ({alpha_f})"
            )));
        }
        Ok(Thresholds { alpha_f, alpha_b })
    }

    pub fn alpha_f(&self) -> f64 {
        self.alpha_f
    }

    pub fn alpha_b(&self) -> f64 {
        self.alpha_b
    }
}

/// The neighbourhood family `{A_j}`; symmetric by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborhoodSystem {
    neighbors: Vec<BTreeSet<usize>>,
}

impl NeighborhoodSystem {
    pub fn empty(p: usize) -> Self {
        NeighborhoodSystem {
            neighbors: vec![BTreeSet::new(); p],
        }
    }

    pub fn from_edges(edges: &EdgeSet) -> Self {
        let mut nb = NeighborhoodSystem::empty(edges.p());
        for (i, l) in edges.iter() {
            nb.neighbors[i].insert(l);
            nb.neighbors[l].insert(i);
        }
        nb
    }

    pub fn p(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, j: usize) -> &BTreeSet<usize> {
        &self.neighbors[j]
    }

    pub fn degree(&self, j: usize) -> usize {
        self.neighbors[j].len()
    }

    pub fn contains(&self, j: usize, l: usize) -> bool {
        self.neighbors[j].contains(&l)
    }

    pub fn add_edge(&mut self, j: usize, l: usize) -> Result<()> {
        let p = self.p();
        if j == l || j >= p || l >= p {
            return Err(Error::contract(format!("invalid edge ({j}, {l}) for p = {p}")));
        }
        self.neighbors[j].insert(l);
        self.neighbors[l].insert(j);
        Ok(())
    }

    pub fn remove_edge(&mut self, j: usize, l: usize) {
        self.neighbors[j].remove(&l);
        self.neighbors[l].remove(&j);
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// `{(i, l) : i in A_l}` as an edge set.
    pub fn edges(&self) -> EdgeSet {
        let pairs = self
            .neighbors
            .iter()
            .enumerate()
            .flat_map(|(j, a)| a.iter().filter(move |&&l| l > j).map(move |&l| (j, l)));
        EdgeSet::from_pairs(self.p(), pairs).expect("neighbourhoods hold valid pairs")
    }

    fn sorted_edges(&self) -> Vec<(usize, usize)> {
        self.edges().iter().collect()
    }
}

/// A scored pair: `f_jl` during a forward scan, `b_jl` during a backward one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub j: usize,
    pub l: usize,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepKind {
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub kind: StepKind,
    pub edge: (usize, usize),
    pub score: f64,
}

/// Output of [`run_gsa`].
#[derive(Debug, Clone)]
pub struct GsaFit {
    pub thresholds: Thresholds,
    pub neighborhoods: NeighborhoodSystem,
    pub edges: EdgeSet,
    /// Symmetric `p x p` estimate; zero off the estimated support.
    pub omega_hat: DenseMatrix,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

impl GsaFit {
    pub fn p(&self) -> usize {
        self.neighborhoods.p()
    }
}

/// Stepwise path without the precision estimate.
#[derive(Debug, Clone)]
pub(crate) struct StepwisePath {
    pub neighborhoods: NeighborhoodSystem,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

/// Column-centred copy of the data matrix.
pub(crate) fn centered(data: &DenseMatrix) -> DenseMatrix {
    let mut x = data.clone();
    let n = x.nrows() as f64;
    for mut col in x.column_iter_mut() {
        let m = col.sum() / n;
        col.iter_mut().for_each(|v| *v -= m);
    }
    x
}

/// Default neighbourhood cap `min(n - 2, p - 1)`.
pub fn default_cap(n: usize, p: usize) -> usize {
    n.saturating_sub(2).min(p.saturating_sub(1))
}

/// Default iteration budget: ten passes over every possible edge.
pub fn default_max_iter(p: usize) -> usize {
    10 * p * p.saturating_sub(1) / 2 + 100
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Centred, unit-norm copy of a residual, or zeros when the residual is an
/// exact fit relative to `scale`.
fn unit_residual(e: &[f64], scale: f64) -> Vec<f64> {
    let m = e.iter().sum::<f64>() / e.len() as f64;
    let c: Vec<f64> = e.iter().map(|v| v - m).collect();
    let nrm = norm(&c);
    if nrm == 0.0 || nrm <= DEGENERATE_RESIDUAL * scale {
        return vec![0.0; e.len()];
    }
    c.into_iter().map(|v| v / nrm).collect()
}

fn residual_correlation(a: &[f64], a_scale: f64, b: &[f64], b_scale: f64) -> Result<f64> {
    if norm(a) <= DEGENERATE_RESIDUAL * a_scale || norm(b) <= DEGENERATE_RESIDUAL * b_scale {
        return Ok(0.0);
    }
    pearson_correlation(a, b)
}

fn check_node(data: &SampleSet, nb: &NeighborhoodSystem, j: usize) -> Result<()> {
    if nb.p() != data.p() {
        return Err(Error::contract(format!(
            "neighbourhoods cover {} nodes, data has {} columns",
            nb.p(),
            data.p()
        )));
    }
    if j >= data.p() {
        return Err(Error::contract(format!("node {j} out of range")));
    }
    Ok(())
}

fn residual_centered(
    x: &DenseMatrix,
    j: usize,
    exclude: Option<usize>,
    nb: &NeighborhoodSystem,
) -> Result<Vector> {
    let preds: Vec<usize> = nb.neighbors(j).iter().copied().filter(|&l| Some(l) != exclude).collect();
    let z = x.select_columns(&preds);
    least_squares_residuals(column(x, j), &z)
}

/// Residual of column `j` regressed on the columns of `A_j` (minus `exclude`).
///
/// Columns are centred first, so an empty predictor set returns the centred
/// column.
pub fn residual_for_node(
    data: &SampleSet,
    j: usize,
    exclude: Option<usize>,
    neighborhoods: &NeighborhoodSystem,
) -> Result<Vector> {
    check_node(data, neighborhoods, j)?;
    residual_centered(&centered(&data.data), j, exclude, neighborhoods)
}

/// Best forward candidate: the non-adjacent pair with the largest `|f_jl|`,
/// skipping nodes whose neighbourhood has reached `cap`. Ties go to the
/// lexicographically smallest `(j, l)`.
pub fn forward_scan(
    data: &SampleSet,
    neighborhoods: &NeighborhoodSystem,
    cap: usize,
) -> Result<Option<CandidateScore>> {
    check_node(data, neighborhoods, 0)?;
    let x = centered(&data.data);
    let p = data.p();
    let scales: Vec<f64> = (0..p).map(|j| norm(column(&x, j))).collect();
    let resid: Vec<Vector> = (0..p)
        .map(|j| residual_centered(&x, j, None, neighborhoods))
        .collect::<Result<_>>()?;
    let mut best: Option<CandidateScore> = None;
    for j in 0..p {
        if neighborhoods.degree(j) >= cap {
            continue;
        }
        for l in j + 1..p {
            if neighborhoods.degree(l) >= cap || neighborhoods.contains(j, l) {
                continue;
            }
            let f = residual_correlation(resid[j].as_slice(), scales[j], resid[l].as_slice(), scales[l])?;
            if best.is_none_or(|b| f.abs() > b.value.abs()) {
                best = Some(CandidateScore { j, l, value: f });
            }
        }
    }
    Ok(best)
}

/// Weakest current edge: the smallest `|b_jl|`, where `b_jl` correlates the
/// residual of `j` on `A_j \ {l}` with that of `l` on `A_l \ {j}`.
pub fn backward_scan(
    data: &SampleSet,
    neighborhoods: &NeighborhoodSystem,
) -> Result<Option<CandidateScore>> {
    check_node(data, neighborhoods, 0)?;
    let x = centered(&data.data);
    let mut worst: Option<CandidateScore> = None;
    for (j, l) in neighborhoods.edges().iter() {
        let rj = residual_centered(&x, j, Some(l), neighborhoods)?;
        let rl = residual_centered(&x, l, Some(j), neighborhoods)?;
        let b = residual_correlation(
            rj.as_slice(),
            norm(column(&x, j)),
            rl.as_slice(),
            norm(column(&x, l)),
        )?;
        if worst.is_none_or(|w| b.abs() < w.value.abs()) {
            worst = Some(CandidateScore { j, l, value: b });
        }
    }
    Ok(worst)
}

/// `-omega_il / sqrt(omega_ii * omega_ll)`.
pub fn partial_corr_oracle(omega: &DenseMatrix, i: usize, l: usize) -> f64 {
    -omega[(i, l)] / (omega[(i, i)] * omega[(l, l)]).sqrt()
}

/// Precision estimate from residual cross-products.
///
/// With `e_i` the residual of column `i` on `A_i`: the diagonal is
/// `n / e_i.e_i`, an edge gets `n e_i.e_l / (e_i.e_i e_l.e_l)`, and every
/// other entry is zero.
pub fn assemble_omega(data: &SampleSet, neighborhoods: &NeighborhoodSystem) -> Result<DenseMatrix> {
    check_node(data, neighborhoods, 0)?;
    let x = centered(&data.data);
    let p = data.p();
    let n = data.n() as f64;
    let resid: Vec<Vector> = (0..p)
        .map(|j| residual_centered(&x, j, None, neighborhoods))
        .collect::<Result<_>>()?;
    let energy: Vec<f64> = resid.iter().map(|e| e.dot(e)).collect();
    if let Some(node) = energy.iter().position(|&s| s <= 1e-12) {
        return Err(Error::DegenerateResidual { node });
    }
    let mut omega = DenseMatrix::zeros(p, p);
    for i in 0..p {
        omega[(i, i)] = n / energy[i];
        for &l in neighborhoods.neighbors(i).iter().filter(|&&l| l > i) {
            let v = n * resid[i].dot(&resid[l]) / (energy[i] * energy[l]);
            omega[(i, l)] = v;
            omega[(l, i)] = v;
        }
    }
    Ok(omega)
}

/// Per-node residual state kept by the incremental engine.
struct NodeState {
    /// Unit residual on the full neighbourhood.
    unit: Vec<f64>,
    /// Unit residual with one neighbour left out, keyed by that neighbour.
    without: BTreeMap<usize, Vec<f64>>,
}

struct Engine {
    x: DenseMatrix,
    gram: DenseMatrix,
    scale: Vec<f64>,
    nb: NeighborhoodSystem,
    adj: Vec<bool>,
    nodes: Vec<NodeState>,
    forward: Vec<f64>,
    backward: BTreeMap<(usize, usize), f64>,
}

impl Engine {
    fn new(data: &DenseMatrix) -> Result<Self> {
        let x = centered(data);
        let p = x.ncols();
        let gram = x.transpose() * &x;
        let scale: Vec<f64> = (0..p).map(|j| norm(column(&x, j))).collect();
        let mut eng = Engine {
            gram,
            scale,
            nb: NeighborhoodSystem::empty(p),
            adj: vec![false; p * p],
            nodes: Vec::with_capacity(p),
            forward: vec![0.0; p * p],
            backward: BTreeMap::new(),
            x,
        };
        for j in 0..p {
            let st = eng.node_state(j)?;
            eng.nodes.push(st);
        }
        for j in 0..p {
            eng.rescore_forward(j);
        }
        Ok(eng)
    }

    fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Residuals of node `j` on `A_j` and on each `A_j \ {l}`.
    ///
    /// With `G = X_A^T X_A`, `beta = G^-1 X_A^T x_j` and `H = G^-1`, dropping
    /// predictor `k` changes the residual by `beta_k / H_kk * X_A H e_k`.
    fn node_state(&self, j: usize) -> Result<NodeState> {
        let preds: Vec<usize> = self.nb.neighbors(j).iter().copied().collect();
        let xj = column(&self.x, j);
        let sj = self.scale[j];
        if preds.is_empty() {
            return Ok(NodeState {
                unit: unit_residual(xj, sj),
                without: BTreeMap::new(),
            });
        }
        let q = preds.len();
        let g = DenseMatrix::from_fn(q, q, |a, b| self.gram[(preds[a], preds[b])]);
        let chol = match g.clone().cholesky() {
            Some(c) if (0..q).all(|k| {
                let d = c.l_dirty()[(k, k)];
                d * d > GRAM_PIVOT_TOL * g[(k, k)]
            }) => c,
            _ => return self.node_state_fallback(j, &preds),
        };
        let c = Vector::from_fn(q, |a, _| self.gram[(preds[a], j)]);
        let beta = chol.solve(&c);
        let h = chol.inverse();
        let xa = self.x.select_columns(&preds);
        let mut e: Vec<f64> = xj.to_vec();
        for (k, &b) in beta.iter().enumerate() {
            for (ei, zi) in e.iter_mut().zip(column(&xa, k)) {
                *ei -= b * zi;
            }
        }
        let u = &xa * &h;
        let mut without = BTreeMap::new();
        for (k, &l) in preds.iter().enumerate() {
            let f = beta[k] / h[(k, k)];
            let r: Vec<f64> = e.iter().zip(column(&u, k)).map(|(ei, ui)| ei + f * ui).collect();
            without.insert(l, unit_residual(&r, sj));
        }
        Ok(NodeState {
            unit: unit_residual(&e, sj),
            without,
        })
    }

    fn node_state_fallback(&self, j: usize, preds: &[usize]) -> Result<NodeState> {
        let xj = column(&self.x, j);
        let sj = self.scale[j];
        let e = least_squares_residuals(xj, &self.x.select_columns(preds))?;
        let mut without = BTreeMap::new();
        for &l in preds {
            let rest: Vec<usize> = preds.iter().copied().filter(|&k| k != l).collect();
            let r = least_squares_residuals(xj, &self.x.select_columns(&rest))?;
            without.insert(l, unit_residual(r.as_slice(), sj));
        }
        Ok(NodeState {
            unit: unit_residual(e.as_slice(), sj),
            without,
        })
    }

    fn rescore_forward(&mut self, j: usize) {
        let p = self.p();
        for k in 0..p {
            if k == j {
                continue;
            }
            let f = dot(&self.nodes[j].unit, &self.nodes[k].unit).clamp(-1.0, 1.0);
            self.forward[j * p + k] = f;
            self.forward[k * p + j] = f;
        }
    }

    fn rescore_backward(&mut self, j: usize) {
        for &l in self.nb.neighbors(j) {
            let b = dot(&self.nodes[j].without[&l], &self.nodes[l].without[&j]).clamp(-1.0, 1.0);
            self.backward.insert((j.min(l), j.max(l)), b);
        }
    }

    fn refresh(&mut self, a: usize, b: usize) -> Result<()> {
        self.nodes[a] = self.node_state(a)?;
        self.nodes[b] = self.node_state(b)?;
        self.rescore_forward(a);
        self.rescore_forward(b);
        self.rescore_backward(a);
        self.rescore_backward(b);
        Ok(())
    }

    fn best_forward(&self, cap: usize) -> Option<CandidateScore> {
        let p = self.p();
        let mut best: Option<CandidateScore> = None;
        for j in 0..p {
            if self.nb.degree(j) >= cap {
                continue;
            }
            for l in j + 1..p {
                if self.adj[j * p + l] || self.nb.degree(l) >= cap {
                    continue;
                }
                let f = self.forward[j * p + l];
                if best.is_none_or(|b| f.abs() > b.value.abs()) {
                    best = Some(CandidateScore { j, l, value: f });
                }
            }
        }
        best
    }

    fn worst_backward(&self) -> Option<CandidateScore> {
        let mut worst: Option<CandidateScore> = None;
        for (&(j, l), &b) in &self.backward {
            if worst.is_none_or(|w| b.abs() < w.value.abs()) {
                worst = Some(CandidateScore { j, l, value: b });
            }
        }
        worst
    }

    fn add(&mut self, j: usize, l: usize) -> Result<()> {
        let p = self.p();
        self.nb.add_edge(j, l)?;
        self.adj[j * p + l] = true;
        self.adj[l * p + j] = true;
        self.refresh(j, l)
    }

    fn remove(&mut self, j: usize, l: usize) -> Result<()> {
        let p = self.p();
        self.nb.remove_edge(j, l);
        self.adj[j * p + l] = false;
        self.adj[l * p + j] = false;
        self.backward.remove(&(j.min(l), j.max(l)));
        self.refresh(j, l)
    }
}

pub(crate) fn run_stepwise(
    data: &DenseMatrix,
    thresholds: Thresholds,
    cap: Option<usize>,
    max_iter: Option<usize>,
) -> Result<StepwisePath> {
    let (n, p) = (data.nrows(), data.ncols());
    if n < 3 {
        return Err(Error::contract(format!("stepwise search needs n >= 3, got {n}")));
    }
    let cap = cap.unwrap_or_else(|| default_cap(n, p));
    let max_iter = max_iter.unwrap_or_else(|| default_max_iter(p));
    let mut eng = Engine::new(data)?;
    let mut trace = Vec::new();
    let mut iterations = 0;

    // The edge count never decreases across iterations, so only states
    // visited since it last grew can recur.
    let mut plateau: HashSet<Vec<(usize, usize)>> = HashSet::new();
    let mut plateau_len = 0;

    loop {
        let Some(add) = eng.best_forward(cap) else { break };
        if add.value.abs() < thresholds.alpha_f {
            break;
        }
        if iterations == max_iter {
            return Err(Error::IterationLimit {
                max_iter,
                recent: trace_tail(&trace),
            });
        }
        iterations += 1;
        eng.add(add.j, add.l)?;
        trace.push(TraceEntry {
            iteration: iterations,
            kind: StepKind::Forward,
            edge: (add.j, add.l),
            score: add.value,
        });

        if let Some(cut) = eng.worst_backward() {
            if cut.value.abs() <= thresholds.alpha_b {
                eng.remove(cut.j, cut.l)?;
                trace.push(TraceEntry {
                    iteration: iterations,
                    kind: StepKind::Backward,
                    edge: (cut.j, cut.l),
                    score: cut.value,
                });
            }
        }

        let m = eng.nb.edge_count();
        if m > plateau_len {
            plateau.clear();
            plateau_len = m;
        }
        if !plateau.insert(eng.nb.sorted_edges()) {
            return Err(Error::CycleDetected {
                iteration: iterations,
                recent: trace_tail(&trace),
            });
        }
    }

    Ok(StepwisePath {
        neighborhoods: eng.nb,
        iterations,
        trace,
    })
}

/// Number of trailing steps attached to a stopped search.
const TRACE_TAIL: usize = 10;

fn trace_tail(trace: &[TraceEntry]) -> Vec<TraceEntry> {
    trace[trace.len().saturating_sub(TRACE_TAIL)..].to_vec()
}

/// Runs the stepwise search and assembles the precision estimate.
///
/// `cap` limits neighbourhood sizes (default [`default_cap`]); `max_iter`
/// bounds the number of forward additions (default [`default_max_iter`]).
/// Columns are centred before the search.
pub fn run_gsa(
    data: &SampleSet,
    thresholds: Thresholds,
    cap: Option<usize>,
    max_iter: Option<usize>,
) -> Result<GsaFit> {
    let path = run_stepwise(&data.data, thresholds, cap, max_iter)?;
    let omega_hat = assemble_omega(data, &path.neighborhoods)?;
    Ok(GsaFit {
        thresholds,
        edges: path.neighborhoods.edges(),
        neighborhoods: path.neighborhoods,
        omega_hat,
        iterations: path.iterations,
        trace: path.trace,
    })
}
