//! Ground-truth Gaussian graphical models and multivariate-normal sampling.
//!
//! Node indices are zero-based throughout the crate and in every file format.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{cholesky, invert_pd, symmetric_eigenvalues, DenseMatrix};

/// Entries of a precision matrix at or below this magnitude count as zero.
pub const SUPPORT_TOL: f64 = 1e-10;

/// Minimum eigenvalue enforced on nearest-neighbour precision matrices
/// before rescaling to unit diagonal.
pub const NN_MIN_EIGENVALUE: f64 = 0.1;

/// Undirected simple graph on `p` nodes, stored as ordered pairs `(i, l)`
/// with `i < l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeSet {
    p: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl EdgeSet {
    pub fn empty(p: usize) -> Self {
        EdgeSet {
            p,
            edges: BTreeSet::new(),
        }
    }

    pub fn from_pairs(p: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut e = EdgeSet::empty(p);
        for (i, l) in pairs {
            e.insert(i, l)?;
        }
        Ok(e)
    }

    /// Every unordered pair of distinct nodes.
    pub fn complete(p: usize) -> Self {
        let edges = (0..p)
            .flat_map(|i| (i + 1..p).map(move |l| (i, l)))
            .collect();
        EdgeSet { p, edges }
    }

    fn key(i: usize, l: usize) -> (usize, usize) {
        if i < l {
            (i, l)
        } else {
            (l, i)
        }
    }

    /// Returns whether the pair was newly inserted.
    pub fn insert(&mut self, i: usize, l: usize) -> Result<bool> {
        if i == l {
            return Err(Error::contract(format!("self-loop on node {i}")));
        }
        if i >= self.p || l >= self.p {
            return Err(Error::contract(format!(
                "edge ({i}, {l}) out of range for p = {}",
                self.p
            )));
        }
        Ok(self.edges.insert(Self::key(i, l)))
    }

    pub fn remove(&mut self, i: usize, l: usize) -> bool {
        self.edges.remove(&Self::key(i, l))
    }

    pub fn contains(&self, i: usize, l: usize) -> bool {
        i != l && self.edges.contains(&Self::key(i, l))
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    /// Pairs in lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.edges
            .iter()
            .filter(|&&(i, l)| i == node || l == node)
            .count()
    }

    /// Pairs absent from `self`.
    pub fn complement(&self) -> EdgeSet {
        let mut c = EdgeSet::complete(self.p);
        c.edges.retain(|e| !self.edges.contains(e));
        c
    }
}

/// Ground truth `(Sigma, Omega, E)` for a synthetic Gaussian graphical model.
#[derive(Debug, Clone)]
pub struct PrecisionModel {
    pub label: String,
    pub sigma: DenseMatrix,
    pub omega: DenseMatrix,
    pub edges: EdgeSet,
    /// Seed used to build the structure, for randomised generators.
    pub seed: Option<u64>,
}

impl PrecisionModel {
    /// Builds a model from its precision matrix; `Sigma` is the inverse and
    /// the edge set is the off-diagonal support.
    pub fn from_omega(label: impl Into<String>, omega: DenseMatrix, seed: Option<u64>) -> Result<Self> {
        let sigma = invert_pd(&omega)?;
        let edges = support_of(&omega, SUPPORT_TOL)?;
        Ok(PrecisionModel {
            label: label.into(),
            sigma,
            omega,
            edges,
            seed,
        })
    }

    pub fn p(&self) -> usize {
        self.omega.nrows()
    }
}

/// An `n x p` sample, one observation per row.
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub data: DenseMatrix,
    pub seed: Option<u64>,
    pub model_label: String,
}

impl SampleSet {
    pub fn new(data: DenseMatrix, seed: Option<u64>, model_label: impl Into<String>) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::contract("sample must have at least one row and column"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("sample contains non-finite entries"));
        }
        Ok(SampleSet {
            data,
            seed,
            model_label: model_label.into(),
        })
    }

    pub fn from_matrix(data: DenseMatrix) -> Result<Self> {
        SampleSet::new(data, None, "")
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    /// Rows selected by `rows`, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<SampleSet> {
        let data = DenseMatrix::from_fn(rows.len(), self.p(), |r, c| self.data[(rows[r], c)]);
        SampleSet::new(data, self.seed, self.model_label.clone())
    }
}

/// Off-diagonal pairs with `|omega_il| > tol`.
pub fn support_of(omega: &DenseMatrix, tol: f64) -> Result<EdgeSet> {
    if omega.nrows() != omega.ncols() {
        return Err(Error::contract("support_of: matrix must be square"));
    }
    let p = omega.nrows();
    let mut e = EdgeSet::empty(p);
    for i in 0..p {
        for l in i + 1..p {
            if omega[(i, l)].abs() > tol || omega[(l, i)].abs() > tol {
                e.insert(i, l)?;
            }
        }
    }
    Ok(e)
}

/// Seed increment between replicates or repetitions.
pub const SEED_STRIDE: u64 = 2654435761;

/// Seed of stream `index`: `seed + index * SEED_STRIDE (mod 2^64)`.
pub fn derived_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add((index as u64).wrapping_mul(SEED_STRIDE))
}

pub fn rng_from_seed(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// Autoregressive model: `Sigma_ij = rho^|i-j|`, tridiagonal precision.
///
/// Precision entries that invert to below [`SUPPORT_TOL`] in magnitude are
/// stored as exact zeros.
pub fn gen_ar1(p: usize, rho: f64) -> Result<PrecisionModel> {
    if p < 2 {
        return Err(Error::contract("ar1 needs p >= 2"));
    }
    if !(rho > -1.0 && rho < 1.0) {
        return Err(Error::contract(format!("ar1 needs |rho| < 1, got {rho}")));
    }
    let sigma = DenseMatrix::from_fn(p, p, |i, j| rho.powi(i.abs_diff(j) as i32));
    let mut omega = invert_pd(&sigma)?;
    omega.iter_mut().for_each(|v| {
        if v.abs() <= SUPPORT_TOL {
            *v = 0.0
        }
    });
    let edges = support_of(&omega, SUPPORT_TOL)?;
    Ok(PrecisionModel {
        label: "ar1".into(),
        sigma,
        omega,
        edges,
        seed: None,
    })
}

/// Geometric nearest-neighbour model.
///
/// `p` points are drawn uniformly in the unit square; each node is joined to
/// its two nearest neighbours (ties by index) and the graph symmetrised. Each
/// edge gets a weight uniform on `[-1, -0.5] U [0.5, 1]`, the diagonal is set
/// to one and inflated until the smallest eigenvalue reaches
/// [`NN_MIN_EIGENVALUE`], and the matrix is finally rescaled to unit diagonal.
pub fn gen_nn2(p: usize, seed: u64) -> Result<PrecisionModel> {
    if p < 4 {
        return Err(Error::contract("nn2 needs p >= 4"));
    }
    let mut rng = rng_from_seed(seed);
    let pts: Vec<(f64, f64)> = (0..p)
        .map(|_| (rng.random::<f64>(), rng.random::<f64>()))
        .collect();

    let mut graph = EdgeSet::empty(p);
    for i in 0..p {
        let mut others: Vec<(f64, usize)> = (0..p)
            .filter(|&k| k != i)
            .map(|k| {
                let (dx, dy) = (pts[i].0 - pts[k].0, pts[i].1 - pts[k].1);
                (dx * dx + dy * dy, k)
            })
            .collect();
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, k) in others.iter().take(2) {
            graph.insert(i, k)?;
        }
    }

    let mut omega = DenseMatrix::identity(p, p);
    for (i, l) in graph.iter() {
        let magnitude = rng.random_range(0.5..=1.0);
        let w = if rng.random::<bool>() { magnitude } else { -magnitude };
        omega[(i, l)] = w;
        omega[(l, i)] = w;
    }
    let lambda_min = symmetric_eigenvalues(&omega)[0];
    let delta = (NN_MIN_EIGENVALUE - lambda_min).max(0.0);
    for i in 0..p {
        omega[(i, i)] += delta;
    }
    let scale: Vec<f64> = (0..p).map(|i| omega[(i, i)].sqrt()).collect();
    let omega = DenseMatrix::from_fn(p, p, |i, l| {
        if i == l {
            1.0
        } else {
            omega[(i, l)] / (scale[i] * scale[l])
        }
    });
    let mut m = PrecisionModel::from_omega("nn2", omega, Some(seed))?;
    debug_assert_eq!(m.edges, graph);
    m.edges = graph;
    Ok(m)
}

const EXAMPLE16_JSON: &str = include_str!("../data/example16.json");

/// Bundled 16-node, 16-edge model: a 6-cycle, a 3-leaf star, a 6-node path
/// and the bridges joining them, every partial correlation in `[0.25, 0.35]`.
pub fn example16() -> PrecisionModel {
    let file: crate::io::ModelFile =
        serde_json::from_str(EXAMPLE16_JSON).expect("bundled model is valid JSON");
    file.to_model().expect("bundled model is positive definite")
}

/// Block-diagonal precision: `p / block_size` blocks with unit diagonal and
/// `0.5` off the diagonal.
pub fn gen_bg(p: usize, block_size: usize) -> Result<PrecisionModel> {
    if block_size == 0 || p == 0 || p % block_size != 0 {
        return Err(Error::contract(format!(
            "bg: p = {p} is not divisible by block size {block_size}"
        )));
    }
    let omega = DenseMatrix::from_fn(p, p, |i, l| {
        if i == l {
            1.0
        } else if i / block_size == l / block_size {
            0.5
        } else {
            0.0
        }
    });
    PrecisionModel::from_omega("bg", omega, None)
}

/// `n` i.i.d. draws from `N(0, Sigma)`: each row is `L z` with `L` the
/// Cholesky factor of `Sigma` and `z` standard normal, drawn row by row from
/// the seeded generator.
pub fn sample_mvn(model: &PrecisionModel, n: usize, seed: u64) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::contract("sample size must be at least 1"));
    }
    let l = cholesky(&model.sigma)?;
    let l = l.lower();
    let p = model.p();
    let mut rng = rng_from_seed(seed);
    let mut data = DenseMatrix::zeros(n, p);
    let mut z = vec![0.0; p];
    for r in 0..n {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        for i in 0..p {
            let mut s = 0.0;
            for k in 0..=i {
                s += l[(i, k)] * z[k];
            }
            data[(r, i)] = s;
        }
    }
    SampleSet::new(data, Some(seed), model.label.clone())
}
