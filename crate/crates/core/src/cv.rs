//! K-fold cross-validation of the forward/backward thresholds.
//!
//! For each fold the stepwise search runs on the training complement; every
//! node is then predicted on the validation rows from its estimated
//! neighbourhood (training-fitted coefficients) or, for an empty
//! neighbourhood, by its training mean. The CV score is the total squared
//! prediction error over all folds and nodes divided by `n`.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::gsa::{run_stepwise, NeighborhoodSystem, Thresholds};
use crate::linalg::{column, least_squares_coefficients, DenseMatrix, Vector};
use crate::model::{rng_from_seed, SampleSet};

/// Random balanced assignment of `n` rows to `k` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldPlan {
    k: usize,
    assignments: Vec<usize>,
    seed: u64,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fold index of each row.
    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn validation_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] == fold)
            .collect()
    }

    pub fn training_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&r| self.assignments[r] != fold)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &a in &self.assignments {
            s[a] += 1;
        }
        s
    }
}

/// Shuffles the rows with the seeded generator and deals them round-robin,
/// so fold sizes differ by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::contract(format!("need at least 2 folds, got {k}")));
    }
    if n < 2 * k {
        return Err(Error::contract(format!(
            "{n} rows cannot fill {k} folds with at least 2 rows each"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let mut assignments = vec![0; n];
    for (pos, &row) in order.iter().enumerate() {
        assignments[row] = pos % k;
    }
    Ok(FoldPlan { k, assignments, seed })
}

/// The threshold pairs searched by [`select_thresholds`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvGrid {
    pairs: Vec<Thresholds>,
}

impl CvGrid {
    pub fn new(pairs: Vec<Thresholds>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::contract("threshold grid is empty"));
        }
        Ok(CvGrid { pairs })
    }

    pub fn singleton(t: Thresholds) -> Self {
        CvGrid { pairs: vec![t] }
    }

    /// `count` equispaced values on `[lo, hi]` for each axis, crossed and
    /// filtered to `alpha_b < alpha_f`.
    pub fn axis(count: usize, lo: f64, hi: f64) -> Result<Self> {
        if count == 0 {
            return Err(Error::contract("grid axis needs at least one value"));
        }
        let values: Vec<f64> = if count == 1 {
            vec![lo]
        } else {
            (0..count)
                .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
                .collect()
        };
        let mut pairs = Vec::new();
        for &af in &values {
            for &ab in values.iter().filter(|&&ab| ab < af) {
                pairs.push(Thresholds::new(af, ab)?);
            }
        }
        CvGrid::new(pairs)
    }

    /// 20 values per axis on `[0.05, 0.95]`: 190 ordered pairs.
    pub fn default_grid() -> Self {
        CvGrid::axis(20, 0.05, 0.95).expect("default grid is valid")
    }

    pub fn pairs(&self) -> &[Thresholds] {
        &self.pairs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridScore {
    pub alpha_f: f64,
    pub alpha_b: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFailure {
    pub alpha_f: f64,
    pub alpha_b: f64,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CvResult {
    pub best: Thresholds,
    pub best_score: f64,
    /// One entry per successfully evaluated grid pair, in grid order.
    pub scores: Vec<GridScore>,
    /// Grid pairs whose search failed (cycle or iteration limit); they do
    /// not take part in the arg-min.
    pub failures: Vec<GridFailure>,
    pub fold_plan: FoldPlan,
}

/// Knobs forwarded to every stepwise search run during cross-validation.
#[derive(Debug, Clone, Copy, Default)]
pub struct SearchLimits {
    pub cap: Option<usize>,
    pub max_iter: Option<usize>,
}

fn column_means(x: &DenseMatrix) -> Vec<f64> {
    let n = x.nrows() as f64;
    (0..x.ncols()).map(|j| column(x, j).iter().sum::<f64>() / n).collect()
}

/// Predicted validation matrix.
///
/// Training columns are centred at their means; node `j` is regressed on
/// `A_j` within the training rows and predicted on the validation rows as
/// `mean_j + (v_A - mean_A) beta`, which is just `mean_j` when `A_j` is empty.
pub fn predict_validation(
    train: &SampleSet,
    valid: &SampleSet,
    neighborhoods: &NeighborhoodSystem,
) -> Result<DenseMatrix> {
    let p = train.p();
    if valid.p() != p || neighborhoods.p() != p {
        return Err(Error::contract(format!(
            "dimension mismatch: train p = {p}, validation p = {}, neighbourhoods p = {}",
            valid.p(),
            neighborhoods.p()
        )));
    }
    let means = column_means(&train.data);
    let mut xt = train.data.clone();
    for (j, mut col) in xt.column_iter_mut().enumerate() {
        col.iter_mut().for_each(|v| *v -= means[j]);
    }
    let gram = xt.transpose() * &xt;
    let nv = valid.n();
    let mut pred = DenseMatrix::zeros(nv, p);
    for j in 0..p {
        let preds: Vec<usize> = neighborhoods.neighbors(j).iter().copied().collect();
        let beta = coefficients(&xt, &gram, j, &preds)?;
        for r in 0..nv {
            let mut v = means[j];
            for (k, &a) in preds.iter().enumerate() {
                v += (valid.data[(r, a)] - means[a]) * beta[k];
            }
            pred[(r, j)] = v;
        }
    }
    Ok(pred)
}

/// Regression coefficients through the normal equations, falling back to the
/// minimum-norm solver when the cross-product block is ill-conditioned.
fn coefficients(x: &DenseMatrix, gram: &DenseMatrix, j: usize, preds: &[usize]) -> Result<Vector> {
    let q = preds.len();
    if q == 0 {
        return Ok(Vector::zeros(0));
    }
    let g = DenseMatrix::from_fn(q, q, |a, b| gram[(preds[a], preds[b])]);
    if let Some(ch) = g.clone().cholesky() {
        let ok = (0..q).all(|k| {
            let d = ch.l_dirty()[(k, k)];
            d * d > 1e-10 * g[(k, k)]
        });
        if ok {
            let c = Vector::from_fn(q, |a, _| gram[(preds[a], j)]);
            return Ok(ch.solve(&c));
        }
    }
    least_squares_coefficients(column(x, j), &x.select_columns(preds))
}

struct FoldData {
    train: SampleSet,
    valid: SampleSet,
}

fn split(data: &SampleSet, folds: &FoldPlan) -> Result<Vec<FoldData>> {
    if folds.assignments.len() != data.n() {
        return Err(Error::contract(format!(
            "fold plan covers {} rows, data has {}",
            folds.assignments.len(),
            data.n()
        )));
    }
    (0..folds.k)
        .map(|t| {
            Ok(FoldData {
                train: data.select_rows(&folds.training_rows(t))?,
                valid: data.select_rows(&folds.validation_rows(t))?,
            })
        })
        .collect()
}

fn score_split(parts: &[FoldData], n: usize, t: Thresholds, limits: SearchLimits) -> Result<f64> {
    let mut total = 0.0;
    for part in parts {
        let path = run_stepwise(&part.train.data, t, limits.cap, limits.max_iter)?;
        let pred = predict_validation(&part.train, &part.valid, &path.neighborhoods)?;
        total += (&part.valid.data - pred).norm_squared();
    }
    Ok(total / n as f64)
}

/// `CV(alpha_f, alpha_b) = (1/n) sum_t sum_j ||X_j^(t) - Xhat_j^(t)||^2`.
pub fn cv_score(
    data: &SampleSet,
    folds: &FoldPlan,
    thresholds: Thresholds,
    limits: SearchLimits,
) -> Result<f64> {
    let parts = split(data, folds)?;
    score_split(&parts, data.n(), thresholds, limits)
}

/// Evaluates every grid pair and returns the arg-min.
///
/// Exact ties go to the sparser end of the grid: larger `alpha_f`, then
/// larger `alpha_b`. Grid pairs are scored in parallel on the current rayon
/// pool; the reduction is order-independent.
pub fn select_thresholds(
    data: &SampleSet,
    k: usize,
    grid: &CvGrid,
    seed: u64,
    limits: SearchLimits,
) -> Result<CvResult> {
    let fold_plan = make_folds(data.n(), k, seed)?;
    let parts = split(data, &fold_plan)?;
    let n = data.n();
    let outcomes: Vec<(Thresholds, Result<f64>)> = grid
        .pairs()
        .par_iter()
        .map(|&t| (t, score_split(&parts, n, t, limits)))
        .collect();

    let mut scores = Vec::new();
    let mut failures = Vec::new();
    let mut first_err = None;
    let mut best: Option<(Thresholds, f64)> = None;
    for (t, outcome) in outcomes {
        match outcome {
            Ok(s) => {
                scores.push(GridScore {
                    alpha_f: t.alpha_f(),
                    alpha_b: t.alpha_b(),
                    score: s,
                });
                let better = match best {
                    None => true,
                    Some((bt, bs)) => {
                        s < bs
                            || (s == bs
                                && (t.alpha_f(), t.alpha_b()) > (bt.alpha_f(), bt.alpha_b()))
                    }
                };
                if better {
                    best = Some((t, s));
                }
            }
            Err(e) => {
                failures.push(GridFailure {
                    alpha_f: t.alpha_f(),
                    alpha_b: t.alpha_b(),
                    error: e.to_string(),
                });
                first_err.get_or_insert(e);
            }
        }
    }
    let Some((best, best_score)) = best else {
        return Err(first_err.expect("non-empty grid produced neither score nor error"));
    };
    Ok(CvResult {
        best,
        best_score,
        scores,
        failures,
        fold_plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{gen_ar1, sample_mvn, EdgeSet, PrecisionModel};
    use approx::assert_abs_diff_eq;

    fn noise(n: usize, p: usize, seed: u64) -> SampleSet {
        let m = PrecisionModel::from_omega("iid", DenseMatrix::identity(p, p), None).unwrap();
        sample_mvn(&m, n, seed).unwrap()
    }

    #[test]
    fn folds_are_balanced() {
        let f = make_folds(10, 5, 1).unwrap();
        assert_eq!(f.sizes(), vec![2; 5]);
        let mut s = make_folds(11, 5, 1).unwrap().sizes();
        s.sort();
        assert_eq!(s, vec![2, 2, 2, 2, 3]);
        assert_eq!(make_folds(37, 4, 9).unwrap(), make_folds(37, 4, 9).unwrap());
        assert!(make_folds(9, 5, 0).is_err());
        assert!(make_folds(9, 1, 0).is_err());
    }

    #[test]
    fn default_grid_shape() {
        let g = CvGrid::default_grid();
        assert_eq!(g.pairs().len(), 190);
        assert!(g.pairs().iter().all(|t| t.alpha_b() < t.alpha_f()));
        assert_abs_diff_eq!(g.pairs()[0].alpha_f(), 0.05 + 0.9 / 19.0, epsilon = 1e-15);
        assert!(CvGrid::new(vec![]).is_err());
    }

    #[test]
    fn empty_neighborhoods_predict_training_mean() {
        let d = noise(12, 3, 1);
        let train = d.select_rows(&(0..8).collect::<Vec<_>>()).unwrap();
        let valid = d.select_rows(&(8..12).collect::<Vec<_>>()).unwrap();
        let pred = predict_validation(&train, &valid, &NeighborhoodSystem::empty(3)).unwrap();
        for j in 0..3 {
            let m = train.data.column(j).sum() / 8.0;
            for r in 0..4 {
                assert_abs_diff_eq!(pred[(r, j)], m, epsilon = 1e-14);
            }
        }
        let one = SampleSet::from_matrix(train.data.columns(0, 1).into_owned()).unwrap();
        let one_v = SampleSet::from_matrix(valid.data.columns(0, 1).into_owned()).unwrap();
        let pred = predict_validation(&one, &one_v, &NeighborhoodSystem::empty(1)).unwrap();
        assert_abs_diff_eq!(pred[(0, 0)], one.data.column(0).sum() / 8.0, epsilon = 1e-14);
    }

    #[test]
    fn exact_dependence_is_predicted_exactly() {
        let base = noise(20, 3, 2);
        let mut x = base.data.clone();
        for r in 0..20 {
            x[(r, 0)] = 3.0 * x[(r, 2)] + 1.0;
        }
        let d = SampleSet::from_matrix(x).unwrap();
        let train = d.select_rows(&(0..14).collect::<Vec<_>>()).unwrap();
        let valid = d.select_rows(&(14..20).collect::<Vec<_>>()).unwrap();
        let nb = NeighborhoodSystem::from_edges(&EdgeSet::from_pairs(3, [(0, 2)]).unwrap());
        let pred = predict_validation(&train, &valid, &nb).unwrap();
        for r in 0..6 {
            assert_abs_diff_eq!(pred[(r, 0)], valid.data[(r, 0)], epsilon = 1e-10);
        }
    }

    /// Direct evaluation of the mean-only prediction error.
    fn mean_prediction_oracle(d: &SampleSet, f: &FoldPlan) -> f64 {
        let mut total = 0.0;
        for t in 0..f.k() {
            let tr = f.training_rows(t);
            let va = f.validation_rows(t);
            for j in 0..d.p() {
                let m = tr.iter().map(|&r| d.data[(r, j)]).sum::<f64>() / tr.len() as f64;
                total += va.iter().map(|&r| (d.data[(r, j)] - m).powi(2)).sum::<f64>();
            }
        }
        total / d.n() as f64
    }

    #[test]
    fn unit_threshold_score_is_mean_prediction_error() {
        let d = noise(40, 5, 3);
        let f = make_folds(40, 5, 4).unwrap();
        let s = cv_score(&d, &f, Thresholds::new(1.0, 0.0).unwrap(), SearchLimits::default()).unwrap();
        assert_abs_diff_eq!(s, mean_prediction_oracle(&d, &f), epsilon = 1e-10);
    }

    #[test]
    fn duplicated_column_lowers_score() {
        let base = noise(60, 4, 5);
        let mut x = base.data.clone();
        for r in 0..60 {
            x[(r, 1)] = x[(r, 0)];
        }
        let d = SampleSet::from_matrix(x).unwrap();
        let f = make_folds(60, 5, 6).unwrap();
        let lim = SearchLimits::default();
        let strict = cv_score(&d, &f, Thresholds::new(1.0, 0.0).unwrap(), lim).unwrap();
        let loose = cv_score(&d, &f, Thresholds::new(0.5, 0.1).unwrap(), lim).unwrap();
        assert!(loose < strict, "{loose} vs {strict}");
    }

    #[test]
    fn score_is_invariant_to_column_order() {
        let m = gen_ar1(6, 0.5).unwrap();
        let d = sample_mvn(&m, 60, 7).unwrap();
        let perm = [3, 0, 5, 1, 4, 2];
        let dp = SampleSet::from_matrix(d.data.select_columns(&perm)).unwrap();
        let f = make_folds(60, 5, 8).unwrap();
        let t = Thresholds::new(0.3, 0.1).unwrap();
        let a = cv_score(&d, &f, t, SearchLimits::default()).unwrap();
        let b = cv_score(&dp, &f, t, SearchLimits::default()).unwrap();
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    #[test]
    fn singleton_grid_returns_its_pair() {
        let d = noise(30, 4, 9);
        let t = Thresholds::new(0.4, 0.2).unwrap();
        let r = select_thresholds(&d, 5, &CvGrid::singleton(t), 1, SearchLimits::default()).unwrap();
        assert_eq!(r.best, t);
        assert_eq!(r.scores.len(), 1);
    }

    #[test]
    fn selection_is_deterministic_and_consistent() {
        let m = gen_ar1(8, 0.4).unwrap();
        let d = sample_mvn(&m, 80, 10).unwrap();
        let grid = CvGrid::axis(6, 0.05, 0.9).unwrap();
        let a = select_thresholds(&d, 5, &grid, 3, SearchLimits::default()).unwrap();
        let b = select_thresholds(&d, 5, &grid, 3, SearchLimits::default()).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.scores, b.scores);
        let min = a.scores.iter().map(|s| s.score).fold(f64::INFINITY, f64::min);
        assert_eq!(a.best_score, min);
        assert!(a.scores.iter().all(|s| s.score.is_finite() && s.score >= 0.0));
    }

    #[test]
    fn ties_prefer_sparser_pairs() {
        // Pure noise with only high thresholds: every pair yields the empty
        // graph and the same score.
        let d = noise(30, 3, 11);
        let grid = CvGrid::new(vec![
            Thresholds::new(0.97, 0.1).unwrap(),
            Thresholds::new(0.99, 0.2).unwrap(),
            Thresholds::new(0.99, 0.1).unwrap(),
        ])
        .unwrap();
        let r = select_thresholds(&d, 3, &grid, 0, SearchLimits::default()).unwrap();
        assert_eq!(r.best, Thresholds::new(0.99, 0.2).unwrap());
    }

    #[test]
    fn dependence_beats_mean_prediction() {
        let m = gen_ar1(10, 0.4).unwrap();
        let grid = CvGrid::new(vec![
            Thresholds::new(0.9, 0.1).unwrap(),
            Thresholds::new(0.2, 0.1).unwrap(),
        ])
        .unwrap();
        let wins = (0..10)
            .filter(|&s| {
                let d = sample_mvn(&m, 200, 500 + s).unwrap();
                let r = select_thresholds(&d, 5, &grid, s, SearchLimits::default()).unwrap();
                r.best == Thresholds::new(0.2, 0.1).unwrap()
            })
            .count();
        assert!(wins >= 8, "wins = {wins}");
    }
}
