//! Two-class linear discriminant analysis driven by a stepwise precision
//! estimate: t-test screening, training-set standardisation, threshold
//! selection on class-centred data and the plug-in discriminant rule.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::cv::{select_thresholds, CvGrid, SearchLimits};
use crate::error::{Error, Result};
use crate::gsa::run_gsa;
use crate::linalg::{DenseMatrix, Vector};
use crate::metrics::{mcc, mean_sd, sensitivity, specificity, ConfusionCounts, MeanSd};
use crate::model::{derived_seed, gen_bg, rng_from_seed, sample_mvn, SampleSet};

/// Label of the positive class.
pub const POSITIVE: u8 = 1;
pub const NEGATIVE: u8 = 2;

/// Rows of observations tagged with group 1 or 2.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    data: DenseMatrix,
    labels: Vec<u8>,
    feature_names: Option<Vec<String>>,
}

impl LabeledDataset {
    pub fn new(data: DenseMatrix, labels: Vec<u8>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if labels.len() != data.nrows() {
            return Err(Error::contract(format!(
                "{} labels for {} rows",
                labels.len(),
                data.nrows()
            )));
        }
        if let Some(bad) = labels.iter().find(|&&r| r != POSITIVE && r != NEGATIVE) {
            return Err(Error::contract(format!("label {bad} is not 1 or 2")));
        }
        for r in [POSITIVE, NEGATIVE] {
            if !labels.contains(&r) {
                return Err(Error::contract(format!("group {r} is empty")));
            }
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("dataset contains non-finite entries"));
        }
        if let Some(names) = &feature_names {
            if names.len() != data.ncols() {
                return Err(Error::contract("feature name count does not match columns"));
            }
        }
        Ok(LabeledDataset {
            data,
            labels,
            feature_names,
        })
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn p(&self) -> usize {
        self.data.ncols()
    }

    pub fn rows_of(&self, group: u8) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.labels[i] == group).collect()
    }

    pub fn group_size(&self, group: u8) -> usize {
        self.labels.iter().filter(|&&r| r == group).count()
    }

    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let data = DenseMatrix::from_fn(rows.len(), self.p(), |r, c| self.data[(rows[r], c)]);
        let labels = rows.iter().map(|&i| self.labels[i]).collect();
        LabeledDataset::new(data, labels, self.feature_names.clone())
    }

    pub fn select_features(&self, cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = cols.iter().find(|&&c| c >= self.p()) {
            return Err(Error::contract(format!("feature {bad} out of range")));
        }
        let data = self.data.select_columns(cols);
        let names = self
            .feature_names
            .as_ref()
            .map(|n| cols.iter().map(|&c| n[c].clone()).collect());
        LabeledDataset::new(data, self.labels.clone(), names)
    }

    /// Column means of one group.
    pub fn group_mean(&self, group: u8) -> Vector {
        let rows = self.rows_of(group);
        let k = rows.len() as f64;
        Vector::from_fn(self.p(), |c, _| rows.iter().map(|&i| self.data[(i, c)]).sum::<f64>() / k)
    }

    /// Data with each row's group mean removed.
    pub fn class_centered(&self) -> DenseMatrix {
        let m1 = self.group_mean(POSITIVE);
        let m2 = self.group_mean(NEGATIVE);
        DenseMatrix::from_fn(self.n(), self.p(), |i, c| {
            let m = if self.labels[i] == POSITIVE { &m1 } else { &m2 };
            self.data[(i, c)] - m[c]
        })
    }
}

/// Mean and `n - 1` variance.
fn mean_var(values: &[f64]) -> (f64, f64) {
    let k = values.len() as f64;
    let m = values.iter().sum::<f64>() / k;
    let v = values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (k - 1.0);
    (m, v)
}

/// Welch two-sample t statistics, group 1 minus group 2. A feature with no
/// within-group variance in either group gets 0.
pub fn t_statistics(train: &LabeledDataset) -> Result<Vec<f64>> {
    let g1 = train.rows_of(POSITIVE);
    let g2 = train.rows_of(NEGATIVE);
    if g1.len() < 2 || g2.len() < 2 {
        return Err(Error::contract("t screening needs at least two samples per group"));
    }
    Ok((0..train.p())
        .map(|c| {
            let col = |rows: &[usize]| mean_var(&rows.iter().map(|&i| train.data[(i, c)]).collect::<Vec<_>>());
            let (m1, v1) = col(&g1);
            let (m2, v2) = col(&g2);
            let se2 = v1 / g1.len() as f64 + v2 / g2.len() as f64;
            if se2 > 0.0 {
                (m1 - m2) / se2.sqrt()
            } else {
                0.0
            }
        })
        .collect())
}

/// Indices of the `m` features with the largest `|t|` (ties to the smaller
/// index), in rank order. `m` larger than `p` selects every feature.
pub fn t_screen(train: &LabeledDataset, m: usize) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::contract("screening size must be at least 1"));
    }
    let t = t_statistics(train)?;
    let mut idx: Vec<usize> = (0..t.len()).collect();
    idx.sort_by(|&a, &b| t[b].abs().total_cmp(&t[a].abs()).then(a.cmp(&b)));
    idx.truncate(m.min(t.len()));
    Ok(idx)
}

/// Per-feature location and scale estimated on a training set.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    mean: Vec<f64>,
    sd: Vec<f64>,
    kept: Vec<usize>,
}

impl Standardizer {
    /// Training means and `n - 1` standard deviations. Constant features are
    /// dropped with a warning.
    pub fn fit(train: &LabeledDataset) -> Result<Self> {
        if train.n() < 2 {
            return Err(Error::contract("standardisation needs at least two rows"));
        }
        let mut mean = Vec::with_capacity(train.p());
        let mut sd = Vec::with_capacity(train.p());
        let mut kept = Vec::new();
        for c in 0..train.p() {
            let (m, v) = mean_var(crate::linalg::column(&train.data, c));
            let s = v.sqrt();
            if s > 1e-12 * m.abs().max(1.0) {
                kept.push(c);
            } else {
                let name = train.feature_names().map_or_else(|| c.to_string(), |n| n[c].clone());
                log::warn!("feature {name} has zero training sd and is dropped");
            }
            mean.push(m);
            sd.push(s);
        }
        if kept.is_empty() {
            return Err(Error::contract("every feature has zero training sd"));
        }
        Ok(Standardizer { mean, sd, kept })
    }

    /// Original indices of the retained features.
    pub fn kept(&self) -> &[usize] {
        &self.kept
    }

    pub fn apply(&self, ds: &LabeledDataset) -> Result<LabeledDataset> {
        if ds.p() != self.mean.len() {
            return Err(Error::contract(format!(
                "standardiser fitted on {} features, got {}",
                self.mean.len(),
                ds.p()
            )));
        }
        let data = DenseMatrix::from_fn(ds.n(), self.kept.len(), |i, k| {
            let c = self.kept[k];
            (ds.data[(i, c)] - self.mean[c]) / self.sd[c]
        });
        let names = ds
            .feature_names
            .as_ref()
            .map(|n| self.kept.iter().map(|&c| n[c].clone()).collect());
        LabeledDataset::new(data, ds.labels.clone(), names)
    }
}

/// Standardises both sets with the training statistics.
pub fn standardize(train: &LabeledDataset, test: &LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    let s = Standardizer::fit(train)?;
    Ok((s.apply(train)?, s.apply(test)?))
}

/// Plug-in discriminant with a shared precision matrix.
#[derive(Debug, Clone)]
pub struct LdaModel {
    pub mu: [Vector; 2],
    pub omega_hat: DenseMatrix,
    pub log_priors: [f64; 2],
    weights: [Vector; 2],
    offsets: [f64; 2],
}

pub fn lda_fit(train: &LabeledDataset, omega_hat: &DenseMatrix) -> Result<LdaModel> {
    let p = train.p();
    if omega_hat.shape() != (p, p) {
        return Err(Error::contract(format!(
            "precision estimate is {:?}, expected {p}x{p}",
            omega_hat.shape()
        )));
    }
    let n = train.n() as f64;
    let mu = [train.group_mean(POSITIVE), train.group_mean(NEGATIVE)];
    let log_priors = [
        (train.group_size(POSITIVE) as f64 / n).ln(),
        (train.group_size(NEGATIVE) as f64 / n).ln(),
    ];
    let weights = [omega_hat * &mu[0], omega_hat * &mu[1]];
    let offsets = [
        -0.5 * mu[0].dot(&weights[0]) + log_priors[0],
        -0.5 * mu[1].dot(&weights[1]) + log_priors[1],
    ];
    Ok(LdaModel {
        mu,
        omega_hat: omega_hat.clone(),
        log_priors,
        weights,
        offsets,
    })
}

/// `(delta_1, delta_2)` with `delta_r = x' W mu_r - mu_r' W mu_r / 2 + log pi_r`.
pub fn lda_score(model: &LdaModel, x: &[f64]) -> Result<(f64, f64)> {
    if x.len() != model.mu[0].len() {
        return Err(Error::contract(format!(
            "observation has {} features, model has {}",
            x.len(),
            model.mu[0].len()
        )));
    }
    let lin = |w: &Vector| w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    Ok((
        lin(&model.weights[0]) + model.offsets[0],
        lin(&model.weights[1]) + model.offsets[1],
    ))
}

/// Predicted group per row; ties go to group 2.
pub fn lda_predict(model: &LdaModel, x: &DenseMatrix) -> Result<Vec<u8>> {
    (0..x.nrows())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            let (d1, d2) = lda_score(model, &row)?;
            Ok(if d1 > d2 { POSITIVE } else { NEGATIVE })
        })
        .collect()
}

/// Confusion counts with group 1 as the positive class.
pub fn classification_counts(truth: &[u8], predicted: &[u8]) -> Result<ConfusionCounts> {
    if truth.len() != predicted.len() {
        return Err(Error::contract("prediction and label lengths differ"));
    }
    let mut c = ConfusionCounts::default();
    for (&t, &p) in truth.iter().zip(predicted) {
        match (t == POSITIVE, p == POSITIVE) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Settings for repeated random train/test splits.
#[derive(Debug, Clone)]
pub struct LdaConfig {
    pub screen: usize,
    pub test_positive: usize,
    pub test_negative: usize,
    pub repetitions: usize,
    pub folds: usize,
    pub grid: CvGrid,
    pub seed: u64,
    pub limits: SearchLimits,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            screen: 50,
            test_positive: 5,
            test_negative: 16,
            repetitions: 100,
            folds: 5,
            grid: CvGrid::default_grid(),
            seed: 0,
            limits: SearchLimits::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub seed: u64,
    pub alpha_f: f64,
    pub alpha_b: f64,
    pub edges: usize,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub mcc: f64,
    pub mcc_degenerate: bool,
}

/// Random test split: `test_positive` rows of group 1 and `test_negative`
/// rows of group 2. Returns `(train_rows, test_rows)`, each sorted.
pub fn split_rows(ds: &LabeledDataset, cfg: &LdaConfig, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng_from_seed(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (group, k) in [(POSITIVE, cfg.test_positive), (NEGATIVE, cfg.test_negative)] {
        let mut rows = ds.rows_of(group);
        if rows.len() < k + 2 {
            return Err(Error::contract(format!(
                "group {group} has {} rows; {k} test rows leave fewer than two for training",
                rows.len()
            )));
        }
        rows.shuffle(&mut rng);
        test.extend_from_slice(&rows[..k]);
        train.extend_from_slice(&rows[k..]);
    }
    if test.is_empty() {
        return Err(Error::contract("test split is empty"));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// One split: screen, standardise, select thresholds on class-centred
/// training data, estimate the precision matrix and classify the test rows.
pub fn run_repetition(ds: &LabeledDataset, cfg: &LdaConfig, repetition: usize) -> Result<RepetitionResult> {
    let seed = derived_seed(cfg.seed, repetition);
    let (train_rows, test_rows) = split_rows(ds, cfg, seed)?;
    let train = ds.select_rows(&train_rows)?;
    let test = ds.select_rows(&test_rows)?;

    let screened = t_screen(&train, cfg.screen)?;
    let (train, test) = standardize(&train.select_features(&screened)?, &test.select_features(&screened)?)?;

    let centered = SampleSet::from_matrix(train.class_centered())?;
    let cv = select_thresholds(&centered, cfg.folds, &cfg.grid, seed, cfg.limits)?;
    let fit = run_gsa(&centered, cv.best, cfg.limits.cap, cfg.limits.max_iter)?;

    let model = lda_fit(&train, &fit.omega_hat)?;
    let predicted = lda_predict(&model, test.data())?;
    let c = classification_counts(test.labels(), &predicted)?;
    Ok(RepetitionResult {
        repetition,
        seed,
        alpha_f: cv.best.alpha_f(),
        alpha_b: cv.best.alpha_b(),
        edges: fit.edges.len(),
        tp: c.tp,
        tn: c.tn,
        fp: c.fp,
        fn_: c.fn_,
        sensitivity: sensitivity(&c),
        specificity: specificity(&c),
        mcc: mcc(&c),
        mcc_degenerate: c.mcc_degenerate(),
    })
}

#[derive(Debug)]
pub struct LdaStudy {
    pub results: Vec<RepetitionResult>,
    pub failures: Vec<(usize, Error)>,
}

/// Runs every repetition on the current rayon pool. Failed repetitions are
/// collected rather than aborting the study.
pub fn run_lda_study(ds: &LabeledDataset, cfg: &LdaConfig) -> Result<LdaStudy> {
    if cfg.repetitions == 0 {
        return Err(Error::contract("at least one repetition is required"));
    }
    let outcomes: Vec<(usize, Result<RepetitionResult>)> = (0..cfg.repetitions)
        .into_par_iter()
        .map(|r| (r, run_repetition(ds, cfg, r)))
        .collect();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (r, o) in outcomes {
        match o {
            Ok(res) => results.push(res),
            Err(e) => failures.push((r, e)),
        }
    }
    Ok(LdaStudy { results, failures })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdaSummary {
    pub repetitions: usize,
    pub failed: usize,
    pub sd_degenerate: bool,
    pub rows: BTreeMap<String, MeanSd>,
}

pub fn summarize_lda(study: &LdaStudy) -> Result<LdaSummary> {
    let r = &study.results;
    if r.is_empty() {
        return Err(Error::contract("no successful repetitions to summarise"));
    }
    let col = |f: fn(&RepetitionResult) -> f64| mean_sd(&r.iter().map(f).collect::<Vec<_>>());
    let mut rows = BTreeMap::new();
    rows.insert("Sensitivity".to_string(), col(|x| x.sensitivity));
    rows.insert("Specificity".to_string(), col(|x| x.specificity));
    rows.insert("MCC".to_string(), col(|x| x.mcc));
    rows.insert("Number of Edges".to_string(), col(|x| x.edges as f64));
    Ok(LdaSummary {
        repetitions: r.len(),
        failed: study.failures.len(),
        sd_degenerate: r.len() < 2,
        rows,
    })
}

/// Parameters of the synthetic two-class problem.
#[derive(Debug, Clone, Copy)]
pub struct FixtureSpec {
    pub p: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    pub block_size: usize,
    pub shifted: usize,
    pub shift: f64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            p: 100,
            n_positive: 34,
            n_negative: 99,
            block_size: 5,
            shifted: 5,
            shift: 1.0,
        }
    }
}

/// Two Gaussian groups sharing a block-model covariance; group 1 has its
/// mean raised by `shift` on the first `shifted` features.
pub fn two_class_fixture(spec: &FixtureSpec, seed: u64) -> Result<LabeledDataset> {
    if spec.shifted > spec.p {
        return Err(Error::contract("more shifted features than features"));
    }
    let model = gen_bg(spec.p, spec.block_size)?;
    let a = sample_mvn(&model, spec.n_positive, derived_seed(seed, 0))?;
    let b = sample_mvn(&model, spec.n_negative, derived_seed(seed, 1))?;
    let n = spec.n_positive + spec.n_negative;
    let data = DenseMatrix::from_fn(n, spec.p, |i, c| {
        if i < spec.n_positive {
            a.data[(i, c)] + if c < spec.shifted { spec.shift } else { 0.0 }
        } else {
            b.data[(i - spec.n_positive, c)]
        }
    });
    let mut labels = vec![POSITIVE; spec.n_positive];
    labels.extend(std::iter::repeat_n(NEGATIVE, spec.n_negative));
    let names = (0..spec.p).map(|c| format!("g{}", c + 1)).collect();
    LabeledDataset::new(data, labels, Some(names))
}
