//! Support-recovery and estimation metrics, plus replicate aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky, invert_pd, symmetrize, DenseMatrix};
use crate::model::EdgeSet;

/// Eigenvalue floor applied to an indefinite estimate before evaluating the
/// Kullback-Leibler loss.
pub const KL_EIGEN_FLOOR: f64 = 1e-6;

/// Confusion counts over the `p (p - 1) / 2` unordered off-diagonal pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// True when one of the four MCC denominator factors is zero.
    pub fn mcc_degenerate(&self) -> bool {
        self.tp + self.fp == 0
            || self.tp + self.fn_ == 0
            || self.tn + self.fp == 0
            || self.tn + self.fn_ == 0
    }
}

pub fn confusion(true_edges: &EdgeSet, est_edges: &EdgeSet) -> Result<ConfusionCounts> {
    if true_edges.p() != est_edges.p() {
        return Err(Error::contract(format!(
            "edge sets disagree on p ({} vs {})",
            true_edges.p(),
            est_edges.p()
        )));
    }
    let p = true_edges.p() as u64;
    let tp = est_edges.iter().filter(|&(i, l)| true_edges.contains(i, l)).count() as u64;
    let fp = est_edges.len() as u64 - tp;
    let fn_ = true_edges.len() as u64 - tp;
    let tn = p * p.saturating_sub(1) / 2 - tp - fp - fn_;
    Ok(ConfusionCounts { tp, tn, fp, fn_ })
}

/// Matthews correlation coefficient; 0 when any denominator factor is 0.
pub fn mcc(c: &ConfusionCounts) -> f64 {
    if c.mcc_degenerate() {
        return 0.0;
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = ((tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_)).sqrt();
    ((tp * tn - fp * fn_) / den).clamp(-1.0, 1.0)
}

/// `TP / (TP + FN)`, or 1 when there are no positives.
pub fn sensitivity(c: &ConfusionCounts) -> f64 {
    if c.tp + c.fn_ == 0 {
        1.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    }
}

/// `TN / (TN + FP)`, or 1 when there are no negatives.
pub fn specificity(c: &ConfusionCounts) -> f64 {
    if c.tn + c.fp == 0 {
        1.0
    } else {
        c.tn as f64 / (c.tn + c.fp) as f64
    }
}

/// `||a - b||_F`.
pub fn frobenius_distance(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "frobenius: shapes differ ({:?} vs {:?})",
            a.shape(),
            b.shape()
        )));
    }
    Ok((a - b).norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KlDivergence {
    pub d_kl: f64,
    /// `d_kl / (1 + d_kl)`.
    pub normalized: f64,
    /// The estimate was not positive definite and had its spectrum floored.
    pub floored: bool,
}

pub fn normalized_kl(d_kl: f64) -> f64 {
    d_kl / (1.0 + d_kl)
}

/// `D_KL = (tr(Omega_hat Sigma) - log det(Omega_hat Sigma) - p) / 2` with
/// `Sigma = Omega^-1`.
///
/// An estimate that is not positive definite is symmetrised and its
/// eigenvalues floored at [`KL_EIGEN_FLOOR`]; the result is then flagged.
pub fn kl_divergence(omega_hat: &DenseMatrix, omega: &DenseMatrix) -> Result<KlDivergence> {
    if omega_hat.shape() != omega.shape() || omega.nrows() != omega.ncols() {
        return Err(Error::contract("kl: shapes differ or matrix is not square"));
    }
    let p = omega.nrows();
    let omega_chol = cholesky(omega)
        .map_err(|e| Error::contract(format!("kl: true precision must be positive definite ({e})")))?;
    let sigma = invert_pd(omega)?;

    let mut est = omega_hat.clone();
    symmetrize(&mut est);
    let (est, est_logdet, floored) = match cholesky(&est) {
        Ok(ch) => {
            let ld = ch.log_det();
            (est, ld, false)
        }
        Err(_) => {
            let eig = est.symmetric_eigen();
            let vals = eig.eigenvalues.map(|v| v.max(KL_EIGEN_FLOOR));
            let mut fixed = &eig.eigenvectors
                * DenseMatrix::from_diagonal(&vals)
                * eig.eigenvectors.transpose();
            symmetrize(&mut fixed);
            let ld = vals.iter().map(|v| v.ln()).sum::<f64>();
            (fixed, ld, true)
        }
    };

    let trace: f64 = (0..p)
        .map(|i| (0..p).map(|k| est[(i, k)] * sigma[(k, i)]).sum::<f64>())
        .sum();
    let d_kl = (0.5 * (trace - (est_logdet - omega_chol.log_det()) - p as f64)).max(0.0);
    Ok(KlDivergence {
        d_kl,
        normalized: normalized_kl(d_kl),
        floored,
    })
}

/// Entry `(i, l)` counts the fits in which `(i, l)` is absent; the diagonal
/// is 0.
pub fn zero_frequency_matrix(fits: &[EdgeSet], p: usize) -> Result<Vec<Vec<u64>>> {
    let mut counts = vec![vec![0u64; p]; p];
    for e in fits {
        if e.p() != p {
            return Err(Error::contract(format!("fit has p = {}, expected {p}", e.p())));
        }
        for i in 0..p {
            for l in 0..p {
                if i != l && !e.contains(i, l) {
                    counts[i][l] += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// One method applied to one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub model: String,
    pub p: usize,
    pub n: usize,
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub alpha_f: Option<f64>,
    pub alpha_b: Option<f64>,
    pub edges: usize,
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub mcc: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub m_f: f64,
    pub m_nkl: f64,
    pub mcc_degenerate: bool,
    pub kl_floored: bool,
    /// Kept out of the replicate table so that it stays reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl ReplicateRecord {
    pub fn counts(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp,
            tn: self.tn,
            fp: self.fp,
            fn_: self.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
}

/// Mean and sample (`R - 1`) standard deviation; `sd = 0` for one value.
pub fn mean_sd(values: &[f64]) -> MeanSd {
    let r = values.len() as f64;
    let mean = values.iter().sum::<f64>() / r;
    let sd = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
    };
    MeanSd { mean, sd }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub model: String,
    pub p: usize,
    pub method: String,
    pub replicates: usize,
    /// Set when only one replicate exists and the sd is not defined.
    pub sd_degenerate: bool,
    pub metrics: BTreeMap<String, MeanSd>,
}

/// Groups records by `(model, p, method)` and summarises each metric.
pub fn aggregate(records: &[ReplicateRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::contract("cannot aggregate an empty record list"));
    }
    let mut groups: BTreeMap<(String, usize, String), Vec<&ReplicateRecord>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.model.clone(), r.p, r.method.clone()))
            .or_default()
            .push(r);
    }
    let columns: [(&str, fn(&ReplicateRecord) -> f64); 6] = [
        ("mcc", |r| r.mcc),
        ("sensitivity", |r| r.sensitivity),
        ("specificity", |r| r.specificity),
        ("m_f", |r| r.m_f),
        ("m_nkl", |r| r.m_nkl),
        ("edges", |r| r.edges as f64),
    ];
    Ok(groups
        .into_iter()
        .map(|((model, p, method), rs)| {
            let metrics = columns
                .iter()
                .map(|(name, get)| {
                    let v: Vec<f64> = rs.iter().map(|r| get(r)).collect();
                    (name.to_string(), mean_sd(&v))
                })
                .collect();
            SummaryRow {
                model,
                p,
                method,
                replicates: rs.len(),
                sd_degenerate: rs.len() < 2,
                metrics,
            }
        })
        .collect())
}
