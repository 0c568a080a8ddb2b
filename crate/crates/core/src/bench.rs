//! Monte Carlo campaigns: for every model and replicate, draw a sample,
//! choose thresholds by cross-validation, fit, and score against the truth.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cv::{select_thresholds, CvGrid, SearchLimits};
use crate::error::{Error, Result};
use crate::gsa::{run_gsa, Thresholds};
use crate::io::{count_matrix_csv, read_matrix_csv, records_csv, write_json, write_text};
use crate::linalg::{symmetrize, DenseMatrix};
use crate::metrics::{
    aggregate, confusion, frobenius_distance, kl_divergence, mcc, sensitivity, specificity,
    zero_frequency_matrix, MeanSd, ReplicateRecord,
};
use crate::model::{derived_seed, gen_ar1, gen_bg, gen_nn2, sample_mvn, support_of, EdgeSet, PrecisionModel, SUPPORT_TOL};
use crate::RNG_NAME;

/// Method name of the stepwise estimator in campaign output.
pub const GS_METHOD: &str = "gs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ar1,
    Nn2,
    Bg,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Ar1 => "ar1",
            ModelKind::Nn2 => "nn2",
            ModelKind::Bg => "bg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub label: ModelKind,
    pub p: usize,
    /// AR(1) correlation, default 0.4.
    #[serde(default)]
    pub rho: Option<f64>,
    /// BG block size, default 5.
    #[serde(default)]
    pub block_size: Option<usize>,
    /// Seed for the NN(2) graph; defaults to the campaign seed.
    #[serde(default)]
    pub structure_seed: Option<u64>,
}

impl ModelSpec {
    pub fn build(&self, campaign_seed: u64) -> Result<PrecisionModel> {
        match self.label {
            ModelKind::Ar1 => gen_ar1(self.p, self.rho.unwrap_or(0.4)),
            ModelKind::Nn2 => gen_nn2(self.p, self.structure_seed.unwrap_or(campaign_seed)),
            ModelKind::Bg => gen_bg(self.p, self.block_size.unwrap_or(5)),
        }
    }
}

/// Threshold grid of a campaign: an equispaced axis crossed with itself, or
/// explicit pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Axis { count: usize, lo: f64, hi: f64 },
    Pairs { pairs: Vec<(f64, f64)> },
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec::Axis {
            count: 20,
            lo: 0.05,
            hi: 0.95,
        }
    }
}

impl GridSpec {
    pub fn build(&self) -> Result<CvGrid> {
        match self {
            GridSpec::Axis { count, lo, hi } => CvGrid::axis(*count, *lo, *hi),
            GridSpec::Pairs { pairs } => CvGrid::new(
                pairs
                    .iter()
                    .map(|&(f, b)| Thresholds::new(f, b))
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }
}

fn default_folds() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignSpec {
    pub models: Vec<ModelSpec>,
    pub n: usize,
    pub replicates: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub seed: u64,
}

impl CampaignSpec {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() {
            return Err(Error::contract("campaign has no models"));
        }
        if self.replicates == 0 {
            return Err(Error::contract("campaign needs at least one replicate"));
        }
        if self.folds < 2 || self.n < 2 * self.folds {
            return Err(Error::contract(format!(
                "need folds >= 2 and n >= 2 * folds (n = {}, folds = {})",
                self.n, self.folds
            )));
        }
        self.grid.build()?;
        Ok(())
    }

    /// Loads a spec from TOML, or JSON when the extension is `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let spec: CampaignSpec = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| parse_err(e.line(), e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| {
                let line = e
                    .span()
                    .map_or(0, |s| text[..s.start].matches('\n').count() + 1);
                parse_err(line, e.message().to_string())
            })?
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// One replicate or method that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CampaignFailure {
    pub model: String,
    pub p: usize,
    pub replicate: usize,
    pub seed: u64,
    pub method: String,
    pub numerical: bool,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingRow {
    pub model: String,
    pub p: usize,
    pub replicate: usize,
    pub method: String,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryMetadata {
    pub rng: &'static str,
    pub seed: u64,
    pub seed_rule: &'static str,
    pub n: usize,
    pub replicates: usize,
    pub folds: usize,
    pub grid_pairs: usize,
    pub sd: &'static str,
    pub mcc_zero_denominator: &'static str,
    pub kl_indefinite: &'static str,
    pub failures: usize,
}

/// `model -> p -> method -> metric -> {mean, sd}`.
pub type SummaryTable = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, MeanSd>>>>;

#[derive(Debug, Clone, Serialize)]
pub struct CampaignSummary {
    pub metadata: SummaryMetadata,
    pub results: SummaryTable,
}

#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<CampaignFailure>,
    pub summary: CampaignSummary,
    /// Zero-frequency matrices keyed by `(model, p, method)`.
    pub zero_frequency: BTreeMap<(String, usize, String), Vec<Vec<u64>>>,
}

struct Scored {
    record: ReplicateRecord,
    edges: EdgeSet,
}

fn score(
    model: &PrecisionModel,
    omega_hat: &DenseMatrix,
    edges: EdgeSet,
    base: ReplicateRecord,
) -> Result<Scored> {
    let c = confusion(&model.edges, &edges)?;
    let kl = kl_divergence(omega_hat, &model.omega)?;
    let record = ReplicateRecord {
        edges: edges.len(),
        tp: c.tp,
        tn: c.tn,
        fp: c.fp,
        fn_: c.fn_,
        mcc: mcc(&c),
        sensitivity: sensitivity(&c),
        specificity: specificity(&c),
        m_f: frobenius_distance(omega_hat, &model.omega)?,
        m_nkl: kl.normalized,
        mcc_degenerate: c.mcc_degenerate(),
        kl_floored: kl.floored,
        ..base
    };
    Ok(Scored { record, edges })
}

fn blank_record(model: &PrecisionModel, n: usize, replicate: usize, seed: u64, method: &str) -> ReplicateRecord {
    ReplicateRecord {
        model: model.label.clone(),
        p: model.p(),
        n,
        replicate,
        seed,
        method: method.to_string(),
        alpha_f: None,
        alpha_b: None,
        edges: 0,
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
        mcc: 0.0,
        sensitivity: 0.0,
        specificity: 0.0,
        m_f: 0.0,
        m_nkl: 0.0,
        mcc_degenerate: false,
        kl_floored: false,
        wall_time_s: 0.0,
    }
}

/// File name of an imported estimate: `<label>_p<p>_r<replicate>.csv`.
pub fn import_file_name(label: &str, p: usize, replicate: usize) -> String {
    format!("{label}_p{p}_r{replicate}.csv")
}

/// Subdirectories of `dir`, sorted; each is one imported method.
fn import_methods(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.is_dir() {
            let name = entry.file_name().to_string_lossy().into_owned();
            if name == GS_METHOD {
                return Err(Error::contract(format!("imported method may not be named {GS_METHOD:?}")));
            }
            out.push((name, path));
        }
    }
    out.sort();
    Ok(out)
}

fn scored_import(
    model: &PrecisionModel,
    path: &Path,
    base: ReplicateRecord,
) -> Result<Scored> {
    let (mut omega_hat, _) = read_matrix_csv(path)?;
    if omega_hat.shape() != (model.p(), model.p()) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: format!("expected a {0}x{0} matrix, found {1:?}", model.p(), omega_hat.shape()),
        });
    }
    symmetrize(&mut omega_hat);
    let edges = support_of(&omega_hat, SUPPORT_TOL)?;
    score(model, &omega_hat, edges, base)
}

type TaskOutput = (Vec<Scored>, Vec<CampaignFailure>);

fn run_task(
    spec: &CampaignSpec,
    model: &PrecisionModel,
    grid: &CvGrid,
    replicate: usize,
    imports: &[(String, PathBuf)],
) -> TaskOutput {
    let seed = derived_seed(spec.seed, replicate);
    let mut scored = Vec::new();
    let mut failures = Vec::new();
    let fail = |method: &str, e: &Error| CampaignFailure {
        model: model.label.clone(),
        p: model.p(),
        replicate,
        seed,
        method: method.to_string(),
        numerical: e.is_numerical(),
        error: e.to_string(),
    };

    let start = Instant::now();
    let gs = sample_mvn(model, spec.n, seed).and_then(|sample| {
        let cv = select_thresholds(&sample, spec.folds, grid, seed, SearchLimits::default())?;
        let fit = run_gsa(&sample, cv.best, None, None)?;
        let mut base = blank_record(model, spec.n, replicate, seed, GS_METHOD);
        base.alpha_f = Some(cv.best.alpha_f());
        base.alpha_b = Some(cv.best.alpha_b());
        score(model, &fit.omega_hat, fit.edges, base)
    });
    match gs {
        Ok(mut s) => {
            s.record.wall_time_s = start.elapsed().as_secs_f64();
            scored.push(s);
        }
        Err(e) => failures.push(fail(GS_METHOD, &e)),
    }

    for (method, dir) in imports {
        let path = dir.join(import_file_name(&model.label, model.p(), replicate));
        if !path.exists() {
            log::warn!("no imported estimate at {}", path.display());
            continue;
        }
        let base = blank_record(model, spec.n, replicate, seed, method);
        match scored_import(model, &path, base) {
            Ok(s) => scored.push(s),
            Err(e) => failures.push(fail(method, &e)),
        }
    }
    (scored, failures)
}

/// Runs a campaign on a pool of `threads` workers. Results do not depend on
/// the number of workers.
pub fn run_campaign(spec: &CampaignSpec, threads: usize, import_dir: Option<&Path>) -> Result<CampaignReport> {
    spec.validate()?;
    let grid = spec.grid.build()?;
    let models = spec
        .models
        .iter()
        .map(|m| m.build(spec.seed))
        .collect::<Result<Vec<_>>>()?;
    let imports = match import_dir {
        Some(d) => import_methods(d)?,
        None => Vec::new(),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::contract(format!("thread pool: {e}")))?;

    let tasks: Vec<(usize, usize)> = (0..models.len())
        .flat_map(|m| (0..spec.replicates).map(move |r| (m, r)))
        .collect();
    let outputs: Vec<TaskOutput> = pool.install(|| {
        tasks
            .par_iter()
            .map(|&(m, r)| run_task(spec, &models[m], &grid, r, &imports))
            .collect()
    });

    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut fits: BTreeMap<(String, usize, String), Vec<EdgeSet>> = BTreeMap::new();
    for (scored, failed) in outputs {
        for s in scored {
            let key = (s.record.model.clone(), s.record.p, s.record.method.clone());
            fits.entry(key).or_default().push(s.edges);
            records.push(s.record);
        }
        failures.extend(failed);
    }

    let zero_frequency = fits
        .into_iter()
        .map(|(k, e)| {
            let z = zero_frequency_matrix(&e, k.1)?;
            Ok((k, z))
        })
        .collect::<Result<BTreeMap<_, _>>>()?;

    let mut results: SummaryTable = BTreeMap::new();
    if !records.is_empty() {
        for row in aggregate(&records)? {
            results
                .entry(row.model)
                .or_default()
                .entry(row.p.to_string())
                .or_default()
                .insert(row.method, row.metrics);
        }
    }
    let summary = CampaignSummary {
        metadata: SummaryMetadata {
            rng: RNG_NAME,
            seed: spec.seed,
            seed_rule: "replicate r uses seed + r * 2654435761 (mod 2^64) for sampling and fold assignment",
            n: spec.n,
            replicates: spec.replicates,
            folds: spec.folds,
            grid_pairs: grid.pairs().len(),
            sd: "sample standard deviation (R - 1); 0 when R = 1",
            mcc_zero_denominator: "0",
            kl_indefinite: "symmetrised, eigenvalues floored at 1e-6, record flagged",
            failures: failures.len(),
        },
        results,
    };
    Ok(CampaignReport {
        records,
        failures,
        summary,
        zero_frequency,
    })
}

impl CampaignReport {
    pub fn timings(&self) -> Vec<TimingRow> {
        self.records
            .iter()
            .map(|r| TimingRow {
                model: r.model.clone(),
                p: r.p,
                replicate: r.replicate,
                method: r.method.clone(),
                wall_time_s: r.wall_time_s,
            })
            .collect()
    }

    /// Writes `replicates.csv`, `timings.csv`, `summary.json`,
    /// `failures.csv` and one `zero_freq_*.csv` per model, size and method.
    pub fn write(&self, out_dir: &Path) -> Result<Vec<PathBuf>> {
        let mut written = Vec::new();
        let mut put = |name: String, text: String| -> Result<()> {
            let path = out_dir.join(name);
            write_text(&path, &text)?;
            written.push(path);
            Ok(())
        };
        put("replicates.csv".into(), records_csv(&self.records)?)?;
        put("timings.csv".into(), records_csv(&self.timings())?)?;
        put("failures.csv".into(), failures_csv(&self.failures)?)?;
        for ((model, p, method), z) in &self.zero_frequency {
            let name = if method == GS_METHOD {
                format!("zero_freq_{model}_p{p}.csv")
            } else {
                format!("zero_freq_{model}_p{p}_{method}.csv")
            };
            put(name, count_matrix_csv(z))?;
        }
        let summary = out_dir.join("summary.json");
        write_json(&summary, &self.summary)?;
        written.push(summary);
        Ok(written)
    }
}

fn failures_csv(failures: &[CampaignFailure]) -> Result<String> {
    if failures.is_empty() {
        return Ok("model,p,replicate,seed,method,numerical,error\n".into());
    }
    records_csv(failures)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CampaignSpec {
        CampaignSpec {
            models: vec![ModelSpec {
                label: ModelKind::Ar1,
                p: 10,
                rho: None,
                block_size: None,
                structure_seed: None,
            }],
            n: 100,
            replicates: 3,
            folds: 5,
            grid: GridSpec::Axis { count: 5, lo: 0.1, hi: 0.5 },
            seed: 11,
        }
    }

    #[test]
    fn spec_parses_from_toml_and_json() {
        let toml_text = r#"
            n = 100
            replicates = 3
            seed = 11
            [grid]
            count = 5
            lo = 0.1
            hi = 0.5
            [[models]]
            label = "ar1"
            p = 10
        "#;
        let from_toml: CampaignSpec = toml::from_str(toml_text).unwrap();
        assert_eq!(from_toml, small_spec());
        let json = serde_json::to_string(&small_spec()).unwrap();
        let from_json: CampaignSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(from_json, small_spec());
        let pairs: GridSpec = toml::from_str("pairs = [[0.3, 0.1]]").unwrap();
        assert_eq!(pairs.build().unwrap().pairs().len(), 1);
    }

    #[test]
    fn spec_validation() {
        let mut s = small_spec();
        s.replicates = 0;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.n = 9;
        assert!(s.validate().is_err());
        let mut s = small_spec();
        s.models.clear();
        assert!(s.validate().is_err());
    }

    #[test]
    fn smoke_campaign_has_one_row_per_replicate() {
        let report = run_campaign(&small_spec(), 2, None).unwrap();
        assert_eq!(report.records.len(), 3);
        assert!(report.failures.is_empty());
        let mean = report.records.iter().map(|r| r.mcc).sum::<f64>() / 3.0;
        let summary = &report.summary.results["ar1"]["10"][GS_METHOD]["mcc"];
        assert!((summary.mean - mean).abs() < 1e-12);
        let z = &report.zero_frequency[&("ar1".to_string(), 10, GS_METHOD.to_string())];
        assert_eq!(z[0][0], 0);
        assert!(z[0][9] <= 3);
    }

    #[test]
    fn imported_estimates_are_scored() {
        let dir = tempfile::tempdir().unwrap();
        let spec = CampaignSpec { replicates: 1, ..small_spec() };
        let model = spec.models[0].build(spec.seed).unwrap();
        let method_dir = dir.path().join("oracle");
        std::fs::create_dir_all(&method_dir).unwrap();
        crate::io::write_matrix_csv(&method_dir.join(import_file_name("ar1", 10, 0)), &model.omega, None).unwrap();
        let report = run_campaign(&spec, 1, Some(dir.path())).unwrap();
        let oracle = report.records.iter().find(|r| r.method == "oracle").unwrap();
        assert_eq!(oracle.mcc, 1.0);
        assert_eq!(oracle.m_f, 0.0);
    }
}
