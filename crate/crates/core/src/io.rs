//! File formats: canonical JSON for models, fits and CV surfaces; CSV for
//! data matrices, labelled data, grids and record tables; TSV edge lists.
//!
//! JSON output writes object keys in declaration order and every float with
//! 17 significant digits, so reading a file back and writing it again gives
//! the same bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::classify::LabeledDataset;
use crate::cv::CvGrid;
use crate::error::{Error, Result};
use crate::gsa::{GsaFit, Thresholds, TraceEntry};
use crate::linalg::DenseMatrix;
use crate::model::{EdgeSet, PrecisionModel};

/// Compact JSON layout with floats written as `d.dddddddddddddddde±x`.
#[derive(Debug, Clone, Copy, Default)]
struct CanonicalFormatter;

impl Formatter for CanonicalFormatter {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

pub fn to_canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, CanonicalFormatter);
    value.serialize(&mut ser)?;
    buf.push(b'\n');
    Ok(String::from_utf8(buf).expect("serde_json emits UTF-8"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_canonical_json(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Upper-triangle nonzero entries `[i, l, value]` with `i <= l`, zero-based.
pub fn triplets(m: &DenseMatrix) -> Vec<(usize, usize, f64)> {
    let p = m.nrows();
    let mut out = Vec::new();
    for i in 0..p {
        for l in i..p {
            if m[(i, l)] != 0.0 {
                out.push((i, l, m[(i, l)]));
            }
        }
    }
    out
}

/// Symmetric matrix from upper-triangle triplets.
pub fn from_triplets(p: usize, entries: &[(usize, usize, f64)]) -> Result<DenseMatrix> {
    let mut m = DenseMatrix::zeros(p, p);
    for &(i, l, v) in entries {
        if i >= p || l >= p {
            return Err(Error::contract(format!("triplet ({i}, {l}) outside a {p}x{p} matrix")));
        }
        m[(i, l)] = v;
        m[(l, i)] = v;
    }
    Ok(m)
}

/// Ground-truth model on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub p: usize,
    pub label: String,
    pub omega: Vec<(usize, usize, f64)>,
    pub seed: Option<u64>,
}

impl ModelFile {
    pub fn from_model(m: &PrecisionModel) -> Self {
        ModelFile {
            p: m.p(),
            label: m.label.clone(),
            omega: triplets(&m.omega),
            seed: m.seed,
        }
    }

    pub fn to_model(&self) -> Result<PrecisionModel> {
        PrecisionModel::from_omega(self.label.clone(), from_triplets(self.p, &self.omega)?, self.seed)
    }
}

pub fn write_model(path: &Path, m: &PrecisionModel) -> Result<()> {
    write_json(path, &ModelFile::from_model(m))
}

pub fn read_model(path: &Path) -> Result<PrecisionModel> {
    read_json::<ModelFile>(path)?.to_model()
}

/// A fitted graph on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitFile {
    pub p: usize,
    pub alpha_f: f64,
    pub alpha_b: f64,
    pub edges: Vec<(usize, usize)>,
    pub omega: Vec<(usize, usize, f64)>,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<TraceEntry>>,
}

impl FitFile {
    pub fn from_fit(fit: &GsaFit, with_trace: bool) -> Self {
        FitFile {
            p: fit.p(),
            alpha_f: fit.thresholds.alpha_f(),
            alpha_b: fit.thresholds.alpha_b(),
            edges: fit.edges.iter().collect(),
            omega: triplets(&fit.omega_hat),
            iterations: fit.iterations,
            trace: with_trace.then(|| fit.trace.clone()),
        }
    }

    pub fn edge_set(&self) -> Result<EdgeSet> {
        EdgeSet::from_pairs(self.p, self.edges.iter().copied())
    }

    pub fn omega(&self) -> Result<DenseMatrix> {
        from_triplets(self.p, &self.omega)
    }
}

/// Tab-separated `i, l, omega_il` rows with a header line.
pub fn edge_tsv(fit: &GsaFit) -> String {
    let mut s = String::from("i\tl\tomega\n");
    for (i, l) in fit.edges.iter() {
        s.push_str(&format!("{i}\t{l}\t{}\n", fit.omega_hat[(i, l)]));
    }
    s
}

/// Parsed numeric CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Option<Vec<String>>,
    pub rows: Vec<Vec<String>>,
    /// One-based file line of each entry in `rows`.
    pub lines: Vec<usize>,
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads a comma-separated table. The first record is taken as a header
/// when any of its fields is not a number.
pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let text = read_text(path)?;
    parse_csv_table(&text, path)
}

pub fn parse_csv_table(text: &str, path: &Path) -> Result<CsvTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut header = None;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(path, line, e.to_string())
        })?;
        let line = rec.position().map_or(k + 1, |p| p.line() as usize);
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if k == 0 && fields.iter().any(|f| f.parse::<f64>().is_err()) {
            header = Some(fields);
            continue;
        }
        rows.push(fields);
        lines.push(line);
    }
    Ok(CsvTable { header, rows, lines })
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    let v: f64 = field
        .parse()
        .map_err(|_| parse_error(path, line, format!("not a number: {field:?}")))?;
    if !v.is_finite() {
        return Err(parse_error(path, line, format!("non-finite value {field:?}")));
    }
    Ok(v)
}

/// Numeric matrix with its optional header.
pub fn read_matrix_csv(path: &Path) -> Result<(DenseMatrix, Option<Vec<String>>)> {
    let t = read_csv_table(path)?;
    table_to_matrix(&t, path)
}

fn table_to_matrix(t: &CsvTable, path: &Path) -> Result<(DenseMatrix, Option<Vec<String>>)> {
    let Some(first) = t.rows.first() else {
        return Err(parse_error(path, 1, "no data rows"));
    };
    let p = first.len();
    let mut values = Vec::with_capacity(t.rows.len() * p);
    for (row, &line) in t.rows.iter().zip(&t.lines) {
        for f in row {
            values.push(parse_f64(path, line, f)?);
        }
    }
    Ok((DenseMatrix::from_row_slice(t.rows.len(), p, &values), t.header.clone()))
}

/// Matrix as CSV using shortest round-trip float text.
pub fn matrix_csv(m: &DenseMatrix, header: Option<&[String]>) -> String {
    let mut s = String::new();
    if let Some(h) = header {
        s.push_str(&h.join(","));
        s.push('\n');
    }
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| m[(i, c)].to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Default column names `x1, ..., xp`.
pub fn default_header(p: usize) -> Vec<String> {
    (1..=p).map(|c| format!("x{c}")).collect()
}

pub fn write_matrix_csv(path: &Path, m: &DenseMatrix, header: Option<&[String]>) -> Result<()> {
    write_text(path, &matrix_csv(m, header))
}

pub fn count_matrix_csv(m: &[Vec<u64>]) -> String {
    m.iter()
        .map(|row| row.iter().map(u64::to_string).collect::<Vec<_>>().join(",") + "\n")
        .collect()
}

/// Where the group label sits in a labelled CSV.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl Default for LabelColumn {
    fn default() -> Self {
        LabelColumn::Name("label".into())
    }
}

/// Labelled CSV: one column holds group tags 1 or 2, the rest are features.
pub fn read_labeled_csv(path: &Path, label: &LabelColumn) -> Result<LabeledDataset> {
    let t = read_csv_table(path)?;
    let width = t.rows.first().map_or(0, Vec::len);
    let col = match label {
        LabelColumn::Index(i) => *i,
        LabelColumn::Name(name) => t
            .header
            .as_ref()
            .and_then(|h| h.iter().position(|c| c == name))
            .ok_or_else(|| parse_error(path, 1, format!("no header column named {name:?}")))?,
    };
    if col >= width {
        return Err(parse_error(path, 1, format!("label column {col} out of range")));
    }
    let mut labels = Vec::with_capacity(t.rows.len());
    let mut values = Vec::new();
    for (row, &line) in t.rows.iter().zip(&t.lines) {
        for (c, f) in row.iter().enumerate() {
            let v = parse_f64(path, line, f)?;
            if c == col {
                let r = match v {
                    1.0 => 1,
                    2.0 => 2,
                    _ => return Err(parse_error(path, line, format!("label {f:?} is not 1 or 2"))),
                };
                labels.push(r);
            } else {
                values.push(v);
            }
        }
    }
    let names = t.header.map(|h| {
        h.into_iter()
            .enumerate()
            .filter(|&(c, _)| c != col)
            .map(|(_, n)| n)
            .collect()
    });
    let data = DenseMatrix::from_row_slice(labels.len(), width - 1, &values);
    LabeledDataset::new(data, labels, names)
}

pub fn write_labeled_csv(path: &Path, ds: &LabeledDataset) -> Result<()> {
    let names = ds
        .feature_names()
        .map(<[String]>::to_vec)
        .unwrap_or_else(|| default_header(ds.p()));
    let mut s = format!("label,{}\n", names.join(","));
    for i in 0..ds.n() {
        s.push_str(&ds.labels()[i].to_string());
        for c in 0..ds.p() {
            s.push(',');
            s.push_str(&ds.data()[(i, c)].to_string());
        }
        s.push('\n');
    }
    write_text(path, &s)
}

/// Two-column CSV of `(alpha_f, alpha_b)` pairs.
pub fn read_grid_csv(path: &Path) -> Result<CvGrid> {
    let t = read_csv_table(path)?;
    let mut pairs = Vec::new();
    for (row, &line) in t.rows.iter().zip(&t.lines) {
        if row.len() != 2 {
            return Err(parse_error(path, line, format!("expected 2 columns, found {}", row.len())));
        }
        let (f, b) = (parse_f64(path, line, &row[0])?, parse_f64(path, line, &row[1])?);
        pairs.push(Thresholds::new(f, b).map_err(|e| parse_error(path, line, e.to_string()))?);
    }
    CvGrid::new(pairs).map_err(|e| parse_error(path, 1, e.to_string()))
}

/// CSV table of serialisable records with a header row.
pub fn records_csv<T: Serialize>(records: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| Error::contract(format!("csv: {e}")))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::contract(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv emits UTF-8"))
}

pub fn read_records_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|rec| {
            rec.map_err(|e| {
                let line = e.position().map_or(0, |p| p.line() as usize);
                parse_error(path, line, e.to_string())
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gsa::run_gsa;
    use crate::model::{gen_ar1, gen_nn2, sample_mvn};
    use std::path::PathBuf;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_canonical_json(&vec![0.1, 1.0, -2.5e-300]).unwrap();
        assert_eq!(s, "[1.0000000000000001e-1,1.0000000000000000e0,-2.5000000000000000e-300]\n");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 1.0, -2.5e-300]);
    }

    #[test]
    fn model_round_trip() {
        let d = tmp();
        let path = d.path().join("m.json");
        let m = gen_nn2(12, 5).unwrap();
        write_model(&path, &m).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back.omega, m.omega);
        assert_eq!(back.edges, m.edges);
        assert_eq!(back.seed, Some(5));
        let first = fs::read_to_string(&path).unwrap();
        write_model(&path, &back).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), first);
    }

    #[test]
    fn fit_round_trip_is_byte_identical() {
        let m = gen_ar1(8, 0.4).unwrap();
        let s = sample_mvn(&m, 200, 3).unwrap();
        let fit = run_gsa(&s, Thresholds::new(0.2, 0.1).unwrap(), None, None).unwrap();
        for trace in [false, true] {
            let text = to_canonical_json(&FitFile::from_fit(&fit, trace)).unwrap();
            let back: FitFile = serde_json::from_str(&text).unwrap();
            assert_eq!(to_canonical_json(&back).unwrap(), text);
            assert_eq!(back.omega().unwrap(), fit.omega_hat);
            assert_eq!(back.edge_set().unwrap(), fit.edges);
            assert_eq!(back.trace.is_some(), trace);
        }
    }

    #[test]
    fn header_detection_and_line_numbers() {
        let p = PathBuf::from("x.csv");
        let t = parse_csv_table("a,b\n1,2\n3,4\n", &p).unwrap();
        assert_eq!(t.header, Some(vec!["a".to_string(), "b".to_string()]));
        assert_eq!(t.rows.len(), 2);
        let t = parse_csv_table("1,2\n3,4\n", &p).unwrap();
        assert!(t.header.is_none());

        let t = parse_csv_table("a,b\n1,2\n3,oops\n", &p).unwrap();
        match table_to_matrix(&t, &p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_csv_table("1,2\n3\n", &p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn matrix_csv_round_trip() {
        let d = tmp();
        let path = d.path().join("x.csv");
        let m = DenseMatrix::from_row_slice(2, 3, &[0.1, -2.0, 1e-20, 3.5, 0.0, 1.0 / 3.0]);
        write_matrix_csv(&path, &m, None).unwrap();
        let (back, h) = read_matrix_csv(&path).unwrap();
        assert_eq!(back, m);
        assert!(h.is_none());
        let header = default_header(3);
        write_matrix_csv(&path, &m, Some(&header)).unwrap();
        let (back, h) = read_matrix_csv(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(h.unwrap(), header);
    }

    #[test]
    fn labeled_csv_round_trip() {
        let d = tmp();
        let path = d.path().join("l.csv");
        let ds = LabeledDataset::new(
            DenseMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            vec![1, 2, 2],
            Some(vec!["a".into(), "b".into()]),
        )
        .unwrap();
        write_labeled_csv(&path, &ds).unwrap();
        assert_eq!(read_labeled_csv(&path, &LabelColumn::default()).unwrap(), ds);
        assert_eq!(read_labeled_csv(&path, &LabelColumn::Index(0)).unwrap(), ds);
        assert!(read_labeled_csv(&path, &LabelColumn::Name("grp".into())).is_err());

        fs::write(&path, "a,label\n1,1\n2,3\n").unwrap();
        match read_labeled_csv(&path, &LabelColumn::default()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn grid_csv() {
        let d = tmp();
        let path = d.path().join("g.csv");
        fs::write(&path, "alpha_f,alpha_b\n0.3,0.1\n0.5,0.2\n").unwrap();
        let g = read_grid_csv(&path).unwrap();
        assert_eq!(g.pairs().len(), 2);
        fs::write(&path, "0.3,0.4\n").unwrap();
        assert!(matches!(read_grid_csv(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn triplets_are_upper_and_symmetric() {
        let m = gen_ar1(4, 0.4).unwrap();
        let t = triplets(&m.omega);
        assert!(t.iter().all(|&(i, l, _)| i <= l));
        assert_eq!(t.len(), 4 + 3);
        assert_eq!(from_triplets(4, &t).unwrap(), m.omega);
        assert!(from_triplets(3, &t).is_err());
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_matrix_csv(Path::new("/nonexistent/data.csv")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/data.csv"));
    }
}
