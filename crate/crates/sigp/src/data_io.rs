//! Datasets: CSV input/output, standardization, seeded splits and synthetic generators.
//!
//! All randomness comes from a ChaCha8 generator seeded with a single `u64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    Binary,
    Multiclass,
}

impl LabelKind {
    /// Two distinct values are binary, up to 20 distinct integers are multiclass.
    pub fn detect(y: &DVector<f64>) -> Self {
        let mut distinct: Vec<f64> = y.iter().copied().collect();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let integral = distinct.iter().all(|v| v.fract() == 0.0);
        match distinct.len() {
            2 => LabelKind::Binary,
            3..=20 if integral => LabelKind::Multiclass,
            _ => LabelKind::Real,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Shift and scale already applied to each feature (zeros and ones for raw data).
    pub feature_means: DVector<f64>,
    pub feature_stds: DVector<f64>,
    pub label_kind: LabelKind,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        let names = (0..x.ncols()).map(|j| format!("x{}", j + 1)).collect();
        Self::with_names(x, y, names, "y".into())
    }

    pub fn with_names(x: DMatrix<f64>, y: DVector<f64>, feature_names: Vec<String>, target_name: String) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
        if feature_names.len() != x.ncols() {
            return Err(Error::Dimension("one name per feature required".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains NaN or infinite values".into()));
        }
        let d = x.ncols();
        let label_kind = LabelKind::detect(&y);
        Ok(Dataset {
            x,
            y,
            feature_names,
            target_name,
            feature_means: DVector::zeros(d),
            feature_stds: DVector::from_element(d, 1.0),
            label_kind,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `idx`, in that order. Label kind is inherited.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let x = DMatrix::from_fn(idx.len(), self.d(), |i, j| self.x[(idx[i], j)]);
        let y = DVector::from_fn(idx.len(), |i, _| self.y[idx[i]]);
        Dataset { x, y, ..self.clone() }
    }
}

/// Per-feature standardization learned on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    /// Indices of the retained (non-constant) input columns.
    pub kept: Vec<usize>,
    pub means: DVector<f64>,
    pub stds: DVector<f64>,
}

impl Standardizer {
    /// Column means and population standard deviations; constant columns are dropped.
    pub fn fit(x: &DMatrix<f64>) -> Self {
        let n = x.nrows().max(1) as f64;
        let mut kept = Vec::new();
        let mut means = Vec::new();
        let mut stds = Vec::new();
        for (j, col) in x.column_iter().enumerate() {
            let mean = col.sum() / n;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-12 * mean.abs().max(1.0) {
                kept.push(j);
                means.push(mean);
                stds.push(sd);
            } else {
                log::info!("dropping constant feature column {j}");
            }
        }
        Standardizer { kept, means: DVector::from_vec(means), stds: DVector::from_vec(stds) }
    }

    pub fn identity(d: usize) -> Self {
        Standardizer { kept: (0..d).collect(), means: DVector::zeros(d), stds: DVector::from_element(d, 1.0) }
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.kept.last().map(|j| j + 1)
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if let Some(&j) = self.kept.iter().find(|&&j| j >= x.ncols()) {
            return Err(Error::Dimension(format!("feature {j} missing from input with {} columns", x.ncols())));
        }
        Ok(DMatrix::from_fn(x.nrows(), self.kept.len(), |i, k| {
            (x[(i, self.kept[k])] - self.means[k]) / self.stds[k]
        }))
    }

    /// Standardize features of `ds`, keeping track of the applied transform.
    pub fn transform(&self, ds: &Dataset) -> Result<Dataset> {
        let x = self.apply(&ds.x)?;
        let names = self.kept.iter().map(|&j| ds.feature_names[j].clone()).collect();
        Ok(Dataset {
            x,
            y: ds.y.clone(),
            feature_names: names,
            target_name: ds.target_name.clone(),
            feature_means: self.means.clone(),
            feature_stds: self.stds.clone(),
            label_kind: ds.label_kind,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LabelColumn {
    First,
    Last,
    Index(usize),
    Name(String),
}

impl LabelColumn {
    /// `first`, `last`, a zero-based index, or a header name.
    pub fn parse(s: &str) -> Self {
        match s {
            "first" => LabelColumn::First,
            "last" => LabelColumn::Last,
            _ => s.parse().map(LabelColumn::Index).unwrap_or_else(|_| LabelColumn::Name(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub header: bool,
    pub label_column: LabelColumn,
    pub delimiter: u8,
}

impl Default for CsvOptions {
    fn default() -> Self {
        CsvOptions { header: true, label_column: LabelColumn::Last, delimiter: b',' }
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, msg: format!("{kind:?}") },
    }
}

/// A numeric CSV table with column names (`c1, c2, …` when the file has no header).
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub names: Vec<String>,
    pub data: DMatrix<f64>,
}

impl Table {
    pub fn column_index(&self, col: &LabelColumn) -> Result<usize> {
        let width = self.names.len();
        match col {
            LabelColumn::First => Ok(0),
            LabelColumn::Last => Ok(width - 1),
            LabelColumn::Index(i) if *i < width => Ok(*i),
            LabelColumn::Index(i) => Err(Error::Data(format!("column {i} out of range ({width} columns)"))),
            LabelColumn::Name(name) => self
                .names
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::Data(format!("no column named '{name}'"))),
        }
    }

    pub fn column(&self, j: usize) -> DVector<f64> {
        self.data.column(j).into_owned()
    }

    /// All columns except `j`.
    pub fn without_column(&self, j: usize) -> DMatrix<f64> {
        self.data.clone().remove_column(j)
    }
}

/// Read a numeric table. Every field must parse as a finite number.
pub fn load_table(path: &Path, opts: &CsvOptions) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.header)
        .delimiter(opts.delimiter)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let header: Option<Vec<String>> = if opts.header {
        Some(reader.headers().map_err(csv_error)?.iter().map(|s| s.to_string()).collect())
    } else {
        None
    };
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = header.as_ref().map(|h| h.len());
    for record in reader.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let w = *width.get_or_insert(record.len());
        if record.len() != w {
            return Err(Error::Parse { line, msg: format!("expected {w} fields, found {}", record.len()) });
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(j, field)| {
                field.parse::<f64>().map_err(|_| Error::Parse {
                    line,
                    msg: format!("field {} is not numeric: '{field}'", j + 1),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse { line, msg: format!("non-finite value {v}") });
        }
        rows.push(row);
    }
    let width = width.filter(|&w| w > 0).ok_or_else(|| Error::Data(format!("{} contains no data", path.display())))?;
    if rows.is_empty() {
        return Err(Error::Data(format!("{} contains no data rows", path.display())));
    }
    let names = header.unwrap_or_else(|| (0..width).map(|j| format!("c{}", j + 1)).collect());
    let data = DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]);
    Ok(Table { names, data })
}

/// Read a numeric table; one column is the response, the rest are features.
pub fn load_csv(path: &Path, opts: &CsvOptions) -> Result<Dataset> {
    let table = load_table(path, opts)?;
    if table.names.len() < 2 {
        return Err(Error::Data("need at least one feature column and one label column".into()));
    }
    let label = table.column_index(&opts.label_column)?;
    let mut names = table.names.clone();
    let target = names.remove(label);
    Dataset::with_names(table.without_column(label), table.column(label), names, target)
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().ok_or_else(|| Error::Data(format!("invalid output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

/// Render rows as CSV text.
pub fn csv_string(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string())).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

/// Features followed by the response, with a header row.
pub fn save_csv(ds: &Dataset, path: &Path) -> Result<()> {
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    let rows = (0..ds.len()).map(|i| {
        let mut r: Vec<f64> = ds.x.row(i).iter().copied().collect();
        r.push(ds.y[i]);
        r
    });
    write_atomic(path, csv_string(&header, rows)?.as_bytes())
}

/// Seeded uniform split without replacement; both parts keep file order.
pub fn split(ds: &Dataset, test_count: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if test_count >= ds.len() {
        return Err(Error::Domain(format!("test count {test_count} must be below {}", ds.len())));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut rng(seed));
    let mut test = idx[..test_count].to_vec();
    let mut train = idx[test_count..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((ds.select(&train), ds.select(&test)))
}

/// `y = sin(x) + ε`, `ε ~ N(0, noise_var)`, with `x` uniform on the union of `ranges`.
pub fn synth_sinusoid(n: usize, ranges: &[(f64, f64)], noise_var: f64, seed: u64) -> Result<Dataset> {
    if ranges.is_empty() {
        return Err(Error::Domain("at least one input range is required".into()));
    }
    if let Some((a, b)) = ranges.iter().find(|(a, b)| !(b > a) || !a.is_finite() || !b.is_finite()) {
        return Err(Error::Domain(format!("invalid range [{a}, {b}]")));
    }
    if !(noise_var >= 0.0) {
        return Err(Error::Domain(format!("noise variance must be non-negative, got {noise_var}")));
    }
    let total: f64 = ranges.iter().map(|(a, b)| b - a).sum();
    let noise = Normal::new(0.0, noise_var.sqrt()).map_err(|e| Error::Domain(e.to_string()))?;
    let mut r = rng(seed);
    let mut x = DVector::zeros(n);
    let mut y = DVector::zeros(n);
    for i in 0..n {
        let mut u = r.random_range(0.0..total);
        let mut xi = ranges[ranges.len() - 1].1;
        for &(a, b) in ranges {
            if u < b - a {
                xi = a + u;
                break;
            }
            u -= b - a;
        }
        x[i] = xi;
        y[i] = xi.sin() + if noise_var > 0.0 { noise.sample(&mut r) } else { 0.0 };
    }
    Dataset::new(DMatrix::from_column_slice(n, 1, x.as_slice()), y)
}

/// Cluster centres of the four-class toy problem, indexed by label − 1.
/// Labels 1 and 2 sit on the main diagonal, 3 and 4 on the anti-diagonal.
pub const FOUR_CLASS_CENTRES: [(f64, f64); 4] = [(1.0, 1.0), (-1.0, -1.0), (1.0, -1.0), (-1.0, 1.0)];

/// Isotropic Gaussian clusters with standard deviation 0.25 at [`FOUR_CLASS_CENTRES`].
pub fn synth_four_class(n_per_class: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 {
        return Err(Error::Domain("need at least one point per class".into()));
    }
    let noise = Normal::new(0.0, 0.25).map_err(|e| Error::Domain(e.to_string()))?;
    let mut r = rng(seed);
    let n = 4 * n_per_class;
    let mut x = DMatrix::zeros(n, 2);
    let mut y = DVector::zeros(n);
    for (c, &(cx, cy)) in FOUR_CLASS_CENTRES.iter().enumerate() {
        for k in 0..n_per_class {
            let i = c * n_per_class + k;
            x[(i, 0)] = cx + noise.sample(&mut r);
            x[(i, 1)] = cy + noise.sample(&mut r);
            y[i] = (c + 1) as f64;
        }
    }
    let mut ds = Dataset::new(x, y)?;
    ds.label_kind = LabelKind::Multiclass;
    Ok(ds)
}
