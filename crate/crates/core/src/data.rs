//! Observational datasets, scored datasets, their CSV formats, and splits.
//!
//! Dataset files are CSV with header `x0,...,x{d-1},t,y`; scored files use
//! `x0,...,x{d-1},psi`. Values are written with Rust's shortest round-trip
//! float formatting, so `write(load(f))` reproduces any file this module
//! wrote.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::DenseMatrix;
use crate::rng::RngStream;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("no rows")]
    NoRows,
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("unexpected header: {0}")]
    BadHeader(String),
    #[error("row {row}: column `{column}` is not numeric: `{value}`")]
    NonNumeric { row: usize, column: String, value: String },
    #[error("row {row}: column `{column}` is not finite")]
    NonFinite { row: usize, column: String },
    #[error("row {row}: treatment must be -1 or +1, got {value}")]
    BadTreatment { row: usize, value: f64 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("split fraction {0} out of range")]
    BadFraction(f64),
    #[error("split fractions sum to {0} > 1")]
    FractionsTooLarge(f64),
}

/// Rows of `(x, t, y)` with `t` in `{-1, +1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DenseMatrix,
    t: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: DenseMatrix, t: Vec<f64>, y: Vec<f64>) -> Result<Self, DataError> {
        let n = x.rows();
        if t.len() != n || y.len() != n {
            return Err(DataError::LengthMismatch(format!(
                "x has {n} rows, t has {}, y has {}",
                t.len(),
                y.len()
            )));
        }
        for (i, &ti) in t.iter().enumerate() {
            if ti != 1.0 && ti != -1.0 {
                return Err(DataError::BadTreatment { row: i + 1, value: ti });
            }
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: i + 1,
                column: "y".into(),
            });
        }
        Ok(Self { x, t, y })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(idx),
            t: idx.iter().map(|&i| self.t[i]).collect(),
            y: idx.iter().map(|&i| self.y[i]).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    Ips,
    Dm,
    Dr,
    /// Scores supplied directly rather than computed from nuisances.
    Given,
}

/// Contexts paired with per-row scores `psi_hat`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredDataset {
    x: DenseMatrix,
    t: Option<Vec<f64>>,
    y: Option<Vec<f64>>,
    psi: Vec<f64>,
    kind: ScoreKind,
    clipped_rows: usize,
}

impl ScoredDataset {
    pub fn given(x: DenseMatrix, psi: Vec<f64>) -> Result<Self, DataError> {
        Self::build(x, None, None, psi, ScoreKind::Given, 0)
    }

    pub(crate) fn build(
        x: DenseMatrix,
        t: Option<Vec<f64>>,
        y: Option<Vec<f64>>,
        psi: Vec<f64>,
        kind: ScoreKind,
        clipped_rows: usize,
    ) -> Result<Self, DataError> {
        if psi.len() != x.rows() {
            return Err(DataError::LengthMismatch(format!(
                "x has {} rows, psi has {}",
                x.rows(),
                psi.len()
            )));
        }
        if let Some(i) = psi.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: i + 1,
                column: "psi".into(),
            });
        }
        Ok(Self {
            x,
            t,
            y,
            psi,
            kind,
            clipped_rows,
        })
    }

    pub fn n(&self) -> usize {
        self.x.rows()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn x(&self) -> &DenseMatrix {
        &self.x
    }

    pub fn psi(&self) -> &[f64] {
        &self.psi
    }

    pub fn t(&self) -> Option<&[f64]> {
        self.t.as_deref()
    }

    pub fn y(&self) -> Option<&[f64]> {
        self.y.as_deref()
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    /// Rows whose propensity estimate hit the clipping floor.
    pub fn clipped_rows(&self) -> usize {
        self.clipped_rows
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        let pick = |v: &Vec<f64>| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            x: self.x.select_rows(idx),
            t: self.t.as_ref().map(pick),
            y: self.y.as_ref().map(pick),
            psi: pick(&self.psi),
            kind: self.kind,
            clipped_rows: self.clipped_rows,
        }
    }

    /// Empirical policy value `mean(psi * sign(g(x)))` and its standard error.
    pub fn policy_value(&self, mut g: impl FnMut(&[f64]) -> f64) -> (f64, f64) {
        let vals: Vec<f64> = self
            .x
            .iter_rows()
            .zip(&self.psi)
            .map(|(x, &p)| if g(x) > 0.0 { p } else { -p })
            .collect();
        crate::stats::mean_and_se(&vals)
    }
}

/// Expected CSV layout; `covariates: None` infers the count from the header.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Schema {
    pub covariates: Option<usize>,
}

fn parse_header(headers: &csv::StringRecord, schema: &Schema, tail: &[&str]) -> Result<usize, DataError> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    for col in tail {
        if !names.contains(col) {
            return Err(DataError::MissingColumn((*col).into()));
        }
    }
    if names.len() < tail.len() {
        return Err(DataError::BadHeader(names.join(",")));
    }
    let d = names.len() - tail.len();
    if let Some(expected) = schema.covariates {
        if expected > d {
            return Err(DataError::MissingColumn(format!("x{d}")));
        }
        if expected < d {
            return Err(DataError::BadHeader(names.join(",")));
        }
    }
    for (k, name) in names[..d].iter().enumerate() {
        if *name != format!("x{k}") {
            return Err(DataError::MissingColumn(format!("x{k}")));
        }
    }
    if &names[d..] != tail {
        return Err(DataError::BadHeader(names.join(",")));
    }
    Ok(d)
}

fn parse_cell(raw: &str, row: usize, column: String) -> Result<f64, DataError> {
    let v: f64 = raw.trim().parse().map_err(|_| DataError::NonNumeric {
        row,
        column: column.clone(),
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(DataError::NonFinite { row, column });
    }
    Ok(v)
}

fn column_name(k: usize, d: usize, tail: &[&str]) -> String {
    if k < d {
        format!("x{k}")
    } else {
        tail[k - d].to_string()
    }
}

/// Parses rows into `(x rows flattened, tail columns)`.
fn read_table<R: Read>(
    reader: R,
    schema: &Schema,
    tail: &[&str],
) -> Result<(usize, usize, Vec<f64>, Vec<Vec<f64>>), DataError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = match rdr.headers() {
        Ok(h) if !h.is_empty() && !(h.len() == 1 && h[0].trim().is_empty()) => h.clone(),
        _ => return Err(DataError::NoRows),
    };
    let d = parse_header(&headers, schema, tail)?;
    let mut xs = Vec::new();
    let mut cols = vec![Vec::new(); tail.len()];
    let mut n = 0;
    for (i, rec) in rdr.records().enumerate() {
        let row = i + 1;
        let rec = rec?;
        if rec.len() != d + tail.len() {
            return Err(DataError::LengthMismatch(format!(
                "row {row} has {} fields, expected {}",
                rec.len(),
                d + tail.len()
            )));
        }
        for (k, raw) in rec.iter().enumerate() {
            let v = parse_cell(raw, row, column_name(k, d, tail))?;
            if k < d {
                xs.push(v);
            } else {
                cols[k - d].push(v);
            }
        }
        n += 1;
    }
    if n == 0 {
        return Err(DataError::NoRows);
    }
    Ok((n, d, xs, cols))
}

pub fn read_dataset<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, DataError> {
    let (n, d, xs, mut cols) = read_table(reader, schema, &["t", "y"])?;
    let y = cols.pop().unwrap_or_default();
    let t = cols.pop().unwrap_or_default();
    let x = DenseMatrix::from_vec(n, d, xs).map_err(|e| DataError::LengthMismatch(e.to_string()))?;
    Dataset::new(x, t, y)
}

pub fn load_dataset(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset, DataError> {
    read_dataset(File::open(path)?, schema)
}

pub fn read_scored<R: Read>(reader: R, schema: &Schema) -> Result<ScoredDataset, DataError> {
    let (n, d, xs, mut cols) = read_table(reader, schema, &["psi"])?;
    let psi = cols.pop().unwrap_or_default();
    let x = DenseMatrix::from_vec(n, d, xs).map_err(|e| DataError::LengthMismatch(e.to_string()))?;
    ScoredDataset::given(x, psi)
}

pub fn load_scored(path: impl AsRef<Path>, schema: &Schema) -> Result<ScoredDataset, DataError> {
    read_scored(File::open(path)?, schema)
}

fn write_table<W: Write>(
    writer: W,
    x: &DenseMatrix,
    tail: &[&str],
    cols: &[&[f64]],
    integer_first_tail: bool,
) -> Result<(), DataError> {
    let mut wtr = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header: Vec<String> = (0..x.cols()).map(|k| format!("x{k}")).collect();
    header.extend(tail.iter().map(|s| s.to_string()));
    wtr.write_record(&header)?;
    let mut fields = Vec::with_capacity(header.len());
    for (i, row) in x.iter_rows().enumerate() {
        fields.clear();
        fields.extend(row.iter().map(|v| v.to_string()));
        for (k, col) in cols.iter().enumerate() {
            if k == 0 && integer_first_tail {
                fields.push(format!("{}", col[i] as i64));
            } else {
                fields.push(col[i].to_string());
            }
        }
        wtr.write_record(&fields)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_dataset<W: Write>(writer: W, data: &Dataset) -> Result<(), DataError> {
    write_table(writer, &data.x, &["t", "y"], &[&data.t, &data.y], true)
}

pub fn save_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<(), DataError> {
    write_dataset(File::create(path)?, data)
}

pub fn write_scored<W: Write>(writer: W, data: &ScoredDataset) -> Result<(), DataError> {
    write_table(writer, &data.x, &["psi"], &[&data.psi], false)
}

pub fn save_scored(path: impl AsRef<Path>, data: &ScoredDataset) -> Result<(), DataError> {
    write_scored(File::create(path)?, data)
}

/// Disjoint index sets drawn from one seeded permutation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub parts: Vec<Vec<usize>>,
    pub seed: u64,
}

impl SplitPlan {
    /// Part `k` takes `floor(fractions[k] * n)` indices; each part is sorted.
    pub fn new(n: usize, fractions: &[f64], seed: u64) -> Result<Self, DataError> {
        let mut total = 0.0;
        for &f in fractions {
            if !(0.0..=1.0).contains(&f) {
                return Err(DataError::BadFraction(f));
            }
            total += f;
        }
        if total > 1.0 + 1e-12 {
            return Err(DataError::FractionsTooLarge(total));
        }
        let perm = RngStream::new(seed, "split").permutation(n);
        let mut parts = Vec::with_capacity(fractions.len());
        let mut start = 0;
        for &f in fractions {
            let len = ((f * n as f64) + 1e-9).floor() as usize;
            let len = len.min(n - start);
            let mut part = perm[start..start + len].to_vec();
            part.sort_unstable();
            parts.push(part);
            start += len;
        }
        Ok(Self { parts, seed })
    }

    pub fn train(&self) -> &[usize] {
        self.parts.first().map_or(&[], Vec::as_slice)
    }

    pub fn tuning(&self) -> &[usize] {
        self.parts.get(1).map_or(&[], Vec::as_slice)
    }

    pub fn validation(&self) -> &[usize] {
        self.parts.get(2).map_or(&[], Vec::as_slice)
    }
}

pub fn split(data: &Dataset, fractions: &[f64], seed: u64) -> Result<SplitPlan, DataError> {
    SplitPlan::new(data.n(), fractions, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> &'static str {
        "x0,x1,t,y\n0.5,1,1,2.25\n-1,0.125,-1,0\n3,-2,1,-7.5\n"
    }

    #[test]
    fn loads_three_rows() {
        let d = read_dataset(sample().as_bytes(), &Schema::default()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.dim(), 2);
        assert_eq!(d.t(), &[1.0, -1.0, 1.0]);
        assert_eq!(d.x().row(1), &[-1.0, 0.125]);
    }

    #[test]
    fn bad_treatment_cites_row() {
        let csv = "x0,x1,t,y\n0,0,1,1\n0,0,0,1\n";
        match read_dataset(csv.as_bytes(), &Schema::default()) {
            Err(DataError::BadTreatment { row: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_has_no_rows() {
        let err = read_dataset("".as_bytes(), &Schema::default()).unwrap_err();
        assert_eq!(err.to_string(), "no rows");
        let err = read_dataset("x0,t,y\n".as_bytes(), &Schema::default()).unwrap_err();
        assert_eq!(err.to_string(), "no rows");
    }

    #[test]
    fn missing_and_non_numeric_columns() {
        let err = read_dataset("x0,x1,y\n1,2,3\n".as_bytes(), &Schema::default()).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "t"));
        let err = read_dataset("x0,t,y\n1,1,abc\n".as_bytes(), &Schema::default()).unwrap_err();
        assert!(matches!(err, DataError::NonNumeric { row: 1, ref column, .. } if column == "y"));
        let err = read_dataset("x0,t,y\n1,1,inf\n".as_bytes(), &Schema::default()).unwrap_err();
        assert!(matches!(err, DataError::NonFinite { row: 1, .. }));
        let err = read_dataset(sample().as_bytes(), &Schema { covariates: Some(3) }).unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(ref c) if c == "x2"));
    }

    #[test]
    fn written_file_round_trips_bytes() {
        let d = read_dataset(sample().as_bytes(), &Schema::default()).unwrap();
        let mut out = Vec::new();
        write_dataset(&mut out, &d).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), sample());
    }

    #[test]
    fn split_is_disjoint_and_deterministic() {
        let a = SplitPlan::new(10, &[0.5, 0.5], 7).unwrap();
        let b = SplitPlan::new(10, &[0.5, 0.5], 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train().len(), 5);
        assert_eq!(a.tuning().len(), 5);
        assert!(a.train().iter().all(|i| !a.tuning().contains(i)));
        assert!(matches!(
            SplitPlan::new(10, &[0.8, 0.8], 7),
            Err(DataError::FractionsTooLarge(_))
        ));
        assert!(matches!(SplitPlan::new(10, &[1.5], 7), Err(DataError::BadFraction(_))));
    }

    proptest! {
        #[test]
        fn dataset_csv_round_trip(
            rows in proptest::collection::vec(
                (-1e6f64..1e6, -1e3f64..1e3, any::<bool>(), -1e9f64..1e9), 1..40)
        ) {
            let n = rows.len();
            let x = DenseMatrix::from_vec(n, 2, rows.iter().flat_map(|r| [r.0, r.1]).collect()).unwrap();
            let t = rows.iter().map(|r| if r.2 { 1.0 } else { -1.0 }).collect();
            let y = rows.iter().map(|r| r.3).collect();
            let d = Dataset::new(x, t, y).unwrap();
            let mut bytes = Vec::new();
            write_dataset(&mut bytes, &d).unwrap();
            let back = read_dataset(bytes.as_slice(), &Schema::default()).unwrap();
            prop_assert_eq!(&back, &d);
            let mut again = Vec::new();
            write_dataset(&mut again, &back).unwrap();
            prop_assert_eq!(again, bytes);
        }

        #[test]
        fn scored_csv_round_trip(psi in proptest::collection::vec(-1e3f64..1e3, 1..30)) {
            let n = psi.len();
            let x = DenseMatrix::from_vec(n, 1, (0..n).map(|i| i as f64 * 0.1).collect()).unwrap();
            let s = ScoredDataset::given(x, psi).unwrap();
            let mut bytes = Vec::new();
            write_scored(&mut bytes, &s).unwrap();
            let back = read_scored(bytes.as_slice(), &Schema::default()).unwrap();
            prop_assert_eq!(back, s);
        }
    }
}
