//! Dataset model, seeded splitting, and CSV ingestion/emission.
//!
//! The CSV layout is self-describing: feature columns `x0..x{d-1}` plus the
//! optional columns `a` (treatment), `y` (observed outcome), `y1`, `y0`
//! (potential outcomes) and `ite` (true individual effect).

use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Covariates with optional treatment, outcome and ground-truth columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Array2<f64>,
    treatment: Option<Vec<u8>>,
    outcome: Option<Vec<f64>>,
    y1: Option<Vec<f64>>,
    y0: Option<Vec<f64>>,
    true_ite: Option<Vec<f64>>,
}

/// Builder-style column set used to assemble a [`Dataset`].
#[derive(Debug, Clone, Default)]
pub struct Columns {
    pub treatment: Option<Vec<u8>>,
    pub outcome: Option<Vec<f64>>,
    pub y1: Option<Vec<f64>>,
    pub y0: Option<Vec<f64>>,
    pub true_ite: Option<Vec<f64>>,
}

impl Dataset {
    /// Validates and assembles a dataset. When both potential outcomes are
    /// present and `true_ite` is not, it is filled in as `y1 - y0`.
    pub fn new(features: Array2<f64>, cols: Columns) -> Result<Self> {
        let n = features.nrows();
        for ((row, col), v) in features.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    column: format!("x{col}"),
                    row,
                });
            }
        }
        check_len("a", cols.treatment.as_ref().map(Vec::len), n)?;
        check_len("y", cols.outcome.as_ref().map(Vec::len), n)?;
        check_len("y1", cols.y1.as_ref().map(Vec::len), n)?;
        check_len("y0", cols.y0.as_ref().map(Vec::len), n)?;
        check_len("ite", cols.true_ite.as_ref().map(Vec::len), n)?;
        if let Some(a) = &cols.treatment {
            if let Some((row, &v)) = a.iter().enumerate().find(|(_, &v)| v > 1) {
                return Err(Error::InvalidTreatment {
                    row,
                    value: f64::from(v),
                });
            }
        }
        for (name, col) in [
            ("y", &cols.outcome),
            ("y1", &cols.y1),
            ("y0", &cols.y0),
            ("ite", &cols.true_ite),
        ] {
            if let Some(c) = col {
                if let Some(row) = c.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        column: name.to_string(),
                        row,
                    });
                }
            }
        }

        let true_ite = match (&cols.y1, &cols.y0, cols.true_ite) {
            (Some(y1), Some(y0), None) => Some(y1.iter().zip(y0).map(|(a, b)| a - b).collect()),
            (Some(y1), Some(y0), Some(ite)) => {
                for (row, ((a, b), t)) in y1.iter().zip(y0).zip(&ite).enumerate() {
                    let diff = a - b;
                    if (diff - t).abs() > 1e-9 * (1.0 + diff.abs()) {
                        return Err(Error::Shape(format!(
                            "ite at row {row} is {t} but y1 - y0 = {diff}"
                        )));
                    }
                }
                Some(ite)
            }
            (_, _, ite) => ite,
        };

        Ok(Self {
            features,
            treatment: cols.treatment,
            outcome: cols.outcome,
            y1: cols.y1,
            y0: cols.y0,
            true_ite,
        })
    }

    /// Features-only dataset.
    pub fn from_features(features: Array2<f64>) -> Result<Self> {
        Self::new(features, Columns::default())
    }

    pub fn n(&self) -> usize {
        self.features.nrows()
    }

    pub fn d(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn treatment(&self) -> Option<&[u8]> {
        self.treatment.as_deref()
    }

    pub fn outcome(&self) -> Option<&[f64]> {
        self.outcome.as_deref()
    }

    pub fn y1(&self) -> Option<&[f64]> {
        self.y1.as_deref()
    }

    pub fn y0(&self) -> Option<&[f64]> {
        self.y0.as_deref()
    }

    pub fn true_ite(&self) -> Option<&[f64]> {
        self.true_ite.as_deref()
    }

    pub fn require_treatment(&self) -> Result<&[u8]> {
        self.treatment()
            .ok_or_else(|| Error::MissingData("treatment column `a`".into()))
    }

    pub fn require_outcome(&self) -> Result<&[f64]> {
        self.outcome()
            .ok_or_else(|| Error::MissingData("outcome column `y`".into()))
    }

    /// Row-restricted copy; column presence is preserved.
    pub fn subset(&self, idx: &[usize]) -> Result<Self> {
        let n = self.n();
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: bad, len: n });
        }
        fn pick<T: Copy>(v: &Option<Vec<T>>, idx: &[usize]) -> Option<Vec<T>> {
            v.as_ref().map(|v| idx.iter().map(|&i| v[i]).collect())
        }
        Ok(Self {
            features: self.features.select(Axis(0), idx),
            treatment: pick(&self.treatment, idx),
            outcome: pick(&self.outcome, idx),
            y1: pick(&self.y1, idx),
            y0: pick(&self.y0, idx),
            true_ite: pick(&self.true_ite, idx),
        })
    }
}

fn check_len(name: &str, len: Option<usize>, n: usize) -> Result<()> {
    match len {
        Some(l) if l != n => Err(Error::Shape(format!(
            "column `{name}` has {l} rows, features have {n}"
        ))),
        _ => Ok(()),
    }
}

/// Disjoint index sets produced by [`split_random`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndex {
    pub parts: Vec<Vec<usize>>,
    pub seed: u64,
}

/// Uniformly random partition of `0..n` into parts sized by `fractions`.
///
/// Part sizes are `floor(n * f)` with the leftover rows handed to the parts
/// with the largest fractional remainders (lowest index first on ties).
/// Each part is returned in ascending order.
pub fn split_random(n: usize, fractions: &[f64], seed: u64) -> Result<SplitIndex> {
    if fractions.is_empty() || fractions.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::InvalidArgument(
            "fractions must be non-empty and positive".into(),
        ));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!(
            "fractions sum to {total}, expected 1"
        )));
    }
    if n < fractions.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} rows into {} parts",
            fractions.len()
        )));
    }

    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = sizes.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &p in order.iter().take(n.saturating_sub(assigned)) {
        sizes[p] += 1;
    }

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::rng(seed));
    let mut parts = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for s in sizes {
        let mut part = perm[start..start + s].to_vec();
        part.sort_unstable();
        parts.push(part);
        start += s;
    }
    Ok(SplitIndex { parts, seed })
}

/// Column names bound by [`load_csv`]. `features: None` selects every column
/// named `x<k>`, ordered by `k`.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub features: Option<Vec<String>>,
    pub treatment: String,
    pub outcome: String,
    pub y1: String,
    pub y0: String,
    pub ite: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            features: None,
            treatment: "a".into(),
            outcome: "y".into(),
            y1: "y1".into(),
            y0: "y0".into(),
            ite: "ite".into(),
        }
    }
}

fn parse_cell(raw: &str, column: &str, row: usize) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::NonNumeric {
        column: column.to_string(),
        row,
        value: raw.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            column: column.to_string(),
            row,
        });
    }
    Ok(v)
}

/// Reads a dataset from a headered CSV file.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let feature_cols: Vec<(String, usize)> = match &schema.features {
        Some(names) => names
            .iter()
            .map(|n| find(n).map(|i| (n.clone(), i)).ok_or_else(|| Error::MissingColumn(n.clone())))
            .collect::<Result<_>>()?,
        None => {
            let mut cols: Vec<(usize, String, usize)> = headers
                .iter()
                .enumerate()
                .filter_map(|(i, h)| {
                    let k = h.strip_prefix('x')?.parse::<usize>().ok()?;
                    Some((k, h.clone(), i))
                })
                .collect();
            cols.sort_by_key(|c| c.0);
            cols.into_iter().map(|(_, h, i)| (h, i)).collect()
        }
    };

    let opt = |name: &str| find(name).map(|i| (name.to_string(), i));
    let a_col = opt(&schema.treatment);
    let y_col = opt(&schema.outcome);
    let y1_col = opt(&schema.y1);
    let y0_col = opt(&schema.y0);
    let ite_col = opt(&schema.ite);

    let d = feature_cols.len();
    let mut feats = Vec::new();
    let mut a = a_col.as_ref().map(|_| Vec::new());
    let mut y = y_col.as_ref().map(|_| Vec::new());
    let mut y1 = y1_col.as_ref().map(|_| Vec::new());
    let mut y0 = y0_col.as_ref().map(|_| Vec::new());
    let mut ite = ite_col.as_ref().map(|_| Vec::new());

    let mut n = 0;
    for (row, rec) in reader.records().enumerate() {
        let rec = rec?;
        let cell = |(name, i): &(String, usize)| -> Result<f64> {
            parse_cell(rec.get(*i).unwrap_or(""), name, row)
        };
        for c in &feature_cols {
            feats.push(cell(c)?);
        }
        if let (Some(c), Some(out)) = (&a_col, a.as_mut()) {
            let v = cell(c)?;
            if v != 0.0 && v != 1.0 {
                return Err(Error::InvalidTreatment { row, value: v });
            }
            out.push(v as u8);
        }
        for (c, out) in [(&y_col, &mut y), (&y1_col, &mut y1), (&y0_col, &mut y0), (&ite_col, &mut ite)] {
            if let (Some(c), Some(out)) = (c, out.as_mut()) {
                out.push(cell(c)?);
            }
        }
        n += 1;
    }

    let features = Array2::from_shape_vec((n, d), feats).map_err(|e| Error::Shape(e.to_string()))?;
    Dataset::new(
        features,
        Columns {
            treatment: a,
            outcome: y,
            y1,
            y0,
            true_ite: ite,
        },
    )
}

/// Writes a dataset using the default column names. Values are written in
/// shortest round-trip form, so `load_csv` recovers them exactly.
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    write_csv_with(ds, &[], path)
}

/// Like [`write_csv`], with `appended` columns after the dataset's own.
pub fn write_csv_with(ds: &Dataset, appended: &[(&str, &[f64])], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some((name, col)) = appended.iter().find(|(_, c)| c.len() != ds.n()) {
        return Err(Error::Shape(format!("column {name} has {} values for {} rows", col.len(), ds.n())));
    }
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut w = csv::Writer::from_writer(file);
    let mut header: Vec<String> = (0..ds.d()).map(|j| format!("x{j}")).collect();
    let treatment: Option<Vec<f64>> = ds.treatment().map(|a| a.iter().map(|&v| f64::from(v)).collect());
    let mut extra: Vec<(&str, &[f64])> = [
        ("a", treatment.as_deref()),
        ("y", ds.outcome()),
        ("y1", ds.y1()),
        ("y0", ds.y0()),
        ("ite", ds.true_ite()),
    ]
    .into_iter()
    .filter_map(|(name, col)| col.map(|c| (name, c)))
    .collect();
    extra.extend_from_slice(appended);
    header.extend(extra.iter().map(|c| c.0.to_string()));
    w.write_record(&header)?;
    for i in 0..ds.n() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
        rec.extend(extra.iter().map(|(_, c)| c[i].to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}
