//! Time-series datasets, CSV ingestion, and the stacked regressor matrices.
//!
//! CSV layout: one header row, then one row per period and one column per
//! variable. The first `p` rows of the endogenous file are the presample
//! `y_{1-p}, ..., y_0`.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Raw endogenous/exogenous series with their presample.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    endogenous: DMatrix<f64>,
    presample: DMatrix<f64>,
    exogenous: DMatrix<f64>,
    lag_order: usize,
}

impl TimeSeriesDataset {
    /// `endogenous` is `n x T` (columns `y_1..y_T`), `presample` is `n x p`
    /// (columns `y_{1-p}..y_0`), `exogenous` is `l x T` with a first row of
    /// ones.
    pub fn new(
        endogenous: DMatrix<f64>,
        presample: DMatrix<f64>,
        exogenous: DMatrix<f64>,
    ) -> Result<Self> {
        let n = endogenous.nrows();
        let t = endogenous.ncols();
        let p = presample.ncols();
        if n == 0 {
            return Err(Error::Dimension("no endogenous variables".into()));
        }
        if t == 0 {
            return Err(Error::Dimension("need at least one observation after the presample".into()));
        }
        if presample.nrows() != n && p > 0 {
            return Err(Error::Dimension(format!(
                "presample has {} rows, expected {n}",
                presample.nrows()
            )));
        }
        if exogenous.ncols() != t {
            return Err(Error::Dimension(format!(
                "exogenous block has {} periods, expected {t}",
                exogenous.ncols()
            )));
        }
        if exogenous.nrows() == 0 || exogenous.row(0).iter().any(|&v| v != 1.0) {
            return Err(Error::Dimension(
                "first exogenous row must be the constant 1".into(),
            ));
        }
        for (name, m) in [
            ("endogenous series", &endogenous),
            ("presample", &presample),
            ("exogenous series", &exogenous),
        ] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(name.to_string()));
            }
        }
        let presample = if p == 0 {
            DMatrix::zeros(n, 0)
        } else {
            presample
        };
        Ok(Self {
            endogenous,
            presample,
            exogenous,
            lag_order: p,
        })
    }

    /// Intercept-only exogenous block.
    pub fn intercept_only(endogenous: DMatrix<f64>, presample: DMatrix<f64>) -> Result<Self> {
        let t = endogenous.ncols();
        Self::new(endogenous, presample, DMatrix::from_element(1, t, 1.0))
    }

    pub fn n(&self) -> usize {
        self.endogenous.nrows()
    }

    pub fn l(&self) -> usize {
        self.exogenous.nrows()
    }

    pub fn p(&self) -> usize {
        self.lag_order
    }

    pub fn t_len(&self) -> usize {
        self.endogenous.ncols()
    }

    pub fn d(&self) -> usize {
        self.l() + self.n() * self.p()
    }

    pub fn endogenous(&self) -> &DMatrix<f64> {
        &self.endogenous
    }

    pub fn presample(&self) -> &DMatrix<f64> {
        &self.presample
    }

    pub fn exogenous(&self) -> &DMatrix<f64> {
        &self.exogenous
    }

    /// `y_s` for `s` in `1-p ..= T` (1-based time index as in the model).
    pub fn observation(&self, s: isize) -> DVector<f64> {
        let p = self.lag_order as isize;
        if s <= 0 {
            self.presample.column((s + p - 1) as usize).into_owned()
        } else {
            self.endogenous.column((s - 1) as usize).into_owned()
        }
    }
}

/// Stacked observations `y° (n x T)` and regressors `Y° (d x T)` where
/// column `t` of `Y°` is `(ψ_t', y_{t-1}', ..., y_{t-p}')'`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub y_stack: DMatrix<f64>,
    pub regressors: DMatrix<f64>,
    n: usize,
    l: usize,
    p: usize,
}

impl DesignMatrices {
    /// Assemble a design directly from stacked matrices.
    pub fn from_parts(y_stack: DMatrix<f64>, regressors: DMatrix<f64>, l: usize, p: usize) -> Result<Self> {
        let n = y_stack.nrows();
        if regressors.nrows() != l + n * p || regressors.ncols() != y_stack.ncols() {
            return Err(Error::Dimension(format!(
                "regressors are {}x{}, expected {}x{}",
                regressors.nrows(),
                regressors.ncols(),
                l + n * p,
                y_stack.ncols()
            )));
        }
        if y_stack.ncols() == 0 || n == 0 {
            return Err(Error::Dimension("empty design".into()));
        }
        Ok(Self {
            y_stack,
            regressors,
            n,
            l,
            p,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn d(&self) -> usize {
        self.l + self.n * self.p
    }

    pub fn t_len(&self) -> usize {
        self.y_stack.ncols()
    }

    /// `Y_t` for 0-based period index `t`.
    pub fn regressor(&self, t: usize) -> DVector<f64> {
        self.regressors.column(t).into_owned()
    }

    /// `y_t` for 0-based period index `t`.
    pub fn observation(&self, t: usize) -> DVector<f64> {
        self.y_stack.column(t).into_owned()
    }

    /// Design restricted to periods `range` (0-based, half open).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.t_len() {
            return Err(Error::Dimension(format!(
                "invalid period range {start}..{end} for T = {}",
                self.t_len()
            )));
        }
        Self::from_parts(
            self.y_stack.columns(start, end - start).into_owned(),
            self.regressors.columns(start, end - start).into_owned(),
            self.l,
            self.p,
        )
    }
}

pub fn build_design(data: &TimeSeriesDataset) -> DesignMatrices {
    let (n, l, p, t_len) = (data.n(), data.l(), data.p(), data.t_len());
    let d = l + n * p;
    let mut regressors = DMatrix::zeros(d, t_len);
    for t in 0..t_len {
        regressors
            .view_mut((0, t), (l, 1))
            .copy_from(&data.exogenous.column(t));
        for lag in 1..=p {
            let y = data.observation(t as isize + 1 - lag as isize);
            regressors
                .view_mut((l + (lag - 1) * n, t), (n, 1))
                .copy_from(&y);
        }
    }
    DesignMatrices {
        y_stack: data.endogenous.clone(),
        regressors,
        n,
        l,
        p,
    }
}

/// Header and numeric body (`rows x columns`) of a CSV file.
#[derive(Debug, Clone)]
pub struct CsvTable {
    pub headers: Vec<String>,
    pub rows: DMatrix<f64>,
}

pub fn read_csv_table(path: &Path) -> Result<CsvTable> {
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::Io {
                path: path.to_path_buf(),
                source,
            },
            other => parse_err(format!("{other:?}")),
        })?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| parse_err(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let cols = headers.len();
    let mut values = Vec::new();
    let mut nrows = 0;
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_err(e.to_string()))?;
        if record.len() != cols {
            return Err(parse_err(format!(
                "row {} has {} fields, header has {cols}",
                i + 2,
                record.len()
            )));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                parse_err(format!("row {}, column {}: not a number: {field:?}", i + 2, j + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{} (row {}, column {})",
                    path.display(),
                    i + 2,
                    j + 1
                )));
            }
            values.push(v);
        }
        nrows += 1;
    }
    Ok(CsvTable {
        headers,
        rows: DMatrix::from_row_slice(nrows, cols, &values),
    })
}

/// Load a dataset from CSV.
///
/// The first `p` endogenous rows become the presample. The exogenous file
/// may have either as many rows as the endogenous file (its first `p` rows
/// are then dropped) or exactly `rows - p`. A column of ones is moved to the
/// front, or prepended when none exists. Without an exogenous file the
/// model is intercept-only.
pub fn load_dataset(
    endogenous_path: &Path,
    exogenous_path: Option<&Path>,
    p: usize,
) -> Result<TimeSeriesDataset> {
    let endo = read_csv_table(endogenous_path)?.rows;
    let total = endo.nrows();
    if total <= p {
        return Err(Error::Dimension(format!(
            "{} has {total} rows; need more than p = {p}",
            endogenous_path.display()
        )));
    }
    let t_len = total - p;
    let series = endo.transpose();
    let presample = series.columns(0, p).into_owned();
    let endogenous = series.columns(p, t_len).into_owned();

    let exogenous = match exogenous_path {
        None => DMatrix::from_element(1, t_len, 1.0),
        Some(path) => {
            let exo = read_csv_table(path)?.rows;
            let body = if exo.nrows() == total {
                exo.rows(p, t_len).into_owned()
            } else if exo.nrows() == t_len {
                exo
            } else {
                return Err(Error::Dimension(format!(
                    "{} has {} rows, expected {total} or {t_len}",
                    path.display(),
                    exo.nrows()
                )));
            };
            with_leading_constant(body.transpose())
        }
    };
    TimeSeriesDataset::new(endogenous, presample, exogenous)
}

/// Ensure the first row of an `l x T` exogenous block is all ones.
fn with_leading_constant(exo: DMatrix<f64>) -> DMatrix<f64> {
    let const_row = (0..exo.nrows()).find(|&i| exo.row(i).iter().all(|&v| v == 1.0));
    match const_row {
        Some(0) => exo,
        Some(i) => {
            let mut order: Vec<usize> = vec![i];
            order.extend((0..exo.nrows()).filter(|&k| k != i));
            DMatrix::from_fn(exo.nrows(), exo.ncols(), |r, c| exo[(order[r], c)])
        }
        None => exo.insert_row(0, 1.0),
    }
}

fn write_table(path: &Path, headers: &[String], rows: &DMatrix<f64>) -> Result<()> {
    let io_err = |e: csv::Error| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io_err)?;
    w.write_record(headers).map_err(io_err)?;
    for r in 0..rows.nrows() {
        w.write_record(rows.row(r).iter().map(|v| format!("{v:?}")))
            .map_err(io_err)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Write a dataset in the layout [`load_dataset`] reads back.
///
/// The endogenous file holds presample and sample rows; the exogenous file
/// (only written when `l > 1`) holds the `T` sample rows including the
/// constant column. Returns the path of the exogenous file if written.
pub fn write_dataset(
    data: &TimeSeriesDataset,
    endogenous_path: &Path,
    exogenous_path: &Path,
) -> Result<Option<PathBuf>> {
    let n = data.n();
    let all = DMatrix::from_fn(data.p() + data.t_len(), n, |r, c| {
        data.observation(r as isize + 1 - data.p() as isize)[c]
    });
    let headers: Vec<String> = (1..=n).map(|i| format!("y{i}")).collect();
    write_table(endogenous_path, &headers, &all)?;
    if data.l() > 1 {
        let mut headers = vec!["const".to_string()];
        headers.extend((2..=data.l()).map(|j| format!("x{j}")));
        write_table(exogenous_path, &headers, &data.exogenous.transpose())?;
        Ok(Some(exogenous_path.to_path_buf()))
    } else {
        Ok(None)
    }
}
