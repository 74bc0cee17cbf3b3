//! Case-only observation records, CSV ingestion and overlap diagnostics.
//!
//! Every stored row is an observed case. The strain label `j` is only present
//! when the strain was sequenced (`delta = 1`); a missing strain is an empty
//! CSV cell, never a sentinel number.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Baseline covariates.
    pub w: Vec<f64>,
    /// Vaccinated before infection.
    pub a: bool,
    /// Infection time, strictly positive.
    pub t: f64,
    /// Post-vaccination covariates.
    pub w_post: Vec<f64>,
    /// Strain observed.
    pub delta: bool,
    /// Strain label, present iff `delta`.
    pub j: Option<bool>,
}

impl Observation {
    /// Builds a record, checking the per-row invariants. `row` is used in
    /// error messages only.
    pub fn new(
        row: usize,
        w: Vec<f64>,
        a: bool,
        t: f64,
        w_post: Vec<f64>,
        delta: bool,
        j: Option<bool>,
    ) -> Result<Self> {
        if !(t > 0.0) || !t.is_finite() {
            return Err(Error::NonPositiveTime { row, value: t });
        }
        match (delta, j) {
            (true, None) => return Err(Error::StrainAbsentWhenDeltaOne { row }),
            (false, Some(_)) => return Err(Error::StrainPresentWhenDeltaZero { row }),
            _ => {}
        }
        for (k, v) in w.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: format!("w_{}", k + 1),
                    value: v.to_string(),
                });
            }
        }
        for (k, v) in w_post.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    row,
                    column: format!("wt_{}", k + 1),
                    value: v.to_string(),
                });
            }
        }
        Ok(Self {
            w,
            a,
            t,
            w_post,
            delta,
            j,
        })
    }

    #[inline]
    pub fn a_f64(&self) -> f64 {
        if self.a {
            1.0
        } else {
            0.0
        }
    }

    #[inline]
    pub fn delta_f64(&self) -> f64 {
        if self.delta {
            1.0
        } else {
            0.0
        }
    }

    /// Strain label as a number; zero when unobserved (the `delta * j` coding).
    #[inline]
    pub fn j_f64(&self) -> f64 {
        match self.j {
            Some(true) => 1.0,
            _ => 0.0,
        }
    }

    /// Baseline covariates followed by infection time, the `(w, t)` input of
    /// the log odds-ratio model.
    pub fn wt_input(&self) -> Vec<f64> {
        let mut x = self.w.clone();
        x.push(self.t);
        x
    }

    /// `(w_post, t, a, w)`, the full conditioning set of the strain and
    /// missingness regressions.
    pub fn full_input(&self) -> Vec<f64> {
        let mut x = self.w_post.clone();
        x.push(self.t);
        x.push(self.a_f64());
        x.extend_from_slice(&self.w);
        x
    }
}

/// Immutable collection of case rows sharing covariate dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseOnlyDataset {
    rows: Vec<Observation>,
    d: usize,
    q: usize,
}

impl CaseOnlyDataset {
    pub fn new(rows: Vec<Observation>) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let (d, q) = (first.w.len(), first.w_post.len());
        for r in &rows {
            if r.w.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: r.w.len(),
                });
            }
            if r.w_post.len() != q {
                return Err(Error::DimensionMismatch {
                    expected: q,
                    got: r.w_post.len(),
                });
            }
        }
        Ok(Self { rows, d, q })
    }

    pub fn rows(&self) -> &[Observation] {
        &self.rows
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    /// Baseline dimension.
    pub fn d(&self) -> usize {
        self.d
    }

    /// Post-vaccination dimension.
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn observed_strain_rows(&self) -> impl Iterator<Item = &Observation> + Clone {
        self.rows.iter().filter(|r| r.delta)
    }

    /// Copy of the dataset with every post-vaccination covariate dropped.
    pub fn without_post_covariates(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| Observation {
                w_post: Vec::new(),
                ..r.clone()
            })
            .collect();
        Self {
            rows,
            d: self.d,
            q: 0,
        }
    }

    pub fn overlap(&self) -> OverlapReport {
        validate_overlap(self)
    }
}

/// Column names used to read and write case-only CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSpec {
    pub w: Vec<String>,
    pub a: String,
    pub t: String,
    pub w_post: Vec<String>,
    pub delta: String,
    pub j: String,
}

impl ColumnSpec {
    /// The default `w_1..w_d,a,t,wt_1..wt_q,delta,j` layout.
    pub fn standard(d: usize, q: usize) -> Self {
        Self {
            w: (1..=d).map(|k| format!("w_{k}")).collect(),
            a: "a".into(),
            t: "t".into(),
            w_post: (1..=q).map(|k| format!("wt_{k}")).collect(),
            delta: "delta".into(),
            j: "j".into(),
        }
    }

    /// Standard layout with `d` and `q` read off the `w_*` / `wt_*` columns of
    /// a header.
    pub fn infer(header: &[&str]) -> Self {
        let d = (1..)
            .take_while(|k| header.contains(&format!("w_{k}").as_str()))
            .count();
        let q = (1..)
            .take_while(|k| header.contains(&format!("wt_{k}").as_str()))
            .count();
        Self::standard(d, q)
    }

    fn header(&self) -> Vec<String> {
        let mut h = self.w.clone();
        h.push(self.a.clone());
        h.push(self.t.clone());
        h.extend(self.w_post.iter().cloned());
        h.push(self.delta.clone());
        h.push(self.j.clone());
        h
    }
}

fn parse_real(row: usize, column: &str, cell: &str) -> Result<f64> {
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::NonFinite {
            row,
            column: column.to_string(),
            value: cell.to_string(),
        }),
    }
}

fn parse_binary(row: usize, column: &str, cell: &str) -> Result<bool> {
    match cell.trim() {
        "0" | "0.0" => Ok(false),
        "1" | "1.0" => Ok(true),
        other => Err(Error::NonBinaryValue {
            row,
            column: column.to_string(),
            value: other.to_string(),
        }),
    }
}

/// Reads a case-only CSV. Row numbers in errors count data rows from 1.
pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSpec) -> Result<CaseOnlyDataset> {
    let reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    read_csv(reader, schema)
}

pub fn read_csv<R: std::io::Read>(
    mut reader: csv::Reader<R>,
    schema: &ColumnSpec,
) -> Result<CaseOnlyDataset> {
    let headers = reader.headers()?.clone();
    let index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let w_idx = schema
        .w
        .iter()
        .map(|c| index(c))
        .collect::<Result<Vec<_>>>()?;
    let wt_idx = schema
        .w_post
        .iter()
        .map(|c| index(c))
        .collect::<Result<Vec<_>>>()?;
    let (a_idx, t_idx, delta_idx, j_idx) = (
        index(&schema.a)?,
        index(&schema.t)?,
        index(&schema.delta)?,
        index(&schema.j)?,
    );

    let mut rows = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let row = k + 1;
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        let w = w_idx
            .iter()
            .zip(&schema.w)
            .map(|(&i, c)| parse_real(row, c, cell(i)))
            .collect::<Result<Vec<_>>>()?;
        let w_post = wt_idx
            .iter()
            .zip(&schema.w_post)
            .map(|(&i, c)| parse_real(row, c, cell(i)))
            .collect::<Result<Vec<_>>>()?;
        let a = parse_binary(row, &schema.a, cell(a_idx))?;
        let t = parse_real(row, &schema.t, cell(t_idx))?;
        let delta = parse_binary(row, &schema.delta, cell(delta_idx))?;
        let j_cell = cell(j_idx).trim();
        let j = if j_cell.is_empty() {
            None
        } else {
            Some(parse_binary(row, &schema.j, j_cell)?)
        };
        rows.push(Observation::new(row, w, a, t, w_post, delta, j)?);
    }
    CaseOnlyDataset::new(rows)
}

/// Writes a dataset with the given schema; values use the shortest
/// representation that round-trips exactly.
pub fn write_csv(
    ds: &CaseOnlyDataset,
    path: impl AsRef<Path>,
    schema: &ColumnSpec,
) -> Result<()> {
    let writer = csv::Writer::from_path(path)?;
    write_csv_to(ds, writer, schema)
}

pub fn write_csv_to<W: std::io::Write>(
    ds: &CaseOnlyDataset,
    mut writer: csv::Writer<W>,
    schema: &ColumnSpec,
) -> Result<()> {
    if schema.w.len() != ds.d() {
        return Err(Error::DimensionMismatch {
            expected: ds.d(),
            got: schema.w.len(),
        });
    }
    if schema.w_post.len() != ds.q() {
        return Err(Error::DimensionMismatch {
            expected: ds.q(),
            got: schema.w_post.len(),
        });
    }
    writer.write_record(schema.header())?;
    let bit = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    for r in ds.rows() {
        let mut rec: Vec<String> = r.w.iter().map(|v| v.to_string()).collect();
        rec.push(bit(r.a));
        rec.push(r.t.to_string());
        rec.extend(r.w_post.iter().map(|v| v.to_string()));
        rec.push(bit(r.delta));
        rec.push(r.j.map(bit).unwrap_or_default());
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

/// An `(a, delta)` cell with no cases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmptyCell {
    pub a: u8,
    pub delta: u8,
}

/// Per-arm case counts by strain-observation status.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// `counts[a][delta]`.
    pub counts: [[usize; 2]; 2],
    /// Empirical P(A = 1).
    pub p_vaccinated: f64,
    /// Empirical P(Delta = 1).
    pub p_observed: f64,
    pub empty_cells: Vec<EmptyCell>,
}

impl OverlapReport {
    /// Both arms present among strain-observed cases, which the unadjusted
    /// odds ratio needs.
    pub fn basic_estimable(&self) -> bool {
        self.counts[0][1] > 0 && self.counts[1][1] > 0
    }

    /// Same requirement for the adjusted odds ratio; both arms must also be
    /// present among all cases, which is implied.
    pub fn adjusted_estimable(&self) -> bool {
        self.basic_estimable()
    }
}

pub fn validate_overlap(ds: &CaseOnlyDataset) -> OverlapReport {
    let mut counts = [[0usize; 2]; 2];
    for r in ds.rows() {
        counts[r.a as usize][r.delta as usize] += 1;
    }
    let n = ds.n() as f64;
    let vaccinated = (counts[1][0] + counts[1][1]) as f64;
    let observed = (counts[0][1] + counts[1][1]) as f64;
    let mut empty_cells = Vec::new();
    for a in 0..2u8 {
        for delta in 0..2u8 {
            if counts[a as usize][delta as usize] == 0 {
                empty_cells.push(EmptyCell { a, delta });
            }
        }
    }
    OverlapReport {
        counts,
        p_vaccinated: vaccinated / n,
        p_observed: observed / n,
        empty_cells,
    }
}
