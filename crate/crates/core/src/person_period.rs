//! Person-period training tables.
//!
//! Every builder emits rows `(id, y, x(t), u, t)` for subjects at risk at
//! `u`, where `y = 1` iff the subject's event was observed exactly at `u`.
//! Rows are ordered by `(t, u, id)`. The schema records which of `u` and `t`
//! are model features; covariates always are.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::survival_data::GenericDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersonPeriodRow {
    pub id: u64,
    pub y: bool,
    /// Covariate snapshot at `t` (or at 0 for the baseline-only table).
    pub features: Vec<f64>,
    pub u: usize,
    pub t: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSchema {
    pub covariates: Vec<String>,
    pub include_u: bool,
    pub include_t: bool,
}

impl TableSchema {
    pub fn num_features(&self) -> usize {
        self.covariates.len() + usize::from(self.include_u) + usize::from(self.include_t)
    }

    /// Model feature names: covariates, then `u`, then `t`.
    pub fn feature_names(&self) -> Vec<String> {
        let mut names = self.covariates.clone();
        if self.include_u {
            names.push("u".to_string());
        }
        if self.include_t {
            names.push("t".to_string());
        }
        names
    }

    /// Appends the model feature vector for a snapshot queried at `(t, u)`.
    pub fn assemble_into(&self, snapshot: &[f64], u: usize, t: usize, out: &mut Vec<f64>) {
        out.extend_from_slice(snapshot);
        if self.include_u {
            out.push(u as f64);
        }
        if self.include_t {
            out.push(t as f64);
        }
    }

    pub fn assemble(&self, snapshot: &[f64], u: usize, t: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_features());
        self.assemble_into(snapshot, u, t, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTable {
    pub rows: Vec<PersonPeriodRow>,
    pub schema: TableSchema,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TableError {
    #[error("no subject at risk for (t={t}, u={u})")]
    EmptyRiskSet { t: usize, u: usize },
    #[error("(t={t}, u={u}) is not a valid pair for T={horizon}; need 0 <= t < u <= T")]
    InvalidPair { t: usize, u: usize, horizon: usize },
    #[error("t={t} is not a valid origin for T={horizon}; need t < T")]
    InvalidOrigin { t: usize, horizon: usize },
    #[error("u={u} outside 1..={horizon}")]
    InvalidPeriod { u: usize, horizon: usize },
}

impl TrainingTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Model feature vector of one row.
    pub fn model_features(&self, row: &PersonPeriodRow) -> Vec<f64> {
        self.schema.assemble(&row.features, row.u, row.t)
    }

    /// Column-major model features: `columns[j][i]` is feature `j` of row `i`.
    pub fn feature_columns(&self) -> Vec<Vec<f64>> {
        let p = self.schema.covariates.len();
        let mut columns: Vec<Vec<f64>> =
            (0..self.schema.num_features()).map(|_| Vec::with_capacity(self.rows.len())).collect();
        for row in &self.rows {
            for (k, &v) in row.features.iter().enumerate() {
                columns[k].push(v);
            }
            let mut j = p;
            if self.schema.include_u {
                columns[j].push(row.u as f64);
                j += 1;
            }
            if self.schema.include_t {
                columns[j].push(row.t as f64);
            }
        }
        columns
    }

    pub fn responses(&self) -> Vec<bool> {
        self.rows.iter().map(|r| r.y).collect()
    }

    /// Same rows with `t` removed from the model features.
    pub fn without_t(mut self) -> Self {
        self.schema.include_t = false;
        self
    }
}

fn schema(ds: &GenericDataset, include_u: bool, include_t: bool) -> TableSchema {
    TableSchema { covariates: ds.covariate_names(), include_u, include_t }
}

/// Rows for one `(t, u)` cell, snapshot taken at `snapshot_t`.
fn cell_rows(ds: &GenericDataset, t: usize, u: usize, snapshot_t: usize, out: &mut Vec<PersonPeriodRow>) {
    let start = out.len();
    for s in ds.risk_set(u) {
        let mut features = Vec::with_capacity(ds.num_covariates());
        s.snapshot_into(snapshot_t, &mut features);
        out.push(PersonPeriodRow { id: s.id, y: s.delta && s.tau == u, features, u, t });
    }
    out[start..].sort_by_key(|r| r.id);
}

/// Local table for one `(t, u)` problem: subjects at risk at `u`, features
/// `x(t)`.
pub fn build_separate(ds: &GenericDataset, t: usize, u: usize) -> Result<TrainingTable, TableError> {
    let horizon = ds.horizon();
    if !(t < u && u <= horizon) {
        return Err(TableError::InvalidPair { t, u, horizon });
    }
    let mut rows = Vec::new();
    cell_rows(ds, t, u, t, &mut rows);
    if rows.is_empty() {
        return Err(TableError::EmptyRiskSet { t, u });
    }
    Ok(TrainingTable { rows, schema: schema(ds, false, false) })
}

/// Pools `(t, u)` for every `u > t`, with `u` as an ordinal feature.
pub fn build_poolt(ds: &GenericDataset, t: usize) -> Result<TrainingTable, TableError> {
    let horizon = ds.horizon();
    if t >= horizon {
        return Err(TableError::InvalidOrigin { t, horizon });
    }
    let mut rows = Vec::new();
    for u in t + 1..=horizon {
        cell_rows(ds, t, u, t, &mut rows);
    }
    if rows.is_empty() {
        return Err(TableError::EmptyRiskSet { t, u: t + 1 });
    }
    Ok(TrainingTable { rows, schema: schema(ds, true, false) })
}

fn stacked(ds: &GenericDataset, baseline_only: bool) -> TrainingTable {
    let horizon = ds.horizon();
    let mut rows = Vec::new();
    for t in 0..horizon {
        for u in t + 1..=horizon {
            cell_rows(ds, t, u, if baseline_only { 0 } else { t }, &mut rows);
        }
    }
    TrainingTable { rows, schema: schema(ds, true, true) }
}

/// Super person-period table: every `(t, u)` cell stacked, with both `u`
/// and `t` as features.
pub fn build_superpp(ds: &GenericDataset) -> TrainingTable {
    stacked(ds, false)
}

/// Same rows as [`build_superpp`] but every feature vector is the baseline
/// snapshot `x(0)`.
pub fn build_superpp0(ds: &GenericDataset) -> TrainingTable {
    stacked(ds, true)
}
