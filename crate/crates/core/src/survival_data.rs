//! Wide-format discrete-time survival data.
//!
//! A subject is observed at times `0..tau`; `tau` is the discrete event or
//! censoring time and `delta` marks an observed event. Covariate values at
//! `t >= tau` are never used, even when a source file carries them.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovariateKind {
    TimeInvariant,
    TimeVarying,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateSpec {
    pub fn time_varying(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::TimeVarying }
    }

    pub fn time_invariant(name: impl Into<String>) -> Self {
        Self { name: name.into(), kind: CovariateKind::TimeInvariant }
    }
}

/// One subject. `covariates[k][t]` is covariate `k` at time `t` for
/// `t in 0..tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: u64,
    pub tau: usize,
    pub delta: bool,
    pub covariates: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DataError {
    #[error("subject {id}: no covariate snapshot at t={t} (available for t < {tau})")]
    TimeOutOfRange { id: u64, t: usize, tau: usize },
    #[error("dataset is invalid:\n{0}")]
    Invalid(ValidationReport),
}

impl SubjectRecord {
    /// True iff the subject is still at risk at period `u`, i.e. neither
    /// event nor censoring happened strictly before `u`.
    #[inline]
    pub fn at_risk(&self, u: usize) -> bool {
        u >= 1 && u <= self.tau
    }

    /// Latest covariate values at time `t`.
    pub fn covariate_snapshot(&self, t: usize) -> Result<Vec<f64>, DataError> {
        if t >= self.tau {
            return Err(DataError::TimeOutOfRange { id: self.id, t, tau: self.tau });
        }
        Ok(self.covariates.iter().map(|path| path[t]).collect())
    }

    /// Snapshots at `0..=t`, the information available at current time `t`.
    pub fn history(&self, t: usize) -> Result<Vec<Vec<f64>>, DataError> {
        (0..=t).map(|s| self.covariate_snapshot(s)).collect()
    }

    pub(crate) fn snapshot_into(&self, t: usize, out: &mut Vec<f64>) {
        debug_assert!(t < self.tau);
        out.extend(self.covariates.iter().map(|path| path[t]));
    }
}

/// A subject as read from a file: cells may be missing and the integer
/// fields are not yet range-checked.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSubject {
    pub id: u64,
    pub tau: i64,
    pub delta: i64,
    /// `values[k][t]`; the inner length is the number of time columns in the
    /// source for that covariate (1 for a single time-invariant column).
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ViolationKind {
    EmptyDataset,
    DuplicateCovariate(String),
    DuplicateId,
    TauOutOfRange { tau: i64, horizon: Option<usize> },
    InvalidDelta(i64),
    CovariateCount { expected: usize, found: usize },
    MissingValue { covariate: String, t: usize },
    NonFinite { covariate: String, t: usize },
    TimeInvariantVaries { covariate: String, t: usize },
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ViolationKind::EmptyDataset => write!(f, "dataset has no subjects"),
            ViolationKind::DuplicateCovariate(name) => write!(f, "duplicate covariate name `{name}`"),
            ViolationKind::DuplicateId => write!(f, "duplicate subject id"),
            ViolationKind::TauOutOfRange { tau, horizon: Some(h) } => {
                write!(f, "tau={tau} outside 1..={h}")
            }
            ViolationKind::TauOutOfRange { tau, horizon: None } => write!(f, "tau={tau} must be >= 1"),
            ViolationKind::InvalidDelta(d) => write!(f, "delta={d} is not 0 or 1"),
            ViolationKind::CovariateCount { expected, found } => {
                write!(f, "expected {expected} covariates, found {found}")
            }
            ViolationKind::MissingValue { covariate, t } => {
                write!(f, "covariate `{covariate}` is NA at t={t} before tau")
            }
            ViolationKind::NonFinite { covariate, t } => {
                write!(f, "covariate `{covariate}` is not finite at t={t}")
            }
            ViolationKind::TimeInvariantVaries { covariate, t } => {
                write!(f, "time-invariant covariate `{covariate}` changes at t={t}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub subject: Option<u64>,
    pub kind: ViolationKind,
}

/// Every problem found while validating a dataset, one entry per
/// (subject, violation).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    fn push(&mut self, subject: Option<u64>, kind: ViolationKind) {
        self.violations.push(Violation { subject, kind });
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in &self.violations {
            match v.subject {
                Some(id) => writeln!(f, "subject {id}: {}", v.kind)?,
                None => writeln!(f, "dataset: {}", v.kind)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenericDataset {
    horizon: usize,
    specs: Vec<CovariateSpec>,
    subjects: Vec<SubjectRecord>,
}

impl GenericDataset {
    /// Builds a dataset from already-complete records; `T` is the largest
    /// `tau`.
    pub fn new(specs: Vec<CovariateSpec>, subjects: Vec<SubjectRecord>) -> Result<Self, DataError> {
        let raws = subjects
            .into_iter()
            .map(|s| RawSubject {
                id: s.id,
                tau: s.tau as i64,
                delta: i64::from(s.delta),
                values: s.covariates.into_iter().map(|p| p.into_iter().map(Some).collect()).collect(),
            })
            .collect::<Vec<_>>();
        Self::from_raw(specs, raws, None).map_err(DataError::Invalid)
    }

    /// Validates raw cells. When `horizon` is given every `tau` must lie in
    /// `1..=horizon` and the dataset keeps that horizon; otherwise `T` is the
    /// largest `tau`.
    pub fn from_raw(
        specs: Vec<CovariateSpec>,
        raws: Vec<RawSubject>,
        horizon: Option<usize>,
    ) -> Result<Self, ValidationReport> {
        let mut report = ValidationReport::default();
        let mut names = BTreeSet::new();
        for spec in &specs {
            if !names.insert(spec.name.as_str()) {
                report.push(None, ViolationKind::DuplicateCovariate(spec.name.clone()));
            }
        }
        if raws.is_empty() {
            report.push(None, ViolationKind::EmptyDataset);
        }

        let mut ids = BTreeSet::new();
        let mut subjects = Vec::with_capacity(raws.len());
        for raw in raws {
            let id = raw.id;
            let before = report.violations.len();
            if !ids.insert(id) {
                report.push(Some(id), ViolationKind::DuplicateId);
            }
            let tau_ok = raw.tau >= 1 && horizon.is_none_or(|h| raw.tau as u64 <= h as u64);
            if !tau_ok {
                report.push(Some(id), ViolationKind::TauOutOfRange { tau: raw.tau, horizon });
            }
            if raw.delta != 0 && raw.delta != 1 {
                report.push(Some(id), ViolationKind::InvalidDelta(raw.delta));
            }
            if raw.values.len() != specs.len() {
                report.push(Some(id), ViolationKind::CovariateCount { expected: specs.len(), found: raw.values.len() });
                continue;
            }
            if !tau_ok {
                continue;
            }
            let tau = raw.tau as usize;
            let mut covariates = Vec::with_capacity(specs.len());
            for (spec, cells) in specs.iter().zip(&raw.values) {
                let mut path = Vec::with_capacity(tau);
                let single = cells.len() == 1 && spec.kind == CovariateKind::TimeInvariant;
                for t in 0..tau {
                    let cell = if single { cells[0] } else { cells.get(t).copied().flatten() };
                    match cell {
                        None => {
                            report.push(Some(id), ViolationKind::MissingValue { covariate: spec.name.clone(), t });
                            break;
                        }
                        Some(v) if !v.is_finite() => {
                            report.push(Some(id), ViolationKind::NonFinite { covariate: spec.name.clone(), t });
                            break;
                        }
                        Some(v) => path.push(v),
                    }
                }
                if spec.kind == CovariateKind::TimeInvariant {
                    if let Some(t) = path.iter().position(|&v| v != path[0]) {
                        report.push(Some(id), ViolationKind::TimeInvariantVaries { covariate: spec.name.clone(), t });
                    }
                }
                covariates.push(path);
            }
            if report.violations.len() == before {
                subjects.push(SubjectRecord { id, tau, delta: raw.delta == 1, covariates });
            }
        }

        if !report.is_empty() {
            return Err(report);
        }
        let max_tau = subjects.iter().map(|s| s.tau).max().unwrap_or(0);
        Ok(Self { horizon: horizon.unwrap_or(max_tau), specs, subjects })
    }

    /// Maximum observed time `T`.
    #[inline]
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn specs(&self) -> &[CovariateSpec] {
        &self.specs
    }

    #[inline]
    pub fn subjects(&self) -> &[SubjectRecord] {
        &self.subjects
    }

    #[inline]
    pub fn num_covariates(&self) -> usize {
        self.specs.len()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.name.clone()).collect()
    }

    /// Subjects at risk at period `u`.
    pub fn risk_set(&self, u: usize) -> impl Iterator<Item = &SubjectRecord> {
        self.subjects.iter().filter(move |s| s.at_risk(u))
    }

    /// Keeps only the subjects for which `keep` holds; `T` is recomputed.
    pub fn filter(&self, mut keep: impl FnMut(&SubjectRecord) -> bool) -> Option<Self> {
        let subjects: Vec<_> = self.subjects.iter().filter(|s| keep(s)).cloned().collect();
        let horizon = subjects.iter().map(|s| s.tau).max()?;
        Some(Self { horizon, specs: self.specs.clone(), subjects })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn table1_first_three() -> GenericDataset {
        let specs = vec![CovariateSpec::time_varying("X1"), CovariateSpec::time_invariant("X2")];
        let subjects = vec![
            SubjectRecord { id: 1, tau: 2, delta: true, covariates: vec![vec![10.0, 11.0], vec![21.0; 2]] },
            SubjectRecord { id: 2, tau: 4, delta: true, covariates: vec![vec![20.0, 21.0, 22.0, 23.0], vec![22.0; 4]] },
            SubjectRecord { id: 3, tau: 3, delta: false, covariates: vec![vec![30.0, 31.0, 32.0], vec![23.0; 3]] },
        ];
        GenericDataset::new(specs, subjects).unwrap()
    }

    #[test]
    fn table1_subject_one_has_two_values() {
        let specs = vec![CovariateSpec::time_varying("X1"), CovariateSpec::time_invariant("X2")];
        let raw = RawSubject {
            id: 1,
            tau: 2,
            delta: 1,
            values: vec![vec![Some(10.0), Some(11.0), None, None, None], vec![Some(21.0)]],
        };
        let ds = GenericDataset::from_raw(specs, vec![raw], None).unwrap();
        assert_eq!(ds.horizon(), 2);
        let s = &ds.subjects()[0];
        assert_eq!(s.covariates[0], vec![10.0, 11.0]);
        assert_eq!(s.covariates[1], vec![21.0, 21.0]);
    }

    #[test]
    fn minimal_dataset() {
        let specs = vec![CovariateSpec::time_invariant("age")];
        let raw = RawSubject { id: 9, tau: 1, delta: 0, values: vec![vec![Some(3.0)]] };
        let ds = GenericDataset::from_raw(specs, vec![raw], None).unwrap();
        assert_eq!(ds.horizon(), 1);
        assert!(!ds.subjects()[0].delta);
    }

    #[test]
    fn varying_time_invariant_is_rejected() {
        let specs = vec![CovariateSpec::time_invariant("X2")];
        let raw = RawSubject { id: 4, tau: 2, delta: 1, values: vec![vec![Some(1.0), Some(2.0)]] };
        let report = GenericDataset::from_raw(specs, vec![raw], None).unwrap_err();
        assert_eq!(
            report.violations,
            vec![Violation {
                subject: Some(4),
                kind: ViolationKind::TimeInvariantVaries { covariate: "X2".into(), t: 1 }
            }]
        );
        assert!(alloc::format!("{report}").starts_with("subject 4:"));
    }

    #[test]
    fn interior_na_and_na_at_tau_minus_one_are_rejected() {
        let specs = vec![CovariateSpec::time_varying("X1")];
        let interior = RawSubject { id: 1, tau: 3, delta: 1, values: vec![vec![Some(1.0), None, Some(3.0)]] };
        let last = RawSubject { id: 2, tau: 2, delta: 0, values: vec![vec![Some(1.0), None, None]] };
        let report = GenericDataset::from_raw(specs, vec![interior, last], None).unwrap_err();
        assert_eq!(report.violations.len(), 2);
        assert!(matches!(report.violations[0].kind, ViolationKind::MissingValue { t: 1, .. }));
        assert!(matches!(report.violations[1].kind, ViolationKind::MissingValue { t: 1, .. }));
    }

    #[test]
    fn values_after_tau_are_ignored() {
        let specs = vec![CovariateSpec::time_varying("X1")];
        let raw = RawSubject { id: 1, tau: 1, delta: 1, values: vec![vec![Some(1.0), Some(5.0)]] };
        let ds = GenericDataset::from_raw(specs, vec![raw], None).unwrap();
        assert_eq!(ds.subjects()[0].covariates[0], vec![1.0]);
    }

    #[test]
    fn tau_and_delta_range_checks() {
        let specs = vec![CovariateSpec::time_varying("X1")];
        let raws = vec![
            RawSubject { id: 1, tau: 0, delta: 1, values: vec![vec![Some(1.0)]] },
            RawSubject { id: 2, tau: 5, delta: 1, values: vec![vec![Some(1.0); 5]] },
            RawSubject { id: 3, tau: 1, delta: 2, values: vec![vec![Some(1.0)]] },
            RawSubject { id: 3, tau: 1, delta: 1, values: vec![vec![Some(1.0)]] },
        ];
        let report = GenericDataset::from_raw(specs, raws, Some(4)).unwrap_err();
        let kinds: Vec<_> = report.violations.iter().map(|v| (v.subject, v.kind.clone())).collect();
        assert_eq!(
            kinds,
            vec![
                (Some(1), ViolationKind::TauOutOfRange { tau: 0, horizon: Some(4) }),
                (Some(2), ViolationKind::TauOutOfRange { tau: 5, horizon: Some(4) }),
                (Some(3), ViolationKind::InvalidDelta(2)),
                (Some(3), ViolationKind::DuplicateId),
            ]
        );
    }

    #[test]
    fn snapshot_bounds() {
        let ds = table1_first_three();
        let s1 = &ds.subjects()[0];
        assert_eq!(s1.covariate_snapshot(1).unwrap(), vec![11.0, 21.0]);
        assert_eq!(s1.covariate_snapshot(2), Err(DataError::TimeOutOfRange { id: 1, t: 2, tau: 2 }));
    }

    #[test]
    fn time_invariant_snapshot_is_constant() {
        let specs = vec![CovariateSpec::time_invariant("a"), CovariateSpec::time_invariant("b")];
        let s = SubjectRecord { id: 1, tau: 3, delta: false, covariates: vec![vec![1.5; 3], vec![-2.0; 3]] };
        let ds = GenericDataset::new(specs, vec![s]).unwrap();
        let s = &ds.subjects()[0];
        let first = s.covariate_snapshot(0).unwrap();
        for t in 1..3 {
            assert_eq!(s.covariate_snapshot(t).unwrap(), first);
        }
    }

    #[test]
    fn at_risk_matches_table4() {
        let ds = table1_first_three();
        let s1 = &ds.subjects()[0];
        let s3 = &ds.subjects()[2];
        assert!(s3.at_risk(3));
        assert!(!s1.at_risk(3));
        for s in ds.subjects() {
            assert!(s.at_risk(1));
            let set: Vec<usize> = (1..=ds.horizon()).filter(|&u| s.at_risk(u)).collect();
            assert_eq!(set, (1..=s.tau).collect::<Vec<_>>());
        }
    }
}
