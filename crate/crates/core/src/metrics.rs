//! Accuracy of estimated hazards against known true hazards.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::dynamic_estimator::{MethodKind, ModelBundle};
use crate::math::ln;
use crate::survival_data::{GenericDataset, SubjectRecord};

/// Estimates are clamped to `[ALOR_CLAMP, 1 - ALOR_CLAMP]` before the
/// log-odds ratio.
pub const ALOR_CLAMP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("true hazard {0} must lie strictly inside (0, 1)")]
    DegenerateTruth(f64),
    #[error("length mismatch: {0} true hazards vs {1} estimates")]
    LengthMismatch(usize, usize),
    #[error("need at least two hazards, got {0}")]
    TooShort(usize),
    #[error("no test set for u={0}")]
    MissingTestSet(usize),
    #[error("test set for u={u}: subject {id} is not at risk at u")]
    NotAtRisk { u: usize, id: u64 },
}

/// `|hhat - h|`.
#[inline]
pub fn adist(h: f64, hhat: f64) -> f64 {
    (hhat - h).abs()
}

/// `|ln(hhat (1 - h) / ((1 - hhat) h))|` with `hhat` clamped.
pub fn alor(h: f64, hhat: f64) -> Result<f64, MetricsError> {
    if !(h > 0.0 && h < 1.0) {
        return Err(MetricsError::DegenerateTruth(h));
    }
    let e = hhat.clamp(ALOR_CLAMP, 1.0 - ALOR_CLAMP);
    Ok(((ln(e) - ln(1.0 - e)) - (ln(h) - ln(1.0 - h))).abs())
}

/// Share of truth-ordered pairs (`h_i > h_j`) whose estimates are ordered
/// the same way (`hhat_i > hhat_j`). Ties count in neither numerator nor
/// denominator; `None` when no pair has distinct true hazards.
pub fn cindex(h: &[f64], hhat: &[f64]) -> Result<Option<f64>, MetricsError> {
    if h.len() != hhat.len() {
        return Err(MetricsError::LengthMismatch(h.len(), hhat.len()));
    }
    let n = h.len();
    if n < 2 {
        return Err(MetricsError::TooShort(n));
    }
    // ranks of the estimates, ties sharing a rank
    let mut by_est: Vec<usize> = (0..n).collect();
    by_est.sort_unstable_by(|&a, &b| hhat[a].total_cmp(&hhat[b]));
    let mut est_rank = alloc::vec![0usize; n];
    let mut r = 0;
    for i in 0..n {
        if i > 0 && hhat[by_est[i]] != hhat[by_est[i - 1]] {
            r += 1;
        }
        est_rank[by_est[i]] = r;
    }
    let mut tree = Fenwick::new(r + 1);

    let mut by_truth: Vec<usize> = (0..n).collect();
    by_truth.sort_unstable_by(|&a, &b| h[a].total_cmp(&h[b]));
    let (mut concordant, mut comparable) = (0u64, 0u64);
    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && h[by_truth[end]] == h[by_truth[start]] {
            end += 1;
        }
        // `start` earlier subjects have strictly smaller truth
        for &i in &by_truth[start..end] {
            comparable += start as u64;
            concordant += tree.prefix(est_rank[i]);
        }
        for &i in &by_truth[start..end] {
            tree.add(est_rank[i]);
        }
        start = end;
    }
    Ok((comparable > 0).then(|| concordant as f64 / comparable as f64))
}

/// Counts of inserted ranks; `prefix(r)` counts ranks strictly below `r`.
struct Fenwick(Vec<u64>);

impl Fenwick {
    fn new(n: usize) -> Self {
        Self(alloc::vec![0; n + 1])
    }

    fn add(&mut self, rank: usize) {
        let mut i = rank + 1;
        while i < self.0.len() {
            self.0[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    fn prefix(&self, rank: usize) -> u64 {
        let mut i = rank;
        let mut s = 0;
        while i > 0 {
            s += self.0[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Subjects at risk at `u` with their true hazard at `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSet {
    pub u: usize,
    pub dataset: GenericDataset,
    /// Aligned with `dataset.subjects()`.
    pub true_hazards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub t: usize,
    pub u: usize,
    pub n: usize,
    pub mean_adist: f64,
    pub mean_alor: f64,
    pub cindex: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub t: usize,
    pub u: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEvaluation {
    pub method: MethodKind,
    pub cells: Vec<EvalCell>,
    pub failures: Vec<CellFailure>,
    /// Cells whose C-index was undefined.
    pub undefined_cindex: usize,
}

/// Evaluates `bundle` on every `(t, u)` with `0 <= t < u <= T`, using test
/// set `u` for all cells with that `u`.
pub fn evaluate_grid(bundle: &ModelBundle, test_sets: &[TestSet]) -> Result<GridEvaluation, MetricsError> {
    let snapshot_at = |t: usize| if bundle.method == MethodKind::Superpp0 { 0 } else { t };
    let (cells, failures) = evaluate_cells(bundle.horizon, test_sets, |subject, _, t, u| {
        let snapshot = subject.covariate_snapshot(snapshot_at(t)).map_err(|e| e.to_string())?;
        bundle.estimate_from_snapshot(&snapshot, t, u).map_err(|e| e.to_string())
    })?;
    let undefined_cindex = cells.iter().filter(|c| c.cindex.is_none()).count();
    Ok(GridEvaluation { method: bundle.method, cells, failures, undefined_cindex })
}

/// Grid evaluation for an arbitrary estimator. `estimate(subject, i, t, u)`
/// receives the subject's position `i` in test set `u`.
pub fn evaluate_cells<F>(
    horizon: usize,
    test_sets: &[TestSet],
    estimate: F,
) -> Result<(Vec<EvalCell>, Vec<CellFailure>), MetricsError>
where
    F: Fn(&SubjectRecord, usize, usize, usize) -> Result<f64, String> + Sync,
{
    let mut by_u: Vec<&TestSet> = Vec::with_capacity(horizon);
    for u in 1..=horizon {
        let set = test_sets.iter().find(|s| s.u == u).ok_or(MetricsError::MissingTestSet(u))?;
        if set.true_hazards.len() != set.dataset.subjects().len() {
            return Err(MetricsError::LengthMismatch(set.true_hazards.len(), set.dataset.subjects().len()));
        }
        if let Some(s) = set.dataset.subjects().iter().find(|s| !s.at_risk(u)) {
            return Err(MetricsError::NotAtRisk { u, id: s.id });
        }
        by_u.push(set);
    }
    let pairs: Vec<(usize, usize)> = (0..horizon).flat_map(|t| (t + 1..=horizon).map(move |u| (t, u))).collect();

    let eval = |&(t, u): &(usize, usize)| evaluate_cell(by_u[u - 1], t, u, &estimate);
    #[cfg(feature = "parallel")]
    let outcomes: Vec<_> = {
        use rayon::prelude::*;
        pairs.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<_> = pairs.iter().map(eval).collect();

    let mut cells = Vec::with_capacity(pairs.len());
    let mut failures = Vec::new();
    for ((t, u), outcome) in pairs.into_iter().zip(outcomes) {
        match outcome {
            Ok(cell) => cells.push(cell),
            Err(reason) => failures.push(CellFailure { t, u, reason }),
        }
    }
    Ok((cells, failures))
}

fn evaluate_cell<F>(set: &TestSet, t: usize, u: usize, estimate: &F) -> Result<EvalCell, String>
where
    F: Fn(&SubjectRecord, usize, usize, usize) -> Result<f64, String>,
{
    let subjects = set.dataset.subjects();
    let n = subjects.len();
    if n == 0 {
        return Err("empty test set".to_string());
    }
    let estimates = subjects.iter().enumerate().map(|(i, s)| estimate(s, i, t, u)).collect::<Result<Vec<_>, _>>()?;
    let mut sum_adist = 0.0;
    let mut sum_alor = 0.0;
    for (&h, &e) in set.true_hazards.iter().zip(&estimates) {
        sum_adist += adist(h, e);
        sum_alor += alor(h, e).map_err(|e| e.to_string())?;
    }
    let c = if n >= 2 { cindex(&set.true_hazards, &estimates).map_err(|e| e.to_string())? } else { None };
    Ok(EvalCell { t, u, n, mean_adist: sum_adist / n as f64, mean_alor: sum_alor / n as f64, cindex: c })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adist_examples() {
        assert_eq!(adist(0.3, 0.3), 0.0);
        assert!((adist(0.3, 0.5) - 0.2).abs() < 1e-15);
        assert_eq!(adist(0.0, 1.0), 1.0);
    }

    #[test]
    fn alor_examples() {
        assert_eq!(alor(0.5, 0.5).unwrap(), 0.0);
        assert!((alor(0.25, 0.5).unwrap() - 3f64.ln()).abs() < 1e-12);
        assert!((alor(0.3, 0.7).unwrap() - alor(0.7, 0.3).unwrap()).abs() < 1e-12);
        assert_eq!(alor(0.0, 0.5), Err(MetricsError::DegenerateTruth(0.0)));
        assert_eq!(alor(1.0, 0.5), Err(MetricsError::DegenerateTruth(1.0)));
        assert!(alor(0.5, 1.0).unwrap().is_finite());
    }

    #[test]
    fn cindex_examples() {
        assert!((cindex(&[0.1, 0.2, 0.3], &[0.2, 0.1, 0.4]).unwrap().unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(cindex(&[0.1, 0.2, 0.3], &[0.01, 0.02, 0.9]).unwrap(), Some(1.0));
        assert_eq!(cindex(&[0.2; 4], &[0.1, 0.2, 0.3, 0.4]).unwrap(), None);
        assert_eq!(cindex(&[0.1], &[0.1]), Err(MetricsError::TooShort(1)));
        assert_eq!(cindex(&[0.1, 0.2], &[0.1]), Err(MetricsError::LengthMismatch(2, 1)));
        // estimate ties are never concordant
        assert_eq!(cindex(&[0.1, 0.2], &[0.5, 0.5]).unwrap(), Some(0.0));
    }

    fn test_sets() -> Vec<TestSet> {
        use crate::survival_data::CovariateSpec;
        (1..=3)
            .map(|u| {
                let subjects: Vec<SubjectRecord> = (0..4)
                    .map(|i| SubjectRecord {
                        id: 10 * u as u64 + i,
                        tau: 3,
                        delta: false,
                        covariates: vec![vec![i as f64; 3]],
                    })
                    .collect();
                let ds = GenericDataset::new(vec![CovariateSpec::time_varying("x")], subjects).unwrap();
                TestSet { u, dataset: ds, true_hazards: vec![0.1, 0.2, 0.3, 0.4 + u as f64 / 10.0] }
            })
            .collect()
    }

    #[test]
    fn oracle_estimator_is_perfect() {
        let sets = test_sets();
        let (cells, failures) = evaluate_cells(3, &sets, |_, i, _, u| Ok(sets[u - 1].true_hazards[i])).unwrap();
        assert!(failures.is_empty());
        assert_eq!(cells.len(), 6);
        for c in cells {
            assert_eq!((c.mean_adist, c.mean_alor, c.cindex), (0.0, 0.0, Some(1.0)));
        }
    }

    #[test]
    fn constant_estimator() {
        let sets = test_sets();
        let (cells, _) = evaluate_cells(3, &sets, |_, _, _, _| Ok(0.25)).unwrap();
        for c in cells {
            let h = &sets[c.u - 1].true_hazards;
            let expected = h.iter().map(|v| (v - 0.25f64).abs()).sum::<f64>() / 4.0;
            assert!((c.mean_adist - expected).abs() < 1e-15);
            assert_eq!(c.cindex, Some(0.0));
        }
        assert_eq!(evaluate_cells(4, &sets, |_, _, _, _| Ok(0.25)).unwrap_err(), MetricsError::MissingTestSet(4));
        let (_, failures) =
            evaluate_cells(3, &sets, |_, _, t, _| if t == 1 { Err("nope".into()) } else { Ok(0.5) }).unwrap();
        assert_eq!(failures.len(), 2);
    }
}
