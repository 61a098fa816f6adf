//! Discrete-time proportional odds (continuation ratio) model:
//! `logit h(u) = alpha_u + beta' x`, fitted by maximum likelihood on a
//! person-period table with one dummy per period and no global intercept.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::math::{exp, ln1p, logistic, sqrt};
use crate::person_period::TrainingTable;

pub const FORMAT_VERSION: u32 = 1;

/// Probability clamp applied when a fit was stopped for separation.
pub const SEPARATION_CLAMP: f64 = 1e-6;

const ETA_LIMIT: f64 = 35.0;
/// Relative deviance difference treated as rounding noise.
const DEVIANCE_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DtpoConfig {
    /// Relative deviance change below which IRLS stops.
    pub tol: f64,
    pub max_iter: usize,
    /// Coefficient norm beyond which the fit is declared separated.
    pub separation_norm: f64,
    /// Adds dummies for `t = 1..T-1` (off by default: the model has no `t`
    /// term).
    pub include_t_dummies: bool,
}

impl Default for DtpoConfig {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 100, separation_norm: 1e4, include_t_dummies: false }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DtpoError {
    #[error("row {row} has u={u} outside 1..={horizon}")]
    PeriodOutOfRange { row: usize, u: usize, horizon: usize },
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("IRLS did not converge in {0} iterations")]
    NonConvergence(usize),
    #[error("complete separation: response is constant")]
    Separation,
    #[error("empty design")]
    Empty,
    #[error("covariate vector has length {found}, model expects {expected}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("feature {0} is not finite")]
    NonFinite(usize),
}

/// Row-major design with `D_1..D_T`, optional `t` dummies, then covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct Design {
    pub horizon: usize,
    pub covariates: Vec<String>,
    pub t_dummies: bool,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Design {
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    fn num_t_dummies(&self) -> usize {
        if self.t_dummies {
            self.horizon.saturating_sub(1)
        } else {
            0
        }
    }
}

/// Period dummies plus covariates; the response is `y` as 0/1.
pub fn build_design(
    table: &TrainingTable,
    horizon: usize,
    include_t_dummies: bool,
) -> Result<(Design, Vec<f64>), DtpoError> {
    let p = table.schema.covariates.len();
    let nt = if include_t_dummies { horizon.saturating_sub(1) } else { 0 };
    let cols = horizon + nt + p;
    let mut data = Vec::with_capacity(table.rows.len() * cols);
    let mut y = Vec::with_capacity(table.rows.len());
    for (i, row) in table.rows.iter().enumerate() {
        if row.u == 0 || row.u > horizon {
            return Err(DtpoError::PeriodOutOfRange { row: i, u: row.u, horizon });
        }
        let start = data.len();
        data.resize(start + horizon + nt, 0.0);
        data[start + row.u - 1] = 1.0;
        if nt > 0 && row.t >= 1 && row.t < horizon {
            data[start + horizon + row.t - 1] = 1.0;
        }
        data.extend_from_slice(&row.features);
        y.push(if row.y { 1.0 } else { 0.0 });
    }
    let design = Design {
        horizon,
        covariates: table.schema.covariates.clone(),
        t_dummies: include_t_dummies,
        rows: table.rows.len(),
        cols,
        data,
    };
    Ok((design, y))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DtpoModel {
    pub format_version: u32,
    /// `T`.
    pub horizon: usize,
    /// Period intercepts `alpha_1..alpha_T`.
    pub alpha: Vec<f64>,
    /// Covariate coefficients in `schema` order.
    pub beta: Vec<f64>,
    /// Coefficients of the `t = 1..T-1` dummies; empty unless enabled.
    #[serde(default)]
    pub gamma: Vec<f64>,
    pub schema: Vec<String>,
    /// Set when IRLS was stopped because coefficients diverged.
    #[serde(default)]
    pub separated: bool,
    /// Deviance after each accepted IRLS step, starting at the zero vector.
    #[serde(default)]
    pub deviance_trace: Vec<f64>,
}

impl DtpoModel {
    /// Builds the design from a person-period table and fits it.
    pub fn fit(table: &TrainingTable, horizon: usize, config: &DtpoConfig) -> Result<Self, DtpoError> {
        let (design, y) = build_design(table, horizon, config.include_t_dummies)?;
        fit_irls_with(&design, &y, config)
    }

    pub fn num_covariates(&self) -> usize {
        self.beta.len()
    }

    /// `logistic(alpha_u + gamma_t + beta' x)`.
    pub fn predict_hazard(&self, x: &[f64], u: usize, t: usize) -> Result<f64, DtpoError> {
        if u == 0 || u > self.horizon {
            return Err(DtpoError::PeriodOutOfRange { row: 0, u, horizon: self.horizon });
        }
        if x.len() != self.beta.len() {
            return Err(DtpoError::SchemaMismatch { expected: self.beta.len(), found: x.len() });
        }
        if let Some(j) = x.iter().position(|v| !v.is_finite()) {
            return Err(DtpoError::NonFinite(j));
        }
        let mut eta = self.alpha[u - 1] + dot(&self.beta, x);
        if !self.gamma.is_empty() && t >= 1 && t < self.horizon {
            eta += self.gamma[t - 1];
        }
        let h = logistic(eta.clamp(-ETA_LIMIT, ETA_LIMIT));
        Ok(if self.separated { h.clamp(SEPARATION_CLAMP, 1.0 - SEPARATION_CLAMP) } else { h })
    }
}

/// IRLS for the Bernoulli-logit likelihood with the default settings and
/// the given tolerance and iteration cap.
pub fn fit_irls(design: &Design, y: &[f64], tol: f64, max_iter: usize) -> Result<DtpoModel, DtpoError> {
    fit_irls_with(design, y, &DtpoConfig { tol, max_iter, ..DtpoConfig::default() })
}

// negated comparisons below also reject NaN
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn fit_irls_with(design: &Design, y: &[f64], config: &DtpoConfig) -> Result<DtpoModel, DtpoError> {
    let (n, k) = (design.rows, design.cols);
    if n == 0 || k == 0 {
        return Err(DtpoError::Empty);
    }
    if y.iter().all(|&v| v == 0.0) || y.iter().all(|&v| v == 1.0) {
        return Err(DtpoError::Separation);
    }
    // full column rank of X itself
    let mut gram = vec![0.0; k * k];
    accumulate_gram(design, |_| 1.0, &mut gram);
    if cholesky(&mut gram, k).is_err() {
        return Err(DtpoError::RankDeficient);
    }

    let mut beta = vec![0.0; k];
    let mut eta = vec![0.0; n];
    let mut dev = deviance(&eta, y);
    let mut trace = vec![dev];
    let mut separated = false;
    let mut converged = false;
    let mut settled = false;
    let mut xtwx = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    let mut weights = vec![0.0; n];
    let mut working = vec![0.0; n];

    for _ in 0..config.max_iter {
        for i in 0..n {
            let mu = logistic(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-12);
            weights[i] = w;
            working[i] = eta[i] + (y[i] - mu) / w;
        }
        xtwx.fill(0.0);
        accumulate_gram(design, |i| weights[i], &mut xtwx);
        rhs.fill(0.0);
        for i in 0..n {
            let row = design.row(i);
            let wz = weights[i] * working[i];
            for (r, &x) in rhs.iter_mut().zip(row) {
                *r += x * wz;
            }
        }
        if cholesky(&mut xtwx, k).is_err() {
            separated = true;
            converged = true;
            break;
        }
        let mut candidate = rhs.clone();
        cholesky_solve(&xtwx, k, &mut candidate);

        let mut cand_eta = linear_predictor(design, &candidate);
        let mut cand_dev = deviance(&cand_eta, y);
        // increases within rounding noise do not count
        let ceiling = dev + DEVIANCE_NOISE * (dev.abs() + 0.1);
        let mut halvings = 0;
        while !(cand_dev <= ceiling) && halvings < 30 {
            for (c, b) in candidate.iter_mut().zip(&beta) {
                *c = 0.5 * (*c + *b);
            }
            cand_eta = linear_predictor(design, &candidate);
            cand_dev = deviance(&cand_eta, y);
            halvings += 1;
        }
        if !(cand_dev <= ceiling) {
            // no descent direction left; the current iterate is the optimum to
            // working precision
            converged = true;
            break;
        }
        let change = (dev - cand_dev).abs() / (cand_dev.abs() + 0.1);
        beta = candidate;
        eta = cand_eta;
        dev = cand_dev;
        trace.push(dev);
        if norm(&beta) > config.separation_norm {
            separated = true;
            converged = true;
            break;
        }
        // a deviance change below tol is blind to small errors in a
        // sparsely populated period, so take one more Newton step
        if change < config.tol {
            if settled {
                converged = true;
                break;
            }
            settled = true;
        } else {
            settled = false;
        }
    }
    if !converged {
        return Err(DtpoError::NonConvergence(config.max_iter));
    }

    let horizon = design.horizon;
    let nt = design.num_t_dummies();
    Ok(DtpoModel {
        format_version: FORMAT_VERSION,
        horizon,
        alpha: beta[..horizon].to_vec(),
        gamma: beta[horizon..horizon + nt].to_vec(),
        beta: beta[horizon + nt..].to_vec(),
        schema: design.covariates.clone(),
        separated,
        deviance_trace: trace,
    })
}

fn accumulate_gram(design: &Design, weight: impl Fn(usize) -> f64, out: &mut [f64]) {
    let k = design.cols;
    for i in 0..design.rows {
        let row = design.row(i);
        let w = weight(i);
        for a in 0..k {
            let wa = w * row[a];
            if wa == 0.0 {
                continue;
            }
            for b in 0..=a {
                out[a * k + b] += wa * row[b];
            }
        }
    }
    for a in 0..k {
        for b in 0..a {
            out[b * k + a] = out[a * k + b];
        }
    }
}

fn linear_predictor(design: &Design, beta: &[f64]) -> Vec<f64> {
    (0..design.rows).map(|i| dot(design.row(i), beta)).collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &[f64]) -> f64 {
    sqrt(dot(v, v))
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + ln1p(exp(-x.abs()))
}

/// Binomial deviance `-2 log L`.
fn deviance(eta: &[f64], y: &[f64]) -> f64 {
    2.0 * eta.iter().zip(y).map(|(&e, &yi)| yi * softplus(-e) + (1.0 - yi) * softplus(e)).sum::<f64>()
}

/// In-place lower Cholesky factor of a symmetric positive definite `k x k`
/// matrix; fails on a non-positive pivot relative to the largest diagonal.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
fn cholesky(a: &mut [f64], k: usize) -> Result<(), ()> {
    let scale = (0..k).map(|i| a[i * k + i]).fold(0.0f64, f64::max);
    let tol = 1e-10 * scale.max(f64::MIN_POSITIVE);
    for j in 0..k {
        let mut d = a[j * k + j];
        for m in 0..j {
            d -= a[j * k + m] * a[j * k + m];
        }
        if !(d > tol) {
            return Err(());
        }
        let d = sqrt(d);
        a[j * k + j] = d;
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for m in 0..j {
                s -= a[i * k + m] * a[j * k + m];
            }
            a[i * k + j] = s / d;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], k: usize, b: &mut [f64]) {
    for i in 0..k {
        let mut s = b[i];
        for m in 0..i {
            s -= l[i * k + m] * b[m];
        }
        b[i] = s / l[i * k + i];
    }
    for i in (0..k).rev() {
        let mut s = b[i];
        for m in i + 1..k {
            s -= l[m * k + i] * b[m];
        }
        b[i] = s / l[i * k + i];
    }
}
