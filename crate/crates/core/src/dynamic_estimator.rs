//! Fitting and querying the five dynamic estimation methods.
//!
//! | method      | models           | features at query `(t, u)` |
//! |-------------|------------------|----------------------------|
//! | Separate    | one per `(t, u)` | `x(t)`                     |
//! | Poolt       | one per `t`      | `x(t), u`                  |
//! | Superpp     | one              | `x(t), u, t`               |
//! | Superpp0    | one              | `x(0), u, t`               |
//! | SuperppDTPO | one (logistic)   | `alpha_u + beta' x(t)`     |

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dtpo::{DtpoConfig, DtpoError, DtpoModel};
use crate::hellinger_forest::{ForestConfig, ForestError, HazardForest};
use crate::person_period::{self, TableError, TrainingTable};
use crate::seed;
use crate::survival_data::GenericDataset;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    Separate,
    Poolt,
    Superpp,
    Superpp0,
    #[serde(rename = "SuperppDTPO")]
    SuperppDtpo,
}

impl MethodKind {
    pub const ALL: [MethodKind; 5] =
        [MethodKind::Separate, MethodKind::Poolt, MethodKind::Superpp, MethodKind::Superpp0, MethodKind::SuperppDtpo];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Separate => "Separate",
            MethodKind::Poolt => "Poolt",
            MethodKind::Superpp => "Superpp",
            MethodKind::Superpp0 => "Superpp0",
            MethodKind::SuperppDtpo => "SuperppDTPO",
        }
    }

    /// Number of models a bundle holds for horizon `T`.
    pub fn model_count(self, horizon: usize) -> usize {
        match self {
            MethodKind::Separate => horizon * (horizon + 1) / 2,
            MethodKind::Poolt => horizon,
            _ => 1,
        }
    }

    pub fn is_forest(self) -> bool {
        self != MethodKind::SuperppDtpo
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown method `{0}` (expected separate, poolt, superpp, superpp0 or superppdtpo)")]
pub struct UnknownMethod(pub String);

impl FromStr for MethodKind {
    type Err = UnknownMethod;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Ok(match lower.as_str() {
            "separate" => MethodKind::Separate,
            "poolt" => MethodKind::Poolt,
            "superpp" => MethodKind::Superpp,
            "superpp0" => MethodKind::Superpp0,
            "superppdtpo" | "superpp_dtpo" | "superpp-dtpo" | "dtpo" => MethodKind::SuperppDtpo,
            _ => return Err(UnknownMethod(s.to_string())),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKey {
    Pair { t: usize, u: usize },
    Origin { t: usize },
    Global,
}

impl ModelKey {
    fn seed_path(self) -> Vec<u64> {
        match self {
            ModelKey::Pair { t, u } => alloc::vec![0, t as u64, u as u64],
            ModelKey::Origin { t } => alloc::vec![1, t as u64],
            ModelKey::Global => alloc::vec![2],
        }
    }
}

impl fmt::Display for ModelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKey::Pair { t, u } => write!(f, "(t={t}, u={u})"),
            ModelKey::Origin { t } => write!(f, "(t={t})"),
            ModelKey::Global => f.write_str("(all)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FittedModel {
    Forest(HazardForest),
    Dtpo(DtpoModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEntry {
    pub key: ModelKey,
    pub model: FittedModel,
}

/// A key whose training table was empty; queries against it fail.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbsentModel {
    pub key: ModelKey,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BundleConfig {
    pub forest: ForestConfig,
    pub dtpo: DtpoConfig,
    /// Keep `t` as a Superpp0 feature.
    pub superpp0_include_t: bool,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self { forest: ForestConfig::default(), dtpo: DtpoConfig::default(), superpp0_include_t: true }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitError {
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("forest {key}: {source}")]
    Forest { key: ModelKey, source: ForestError },
    #[error("DTPO: {0}")]
    Dtpo(#[from] DtpoError),
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EstimateError {
    #[error("query (t={t}, u={u}) invalid for T={horizon}; need 0 <= t < u <= T")]
    InvalidQuery { t: usize, u: usize, horizon: usize },
    #[error("history holds {available} snapshots, need the one at t={t}")]
    MissingHistory { t: usize, available: usize },
    #[error("no model for {key}: {reason}")]
    MissingModel { key: ModelKey, reason: String },
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Dtpo(#[from] DtpoError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub method: MethodKind,
    /// `T` of the training data.
    pub horizon: usize,
    pub covariates: Vec<String>,
    /// Sorted by key.
    pub models: Vec<ModelEntry>,
    pub absent: Vec<AbsentModel>,
}

impl ModelBundle {
    /// Trains every model the method needs on the matching person-period
    /// tables.
    pub fn fit(ds: &GenericDataset, method: MethodKind, cfg: &BundleConfig) -> Result<Self, FitError> {
        let horizon = ds.horizon();
        let keys: Vec<ModelKey> = match method {
            MethodKind::Separate => {
                (0..horizon).flat_map(|t| (t + 1..=horizon).map(move |u| ModelKey::Pair { t, u })).collect()
            }
            MethodKind::Poolt => (0..horizon).map(|t| ModelKey::Origin { t }).collect(),
            _ => alloc::vec![ModelKey::Global],
        };

        let fit_key = |key: ModelKey| -> Result<Result<ModelEntry, AbsentModel>, FitError> {
            let table = match table_for(ds, method, key, cfg) {
                Ok(table) => table,
                Err(err @ TableError::EmptyRiskSet { .. }) => {
                    return Ok(Err(AbsentModel { key, reason: err.to_string() }))
                }
                Err(err) => return Err(err.into()),
            };
            let model = if method == MethodKind::SuperppDtpo {
                FittedModel::Dtpo(DtpoModel::fit(&table, horizon, &cfg.dtpo)?)
            } else {
                let mut forest_cfg = cfg.forest.clone();
                forest_cfg.seed = seed::derive(cfg.forest.seed, &key.seed_path());
                let forest =
                    HazardForest::fit(&table, &forest_cfg).map_err(|source| FitError::Forest { key, source })?;
                FittedModel::Forest(forest)
            };
            Ok(Ok(ModelEntry { key, model }))
        };

        #[cfg(feature = "parallel")]
        let fitted: Vec<_> = {
            use rayon::prelude::*;
            keys.par_iter().map(|&k| fit_key(k)).collect()
        };
        #[cfg(not(feature = "parallel"))]
        let fitted: Vec<_> = keys.iter().map(|&k| fit_key(k)).collect();

        let mut models = Vec::with_capacity(keys.len());
        let mut absent = Vec::new();
        for result in fitted {
            match result? {
                Ok(entry) => models.push(entry),
                Err(missing) => absent.push(missing),
            }
        }
        Ok(Self { format_version: FORMAT_VERSION, method, horizon, covariates: ds.covariate_names(), models, absent })
    }

    pub fn model_count(&self) -> usize {
        self.models.len()
    }

    pub fn keys(&self) -> impl Iterator<Item = ModelKey> + '_ {
        self.models.iter().map(|e| e.key)
    }

    pub fn model(&self, key: ModelKey) -> Result<&FittedModel, EstimateError> {
        if let Ok(i) = self.models.binary_search_by(|e| e.key.cmp(&key)) {
            return Ok(&self.models[i].model);
        }
        let reason = self
            .absent
            .iter()
            .find(|a| a.key == key)
            .map_or_else(|| "not part of the bundle".to_string(), |a| a.reason.clone());
        Err(EstimateError::MissingModel { key, reason })
    }

    fn key_for(&self, t: usize, u: usize) -> ModelKey {
        match self.method {
            MethodKind::Separate => ModelKey::Pair { t, u },
            MethodKind::Poolt => ModelKey::Origin { t },
            _ => ModelKey::Global,
        }
    }

    /// Hazard at future period `u` for a subject whose covariate snapshots
    /// `history[0..=t]` are known at current time `t`.
    pub fn estimate_hazard(&self, history: &[Vec<f64>], t: usize, u: usize) -> Result<f64, EstimateError> {
        if !(t < u && u <= self.horizon) {
            return Err(EstimateError::InvalidQuery { t, u, horizon: self.horizon });
        }
        let snapshot_t = if self.method == MethodKind::Superpp0 { 0 } else { t };
        let snapshot =
            history.get(snapshot_t).ok_or(EstimateError::MissingHistory { t: snapshot_t, available: history.len() })?;
        self.estimate_from_snapshot(snapshot, t, u)
    }

    /// Same as [`estimate_hazard`](Self::estimate_hazard) given only the
    /// snapshot the method uses (`x(0)` for Superpp0, `x(t)` otherwise).
    pub fn estimate_from_snapshot(&self, snapshot: &[f64], t: usize, u: usize) -> Result<f64, EstimateError> {
        if !(t < u && u <= self.horizon) {
            return Err(EstimateError::InvalidQuery { t, u, horizon: self.horizon });
        }
        match self.model(self.key_for(t, u))? {
            FittedModel::Dtpo(model) => Ok(model.predict_hazard(snapshot, u, t)?),
            FittedModel::Forest(forest) => {
                let mut x = Vec::with_capacity(forest.num_features());
                x.extend_from_slice(snapshot);
                let extra = forest.num_features().saturating_sub(snapshot.len());
                match (self.method, extra) {
                    (MethodKind::Separate, _) => {}
                    (MethodKind::Poolt, _) => x.push(u as f64),
                    (_, 1) => x.push(u as f64),
                    _ => {
                        x.push(u as f64);
                        x.push(t as f64);
                    }
                }
                Ok(forest.predict_hazard(&x)?)
            }
        }
    }

    /// Hazard, survival and event-probability curve for `u = t+1..T`.
    pub fn predict_curve(&self, history: &[Vec<f64>], t: usize) -> Result<HazardCurve, EstimateError> {
        let hazards =
            (t + 1..=self.horizon).map(|u| self.estimate_hazard(history, t, u)).collect::<Result<Vec<_>, _>>()?;
        Ok(hazard_to_curve(t, &hazards)?)
    }
}

fn table_for(
    ds: &GenericDataset,
    method: MethodKind,
    key: ModelKey,
    cfg: &BundleConfig,
) -> Result<TrainingTable, TableError> {
    match (method, key) {
        (MethodKind::Separate, ModelKey::Pair { t, u }) => person_period::build_separate(ds, t, u),
        (MethodKind::Poolt, ModelKey::Origin { t }) => person_period::build_poolt(ds, t),
        (MethodKind::Superpp0, _) => {
            let table = person_period::build_superpp0(ds);
            Ok(if cfg.superpp0_include_t { table } else { table.without_t() })
        }
        _ => Ok(person_period::build_superpp(ds)),
    }
}

/// Hazards with the survival and event-probability curves they imply,
/// conditional on being event-free at the origin `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardCurve {
    pub origin: usize,
    /// Entry `i` refers to period `u = origin + 1 + i`.
    pub hazards: Vec<f64>,
    pub survival: Vec<f64>,
    pub event_prob: Vec<f64>,
}

impl HazardCurve {
    pub fn periods(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.hazards.len()).map(move |i| self.origin + 1 + i)
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("hazard {value} at u={u} is outside [0, 1]")]
pub struct CurveError {
    pub u: usize,
    pub value: f64,
}

/// `S(u) = S(u-1)(1 - h(u))`, `pi(u) = S(u-1) - S(u)`, `S(t) = 1`.
pub fn hazard_to_curve(t: usize, hazards: &[f64]) -> Result<HazardCurve, CurveError> {
    let mut survival = Vec::with_capacity(hazards.len());
    let mut event_prob = Vec::with_capacity(hazards.len());
    let mut prev = 1.0;
    for (i, &h) in hazards.iter().enumerate() {
        if !(0.0..=1.0).contains(&h) {
            return Err(CurveError { u: t + 1 + i, value: h });
        }
        let s = prev * (1.0 - h);
        survival.push(s);
        event_prob.push(prev - s);
        prev = s;
    }
    Ok(HazardCurve { origin: t, hazards: hazards.to_vec(), survival, event_prob })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn curve_examples() {
        let c = hazard_to_curve(0, &[0.1, 0.2]).unwrap();
        assert!((c.survival[0] - 0.9).abs() < 1e-15);
        assert!((c.survival[1] - 0.72).abs() < 1e-15);
        assert!((c.event_prob[0] - 0.1).abs() < 1e-15);
        assert!((c.event_prob[1] - 0.18).abs() < 1e-15);
        assert_eq!(c.periods().collect::<Vec<_>>(), vec![1, 2]);

        let zero = hazard_to_curve(2, &[0.0, 0.0]).unwrap();
        assert_eq!(zero.survival, vec![1.0, 1.0]);
        assert_eq!(zero.event_prob, vec![0.0, 0.0]);

        let absorbing = hazard_to_curve(1, &[1.0, 0.3, 0.5]).unwrap();
        assert_eq!(absorbing.survival, vec![0.0, 0.0, 0.0]);
        assert_eq!(absorbing.event_prob, vec![1.0, 0.0, 0.0]);

        assert_eq!(hazard_to_curve(0, &[0.5, 1.5]), Err(CurveError { u: 2, value: 1.5 }));
        assert!(hazard_to_curve(0, &[f64::NAN]).is_err());
    }

    #[test]
    fn method_names_round_trip() {
        for m in MethodKind::ALL {
            assert_eq!(m.name().parse::<MethodKind>().unwrap(), m);
        }
        assert!("cox".parse::<MethodKind>().is_err());
        assert_eq!(MethodKind::Separate.model_count(4), 10);
        assert_eq!(MethodKind::Poolt.model_count(8), 8);
    }
}
