//! Discrete-time survival data with known true hazards.
//!
//! Covariates are standard normal. Time-varying ones follow a stationary
//! Gaussian AR(1) over `t = 0..T-1`; time-invariant ones are drawn once.
//! Continuous event times come from the intensity
//! `lambda0(s) * exp(eta(x(floor(s))))`, so the true discrete hazard is
//! `h(u) = 1 - exp(-exp(eta(x(u-1))) * int_{u-1}^{u} lambda0)`.
//! Censoring is geometric over periods with administrative censoring at `T`.
//!
//! Column order is time-varying covariates first, then time-invariant ones,
//! named `X1..Xp`.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::math::{exp, expm1, powf, sin, sqrt};
pub use crate::metrics::TestSet;
use crate::seed;
use crate::survival_data::{CovariateSpec, GenericDataset, SubjectRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub time_invariant: usize,
    pub time_varying: usize,
}

impl Scenario {
    pub const fn new(time_invariant: usize, time_varying: usize) -> Self {
        Self { time_invariant, time_varying }
    }

    pub fn num_covariates(&self) -> usize {
        self.time_invariant + self.time_varying
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}TI+{}TV", self.time_invariant, self.time_varying)
    }
}

/// The scenarios of the factorial design; the first is the default.
pub const SCENARIOS: [Scenario; 4] =
    [Scenario::new(2, 4), Scenario::new(4, 2), Scenario::new(1, 5), Scenario::new(3, 3)];

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $label:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn label(self) -> &'static str {
                match self { $($name::$variant => $label),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.label())
            }
        }
    };
}

named_enum!(Autocorrelation { Strong => "Strong", Weak => "Weak" });
named_enum!(Snr { High => "High", Low => "Low" });
named_enum!(
    /// Baseline intensity family.
    BaselineDistribution { Exponential => "Exponential", Weibull => "Weibull", Gompertz => "Gompertz" }
);
named_enum!(
    /// Shape of the log-hazard in the covariates.
    Relationship { Linear => "Linear", Nonlinear => "Nonlinear", Interaction => "Interaction" }
);

/// Constants of the data-generating process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DgpConstants {
    pub rho_strong: f64,
    pub rho_weak: f64,
    /// Equicorrelation between covariates at a given time.
    pub cross_correlation: f64,
    /// Magnitude of the linear coefficients before SNR scaling; signs
    /// alternate `+, -, +, ...`.
    pub base_coefficient: f64,
    /// Replaces the alternating pattern (length must equal `p`).
    pub coefficients: Option<Vec<f64>>,
    /// Magnitude of the centred quadratic terms of the nonlinear relationship.
    pub quadratic_coefficient: f64,
    /// Coefficient of `X1 * X2` in the interaction relationship.
    pub interaction_coefficient: f64,
    pub snr_high_scale: f64,
    pub snr_low_scale: f64,
    pub weibull_shape: f64,
    pub gompertz_rate: f64,
    /// Target `P(U <= T)`; raised to `1 - censor_rate + admin_margin` when
    /// the censoring target would otherwise be unreachable.
    pub event_probability: f64,
    pub admin_margin: f64,
    pub calibration_size: usize,
    pub calibration_seed: u64,
    /// Fixed baseline scale (`lambda` or `a`); skips calibration.
    pub baseline_scale: Option<f64>,
    /// Fixed per-period censoring probability; skips calibration.
    pub censoring_probability: Option<f64>,
}

impl Default for DgpConstants {
    fn default() -> Self {
        Self {
            rho_strong: 0.9,
            rho_weak: 0.3,
            cross_correlation: 0.0,
            base_coefficient: 0.3,
            coefficients: None,
            quadratic_coefficient: 0.15,
            interaction_coefficient: 1.0,
            snr_high_scale: 2.0,
            snr_low_scale: 0.5,
            weibull_shape: 1.5,
            gompertz_rate: 0.15,
            event_probability: 0.7,
            admin_margin: 0.03,
            calibration_size: 5000,
            calibration_seed: 0x5EED_CA11_B0A7,
            baseline_scale: None,
            censoring_probability: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub autocorr: Autocorrelation,
    pub snr: Snr,
    pub distribution: BaselineDistribution,
    pub relationship: Relationship,
    /// Target share of subjects with `delta = 0`.
    pub censor_rate: f64,
    pub n: usize,
    /// `T`.
    #[serde(alias = "T")]
    pub horizon: usize,
    pub seed: u64,
    pub test_size: usize,
    pub constants: DgpConstants,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scenario: SCENARIOS[0],
            autocorr: Autocorrelation::Strong,
            snr: Snr::High,
            distribution: BaselineDistribution::Weibull,
            relationship: Relationship::Interaction,
            censor_rate: 0.10,
            n: 1000,
            horizon: 4,
            seed: 1,
            test_size: 1000,
            constants: DgpConstants::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    InvalidConfig(alloc::string::String),
}

/// Covariate values `values[k][t]` for `t = 0..T-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariatePath {
    pub values: Vec<Vec<f64>>,
}

impl CovariatePath {
    pub fn snapshot(&self, t: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[t]).collect()
    }
}

/// Event and censoring draw for one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTimes {
    /// Discrete event period, `None` when the event falls after `T`.
    pub event: Option<usize>,
    /// Censoring period (`T` when only administratively censored).
    pub censor: usize,
    pub tau: usize,
    pub delta: bool,
    /// True hazards for `u = 1..=T`.
    pub hazards: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub dataset: GenericDataset,
    /// Per subject (aligned with `dataset.subjects()`), true hazards for
    /// `u = 1..=T`.
    pub true_hazards: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulator {
    cfg: SimConfig,
    rho: f64,
    beta: Vec<f64>,
    gamma: Vec<f64>,
    interaction: f64,
    baseline_scale: f64,
    censor_prob: f64,
    /// Unit-scale baseline integral over `(u-1, u]`, index `u-1`.
    baseline_integrals: Vec<f64>,
}

impl Simulator {
    /// Validates the configuration and calibrates the baseline scale and the
    /// censoring probability.
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        let c = &cfg.constants;
        let p = cfg.scenario.num_covariates();
        let invalid = |msg: &str| Err(SimError::InvalidConfig(msg.into()));
        if cfg.n == 0 || cfg.horizon == 0 || cfg.test_size == 0 {
            return invalid("n, horizon and test_size must be >= 1");
        }
        if !(0.0..1.0).contains(&cfg.censor_rate) {
            return invalid("censor_rate must lie in [0, 1)");
        }
        for rho in [c.rho_strong, c.rho_weak] {
            if !(0.0..1.0).contains(&rho) {
                return invalid("autocorrelations must lie in [0, 1)");
            }
        }
        if !(0.0..1.0).contains(&c.cross_correlation) {
            return invalid("cross_correlation must lie in [0, 1)");
        }
        if !(c.event_probability > 0.0 && c.event_probability < 1.0) {
            return invalid("event_probability must lie in (0, 1)");
        }
        if c.calibration_size == 0 {
            return invalid("calibration_size must be >= 1");
        }
        let scale = match cfg.snr {
            Snr::High => c.snr_high_scale,
            Snr::Low => c.snr_low_scale,
        };
        let sign = |k: usize| if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        let beta: Vec<f64> = match &c.coefficients {
            Some(b) if b.len() != p => {
                return Err(SimError::InvalidConfig(format!("coefficients has length {}, expected {p}", b.len())))
            }
            Some(b) => b.iter().map(|v| v * scale).collect(),
            None => (0..p).map(|k| scale * c.base_coefficient * sign(k)).collect(),
        };
        let gamma = (0..p).map(|k| scale * c.quadratic_coefficient * sign(k)).collect();
        let rho = match cfg.autocorr {
            Autocorrelation::Strong => c.rho_strong,
            Autocorrelation::Weak => c.rho_weak,
        };
        let baseline_integrals = (1..=cfg.horizon)
            .map(|u| {
                let (a, b) = ((u - 1) as f64, u as f64);
                match cfg.distribution {
                    BaselineDistribution::Exponential => 1.0,
                    BaselineDistribution::Weibull => powf(b, c.weibull_shape) - powf(a, c.weibull_shape),
                    BaselineDistribution::Gompertz => {
                        (exp(c.gompertz_rate * b) - exp(c.gompertz_rate * a)) / c.gompertz_rate
                    }
                }
            })
            .collect();
        let mut sim = Self {
            interaction: scale * c.interaction_coefficient,
            cfg,
            rho,
            beta,
            gamma,
            baseline_scale: 1.0,
            censor_prob: 0.0,
            baseline_integrals,
        };
        sim.calibrate();
        Ok(sim)
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn baseline_scale(&self) -> f64 {
        self.baseline_scale
    }

    pub fn censoring_probability(&self) -> f64 {
        self.censor_prob
    }

    pub fn autocorrelation(&self) -> f64 {
        self.rho
    }

    /// Target `P(U <= T)` used in calibration.
    pub fn event_target(&self) -> f64 {
        let c = &self.cfg.constants;
        c.event_probability.max(1.0 - self.cfg.censor_rate + c.admin_margin).min(0.999)
    }

    pub fn covariate_specs(&self) -> Vec<CovariateSpec> {
        let s = self.cfg.scenario;
        (0..s.num_covariates())
            .map(|k| {
                let name = format!("X{}", k + 1);
                if k < s.time_varying {
                    CovariateSpec::time_varying(name)
                } else {
                    CovariateSpec::time_invariant(name)
                }
            })
            .collect()
    }

    fn calibrate(&mut self) {
        let c = self.cfg.constants.clone();
        if c.baseline_scale.is_some() && c.censoring_probability.is_some() {
            self.baseline_scale = c.baseline_scale.unwrap_or(1.0);
            self.censor_prob = c.censoring_probability.unwrap_or(0.0);
            return;
        }
        let horizon = self.cfg.horizon;
        let mut rng = seed::stream_rng(c.calibration_seed, 0);
        // per subject, unit-scale cumulative hazard up to each period
        let cumulative: Vec<Vec<f64>> = (0..c.calibration_size)
            .map(|_| {
                let path = self.gen_covariates(&mut rng);
                let mut acc = 0.0;
                (1..=horizon)
                    .map(|u| {
                        acc += self.unit_increment(&path, u);
                        acc
                    })
                    .collect()
            })
            .collect();
        let m = cumulative.len() as f64;

        self.baseline_scale = match c.baseline_scale {
            Some(s) => s,
            None => {
                let target = self.event_target();
                let event_prob = |s: f64| cumulative.iter().map(|h| -expm1(-s * h[horizon - 1])).sum::<f64>() / m;
                let (mut lo, mut hi) = (-40.0f64, 40.0f64);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if event_prob(exp(mid)) < target {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                exp(0.5 * (lo + hi))
            }
        };

        self.censor_prob = match c.censoring_probability {
            Some(q) => q,
            None => {
                let s = self.baseline_scale;
                let survival: Vec<Vec<f64>> =
                    cumulative.iter().map(|h| h.iter().map(|&v| exp(-s * v)).collect()).collect();
                let censored = |q: f64| {
                    survival
                        .iter()
                        .map(|surv| {
                            let mut total = 0.0;
                            let mut reach = 1.0;
                            for k in 1..=horizon {
                                let pk = if k < horizon { reach * q } else { reach };
                                total += pk * surv[k - 1];
                                reach *= 1.0 - q;
                            }
                            total
                        })
                        .sum::<f64>()
                        / m
                };
                let target = self.cfg.censor_rate;
                let (mut lo, mut hi) = (0.0f64, 1.0f64);
                if censored(lo) >= target {
                    0.0
                } else if censored(hi) <= target {
                    1.0
                } else {
                    for _ in 0..100 {
                        let mid = 0.5 * (lo + hi);
                        if censored(mid) < target {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                }
            }
        };
    }

    /// Draws one subject's covariate path.
    pub fn gen_covariates<R: Rng + ?Sized>(&self, rng: &mut R) -> CovariatePath {
        let s = self.cfg.scenario;
        let horizon = self.cfg.horizon;
        let cc = self.cfg.constants.cross_correlation;
        let (shared_w, own_w) = (sqrt(cc), sqrt(1.0 - cc));
        let draw = |rng: &mut R| -> Vec<f64> {
            let common: f64 = rng.sample(StandardNormal);
            (0..s.num_covariates())
                .map(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    shared_w * common + own_w * e
                })
                .collect()
        };
        let mut values: Vec<Vec<f64>> = (0..s.num_covariates()).map(|_| Vec::with_capacity(horizon)).collect();
        let first = draw(rng);
        for (k, v) in first.into_iter().enumerate() {
            values[k].push(v);
        }
        let innovation = sqrt(1.0 - self.rho * self.rho);
        for t in 1..horizon {
            let eps = draw(rng);
            for k in 0..s.num_covariates() {
                let prev = values[k][t - 1];
                let next = if k < s.time_varying { self.rho * prev + innovation * eps[k] } else { prev };
                values[k].push(next);
            }
        }
        CovariatePath { values }
    }

    /// Log relative intensity for covariate values `x`.
    pub fn linear_predictor(&self, x: &[f64]) -> f64 {
        let linear = |x: &[f64]| self.beta.iter().zip(x).map(|(b, v)| b * v).sum::<f64>();
        match self.cfg.relationship {
            Relationship::Linear => linear(x),
            Relationship::Nonlinear => {
                self.beta.iter().zip(&self.gamma).zip(x).map(|((b, g), v)| b * sin(*v) + g * (v * v - 1.0)).sum()
            }
            Relationship::Interaction => {
                let extra = if x.len() >= 2 { self.interaction * x[0] * x[1] } else { 0.0 };
                linear(x) + extra
            }
        }
    }

    fn unit_increment(&self, path: &CovariatePath, u: usize) -> f64 {
        let x: Vec<f64> = path.values.iter().map(|v| v[u - 1]).collect();
        self.baseline_integrals[u - 1] * exp(self.linear_predictor(&x))
    }

    fn cumulative_increment(&self, path: &CovariatePath, u: usize) -> f64 {
        self.baseline_scale * self.unit_increment(path, u)
    }

    /// True hazard at period `u` (1-based) along `path`.
    pub fn true_hazard(&self, path: &CovariatePath, u: usize) -> f64 {
        let h = -expm1(-self.cumulative_increment(path, u));
        h.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
    }

    pub fn true_hazards(&self, path: &CovariatePath) -> Vec<f64> {
        (1..=self.cfg.horizon).map(|u| self.true_hazard(path, u)).collect()
    }

    /// Draws the event period, the censoring period and the observed
    /// `(tau, delta)`.
    pub fn gen_times<R: Rng + ?Sized>(&self, path: &CovariatePath, rng: &mut R) -> SubjectTimes {
        let horizon = self.cfg.horizon;
        let threshold: f64 = rng.sample(Exp1);
        let mut acc = 0.0;
        let mut event = None;
        for u in 1..=horizon {
            acc += self.cumulative_increment(path, u);
            if acc >= threshold {
                event = Some(u);
                break;
            }
        }
        let mut censor = horizon;
        for k in 1..horizon {
            if rng.random::<f64>() < self.censor_prob {
                censor = k;
                break;
            }
        }
        let (tau, delta) = match event {
            Some(u) if u <= censor => (u, true),
            _ => (censor, false),
        };
        SubjectTimes { event, censor, tau, delta, hazards: self.true_hazards(path) }
    }

    fn record(id: u64, path: &CovariatePath, times: &SubjectTimes) -> SubjectRecord {
        SubjectRecord {
            id,
            tau: times.tau,
            delta: times.delta,
            covariates: path.values.iter().map(|v| v[..times.tau].to_vec()).collect(),
        }
    }

    /// Training sample of `n` subjects with ids `1..=n`.
    pub fn generate(&self, seed: u64) -> SimOutput {
        let mut rng = seed::stream_rng(seed, 0);
        let mut subjects = Vec::with_capacity(self.cfg.n);
        let mut true_hazards = Vec::with_capacity(self.cfg.n);
        for i in 0..self.cfg.n {
            let path = self.gen_covariates(&mut rng);
            let times = self.gen_times(&path, &mut rng);
            subjects.push(Self::record(i as u64 + 1, &path, &times));
            true_hazards.push(times.hazards);
        }
        let dataset = GenericDataset::new(self.covariate_specs(), subjects).expect("simulated subjects are valid");
        SimOutput { dataset, true_hazards }
    }

    /// `T` test sets of `test_size` subjects each; set `k` keeps only
    /// subjects at risk at `u = k`. Ids continue after the training ids.
    pub fn gen_testsets(&self, seed: u64) -> Vec<TestSet> {
        let size = self.cfg.test_size;
        (1..=self.cfg.horizon)
            .map(|k| {
                let mut rng = seed::stream_rng(seed, k as u64);
                let mut subjects = Vec::with_capacity(size);
                let mut true_hazards = Vec::with_capacity(size);
                let first_id = (self.cfg.n + (k - 1) * size) as u64 + 1;
                while subjects.len() < size {
                    let path = self.gen_covariates(&mut rng);
                    let times = self.gen_times(&path, &mut rng);
                    let at_risk = times.event.is_none_or(|e| e >= k) && times.censor >= k;
                    if at_risk {
                        true_hazards.push(times.hazards[k - 1]);
                        subjects.push(Self::record(first_id + subjects.len() as u64, &path, &times));
                    }
                }
                let dataset =
                    GenericDataset::new(self.covariate_specs(), subjects).expect("simulated subjects are valid");
                TestSet { u: k, dataset, true_hazards }
            })
            .collect()
    }
}
