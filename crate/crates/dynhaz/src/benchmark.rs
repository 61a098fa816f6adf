//! Factorial simulation benchmark.
//!
//! Every `(factor cell, replication)` pair simulates one training sample
//! and `T` test sets, fits each method and evaluates it on the full
//! `(t, u)` grid. Seeds depend only on the base seed, the factor levels and
//! the replication index, so a cell reproduces identically inside any grid.

use std::fmt;
use std::io::Write;
use std::path::PathBuf;

use dynhaz_core::simgen::{
    Autocorrelation, BaselineDistribution, DgpConstants, Relationship, Scenario, SimConfig, Simulator, Snr, SCENARIOS,
};
use dynhaz_core::{evaluate_grid, seed, BundleConfig, MethodKind, ModelBundle};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::io::{IoError, NA};

/// Lists of levels per factor; the benchmark runs their Cartesian product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FactorGrid {
    pub scenario: Vec<Scenario>,
    pub autocorr: Vec<Autocorrelation>,
    pub snr: Vec<Snr>,
    pub distribution: Vec<BaselineDistribution>,
    pub relationship: Vec<Relationship>,
    pub censor_rate: Vec<f64>,
    pub n: Vec<usize>,
    #[serde(alias = "T")]
    pub horizon: Vec<usize>,
}

impl Default for FactorGrid {
    fn default() -> Self {
        Self {
            scenario: vec![SCENARIOS[0]],
            autocorr: vec![Autocorrelation::Strong],
            snr: vec![Snr::High],
            distribution: vec![BaselineDistribution::Weibull],
            relationship: vec![Relationship::Interaction],
            censor_rate: vec![0.10],
            n: vec![1000],
            horizon: vec![4],
        }
    }
}

impl FactorGrid {
    /// The full factorial design.
    pub fn full() -> Self {
        Self {
            scenario: SCENARIOS.to_vec(),
            autocorr: Autocorrelation::ALL.to_vec(),
            snr: Snr::ALL.to_vec(),
            distribution: BaselineDistribution::ALL.to_vec(),
            relationship: Relationship::ALL.to_vec(),
            censor_rate: vec![0.10, 0.50],
            n: vec![200, 1000, 5000],
            horizon: vec![4, 8],
        }
    }

    pub fn cells(&self) -> Vec<FactorCell> {
        let mut cells = Vec::new();
        for &scenario in &self.scenario {
            for &autocorr in &self.autocorr {
                for &snr in &self.snr {
                    for &distribution in &self.distribution {
                        for &relationship in &self.relationship {
                            for &censor_rate in &self.censor_rate {
                                for &n in &self.n {
                                    for &horizon in &self.horizon {
                                        cells.push(FactorCell {
                                            scenario,
                                            autocorr,
                                            snr,
                                            distribution,
                                            relationship,
                                            censor_rate,
                                            n,
                                            horizon,
                                        });
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        cells
    }
}

/// One combination of factor levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FactorCell {
    pub scenario: Scenario,
    pub autocorr: Autocorrelation,
    pub snr: Snr,
    pub distribution: BaselineDistribution,
    pub relationship: Relationship,
    pub censor_rate: f64,
    pub n: usize,
    pub horizon: usize,
}

pub const FACTOR_NAMES: [&str; 8] =
    ["scenario", "autocorr", "snr", "distribution", "relationship", "censor_rate", "n", "T"];

impl FactorCell {
    /// Level labels in [`FACTOR_NAMES`] order.
    pub fn levels(&self) -> [String; 8] {
        [
            self.scenario.to_string(),
            self.autocorr.to_string(),
            self.snr.to_string(),
            self.distribution.to_string(),
            self.relationship.to_string(),
            format!("{}", self.censor_rate),
            self.n.to_string(),
            self.horizon.to_string(),
        ]
    }

    pub fn replication_seed(&self, base_seed: u64, replication: usize) -> u64 {
        seed::derive(
            base_seed,
            &[
                self.scenario.time_invariant as u64,
                self.scenario.time_varying as u64,
                self.autocorr as u64,
                self.snr as u64,
                self.distribution as u64,
                self.relationship as u64,
                self.censor_rate.to_bits(),
                self.n as u64,
                self.horizon as u64,
                replication as u64,
            ],
        )
    }

    pub fn sim_config(&self, seed: u64, test_size: usize, constants: &DgpConstants) -> SimConfig {
        SimConfig {
            scenario: self.scenario,
            autocorr: self.autocorr,
            snr: self.snr,
            distribution: self.distribution,
            relationship: self.relationship,
            censor_rate: self.censor_rate,
            n: self.n,
            horizon: self.horizon,
            seed,
            test_size,
            constants: constants.clone(),
        }
    }
}

impl fmt::Display for FactorCell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.levels().join("/"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub grid: FactorGrid,
    pub methods: Vec<MethodKind>,
    pub replications: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Worker threads; `None` uses the ambient pool.
    pub parallelism: Option<usize>,
    pub test_size: usize,
    pub bundle: BundleConfig,
    pub constants: DgpConstants,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            grid: FactorGrid::default(),
            methods: MethodKind::ALL.to_vec(),
            replications: 50,
            base_seed: 2021,
            output_dir: None,
            parallelism: None,
            test_size: 1000,
            bundle: BundleConfig::default(),
            constants: DgpConstants::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchmarkError {
    #[error("invalid benchmark config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<(), BenchmarkError> {
        let g = &self.grid;
        let empty = g.scenario.is_empty()
            || g.autocorr.is_empty()
            || g.snr.is_empty()
            || g.distribution.is_empty()
            || g.relationship.is_empty()
            || g.censor_rate.is_empty()
            || g.n.is_empty()
            || g.horizon.is_empty();
        if empty {
            return Err(BenchmarkError::Config("every factor needs at least one level".into()));
        }
        if self.methods.is_empty() {
            return Err(BenchmarkError::Config("methods must not be empty".into()));
        }
        if self.replications == 0 {
            return Err(BenchmarkError::Config("replications must be >= 1".into()));
        }
        if self.parallelism == Some(0) {
            return Err(BenchmarkError::Config("parallelism must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "ADIST")]
    Adist,
    #[serde(rename = "ALOR")]
    Alor,
    #[serde(rename = "CINDEX")]
    Cindex,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Adist, Metric::Alor, Metric::Cindex];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Adist => "ADIST",
            Metric::Alor => "ALOR",
            Metric::Cindex => "CINDEX",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| format!("unknown metric `{s}`"))
    }
}

/// One long-format results row; `value` is `None` for an undefined C-index.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub cell: usize,
    pub method: MethodKind,
    pub t: usize,
    pub u: usize,
    pub replication: usize,
    pub metric: Metric,
    pub value: Option<f64>,
}

/// A cell, or a whole fit when `t`/`u` are `None`, that produced no metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRow {
    pub cell: usize,
    pub method: MethodKind,
    pub replication: usize,
    pub t: Option<usize>,
    pub u: Option<usize>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResults {
    pub cells: Vec<FactorCell>,
    pub rows: Vec<ResultRow>,
    pub failures: Vec<FailureRow>,
}

struct Unit {
    rows: Vec<ResultRow>,
    failures: Vec<FailureRow>,
}

pub fn run_benchmark(cfg: &BenchmarkConfig) -> Result<BenchmarkResults, BenchmarkError> {
    run_benchmark_with_progress(cfg, |_, _| {})
}

/// Runs the benchmark; `progress(done, total)` is called as units finish
/// (possibly from worker threads).
pub fn run_benchmark_with_progress<P>(cfg: &BenchmarkConfig, progress: P) -> Result<BenchmarkResults, BenchmarkError>
where
    P: Fn(usize, usize) + Sync,
{
    cfg.validate()?;
    let cells = cfg.grid.cells();
    let work: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..cfg.replications).map(move |r| (c, r))).collect();
    let done = std::sync::atomic::AtomicUsize::new(0);
    let run = || -> Vec<Unit> {
        work.par_iter()
            .map(|&(c, r)| {
                let unit = run_unit(cfg, c, &cells[c], r);
                let finished = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                progress(finished, work.len());
                unit
            })
            .collect()
    };
    let units = match cfg.parallelism {
        Some(threads) => rayon::ThreadPoolBuilder::new().num_threads(threads).build()?.install(run),
        None => run(),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for unit in units {
        rows.extend(unit.rows);
        failures.extend(unit.failures);
    }
    Ok(BenchmarkResults { cells, rows, failures })
}

fn run_unit(cfg: &BenchmarkConfig, index: usize, cell: &FactorCell, replication: usize) -> Unit {
    let mut unit = Unit { rows: Vec::new(), failures: Vec::new() };
    let rep_seed = cell.replication_seed(cfg.base_seed, replication);
    let fail_all = |unit: &mut Unit, error: String| {
        for &method in &cfg.methods {
            unit.failures.push(FailureRow { cell: index, method, replication, t: None, u: None, error: error.clone() });
        }
    };
    let sim = match Simulator::new(cell.sim_config(rep_seed, cfg.test_size, &cfg.constants)) {
        Ok(sim) => sim,
        Err(e) => {
            fail_all(&mut unit, e.to_string());
            return unit;
        }
    };
    let train = sim.generate(rep_seed);
    let tests = sim.gen_testsets(rep_seed);
    let mut bundle_cfg = cfg.bundle.clone();
    bundle_cfg.forest.seed = seed::derive(rep_seed, &[u64::MAX]);

    for &method in &cfg.methods {
        let fail = |unit: &mut Unit, t, u, error: String| {
            unit.failures.push(FailureRow { cell: index, method, replication, t, u, error })
        };
        let bundle = match ModelBundle::fit(&train.dataset, method, &bundle_cfg) {
            Ok(b) => b,
            Err(e) => {
                fail(&mut unit, None, None, e.to_string());
                continue;
            }
        };
        let eval = match evaluate_grid(&bundle, &tests) {
            Ok(e) => e,
            Err(e) => {
                fail(&mut unit, None, None, e.to_string());
                continue;
            }
        };
        for c in &eval.cells {
            for (metric, value) in
                [(Metric::Adist, Some(c.mean_adist)), (Metric::Alor, Some(c.mean_alor)), (Metric::Cindex, c.cindex)]
            {
                unit.rows.push(ResultRow { cell: index, method, t: c.t, u: c.u, replication, metric, value });
            }
        }
        for f in &eval.failures {
            fail(&mut unit, Some(f.t), Some(f.u), f.reason.clone());
        }
        // pairs beyond the training horizon have no model at all
        for t in 0..cell.horizon {
            for u in (t + 1).max(bundle.horizon + 1)..=cell.horizon {
                fail(&mut unit, Some(t), Some(u), format!("training data ends at T={}", bundle.horizon));
            }
        }
    }
    unit
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), |x| format!("{x}"))
}

fn opt_index(v: Option<usize>) -> String {
    v.map_or_else(|| NA.to_string(), |x| x.to_string())
}

/// Long-format results:
/// `<factors>,method,t,u,replication,metric,value`.
pub fn write_results<W: Write>(writer: W, results: &BenchmarkResults) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FACTOR_NAMES.to_vec();
    header.extend(["method", "t", "u", "replication", "metric", "value"]);
    w.write_record(&header)?;
    let levels: Vec<[String; 8]> = results.cells.iter().map(FactorCell::levels).collect();
    for r in &results.rows {
        let mut row: Vec<String> = levels[r.cell].to_vec();
        row.extend([
            r.method.name().to_string(),
            r.t.to_string(),
            r.u.to_string(),
            r.replication.to_string(),
            r.metric.name().to_string(),
            fmt_value(r.value),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_failures<W: Write>(writer: W, results: &BenchmarkResults) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = FACTOR_NAMES.to_vec();
    header.extend(["method", "replication", "t", "u", "error"]);
    w.write_record(&header)?;
    for f in &results.failures {
        let mut row: Vec<String> = results.cells[f.cell].levels().to_vec();
        row.extend([
            f.method.name().to_string(),
            f.replication.to_string(),
            opt_index(f.t),
            opt_index(f.u),
            f.error.clone(),
        ]);
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// A results row as read back from `results.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct LongRow {
    pub levels: [String; 8],
    pub method: MethodKind,
    pub t: usize,
    pub u: usize,
    pub replication: usize,
    pub metric: Metric,
    pub value: Option<f64>,
}

impl BenchmarkResults {
    pub fn long_rows(&self) -> Vec<LongRow> {
        let levels: Vec<[String; 8]> = self.cells.iter().map(FactorCell::levels).collect();
        self.rows
            .iter()
            .map(|r| LongRow {
                levels: levels[r.cell].clone(),
                method: r.method,
                t: r.t,
                u: r.u,
                replication: r.replication,
                metric: r.metric,
                value: r.value,
            })
            .collect()
    }
}

pub fn read_results<R: std::io::Read>(reader: R) -> Result<Vec<LongRow>, IoError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let expected: Vec<&str> =
        FACTOR_NAMES.iter().copied().chain(["method", "t", "u", "replication", "metric", "value"]).collect();
    if header.iter().collect::<Vec<_>>() != expected {
        return Err(IoError::Header(format!("expected columns {}", expected.join(","))));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad =
            |col: usize| IoError::Cell { line, column: expected[col].to_string(), value: record[col].to_string() };
        let levels: [String; 8] = std::array::from_fn(|i| record[i].to_string());
        out.push(LongRow {
            levels,
            method: record[8].parse().map_err(|_| bad(8))?,
            t: record[9].parse().map_err(|_| bad(9))?,
            u: record[10].parse().map_err(|_| bad(10))?,
            replication: record[11].parse().map_err(|_| bad(11))?,
            metric: record[12].parse().map_err(|_| bad(12))?,
            value: match &record[13] {
                NA => None,
                v => Some(v.parse().map_err(|_| bad(13))?),
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_cells_are_the_product() {
        assert_eq!(FactorGrid::default().cells().len(), 1);
        assert_eq!(FactorGrid::full().cells().len(), 4 * 2 * 2 * 3 * 3 * 2 * 3 * 2);
    }

    #[test]
    fn seeds_depend_on_levels_not_grid_position() {
        let cell = FactorGrid::default().cells()[0];
        let other = FactorCell { n: 200, ..cell };
        assert_ne!(cell.replication_seed(1, 0), other.replication_seed(1, 0));
        assert_ne!(cell.replication_seed(1, 0), cell.replication_seed(1, 1));
        let grid = FactorGrid { n: vec![200, 1000], ..FactorGrid::default() };
        assert_eq!(grid.cells()[1].replication_seed(1, 3), cell.replication_seed(1, 3));
    }

    #[test]
    fn config_validation() {
        assert!(BenchmarkConfig::default().validate().is_ok());
        let bad = BenchmarkConfig { replications: 0, ..BenchmarkConfig::default() };
        assert!(bad.validate().is_err());
        let bad = BenchmarkConfig { methods: vec![], ..BenchmarkConfig::default() };
        assert!(bad.validate().is_err());
        let bad =
            BenchmarkConfig { grid: FactorGrid { n: vec![], ..FactorGrid::default() }, ..BenchmarkConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_accepts_partial_documents() {
        let cfg: BenchmarkConfig = serde_json::from_str(
            r#"{"replications": 2, "methods": ["Separate", "SuperppDTPO"], "grid": {"n": [200]}}"#,
        )
        .unwrap();
        assert_eq!(cfg.replications, 2);
        assert_eq!(cfg.methods, vec![MethodKind::Separate, MethodKind::SuperppDtpo]);
        assert_eq!(cfg.grid.n, vec![200]);
        assert_eq!(cfg.grid.horizon, vec![4]);
    }
}
