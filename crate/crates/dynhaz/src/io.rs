//! CSV and JSON formats.
//!
//! Datasets are wide CSV, one row per subject: `id,tau,delta` followed by
//! `NAME_t` columns for time-varying covariates (`t = 0..`) and a single
//! `NAME` column for time-invariant ones. Cells at `t >= tau` may be `NA`.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use dynhaz_core::dynamic_estimator::FittedModel;
use dynhaz_core::survival_data::RawSubject;
use dynhaz_core::{
    CovariateKind, CovariateSpec, GenericDataset, GridEvaluation, HazardCurve, ModelBundle, SimOutput, TestSet,
    TrainingTable, ValidationReport,
};

pub const NA: &str = "NA";

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    File { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("header: {0}")]
    Header(String),
    #[error("line {line}, column `{column}`: cannot parse `{value}`")]
    Cell { line: u64, column: String, value: String },
    #[error("dataset failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("{0}")]
    Format(String),
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    File::open(path).map(BufReader::new).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    File::create(path).map(BufWriter::new).map_err(|source| IoError::File { path: path.to_path_buf(), source })
}

/// Options for reading a wide dataset file.
#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Covariates stored as `NAME_t` columns that must be constant over `t`.
    pub time_invariant: Vec<String>,
    /// Required upper bound on `tau`.
    pub horizon: Option<usize>,
}

enum Column {
    Id,
    Tau,
    Delta,
    Cell { covariate: usize, t: usize },
}

fn split_time_suffix(name: &str) -> Option<(&str, usize)> {
    let (base, suffix) = name.rsplit_once('_')?;
    if base.is_empty() || suffix.is_empty() || !suffix.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some((base, suffix.parse().ok()?))
}

pub fn read_dataset(path: &Path, opts: &LoadOptions) -> Result<GenericDataset, IoError> {
    read_dataset_from(open(path)?, opts)
}

pub fn read_dataset_from<R: Read>(reader: R, opts: &LoadOptions) -> Result<GenericDataset, IoError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();

    let mut specs: Vec<CovariateSpec> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut times: Vec<Vec<usize>> = Vec::new();
    let mut unsuffixed: Vec<bool> = Vec::new();
    let mut columns = Vec::with_capacity(headers.len());
    let (mut has_id, mut has_tau, mut has_delta) = (false, false, false);
    for name in headers.iter() {
        let col = match name {
            "id" if !has_id => {
                has_id = true;
                Column::Id
            }
            "tau" if !has_tau => {
                has_tau = true;
                Column::Tau
            }
            "delta" if !has_delta => {
                has_delta = true;
                Column::Delta
            }
            "id" | "tau" | "delta" => return Err(IoError::Header(format!("duplicate column `{name}`"))),
            _ => {
                let (base, t, plain) = match split_time_suffix(name) {
                    Some((base, t)) => (base, t, false),
                    None => (name, 0, true),
                };
                let k = *index.entry(base.to_string()).or_insert_with(|| {
                    specs.push(CovariateSpec::time_varying(base));
                    times.push(Vec::new());
                    unsuffixed.push(plain);
                    specs.len() - 1
                });
                if unsuffixed[k] != plain || (plain && !times[k].is_empty()) {
                    return Err(IoError::Header(format!(
                        "covariate `{base}` appears both with and without a time suffix"
                    )));
                }
                if times[k].contains(&t) {
                    return Err(IoError::Header(format!("duplicate column `{name}`")));
                }
                times[k].push(t);
                Column::Cell { covariate: k, t }
            }
        };
        columns.push(col);
    }
    for (present, name) in [(has_id, "id"), (has_tau, "tau"), (has_delta, "delta")] {
        if !present {
            return Err(IoError::Header(format!("missing column `{name}`")));
        }
    }
    for (k, spec) in specs.iter_mut().enumerate() {
        let mut ts = times[k].clone();
        ts.sort_unstable();
        if ts.iter().enumerate().any(|(i, &t)| i != t) {
            return Err(IoError::Header(format!("time columns of `{}` are not contiguous from 0", spec.name)));
        }
        if unsuffixed[k] || opts.time_invariant.iter().any(|n| n == &spec.name) {
            spec.kind = CovariateKind::TimeInvariant;
        }
    }
    if let Some(missing) = opts.time_invariant.iter().find(|n| !index.contains_key(n.as_str())) {
        return Err(IoError::Header(format!("declared time-invariant covariate `{missing}` has no columns")));
    }

    let mut raws = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |col: usize, value: &str| IoError::Cell {
            line,
            column: headers.get(col).unwrap_or("").to_string(),
            value: value.to_string(),
        };
        let mut raw =
            RawSubject { id: 0, tau: 0, delta: 0, values: times.iter().map(|ts| vec![None; ts.len()]).collect() };
        for (col, (value, kind)) in record.iter().zip(&columns).enumerate() {
            match kind {
                Column::Id => raw.id = value.parse().map_err(|_| bad(col, value))?,
                Column::Tau => raw.tau = value.parse().map_err(|_| bad(col, value))?,
                Column::Delta => raw.delta = value.parse().map_err(|_| bad(col, value))?,
                Column::Cell { covariate, t } => {
                    if !(value.is_empty() || value == NA) {
                        raw.values[*covariate][*t] = Some(value.parse().map_err(|_| bad(col, value))?);
                    }
                }
            }
        }
        raws.push(raw);
    }
    GenericDataset::from_raw(specs, raws, opts.horizon).map_err(IoError::Invalid)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| NA.to_string(), fmt_f64)
}

pub fn write_dataset(path: &Path, ds: &GenericDataset) -> Result<(), IoError> {
    write_dataset_to(create(path)?, ds)
}

/// Inverse of [`read_dataset_from`]; time-varying covariates get `T`
/// columns with `NA` at `t >= tau`.
pub fn write_dataset_to<W: Write>(writer: W, ds: &GenericDataset) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let horizon = ds.horizon();
    let mut header = vec!["id".to_string(), "tau".to_string(), "delta".to_string()];
    for spec in ds.specs() {
        match spec.kind {
            CovariateKind::TimeInvariant => header.push(spec.name.clone()),
            CovariateKind::TimeVarying => header.extend((0..horizon).map(|t| format!("{}_{t}", spec.name))),
        }
    }
    w.write_record(&header)?;
    for s in ds.subjects() {
        let mut row = vec![s.id.to_string(), s.tau.to_string(), u8::from(s.delta).to_string()];
        for (spec, path) in ds.specs().iter().zip(&s.covariates) {
            match spec.kind {
                CovariateKind::TimeInvariant => row.push(fmt_f64(path[0])),
                CovariateKind::TimeVarying => row.extend((0..horizon).map(|t| fmt_opt(path.get(t).copied()))),
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Person-period rows as `id,y,t,u` followed by the covariate snapshot.
pub fn write_table<W: Write>(writer: W, table: &TrainingTable) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["id".to_string(), "y".into(), "t".into(), "u".into()];
    header.extend(table.schema.covariates.iter().cloned());
    w.write_record(&header)?;
    for r in &table.rows {
        let mut row = vec![r.id.to_string(), u8::from(r.y).to_string(), r.t.to_string(), r.u.to_string()];
        row.extend(r.features.iter().map(|&v| fmt_f64(v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve<W: Write>(writer: W, curve: &HazardCurve) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["u", "hazard", "survival", "event_prob"])?;
    for (i, u) in curve.periods().enumerate() {
        w.write_record([
            u.to_string(),
            fmt_f64(curve.hazards[i]),
            fmt_f64(curve.survival[i]),
            fmt_f64(curve.event_prob[i]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_grid<W: Write>(writer: W, eval: &GridEvaluation) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["method", "t", "u", "n", "mean_adist", "mean_alor", "cindex"])?;
    for c in &eval.cells {
        w.write_record([
            eval.method.name().to_string(),
            c.t.to_string(),
            c.u.to_string(),
            c.n.to_string(),
            fmt_f64(c.mean_adist),
            fmt_f64(c.mean_alor),
            fmt_opt(c.cindex),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(subject, u) -> true hazard`.
pub type Truth = BTreeMap<(u64, usize), f64>;

pub fn write_truth<W: Write>(writer: W, truth: &Truth) -> Result<(), IoError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["subject", "u", "true_hazard"])?;
    for (&(id, u), &h) in truth {
        w.write_record([id.to_string(), u.to_string(), fmt_f64(h)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: &Path) -> Result<Truth, IoError> {
    #[derive(serde::Deserialize)]
    struct Row {
        subject: u64,
        u: usize,
        true_hazard: f64,
    }
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let mut truth = Truth::new();
    for row in rdr.deserialize::<Row>() {
        let row = row?;
        if truth.insert((row.subject, row.u), row.true_hazard).is_some() {
            return Err(IoError::Format(format!("duplicate truth entry for subject {} at u={}", row.subject, row.u)));
        }
    }
    Ok(truth)
}

/// Writes `train.csv`, `test_k.csv` for `k = 1..=T` and `truth.csv`
/// (training subjects for `u <= tau`, test subjects at `u = k`).
pub fn write_simulation(dir: &Path, train: &SimOutput, tests: &[TestSet]) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(|source| IoError::File { path: dir.to_path_buf(), source })?;
    write_dataset(&dir.join("train.csv"), &train.dataset)?;
    let mut truth = Truth::new();
    for (s, hazards) in train.dataset.subjects().iter().zip(&train.true_hazards) {
        for u in 1..=s.tau {
            truth.insert((s.id, u), hazards[u - 1]);
        }
    }
    for set in tests {
        write_dataset(&dir.join(format!("test_{}.csv", set.u)), &set.dataset)?;
        for (s, &h) in set.dataset.subjects().iter().zip(&set.true_hazards) {
            truth.insert((s.id, set.u), h);
        }
    }
    write_truth(create(&dir.join("truth.csv"))?, &truth)
}

/// Reads `test_k.csv` for `k = 1..=horizon` from `dir` with true hazards
/// from `truth.csv`.
pub fn read_test_sets(dir: &Path, horizon: usize, opts: &LoadOptions) -> Result<Vec<TestSet>, IoError> {
    let truth = read_truth(&dir.join("truth.csv"))?;
    (1..=horizon)
        .map(|u| {
            let dataset = read_dataset(&dir.join(format!("test_{u}.csv")), opts)?;
            let true_hazards = dataset
                .subjects()
                .iter()
                .map(|s| {
                    truth.get(&(s.id, u)).copied().ok_or_else(|| {
                        IoError::Format(format!("truth.csv has no hazard for subject {} at u={u}", s.id))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            Ok(TestSet { u, dataset, true_hazards })
        })
        .collect()
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    let mut w = create(path)?;
    serde_json::to_writer(&mut w, value)?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    Ok(serde_json::from_reader(open(path)?)?)
}

pub fn save_bundle(path: &Path, bundle: &ModelBundle) -> Result<(), IoError> {
    write_json(path, bundle)
}

/// Loads a bundle and checks versions and tree structure.
pub fn load_bundle(path: &Path) -> Result<ModelBundle, IoError> {
    let bundle: ModelBundle = read_json(path)?;
    check_bundle(&bundle)?;
    Ok(bundle)
}

pub fn check_bundle(bundle: &ModelBundle) -> Result<(), IoError> {
    use dynhaz_core::dynamic_estimator::FORMAT_VERSION;
    if bundle.format_version != FORMAT_VERSION {
        return Err(IoError::Format(format!(
            "bundle format_version {} is not supported (expected {FORMAT_VERSION})",
            bundle.format_version
        )));
    }
    for entry in &bundle.models {
        match &entry.model {
            FittedModel::Forest(f) => {
                f.validate().map_err(|e| IoError::Format(format!("model {}: {e}", entry.key)))?;
            }
            FittedModel::Dtpo(m) => {
                if m.format_version != dynhaz_core::dtpo::FORMAT_VERSION
                    || m.alpha.len() != m.horizon
                    || m.beta.len() != m.schema.len()
                {
                    return Err(IoError::Format(format!("model {}: malformed DTPO coefficients", entry.key)));
                }
            }
        }
    }
    if bundle.models.windows(2).any(|w| w[0].key >= w[1].key) {
        return Err(IoError::Format("bundle models are not sorted by key".into()));
    }
    Ok(())
}
