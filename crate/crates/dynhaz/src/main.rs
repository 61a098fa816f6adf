use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dynhaz::benchmark::{self, BenchmarkConfig};
use dynhaz::io::{self as dio, LoadOptions};
use dynhaz::summary;
use dynhaz_core::person_period;
use dynhaz_core::{evaluate_grid, BundleConfig, MethodKind, ModelBundle, SimConfig, Simulator};

#[derive(Parser)]
#[command(name = "dynhaz", version, about = "Dynamic discrete-time hazard estimation with Hellinger forests")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "DYNHAZ_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DataArgs {
    /// Covariates stored as NAME_t columns that must stay constant over t.
    #[arg(long, value_delimiter = ',')]
    time_invariant: Vec<String>,
}

impl DataArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions { time_invariant: self.time_invariant.clone(), horizon: None }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write the person-period table one method trains on.
    Transform {
        #[arg(long)]
        input: PathBuf,
        /// separate, poolt, superpp or superpp0.
        #[arg(long)]
        method: MethodKind,
        #[arg(long)]
        t: Option<usize>,
        #[arg(long)]
        u: Option<usize>,
        /// Output file (stdout when omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Simulate a training set, T test sets and their true hazards.
    Simulate {
        /// SimConfig as JSON; defaults apply to omitted fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit every model of one method and save the bundle as JSON.
    Fit {
        #[arg(long)]
        method: MethodKind,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// BundleConfig as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Forest seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trees: Option<usize>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Hazard, survival and event-probability curve for one subject.
    Predict {
        #[arg(long)]
        bundle: PathBuf,
        /// Wide CSV holding the subject's covariates up to t.
        #[arg(long)]
        subject: PathBuf,
        #[arg(long)]
        t: usize,
        /// Subject to use when the file holds several.
        #[arg(long)]
        id: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
    },
    /// Evaluate a bundle on test_k.csv and truth.csv from a simulate run.
    Evaluate {
        #[arg(long)]
        bundle: PathBuf,
        /// Directory written by `dynhaz simulate`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the factorial simulation benchmark.
    Benchmark {
        /// BenchmarkConfig as JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        replications: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Suppress progress output.
        #[arg(long)]
        quiet: bool,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_config<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => dio::read_json(p).with_context(|| format!("reading {}", p.display())),
        None => Ok(T::default()),
    }
}

/// Returns whether every evaluated cell succeeded.
fn run(cli: Cli) -> Result<bool> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be >= 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global().context("configuring threads")?;
    }
    match cli.command {
        Command::Transform { input, method, t, u, out, data } => {
            let ds = dio::read_dataset(&input, &data.options())?;
            let table = match (method, t, u) {
                (MethodKind::Separate, Some(t), Some(u)) => person_period::build_separate(&ds, t, u)?,
                (MethodKind::Separate, _, _) => bail!("separate needs --t and --u"),
                (MethodKind::Poolt, Some(t), None) => person_period::build_poolt(&ds, t)?,
                (MethodKind::Poolt, _, _) => bail!("poolt needs --t and no --u"),
                (MethodKind::Superpp | MethodKind::SuperppDtpo, None, None) => person_period::build_superpp(&ds),
                (MethodKind::Superpp0, None, None) => person_period::build_superpp0(&ds),
                (m, _, _) => bail!("{m} uses the whole stacked table; drop --t/--u"),
            };
            dio::write_table(output(out.as_deref())?, &table)?;
            Ok(true)
        }
        Command::Simulate { config, seed, out } => {
            let mut cfg: SimConfig = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let sim = Simulator::new(cfg.clone())?;
            let train = sim.generate(cfg.seed);
            let tests = sim.gen_testsets(cfg.seed);
            dio::write_simulation(&out, &train, &tests)?;
            let censored = train.dataset.subjects().iter().filter(|s| !s.delta).count();
            eprintln!(
                "wrote {} training subjects ({:.1}% censored) and {} test sets to {}",
                cfg.n,
                100.0 * censored as f64 / cfg.n as f64,
                tests.len(),
                out.display()
            );
            Ok(true)
        }
        Command::Fit { method, input, out, config, seed, trees, data } => {
            let ds = dio::read_dataset(&input, &data.options())?;
            let mut cfg: BundleConfig = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.forest.seed = s;
            }
            if let Some(n) = trees {
                cfg.forest.num_trees = n;
            }
            let bundle = ModelBundle::fit(&ds, method, &cfg)?;
            dio::save_bundle(&out, &bundle)?;
            for a in &bundle.absent {
                eprintln!("warning: no model for {}: {}", a.key, a.reason);
            }
            eprintln!("fitted {} {} model(s) for T={}", bundle.model_count(), method, bundle.horizon);
            Ok(true)
        }
        Command::Predict { bundle, subject, t, id, out, data } => {
            let bundle = dio::load_bundle(&bundle)?;
            let ds = dio::read_dataset(&subject, &data.options())?;
            let record = match id {
                Some(id) => ds.subjects().iter().find(|s| s.id == id).with_context(|| format!("no subject {id}"))?,
                None if ds.subjects().len() == 1 => &ds.subjects()[0],
                None => bail!("{} holds {} subjects; pick one with --id", subject.display(), ds.subjects().len()),
            };
            if ds.covariate_names() != bundle.covariates {
                bail!("covariates {:?} do not match the bundle's {:?}", ds.covariate_names(), bundle.covariates);
            }
            let history =
                record.history(t).with_context(|| format!("subject {} has no covariates at t={t}", record.id))?;
            let curve = bundle.predict_curve(&history, t)?;
            dio::write_curve(output(out.as_deref())?, &curve)?;
            Ok(true)
        }
        Command::Evaluate { bundle, data, out } => {
            let bundle = dio::load_bundle(&bundle)?;
            let tests = dio::read_test_sets(&data, bundle.horizon, &LoadOptions::default())?;
            let eval = evaluate_grid(&bundle, &tests)?;
            dio::write_grid(output(out.as_deref())?, &eval)?;
            for f in &eval.failures {
                eprintln!("cell (t={}, u={}) failed: {}", f.t, f.u, f.reason);
            }
            if eval.undefined_cindex > 0 {
                eprintln!("{} cell(s) with undefined C-index", eval.undefined_cindex);
            }
            Ok(eval.failures.is_empty())
        }
        Command::Benchmark { config, seed, replications, out, quiet } => {
            let mut cfg: BenchmarkConfig = read_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.base_seed = s;
            }
            if let Some(r) = replications {
                cfg.replications = r;
            }
            if let Some(o) = out {
                cfg.output_dir = Some(o);
            }
            if cli.jobs.is_some() {
                cfg.parallelism = cli.jobs;
            }
            let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("benchmark-out"));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            let results = benchmark::run_benchmark_with_progress(&cfg, |done, total| {
                if !quiet {
                    eprint!("\r{done}/{total} replications");
                    if done == total {
                        eprintln!();
                    }
                }
            })?;
            let create = |name: &str| -> Result<BufWriter<File>> {
                let p = dir.join(name);
                Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
            };
            benchmark::write_results(create("results.csv")?, &results)?;
            benchmark::write_failures(create("failures.csv")?, &results)?;
            match summary::main_effects(&results.long_rows()) {
                Ok(effects) => summary::write_main_effects(create("main_effects.csv")?, &effects)?,
                Err(e) => eprintln!("main_effects.csv skipped: {e}"),
            }
            if !results.failures.is_empty() {
                eprintln!("{} failure(s); see failures.csv", results.failures.len());
            }
            Ok(results.failures.is_empty())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
