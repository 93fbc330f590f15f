use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Utc;
use conevol_core::calibration::{make_profile_pair, ProfilePair};
use conevol_core::density::RadialDensity;
use conevol_core::experiment::{analytic_table, run_experiment, unit_grid, write_csv_rows, ExperimentConfig};
use serde::Serialize;

use crate::config::{self, canonical_json, config_hash};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::suite::{run_suite, Level};

/// Flags shared by every run-type command.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: PathBuf,
}

struct Run {
    cfg: ExperimentConfig,
    workers: usize,
    pool: rayon::ThreadPool,
    started: chrono::DateTime<Utc>,
    outputs: Vec<PathBuf>,
    out: PathBuf,
}

impl Run {
    fn start(opts: &RunOptions) -> Result<Self, CliError> {
        let started = Utc::now();
        let mut cfg = config::load(opts.config.as_deref())?;
        if let Some(seed) = opts.seed {
            cfg.seed = seed;
        }
        let workers = match opts.workers {
            Some(0) => return Err(CliError::Usage("--workers must be at least 1".into())),
            Some(w) => w,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
        fs::create_dir_all(&opts.out).map_err(CliError::io(format!("creating {}", opts.out.display())))?;
        Ok(Self {
            cfg,
            workers,
            pool,
            started,
            outputs: Vec::new(),
            out: opts.out.clone(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, text).map_err(CliError::io(format!("writing {}", path.display())))?;
        self.outputs.push(path);
        Ok(())
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).map_err(conevol_core::Error::from)?;
        self.write(name, &(text + "\n"))
    }

    fn finish(self, command: &str) -> Result<PathBuf, CliError> {
        let manifest = RunManifest::new(
            command,
            config_hash(&self.cfg),
            self.cfg.seed,
            self.workers,
            self.started,
            self.outputs,
        );
        manifest.write(&self.out)
    }

    fn echo_config(&mut self) -> Result<(), CliError> {
        let value: serde_json::Value =
            serde_json::from_str(&canonical_json(&self.cfg)).map_err(conevol_core::Error::from)?;
        self.write_json("config.json", &value)
    }
}

#[derive(Serialize)]
struct CalibrationSummary<'a> {
    n: usize,
    kappa: f64,
    m1: f64,
    m2: f64,
    g1_at_one: f64,
    g2_at_one: f64,
    pairing_residual: f64,
    pairing_residual_relative: f64,
    tol_pair: f64,
    fit1_node_error: f64,
    fit2_node_error: f64,
    fit1_max_gap: f64,
    fit2_max_gap: f64,
    tol_fit: f64,
    cones1: usize,
    cones2: usize,
    pair_file: &'a Path,
}

pub fn calibrate(opts: &RunOptions) -> Result<(), CliError> {
    let mut run = Run::start(opts)?;
    let cal = run.cfg.calibration.clone();
    let pair = run.pool.install(|| make_profile_pair(&cal))?;
    run.write("pair.json", &(pair.to_json()? + "\n"))?;
    let d = &pair.diagnostics;
    let pair_file = run.out.join("pair.json");
    let summary = CalibrationSummary {
        n: pair.n.get(),
        kappa: pair.kappa,
        m1: pair.m1,
        m2: pair.m2,
        g1_at_one: d.g1_at_one,
        g2_at_one: d.g2_at_one,
        pairing_residual: d.pairing_residual,
        pairing_residual_relative: d.pairing_residual_relative,
        tol_pair: cal.tol_pair,
        fit1_node_error: d.fit1.node_error,
        fit2_node_error: d.fit2.node_error,
        fit1_max_gap: d.fit1.max_gap,
        fit2_max_gap: d.fit2.max_gap,
        tol_fit: cal.tol_fit,
        cones1: pair.i1.len(),
        cones2: pair.i2.len(),
        pair_file: &pair_file,
    };
    let text = serde_json::to_string_pretty(&summary).map_err(conevol_core::Error::from)?;
    println!("{text}");
    run.write("calibration.json", &(text + "\n"))?;
    run.echo_config()?;
    run.finish("calibrate")?;
    Ok(())
}

pub fn experiment(opts: &RunOptions) -> Result<(), CliError> {
    let mut run = Run::start(opts)?;
    let cfg = run.cfg.clone();
    let outcome = run.pool.install(|| run_experiment(&cfg))?;
    run.write("report.json", &(outcome.report.to_json()? + "\n"))?;
    run.write("pair.json", &(outcome.pair.to_json()? + "\n"))?;
    run.echo_config()?;
    let tables = outcome.write_tables(&run.out)?;
    run.outputs.extend(tables);

    let r = &outcome.report;
    println!(
        "volume ratio: analytic {:.5}, Monte Carlo {:.5} [{:.5}, {:.5}], target {:.5}",
        r.volume.analytic_ratio,
        r.volume.mc_ratio,
        r.volume.mc_ratio_ci.lo,
        r.volume.mc_ratio_ci.hi,
        r.volume.target_ratio
    );
    println!(
        "l1 = {:.4e} (shell {:.3e}, leak {:.4}/{:.4}), tv_bound({}) = {:.4}",
        r.distance.profile.l1,
        r.distance.profile.l1_shell,
        r.distance.profile.leak_1,
        r.distance.profile.leak_2,
        r.distance.points_per_sequence,
        r.distance.tv_bound
    );
    for d in &r.distinguishers {
        println!(
            "{}: accuracy {:.4} [{:.4}, {:.4}], bound {:.4}, {}",
            d.name,
            d.accuracy,
            d.accuracy_ci.lo,
            d.accuracy_ci.hi,
            d.bound,
            if d.consistent { "consistent" } else { "VIOLATED" }
        );
    }
    let manifest = run.finish("experiment")?;
    println!("manifest: {}", manifest.display());
    if !r.consistent {
        let bad: Vec<&str> = r
            .distinguishers
            .iter()
            .filter(|d| !d.consistent)
            .map(|d| d.name.as_str())
            .collect();
        return Err(CliError::Invariant(format!(
            "accuracy exceeds the TV bound for {}",
            bad.join(", ")
        )));
    }
    Ok(())
}

pub fn verify(opts: &RunOptions, level: Level) -> Result<(), CliError> {
    let mut run = Run::start(opts)?;
    let cfg = run.cfg.clone();
    let report = run.pool.install(|| run_suite(&cfg, level));
    let text = serde_json::to_string_pretty(&report).map_err(conevol_core::Error::from)?;
    println!("{text}");
    run.write("verify.json", &(text + "\n"))?;
    run.finish("verify")?;
    if !report.passed {
        return Err(CliError::Invariant(format!(
            "failed checks: {}",
            report.failures().join(", ")
        )));
    }
    Ok(())
}

pub fn inspect(pair_path: &Path, grid: usize, out: Option<&Path>) -> Result<(), CliError> {
    if grid < 2 {
        return Err(CliError::Usage("--grid must be at least 2".into()));
    }
    let text = fs::read_to_string(pair_path)
        .map_err(|e| CliError::Usage(format!("cannot read pair file {}: {e}", pair_path.display())))?;
    let pair = ProfilePair::from_json(&text)?;
    let rd1 = RadialDensity::new(pair.family1());
    let rd2 = RadialDensity::new(pair.family2());
    let rows = analytic_table(&pair, &rd1, &rd2, &unit_grid(grid));
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(CliError::io(format!("creating {}", dir.display())))?;
            let path = dir.join("inspect.csv");
            let file = fs::File::create(&path).map_err(CliError::io(format!("writing {}", path.display())))?;
            write_csv_rows(file, &rows)?;
            eprintln!("wrote {}", path.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv_rows(&mut lock, &rows)?;
            lock.flush().map_err(CliError::io("writing stdout"))?;
        }
    }
    Ok(())
}
