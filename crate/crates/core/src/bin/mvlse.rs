use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use mvlse::asymptotics::{LimitQuantities, MatrixJson};
use mvlse::experiments::{
    estimate_replication, parse_config, run_consistency_sweep, run_normality_study, run_rate_study, write_report,
    ExperimentConfig, Record, StudyKind, StudyReport,
};
use mvlse::model::example_model;
use mvlse::simulate::{limit_ode, particle_system_seeded, write_paths_csv, LawMode};
use mvlse::{Error, Result};

#[derive(Parser)]
#[command(name = "mvlse", version, about = "Simulation and least-squares estimation for path-dependent McKean-Vlasov SDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one replication and write paths.csv.
    Simulate(Common),
    /// Estimate theta on one replication per noise level.
    Estimate(Common),
    /// Solve the noise-free limit equation and its limit quantities.
    Ode(Common),
    /// Consistency sweep over the (epsilon, n) grid.
    Consistency(Common),
    /// Asymptotic-normality study.
    Normality(Common),
    /// Convergence-rate study of the noise-free scheme.
    Rate(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Record wall-clock runtime per replication.
    #[arg(long)]
    timing: bool,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = parse_config(&fs::read_to_string(&common.config)?)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.timing |= common.timing;
    fs::create_dir_all(&common.out)?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn simulate(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let model = example_model(cfg.r0)?;
    let grid = cfg.grid(cfg.n)?;
    let epsilon = cfg.epsilons[0];
    let paths = match cfg.law_mode {
        LawMode::ParticleEnsemble => {
            let sim = mvlse::SimConfig::new(grid, epsilon, cfg.alpha, cfg.n_particles, cfg.seed)?;
            particle_system_seeded(&model, &cfg.initial_path.segment(&grid)?, &cfg.theta0, &sim, 0)?
        }
        _ => vec![mvlse::experiments::observe(&model, &cfg, &grid, epsilon, 0, None)?.path],
    };
    let mut w = BufWriter::new(fs::File::create(common.out.join("paths.csv"))?);
    write_paths_csv(&mut w, &paths)?;
    w.flush()?;
    write_json(
        &common.out.join("summary.json"),
        &json!({ "version": mvlse::VERSION, "law_mode": cfg.law_mode, "epsilon": epsilon, "grid": grid, "config": cfg }),
    )?;
    println!("wrote {} path(s) with {} nodes", paths.len(), grid.path_len());
    Ok(())
}

fn estimate(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let model = example_model(cfg.r0)?;
    let grid = cfg.grid(cfg.n)?;
    let x0 = Arc::new(limit_ode(&model, &cfg.initial_path.segment(&grid)?, &cfg.theta0, &grid, cfg.alpha)?);
    let mut report = StudyReport {
        study: StudyKind::Estimate,
        version: mvlse::VERSION.into(),
        law_mode: cfg.law_mode,
        config: cfg.clone(),
        optimizer: Default::default(),
        records: Vec::new(),
        cells: Vec::new(),
        monotonicity: Vec::new(),
        targets: Vec::new(),
        normality: Vec::new(),
        rate: None,
        estimates: Vec::new(),
    };
    for &epsilon in &cfg.epsilons {
        let est = estimate_replication(&model, &cfg, &grid, epsilon, 0, Some(&x0))?;
        let err = est.theta_hat.iter().zip(&cfg.theta0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        println!("epsilon = {epsilon}: theta_hat = {:?} ({})", est.theta_hat, est.method);
        report.records.push(Record {
            epsilon,
            n: cfg.n,
            rep: 0,
            theta_hat: est.theta_hat.clone(),
            err_norm: Some(err),
            method: est.method.to_string(),
            runtime_ms: None,
        });
        report.estimates.push(est);
    }
    write_report(&common.out, &report)
}

fn ode(common: &Common) -> Result<()> {
    let cfg = load(common)?;
    let model = example_model(cfg.r0)?;
    let grid = cfg.grid(cfg.n)?;
    let x0 = limit_ode(&model, &cfg.initial_path.segment(&grid)?, &cfg.theta0, &grid, cfg.alpha)?;
    let mut w = BufWriter::new(fs::File::create(common.out.join("ode.csv"))?);
    write_paths_csv(&mut w, std::slice::from_ref(&x0))?;
    w.flush()?;
    let lq = LimitQuantities::new(&model, &x0, &cfg.theta0)?;
    let info = lq.info(&cfg.theta0);
    let cov = lq.limit_cov().ok();
    write_json(
        &common.out.join("summary.json"),
        &json!({
            "version": mvlse::VERSION,
            "config": cfg,
            "info_matrix": MatrixJson::from(&info),
            "limit_covariance": cov.as_ref().map(MatrixJson::from),
        }),
    )?;
    println!("X0(T) = {:?}", x0.at_step(grid.n));
    Ok(())
}

fn study(common: &Common, run: fn(&ExperimentConfig) -> Result<StudyReport>) -> Result<()> {
    let cfg = load(common)?;
    let report = run(&cfg)?;
    write_report(&common.out, &report)?;
    for c in &report.cells {
        println!("epsilon = {}, n = {}: median error {:.6} ({} ok, {} failed)", c.epsilon, c.n, c.median_err, c.succeeded, c.failed);
    }
    for c in &report.normality {
        if let Some(e) = c.rel_frobenius_error {
            println!("epsilon = {}, n = {}: covariance relative error {:.4}", c.epsilon, c.n, e);
        }
    }
    if let Some(rate) = &report.rate {
        match rate.slope {
            Some(s) => println!("rate slope {s:.4}"),
            None => println!("errors at round-off level; slope not fitted"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Simulate(c) => simulate(c),
        Command::Estimate(c) => estimate(c),
        Command::Ode(c) => ode(c),
        Command::Consistency(c) => study(c, run_consistency_sweep),
        Command::Normality(c) => study(c, run_normality_study),
        Command::Rate(c) => study(c, run_rate_study),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    e.exit_code() as u8
}
