//! Command-line front end: `run`, `bench`, `fit`, `predict`.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical blow-up,
//! 4 i/o or data-file error. Artifacts are written before a blow-up is
//! reported, so a failed run still leaves its trace on disk.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use lbtk_core::kernels::{collide_flops_per_site, propagate_bytes_per_site};
use lbtk_core::perfmodel::{
    crossover_ranks, fit_model, predict_curve, KernelTimingSample, SampleKernel, SampleRegion,
    ScalingModelParams,
};

use crate::bench::{self, median};
use crate::config::{ModeKind, RunConfig, VariantKind};
use crate::error::{AppError, EXIT_OK};
use crate::report::{
    dump_field, meta_path, read_json, read_measured_csv, read_timing_csv, write_gnuplot,
    write_json, write_monitor_csv, write_timing_csv, FitDoc, TimingMeta, TimingRow,
};
use crate::runner;

#[derive(Parser)]
#[command(
    name = "lbtk",
    version,
    about = "Lattice Boltzmann performance toolkit: run, benchmark, calibrate, predict"
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Run one simulation and write timing/monitor artifacts
    Run(RunArgs),
    /// Benchmark propagate variants and execution modes
    Bench(RunArgs),
    /// Calibrate the strong-scaling timing model from timing CSVs
    Fit(FitArgs),
    /// Evaluate a calibrated model over a rank range
    Predict(PredictArgs),
}

#[derive(Args)]
pub struct RunArgs {
    /// Run configuration (flat JSON document)
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory (default: config's out_dir, else ./out)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override the configured propagate variant
    #[arg(long)]
    pub variant: Option<VariantKind>,
    /// Override the configured execution mode
    #[arg(long)]
    pub mode: Option<ModeKind>,
    /// Override the configured rank count
    #[arg(long)]
    pub ranks: Option<usize>,
    /// Override the configured benchmark repetitions
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Args)]
pub struct FitArgs {
    /// Timing CSVs from run/bench; each needs its <file>.meta.json sidecar
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output directory for fit.json (default ./out)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Calibrate only on profiles with this lattice height
    #[arg(long)]
    pub ly: Option<usize>,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Parameter document from fit (or hand-written alpha..delta)
    #[arg(long)]
    pub params: PathBuf,
    /// Global lattice width to predict for
    #[arg(long)]
    pub lx: usize,
    /// Global lattice height to predict for
    #[arg(long)]
    pub ly: usize,
    /// Predict the curve for 1..=N ranks
    #[arg(long)]
    pub ranks: usize,
    /// Optional measured points (CSV with header n,T) to overlay
    #[arg(long)]
    pub measured: Option<PathBuf>,
    /// Output directory (default ./out)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn main_impl() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Bench(args) => cmd_bench(args),
        Cmd::Fit(args) => cmd_fit(args),
        Cmd::Predict(args) => cmd_predict(args),
    }
}

fn apply_overrides(cfg: &mut RunConfig, args: &RunArgs) {
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(m) = args.mode {
        cfg.mode = m;
    }
    if let Some(n) = args.ranks {
        cfg.n_ranks = n;
    }
    if let Some(r) = args.reps {
        cfg.reps = r;
    }
}

fn resolve_out(cli_out: &Option<PathBuf>, cfg_out: &Option<String>) -> Result<PathBuf, AppError> {
    let dir = cli_out
        .clone()
        .or_else(|| cfg_out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir).map_err(|e| AppError::io(&dir, e))?;
    Ok(dir)
}

/// Everything needed to audit a run later: the effective configuration
/// and the cost constants the metrics were computed with.
#[derive(Serialize)]
struct RunMeta<'a> {
    config: &'a RunConfig,
    steps_completed: usize,
    blowup: Option<String>,
    counted_collide_flops_per_site: u64,
    conventional_flops_per_site: f64,
    propagate_bytes_per_site: f64,
    equilibrium: String,
    equilibrium_table_bytes: usize,
}

fn timing_meta(cfg: &RunConfig, rows: usize) -> TimingMeta {
    TimingMeta {
        lx_tot: cfg.lx_tot,
        ly: cfg.ly,
        n_ranks: cfg.n_ranks,
        steps: rows,
        model: cfg.model.to_string(),
        variant: cfg.variant.to_string(),
        mode: cfg.mode.to_string(),
    }
}

fn cmd_run(args: RunArgs) -> Result<(), AppError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    apply_overrides(&mut cfg, &args);
    cfg.validate()?;
    let out_dir = resolve_out(&args.out, &cfg.out_dir)?;
    let setup = runner::build_setup(&cfg)?;

    let outcome = runner::run(&cfg)?;

    let timing = out_dir.join("timing.csv");
    write_timing_csv(&timing, &outcome.rank_logs[0])?;
    write_json(&meta_path(&timing), &timing_meta(&cfg, outcome.rank_logs[0].len()))?;
    write_monitor_csv(&out_dir.join("monitor.csv"), &outcome.monitor)?;
    write_json(
        &out_dir.join("run_meta.json"),
        &RunMeta {
            config: &cfg,
            steps_completed: outcome.steps_completed,
            blowup: outcome
                .blowup
                .as_ref()
                .map(|b| format!("step {} rank {}: {}", b.step, b.rank, b.what)),
            counted_collide_flops_per_site: collide_flops_per_site(&setup.eq, &setup.vset),
            conventional_flops_per_site: cfg.flops_per_site,
            propagate_bytes_per_site: cfg
                .bytes_per_site_propagate
                .unwrap_or(propagate_bytes_per_site(cfg.model.to_core().q()) as f64),
            equilibrium: cfg.effective_equilibrium().to_string(),
            equilibrium_table_bytes: setup.eq.table_bytes(),
        },
    )?;
    if cfg.dump_final_field {
        dump_field(
            &out_dir.join("field.lbfield"),
            outcome.q,
            outcome.lx_tot,
            outcome.ly,
            &outcome.global_field,
        )?;
    }

    if let Some(b) = &outcome.blowup {
        return Err(AppError::Blowup(format!(
            "first detected at step {} on rank {}: {} (artifacts in {})",
            b.step,
            b.rank,
            b.what,
            out_dir.display()
        )));
    }
    println!(
        "completed {} steps on {} ranks; artifacts in {}",
        outcome.steps_completed,
        cfg.n_ranks,
        out_dir.display()
    );
    Ok(())
}

fn cmd_bench(args: RunArgs) -> Result<(), AppError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    apply_overrides(&mut cfg, &args);
    cfg.validate()?;
    let out_dir = resolve_out(&args.out, &cfg.out_dir)?;

    let variants = match args.variant {
        Some(v) => vec![v],
        None => vec![VariantKind::V1, VariantKind::V2],
    };
    let modes = match args.mode {
        Some(m) => vec![m],
        None => vec![ModeKind::Serial, ModeKind::Overlap],
    };
    let outcome = bench::measure(&cfg, &variants, &modes)?;

    write_json(&out_dir.join("bench.json"), &outcome.report)?;
    let csv_path = out_dir.join("bench.csv");
    {
        let mut w = csv::Writer::from_path(&csv_path)
            .map_err(|e| AppError::bad_input(&csv_path, format!("{e}")))?;
        w.write_record([
            "variant",
            "mode",
            "median_propagate_s",
            "median_bc_s",
            "median_collide_s",
            "median_exchange_s",
            "median_wall_s",
            "propagate_gbs",
            "mlups",
            "efficiency_p",
            "efficiency_c",
        ])
        .map_err(|e| AppError::bad_input(&csv_path, format!("{e}")))?;
        for r in &outcome.report.rows {
            w.write_record([
                r.variant.clone(),
                r.mode.clone(),
                format!("{:.9}", r.median_propagate_s),
                format!("{:.9}", r.median_bc_s),
                format!("{:.9}", r.median_collide_s),
                format!("{:.9}", r.median_exchange_s),
                format!("{:.9}", r.median_wall_s),
                format!("{:.3}", r.propagate_gbs),
                format!("{:.3}", r.mlups),
                format!("{:.4}", r.efficiency_p),
                format!("{:.4}", r.efficiency_c),
            ])
            .map_err(|e| AppError::bad_input(&csv_path, format!("{e}")))?;
        }
        w.flush().map_err(|e| AppError::io(&csv_path, e))?;
    }
    for combo in &outcome.combos {
        let name = format!("timing_{}_{}.csv", combo.variant, combo.mode);
        let path = out_dir.join(name);
        write_timing_csv(&path, &combo.rank0_log)?;
        let mut meta = timing_meta(&cfg, combo.rank0_log.len());
        meta.variant = combo.variant.to_string();
        meta.mode = combo.mode.to_string();
        write_json(&meta_path(&path), &meta)?;
    }
    println!(
        "benchmarked {} combinations ({} reps × {} steps each); artifacts in {}",
        outcome.report.rows.len(),
        cfg.reps,
        cfg.steps,
        out_dir.display()
    );
    Ok(())
}

/// Median lane durations of one timing CSV turned into calibration
/// samples: the bulk lane, the two border lanes, and the exchange.
fn samples_from_timing(
    path: &Path,
    rows: &[TimingRow],
    meta: &TimingMeta,
) -> Result<Vec<KernelTimingSample>, AppError> {
    if rows.is_empty() {
        return Err(AppError::bad_input(path, "timing CSV has no rows"));
    }
    let reps = rows.len();
    let med = |pick: fn(&TimingRow) -> f64| -> f64 {
        let mut v: Vec<f64> = rows.iter().map(pick).collect();
        median(&mut v)
    };
    let mk = |kernel, region, d| {
        KernelTimingSample::new(meta.lx_tot, meta.ly, meta.n_ranks, kernel, region, d, reps)
            .map_err(|e| {
                AppError::Config(format!("{}: unusable profile: {e}", path.display()))
            })
    };
    Ok(vec![
        mk(SampleKernel::Combined, SampleRegion::Bulk, med(|r| r.t_bulk))?,
        mk(SampleKernel::Combined, SampleRegion::BorderL, med(|r| r.t_border_l))?,
        mk(SampleKernel::Combined, SampleRegion::BorderR, med(|r| r.t_border_r))?,
        mk(SampleKernel::Exchange, SampleRegion::Halo, med(|r| r.t_exchange))?,
    ])
}

fn cmd_fit(args: FitArgs) -> Result<(), AppError> {
    let out_dir = resolve_out(&args.out, &None)?;
    let mut samples = Vec::new();
    let mut largest: Option<(usize, usize, usize)> = None; // (area, lx, ly)
    let mut max_n = 1usize;
    for path in &args.inputs {
        let meta: TimingMeta = read_json(&meta_path(path))?;
        if let Some(ly) = args.ly {
            if meta.ly != ly {
                continue;
            }
        }
        let rows = read_timing_csv(path)?;
        samples.extend(samples_from_timing(path, &rows, &meta)?);
        max_n = max_n.max(meta.n_ranks);
        let area = meta.lx_tot * meta.ly;
        if largest.map_or(true, |(a, _, _)| area > a) {
            largest = Some((area, meta.lx_tot, meta.ly));
        }
    }
    let Some((_, lx, ly)) = largest else {
        return Err(AppError::Config(
            "fit: no profiles left after filtering; nothing to calibrate on".into(),
        ));
    };
    let params = fit_model(&samples).map_err(|e| AppError::Config(format!("fit: {e}")))?;

    // Forecast over the largest profiled lattice, out to twice the
    // largest measured rank count (at least 8) so the crossover side of
    // the curve is visible.
    let ns: Vec<usize> = (1..=max_n.saturating_mul(2).max(8)).collect();
    let preds = predict_curve(&params, lx, ly, &ns);
    let doc = FitDoc {
        alpha: params.alpha,
        beta: params.beta,
        gamma: params.gamma,
        delta: params.delta,
        residual: params.residual,
        predictions: preds.iter().map(Into::into).collect(),
    };
    write_json(&out_dir.join("fit.json"), &doc)?;
    println!(
        "alpha={:.6e} beta={:.6e} gamma={:.6e} delta={:.6e} residual={:.3e}; fit.json in {}",
        params.alpha,
        params.beta,
        params.gamma,
        params.delta,
        params.residual,
        out_dir.display()
    );
    Ok(())
}

fn cmd_predict(args: PredictArgs) -> Result<(), AppError> {
    if args.ranks == 0 || args.lx == 0 || args.ly == 0 {
        return Err(AppError::Config(
            "predict: --lx, --ly and --ranks must all be at least 1".into(),
        ));
    }
    // Params may be hand-written: parse leniently (predictions optional)
    // but demand the four coefficients with a schema-level message.
    let text = std::fs::read_to_string(&args.params).map_err(|e| AppError::io(&args.params, e))?;
    let doc: FitDoc = serde_json::from_str(&text).map_err(|e| {
        AppError::Config(format!(
            "{}: expected {{alpha, beta, gamma, delta, residual, predictions?}}: {e}",
            args.params.display()
        ))
    })?;
    let params = ScalingModelParams {
        alpha: doc.alpha,
        beta: doc.beta,
        gamma: doc.gamma,
        delta: doc.delta,
        residual: doc.residual,
    };
    for (name, v) in [
        ("alpha", params.alpha),
        ("beta", params.beta),
        ("gamma", params.gamma),
        ("delta", params.delta),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(AppError::Config(format!(
                "{}: {name} must be non-negative and finite (got {v})",
                args.params.display()
            )));
        }
    }
    let out_dir = resolve_out(&args.out, &None)?;

    let ns: Vec<usize> = (1..=args.ranks).collect();
    let preds = predict_curve(&params, args.lx, args.ly, &ns);
    let out_doc = FitDoc {
        predictions: preds.iter().map(Into::into).collect(),
        ..doc
    };
    write_json(&out_dir.join("predict.json"), &out_doc)?;

    let measured = match &args.measured {
        Some(p) => Some(read_measured_csv(p)?),
        None => None,
    };
    write_gnuplot(&out_dir, &out_doc, measured.as_deref())?;

    match crossover_ranks(&params, args.lx, args.ly) {
        Some(n_star) => println!(
            "predicted {} ranks for {}x{}; compute/communication crossover near n = {n_star:.1}; \
             artifacts in {}",
            args.ranks,
            args.lx,
            args.ly,
            out_dir.display()
        ),
        None => println!(
            "predicted {} ranks for {}x{}; no crossover (one regime everywhere); artifacts in {}",
            args.ranks,
            args.lx,
            args.ly,
            out_dir.display()
        ),
    }
    Ok(())
}
