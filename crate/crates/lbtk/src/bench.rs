//! Kernel benchmarking: repeated runs per (variant, mode) combination,
//! median per-kernel timings over every (repetition, rank, step)
//! sample, and the derived throughput and efficiency metrics.
//!
//! Rates are per rank: `sites` is one slab's physical site count, so a
//! single-rank run reports whole-lattice figures and multi-rank runs
//! report the per-slab sustained rate that the scaling model consumes.

use serde::{Deserialize, Serialize};

use lbtk_core::kernels::{collide_flops_per_site, propagate_bytes_per_site};
use lbtk_core::perfmodel::{effective_bandwidth_gbs, efficiency_c, efficiency_p, mlups};

use crate::config::{ModeKind, OrderKind, RunConfig, VariantKind};
use crate::error::AppError;
use crate::executor::StepBreakdown;
use crate::runner;

/// Middle value (mean of the two middles for even counts).
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of nothing");
    values.sort_by(|a, b| a.partial_cmp(b).expect("timings are finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// One (variant, mode) line of the benchmark table. Kernel medians are
/// per step and per rank; propagate/bc/collide each sum their three
/// region invocations within a step before the median is taken.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub mode: String,
    pub median_propagate_s: f64,
    pub median_bc_s: f64,
    pub median_collide_s: f64,
    pub median_exchange_s: f64,
    pub median_wall_s: f64,
    /// Sustained propagate traffic, GB/s.
    pub propagate_gbs: f64,
    /// Whole-step update rate, million sites per second.
    pub mlups: f64,
    /// propagate_gbs / peak bandwidth.
    pub efficiency_p: f64,
    /// mlups·flops_per_site / peak flops.
    pub efficiency_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineSummary {
    pub peak_bandwidth_gbs: f64,
    pub peak_gflops: f64,
    /// Conventional per-site flop budget used in `efficiency_c`.
    pub flops_per_site: f64,
    pub bytes_per_site_propagate: f64,
}

/// The full benchmark document, written as `bench.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub model: String,
    pub lx_tot: usize,
    pub ly: usize,
    pub n_ranks: usize,
    pub steps: usize,
    pub reps: usize,
    /// Physical sites per rank slab; the denominator of every rate.
    pub sites_per_rank: u64,
    pub machine: MachineSummary,
    /// Flops one collide actually performs per site in this build, by
    /// operation count — reported alongside the conventional budget so
    /// both are on record.
    pub counted_collide_flops_per_site: u64,
    pub equilibrium: String,
    pub equilibrium_table_bytes: usize,
    pub rows: Vec<BenchRow>,
    /// Median exchange seconds under each send/receive ordering,
    /// measured with the configured variant and mode.
    pub exchange_orderings: Vec<(String, f64)>,
}

/// Rank 0's per-step records for one combination, concatenated over
/// repetitions — the rows of that combination's timing CSV.
#[derive(Debug)]
pub struct ComboData {
    pub variant: VariantKind,
    pub mode: ModeKind,
    pub rank0_log: Vec<StepBreakdown>,
}

#[derive(Debug)]
pub struct BenchOutcome {
    pub report: BenchReport,
    pub combos: Vec<ComboData>,
}

fn collect_runs(cfg: &RunConfig) -> Result<(Vec<StepBreakdown>, Vec<StepBreakdown>), AppError> {
    let mut all = Vec::new();
    let mut rank0 = Vec::new();
    for _ in 0..cfg.reps {
        let out = runner::run(cfg)?;
        if let Some(b) = out.blowup {
            return Err(AppError::Blowup(format!(
                "benchmark run diverged at step {} on rank {}: {}",
                b.step, b.rank, b.what
            )));
        }
        for log in &out.rank_logs {
            all.extend_from_slice(log);
        }
        rank0.extend_from_slice(&out.rank_logs[0]);
    }
    Ok((all, rank0))
}

fn row_from_samples(
    cfg: &RunConfig,
    variant: VariantKind,
    mode: ModeKind,
    samples: &[StepBreakdown],
) -> BenchRow {
    let sites = (cfg.slab_width() * cfg.ly) as u64;
    let bytes = cfg
        .bytes_per_site_propagate
        .unwrap_or(propagate_bytes_per_site(cfg.model.to_core().q()) as f64);
    let mut prop: Vec<f64> = samples
        .iter()
        .map(|b| b.kernel_s[0] + b.kernel_s[3] + b.kernel_s[6])
        .collect();
    let mut bc: Vec<f64> = samples
        .iter()
        .map(|b| b.kernel_s[1] + b.kernel_s[4] + b.kernel_s[7])
        .collect();
    let mut coll: Vec<f64> = samples
        .iter()
        .map(|b| b.kernel_s[2] + b.kernel_s[5] + b.kernel_s[8])
        .collect();
    let mut exch: Vec<f64> = samples.iter().map(|b| b.timings.t_exchange).collect();
    let mut wall: Vec<f64> = samples.iter().map(|b| b.timings.t_wall).collect();

    let median_propagate_s = median(&mut prop);
    let median_wall_s = median(&mut wall);
    let propagate_gbs = effective_bandwidth_gbs(sites, median_propagate_s, bytes);
    let step_mlups = mlups(sites, median_wall_s);
    BenchRow {
        variant: variant.to_string(),
        mode: mode.to_string(),
        median_propagate_s,
        median_bc_s: median(&mut bc),
        median_collide_s: median(&mut coll),
        median_exchange_s: median(&mut exch),
        median_wall_s,
        propagate_gbs,
        mlups: step_mlups,
        efficiency_p: efficiency_p(propagate_gbs, cfg.peak_bandwidth_gbs),
        efficiency_c: efficiency_c(step_mlups, cfg.flops_per_site, cfg.peak_gflops),
    }
}

/// Benchmarks every requested (variant, mode) combination plus both
/// exchange orderings. Pure measurement; the caller persists it.
pub fn measure(
    cfg: &RunConfig,
    variants: &[VariantKind],
    modes: &[ModeKind],
) -> Result<BenchOutcome, AppError> {
    cfg.validate()?;
    if cfg.reps < 5 {
        return Err(AppError::Config(format!(
            "reps: benchmark medians need at least 5 repetitions (got {})",
            cfg.reps
        )));
    }
    if cfg.steps == 0 {
        return Err(AppError::Config("steps: benchmarking zero steps is meaningless".into()));
    }

    let setup = runner::build_setup(cfg)?;
    let mut rows = Vec::new();
    let mut combos = Vec::new();
    for &variant in variants {
        for &mode in modes {
            let mut c = cfg.clone();
            c.variant = variant;
            c.mode = mode;
            let (all, rank0_log) = collect_runs(&c)?;
            rows.push(row_from_samples(cfg, variant, mode, &all));
            combos.push(ComboData { variant, mode, rank0_log });
        }
    }

    let mut exchange_orderings = Vec::new();
    for order in [OrderKind::Serialized, OrderKind::Pipelined] {
        let mut c = cfg.clone();
        c.exchange_order = order;
        let (all, _) = collect_runs(&c)?;
        let mut exch: Vec<f64> = all.iter().map(|b| b.timings.t_exchange).collect();
        exchange_orderings.push((order.to_string(), median(&mut exch)));
    }

    let report = BenchReport {
        model: cfg.model.to_string(),
        lx_tot: cfg.lx_tot,
        ly: cfg.ly,
        n_ranks: cfg.n_ranks,
        steps: cfg.steps,
        reps: cfg.reps,
        sites_per_rank: (cfg.slab_width() * cfg.ly) as u64,
        machine: MachineSummary {
            peak_bandwidth_gbs: cfg.peak_bandwidth_gbs,
            peak_gflops: cfg.peak_gflops,
            flops_per_site: cfg.flops_per_site,
            bytes_per_site_propagate: cfg
                .bytes_per_site_propagate
                .unwrap_or(propagate_bytes_per_site(cfg.model.to_core().q()) as f64),
        },
        counted_collide_flops_per_site: collide_flops_per_site(&setup.eq, &setup.vset),
        equilibrium: cfg.effective_equilibrium().to_string(),
        equilibrium_table_bytes: setup.eq.table_bytes(),
        rows,
        exchange_orderings,
    };
    Ok(BenchOutcome { report, combos })
}
