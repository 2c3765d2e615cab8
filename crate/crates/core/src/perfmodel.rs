//! Performance metrics and the analytic strong-scaling model.
//!
//! The model describes one timestep of a width-`Lx` lattice split into
//! `n` vertical slabs:
//!
//! ```text
//! T(Lx, Ly, n) = max{ α·(Lx/n)·Ly + β·(Lx/n),  γ·Ly } + δ·Ly
//! ```
//!
//! The first branch is the interior (bulk) work — per-site cost `α`
//! plus per-column cost `β` — which overlaps the halo exchange `γ·Ly`;
//! whichever is longer hides the other. The border work `δ·Ly` runs
//! after the exchange and is never hidden. Relative speedup is
//! `S_r(n) = T(…,1)/T(…,n)` and parallel efficiency `S_r/n`.
//!
//! Parameters are fitted from per-kernel timing samples by
//! non-negative least squares, and the model then predicts speedup for
//! rank counts far beyond what was measured, including the crossover
//! `n* = Lx(αLy + β)/(γLy)` where scaling turns communication-bound.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::fmt;

/// Which kernel a timing sample measured. `Combined` covers a whole
/// region lane timed end to end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SampleKernel {
    Propagate,
    Bc,
    Collide,
    Exchange,
    Combined,
}

impl fmt::Display for SampleKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleKernel::Propagate => write!(f, "propagate"),
            SampleKernel::Bc => write!(f, "bc"),
            SampleKernel::Collide => write!(f, "collide"),
            SampleKernel::Exchange => write!(f, "exchange"),
            SampleKernel::Combined => write!(f, "combined"),
        }
    }
}

/// Which region of the slab the sample covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SampleRegion {
    Bulk,
    BorderL,
    BorderR,
    /// The halo-exchange "region" (no lattice columns of its own).
    Halo,
}

impl fmt::Display for SampleRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SampleRegion::Bulk => write!(f, "bulk"),
            SampleRegion::BorderL => write!(f, "borderL"),
            SampleRegion::BorderR => write!(f, "borderR"),
            SampleRegion::Halo => write!(f, "halo"),
        }
    }
}

/// One profiled data point: the median duration of `kernel` over
/// `region`, for a *global* `lx × ly` lattice split across `n_ranks`
/// slabs (the per-rank slab is `lx/n_ranks` columns wide).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelTimingSample {
    pub lx: usize,
    pub ly: usize,
    pub n_ranks: usize,
    pub kernel: SampleKernel,
    pub region: SampleRegion,
    pub duration_s: f64,
    pub repetitions: usize,
}

impl KernelTimingSample {
    pub fn new(
        lx: usize,
        ly: usize,
        n_ranks: usize,
        kernel: SampleKernel,
        region: SampleRegion,
        duration_s: f64,
        repetitions: usize,
    ) -> Result<Self, FitError> {
        let s = KernelTimingSample {
            lx,
            ly,
            n_ranks,
            kernel,
            region,
            duration_s,
            repetitions,
        };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<(), FitError> {
        if self.lx == 0 || self.ly == 0 {
            return Err(FitError::BadSample {
                why: "lattice extents must be positive",
            });
        }
        if self.n_ranks == 0 {
            return Err(FitError::BadSample {
                why: "rank count must be at least 1",
            });
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(FitError::BadSample {
                why: "duration must be a positive finite median",
            });
        }
        if self.repetitions < 5 {
            return Err(FitError::BadSample {
                why: "medians must cover at least 5 repetitions",
            });
        }
        Ok(())
    }
}

/// Fitted model parameters, all non-negative by construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingModelParams {
    /// Seconds per bulk site.
    pub alpha: f64,
    /// Seconds per bulk column.
    pub beta: f64,
    /// Seconds per exchanged row.
    pub gamma: f64,
    /// Seconds per border row.
    pub delta: f64,
    /// L2 norm of the fit residual over all aggregated responses.
    pub residual: f64,
}

/// Hardware reference values for efficiency metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MachineSpec {
    pub peak_bandwidth_gbs: f64,
    /// Double-precision peak.
    pub peak_gflops: f64,
    /// Per-site flop budget used for compute efficiency. The
    /// conventional figure for the 37-population discretization is
    /// 6500 (7600 also circulates); the bench report records the value
    /// actually used next to the implementation's counted number.
    pub flops_per_site: f64,
    /// Bytes moved per site by propagate: one read and one write per
    /// population (`2·Q·8`).
    pub bytes_per_site_propagate: f64,
}

pub const CONVENTIONAL_FLOPS_PER_SITE: f64 = 6500.0;

impl MachineSpec {
    /// Spec with the conventional flop budget and `2·Q·8` propagate
    /// traffic for a `Q`-population model.
    pub fn new(peak_bandwidth_gbs: f64, peak_gflops: f64, q: usize) -> Self {
        MachineSpec {
            peak_bandwidth_gbs,
            peak_gflops,
            flops_per_site: CONVENTIONAL_FLOPS_PER_SITE,
            bytes_per_site_propagate: (2 * q * 8) as f64,
        }
    }

    pub fn validate(&self) -> Result<(), FitError> {
        let fields = [
            self.peak_bandwidth_gbs,
            self.peak_gflops,
            self.flops_per_site,
            self.bytes_per_site_propagate,
        ];
        if fields.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(FitError::BadSample {
                why: "machine spec values must be positive and finite",
            });
        }
        Ok(())
    }
}

/// Sustained memory traffic in GB/s (`1e9` bytes per second).
pub fn effective_bandwidth_gbs(sites: u64, duration_s: f64, bytes_per_site: f64) -> f64 {
    sites as f64 * bytes_per_site / duration_s / 1e9
}

/// Millions of lattice-site updates per second.
pub fn mlups(sites: u64, duration_s: f64) -> f64 {
    sites as f64 / duration_s / 1e6
}

/// Sustained-vs-peak memory-bandwidth fraction.
pub fn efficiency_p(effective_gbs: f64, peak_bandwidth_gbs: f64) -> f64 {
    effective_gbs / peak_bandwidth_gbs
}

/// Sustained-vs-peak floating-point fraction:
/// `MLUPS · flops_per_site / (peak_gflops · 1e3)`.
pub fn efficiency_c(mlups: f64, flops_per_site: f64, peak_gflops: f64) -> f64 {
    mlups * flops_per_site / (peak_gflops * 1e3)
}

/// Which branch of the max-form dominates a prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    ComputeBound,
    CommunicationBound,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::ComputeBound => write!(f, "compute-bound"),
            Regime::CommunicationBound => write!(f, "communication-bound"),
        }
    }
}

/// One row of a predicted scaling curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub n_ranks: usize,
    pub t_step_s: f64,
    pub speedup: f64,
    pub efficiency: f64,
    pub regime: Regime,
}

/// Evaluates the max-form model for `n` ranks. The regime tag reports
/// which branch of the max is active (ties count as compute-bound: the
/// exchange is exactly hidden).
pub fn predict_time(p: &ScalingModelParams, lx: usize, ly: usize, n: usize) -> (f64, Regime) {
    assert!(n >= 1, "prediction needs at least one rank");
    let (lxf, lyf) = (lx as f64, ly as f64);
    let slab = lxf / n as f64;
    let bulk = p.alpha * slab * lyf + p.beta * slab;
    let comm = p.gamma * lyf;
    let regime = if comm > bulk {
        Regime::CommunicationBound
    } else {
        Regime::ComputeBound
    };
    (bulk.max(comm) + p.delta * lyf, regime)
}

/// Rank count at which hidden communication stops being hidden:
/// the real solution of `α(Lx/n)Ly + β(Lx/n) = γLy`. `None` when the
/// branches never meet (`γ = 0` or no bulk cost).
pub fn crossover_ranks(p: &ScalingModelParams, lx: usize, ly: usize) -> Option<f64> {
    let (lxf, lyf) = (lx as f64, ly as f64);
    let comm = p.gamma * lyf;
    let bulk_1 = lxf * (p.alpha * lyf + p.beta);
    if comm <= 0.0 || bulk_1 <= 0.0 {
        return None;
    }
    Some(bulk_1 / comm)
}

/// Relative speedup `S_r(n) = T(1)/T(n)`.
pub fn predict_speedup(p: &ScalingModelParams, lx: usize, ly: usize, n: usize) -> f64 {
    let (t1, _) = predict_time(p, lx, ly, 1);
    let (tn, _) = predict_time(p, lx, ly, n);
    t1 / tn
}

/// Full predicted curve over the given rank counts.
pub fn predict_curve(
    p: &ScalingModelParams,
    lx: usize,
    ly: usize,
    ns: &[usize],
) -> Vec<Prediction> {
    let (t1, _) = predict_time(p, lx, ly, 1);
    ns.iter()
        .map(|&n| {
            let (t, regime) = predict_time(p, lx, ly, n);
            let speedup = t1 / t;
            Prediction {
                n_ranks: n,
                t_step_s: t,
                speedup,
                efficiency: speedup / n as f64,
                regime,
            }
        })
        .collect()
}

/// Errors from sample validation and model fitting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitError {
    BadSample {
        why: &'static str,
    },
    /// All samples share one rank count, so nothing constrains how
    /// work divides across slabs.
    SingleRankCount,
    /// All bulk samples share one `Ly`: the per-site regressor
    /// `(Lx/n)·Ly` and the per-column regressor `(Lx/n)` are then
    /// proportional and cannot be told apart.
    CollinearBulk,
    /// A whole sample class is absent, leaving its parameter free.
    MissingClass {
        class: &'static str,
        regressor: &'static str,
    },
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::BadSample { why } => write!(f, "invalid sample: {why}"),
            FitError::SingleRankCount => write!(
                f,
                "samples cover a single rank count; alpha and beta cannot be \
                 separated from the slab width (need at least 2 distinct n)"
            ),
            FitError::CollinearBulk => write!(
                f,
                "bulk samples share a single Ly; alpha (per-site) and beta \
                 (per-column) are collinear (need at least 2 distinct Ly)"
            ),
            FitError::MissingClass { class, regressor } => {
                write!(f, "no {class} samples: {regressor} is unidentifiable")
            }
        }
    }
}

impl core::error::Error for FitError {}

#[derive(Default)]
struct ClassAccum {
    /// Mean accumulator per (kernel, region) pair.
    cells: BTreeMap<(SampleKernel, SampleRegion), (f64, usize)>,
}

impl ClassAccum {
    fn add(&mut self, kernel: SampleKernel, region: SampleRegion, d: f64) {
        let cell = self.cells.entry((kernel, region)).or_insert((0.0, 0));
        cell.0 += d;
        cell.1 += 1;
    }

    fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sum of per-cell means: repeated measurements of one kernel
    /// average, distinct kernels add up to the lane total.
    fn response(&self) -> f64 {
        self.cells.values().map(|(sum, n)| sum / *n as f64).sum()
    }
}

#[derive(Default)]
struct ConfigAccum {
    bulk: ClassAccum,
    exchange: ClassAccum,
    border: ClassAccum,
}

/// Fits `(α, β, γ, δ)` by non-negative least squares.
///
/// Samples are grouped by `(Lx, Ly, n)`; within a group, repeated
/// measurements of the same kernel average and distinct kernels sum,
/// yielding one response per class: bulk lane (`≈ α·(Lx/n)·Ly +
/// β·(Lx/n)`), exchange (`≈ γ·Ly`), and border lanes (`≈ δ·Ly`, left
/// and right combined). Rank-deficient designs are rejected with the
/// unidentifiable regressor named.
pub fn fit_model(samples: &[KernelTimingSample]) -> Result<ScalingModelParams, FitError> {
    if samples.is_empty() {
        return Err(FitError::BadSample {
            why: "no samples at all",
        });
    }
    let mut distinct_n: Vec<usize> = Vec::new();
    let mut groups: BTreeMap<(usize, usize, usize), ConfigAccum> = BTreeMap::new();
    for s in samples {
        s.validate()?;
        if !distinct_n.contains(&s.n_ranks) {
            distinct_n.push(s.n_ranks);
        }
        let g = groups.entry((s.lx, s.ly, s.n_ranks)).or_default();
        let class = match (s.kernel, s.region) {
            (SampleKernel::Exchange, _) | (_, SampleRegion::Halo) => &mut g.exchange,
            (_, SampleRegion::Bulk) => &mut g.bulk,
            (_, SampleRegion::BorderL | SampleRegion::BorderR) => &mut g.border,
        };
        class.add(s.kernel, s.region, s.duration_s);
    }
    if distinct_n.len() < 2 {
        return Err(FitError::SingleRankCount);
    }

    // Assemble regression rows per class.
    let mut bulk_rows: Vec<(f64, f64, f64)> = Vec::new(); // (u, v, y)
    let mut exch_rows: Vec<(f64, f64)> = Vec::new(); // (ly, y)
    let mut border_rows: Vec<(f64, f64)> = Vec::new();
    let mut bulk_lys: Vec<usize> = Vec::new();
    for (&(lx, ly, n), acc) in &groups {
        let slab = lx as f64 / n as f64;
        if !acc.bulk.is_empty() {
            bulk_rows.push((slab * ly as f64, slab, acc.bulk.response()));
            if !bulk_lys.contains(&ly) {
                bulk_lys.push(ly);
            }
        }
        if !acc.exchange.is_empty() {
            exch_rows.push((ly as f64, acc.exchange.response()));
        }
        if !acc.border.is_empty() {
            border_rows.push((ly as f64, acc.border.response()));
        }
    }
    if bulk_rows.is_empty() {
        return Err(FitError::MissingClass {
            class: "bulk",
            regressor: "alpha and beta",
        });
    }
    if exch_rows.is_empty() {
        return Err(FitError::MissingClass {
            class: "exchange",
            regressor: "gamma",
        });
    }
    if border_rows.is_empty() {
        return Err(FitError::MissingClass {
            class: "border",
            regressor: "delta",
        });
    }
    if bulk_lys.len() < 2 {
        return Err(FitError::CollinearBulk);
    }

    let (alpha, beta) = nnls_two(&bulk_rows);
    let gamma = nnls_one(&exch_rows);
    let delta = nnls_one(&border_rows);

    let mut ss = 0.0f64;
    for &(u, v, y) in &bulk_rows {
        let r = y - alpha * u - beta * v;
        ss += r * r;
    }
    for &(x, y) in &exch_rows {
        let r = y - gamma * x;
        ss += r * r;
    }
    for &(x, y) in &border_rows {
        let r = y - delta * x;
        ss += r * r;
    }

    Ok(ScalingModelParams {
        alpha,
        beta,
        gamma,
        delta,
        residual: crate::math::sqrt(ss),
    })
}

/// Non-negative least squares for `y ≈ a·u + b·v` with two free
/// coefficients: solve the normal equations, and if the unconstrained
/// optimum leaves the quadrant, take the better of the two boundary
/// solutions (one coefficient pinned to zero).
fn nnls_two(rows: &[(f64, f64, f64)]) -> (f64, f64) {
    let (mut suu, mut svv, mut suv, mut suy, mut svy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(u, v, y) in rows {
        suu += u * u;
        svv += v * v;
        suv += u * v;
        suy += u * y;
        svy += v * y;
    }
    let det = suu * svv - suv * suv;
    if det > 1e-12 * suu * svv {
        let a = (svv * suy - suv * svy) / det;
        let b = (suu * svy - suv * suy) / det;
        if a >= 0.0 && b >= 0.0 {
            return (a, b);
        }
    }
    // Boundary candidates.
    let a_only = if suu > 0.0 { (suy / suu).max(0.0) } else { 0.0 };
    let b_only = if svv > 0.0 { (svy / svv).max(0.0) } else { 0.0 };
    let cost = |a: f64, b: f64| -> f64 {
        rows.iter()
            .map(|&(u, v, y)| {
                let r = y - a * u - b * v;
                r * r
            })
            .sum()
    };
    if cost(a_only, 0.0) <= cost(0.0, b_only) {
        (a_only, 0.0)
    } else {
        (0.0, b_only)
    }
}

/// Non-negative least squares for `y ≈ c·x` through the origin.
fn nnls_one(rows: &[(f64, f64)]) -> f64 {
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for &(x, y) in rows {
        sxx += x * x;
        sxy += x * y;
    }
    if sxx > 0.0 {
        (sxy / sxx).max(0.0)
    } else {
        0.0
    }
}
