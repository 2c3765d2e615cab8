//! Run configuration: a flat JSON document describing one simulation,
//! plus validation that turns bad combinations into named errors before
//! any memory is allocated.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use lbtk_core::kernels::{CollisionParams, Variant};
use lbtk_core::lattice::Model;
use lbtk_core::exchange::ExchangeOrder;

use crate::error::AppError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    D2Q37,
    D2Q9,
}

impl ModelKind {
    pub fn to_core(self) -> Model {
        match self {
            ModelKind::D2Q37 => Model::D2Q37,
            ModelKind::D2Q9 => Model::D2Q9,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelKind::D2Q37 => write!(f, "d2q37"),
            ModelKind::D2Q9 => write!(f, "d2q9"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EquilibriumKind {
    /// Second-order polynomial expansion with fixed shell weights (athermal).
    Polynomial2,
    /// Tabulated per-population expansion coefficients (thermal-capable).
    Hermite,
}

impl fmt::Display for EquilibriumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquilibriumKind::Polynomial2 => write!(f, "polynomial2"),
            EquilibriumKind::Hermite => write!(f, "hermite"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum VariantKind {
    V1,
    V2,
}

impl VariantKind {
    pub fn to_core(self) -> Variant {
        match self {
            VariantKind::V1 => Variant::V1,
            VariantKind::V2 => Variant::V2,
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VariantKind::V1 => write!(f, "v1"),
            VariantKind::V2 => write!(f, "v2"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModeKind {
    Serial,
    Overlap,
}

impl fmt::Display for ModeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModeKind::Serial => write!(f, "serial"),
            ModeKind::Overlap => write!(f, "overlap"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VerticalBc {
    /// Fixed-temperature no-slip walls above and below the physical box.
    #[default]
    Walls,
    /// Wrap the top rows onto the bottom (torus in y).
    Periodic,
}

impl fmt::Display for VerticalBc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VerticalBc::Walls => write!(f, "walls"),
            VerticalBc::Periodic => write!(f, "periodic"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OrderKind {
    #[default]
    Serialized,
    Pipelined,
}

impl OrderKind {
    pub fn to_core(self) -> ExchangeOrder {
        match self {
            OrderKind::Serialized => ExchangeOrder::Serialized,
            OrderKind::Pipelined => ExchangeOrder::Pipelined,
        }
    }
}

impl fmt::Display for OrderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OrderKind::Serialized => write!(f, "serialized"),
            OrderKind::Pipelined => write!(f, "pipelined"),
        }
    }
}

fn d_one() -> usize {
    1
}
fn d_tau() -> f64 {
    1.0
}
fn d_dt() -> f64 {
    1.0
}
fn d_t_wall() -> f64 {
    1.0
}
fn d_variant() -> VariantKind {
    VariantKind::V2
}
fn d_mode() -> ModeKind {
    ModeKind::Overlap
}
fn d_rho0() -> f64 {
    1.0
}
fn d_t0() -> f64 {
    1.0
}
fn d_perturb_amp() -> f64 {
    1e-4
}
fn d_seed() -> u64 {
    42
}
fn d_reps() -> usize {
    5
}
fn d_peak_bw() -> f64 {
    6.4
}
fn d_peak_gflops() -> f64 {
    52.8
}
fn d_flops_per_site() -> f64 {
    lbtk_core::perfmodel::CONVENTIONAL_FLOPS_PER_SITE
}

/// One simulation, fully described. Serializes to/from flat JSON; every
/// field not listed in the document takes the default shown on its getter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelKind,
    /// Global lattice width (sum of all rank slabs).
    pub lx_tot: usize,
    pub ly: usize,
    #[serde(default = "d_one")]
    pub n_ranks: usize,
    pub steps: usize,
    #[serde(default = "d_tau")]
    pub tau: f64,
    #[serde(default = "d_dt")]
    pub dt: f64,
    /// Wall temperature for `vertical_bc = "walls"`.
    #[serde(default = "d_t_wall")]
    pub t_wall: f64,
    #[serde(default)]
    pub vertical_bc: VerticalBc,
    /// Defaults per model: D2Q9 -> polynomial2, D2Q37 -> hermite.
    #[serde(default)]
    pub equilibrium: Option<EquilibriumKind>,
    /// Optional text file with tabulated expansion coefficients; when absent
    /// a synthetic table is built from the velocity set.
    #[serde(default)]
    pub coeff_file: Option<String>,
    #[serde(default = "d_variant")]
    pub variant: VariantKind,
    #[serde(default = "d_mode")]
    pub mode: ModeKind,
    /// Mean initial density.
    #[serde(default = "d_rho0")]
    pub rho0: f64,
    /// Mean initial temperature.
    #[serde(default = "d_t0")]
    pub t0: f64,
    /// Relative amplitude of the random near-equilibrium perturbation.
    #[serde(default = "d_perturb_amp")]
    pub perturb_amp: f64,
    #[serde(default = "d_seed")]
    pub seed: u64,
    /// Benchmark repetitions (each repetition re-runs `steps` steps).
    #[serde(default = "d_reps")]
    pub reps: usize,
    #[serde(default)]
    pub exchange_order: OrderKind,
    #[serde(default)]
    pub exchange_aggregate: bool,
    /// Artificial delay added to the halo exchange, in microseconds.
    /// Used to study overlap behavior; 0 means none.
    #[serde(default)]
    pub exchange_delay_us: u64,
    /// Artificial per-call delay added to the collision kernel, in
    /// microseconds. Used to inflate compute time in experiments; 0 = none.
    #[serde(default)]
    pub collide_sleep_us: u64,
    #[serde(default)]
    pub dump_final_field: bool,
    /// Machine description for efficiency metrics.
    #[serde(default = "d_peak_bw")]
    pub peak_bandwidth_gbs: f64,
    #[serde(default = "d_peak_gflops")]
    pub peak_gflops: f64,
    /// Flop budget per site used for computational-efficiency metrics
    /// (a conventional figure, not the counted kernel cost).
    #[serde(default = "d_flops_per_site")]
    pub flops_per_site: f64,
    /// Override the per-site traffic assumed for bandwidth metrics;
    /// defaults to 2 * Q * 8 bytes (one read + one write per population).
    #[serde(default)]
    pub bytes_per_site_propagate: Option<f64>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, AppError> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| AppError::Config(format!("{e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self, AppError> {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The equilibrium closure in effect after per-model defaulting.
    pub fn effective_equilibrium(&self) -> EquilibriumKind {
        self.equilibrium.unwrap_or(match self.model {
            ModelKind::D2Q9 => EquilibriumKind::Polynomial2,
            ModelKind::D2Q37 => EquilibriumKind::Hermite,
        })
    }

    /// Columns owned by each rank.
    pub fn slab_width(&self) -> usize {
        self.lx_tot / self.n_ranks.max(1)
    }

    pub fn validate(&self) -> Result<(), AppError> {
        let err = |msg: String| Err(AppError::Config(msg));
        if self.lx_tot == 0 || self.ly == 0 {
            return err(format!(
                "lx_tot/ly: lattice extents must be positive (got {}x{})",
                self.lx_tot, self.ly
            ));
        }
        if self.n_ranks == 0 {
            return err("n_ranks: must be at least 1".into());
        }
        if self.lx_tot % self.n_ranks != 0 {
            return err(format!(
                "lx_tot: {} is not divisible by n_ranks = {}",
                self.lx_tot, self.n_ranks
            ));
        }
        let model = self.model.to_core();
        let hx = model.max_reach();
        let slab = self.lx_tot / self.n_ranks;
        if slab < hx {
            return err(format!(
                "n_ranks: slab width {slab} is narrower than the {} halo ({} columns)",
                self.model, hx
            ));
        }
        if self.vertical_bc == VerticalBc::Walls && self.ly < 2 * hx {
            return err(format!(
                "ly: {} leaves no interior between the two wall bands ({} rows each)",
                self.ly, hx
            ));
        }
        if let Err(e) = CollisionParams::new(self.tau, self.dt) {
            return err(format!("tau/dt: {e}"));
        }
        if !(self.rho0 > 0.0 && self.rho0.is_finite()) {
            return err(format!("rho0: must be positive and finite (got {})", self.rho0));
        }
        if !(self.t0 >= 0.0 && self.t0.is_finite()) {
            return err(format!("t0: must be non-negative and finite (got {})", self.t0));
        }
        if !(self.t_wall > 0.0 && self.t_wall.is_finite()) {
            return err(format!("t_wall: must be positive and finite (got {})", self.t_wall));
        }
        if !(self.perturb_amp >= 0.0 && self.perturb_amp < 1.0) {
            return err(format!(
                "perturb_amp: must lie in [0, 1) so perturbed populations keep their sign (got {})",
                self.perturb_amp
            ));
        }
        if self.reps == 0 {
            return err("reps: must be at least 1".into());
        }
        if self.effective_equilibrium() == EquilibriumKind::Polynomial2
            && self.model != ModelKind::D2Q9
        {
            return err(format!(
                "equilibrium: polynomial2 is defined for D2Q9 only (model is {})",
                self.model
            ));
        }
        if !(self.peak_bandwidth_gbs > 0.0 && self.peak_bandwidth_gbs.is_finite()) {
            return err(format!(
                "peak_bandwidth_gbs: must be positive (got {})",
                self.peak_bandwidth_gbs
            ));
        }
        if !(self.peak_gflops > 0.0 && self.peak_gflops.is_finite()) {
            return err(format!("peak_gflops: must be positive (got {})", self.peak_gflops));
        }
        if !(self.flops_per_site > 0.0 && self.flops_per_site.is_finite()) {
            return err(format!("flops_per_site: must be positive (got {})", self.flops_per_site));
        }
        if let Some(b) = self.bytes_per_site_propagate {
            if !(b > 0.0 && b.is_finite()) {
                return err(format!("bytes_per_site_propagate: must be positive (got {b})"));
            }
        }
        Ok(())
    }
}
