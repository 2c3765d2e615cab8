//! Multi-rank driver: slices the global lattice into per-rank slabs,
//! seeds a reproducible initial state, runs one stepping thread per
//! rank over in-process ring links, monitors conserved quantities, and
//! gathers the final global field.
//!
//! The initial state and all kernel arithmetic depend only on *global*
//! site coordinates, so a run's final field is bit-identical for every
//! rank count that divides the lattice and for both execution modes.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::channel;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lbtk_core::exchange::ExchangeConfig;
use lbtk_core::kernels::{
    equilibrium, CollisionParams, EquilibriumModel, MacroState, WallSpec,
};
use lbtk_core::lattice::{
    allocate_field, build_velocity_set, LatticeGeometry, PopulationField, VelocitySet,
};
use lbtk_core::schedule::plan_step;

use crate::config::{EquilibriumKind, RunConfig, VerticalBc};
use crate::error::AppError;
use crate::executor::{execute_step, KernelSetup, StepBreakdown};
use crate::transport::mpsc_ring;

/// Builds the per-step kernel inputs from a validated configuration,
/// loading the coefficient table when one is named.
pub fn build_setup(cfg: &RunConfig) -> Result<KernelSetup, AppError> {
    let vset = build_velocity_set(cfg.model.to_core());
    let eq = match cfg.effective_equilibrium() {
        EquilibriumKind::Polynomial2 => EquilibriumModel::polynomial2_d2q9(&vset)
            .map_err(|e| AppError::Config(format!("equilibrium: {e}")))?,
        EquilibriumKind::Hermite => match &cfg.coeff_file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| AppError::io(path, e))?;
                EquilibriumModel::hermite_from_text(&text, &vset)
                    .map_err(|e| AppError::Config(format!("coeff_file {path}: {e}")))?
            }
            None => EquilibriumModel::hermite_synthetic(&vset),
        },
    };
    let params = CollisionParams::new(cfg.tau, cfg.dt)
        .map_err(|e| AppError::Config(format!("tau/dt: {e}")))?;
    let wall = match cfg.vertical_bc {
        VerticalBc::Walls => Some(WallSpec { t_wall: cfg.t_wall }),
        VerticalBc::Periodic => None,
    };
    Ok(KernelSetup {
        vset,
        eq,
        params,
        wall,
        variant: cfg.variant.to_core(),
        exchange: ExchangeConfig {
            order: cfg.exchange_order.to_core(),
            aggregate: cfg.exchange_aggregate,
        },
        exchange_delay: Duration::from_micros(cfg.exchange_delay_us),
        collide_sleep: Duration::from_micros(cfg.collide_sleep_us),
    })
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream seed for one global site: stable under any rank decomposition.
fn site_seed(seed: u64, gx: usize, gy: usize) -> u64 {
    splitmix64(seed ^ splitmix64(((gx as u64) << 32) ^ gy as u64))
}

/// Rank `rank`'s slab, populated with the seeded near-equilibrium state.
///
/// Physical sites carry `f_l = feq_l(rho0, 0, t0) · (1 + amp·(2r − 1))`
/// with one random draw per population from a per-site generator, so the
/// values a site receives are independent of which rank owns it. In wall
/// mode the vertical halo rows of *all* columns hold the wall
/// equilibrium; nothing overwrites them later, which is what keeps the
/// walls fixed.
pub fn init_rank_field(
    cfg: &RunConfig,
    setup: &KernelSetup,
    rank: usize,
) -> Result<PopulationField, AppError> {
    let slab = cfg.slab_width();
    let geometry = LatticeGeometry::for_model(slab, cfg.ly, cfg.model.to_core())
        .map_err(|e| AppError::Config(format!("geometry: {e}")))?;
    let q = setup.vset.q();
    let mut field =
        allocate_field(&geometry, q, 0.0).map_err(|e| AppError::Config(format!("field: {e}")))?;

    if let Some(wall) = &setup.wall {
        let m = MacroState { rho: cfg.rho0, ux: 0.0, uy: 0.0, t: wall.t_wall };
        let feq = equilibrium(&m, &setup.eq, &setup.vset)
            .map_err(|e| AppError::Config(format!("equilibrium: {e}")))?;
        let (ny, hy) = (geometry.ny(), geometry.hy());
        for l in 0..q {
            for ix in 0..geometry.nx() {
                for iy in (0..hy).chain(ny - hy..ny) {
                    field.set(l, ix, iy, feq[l]);
                }
            }
        }
    }

    let m0 = MacroState { rho: cfg.rho0, ux: 0.0, uy: 0.0, t: cfg.t0 };
    let feq0 = equilibrium(&m0, &setup.eq, &setup.vset)
        .map_err(|e| AppError::Config(format!("equilibrium: {e}")))?;
    for sx in 0..slab {
        let gx = rank * slab + sx;
        let ix = geometry.x_phys_start() + sx;
        for gy in 0..cfg.ly {
            let iy = geometry.y_phys_start() + gy;
            let mut rng = ChaCha8Rng::seed_from_u64(site_seed(cfg.seed, gx, gy));
            for (l, &fe) in feq0.iter().enumerate() {
                let r: f64 = rng.gen();
                field.set(l, ix, iy, fe * (1.0 + cfg.perturb_amp * (2.0 * r - 1.0)));
            }
        }
    }
    Ok(field)
}

fn kahan_add(sum: &mut f64, comp: &mut f64, v: f64) {
    let y = v - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

/// Compensated sums of mass and momentum over the physical sites, in a
/// fixed deterministic order.
pub fn physical_partials(field: &PopulationField, vset: &VelocitySet) -> [f64; 3] {
    let g = field.geometry();
    let mut sums = [0.0f64; 3];
    let mut comps = [0.0f64; 3];
    for ix in g.x_phys_start()..g.x_phys_end() {
        for iy in g.y_phys_start()..g.y_phys_end() {
            for l in 0..vset.q() {
                let f = field.get(l, ix, iy);
                let (cx, cy) = vset.c(l);
                kahan_add(&mut sums[0], &mut comps[0], f);
                kahan_add(&mut sums[1], &mut comps[1], cx as f64 * f);
                kahan_add(&mut sums[2], &mut comps[2], cy as f64 * f);
            }
        }
    }
    sums
}

/// Conserved-quantity monitor line for one completed step. Momentum
/// drifts are normalized by the initial total mass: the initial net
/// momentum is statistically zero, so it cannot serve as a scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorRow {
    pub step: usize,
    pub mass: f64,
    pub mass_drift_rel: f64,
    pub jx_drift_rel: f64,
    pub jy_drift_rel: f64,
}

/// First detection of a non-finite conserved-quantity partial.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlowupInfo {
    pub step: usize,
    pub rank: usize,
    pub what: String,
}

pub struct RunOutcome {
    pub q: usize,
    pub lx_tot: usize,
    pub ly: usize,
    /// Steps every rank completed with finite monitors.
    pub steps_completed: usize,
    /// Physical sites of the final state, laid out as
    /// `l·(lx_tot·ly) + gx·ly + gy`.
    pub global_field: Vec<f64>,
    /// Per-rank, per-step wall-clock records.
    pub rank_logs: Vec<Vec<StepBreakdown>>,
    pub monitor: Vec<MonitorRow>,
    pub blowup: Option<BlowupInfo>,
}

struct RankOutput {
    rank: usize,
    log: Vec<StepBreakdown>,
    field: PopulationField,
}

/// Runs the configured simulation to completion (or to the first
/// detected blow-up, which is reported in the outcome rather than as an
/// error so partial artifacts can still be written).
pub fn run(cfg: &RunConfig) -> Result<RunOutcome, AppError> {
    cfg.validate()?;
    let setup = build_setup(cfg)?;
    let n = cfg.n_ranks;
    let slab = cfg.slab_width();
    let q = setup.vset.q();
    let geometry = LatticeGeometry::for_model(slab, cfg.ly, cfg.model.to_core())
        .map_err(|e| AppError::Config(format!("geometry: {e}")))?;
    let plan = plan_step(&geometry);

    let mut fields = Vec::with_capacity(n);
    for rank in 0..n {
        let cur = init_rank_field(cfg, &setup, rank)?;
        let mut nxt = allocate_field(&geometry, q, 0.0)
            .map_err(|e| AppError::Config(format!("field: {e}")))?;
        if let Some(wall) = &setup.wall {
            // The swap alternates the buffers, so both need the fixed
            // wall bands in their vertical halo rows.
            let m = MacroState { rho: cfg.rho0, ux: 0.0, uy: 0.0, t: wall.t_wall };
            let feq = equilibrium(&m, &setup.eq, &setup.vset)
                .map_err(|e| AppError::Config(format!("equilibrium: {e}")))?;
            let (ny, hy) = (geometry.ny(), geometry.hy());
            for l in 0..q {
                for ix in 0..geometry.nx() {
                    for iy in (0..hy).chain(ny - hy..ny) {
                        nxt.set(l, ix, iy, feq[l]);
                    }
                }
            }
        }
        fields.push((cur, nxt));
    }

    // Baseline conserved quantities, reduced in rank order.
    let (mut mass0, mut jx0, mut jy0) = (0.0f64, 0.0f64, 0.0f64);
    for (cur, _) in &fields {
        let p = physical_partials(cur, &setup.vset);
        mass0 += p[0];
        jx0 += p[1];
        jy0 += p[2];
    }

    let abort = Arc::new(AtomicBool::new(false));
    let first_blowup: Mutex<Option<BlowupInfo>> = Mutex::new(None);
    let links = mpsc_ring(n, Arc::clone(&abort));
    let (monitor_tx, monitor_rx) = channel::<(usize, usize, [f64; 3])>();

    let outputs: Vec<RankOutput> = thread::scope(|s| {
        let mut handles = Vec::with_capacity(n);
        for (rank, ((mut cur, mut nxt), mut link)) in
            fields.into_iter().zip(links).enumerate()
        {
            let setup = &setup;
            let plan = &plan;
            let abort = Arc::clone(&abort);
            let first_blowup = &first_blowup;
            let tx = monitor_tx.clone();
            let mode = cfg.mode;
            let steps = cfg.steps;
            handles.push(s.spawn(move || {
                let mut log = Vec::with_capacity(steps);
                for step in 0..steps {
                    if abort.load(Ordering::Relaxed) {
                        break;
                    }
                    match execute_step(mode, plan, setup, &mut cur, &mut nxt, &mut link) {
                        Ok(bd) => {
                            std::mem::swap(&mut cur, &mut nxt);
                            log.push(bd);
                            let p = physical_partials(&cur, &setup.vset);
                            if p.iter().all(|v| v.is_finite()) {
                                let _ = tx.send((rank, step, p));
                            } else {
                                let mut slot = first_blowup.lock().unwrap();
                                let earlier =
                                    slot.as_ref().map_or(true, |b| step < b.step
                                        || (step == b.step && rank < b.rank));
                                if earlier {
                                    *slot = Some(BlowupInfo {
                                        step,
                                        rank,
                                        what: format!(
                                            "non-finite conserved-quantity sums \
                                             (mass={}, jx={}, jy={})",
                                            p[0], p[1], p[2]
                                        ),
                                    });
                                }
                                abort.store(true, Ordering::Relaxed);
                                break;
                            }
                        }
                        Err(e) => {
                            // The link only closes when some rank halted
                            // and raised the abort flag; anything else is
                            // a codec-level impossibility.
                            assert!(
                                abort.load(Ordering::Relaxed),
                                "halo exchange failed outside an abort: {e}"
                            );
                            break;
                        }
                    }
                }
                RankOutput { rank, log, field: cur }
            }));
        }
        drop(monitor_tx);
        handles
            .into_iter()
            .map(|h| h.join().expect("rank thread panicked"))
            .collect()
    });

    // Reduce monitor partials in rank order; keep steps all ranks report.
    let mut per_step: Vec<Vec<Option<[f64; 3]>>> = vec![vec![None; n]; cfg.steps];
    while let Ok((rank, step, p)) = monitor_rx.recv() {
        per_step[step][rank] = Some(p);
    }
    let mut monitor = Vec::new();
    for (step, ranks) in per_step.iter().enumerate() {
        if ranks.iter().any(Option::is_none) {
            break;
        }
        let (mut mass, mut jx, mut jy) = (0.0f64, 0.0f64, 0.0f64);
        for p in ranks.iter().flatten() {
            mass += p[0];
            jx += p[1];
            jy += p[2];
        }
        monitor.push(MonitorRow {
            step,
            mass,
            mass_drift_rel: (mass - mass0) / mass0,
            jx_drift_rel: (jx - jx0) / mass0,
            jy_drift_rel: (jy - jy0) / mass0,
        });
    }
    let steps_completed = monitor.len();

    let mut global_field = vec![0.0f64; q * cfg.lx_tot * cfg.ly];
    let mut rank_logs: Vec<Vec<StepBreakdown>> = (0..n).map(|_| Vec::new()).collect();
    for out in outputs {
        let g = out.field.geometry();
        for l in 0..q {
            let plane = out.field.plane(l);
            for sx in 0..slab {
                let gx = out.rank * slab + sx;
                let src0 = (g.x_phys_start() + sx) * g.ny() + g.y_phys_start();
                let dst0 = l * (cfg.lx_tot * cfg.ly) + gx * cfg.ly;
                global_field[dst0..dst0 + cfg.ly]
                    .copy_from_slice(&plane[src0..src0 + cfg.ly]);
            }
        }
        rank_logs[out.rank] = out.log;
    }

    Ok(RunOutcome {
        q,
        lx_tot: cfg.lx_tot,
        ly: cfg.ly,
        steps_completed,
        global_field,
        rank_logs,
        monitor,
        blowup: first_blowup.into_inner().unwrap(),
    })
}
