//! Executes one timestep on one rank: the nine planned kernel tasks plus
//! the halo exchange, either serially or with the bulk chain overlapped
//! against exchange and border work.
//!
//! Data flow per step (two buffers, `cur` → `nxt`):
//!
//! 1. vertical wrap of `cur`'s top/bottom halo rows (torus only; wall
//!    runs keep constant equilibrium bands there),
//! 2. halo exchange into `cur`'s horizontal halo columns — in overlap
//!    mode concurrent with the bulk chain, whose gather never reaches a
//!    halo column,
//! 3. the two border chains, which read freshly exchanged halos and are
//!    therefore gated on exchange completion,
//! 4. the caller swaps the buffers.
//!
//! Serial mode issues the same kernels one after another on the calling
//! thread. Fields come out bit-identical either way: each kernel reads
//! the same `cur` state and writes a disjoint column range of `nxt`, so
//! the schedule can change only the wall clock, never a value.

use std::thread;
use std::time::{Duration, Instant};

use lbtk_core::exchange::{
    exchange_halos, vertical_halo_wrap, ExchangeConfig, ExchangeError, ExchangeStats, HaloLink,
};
use lbtk_core::kernels::{
    apply_bc_block, collide_block, propagate_block, CollisionParams, Edge, EquilibriumModel,
    Variant, WallSpec,
};
use lbtk_core::lattice::{ColumnBlockMut, GatherView, LatticeGeometry, PopulationField, VelocitySet};
use lbtk_core::schedule::{KernelKind, StepPlan, StepTimings, TaskRegion};

use crate::config::ModeKind;

/// Everything a step needs besides the two buffers and the link.
pub struct KernelSetup {
    pub vset: VelocitySet,
    pub eq: EquilibriumModel,
    pub params: CollisionParams,
    /// `Some` → fixed-temperature walls above and below the physical
    /// box; `None` → periodic in y (vertical wrap each step).
    pub wall: Option<WallSpec>,
    pub variant: Variant,
    pub exchange: ExchangeConfig,
    /// Injected transport latency, charged to the exchange timer.
    pub exchange_delay: Duration,
    /// Injected latency per collide invocation (three per step).
    pub collide_sleep: Duration,
}

/// Flat index for per-kernel timings: region major, kernel minor.
pub fn kernel_slot(region: TaskRegion, kernel: KernelKind) -> usize {
    let r = match region {
        TaskRegion::Bulk => 0,
        TaskRegion::BorderL => 1,
        TaskRegion::BorderR => 2,
    };
    let k = match kernel {
        KernelKind::Propagate => 0,
        KernelKind::Bc => 1,
        KernelKind::Collide => 2,
    };
    r * 3 + k
}

/// Wall-clock record of one executed step on one rank.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepBreakdown {
    pub timings: StepTimings,
    /// Vertical wrap, torus runs only (inside `t_wall`, outside lanes).
    pub t_wrap: f64,
    /// Seconds per (region, kernel); see [`kernel_slot`].
    pub kernel_s: [f64; 9],
    pub exchange_stats: ExchangeStats,
    /// Sites left in a non-physical macroscopic state by this step's
    /// collides. Collision continues past them; the run monitor decides.
    pub non_physical_sites: usize,
}

fn secs(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64()
}

/// Propagate → bc → collide over one destination block, timed per
/// kernel. `gather` must cover every column the propagation reaches.
fn run_chain(
    gather: &GatherView<'_>,
    dst: &mut ColumnBlockMut<'_>,
    geometry: &LatticeGeometry,
    setup: &KernelSetup,
) -> ([f64; 3], usize) {
    let ys = geometry.y_phys_start()..geometry.y_phys_end();

    let t0 = Instant::now();
    propagate_block(setup.variant, gather, dst, ys.clone(), &setup.vset);
    let t_prop = secs(t0);

    let t0 = Instant::now();
    if let Some(wall) = &setup.wall {
        apply_bc_block(dst, geometry, Edge::Bottom, wall, &setup.eq, &setup.vset);
        apply_bc_block(dst, geometry, Edge::Top, wall, &setup.eq, &setup.vset);
    }
    let t_bc = secs(t0);

    let t0 = Instant::now();
    if !setup.collide_sleep.is_zero() {
        thread::sleep(setup.collide_sleep);
    }
    let outcome = collide_block(dst, ys, &setup.params, &setup.eq, &setup.vset);
    let t_coll = secs(t0);

    ([t_prop, t_bc, t_coll], outcome.non_physical_sites)
}

/// Advances `cur` into `nxt` by one step. The caller owns the buffer
/// swap. `plan` must come from `plan_step` on the same geometry.
pub fn execute_step<L: HaloLink>(
    mode: ModeKind,
    plan: &StepPlan,
    setup: &KernelSetup,
    cur: &mut PopulationField,
    nxt: &mut PopulationField,
    link: &mut L,
) -> Result<StepBreakdown, ExchangeError> {
    let geometry = *cur.geometry();
    let bulk_span = plan.tasks[plan.task_index(TaskRegion::Bulk, KernelKind::Propagate)].span;
    let bl_span = plan.tasks[plan.task_index(TaskRegion::BorderL, KernelKind::Propagate)].span;
    let br_span = plan.tasks[plan.task_index(TaskRegion::BorderR, KernelKind::Propagate)].span;

    let step_t0 = Instant::now();

    let mut t_wrap = 0.0;
    if setup.wall.is_none() {
        let t0 = Instant::now();
        vertical_halo_wrap(cur);
        t_wrap = secs(t0);
    }

    // Previous step's state: halo columns mutable for the exchange,
    // physical columns shared by every reader.
    let mut cur_parts = cur
        .split_columns_mut(&[geometry.x_phys_start(), geometry.x_phys_end()])
        .into_iter();
    let mut cur_lhalo = cur_parts.next().expect("left halo block");
    let cur_phys = cur_parts.next().expect("physical block");
    let mut cur_rhalo = cur_parts.next().expect("right halo block");

    // Next step's state: one writer per region; halo columns unwritten.
    let mut nxt_parts = nxt
        .split_columns_mut(&[bl_span.x0, bl_span.x1, br_span.x0, br_span.x1])
        .into_iter();
    let _nxt_lhalo = nxt_parts.next().expect("left halo block");
    let mut nxt_bl = nxt_parts.next().expect("left border block");
    let mut nxt_bulk = nxt_parts.next().expect("bulk block");
    let mut nxt_br = nxt_parts.next().expect("right border block");
    let _nxt_rhalo = nxt_parts.next().expect("right halo block");
    debug_assert_eq!(nxt_bulk.span(), bulk_span);

    let mut kernel_s = [0.0f64; 9];
    let mut non_physical = 0usize;
    let t_bulk;
    let t_exchange;
    let exchange_stats;

    // The bulk gather stays within physical columns by construction
    // (its span keeps one halo-width of distance from both edges).
    let bulk_gather = GatherView::new(vec![cur_phys.as_read()]);

    let run_exchange = |lhalo: &mut ColumnBlockMut<'_>,
                        rhalo: &mut ColumnBlockMut<'_>,
                        link: &mut L|
     -> Result<(ExchangeStats, f64), ExchangeError> {
        let t0 = Instant::now();
        if !setup.exchange_delay.is_zero() {
            thread::sleep(setup.exchange_delay);
        }
        let stats = exchange_halos(
            &cur_phys.as_read(),
            lhalo,
            rhalo,
            &geometry,
            &setup.vset,
            &setup.exchange,
            link,
        )?;
        Ok((stats, secs(t0)))
    };

    match mode {
        ModeKind::Serial => {
            let (stats, t_ex) = run_exchange(&mut cur_lhalo, &mut cur_rhalo, link)?;
            exchange_stats = stats;
            t_exchange = t_ex;

            let t0 = Instant::now();
            let (times, bad) = run_chain(&bulk_gather, &mut nxt_bulk, &geometry, setup);
            t_bulk = secs(t0);
            kernel_s[kernel_slot(TaskRegion::Bulk, KernelKind::Propagate)] = times[0];
            kernel_s[kernel_slot(TaskRegion::Bulk, KernelKind::Bc)] = times[1];
            kernel_s[kernel_slot(TaskRegion::Bulk, KernelKind::Collide)] = times[2];
            non_physical += bad;
        }
        ModeKind::Overlap => {
            // Bulk chain on its own thread; exchange on the caller.
            let bulk_setup = &*setup;
            let bulk_geom = geometry;
            let mut bulk_dst = nxt_bulk;
            let gather = bulk_gather;
            let (lane, stats, t_ex) = thread::scope(
                |s| -> Result<_, ExchangeError> {
                    let bulk_lane = s.spawn(move || {
                        let t0 = Instant::now();
                        let (times, bad) =
                            run_chain(&gather, &mut bulk_dst, &bulk_geom, bulk_setup);
                        (times, bad, secs(t0))
                    });
                    let (stats, t_ex) = run_exchange(&mut cur_lhalo, &mut cur_rhalo, link)?;
                    let lane = bulk_lane.join().expect("bulk lane panicked");
                    Ok((lane, stats, t_ex))
                },
            )?;
            let (times, bad, lane_elapsed) = lane;
            kernel_s[kernel_slot(TaskRegion::Bulk, KernelKind::Propagate)] = times[0];
            kernel_s[kernel_slot(TaskRegion::Bulk, KernelKind::Bc)] = times[1];
            kernel_s[kernel_slot(TaskRegion::Bulk, KernelKind::Collide)] = times[2];
            non_physical += bad;
            t_bulk = lane_elapsed;
            exchange_stats = stats;
            t_exchange = t_ex;
        }
    }

    // Border chains: gated on the exchange in both modes (they read the
    // halo columns it just filled), so they run here, after it.
    let border_gather = GatherView::new(vec![
        cur_phys.as_read(),
        cur_lhalo.as_read(),
        cur_rhalo.as_read(),
    ]);

    let t0 = Instant::now();
    let (times_l, bad_l) = run_chain(&border_gather, &mut nxt_bl, &geometry, setup);
    let t_border_l = secs(t0);
    let t0 = Instant::now();
    let (times_r, bad_r) = run_chain(&border_gather, &mut nxt_br, &geometry, setup);
    let t_border_r = secs(t0);
    for (region, times) in [(TaskRegion::BorderL, times_l), (TaskRegion::BorderR, times_r)] {
        kernel_s[kernel_slot(region, KernelKind::Propagate)] = times[0];
        kernel_s[kernel_slot(region, KernelKind::Bc)] = times[1];
        kernel_s[kernel_slot(region, KernelKind::Collide)] = times[2];
    }
    non_physical += bad_l + bad_r;

    let t_wall = secs(step_t0);
    Ok(StepBreakdown {
        timings: StepTimings {
            t_bulk,
            t_border_l,
            t_border_r,
            t_exchange,
            t_wall,
        },
        t_wrap,
        kernel_s,
        exchange_stats,
        non_physical_sites: non_physical,
    })
}
