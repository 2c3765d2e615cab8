//! Per-step task planning: which kernel runs over which column span,
//! in which queue, and what must wait for the halo exchange.
//!
//! Every step runs the same nine kernel tasks — propagate, boundary
//! conditions, collide, each over three column regions — plus one halo
//! exchange. The interior ("bulk") region touches no halo columns, so
//! its three kernels may run concurrently with the exchange; the two
//! border regions read freshly exchanged halo columns and are gated on
//! exchange completion. Queue 1 holds the bulk chain, queues 2 and 3
//! the left and right border chains.

use crate::lattice::{ColSpan, LatticeGeometry};
use alloc::vec::Vec;
use core::fmt;

/// The three kernels of one lattice update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Propagate,
    Bc,
    Collide,
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelKind::Propagate => write!(f, "propagate"),
            KernelKind::Bc => write!(f, "bc"),
            KernelKind::Collide => write!(f, "collide"),
        }
    }
}

/// Column region a task covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskRegion {
    Bulk,
    BorderL,
    BorderR,
}

impl TaskRegion {
    /// Queue the region's kernels are issued to.
    pub fn queue(self) -> u8 {
        match self {
            TaskRegion::Bulk => 1,
            TaskRegion::BorderL => 2,
            TaskRegion::BorderR => 3,
        }
    }
}

impl fmt::Display for TaskRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskRegion::Bulk => write!(f, "bulk"),
            TaskRegion::BorderL => write!(f, "borderL"),
            TaskRegion::BorderR => write!(f, "borderR"),
        }
    }
}

/// One kernel invocation of the step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelTask {
    pub kernel: KernelKind,
    pub region: TaskRegion,
    /// Issue queue: 1 = bulk, 2 = left border, 3 = right border.
    pub queue: u8,
    /// Physical columns this task covers (may be empty in the
    /// degenerate split).
    pub span: ColSpan,
    /// Whether the task must wait for halo-exchange completion.
    pub gated_on_exchange: bool,
}

/// Node reference in the step's dependency edges.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskRef {
    Exchange,
    /// Index into [`StepPlan::tasks`].
    Kernel(usize),
}

/// The dependency structure of one timestep on one rank.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepPlan {
    pub tasks: Vec<KernelTask>,
    /// Directed edges `(before, after)`.
    pub edges: Vec<(TaskRef, TaskRef)>,
    /// True when the slab is too narrow for an ungated interior
    /// (`Lx ≤ 2·Hx`): the bulk region is empty and every column is
    /// border work.
    pub degenerate: bool,
}

impl StepPlan {
    pub fn tasks_in_region(&self, region: TaskRegion) -> impl Iterator<Item = &KernelTask> {
        self.tasks.iter().filter(move |t| t.region == region)
    }

    /// The task index of `(region, kernel)`; the plan always contains
    /// exactly one such task.
    pub fn task_index(&self, region: TaskRegion, kernel: KernelKind) -> usize {
        self.tasks
            .iter()
            .position(|t| t.region == region && t.kernel == kernel)
            .expect("every step plan carries all nine kernel tasks")
    }
}

/// Splits a slab's physical columns into border and bulk regions and
/// lays out the nine kernel tasks with their dependency edges. Border
/// regions are one halo width (`Hx`) wide — exactly the columns whose
/// propagation gather can reach halo data.
pub fn plan_step(geometry: &LatticeGeometry) -> StepPlan {
    let hx = geometry.hx();
    let (x0, x1) = (geometry.x_phys_start(), geometry.x_phys_end());
    let lx = geometry.lx();

    let degenerate = lx <= 2 * hx;
    let (border_l, bulk, border_r) = if degenerate {
        // No interior column is out of halo reach; split the slab into
        // two disjoint border regions and leave the bulk empty.
        let cut = x0 + lx.min(hx);
        (
            ColSpan::new(x0, cut),
            ColSpan::new(cut, cut),
            ColSpan::new(cut, x1),
        )
    } else {
        (
            ColSpan::new(x0, x0 + hx),
            ColSpan::new(x0 + hx, x1 - hx),
            ColSpan::new(x1 - hx, x1),
        )
    };

    let mut tasks = Vec::with_capacity(9);
    for (region, span) in [
        (TaskRegion::Bulk, bulk),
        (TaskRegion::BorderL, border_l),
        (TaskRegion::BorderR, border_r),
    ] {
        let gated = region != TaskRegion::Bulk;
        for kernel in [KernelKind::Propagate, KernelKind::Bc, KernelKind::Collide] {
            tasks.push(KernelTask {
                kernel,
                region,
                queue: region.queue(),
                span,
                gated_on_exchange: gated,
            });
        }
    }

    let mut edges = Vec::new();
    for region in [TaskRegion::Bulk, TaskRegion::BorderL, TaskRegion::BorderR] {
        let p = TaskRef::Kernel(task_position(&tasks, region, KernelKind::Propagate));
        let b = TaskRef::Kernel(task_position(&tasks, region, KernelKind::Bc));
        let c = TaskRef::Kernel(task_position(&tasks, region, KernelKind::Collide));
        if region != TaskRegion::Bulk {
            edges.push((TaskRef::Exchange, p));
        }
        edges.push((p, b));
        edges.push((b, c));
    }

    StepPlan {
        tasks,
        edges,
        degenerate,
    }
}

fn task_position(tasks: &[KernelTask], region: TaskRegion, kernel: KernelKind) -> usize {
    tasks
        .iter()
        .position(|t| t.region == region && t.kernel == kernel)
        .unwrap()
}

/// Wall-clock breakdown of one executed step, in seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepTimings {
    /// Bulk lane: its three kernels end to end.
    pub t_bulk: f64,
    /// Left border lane.
    pub t_border_l: f64,
    /// Right border lane.
    pub t_border_r: f64,
    /// Halo exchange, including any injected transport delay.
    pub t_exchange: f64,
    /// Whole step, start to finish.
    pub t_wall: f64,
}

impl StepTimings {
    /// Every component is a sub-interval of the step, so each one is
    /// individually bounded by the wall time (they need not sum to it
    /// when lanes overlap).
    pub fn is_consistent(&self) -> bool {
        let parts = [
            self.t_bulk,
            self.t_border_l,
            self.t_border_r,
            self.t_exchange,
            self.t_wall,
        ];
        parts.iter().all(|t| t.is_finite() && *t >= 0.0)
            && self.t_wall + 1e-12 >= self.t_bulk.max(self.t_exchange)
            && self.t_wall + 1e-12 >= self.t_border_l.max(self.t_border_r)
    }
}
