//! Lattice geometry, discrete velocity sets, and halo-padded
//! Structure-of-Arrays population storage.
//!
//! Storage layout: all `Q` population planes are stored back to back
//! (plane-major); within a plane, sites are column-major — the linear
//! offset of `(l, ix, iy)` is `l·NX·NY + ix·NY + iy`. One column of one
//! plane is therefore a contiguous run of `NY` values, which is what the
//! halo-exchange buffers and the column-wise kernels rely on.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

/// Supported velocity-set families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Model {
    /// 37-velocity thermal set; populations hop up to 3 sites per step.
    D2Q37,
    /// Classic 9-velocity athermal set; hops of at most 1 site.
    D2Q9,
}

impl Model {
    pub fn q(self) -> usize {
        match self {
            Model::D2Q37 => 37,
            Model::D2Q9 => 9,
        }
    }

    /// Largest velocity component in the set; halos must be at least
    /// this wide.
    pub fn max_reach(self) -> usize {
        match self {
            Model::D2Q37 => 3,
            Model::D2Q9 => 1,
        }
    }

    /// Default halo width used by the toolkit for this model.
    pub fn default_halo(self) -> usize {
        self.max_reach()
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Model::D2Q37 => write!(f, "D2Q37"),
            Model::D2Q9 => write!(f, "D2Q9"),
        }
    }
}

/// The 37 velocities: the zero vector plus all signed permutations of
/// (1,0), (1,1), (2,0), (2,1), (2,2), (3,0), (3,1), grouped by shell.
/// The label → velocity assignment is arbitrary but fixed here, in one
/// place, so the kernels, the halo logic and every test agree on it.
const D2Q37_VELOCITIES: [(i32, i32); 37] = [
    (0, 0),
    // |c|² = 1
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    // |c|² = 2
    (1, 1),
    (-1, 1),
    (1, -1),
    (-1, -1),
    // |c|² = 4
    (2, 0),
    (-2, 0),
    (0, 2),
    (0, -2),
    // |c|² = 5
    (2, 1),
    (2, -1),
    (-2, 1),
    (-2, -1),
    (1, 2),
    (-1, 2),
    (1, -2),
    (-1, -2),
    // |c|² = 8
    (2, 2),
    (-2, 2),
    (2, -2),
    (-2, -2),
    // |c|² = 9
    (3, 0),
    (-3, 0),
    (0, 3),
    (0, -3),
    // |c|² = 10
    (3, 1),
    (3, -1),
    (-3, 1),
    (-3, -1),
    (1, 3),
    (-1, 3),
    (1, -3),
    (-1, -3),
];

const D2Q9_VELOCITIES: [(i32, i32); 9] = [
    (0, 0),
    (1, 0),
    (0, 1),
    (-1, 0),
    (0, -1),
    (1, 1),
    (-1, 1),
    (-1, -1),
    (1, -1),
];

/// A discrete velocity set: the vectors `c_l` for `l = 0..Q`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VelocitySet {
    model: Model,
    velocities: &'static [(i32, i32)],
    max_reach: usize,
}

/// Builds the full velocity list for a supported model. Unknown models
/// are unrepresentable at this level; front ends reject them when
/// parsing configuration.
pub fn build_velocity_set(model: Model) -> VelocitySet {
    let velocities: &'static [(i32, i32)] = match model {
        Model::D2Q37 => &D2Q37_VELOCITIES,
        Model::D2Q9 => &D2Q9_VELOCITIES,
    };
    VelocitySet {
        model,
        velocities,
        max_reach: model.max_reach(),
    }
}

impl VelocitySet {
    pub fn model(&self) -> Model {
        self.model
    }

    pub fn q(&self) -> usize {
        self.velocities.len()
    }

    pub fn velocities(&self) -> &[(i32, i32)] {
        self.velocities
    }

    /// Velocity vector of population `l`.
    pub fn c(&self, l: usize) -> (i32, i32) {
        self.velocities[l]
    }

    pub fn max_reach(&self) -> usize {
        self.max_reach
    }

    /// Label of the opposite velocity: `c(opposite(l)) == -c(l)`.
    pub fn opposite(&self, l: usize) -> usize {
        let (cx, cy) = self.velocities[l];
        self.velocities
            .iter()
            .position(|&(x, y)| x == -cx && y == -cy)
            .expect("velocity set is symmetric")
    }
}

/// Errors from geometry construction, indexing, and allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LatticeError {
    /// An extent or halo width violates a stated requirement.
    BadGeometry {
        what: &'static str,
    },
    /// `(l, ix, iy)` fell outside `{0..Q}×{0..NX}×{0..NY}`.
    IndexOutOfRange {
        l: usize,
        ix: usize,
        iy: usize,
    },
    /// `Q·NX·NY` does not fit the address space.
    ExtentOverflow,
    /// An operation received a field whose population count does not
    /// match the velocity set in use.
    QMismatch {
        field_q: usize,
        expected_q: usize,
    },
}

impl fmt::Display for LatticeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatticeError::BadGeometry { what } => write!(f, "bad lattice geometry: {what}"),
            LatticeError::IndexOutOfRange { l, ix, iy } => {
                write!(f, "site index out of range: (l={l}, ix={ix}, iy={iy})")
            }
            LatticeError::ExtentOverflow => write!(f, "lattice extents overflow the index space"),
            LatticeError::QMismatch {
                field_q,
                expected_q,
            } => write!(
                f,
                "population count mismatch: field has Q={field_q}, expected Q={expected_q}"
            ),
        }
    }
}

impl core::error::Error for LatticeError {}

/// Halo-padded extents of one rank's sub-lattice.
///
/// Physical sites live at `ix ∈ [Hx, Hx+Lx)`, `iy ∈ [Hy, Hy+Ly)`;
/// allocated extents are `NX = Lx + 2Hx`, `NY = Ly + 2Hy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LatticeGeometry {
    lx: usize,
    ly: usize,
    hx: usize,
    hy: usize,
}

impl LatticeGeometry {
    pub fn new(lx: usize, ly: usize, hx: usize, hy: usize) -> Result<Self, LatticeError> {
        if lx == 0 || ly == 0 {
            return Err(LatticeError::BadGeometry {
                what: "physical extents must be at least 1×1",
            });
        }
        let g = LatticeGeometry { lx, ly, hx, hy };
        // NX·NY must be computable; Q is checked at allocation.
        g.nx()
            .checked_mul(g.ny())
            .ok_or(LatticeError::ExtentOverflow)?;
        Ok(g)
    }

    /// Geometry with this model's default halo width on every side.
    pub fn for_model(lx: usize, ly: usize, model: Model) -> Result<Self, LatticeError> {
        let h = model.default_halo();
        Self::new(lx, ly, h, h)
    }

    pub fn lx(&self) -> usize {
        self.lx
    }

    pub fn ly(&self) -> usize {
        self.ly
    }

    pub fn hx(&self) -> usize {
        self.hx
    }

    pub fn hy(&self) -> usize {
        self.hy
    }

    pub fn nx(&self) -> usize {
        self.lx + 2 * self.hx
    }

    pub fn ny(&self) -> usize {
        self.ly + 2 * self.hy
    }

    /// First physical column.
    pub fn x_phys_start(&self) -> usize {
        self.hx
    }

    /// One past the last physical column.
    pub fn x_phys_end(&self) -> usize {
        self.hx + self.lx
    }

    /// First physical row.
    pub fn y_phys_start(&self) -> usize {
        self.hy
    }

    /// One past the last physical row.
    pub fn y_phys_end(&self) -> usize {
        self.hy + self.ly
    }

    /// Column span of the whole physical region.
    pub fn phys_span(&self) -> ColSpan {
        ColSpan {
            x0: self.x_phys_start(),
            x1: self.x_phys_end(),
        }
    }

    pub fn allocated_sites(&self) -> usize {
        self.nx() * self.ny()
    }

    pub fn physical_sites(&self) -> usize {
        self.lx * self.ly
    }

    /// Check that the halos can feed a gather of the given reach.
    pub fn supports_reach(&self, reach: usize) -> Result<(), LatticeError> {
        if self.hx < reach || self.hy < reach {
            return Err(LatticeError::BadGeometry {
                what: "halo narrower than the velocity set's reach",
            });
        }
        Ok(())
    }
}

/// A half-open range of allocated columns `[x0, x1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColSpan {
    pub x0: usize,
    pub x1: usize,
}

impl ColSpan {
    pub fn new(x0: usize, x1: usize) -> Self {
        debug_assert!(x0 <= x1);
        ColSpan { x0, x1 }
    }

    pub fn len(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn is_empty(&self) -> bool {
        self.x0 >= self.x1
    }

    pub fn contains(&self, ix: usize) -> bool {
        ix >= self.x0 && ix < self.x1
    }
}

/// Linear offset of `(l, ix, iy)` in the plane-major / column-major
/// layout: `l·NX·NY + ix·NY + iy`. Rejects out-of-range indices.
pub fn site_offset(
    geometry: &LatticeGeometry,
    q: usize,
    l: usize,
    ix: usize,
    iy: usize,
) -> Result<usize, LatticeError> {
    if l >= q || ix >= geometry.nx() || iy >= geometry.ny() {
        return Err(LatticeError::IndexOutOfRange { l, ix, iy });
    }
    let plane = geometry.nx() * geometry.ny();
    Ok(l * plane + ix * geometry.ny() + iy)
}

/// SoA storage of `Q` population planes over an `NX × NY` halo-padded
/// grid.
///
/// Concurrent writers must target disjoint `(l, ix, iy)` ranges; the
/// step executor enforces that by handing out the non-overlapping
/// column blocks produced by [`PopulationField::split_columns_mut`].
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationField {
    geometry: LatticeGeometry,
    q: usize,
    ny: usize,
    plane_len: usize,
    data: Vec<f64>,
}

/// Allocates a field of `Q·NX·NY` values, each set to `fill`.
pub fn allocate_field(
    geometry: &LatticeGeometry,
    q: usize,
    fill: f64,
) -> Result<PopulationField, LatticeError> {
    if q == 0 {
        return Err(LatticeError::BadGeometry {
            what: "population count must be positive",
        });
    }
    let plane_len = geometry
        .nx()
        .checked_mul(geometry.ny())
        .ok_or(LatticeError::ExtentOverflow)?;
    let total = plane_len
        .checked_mul(q)
        .ok_or(LatticeError::ExtentOverflow)?;
    // Refuse extents whose byte size cannot exist; isize::MAX is the
    // hard allocation ceiling, so fail before Vec aborts.
    total
        .checked_mul(core::mem::size_of::<f64>())
        .filter(|&bytes| bytes <= isize::MAX as usize)
        .ok_or(LatticeError::ExtentOverflow)?;
    Ok(PopulationField {
        geometry: *geometry,
        q,
        ny: geometry.ny(),
        plane_len,
        data: vec![fill; total],
    })
}

impl PopulationField {
    pub fn geometry(&self) -> &LatticeGeometry {
        &self.geometry
    }

    pub fn q(&self) -> usize {
        self.q
    }

    #[inline]
    fn idx(&self, l: usize, ix: usize, iy: usize) -> usize {
        debug_assert!(l < self.q && ix < self.geometry.nx() && iy < self.ny);
        l * self.plane_len + ix * self.ny + iy
    }

    #[inline]
    pub fn get(&self, l: usize, ix: usize, iy: usize) -> f64 {
        self.data[self.idx(l, ix, iy)]
    }

    #[inline]
    pub fn set(&mut self, l: usize, ix: usize, iy: usize, value: f64) {
        let i = self.idx(l, ix, iy);
        self.data[i] = value;
    }

    /// Whole plane `l` as a contiguous slice.
    pub fn plane(&self, l: usize) -> &[f64] {
        &self.data[l * self.plane_len..(l + 1) * self.plane_len]
    }

    pub fn plane_mut(&mut self, l: usize) -> &mut [f64] {
        &mut self.data[l * self.plane_len..(l + 1) * self.plane_len]
    }

    /// Raw storage in layout order. Two fields with equal geometry and
    /// `Q` compare element-wise through these slices.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Read-only view of columns `[x0, x1)` across all planes.
    pub fn columns(&self, x0: usize, x1: usize) -> ColumnBlock<'_> {
        assert!(x0 <= x1 && x1 <= self.geometry.nx());
        let ny = self.ny;
        let planes = (0..self.q)
            .map(|l| &self.data[l * self.plane_len + x0 * ny..l * self.plane_len + x1 * ny])
            .collect();
        ColumnBlock {
            q: self.q,
            ny,
            x0,
            x1,
            planes,
        }
    }

    /// Splits every plane at the given ascending column boundaries and
    /// returns `cuts.len() + 1` disjoint mutable blocks that together
    /// cover all `NX` columns. This is the only way to obtain multiple
    /// simultaneous writers into one field, so disjointness is
    /// guaranteed by construction.
    pub fn split_columns_mut(&mut self, cuts: &[usize]) -> Vec<ColumnBlockMut<'_>> {
        let nx = self.geometry.nx();
        assert!(
            cuts.windows(2).all(|w| w[0] <= w[1]) && cuts.iter().all(|&c| c <= nx),
            "cuts must be ascending column indices within the allocated extent"
        );
        let ny = self.ny;
        let q = self.q;
        let n_blocks = cuts.len() + 1;
        let mut planes_per_block: Vec<Vec<&mut [f64]>> = (0..n_blocks).map(|_| Vec::new()).collect();
        for (l, plane) in self.data.chunks_mut(self.plane_len).enumerate() {
            debug_assert!(l < q);
            let mut rest = plane;
            let mut prev = 0usize;
            for (b, &cut) in cuts.iter().enumerate() {
                let (head, tail) = rest.split_at_mut((cut - prev) * ny);
                planes_per_block[b].push(head);
                rest = tail;
                prev = cut;
            }
            planes_per_block[n_blocks - 1].push(rest);
        }
        let mut x0 = 0usize;
        let mut out = Vec::with_capacity(n_blocks);
        for (b, planes) in planes_per_block.into_iter().enumerate() {
            let x1 = if b < cuts.len() { cuts[b] } else { nx };
            out.push(ColumnBlockMut {
                q,
                ny,
                x0,
                x1,
                planes,
            });
            x0 = x1;
        }
        out
    }
}

/// Read-only per-plane view of a contiguous column range of a field.
#[derive(Debug, Clone)]
pub struct ColumnBlock<'a> {
    q: usize,
    ny: usize,
    x0: usize,
    x1: usize,
    planes: Vec<&'a [f64]>,
}

impl<'a> ColumnBlock<'a> {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn x0(&self) -> usize {
        self.x0
    }

    pub fn x1(&self) -> usize {
        self.x1
    }

    #[inline]
    pub fn contains_col(&self, ix: usize) -> bool {
        ix >= self.x0 && ix < self.x1
    }

    /// Column `ix` (absolute index) of plane `l`, `NY` contiguous values.
    #[inline]
    pub fn col(&self, l: usize, ix: usize) -> &[f64] {
        debug_assert!(self.contains_col(ix));
        let base = (ix - self.x0) * self.ny;
        &self.planes[l][base..base + self.ny]
    }

    #[inline]
    pub fn get(&self, l: usize, ix: usize, iy: usize) -> f64 {
        debug_assert!(iy < self.ny);
        self.planes[l][(ix - self.x0) * self.ny + iy]
    }
}

/// Mutable counterpart of [`ColumnBlock`]; blocks from one
/// [`PopulationField::split_columns_mut`] call are disjoint and may be
/// written concurrently.
#[derive(Debug)]
pub struct ColumnBlockMut<'a> {
    q: usize,
    ny: usize,
    x0: usize,
    x1: usize,
    planes: Vec<&'a mut [f64]>,
}

impl<'a> ColumnBlockMut<'a> {
    pub fn q(&self) -> usize {
        self.q
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn x0(&self) -> usize {
        self.x0
    }

    pub fn x1(&self) -> usize {
        self.x1
    }

    pub fn span(&self) -> ColSpan {
        ColSpan {
            x0: self.x0,
            x1: self.x1,
        }
    }

    #[inline]
    pub fn contains_col(&self, ix: usize) -> bool {
        ix >= self.x0 && ix < self.x1
    }

    #[inline]
    pub fn get(&self, l: usize, ix: usize, iy: usize) -> f64 {
        debug_assert!(iy < self.ny);
        self.planes[l][(ix - self.x0) * self.ny + iy]
    }

    #[inline]
    pub fn set(&mut self, l: usize, ix: usize, iy: usize, value: f64) {
        debug_assert!(iy < self.ny);
        self.planes[l][(ix - self.x0) * self.ny + iy] = value;
    }

    #[inline]
    pub fn col(&self, l: usize, ix: usize) -> &[f64] {
        debug_assert!(self.contains_col(ix));
        let base = (ix - self.x0) * self.ny;
        &self.planes[l][base..base + self.ny]
    }

    #[inline]
    pub fn col_mut(&mut self, l: usize, ix: usize) -> &mut [f64] {
        debug_assert!(self.contains_col(ix));
        let base = (ix - self.x0) * self.ny;
        &mut self.planes[l][base..base + self.ny]
    }

    /// Read-only view of this block (cheap; borrows, does not copy).
    pub fn as_read(&self) -> ColumnBlock<'_> {
        ColumnBlock {
            q: self.q,
            ny: self.ny,
            x0: self.x0,
            x1: self.x1,
            planes: self.planes.iter().map(|p| &**p).collect(),
        }
    }
}

/// Routes `(l, ix, iy)` reads across several non-overlapping column
/// blocks of the *same* field — the step executor reads the previous
/// timestep's field through one of these while its halo columns and
/// physical columns are held as separate borrows.
#[derive(Debug, Clone)]
pub struct GatherView<'a> {
    parts: Vec<ColumnBlock<'a>>,
}

impl<'a> GatherView<'a> {
    /// Build from any number of disjoint blocks. Order them by expected
    /// access frequency: lookup scans linearly.
    pub fn new(parts: Vec<ColumnBlock<'a>>) -> Self {
        GatherView { parts }
    }

    #[inline]
    fn part_for(&self, ix: usize) -> &ColumnBlock<'a> {
        for p in &self.parts {
            if p.contains_col(ix) {
                return p;
            }
        }
        panic!("column {ix} not covered by this view");
    }

    /// Column `ix` of plane `l` as a contiguous `NY` slice.
    #[inline]
    pub fn col(&self, l: usize, ix: usize) -> &[f64] {
        self.part_for(ix).col(l, ix)
    }

    #[inline]
    pub fn get(&self, l: usize, ix: usize, iy: usize) -> f64 {
        self.part_for(ix).get(l, ix, iy)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn d2q37_has_37_distinct_velocities_with_reach_3() {
        let vs = build_velocity_set(Model::D2Q37);
        assert_eq!(vs.q(), 37);
        assert_eq!(vs.max_reach(), 3);
        for (i, a) in vs.velocities().iter().enumerate() {
            for b in &vs.velocities()[i + 1..] {
                assert_ne!(a, b, "velocities must be pairwise distinct");
            }
        }
        assert!(vs.velocities().contains(&(3, 0)));
        assert!(vs.velocities().contains(&(3, -1)));
        let reach = vs
            .velocities()
            .iter()
            .map(|&(x, y)| x.unsigned_abs().max(y.unsigned_abs()) as usize)
            .max()
            .unwrap();
        assert_eq!(reach, 3);
    }

    #[test]
    fn velocity_sets_are_symmetric_with_one_zero() {
        for model in [Model::D2Q37, Model::D2Q9] {
            let vs = build_velocity_set(model);
            let zeros = vs.velocities().iter().filter(|&&c| c == (0, 0)).count();
            assert_eq!(zeros, 1, "{model}: exactly one rest velocity");
            let (mut sx, mut sy) = (0i32, 0i32);
            for l in 0..vs.q() {
                let (cx, cy) = vs.c(l);
                sx += cx;
                sy += cy;
                let opp = vs.opposite(l);
                assert_eq!(vs.c(opp), (-cx, -cy));
                assert_eq!(vs.opposite(opp), l, "opposite is an involution");
            }
            assert_eq!((sx, sy), (0, 0), "{model}: velocities sum to zero");
        }
    }

    #[test]
    fn d2q37_squared_speed_sum_is_216() {
        let vs = build_velocity_set(Model::D2Q37);
        let sum: i32 = vs.velocities().iter().map(|&(x, y)| x * x + y * y).sum();
        assert_eq!(sum, 216);
    }

    #[test]
    fn geometry_arithmetic() {
        let g = LatticeGeometry::new(45, 64, 3, 3).unwrap();
        assert_eq!(g.nx(), 45 + 6);
        assert_eq!(g.ny(), 64 + 6);
        assert_eq!(g.x_phys_start(), 3);
        assert_eq!(g.x_phys_end(), 48);
        assert_eq!(g.physical_sites(), 45 * 64);

        let g9 = LatticeGeometry::for_model(10, 12, Model::D2Q9).unwrap();
        assert_eq!((g9.hx(), g9.hy()), (1, 1));
        let g37 = LatticeGeometry::for_model(10, 12, Model::D2Q37).unwrap();
        assert_eq!((g37.hx(), g37.hy()), (3, 3));

        assert!(LatticeGeometry::new(0, 4, 1, 1).is_err());
        assert!(g9.supports_reach(1).is_ok());
        assert!(g9.supports_reach(3).is_err());
    }

    #[test]
    fn site_offset_matches_layout_law() {
        let g = LatticeGeometry::new(4, 4, 3, 3).unwrap();
        assert_eq!(site_offset(&g, 37, 0, 0, 0).unwrap(), 0);
        let (nx, ny) = (g.nx(), g.ny());
        for (ix, iy) in [(0, 0), (2, 7), (9, 9)] {
            assert_eq!(
                site_offset(&g, 37, 1, ix, iy).unwrap(),
                nx * ny + ix * ny + iy
            );
        }
        assert!(site_offset(&g, 37, 37, 0, 0).is_err());
        assert!(site_offset(&g, 37, 0, nx, 0).is_err());
        assert!(site_offset(&g, 37, 0, 0, ny).is_err());
    }

    #[test]
    fn site_offset_is_a_bijection_on_small_geometries() {
        // Exhaustive: enumerate (l, ix, iy) in storage order and check
        // the offset equals the enumeration rank.
        for (lx, ly, hx, hy, q) in [(2, 3, 1, 1, 5), (1, 1, 3, 3, 4), (4, 2, 0, 2, 3)] {
            let g = LatticeGeometry::new(lx, ly, hx, hy).unwrap();
            let mut rank = 0usize;
            for l in 0..q {
                for ix in 0..g.nx() {
                    for iy in 0..g.ny() {
                        assert_eq!(site_offset(&g, q, l, ix, iy).unwrap(), rank);
                        rank += 1;
                    }
                }
            }
            assert_eq!(rank, q * g.allocated_sites());
        }
    }

    #[test]
    fn allocate_fills_and_is_deterministic() {
        let g = LatticeGeometry::new(4, 4, 3, 3).unwrap();
        let f = allocate_field(&g, 37, 0.0).unwrap();
        assert_eq!(f.data().len(), 37 * 10 * 10);
        assert!(f.data().iter().all(|&v| v == 0.0));

        let ones = allocate_field(&g, 37, 1.0).unwrap();
        let sum: f64 = ones.data().iter().sum();
        assert_eq!(sum, (37 * 10 * 10) as f64);

        let again = allocate_field(&g, 37, 1.0).unwrap();
        assert_eq!(ones, again, "same arguments give bit-identical fields");
    }

    #[test]
    fn allocate_rejects_overflowing_extents() {
        let g = LatticeGeometry::new(usize::MAX / 128, 4, 0, 0);
        match g {
            Ok(g) => assert_eq!(
                allocate_field(&g, 64, 0.0).unwrap_err(),
                LatticeError::ExtentOverflow
            ),
            Err(e) => assert_eq!(e, LatticeError::ExtentOverflow),
        }
    }

    #[test]
    fn column_blocks_cover_disjointly_and_alias_the_field() {
        let g = LatticeGeometry::new(6, 4, 2, 1).unwrap();
        let mut f = allocate_field(&g, 3, 0.0).unwrap();
        for l in 0..3 {
            for ix in 0..g.nx() {
                for iy in 0..g.ny() {
                    f.set(l, ix, iy, (l * 1000 + ix * 10 + iy) as f64);
                }
            }
        }
        let reference = f.clone();

        let cuts = [2usize, 5, 8];
        let mut blocks = f.split_columns_mut(&cuts);
        assert_eq!(blocks.len(), 4);
        assert_eq!(
            blocks.iter().map(|b| b.x1() - b.x0()).sum::<usize>(),
            g.nx()
        );
        for b in &blocks {
            for l in 0..3 {
                for ix in b.x0()..b.x1() {
                    for iy in 0..g.ny() {
                        assert_eq!(b.get(l, ix, iy), reference.get(l, ix, iy));
                    }
                }
            }
        }
        // Writes through a block land at the right field location.
        blocks[1].set(2, 3, 1, -7.5);
        drop(blocks);
        assert_eq!(f.get(2, 3, 1), -7.5);

        // Read-only whole-range view agrees as well.
        let view = f.columns(0, g.nx());
        assert_eq!(view.get(2, 3, 1), -7.5);
        assert_eq!(view.col(0, 4).len(), g.ny());
    }

    #[test]
    fn gather_view_routes_across_parts() {
        let g = LatticeGeometry::new(4, 3, 2, 1).unwrap();
        let mut f = allocate_field(&g, 2, 0.0).unwrap();
        for l in 0..2 {
            for ix in 0..g.nx() {
                for iy in 0..g.ny() {
                    f.set(l, ix, iy, (100 * l + 10 * ix + iy) as f64);
                }
            }
        }
        let reference = f.clone();
        let mut parts = f.split_columns_mut(&[2, 6]);
        let right = parts.pop().unwrap();
        let phys = parts.pop().unwrap();
        let left = parts.pop().unwrap();
        let view = GatherView::new(vec![phys.as_read(), left.as_read(), right.as_read()]);
        for l in 0..2 {
            for ix in 0..g.nx() {
                for iy in 0..g.ny() {
                    assert_eq!(view.get(l, ix, iy), reference.get(l, ix, iy));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn offset_bijection_inverts(lx in 1usize..9, ly in 1usize..9, hx in 0usize..4,
                                    hy in 0usize..4, q in 1usize..40, seed in 0usize..10_000) {
            let g = LatticeGeometry::new(lx, ly, hx, hy).unwrap();
            let total = q * g.allocated_sites();
            let off = seed % total;
            // Invert the layout law by arithmetic...
            let plane = g.allocated_sites();
            let l = off / plane;
            let ix = (off % plane) / g.ny();
            let iy = off % g.ny();
            // ...and check the forward map lands back on the offset.
            prop_assert_eq!(site_offset(&g, q, l, ix, iy).unwrap(), off);
        }

        #[test]
        fn opposite_velocity_pairs_cover_the_set(model in prop_oneof![Just(Model::D2Q9), Just(Model::D2Q37)],
                                                 l in 0usize..37) {
            let vs = build_velocity_set(model);
            let l = l % vs.q();
            let (cx, cy) = vs.c(l);
            let opp = vs.opposite(l);
            prop_assert_eq!(vs.c(opp), (-cx, -cy));
        }
    }
}
