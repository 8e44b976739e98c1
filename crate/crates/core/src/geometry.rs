//! Points, grid-discretized domains, annuli, continua and the separation
//! ratio between continua.
//!
//! Every [`DiscreteDomain`] lives on one global lattice per spacing `h`:
//! the cell with integer index `i` has center `(i + 1/2) h` on every axis.
//! Two domains rasterized at the same resolution therefore share cells,
//! which makes sub-domain inclusion exact.

use std::collections::{HashMap, VecDeque};

use thiserror::Error;

/// Errors raised by geometric constructions.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("dimension {0} is not supported (expected 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite coordinate in point")]
    NonFinite,
    #[error("no cell center satisfies the domain predicate")]
    EmptyDomain,
    #[error("annulus requires 0 < r_inner < r_outer (got r_inner = {r_inner}, r_outer = {r_outer})")]
    InvalidAnnulus { r_inner: f64, r_outer: f64 },
    #[error("continuum `{0}` is degenerate (zero diameter)")]
    DegenerateContinuum(String),
    #[error("continua overlap (zero distance)")]
    Overlap,
    #[error("point or cell {0} lies outside the domain")]
    NotContained(String),
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("resolution must be positive and finite (got {0})")]
    InvalidResolution(f64),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// A point of R^n, n in {2, 3}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    coords: [f64; 3],
    dim: usize,
}

impl Point {
    pub fn new2(x: f64, y: f64) -> Self {
        Self { coords: [x, y, 0.0], dim: 2 }
    }

    pub fn new3(x: f64, y: f64, z: f64) -> Self {
        Self { coords: [x, y, z], dim: 3 }
    }

    pub fn origin(dim: usize) -> Self {
        Self { coords: [0.0; 3], dim }
    }

    pub fn from_slice(c: &[f64]) -> Result<Self> {
        check_dim(c.len())?;
        if c.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        let mut coords = [0.0; 3];
        coords[..c.len()].copy_from_slice(c);
        Ok(Self { coords, dim: c.len() })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    #[inline]
    pub fn get(&self, axis: usize) -> f64 {
        self.coords[axis]
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist_sq(other).sqrt()
    }

    #[inline]
    pub fn dist_sq(&self, other: &Point) -> f64 {
        let mut s = 0.0;
        for k in 0..self.dim {
            let d = self.coords[k] - other.coords[k];
            s += d * d;
        }
        s
    }

    pub fn norm(&self) -> f64 {
        self.coords().iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn add(&self, other: &Point) -> Point {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Point) -> Point {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Point {
        let mut p = *self;
        for k in 0..self.dim {
            p.coords[k] *= s;
        }
        p
    }

    /// `self + (other - self) * t`
    pub fn lerp(&self, other: &Point, t: f64) -> Point {
        self.zip(other, |a, b| a + (b - a) * t)
    }

    fn zip(&self, other: &Point, f: impl Fn(f64, f64) -> f64) -> Point {
        let mut p = *self;
        for k in 0..self.dim {
            p.coords[k] = f(self.coords[k], other.coords[k]);
        }
        p
    }

    pub fn is_finite(&self) -> bool {
        self.coords().iter().all(|v| v.is_finite())
    }
}

fn check_dim(n: usize) -> Result<()> {
    if n == 2 || n == 3 {
        Ok(())
    } else {
        Err(GeometryError::UnsupportedDimension(n))
    }
}

/// Integer lattice index of a cell (unused trailing axes are zero).
pub type CellKey = [i32; 3];

/// Neighbor stencil entry: lattice offset, Euclidean length in cell units,
/// and the cells the edge passes over (they must be occupied for the edge to
/// exist).
#[derive(Clone, Debug)]
pub struct StencilEntry {
    pub offset: [i32; 3],
    pub length: f64,
    pub via: Vec<[i32; 3]>,
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

/// Graph stencil: every primitive lattice offset with max-norm at most 2
/// (16 in 2-D, 98 in 3-D), in lexicographic order. Offsets of max-norm 1 form
/// the Moore neighborhood; the longer ones cut the direction bias of the
/// path metric and require the cells around their midpoint to be occupied.
pub fn graph_stencil(dim: usize) -> &'static [StencilEntry] {
    use std::sync::OnceLock;
    static S2: OnceLock<Vec<StencilEntry>> = OnceLock::new();
    static S3: OnceLock<Vec<StencilEntry>> = OnceLock::new();
    let build = |dim: usize| {
        let mut v = Vec::new();
        let zr = if dim == 3 { -2..=2 } else { 0..=0 };
        for dx in -2..=2i32 {
            for dy in -2..=2i32 {
                for dz in zr.clone() {
                    if gcd(gcd(dx, dy), dz) != 1 {
                        continue;
                    }
                    let offset = [dx, dy, dz];
                    let len = ((dx * dx + dy * dy + dz * dz) as f64).sqrt();
                    let mut via = Vec::new();
                    if offset.iter().any(|c| c.abs() == 2) {
                        // cells touching the midpoint: odd axes round both ways
                        let odd: Vec<usize> = (0..3).filter(|&a| offset[a] % 2 != 0).collect();
                        for mask in 0..(1u32 << odd.len()) {
                            let mut c = [0i32; 3];
                            for a in 0..3 {
                                c[a] = offset[a].div_euclid(2);
                            }
                            for (bit, &a) in odd.iter().enumerate() {
                                if mask >> bit & 1 == 1 {
                                    c[a] += 1;
                                }
                            }
                            via.push(c);
                        }
                    }
                    v.push(StencilEntry { offset, length: len, via });
                }
            }
        }
        v
    };
    match dim {
        2 => S2.get_or_init(|| build(2)),
        _ => S3.get_or_init(|| build(3)),
    }
}

/// Compressed neighbor lists of a [`DiscreteDomain`]: the neighbors of cell
/// `i` are `targets[offsets[i]..offsets[i + 1]]` with edge lengths
/// `lengths[kinds[j]]` (world units).
#[derive(Clone, Debug)]
pub struct Adjacency {
    pub offsets: Vec<usize>,
    pub targets: Vec<u32>,
    pub kinds: Vec<u8>,
    pub lengths: Vec<f64>,
}

impl Adjacency {
    #[inline]
    pub fn range(&self, id: u32) -> std::ops::Range<usize> {
        self.offsets[id as usize]..self.offsets[id as usize + 1]
    }

    #[inline]
    pub fn length(&self, j: usize) -> f64 {
        self.lengths[self.kinds[j] as usize]
    }

    pub fn arc_count(&self) -> usize {
        self.targets.len()
    }
}

fn face_offsets(dim: usize) -> &'static [[i32; 3]] {
    const F2: [[i32; 3]; 4] = [[-1, 0, 0], [1, 0, 0], [0, -1, 0], [0, 1, 0]];
    const F3: [[i32; 3]; 6] = [
        [-1, 0, 0],
        [1, 0, 0],
        [0, -1, 0],
        [0, 1, 0],
        [0, 0, -1],
        [0, 0, 1],
    ];
    if dim == 2 {
        &F2
    } else {
        &F3
    }
}

/// A grid discretization of a domain in R^n.
///
/// Cells are numbered densely in lexicographic order of their lattice keys,
/// so a smaller id always means a lexicographically smaller cell.
#[derive(Clone, Debug)]
pub struct DiscreteDomain {
    dim: usize,
    spacing: f64,
    keys: Vec<CellKey>,
    lo: CellKey,
    extent: [usize; 3],
    lookup: Vec<u32>,
    boundary: Vec<bool>,
    boundary_ids: Vec<u32>,
    trimmed: bool,
    adjacency: std::sync::OnceLock<Adjacency>,
}

const EMPTY: u32 = u32::MAX;

impl DiscreteDomain {
    /// Builds a domain from an arbitrary set of lattice keys. Connectivity is
    /// not enforced here; see [`rasterize`].
    pub fn from_cells(dim: usize, spacing: f64, mut keys: Vec<CellKey>) -> Result<Self> {
        check_dim(dim)?;
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(GeometryError::InvalidResolution(1.0 / spacing));
        }
        if keys.is_empty() {
            return Err(GeometryError::EmptyDomain);
        }
        for k in keys.iter_mut() {
            for a in dim..3 {
                k[a] = 0;
            }
        }
        keys.sort_unstable();
        keys.dedup();
        let mut lo = [i32::MAX; 3];
        let mut hi = [i32::MIN; 3];
        for k in &keys {
            for a in 0..3 {
                lo[a] = lo[a].min(k[a]);
                hi[a] = hi[a].max(k[a]);
            }
        }
        let extent = [
            (hi[0] - lo[0] + 1) as usize,
            (hi[1] - lo[1] + 1) as usize,
            (hi[2] - lo[2] + 1) as usize,
        ];
        let mut lookup = vec![EMPTY; extent[0] * extent[1] * extent[2]];
        for (i, k) in keys.iter().enumerate() {
            let slot = Self::slot_of(&lo, &extent, k).expect("key inside its own bbox");
            lookup[slot] = i as u32;
        }
        let mut d = Self {
            dim,
            spacing,
            keys,
            lo,
            extent,
            lookup,
            boundary: Vec::new(),
            boundary_ids: Vec::new(),
            trimmed: false,
            adjacency: std::sync::OnceLock::new(),
        };
        d.recompute_boundary();
        Ok(d)
    }

    fn recompute_boundary(&mut self) {
        let faces = face_offsets(self.dim);
        let mut boundary = vec![false; self.keys.len()];
        for (i, k) in self.keys.iter().enumerate() {
            boundary[i] = faces.iter().any(|o| self.id_of(&offset_key(k, o)).is_none());
        }
        self.boundary_ids = boundary
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i as u32))
            .collect();
        self.boundary = boundary;
    }

    /// The same cells, treated as a space without boundary (e.g. a torus
    /// surrogate); distances to its boundary are `+inf`.
    pub fn without_boundary(mut self) -> Self {
        self.boundary.iter_mut().for_each(|b| *b = false);
        self.boundary_ids.clear();
        self
    }

    /// Sub-domain of the cells accepted by `keep`. May be disconnected.
    pub fn restrict(&self, mut keep: impl FnMut(u32, &Point) -> bool) -> Result<Self> {
        let keys: Vec<CellKey> = (0..self.len() as u32)
            .filter(|&i| keep(i, &self.center(i)))
            .map(|i| self.keys[i as usize])
            .collect();
        Self::from_cells(self.dim, self.spacing, keys)
    }

    #[inline]
    fn slot_of(lo: &CellKey, extent: &[usize; 3], k: &CellKey) -> Option<usize> {
        let mut slot = 0usize;
        for a in 0..3 {
            let r = k[a] - lo[a];
            if r < 0 || r as usize >= extent[a] {
                return None;
            }
            slot = slot * extent[a] + r as usize;
        }
        Some(slot)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cell side `h`.
    #[inline]
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Cells per unit length (`1/h`).
    pub fn resolution(&self) -> f64 {
        1.0 / self.spacing
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Lebesgue measure of one cell, `h^n`.
    pub fn cell_measure(&self) -> f64 {
        self.spacing.powi(self.dim as i32)
    }

    pub fn measure(&self) -> f64 {
        self.cell_measure() * self.len() as f64
    }

    /// Euclidean diameter of one cell, `h sqrt(n)`.
    pub fn cell_diameter(&self) -> f64 {
        self.spacing * (self.dim as f64).sqrt()
    }

    #[inline]
    pub fn key(&self, id: u32) -> CellKey {
        self.keys[id as usize]
    }

    pub fn keys(&self) -> &[CellKey] {
        &self.keys
    }

    #[inline]
    pub fn id_of(&self, k: &CellKey) -> Option<u32> {
        let slot = Self::slot_of(&self.lo, &self.extent, k)?;
        let id = self.lookup[slot];
        (id != EMPTY).then_some(id)
    }

    #[inline]
    pub fn center(&self, id: u32) -> Point {
        key_center(&self.keys[id as usize], self.dim, self.spacing)
    }

    pub fn centers(&self) -> Vec<Point> {
        (0..self.len() as u32).map(|i| self.center(i)).collect()
    }

    /// Lattice key of the cell containing `p` (whether occupied or not).
    pub fn key_of_point(&self, p: &Point) -> CellKey {
        point_key(p, self.spacing)
    }

    /// Id of the occupied cell containing `p`.
    pub fn locate(&self, p: &Point) -> Option<u32> {
        if p.dim() != self.dim || !p.is_finite() {
            return None;
        }
        self.id_of(&self.key_of_point(p))
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        self.locate(p).is_some()
    }

    #[inline]
    pub fn is_boundary(&self, id: u32) -> bool {
        self.boundary[id as usize]
    }

    pub fn boundary_cells(&self) -> &[u32] {
        &self.boundary_ids
    }

    /// Whether rasterization discarded smaller components.
    pub fn was_trimmed(&self) -> bool {
        self.trimmed
    }

    pub fn stencil(&self) -> &'static [StencilEntry] {
        graph_stencil(self.dim)
    }

    fn has_edge(&self, k: &CellKey, s: &StencilEntry) -> Option<u32> {
        let n = self.id_of(&offset_key(k, &s.offset))?;
        s.via.iter().all(|v| self.id_of(&offset_key(k, v)).is_some()).then_some(n)
    }

    /// Neighbor lists, built on first use.
    pub fn adjacency(&self) -> &Adjacency {
        self.adjacency.get_or_init(|| {
            let st = self.stencil();
            let mut offsets = Vec::with_capacity(self.len() + 1);
            let mut targets = Vec::with_capacity(self.len() * st.len());
            let mut kinds = Vec::with_capacity(self.len() * st.len());
            offsets.push(0);
            for k in &self.keys {
                for (j, s) in st.iter().enumerate() {
                    if let Some(n) = self.has_edge(k, s) {
                        targets.push(n);
                        kinds.push(j as u8);
                    }
                }
                offsets.push(targets.len());
            }
            let lengths = st.iter().map(|s| s.length * self.spacing).collect();
            Adjacency { offsets, targets, kinds, lengths }
        })
    }

    /// Graph neighbors of `id` with Euclidean edge lengths (world units).
    #[inline]
    pub fn for_each_neighbor(&self, id: u32, mut f: impl FnMut(u32, f64)) {
        let adj = self.adjacency();
        for j in adj.range(id) {
            f(adj.targets[j], adj.length(j));
        }
    }

    /// Whether two cells are graph neighbors; returns the edge length.
    pub fn edge_length(&self, a: u32, b: u32) -> Option<f64> {
        let ka = self.keys[a as usize];
        let kb = self.keys[b as usize];
        let d = [kb[0] - ka[0], kb[1] - ka[1], kb[2] - ka[2]];
        let s = self.stencil().iter().find(|s| s.offset == d)?;
        self.has_edge(&ka, s).map(|_| s.length * self.spacing)
    }

    /// Connected components under the graph stencil, each sorted by id;
    /// components are ordered by size (largest first), ties by smallest id.
    pub fn components(&self) -> Vec<Vec<u32>> {
        let mut label = vec![u32::MAX; self.len()];
        let mut comps: Vec<Vec<u32>> = Vec::new();
        let mut queue = VecDeque::new();
        for start in 0..self.len() as u32 {
            if label[start as usize] != u32::MAX {
                continue;
            }
            let c = comps.len() as u32;
            let mut members = vec![start];
            label[start as usize] = c;
            queue.push_back(start);
            while let Some(u) = queue.pop_front() {
                self.for_each_neighbor(u, |v, _| {
                    if label[v as usize] == u32::MAX {
                        label[v as usize] = c;
                        members.push(v);
                        queue.push_back(v);
                    }
                });
            }
            members.sort_unstable();
            comps.push(members);
        }
        comps.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
        comps
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Bounding box of the occupied cells (outer cell faces).
    pub fn bounding_box(&self) -> (Point, Point) {
        let mut lo = [0.0; 3];
        let mut hi = [0.0; 3];
        for a in 0..self.dim {
            lo[a] = self.lo[a] as f64 * self.spacing;
            hi[a] = (self.lo[a] as f64 + self.extent[a] as f64) * self.spacing;
        }
        (
            Point { coords: lo, dim: self.dim },
            Point { coords: hi, dim: self.dim },
        )
    }

    /// Snaps points to occupied cell ids (deduplicated, input order kept).
    pub fn snap_points(&self, pts: &[Point]) -> Result<Vec<u32>> {
        let mut out: Vec<u32> = Vec::with_capacity(pts.len());
        let mut seen = HashMap::new();
        for p in pts {
            let id = self
                .locate(p)
                .ok_or_else(|| GeometryError::NotContained(format!("{:?}", p.coords())))?;
            if seen.insert(id, ()).is_none() {
                out.push(id);
            }
        }
        Ok(out)
    }
}

#[inline]
fn offset_key(k: &CellKey, o: &[i32; 3]) -> CellKey {
    [k[0] + o[0], k[1] + o[1], k[2] + o[2]]
}

#[inline]
pub fn key_center(k: &CellKey, dim: usize, h: f64) -> Point {
    let mut c = [0.0; 3];
    for a in 0..dim {
        c[a] = (k[a] as f64 + 0.5) * h;
    }
    Point { coords: c, dim }
}

#[inline]
pub fn point_key(p: &Point, h: f64) -> CellKey {
    let mut k = [0i32; 3];
    for a in 0..p.dim() {
        k[a] = (p.get(a) / h).floor() as i32;
    }
    k
}

/// A region of R^n given by a membership predicate and a bounding box.
pub trait Region: Sync {
    fn dim(&self) -> usize;
    fn contains(&self, p: &Point) -> bool;
    fn bounding_box(&self) -> (Point, Point);
}

/// Spherical shell `A(x0, r1, r2) = { r1 < |x - x0| < r2 }`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Annulus {
    center: Point,
    r_inner: f64,
    r_outer: f64,
}

impl Annulus {
    pub fn new(center: Point, r_inner: f64, r_outer: f64) -> Result<Self> {
        if !(r_inner > 0.0 && r_inner < r_outer && r_outer.is_finite()) {
            return Err(GeometryError::InvalidAnnulus { r_inner, r_outer });
        }
        check_dim(center.dim())?;
        Ok(Self { center, r_inner, r_outer })
    }

    pub fn center(&self) -> Point {
        self.center
    }

    pub fn r_inner(&self) -> f64 {
        self.r_inner
    }

    pub fn r_outer(&self) -> f64 {
        self.r_outer
    }

    pub fn contains(&self, p: &Point) -> bool {
        let d = p.dist(&self.center);
        d > self.r_inner && d < self.r_outer
    }

    /// Lebesgue measure of the shell.
    pub fn measure(&self) -> f64 {
        let n = self.center.dim() as i32;
        ball_volume(self.center.dim()) * (self.r_outer.powi(n) - self.r_inner.powi(n))
    }
}

/// Volume of the unit ball in R^n (n = 2, 3).
pub fn ball_volume(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        2 => PI,
        3 => 4.0 * PI / 3.0,
        _ => f64::NAN,
    }
}

/// Surface area `omega_{n-1}` of the unit sphere in R^n (n = 2, 3).
pub fn sphere_area(n: usize) -> f64 {
    use std::f64::consts::PI;
    match n {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => f64::NAN,
    }
}

/// Built-in domain shapes.
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Ball { center: Point, radius: f64 },
    Box { lo: Point, hi: Point },
    Annulus(Annulus),
    /// `box ∩ { x : <x - point, normal> > 0 }`
    HalfPlaneClipped { lo: Point, hi: Point, point: Point, normal: Point },
    /// Simple polygon in the plane.
    Polygon(Vec<Point>),
    /// Box minus the slab of half-width `half_width` around the segment `a`–`b`.
    SlitBox { lo: Point, hi: Point, a: Point, b: Point, half_width: f64 },
}

impl Shape {
    pub fn unit_square() -> Self {
        Shape::Box { lo: Point::new2(0.0, 0.0), hi: Point::new2(1.0, 1.0) }
    }

    pub fn disk(center: Point, radius: f64) -> Self {
        Shape::Ball { center, radius }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(GeometryError::InvalidShape(m.to_string()));
        match self {
            Shape::Ball { center, radius } => {
                check_dim(center.dim())?;
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("ball radius must be positive");
                }
            }
            Shape::Box { lo, hi } | Shape::HalfPlaneClipped { lo, hi, .. } | Shape::SlitBox { lo, hi, .. } => {
                check_dim(lo.dim())?;
                if lo.dim() != hi.dim() {
                    return Err(GeometryError::DimensionMismatch { expected: lo.dim(), got: hi.dim() });
                }
                if lo.coords().iter().zip(hi.coords()).any(|(a, b)| a >= b) {
                    return bad("box requires lo < hi on every axis");
                }
                if let Shape::HalfPlaneClipped { normal, .. } = self {
                    if normal.norm() == 0.0 {
                        return bad("half-plane normal must be nonzero");
                    }
                }
            }
            Shape::Annulus(a) => {
                Annulus::new(a.center, a.r_inner, a.r_outer)?;
            }
            Shape::Polygon(v) => {
                if v.len() < 3 || v.iter().any(|p| p.dim() != 2) {
                    return bad("polygon needs at least 3 planar vertices");
                }
            }
        }
        Ok(())
    }
}

impl Region for Shape {
    fn dim(&self) -> usize {
        match self {
            Shape::Ball { center, .. } => center.dim(),
            Shape::Box { lo, .. } | Shape::HalfPlaneClipped { lo, .. } | Shape::SlitBox { lo, .. } => lo.dim(),
            Shape::Annulus(a) => a.center.dim(),
            Shape::Polygon(_) => 2,
        }
    }

    fn contains(&self, p: &Point) -> bool {
        match self {
            Shape::Ball { center, radius } => p.dist_sq(center) < radius * radius,
            Shape::Box { lo, hi } => in_box(p, lo, hi),
            Shape::Annulus(a) => a.contains(p),
            Shape::HalfPlaneClipped { lo, hi, point, normal } => {
                let s: f64 = p.sub(point).coords().iter().zip(normal.coords()).map(|(a, b)| a * b).sum();
                in_box(p, lo, hi) && s > 0.0
            }
            Shape::Polygon(v) => point_in_polygon(p, v),
            Shape::SlitBox { lo, hi, a, b, half_width } => {
                in_box(p, lo, hi) && point_segment_distance(p, a, b) > *half_width
            }
        }
    }

    fn bounding_box(&self) -> (Point, Point) {
        match self {
            Shape::Ball { center, radius } => {
                let r = Point::from_slice(&vec![*radius; center.dim()]).expect("finite");
                (center.sub(&r), center.add(&r))
            }
            Shape::Box { lo, hi } | Shape::HalfPlaneClipped { lo, hi, .. } | Shape::SlitBox { lo, hi, .. } => (*lo, *hi),
            Shape::Annulus(a) => Shape::Ball { center: a.center, radius: a.r_outer }.bounding_box(),
            Shape::Polygon(v) => {
                let (mut lo, mut hi) = (v[0], v[0]);
                for p in v {
                    for k in 0..2 {
                        lo.coords[k] = lo.coords[k].min(p.coords[k]);
                        hi.coords[k] = hi.coords[k].max(p.coords[k]);
                    }
                }
                (lo, hi)
            }
        }
    }
}

fn in_box(p: &Point, lo: &Point, hi: &Point) -> bool {
    (0..p.dim()).all(|k| p.get(k) > lo.get(k) && p.get(k) < hi.get(k))
}

fn point_in_polygon(p: &Point, v: &[Point]) -> bool {
    let (x, y) = (p.get(0), p.get(1));
    let mut inside = false;
    let mut j = v.len() - 1;
    for i in 0..v.len() {
        let (xi, yi) = (v[i].get(0), v[i].get(1));
        let (xj, yj) = (v[j].get(0), v[j].get(1));
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn point_segment_distance(p: &Point, a: &Point, b: &Point) -> f64 {
    let ab = b.sub(a);
    let l2 = ab.coords().iter().map(|v| v * v).sum::<f64>();
    if l2 == 0.0 {
        return p.dist(a);
    }
    let t: f64 = p.sub(a).coords().iter().zip(ab.coords()).map(|(u, v)| u * v).sum::<f64>() / l2;
    p.dist(&a.lerp(b, t.clamp(0.0, 1.0)))
}

/// Rasterizes `region` on the lattice of spacing `1/resolution` and keeps
/// cells whose centers satisfy the predicate, without connectivity filtering.
pub fn rasterize_cells(region: &dyn Region, resolution: f64) -> Result<DiscreteDomain> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(GeometryError::InvalidResolution(resolution));
    }
    let dim = region.dim();
    check_dim(dim)?;
    let h = 1.0 / resolution;
    let (lo, hi) = region.bounding_box();
    let mut klo = [0i32; 3];
    let mut khi = [0i32; 3];
    for a in 0..dim {
        klo[a] = (lo.get(a) / h).floor() as i32 - 1;
        khi[a] = (hi.get(a) / h).ceil() as i32 + 1;
    }
    let mut keys = Vec::new();
    for i in klo[0]..=khi[0] {
        for j in klo[1]..=khi[1] {
            for k in klo[2]..=khi[2] {
                let key = [i, j, k];
                if region.contains(&key_center(&key, dim, h)) {
                    keys.push(key);
                }
            }
        }
    }
    DiscreteDomain::from_cells(dim, h, keys)
}

/// Rasterizes `region` by cell-center membership. If the occupied cells split
/// into several components, the largest is kept and
/// [`DiscreteDomain::was_trimmed`] is set.
pub fn rasterize(region: &dyn Region, resolution: f64) -> Result<DiscreteDomain> {
    let full = rasterize_cells(region, resolution)?;
    let comps = full.components();
    if comps.len() == 1 {
        return Ok(full);
    }
    let keep: Vec<CellKey> = comps[0].iter().map(|&i| full.key(i)).collect();
    let mut d = DiscreteDomain::from_cells(full.dim, full.spacing, keep)?;
    d.trimmed = true;
    Ok(d)
}

/// A nondegenerate continuum represented by a polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Continuum {
    pub points: Vec<Point>,
    pub label: String,
}

impl Continuum {
    pub fn new(label: impl Into<String>, points: Vec<Point>) -> Result<Self> {
        let label = label.into();
        if points.is_empty() {
            return Err(GeometryError::DegenerateContinuum(label));
        }
        let dim = points[0].dim();
        check_dim(dim)?;
        if let Some(p) = points.iter().find(|p| p.dim() != dim) {
            return Err(GeometryError::DimensionMismatch { expected: dim, got: p.dim() });
        }
        let c = Self { points, label };
        if c.diameter() == 0.0 {
            return Err(GeometryError::DegenerateContinuum(c.label));
        }
        Ok(c)
    }

    /// Straight segment sampled with vertex spacing at most `step`.
    pub fn segment(label: impl Into<String>, a: Point, b: Point, step: f64) -> Result<Self> {
        let n = ((a.dist(&b) / step).ceil() as usize).max(1);
        let pts = (0..=n).map(|i| a.lerp(&b, i as f64 / n as f64)).collect();
        Self::new(label, pts)
    }

    /// Polyline through `vertices`, resampled so consecutive points are at
    /// most `step` apart.
    pub fn polyline(label: impl Into<String>, vertices: &[Point], step: f64) -> Result<Self> {
        let mut pts = vec![*vertices.first().ok_or(GeometryError::EmptyDomain)?];
        for w in vertices.windows(2) {
            let n = ((w[0].dist(&w[1]) / step).ceil() as usize).max(1);
            pts.extend((1..=n).map(|i| w[0].lerp(&w[1], i as f64 / n as f64)));
        }
        Self::new(label, pts)
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    /// Diameter over the vertex set.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for (i, p) in self.points.iter().enumerate() {
            for q in &self.points[i + 1..] {
                best = best.max(p.dist_sq(q));
            }
        }
        best.sqrt()
    }

    /// Distance between vertex sets.
    pub fn distance_to(&self, other: &Continuum) -> f64 {
        let mut best = f64::INFINITY;
        for p in &self.points {
            for q in &other.points {
                best = best.min(p.dist_sq(q));
            }
        }
        best.sqrt()
    }

    pub fn scaled(&self, s: f64) -> Continuum {
        Continuum {
            points: self.points.iter().map(|p| p.scale(s)).collect(),
            label: self.label.clone(),
        }
    }

    pub fn translated(&self, v: &Point) -> Continuum {
        Continuum {
            points: self.points.iter().map(|p| p.add(v)).collect(),
            label: self.label.clone(),
        }
    }
}

/// `dist(E, F) / min(diam E, diam F)` over polyline vertices.
pub fn separation_ratio(e: &Continuum, f: &Continuum) -> Result<f64> {
    let de = e.diameter();
    let df = f.diameter();
    if de == 0.0 {
        return Err(GeometryError::DegenerateContinuum(e.label.clone()));
    }
    if df == 0.0 {
        return Err(GeometryError::DegenerateContinuum(f.label.clone()));
    }
    let dist = e.distance_to(f);
    if dist == 0.0 {
        return Err(GeometryError::Overlap);
    }
    Ok(dist / de.min(df))
}

/// Minimum center distance from the points of `k` to the boundary cells of
/// `domain`; `+inf` when the domain has no boundary.
pub fn distance_to_boundary(k: &[Point], domain: &DiscreteDomain) -> Result<f64> {
    for p in k {
        if !domain.contains_point(p) {
            return Err(GeometryError::NotContained(format!("{:?}", p.coords())));
        }
    }
    let b = domain.boundary_cells();
    if b.is_empty() {
        return Ok(f64::INFINITY);
    }
    let centers: Vec<Point> = b.iter().map(|&i| domain.center(i)).collect();
    let mut best = f64::INFINITY;
    for p in k {
        for c in &centers {
            best = best.min(p.dist_sq(c));
        }
    }
    Ok(best.sqrt())
}

/// Cell-set variant of [`distance_to_boundary`].
pub fn cells_distance_to_boundary(cells: &[u32], domain: &DiscreteDomain) -> Result<f64> {
    let pts: Vec<Point> = cells.iter().map(|&i| domain.center(i)).collect();
    distance_to_boundary(&pts, domain)
}


#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::SQRT_2;
    use std::f64::consts::{E, PI};

    #[test]
    fn unit_square_res4_counts() {
        let d = rasterize(&Shape::unit_square(), 4.0).unwrap();
        assert_eq!(d.len(), 16);
        assert_eq!(d.boundary_cells().len(), 12);
        assert!(!d.was_trimmed());
        assert_eq!(d.spacing(), 0.25);
    }

    #[test]
    fn unit_disk_res64_matches_enumeration() {
        let d = rasterize(&Shape::disk(Point::origin(2), 1.0), 64.0).unwrap();
        // direct enumeration of lattice centers inside the disk
        let h = 1.0 / 64.0;
        let mut count = 0;
        for i in -70..70 {
            for j in -70..70 {
                let (x, y) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h);
                if x * x + y * y < 1.0 {
                    count += 1;
                }
            }
        }
        assert_eq!(d.len(), count);
        let area = PI * 4096.0;
        assert!((d.len() as f64 - area).abs() / area < 0.02);
        assert!(d.is_connected());
    }

    #[test]
    fn annulus_res32_connected() {
        let a = Annulus::new(Point::origin(2), 1.0, 2.0).unwrap();
        let d = rasterize(&Shape::Annulus(a), 32.0).unwrap();
        assert!(d.is_connected());
        let expect = 3.0 * PI * 1024.0;
        assert!((d.len() as f64 - expect).abs() / expect < 0.03);
        for i in 0..d.len() as u32 {
            assert!(a.contains(&d.center(i)));
        }
    }

    #[test]
    fn empty_and_disconnected() {
        let tiny = Shape::disk(Point::new2(0.5, 0.5), 1e-6);
        assert_eq!(rasterize(&tiny, 4.0).unwrap_err(), GeometryError::EmptyDomain);
        // two squares joined by nothing
        let poly = Shape::Polygon(vec![
            Point::new2(0.0, 0.0),
            Point::new2(3.0, 0.0),
            Point::new2(3.0, 1.0),
            Point::new2(2.0, 1.0),
            Point::new2(2.0, 0.05),
            Point::new2(1.0, 0.05),
            Point::new2(1.0, 1.0),
            Point::new2(0.0, 1.0),
        ]);
        let d = rasterize(&poly, 4.0).unwrap();
        assert!(d.was_trimmed());
        assert!(d.is_connected());
        assert_eq!(d.len(), 16);
    }

    #[test]
    fn separation_ratio_examples() {
        let e = Continuum::segment("E", Point::new2(0.0, 0.0), Point::new2(1.0, 0.0), 0.01).unwrap();
        let f = Continuum::segment("F", Point::new2(2.0, 0.0), Point::new2(3.0, 0.0), 0.01).unwrap();
        assert!((separation_ratio(&e, &f).unwrap() - 1.0).abs() < 1e-12);
        let g = Continuum::segment("G", Point::new2(0.0, 0.1), Point::new2(1.0, 0.1), 0.01).unwrap();
        assert!((separation_ratio(&e, &g).unwrap() - 0.1).abs() < 1e-12);
        let far = f.translated(&Point::new2(10.0, 0.0));
        assert!((separation_ratio(&e, &far).unwrap() - 11.0).abs() < 1e-9);
        assert_eq!(separation_ratio(&e, &e), Err(GeometryError::Overlap));
        assert!(matches!(
            Continuum::new("p", vec![Point::new2(1.0, 1.0); 2]),
            Err(GeometryError::DegenerateContinuum(_))
        ));
    }

    #[test]
    fn distance_to_boundary_examples() {
        let d = rasterize(&Shape::unit_square(), 8.0).unwrap();
        // brute force over cell pairs, boundary = fewer than four face neighbours
        let n = 8i32;
        let h = 0.125;
        let mut oracle = f64::INFINITY;
        for (i, j) in [(3, 3), (3, 4), (4, 3), (4, 4)] {
            for a in 0..n {
                for b in 0..n {
                    if a == 0 || b == 0 || a == n - 1 || b == n - 1 {
                        let dx = (a - i) as f64 * h;
                        let dy = (b - j) as f64 * h;
                        oracle = oracle.min((dx * dx + dy * dy).sqrt());
                    }
                }
            }
        }
        let k: Vec<Point> = [(3.5, 3.5), (3.5, 4.5), (4.5, 3.5), (4.5, 4.5)]
            .iter()
            .map(|&(x, y)| Point::new2(x * h, y * h))
            .collect();
        let got = distance_to_boundary(&k, &d).unwrap();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 0.375).abs() < 1e-12);
        let b = d.boundary_cells()[0];
        assert_eq!(cells_distance_to_boundary(&[b], &d).unwrap(), 0.0);
        let torus = d.clone().without_boundary();
        assert_eq!(distance_to_boundary(&k, &torus).unwrap(), f64::INFINITY);
        assert!(matches!(
            distance_to_boundary(&[Point::new2(2.0, 2.0)], &d),
            Err(GeometryError::NotContained(_))
        ));
    }

    #[test]
    fn annulus_invariant() {
        assert!(Annulus::new(Point::origin(2), 2.0, 1.0).is_err());
        assert!(Annulus::new(Point::origin(2), 0.0, 1.0).is_err());
        let a = Annulus::new(Point::origin(2), 1.0, E).unwrap();
        assert!((a.measure() - PI * (E * E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn stencil_sizes() {
        assert_eq!(graph_stencil(2).len(), 16);
        assert_eq!(graph_stencil(3).len(), 98);
        assert!(graph_stencil(2).iter().any(|s| (s.length - SQRT_2).abs() < 1e-15));
        let knight = graph_stencil(2).iter().find(|s| s.offset == [1, 2, 0]).unwrap();
        assert_eq!(knight.via, vec![[0, 1, 0], [1, 1, 0]]);
        let long = graph_stencil(3).iter().find(|s| s.offset == [1, 1, 2]).unwrap();
        assert_eq!(long.via.len(), 4);
    }
}
