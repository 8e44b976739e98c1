//! Curves on the grid graph and the curve families whose moduli we compute.
//!
//! A family is represented implicitly by its domain and two endpoint cell
//! sets; the ρ-shortest member is found by a multi-source Dijkstra search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geometry::{Annulus, Continuum, DiscreteDomain, GeometryError, Point};
use crate::modulus::DensityField;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("a curve needs at least two vertices")]
    TooShort,
    #[error("vertices {0} and {1} are not grid neighbors")]
    NotAdjacent(u32, u32),
    #[error("vertex {0} is not a cell of the domain")]
    OutsideDomain(u32),
    #[error("no curve of the family exists (sink unreachable from source)")]
    NoCurve,
    #[error("crossing radii must satisfy 0 < eps1 < eps2 (got {0}, {1})")]
    BadRadii(f64, f64),
    #[error("minorization target must be an annulus family")]
    NotAnnulusTarget,
    #[error("source and sink sets intersect")]
    Overlap,
    #[error("density field belongs to a different domain")]
    DomainMismatch,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T, E = CurveError> = std::result::Result<T, E>;

/// A path in the grid graph of a [`DiscreteDomain`], stored as cell ids.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Curve {
    vertices: Vec<u32>,
}

impl Curve {
    pub fn new(domain: &DiscreteDomain, vertices: Vec<u32>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(CurveError::TooShort);
        }
        if let Some(&v) = vertices.iter().find(|&&v| v as usize >= domain.len()) {
            return Err(CurveError::OutsideDomain(v));
        }
        for w in vertices.windows(2) {
            if domain.edge_length(w[0], w[1]).is_none() {
                return Err(CurveError::NotAdjacent(w[0], w[1]));
            }
        }
        Ok(Self { vertices })
    }

    pub(crate) fn from_trusted(vertices: Vec<u32>) -> Self {
        Self { vertices }
    }

    /// Snaps a polyline to the grid, bridging gaps by straight-line resampling.
    /// Runs of snapped cells are shortcut by the longest available stencil
    /// edge, so straight lines are not turned into staircases.
    pub fn from_polyline(domain: &DiscreteDomain, pts: &[Point]) -> Result<Self> {
        let step = domain.spacing() / 4.0;
        let mut ids: Vec<u32> = Vec::new();
        let push = |p: &Point, ids: &mut Vec<u32>| -> Result<()> {
            let id = domain
                .locate(p)
                .ok_or_else(|| GeometryError::NotContained(format!("{:?}", p.coords())))?;
            if ids.last() != Some(&id) {
                ids.push(id);
            }
            Ok(())
        };
        let first = pts.first().ok_or(CurveError::TooShort)?;
        push(first, &mut ids)?;
        for w in pts.windows(2) {
            let n = ((w[0].dist(&w[1]) / step).ceil() as usize).max(1);
            for i in 1..=n {
                push(&w[0].lerp(&w[1], i as f64 / n as f64), &mut ids)?;
            }
        }
        let mut out = vec![ids[0]];
        let mut i = 0;
        while i + 1 < ids.len() {
            let reach = (i + 8).min(ids.len() - 1);
            let j = (i + 1..=reach).rev().find(|&j| domain.edge_length(ids[i], ids[j]).is_some()).unwrap_or(i + 1);
            out.push(ids[j]);
            i = j;
        }
        Self::new(domain, out)
    }

    pub fn vertices(&self) -> &[u32] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn first(&self) -> u32 {
        self.vertices[0]
    }

    pub fn last(&self) -> u32 {
        *self.vertices.last().expect("curve has vertices")
    }

    /// Euclidean length of the polyline through the cell centers.
    pub fn euclidean_length(&self, domain: &DiscreteDomain) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| domain.edge_length(w[0], w[1]).unwrap_or_else(|| domain.center(w[0]).dist(&domain.center(w[1]))))
            .sum()
    }

    /// Concatenation; `other` must start at this curve's last vertex.
    pub fn concat(&self, other: &Curve) -> Option<Curve> {
        (self.last() == other.first()).then(|| {
            let mut v = self.vertices.clone();
            v.extend_from_slice(&other.vertices[1..]);
            Curve { vertices: v }
        })
    }

    pub fn subcurve(&self, from: usize, to: usize) -> Option<Curve> {
        (to > from && to < self.vertices.len()).then(|| Curve {
            vertices: self.vertices[from..=to].to_vec(),
        })
    }

    pub fn points(&self, domain: &DiscreteDomain) -> Vec<Point> {
        self.vertices.iter().map(|&v| domain.center(v)).collect()
    }
}

/// Discrete analogue of the line integral of ρ along `c`: every edge
/// contributes its length times the mean density of its endpoint cells.
pub fn rho_length(c: &Curve, rho: &DensityField) -> f64 {
    path_rho_length(rho.domain(), c.vertices(), rho.values())
}

pub(crate) fn path_rho_length(domain: &DiscreteDomain, v: &[u32], rho: &[f64]) -> f64 {
    v.windows(2)
        .map(|w| {
            let len = domain.edge_length(w[0], w[1]).unwrap_or(0.0);
            len * 0.5 * (rho[w[0] as usize] + rho[w[1] as usize])
        })
        .sum()
}

/// What a family joins.
#[derive(Clone, Debug, PartialEq)]
pub enum FamilyKind {
    /// Curves joining two continua `E`, `F` inside the family domain.
    Joining { e_label: String, f_label: String },
    /// Curves joining the two boundary spheres of an annulus inside it.
    Annulus(Annulus),
}

/// A curve family `Γ(E, F, D)`: all grid curves in `domain` from a source
/// cell to a sink cell, optionally with sampled explicit members.
#[derive(Clone, Debug)]
pub struct CurveFamily {
    domain: Arc<DiscreteDomain>,
    kind: FamilyKind,
    source: Vec<u32>,
    sink: Vec<u32>,
    explicit: Vec<Curve>,
}

impl CurveFamily {
    pub fn from_parts(domain: Arc<DiscreteDomain>, kind: FamilyKind, mut source: Vec<u32>, mut sink: Vec<u32>) -> Result<Self> {
        source.sort_unstable();
        source.dedup();
        sink.sort_unstable();
        sink.dedup();
        for &v in source.iter().chain(&sink) {
            if v as usize >= domain.len() {
                return Err(CurveError::OutsideDomain(v));
            }
        }
        let overlap = {
            let (mut i, mut j) = (0, 0);
            let mut hit = false;
            while i < source.len() && j < sink.len() {
                match source[i].cmp(&sink[j]) {
                    Ordering::Less => i += 1,
                    Ordering::Greater => j += 1,
                    Ordering::Equal => {
                        hit = true;
                        break;
                    }
                }
            }
            hit
        };
        if overlap {
            return Err(CurveError::Overlap);
        }
        Ok(Self { domain, kind, source, sink, explicit: Vec::new() })
    }

    /// `Γ(E, F, D)` with `E`, `F` snapped to the cells containing their vertices.
    pub fn joining(domain: Arc<DiscreteDomain>, e: &Continuum, f: &Continuum) -> Result<Self> {
        let src = domain.snap_points(&e.points)?;
        let snk = domain.snap_points(&f.points)?;
        let kind = FamilyKind::Joining { e_label: e.label.clone(), f_label: f.label.clone() };
        Self::from_parts(domain, kind, src, snk)
    }

    /// `Γ(S(x0, r1), S(x0, r2), A(x0, r1, r2))` clipped to `domain`.
    ///
    /// The family domain keeps the cells of `domain` whose centers lie within
    /// `h/2` of the closed shell; the spheres are the bands of cells whose
    /// centers lie within `h/2` of the exact radius.
    pub fn annulus(domain: &DiscreteDomain, ann: &Annulus) -> Result<Self> {
        let half = 0.5 * domain.spacing();
        let (r1, r2, c) = (ann.r_inner(), ann.r_outer(), ann.center());
        let sub = domain.restrict(|_, p| {
            let d = p.dist(&c);
            d >= r1 - half && d <= r2 + half
        })?;
        let mut src = Vec::new();
        let mut snk = Vec::new();
        for i in 0..sub.len() as u32 {
            let d = sub.center(i).dist(&c);
            if (d - r1).abs() <= half {
                src.push(i);
            } else if (d - r2).abs() <= half {
                snk.push(i);
            }
        }
        Self::from_parts(Arc::new(sub), FamilyKind::Annulus(*ann), src, snk)
    }

    pub fn with_explicit(mut self, curves: Vec<Curve>) -> Result<Self> {
        for c in &curves {
            if self.source.binary_search(&c.first()).is_err() || self.sink.binary_search(&c.last()).is_err() {
                return Err(CurveError::OutsideDomain(c.first()));
            }
            Curve::new(&self.domain, c.vertices.clone())?;
        }
        self.explicit = curves;
        Ok(self)
    }

    pub fn domain(&self) -> &DiscreteDomain {
        &self.domain
    }

    pub fn domain_arc(&self) -> &Arc<DiscreteDomain> {
        &self.domain
    }

    pub fn kind(&self) -> &FamilyKind {
        &self.kind
    }

    pub fn source(&self) -> &[u32] {
        &self.source
    }

    pub fn sink(&self) -> &[u32] {
        &self.sink
    }

    pub fn explicit_curves(&self) -> &[Curve] {
        &self.explicit
    }

    pub fn is_sink(&self, v: u32) -> bool {
        self.sink.binary_search(&v).is_ok()
    }

    pub fn is_source(&self, v: u32) -> bool {
        self.source.binary_search(&v).is_ok()
    }

    /// Whether `c` is a member: starts in the source set, ends in the sink set.
    pub fn contains_curve(&self, c: &Curve) -> bool {
        self.is_source(c.first()) && self.is_sink(c.last())
    }
}

const NONE: u32 = u32::MAX;

/// Multi-source shortest-path tree under a cell density.
#[derive(Clone, Debug)]
pub struct ShortestPathTree {
    pub dist: Vec<f64>,
    pub hops: Vec<u32>,
    pub pred: Vec<u32>,
    /// Settled sinks in settle order `(dist, hops, id)`.
    pub settled_sinks: Vec<u32>,
}

impl ShortestPathTree {
    /// Path from a source to `v`, source first.
    pub fn path_to(&self, v: u32) -> Vec<u32> {
        let mut out = vec![v];
        let mut u = v;
        while self.pred[u as usize] != NONE {
            u = self.pred[u as usize];
            out.push(u);
        }
        out.reverse();
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
struct HeapEntry {
    dist: f64,
    hops: u32,
    id: u32,
}

impl Eq for HeapEntry {}

impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.hops.cmp(&self.hops))
            .then(other.id.cmp(&self.id))
    }
}

impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Dijkstra from the whole source set. Edge weight is
/// `len * (rho[a] + rho[b]) / 2`. Sinks are terminal: a curve ends at the
/// first sink it reaches. Ties are broken by fewer edges, then by the
/// smaller predecessor id, which makes the tree deterministic.
///
/// The search stops once the first sink is settled and every remaining
/// label is at least `settle_below`.
pub fn shortest_path_tree(family: &CurveFamily, rho: &[f64], settle_below: f64) -> ShortestPathTree {
    let domain = family.domain();
    let adj = domain.adjacency();
    let half: Vec<f64> = adj.lengths.iter().map(|l| 0.5 * l).collect();
    let n = domain.len();
    let mut dist = vec![f64::INFINITY; n];
    let mut hops = vec![u32::MAX; n];
    let mut pred = vec![NONE; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::with_capacity(n / 4 + 16);
    for &s in family.source() {
        dist[s as usize] = 0.0;
        hops[s as usize] = 0;
        heap.push(HeapEntry { dist: 0.0, hops: 0, id: s });
    }
    let mut settled_sinks = Vec::new();
    while let Some(HeapEntry { dist: d, hops: k, id: u }) = heap.pop() {
        let ui = u as usize;
        if done[ui] || d > dist[ui] || (d == dist[ui] && k > hops[ui]) {
            continue;
        }
        if !settled_sinks.is_empty() && d >= settle_below {
            break;
        }
        done[ui] = true;
        if family.is_sink(u) {
            settled_sinks.push(u);
            continue;
        }
        let ru = rho[ui];
        let nk = k + 1;
        for j in adj.range(u) {
            let v = adj.targets[j];
            let vi = v as usize;
            if done[vi] {
                continue;
            }
            let nd = d + half[adj.kinds[j] as usize] * (ru + rho[vi]);
            let better = match nd.total_cmp(&dist[vi]) {
                Ordering::Less => true,
                Ordering::Equal => nk < hops[vi] || (nk == hops[vi] && u < pred[vi]),
                Ordering::Greater => false,
            };
            if better {
                dist[vi] = nd;
                hops[vi] = nk;
                pred[vi] = u;
                heap.push(HeapEntry { dist: nd, hops: nk, id: v });
            }
        }
    }
    ShortestPathTree { dist, hops, pred, settled_sinks }
}

/// The ρ-shortest member of `family` and its ρ-length.
pub fn shortest_curve(family: &CurveFamily, rho: &DensityField) -> Result<(Curve, f64)> {
    if !std::ptr::eq(rho.domain(), family.domain()) && rho.domain().len() != family.domain().len() {
        return Err(CurveError::DomainMismatch);
    }
    let tree = shortest_path_tree(family, rho.values(), f64::NEG_INFINITY);
    let best = *tree.settled_sinks.first().ok_or(CurveError::NoCurve)?;
    let path = tree.path_to(best);
    if path.len() < 2 {
        return Err(CurveError::Overlap);
    }
    Ok((Curve::from_trusted(path), tree.dist[best as usize]))
}

/// Discrete crossing of the shell `eps1 < |x - z| < eps2` by `c`.
///
/// Finds the first vertex at distance `>= eps2 - h` from `z` that comes after
/// some vertex at distance `<= eps1 + h`, and returns the subcurve starting at
/// the last such inner vertex before it. `Ok(None)` means the curve does not
/// cross.
pub fn crossing_decomposition(
    c: &Curve,
    domain: &DiscreteDomain,
    z: &Point,
    eps1: f64,
    eps2: f64,
) -> Result<Option<Curve>> {
    if !(eps1 > 0.0 && eps1 < eps2) {
        return Err(CurveError::BadRadii(eps1, eps2));
    }
    let h = domain.spacing();
    let mut last_inner: Option<usize> = None;
    for (i, &v) in c.vertices().iter().enumerate() {
        let d = domain.center(v).dist(z);
        if d <= eps1 + h {
            last_inner = Some(i);
        } else if d >= eps2 - h {
            if let Some(start) = last_inner {
                return Ok(c.subcurve(start, i));
            }
        }
    }
    Ok(None)
}

/// Outcome of a sampled minorization check `Γ1 > Γ2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MinorizationReport {
    pub holds_on_sample: bool,
    pub sampled: usize,
    /// Indices of sampled curves without a crossing subcurve.
    pub witnesses: Vec<usize>,
}

/// Sample members of `family`: explicit curves first, then shortest curves
/// under seeded random densities in `[1, 3)`.
pub fn sample_curves(family: &CurveFamily, count: usize, seed: u64) -> Result<Vec<Curve>> {
    let mut out: Vec<Curve> = family.explicit_curves().iter().take(count).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = family.domain().len();
    while out.len() < count {
        let rho: Vec<f64> = (0..n).map(|_| 1.0 + 2.0 * rng.gen::<f64>()).collect();
        let tree = shortest_path_tree(family, &rho, f64::INFINITY);
        if tree.settled_sinks.is_empty() {
            return Err(CurveError::NoCurve);
        }
        // pick a random settled sink so samples spread over the sink set
        let sink = tree.settled_sinks[rng.gen_range(0..tree.settled_sinks.len())];
        let path = tree.path_to(sink);
        if path.len() >= 2 {
            out.push(Curve::from_trusted(path));
        }
    }
    Ok(out)
}

/// Checks on `sample_size` members of `family1` whether each contains a
/// subcurve joining the boundary shells of the annulus family `family2`.
/// This is sample evidence for `Γ1 > Γ2`, not a proof.
pub fn minorizes(family1: &CurveFamily, family2: &CurveFamily, sample_size: usize, seed: u64) -> Result<MinorizationReport> {
    let ann = match family2.kind() {
        FamilyKind::Annulus(a) => *a,
        _ => return Err(CurveError::NotAnnulusTarget),
    };
    let curves = sample_curves(family1, sample_size, seed)?;
    minorizes_curves(&curves, family1.domain(), &ann)
}

/// [`minorizes`] over an explicit list of curves of `domain`.
pub fn minorizes_curves(curves: &[Curve], domain: &DiscreteDomain, ann: &Annulus) -> Result<MinorizationReport> {
    let mut witnesses = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        if crossing_decomposition(c, domain, &ann.center(), ann.r_inner(), ann.r_outer())?.is_none() {
            witnesses.push(i);
        }
    }
    Ok(MinorizationReport {
        holds_on_sample: witnesses.is_empty(),
        sampled: curves.len(),
        witnesses,
    })
}

/// Writes one row per vertex: `index,x,y[,z]`.
pub fn write_curve_csv<W: Write>(w: W, domain: &DiscreteDomain, c: &Curve) -> std::io::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["index", "x", "y"];
    if domain.dim() == 3 {
        header.push("z");
    }
    out.write_record(&header)?;
    for (i, &v) in c.vertices().iter().enumerate() {
        let p = domain.center(v);
        let mut row = vec![i.to_string()];
        row.extend(p.coords().iter().map(|x| format!("{x:.9}")));
        out.write_record(&row)?;
    }
    out.flush()
}
