//! Sequences of zoo homeomorphisms converging locally uniformly, the
//! persistence of a frozen distance bound in the limit, and grid probes of
//! discreteness and injectivity.
//!
//! The probes are falsifiers: a reported witness is exact, a pass only holds
//! up to the grid spacing `h` recorded in every report.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{verify_pairs, BoundParams, BoundsError, VerificationReport};
use crate::geometry::{point_key, DiscreteDomain, Point};
use crate::parallel::{self, Execution};
use crate::qmaps::{q_of, MappingSpec, PointMap, QmapError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConvergenceError {
    #[error("the sequence has no declared limit")]
    NoDeclaredLimit,
    #[error("invalid sequence: {0}")]
    InvalidSequence(String),
    #[error("member m = {m} fails its own bound: {reason}")]
    MemberFailure { m: usize, reason: String },
    #[error("the probe set is empty")]
    EmptySet,
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Qmap(#[from] QmapError),
}

pub type Result<T, E = ConvergenceError> = std::result::Result<T, E>;

/// Rule producing the `m`-th member, `m ≥ 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SequenceRule {
    /// `radial_stretch(1 + c/m)`.
    RadialStretch { c: f64 },
    /// `x ↦ x/m`.
    Collapse,
    /// The same map for every `m`.
    Constant { map: MappingSpec },
}

/// A declared limit: a zoo map or a constant point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "limit", rename_all = "snake_case")]
pub enum Limit {
    Map { map: MappingSpec },
    Point { at: Vec<f64> },
}

impl PointMap for Limit {
    fn eval(&self, p: &Point) -> Point {
        match self {
            Limit::Map { map } => map.apply(p),
            Limit::Point { at } => Point::from_slice(at).expect("validated limit point"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingSequence {
    pub dim: usize,
    pub rule: SequenceRule,
    pub declared_limit: Option<Limit>,
}

impl MappingSequence {
    /// `radial_stretch(1 + c/m)`, converging to the identity.
    pub fn radial_stretch(dim: usize, c: f64) -> Result<Self> {
        Self::new(dim, SequenceRule::RadialStretch { c }, Some(Limit::Map { map: MappingSpec::identity(dim) }))
    }

    /// `x/m`, converging to the constant map `0`.
    pub fn collapse(dim: usize) -> Result<Self> {
        Self::new(dim, SequenceRule::Collapse, Some(Limit::Point { at: vec![0.0; dim] }))
    }

    pub fn constant(map: MappingSpec) -> Result<Self> {
        let dim = map.dim;
        Self::new(dim, SequenceRule::Constant { map: map.clone() }, Some(Limit::Map { map }))
    }

    pub fn new(dim: usize, rule: SequenceRule, declared_limit: Option<Limit>) -> Result<Self> {
        let s = Self { dim, rule, declared_limit };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ConvergenceError::InvalidSequence(m.to_string()));
        if self.dim != 2 && self.dim != 3 {
            return bad("dimension must be 2 or 3");
        }
        match &self.rule {
            SequenceRule::RadialStretch { c } if !(*c > -1.0 && c.is_finite()) => return bad("radial rule needs c > -1"),
            SequenceRule::Constant { map } => {
                map.validate()?;
                if map.dim != self.dim {
                    return bad("map dimension differs from the sequence");
                }
            }
            _ => {}
        }
        match &self.declared_limit {
            Some(Limit::Map { map }) => {
                map.validate()?;
                if map.dim != self.dim {
                    return bad("limit dimension differs from the sequence");
                }
            }
            Some(Limit::Point { at }) if at.len() != self.dim || at.iter().any(|v| !v.is_finite()) => {
                return bad("limit point has the wrong dimension");
            }
            _ => {}
        }
        Ok(())
    }

    pub fn member(&self, m: usize) -> Result<MappingSpec> {
        if m == 0 {
            return Err(ConvergenceError::InvalidSequence("members are indexed from m = 1".into()));
        }
        let spec = match &self.rule {
            SequenceRule::RadialStretch { c } => MappingSpec::radial_stretch(self.dim, 1.0 + c / m as f64)?,
            SequenceRule::Collapse => MappingSpec::scaling(self.dim, 1.0 / m as f64)?,
            SequenceRule::Constant { map } => map.clone(),
        };
        Ok(spec)
    }

    pub fn limit(&self) -> Result<&Limit> {
        self.declared_limit.as_ref().ok_or(ConvergenceError::NoDeclaredLimit)
    }
}

/// `max |f_m(x) − f(x)|` over the points of `g`.
pub fn local_uniform_gap(seq: &MappingSequence, m: usize, g: &[Point]) -> Result<f64> {
    let limit = seq.limit()?;
    let fm = seq.member(m)?;
    Ok(g.iter().map(|x| fm.apply(x).dist(&limit.eval(x))).fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MemberMargin {
    pub m: usize,
    pub q_l1: f64,
    pub image_boundary_distance: f64,
    pub min_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrozenBoundReport {
    pub members: Vec<MemberMargin>,
    pub limit: VerificationReport,
    pub min_member_ratio: f64,
    /// Limit margin is at least the weakest member margin (up to `tol`).
    pub inherited: bool,
    pub passed: bool,
}

/// Verifies every listed member against the same frozen `params` (the
/// members' `‖Q‖₁` must not exceed `params.q_l1`), then the declared limit
/// on the same pairs.
#[allow(clippy::too_many_arguments)]
pub fn frozen_bound_limit_check(
    seq: &MappingSequence,
    domain: &Arc<DiscreteDomain>,
    k: &[Point],
    params: &BoundParams,
    m_list: &[usize],
    pair_samples: usize,
    seed: u64,
    tol: f64,
    exec: Execution,
) -> Result<FrozenBoundReport> {
    params.validate()?;
    let limit = seq.limit()?;
    if k.is_empty() || m_list.is_empty() {
        return Err(ConvergenceError::EmptySet);
    }
    let outcomes = parallel::map(exec, m_list, |&m| -> Result<std::result::Result<MemberMargin, String>> {
        let fm = seq.member(m)?;
        let q_l1 = q_of(&fm, domain.clone())?.l1_norm();
        if q_l1 > params.q_l1 * (1.0 + 1e-9) {
            return Ok(Err(format!("‖Q‖₁ = {q_l1} exceeds the frozen {}", params.q_l1)));
        }
        match verify_pairs(&fm.name(), &fm, domain, k, params, pair_samples, seed, tol) {
            Ok(r) if r.passed => Ok(Ok(MemberMargin { m, q_l1, image_boundary_distance: r.image_boundary_distance, min_ratio: r.min_ratio })),
            Ok(r) => Ok(Err(format!("{} witnesses, min ratio {}", r.failures.len(), r.min_ratio))),
            Err(e @ BoundsError::ClassViolation { .. }) => Ok(Err(e.to_string())),
            Err(e) => Err(e.into()),
        }
    });
    let mut members = Vec::with_capacity(m_list.len());
    for (&m, outcome) in m_list.iter().zip(outcomes) {
        match outcome? {
            Ok(margin) => members.push(margin),
            Err(reason) => return Err(ConvergenceError::MemberFailure { m, reason }),
        }
    }
    let report = verify_pairs("limit", limit, domain, k, params, pair_samples, seed, tol)?;
    let min_member_ratio = members.iter().map(|mm| mm.min_ratio).fold(f64::INFINITY, f64::min);
    let inherited = report.min_ratio >= min_member_ratio * (1.0 - tol);
    Ok(FrozenBoundReport { passed: report.passed, members, limit: report, min_member_ratio, inherited })
}

/// Half the largest image displacement to an axis neighbour of cell `c`.
fn image_tolerance(f: &dyn PointMap, g: &DiscreteDomain, c: u32, fc: &Point) -> f64 {
    let x = g.center(c);
    let h = g.spacing();
    let mut step = 0.0f64;
    for axis in 0..g.dim() {
        for sign in [-1.0, 1.0] {
            let mut y = x.coords().to_vec();
            y[axis] += sign * h;
            let q = Point::from_slice(&y).expect("finite");
            step = step.max(f.eval(&q).dist(fc));
        }
    }
    0.5 * step
}

fn diameter_estimate(pts: &[Point]) -> f64 {
    if pts.len() <= 64 {
        let mut d = 0.0f64;
        for (i, a) in pts.iter().enumerate() {
            for b in &pts[i + 1..] {
                d = d.max(a.dist(b));
            }
        }
        return d;
    }
    // two farthest-point sweeps
    let far = |from: &Point| pts.iter().copied().max_by(|a, b| a.dist(from).total_cmp(&b.dist(from))).expect("non-empty");
    let a = far(&pts[0]);
    let b = far(&a);
    a.dist(&b)
}

/// Connected components of `cells` in the grid graph of `g`.
fn components(g: &DiscreteDomain, cells: &[u32]) -> Vec<Vec<u32>> {
    let mut index: HashMap<u32, usize> = cells.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut out = Vec::new();
    for &c in cells {
        if index.remove(&c).is_none() {
            continue;
        }
        let mut comp = vec![c];
        let mut i = 0;
        while i < comp.len() {
            let u = comp[i];
            g.for_each_neighbor(u, |v, _| {
                if index.remove(&v).is_some() {
                    comp.push(v);
                }
            });
            i += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiberCluster {
    pub seed: Vec<f64>,
    pub tolerance: f64,
    pub cells: usize,
    /// Number of separated preimage components.
    pub multiplicity: usize,
    pub max_component_diameter: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscretenessReport {
    pub h: f64,
    pub clusters: Vec<FiberCluster>,
    pub passed: bool,
}

/// For `clusters` evenly spaced seed cells `x0` of `g`, collects the cells
/// whose images lie within the local image resolution of `f(x0)` and splits
/// them into components. Passes when every component has diameter `≤ 2h`.
pub fn discreteness_probe(f: &dyn PointMap, g: &DiscreteDomain, clusters: usize, exec: Execution) -> Result<DiscretenessReport> {
    if g.is_empty() || clusters == 0 {
        return Err(ConvergenceError::EmptySet);
    }
    let count = clusters.min(g.len());
    let seeds: Vec<u32> = (0..count).map(|i| ((2 * i + 1) * g.len() / (2 * count)) as u32).collect();
    probe_fibers(f, g, &seeds, exec)
}

/// [`discreteness_probe`] at the cells containing the given seed points.
pub fn discreteness_probe_at(f: &dyn PointMap, g: &DiscreteDomain, seeds: &[Point], exec: Execution) -> Result<DiscretenessReport> {
    let ids = g.snap_points(seeds).map_err(|e| ConvergenceError::InvalidSequence(e.to_string()))?;
    if ids.is_empty() {
        return Err(ConvergenceError::EmptySet);
    }
    probe_fibers(f, g, &ids, exec)
}

fn probe_fibers(f: &dyn PointMap, g: &DiscreteDomain, seeds: &[u32], exec: Execution) -> Result<DiscretenessReport> {
    let ids: Vec<u32> = (0..g.len() as u32).collect();
    let images: Vec<Point> = parallel::map(exec, &ids, |&c| f.eval(&g.center(c)));
    let h = g.spacing();
    let found = parallel::map(exec, seeds, |&s| {
        let fs = images[s as usize];
        let tolerance = image_tolerance(f, g, s, &fs);
        let cells: Vec<u32> = ids.iter().copied().filter(|&c| images[c as usize].dist(&fs) <= tolerance).collect();
        let comps = components(g, &cells);
        let max_component_diameter = comps
            .iter()
            .map(|comp| diameter_estimate(&comp.iter().map(|&c| g.center(c)).collect::<Vec<_>>()))
            .fold(0.0, f64::max);
        FiberCluster {
            seed: g.center(s).coords().to_vec(),
            tolerance,
            cells: cells.len(),
            multiplicity: comps.len(),
            max_component_diameter,
        }
    });
    let passed = found.iter().all(|c| c.max_component_diameter <= 2.0 * h * (1.0 + 1e-9));
    Ok(DiscretenessReport { h, clusters: found, passed })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Collision {
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    pub distance: f64,
    pub image_distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InjectivityReport {
    pub h: f64,
    /// All colliding pairs found (only the first `max_witnesses` are kept).
    pub collision_count: usize,
    pub collisions: Vec<Collision>,
    pub passed: bool,
}

/// Searches all cell pairs of `g` at distance `≥ 4h` whose images are
/// within the local image resolution of each other (hash grid on the
/// images, so the search is exhaustive rather than sampled).
pub fn injectivity_probe(f: &dyn PointMap, g: &DiscreteDomain, max_witnesses: usize, exec: Execution) -> Result<InjectivityReport> {
    if g.is_empty() {
        return Err(ConvergenceError::EmptySet);
    }
    let h = g.spacing();
    let ids: Vec<u32> = (0..g.len() as u32).collect();
    let images: Vec<(Point, f64)> = parallel::map(exec, &ids, |&c| {
        let fc = f.eval(&g.center(c));
        let t = image_tolerance(f, g, c, &fc);
        (fc, t)
    });
    let bucket = images.iter().map(|i| i.1).fold(0.0, f64::max).max(1e-12);
    let mut grid: HashMap<[i32; 3], Vec<u32>> = HashMap::new();
    for (c, (p, _)) in images.iter().enumerate() {
        grid.entry(point_key(p, bucket)).or_default().push(c as u32);
    }
    let dim = g.dim();
    let offsets: Vec<[i32; 3]> = (0..3usize.pow(dim as u32))
        .map(|mut code| {
            let mut d = [0i32; 3];
            for v in d.iter_mut().take(dim) {
                *v = (code % 3) as i32 - 1;
                code /= 3;
            }
            d
        })
        .collect();
    let found: Vec<Vec<Collision>> = parallel::map(exec, &ids, |&a| {
        let (pa, ta) = images[a as usize];
        let key = point_key(&pa, bucket);
        let xa = g.center(a);
        let mut out = Vec::new();
        for off in &offsets {
            let k = [key[0] + off[0], key[1] + off[1], key[2] + off[2]];
            let Some(list) = grid.get(&k) else { continue };
            for &b in list {
                if b <= a {
                    continue;
                }
                let (pb, tb) = images[b as usize];
                let xb = g.center(b);
                let gap = pa.dist(&pb);
                if gap <= ta.min(tb) && xa.dist(&xb) >= 4.0 * h {
                    out.push(Collision { x1: xa.coords().to_vec(), x2: xb.coords().to_vec(), distance: xa.dist(&xb), image_distance: gap });
                }
            }
        }
        out
    });
    let all: Vec<Collision> = found.into_iter().flatten().collect();
    let collision_count = all.len();
    Ok(InjectivityReport { h, collision_count, passed: collision_count == 0, collisions: all.into_iter().take(max_witnesses).collect() })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BallInclusion {
    pub center: Vec<f64>,
    pub t: f64,
    /// `dist(f(x1), f(∂B_t))` over the boundary samples.
    pub radius: f64,
    pub samples: usize,
    /// Image grid points of `B(f(x1), radius)` whose preimage leaves `B_t`.
    pub escapes: usize,
    pub holds: bool,
}

fn sphere_directions(dim: usize, count: usize) -> Vec<Point> {
    if dim == 2 {
        return (0..count)
            .map(|i| {
                let a = std::f64::consts::TAU * i as f64 / count as f64;
                Point::new2(a.cos(), a.sin())
            })
            .collect();
    }
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            Point::new3(r * a.cos(), r * a.sin(), z)
        })
        .collect()
}

/// Checks that `f(B(x1, t))` contains the ball around `f(x1)` whose radius
/// is the distance from `f(x1)` to the image of the sphere `S(x1, t)`:
/// every image-grid point of that ball (spacing `h`) must pull back into
/// `B(x1, t)` up to `h`.
pub fn ball_inclusion(map: &MappingSpec, x1: &Point, t: f64, h: f64, seed: u64) -> Result<BallInclusion> {
    map.validate()?;
    if !(t > 0.0 && h > 0.0) {
        return Err(ConvergenceError::InvalidSequence("ball radius and spacing must be positive".into()));
    }
    let dim = map.dim;
    let fx = map.apply(x1);
    let dirs = sphere_directions(dim, if dim == 2 { 2048 } else { 4096 });
    let radius = dirs.iter().map(|d| map.apply(&x1.add(&d.scale(t))).dist(&fx)).fold(f64::INFINITY, f64::min);
    // random grid offset so the check does not depend on lattice alignment
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.0..h)).collect();
    let span = (radius / h).ceil() as i64;
    let mut samples = 0;
    let mut escapes = 0;
    let mut idx = vec![-span; dim];
    loop {
        let y: Vec<f64> = (0..dim).map(|a| fx.get(a) + idx[a] as f64 * h + shift[a] - 0.5 * h).collect();
        let y = Point::from_slice(&y).expect("finite");
        if y.dist(&fx) < radius {
            samples += 1;
            if map.inverse_apply(&y).dist(x1) > t + h {
                escapes += 1;
            }
        }
        let mut a = 0;
        while a < dim {
            idx[a] += 1;
            if idx[a] <= span {
                break;
            }
            idx[a] = -span;
            a += 1;
        }
        if a == dim {
            break;
        }
    }
    Ok(BallInclusion { center: x1.coords().to_vec(), t, radius, samples, escapes, holds: escapes == 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rasterize, Annulus, Shape};

    fn ring_points(h: f64) -> Vec<Point> {
        let dom = rasterize(&Shape::Annulus(Annulus::new(Point::new2(0.0, 0.0), 0.5, 1.0).unwrap()), 1.0 / h).unwrap();
        dom.centers()
    }

    #[test]
    fn radial_gap_matches_closed_form_bound() {
        let seq = MappingSequence::radial_stretch(2, 1.0).unwrap();
        let k = ring_points(1.0 / 32.0);
        for m in [1usize, 10, 100] {
            let gap = local_uniform_gap(&seq, m, &k).unwrap();
            // |x| · | |x|^{1/m} − 1 | ≤ |x| |log |x|| / m, maximized at |x| = 1/2 on the ring
            let oracle = k.iter().map(|x| x.norm() * (x.norm().powf(1.0 / m as f64) - 1.0).abs()).fold(0.0, f64::max);
            assert!((gap - oracle).abs() < 1e-12);
            assert!(gap <= 0.5 * 2f64.ln() / m as f64 + 1e-12);
        }
    }

    #[test]
    fn collapse_gap_is_max_norm_over_m() {
        let seq = MappingSequence::collapse(2).unwrap();
        let k = ring_points(1.0 / 16.0);
        let rmax = k.iter().map(|x| x.norm()).fold(0.0, f64::max);
        for m in [1usize, 3, 7] {
            let gap = local_uniform_gap(&seq, m, &k).unwrap();
            assert!((gap - rmax / m as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_sequence_has_zero_gap() {
        let seq = MappingSequence::constant(MappingSpec::radial_stretch(2, 2.0).unwrap()).unwrap();
        let k = ring_points(1.0 / 16.0);
        assert_eq!(local_uniform_gap(&seq, 5, &k).unwrap(), 0.0);
    }

    #[test]
    fn missing_limit_is_reported() {
        let seq = MappingSequence::new(2, SequenceRule::Collapse, None).unwrap();
        assert_eq!(local_uniform_gap(&seq, 1, &ring_points(0.25)), Err(ConvergenceError::NoDeclaredLimit));
    }

    #[test]
    fn bad_sequences_are_rejected() {
        assert!(MappingSequence::radial_stretch(2, -1.0).is_err());
        assert!(MappingSequence::radial_stretch(4, 1.0).is_err());
        assert!(MappingSequence::new(2, SequenceRule::Collapse, Some(Limit::Point { at: vec![0.0] })).is_err());
        assert!(MappingSequence::collapse(2).unwrap().member(0).is_err());
    }

    #[test]
    fn identity_fibers_are_singletons() {
        let g = rasterize(&Shape::unit_square(), 16.0).unwrap();
        let id = |p: &Point| *p;
        let r = discreteness_probe(&id, &g, 12, Execution::Sequential).unwrap();
        assert!(r.passed);
        assert!(r.clusters.iter().all(|c| c.cells == 1 && c.multiplicity == 1));
    }

    #[test]
    fn constant_map_fails_discreteness() {
        let g = rasterize(&Shape::unit_square(), 16.0).unwrap();
        let c = |_: &Point| Point::new2(0.3, 0.3);
        let r = discreteness_probe(&c, &g, 3, Execution::Sequential).unwrap();
        assert!(!r.passed);
        assert_eq!(r.clusters[0].cells, g.len());
        let diag = 2f64.sqrt() * (1.0 - g.spacing());
        assert!((r.clusters[0].max_component_diameter - diag).abs() < 1e-9);
    }

    #[test]
    fn fold_has_two_sheets_but_is_discrete() {
        let g = rasterize(&Shape::Box { lo: Point::new2(-1.0, -0.5), hi: Point::new2(1.0, 0.5) }, 16.0).unwrap();
        let fold = |p: &Point| Point::new2(p.get(0) * p.get(0), p.get(1));
        // off the critical line x1 = 0 every image point has two preimages
        let seeds: Vec<Point> = [-0.8, -0.5, 0.45, 0.7].iter().flat_map(|&x| [Point::new2(x, -0.3), Point::new2(x, 0.2)]).collect();
        let r = discreteness_probe_at(&fold, &g, &seeds, Execution::Sequential).unwrap();
        assert!(r.passed, "{:?}", r.clusters);
        assert!(r.clusters.iter().all(|c| c.multiplicity == 2));
        let inj = injectivity_probe(&fold, &g, 5, Execution::Sequential).unwrap();
        assert!(!inj.passed);
        assert_eq!(inj.collisions.len(), 5);
        for w in &inj.collisions {
            assert!(w.x1[0] * w.x2[0] < 0.0);
        }
        // mirror pairs (x1, x2), (−x1, x2) with 2|x1| ≥ 4h: 14 columns per side, 16 rows
        assert!(inj.collision_count >= 14 * 16);
    }

    #[test]
    fn homeomorphisms_have_no_collisions() {
        let g = rasterize(&Shape::Annulus(Annulus::new(Point::new2(0.0, 0.0), 0.3, 1.0).unwrap()), 16.0).unwrap();
        for map in [MappingSpec::identity(2), MappingSpec::radial_stretch(2, 2.0).unwrap()] {
            let r = injectivity_probe(&map, &g, 10, Execution::Parallel).unwrap();
            assert!(r.passed, "{}", map.name());
            assert!(discreteness_probe(&map, &g, 10, Execution::Parallel).unwrap().passed);
        }
    }

    #[test]
    fn identity_ball_inclusion_radius_is_t() {
        let b = ball_inclusion(&MappingSpec::identity(2), &Point::new2(0.1, 0.2), 0.3, 0.01, 1).unwrap();
        assert!((b.radius - 0.3).abs() < 1e-12);
        assert!(b.holds && b.samples > 2000);
    }

    #[test]
    fn stretch_ball_inclusion_holds_in_3d() {
        let map = MappingSpec::radial_stretch(3, 2.0).unwrap();
        let b = ball_inclusion(&map, &Point::new3(0.5, 0.2, 0.1), 0.2, 0.02, 3).unwrap();
        assert!(b.holds && b.radius > 0.0);
    }

    fn disk_setup() -> (Arc<DiscreteDomain>, Vec<Point>) {
        let d = Arc::new(rasterize(&Shape::disk(Point::new2(0.0, 0.0), 1.5), 16.0).unwrap());
        let k: Vec<Point> = d.centers().into_iter().filter(|x| (0.5..=1.0).contains(&x.norm())).collect();
        (d, k)
    }

    #[test]
    fn frozen_bound_survives_the_limit() {
        let (d, k) = disk_setup();
        let seq = MappingSequence::radial_stretch(2, 1.0).unwrap();
        let params = BoundParams::new(2, 0.25, 2.0, 1.0, 2.0 * d.measure()).unwrap();
        let r = frozen_bound_limit_check(&seq, &d, &k, &params, &[1, 2, 4, 8], 40, 7, 1e-9, Execution::Parallel).unwrap();
        assert!(r.passed && r.inherited);
        assert_eq!(r.members.len(), 4);
        assert!(r.members.iter().all(|m| m.min_ratio >= 1.0));
    }

    #[test]
    fn collapse_is_rejected_at_the_predicted_member() {
        let (d, k) = disk_setup();
        let delta = 0.25;
        let ibd1 = crate::bounds::image_boundary_distance(&MappingSpec::identity(2), &d, &k);
        let expected = (ibd1 / delta).floor() as usize + 1;
        let seq = MappingSequence::collapse(2).unwrap();
        let params = BoundParams::new(2, delta, 2.0, 1.0, d.measure()).unwrap();
        let m_list: Vec<usize> = (1..=8).collect();
        match frozen_bound_limit_check(&seq, &d, &k, &params, &m_list, 20, 1, 1e-9, Execution::Sequential) {
            Err(ConvergenceError::MemberFailure { m, .. }) => assert_eq!(m, expected),
            other => panic!("expected a member failure, got {other:?}"),
        }
    }

    #[test]
    fn constant_sequence_limit_equals_member() {
        let (d, k) = disk_setup();
        let map = MappingSpec::radial_stretch(2, 0.5).unwrap();
        let q = q_of(&map, d.clone()).unwrap().l1_norm();
        let seq = MappingSequence::constant(map.clone()).unwrap();
        let params = BoundParams::new(2, 0.2, 2.0, 1.0, q).unwrap();
        let r = frozen_bound_limit_check(&seq, &d, &k, &params, &[3], 30, 5, 1e-9, Execution::Sequential).unwrap();
        let direct = crate::bounds::verify_lower_bound(&map, &d, &k, &params, 30, 5, 1e-9).unwrap();
        assert_eq!(r.limit.min_ratio, direct.min_ratio);
        assert_eq!(r.members[0].min_ratio, direct.min_ratio);
    }
}
