//! Analytic homeomorphisms with known distortion, radial test densities,
//! and a numerical check of the ring Q-mapping inequality
//!
//! ```text
//!     M_p(f(Γ(S(x0,r1), S(x0,r2), A ∩ D))) ≤ ∫_{A∩D} Q(x) η(|x − x0|)^q dx.
//! ```
//!
//! The left side is computed on an image grid: the pushed-forward family is
//! rasterized directly from the preimage predicate through `f^{-1}`, so no
//! individual curve has to be transported.

use std::io::Read;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{Curve, CurveError, CurveFamily, FamilyKind};
use crate::geometry::{rasterize_cells, Annulus, Continuum, DiscreteDomain, GeometryError, Point, Region};
use crate::modulus::{p_modulus, ModulusError, ModulusSummary, SolverOptions};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QmapError {
    #[error("invalid mapping: {0}")]
    InvalidMap(String),
    #[error("no closed-form distortion for `{0}`; supply a Q table")]
    UnknownDistortion(String),
    #[error("image point {0} leaves the image grid")]
    OutOfImageGrid(String),
    #[error("test density is not admissible: integral over (r1, r2) is {0}")]
    InadmissibleEta(f64),
    #[error("invalid test density: {0}")]
    InvalidDensity(String),
    #[error("image of the ray from {from} stays within delta/2 = {half_delta} of its start up to the domain exit")]
    DeltaUnreachable { from: String, half_delta: f64 },
    #[error("Q table does not match the domain: {0}")]
    BadQTable(String),
    #[error("x and y must be distinct points of the domain")]
    BadPair,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Modulus(#[from] ModulusError),
}

pub type Result<T, E = QmapError> = std::result::Result<T, E>;

/// Anything that maps points of R^n to R^n.
pub trait PointMap: Sync {
    fn eval(&self, p: &Point) -> Point;
}

impl<F: Fn(&Point) -> Point + Sync> PointMap for F {
    fn eval(&self, p: &Point) -> Point {
        self(p)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapKind {
    Identity,
    /// `x ↦ A x + b`, `A` row-major.
    Affine { matrix: Vec<f64>, offset: Vec<f64> },
    /// `x ↦ x |x|^{α−1}`, fixing the origin.
    RadialStretch { alpha: f64 },
    /// Applied first to last.
    Composed { maps: Vec<MappingSpec> },
}

/// A homeomorphism of R^n from the zoo.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MappingSpec {
    #[serde(flatten)]
    pub kind: MapKind,
    pub dim: usize,
}

impl MappingSpec {
    pub fn identity(dim: usize) -> Self {
        Self { kind: MapKind::Identity, dim }
    }

    pub fn affine(dim: usize, matrix: Vec<f64>, offset: Vec<f64>) -> Result<Self> {
        let m = Self { kind: MapKind::Affine { matrix, offset }, dim };
        m.validate()?;
        Ok(m)
    }

    pub fn scaling(dim: usize, s: f64) -> Result<Self> {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = s;
        }
        Self::affine(dim, a, vec![0.0; dim])
    }

    pub fn radial_stretch(dim: usize, alpha: f64) -> Result<Self> {
        let m = Self { kind: MapKind::RadialStretch { alpha }, dim };
        m.validate()?;
        Ok(m)
    }

    pub fn composed(maps: Vec<MappingSpec>) -> Result<Self> {
        let dim = maps.first().map(|m| m.dim).ok_or_else(|| QmapError::InvalidMap("empty composition".into()))?;
        let m = Self { kind: MapKind::Composed { maps }, dim };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim;
        if n != 2 && n != 3 {
            return Err(QmapError::InvalidMap(format!("dimension {n}")));
        }
        match &self.kind {
            MapKind::Identity => {}
            MapKind::Affine { matrix, offset } => {
                if matrix.len() != n * n || offset.len() != n {
                    return Err(QmapError::InvalidMap("affine matrix/offset size".into()));
                }
                if matrix.iter().chain(offset).any(|v| !v.is_finite()) {
                    return Err(QmapError::InvalidMap("non-finite affine entry".into()));
                }
                let sv = self.matrix().singular_values();
                if sv.min() <= 1e-12 * sv.max().max(1.0) {
                    return Err(QmapError::InvalidMap("affine matrix is singular".into()));
                }
            }
            MapKind::RadialStretch { alpha } => {
                if !(*alpha > 0.0 && alpha.is_finite()) {
                    return Err(QmapError::InvalidMap(format!("radial stretch needs alpha > 0 (got {alpha})")));
                }
            }
            MapKind::Composed { maps } => {
                for m in maps {
                    if m.dim != n {
                        return Err(QmapError::InvalidMap("composition mixes dimensions".into()));
                    }
                    m.validate()?;
                }
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match &self.kind {
            MapKind::Identity => "identity".into(),
            MapKind::Affine { matrix, offset } => format!("affine({matrix:?}, {offset:?})"),
            MapKind::RadialStretch { alpha } => format!("radial_stretch({alpha})"),
            MapKind::Composed { maps } => {
                let parts: Vec<String> = maps.iter().map(|m| m.name()).collect();
                format!("composed[{}]", parts.join(", "))
            }
        }
    }

    fn matrix(&self) -> DMatrix<f64> {
        match &self.kind {
            MapKind::Affine { matrix, .. } => DMatrix::from_row_slice(self.dim, self.dim, matrix),
            _ => DMatrix::identity(self.dim, self.dim),
        }
    }

    pub fn apply(&self, p: &Point) -> Point {
        match &self.kind {
            MapKind::Identity => *p,
            MapKind::Affine { offset, .. } => {
                let v = self.matrix() * nalgebra::DVector::from_column_slice(p.coords());
                let out: Vec<f64> = v.iter().zip(offset).map(|(a, b)| a + b).collect();
                Point::from_slice(&out).unwrap_or(*p)
            }
            MapKind::RadialStretch { alpha } => {
                let r = p.norm();
                if r == 0.0 {
                    *p
                } else {
                    p.scale(r.powf(alpha - 1.0))
                }
            }
            MapKind::Composed { maps } => maps.iter().fold(*p, |q, m| m.apply(&q)),
        }
    }

    pub fn inverse_apply(&self, q: &Point) -> Point {
        match &self.kind {
            MapKind::Identity => *q,
            MapKind::Affine { offset, .. } => {
                let inv = self.matrix().try_inverse().expect("validated invertible");
                let shifted: Vec<f64> = q.coords().iter().zip(offset).map(|(a, b)| a - b).collect();
                let v = inv * nalgebra::DVector::from_column_slice(&shifted);
                Point::from_slice(v.as_slice()).unwrap_or(*q)
            }
            MapKind::RadialStretch { alpha } => {
                let r = q.norm();
                if r == 0.0 {
                    *q
                } else {
                    q.scale(r.powf(1.0 / alpha - 1.0))
                }
            }
            MapKind::Composed { maps } => maps.iter().rev().fold(*q, |p, m| m.inverse_apply(&p)),
        }
    }

    /// Jacobian matrix at `p`.
    pub fn jacobian(&self, p: &Point) -> DMatrix<f64> {
        let n = self.dim;
        match &self.kind {
            MapKind::Identity => DMatrix::identity(n, n),
            MapKind::Affine { .. } => self.matrix(),
            MapKind::RadialStretch { alpha } => {
                let r = p.norm();
                if r == 0.0 {
                    return DMatrix::identity(n, n);
                }
                let u = nalgebra::DVector::from_column_slice(p.coords()) / r;
                let mut j = DMatrix::identity(n, n) + (alpha - 1.0) * (&u * u.transpose());
                j *= r.powf(alpha - 1.0);
                j
            }
            MapKind::Composed { maps } => {
                let mut j = DMatrix::identity(n, n);
                let mut q = *p;
                for m in maps {
                    j = m.jacobian(&q) * j;
                    q = m.apply(&q);
                }
                j
            }
        }
    }

    /// `|det Df(p)|^{1/n}`, the volume-averaged stretch.
    pub fn local_stretch(&self, p: &Point) -> f64 {
        self.jacobian(p).determinant().abs().powf(1.0 / self.dim as f64)
    }
}

impl PointMap for MappingSpec {
    fn eval(&self, p: &Point) -> Point {
        self.apply(p)
    }
}

/// Cell-wise distortion `Q` on a domain.
#[derive(Clone, Debug)]
pub struct QField {
    domain: Arc<DiscreteDomain>,
    values: Vec<f64>,
    l1_norm: f64,
}

impl QField {
    pub fn new(domain: Arc<DiscreteDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() {
            return Err(QmapError::BadQTable(format!("{} values for {} cells", values.len(), domain.len())));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(QmapError::BadQTable("values must be finite and nonnegative".into()));
        }
        let l1_norm = domain.cell_measure() * values.iter().sum::<f64>();
        Ok(Self { domain, values, l1_norm })
    }

    pub fn constant(domain: Arc<DiscreteDomain>, q: f64) -> Result<Self> {
        let n = domain.len();
        Self::new(domain, vec![q; n])
    }

    /// Reads `cell,q` rows (header required). Cells not listed get `default`.
    pub fn from_csv<R: Read>(domain: Arc<DiscreteDomain>, reader: R, default: f64) -> Result<Self> {
        let mut values = vec![default; domain.len()];
        let mut rdr = csv::Reader::from_reader(reader);
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|e| QmapError::BadQTable(e.to_string()))?;
            let parse = |i: usize| -> Result<&str> {
                rec.get(i).ok_or_else(|| QmapError::BadQTable(format!("row {} is too short", line + 2)))
            };
            let cell: usize = parse(0)?.trim().parse().map_err(|_| QmapError::BadQTable(format!("row {}: bad cell index", line + 2)))?;
            let q: f64 = parse(1)?.trim().parse().map_err(|_| QmapError::BadQTable(format!("row {}: bad Q value", line + 2)))?;
            if cell >= values.len() {
                return Err(QmapError::BadQTable(format!("row {}: cell {cell} out of range", line + 2)));
            }
            values[cell] = q;
        }
        Self::new(domain, values)
    }

    pub fn domain(&self) -> &DiscreteDomain {
        &self.domain
    }

    pub fn domain_arc(&self) -> &Arc<DiscreteDomain> {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ Q h^n`
    pub fn l1_norm(&self) -> f64 {
        self.l1_norm
    }
}

/// Closed-form distortion of a zoo map.
///
/// Affine maps get `(σ_max/σ_min)^{n−1}`; the radial stretch gets the outer
/// dilatation `max(α, 1/α)` in the plane and `max(α^{n−1}, 1/α)` in general.
pub fn q_of(map: &MappingSpec, domain: Arc<DiscreteDomain>) -> Result<QField> {
    map.validate()?;
    let q = closed_form_q(map)?;
    QField::constant(domain, q)
}

fn closed_form_q(map: &MappingSpec) -> Result<f64> {
    let n = map.dim as f64;
    match &map.kind {
        MapKind::Identity => Ok(1.0),
        MapKind::Affine { .. } => {
            let sv = map.matrix().singular_values();
            Ok((sv.max() / sv.min()).powf(n - 1.0))
        }
        MapKind::RadialStretch { alpha } => Ok(if *alpha >= 1.0 { alpha.powf(n - 1.0) } else { 1.0 / alpha }),
        MapKind::Composed { maps } => {
            let nontrivial: Vec<&MappingSpec> = maps.iter().filter(|m| m.kind != MapKind::Identity).collect();
            match nontrivial.as_slice() {
                [] => Ok(1.0),
                [one] => closed_form_q(one),
                _ => Err(QmapError::UnknownDistortion(map.name())),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case")]
pub enum Profile {
    /// `1 / (r2 − r1)`
    Uniform,
    /// `1 / (r log(r2/r1))`
    LogRadial,
    /// Piecewise linear through `(r, η)` knots, zero outside them.
    Custom { table: Vec<(f64, f64)> },
}

/// Radial test density `η` on `(r1, r2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestDensity {
    pub r1: f64,
    pub r2: f64,
    #[serde(flatten)]
    pub profile: Profile,
}

impl TestDensity {
    pub fn new(r1: f64, r2: f64, profile: Profile) -> Result<Self> {
        if !(r1 > 0.0 && r1 < r2 && r2.is_finite()) {
            return Err(QmapError::InvalidDensity(format!("need 0 < r1 < r2 (got {r1}, {r2})")));
        }
        if let Profile::Custom { table } = &profile {
            if table.is_empty() || table.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(QmapError::InvalidDensity("custom table needs increasing radii".into()));
            }
            if table.iter().any(|(r, v)| !(r.is_finite() && v.is_finite() && *v >= 0.0)) {
                return Err(QmapError::InvalidDensity("custom table values must be finite and nonnegative".into()));
            }
        }
        Ok(Self { r1, r2, profile })
    }

    pub fn uniform(r1: f64, r2: f64) -> Result<Self> {
        Self::new(r1, r2, Profile::Uniform)
    }

    pub fn log_radial(r1: f64, r2: f64) -> Result<Self> {
        Self::new(r1, r2, Profile::LogRadial)
    }

    /// `η(r)`, zero outside `[r1, r2]`.
    pub fn eval(&self, r: f64) -> f64 {
        if r < self.r1 || r > self.r2 {
            return 0.0;
        }
        match &self.profile {
            Profile::Uniform => 1.0 / (self.r2 - self.r1),
            Profile::LogRadial => 1.0 / (r * (self.r2 / self.r1).ln()),
            Profile::Custom { table } => {
                let i = table.partition_point(|(x, _)| *x <= r);
                if i == 0 || i == table.len() {
                    if i == table.len() && table[i - 1].0 == r {
                        return table[i - 1].1;
                    }
                    return 0.0;
                }
                let (x0, y0) = table[i - 1];
                let (x1, y1) = table[i];
                y0 + (y1 - y0) * (r - x0) / (x1 - x0)
            }
        }
    }

    /// `∫_{r1}^{r2} η(r) dr` by composite Simpson in `u = log r`.
    pub fn integral(&self) -> f64 {
        const N: usize = 20_000;
        let (a, b) = (self.r1.ln(), self.r2.ln());
        let du = (b - a) / N as f64;
        let g = |u: f64| {
            let r = u.exp();
            self.eval(r.clamp(self.r1, self.r2)) * r
        };
        let mut s = g(a) + g(b);
        for i in 1..N {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + i as f64 * du);
        }
        s * du / 3.0
    }

    pub fn check_admissible(&self, tol: f64) -> Result<f64> {
        let v = self.integral();
        if v < 1.0 - tol {
            return Err(QmapError::InadmissibleEta(v));
        }
        Ok(v)
    }
}

/// Midpoint cell quadrature of `∫_{A∩D} Q η(|x − x0|)^q dx`.
pub fn rhs_ring_integral(q_field: &QField, ann: &Annulus, eta: &TestDensity, q: f64) -> Result<f64> {
    let rel = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(b.abs());
    if !rel(eta.r1, ann.r_inner()) || !rel(eta.r2, ann.r_outer()) {
        return Err(QmapError::InvalidDensity(format!(
            "density radii ({}, {}) differ from the annulus ({}, {})",
            eta.r1,
            eta.r2,
            ann.r_inner(),
            ann.r_outer()
        )));
    }
    eta.check_admissible(1e-6)?;
    let d = q_field.domain();
    let c = ann.center();
    let mut sum = 0.0;
    for (i, qv) in q_field.values().iter().enumerate() {
        let p = d.center(i as u32);
        if ann.contains(&p) {
            sum += qv * eta.eval(p.dist(&c)).powf(q);
        }
    }
    Ok(sum * d.cell_measure())
}

/// Image grid resolution: the preimage resolution times the median local
/// stretch of `map` over `pts`.
pub fn image_resolution(map: &MappingSpec, pts: &[Point], resolution: f64) -> f64 {
    if pts.is_empty() {
        return resolution;
    }
    let mut s: Vec<f64> = pts.iter().map(|p| map.local_stretch(p)).collect();
    s.sort_by(f64::total_cmp);
    resolution * s[s.len() / 2]
}

/// `f(D)` as a region: `y` belongs iff `f^{-1}(y)` falls in a cell of `D`.
struct ImageRegion<'a> {
    map: &'a MappingSpec,
    pre: &'a DiscreteDomain,
    lo: Point,
    hi: Point,
    band: Option<Band>,
}

/// Annular band in preimage radius, measured in image units.
struct Band {
    center: Point,
    r1: f64,
    r2: f64,
    half: f64,
}

impl ImageRegion<'_> {
    /// Signed image-space offsets from `f(S(x0, r1))` and `f(S(x0, r2))`,
    /// to first order.
    fn offsets(&self, y: &Point, b: &Band) -> (f64, f64) {
        let g = |q: &Point| self.map.inverse_apply(q).dist(&b.center);
        let g0 = g(y);
        let step = 1e-3 * b.half.max(1e-9);
        let mut grad2 = 0.0;
        for a in 0..y.dim() {
            let mut e = [0.0; 3];
            e[a] = step;
            let e = Point::from_slice(&e[..y.dim()]).expect("finite");
            let d = (g(&y.add(&e)) - g(&y.sub(&e))) / (2.0 * step);
            grad2 += d * d;
        }
        let gn = grad2.sqrt().max(1e-300);
        ((g0 - b.r1) / gn, (g0 - b.r2) / gn)
    }
}

impl Region for ImageRegion<'_> {
    fn dim(&self) -> usize {
        self.pre.dim()
    }

    fn contains(&self, y: &Point) -> bool {
        if self.pre.locate(&self.map.inverse_apply(y)).is_none() {
            return false;
        }
        match &self.band {
            None => true,
            Some(b) => {
                let (s1, s2) = self.offsets(y, b);
                s1 >= -b.half && s2 <= b.half
            }
        }
    }

    fn bounding_box(&self) -> (Point, Point) {
        (self.lo, self.hi)
    }
}

fn image_bbox(map: &MappingSpec, pts: &[Point], margin: f64) -> Option<(Point, Point)> {
    let first = map.apply(pts.first()?);
    let n = first.dim();
    let (mut lo, mut hi) = (first.coords().to_vec(), first.coords().to_vec());
    for p in pts {
        let q = map.apply(p);
        for a in 0..n {
            lo[a] = lo[a].min(q.get(a) - margin);
            hi[a] = hi[a].max(q.get(a) + margin);
        }
    }
    Some((Point::from_slice(&lo).ok()?, Point::from_slice(&hi).ok()?))
}

/// Image of the whole domain, rasterized at `resolution`.
pub fn image_domain(map: &MappingSpec, pre: &DiscreteDomain, resolution: f64) -> Result<DiscreteDomain> {
    let pts = pre.centers();
    let margin = 2.0 * pre.spacing() * pts.iter().map(|p| map.local_stretch(p)).fold(0.0, f64::max) + 2.0 / resolution;
    let (lo, hi) = image_bbox(map, &pts, margin).ok_or(GeometryError::EmptyDomain)?;
    let region = ImageRegion { map, pre, lo, hi, band: None };
    Ok(rasterize_cells(&region, resolution)?)
}

/// Image of the annulus family `Γ(S(x0,r1), S(x0,r2), A ∩ D)` under `map`, on
/// a grid of spacing `1/resolution`. Shells are the image cells within half
/// a cell of the image spheres, as in [`CurveFamily::annulus`].
pub fn image_annulus_family(map: &MappingSpec, pre: &DiscreteDomain, ann: &Annulus, resolution: f64) -> Result<Option<CurveFamily>> {
    let h = pre.spacing();
    let c = ann.center();
    let band_pts: Vec<Point> = pre
        .centers()
        .into_iter()
        .filter(|p| {
            let d = p.dist(&c);
            d >= ann.r_inner() - 2.0 * h && d <= ann.r_outer() + 2.0 * h
        })
        .collect();
    let hi_stretch = band_pts.iter().map(|p| map.local_stretch(p)).fold(0.0, f64::max);
    let Some((lo, hi)) = image_bbox(map, &band_pts, 2.0 * h * hi_stretch + 2.0 / resolution) else {
        return Ok(None);
    };
    let half = 0.5 / resolution;
    let band = Band { center: c, r1: ann.r_inner(), r2: ann.r_outer(), half };
    let region = ImageRegion { map, pre, lo, hi, band: Some(band) };
    let dom = match rasterize_cells(&region, resolution) {
        Ok(d) => d,
        Err(GeometryError::EmptyDomain) => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let b = region.band.as_ref().expect("band set");
    let mut src = Vec::new();
    let mut snk = Vec::new();
    for i in 0..dom.len() as u32 {
        let (s1, s2) = region.offsets(&dom.center(i), b);
        if s1.abs() <= half {
            src.push(i);
        } else if s2.abs() <= half {
            snk.push(i);
        }
    }
    if src.is_empty() || snk.is_empty() {
        return Ok(None);
    }
    let fam = CurveFamily::from_parts(Arc::new(dom), FamilyKind::Annulus(*ann), src, snk)?;
    Ok(Some(fam))
}

/// Vertex-wise image of `c`, re-snapped to `image`; gaps between consecutive
/// images are bridged by straight-line resampling.
pub fn push_forward(map: &MappingSpec, c: &Curve, pre: &DiscreteDomain, image: &DiscreteDomain) -> Result<Curve> {
    let pts: Vec<Point> = c.points(pre).iter().map(|p| map.apply(p)).collect();
    if let Some(p) = pts.iter().find(|p| image.locate(p).is_none()) {
        return Err(QmapError::OutOfImageGrid(format!("{:?}", p.coords())));
    }
    match Curve::from_polyline(image, &pts) {
        Ok(c) => Ok(c),
        Err(CurveError::Geometry(GeometryError::NotContained(s))) => Err(QmapError::OutOfImageGrid(s)),
        Err(e) => Err(e.into()),
    }
}

/// Outcome of one ring-inequality check.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct RingReport {
    pub x0: Vec<f64>,
    pub r1: f64,
    pub r2: f64,
    pub profile: String,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    /// `rhs − lhs`
    pub margin: f64,
    pub image_resolution: f64,
    pub solve: Option<ModulusSummary>,
}

/// Checks the ring inequality at `x0` for the annulus `A(x0, r1, r2)` clipped
/// to the domain of `q_field`. The left side is the `p`-modulus of the image
/// family; the right side uses exponent `q`.
#[allow(clippy::too_many_arguments)]
pub fn check_ring_inequality(
    map: &MappingSpec,
    q_field: &QField,
    x0: Point,
    r1: f64,
    r2: f64,
    eta: &TestDensity,
    p: f64,
    q: f64,
    tol: f64,
    opts: &SolverOptions,
) -> Result<RingReport> {
    let ann = Annulus::new(x0, r1, r2)?;
    let rhs = rhs_ring_integral(q_field, &ann, eta, q)?;
    let pre = q_field.domain();
    let band: Vec<Point> = pre.centers().into_iter().filter(|c| ann.contains(c)).collect();
    let res = image_resolution(map, &band, pre.resolution());
    let (lhs, solve) = match image_annulus_family(map, pre, &ann, res)? {
        Some(fam) => {
            let r = p_modulus(&fam, &SolverOptions { p, ..opts.clone() })?;
            (r.value, Some(r.summary()))
        }
        None => (0.0, None),
    };
    let profile = match &eta.profile {
        Profile::Uniform => "uniform".to_string(),
        Profile::LogRadial => "log_radial".to_string(),
        Profile::Custom { .. } => "custom".to_string(),
    };
    Ok(RingReport {
        x0: x0.coords().to_vec(),
        r1,
        r2,
        profile,
        lhs,
        rhs,
        holds: lhs <= rhs * (1.0 + tol),
        margin: rhs - lhs,
        image_resolution: res,
        solve,
    })
}

/// One `(x0, r1, r2, η)` case for [`check_ring_inequality`].
#[derive(Clone, Debug, PartialEq)]
pub struct RingTuple {
    pub x0: Point,
    pub r1: f64,
    pub r2: f64,
    pub eta: TestDensity,
}

/// `count` ring cases centred at random cells of `domain`, stratified over
/// the deciles of `log(r2/r1) ∈ [log 1.5, log 3]`. Inner radii are uniform
/// between `r_max` and the smallest radius giving `r1 ≥ 8h` and
/// `r2 − r1 ≥ 12h`; profiles alternate between uniform and log-radial.
pub fn stratified_ring_tuples(domain: &DiscreteDomain, count: usize, r_max: f64, seed: u64) -> Result<Vec<RingTuple>> {
    use rand::{Rng, SeedableRng};
    let h = domain.spacing();
    if domain.is_empty() || !(r_max > 8.0 * h) {
        return Err(QmapError::InvalidDensity(format!("r_max = {r_max} must exceed 8h = {}", 8.0 * h)));
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = (1.5f64.ln(), 3f64.ln());
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let stratum = (i % 10) as f64;
        let u = lo + (hi - lo) * (stratum + rng.gen::<f64>()) / 10.0;
        // at least 12 cells across the ring keeps the grid bias small
        let r_lo = (8.0 * h).max(12.0 * h / (u.exp() - 1.0));
        let r1 = if r_lo < r_max { rng.gen_range(r_lo..r_max) } else { r_lo };
        let r2 = r1 * u.exp();
        let x0 = domain.center(rng.gen_range(0..domain.len() as u32));
        let eta = if i % 2 == 0 { TestDensity::uniform(r1, r2)? } else { TestDensity::log_radial(r1, r2)? };
        out.push(RingTuple { x0, r1, r2, eta });
    }
    Ok(out)
}

/// The objects built in the proof of the distance lower bound.
///
/// The line through `x` and `y` is `r(t) = y + (x − y) t`, so `r(1) = x` and
/// `r(0) = y`. `P1` is the ray piece `[x, z1]` (`t ∈ [1, t1]`), `Q1` the piece
/// `[w1, y]` (`t ∈ [t2, 0]`); `E = f(P1)` and `F = f(Q1)` end where their image
/// first reaches distance `δ/2` from `f(x)` and `f(y)` respectively.
#[derive(Clone, Debug)]
pub struct ProofConfiguration {
    pub x: Point,
    pub y: Point,
    pub e: Continuum,
    pub f: Continuum,
    pub p1: Continuum,
    pub q1: Continuum,
    pub z1: Point,
    pub w1: Point,
    pub t1: f64,
    pub t2: f64,
    pub eps1: f64,
    pub eps2: f64,
}

/// Builds the proof objects for `(x, y)`. Fails with `DeltaUnreachable` when
/// a ray leaves `domain` before its image gets `δ/2` away from its start.
pub fn proof_configuration(map: &MappingSpec, domain: &DiscreteDomain, x: Point, y: Point, delta: f64) -> Result<ProofConfiguration> {
    let d = x.dist(&y);
    if d == 0.0 || domain.locate(&x).is_none() || domain.locate(&y).is_none() {
        return Err(QmapError::BadPair);
    }
    let r = |t: f64| y.add(&x.sub(&y).scale(t));
    let dt = domain.spacing() / (4.0 * d);
    let half = 0.5 * delta;
    let (fx, fy) = (map.apply(&x), map.apply(&y));
    let (t1, p1) = trace(&r, 1.0, dt, domain, map, &fx, half).ok_or_else(|| QmapError::DeltaUnreachable {
        from: format!("{:?}", x.coords()),
        half_delta: half,
    })?;
    let (t2, q1) = trace(&r, 0.0, -dt, domain, map, &fy, half).ok_or_else(|| QmapError::DeltaUnreachable {
        from: format!("{:?}", y.coords()),
        half_delta: half,
    })?;
    let z1 = r(t1);
    let w1 = r(t2);
    let eps1 = (t1 - 1.0) * d;
    let eps2 = t1 * d;
    // collinearity: z1 lies beyond x on the ray from y
    debug_assert!((z1.dist(&x) - eps1).abs() <= 1e-12 * eps2.max(1.0));
    debug_assert!((z1.dist(&y) - eps2).abs() <= 1e-12 * eps2.max(1.0));
    let image = |pts: &[Point]| -> Vec<Point> { pts.iter().map(|p| map.apply(p)).collect() };
    Ok(ProofConfiguration {
        x,
        y,
        e: Continuum::new("E", image(&p1))?,
        f: Continuum::new("F", image(&q1))?,
        p1: Continuum::new("P1", p1)?,
        q1: Continuum::new("Q1", q1)?,
        z1,
        w1,
        t1,
        t2,
        eps1,
        eps2,
    })
}

/// Walks `r(t)` from `t0` in steps `dt` while inside `domain`, until
/// `|f(r(t)) − anchor| ≥ half`; the crossing is refined by bisection.
fn trace(
    r: &dyn Fn(f64) -> Point,
    t0: f64,
    dt: f64,
    domain: &DiscreteDomain,
    map: &MappingSpec,
    anchor: &Point,
    half: f64,
) -> Option<(f64, Vec<Point>)> {
    let far = |t: f64| map.apply(&r(t)).dist(anchor) >= half;
    let mut pts = vec![r(t0)];
    let mut t = t0;
    loop {
        let next = t + dt;
        if domain.locate(&r(next)).is_none() {
            return None;
        }
        if far(next) {
            let (mut a, mut b) = (t, next);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if far(m) {
                    b = m;
                } else {
                    a = m;
                }
            }
            pts.push(r(b));
            return Some((b, pts));
        }
        t = next;
        pts.push(r(t));
    }
}
