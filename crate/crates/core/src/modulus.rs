//! Discrete p-modulus of a curve family.
//!
//! The problem is
//!
//! ```text
//!     minimize   h^n Σ_c ρ_c^p
//!     subject to ℓ_γ(ρ) ≥ 1 for every γ in the family,  ρ ≥ 0,
//! ```
//!
//! where `ℓ_γ` is [`crate::curves::rho_length`]. The solver works on the
//! dual side: a unit flow from the sources to the sinks through the
//! stencil graph, with cell loads `s_c = Σ (edge length / 2) · flow` over the
//! arcs touching `c`. Any such flow gives the lower bound
//! `t − (p−1) h^n Σ ρ(t s)^p` maximized over `t`, where
//! `ρ(s) = (s / (p h^n))^{1/(p−1)}`, and the matching `ρ` rescaled by the
//! shortest curve length is admissible. The flow is equilibrated on a
//! growing acyclic sub-network (a "bush") until the two bounds meet.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::bush::Bush;
use crate::curves::{shortest_path_tree, Curve, CurveError, CurveFamily};
use crate::geometry::{sphere_area, Annulus, DiscreteDomain, GeometryError, Point};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulusError {
    #[error("exponent p = {0} is out of range (need p >= 1.05)")]
    InvalidExponent(f64),
    #[error("tolerance must lie in (0, 1) (got {0})")]
    InvalidTolerance(f64),
    #[error("density values must be finite and nonnegative, one per cell")]
    InvalidDensity,
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

pub type Result<T, E = ModulusError> = std::result::Result<T, E>;

/// Smallest supported exponent; the stationarity map has exponent `1/(p-1)`.
pub const MIN_EXPONENT: f64 = 1.05;

/// Nonnegative cell-wise density on a domain.
#[derive(Clone, Debug)]
pub struct DensityField {
    domain: Arc<DiscreteDomain>,
    values: Vec<f64>,
}

impl DensityField {
    pub fn new(domain: Arc<DiscreteDomain>, values: Vec<f64>) -> Result<Self> {
        if values.len() != domain.len() || values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(ModulusError::InvalidDensity);
        }
        Ok(Self { domain, values })
    }

    pub fn constant(domain: Arc<DiscreteDomain>, v: f64) -> Self {
        let n = domain.len();
        Self { domain, values: vec![v; n] }
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

    /// `h^n Σ ρ^p`
    pub fn energy(&self, p: f64) -> f64 {
        self.domain.cell_measure() * self.values.iter().map(|v| v.powf(p)).sum::<f64>()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            domain: self.domain.clone(),
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// Heatmap rows `cell,x,y[,z],rho`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["cell", "x", "y"];
        if self.domain.dim() == 3 {
            header.push("z");
        }
        header.push("rho");
        out.write_record(&header)?;
        for (i, v) in self.values.iter().enumerate() {
            let p = self.domain.center(i as u32);
            let mut row = vec![i.to_string()];
            row.extend(p.coords().iter().map(|x| format!("{x:.9}")));
            row.push(format!("{v:.12e}"));
            out.write_record(&row)?;
        }
        out.flush()
    }
}

/// Solver knobs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverOptions {
    pub p: f64,
    /// Relative tolerance for both the admissibility and the duality gap.
    pub tol: f64,
    /// Outer iterations (network growth steps).
    pub max_iter: usize,
    /// Flow-balancing passes per outer iteration.
    pub inner_iter: usize,
    /// Upper bound on the number of curves reported in `active_curves`.
    pub max_curves: usize,
    /// Wall-clock budget in seconds; the best certificate so far is
    /// returned unconverged when it runs out.
    pub time_limit: Option<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            p: 2.0,
            tol: 1e-3,
            max_iter: 2000,
            inner_iter: 4,
            max_curves: 256,
            time_limit: None,
        }
    }
}

impl SolverOptions {
    pub fn with_p(p: f64) -> Self {
        Self { p, ..Self::default() }
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_time_limit(mut self, seconds: f64) -> Self {
        self.time_limit = Some(seconds);
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.p >= MIN_EXPONENT && self.p.is_finite()) {
            return Err(ModulusError::InvalidExponent(self.p));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(ModulusError::InvalidTolerance(self.tol));
        }
        Ok(())
    }
}

/// Certified output of [`p_modulus`].
#[derive(Clone, Debug)]
pub struct ModulusResult {
    /// `h^n Σ ρ*^p`.
    pub value: f64,
    /// A lower bound on the discrete modulus.
    pub dual_lower_bound: f64,
    /// Energy of the admissible density `ρ* / min_curve_length`.
    pub upper_bound: f64,
    pub rho_star: DensityField,
    pub active_curves: Vec<Curve>,
    pub iterations: usize,
    /// ρ*-length of the shortest family member.
    pub min_curve_length: f64,
    pub p: f64,
    pub converged: bool,
}

impl ModulusResult {
    /// `(upper − dual) / upper`: the certified relative width of the bracket
    /// around the discrete modulus.
    pub fn relative_gap(&self) -> f64 {
        if self.upper_bound == 0.0 {
            0.0
        } else {
            (self.upper_bound - self.dual_lower_bound) / self.upper_bound
        }
    }

    pub fn resolution(&self) -> f64 {
        self.rho_star.domain().resolution()
    }

    pub fn summary(&self) -> ModulusSummary {
        ModulusSummary {
            value: self.value,
            dual_lower_bound: self.dual_lower_bound,
            upper_bound: self.upper_bound,
            iterations: self.iterations,
            active_curves: self.active_curves.len(),
            min_curve_length: self.min_curve_length,
            p: self.p,
            resolution: self.resolution(),
            converged: self.converged,
        }
    }

    fn empty(domain: Arc<DiscreteDomain>, p: f64) -> Self {
        Self {
            value: 0.0,
            dual_lower_bound: 0.0,
            upper_bound: 0.0,
            rho_star: DensityField::constant(domain, 0.0),
            active_curves: Vec::new(),
            iterations: 0,
            min_curve_length: f64::INFINITY,
            p,
            converged: true,
        }
    }
}

/// Serializable digest of a [`ModulusResult`].
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ModulusSummary {
    pub value: f64,
    pub dual_lower_bound: f64,
    pub upper_bound: f64,
    pub iterations: usize,
    pub active_curves: usize,
    pub min_curve_length: f64,
    pub p: f64,
    pub resolution: f64,
    pub converged: bool,
}

/// Dual lower bound of the unit flow with cell loads `s`, maximized over
/// the flow scale: returns `(bound, scale)`.
///
/// For a flow of value `t` the dual function is
/// `t − (p−1) h^n Σ ρ(t s)^p` with `ρ(s) = (s/(p h^n))^{1/(p−1)}`.
fn flow_bound(loads: &[f64], p: f64, hn: f64) -> (f64, f64) {
    let q = p / (p - 1.0);
    let sum: f64 = if p == 2.0 {
        loads.iter().map(|s| s * s).sum::<f64>() / (4.0 * hn * hn)
    } else {
        loads.iter().map(|s| (s / (p * hn)).powf(q)).sum()
    };
    let a = (p - 1.0) * hn * sum;
    if !(a > 0.0) {
        return (0.0, 0.0);
    }
    let t = (a * q).powf(-(p - 1.0));
    (t / p, t)
}

fn density_from_loads(loads: &[f64], p: f64, hn: f64, scale: f64) -> Vec<f64> {
    let k = scale / (p * hn);
    if p == 2.0 {
        loads.iter().map(|s| s * k).collect()
    } else {
        let e = 1.0 / (p - 1.0);
        loads.iter().map(|s| (s * k).powf(e)).collect()
    }
}

fn energy(rho: &[f64], p: f64, hn: f64) -> f64 {
    let sum: f64 = if p == 2.0 {
        rho.iter().map(|r| r * r).sum()
    } else {
        rho.iter().map(|r| r.powf(p)).sum()
    };
    hn * sum
}

/// Discrete p-modulus of `family`.
///
/// The dual problem (a unit flow from the sources to the sinks minimizing
/// `Σ_c s_c^{p/(p−1)}` over cell loads) is solved on a growing acyclic
/// sub-network; see [`crate::bush`]. Each certificate round maps the flow to
/// its dual bound and its stationary density `ρ`, and asks the
/// shortest-curve oracle for `ℓ_min = min_γ ℓ_γ(ρ)`.
///
/// Terminates when `ℓ_min ≥ 1 − tol` and both `(value − dual)/value` and
/// `(upper − dual)/upper` are at most `tol`, where `upper = value/ℓ_min^p`.
/// An empty or unreachable family has modulus 0.
pub fn p_modulus(family: &CurveFamily, opts: &SolverOptions) -> Result<ModulusResult> {
    opts.validate()?;
    let domain = family.domain_arc().clone();
    let n = domain.len();
    let p = opts.p;
    let hn = domain.cell_measure();
    if family.source().is_empty() || family.sink().is_empty() {
        return Ok(ModulusResult::empty(domain, p));
    }
    let ones = vec![1.0; n];
    let seed_tree = shortest_path_tree(family, &ones, f64::INFINITY);
    if seed_tree.settled_sinks.is_empty() {
        return Ok(ModulusResult::empty(domain, p));
    }

    let mut bush = Bush::new(family, p, &seed_tree);
    drop(seed_tree);
    let mut best: Option<(ModulusResult, f64)> = None;
    let mut iterations = 0;
    let mut converged = false;
    let mut last_check = 0;
    let start = std::time::Instant::now();
    while iterations < opts.max_iter {
        iterations += 1;
        bush.refresh_loads();
        bush.sort();
        bush.label();
        for _ in 0..opts.inner_iter {
            let (umin, _) = bush.spread();
            let moved = bush.shift_pass(0.05 * opts.tol * umin);
            bush.label();
            if moved == 0 {
                break;
            }
        }
        let (umin, spread) = bush.spread();
        let settled = spread <= 0.25 * opts.tol * umin;
        let out_of_time = opts.time_limit.is_some_and(|t| start.elapsed().as_secs_f64() >= t);
        let last = out_of_time || iterations == opts.max_iter;
        if settled || last || iterations - last_check >= 10 {
            last_check = iterations;
            bush.refresh_loads();
            let (dual, scale) = flow_bound(bush.loads(), p, hn);
            let rho = density_from_loads(bush.loads(), p, hn, scale);
            let tree = shortest_path_tree(family, &rho, f64::NEG_INFINITY);
            let lmin = tree.settled_sinks.first().map(|&s| tree.dist[s as usize]).unwrap_or(f64::INFINITY);
            let value = energy(&rho, p, hn);
            let dual = dual.min(value);
            let upper = if lmin > 0.0 { value / lmin.powf(p) } else { f64::INFINITY };
            let done = lmin >= 1.0 - opts.tol && (value - dual) / value <= opts.tol && (upper - dual) / upper <= opts.tol;
            let candidate = ModulusResult {
                value,
                dual_lower_bound: dual,
                upper_bound: upper,
                rho_star: DensityField { domain: domain.clone(), values: rho },
                active_curves: Vec::new(),
                iterations,
                min_curve_length: lmin,
                p,
                converged: done,
            };
            let width = (upper - dual) / upper;
            if best.as_ref().map_or(true, |(_, w)| width <= *w) {
                best = Some((candidate, scale));
            }
            if done {
                converged = true;
                break;
            }
            if last {
                break;
            }
        }
        bush.sort();
        bush.label();
        bush.grow();
    }

    let (mut result, scale) = best.expect("at least one certificate round");
    result.iterations = iterations;
    result.converged = converged;
    result.active_curves = bush
        .decompose(opts.max_curves)
        .into_iter()
        .filter(|(_, amount)| amount * scale > 0.0)
        .map(|(cells, _)| Curve::from_trusted(cells))
        .collect();
    Ok(result)
}

/// Modulus of the annulus family `Γ(S(x0,r1), S(x0,r2), A(x0,r1,r2))`
/// clipped to `domain`.
pub fn ring_modulus(x0: Point, r1: f64, r2: f64, domain: &DiscreteDomain, opts: &SolverOptions) -> Result<ModulusResult> {
    let ann = Annulus::new(x0, r1, r2)?;
    let family = CurveFamily::annulus(domain, &ann)?;
    p_modulus(&family, opts)
}

/// Closed-form p-modulus of the family joining the boundary spheres of
/// `A(x0, r1, r2)` in R^n.
pub fn ring_modulus_closed_form(n: usize, p: f64, r1: f64, r2: f64) -> f64 {
    let omega = sphere_area(n);
    let nf = n as f64;
    if (p - nf).abs() < 1e-12 {
        omega * (r2 / r1).ln().powf(1.0 - nf)
    } else {
        let a = (p - nf) / (p - 1.0);
        omega * (a / (r2.powf(a) - r1.powf(a))).powf(p - 1.0)
    }
}
