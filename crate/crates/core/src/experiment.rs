//! Experiment configs (TOML) and their execution: every command composes the
//! library modules, returns CSV/JSON artifacts plus a summary, and never
//! touches the filesystem itself except through [`write_outputs`].
//!
//! CSV and JSON artifacts depend only on the config and the seed; the only
//! wall-clock value (a timestamp) lives in the summary header.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bounds::{
    combined_inequality, estimate_loewner_constant, estimate_qed_constant, image_boundary_distance, stratified_pairs, verify_lower_bound,
    BoundParams, BoundsError, LoewnerSampling, Theorem1Setup,
};
use crate::convergence::{
    ball_inclusion, discreteness_probe, frozen_bound_limit_check, injectivity_probe, local_uniform_gap, ConvergenceError, Limit, MappingSequence,
    SequenceRule,
};
use crate::curves::{CurveError, CurveFamily};
use crate::geometry::{rasterize, Annulus, Continuum, DiscreteDomain, GeometryError, Point, Region, Shape};
use crate::modulus::{p_modulus, ring_modulus_closed_form, ModulusError, SolverOptions};
use crate::parallel::{self, Execution};
use crate::qmaps::{check_ring_inequality, q_of, stratified_ring_tuples, MappingSpec, QField, QmapError, TestDensity};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config{}: {message}", line.map(|l| format!(" (line {l})")).unwrap_or_default())]
    ConfigInvalid { message: String, line: Option<usize> },
    #[error("{context}: {source}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Curve(#[from] CurveError),
    #[error(transparent)]
    Modulus(#[from] ModulusError),
    #[error(transparent)]
    Qmap(#[from] QmapError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
    #[error(transparent)]
    Convergence(#[from] ConvergenceError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Modulus,
    VerifyRing,
    Bound,
    Loewner,
    Qed,
    Converge,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Modulus => "modulus",
            Command::VerifyRing => "verify-ring",
            Command::Bound => "bound",
            Command::Loewner => "loewner",
            Command::Qed => "qed",
            Command::Converge => "converge",
        }
    }
}

/// Serializable form of [`Shape`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ShapeSpec {
    Disk { center: Vec<f64>, radius: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    Annulus { center: Vec<f64>, r_inner: f64, r_outer: f64 },
    HalfPlane { lo: Vec<f64>, hi: Vec<f64>, point: Vec<f64>, normal: Vec<f64> },
    Polygon { vertices: Vec<Vec<f64>> },
    SlitBox { lo: Vec<f64>, hi: Vec<f64>, a: Vec<f64>, b: Vec<f64>, half_width: f64 },
}

impl ShapeSpec {
    pub fn to_shape(&self) -> Result<Shape> {
        let p = |v: &[f64]| Point::from_slice(v);
        let shape = match self {
            ShapeSpec::Disk { center, radius } | ShapeSpec::Ball { center, radius } => Shape::Ball { center: p(center)?, radius: *radius },
            ShapeSpec::Box { lo, hi } => Shape::Box { lo: p(lo)?, hi: p(hi)? },
            ShapeSpec::Annulus { center, r_inner, r_outer } => Shape::Annulus(Annulus::new(p(center)?, *r_inner, *r_outer)?),
            ShapeSpec::HalfPlane { lo, hi, point, normal } => {
                Shape::HalfPlaneClipped { lo: p(lo)?, hi: p(hi)?, point: p(point)?, normal: p(normal)? }
            }
            ShapeSpec::Polygon { vertices } => Shape::Polygon(vertices.iter().map(|v| p(v)).collect::<Result<_, _>>()?),
            ShapeSpec::SlitBox { lo, hi, a, b, half_width } => {
                Shape::SlitBox { lo: p(lo)?, hi: p(hi)?, a: p(a)?, b: p(b)?, half_width: *half_width }
            }
        };
        shape.validate()?;
        Ok(shape)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    #[serde(flatten)]
    pub shape: ShapeSpec,
    pub resolution: f64,
}

impl DomainSpec {
    pub fn build(&self) -> Result<Arc<DiscreteDomain>> {
        Ok(Arc::new(rasterize(&self.shape.to_shape()?, self.resolution)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub p: Option<f64>,
    pub tol: f64,
    pub max_iter: usize,
    pub time_limit: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = SolverOptions::default();
        Self { p: None, tol: d.tol, max_iter: d.max_iter, time_limit: None }
    }
}

impl SolverConfig {
    fn options(&self, p: f64) -> SolverOptions {
        SolverOptions { p: self.p.unwrap_or(p), tol: self.tol, max_iter: self.max_iter, time_limit: self.time_limit, ..SolverOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FamilySpec {
    Annulus { center: Vec<f64>, r_inner: f64, r_outer: f64 },
    Joining { e: Vec<Vec<f64>>, f: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModulusConfig {
    pub family: FamilySpec,
    /// Allowed relative error against the closed form, when there is one.
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn default_rel_tol() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileName {
    Uniform,
    LogRadial,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingCase {
    pub x0: Vec<f64>,
    pub r1: f64,
    pub r2: f64,
    pub profile: ProfileName,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RingConfig {
    #[serde(default)]
    pub cases: Vec<RingCase>,
    /// Extra stratified random cases.
    #[serde(default)]
    pub batch: usize,
    /// Largest inner radius of the random cases.
    #[serde(default = "default_r_max")]
    pub r_max: f64,
    pub q: Option<f64>,
    /// Relative slack: a case holds when `lhs ≤ rhs (1 + tol)`.
    #[serde(default = "default_ring_tol")]
    pub tol: f64,
    /// Optional `cell,q` CSV replacing the closed-form distortion.
    pub q_table: Option<PathBuf>,
}

fn default_r_max() -> f64 {
    0.35
}

fn default_ring_tol() -> f64 {
    0.01
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundConfig {
    pub k: ShapeSpec,
    pub delta: f64,
    pub a_qed: f64,
    pub c_loewner: f64,
    /// Defaults to `‖Q‖₁` of the map on the domain.
    pub q_l1: Option<f64>,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_bound_tol")]
    pub tol: f64,
    /// Pairs for the modulus chain (0 skips it).
    #[serde(default)]
    pub chain_pairs: usize,
}

fn default_pairs() -> usize {
    200
}

fn default_bound_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoewnerConfig {
    pub t_grid: Vec<f64>,
    #[serde(default = "default_orientations")]
    pub orientations: usize,
    #[serde(default = "default_offsets")]
    pub offsets: usize,
    #[serde(default = "default_sizes")]
    pub sizes: Vec<f64>,
}

fn default_orientations() -> usize {
    LoewnerSampling::default().orientations
}

fn default_offsets() -> usize {
    LoewnerSampling::default().offsets
}

fn default_sizes() -> Vec<f64> {
    LoewnerSampling::default().sizes
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuaPair {
    pub e: Vec<Vec<f64>>,
    pub f: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QedConfig {
    pub pairs: Vec<ContinuaPair>,
    /// Every ratio must lie in `[range[0], range[1]]` for a pass.
    pub range: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceConfig {
    pub dim: usize,
    #[serde(flatten)]
    pub rule: SequenceRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub sequence: SequenceConfig,
    pub k: ShapeSpec,
    pub m_list: Vec<usize>,
    /// Members whose gap to the limit is reported.
    #[serde(default)]
    pub gap_m: Vec<usize>,
    pub delta: f64,
    pub a_qed: f64,
    pub c_loewner: f64,
    pub q_l1: f64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_bound_tol")]
    pub tol: f64,
    #[serde(default = "default_clusters")]
    pub clusters: usize,
    /// Radius of the ball-inclusion check (0 skips it).
    #[serde(default)]
    pub ball_radius: f64,
}

fn default_clusters() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    #[serde(default)]
    pub seed: u64,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
    pub domain: Option<DomainSpec>,
    pub ambient: Option<DomainSpec>,
    pub map: Option<MappingSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub modulus: Option<ModulusConfig>,
    pub ring: Option<RingConfig>,
    pub bound: Option<BoundConfig>,
    pub loewner: Option<LoewnerConfig>,
    pub qed: Option<QedConfig>,
    pub converge: Option<ConvergeConfig>,
}

/// 1-based line of the first `key =` assignment in `src`, also inside
/// inline tables.
fn line_of(src: &str, key: &str) -> Option<usize> {
    src.lines()
        .position(|l| {
            l.match_indices(key).any(|(i, _)| {
                let before = l[..i].chars().next_back();
                let boundary = before.is_none_or(|c| c.is_whitespace() || c == '{' || c == ',');
                boundary && l[i + key.len()..].trim_start().starts_with('=')
            })
        })
        .map(|i| i + 1)
}

fn invalid(message: impl Into<String>, line: Option<usize>) -> ExperimentError {
    ExperimentError::ConfigInvalid { message: message.into(), line }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending line when known.
    pub fn from_toml(src: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(src).map_err(|e| {
            let line = e.span().map(|s| src[..s.start.min(src.len())].lines().count().max(1));
            invalid(e.message().to_string(), line)
        })?;
        cfg.validate(src)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let src = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { context: format!("reading {}", path.display()), source })?;
        Self::from_toml(&src)
    }

    fn validate(&self, src: &str) -> Result<()> {
        let need = |ok: bool, what: &str| if ok { Ok(()) } else { Err(invalid(format!("`{}` needs {what}", self.command.name()), None)) };
        let wrap = |e: ExperimentError, key: &str| match e {
            ExperimentError::ConfigInvalid { .. } => e,
            other => invalid(other.to_string(), line_of(src, key)),
        };
        if let Some(d) = &self.domain {
            if !(d.resolution > 0.0 && d.resolution.is_finite()) {
                return Err(invalid("resolution must be positive", line_of(src, "resolution")));
            }
            d.shape.to_shape().map_err(|e| wrap(e, shape_key(&d.shape)))?;
        }
        if let Some(a) = &self.ambient {
            a.shape.to_shape().map_err(|e| wrap(e, shape_key(&a.shape)))?;
        }
        if let Some(m) = &self.map {
            m.validate().map_err(|e| wrap(e.into(), "kind"))?;
        }
        if !(self.solver.tol > 0.0 && self.solver.tol < 1.0) {
            return Err(invalid("solver tol must lie in (0, 1)", line_of(src, "tol")));
        }
        if let Some(p) = self.solver.p {
            if !(p > 1.0 && p.is_finite()) {
                return Err(invalid("solver p must exceed 1", line_of(src, "p")));
            }
        }
        if self.threads == Some(0) {
            return Err(invalid("threads must be at least 1", line_of(src, "threads")));
        }
        match self.command {
            Command::Modulus => {
                need(self.domain.is_some(), "[domain]")?;
                let m = self.modulus.as_ref().ok_or_else(|| invalid("`modulus` needs [modulus]", None))?;
                if let FamilySpec::Annulus { center, r_inner, r_outer } = &m.family {
                    let c = Point::from_slice(center).map_err(|e| wrap(e.into(), "center"))?;
                    Annulus::new(c, *r_inner, *r_outer).map_err(|e| wrap(e.into(), "r_inner"))?;
                }
            }
            Command::VerifyRing => {
                need(self.domain.is_some() && self.map.is_some(), "[domain] and [map]")?;
                let r = self.ring.as_ref().ok_or_else(|| invalid("`verify-ring` needs [ring]", None))?;
                for c in &r.cases {
                    if !(c.r1 > 0.0 && c.r1 < c.r2) {
                        return Err(invalid(format!("annulus needs 0 < r1 < r2 (got r1 = {}, r2 = {})", c.r1, c.r2), line_of(src, "r1")));
                    }
                }
                if r.cases.is_empty() && r.batch == 0 {
                    return Err(invalid("[ring] needs cases or a batch size", None));
                }
            }
            Command::Bound => {
                need(self.domain.is_some() && self.map.is_some(), "[domain] and [map]")?;
                let b = self.bound.as_ref().ok_or_else(|| invalid("`bound` needs [bound]", None))?;
                b.k.to_shape().map_err(|e| wrap(e, "k"))?;
            }
            Command::Loewner => {
                need(self.ambient.is_some(), "[ambient]")?;
                let l = self.loewner.as_ref().ok_or_else(|| invalid("`loewner` needs [loewner]", None))?;
                if l.t_grid.iter().any(|t| !(*t > 0.0 && *t <= 1.0)) {
                    return Err(invalid("t_grid values must lie in (0, 1]", line_of(src, "t_grid")));
                }
            }
            Command::Qed => {
                need(self.domain.is_some() && self.ambient.is_some(), "[domain] and [ambient]")?;
                let q = self.qed.as_ref().ok_or_else(|| invalid("`qed` needs [qed]", None))?;
                if q.pairs.is_empty() {
                    return Err(invalid("[qed] needs at least one pair", None));
                }
            }
            Command::Converge => {
                need(self.domain.is_some(), "[domain]")?;
                let c = self.converge.as_ref().ok_or_else(|| invalid("`converge` needs [converge]", None))?;
                c.k.to_shape().map_err(|e| wrap(e, "k"))?;
                if c.m_list.is_empty() || c.m_list.contains(&0) || c.gap_m.contains(&0) {
                    return Err(invalid("member indices start at 1", line_of(src, "m_list")));
                }
            }
        }
        Ok(())
    }
}

fn shape_key(s: &ShapeSpec) -> &'static str {
    match s {
        ShapeSpec::Annulus { .. } => "r_inner",
        ShapeSpec::Disk { .. } | ShapeSpec::Ball { .. } => "radius",
        ShapeSpec::Polygon { .. } => "vertices",
        _ => "lo",
    }
}

/// What a run produced.
#[derive(Debug)]
pub struct RunOutcome {
    pub passed: bool,
    /// Summary body (inputs, constants with provenance, verdict); the
    /// timestamped header is added by [`write_outputs`].
    pub summary: String,
    /// `(file name, contents)`, in emission order.
    pub files: Vec<(String, Vec<u8>)>,
}

struct Report {
    lines: String,
    files: Vec<(String, Vec<u8>)>,
}

impl Report {
    fn new() -> Self {
        Self { lines: String::new(), files: Vec::new() }
    }

    fn line(&mut self, s: impl AsRef<str>) {
        self.lines.push_str(s.as_ref());
        self.lines.push('\n');
    }

    fn csv<S: Serialize>(&mut self, name: &str, rows: &[S]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Io { context: format!("buffering {name}"), source: e.into_error() })?;
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    fn json<S: Serialize>(&mut self, name: &str, value: &S) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| invalid(format!("serializing {name}: {e}"), None))?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    fn finish(self, passed: bool) -> RunOutcome {
        let mut summary = self.lines;
        let _ = writeln!(summary, "verdict: {}", if passed { "PASS" } else { "FAIL" });
        RunOutcome { passed, summary, files: self.files }
    }
}

fn measured(h: f64) -> String {
    format!("[measured on grid h={h:.6}]")
}

fn points(v: &[Vec<f64>]) -> Result<Vec<Point>> {
    v.iter().map(|p| Point::from_slice(p).map_err(ExperimentError::from)).collect()
}

fn continuum(label: &str, v: &[Vec<f64>], step: f64) -> Result<Continuum> {
    Ok(Continuum::polyline(label, &points(v)?, step)?)
}

fn k_points(domain: &DiscreteDomain, k: &ShapeSpec) -> Result<Vec<Point>> {
    let shape = k.to_shape()?;
    let pts: Vec<Point> = domain.centers().into_iter().filter(|p| shape.contains(p)).collect();
    if pts.is_empty() {
        return Err(invalid("K contains no cell of the domain", None));
    }
    Ok(pts)
}

/// Runs `cfg` on a worker pool of `cfg.threads` workers.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutcome> {
    let exec = if cfg.threads == Some(1) { Execution::Sequential } else { Execution::Parallel };
    parallel::with_threads(cfg.threads, || {
        let mut rep = Report::new();
        rep.line(format!("command: {}", cfg.command.name()));
        rep.line(format!("seed: {}", cfg.seed));
        let echo = toml::to_string(cfg).map_err(|e| invalid(format!("echoing config: {e}"), None))?;
        rep.line("config:");
        for l in echo.lines() {
            rep.line(format!("    {l}"));
        }
        let passed = match cfg.command {
            Command::Modulus => run_modulus(cfg, &mut rep)?,
            Command::VerifyRing => run_ring(cfg, &mut rep, exec)?,
            Command::Bound => run_bound(cfg, &mut rep, exec)?,
            Command::Loewner => run_loewner(cfg, &mut rep, exec)?,
            Command::Qed => run_qed(cfg, &mut rep, exec)?,
            Command::Converge => run_converge(cfg, &mut rep, exec)?,
        };
        Ok(rep.finish(passed))
    })
}

#[derive(Serialize)]
struct ModulusRow {
    family: String,
    n: usize,
    p: f64,
    resolution: f64,
    cells: usize,
    value: f64,
    dual_lower_bound: f64,
    upper_bound: f64,
    relative_gap: f64,
    iterations: usize,
    converged: bool,
    closed_form: Option<f64>,
    relative_error: Option<f64>,
}

fn run_modulus(cfg: &ExperimentConfig, rep: &mut Report) -> Result<bool> {
    let domain = cfg.domain.as_ref().expect("validated").build()?;
    let mc = cfg.modulus.as_ref().expect("validated");
    let n = domain.dim();
    let opts = cfg.solver.options(n as f64);
    let h = domain.spacing();
    let (family, label, closed) = match &mc.family {
        FamilySpec::Annulus { center, r_inner, r_outer } => {
            let ann = Annulus::new(Point::from_slice(center)?, *r_inner, *r_outer)?;
            let fam = CurveFamily::annulus(&domain, &ann)?;
            (fam, format!("annulus({r_inner},{r_outer})"), Some(ring_modulus_closed_form(n, opts.p, *r_inner, *r_outer)))
        }
        FamilySpec::Joining { e, f } => {
            let fam = CurveFamily::joining(domain.clone(), &continuum("E", e, h / 8.0)?, &continuum("F", f, h / 8.0)?)?;
            (fam, "joining".to_string(), None)
        }
    };
    let start = std::time::Instant::now();
    let r = p_modulus(&family, &opts)?;
    let secs = start.elapsed().as_secs_f64();
    let rel = closed.map(|c| (r.value - c).abs() / c);
    rep.line(format!("cells: {}", domain.len()));
    rep.line(format!("modulus: {:.9} {}", r.value, measured(h)));
    rep.line(format!("dual lower bound: {:.9} {}", r.dual_lower_bound, measured(h)));
    rep.line(format!("upper bound: {:.9} {}", r.upper_bound, measured(h)));
    rep.line(format!("relative gap: {:.3e} (tolerance {:.1e}) {}", r.relative_gap(), opts.tol, measured(h)));
    rep.line(format!("solve time: {secs:.2} s"));
    if let (Some(c), Some(e)) = (closed, rel) {
        rep.line(format!("closed form: {c:.9} [closed form]"));
        rep.line(format!("relative error: {e:.4} (allowed {})", mc.rel_tol));
    }
    let passed = r.converged && rel.is_none_or(|e| e <= mc.rel_tol);
    rep.csv(
        "moduli.csv",
        &[ModulusRow {
            family: label,
            n,
            p: opts.p,
            resolution: domain.resolution(),
            cells: domain.len(),
            value: r.value,
            dual_lower_bound: r.dual_lower_bound,
            upper_bound: r.upper_bound,
            relative_gap: r.relative_gap(),
            iterations: r.iterations,
            converged: r.converged,
            closed_form: closed,
            relative_error: rel,
        }],
    )?;
    let mut density = Vec::new();
    r.rho_star.write_csv(&mut density).map_err(|source| ExperimentError::Io { context: "density.csv".into(), source })?;
    rep.files.push(("density.csv".into(), density));
    rep.json("report.json", &r.summary())?;
    Ok(passed)
}

#[derive(Serialize)]
struct RingRow {
    x0: String,
    r1: f64,
    r2: f64,
    profile: String,
    lhs: f64,
    rhs: f64,
    margin: f64,
    relative_margin: f64,
    holds: bool,
    image_resolution: f64,
}

fn run_ring(cfg: &ExperimentConfig, rep: &mut Report, exec: Execution) -> Result<bool> {
    let domain = cfg.domain.as_ref().expect("validated").build()?;
    let map = cfg.map.as_ref().expect("validated");
    let rc = cfg.ring.as_ref().expect("validated");
    let n = domain.dim();
    let opts = cfg.solver.options(n as f64);
    let q = rc.q.unwrap_or(n as f64);
    let (q_field, q_tag) = match &rc.q_table {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|source| ExperimentError::Io { context: format!("reading {}", path.display()), source })?;
            (QField::from_csv(domain.clone(), file, 1.0)?, "[measured]".to_string())
        }
        None => (q_of(map, domain.clone())?, "[closed form]".to_string()),
    };
    let mut cases = Vec::new();
    for c in &rc.cases {
        let eta = match c.profile {
            ProfileName::Uniform => TestDensity::uniform(c.r1, c.r2)?,
            ProfileName::LogRadial => TestDensity::log_radial(c.r1, c.r2)?,
        };
        cases.push((Point::from_slice(&c.x0)?, c.r1, c.r2, eta));
    }
    if rc.batch > 0 {
        for t in stratified_ring_tuples(&domain, rc.batch, rc.r_max, cfg.seed)? {
            cases.push((t.x0, t.r1, t.r2, t.eta));
        }
    }
    let reports = parallel::try_map(exec, &cases, |(x0, r1, r2, eta)| {
        check_ring_inequality(map, &q_field, *x0, *r1, *r2, eta, opts.p, q, rc.tol, &opts)
    })?;
    rep.line(format!("map: {}", map.name()));
    rep.line(format!("Q: {} with ‖Q‖₁ = {:.6} {q_tag}", map.name(), q_field.l1_norm()));
    rep.line(format!("cases: {}", reports.len()));
    let rows: Vec<RingRow> = reports
        .iter()
        .map(|r| RingRow {
            x0: format!("{:?}", r.x0),
            r1: r.r1,
            r2: r.r2,
            profile: r.profile.clone(),
            lhs: r.lhs,
            rhs: r.rhs,
            margin: r.margin,
            relative_margin: r.margin / r.rhs,
            holds: r.holds,
            image_resolution: r.image_resolution,
        })
        .collect();
    let worst = rows.iter().map(|r| r.relative_margin).fold(f64::INFINITY, f64::min);
    let failing = rows.iter().filter(|r| !r.holds).count();
    rep.line(format!("lhs: image-grid modulus {}", measured(domain.spacing())));
    rep.line("rhs: cell quadrature of Q η^q [closed form integrand, measured quadrature]");
    rep.line(format!("worst relative margin (rhs − lhs)/rhs: {worst:.4}"));
    rep.line(format!("failing cases: {failing} (tolerance {})", rc.tol));
    rep.csv("margins.csv", &rows)?;
    rep.json("report.json", &reports)?;
    Ok(failing == 0)
}

#[derive(Serialize)]
struct WitnessRow {
    x: String,
    y: String,
    distance: f64,
    image_distance: f64,
    psi: f64,
    ratio: f64,
}

impl From<&crate::bounds::Witness> for WitnessRow {
    fn from(w: &crate::bounds::Witness) -> Self {
        Self { x: format!("{:?}", w.x), y: format!("{:?}", w.y), distance: w.distance, image_distance: w.image_distance, psi: w.psi, ratio: w.ratio }
    }
}

#[derive(Serialize)]
struct ChainRow {
    x: String,
    y: String,
    distance: f64,
    image_distance: f64,
    lhs_modulus: f64,
    rhs_bound: f64,
    chain_holds: bool,
    combined_lhs: f64,
    combined_rhs: f64,
    combined_holds: bool,
}

fn run_bound(cfg: &ExperimentConfig, rep: &mut Report, exec: Execution) -> Result<bool> {
    let domain = cfg.domain.as_ref().expect("validated").build()?;
    let map = cfg.map.as_ref().expect("validated");
    let bc = cfg.bound.as_ref().expect("validated");
    let n = domain.dim();
    let k = k_points(&domain, &bc.k)?;
    let q_closed = q_of(map, domain.clone())?.l1_norm();
    let q_l1 = bc.q_l1.unwrap_or(q_closed);
    let params = BoundParams::new(n, bc.delta, bc.a_qed, bc.c_loewner, q_l1)?;
    rep.line(format!("map: {}", map.name()));
    rep.line(format!("delta: {} [assumed]", bc.delta));
    rep.line(format!("A: {} [assumed]", bc.a_qed));
    rep.line(format!("C: {} [assumed]", bc.c_loewner));
    rep.line(format!("‖Q‖₁: {q_l1:.6} {}", if bc.q_l1.is_some() { "[assumed]" } else { "[closed form]" }));
    rep.line(format!("K cells: {}", k.len()));
    let report = match verify_lower_bound(map, &domain, &k, &params, bc.pairs, cfg.seed, bc.tol) {
        Ok(r) => r,
        Err(e @ BoundsError::ClassViolation { .. }) => {
            rep.line(format!("class condition: {e}"));
            rep.csv::<WitnessRow>("witnesses.csv", &[])?;
            return Ok(false);
        }
        Err(e) => return Err(e.into()),
    };
    rep.line(format!("image boundary distance: {:.6} {}", report.image_boundary_distance, measured(domain.spacing())));
    rep.line(format!("pairs: {}, min ratio |f(x)−f(y)|/ψ: {:.6e}", report.pairs, report.min_ratio));
    rep.line(format!("witnesses: {}", report.failures.len()));
    rep.csv("witnesses.csv", &report.failures.iter().map(WitnessRow::from).collect::<Vec<_>>())?;
    let mut passed = report.passed;
    if bc.chain_pairs > 0 {
        let setup = Theorem1Setup::new(map, domain.clone())?;
        let opts = cfg.solver.options(n as f64);
        let pairs = stratified_pairs(&k, bc.chain_pairs, cfg.seed.wrapping_add(1));
        let chains = parallel::map(exec, &pairs, |&(i, j)| setup.chain(k[i], k[j], bc.delta, &opts, 1e-3));
        let mut rows = Vec::new();
        let mut skipped = 0;
        for c in chains {
            match c {
                Ok(c) => {
                    let (cl, cr, ch) = combined_inequality(bc.c_loewner, bc.a_qed, bc.delta, c.image_distance, q_l1, c.distance, n);
                    rows.push(ChainRow {
                        x: format!("{:?}", c.x),
                        y: format!("{:?}", c.y),
                        distance: c.distance,
                        image_distance: c.image_distance,
                        lhs_modulus: c.lhs_modulus,
                        rhs_bound: c.rhs_bound,
                        chain_holds: c.holds,
                        combined_lhs: cl,
                        combined_rhs: cr,
                        combined_holds: ch,
                    });
                }
                Err(BoundsError::Qmap(QmapError::DeltaUnreachable { .. })) => skipped += 1,
                Err(e) => return Err(e.into()),
            }
        }
        let ok = rows.iter().all(|r| r.chain_holds && r.combined_holds);
        rep.line(format!(
            "chain pairs: {} evaluated, {skipped} skipped (δ/2 unreachable), all hold: {ok} {}",
            rows.len(),
            measured(setup.image.spacing())
        ));
        rep.csv("chain.csv", &rows)?;
        passed &= ok;
    }
    rep.json("report.json", &report)?;
    Ok(passed)
}

#[derive(Serialize)]
struct EnvelopeRow {
    t: f64,
    envelope: f64,
    c_log: f64,
    below: bool,
}

fn run_loewner(cfg: &ExperimentConfig, rep: &mut Report, exec: Execution) -> Result<bool> {
    let ambient = cfg.ambient.as_ref().expect("validated").build()?;
    let lc = cfg.loewner.as_ref().expect("validated");
    let sampling = LoewnerSampling { orientations: lc.orientations, offsets: lc.offsets, sizes: lc.sizes.clone() };
    let opts = cfg.solver.options(ambient.dim() as f64);
    let est = estimate_loewner_constant(&ambient, &lc.t_grid, &sampling, &opts, exec)?;
    let mut rows: Vec<EnvelopeRow> = est
        .envelope
        .iter()
        .map(|&(t, m)| {
            let c_log = est.c_hat * (1.0 / t).ln();
            EnvelopeRow { t, envelope: m, c_log, below: c_log <= m * (1.0 + 1e-12) }
        })
        .collect();
    rows.sort_by(|a, b| b.t.total_cmp(&a.t));
    let positive = rows.iter().all(|r| r.envelope > 0.0);
    let monotone = rows.windows(2).all(|w| w[1].envelope <= w[0].envelope * (1.0 + 1e-9));
    let shape = rows.iter().filter(|r| r.t <= est.delta0_hat).all(|r| r.below);
    let h = ambient.spacing();
    rep.line(format!("samples: {}", est.samples.len()));
    rep.line(format!("C estimate: {:.6} [estimated constant] {}", est.c_hat, measured(h)));
    rep.line(format!("delta0 estimate: {} [estimated constant]", est.delta0_hat));
    rep.line(format!("envelope positive: {positive}, non-increasing in t ↓: {monotone}, C log(1/t) below envelope for t ≤ δ0: {shape}"));
    rep.csv("envelope.csv", &rows)?;
    rep.csv("loewner_samples.csv", &est.samples)?;
    rep.json("report.json", &est)?;
    Ok(positive && monotone && shape)
}

fn run_qed(cfg: &ExperimentConfig, rep: &mut Report, exec: Execution) -> Result<bool> {
    let domain = cfg.domain.as_ref().expect("validated").build()?;
    let ambient = cfg.ambient.as_ref().expect("validated").build()?;
    let qc = cfg.qed.as_ref().expect("validated");
    let step = domain.spacing() / 8.0;
    let pairs = qc
        .pairs
        .iter()
        .map(|p| Ok((continuum("E", &p.e, step)?, continuum("F", &p.f, step)?)))
        .collect::<Result<Vec<_>>>()?;
    let opts = cfg.solver.options(domain.dim() as f64);
    let est = estimate_qed_constant(&domain, &ambient, &pairs, &opts, exec)?;
    let in_range = qc.range.is_none_or(|[lo, hi]| est.samples.iter().all(|s| s.ratio >= lo && s.ratio <= hi));
    rep.line(format!("pairs: {}", est.samples.len()));
    rep.line(format!("A estimate: {:.6} [estimated constant] {}", est.a_hat, measured(domain.spacing())));
    if let Some([lo, hi]) = qc.range {
        rep.line(format!("ratios within [{lo}, {hi}]: {in_range}"));
    }
    rep.csv("qed.csv", &est.samples)?;
    rep.json("report.json", &est)?;
    Ok(in_range)
}

#[derive(Serialize)]
struct GapRow {
    m: usize,
    gap: f64,
}

fn run_converge(cfg: &ExperimentConfig, rep: &mut Report, exec: Execution) -> Result<bool> {
    let domain = cfg.domain.as_ref().expect("validated").build()?;
    let cc = cfg.converge.as_ref().expect("validated");
    let dim = cc.sequence.dim;
    let seq = match &cc.sequence.rule {
        SequenceRule::RadialStretch { c } => MappingSequence::radial_stretch(dim, *c)?,
        SequenceRule::Collapse => MappingSequence::collapse(dim)?,
        SequenceRule::Constant { map } => MappingSequence::constant(map.clone())?,
    };
    let k = k_points(&domain, &cc.k)?;
    let h = domain.spacing();
    let gaps = cc.gap_m.iter().map(|&m| Ok(GapRow { m, gap: local_uniform_gap(&seq, m, &k)? })).collect::<Result<Vec<_>>>()?;
    for g in &gaps {
        rep.line(format!("gap m={}: {:.6e} {}", g.m, g.gap, measured(h)));
    }
    rep.csv("gaps.csv", &gaps)?;
    let params = BoundParams::new(dim, cc.delta, cc.a_qed, cc.c_loewner, cc.q_l1)?;
    rep.line(format!("frozen params: delta {} A {} C {} ‖Q‖₁ {} [assumed]", cc.delta, cc.a_qed, cc.c_loewner, cc.q_l1));
    let frozen = match frozen_bound_limit_check(&seq, &domain, &k, &params, &cc.m_list, cc.pairs, cfg.seed, cc.tol, exec) {
        Ok(r) => r,
        Err(ConvergenceError::MemberFailure { m, reason }) => {
            rep.line(format!("member failure at m = {m}: {reason}"));
            let ibd = image_boundary_distance(&seq.member(m)?, &domain, &k);
            rep.csv("members.csv", &[GapRow { m, gap: ibd }])?;
            return Ok(false);
        }
        Err(e) => return Err(e.into()),
    };
    rep.line(format!(
        "members pass: {}, weakest member ratio {:.6e}, limit ratio {:.6e}, inherited: {}",
        frozen.members.len(),
        frozen.min_member_ratio,
        frozen.limit.min_ratio,
        frozen.inherited
    ));
    rep.csv("members.csv", &frozen.members)?;
    let limit = seq.limit()?;
    let g = domain.restrict(|_, p| k.iter().any(|q| q.dist(p) < 0.5 * h))?;
    let disc = discreteness_probe(limit, &g, cc.clusters, exec)?;
    let inj = injectivity_probe(limit, &g, 100, exec)?;
    rep.line(format!("limit discreteness: {} over {} clusters {}", disc.passed, disc.clusters.len(), measured(h)));
    rep.line(format!("limit injectivity: {} collisions {}", inj.collision_count, measured(h)));
    rep.csv("fibers.csv", &disc.clusters.iter().map(FiberRow::from).collect::<Vec<_>>())?;
    rep.csv("collisions.csv", &inj.collisions.iter().map(CollisionRow::from).collect::<Vec<_>>())?;
    let mut passed = frozen.passed && disc.passed && inj.passed;
    if cc.ball_radius > 0.0 {
        if let Limit::Map { map } = limit {
            let b = ball_inclusion(map, &k[k.len() / 2], cc.ball_radius, h, cfg.seed)?;
            rep.line(format!("ball inclusion: radius {:.6}, {} samples, {} escapes", b.radius, b.samples, b.escapes));
            passed &= b.holds;
        }
    }
    Ok(passed)
}

#[derive(Serialize)]
struct FiberRow {
    seed: String,
    tolerance: f64,
    cells: usize,
    multiplicity: usize,
    max_component_diameter: f64,
}

impl From<&crate::convergence::FiberCluster> for FiberRow {
    fn from(c: &crate::convergence::FiberCluster) -> Self {
        Self {
            seed: format!("{:?}", c.seed),
            tolerance: c.tolerance,
            cells: c.cells,
            multiplicity: c.multiplicity,
            max_component_diameter: c.max_component_diameter,
        }
    }
}

#[derive(Serialize)]
struct CollisionRow {
    x1: String,
    x2: String,
    distance: f64,
    image_distance: f64,
}

impl From<&crate::convergence::Collision> for CollisionRow {
    fn from(c: &crate::convergence::Collision) -> Self {
        Self { x1: format!("{:?}", c.x1), x2: format!("{:?}", c.x2), distance: c.distance, image_distance: c.image_distance }
    }
}

/// Writes `summary.txt` (timestamped header, then the summary body) and all
/// artifacts into `dir`, one file at a time.
pub fn write_outputs(dir: &Path, outcome: &RunOutcome) -> Result<()> {
    let io = |context: String| move |source| ExperimentError::Io { context, source };
    std::fs::create_dir_all(dir).map_err(io(format!("creating {}", dir.display())))?;
    let stamp = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let summary = format!("modlab summary, generated at unix time {stamp}\n\n{}", outcome.summary);
    std::fs::write(dir.join("summary.txt"), summary).map_err(io("writing summary.txt".into()))?;
    for (name, bytes) in &outcome.files {
        std::fs::write(dir.join(name), bytes).map_err(io(format!("writing {name}")))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const RING: &str = r#"
command = "verify-ring"
seed = 3

[domain]
shape = "disk"
center = [0.0, 0.0]
radius = 1.0
resolution = 40

[map]
kind = "identity"
dim = 2

[solver]
tol = 1e-2

[ring]
tol = 0.1
cases = [{ x0 = [0.0, 0.0], r1 = 0.3, r2 = 0.6, profile = "log_radial" }]
"#;

    #[test]
    fn parses_and_runs_a_ring_check() {
        let cfg = ExperimentConfig::from_toml(RING).unwrap();
        let out = run(&cfg).unwrap();
        assert!(out.passed, "{}", out.summary);
        let names: Vec<&str> = out.files.iter().map(|f| f.0.as_str()).collect();
        assert_eq!(names, ["margins.csv", "report.json"]);
        assert!(out.summary.contains("verdict: PASS"));
    }

    #[test]
    fn reversed_radii_name_the_annulus_invariant() {
        let bad = RING.replace("r1 = 0.3, r2 = 0.6", "r1 = 0.6, r2 = 0.3");
        let err = ExperimentConfig::from_toml(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("0 < r1 < r2"), "{msg}");
        assert!(msg.contains("line 20"), "{msg}");
    }

    #[test]
    fn syntax_errors_carry_a_line() {
        let err = ExperimentConfig::from_toml("command = \"modulus\"\nseed = = 2\n").unwrap_err();
        match err {
            ExperimentError::ConfigInvalid { line, .. } => assert_eq!(line, Some(2)),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn unknown_keys_and_missing_sections_are_rejected() {
        assert!(ExperimentConfig::from_toml("command = \"modulus\"\ncolour = 1\n").is_err());
        let err = ExperimentConfig::from_toml("command = \"qed\"\n").unwrap_err();
        assert!(err.to_string().contains("[domain] and [ambient]"));
    }

    #[test]
    fn annulus_domain_shape_is_validated() {
        let src = "command = \"modulus\"\n[domain]\nshape = \"annulus\"\ncenter = [0.0, 0.0]\nr_inner = 2.0\nr_outer = 1.0\nresolution = 8\n[modulus]\nfamily = { kind = \"annulus\", center = [0.0, 0.0], r_inner = 1.0, r_outer = 2.0 }\n";
        match ExperimentConfig::from_toml(src).unwrap_err() {
            ExperimentError::ConfigInvalid { line, message } => {
                assert_eq!(line, Some(5));
                assert!(message.contains("annulus"), "{message}");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn line_lookup_ignores_prefixes() {
        assert_eq!(line_of("a = 1\nr1x = 2\nr1 = 3\n", "r1"), Some(3));
        assert_eq!(line_of("a = 1\n", "b"), None);
        assert_eq!(line_of("x = 0\nc = [{ q = 1, r1 = 2 }]\n", "r1"), Some(2));
    }
}
