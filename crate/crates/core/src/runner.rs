//! JSON-configured experiments.
//!
//! An [`ExperimentConfig`] fixes the operator, domain, spacing, source, the
//! field to analyze and the analysis parameters. Each verb writes CSV files
//! into the output directory; identical configs and seeds give identical
//! bytes (apart from the wall-clock column of `solve.csv`).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytic::{Factor, Separable};
use crate::analyze::{
    self, campanato_seminorm, check_difference_bound, check_poincare_halfball, check_vertical_poincare,
    cube_l2_norm, decay_from_energies, decay_profile, holder_exponent, pythagoras, Cube, DecayOptions,
    DecayReport, HolderOptions, HolderReport,
};
use crate::discretize::{
    assemble, energy_total, forward_difference, iterated_difference, EnergyMetric, Field, GridFunction,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{self, fmt17, FlatnessReport, GridDomain, KOCH_SIDES};
use crate::lattice::Point;
use crate::multiindex::{self, MultiIndex};
use crate::operator::{random_elliptic, CoefficientMatrix, EllipticOperator, ELLIPTICITY_RTOL};
use crate::solve::{polyharmonic_replacement, solve_dirichlet, SolveOptions, SolveReport, DEFAULT_MAX_ITER, DEFAULT_TOL};

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub label: String,
    #[serde(default)]
    pub seed: u64,
    /// Lattice spacing.
    pub h: f64,
    pub operator: OperatorSpec,
    pub domain: DomainSpec,
    #[serde(default)]
    pub source: SourceSpec,
    #[serde(default)]
    pub field: FieldSpec,
    #[serde(default)]
    pub solver: SolverSpec,
    #[serde(default)]
    pub decay: Option<DecaySpec>,
    #[serde(default)]
    pub holder: Option<HolderSpec>,
    #[serde(default)]
    pub flatness: Option<FlatnessSpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Directory that relative paths resolve against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Polyharmonic { m: u32 },
    /// Path to an operator JSON file.
    File(PathBuf),
    /// The operator JSON document inline.
    Coefficients(serde_json::Value),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Interval { a: f64, b: f64 },
    Ball { dim: usize, radius: f64 },
    HalfSpaceBall { dim: usize, radius: f64 },
    Cone { omega: f64, radius: f64 },
    Koch {
        delta: f64,
        depth: u32,
        radius: f64,
        #[serde(default = "default_sides")]
        sides: usize,
    },
    /// A previously saved domain raster.
    Raster { path: PathBuf },
}

fn default_sides() -> usize {
    KOCH_SIDES
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Constant(f64),
    Expression(String),
    /// A saved field raster on the same lattice.
    File(PathBuf),
}

impl Default for SourceSpec {
    fn default() -> Self {
        SourceSpec::Constant(1.0)
    }
}

/// The function the analysis verbs measure.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    /// Solve the Dirichlet problem first.
    #[default]
    Solve,
    /// Sample an expression on the inside nodes.
    Expression(String),
    /// Load a saved solution raster.
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_max_iter() -> usize {
    DEFAULT_MAX_ITER
}

impl Default for SolverSpec {
    fn default() -> Self {
        SolverSpec {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CenterSpec {
    /// This many exterior fringe nodes (outside nodes next to `Ω`, where the
    /// discrete solution is pinned to zero) at even strides.
    Boundary(usize),
    /// Explicit points (`N` coordinates each).
    Points(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySpec {
    pub centers: CenterSpec,
    /// Top radius `R` of the ladder.
    pub radius: f64,
    #[serde(default = "default_ratio")]
    pub ratio: f64,
    /// Largest rung index; the ladder has `rungs + 1` radii.
    pub rungs: usize,
    #[serde(default = "default_metric")]
    pub metric: EnergyMetric,
    /// Replace measured energies by `scale · r^exponent` (fit regression check).
    #[serde(default)]
    pub synthetic: Option<SyntheticProfile>,
}

fn default_ratio() -> f64 {
    0.5
}
fn default_metric() -> EnergyMetric {
    EnergyMetric::Euclidean
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticProfile {
    pub scale: f64,
    pub exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HolderSpec {
    /// Derivative order `k`; every `∂^α u` with `|α| = k` is measured.
    /// Defaults to `m − 1`.
    #[serde(default)]
    pub order: Option<u32>,
    #[serde(default = "default_pair_budget")]
    pub pair_budget: usize,
    /// Smallest pair separation; defaults to `4h`.
    #[serde(default)]
    pub min_sep: Option<f64>,
    /// Largest pair separation; defaults to half the domain extent.
    #[serde(default)]
    pub max_sep: Option<f64>,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
    /// Pointwise exponent at this point instead of a global one.
    #[serde(default)]
    pub anchor: Option<Vec<f64>>,
    /// Every this-many-th inside node serves as a Campanato center.
    #[serde(default = "default_center_stride")]
    pub campanato_stride: usize,
}

fn default_pair_budget() -> usize {
    200_000
}
fn default_bins() -> usize {
    12
}
fn default_quantile() -> f64 {
    0.95
}
fn default_center_stride() -> usize {
    16
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlatnessSpec {
    pub centers: CenterSpec,
    pub radii: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySpec {
    #[serde(default = "default_random_operators")]
    pub random_operators: usize,
    #[serde(default = "default_pythagoras_pairs")]
    pub pythagoras_pairs: usize,
    #[serde(default = "default_poincare_samples")]
    pub poincare_samples: usize,
    /// Coarse spacing of the half-ball Poincaré refinement study.
    #[serde(default = "default_halfball_h")]
    pub halfball_h: f64,
}

fn default_random_operators() -> usize {
    50
}
fn default_pythagoras_pairs() -> usize {
    10
}
fn default_poincare_samples() -> usize {
    100
}
fn default_halfball_h() -> f64 {
    1.0 / 16.0
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            random_operators: default_random_operators(),
            pythagoras_pairs: default_pythagoras_pairs(),
            poincare_samples: default_poincare_samples(),
            halfball_h: default_halfball_h(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        cfg.base_dir = base_dir.into();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        ExperimentConfig::from_json(&text, base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output)
    }

    pub fn dim(&self) -> usize {
        match &self.domain {
            DomainSpec::Interval { .. } => 1,
            DomainSpec::Ball { dim, .. } | DomainSpec::HalfSpaceBall { dim, .. } => *dim,
            DomainSpec::Cone { .. } | DomainSpec::Koch { .. } => 2,
            DomainSpec::Raster { .. } => 0,
        }
    }

    /// Field-level checks that do not need any file access.
    pub fn validate(&self) -> Result<()> {
        let positive = |field: &str, v: f64| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::config(field, format!("must be positive, got {v}")))
            }
        };
        if self.label.is_empty() || self.label.contains([',', '\n', '"']) {
            return Err(Error::config("label", "must be non-empty and free of commas, quotes and newlines"));
        }
        positive("h", self.h)?;
        match &self.operator {
            OperatorSpec::Polyharmonic { m } if *m == 0 || *m as usize > geometry::MARGIN => {
                return Err(Error::config(
                    "operator.polyharmonic.m",
                    format!("must be in 1..={}", geometry::MARGIN),
                ))
            }
            _ => {}
        }
        match &self.domain {
            DomainSpec::Interval { a, b } if !(b > a) => {
                return Err(Error::config("domain.b", "must exceed domain.a"))
            }
            DomainSpec::Ball { dim, radius } | DomainSpec::HalfSpaceBall { dim, radius } => {
                if !(1..=3).contains(dim) {
                    return Err(Error::config("domain.dim", "must be 1, 2 or 3"));
                }
                positive("domain.radius", *radius)?;
            }
            DomainSpec::Cone { omega, radius } => {
                if !(*omega > 0.0 && *omega < 2.0 * std::f64::consts::PI) {
                    return Err(Error::config("domain.omega", "must lie in (0, 2π)"));
                }
                positive("domain.radius", *radius)?;
            }
            DomainSpec::Koch { delta, radius, sides, .. } => {
                if !(*delta >= 0.0 && *delta < 0.5) {
                    return Err(Error::config("domain.delta", "must lie in [0, 0.5)"));
                }
                if *sides < 3 {
                    return Err(Error::config("domain.sides", "must be at least 3"));
                }
                positive("domain.radius", *radius)?;
            }
            _ => {}
        }
        positive("solver.tol", self.solver.tol)?;
        if self.solver.max_iter == 0 {
            return Err(Error::config("solver.max_iter", "must be positive"));
        }
        if let SourceSpec::Expression(e) = &self.source {
            e.parse::<Expr>().map_err(|err| Error::config("source.expression", err.to_string()))?;
        }
        if let FieldSpec::Expression(e) = &self.field {
            e.parse::<Expr>().map_err(|err| Error::config("field.expression", err.to_string()))?;
        }
        if let Some(d) = &self.decay {
            positive("decay.radius", d.radius)?;
            if !(d.ratio > 0.0 && d.ratio < 1.0) {
                return Err(Error::config("decay.ratio", "must lie in (0, 1)"));
            }
            if d.rungs < 2 {
                return Err(Error::config("decay.rungs", "need at least 2 (three radii)"));
            }
            self.validate_centers("decay.centers", &d.centers)?;
        }
        if let Some(hs) = &self.holder {
            if hs.pair_budget < hs.bins || hs.bins < 2 {
                return Err(Error::config("holder.bins", "need 2 ≤ bins ≤ pair_budget"));
            }
            if !(hs.quantile > 0.0 && hs.quantile < 1.0) {
                return Err(Error::config("holder.quantile", "must lie in (0, 1)"));
            }
            if let Some(s) = hs.min_sep {
                if !(s >= 2.0 * self.h) {
                    return Err(Error::config("holder.min_sep", "must be at least 2h"));
                }
            }
            if let (Some(lo), Some(hi)) = (hs.min_sep, hs.max_sep) {
                if !(hi > lo) {
                    return Err(Error::config("holder.max_sep", "must exceed holder.min_sep"));
                }
            }
            if hs.campanato_stride == 0 {
                return Err(Error::config("holder.campanato_stride", "must be positive"));
            }
        }
        if let Some(f) = &self.flatness {
            if f.radii.is_empty() {
                return Err(Error::config("flatness.radii", "must not be empty"));
            }
            self.validate_centers("flatness.centers", &f.centers)?;
        }
        if let Some(v) = &self.verify {
            positive("verify.halfball_h", v.halfball_h)?;
        }
        Ok(())
    }

    fn validate_centers(&self, field: &str, c: &CenterSpec) -> Result<()> {
        match c {
            CenterSpec::Boundary(0) => Err(Error::config(field, "need at least one center")),
            CenterSpec::Points(p) if p.is_empty() => Err(Error::config(field, "need at least one center")),
            CenterSpec::Points(p) => {
                let n = self.dim();
                match p.iter().find(|q| q.is_empty() || q.len() > 3 || (n > 0 && q.len() != n)) {
                    Some(q) => Err(Error::config(field, format!("point {q:?} has the wrong dimension"))),
                    None => Ok(()),
                }
            }
            _ => Ok(()),
        }
    }
}

fn to_point(v: &[f64]) -> Point {
    let mut p = [0.0; 3];
    p[..v.len()].copy_from_slice(v);
    p
}

// ---------------------------------------------------------------------------
// Building blocks

pub fn build_domain(cfg: &ExperimentConfig) -> Result<Arc<GridDomain>> {
    let h = cfg.h;
    let dom = match &cfg.domain {
        DomainSpec::Interval { a, b } => geometry::interval(*a, *b, h)?,
        DomainSpec::Ball { dim, radius } => geometry::ball(*dim, *radius, h)?,
        DomainSpec::HalfSpaceBall { dim, radius } => geometry::half_space_ball(*dim, *radius, h)?,
        DomainSpec::Cone { omega, radius } => geometry::cone_domain(*omega, *radius, h)?,
        DomainSpec::Koch {
            delta,
            depth,
            radius,
            sides,
        } => geometry::koch_domain_with_sides(*delta, *depth, *radius, h, *sides)?,
        DomainSpec::Raster { path } => {
            let dom = GridDomain::load(&cfg.resolve(path))?;
            if (dom.h() - h).abs() > 1e-12 * h {
                return Err(Error::config("h", format!("raster spacing is {}", dom.h())));
            }
            dom
        }
    };
    Ok(Arc::new(dom))
}

pub fn coefficient_matrix(cfg: &ExperimentConfig, dim: usize) -> Result<CoefficientMatrix> {
    match &cfg.operator {
        OperatorSpec::Polyharmonic { m } => Ok(EllipticOperator::polyharmonic(dim, *m).coefficients().clone()),
        OperatorSpec::File(p) => CoefficientMatrix::from_json(&fs::read_to_string(cfg.resolve(p))?),
        OperatorSpec::Coefficients(v) => CoefficientMatrix::from_json(&v.to_string()),
    }
}

pub fn build_operator(cfg: &ExperimentConfig, dim: usize) -> Result<EllipticOperator> {
    let op = EllipticOperator::new(coefficient_matrix(cfg, dim)?)?;
    if op.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: op.dim(),
        });
    }
    Ok(op)
}

pub fn build_source(cfg: &ExperimentConfig, dom: &Arc<GridDomain>) -> Result<GridFunction> {
    Ok(match &cfg.source {
        SourceSpec::Constant(c) => {
            let c = *c;
            GridFunction::from_fn(dom.clone(), move |_| c)
        }
        SourceSpec::Expression(e) => {
            let e: Expr = e.parse()?;
            GridFunction::from_fn(dom.clone(), |p| e.eval(p))
        }
        SourceSpec::File(p) => {
            let f = Field::load(&cfg.resolve(p))?;
            if f.domain().lattice() != dom.lattice() {
                return Err(Error::config("source.file", "lattice differs from the configured domain"));
            }
            GridFunction::restrict(Field::new(dom.clone(), f.into_values())?)
        }
    })
}

fn solver_options(cfg: &ExperimentConfig) -> SolveOptions {
    SolveOptions::new(cfg.solver.tol, cfg.solver.max_iter)
}

/// Everything the verbs share: domain, operator and the analyzed field.
pub struct Prepared {
    pub domain: Arc<GridDomain>,
    pub operator: EllipticOperator,
    pub field: GridFunction,
    /// Present when the field came from a solve in this run.
    pub report: Option<SolveReport>,
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    let domain = build_domain(cfg)?;
    let operator = build_operator(cfg, domain.dim())?;
    let (field, report) = match &cfg.field {
        FieldSpec::Solve => {
            let (u, rep) = solve_on(cfg, &domain, &operator)?;
            (u, Some(rep))
        }
        FieldSpec::Expression(e) => {
            let e: Expr = e.parse()?;
            (GridFunction::from_fn(domain.clone(), |p| e.eval(p)), None)
        }
        FieldSpec::File(p) => {
            let f = Field::load(&cfg.resolve(p))?;
            if f.domain().lattice() != domain.lattice() || f.domain().mask() != domain.mask() {
                return Err(Error::config("field.file", "raster does not match the configured domain"));
            }
            (GridFunction::from_values(domain.clone(), f.into_values())?, None)
        }
    };
    Ok(Prepared {
        domain,
        operator,
        field,
        report,
    })
}

fn solve_on(cfg: &ExperimentConfig, dom: &Arc<GridDomain>, op: &EllipticOperator) -> Result<(GridFunction, SolveReport)> {
    let f = build_source(cfg, dom)?;
    let sys = assemble(op, dom, &f)?;
    info!("{}: {} unknowns, {} nonzeros", cfg.label, sys.dim(), sys.matrix.nnz());
    let (u, rep) = solve_dirichlet(&sys, &solver_options(cfg))?;
    info!(
        "{}: {} iterations, residual {:.3e}, {:.2}s",
        cfg.label, rep.iterations, rep.relative_residual, rep.wall_time
    );
    Ok((u, rep))
}

fn centers(dom: &GridDomain, spec: &CenterSpec) -> Vec<Point> {
    match spec {
        CenterSpec::Boundary(n) => geometry::strided_exterior_centers(dom, *n),
        CenterSpec::Points(p) => p.iter().map(|q| to_point(q)).collect(),
    }
}

fn create_out(cfg: &ExperimentConfig) -> Result<PathBuf> {
    let out = cfg.output_dir();
    fs::create_dir_all(&out)?;
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

// ---------------------------------------------------------------------------
// solve

pub struct SolveOutcome {
    pub solution: GridFunction,
    pub report: SolveReport,
    pub raster: PathBuf,
}

pub const SOLUTION_FILE: &str = "solution.raster";
pub const SOLVE_CSV: &str = "solve.csv";

/// Solves and writes `solution.raster` (+ sidecar) and a row of `solve.csv`
/// (appended when the file exists).
pub fn run_solve(cfg: &ExperimentConfig) -> Result<SolveOutcome> {
    let dom = build_domain(cfg)?;
    let op = build_operator(cfg, dom.dim())?;
    let (u, report) = solve_on(cfg, &dom, &op)?;
    let out = create_out(cfg)?;
    let raster = out.join(SOLUTION_FILE);
    u.save(&raster)?;
    let csv = out.join(SOLVE_CSV);
    let fresh = !csv.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&csv)?;
    if fresh {
        writeln!(f, "{}", SolveReport::CSV_HEADER)?;
    }
    writeln!(f, "{}", report.csv_row(&cfg.label, dom.dim()))?;
    Ok(SolveOutcome {
        solution: u,
        report,
        raster,
    })
}

// ---------------------------------------------------------------------------
// decay

#[derive(Clone, Debug, PartialEq)]
pub struct DecaySummary {
    pub centers: usize,
    pub fitted: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl DecaySummary {
    pub const CSV_HEADER: &'static str = "centers,fitted,min_exponent,median_exponent,max_exponent";

    pub fn from_reports(reports: &[DecayReport]) -> Self {
        let mut e: Vec<f64> = reports.iter().filter_map(|r| r.fitted_exponent).collect();
        let fitted = e.len();
        let (min, med, max) = if e.is_empty() {
            (f64::NAN, f64::NAN, f64::NAN)
        } else {
            let med = median(&mut e);
            (e[0], med, e[fitted - 1])
        };
        DecaySummary {
            centers: reports.len(),
            fitted,
            min,
            median: med,
            max,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.centers,
            self.fitted,
            fmt17(self.min),
            fmt17(self.median),
            fmt17(self.max)
        )
    }
}

pub struct DecayOutcome {
    pub reports: Vec<DecayReport>,
    pub summary: DecaySummary,
}

pub const DECAY_CSV: &str = "decay.csv";
pub const DECAY_SUMMARY_CSV: &str = "decay_summary.csv";

pub fn run_decay(cfg: &ExperimentConfig) -> Result<DecayOutcome> {
    let spec = cfg
        .decay
        .as_ref()
        .ok_or_else(|| Error::config("decay", "section is required for this verb"))?;
    let (dom, reports) = if let Some(s) = spec.synthetic {
        let dom = build_domain(cfg)?;
        let reports = centers(&dom, &spec.centers)
            .into_iter()
            .map(|c| {
                let radii: Vec<f64> = (0..=spec.rungs).map(|k| spec.radius * spec.ratio.powi(k as i32)).collect();
                let e = radii.iter().map(|r| s.scale * r.powf(s.exponent)).collect();
                decay_from_energies(c, spec.radius, spec.ratio, radii, e, 0.0)
            })
            .collect();
        (dom, reports)
    } else {
        let prep = prepare(cfg)?;
        // energy attributable to the algebraic solver error
        let noise_floor = prep
            .report
            .as_ref()
            .map_or(0.0, |r| r.relative_residual * energy_total(&prep.operator, &prep.field));
        let opts = DecayOptions {
            metric: spec.metric,
            noise_floor,
        };
        let reports = centers(&prep.domain, &spec.centers)
            .into_iter()
            .map(|c| decay_profile(&prep.operator, &prep.field, c, spec.radius, spec.ratio, spec.rungs, &opts))
            .collect::<Result<Vec<_>>>()?;
        (prep.domain, reports)
    };
    let summary = DecaySummary::from_reports(&reports);
    let out = create_out(cfg)?;
    let mut buf = Vec::new();
    writeln!(buf, "{}", DecayReport::csv_header(dom.dim()))?;
    for r in &reports {
        r.write_csv_rows(dom.dim(), &mut buf)?;
    }
    fs::write(out.join(DECAY_CSV), buf)?;
    fs::write(
        out.join(DECAY_SUMMARY_CSV),
        format!("{}\n{}\n", DecaySummary::CSV_HEADER, summary.csv_row()),
    )?;
    Ok(DecayOutcome { reports, summary })
}

// ---------------------------------------------------------------------------
// holder

pub struct HolderOutcome {
    /// One entry per `∂^α u`, `|α| = order`, in graded lexicographic order.
    pub components: Vec<(MultiIndex, HolderReport)>,
}

pub const HOLDER_CSV: &str = "holder.csv";

/// Hölder exponents of the derivatives `∂^α u` of the analyzed field,
/// together with the Campanato seminorm at `λ = N + 2α` over the radius
/// ladder `min_sep · 2^k ≤ max_sep`.
pub fn run_holder(cfg: &ExperimentConfig) -> Result<HolderOutcome> {
    let spec = cfg
        .holder
        .as_ref()
        .ok_or_else(|| Error::config("holder", "section is required for this verb"))?;
    let prep = prepare(cfg)?;
    let dom = &prep.domain;
    let dim = dom.dim();
    let order = spec.order.unwrap_or(prep.operator.m() - 1);
    let min_sep = spec.min_sep.unwrap_or(4.0 * cfg.h);
    let max_sep = spec.max_sep.unwrap_or(dom.extent_diameter() / 2.0);
    if !(max_sep > min_sep) {
        return Err(Error::config("holder.max_sep", "must exceed holder.min_sep"));
    }
    if let Some(a) = &spec.anchor {
        if a.len() != dim {
            return Err(Error::config("holder.anchor", format!("needs {dim} coordinates")));
        }
    }
    let mut radii = vec![min_sep];
    while radii.last().unwrap() * 2.0 <= max_sep * (1.0 + 1e-12) {
        radii.push(radii.last().unwrap() * 2.0);
    }
    let camp_centers = analyze::campanato_centers(dom, spec.campanato_stride);
    let mut components = Vec::new();
    for (k, alpha) in multiindex::enumerate(dim, order).into_iter().enumerate() {
        let d = iterated_difference(&prep.field, &alpha, 1);
        let opts = HolderOptions {
            pair_budget: spec.pair_budget,
            min_sep,
            max_sep: Some(max_sep),
            bins: spec.bins,
            quantile: spec.quantile,
            seed: cfg.seed.wrapping_add(k as u64),
            anchor: spec.anchor.as_deref().map(to_point),
        };
        let est = holder_exponent(&d, &opts)?;
        let exponent = est.exponent;
        let lambda = dim as f64 + 2.0 * exponent.unwrap_or(0.0);
        let campanato = campanato_seminorm(&d, lambda, &radii, &camp_centers)?;
        components.push((
            alpha,
            HolderReport {
                derivative_order: order,
                exponent_estimate: exponent,
                seminorm_estimate: est.seminorm,
                campanato_lambda: lambda,
                campanato_seminorm: campanato,
            },
        ));
    }
    let out = create_out(cfg)?;
    let mut buf = format!("{}\n", HolderReport::CSV_HEADER);
    for (_, r) in &components {
        buf.push_str(&r.csv_row());
        buf.push('\n');
    }
    fs::write(out.join(HOLDER_CSV), buf)?;
    Ok(HolderOutcome { components })
}

// ---------------------------------------------------------------------------
// flatness

pub const FLATNESS_CSV: &str = "flatness.csv";

pub fn run_flatness(cfg: &ExperimentConfig) -> Result<FlatnessReport> {
    let spec = cfg
        .flatness
        .as_ref()
        .ok_or_else(|| Error::config("flatness", "section is required for this verb"))?;
    let dom = build_domain(cfg)?;
    let c = centers(&dom, &spec.centers);
    let report = geometry::measure_flatness_at(&dom, &c, &spec.radii)?;
    let out = create_out(cfg)?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(out.join(FLATNESS_CSV), buf)?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// verify

/// One row of the verification table. Identity checks pass when
/// `margin ≤ tolerance`; inequality checks when `margin ≥ −tolerance`.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub margin: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    fn identity(name: &str, residual: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            margin: residual,
            tolerance,
            pass: residual <= tolerance,
        }
    }

    fn inequality(name: &str, margin: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            margin,
            tolerance,
            pass: margin >= -tolerance,
        }
    }
}

pub struct VerifyOutcome {
    pub checks: Vec<Check>,
}

impl VerifyOutcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

pub const VERIFY_CSV: &str = "verify.csv";

/// Runs the identity and inequality suite and writes `verify.csv`. Check
/// failures are reported in the outcome, not as errors.
pub fn run_verify(cfg: &ExperimentConfig) -> Result<VerifyOutcome> {
    let spec = cfg.verify.clone().unwrap_or_default();
    let dom = build_domain(cfg)?;
    let dim = dom.dim();
    let coeffs = coefficient_matrix(cfg, dim)?;
    if coeffs.dim != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: coeffs.dim,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = vec![Check::identity("coefficient_symmetry", coeffs.asymmetry(), 0.0)];
    let op = match EllipticOperator::new(coeffs) {
        Ok(op) => {
            let threshold = ELLIPTICITY_RTOL * op.coefficients().max_abs();
            checks.push(Check::inequality("ellipticity", op.ellipticity_constant() - threshold, 0.0));
            Some(op)
        }
        Err(Error::NotElliptic { lambda_min, threshold }) => {
            checks.push(Check::inequality("ellipticity", lambda_min - threshold, 0.0));
            None
        }
        Err(Error::NotSymmetric(_)) => None,
        Err(e) => return Err(e),
    };

    checks.push(duality_check(&dom, &mut rng));
    checks.extend(decomposition_checks(spec.random_operators, &mut rng)?);
    checks.push(vertical_poincare_check(&dom, spec.poincare_samples, &mut rng)?);
    if let Some(op) = &op {
        checks.push(difference_bound_check(&dom, op.m())?);
        checks.push(halfball_check(dim, op.m(), spec.halfball_h, &mut rng)?);
        let f = build_source(cfg, &dom)?;
        let sys = assemble(op, &dom, &f)?;
        checks.push(Check::identity("matrix_symmetry", sys.matrix.max_asymmetry(), 0.0));
        checks.push(pythagoras_check(cfg, op, &sys, spec.pythagoras_pairs, &mut rng)?);
    }

    let out = create_out(cfg)?;
    let mut buf = String::from("name,margin,tolerance,verdict\n");
    for c in &checks {
        buf.push_str(&format!(
            "{},{},{},{}\n",
            c.name,
            fmt17(c.margin),
            fmt17(c.tolerance),
            if c.pass { "pass" } else { "fail" }
        ));
    }
    fs::write(out.join(VERIFY_CSV), buf)?;
    Ok(VerifyOutcome { checks })
}

fn random_field(dom: &Arc<GridDomain>, rng: &mut ChaCha8Rng) -> GridFunction {
    let values: Vec<f64> = (0..dom.lattice().len())
        .map(|i| if dom.contains(i) { rng.gen_range(-1.0..1.0) } else { 0.0 })
        .collect();
    GridFunction::from_values(dom.clone(), values).expect("mask respected")
}

/// `max |Σ u D_ε v + Σ v D_{−ε} u| / (‖u‖ ‖v‖ / h)` over axes and steps.
fn duality_check(dom: &Arc<GridDomain>, rng: &mut ChaCha8Rng) -> Check {
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let u = random_field(dom, rng);
        let v = random_field(dom, rng);
        let scale = u.inner(&u).sqrt() * v.inner(&v).sqrt() / dom.h();
        for axis in 0..dom.dim() {
            for s in [1i64, 2, -1] {
                let lhs = u.inner(&forward_difference(&v, axis, s));
                let rhs = -v.inner(&forward_difference(&u, axis, -s));
                worst = worst.max((lhs - rhs).abs() / scale);
            }
        }
    }
    Check::identity("duality", worst, 1e-13)
}

fn decomposition_checks(count: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Check>> {
    let mut residual = 0.0f64;
    let mut gap = f64::INFINITY;
    for _ in 0..count {
        let dim = rng.gen_range(1..=3);
        let m = rng.gen_range(1..=3);
        let op = random_elliptic(dim, m, rng);
        let dec = op.decompose()?;
        residual = residual.max(dec.reconstruction_residual(&op));
        gap = gap.min(dec.d_part.ellipticity_constant() - op.ellipticity_constant());
    }
    if count == 0 {
        gap = 0.0;
    }
    Ok(vec![
        Check::identity("decomposition_reconstruction", residual, 0.0),
        Check::inequality("decomposition_ellipticity", gap, 1e-12),
    ])
}

/// Smooth random field: a few plane waves with random frequencies.
fn random_wave(dom: &Arc<GridDomain>, rng: &mut ChaCha8Rng) -> Field {
    let dim = dom.dim();
    let modes: Vec<(f64, [f64; 3], f64)> = (0..3)
        .map(|_| {
            let mut k = [0.0; 3];
            for ka in k.iter_mut().take(dim) {
                *ka = rng.gen_range(-8.0..8.0);
            }
            (rng.gen_range(-1.0..1.0), k, rng.gen_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let offset = rng.gen_range(-0.5..0.5);
    Field::from_fn(dom.clone(), move |p| {
        offset
            + modes
                .iter()
                .map(|(c, k, ph)| c * (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + ph).sin())
                .sum::<f64>()
    })
}

/// `min (RHS − LHS) / ‖v‖_{L²(Q_r)}` over random smooth `v`, cubes and
/// levels; tolerance `5h`.
fn vertical_poincare_check(dom: &Arc<GridDomain>, samples: usize, rng: &mut ChaCha8Rng) -> Result<Check> {
    let lat = dom.lattice();
    let dim = dom.dim();
    let h = dom.h();
    let lo: Vec<f64> = (0..dim).map(|a| lat.lo()[a] as f64 * h).collect();
    let hi: Vec<f64> = (0..dim)
        .map(|a| (lat.lo()[a] + lat.extents()[a] as i64 - 1) as f64 * h - if a == dim - 1 { h } else { 0.0 })
        .collect();
    let inside = dom.inside_indices();
    let mut worst = f64::INFINITY;
    for _ in 0..samples {
        let v = random_wave(dom, rng);
        let c = lat.point(inside[rng.gen_range(0..inside.len())]);
        let room = (0..dim)
            .map(|a| (c[a] - lo[a]).min(hi[a] - c[a]))
            .fold(f64::INFINITY, f64::min);
        if room < 2.0 * h {
            continue;
        }
        let r = rng.gen_range(2.0 * h..=room);
        let lambda = rng.gen_range(0.05..=0.75);
        let cube = Cube { center: c, r };
        let res = check_vertical_poincare(&v, cube, lambda)?;
        let norm = cube_l2_norm(&v, cube);
        if norm > 0.0 {
            worst = worst.min(res.margin / norm);
        }
    }
    if worst == f64::INFINITY {
        worst = 0.0;
    }
    Ok(Check::inequality("vertical_poincare", worst, 5.0 * h))
}

/// `min (‖∂^α u‖ − ‖D^α u‖ + 10h Σ‖∂^{α+e_i}u‖)` over a family of separable
/// test functions and all `1 ≤ |α| ≤ m`.
fn difference_bound_check(dom: &Arc<GridDomain>, m: u32) -> Result<Check> {
    let dim = dom.dim();
    let pad = |first: Factor, rest: Factor| -> Separable {
        let mut f = vec![first];
        f.extend(std::iter::repeat_n(rest, dim - 1));
        Separable::new(f)
    };
    let family = [
        pad(Factor::Sin { freq: 1.0, phase: 0.0 }, Factor::Poly(vec![1.0])),
        pad(Factor::Poly(vec![0.5, 2.0]), Factor::Poly(vec![1.0, -1.0])),
        pad(Factor::Poly(vec![0.0, 0.0, 1.0]), Factor::Poly(vec![1.0])),
        pad(Factor::Exp { rate: 0.7 }, Factor::Sin { freq: 2.0, phase: 0.3 }),
        pad(Factor::Sin { freq: 3.0, phase: 1.0 }, Factor::Exp { rate: -0.5 }),
    ];
    let mut worst = f64::INFINITY;
    for u in &family {
        for alpha in analyze::multi_indices_up_to(dim, m) {
            let b = check_difference_bound(u, dom, &alpha, alpha.order() as usize)?;
            worst = worst.min(b.margin + b.allowed_deficit);
        }
    }
    Ok(Check::inequality("difference_bound", worst, 1e-10))
}

/// Half-ball Poincaré constant (max ratio over a random family) at `h` and
/// `h/2`; the check is `|C_h / C_{h/2} − 1| ≤ 0.1`.
fn halfball_check(dim: usize, m: u32, h: f64, rng: &mut ChaCha8Rng) -> Result<Check> {
    let family: Vec<Vec<f64>> = (0..8).map(|_| (0..1 + 2 * dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let constant = |h: f64| -> Result<f64> {
        let dom = Arc::new(geometry::ball(dim, 1.25, h)?);
        let mut c = 0.0f64;
        for coef in &family {
            let v = Field::from_fn(dom.clone(), |p| {
                let t = p[dim - 1];
                if t <= 0.0 || p[..dim].iter().map(|x| x * x).sum::<f64>() >= 1.0 {
                    return 0.0;
                }
                let mut poly = coef[0];
                for a in 0..dim {
                    poly += coef[1 + a] * p[a] + coef[1 + dim + a] * p[a] * p[a];
                }
                poly * t.powi(m as i32 + 1)
            });
            if let Some(r) = check_poincare_halfball(&v, m, [0.0; 3], 1.0)? {
                c = c.max(r);
            }
        }
        Ok(c)
    };
    let coarse = constant(h)?;
    let fine = constant(h / 2.0)?;
    Ok(Check::identity("halfball_poincare_refinement", (coarse / fine - 1.0).abs(), 0.1))
}

fn pythagoras_check(
    cfg: &ExperimentConfig,
    op: &EllipticOperator,
    sys: &crate::discretize::DiscreteSystem,
    pairs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Check> {
    let dom = &sys.domain;
    let tight = SolveOptions::new(cfg.solver.tol.min(1e-11), cfg.solver.max_iter);
    let (u, _) = solve_dirichlet(sys, &tight)?;
    let lat = dom.lattice();
    let h = dom.h();
    let inside = dom.inside_indices();
    let r_max = (dom.extent_diameter() / 4.0).max(4.0 * h);
    let mut worst = 0.0f64;
    for _ in 0..pairs {
        let c = lat.point(inside[rng.gen_range(0..inside.len())]);
        let r = rng.gen_range(4.0 * h..=r_max);
        let rep = polyharmonic_replacement(op, &u, c, r, &SolveOptions::new(1e-13, cfg.solver.max_iter))?;
        worst = worst.max(pythagoras(op, &u, &rep.v, c, r).relative_defect);
    }
    Ok(Check::identity("pythagoras", worst, 1e-8))
}

// ---------------------------------------------------------------------------
// Exit codes

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NotConverged { .. } | Error::Indefinite(..) => EXIT_SOLVER,
        Error::Io(_) => EXIT_IO,
        _ => EXIT_VALIDATION,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::from_json(text, ".")
    }

    #[test]
    fn parses_minimal_config() {
        let c = cfg(r#"{"label":"p","h":0.125,"operator":{"polyharmonic":{"m":1}},
                        "domain":{"kind":"interval","a":0,"b":1}}"#)
        .unwrap();
        assert_eq!(c.source, SourceSpec::Constant(1.0));
        assert_eq!(c.field, FieldSpec::Solve);
        assert_eq!(c.solver.tol, DEFAULT_TOL);
        assert_eq!(c.dim(), 1);
    }

    #[test]
    fn field_level_errors() {
        let cases = [
            (r#"{"label":"p","h":-1,"operator":{"polyharmonic":{"m":1}},"domain":{"kind":"interval","a":0,"b":1}}"#, "h"),
            (r#"{"label":"p","h":0.1,"operator":{"polyharmonic":{"m":0}},"domain":{"kind":"interval","a":0,"b":1}}"#, "operator.polyharmonic.m"),
            (r#"{"label":"p","h":0.1,"operator":{"polyharmonic":{"m":1}},"domain":{"kind":"ball","dim":4,"radius":1}}"#, "domain.dim"),
            (r#"{"label":"p","h":0.1,"operator":{"polyharmonic":{"m":1}},"domain":{"kind":"interval","a":0,"b":1},"source":{"expression":"x +"}}"#, "source.expression"),
            (r#"{"label":"p","h":0.1,"operator":{"polyharmonic":{"m":1}},"domain":{"kind":"interval","a":0,"b":1},"bogus":1}"#, "<document>"),
        ];
        for (text, field) in cases {
            match cfg(text) {
                Err(Error::Config { field: f, .. }) => assert_eq!(f, field),
                other => panic!("{field}: {other:?}"),
            }
        }
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("h", "x")), EXIT_VALIDATION);
        assert_eq!(exit_code(&Error::NotConverged { iterations: 1, residual: 1.0 }), EXIT_SOLVER);
        assert_eq!(exit_code(&Error::Domain("x".into())), EXIT_VALIDATION);
    }
}
