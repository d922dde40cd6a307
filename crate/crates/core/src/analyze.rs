//! Measurements on computed solutions: local energy decay exponents,
//! Campanato seminorms, Hölder exponents, and the auxiliary inequality and
//! identity checks.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::Separable;
use crate::discretize::{energy_local, energy_over, forward_difference, EnergyMetric, Field, GradientStencils};
use crate::error::{Error, Result};
use crate::geometry::{fmt17, GridDomain};
use crate::lattice::{dist, Point};
use crate::multiindex::{self, MultiIndex};
use crate::operator::EllipticOperator;

// ---------------------------------------------------------------------------
// Power-law fits

/// Least-squares line through `(log r, log E)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// RMS deviation in log space.
    pub rms: f64,
}

pub fn fit_log_log(x: &[f64], y: &[f64]) -> Option<LogLogFit> {
    assert_eq!(x.len(), y.len());
    if x.len() < 2 {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| (b - intercept - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    Some(LogLogFit {
        slope,
        intercept,
        rms,
    })
}

// ---------------------------------------------------------------------------
// Energy decay

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub center: Point,
    /// Top radius of the ladder.
    pub top_radius: f64,
    /// Ladder ratio.
    pub a: f64,
    /// `r_k = R a^k`, `k = 0..=k_max`.
    pub radii: Vec<f64>,
    pub energies: Vec<f64>,
    /// Rungs that cleared the noise floor and entered the fit.
    pub used: Vec<bool>,
    /// `None` when fewer than three rungs were usable.
    pub fitted_exponent: Option<f64>,
    pub fit_residual: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayOptions {
    pub metric: EnergyMetric,
    /// Energy attributable to solver error; rungs below ten times this are
    /// dropped from the fit.
    pub noise_floor: f64,
}

impl Default for DecayOptions {
    fn default() -> Self {
        DecayOptions {
            metric: EnergyMetric::Euclidean,
            noise_floor: 0.0,
        }
    }
}

pub const MIN_RUNGS: usize = 3;

/// Energy `E(x, R a^k)` for `k = 0..=k_max` and the fitted decay exponent.
pub fn decay_profile(
    op: &EllipticOperator,
    u: &Field,
    center: Point,
    top_radius: f64,
    a: f64,
    k_max: usize,
    opts: &DecayOptions,
) -> Result<DecayReport> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::Analysis(format!("ladder ratio {a} outside (0, 1)")));
    }
    let h = u.domain().h();
    let bottom = top_radius * a.powi(k_max as i32);
    if bottom < 4.0 * h * (1.0 - 1e-12) {
        return Err(Error::Analysis(format!(
            "smallest rung {bottom:.4e} is below 4h = {:.4e}",
            4.0 * h
        )));
    }
    let radii: Vec<f64> = (0..=k_max).map(|k| top_radius * a.powi(k as i32)).collect();
    let energies: Vec<f64> = radii
        .iter()
        .map(|&r| energy_local(op, u, center, r, opts.metric))
        .collect();
    Ok(decay_from_energies(center, top_radius, a, radii, energies, opts.noise_floor))
}

/// Fits a ladder of precomputed energies.
pub fn decay_from_energies(
    center: Point,
    top_radius: f64,
    a: f64,
    radii: Vec<f64>,
    energies: Vec<f64>,
    noise_floor: f64,
) -> DecayReport {
    let used: Vec<bool> = energies
        .iter()
        .map(|&e| e > 0.0 && e >= 10.0 * noise_floor)
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = radii
        .iter()
        .zip(&energies)
        .zip(&used)
        .filter(|(_, &u)| u)
        .map(|((r, e), _)| (*r, *e))
        .unzip();
    let fit = if xs.len() >= MIN_RUNGS { fit_log_log(&xs, &ys) } else { None };
    DecayReport {
        center,
        top_radius,
        a,
        radii,
        energies,
        used,
        fitted_exponent: fit.map(|f| f.slope),
        fit_residual: fit.map(|f| f.rms),
    }
}

impl DecayReport {
    pub fn csv_header(dim: usize) -> String {
        let coords = ["x", "y", "z"][..dim.max(1)].join(",");
        format!("{coords},k,r_k,E,fitted_exponent,residual")
    }

    pub fn write_csv_rows(&self, dim: usize, mut w: impl Write) -> Result<()> {
        let coords: Vec<String> = self.center[..dim.max(1)].iter().map(|v| fmt17(*v)).collect();
        let fe = self.fitted_exponent.map_or("NaN".to_string(), fmt17);
        let res = self.fit_residual.map_or("NaN".to_string(), fmt17);
        for (k, (r, e)) in self.radii.iter().zip(&self.energies).enumerate() {
            writeln!(w, "{},{k},{},{},{fe},{res}", coords.join(","), fmt17(*r), fmt17(*e))?;
        }
        Ok(())
    }
}

/// Ladder ratio admitted by the decay iteration when the discrete constants
/// are known: `(1 / (4 C_A max|a|))^{1/(η−b)}`. Diagnostic only.
pub fn ladder_ratio_bound(op: &EllipticOperator, c_a: f64, eta: f64, b: f64) -> f64 {
    assert!(eta > b, "need η > b");
    (1.0 / (4.0 * c_a * op.coefficients().max_abs())).powf(1.0 / (eta - b))
}

// ---------------------------------------------------------------------------
// Campanato and Hölder

/// `max_{x, r} r^{−λ} h^N Σ_{Ω∩B(x,r)} |v − m(v; x, r)|²`, with the mean over
/// the mask-true nodes of the ball. Empty intersections are skipped.
pub fn campanato_seminorm(v: &Field, lambda: f64, radii: &[f64], centers: &[Point]) -> Result<f64> {
    let dom = v.domain();
    let h = dom.h();
    if let Some(r) = radii.iter().find(|&&r| r < 2.0 * h * (1.0 - 1e-12)) {
        return Err(Error::Analysis(format!("Campanato radius {r} below 2h")));
    }
    let w = dom.lattice().cell_volume();
    let tasks: Vec<(Point, f64)> = centers
        .iter()
        .flat_map(|c| radii.iter().map(move |r| (*c, *r)))
        .collect();
    let values: Vec<f64> = tasks
        .par_iter()
        .map(|(c, r)| {
            let idx: Vec<usize> = dom
                .lattice()
                .ball_indices(*c, *r, false)
                .into_iter()
                .filter(|&i| dom.contains(i))
                .collect();
            if idx.is_empty() {
                return 0.0;
            }
            let mean = idx.iter().map(|&i| v.at(i)).sum::<f64>() / idx.len() as f64;
            let dev: f64 = idx.iter().map(|&i| (v.at(i) - mean).powi(2)).sum();
            r.powf(-lambda) * w * dev
        })
        .collect();
    Ok(values.into_iter().fold(0.0, f64::max))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HolderOptions {
    pub pair_budget: usize,
    pub min_sep: f64,
    /// Largest separation; defaults to half the domain extent.
    pub max_sep: Option<f64>,
    pub bins: usize,
    /// Upper-envelope quantile per distance bin.
    pub quantile: f64,
    pub seed: u64,
    /// Use the lattice node nearest this point as the first point of every
    /// pair, giving a pointwise exponent. The node may lie outside `Ω`,
    /// where `v` is zero.
    pub anchor: Option<Point>,
}

impl HolderOptions {
    pub fn new(pair_budget: usize, min_sep: f64) -> Self {
        HolderOptions {
            pair_budget,
            min_sep,
            max_sep: None,
            bins: 12,
            quantile: 0.95,
            seed: 0,
            anchor: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderBin {
    pub distance: f64,
    pub envelope: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderEstimate {
    /// Envelope slope clamped to `(0, 1]`; `None` for degenerate input.
    pub exponent: Option<f64>,
    pub raw_slope: Option<f64>,
    /// `sup |v(x) − v(y)| / |x − y|^α` over the sampled pairs.
    pub seminorm: Option<f64>,
    /// `exp(intercept)` of the envelope fit.
    pub envelope_constant: Option<f64>,
    pub bins: Vec<HolderBin>,
    pub degenerate: bool,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

/// Hölder exponent of `v` from the upper envelope of `|v(x) − v(y)|` against
/// `|x − y|`. Pairs are stratified over log-spaced distance bins between
/// `min_sep` and `max_sep`; the first point is an `Ω` node (or the anchor),
/// the second any lattice node (zero extension).
pub fn holder_exponent(v: &Field, opts: &HolderOptions) -> Result<HolderEstimate> {
    let dom = v.domain();
    let lat = dom.lattice();
    let dim = dom.dim();
    let inside = dom.inside_indices();
    let max_sep = opts.max_sep.unwrap_or_else(|| dom.extent_diameter() / 2.0);
    if !(opts.min_sep > 0.0 && max_sep > opts.min_sep) || opts.bins < 2 || opts.pair_budget < opts.bins {
        return Err(Error::Analysis(format!(
            "bad Hölder sampling: min_sep {}, max_sep {max_sep}, bins {}, budget {}",
            opts.min_sep, opts.bins, opts.pair_budget
        )));
    }
    let edges: Vec<f64> = (0..=opts.bins)
        .map(|k| opts.min_sep * (max_sep / opts.min_sep).powf(k as f64 / opts.bins as f64))
        .collect();
    let per_bin = opts.pair_budget / opts.bins;
    let anchors: Vec<usize> = match opts.anchor {
        Some(p) => match lat.index(lat.nearest_node(p)) {
            Some(i) => vec![i],
            None => return Err(Error::Analysis(format!("anchor {p:?} lies outside the lattice"))),
        },
        None => inside.clone(),
    };

    let bins: Vec<(HolderBin, Vec<(f64, f64)>)> = (0..opts.bins)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(b as u64 + 1);
            let (lo, hi) = (edges[b], edges[b + 1]);
            let anchors = &anchors;
            let mut samples = Vec::with_capacity(per_bin);
            let mut attempts = 0;
            while samples.len() < per_bin && attempts < 20 * per_bin {
                attempts += 1;
                let x = anchors[rng.gen_range(0..anchors.len())];
                let px = lat.point(x);
                let d = lo * (hi / lo).powf(rng.gen::<f64>());
                let dir = random_direction(dim, &mut rng);
                let mut target = px;
                for a in 0..dim {
                    target[a] += d * dir[a];
                }
                let Some(y) = lat.index(lat.nearest_node(target)) else { continue };
                let sep = dist(&px, &lat.point(y));
                if sep < lo || sep >= hi {
                    continue;
                }
                samples.push((sep, (v.at(x) - v.at(y)).abs()));
            }
            let mut diffs: Vec<f64> = samples.iter().map(|s| s.1).collect();
            diffs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let envelope = if diffs.is_empty() { 0.0 } else { quantile(&diffs, opts.quantile) };
            let distance = if samples.is_empty() {
                (lo * hi).sqrt()
            } else {
                (samples.iter().map(|s| s.0.ln()).sum::<f64>() / samples.len() as f64).exp()
            };
            (
                HolderBin {
                    distance,
                    envelope,
                    pairs: samples.len(),
                },
                samples,
            )
        })
        .collect();

    let all_pairs: Vec<(f64, f64)> = bins.iter().flat_map(|b| b.1.iter().copied()).collect();
    let bins: Vec<HolderBin> = bins.into_iter().map(|b| b.0).collect();
    let scale = all_pairs.iter().fold(0.0f64, |a, p| a.max(p.1));
    let degenerate = scale == 0.0;
    let usable: Vec<&HolderBin> = bins.iter().filter(|b| b.envelope > 1e-14 * scale && b.pairs > 0).collect();
    if degenerate || usable.len() < 2 {
        return Ok(HolderEstimate {
            exponent: None,
            raw_slope: None,
            seminorm: None,
            envelope_constant: None,
            bins,
            degenerate: true,
        });
    }
    let xs: Vec<f64> = usable.iter().map(|b| b.distance).collect();
    let ys: Vec<f64> = usable.iter().map(|b| b.envelope).collect();
    let fit = fit_log_log(&xs, &ys).expect("distinct bin distances");
    let exponent = fit.slope.min(1.0);
    let exponent = if exponent > 0.0 { Some(exponent) } else { None };
    let seminorm = exponent.map(|al| {
        all_pairs
            .iter()
            .map(|(d, dv)| dv / d.powf(al))
            .fold(0.0, f64::max)
    });
    Ok(HolderEstimate {
        exponent,
        raw_slope: Some(fit.slope),
        seminorm,
        envelope_constant: Some(fit.intercept.exp()),
        bins,
        degenerate: false,
    })
}

fn random_direction(dim: usize, rng: &mut impl Rng) -> [f64; 3] {
    loop {
        let mut d = [0.0; 3];
        for a in d.iter_mut().take(dim) {
            *a = rng.gen_range(-1.0..1.0);
        }
        let n2: f64 = d.iter().map(|x| x * x).sum();
        if n2 > 1e-6 && n2 <= 1.0 {
            let n = n2.sqrt();
            return [d[0] / n, d[1] / n, d[2] / n];
        }
    }
}

/// Hölder and Campanato summary for one derivative field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderReport {
    pub derivative_order: u32,
    pub exponent_estimate: Option<f64>,
    pub seminorm_estimate: Option<f64>,
    pub campanato_lambda: f64,
    pub campanato_seminorm: f64,
}

impl HolderReport {
    pub const CSV_HEADER: &'static str = "order,alpha,seminorm,lambda,campanato";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NaN".to_string(), fmt17);
        format!(
            "{},{},{},{},{}",
            self.derivative_order,
            opt(self.exponent_estimate),
            opt(self.seminorm_estimate),
            fmt17(self.campanato_lambda),
            fmt17(self.campanato_seminorm)
        )
    }
}

/// Centers for Campanato scans: every `stride`-th inside node plus every
/// `stride`-th boundary node.
pub fn campanato_centers(dom: &GridDomain, stride: usize) -> Vec<Point> {
    let lat = dom.lattice();
    let stride = stride.max(1);
    let mut idx: Vec<usize> = dom.inside_indices().into_iter().step_by(stride).collect();
    idx.extend(dom.boundary_points().into_iter().step_by(stride.div_ceil(4).max(1)));
    idx.sort_unstable();
    idx.dedup();
    idx.into_iter().map(|i| lat.point(i)).collect()
}

// ---------------------------------------------------------------------------
// Inequality and identity checks

/// `Q_r` around `center`: `|x_i − c_i| ≤ r` on every axis.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cube {
    pub center: Point,
    pub r: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InequalityMargin {
    pub lhs: f64,
    pub rhs: f64,
    /// `rhs − lhs`.
    pub margin: f64,
}

/// `‖v‖_{L²(Q_r)} ≤ 4‖v‖_{L²(Q_r^λ)} + 3r‖∂_N v‖_{L²(Q_r)}` with
/// `Q_r^λ = Q_r ∩ {x_N − c_N > λr}`, node sums and a forward `∂_N`.
pub fn check_vertical_poincare(v: &Field, cube: Cube, lambda: f64) -> Result<InequalityMargin> {
    if !(lambda > 0.0 && lambda <= 0.75) {
        return Err(Error::Analysis(format!("level {lambda} outside (0, 3/4]")));
    }
    let dom = v.domain();
    let lat = dom.lattice();
    let dim = dom.dim();
    let h = dom.h();
    let slack = 1e-9 * h;
    // the cube plus one node above it must sit inside the lattice
    for a in 0..dim {
        let lo = lat.lo()[a] as f64 * h;
        let hi = (lat.lo()[a] + lat.extents()[a] as i64 - 1) as f64 * h;
        let top = if a == dim - 1 { h } else { 0.0 };
        if cube.center[a] - cube.r < lo - slack || cube.center[a] + cube.r + top > hi + slack {
            return Err(Error::Analysis("cube exceeds the lattice".into()));
        }
    }
    let dn = forward_difference(v, dim - 1, 1);
    let w = lat.cell_volume();
    let (mut full, mut upper, mut grad) = (0.0, 0.0, 0.0);
    for i in 0..lat.len() {
        let p = lat.point(i);
        if (0..dim).all(|a| (p[a] - cube.center[a]).abs() <= cube.r + slack) {
            full += v.at(i).powi(2);
            grad += dn.at(i).powi(2);
            if p[dim - 1] - cube.center[dim - 1] > lambda * cube.r + slack {
                upper += v.at(i).powi(2);
            }
        }
    }
    let lhs = (w * full).sqrt();
    let rhs = 4.0 * (w * upper).sqrt() + 3.0 * cube.r * (w * grad).sqrt();
    Ok(InequalityMargin {
        lhs,
        rhs,
        margin: rhs - lhs,
    })
}

/// `‖v‖_{L²(Q_r)}` for the slack term of the vertical Poincaré check.
pub fn cube_l2_norm(v: &Field, cube: Cube) -> f64 {
    let lat = v.domain().lattice();
    let dim = lat.dim();
    let slack = 1e-9 * lat.h();
    let s: f64 = (0..lat.len())
        .filter(|&i| {
            let p = lat.point(i);
            (0..dim).all(|a| (p[a] - cube.center[a]).abs() <= cube.r + slack)
        })
        .map(|i| v.at(i).powi(2))
        .sum();
    (lat.cell_volume() * s).sqrt()
}

/// `‖v‖_{H^m(B)} / ‖∇^m v‖_{L²(B)}` on `B(center, radius)` for `v`
/// vanishing below the center's `x_N` level. `None` when `v ≡ 0` in the
/// ball.
pub fn check_poincare_halfball(v: &Field, m: u32, center: Point, radius: f64) -> Result<Option<f64>> {
    let dom = v.domain();
    let lat = dom.lattice();
    let dim = dom.dim();
    let nodes = lat.ball_indices(center, radius, false);
    if let Some(&i) = nodes
        .iter()
        .find(|&&i| lat.point(i)[dim - 1] < center[dim - 1] && v.at(i) != 0.0)
    {
        return Err(Error::Analysis(format!(
            "test function is nonzero on the lower half at node {:?}",
            lat.node(i)
        )));
    }
    let w = lat.cell_volume();
    let mut h_m = 0.0;
    let mut top = 0.0;
    for k in 0..=m {
        let st = GradientStencils::new(dim, k, lat.h());
        let mut g = vec![0.0; st.indices.len()];
        let mut acc = 0.0;
        for &i in &nodes {
            st.eval(v, i, &mut g);
            acc += g.iter().map(|x| x * x).sum::<f64>();
        }
        h_m += w * acc;
        if k == m {
            top = w * acc;
        }
    }
    if h_m == 0.0 {
        return Ok(None);
    }
    if top == 0.0 {
        return Err(Error::Analysis("∇^m v vanishes for nonzero v".into()));
    }
    Ok(Some((h_m / top).sqrt()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DifferenceBound {
    /// `‖D_h^α u‖_{L²(ω)}`.
    pub discrete: f64,
    /// `‖∂^α u‖_{L²(Ω)}`.
    pub exact: f64,
    /// `exact − discrete`.
    pub margin: f64,
    /// `10 h Σ_i ‖∂^{α+e_i} u‖_{L²(Ω)}`.
    pub allowed_deficit: f64,
}

/// Compares difference quotients on the shrunken set `ω` (inside nodes whose
/// `margin`-node neighborhood stays inside) against exact derivatives on `Ω`.
pub fn check_difference_bound(
    u: &Separable,
    dom: &std::sync::Arc<GridDomain>,
    alpha: &MultiIndex,
    margin: usize,
) -> Result<DifferenceBound> {
    let dim = dom.dim();
    if u.dim() != dim || alpha.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: u.dim(),
        });
    }
    let margin = margin.max(alpha.order() as usize);
    let lat = dom.lattice();
    let samples = Field::from_fn(dom.clone(), |p| u.value(p));
    let st: Vec<(crate::lattice::Node, f64)> = crate::discretize::difference_stencil(alpha);
    let scale = lat.h().powi(-(alpha.order() as i32));
    let w = lat.cell_volume();
    let inside = dom.inside_indices();
    let m = margin as i64;
    let in_omega = |i: usize| -> bool {
        let node = lat.node(i);
        let range = |a: usize| if a < dim { -m..=m } else { 0..=0 };
        range(0).all(|a| {
            range(1).all(|b| {
                range(2).all(|c| {
                    lat.index([node[0] + a, node[1] + b, node[2] + c])
                        .is_some_and(|j| dom.contains(j))
                })
            })
        })
    };
    let mut discrete = 0.0;
    let mut exact = 0.0;
    let mut higher = vec![0.0; dim];
    for &i in &inside {
        let p = lat.point(i);
        exact += u.derivative(alpha, &p).powi(2);
        for (a, acc) in higher.iter_mut().enumerate() {
            *acc += u.derivative(&alpha.add(&MultiIndex::unit(dim, a)), &p).powi(2);
        }
        if in_omega(i) {
            let d: f64 = st.iter().map(|(o, c)| c * samples.at_offset(i, *o)).sum::<f64>() * scale;
            discrete += d * d;
        }
    }
    let discrete = (w * discrete).sqrt();
    let exact = (w * exact).sqrt();
    let allowed_deficit = 10.0 * lat.h() * higher.iter().map(|s| (w * s).sqrt()).sum::<f64>();
    Ok(DifferenceBound {
        discrete,
        exact,
        margin: exact - discrete,
        allowed_deficit,
    })
}

/// Energies in the Pythagoras identity for a replacement `v` of `u` in
/// `B(center, r)`, localized to a ball enlarged by the stencil reach.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pythagoras {
    pub energy_u: f64,
    pub energy_v: f64,
    pub energy_diff: f64,
    /// `|E(u) − E(v) − E(u−v)| / E(u)`.
    pub relative_defect: f64,
}

pub fn pythagoras(op: &EllipticOperator, u: &Field, v: &Field, center: Point, r: f64) -> Pythagoras {
    let lat = u.domain().lattice();
    let reach = r + (op.m() as f64 + 1.0) * lat.h() * (lat.dim() as f64).sqrt() + lat.h();
    let nodes = lat.ball_indices(center, reach, false);
    let w = u.sub(v);
    let eu = energy_over(op, u, &nodes, EnergyMetric::AWeighted);
    let ev = energy_over(op, v, &nodes, EnergyMetric::AWeighted);
    let ed = energy_over(op, &w, &nodes, EnergyMetric::AWeighted);
    Pythagoras {
        energy_u: eu,
        energy_v: ev,
        energy_diff: ed,
        relative_defect: if eu > 0.0 { (eu - ev - ed).abs() / eu } else { 0.0 },
    }
}

/// `n` distinct multi-indices of each order `1..=max_order`, for sweeping
/// the difference-bound check.
pub fn multi_indices_up_to(dim: usize, max_order: u32) -> Vec<MultiIndex> {
    (1..=max_order).flat_map(|k| multiindex::enumerate(dim, k)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::Factor;
    use crate::discretize::GridFunction;
    use crate::geometry::{ball, half_space_ball};
    use std::sync::Arc;

    #[test]
    fn fit_recovers_exact_power() {
        let radii: Vec<f64> = (0..6).map(|k| 0.5f64.powi(k)).collect();
        for p in [2.0, 1.5, 3.25] {
            let e: Vec<f64> = radii.iter().map(|r| 7.0 * r.powf(p)).collect();
            let rep = decay_from_energies([0.0; 3], 1.0, 0.5, radii.clone(), e, 0.0);
            assert!((rep.fitted_exponent.unwrap() - p).abs() < 1e-12);
            assert!(rep.fit_residual.unwrap() < 1e-12);
        }
        let e = vec![1.0, 0.25, 1e-30, 1e-31, 0.0, 0.0];
        let rep = decay_from_energies([0.0; 3], 1.0, 0.5, radii, e, 1e-20);
        assert!(rep.fitted_exponent.is_none());
    }

    #[test]
    fn flat_boundary_and_interior_decay() {
        let h = 1.0 / 128.0;
        let op = EllipticOperator::polyharmonic(2, 1);
        let half = Arc::new(half_space_ball(2, 1.0, h).unwrap());
        let u = GridFunction::from_fn(half.clone(), |p| p[1]);
        let rep = decay_profile(&op, &u, [0.0; 3], 0.5, 0.5, 3, &DecayOptions::default()).unwrap();
        assert!((rep.fitted_exponent.unwrap() - 2.0).abs() < 0.05, "{rep:?}");
        assert!(rep.energies.windows(2).all(|w| w[1] <= w[0]));

        let disk = Arc::new(ball(2, 1.0, h).unwrap());
        let u = GridFunction::from_fn(disk, |p| p[0]);
        let rep = decay_profile(&op, &u, [0.1, 0.0, 0.0], 0.5, 0.5, 3, &DecayOptions::default()).unwrap();
        assert!((rep.fitted_exponent.unwrap() - 2.0).abs() < 0.05);
        assert!(decay_profile(&op, &u, [0.0; 3], 0.5, 0.5, 6, &DecayOptions::default()).is_err());
    }

    #[test]
    fn campanato_examples() {
        let h = 1.0 / 64.0;
        let dom = Arc::new(ball(2, 1.0, h).unwrap());
        let centers: Vec<Point> = vec![[0.0; 3], [0.3, 0.2, 0.0], [-0.5, 0.1, 0.0]];
        let c = Field::from_fn(dom.clone(), |_| 2.5);
        assert_eq!(campanato_seminorm(&c, 2.0, &[0.1, 0.2], &centers).unwrap(), 0.0);

        // linear v: r^{-N} ∫_B |x_1 − mean|² = π r² / 4 → the λ = N quotient decays like r²
        let v = Field::from_fn(dom.clone(), |p| p[0]);
        let small = campanato_seminorm(&v, 2.0, &[0.1], &centers[..1]).unwrap();
        let large = campanato_seminorm(&v, 2.0, &[0.3], &centers[..1]).unwrap();
        let exact = |r: f64| std::f64::consts::PI * r * r / 4.0;
        assert!((small / exact(0.1) - 1.0).abs() < 0.1, "{small} {}", exact(0.1));
        assert!((large / exact(0.3) - 1.0).abs() < 0.05, "{large} {}", exact(0.3));
        // at λ = N + 2 the quotient is bounded and scale-free
        let b1 = campanato_seminorm(&v, 4.0, &[0.1], &centers[..1]).unwrap();
        let b2 = campanato_seminorm(&v, 4.0, &[0.3], &centers[..1]).unwrap();
        assert!((b1 / b2 - 1.0).abs() < 0.1);

        // step across x_1 = 0 with λ = N + 1 blows up as r shrinks
        let s = Field::from_fn(dom.clone(), |p| if p[0] > 0.0 { 1.0 } else { 0.0 });
        let at = |r: f64| campanato_seminorm(&s, 3.0, &[r], &[[h / 2.0, 0.0, 0.0]]).unwrap();
        assert!(at(0.05) > 1.8 * at(0.1) && at(0.1) > 1.8 * at(0.2));
        assert!(campanato_seminorm(&v, 2.0, &[h], &centers).is_err());
    }

    #[test]
    fn holder_of_linear_constant_and_root() {
        let h = 1.0 / 128.0;
        let dom = Arc::new(ball(2, 1.0, h).unwrap());
        let lin = Field::from_fn(dom.clone(), |p| 0.6 * p[0] + 0.8 * p[1]);
        let mut opts = HolderOptions::new(24_000, 4.0 * h);
        opts.max_sep = Some(0.5);
        let est = holder_exponent(&lin, &opts).unwrap();
        assert!((est.exponent.unwrap() - 1.0).abs() <= 0.02, "{est:?}");
        assert!(est.seminorm.unwrap() < 1.2);

        let c = Field::from_fn(dom.clone(), |_| 1.0);
        let est = holder_exponent(&c, &opts).unwrap();
        assert!(est.degenerate && est.exponent.is_none());

        // |x|^{1/2} at its singular point
        let root = Field::from_fn(dom.clone(), |p| (p[0] * p[0] + p[1] * p[1]).powf(0.25));
        opts.anchor = Some([0.0; 3]);
        let est = holder_exponent(&root, &opts).unwrap();
        assert!((est.exponent.unwrap() - 0.5).abs() < 0.03, "{est:?}");

        // identical output for identical seeds
        assert_eq!(holder_exponent(&root, &opts).unwrap(), est);
    }

    #[test]
    fn vertical_poincare_examples() {
        let h = 1.0 / 32.0;
        let dom = Arc::new(ball(2, 1.0, h).unwrap());
        let cube = Cube { center: [0.0; 3], r: 0.5 };
        let one = Field::from_fn(dom.clone(), |_| 1.0);
        let res = check_vertical_poincare(&one, cube, 0.75).unwrap();
        // node counts: 33 rows of 33 nodes, 4 rows above λr = 0.375 (k = 13..16 of 16)
        let full = (33.0 * 33.0f64 * h * h).sqrt();
        let upper = (33.0 * 4.0f64 * h * h).sqrt();
        assert!((res.lhs - full).abs() < 1e-12);
        assert!((res.rhs - 4.0 * upper).abs() < 1e-12);
        assert!(res.margin > 0.0);

        let zero = Field::zeros(dom.clone());
        assert_eq!(check_vertical_poincare(&zero, cube, 0.5).unwrap().margin, 0.0);

        // v = x_N: 33 columns, rows k = -16..=16, upper rows k = 9..=16, ∂_N v = 1
        let y = Field::from_fn(dom.clone(), |p| p[1]);
        let res = check_vertical_poincare(&y, cube, 0.5).unwrap();
        let rows = |ks: std::ops::RangeInclusive<i32>| -> f64 {
            (33.0 * h * h * ks.map(|k| (k as f64 * h).powi(2)).sum::<f64>()).sqrt()
        };
        assert!((res.lhs - rows(-16..=16)).abs() < 1e-12);
        let rhs = 4.0 * rows(9..=16) + 3.0 * 0.5 * (33.0 * 33.0 * h * h).sqrt();
        assert!((res.rhs - rhs).abs() < 1e-12);
        assert!(res.margin > 0.0);

        assert!(check_vertical_poincare(&y, Cube { center: [0.0; 3], r: 2.0 }, 0.5).is_err());
        assert!(check_vertical_poincare(&y, cube, 0.9).is_err());
    }

    #[test]
    fn halfball_poincare_ratio() {
        let h = 1.0 / 32.0;
        let dom = Arc::new(ball(2, 1.2, h).unwrap());
        let v = Field::from_fn(dom.clone(), |p| if p[1] > 0.0 { p[1] * p[1] } else { 0.0 });
        let ratio = check_poincare_halfball(&v, 1, [0.0; 3], 1.0).unwrap().unwrap();
        assert!(ratio.is_finite() && ratio > 1.0);
        let z = Field::zeros(dom.clone());
        assert_eq!(check_poincare_halfball(&z, 1, [0.0; 3], 1.0).unwrap(), None);
        let bad = Field::from_fn(dom, |p| p[0]);
        assert!(check_poincare_halfball(&bad, 1, [0.0; 3], 1.0).is_err());
    }

    #[test]
    fn difference_bound_examples() {
        let h = 1.0 / 64.0;
        let dom = Arc::new(ball(2, 1.0, h).unwrap());
        let sin = Separable::new(vec![
            Factor::Sin { freq: 1.0, phase: 0.0 },
            Factor::Poly(vec![1.0]),
        ]);
        let b = check_difference_bound(&sin, &dom, &MultiIndex::new(vec![1, 0]), 2).unwrap();
        assert!(b.margin >= 0.0, "{b:?}");

        let affine = Separable::new(vec![Factor::Poly(vec![0.5, 2.0]), Factor::Poly(vec![1.0])]);
        let b = check_difference_bound(&affine, &dom, &MultiIndex::new(vec![1, 0]), 1).unwrap();
        assert!(b.margin >= -1e-12 && b.allowed_deficit == 0.0);

        let sq = Separable::new(vec![Factor::Poly(vec![0.0, 0.0, 1.0]), Factor::Poly(vec![1.0])]);
        let b = check_difference_bound(&sq, &dom, &MultiIndex::new(vec![2, 0]), 2).unwrap();
        assert!(b.margin >= 0.0);
    }

    #[test]
    fn pythagoras_for_replacement() {
        use crate::discretize::assemble;
        use crate::solve::{polyharmonic_replacement, solve_dirichlet, SolveOptions};
        let h = 1.0 / 32.0;
        let dom = Arc::new(ball(2, 1.0, h).unwrap());
        let op = EllipticOperator::polyharmonic(2, 2);
        let f = GridFunction::from_fn(dom.clone(), |p| 1.0 + p[0]);
        let sys = assemble(&op, &dom, &f).unwrap();
        let (u, _) = solve_dirichlet(&sys, &SolveOptions::new(1e-11, 100_000)).unwrap();
        let rep = polyharmonic_replacement(&op, &u, [0.8, 0.1, 0.0], 0.3, &SolveOptions::new(1e-12, 100_000)).unwrap();
        let p = pythagoras(&op, &u, &rep.v, [0.8, 0.1, 0.0], 0.3);
        assert!(p.relative_defect < 1e-8, "{p:?}");
        assert!(p.energy_v <= p.energy_u);
    }

    #[test]
    fn corner_centers_decay_no_faster_than_flat_ones() {
        let h = 1.0 / 256.0;
        let dom = Arc::new(crate::geometry::cone_domain(1.5 * std::f64::consts::PI, 1.0, h).unwrap());
        let op = EllipticOperator::polyharmonic(2, 1);
        let f = GridFunction::from_fn(dom.clone(), |_| 1.0);
        let sys = crate::discretize::assemble(&op, &dom, &f).unwrap();
        let (u, _) = crate::solve::solve_dirichlet(&sys, &crate::solve::SolveOptions::new(1e-11, 100_000)).unwrap();
        let lat = dom.lattice();
        let fringe = dom.exterior_boundary_points();
        let nearest = |p: Point| {
            let i = *fringe
                .iter()
                .min_by(|&&a, &&b| dist(&lat.point(a), &p).total_cmp(&dist(&lat.point(b), &p)))
                .unwrap();
            lat.point(i)
        };
        let exponent = |c: Point| {
            decay_profile(&op, u.field(), c, 0.2, 0.5, 3, &DecayOptions::default())
                .unwrap()
                .fitted_exponent
                .unwrap()
        };
        let corner = exponent(nearest([0.0; 3]));
        for flat in [[0.45, 0.0, 0.0], [0.0, -0.45, 0.0]] {
            let e = exponent(nearest(flat));
            assert!(corner <= e + 0.1, "corner {corner} vs flat {e}");
        }
    }

    proptest::proptest! {
        #[test]
        fn fit_recovers_any_power_law(c in 1e-3f64..1e3, p in 0.5f64..4.0, a in 0.3f64..0.8, k in 2usize..7) {
            let radii: Vec<f64> = (0..=k).map(|j| 0.7 * a.powi(j as i32)).collect();
            let e: Vec<f64> = radii.iter().map(|r| c * r.powf(p)).collect();
            let rep = decay_from_energies([0.0; 3], 0.7, a, radii, e, 0.0);
            proptest::prop_assert!((rep.fitted_exponent.unwrap() - p).abs() < 1e-12);
        }
    }
}
