//! Jacobi-preconditioned conjugate gradients and local polyharmonic
//! replacement.

use std::sync::Arc;
use std::time::Instant;

use log::{debug, warn};
use rayon::prelude::*;

use crate::discretize::{assemble_on, operator_kernel, DiscreteSystem, GridFunction};
use crate::error::{Error, Result};
use crate::lattice::Point;
use crate::operator::EllipticOperator;
use crate::sparse::{dot, CsrMatrix};

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 2_000_000;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Keep the quadratic energy after every iteration.
    pub record_energy: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            record_energy: false,
        }
    }
}

impl SolveOptions {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        SolveOptions {
            tol,
            max_iter,
            record_energy: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// `½⟨Mu,u⟩ − ⟨b,u⟩` at the returned iterate.
    pub energy: f64,
    pub wall_time: f64,
    /// Energies of iterates 0..=iterations when requested.
    pub energy_trace: Vec<f64>,
}

impl SolveReport {
    pub const CSV_HEADER: &'static str = "label,dim,iterations,residual,energy,seconds";

    pub fn csv_row(&self, label: &str, dim: usize) -> String {
        format!(
            "{label},{dim},{},{:.16e},{:.16e},{:.6}",
            self.iterations, self.relative_residual, self.energy, self.wall_time
        )
    }
}

/// Each inner CG pass stops once its recursive residual has dropped by this
/// factor; the outer loop then recomputes the true residual.
const INNER_REDUCTION: f64 = 1e-6;
/// Outer passes without a halving of the true residual before giving up.
const MAX_STALLS: usize = 3;

/// Solves `A x = b` for symmetric positive definite `A`, starting from
/// `x0` (zero by default).
///
/// Jacobi-preconditioned CG runs inside an iterative-refinement loop: the
/// true residual `b − A x` is recomputed with compensated sums after every
/// pass, so the reported residual is reachable even when the plain
/// floating-point residual of a badly conditioned system stalls above the
/// tolerance. Signals indefiniteness if a search direction has
/// non-positive curvature.
pub fn conjugate_gradient(
    a: &CsrMatrix,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let start = Instant::now();
    let n = a.dim();
    assert_eq!(b.len(), n);
    let mut x = x0.map_or_else(|| vec![0.0; n], |v| v.to_vec());
    let b_norm = dot(b, b).sqrt();
    let energy_of = |x: &[f64], r: &[f64]| -0.5 * (dot(r, x) + dot(b, x));
    let mut r = a.residual_compensated(b, &x);
    let mut trace = Vec::new();
    if opts.record_energy {
        trace.push(energy_of(&x, &r));
    }
    let denom = if b_norm > 0.0 { b_norm } else { 1.0 };
    let mut res = dot(&r, &r).sqrt() / denom;
    if b_norm == 0.0 && res == 0.0 {
        return Ok((
            x,
            SolveReport {
                iterations: 0,
                relative_residual: 0.0,
                energy: 0.0,
                wall_time: start.elapsed().as_secs_f64(),
                energy_trace: trace,
            },
        ));
    }

    let inv_diag: Vec<f64> = a
        .diagonal()
        .into_iter()
        .map(|d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();
    let mut iterations = 0;
    let mut stalls = 0;
    while res > opts.tol {
        if iterations >= opts.max_iter || stalls >= MAX_STALLS {
            return Err(Error::NotConverged {
                iterations,
                residual: res,
            });
        }
        let target = (opts.tol * denom).max(INNER_REDUCTION * res * denom);
        let d = cg_pass(a, &r, &inv_diag, target, opts, &mut iterations, |d, r_in| {
            if opts.record_energy {
                let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + di).collect();
                trace.push(energy_of(&xt, r_in));
            }
        })?;
        x.par_iter_mut()
            .with_min_len(4096)
            .zip(d.par_iter())
            .for_each(|(xi, di)| *xi += di);
        r = a.residual_compensated(b, &x);
        let next = dot(&r, &r).sqrt() / denom;
        debug!("refinement pass: true relative residual {next:.3e} after {iterations} iterations");
        stalls = if next > 0.5 * res { stalls + 1 } else { 0 };
        res = next;
    }
    let energy = energy_of(&x, &r);
    Ok((
        x,
        SolveReport {
            iterations,
            relative_residual: res,
            energy,
            wall_time: start.elapsed().as_secs_f64(),
            energy_trace: trace,
        },
    ))
}

/// Preconditioned CG for `A d = r` from `d = 0` until the recursive residual
/// norm reaches `target`. `observe` sees every iterate and its residual.
fn cg_pass(
    a: &CsrMatrix,
    rhs: &[f64],
    inv_diag: &[f64],
    target: f64,
    opts: &SolveOptions,
    iterations: &mut usize,
    mut observe: impl FnMut(&[f64], &[f64]),
) -> Result<Vec<f64>> {
    let n = rhs.len();
    let precondition = |r: &[f64], z: &mut [f64]| {
        z.par_iter_mut()
            .with_min_len(4096)
            .zip(r.par_iter())
            .zip(inv_diag.par_iter())
            .for_each(|((zi, ri), di)| *zi = ri * di);
    };
    let mut d = vec![0.0; n];
    let mut r = rhs.to_vec();
    let mut z = vec![0.0; n];
    precondition(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut norm = dot(&r, &r).sqrt();
    while norm > target {
        if *iterations >= opts.max_iter {
            break;
        }
        a.mul_vec_into(&p, &mut ap);
        let curvature = dot(&p, &ap);
        if !(curvature > 0.0) {
            return Err(Error::Indefinite(curvature, *iterations));
        }
        let alpha = rz / curvature;
        d.par_iter_mut()
            .with_min_len(4096)
            .zip(p.par_iter())
            .for_each(|(di, pi)| *di += alpha * pi);
        r.par_iter_mut()
            .with_min_len(4096)
            .zip(ap.par_iter())
            .for_each(|(ri, api)| *ri -= alpha * api);
        precondition(&r, &mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        p.par_iter_mut()
            .with_min_len(4096)
            .zip(z.par_iter())
            .for_each(|(pi, zi)| *pi = zi + beta * *pi);
        *iterations += 1;
        norm = dot(&r, &r).sqrt();
        observe(&d, &r);
        if (*iterations).is_multiple_of(10_000) {
            debug!("cg iteration {}: residual norm {norm:.3e}", *iterations);
        }
    }
    Ok(d)
}

/// Discrete minimizer of `½ a(u,u) − (f,u)` over the zero-extended grid
/// functions on the system's domain.
pub fn solve_dirichlet(sys: &DiscreteSystem, opts: &SolveOptions) -> Result<(GridFunction, SolveReport)> {
    let (x, report) = conjugate_gradient(&sys.matrix, &sys.rhs, None, opts)?;
    Ok((sys.to_grid_function(&x), report))
}

/// Result of replacing a solution by the energy minimizer inside a ball.
#[derive(Clone, Debug)]
pub struct Replacement {
    pub v: GridFunction,
    pub report: Option<SolveReport>,
    /// Lattice indices that were free in the local problem.
    pub unknowns: Vec<usize>,
    /// The ball missed `Ω`; `v` is a copy of `u`.
    pub empty: bool,
}

/// Minimizes `⟨A∇^m v, ∇^m v⟩` over `v` equal to `u` except at the inside
/// nodes of the open ball `B(center, r)`.
pub fn polyharmonic_replacement(
    op: &EllipticOperator,
    u: &GridFunction,
    center: Point,
    r: f64,
    opts: &SolveOptions,
) -> Result<Replacement> {
    polyharmonic_replacement_from(op, u, center, r, opts, None)
}

/// As [`polyharmonic_replacement`], with an explicit initial guess for the
/// local unknowns (ordered as the returned `unknowns`).
pub fn polyharmonic_replacement_from(
    op: &EllipticOperator,
    u: &GridFunction,
    center: Point,
    r: f64,
    opts: &SolveOptions,
    initial: Option<&[f64]>,
) -> Result<Replacement> {
    let dom: &Arc<_> = u.domain();
    let lat = dom.lattice();
    let unknowns: Vec<usize> = lat
        .ball_indices(center, r, false)
        .into_iter()
        .filter(|&i| dom.contains(i))
        .collect();
    if unknowns.is_empty() {
        warn!("replacement ball at {center:?} radius {r} misses the domain");
        return Ok(Replacement {
            v: u.clone(),
            report: None,
            unknowns,
            empty: true,
        });
    }
    let sys = assemble_on(op, dom, &unknowns, &GridFunction::zeros(dom.clone()))?;

    // exterior data enters through the stencil: b_p = −(K ũ)(p), ũ = u off the ball
    let mut free = vec![false; lat.len()];
    for &i in &unknowns {
        free[i] = true;
    }
    let kernel = operator_kernel(op);
    let rhs: Vec<f64> = unknowns
        .par_iter()
        .map(|&p| {
            -sys.scale
                * kernel
                    .iter()
                    .map(|(d, kv)| match lat.shifted(p, *d) {
                        Some(q) if !free[q] => kv * u.at(q),
                        _ => 0.0,
                    })
                    .sum::<f64>()
        })
        .collect();
    let (x, report) = conjugate_gradient(&sys.matrix, &rhs, initial, opts)?;
    let mut values = u.values().to_vec();
    for (k, &i) in unknowns.iter().enumerate() {
        values[i] = x[k];
    }
    let v = GridFunction::from_values(dom.clone(), values)?;
    Ok(Replacement {
        v,
        report: Some(report),
        unknowns,
        empty: false,
    })
}
