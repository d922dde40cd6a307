//! Poisson and biharmonic problems on `(0, 1)` against their closed forms.

use std::sync::Arc;

use polylab::discretize::{assemble, GridFunction};
use polylab::geometry::interval;
use polylab::operator::EllipticOperator;
use polylab::solve::{solve_dirichlet, SolveOptions};

fn midpoint(h: f64, m: u32, f: f64, tol: f64) -> polylab::Result<f64> {
    let dom = Arc::new(interval(0.0, 1.0, h)?);
    let src = GridFunction::from_fn(dom.clone(), |_| f);
    let sys = assemble(&EllipticOperator::polyharmonic(1, m), &dom, &src)?;
    let (u, _) = solve_dirichlet(&sys, &SolveOptions::new(tol, 100_000))?;
    let lat = dom.lattice();
    Ok(u.at(lat.index(lat.nearest_node([0.5, 0.0, 0.0])).expect("midpoint node")))
}

fn main() -> polylab::Result<()> {
    // −u'' = 1, u = x(1−x)/2
    let p = midpoint(1.0 / 64.0, 1, 1.0, 1e-13)?;
    println!("Poisson   u(1/2) = {p:.15}  (exact 0.125)");
    // u'''' = 24, u = x²(1−x)²
    let mut prev: Option<f64> = None;
    for n in [32, 64, 128] {
        let e = (midpoint(1.0 / n as f64, 2, 24.0, 1e-9)? - 0.0625).abs();
        let order = prev.map_or(String::new(), |p| format!(", order {:.3}", (p / e).log2()));
        println!("biharmonic h = 1/{n}: midpoint error {e:.4e}{order}");
        prev = Some(e);
    }
    Ok(())
}
