//! Boundary energy decay of a biharmonic solution on a Koch-type domain.

use std::sync::Arc;

use polylab::analyze::{decay_profile, DecayOptions};
use polylab::discretize::{assemble, GridFunction};
use polylab::geometry::{koch_domain, strided_exterior_centers};
use polylab::operator::EllipticOperator;
use polylab::solve::{solve_dirichlet, SolveOptions};

fn main() -> polylab::Result<()> {
    let h = 1.0 / 128.0;
    let dom = Arc::new(koch_domain(0.05, 2, 0.5, h)?);
    let op = EllipticOperator::polyharmonic(2, 2);
    let sys = assemble(&op, &dom, &GridFunction::from_fn(dom.clone(), |_| 1.0))?;
    let (u, rep) = solve_dirichlet(&sys, &SolveOptions::new(1e-9, 200_000))?;
    println!("solved in {} iterations", rep.iterations);

    for c in strided_exterior_centers(&dom, 8) {
        let d = decay_profile(&op, u.field(), c, 0.125, 0.5, 2, &DecayOptions::default())?;
        println!(
            "center ({:+.3}, {:+.3}): exponent {}",
            c[0],
            c[1],
            d.fitted_exponent.map_or("-".into(), |e| format!("{e:.3}"))
        );
    }
    Ok(())
}
