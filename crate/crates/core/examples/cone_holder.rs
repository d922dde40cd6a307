//! Harmonic function on the 3π/2 cone: Hölder exponent 2/3 at the apex.

use std::f64::consts::PI;
use std::sync::Arc;

use polylab::analyze::{holder_exponent, HolderOptions};
use polylab::discretize::{assemble, GridFunction};
use polylab::geometry::{cone_domain, polar_angle};
use polylab::operator::EllipticOperator;
use polylab::solve::{solve_dirichlet, SolveOptions};

fn main() -> polylab::Result<()> {
    let h = 1.0 / 128.0;
    let dom = Arc::new(cone_domain(1.5 * PI, 1.0, h)?);
    // −Δ of r^{2/3} sin(2θ/3) exp(−256 r⁸)
    let src = GridFunction::from_fn(dom.clone(), |p| {
        let r = p[0].hypot(p[1]);
        let t = polar_angle(p[0], p[1]);
        (2.0 * t / 3.0).sin() * (-256.0 * r.powi(8)).exp() * r.powf(20.0 / 3.0) * (16384.0 + 8192.0 / 3.0 - 4194304.0 * r.powi(8))
    });
    let sys = assemble(&EllipticOperator::polyharmonic(2, 1), &dom, &src)?;
    let (u, _) = solve_dirichlet(&sys, &SolveOptions::new(1e-11, 100_000))?;

    let mut opts = HolderOptions::new(100_000, 1.0 / 32.0);
    opts.max_sep = Some(0.25);
    opts.anchor = Some([0.0, 0.0, 0.0]);
    let est = holder_exponent(u.field(), &opts)?;
    println!("apex Hölder exponent {:?} (2/3 expected)", est.exponent);
    Ok(())
}
