//! Reifenberg flatness of Koch-type domains as the bump amplitude grows.

use polylab::geometry::{koch_domain, measure_flatness};

fn main() -> polylab::Result<()> {
    let radii = [1.0 / 32.0, 1.0 / 16.0, 1.0 / 8.0];
    for delta in [0.01, 0.05, 0.1, 0.2] {
        let dom = koch_domain(delta, 3, 0.5, 1.0 / 256.0)?;
        let rep = measure_flatness(&dom, &radii, 32)?;
        println!(
            "delta = {delta:<5} boundary nodes {:>5}  ε_max = {:.4}",
            dom.boundary_points().len(),
            rep.eps_max
        );
    }
    Ok(())
}
