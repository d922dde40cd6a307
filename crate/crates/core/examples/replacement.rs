//! Local polyharmonic replacement and the Pythagoras identity.

use std::sync::Arc;

use polylab::analyze::pythagoras;
use polylab::discretize::{assemble, GridFunction};
use polylab::geometry::ball;
use polylab::operator::EllipticOperator;
use polylab::solve::{polyharmonic_replacement, solve_dirichlet, SolveOptions};

fn main() -> polylab::Result<()> {
    let dom = Arc::new(ball(2, 1.0, 1.0 / 64.0)?);
    let op = EllipticOperator::polyharmonic(2, 2);
    let src = GridFunction::from_fn(dom.clone(), |p| 1.0 + p[0] - 0.5 * p[1] * p[1]);
    let opts = SolveOptions::new(1e-9, 100_000);
    let (u, _) = solve_dirichlet(&assemble(&op, &dom, &src)?, &opts)?;

    for (c, r) in [([0.2, 0.1, 0.0], 0.3), ([-0.5, 0.0, 0.0], 0.4), ([0.9, 0.0, 0.0], 0.25)] {
        let rep = polyharmonic_replacement(&op, &u, c, r, &opts)?;
        let p = pythagoras(&op, u.field(), rep.v.field(), c, r);
        println!(
            "B(({:+.1}, {:+.1}), {r}): E(u) = {:.6e}  E(v) = {:.6e}  E(u−v) = {:.6e}  defect {:.2e}",
            c[0], c[1], p.energy_u, p.energy_v, p.energy_diff, p.relative_defect
        );
    }
    Ok(())
}
