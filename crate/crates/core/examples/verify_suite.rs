//! The identity and inequality suite driven from a JSON config.

use polylab::runner::{run_verify, ExperimentConfig};

fn main() -> polylab::Result<()> {
    let mut cfg = ExperimentConfig::from_json(
        r#"{
            "label": "example_verify",
            "seed": 11,
            "h": 0.03125,
            "operator": {"polyharmonic": {"m": 2}},
            "domain": {"kind": "ball", "dim": 2, "radius": 1.0},
            "source": {"expression": "1 + x - 0.5*y^2"},
            "solver": {"tol": 1e-11},
            "verify": {"random_operators": 20, "pythagoras_pairs": 4}
        }"#,
        ".",
    )?;
    cfg.output = std::env::temp_dir().join("polylab_verify_example");
    let out = run_verify(&cfg)?;
    for c in &out.checks {
        println!("{:<30} {:>12.4e} {}", c.name, c.margin, if c.pass { "pass" } else { "FAIL" });
    }
    println!("written to {}", cfg.output_dir().join("verify.csv").display());
    Ok(())
}
