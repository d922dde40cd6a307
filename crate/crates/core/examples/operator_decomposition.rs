//! Random elliptic operators and their split `𝒜 = ℬ + 𝒟 ∘ (−∂_N²)`.

use polylab::multiindex;
use polylab::operator::{random_elliptic, EllipticOperator};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> polylab::Result<()> {
    let order2: Vec<String> = multiindex::enumerate(2, 2).iter().map(|a| a.to_string()).collect();
    println!("|α| = 2 in N = 2: {}", order2.join(" "));

    let bilap = EllipticOperator::polyharmonic(2, 2);
    println!("Δ² symbol at ξ = (1, 2): {}", bilap.apply_symbol(&[1.0, 2.0]));

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (dim, m) in [(2, 1), (2, 2), (3, 2), (2, 3)] {
        let op = random_elliptic(dim, m, &mut rng);
        let d = op.decompose()?;
        println!(
            "N={dim} m={m}: λ(𝒜) = {:.4}, λ(𝒟) = {:.4}, reconstruction residual {:e}",
            op.ellipticity_constant(),
            d.d_part.ellipticity_constant(),
            d.reconstruction_residual(&op)
        );
    }
    Ok(())
}
