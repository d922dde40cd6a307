//! Constant-coefficient operators `(-1)^m Σ a_{α,β} ∂^β ∂^α` of order `2m`.
//!
//! Coefficients are stored as a dense symmetric matrix whose rows and columns
//! follow [`multiindex::enumerate`] order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::multiindex::{self, MultiIndex};

/// Relative threshold below which the smallest eigenvalue counts as zero.
pub const ELLIPTICITY_RTOL: f64 = 1e-10;

/// A square coefficient table over `{|α| = m}` with no symmetry or
/// ellipticity guarantee. Produced by file loaders and random generators;
/// promoted to [`EllipticOperator`] by validation.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientMatrix {
    pub dim: usize,
    pub m: u32,
    pub indices: Vec<MultiIndex>,
    /// Row-major, `indices.len()²` entries.
    pub values: Vec<f64>,
}

impl CoefficientMatrix {
    pub fn zeros(dim: usize, m: u32) -> Self {
        let indices = multiindex::enumerate(dim, m);
        let k = indices.len();
        CoefficientMatrix {
            dim,
            m,
            indices,
            values: vec![0.0; k * k],
        }
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size() + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.size();
        self.values[i * k + j] = v;
    }

    pub fn position(&self, alpha: &MultiIndex) -> Option<usize> {
        self.indices.iter().position(|a| a == alpha)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// `max |a_{α,β} − a_{β,α}|`.
    pub fn asymmetry(&self) -> f64 {
        let k = self.size();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..i {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }
}

/// Symmetric, strictly elliptic coefficient set.
#[derive(Clone, Debug, PartialEq)]
pub struct EllipticOperator {
    coeffs: CoefficientMatrix,
    lambda_min: f64,
}

impl EllipticOperator {
    /// Validates symmetry (exact) and ellipticity.
    pub fn new(coeffs: CoefficientMatrix) -> Result<Self> {
        let asym = coeffs.asymmetry();
        if asym > 0.0 {
            return Err(Error::NotSymmetric(asym));
        }
        let lambda_min = min_eigenvalue(&coeffs.values, coeffs.size());
        let threshold = ELLIPTICITY_RTOL * coeffs.max_abs();
        if !(lambda_min > threshold) {
            return Err(Error::NotElliptic {
                lambda_min,
                threshold,
            });
        }
        Ok(EllipticOperator { coeffs, lambda_min })
    }

    /// `(−Δ)^m`, with diagonal coefficients `m!/α!`.
    pub fn polyharmonic(dim: usize, m: u32) -> Self {
        assert!(dim >= 1 && m >= 1, "polyharmonic needs N ≥ 1 and m ≥ 1");
        let mut c = CoefficientMatrix::zeros(dim, m);
        for i in 0..c.size() {
            let w = multiindex::factorial_weight(&c.indices[i], m).expect("length m");
            c.set(i, i, w as f64);
        }
        EllipticOperator::new(c).expect("polyharmonic coefficients are elliptic")
    }

    pub fn dim(&self) -> usize {
        self.coeffs.dim
    }

    /// Half-order; the operator has order `2m`.
    pub fn m(&self) -> u32 {
        self.coeffs.m
    }

    pub fn indices(&self) -> &[MultiIndex] {
        &self.coeffs.indices
    }

    pub fn coefficients(&self) -> &CoefficientMatrix {
        &self.coeffs
    }

    pub fn coeff(&self, i: usize, j: usize) -> f64 {
        self.coeffs.get(i, j)
    }

    /// Smallest eigenvalue of the coefficient matrix: the best constant in
    /// `Σ a_{α,β} ξ_α ξ_β ≥ C |ξ|²`.
    pub fn ellipticity_constant(&self) -> f64 {
        self.lambda_min
    }

    /// `ξᵀ A ξ`.
    pub fn quadratic_form(&self, xi: &[f64]) -> f64 {
        let k = self.coeffs.size();
        assert_eq!(xi.len(), k);
        let mut acc = 0.0;
        for i in 0..k {
            for j in 0..k {
                acc += self.coeffs.get(i, j) * xi[i] * xi[j];
            }
        }
        acc
    }

    /// Fourier symbol `Σ a_{α,β} k^α k^β`.
    pub fn apply_symbol(&self, k: &[f64]) -> f64 {
        assert_eq!(k.len(), self.dim());
        let powers: Vec<f64> = self.indices().iter().map(|a| a.monomial(k)).collect();
        self.quadratic_form(&powers)
    }

    /// Split into the part acting through at most one vertical (`x_N`)
    /// derivative on either side, and the operator `𝒟` of half-order `m−1`
    /// obtained by peeling one `∂_N` off both indices.
    pub fn decompose(&self) -> Result<Decomposition> {
        let m = self.m();
        if m == 0 {
            return Err(Error::Operator("cannot decompose an order-0 operator".into()));
        }
        let n = self.dim();
        let vertical = n - 1;
        let e_n = MultiIndex::unit(n, vertical);
        let k = self.coeffs.size();

        let mut b_part = self.coeffs.clone();
        let mut d = CoefficientMatrix::zeros(n, m - 1);
        for i in 0..k {
            for j in 0..k {
                let (ai, bj) = (&self.coeffs.indices[i], &self.coeffs.indices[j]);
                if ai.get(vertical) > 0 && bj.get(vertical) > 0 {
                    b_part.set(i, j, 0.0);
                    let di = d.position(&ai.checked_sub(&e_n).unwrap()).unwrap();
                    let dj = d.position(&bj.checked_sub(&e_n).unwrap()).unwrap();
                    d.set(di, dj, self.coeffs.get(i, j));
                }
            }
        }
        Ok(Decomposition {
            b_part,
            d_part: EllipticOperator::new(d)?,
        })
    }
}

/// `𝒜 = ℬ + 𝒟 ∘ (−∂_N²)` at the coefficient level.
#[derive(Clone, Debug)]
pub struct Decomposition {
    /// Copy of the coefficients with every entry having `α_N > 0` and
    /// `β_N > 0` zeroed.
    pub b_part: CoefficientMatrix,
    pub d_part: EllipticOperator,
}

impl Decomposition {
    /// Max deviation between `a_{α,β}` and the value rebuilt from `ℬ` and
    /// `𝒟`. Zero for a correct split.
    pub fn reconstruction_residual(&self, op: &EllipticOperator) -> f64 {
        let n = op.dim();
        let vertical = n - 1;
        let e_n = MultiIndex::unit(n, vertical);
        let d = self.d_part.coefficients();
        let k = op.coefficients().size();
        let mut worst = 0.0f64;
        for i in 0..k {
            for j in 0..k {
                let (ai, bj) = (&op.indices()[i], &op.indices()[j]);
                let rebuilt = if ai.get(vertical) > 0 && bj.get(vertical) > 0 {
                    let di = d.position(&ai.checked_sub(&e_n).unwrap()).unwrap();
                    let dj = d.position(&bj.checked_sub(&e_n).unwrap()).unwrap();
                    self.b_part.get(i, j) + d.get(di, dj)
                } else {
                    self.b_part.get(i, j)
                };
                worst = worst.max((rebuilt - op.coeff(i, j)).abs());
            }
        }
        worst
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    assert_eq!(a.len(), n * n);
    let mut a = a.to_vec();
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs()));
    if scale == 0.0 {
        return vec![0.0; n];
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        if off.sqrt() <= 1e-15 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for r in 0..n {
                    let arp = a[r * n + p];
                    let arq = a[r * n + q];
                    a[r * n + p] = c * arp - s * arq;
                    a[r * n + q] = s * arp + c * arq;
                }
                for r in 0..n {
                    let apr = a[p * n + r];
                    let aqr = a[q * n + r];
                    a[p * n + r] = c * apr - s * aqr;
                    a[q * n + r] = s * apr + c * aqr;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

pub fn min_eigenvalue(a: &[f64], n: usize) -> f64 {
    symmetric_eigenvalues(a, n)[0]
}

/// `QᵀQ + shift·I` with a random `Q`.
pub fn random_elliptic(dim: usize, m: u32, rng: &mut impl rand::Rng) -> EllipticOperator {
    let mut c = CoefficientMatrix::zeros(dim, m);
    let k = c.size();
    let q: Vec<f64> = (0..k * k).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let shift = rng.gen_range(0.01..0.5);
    for i in 0..k {
        for j in 0..=i {
            let mut v: f64 = (0..k).map(|l| q[l * k + i] * q[l * k + j]).sum();
            if i == j {
                v += shift;
            }
            c.set(i, j, v);
            c.set(j, i, v);
        }
    }
    EllipticOperator::new(c).unwrap()
}

#[derive(Serialize, Deserialize)]
struct OperatorFile {
    #[serde(rename = "N")]
    dim: usize,
    m: u32,
    entries: Vec<EntryFile>,
}

#[derive(Serialize, Deserialize)]
struct EntryFile {
    alpha: String,
    beta: String,
    value: f64,
}

impl CoefficientMatrix {
    /// Parses the JSON operator format. An entry given only once is mirrored;
    /// an entry given for both `(α,β)` and `(β,α)` is kept as written so that
    /// inconsistent files surface as asymmetry.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: OperatorFile = serde_json::from_str(text)?;
        if file.dim == 0 {
            return Err(Error::Operator("N must be positive".into()));
        }
        let mut c = CoefficientMatrix::zeros(file.dim, file.m);
        let k = c.size();
        let mut seen = vec![false; k * k];
        for e in &file.entries {
            let locate = |s: &str| -> Result<usize> {
                let a: MultiIndex = s.parse()?;
                c.position(&a).ok_or_else(|| {
                    Error::Operator(format!("{a} is not an index of length {} in N={}", file.m, file.dim))
                })
            };
            let (i, j) = (locate(&e.alpha)?, locate(&e.beta)?);
            c.set(i, j, e.value);
            seen[i * k + j] = true;
        }
        for i in 0..k {
            for j in 0..k {
                if seen[i * k + j] && !seen[j * k + i] {
                    let v = c.get(i, j);
                    c.set(j, i, v);
                }
            }
        }
        Ok(c)
    }

    /// Upper triangle only, in enumeration order.
    pub fn to_json(&self) -> String {
        let k = self.size();
        let mut entries = Vec::new();
        for i in 0..k {
            for j in i..k {
                entries.push(EntryFile {
                    alpha: self.indices[i].to_string(),
                    beta: self.indices[j].to_string(),
                    value: self.get(i, j),
                });
            }
        }
        let file = OperatorFile {
            dim: self.dim,
            m: self.m,
            entries,
        };
        serde_json::to_string_pretty(&file).expect("operator serializes")
    }
}

impl EllipticOperator {
    pub fn from_json(text: &str) -> Result<Self> {
        EllipticOperator::new(CoefficientMatrix::from_json(text)?)
    }

    pub fn to_json(&self) -> String {
        self.coeffs.to_json()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn polyharmonic_coefficients() {
        let op = EllipticOperator::polyharmonic(2, 1);
        assert_eq!(op.coefficients().values, vec![1.0, 0.0, 0.0, 1.0]);
        let op = EllipticOperator::polyharmonic(2, 2);
        let diag: Vec<f64> = (0..3).map(|i| op.coeff(i, i)).collect();
        assert_eq!(diag, vec![1.0, 2.0, 1.0]);
        assert_eq!(op.coefficients().values.iter().filter(|v| **v != 0.0).count(), 3);
        let op = EllipticOperator::polyharmonic(3, 1);
        assert_eq!(op.coefficients().size(), 3);
        assert_eq!(op.ellipticity_constant(), 1.0);
    }

    #[test]
    fn ellipticity_examples() {
        assert_eq!(EllipticOperator::polyharmonic(2, 1).ellipticity_constant(), 1.0);
        assert_eq!(EllipticOperator::polyharmonic(2, 2).ellipticity_constant(), 1.0);
        let mut c = CoefficientMatrix::zeros(2, 1);
        c.values = vec![1.0, 0.999, 0.999, 1.0];
        let op = EllipticOperator::new(c).unwrap();
        assert!((op.ellipticity_constant() - 0.001).abs() < 1e-12);
    }

    #[test]
    fn rejects_degenerate_and_asymmetric() {
        let mut c = CoefficientMatrix::zeros(2, 1);
        c.values = vec![1.0, 1.0, 1.0, 1.0];
        assert!(matches!(EllipticOperator::new(c.clone()), Err(Error::NotElliptic { .. })));
        c.values = vec![1.0, 0.2, 0.1, 1.0];
        assert!(matches!(EllipticOperator::new(c), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        // tridiag(-1, 2, -1) of size 5: 2 − 2cos(kπ/6)
        let n = 5;
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            a[i * n + i] = 2.0;
            if i + 1 < n {
                a[i * n + i + 1] = -1.0;
                a[(i + 1) * n + i] = -1.0;
            }
        }
        let eig = symmetric_eigenvalues(&a, n);
        for (k, e) in eig.iter().enumerate() {
            let exact = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / 6.0).cos();
            assert!((e - exact).abs() < 1e-13, "{e} vs {exact}");
        }
    }

    #[test]
    fn decompose_examples() {
        let op = EllipticOperator::polyharmonic(2, 1);
        let dec = op.decompose().unwrap();
        assert_eq!(dec.d_part.m(), 0);
        assert_eq!(dec.d_part.coefficients().values, vec![1.0]);
        assert_eq!(dec.b_part.values, vec![1.0, 0.0, 0.0, 0.0]);

        let op = EllipticOperator::polyharmonic(2, 2);
        let dec = op.decompose().unwrap();
        assert_eq!(dec.d_part.coefficients().values, vec![2.0, 0.0, 0.0, 1.0]);
        assert_eq!(dec.reconstruction_residual(&op), 0.0);
    }

    #[test]
    fn symbol_examples() {
        assert_eq!(EllipticOperator::polyharmonic(2, 1).apply_symbol(&[3.0, 4.0]), 25.0);
        assert_eq!(EllipticOperator::polyharmonic(2, 2).apply_symbol(&[3.0, 4.0]), 625.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = random_elliptic(3, 2, &mut rng);
        assert_eq!(op.apply_symbol(&[0.0; 3]), 0.0);
    }

    #[test]
    fn recursive_decomposition_terminates() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for m in 1..=3 {
            let mut op = random_elliptic(3, m, &mut rng);
            for _ in 0..m {
                op = op.decompose().unwrap().d_part;
            }
            assert_eq!(op.m(), 0);
            assert!(op.coeff(0, 0) > 0.0);
            assert!(op.decompose().is_err());
        }
    }

    #[test]
    fn json_round_trip_and_mirroring() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let op = random_elliptic(2, 2, &mut rng);
        let back = EllipticOperator::from_json(&op.to_json()).unwrap();
        assert_eq!(back, op);

        let text = r#"{"N":2,"m":1,"entries":[
            {"alpha":"(1,0)","beta":"(1,0)","value":1.0},
            {"alpha":"(1,0)","beta":"(0,1)","value":0.25},
            {"alpha":"(0,1)","beta":"(0,1)","value":2.0}]}"#;
        let c = CoefficientMatrix::from_json(text).unwrap();
        assert_eq!(c.values, vec![1.0, 0.25, 0.25, 2.0]);

        let bad = r#"{"N":2,"m":1,"entries":[
            {"alpha":"(1,0)","beta":"(0,1)","value":0.25},
            {"alpha":"(0,1)","beta":"(1,0)","value":0.5}]}"#;
        assert!(CoefficientMatrix::from_json(bad).unwrap().asymmetry() > 0.2);
        let wrong = r#"{"N":2,"m":1,"entries":[{"alpha":"(2,0)","beta":"(1,0)","value":1}]}"#;
        assert!(CoefficientMatrix::from_json(wrong).is_err());
    }

    proptest! {
        #[test]
        fn quadratic_form_bounded_below(seed in any::<u64>(), dim in 1usize..=3, m in 1u32..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let op = random_elliptic(dim, m, &mut rng);
            let k = op.indices().len();
            let mut xi: Vec<f64> = (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = xi.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            xi.iter_mut().for_each(|v| *v /= norm);
            prop_assert!(op.quadratic_form(&xi) >= op.ellipticity_constant() - 1e-12);
        }

        #[test]
        fn decomposition_keeps_ellipticity(seed in any::<u64>(), dim in 1usize..=3, m in 1u32..=3) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let op = random_elliptic(dim, m, &mut rng);
            let dec = op.decompose().unwrap();
            prop_assert_eq!(dec.reconstruction_residual(&op), 0.0);
            prop_assert!(dec.d_part.ellipticity_constant() >= op.ellipticity_constant() - 1e-12);
        }

        #[test]
        fn polyharmonic_symbol_is_norm_power(dim in 1usize..=3, m in 1u32..=3,
                                             k in proptest::collection::vec(-3.0f64..3.0, 3)) {
            let op = EllipticOperator::polyharmonic(dim, m);
            let k = &k[..dim];
            let norm2: f64 = k.iter().map(|v| v * v).sum();
            let expected = norm2.powi(m as i32);
            prop_assert!((op.apply_symbol(k) - expected).abs() <= 1e-12 * expected.max(1e-300));
        }
    }
}
