//! Multi-index algebra: enumeration in graded lexicographic order, partial
//! order, factorials and the binomial coefficients of the Leibniz rule.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Exponent vector `α ∈ ℕ^N`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MultiIndex {
    exponents: Vec<u32>,
}

impl MultiIndex {
    pub fn new(exponents: Vec<u32>) -> Self {
        assert!(!exponents.is_empty(), "multi-index needs at least one component");
        MultiIndex { exponents }
    }

    pub fn zero(dim: usize) -> Self {
        Self::new(vec![0; dim])
    }

    /// The unit index `e_axis` (0-based axis).
    pub fn unit(dim: usize, axis: usize) -> Self {
        let mut e = vec![0; dim];
        e[axis] = 1;
        Self::new(e)
    }

    pub fn dim(&self) -> usize {
        self.exponents.len()
    }

    pub fn exponents(&self) -> &[u32] {
        &self.exponents
    }

    pub fn get(&self, axis: usize) -> u32 {
        self.exponents[axis]
    }

    /// Length `|α| = Σ α_i`.
    pub fn order(&self) -> u32 {
        self.exponents.iter().sum()
    }

    /// `α!` as a product of component factorials.
    pub fn factorial(&self) -> u64 {
        self.exponents.iter().map(|&a| factorial(a)).product()
    }

    /// Componentwise `self ≤ other`.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.dim() == other.dim()
            && self
                .exponents
                .iter()
                .zip(&other.exponents)
                .all(|(a, b)| a <= b)
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Option<MultiIndex> {
        if !other.le(self) {
            return None;
        }
        Some(MultiIndex::new(
            self.exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a - b)
                .collect(),
        ))
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        assert_eq!(self.dim(), other.dim());
        MultiIndex::new(
            self.exponents
                .iter()
                .zip(&other.exponents)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    /// `x^α = Π x_i^{α_i}`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(x)
            .map(|(&a, &xi)| xi.powi(a as i32))
            .product()
    }

    /// All `β ≤ α`, in graded lexicographic order by length.
    pub fn lower_set(&self) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for k in 0..=self.order() {
            out.extend(enumerate(self.dim(), k).into_iter().filter(|b| b.le(self)));
        }
        out
    }
}

/// Graded lexicographic comparison: by length first, then larger leading
/// exponent first, so `(2,0) < (1,1) < (0,2)` within the same length.
impl Ord for MultiIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        self.order()
            .cmp(&other.order())
            .then_with(|| other.exponents.cmp(&self.exponents))
    }
}

impl PartialOrd for MultiIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, a) in self.exponents.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{a}")?;
        }
        write!(f, ")")
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let inner = s
            .trim()
            .strip_prefix('(')
            .and_then(|t| t.strip_suffix(')'))
            .ok_or_else(|| Error::MultiIndex(format!("expected \"(a,b,...)\", got {s:?}")))?;
        let exponents = inner
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::MultiIndex(format!("{s:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if exponents.is_empty() {
            return Err(Error::MultiIndex(format!("{s:?} has no components")));
        }
        Ok(MultiIndex::new(exponents))
    }
}

/// All multi-indices of dimension `dim` and length `order`, in graded
/// lexicographic order. This ordering fixes the row/column order of every
/// coefficient matrix in the crate.
pub fn enumerate(dim: usize, order: u32) -> Vec<MultiIndex> {
    assert!(dim >= 1, "dimension must be positive");
    let mut out = Vec::with_capacity(count(dim, order));
    let mut current = vec![0u32; dim];
    fill(&mut current, 0, order, &mut out);
    out
}

fn fill(current: &mut Vec<u32>, axis: usize, remaining: u32, out: &mut Vec<MultiIndex>) {
    if axis + 1 == current.len() {
        current[axis] = remaining;
        out.push(MultiIndex::new(current.clone()));
        return;
    }
    for a in (0..=remaining).rev() {
        current[axis] = a;
        fill(current, axis + 1, remaining - a, out);
    }
}

/// Number of multi-indices of length `order` in dimension `dim`:
/// `C(order + dim − 1, dim − 1)`.
pub fn count(dim: usize, order: u32) -> usize {
    binomial(order as u64 + dim as u64 - 1, dim as u64 - 1) as usize
}

/// Leibniz coefficient `α! / (β! (α−β)!)`, the product of componentwise
/// binomials.
pub fn leibniz_coeff(alpha: &MultiIndex, beta: &MultiIndex) -> Result<u64> {
    if alpha.dim() != beta.dim() {
        return Err(Error::DimensionMismatch {
            expected: alpha.dim(),
            got: beta.dim(),
        });
    }
    if !beta.le(alpha) {
        return Err(Error::MultiIndex(format!("{beta} is not below {alpha}")));
    }
    Ok(alpha
        .exponents
        .iter()
        .zip(&beta.exponents)
        .map(|(&a, &b)| binomial(a as u64, b as u64))
        .product())
}

/// Multinomial weight `m! / α!` for `|α| = m`. Always an integer.
pub fn factorial_weight(alpha: &MultiIndex, m: u32) -> Result<u64> {
    if alpha.order() != m {
        return Err(Error::MultiIndex(format!(
            "|{alpha}| = {} but expected {m}",
            alpha.order()
        )));
    }
    // Product of binomials avoids overflow of m! for moderate m.
    let mut rest = m as u64;
    let mut w = 1u64;
    for &a in &alpha.exponents {
        w *= binomial(rest, a as u64);
        rest -= a as u64;
    }
    Ok(w)
}

pub fn factorial(n: u32) -> u64 {
    (1..=n as u64).product()
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc = 1u64;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}
