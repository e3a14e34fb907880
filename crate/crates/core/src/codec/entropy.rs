//! Entropy and relative entropy of diagonal density operators.
//!
//! A normalized non-negative vector is read as the spectrum of a diagonal density
//! operator, so von Neumann entropy and quantum relative entropy reduce to their
//! Shannon / Kullback-Leibler forms (natural log, nats).

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Additive smoothing applied to the reconstructed distribution.
pub const SMOOTHING_EPS: f64 = 1e-10;

fn check_distribution<T: Real>(p: &[T], name: &str) -> Result<()> {
    if p.is_empty() {
        return Err(Error::Domain(format!("{name}: empty distribution")));
    }
    let mut sum = T::zero();
    for &v in p {
        if !(v >= T::zero()) || !v.is_finite() {
            return Err(Error::Domain(format!(
                "{name}: entry {v:?} is not a probability"
            )));
        }
        sum = sum + v;
    }
    if (sum - T::one()).abs() > T::norm_tol() {
        return Err(Error::Domain(format!("{name}: sums to {sum:?}, not 1")));
    }
    Ok(())
}

/// `S = −Σ p_i ln p_i` with `0·ln 0 = 0`.
pub fn quantum_entropy<T: Real>(dist: &[T]) -> Result<T> {
    check_distribution(dist, "entropy")?;
    Ok(dist
        .iter()
        .filter(|&&p| p > T::zero())
        .fold(T::zero(), |acc, &p| acc - p * p.ln()))
}

/// `q ← (q + ε)/(1 + Nε)`.
pub fn smooth<T: Real>(q: &[T]) -> Vec<T> {
    let eps = T::lit(SMOOTHING_EPS);
    let denom = T::one() + T::from_usize(q.len()).expect("length fits") * eps;
    q.iter().map(|&v| (v + eps) / denom).collect()
}

/// `D(p‖q̃) = Σ p_i (ln p_i − ln q̃_i)` against the smoothed reconstruction `q̃`.
pub fn relative_entropy<T: Real>(p_source: &[T], q_reconstructed: &[T]) -> Result<T> {
    check_dim(p_source.len(), q_reconstructed.len())?;
    check_distribution(p_source, "source")?;
    check_distribution(q_reconstructed, "reconstruction")?;
    let q = smooth(q_reconstructed);
    let d = p_source
        .iter()
        .zip(&q)
        .filter(|(&p, _)| p > T::zero())
        .fold(T::zero(), |acc, (&p, &qi)| acc + p * (p.ln() - qi.ln()));
    // Gibbs: the exact value is non-negative; clip the rounding residue.
    Ok(d.max(T::zero()))
}

/// Scales a non-negative vector to unit mass; `None` when it sums to zero.
pub fn normalize<T: Real>(values: &[T]) -> Option<Vec<T>> {
    let sum = values.iter().fold(T::zero(), |a, &v| a + v);
    if !(sum > T::zero()) {
        return None;
    }
    Some(values.iter().map(|&v| v / sum).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(quantum_entropy(&[1.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!((quantum_entropy(&[0.25f64; 4]).unwrap() - 4f64.ln()).abs() < 1e-12);
        // −(0.5 ln 0.5 + 2·0.25 ln 0.25) = 1.5 ln 2
        let s = quantum_entropy(&[0.5f64, 0.25, 0.25]).unwrap();
        assert!((s - 1.0397207708399179).abs() < 1e-12);
    }

    #[test]
    fn entropy_domain_errors() {
        assert!(quantum_entropy(&[-0.1, 1.1]).is_err());
        assert!(quantum_entropy(&[0.3, 0.3]).is_err());
        assert!(quantum_entropy::<f64>(&[]).is_err());
    }

    #[test]
    fn relative_entropy_examples() {
        let p = [0.5f64, 0.5];
        assert!(relative_entropy(&p, &p).unwrap().abs() < 1e-9);
        let d = relative_entropy(&p, &[0.9, 0.1]).unwrap();
        let hand = 0.5 * (0.5f64 / 0.9).ln() + 0.5 * (0.5f64 / 0.1).ln();
        assert!((d - hand).abs() < 1e-8);
        assert!((d - 0.5108).abs() < 1e-4);
        assert!(matches!(
            relative_entropy(&p, &[1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn single_precision_agrees() {
        let d32 = relative_entropy(&[0.5f32, 0.5], &[0.9, 0.1]).unwrap();
        assert!((d32 - 0.5108).abs() < 1e-4);
    }

    fn dist(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, len).prop_filter_map("zero mass", |v| normalize(&v))
    }

    proptest! {
        #[test]
        fn gibbs_inequality((p, q) in (2usize..16).prop_flat_map(|n| (dist(n), dist(n)))) {
            prop_assert!(relative_entropy(&p, &q).unwrap() >= 0.0);
        }

        #[test]
        fn zero_against_itself(p in (2usize..16).prop_flat_map(dist)) {
            prop_assert!(relative_entropy(&p, &p).unwrap() < 1e-8);
        }
    }
}
