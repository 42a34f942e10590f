//! Pure vector kernels shared by the layers and the metrics.

use super::matrix::{dot, Real};
use crate::error::{Error, Result};

/// `a·b / (‖a‖‖b‖)`. A zero-norm input is rejected rather than mapped to 0.
pub fn cosine_similarity<T: Real>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("cosine_similarity: lengths {} and {}", a.len(), b.len())));
    }
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == T::zero() || nb == T::zero() {
        return Err(Error::Degenerate("cosine_similarity of a zero-norm vector".into()));
    }
    let s = dot(a, b) / (na * nb);
    Ok(s.max(-T::one()).min(T::one()))
}

/// `γ ⊙ (x − μ)/√(σ² + ε) + β`, population variance.
pub fn layer_norm<T: Real>(x: &[T], gamma: &[T], beta: &[T], eps: T) -> Result<Vec<T>> {
    if gamma.len() != x.len() || beta.len() != x.len() {
        return Err(Error::Shape(format!(
            "layer_norm: x {} gamma {} beta {}",
            x.len(),
            gamma.len(),
            beta.len()
        )));
    }
    if eps <= T::zero() {
        return Err(Error::InvalidArgument("layer_norm eps must be positive".into()));
    }
    let (mean, inv_std) = moments(x, eps);
    Ok(x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| g * (v - mean) * inv_std + b)
        .collect())
}

/// Mean and `1/√(var + eps)` of a slice.
pub(crate) fn moments<T: Real>(x: &[T], eps: T) -> (T, T) {
    let n = T::from_usize(x.len()).unwrap();
    let mean = x.iter().copied().sum::<T>() / n;
    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
    (mean, T::one() / (var + eps).sqrt())
}

pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut out: Vec<T> = x.iter().map(|&v| (v - m).exp()).collect();
    let z: T = out.iter().copied().sum();
    out.iter_mut().for_each(|v| *v = *v / z);
    out
}

pub fn log_sum_exp<T: Real>(x: &[T]) -> T {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    if m == T::neg_infinity() {
        return m;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

/// Binary cross-entropy on a logit, `y ∈ [0, 1]`.
#[inline]
pub fn bce_with_logits<T: Real>(logit: T, y: T) -> T {
    logit.max(T::zero()) - logit * y + (-logit.abs()).exp().ln_1p()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0f64).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_norm_and_length_mismatch() {
        assert!(matches!(cosine_similarity(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::Degenerate(_))));
        assert!(matches!(cosine_similarity(&[1.0], &[1.0, 0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn layer_norm_examples() {
        let c = layer_norm(&[3.0; 5], &[1.0; 5], &[0.0; 5], 1e-5).unwrap();
        assert!(c.iter().all(|&v: &f64| v == 0.0));

        // (x-μ)/√(σ²+ε) with μ=0, σ²=1
        let expect = 1.0 / (1.0f64 + 1e-5).sqrt();
        let y = layer_norm(&[1.0, -1.0], &[1.0; 2], &[0.0; 2], 1e-5).unwrap();
        assert!((y[0] - expect).abs() < 1e-15 && (y[1] + expect).abs() < 1e-15);
        assert!((y[0] - 0.99999).abs() < 1e-5);

        let b = [0.25, -2.0, 7.0];
        let z = layer_norm(&[1.0, 5.0, -3.0], &[0.0; 3], &b, 1e-5).unwrap();
        assert_eq!(z, b.to_vec());
    }

    #[test]
    fn layer_norm_rejects_bad_eps() {
        assert!(layer_norm(&[1.0, 2.0], &[1.0; 2], &[0.0; 2], 0.0).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
        assert_eq!(softmax(&[1000.0, 1000.0]), vec![0.5, 0.5]);
        let p = softmax(&[2.0f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15 && (p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn bce_matches_naive_form() {
        for &(x, y) in &[(0.3, 1.0), (-2.0, 0.0), (4.0, 0.0), (-0.7, 1.0)] {
            let p: f64 = 1.0 / (1.0 + (-x as f64).exp());
            let naive = -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
            assert!((bce_with_logits(x, y) - naive).abs() < 1e-12);
        }
        assert!((bce_with_logits(0.0f64, 1.0) - 2.0f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            x in proptest::collection::vec(-30.0f64..30.0, 1..20),
            shift in -100.0f64..100.0,
        ) {
            let p = softmax(&x);
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&v| v > 0.0));
            let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn layer_norm_standardizes(x in proptest::collection::vec(-50.0f64..50.0, 2..40)) {
            let (m, _) = moments(&x, 0.0);
            let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
            prop_assume!(var > 1e-1);
            let n = x.len();
            let y = layer_norm(&x, &vec![1.0; n], &vec![0.0; n], 1e-12).unwrap();
            let my = y.iter().sum::<f64>() / n as f64;
            let vy = y.iter().map(|v| (v - my) * (v - my)).sum::<f64>() / n as f64;
            prop_assert!(my.abs() < 1e-9);
            prop_assert!((vy - 1.0).abs() < 1e-6);
        }

        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(0.1f64..5.0, 3),
            b in proptest::collection::vec(-5.0f64..5.0, 3),
        ) {
            prop_assume!(b.iter().any(|v| v.abs() > 1e-3));
            let ab = cosine_similarity(&a, &b).unwrap();
            let ba = cosine_similarity(&b, &a).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| 2.0 * v).collect();
            let a2b = cosine_similarity(&a2, &b).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!((ab - a2b).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
