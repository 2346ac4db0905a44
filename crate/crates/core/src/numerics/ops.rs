//! Elementwise primitives and losses.
//!
//! Public functions validate their inputs and outputs: a NaN or Inf is
//! reported as [`Error::NumericDomain`], never returned. The `*_in_place`
//! variants skip validation and are meant for the inner loops of the model.

use super::Scalar;
use crate::error::{Error, Result};

fn check_finite<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NumericDomain(format!("{what} contains NaN or Inf")))
    }
}

/// Max-subtracted softmax, overwriting `v`.
#[inline]
pub fn softmax_in_place<T: Scalar>(v: &mut [T]) {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    let inv = T::one() / sum;
    for x in v.iter_mut() {
        *x *= inv;
    }
}

pub fn softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::Shape("softmax of an empty vector".into()));
    }
    check_finite(v, "softmax input")?;
    // Accumulate in f64 so 32-bit outputs still sum to one within 1e-6.
    let mut wide: Vec<f64> = v.iter().map(|x| x.f64()).collect();
    softmax_in_place(&mut wide);
    Ok(wide.into_iter().map(T::of).collect())
}

/// `log(sum(exp(v)))`, stable.
#[inline]
pub fn log_sum_exp<T: Scalar>(v: &[T]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let sum: T = v.iter().map(|&x| (x - max).exp()).sum();
    max + sum.ln()
}

pub fn log_softmax<T: Scalar>(v: &[T]) -> Result<Vec<T>> {
    if v.is_empty() {
        return Err(Error::Shape("log_softmax of an empty vector".into()));
    }
    check_finite(v, "log_softmax input")?;
    let lse = log_sum_exp(v);
    Ok(v.iter().map(|&x| x - lse).collect())
}

/// Positive cross-entropy `-log softmax(logits)[target]`.
pub fn cross_entropy<T: Scalar>(logits: &[T], target: usize) -> Result<T> {
    if target >= logits.len() {
        return Err(Error::Shape(format!(
            "target index {target} outside vocabulary of {}",
            logits.len()
        )));
    }
    check_finite(logits, "logits")?;
    let ce = log_sum_exp(logits) - logits[target];
    // Rounding can leave a tiny negative when the target holds all the mass.
    Ok(ce.max(T::zero()))
}

/// Layer normalisation with population variance. Returns the normalised
/// vector and `1/sqrt(var + eps)` for callers that need the backward pass.
#[inline]
pub fn layer_norm_in_place<T: Scalar>(v: &[T], gamma: &[T], beta: &[T], eps: T, out: &mut [T]) -> T {
    let n = T::of(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let rstd = T::one() / (var + eps).sqrt();
    for i in 0..v.len() {
        out[i] = gamma[i] * (v[i] - mean) * rstd + beta[i];
    }
    rstd
}

pub fn layer_norm<T: Scalar>(v: &[T], gamma: &[T], beta: &[T], eps: T) -> Result<Vec<T>> {
    if v.len() != gamma.len() || v.len() != beta.len() {
        return Err(Error::Shape(format!(
            "layer_norm lengths disagree: v={}, gamma={}, beta={}",
            v.len(),
            gamma.len(),
            beta.len()
        )));
    }
    if v.is_empty() {
        return Err(Error::Shape("layer_norm of an empty vector".into()));
    }
    if !(eps > T::zero()) {
        return Err(Error::NumericDomain("layer_norm eps must be positive".into()));
    }
    check_finite(v, "layer_norm input")?;
    let mut out = vec![T::zero(); v.len()];
    layer_norm_in_place(v, gamma, beta, eps, &mut out);
    check_finite(&out, "layer_norm output")?;
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Tanh-approximated GELU.
#[inline]
pub fn gelu_tanh<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let half = T::of(0.5);
    half * x * (T::one() + (c * (x + k * x * x * x)).tanh())
}

#[inline]
pub fn gelu_tanh_grad<T: Scalar>(x: T) -> T {
    let c = T::of(GELU_C);
    let k = T::of(0.044715);
    let half = T::of(0.5);
    let inner = c * (x + k * x * x * x);
    let t = inner.tanh();
    let dinner = c * (T::one() + T::of(3.0) * k * x * x);
    half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = softmax(&[0.0f64, 0.0, 0.0]).unwrap();
        for x in p {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_matches_high_precision_reference() {
        // e^{x-3} / sum, evaluated at 30 significant digits.
        let want = [0.09003057317038046, 0.24472847105479764, 0.6652409557748219];
        let got = softmax(&[1.0f64, 2.0, 3.0]).unwrap();
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-15, "{g} vs {w}");
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[1.0f32, f32::NAN]), Err(Error::NumericDomain(_))));
        assert!(matches!(softmax(&[f64::INFINITY]), Err(Error::NumericDomain(_))));
    }

    #[test]
    fn layer_norm_constant_input_is_zero() {
        let out = layer_norm(&[2.5f64; 6], &[1.0; 6], &[0.0; 6], 1e-5).unwrap();
        assert!(out.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn layer_norm_zero_gain_returns_beta() {
        let beta = [0.1f64, -0.2, 0.3, 0.4];
        let out = layer_norm(&[1.0, 5.0, -3.0, 2.0], &[0.0; 4], &beta, 1e-5).unwrap();
        assert_eq!(out, beta);
    }

    #[test]
    fn layer_norm_matches_two_pass_oracle() {
        let v = [0.3f64, -1.7, 2.2, 0.05, 4.0, -0.6, 1.1];
        let g = [1.0, 0.5, 2.0, 1.5, 0.7, 1.2, 0.9];
        let b = [0.0, 0.1, -0.1, 0.2, 0.0, 0.3, -0.2];
        let eps = 1e-5;
        let n = v.len() as f64;
        let mut mean = 0.0;
        for x in v {
            mean += x;
        }
        mean /= n;
        let mut var = 0.0;
        for x in v {
            var += (x - mean).powi(2);
        }
        var /= n;
        let out = layer_norm(&v, &g, &b, eps).unwrap();
        for i in 0..v.len() {
            let want = g[i] * (v[i] - mean) / (var + eps).sqrt() + b[i];
            assert!((out[i] - want).abs() < 1e-12);
        }
        let out_mean: f64 = out.iter().zip(&g).zip(&b).map(|((o, g), b)| (o - b) / g).sum::<f64>() / n;
        assert!(out_mean.abs() < 1e-12);
    }

    #[test]
    fn layer_norm_length_mismatch() {
        assert!(matches!(layer_norm(&[1.0f64, 2.0], &[1.0], &[0.0, 0.0], 1e-5), Err(Error::Shape(_))));
    }

    #[test]
    fn cross_entropy_cases() {
        let mut logits = vec![-30.0f64; 5];
        logits[2] = 30.0;
        assert!(cross_entropy(&logits, 2).unwrap() < 1e-9);
        let uniform = vec![0.7f64; 11];
        assert!((cross_entropy(&uniform, 4).unwrap() - 11f64.ln()).abs() < 1e-12);
        // log-sum-exp evaluated at 30 significant digits.
        let l = [0.5f64, -1.25, 2.0, 0.0, 3.5];
        let want = [3.271374555100119, 5.021374555100119, 1.7713745551001192, 3.771374555100119, 0.2713745551001191];
        for (i, w) in want.iter().enumerate() {
            assert!((cross_entropy(&l, i).unwrap() - w).abs() < 1e-13);
        }
        assert!(matches!(cross_entropy(&l, 5), Err(Error::Shape(_))));
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_tanh(x + h) - gelu_tanh(x - h)) / (2.0 * h);
            assert!((fd - gelu_tanh_grad(x)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            v in proptest::collection::vec(-50.0f64..50.0, 1..40),
            shift in -1e4f64..1e4,
        ) {
            let p = softmax(&v).unwrap();
            let total: f64 = p.iter().sum();
            prop_assert!((total - 1.0).abs() < f64::SUM_TOL);
            prop_assert!(p.iter().all(|&x| x > 0.0 && x <= 1.0));
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn softmax_f32_sums_to_one(v in proptest::collection::vec(-20.0f32..20.0, 1..40)) {
            let total: f64 = softmax(&v).unwrap().iter().map(|&x| x as f64).sum();
            prop_assert!((total - 1.0).abs() < f32::SUM_TOL);
        }

        #[test]
        fn cross_entropy_is_negative_log_softmax(
            v in proptest::collection::vec(-30.0f64..30.0, 2..30),
            idx in 0usize..30,
        ) {
            let i = idx % v.len();
            let ce = cross_entropy(&v, i).unwrap();
            let ls = log_softmax(&v).unwrap();
            prop_assert!(ce >= 0.0);
            prop_assert!((ce + ls[i]).abs() < 1e-9);
        }
    }
}
