use rand::Rng as _;

use crate::error::{Error, Result};
use crate::model::{HeadLocation, ModelConfig};
use crate::numerics::{logit, sigmoid, AdamConfig, AdamState, Matrix};
use crate::rng::Rng;

/// One Bernoulli draw over all `L x H` head locations.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HeadMask {
    n_layers: usize,
    n_heads: usize,
    bits: Vec<bool>,
}

impl HeadMask {
    pub fn new(n_layers: usize, n_heads: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n_layers * n_heads {
            return Err(Error::Shape(format!(
                "mask of {} bits for a {n_layers}x{n_heads} grid",
                bits.len()
            )));
        }
        Ok(Self { n_layers, n_heads, bits })
    }

    pub fn empty(n_layers: usize, n_heads: usize) -> Self {
        Self {
            n_layers,
            n_heads,
            bits: vec![false; n_layers * n_heads],
        }
    }

    /// Mask whose set bits are `index`'s binary digits, location `k` at bit `k`.
    pub fn from_index(n_layers: usize, n_heads: usize, index: u64) -> Self {
        let bits = (0..n_layers * n_heads).map(|k| index >> k & 1 == 1).collect();
        Self { n_layers, n_heads, bits }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_layers, self.n_heads)
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, loc: HeadLocation) -> bool {
        self.bits[loc.flat(self.n_heads)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Selected locations in canonical order.
    pub fn locations(&self) -> Vec<HeadLocation> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| HeadLocation::new(k / self.n_heads, k % self.n_heads))
            .collect()
    }

    pub fn from_locations(cfg: &ModelConfig, locs: &[HeadLocation]) -> Result<Self> {
        let mut m = Self::empty(cfg.n_layers, cfg.n_heads);
        for l in locs {
            l.check(cfg)?;
            m.bits[l.flat(cfg.n_heads)] = true;
        }
        Ok(m)
    }
}

/// Score-function gradient of the independent-Bernoulli log-likelihood,
/// `d/dθ log p(mask | σ(θ)) = mask - σ(θ)`.
pub fn bernoulli_logprob_grad(theta: &Matrix<f64>, mask: &HeadMask) -> Result<Matrix<f64>> {
    if theta.shape() != mask.shape() {
        return Err(Error::Shape(format!(
            "theta is {:?}, mask is {:?}",
            theta.shape(),
            mask.shape()
        )));
    }
    let data = theta
        .as_slice()
        .iter()
        .zip(&mask.bits)
        .map(|(&t, &b)| f64::from(u8::from(b)) - sigmoid(t))
        .collect();
    Matrix::from_vec(theta.rows(), theta.cols(), data)
}

/// Learnable inclusion logits over head locations, with their optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct BernoulliPolicy {
    pub theta: Matrix<f64>,
    pub adam: AdamState<f64>,
}

impl BernoulliPolicy {
    /// `θ = logit(p0) + Uniform(-noise, noise)` elementwise.
    pub fn init(n_layers: usize, n_heads: usize, p0: f64, noise: f64, adam: AdamConfig, r: &mut Rng) -> Self {
        let base = logit(p0);
        let theta = Matrix::from_fn(n_layers, n_heads, |_, _| {
            base + if noise > 0.0 { r.random_range(-noise..noise) } else { 0.0 }
        });
        Self {
            theta,
            adam: AdamState::new(n_layers, n_heads, adam),
        }
    }

    pub fn probs(&self) -> Matrix<f64> {
        self.theta.map(sigmoid)
    }

    pub fn sample(&self, r: &mut Rng) -> HeadMask {
        let bits = self.theta.as_slice().iter().map(|&t| r.random::<f64>() < sigmoid(t)).collect();
        HeadMask {
            n_layers: self.theta.rows(),
            n_heads: self.theta.cols(),
            bits,
        }
    }

    pub fn threshold(&self) -> HeadMask {
        let bits = self.theta.as_slice().iter().map(|&t| sigmoid(t) > 0.5).collect();
        HeadMask {
            n_layers: self.theta.rows(),
            n_heads: self.theta.cols(),
            bits,
        }
    }

    /// One Adam ascent step along `grad` (an estimate of the gradient of
    /// expected reward).
    pub fn ascend(&mut self, grad: &Matrix<f64>) -> Result<()> {
        let neg: Vec<f64> = grad.as_slice().iter().map(|g| -g).collect();
        self.adam.step_in_place(self.theta.as_mut_slice(), &neg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_at_zero_logit() {
        let theta = Matrix::zeros(1, 2);
        let mask = HeadMask::new(1, 2, vec![true, false]).unwrap();
        let g = bernoulli_logprob_grad(&theta, &mask).unwrap();
        assert_eq!(g.as_slice(), &[0.5, -0.5]);
        assert!(bernoulli_logprob_grad(&Matrix::zeros(2, 1), &mask).is_err());
    }

    #[test]
    fn mask_index_round_trip() {
        let m = HeadMask::from_index(2, 3, 0b100101);
        assert_eq!(m.locations(), vec![HeadLocation::new(0, 0), HeadLocation::new(0, 2), HeadLocation::new(1, 2)]);
        assert_eq!(m.count(), 3);
    }
}
