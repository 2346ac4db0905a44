use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{Model, ModelConfig, Weights};
use crate::numerics::Scalar;
use crate::rng;

pub const INIT_STD: f64 = 0.02;

/// Fresh model: projection and embedding weights `~ Normal(0, 0.02)`,
/// biases zero, layernorm gains one. Deterministic in `seed`.
pub fn init_model<T: Scalar>(config: &ModelConfig, seed: u64) -> Result<Model<T>> {
    init_model_with_std(config, seed, INIT_STD)
}

/// [`init_model`] with a custom weight standard deviation.
pub fn init_model_with_std<T: Scalar>(config: &ModelConfig, seed: u64, std: f64) -> Result<Model<T>> {
    config.validate()?;
    let mut w = Weights::<T>::zeros(config);
    let normal = Normal::new(0.0, std).map_err(|e| crate::Error::Config(e.to_string()))?;
    let mut r = rng::stream(seed, "init", 0);
    let mut fill = |m: &mut crate::numerics::Matrix<T>| {
        for x in m.as_mut_slice() {
            *x = T::of(normal.sample(&mut r));
        }
    };
    fill(&mut w.tok_emb);
    fill(&mut w.pos_emb);
    for l in &mut w.layers {
        fill(&mut l.w_qkv);
        fill(&mut l.w_out);
        fill(&mut l.w_up);
        fill(&mut l.w_down);
    }
    fill(&mut w.unembed);
    Model::new(*config, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_gains_are_one() {
        let cfg = ModelConfig::new(2, 2, 16, 32, 8);
        let a: Model<f32> = init_model(&cfg, 3).unwrap();
        let b: Model<f32> = init_model(&cfg, 3).unwrap();
        let c: Model<f32> = init_model(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for l in &a.weights().layers {
            assert!(l.ln1_g.as_slice().iter().all(|&g| g == 1.0));
            assert!(l.ln2_g.as_slice().iter().all(|&g| g == 1.0));
            assert!(l.b_qkv.as_slice().iter().all(|&b| b == 0.0));
        }
        assert!(a.weights().lnf_g.as_slice().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn empirical_std_near_target() {
        let m: Model<f64> = init_model(&ModelConfig::reference(), 11).unwrap();
        let w = m.weights();
        let mut big = vec![&w.tok_emb, &w.unembed];
        for l in &w.layers {
            big.extend([&l.w_qkv, &l.w_up, &l.w_down]);
        }
        for t in big {
            assert!(t.len() >= 8_192);
            let n = t.len() as f64;
            let mean = t.as_slice().iter().sum::<f64>() / n;
            let var = t.as_slice().iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            let std = var.sqrt();
            assert!((std - INIT_STD).abs() < 0.1 * INIT_STD, "std {std}");
        }
    }
}
