//! ε-prediction objective: `‖ε − model(G(Z_L, Z_C, M, t), Z_R, Z_t, t)‖²`, averaged over elements.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::posenc::Quadrant;
use crate::tensor::Tensor;

use super::guider::Conditioning;
use super::model::CausalSparseDiT;
use super::schedule::{forward_diffuse, NoiseSchedule};

/// One training example: conditioning, reference latents and the clean latent.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub cond: Conditioning,
    pub refs: Vec<(Tensor, Quadrant)>,
    pub z0: Tensor,
}

/// Anything that predicts the noise in `z_t`.
pub trait EpsilonPredictor {
    fn predict_eps(&self, sample: &TrainingSample, z_t: &Tensor, t: usize) -> Result<Tensor>;
}

impl EpsilonPredictor for CausalSparseDiT {
    /// Reference pass, guider, cached forward; output in latent layout.
    fn predict_eps(&self, sample: &TrainingSample, z_t: &Tensor, t: usize) -> Result<Tensor> {
        let (lh, lw) = sample.cond.latent_dims();
        let table = self.positional_table(lh, lw)?;
        let refs = self.encode_references(&sample.refs, &table)?;
        let cache = self.reference_pass(&refs)?;
        let g = self.guide(&sample.cond, t, &table)?;
        let eps = self.dit_forward(&self.embed_noise(z_t, &table)?, &g, &cache, t)?;
        self.tokens_to_latent(&eps, lh, lw)
    }
}

/// Single-sample loss at a given `t` and `eps`.
pub fn training_loss(
    model: &dyn EpsilonPredictor,
    sample: &TrainingSample,
    t: usize,
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<f64> {
    let z_t = forward_diffuse(&sample.z0, t, eps, sched)?;
    let pred = model.predict_eps(sample, &z_t, t)?;
    if pred.shape() != eps.shape() {
        return Err(Error::shape("training_loss", eps.shape(), pred.shape()));
    }
    let diff = eps.sub(&pred.cast(eps.precision()))?;
    Ok(diff.mul(&diff)?.sum() / diff.len() as f64)
}

/// Draws `t` uniformly from the schedule and `eps` from a standard normal.
pub fn sample_training_loss<R: Rng + ?Sized>(
    model: &dyn EpsilonPredictor,
    sample: &TrainingSample,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    let t = rng.random_range(0..sched.train_steps());
    let n = sample.z0.len();
    let v = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let eps = Tensor::new(sample.z0.shape().to_vec(), v, sample.z0.precision())?;
    training_loss(model, sample, t, &eps, sched)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::denoise::gaussian_latent;
    use crate::pipeline::model::DiTConfig;
    use crate::tensor::Precision;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Recovers ε exactly from `z_t` given the clean latent.
    struct Oracle<'a>(&'a NoiseSchedule, f64);

    impl EpsilonPredictor for Oracle<'_> {
        fn predict_eps(&self, sample: &TrainingSample, z_t: &Tensor, t: usize) -> Result<Tensor> {
            let ab = self.0.alpha_bar(t)?;
            let eps = z_t.sub(&sample.z0.scale(ab.sqrt()))?.scale(1.0 / (1.0 - ab).sqrt());
            Ok(eps.map(|x| x + self.1))
        }
    }

    struct Echo(Tensor, f64);

    impl EpsilonPredictor for Echo {
        fn predict_eps(&self, _: &TrainingSample, _: &Tensor, _: usize) -> Result<Tensor> {
            Ok(self.0.map(|x| x + self.1))
        }
    }

    fn sample(p: Precision) -> TrainingSample {
        TrainingSample {
            cond: Conditioning::new(
                gaussian_latent(vec![3, 4, 4], 1, p),
                Tensor::zeros(vec![3, 4, 4], p),
                Tensor::zeros(vec![1, 4, 4], p),
            )
            .unwrap(),
            refs: vec![(gaussian_latent(vec![3, 2, 2], 2, p), Quadrant::TopRight)],
            z0: gaussian_latent(vec![3, 4, 4], 3, p),
        }
    }

    #[test]
    fn perfect_and_offset_predictors() {
        let sched = NoiseSchedule::default();
        let s = sample(Precision::F64);
        let eps = gaussian_latent(vec![3, 4, 4], 4, Precision::F64);
        assert_eq!(training_loss(&Echo(eps.clone(), 0.0), &s, 300, &eps, &sched).unwrap(), 0.0);
        let c = 0.37;
        let l = training_loss(&Echo(eps.clone(), c), &s, 300, &eps, &sched).unwrap();
        assert!((l - c * c).abs() <= 1e-9);
        let l = training_loss(&Oracle(&sched, 0.0), &s, 300, &eps, &sched).unwrap();
        assert!(l < 1e-20);
    }

    #[test]
    fn random_model_loss_is_positive_and_reproducible() {
        let sched = NoiseSchedule::default();
        let cfg = DiTConfig {
            depth: 2,
            dim: 16,
            heads: 2,
            patch: 1,
            factor: 1,
            guider_depth: 2,
            mlp_ratio: 2,
            lora_rank: Some(2),
        };
        let model = CausalSparseDiT::new(cfg, 17, Precision::F32).unwrap();
        let s = sample(Precision::F32);
        let a = sample_training_loss(&model, &s, &sched, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let b = sample_training_loss(&model, &s, &sched, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert!(a > 0.0);
        assert_eq!(a.to_bits(), b.to_bits());
    }
}
