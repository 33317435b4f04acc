use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::attention::AttentionMode;
use crate::error::{Error, Result};
use crate::posenc::PositionalTable;
use crate::tensor::{Precision, Tensor};

use super::guider::Conditioning;
use super::latent::LATENT_CHANNELS;
use super::model::{Backend, CausalSparseDiT, EncodedReferences, PassCount};
use super::schedule::NoiseSchedule;

/// Whether reference keys/values are computed once or on every step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CachePolicy {
    Cached,
    Recompute,
}

#[derive(Debug, Clone)]
pub struct DenoiseOutput {
    pub latent: Tensor,
    pub passes: PassCount,
    pub reference_pass_s: f64,
    pub step_times_s: Vec<f64>,
    pub timesteps: Vec<usize>,
}

/// Seeded standard-normal latent.
pub fn gaussian_latent(shape: Vec<usize>, seed: u64, precision: Precision) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let v = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Tensor::new(shape, v, precision).expect("finite samples")
}

/// Deterministic DDIM sampling from seeded noise.
///
/// With [`CachePolicy::Cached`] the references go through the blocks once,
/// before the first step, and every step reuses the cache. With
/// [`CachePolicy::Recompute`] each step runs the joint causal sparse forward
/// and re-encodes the references.
pub fn denoise_loop(
    model: &CausalSparseDiT,
    cond: &Conditioning,
    refs: &EncodedReferences,
    steps: usize,
    seed: u64,
    policy: CachePolicy,
) -> Result<DenoiseOutput> {
    let sched = NoiseSchedule::default();
    let timesteps = sched.ddim_timesteps(steps)?;
    let (lh, lw) = cond.latent_dims();
    let table: PositionalTable = model.positional_table(lh, lw)?;
    if table.layout().token_layout(refs.layout.n_refs())? != refs.layout {
        return Err(Error::Structural(format!(
            "references were encoded for {:?}, conditioning implies {:?}",
            refs.layout,
            table.layout().token_layout(refs.layout.n_refs())?
        )));
    }
    let before = model.counters();
    let mut z = gaussian_latent(vec![LATENT_CHANNELS, lh, lw], seed, model.precision());

    let start = Instant::now();
    let cache = match policy {
        CachePolicy::Cached => Some(model.reference_pass(refs)?),
        CachePolicy::Recompute => None,
    };
    let reference_pass_s = start.elapsed().as_secs_f64();

    let mut step_times_s = Vec::with_capacity(steps);
    for (i, &t) in timesteps.iter().enumerate() {
        let start = Instant::now();
        let g = model.guide(cond, t, &table)?;
        let x = model.embed_noise(&z, &table)?;
        let eps_tokens = match &cache {
            Some(c) => model.dit_forward(&x, &g, c, t)?,
            None => model.forward_joint(refs, &x, &g, AttentionMode::CausalSparse, t, Backend::Kernel)?,
        };
        let eps = model.tokens_to_latent(&eps_tokens, lh, lw)?;
        z = sched.ddim_step(&z, &eps, t, timesteps.get(i + 1).copied())?;
        step_times_s.push(start.elapsed().as_secs_f64());
    }
    Ok(DenoiseOutput {
        latent: z,
        passes: model.counters().since(before),
        reference_pass_s,
        step_times_s,
        timesteps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::model::DiTConfig;
    use crate::posenc::Quadrant;

    fn setup(n: usize, precision: Precision) -> (CausalSparseDiT, Conditioning, EncodedReferences) {
        let cfg = DiTConfig {
            depth: 2,
            dim: 16,
            heads: 2,
            patch: 1,
            factor: 1,
            guider_depth: 1,
            mlp_ratio: 2,
            lora_rank: Some(2),
        };
        let model = CausalSparseDiT::new(cfg, 21, precision).unwrap();
        let cond = Conditioning::new(
            gaussian_latent(vec![3, 4, 4], 1, precision),
            Tensor::zeros(vec![3, 4, 4], precision),
            Tensor::zeros(vec![1, 4, 4], precision),
        )
        .unwrap();
        let table = model.positional_table(4, 4).unwrap();
        let lat: Vec<(Tensor, Quadrant)> =
            (0..n).map(|i| (gaussian_latent(vec![3, 2, 2], 50 + i as u64, precision), Quadrant::ALL[i % 4])).collect();
        let refs = model.encode_references(&lat, &table).unwrap();
        (model, cond, refs)
    }

    #[test]
    fn counters_and_cache_equivalence() {
        let (model, cond, refs) = setup(3, Precision::F32);
        let cached = denoise_loop(&model, &cond, &refs, 5, 8, CachePolicy::Cached).unwrap();
        assert_eq!(cached.passes, PassCount { reference: 1, noise: 5 });
        let recomputed = denoise_loop(&model, &cond, &refs, 5, 8, CachePolicy::Recompute).unwrap();
        assert_eq!(recomputed.passes, PassCount { reference: 5, noise: 5 });
        assert!(cached.latent.max_abs_diff(&recomputed.latent).unwrap() <= 1e-6);
    }

    #[test]
    fn repeatable() {
        let (model, cond, refs) = setup(2, Precision::F32);
        let a = denoise_loop(&model, &cond, &refs, 10, 3, CachePolicy::Cached).unwrap();
        let b = denoise_loop(&model, &cond, &refs, 10, 3, CachePolicy::Cached).unwrap();
        assert_eq!(a.latent, b.latent);
        assert_eq!(a.timesteps.len(), 10);
        assert!(denoise_loop(&model, &cond, &refs, 0, 3, CachePolicy::Cached).is_err());
    }
}
