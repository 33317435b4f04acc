//! Equivalence suites for the cached causal sparse route.
//!
//! - `oracle`: cached noise predictions against the joint forward on the
//!   dense masked attention oracle.
//! - `cache`: denoising with the cache against recomputing references on
//!   every step, plus pass counts.
//! - `independence`: reference states do not depend on the noise tokens, and
//!   one reference's cache entries do not depend on another reference.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::attention::{AttentionMode, TokenLayout};
use crate::error::Result;
use crate::pipeline::{
    denoise_loop, gaussian_latent, Backend, CachePolicy, CausalSparseDiT, Conditioning, DiTConfig, EncodedReferences,
    GuiderFeatures, PassCount,
};
use crate::posenc::Quadrant;
use crate::tensor::{Precision, Tensor};

pub const DEFAULT_CASES: usize = 20;

pub fn tolerance(precision: Precision) -> f64 {
    match precision {
        Precision::F32 => 1e-6,
        Precision::F64 => 1e-12,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EquivOptions {
    pub seed: u64,
    pub cases: usize,
    pub precision: Precision,
    /// Shift cached keys/values before use; every oracle case must then fail.
    pub corrupt_cache: bool,
}

impl Default for EquivOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            cases: DEFAULT_CASES,
            precision: Precision::F32,
            corrupt_cache: false,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    pub max_abs: f64,
    pub tolerance: f64,
    /// Seed of the first failing case.
    pub failing_seed: Option<u64>,
    pub detail: Option<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.failing_seed.is_none()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivReport {
    pub precision: Precision,
    pub suites: Vec<SuiteReport>,
}

impl EquivReport {
    pub fn passed(&self) -> bool {
        self.suites.iter().all(SuiteReport::passed)
    }
}

/// Randomised small model plus token inputs for one case.
pub struct Case {
    pub seed: u64,
    pub model: CausalSparseDiT,
    pub refs: EncodedReferences,
    pub noise: Tensor,
    pub guider: GuiderFeatures,
    pub t: usize,
}

/// Depth ≤ 4, d ≤ 64, N ≤ 8, token counts kept small.
pub fn random_case(seed: u64, precision: Precision) -> Result<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads = [1, 2, 4][rng.random_range(0..3)];
    let dim = [16, 32, 48, 64][rng.random_range(0..4)];
    let depth = rng.random_range(1..=4);
    let config = DiTConfig {
        depth,
        dim,
        heads,
        patch: 1,
        factor: 1,
        guider_depth: rng.random_range(0..=depth),
        mlp_ratio: rng.random_range(1..=2),
        lora_rank: if rng.random_bool(0.5) { Some(rng.random_range(1..=4)) } else { None },
    };
    let layout = TokenLayout::new(rng.random_range(1..=24), rng.random_range(1..=12), rng.random_range(0..=8))?;
    let model = CausalSparseDiT::new(config, rng.random(), precision)?;
    let refs = EncodedReferences {
        tokens: gaussian_latent(vec![layout.ref_tokens(), dim], rng.random(), precision),
        layout,
        quadrants: Vec::new(),
    };
    let noise = gaussian_latent(vec![layout.noise_len(), dim], rng.random(), precision);
    let guider = GuiderFeatures::new(
        (0..config.guider_depth)
            .map(|_| gaussian_latent(vec![layout.noise_len(), dim], rng.random(), precision).scale(0.5))
            .collect(),
    );
    Ok(Case {
        seed,
        model,
        refs,
        noise,
        guider,
        t: rng.random_range(0..1000),
    })
}

fn suite(name: &'static str, tolerance: f64, results: Vec<(u64, f64)>) -> SuiteReport {
    let max_abs = results.iter().map(|r| r.1).fold(0.0, f64::max);
    let failing_seed = results.iter().find(|r| r.1.is_nan() || r.1 > tolerance).map(|r| r.0);
    SuiteReport {
        name,
        cases: results.len(),
        max_abs,
        tolerance,
        failing_seed,
        detail: None,
    }
}

fn case_seeds(opts: &EquivOptions) -> Vec<u64> {
    (0..opts.cases as u64).map(|i| opts.seed.wrapping_mul(1_000_003).wrapping_add(i)).collect()
}

pub fn oracle_suite(opts: &EquivOptions) -> Result<SuiteReport> {
    let results = case_seeds(opts)
        .into_par_iter()
        .map(|seed| {
            let c = random_case(seed, opts.precision)?;
            let mut cache = c.model.reference_pass(&c.refs)?;
            if opts.corrupt_cache {
                cache = cache.perturbed(1e-3);
            }
            let cached = c.model.dit_forward(&c.noise, &c.guider, &cache, c.t)?;
            let oracle = c.model.forward_joint(
                &c.refs,
                &c.noise,
                &c.guider,
                AttentionMode::CausalSparse,
                c.t,
                Backend::DenseOracle,
            )?;
            let dev = cached.max_abs_diff(&oracle)?;
            // an empty cache cannot be corrupted; count that case as failing
            let dev = if opts.corrupt_cache && c.refs.layout.n_refs() == 0 { f64::INFINITY } else { dev };
            Ok((seed, dev))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(suite("oracle", tolerance(opts.precision), results))
}

pub fn cache_suite(opts: &EquivOptions) -> Result<SuiteReport> {
    let steps = 4;
    let results = case_seeds(opts)
        .into_par_iter()
        .map(|seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let p = opts.precision;
            let config = DiTConfig {
                depth: rng.random_range(1..=3),
                dim: 16,
                heads: 2,
                patch: 1,
                factor: 1,
                guider_depth: 1,
                mlp_ratio: 2,
                lora_rank: Some(2),
            };
            let model = CausalSparseDiT::new(config, rng.random(), p)?;
            let side = 2 * rng.random_range(1..=3);
            let cond = Conditioning::new(
                gaussian_latent(vec![3, side, side], rng.random(), p),
                gaussian_latent(vec![3, side, side], rng.random(), p).scale(0.1),
                Tensor::zeros(vec![1, side, side], p),
            )?;
            let table = model.positional_table(side, side)?;
            let n = rng.random_range(0..=8);
            let lat: Vec<(Tensor, Quadrant)> = (0..n)
                .map(|i| (gaussian_latent(vec![3, side / 2, side / 2], rng.random(), p), Quadrant::ALL[i % 4]))
                .collect();
            let refs = model.encode_references(&lat, &table)?;
            let noise_seed = rng.random();
            let cached = denoise_loop(&model, &cond, &refs, steps, noise_seed, CachePolicy::Cached)?;
            let again = denoise_loop(&model, &cond, &refs, steps, noise_seed, CachePolicy::Recompute)?;
            let counts_ok = cached.passes == PassCount { reference: 1, noise: steps as u64 }
                && again.passes == PassCount { reference: steps as u64, noise: steps as u64 };
            let dev = cached.latent.max_abs_diff(&again.latent)?;
            Ok((seed, if counts_ok { dev } else { f64::INFINITY }))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(suite("cache", tolerance(opts.precision), results))
}

pub fn independence_suite(opts: &EquivOptions) -> Result<SuiteReport> {
    let results = case_seeds(opts)
        .into_par_iter()
        .map(|seed| {
            let c = random_case(seed, opts.precision)?;
            let other_noise = gaussian_latent(c.noise.shape().to_vec(), seed ^ 0xabc, opts.precision);
            let states = |noise: &Tensor| {
                c.model
                    .forward_joint_states(&c.refs, noise, &c.guider, AttentionMode::CausalSparse, c.t, Backend::Kernel)
                    .map(|s| s.1)
            };
            let mut dev = states(&c.noise)?.max_abs_diff(&states(&other_noise)?)?;

            let layout = c.refs.layout;
            if layout.n_refs() >= 2 {
                // replace the last reference; earlier segments must not move
                let last = layout.n_refs() - 1;
                let split = last * layout.ref_len();
                let fresh = gaussian_latent(vec![layout.ref_len(), c.model.config().dim], seed ^ 0xdef, opts.precision);
                let swapped = EncodedReferences {
                    tokens: Tensor::concat_rows(&[&c.refs.tokens.rows(0..split)?, &fresh])?,
                    layout,
                    quadrants: Vec::new(),
                };
                let a = c.model.reference_pass(&c.refs)?;
                let b = c.model.reference_pass(&swapped)?;
                for layer in 0..a.num_layers() {
                    for r in 0..last {
                        let (x, y) = (a.segment(layer, r)?, b.segment(layer, r)?);
                        dev = dev.max(x.keys.max_abs_diff(&y.keys)?).max(x.values.max_abs_diff(&y.values)?);
                    }
                }
            }
            Ok((seed, dev))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(suite("independence", 0.0, results))
}

pub fn run_equiv(opts: &EquivOptions) -> Result<EquivReport> {
    let mut suites = vec![oracle_suite(opts)?, cache_suite(opts)?, independence_suite(opts)?];
    if opts.corrupt_cache {
        suites[0].detail = Some("cached keys/values shifted by 1e-3".into());
    }
    Ok(EquivReport {
        precision: opts.precision,
        suites,
    })
}
