//! Toy causal sparse DiT.
//!
//! Two forward routes share one set of weights:
//! - the cached route runs [`CausalSparseDiT::reference_pass`] once and then
//!   [`CausalSparseDiT::dit_forward`] per step, noise queries only;
//! - the joint route ([`CausalSparseDiT::forward_joint`]) runs references and
//!   noise together under any [`AttentionMode`], through either the span
//!   kernel or the dense masked oracle.
//!
//! Under the causal sparse mask both routes compute the same function.

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::attention::{
    attend, attend_dense, cached_attend, reference_pass, AttentionMask, AttentionMode, KVCache, TokenLayout,
};
use crate::error::{Error, Result};
use crate::posenc::{partition_layout, PositionalTable, Quadrant};
use crate::tensor::{Precision, Tensor};

use super::block::{modulate, TransformerBlock};
use super::guider::{Conditioning, GuiderFeatures, LineArtGuider};
use super::latent::{patchify, unpatchify, LATENT_CHANNELS};
use super::lora::{Init, Linear};
use super::timestep::TimestepEmbedder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiTConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub patch: usize,
    pub factor: usize,
    pub guider_depth: usize,
    pub mlp_ratio: usize,
    pub lora_rank: Option<usize>,
}

impl Default for DiTConfig {
    fn default() -> Self {
        Self {
            depth: 4,
            dim: 64,
            heads: 4,
            patch: 2,
            factor: 8,
            guider_depth: 4,
            mlp_ratio: 2,
            lora_rank: Some(4),
        }
    }
}

impl DiTConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if self.heads == 0 || self.dim % self.heads != 0 {
            return fail(format!("dim {} not divisible by {} heads", self.dim, self.heads));
        }
        if self.dim == 0 || self.dim % 4 != 0 {
            return fail(format!("dim {} must be a positive multiple of 4", self.dim));
        }
        if self.patch == 0 || self.factor == 0 || self.mlp_ratio == 0 {
            return fail("patch, factor and mlp_ratio must be at least 1".into());
        }
        if self.guider_depth > self.depth {
            return fail(format!("guider depth {} exceeds depth {}", self.guider_depth, self.depth));
        }
        if self.lora_rank == Some(0) {
            return fail("LoRA rank must be at least 1".into());
        }
        Ok(())
    }

    /// Token feature width before embedding.
    pub fn patch_features(&self) -> usize {
        LATENT_CHANNELS * self.patch * self.patch
    }

    /// Pixels per token side.
    pub fn pixels_per_token(&self) -> usize {
        self.patch * self.factor
    }
}

/// Which attention implementation the joint route uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Backend {
    Kernel,
    DenseOracle,
}

/// How many times reference and noise tokens went through the blocks.
#[derive(Debug, Default)]
pub struct PassCounters {
    reference: AtomicU64,
    noise: AtomicU64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct PassCount {
    pub reference: u64,
    pub noise: u64,
}

impl PassCounters {
    pub fn snapshot(&self) -> PassCount {
        PassCount {
            reference: self.reference.load(Ordering::Relaxed),
            noise: self.noise.load(Ordering::Relaxed),
        }
    }

    fn bump(&self, reference: bool, noise: bool) {
        if reference {
            self.reference.fetch_add(1, Ordering::Relaxed);
        }
        if noise {
            self.noise.fetch_add(1, Ordering::Relaxed);
        }
    }
}

impl PassCount {
    pub fn since(self, earlier: PassCount) -> PassCount {
        PassCount {
            reference: self.reference - earlier.reference,
            noise: self.noise - earlier.noise,
        }
    }
}

/// Reference tokens with positional encodings already added.
#[derive(Debug, Clone)]
pub struct EncodedReferences {
    pub tokens: Tensor,
    pub layout: TokenLayout,
    pub quadrants: Vec<Quadrant>,
}

#[derive(Debug)]
pub struct CausalSparseDiT {
    config: DiTConfig,
    precision: Precision,
    x_embed: Linear,
    temb: TimestepEmbedder,
    blocks: Vec<TransformerBlock>,
    final_ada: Linear,
    final_proj: Linear,
    guider: LineArtGuider,
    counters: PassCounters,
}

impl Clone for CausalSparseDiT {
    fn clone(&self) -> Self {
        Self {
            config: self.config,
            precision: self.precision,
            x_embed: self.x_embed.clone(),
            temb: self.temb.clone(),
            blocks: self.blocks.clone(),
            final_ada: self.final_ada.clone(),
            final_proj: self.final_proj.clone(),
            guider: self.guider.clone(),
            counters: PassCounters::default(),
        }
    }
}

impl CausalSparseDiT {
    pub fn new(config: DiTConfig, seed: u64, precision: Precision) -> Result<Self> {
        config.validate()?;
        let mut init = Init::new(seed, precision);
        let d = config.dim;
        let pf = config.patch_features();
        Ok(Self {
            x_embed: init.linear(pf, d, 1.0),
            temb: TimestepEmbedder::init(&mut init, d),
            blocks: (0..config.depth)
                .map(|_| TransformerBlock::init(&mut init, d, config.heads, config.mlp_ratio, config.lora_rank))
                .collect(),
            final_ada: init.linear(d, 2 * d, 0.5),
            final_proj: init.linear(d, pf, 1.0),
            guider: LineArtGuider::init(&mut init, d, config.heads, config.guider_depth, config.patch, config.mlp_ratio),
            config,
            precision,
            counters: PassCounters::default(),
        })
    }

    pub fn config(&self) -> &DiTConfig {
        &self.config
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn blocks(&self) -> &[TransformerBlock] {
        &self.blocks
    }

    pub fn guider(&self) -> &LineArtGuider {
        &self.guider
    }

    pub fn counters(&self) -> PassCount {
        self.counters.snapshot()
    }

    pub fn timestep_embedding(&self, t: usize) -> Result<Tensor> {
        self.temb.embed(t)
    }

    /// Positional table for a noise latent of `(h, w)` latent cells.
    pub fn positional_table(&self, latent_h: usize, latent_w: usize) -> Result<PositionalTable> {
        let p = self.config.patch;
        if latent_h % p != 0 || latent_w % p != 0 {
            return Err(Error::dim(format!("{latent_h}x{latent_w} latent not divisible by patch {p}")));
        }
        PositionalTable::new(partition_layout(self.config.dim, latent_h / p, latent_w / p)?, self.precision)
    }

    /// Patch embedding plus central positional encoding.
    pub fn embed_noise(&self, z_t: &Tensor, table: &PositionalTable) -> Result<Tensor> {
        self.x_embed.forward(&patchify(z_t, self.config.patch)?)?.add(table.central())
    }

    /// Patch embedding plus the quadrant's local encoding for each
    /// reference latent; every latent must be half the noise latent per side.
    pub fn encode_references(&self, refs: &[(Tensor, Quadrant)], table: &PositionalTable) -> Result<EncodedReferences> {
        let layout = table.layout().token_layout(refs.len())?;
        let d = self.config.dim;
        let mut parts = Vec::with_capacity(refs.len());
        for (latent, q) in refs {
            let tokens = self.x_embed.forward(&patchify(latent, self.config.patch)?)?;
            if tokens.shape()[0] != layout.ref_len() {
                return Err(Error::dim(format!(
                    "reference latent {:?} gives {} tokens, layout needs {}",
                    latent.shape(),
                    tokens.shape()[0],
                    layout.ref_len()
                )));
            }
            parts.push(tokens.add(table.local(*q))?);
        }
        let tokens = if parts.is_empty() {
            Tensor::zeros(vec![0, d], self.precision)
        } else {
            Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?
        };
        Ok(EncodedReferences {
            tokens,
            layout,
            quadrants: refs.iter().map(|r| r.1).collect(),
        })
    }

    /// One pass of the reference tokens at timestep 0; fills the KV-cache.
    pub fn reference_pass(&self, refs: &EncodedReferences) -> Result<KVCache> {
        let t0 = self.temb.embed(0)?;
        let (_, cache) = reference_pass(&refs.tokens, &self.blocks, &t0, &refs.layout)?;
        self.counters.bump(true, false);
        Ok(cache)
    }

    pub fn guide(&self, cond: &Conditioning, t: usize, table: &PositionalTable) -> Result<GuiderFeatures> {
        self.guider.forward(cond, &self.temb.embed(t)?, table.central())
    }

    fn check_guider(&self, g: &GuiderFeatures, noise: &Tensor) -> Result<()> {
        if g.len() > self.config.depth {
            return Err(Error::Structural(format!("{} guider features for depth {}", g.len(), self.config.depth)));
        }
        for i in 0..g.len() {
            let f = g.layer(i).expect("index in range");
            if f.shape() != noise.shape() {
                return Err(Error::shape("guider feature", noise.shape(), f.shape()));
            }
        }
        Ok(())
    }

    fn inject(x: Tensor, g: &GuiderFeatures, layer: usize) -> Result<Tensor> {
        match g.layer(layer) {
            Some(f) => x.add(f),
            None => Ok(x),
        }
    }

    fn head(&self, x: &Tensor, temb: &Tensor) -> Result<Tensor> {
        let d = self.config.dim;
        let m = self.final_ada.forward(&temb.reshape(vec![1, d])?.silu())?;
        let shift = m.columns(0..d)?.reshape(vec![d])?;
        let scale = m.columns(d..2 * d)?.reshape(vec![d])?;
        self.final_proj.forward(&modulate(x, &shift, &scale)?)
    }

    /// Noise-token ε prediction `[S_l, c·p²]` over the cached references.
    pub fn dit_forward(&self, noise_tokens: &Tensor, guider: &GuiderFeatures, cache: &KVCache, t: usize) -> Result<Tensor> {
        let layout = cache.layout();
        if cache.num_layers() != self.blocks.len() {
            return Err(Error::Structural(format!(
                "cache has {} layers, model has {}",
                cache.num_layers(),
                self.blocks.len()
            )));
        }
        self.check_guider(guider, noise_tokens)?;
        let mask = AttentionMask::new(layout, AttentionMode::CausalSparse);
        let temb = self.temb.embed(t)?;
        let mut x = noise_tokens.clone();
        for (l, block) in self.blocks.iter().enumerate() {
            x = Self::inject(x, guider, l)?;
            let m = block.modulation(&temb)?;
            let h = block.attention_input(&x, &m)?;
            let o = cached_attend(&h, cache, block.attention(), l, &mask)?;
            x = block.finish(&x, &o, &m)?;
        }
        self.counters.bump(false, true);
        self.head(&x, &temb)
    }

    /// References and noise through the blocks together under `mode`.
    /// References carry the timestep-0 modulation, noise the step's.
    pub fn forward_joint(
        &self,
        refs: &EncodedReferences,
        noise_tokens: &Tensor,
        guider: &GuiderFeatures,
        mode: AttentionMode,
        t: usize,
        backend: Backend,
    ) -> Result<Tensor> {
        Ok(self.forward_joint_states(refs, noise_tokens, guider, mode, t, backend)?.0)
    }

    /// [`Self::forward_joint`] that also returns the reference hidden states
    /// after the last block.
    pub fn forward_joint_states(
        &self,
        refs: &EncodedReferences,
        noise_tokens: &Tensor,
        guider: &GuiderFeatures,
        mode: AttentionMode,
        t: usize,
        backend: Backend,
    ) -> Result<(Tensor, Tensor)> {
        let layout = refs.layout;
        let (rows, _) = noise_tokens.dims2()?;
        if rows != layout.noise_len() {
            return Err(Error::Structural(format!(
                "{rows} noise tokens for a layout with S_l = {}",
                layout.noise_len()
            )));
        }
        self.check_guider(guider, noise_tokens)?;
        let mask = AttentionMask::new(layout, mode);
        let t0 = self.temb.embed(0)?;
        let temb = self.temb.embed(t)?;
        let split = layout.ref_tokens();
        let mut xr = refs.tokens.clone();
        let mut xn = noise_tokens.clone();
        for (l, block) in self.blocks.iter().enumerate() {
            xn = Self::inject(xn, guider, l)?;
            let mr = block.modulation(&t0)?;
            let mn = block.modulation(&temb)?;
            let h = Tensor::concat_rows(&[&block.attention_input(&xr, &mr)?, &block.attention_input(&xn, &mn)?])?;
            let attn = block.attention();
            let q = attn.project_q(&h)?;
            let (k, v) = attn.project_kv(&h)?;
            let a = match backend {
                Backend::Kernel => attend(&q, &k, &v, Some(&mask), attn.heads())?,
                Backend::DenseOracle => attend_dense(&q, &k, &v, Some(&mask), attn.heads())?,
            };
            let o = attn.project_out(&a)?;
            xr = block.finish(&xr, &o.rows(0..split)?, &mr)?;
            xn = block.finish(&xn, &o.rows(split..layout.total_len())?, &mn)?;
        }
        self.counters.bump(true, true);
        Ok((self.head(&xn, &temb)?, xr))
    }

    /// Token-space prediction back to latent layout `[c, h, w]`.
    pub fn tokens_to_latent(&self, eps_tokens: &Tensor, latent_h: usize, latent_w: usize) -> Result<Tensor> {
        unpatchify(eps_tokens, LATENT_CHANNELS, latent_h, latent_w, self.config.patch)
    }

    pub(crate) fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.x_embed.visit("x_embed", f);
        self.temb.visit("temb", f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&format!("blocks.{i}"), f);
        }
        self.final_ada.visit("final.ada", f);
        self.final_proj.visit("final.proj", f);
        self.guider.visit("guider", f);
    }

    pub(crate) fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.x_embed.visit_mut("x_embed", f);
        self.temb.visit_mut("temb", f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&format!("blocks.{i}"), f);
        }
        self.final_ada.visit_mut("final.ada", f);
        self.final_proj.visit_mut("final.proj", f);
        self.guider.visit_mut("guider", f);
    }

    /// Every parameter name in a fixed order.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |n, _| names.push(n));
        names
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn small_config() -> DiTConfig {
        DiTConfig {
            depth: 2,
            dim: 16,
            heads: 2,
            patch: 1,
            factor: 1,
            guider_depth: 2,
            mlp_ratio: 2,
            lora_rank: Some(2),
        }
    }

    fn latent(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng, p: Precision) -> Tensor {
        let v = (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::new(vec![c, h, w], v, p).unwrap()
    }

    struct Fixture {
        model: CausalSparseDiT,
        table: PositionalTable,
        refs: EncodedReferences,
        noise: Tensor,
        cond: Conditioning,
    }

    fn fixture(n_refs: usize, precision: Precision, seed: u64) -> Fixture {
        let model = CausalSparseDiT::new(small_config(), seed, precision).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let table = model.positional_table(4, 4).unwrap();
        let ref_latents: Vec<(Tensor, Quadrant)> = (0..n_refs)
            .map(|i| (latent(3, 2, 2, &mut rng, precision), Quadrant::ALL[i % 4]))
            .collect();
        let refs = model.encode_references(&ref_latents, &table).unwrap();
        let noise = model.embed_noise(&latent(3, 4, 4, &mut rng, precision), &table).unwrap();
        let cond = Conditioning::new(
            latent(3, 4, 4, &mut rng, precision),
            latent(3, 4, 4, &mut rng, precision),
            Tensor::zeros(vec![1, 4, 4], precision),
        )
        .unwrap();
        Fixture { model, table, refs, noise, cond }
    }

    #[test]
    fn config_validation() {
        assert!(DiTConfig::default().validate().is_ok());
        let bad = [
            DiTConfig { heads: 3, ..small_config() },
            DiTConfig { guider_depth: 3, ..small_config() },
            DiTConfig { patch: 0, ..small_config() },
            DiTConfig { dim: 18, heads: 2, ..small_config() },
            DiTConfig { lora_rank: Some(0), ..small_config() },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn cached_matches_masked_oracle() {
        for (precision, tol) in [(Precision::F32, 1e-6), (Precision::F64, 1e-12)] {
            let f = fixture(3, precision, 7);
            let g = f.model.guide(&f.cond, 300, &f.table).unwrap();
            let cache = f.model.reference_pass(&f.refs).unwrap();
            let cached = f.model.dit_forward(&f.noise, &g, &cache, 300).unwrap();
            let oracle = f
                .model
                .forward_joint(&f.refs, &f.noise, &g, AttentionMode::CausalSparse, 300, Backend::DenseOracle)
                .unwrap();
            assert!(cached.max_abs_diff(&oracle).unwrap() <= tol);
        }
    }

    #[test]
    fn no_references_reduces_to_plain_forward() {
        let f = fixture(0, Precision::F64, 3);
        let g = GuiderFeatures::zeros(2, 16, 16, Precision::F64);
        let cache = f.model.reference_pass(&f.refs).unwrap();
        let cached = f.model.dit_forward(&f.noise, &g, &cache, 10).unwrap();
        for mode in AttentionMode::ALL {
            let joint = f.model.forward_joint(&f.refs, &f.noise, &g, mode, 10, Backend::Kernel).unwrap();
            assert!(cached.max_abs_diff(&joint).unwrap() < 1e-12);
        }
    }

    #[test]
    fn deterministic_forward() {
        let f = fixture(2, Precision::F32, 5);
        let g = f.model.guide(&f.cond, 100, &f.table).unwrap();
        let c = f.model.reference_pass(&f.refs).unwrap();
        let a = f.model.dit_forward(&f.noise, &g, &c, 100).unwrap();
        let b = f.model.dit_forward(&f.noise, &g, &c, 100).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn cache_is_timestep_zero_and_noise_independent() {
        let f = fixture(2, Precision::F64, 9);
        let c1 = f.model.reference_pass(&f.refs).unwrap();
        let c2 = f.model.reference_pass(&f.refs).unwrap();
        assert_eq!(c1, c2);
        assert_eq!(c1.timestep(), 0);
    }

    #[test]
    fn wrong_layout_is_structural() {
        let f = fixture(2, Precision::F64, 2);
        let other = fixture(3, Precision::F64, 2);
        let c = f.model.reference_pass(&other.refs).unwrap();
        let g = GuiderFeatures::zeros(2, 16, 16, Precision::F64);
        let bad_noise = f.noise.rows(0..8).unwrap();
        let g8 = GuiderFeatures::zeros(0, 8, 16, Precision::F64);
        assert!(matches!(f.model.dit_forward(&bad_noise, &g8, &c, 5), Err(Error::Structural(_))));
        assert!(f.model.dit_forward(&f.noise, &g, &c, 5).is_ok());
    }

    #[test]
    fn guider_census_has_no_cross_attention() {
        let f = fixture(0, Precision::F32, 1);
        let census = f.model.guider().parameter_census();
        assert!(!census.is_empty());
        assert_eq!(census.iter().filter(|(n, _)| n.contains("cross")).count(), 0);
        assert!(f.model.parameter_names().iter().all(|n| !n.contains("cross")));
    }

    #[test]
    fn guider_sees_timestep_and_hint_free_path() {
        let f = fixture(0, Precision::F64, 4);
        let a = f.model.guide(&f.cond, 0, &f.table).unwrap();
        let b = f.model.guide(&f.cond, 500, &f.table).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), 2);
        let zero_hints = Conditioning::new(
            f.cond.line_art.clone(),
            Tensor::zeros(vec![3, 4, 4], Precision::F64),
            Tensor::zeros(vec![1, 4, 4], Precision::F64),
        )
        .unwrap();
        assert_eq!(
            f.model.guide(&zero_hints, 7, &f.table).unwrap(),
            f.model.guide(&zero_hints, 7, &f.table).unwrap()
        );
    }

    #[test]
    fn hint_change_is_local_before_attention() {
        let f = fixture(0, Precision::F64, 6);
        let base = f.model.guider().embed_tokens(&f.cond).unwrap();
        let mut hints = f.cond.hints.to_f64_vec();
        hints[16 + 5] += 0.5; // channel 1, cell (1, 1)
        let moved = Conditioning::new(
            f.cond.line_art.clone(),
            Tensor::new(vec![3, 4, 4], hints, Precision::F64).unwrap(),
            f.cond.mask.clone(),
        )
        .unwrap();
        let other = f.model.guider().embed_tokens(&moved).unwrap();
        for tok in 0..16 {
            let same = base.rows(tok..tok + 1).unwrap() == other.rows(tok..tok + 1).unwrap();
            assert_eq!(same, tok != 5, "token {tok}");
        }
    }
}
