//! Line-art guider: a self-attention-only control branch.
//!
//! Input is the channel concatenation `[line art ∥ hint colours ∥ hint
//! mask]` at latent resolution. Each guider block's output passes through
//! its own injection projection and is added to the matching main-branch
//! layer input.

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

use super::block::TransformerBlock;
use super::latent::{encode_latent, patchify, LATENT_CHANNELS};
use super::lora::{Init, Linear};
use crate::attention::attend;
use crate::dataprep::{render_hint_latents, HintSpec, Image};

pub const GUIDER_CHANNELS: usize = 2 * LATENT_CHANNELS + 1;

/// Line art `Z_L`, hint colours `Z_C` and hint mask `M`, all at latent resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub line_art: Tensor,
    pub hints: Tensor,
    pub mask: Tensor,
}

impl Conditioning {
    pub fn new(line_art: Tensor, hints: Tensor, mask: Tensor) -> Result<Self> {
        let [c, h, w] = line_art.shape()[..] else {
            return Err(Error::dim(format!("line-art latent must be [c,h,w], got {:?}", line_art.shape())));
        };
        if c != LATENT_CHANNELS || hints.shape() != [LATENT_CHANNELS, h, w] || mask.shape() != [1, h, w] {
            return Err(Error::dim(format!(
                "conditioning shapes {:?} / {:?} / {:?} are not aligned",
                line_art.shape(),
                hints.shape(),
                mask.shape()
            )));
        }
        Ok(Self { line_art, hints, mask })
    }

    pub fn from_images(line_art: &Image, hints: &HintSpec, factor: usize, precision: Precision) -> Result<Self> {
        if hints.dims() != line_art.dims() {
            return Err(Error::dim(format!(
                "hint spec {:?} does not match line art {:?}",
                hints.dims(),
                line_art.dims()
            )));
        }
        let z_l = encode_latent(line_art, factor, precision)?;
        let (z_c, m) = render_hint_latents(hints, factor, precision)?;
        Self::new(z_l, z_c, m)
    }

    /// Latent grid `(h, w)`.
    pub fn latent_dims(&self) -> (usize, usize) {
        (self.line_art.shape()[1], self.line_art.shape()[2])
    }

    fn stacked(&self) -> Result<Tensor> {
        let (h, w) = self.latent_dims();
        let mut v = self.line_art.to_f64_vec();
        v.extend(self.hints.to_f64_vec());
        v.extend(self.mask.to_f64_vec());
        Tensor::new(vec![GUIDER_CHANNELS, h, w], v, self.line_art.precision())
    }
}

/// One feature tensor per injected main-branch layer, shaped `[S_l, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GuiderFeatures {
    layers: Vec<Tensor>,
}

impl GuiderFeatures {
    pub fn new(layers: Vec<Tensor>) -> Self {
        Self { layers }
    }

    pub fn zeros(count: usize, tokens: usize, dim: usize, precision: Precision) -> Self {
        Self {
            layers: vec![Tensor::zeros(vec![tokens, dim], precision); count],
        }
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn layer(&self, index: usize) -> Option<&Tensor> {
        self.layers.get(index)
    }
}

#[derive(Debug, Clone)]
pub struct LineArtGuider {
    embed: Linear,
    blocks: Vec<TransformerBlock>,
    inject: Vec<Linear>,
    patch: usize,
}

impl LineArtGuider {
    pub(crate) fn init(init: &mut Init, dim: usize, heads: usize, depth: usize, patch: usize, mlp_ratio: usize) -> Self {
        let embed = init.linear(GUIDER_CHANNELS * patch * patch, dim, 1.0);
        let blocks = (0..depth).map(|_| TransformerBlock::init(init, dim, heads, mlp_ratio, None)).collect();
        let inject = (0..depth).map(|_| init.linear(dim, dim, 0.5)).collect();
        Self { embed, blocks, inject, patch }
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    /// Per-token input embedding before any attention; a token depends only
    /// on its own `p×p` latent patch.
    pub fn embed_tokens(&self, cond: &Conditioning) -> Result<Tensor> {
        self.embed.forward(&patchify(&cond.stacked()?, self.patch)?)
    }

    /// `pos` is the central positional encoding `[S_l, d]`; `temb` the
    /// current timestep embedding.
    pub fn forward(&self, cond: &Conditioning, temb: &Tensor, pos: &Tensor) -> Result<GuiderFeatures> {
        let mut x = self.embed_tokens(cond)?;
        if x.shape() != pos.shape() {
            return Err(Error::shape("guider(pos)", x.shape(), pos.shape()));
        }
        x = x.add(pos)?;
        let mut layers = Vec::with_capacity(self.blocks.len());
        for (block, inject) in self.blocks.iter().zip(&self.inject) {
            let m = block.modulation(temb)?;
            let h = block.attention_input(&x, &m)?;
            let attn = block.attention();
            let (k, v) = attn.project_kv(&h)?;
            let a = attend(&attn.project_q(&h)?, &k, &v, None, attn.heads())?;
            x = block.finish(&x, &attn.project_out(&a)?, &m)?;
            layers.push(inject.forward(&x)?);
        }
        Ok(GuiderFeatures { layers })
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.embed.visit(&format!("{prefix}.embed"), f);
        for (i, (b, inj)) in self.blocks.iter().zip(&self.inject).enumerate() {
            b.visit(&format!("{prefix}.blocks.{i}"), f);
            inj.visit(&format!("{prefix}.inject.{i}"), f);
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.embed.visit_mut(&format!("{prefix}.embed"), f);
        for (i, (b, inj)) in self.blocks.iter_mut().zip(&mut self.inject).enumerate() {
            b.visit_mut(&format!("{prefix}.blocks.{i}"), f);
            inj.visit_mut(&format!("{prefix}.inject.{i}"), f);
        }
    }

    /// `(name, element count)` for every guider parameter.
    pub fn parameter_census(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit("guider", &mut |name, t| out.push((name, t.len())));
        out
    }
}
