//! Reference KV-cache.
//!
//! References are clean images, so they are encoded exactly once at
//! timestep 0. Under the causal sparse mask a reference token only sees its
//! own segment, which makes each segment's hidden states independent of the
//! noise latent; the per-layer keys and values can therefore be computed up
//! front and reused by every denoising step.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pipeline::{SelfAttention, TransformerBlock};
use crate::tensor::Tensor;

use super::kernel::attend;
use super::layout::{Segment, TokenLayout};
use super::mask::AttentionMask;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerKV {
    pub keys: Tensor,
    pub values: Tensor,
}

/// Per-layer keys/values for the `N·S_r` reference tokens.
///
/// Only [`reference_pass`] builds one; there is no way to mutate it
/// afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct KVCache {
    layers: Vec<LayerKV>,
    layout: TokenLayout,
    heads: usize,
}

impl KVCache {
    pub fn layout(&self) -> TokenLayout {
        self.layout
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Timestep the cached states were computed at; always 0.
    pub fn timestep(&self) -> usize {
        0
    }

    pub fn layer(&self, index: usize) -> Result<&LayerKV> {
        self.layers.get(index).ok_or(Error::Index {
            index,
            len: self.layers.len(),
        })
    }

    /// Keys/values of one reference segment at one layer.
    pub fn segment(&self, layer: usize, reference: usize) -> Result<LayerKV> {
        if reference >= self.layout.n_refs() {
            return Err(Error::Index {
                index: reference,
                len: self.layout.n_refs(),
            });
        }
        let kv = self.layer(layer)?;
        let r = self.layout.range(Segment::Reference(reference));
        Ok(LayerKV {
            keys: kv.keys.rows(r.clone())?,
            values: kv.values.rows(r)?,
        })
    }

    /// Copy with every cached key shifted by `magnitude`; fault injection
    /// for negative-control checks.
    pub fn perturbed(&self, magnitude: f64) -> KVCache {
        let layers = self
            .layers
            .iter()
            .map(|kv| LayerKV {
                keys: kv.keys.map(|x| x + magnitude),
                values: kv.values.map(|x| x - magnitude),
            })
            .collect();
        KVCache {
            layers,
            layout: self.layout,
            heads: self.heads,
        }
    }
}

/// Runs the reference tokens through every block once, with the timestep-0
/// embedding `t0`, recording post-projection keys and values per layer.
///
/// Each reference segment attends only to itself. Returns the reference
/// hidden states after the last block together with the cache.
pub fn reference_pass(
    ref_tokens: &Tensor,
    blocks: &[TransformerBlock],
    t0: &Tensor,
    layout: &TokenLayout,
) -> Result<(Tensor, KVCache)> {
    let (rows, dim) = ref_tokens.dims2()?;
    if rows != layout.ref_tokens() {
        return Err(Error::dim(format!(
            "reference tokens have {rows} rows, layout needs {}",
            layout.ref_tokens()
        )));
    }
    let heads = blocks.first().map(|b| b.attention().heads()).unwrap_or(1);
    let mut layers = Vec::with_capacity(blocks.len());
    let mut x = ref_tokens.clone();
    if layout.n_refs() == 0 {
        let empty = Tensor::zeros(vec![0, dim], ref_tokens.precision());
        for _ in blocks {
            layers.push(LayerKV {
                keys: empty.clone(),
                values: empty.clone(),
            });
        }
        return Ok((x, KVCache { layers, layout: *layout, heads }));
    }

    for block in blocks {
        let m = block.modulation(t0)?;
        let h = block.attention_input(&x, &m)?;
        let attn = block.attention();
        let q = attn.project_q(&h)?;
        let (k, v) = attn.project_kv(&h)?;
        let per_segment: Vec<Tensor> = (0..layout.n_refs())
            .into_par_iter()
            .map(|i| {
                let r = layout.range(Segment::Reference(i));
                attend(
                    &q.rows(r.clone())?,
                    &k.rows(r.clone())?,
                    &v.rows(r)?,
                    None,
                    attn.heads(),
                )
            })
            .collect::<Result<_>>()?;
        let parts: Vec<&Tensor> = per_segment.iter().collect();
        let o = attn.project_out(&Tensor::concat_rows(&parts)?)?;
        x = block.finish(&x, &o, &m)?;
        layers.push(LayerKV { keys: k, values: v });
    }
    Ok((x, KVCache { layers, layout: *layout, heads }))
}

/// Noise-token attention at one layer over `[cached ref K/V ∥ fresh noise K/V]`.
///
/// `noise_input` is the normalised, modulated attention input of the noise
/// tokens. Returns the attention output after the output projection.
pub fn cached_attend(
    noise_input: &Tensor,
    cache: &KVCache,
    attn: &SelfAttention,
    layer: usize,
    mask: &AttentionMask,
) -> Result<Tensor> {
    let kv = cache.layer(layer)?;
    let layout = cache.layout();
    if mask.layout() != layout {
        return Err(Error::Structural(format!(
            "mask layout {:?} does not match cache layout {layout:?}",
            mask.layout()
        )));
    }
    let (rows, _) = noise_input.dims2()?;
    if rows != layout.noise_len() {
        return Err(Error::Structural(format!(
            "{rows} noise tokens for a layout with S_l = {}",
            layout.noise_len()
        )));
    }
    let q = attn.project_q(noise_input)?;
    let (kn, vn) = attn.project_kv(noise_input)?;
    let keys = Tensor::concat_rows(&[&kv.keys, &kn])?;
    let values = Tensor::concat_rows(&[&kv.values, &vn])?;
    let view = mask.query_rows(layout.noise_range());
    let a = attend(&q, &keys, &values, Some(&view), attn.heads())?;
    attn.project_out(&a)
}
