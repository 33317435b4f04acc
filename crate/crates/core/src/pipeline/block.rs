//! Self-attention transformer block with timestep (AdaLN) modulation.
//!
//! No cross-attention: text conditioning is not modelled, so every block is
//! self-attention followed by an MLP.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::lora::{Init, Linear};

/// Per-block shift/scale/gate vectors derived from a timestep embedding.
#[derive(Debug, Clone)]
pub struct Modulation {
    shift_attn: Tensor,
    scale_attn: Tensor,
    gate_attn: Tensor,
    shift_mlp: Tensor,
    scale_mlp: Tensor,
    gate_mlp: Tensor,
}

pub(crate) fn modulate(x: &Tensor, shift: &Tensor, scale: &Tensor) -> Result<Tensor> {
    let one_plus = scale.map(|s| 1.0 + s);
    x.layer_norm_plain()?.mul_row(&one_plus)?.add_row(shift)
}

#[derive(Debug, Clone)]
pub struct SelfAttention {
    pub(crate) q: Linear,
    pub(crate) k: Linear,
    pub(crate) v: Linear,
    pub(crate) out: Linear,
    heads: usize,
}

impl SelfAttention {
    pub(crate) fn init(init: &mut Init, dim: usize, heads: usize, lora_rank: Option<usize>) -> Self {
        let proj = |init: &mut Init| match lora_rank {
            Some(r) => init.lora_linear(dim, dim, r, r as f64),
            None => init.linear(dim, dim, 1.0),
        };
        Self {
            q: proj(init),
            k: proj(init),
            v: proj(init),
            out: proj(init),
            heads,
        }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn project_q(&self, h: &Tensor) -> Result<Tensor> {
        self.q.forward(h)
    }

    /// Post-projection keys and values (LoRA delta included).
    pub fn project_kv(&self, h: &Tensor) -> Result<(Tensor, Tensor)> {
        Ok((self.k.forward(h)?, self.v.forward(h)?))
    }

    pub fn project_out(&self, attended: &Tensor) -> Result<Tensor> {
        self.out.forward(attended)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.q.visit(&format!("{prefix}.q"), f);
        self.k.visit(&format!("{prefix}.k"), f);
        self.v.visit(&format!("{prefix}.v"), f);
        self.out.visit(&format!("{prefix}.out"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.q.visit_mut(&format!("{prefix}.q"), f);
        self.k.visit_mut(&format!("{prefix}.k"), f);
        self.v.visit_mut(&format!("{prefix}.v"), f);
        self.out.visit_mut(&format!("{prefix}.out"), f);
    }
}

#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub(crate) attn: SelfAttention,
    mlp_in: Linear,
    mlp_out: Linear,
    ada: Linear,
}

impl TransformerBlock {
    pub(crate) fn init(init: &mut Init, dim: usize, heads: usize, mlp_ratio: usize, lora_rank: Option<usize>) -> Self {
        Self {
            attn: SelfAttention::init(init, dim, heads, lora_rank),
            mlp_in: init.linear(dim, dim * mlp_ratio, 1.0),
            mlp_out: init.linear(dim * mlp_ratio, dim, 1.0),
            ada: init.linear(dim, 6 * dim, 0.5),
        }
    }

    pub fn attention(&self) -> &SelfAttention {
        &self.attn
    }

    pub fn dim(&self) -> usize {
        self.mlp_in.in_dim()
    }

    pub fn modulation(&self, temb: &Tensor) -> Result<Modulation> {
        let d = self.dim();
        if temb.shape() != [d] {
            return Err(Error::shape("modulation", &[d], temb.shape()));
        }
        let m = self.ada.forward(&temb.reshape(vec![1, d])?.silu())?;
        let part = |i: usize| m.columns(i * d..(i + 1) * d)?.reshape(vec![d]);
        Ok(Modulation {
            shift_attn: part(0)?,
            scale_attn: part(1)?,
            gate_attn: part(2)?,
            shift_mlp: part(3)?,
            scale_mlp: part(4)?,
            gate_mlp: part(5)?,
        })
    }

    /// Normalised, modulated input to the attention sub-layer.
    pub fn attention_input(&self, x: &Tensor, m: &Modulation) -> Result<Tensor> {
        modulate(x, &m.shift_attn, &m.scale_attn)
    }

    /// Gated residual for the attention output followed by the MLP sub-layer.
    pub fn finish(&self, x: &Tensor, attn_out: &Tensor, m: &Modulation) -> Result<Tensor> {
        let x = x.add(&attn_out.mul_row(&m.gate_attn)?)?;
        let h = modulate(&x, &m.shift_mlp, &m.scale_mlp)?;
        let mlp = self.mlp_out.forward(&self.mlp_in.forward(&h)?.gelu())?;
        x.add(&mlp.mul_row(&m.gate_mlp)?)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.attn.visit(&format!("{prefix}.attn"), f);
        self.mlp_in.visit(&format!("{prefix}.mlp_in"), f);
        self.mlp_out.visit(&format!("{prefix}.mlp_out"), f);
        self.ada.visit(&format!("{prefix}.ada"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.attn.visit_mut(&format!("{prefix}.attn"), f);
        self.mlp_in.visit_mut(&format!("{prefix}.mlp_in"), f);
        self.mlp_out.visit_mut(&format!("{prefix}.mlp_out"), f);
        self.ada.visit_mut(&format!("{prefix}.ada"), f);
    }
}
