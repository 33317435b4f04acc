use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

/// `y = x·Wᵀ + (alpha/r)·(x·Aᵀ)·Bᵀ` with `A: [r, d_in]`, `B: [d_out, r]`.
pub fn lora_linear(x: &Tensor, base: &Tensor, down: &Tensor, up: &Tensor, alpha: f64) -> Result<Tensor> {
    let adapter = LoraAdapter::new(down.clone(), up.clone(), alpha)?;
    let (out, inp) = base.dims2()?;
    adapter.check(inp, out)?;
    x.matmul_t(base)?.add(&adapter.delta(x)?)
}

/// Low-rank update attached to a [`Linear`].
#[derive(Debug, Clone)]
pub struct LoraAdapter {
    down: Tensor,
    up: Tensor,
    alpha: f64,
}

impl LoraAdapter {
    pub fn new(down: Tensor, up: Tensor, alpha: f64) -> Result<Self> {
        let (r, _) = down.dims2()?;
        let (_, r2) = up.dims2()?;
        if r == 0 {
            return Err(Error::dim("LoRA rank must be at least 1"));
        }
        if r != r2 {
            return Err(Error::shape("lora rank", down.shape(), up.shape()));
        }
        Ok(Self { down, up, alpha })
    }

    pub fn rank(&self) -> usize {
        self.down.shape()[0]
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    fn check(&self, inp: usize, out: usize) -> Result<()> {
        if self.down.shape()[1] != inp || self.up.shape()[0] != out {
            return Err(Error::shape(
                "lora adapter",
                &[out, inp],
                &[self.up.shape()[0], self.down.shape()[1]],
            ));
        }
        Ok(())
    }

    fn delta(&self, x: &Tensor) -> Result<Tensor> {
        Ok(x
            .matmul_t(&self.down)?
            .matmul_t(&self.up)?
            .scale(self.alpha / self.rank() as f64))
    }
}

/// Affine projection with an optional bias and optional LoRA adapter.
#[derive(Debug, Clone)]
pub struct Linear {
    weight: Tensor,
    bias: Option<Tensor>,
    lora: Option<LoraAdapter>,
}

impl Linear {
    pub fn new(weight: Tensor, bias: Option<Tensor>, lora: Option<LoraAdapter>) -> Result<Self> {
        let (out, inp) = weight.dims2()?;
        if let Some(b) = &bias {
            if b.shape() != [out] {
                return Err(Error::shape("linear bias", weight.shape(), b.shape()));
            }
        }
        if let Some(l) = &lora {
            l.check(inp, out)?;
        }
        Ok(Self { weight, bias, lora })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn lora(&self) -> Option<&LoraAdapter> {
        self.lora.as_ref()
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = x.matmul_t(&self.weight)?;
        if let Some(l) = &self.lora {
            y = y.add(&l.delta(x)?)?;
        }
        if let Some(b) = &self.bias {
            y = y.add_row(b)?;
        }
        Ok(y)
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(format!("{prefix}.bias"), b);
        }
        if let Some(l) = &self.lora {
            f(format!("{prefix}.lora_down"), &l.down);
            f(format!("{prefix}.lora_up"), &l.up);
        }
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(format!("{prefix}.bias"), b);
        }
        if let Some(l) = &mut self.lora {
            f(format!("{prefix}.lora_down"), &mut l.down);
            f(format!("{prefix}.lora_up"), &mut l.up);
        }
    }
}

/// Seeded Gaussian parameter source.
pub(crate) struct Init {
    rng: ChaCha8Rng,
    precision: Precision,
}

impl Init {
    pub fn new(seed: u64, precision: Precision) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            precision,
        }
    }

    pub fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("positive std");
        let v = (0..n).map(|_| dist.sample(&mut self.rng)).collect();
        Tensor::new(shape, v, self.precision).expect("finite samples")
    }

    pub fn linear(&mut self, inp: usize, out: usize, gain: f64) -> Linear {
        let w = self.normal(vec![out, inp], gain / (inp as f64).sqrt());
        let b = self.normal(vec![out], 0.02);
        Linear::new(w, Some(b), None).expect("consistent shapes")
    }

    pub fn lora_linear(&mut self, inp: usize, out: usize, rank: usize, alpha: f64) -> Linear {
        let mut l = self.linear(inp, out, 1.0);
        let down = self.normal(vec![rank, inp], 1.0 / (inp as f64).sqrt());
        let up = self.normal(vec![out, rank], 0.1 / (rank as f64).sqrt());
        l.lora = Some(LoraAdapter::new(down, up, alpha).expect("rank >= 1"));
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Vec<usize>, v: &[f64]) -> Tensor {
        Tensor::new(shape, v.to_vec(), Precision::F64).unwrap()
    }

    #[test]
    fn zero_up_or_zero_alpha_is_base_layer() {
        let mut init = Init::new(1, Precision::F64);
        let x = init.normal(vec![3, 5], 1.0);
        let w = init.normal(vec![4, 5], 1.0);
        let a = init.normal(vec![2, 5], 1.0);
        let b = init.normal(vec![4, 2], 1.0);
        let base = x.matmul_t(&w).unwrap();
        let zero_b = Tensor::zeros(vec![4, 2], Precision::F64);
        assert_eq!(lora_linear(&x, &w, &a, &zero_b, 3.0).unwrap(), base);
        assert_eq!(lora_linear(&x, &w, &a, &b, 0.0).unwrap(), base);
    }

    #[test]
    fn rank_one_hand_evaluation() {
        // W = 0 (3x2), A = e_1ᵀ (picks input 1), B = e_2 (writes output 2)
        let w = Tensor::zeros(vec![3, 2], Precision::F64);
        let a = t(vec![1, 2], &[0.0, 1.0]);
        let b = t(vec![3, 1], &[0.0, 0.0, 1.0]);
        let x = t(vec![1, 2], &[0.0, 1.0]);
        let y = lora_linear(&x, &w, &a, &b, 1.0).unwrap();
        assert_eq!(y.to_f64_vec(), vec![0.0, 0.0, 1.0]);

        let w = t(vec![3, 2], &[1., 2., 3., 4., 5., 6.]);
        let y = lora_linear(&x, &w, &a, &b, 1.0).unwrap();
        assert_eq!(y.to_f64_vec(), vec![2.0, 4.0, 7.0]);
    }

    #[test]
    fn shape_errors() {
        let w = Tensor::zeros(vec![3, 2], Precision::F64);
        let a = Tensor::zeros(vec![1, 4], Precision::F64);
        let b = Tensor::zeros(vec![3, 1], Precision::F64);
        let x = Tensor::zeros(vec![1, 2], Precision::F64);
        assert!(lora_linear(&x, &w, &a, &b, 1.0).is_err());
        let a0 = Tensor::zeros(vec![0, 2], Precision::F64);
        let b0 = Tensor::zeros(vec![3, 0], Precision::F64);
        assert!(lora_linear(&x, &w, &a0, &b0, 1.0).is_err());
    }

    #[test]
    fn linear_with_adapter_matches_free_function() {
        let mut init = Init::new(7, Precision::F64);
        let l = init.lora_linear(6, 4, 2, 2.0);
        let x = init.normal(vec![3, 6], 1.0);
        let lora = l.lora().unwrap();
        let want = lora_linear(&x, l.weight(), &lora.down, &lora.up, 2.0)
            .unwrap()
            .add_row(l.bias.as_ref().unwrap())
            .unwrap();
        assert!(l.forward(&x).unwrap().max_abs_diff(&want).unwrap() < 1e-14);
    }
}
