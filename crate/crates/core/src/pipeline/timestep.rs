use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

use super::lora::{Init, Linear};
use super::schedule::TRAIN_STEPS;

/// `[cos(t·ω_0..), sin(t·ω_0..)]` with `ω_i = 10000^(-i/(d/2))`.
pub fn timestep_sinusoid(t: usize, d: usize, precision: Precision) -> Result<Tensor> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::Config(format!("timestep embedding dim {d} must be even")));
    }
    let half = d / 2;
    let mut v = vec![0.0; d];
    for i in 0..half {
        let arg = t as f64 * 10000f64.powf(-(i as f64) / half as f64);
        v[i] = arg.cos();
        v[half + i] = arg.sin();
    }
    Tensor::new(vec![d], v, precision)
}

/// Sinusoid followed by `Linear → SiLU → Linear`.
#[derive(Debug, Clone)]
pub struct TimestepEmbedder {
    fc1: Linear,
    fc2: Linear,
}

impl TimestepEmbedder {
    pub(crate) fn init(init: &mut Init, dim: usize) -> Self {
        Self {
            fc1: init.linear(dim, dim, 1.0),
            fc2: init.linear(dim, dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.fc1.in_dim()
    }

    pub fn embed(&self, t: usize) -> Result<Tensor> {
        if t > TRAIN_STEPS {
            return Err(Error::Range(format!("timestep {t} beyond {TRAIN_STEPS}")));
        }
        let d = self.dim();
        let s = timestep_sinusoid(t, d, self.fc1.weight().precision())?.reshape(vec![1, d])?;
        self.fc2.forward(&self.fc1.forward(&s)?.silu())?.reshape(vec![d])
    }

    pub(crate) fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.fc1.visit(&format!("{prefix}.fc1"), f);
        self.fc2.visit(&format!("{prefix}.fc2"), f);
    }

    pub(crate) fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.fc1.visit_mut(&format!("{prefix}.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.fc2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn embedder() -> TimestepEmbedder {
        TimestepEmbedder::init(&mut Init::new(4, Precision::F64), 16)
    }

    #[test]
    fn zero_is_fixed() {
        let e = embedder();
        assert_eq!(e.embed(0).unwrap(), e.embed(0).unwrap());
        let s = timestep_sinusoid(0, 8, Precision::F64).unwrap().to_f64_vec();
        assert_eq!(s, vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn distinct_steps_differ() {
        let e = embedder();
        let all: Vec<Vec<f64>> = (0..=TRAIN_STEPS).step_by(50).map(|t| e.embed(t).unwrap().to_f64_vec()).collect();
        for i in 0..all.len() {
            for j in i + 1..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn finite_at_final_step() {
        assert!(embedder().embed(TRAIN_STEPS).unwrap().is_finite());
        assert!(embedder().embed(TRAIN_STEPS + 1).is_err());
    }
}
