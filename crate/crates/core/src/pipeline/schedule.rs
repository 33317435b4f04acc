use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const TRAIN_STEPS: usize = 1000;
pub const BETA_START: f64 = 1e-4;
pub const BETA_END: f64 = 2e-2;

/// Linear-β diffusion schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(TRAIN_STEPS, BETA_START, BETA_END).expect("valid defaults")
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 || !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
            return Err(Error::Config(format!(
                "bad schedule: {steps} steps, beta {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alpha_bars })
    }

    pub fn train_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bars.get(t).copied().ok_or_else(|| {
            Error::Range(format!("timestep {t} outside schedule of {}", self.alpha_bars.len()))
        })
    }

    /// Evenly spaced descending timesteps, `steps` of them, ending at 0.
    pub fn ddim_timesteps(&self, steps: usize) -> Result<Vec<usize>> {
        if steps == 0 || steps > self.train_steps() {
            return Err(Error::Config(format!("{steps} sampling steps for a {}-step schedule", self.train_steps())));
        }
        let stride = self.train_steps() / steps;
        Ok((0..steps).rev().map(|i| i * stride).collect())
    }

    /// Deterministic DDIM update from `t` to `t_prev` (`None`: to the clean
    /// sample, ᾱ = 1).
    pub fn ddim_step(&self, x_t: &Tensor, eps: &Tensor, t: usize, t_prev: Option<usize>) -> Result<Tensor> {
        let ab = self.alpha_bar(t)?;
        let ab_prev = match t_prev {
            Some(p) => self.alpha_bar(p)?,
            None => 1.0,
        };
        let x0 = x_t.sub(&eps.scale((1.0 - ab).sqrt()))?.scale(1.0 / ab.sqrt());
        x0.scale(ab_prev.sqrt()).add(&eps.scale((1.0 - ab_prev).sqrt()))
    }
}

/// `Z_t = sqrt(ᾱ_t)·Z_0 + sqrt(1−ᾱ_t)·ε`.
pub fn forward_diffuse(z0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if z0.shape() != eps.shape() {
        return Err(Error::shape("forward_diffuse", z0.shape(), eps.shape()));
    }
    let ab = sched.alpha_bar(t)?;
    z0.scale(ab.sqrt()).add(&eps.scale((1.0 - ab).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let v = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        Tensor::new(vec![n], v, Precision::F64).unwrap()
    }

    #[test]
    fn schedule_invariants() {
        let s = NoiseSchedule::default();
        assert!(s.betas().windows(2).all(|w| w[0] < w[1]));
        assert!(s.betas().iter().all(|&b| 0.0 < b && b < 1.0));
        let abs: Vec<f64> = (0..s.train_steps()).map(|t| s.alpha_bar(t).unwrap()).collect();
        assert!(abs.windows(2).all(|w| w[1] < w[0]));
        assert!((abs[0] - 1.0).abs() < 1e-3);
        assert!(s.alpha_bar(1000).is_err());
    }

    #[test]
    fn boundary_and_noiseless() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z0 = gaussian(64, &mut rng);
        let eps = gaussian(64, &mut rng);
        assert!(forward_diffuse(&z0, 0, &eps, &s).unwrap().max_abs_diff(&z0).unwrap() < 0.05);
        let zero = Tensor::zeros(vec![64], Precision::F64);
        let zt = forward_diffuse(&z0, 500, &zero, &s).unwrap();
        assert_eq!(zt, z0.scale(s.alpha_bar(500).unwrap().sqrt()));
        assert!(matches!(forward_diffuse(&z0, 5000, &eps, &s), Err(Error::Range(_))));
    }

    #[test]
    fn variance_is_preserved() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let zt = forward_diffuse(&gaussian(n, &mut rng), 500, &gaussian(n, &mut rng), &s).unwrap().to_f64_vec();
        let mean = zt.iter().sum::<f64>() / n as f64;
        let var = zt.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() <= 0.05, "{var}");
    }

    #[test]
    fn ddim_timesteps_end_at_zero() {
        let s = NoiseSchedule::default();
        assert_eq!(s.ddim_timesteps(10).unwrap(), vec![900, 800, 700, 600, 500, 400, 300, 200, 100, 0]);
        assert!(s.ddim_timesteps(0).is_err());
    }

    #[test]
    fn ddim_step_with_true_noise_recovers_clean_sample() {
        let s = NoiseSchedule::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z0 = gaussian(32, &mut rng);
        let eps = gaussian(32, &mut rng);
        let zt = forward_diffuse(&z0, 700, &eps, &s).unwrap();
        let back = s.ddim_step(&zt, &eps, 700, None).unwrap();
        assert!(back.max_abs_diff(&z0).unwrap() < 1e-12);
    }
}
