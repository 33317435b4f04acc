//! Exact attention cost accounting.
//!
//! The unit is one scaled query-key pair evaluation (score plus value
//! aggregation) summed over the denoising run. Projections and MLPs are not
//! counted, so the totals are the exact integer values of the three
//! complexity formulas:
//!
//! | mode          | total                                   |
//! |---------------|-----------------------------------------|
//! | Full          | `T·(S_l² + 2N·S_l·S_r + N²·S_r²)`       |
//! | Sparse        | `T·(S_l² + 2N·S_l·S_r + N·S_r²)`        |
//! | CausalSparse  | `T·(S_l² + N·S_l·S_r) + N·S_r²`         |

use serde::Serialize;

use crate::error::{Error, Result};

use super::layout::{AttentionMode, TokenLayout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FlopReport {
    pub mode: AttentionMode,
    pub steps: u64,
    pub layout: TokenLayout,
    pub noise_self: u64,
    pub noise_ref: u64,
    pub ref_self: u64,
    pub total: u64,
}

fn mul(a: u64, b: u64) -> Result<u64> {
    a.checked_mul(b).ok_or(Error::Overflow("attention flop count"))
}

fn add(a: u64, b: u64) -> Result<u64> {
    a.checked_add(b).ok_or(Error::Overflow("attention flop count"))
}

pub fn count_flops(layout: &TokenLayout, mode: AttentionMode, steps: u64) -> Result<FlopReport> {
    if steps == 0 {
        return Err(Error::Config("step count must be at least 1".into()));
    }
    let sl = layout.noise_len() as u64;
    let sr = layout.ref_len() as u64;
    let n = layout.n_refs() as u64;

    let per_step_noise_self = mul(sl, sl)?;
    let cross = mul(mul(n, sl)?, sr)?;
    let self_one = mul(sr, sr)?;

    let noise_self = mul(steps, per_step_noise_self)?;
    let (noise_ref, ref_self) = match mode {
        AttentionMode::Full => (
            mul(steps, mul(2, cross)?)?,
            mul(steps, mul(mul(n, n)?, self_one)?)?,
        ),
        AttentionMode::Sparse => (
            mul(steps, mul(2, cross)?)?,
            mul(steps, mul(n, self_one)?)?,
        ),
        // references run once at t = 0; their keys/values are reused afterwards
        AttentionMode::CausalSparse => (mul(steps, cross)?, mul(n, self_one)?),
    };
    let total = add(add(noise_self, noise_ref)?, ref_self)?;
    Ok(FlopReport {
        mode,
        steps,
        layout: *layout,
        noise_self,
        noise_ref,
        ref_self,
        total,
    })
}
