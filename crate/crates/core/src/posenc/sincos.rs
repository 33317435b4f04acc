use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

const BASE: f64 = 10000.0;

/// 2D sin-cos encoding as a `[d, h, w]` grid.
///
/// Channels `0..d/2` encode the row, `d/2..d` the column. Inside each half
/// channel `2i` is `sin(pos·ω_i)` and `2i+1` is `cos(pos·ω_i)` with
/// `ω_i = 10000^(-4i/d)`.
pub fn sincos_grid(d: usize, h: usize, w: usize) -> Result<Tensor> {
    if d == 0 || d % 4 != 0 {
        return Err(Error::Config(format!("encoding dimension {d} must be a positive multiple of 4")));
    }
    let quarter = d / 4;
    let freqs: Vec<f64> = (0..quarter).map(|i| BASE.powf(-(i as f64) / quarter as f64)).collect();
    let mut out = vec![0.0; d * h * w];
    for (half, coord) in [(0, true), (1, false)] {
        for (i, &om) in freqs.iter().enumerate() {
            let ch = half * d / 2 + 2 * i;
            for r in 0..h {
                for c in 0..w {
                    let pos = if coord { r } else { c } as f64;
                    let (s, co) = (pos * om).sin_cos();
                    out[(ch * h + r) * w + c] = s;
                    out[((ch + 1) * h + r) * w + c] = co;
                }
            }
        }
    }
    Tensor::new(vec![d, h, w], out, Precision::F64)
}
