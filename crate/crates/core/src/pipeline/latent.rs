//! Pixel-space stand-in for a VAE latent, and patch tokenisation.
//!
//! The latent of an image is its `f×f` average pool mapped from `[0, 1]`
//! to `[-1, 1]`, laid out channel-first as `[3, H/f, W/f]`.

use crate::dataprep::Image;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

pub const LATENT_CHANNELS: usize = 3;

pub fn encode_latent(image: &Image, factor: usize, precision: Precision) -> Result<Tensor> {
    let (h, w) = image.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(format!("{h}x{w} image not divisible by latent factor {factor}")));
    }
    let (lh, lw) = (h / factor, w / factor);
    let area = (factor * factor) as f64;
    let mut out = vec![0.0; LATENT_CHANNELS * lh * lw];
    for r in 0..h {
        for c in 0..w {
            let px = image.pixel(r, c);
            for (ch, &v) in px.iter().enumerate() {
                out[(ch * lh + r / factor) * lw + c / factor] += v as f64;
            }
        }
    }
    let out = out.into_iter().map(|s| 2.0 * (s / area) - 1.0).collect();
    Tensor::new(vec![LATENT_CHANNELS, lh, lw], out, precision)
}

/// Inverse map to `[0, 1]` with clamping, upsampled `factor`× by pixel
/// replication.
pub fn decode_latent(latent: &Tensor, factor: usize) -> Result<Image> {
    let [c, lh, lw] = latent.shape()[..] else {
        return Err(Error::dim(format!("expected [3,h,w] latent, got {:?}", latent.shape())));
    };
    if c != LATENT_CHANNELS || factor == 0 {
        return Err(Error::dim(format!("latent with {c} channels, factor {factor}")));
    }
    let v = latent.to_f64_vec();
    let px = |ch: usize, r: usize, col: usize| ((v[(ch * lh + r) * lw + col] + 1.0) / 2.0).clamp(0.0, 1.0) as f32;
    Ok(Image::from_fn(lh * factor, lw * factor, |r, col| {
        let (r, col) = (r / factor, col / factor);
        [px(0, r, col), px(1, r, col), px(2, r, col)]
    }))
}

/// `[c, H, W]` to `[(H/p)·(W/p), c·p·p]`; token features ordered `(c, i, j)`.
pub fn patchify(latent: &Tensor, p: usize) -> Result<Tensor> {
    let [c, h, w] = latent.shape()[..] else {
        return Err(Error::dim(format!("expected [c,h,w] latent, got {:?}", latent.shape())));
    };
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::dim(format!("{h}x{w} latent not divisible by patch {p}")));
    }
    let (gh, gw) = (h / p, w / p);
    let v = latent.to_f64_vec();
    let mut out = Vec::with_capacity(v.len());
    for gr in 0..gh {
        for gc in 0..gw {
            for ch in 0..c {
                for i in 0..p {
                    for j in 0..p {
                        out.push(v[(ch * h + gr * p + i) * w + gc * p + j]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![gh * gw, c * p * p], out, latent.precision())
}

pub fn unpatchify(tokens: &Tensor, channels: usize, h: usize, w: usize, p: usize) -> Result<Tensor> {
    let (n, f) = tokens.dims2()?;
    if p == 0 || h % p != 0 || w % p != 0 || n != (h / p) * (w / p) || f != channels * p * p {
        return Err(Error::dim(format!(
            "{n}x{f} tokens do not unpatchify to [{channels},{h},{w}] with patch {p}"
        )));
    }
    let gw = w / p;
    let v = tokens.to_f64_vec();
    let mut out = vec![0.0; channels * h * w];
    for (t, feat) in v.chunks_exact(f).enumerate() {
        let (gr, gc) = (t / gw, t % gw);
        for ch in 0..channels {
            for i in 0..p {
                for j in 0..p {
                    out[(ch * h + gr * p + i) * w + gc * p + j] = feat[(ch * p + i) * p + j];
                }
            }
        }
    }
    Tensor::new(vec![channels, h, w], out, tokens.precision())
}
