//! Colour hint sampling.
//!
//! A hint is an `s×s` window (odd `s`) painted with the mean colour of the
//! source image under it. Windows are drawn by rejection sampling: a
//! candidate is kept only if the variance of every RGB channel inside it is
//! at most [`MAX_HINT_VARIANCE`], which keeps hints off colour edges.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

use super::image::Image;

pub const MAX_HINT_VARIANCE: f64 = 0.01;
pub const DEFAULT_WINDOW: usize = 3;
/// Candidate draws allowed per requested hint.
pub const ATTEMPTS_PER_HINT: usize = 100;

/// One hint window, centred on `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HintPoint {
    pub row: usize,
    pub col: usize,
    pub s: usize,
    pub rgb: [f32; 3],
}

impl HintPoint {
    fn half(&self) -> usize {
        self.s / 2
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.s % 2 == 1
            && self.row >= self.half()
            && self.col >= self.half()
            && self.row + self.half() < height
            && self.col + self.half() < width
    }

    /// `(row0, col0)` of the window's top-left pixel.
    pub fn origin(&self) -> (usize, usize) {
        (self.row - self.half(), self.col - self.half())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HintSpec {
    height: usize,
    width: usize,
    points: Vec<HintPoint>,
    mask: Vec<bool>,
}

impl HintSpec {
    pub fn new(height: usize, width: usize, points: Vec<HintPoint>) -> Result<Self> {
        if let Some(p) = points.iter().find(|p| !p.fits(height, width)) {
            return Err(Error::Range(format!(
                "hint window {p:?} does not fit inside {height}x{width}"
            )));
        }
        if let Some(p) = points.iter().find(|p| p.rgb.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::Range(format!("hint colour {:?} outside [0,1]", p.rgb)));
        }
        let mut mask = vec![false; height * width];
        for p in &points {
            let (r0, c0) = p.origin();
            for r in r0..r0 + p.s {
                for c in c0..c0 + p.s {
                    mask[r * width + c] = true;
                }
            }
        }
        Ok(Self {
            height,
            width,
            points,
            mask,
        })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, Vec::new()).expect("no points")
    }

    pub fn points(&self) -> &[HintPoint] {
        &self.points
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Binary mask, 1 exactly on hint windows.
    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn to_json_lines(&self) -> String {
        self.points
            .iter()
            .map(|p| serde_json::to_string(p).expect("plain struct") + "\n")
            .collect()
    }

    pub fn from_json_lines(text: &str, height: usize, width: usize) -> Result<Self> {
        let mut points = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let trimmed = line.trim();
            if !trimmed.is_empty() {
                let p: HintPoint = serde_json::from_str(trimmed)
                    .map_err(|e| Error::parse(offset, format!("hint line: {e}")))?;
                points.push(p);
            }
            offset += line.len();
        }
        Self::new(height, width, points)
    }

    /// Checks every window against the variance bound on `image`.
    pub fn validate_against(&self, image: &Image) -> Result<()> {
        if image.dims() != self.dims() {
            return Err(Error::shape(
                "hint spec vs image",
                &[self.height, self.width],
                &[image.height(), image.width()],
            ));
        }
        for p in &self.points {
            let (r0, c0) = p.origin();
            let v = window_variance(image, r0, c0, p.s);
            if v.iter().any(|&x| x > MAX_HINT_VARIANCE) {
                return Err(Error::Range(format!("hint {p:?} has channel variance {v:?}")));
            }
        }
        Ok(())
    }
}

/// Population variance of each channel over an `s×s` window.
pub fn window_variance(image: &Image, row0: usize, col0: usize, s: usize) -> [f64; 3] {
    let (mean, sq) = window_moments(image, row0, col0, s);
    std::array::from_fn(|k| (sq[k] - mean[k] * mean[k]).max(0.0))
}

fn window_moments(image: &Image, row0: usize, col0: usize, s: usize) -> ([f64; 3], [f64; 3]) {
    let mut sum = [0.0f64; 3];
    let mut sq = [0.0f64; 3];
    for r in row0..row0 + s {
        for c in col0..col0 + s {
            let p = image.pixel(r, c);
            for k in 0..3 {
                sum[k] += p[k] as f64;
                sq[k] += (p[k] as f64) * (p[k] as f64);
            }
        }
    }
    let n = (s * s) as f64;
    (sum.map(|x| x / n), sq.map(|x| x / n))
}

#[derive(Debug, Clone)]
pub struct HintSampling {
    pub spec: HintSpec,
    pub requested: usize,
    pub attempts: usize,
    /// Set when the attempt budget ran out before a single window passed.
    pub warning: Option<String>,
}

impl HintSampling {
    pub fn accepted(&self) -> usize {
        self.spec.points.len()
    }
}

pub fn sample_hints<R: Rng + ?Sized>(color: &Image, count: usize, s: usize, rng: &mut R) -> Result<HintSampling> {
    if s == 0 || s % 2 == 0 {
        return Err(Error::Config(format!("hint window must be odd and positive, got {s}")));
    }
    let (h, w) = color.dims();
    if s > h || s > w {
        return Err(Error::Config(format!("hint window {s} larger than image {h}x{w}")));
    }
    let budget = count * ATTEMPTS_PER_HINT;
    let half = s / 2;
    let mut points = Vec::with_capacity(count);
    let mut attempts = 0;
    while points.len() < count && attempts < budget {
        attempts += 1;
        let row = rng.random_range(half..h - half);
        let col = rng.random_range(half..w - half);
        let (mean, sq) = window_moments(color, row - half, col - half, s);
        let worst = (0..3)
            .map(|k| (sq[k] - mean[k] * mean[k]).max(0.0))
            .fold(0.0, f64::max);
        if worst <= MAX_HINT_VARIANCE {
            points.push(HintPoint {
                row,
                col,
                s,
                rgb: mean.map(|m| (m as f32).clamp(0.0, 1.0)),
            });
        }
    }
    let warning = (count > 0 && points.is_empty()).then(|| {
        let msg = format!("no hint window passed the variance bound in {attempts} attempts");
        log::warn!("{msg}");
        msg
    });
    Ok(HintSampling {
        spec: HintSpec::new(h, w, points)?,
        requested: count,
        attempts,
        warning,
    })
}

/// Paints hints on a black canvas and pools to latent resolution.
///
/// Returns `(Z_C, M)`: colours average-pooled over `f×f` cells (`[3, h/f, w/f]`)
/// and the mask max-pooled (`[1, h/f, w/f]`).
pub fn render_hint_latents(spec: &HintSpec, factor: usize, precision: Precision) -> Result<(Tensor, Tensor)> {
    let (h, w) = spec.dims();
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(format!("{h}x{w} not divisible by latent factor {factor}")));
    }
    let mut canvas = vec![[0.0f32; 3]; h * w];
    for p in &spec.points {
        let (r0, c0) = p.origin();
        for r in r0..r0 + p.s {
            for c in c0..c0 + p.s {
                canvas[r * w + c] = p.rgb;
            }
        }
    }
    let (lh, lw) = (h / factor, w / factor);
    let mut colors = vec![0.0f64; 3 * lh * lw];
    let mut mask = vec![0.0f64; lh * lw];
    let area = (factor * factor) as f64;
    for r in 0..h {
        for c in 0..w {
            let cell = (r / factor) * lw + c / factor;
            for k in 0..3 {
                colors[k * lh * lw + cell] += canvas[r * w + c][k] as f64 / area;
            }
            if spec.mask[r * w + c] {
                mask[cell] = 1.0;
            }
        }
    }
    Ok((
        Tensor::new(vec![3, lh, lw], colors, precision)?,
        Tensor::new(vec![1, lh, lw], mask, precision)?,
    ))
}
