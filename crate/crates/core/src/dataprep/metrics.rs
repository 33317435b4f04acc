use crate::error::{Error, Result};

use super::image::Image;

/// Value written in place of an infinite PSNR.
pub const PSNR_CAP_DB: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn same_dims(a: &Image, b: &Image, op: &'static str) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(op, &[a.height(), a.width()], &[b.height(), b.width()]));
    }
    Ok(())
}

/// PSNR in dB with peak 1.0; `+inf` for identical images.
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b, "psnr")?;
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

pub fn psnr_capped(a: &Image, b: &Image) -> Result<f64> {
    Ok(psnr(a, b)?.min(PSNR_CAP_DB))
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut taps = std::array::from_fn(|i| {
        let x = i as f64 - c;
        (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
    });
    let s: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Valid-region separable Gaussian filter of a single-channel plane.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> (Vec<f64>, usize, usize) {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            horiz[r * ow + c] = (0..k).map(|i| taps[i] * plane[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| taps[i] * horiz[(r + i) * ow + c]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM over channels and valid window positions (11×11 Gaussian, σ = 1.5).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    same_dims(a, b, "ssim")?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let taps = gaussian_taps();
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..3 {
        let plane = |img: &Image| -> Vec<f64> { img.data().iter().skip(ch).step_by(3).map(|&v| v as f64).collect() };
        let x = plane(a);
        let y = plane(b);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let (mx, _, _) = blur(&x, h, w, &taps);
        let (my, _, _) = blur(&y, h, w, &taps);
        let (sxx, _, _) = blur(&xx, h, w, &taps);
        let (syy, _, _) = blur(&yy, h, w, &taps);
        let (sxy, _, _) = blur(&xy, h, w, &taps);
        for i in 0..mx.len() {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cov = sxy[i] - ux * uy;
            total += ((2.0 * ux * uy + C1) * (2.0 * cov + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn textured(seed: u64, h: usize, w: usize) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = (0..h * w * 3).map(|_| rng.random_range(0.1f32..0.9)).collect();
        Image::new(h, w, v).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = textured(1, 8, 8);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        assert_eq!(psnr_capped(&a, &a).unwrap(), PSNR_CAP_DB);

        let base = Image::filled(8, 8, [0.5; 3]);
        let shifted = Image::filled(8, 8, [0.6; 3]);
        assert!((psnr(&base, &shifted).unwrap() - 20.0).abs() < 0.01);

        let zero = Image::filled(4, 4, [0.0; 3]);
        let one = Image::filled(4, 4, [1.0; 3]);
        assert_eq!(psnr(&zero, &one).unwrap(), 0.0);
        assert!(psnr(&zero, &Image::filled(4, 5, [0.0; 3])).is_err());
    }

    #[test]
    fn psnr_symmetric_exactly() {
        let a = textured(2, 9, 7);
        let b = textured(3, 9, 7);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_self_is_exactly_one() {
        let a = textured(4, 16, 20);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn ssim_of_inverted_blocks_is_negative() {
        let a = Image::from_fn(24, 24, |r, c| if (r / 6 + c / 6) % 2 == 0 { [0.0; 3] } else { [1.0; 3] });
        let inv = Image::from_fn(24, 24, |r, c| a.pixel(r, c).map(|v| 1.0 - v));
        assert!(ssim(&a, &inv).unwrap() < 0.0);
    }

    #[test]
    fn ssim_tiny_noise_is_near_one() {
        let a = textured(5, 32, 32);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let noise = rand_distr::Normal::new(0.0f32, 1e-4).unwrap();
        let data = a.data().iter().map(|&v| (v + rng.sample(noise)).clamp(0.0, 1.0)).collect();
        let b = Image::new(32, 32, data).unwrap();
        assert!(ssim(&a, &b).unwrap() >= 0.999);
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let a = textured(7, 15, 13);
        let b = textured(8, 15, 13);
        let ab = ssim(&a, &b).unwrap();
        assert!((ab - ssim(&b, &a).unwrap()).abs() <= 1e-9);
        assert!((-1.0..=1.0).contains(&ab));
    }

    #[test]
    fn ssim_small_image_rejected() {
        let a = Image::filled(10, 30, [0.5; 3]);
        assert!(matches!(ssim(&a, &a), Err(Error::Dimension(_))));
    }
}
