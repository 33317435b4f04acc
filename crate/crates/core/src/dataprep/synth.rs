//! Procedural flat-colour scenes with two line-art renderings.
//!
//! Stand-in for colour pages and two line extractors with different
//! styles: `line_a` is a one-pixel edge map, `line_b` the same map dilated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::Image;

pub const DEFAULT_SCENE_SIZE: usize = 128;

/// Fill colours. Any two differ by at least 0.35 in some channel, so a
/// 3×3 window holding even one pixel of a second colour has a per-channel
/// variance above 0.01.
pub const PALETTE: [[f32; 3]; 9] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.75, 0.25],
    [0.15, 0.25, 0.90],
    [0.95, 0.85, 0.20],
    [0.80, 0.20, 0.80],
    [0.20, 0.80, 0.85],
    [0.96, 0.94, 0.86],
    [0.12, 0.12, 0.15],
    [0.95, 0.50, 0.05],
];

const EDGE_THRESHOLD: f32 = 0.2;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub color: Image,
    pub line_a: Image,
    pub line_b: Image,
    /// Palette index per pixel; region boundaries are exactly the colour edges.
    pub labels: Vec<u8>,
}

enum Shape {
    Rect { r0: usize, c0: usize, r1: usize, c1: usize },
    Ellipse { cr: f32, cc: f32, rr: f32, rc: f32 },
}

impl Shape {
    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Shape::Rect { r0, c0, r1, c1 } => (r0..r1).contains(&r) && (c0..c1).contains(&c),
            Shape::Ellipse { cr, cc, rr, rc } => {
                let dy = (r as f32 + 0.5 - cr) / rr;
                let dx = (c as f32 + 0.5 - cc) / rc;
                dx * dx + dy * dy <= 1.0
            }
        }
    }
}

pub fn synth_scene(seed: u64) -> SynthScene {
    synth_scene_sized(seed, DEFAULT_SCENE_SIZE, DEFAULT_SCENE_SIZE)
}

pub fn synth_scene_sized(seed: u64, height: usize, width: usize) -> SynthScene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let background = rng.random_range(0..PALETTE.len());
    let mut labels = vec![background as u8; height * width];

    let shapes = rng.random_range(3..=6);
    for _ in 0..shapes {
        let mut color = rng.random_range(0..PALETTE.len() - 1);
        if color >= background {
            color += 1;
        }
        let shape = if rng.random_bool(0.5) {
            let r0 = rng.random_range(0..height * 3 / 4);
            let c0 = rng.random_range(0..width * 3 / 4);
            let r1 = (r0 + rng.random_range(height / 8..=height / 2)).min(height);
            let c1 = (c0 + rng.random_range(width / 8..=width / 2)).min(width);
            Shape::Rect { r0, c0, r1, c1 }
        } else {
            Shape::Ellipse {
                cr: rng.random_range(0.0..height as f32),
                cc: rng.random_range(0.0..width as f32),
                rr: rng.random_range(height as f32 / 10.0..height as f32 / 3.0),
                rc: rng.random_range(width as f32 / 10.0..width as f32 / 3.0),
            }
        };
        for r in 0..height {
            for c in 0..width {
                if shape.contains(r, c) {
                    labels[r * width + c] = color as u8;
                }
            }
        }
    }

    let color = Image::from_fn(height, width, |r, c| PALETTE[labels[r * width + c] as usize]);
    let edges = edge_map(&color);
    let dilated = dilate(&edges, height, width);
    let to_line = |mask: &[bool]| {
        Image::from_fn(height, width, |r, c| if mask[r * width + c] { [0.0; 3] } else { [1.0; 3] })
    };
    SynthScene {
        line_a: to_line(&edges),
        line_b: to_line(&dilated),
        color,
        labels,
    }
}

/// Forward-difference gradient threshold on the max channel difference.
pub fn edge_map(image: &Image) -> Vec<bool> {
    let (h, w) = image.dims();
    let diff = |a: [f32; 3], b: [f32; 3]| (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f32::max);
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let p = image.pixel(r, c);
            let right = c + 1 < w && diff(p, image.pixel(r, c + 1)) > EDGE_THRESHOLD;
            let down = r + 1 < h && diff(p, image.pixel(r + 1, c)) > EDGE_THRESHOLD;
            out[r * w + c] = right || down;
        }
    }
    out
}

fn dilate(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            if !mask[r * w + c] {
                continue;
            }
            for rr in r.saturating_sub(1)..(r + 2).min(h) {
                for cc in c.saturating_sub(1)..(c + 2).min(w) {
                    out[rr * w + cc] = true;
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn palette_separation() {
        for (i, a) in PALETTE.iter().enumerate() {
            for b in &PALETTE[i + 1..] {
                let d = (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f32::max);
                assert!(d >= 0.35 - 1e-6, "{a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(synth_scene(7), synth_scene(7));
        assert_ne!(synth_scene(7).color, synth_scene(8).color);
    }

    #[test]
    fn line_styles_differ_on_at_least_one_percent() {
        for seed in 0..100 {
            let s = synth_scene(seed);
            let n = s.line_a.data().len() / 3;
            let differ = s
                .line_a
                .data()
                .chunks(3)
                .zip(s.line_b.data().chunks(3))
                .filter(|(a, b)| a != b)
                .count();
            assert!(differ * 100 >= n, "seed {seed}: {differ}/{n}");
        }
    }

    #[test]
    fn at_least_two_hue_clusters() {
        // oracle: hue histogram with 12 bins over saturated pixels
        for seed in 0..100 {
            let s = synth_scene(seed);
            let mut bins = [0usize; 13];
            for p in s.color.data().chunks(3) {
                let (mx, mn) = (p[0].max(p[1]).max(p[2]), p[0].min(p[1]).min(p[2]));
                if mx - mn < 0.2 {
                    bins[12] += 1; // achromatic
                    continue;
                }
                let h = if mx == p[0] {
                    ((p[1] - p[2]) / (mx - mn)).rem_euclid(6.0)
                } else if mx == p[1] {
                    (p[2] - p[0]) / (mx - mn) + 2.0
                } else {
                    (p[0] - p[1]) / (mx - mn) + 4.0
                };
                bins[((h / 6.0 * 12.0) as usize).min(11)] += 1;
            }
            let clusters = bins.iter().filter(|&&c| c > 0).count();
            assert!(clusters >= 2, "seed {seed}");
        }
    }
}
