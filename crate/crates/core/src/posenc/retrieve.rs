//! Quadrant split of the line art and top-k reference retrieval.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::dataprep::{load_image, Image};
use crate::error::{Error, Result};

use super::layout::Quadrant;

/// Scores how well a pool image matches a query patch; higher is better.
pub trait SimilarityScorer: Sync {
    fn score(&self, query: &Image, candidate: &Image) -> f64;
}

/// Cosine similarity of concatenated per-channel colour histograms.
#[derive(Debug, Clone, Copy)]
pub struct HistogramCosine {
    pub bins: usize,
}

impl Default for HistogramCosine {
    fn default() -> Self {
        Self { bins: 8 }
    }
}

impl HistogramCosine {
    /// `3·bins` counts; value `v` lands in bin `min(floor(v·bins), bins-1)`.
    pub fn histogram(&self, image: &Image) -> Vec<f64> {
        let mut hist = vec![0.0; 3 * self.bins];
        for px in image.data().chunks_exact(3) {
            for (ch, &v) in px.iter().enumerate() {
                let b = ((v * self.bins as f32) as usize).min(self.bins - 1);
                hist[ch * self.bins + b] += 1.0;
            }
        }
        hist
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

impl SimilarityScorer for HistogramCosine {
    fn score(&self, query: &Image, candidate: &Image) -> f64 {
        cosine(&self.histogram(query), &self.histogram(candidate))
    }
}

/// Retrieved references for one quadrant, best first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefSet {
    pub quadrant: Quadrant,
    pub members: Vec<usize>,
    pub scores: Vec<f64>,
    pub k: usize,
}

impl RefSet {
    pub fn new(quadrant: Quadrant, members: Vec<usize>, k: usize) -> Result<Self> {
        let scores = vec![0.0; members.len()];
        let set = Self { quadrant, members, scores, k };
        set.check()?;
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    fn check(&self) -> Result<()> {
        if self.members.len() > self.k {
            return Err(Error::Structural(format!("{} members exceed k = {}", self.members.len(), self.k)));
        }
        let mut seen = self.members.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.members.len() {
            return Err(Error::Structural("duplicate reference in set".into()));
        }
        Ok(())
    }
}

/// The `k` highest-scoring pool members, descending, ties to the lower index.
/// `k` beyond the pool size returns the whole pool.
pub fn retrieve_topk(
    quadrant: Quadrant,
    patch: &Image,
    pool: &[Image],
    k: usize,
    scorer: &dyn SimilarityScorer,
) -> Result<RefSet> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    if pool.is_empty() {
        return Err(Error::Config("reference pool is empty".into()));
    }
    let mut scored: Vec<(usize, f64)> = pool.par_iter().enumerate().map(|(i, img)| (i, scorer.score(patch, img))).collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    Ok(RefSet {
        quadrant,
        members: scored.iter().map(|s| s.0).collect(),
        scores: scored.iter().map(|s| s.1).collect(),
        k,
    })
}

/// One retrieval per quadrant patch, in [`Quadrant::ALL`] order.
pub fn retrieve_quadrant_sets(
    line_art: &Image,
    pool: &[Image],
    k: usize,
    scorer: &dyn SimilarityScorer,
) -> Result<[RefSet; 4]> {
    let split = quadrant_split(line_art);
    let mut sets = Vec::with_capacity(4);
    for q in Quadrant::ALL {
        sets.push(retrieve_topk(q, split.patch(q), pool, k, scorer)?);
    }
    Ok(sets.try_into().expect("four quadrants"))
}

/// Flattens quadrant sets into `(pool index, quadrant)` pairs. A reference
/// retrieved by several quadrants keeps the first quadrant in
/// [`Quadrant::ALL`] order.
pub fn assemble_references(sets: &[RefSet]) -> Vec<(usize, Quadrant)> {
    let mut out: Vec<(usize, Quadrant)> = Vec::new();
    for set in sets {
        for &m in &set.members {
            if !out.iter().any(|&(i, _)| i == m) {
                out.push((m, set.quadrant));
            }
        }
    }
    out
}

/// Line art cut into its four corners.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrantSplit {
    patches: [Image; 4],
    original: (usize, usize),
    padded: bool,
}

impl QuadrantSplit {
    pub fn patch(&self, q: Quadrant) -> &Image {
        &self.patches[q.index()]
    }

    /// True when an odd side was extended by replicating its last row or column.
    pub fn padded(&self) -> bool {
        self.padded
    }

    pub fn original_dims(&self) -> (usize, usize) {
        self.original
    }

    /// Stitches the patches back and drops any padding.
    pub fn reassemble(&self) -> Image {
        let (ph, pw) = self.patches[0].dims();
        let (h, w) = self.original;
        Image::from_fn(h, w, |r, c| {
            let q = match (r < ph, c < pw) {
                (true, true) => Quadrant::TopLeft,
                (false, true) => Quadrant::BottomLeft,
                (true, false) => Quadrant::TopRight,
                (false, false) => Quadrant::BottomRight,
            };
            self.patch(q).pixel(r % ph, c % pw)
        })
    }
}

pub fn quadrant_split(image: &Image) -> QuadrantSplit {
    let (h, w) = image.dims();
    let (eh, ew) = (h + h % 2, w + w % 2);
    let padded = (eh, ew) != (h, w);
    let (ph, pw) = (eh / 2, ew / 2);
    let at = |r: usize, c: usize| image.pixel(r.min(h - 1), c.min(w - 1));
    let patch = |r0: usize, c0: usize| Image::from_fn(ph, pw, |r, c| at(r0 + r, c0 + c));
    QuadrantSplit {
        patches: [patch(0, 0), patch(ph, 0), patch(0, pw), patch(ph, pw)],
        original: (h, w),
        padded,
    }
}

/// Loads every PNG/PPM file in `dir`, ordered by file name.
pub fn load_pool(dir: impl AsRef<Path>) -> Result<Vec<(PathBuf, Image)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("ppm"))
        })
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|p| {
            let img = load_image(&p)?;
            Ok((p, img))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn distinct(h: usize, w: usize) -> Image {
        let n = (h * w) as f32;
        Image::from_fn(h, w, |r, c| [(r * w + c) as f32 / n, 0.5, 0.0])
    }

    #[test]
    fn four_by_four_corners() {
        let img = distinct(4, 4);
        let s = quadrant_split(&img);
        assert!(!s.padded());
        for (q, (r0, c0)) in Quadrant::ALL.into_iter().zip([(0, 0), (2, 0), (0, 2), (2, 2)]) {
            assert_eq!(s.patch(q), &img.crop(r0, c0, 2, 2).unwrap(), "{q}");
        }
        assert_eq!(s.reassemble(), img);
    }

    #[test]
    fn odd_input_is_padded() {
        let img = distinct(5, 5);
        let s = quadrant_split(&img);
        assert!(s.padded());
        assert_eq!(s.patch(Quadrant::BottomRight).dims(), (3, 3));
        assert_eq!(s.patch(Quadrant::BottomRight).pixel(2, 2), img.pixel(4, 4));
        assert_eq!(s.reassemble(), img);
    }

    #[test]
    fn exact_copy_ranks_first() {
        let patch = distinct(6, 6);
        let pool = vec![Image::filled(6, 6, [0.2; 3]), patch.clone(), Image::filled(6, 6, [0.9, 0.1, 0.1])];
        let set = retrieve_topk(Quadrant::TopLeft, &patch, &pool, 2, &HistogramCosine::default()).unwrap();
        assert_eq!(set.members[0], 1);
        assert!((set.scores[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn solid_red_matches_red() {
        let (red, green, blue) = ([1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
        let pool = vec![Image::filled(4, 4, green), Image::filled(4, 4, red), Image::filled(4, 4, blue)];
        let scorer = HistogramCosine::default();
        let set = retrieve_topk(Quadrant::TopLeft, &Image::filled(2, 2, red), &pool, 1, &scorer).unwrap();
        assert_eq!(set.members, vec![1]);
        // oracle: red has R in bin 7, G and B in bin 0; green shares only the
        // B bin 0 count, so cosine = 1/3
        let g = scorer.score(&Image::filled(2, 2, red), &pool[0]);
        assert!((g - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn k_equal_pool_is_permutation_and_ties_go_low() {
        let pool: Vec<Image> = (0..5).map(|_| Image::filled(3, 3, [0.4; 3])).collect();
        let set = retrieve_topk(Quadrant::TopRight, &Image::filled(3, 3, [0.4; 3]), &pool, 9, &HistogramCosine::default()).unwrap();
        assert_eq!(set.members, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn bad_arguments_rejected() {
        let p = Image::filled(2, 2, [0.0; 3]);
        assert!(retrieve_topk(Quadrant::TopLeft, &p, &[], 1, &HistogramCosine::default()).is_err());
        assert!(retrieve_topk(Quadrant::TopLeft, &p, &[p.clone()], 0, &HistogramCosine::default()).is_err());
    }

    #[test]
    fn dedup_keeps_first_quadrant() {
        let sets = [
            RefSet::new(Quadrant::TopLeft, vec![3, 1], 2).unwrap(),
            RefSet::new(Quadrant::BottomLeft, vec![1, 4], 2).unwrap(),
        ];
        assert_eq!(
            assemble_references(&sets),
            vec![(3, Quadrant::TopLeft), (1, Quadrant::TopLeft), (4, Quadrant::BottomLeft)]
        );
    }

    #[test]
    fn refset_invariants() {
        assert!(RefSet::new(Quadrant::TopLeft, vec![1, 1], 3).is_err());
        assert!(RefSet::new(Quadrant::TopLeft, vec![1, 2], 1).is_err());
    }
}
