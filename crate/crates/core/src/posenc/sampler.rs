use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};

use super::layout::Quadrant;
use super::retrieve::RefSet;

pub const TRAINING_TOTALS: [usize; 3] = [3, 6, 12];

/// Draws `total` distinct references across the quadrant sets.
///
/// Each round visits the sets in a freshly shuffled order and takes one
/// unused member, uniformly, from each until `total` is reached. The
/// shuffle keeps per-set frequencies equal when `total` is not a multiple
/// of the set count.
pub fn sample_training_refs<R: Rng + ?Sized>(
    sets: &[RefSet],
    total: usize,
    rng: &mut R,
) -> Result<Vec<(usize, Quadrant)>> {
    if !TRAINING_TOTALS.contains(&total) {
        return Err(Error::Config(format!("reference total {total} not in {TRAINING_TOTALS:?}")));
    }
    let mut union: Vec<usize> = sets.iter().flat_map(|s| s.members.iter().copied()).collect();
    union.sort_unstable();
    union.dedup();
    if union.len() < total {
        return Err(Error::Capacity(format!("{} distinct references, need {total}", union.len())));
    }

    let mut picked: Vec<(usize, Quadrant)> = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..sets.len()).collect();
    while picked.len() < total {
        order.shuffle(rng);
        for &s in &order {
            if picked.len() == total {
                break;
            }
            let free: Vec<usize> = sets[s]
                .members
                .iter()
                .copied()
                .filter(|m| !picked.iter().any(|&(p, _)| p == *m))
                .collect();
            if let Some(&m) = free.choose(rng) {
                picked.push((m, sets[s].quadrant));
            }
        }
    }
    Ok(picked)
}
