use std::ops::Range;

use crate::tensor::AllowMatrix;

use super::layout::{AttentionMode, Segment, TokenLayout};

/// Block-structured allow/deny matrix over the segments of a [`TokenLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionMask {
    layout: TokenLayout,
    mode: AttentionMode,
}

/// Allowed-pair totals split by the query side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PairCounts {
    pub noise_queries: u128,
    pub reference_queries: u128,
}

impl PairCounts {
    pub fn total(&self) -> u128 {
        self.noise_queries + self.reference_queries
    }
}

impl AttentionMask {
    pub fn new(layout: TokenLayout, mode: AttentionMode) -> Self {
        Self { layout, mode }
    }

    pub fn layout(&self) -> TokenLayout {
        self.layout
    }

    pub fn mode(&self) -> AttentionMode {
        self.mode
    }

    pub fn block_allowed(&self, query: Segment, key: Segment) -> bool {
        use Segment::*;
        match (self.mode, query, key) {
            (AttentionMode::Full, _, _) => true,
            (_, Noise, _) => true,
            (_, Reference(i), Reference(j)) => i == j,
            (AttentionMode::Sparse, Reference(_), Noise) => true,
            (AttentionMode::CausalSparse, Reference(_), Noise) => false,
        }
    }

    /// Allowed (query, key) token pairs, counted block by block.
    pub fn pair_counts(&self) -> PairCounts {
        let mut counts = PairCounts::default();
        for q in self.layout.segments() {
            let qn = self.layout.range(q).len() as u128;
            let allowed: u128 = self
                .layout
                .segments()
                .filter(|&k| self.block_allowed(q, k))
                .map(|k| self.layout.range(k).len() as u128)
                .sum();
            match q {
                Segment::Noise => counts.noise_queries += qn * allowed,
                Segment::Reference(_) => counts.reference_queries += qn * allowed,
            }
        }
        counts
    }

    pub fn allowed_pairs(&self) -> u128 {
        self.pair_counts().total()
    }

    /// View of the query rows `rows` against every key.
    pub fn query_rows(&self, rows: Range<usize>) -> MaskRows<'_> {
        assert!(rows.end <= self.layout.total_len());
        MaskRows { mask: self, rows }
    }

    /// Allowed keys for a token of `segment`, as contiguous ranges.
    pub fn segment_key_spans(&self, segment: Segment) -> Vec<Range<usize>> {
        let mut spans: Vec<Range<usize>> = Vec::new();
        for k in self.layout.segments() {
            if !self.block_allowed(segment, k) {
                continue;
            }
            let r = self.layout.range(k);
            match spans.last_mut() {
                Some(last) if last.end == r.start => last.end = r.end,
                _ => spans.push(r),
            }
        }
        spans
    }
}

impl AllowMatrix for AttentionMask {
    fn query_len(&self) -> usize {
        self.layout.total_len()
    }

    fn key_len(&self) -> usize {
        self.layout.total_len()
    }

    fn allowed(&self, query: usize, key: usize) -> bool {
        self.block_allowed(self.layout.segment_of(query), self.layout.segment_of(key))
    }

    fn key_spans(&self, query: usize) -> Vec<Range<usize>> {
        self.segment_key_spans(self.layout.segment_of(query))
    }
}

/// A horizontal slab of an [`AttentionMask`].
#[derive(Debug, Clone)]
pub struct MaskRows<'a> {
    mask: &'a AttentionMask,
    rows: Range<usize>,
}

impl AllowMatrix for MaskRows<'_> {
    fn query_len(&self) -> usize {
        self.rows.len()
    }

    fn key_len(&self) -> usize {
        self.mask.key_len()
    }

    fn allowed(&self, query: usize, key: usize) -> bool {
        self.mask.allowed(self.rows.start + query, key)
    }

    fn key_spans(&self, query: usize) -> Vec<Range<usize>> {
        self.mask.key_spans(self.rows.start + query)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::DenseMask;

    fn brute_force_pairs(mask: &AttentionMask) -> u128 {
        let n = mask.layout().total_len();
        let mut c = 0;
        for q in 0..n {
            for k in 0..n {
                if mask.allowed(q, k) {
                    c += 1;
                }
            }
        }
        c
    }

    #[test]
    fn no_references_all_modes_identical() {
        let l = TokenLayout::new(5, 3, 0).unwrap();
        let masks: Vec<DenseMask> = AttentionMode::ALL
            .iter()
            .map(|&m| DenseMask::from_matrix(&AttentionMask::new(l, m)))
            .collect();
        assert_eq!(masks[0], DenseMask::all(5, 5));
        assert_eq!(masks[0], masks[1]);
        assert_eq!(masks[1], masks[2]);
    }

    #[test]
    fn single_reference_sparse_equals_full() {
        let l = TokenLayout::new(4, 3, 1).unwrap();
        let full = DenseMask::from_matrix(&AttentionMask::new(l, AttentionMode::Full));
        let sparse = DenseMask::from_matrix(&AttentionMask::new(l, AttentionMode::Sparse));
        assert_eq!(full, sparse);
    }

    #[test]
    fn causal_sparse_pair_count_by_enumeration() {
        let l = TokenLayout::new(4, 2, 3).unwrap();
        let m = AttentionMask::new(l, AttentionMode::CausalSparse);
        assert_eq!(brute_force_pairs(&m), 52);
        assert_eq!(m.allowed_pairs(), 52);
    }

    #[test]
    fn block_rules() {
        let l = TokenLayout::new(2, 2, 2).unwrap();
        let (r0, r1, z) = (Segment::Reference(0), Segment::Reference(1), Segment::Noise);
        let cs = AttentionMask::new(l, AttentionMode::CausalSparse);
        assert!(cs.block_allowed(r0, r0));
        assert!(!cs.block_allowed(r0, r1));
        assert!(!cs.block_allowed(r0, z));
        assert!(cs.block_allowed(z, r1) && cs.block_allowed(z, z));
        let sp = AttentionMask::new(l, AttentionMode::Sparse);
        assert!(sp.block_allowed(r1, z));
        assert!(!sp.block_allowed(r1, r0));
    }

    #[test]
    fn closed_form_counts_match_enumeration() {
        for (sl, sr, n) in [(3, 2, 0), (3, 2, 1), (5, 3, 4), (7, 1, 6), (1, 4, 3)] {
            let l = TokenLayout::new(sl, sr, n).unwrap();
            let (sl, sr, n) = (sl as u128, sr as u128, n as u128);
            let expected = [
                sl * sl + 2 * n * sl * sr + n * n * sr * sr,
                sl * sl + 2 * n * sl * sr + n * sr * sr,
                sl * sl + n * sl * sr + n * sr * sr,
            ];
            for (mode, want) in AttentionMode::ALL.into_iter().zip(expected) {
                let m = AttentionMask::new(l, mode);
                assert_eq!(brute_force_pairs(&m), want, "{mode} {l:?}");
                assert_eq!(m.allowed_pairs(), want);
            }
        }
    }

    #[test]
    fn spans_match_default_derivation() {
        let l = TokenLayout::new(3, 2, 3).unwrap();
        for mode in AttentionMode::ALL {
            let m = AttentionMask::new(l, mode);
            let dense = DenseMask::from_matrix(&m);
            for q in 0..l.total_len() {
                assert_eq!(m.key_spans(q), dense.key_spans(q), "{mode} q={q}");
            }
        }
    }
}
