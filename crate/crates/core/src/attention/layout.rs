use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Segment structure of a `[r_1 .. r_N, noise]` token sequence.
///
/// References come first, each `ref_len` tokens long, followed by a single
/// noise segment of `noise_len` tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenLayout {
    noise_len: usize,
    ref_len: usize,
    n_refs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Reference(usize),
    Noise,
}

impl TokenLayout {
    pub fn new(noise_len: usize, ref_len: usize, n_refs: usize) -> Result<Self> {
        if noise_len == 0 || ref_len == 0 {
            return Err(Error::Config(format!(
                "token layout needs positive segment lengths (S_l={noise_len}, S_r={ref_len})"
            )));
        }
        n_refs
            .checked_mul(ref_len)
            .and_then(|r| r.checked_add(noise_len))
            .ok_or(Error::Overflow("token layout length"))?;
        Ok(Self {
            noise_len,
            ref_len,
            n_refs,
        })
    }

    pub fn noise_len(&self) -> usize {
        self.noise_len
    }

    pub fn ref_len(&self) -> usize {
        self.ref_len
    }

    pub fn n_refs(&self) -> usize {
        self.n_refs
    }

    pub fn ref_tokens(&self) -> usize {
        self.n_refs * self.ref_len
    }

    pub fn total_len(&self) -> usize {
        self.ref_tokens() + self.noise_len
    }

    pub fn with_refs(&self, n_refs: usize) -> Result<Self> {
        Self::new(self.noise_len, self.ref_len, n_refs)
    }

    pub fn segment_count(&self) -> usize {
        self.n_refs + 1
    }

    /// Segments in sequence order.
    pub fn segments(&self) -> impl Iterator<Item = Segment> {
        (0..self.n_refs)
            .map(Segment::Reference)
            .chain(std::iter::once(Segment::Noise))
    }

    pub fn range(&self, segment: Segment) -> Range<usize> {
        match segment {
            Segment::Reference(i) => {
                assert!(i < self.n_refs, "reference {i} out of {}", self.n_refs);
                i * self.ref_len..(i + 1) * self.ref_len
            }
            Segment::Noise => self.ref_tokens()..self.total_len(),
        }
    }

    pub fn noise_range(&self) -> Range<usize> {
        self.range(Segment::Noise)
    }

    pub fn segment_of(&self, token: usize) -> Segment {
        assert!(token < self.total_len(), "token {token} outside layout");
        if token >= self.ref_tokens() {
            Segment::Noise
        } else {
            Segment::Reference(token / self.ref_len)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttentionMode {
    Full,
    Sparse,
    CausalSparse,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 3] = [
        AttentionMode::Full,
        AttentionMode::Sparse,
        AttentionMode::CausalSparse,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AttentionMode::Full => "full",
            AttentionMode::Sparse => "sparse",
            AttentionMode::CausalSparse => "causal_sparse",
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(AttentionMode::Full),
            "sparse" => Ok(AttentionMode::Sparse),
            "causal_sparse" | "causalsparse" | "causal" => Ok(AttentionMode::CausalSparse),
            other => Err(Error::Config(format!("unknown attention mode {other:?}"))),
        }
    }
}
