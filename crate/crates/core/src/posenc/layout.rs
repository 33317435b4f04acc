//! Localized reusable positional encoding.
//!
//! One `(d, h, 2w)` sin-cos grid is cut into five parts: a central
//! `(d, h, w)` block for the noise tokens and four `(d, h/2, w/2)` patches,
//! two on each side of the centre. A reference retrieved for a quadrant of
//! the line art gets that quadrant's patch; every reference in the same
//! quadrant reuses the same patch, so the grid never grows with `N`.
//!
//! ```text
//!   cols: 0      w/2           3w/2     2w
//!        +------+--------------+------+
//!        |  TL  |              |  TR  |  rows 0..h/2
//!        +------+    central   +------+
//!        |  BL  |              |  BR  |  rows h/2..h
//!        +------+--------------+------+
//! ```

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attention::TokenLayout;
use crate::error::{Error, Result};
use crate::tensor::{Precision, Tensor};

use super::sincos::sincos_grid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Quadrant {
    TopLeft,
    BottomLeft,
    TopRight,
    BottomRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::TopLeft,
        Quadrant::BottomLeft,
        Quadrant::TopRight,
        Quadrant::BottomRight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Quadrant::TopLeft => "TL",
            Quadrant::BottomLeft => "BL",
            Quadrant::TopRight => "TR",
            Quadrant::BottomRight => "BR",
        }
    }
}

impl fmt::Display for Quadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Quadrant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Quadrant::ALL
            .into_iter()
            .find(|q| q.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown quadrant {s:?}")))
    }
}

/// Rectangle of grid cells.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Region {
    pub rows: Range<usize>,
    pub cols: Range<usize>,
}

impl Region {
    pub fn cells(&self) -> usize {
        self.rows.len() * self.cols.len()
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.rows.contains(&row) && self.cols.contains(&col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PosEncLayout {
    d: usize,
    h: usize,
    w: usize,
    central: Region,
    local: [Region; 4],
}

pub fn partition_layout(d: usize, h: usize, w: usize) -> Result<PosEncLayout> {
    if h == 0 || w == 0 || h % 2 != 0 || w % 2 != 0 {
        return Err(Error::Config(format!("token grid {h}x{w} must have even, positive sides")));
    }
    if d == 0 {
        return Err(Error::Config("encoding dimension must be positive".into()));
    }
    let (hh, hw) = (h / 2, w / 2);
    let region = |rows: Range<usize>, cols: Range<usize>| Region { rows, cols };
    Ok(PosEncLayout {
        d,
        h,
        w,
        central: region(0..h, hw..hw + w),
        local: [
            region(0..hh, 0..hw),
            region(hh..h, 0..hw),
            region(0..hh, hw + w..2 * w),
            region(hh..h, hw + w..2 * w),
        ],
    })
}

impl PosEncLayout {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Noise token grid `(h, w)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Full encoding grid `(h, 2w)`.
    pub fn canvas(&self) -> (usize, usize) {
        (self.h, 2 * self.w)
    }

    pub fn central(&self) -> &Region {
        &self.central
    }

    pub fn local(&self, q: Quadrant) -> &Region {
        &self.local[q.index()]
    }

    pub fn noise_tokens(&self) -> usize {
        self.h * self.w
    }

    pub fn reference_tokens(&self) -> usize {
        (self.h / 2) * (self.w / 2)
    }

    pub fn token_layout(&self, n_refs: usize) -> Result<TokenLayout> {
        TokenLayout::new(self.noise_tokens(), self.reference_tokens(), n_refs)
    }
}

/// Cuts `region` out of a `[d, H, W]` grid.
pub fn extract_region(grid: &Tensor, region: &Region) -> Result<Tensor> {
    let [d, gh, gw] = grid.shape()[..] else {
        return Err(Error::dim(format!("expected [d,h,w] grid, got {:?}", grid.shape())));
    };
    if region.rows.end > gh || region.cols.end > gw {
        return Err(Error::dim(format!("region {region:?} outside {gh}x{gw} grid")));
    }
    let src = grid.to_f64_vec();
    let mut out = Vec::with_capacity(d * region.cells());
    for ch in 0..d {
        for r in region.rows.clone() {
            let base = (ch * gh + r) * gw;
            out.extend_from_slice(&src[base + region.cols.start..base + region.cols.end]);
        }
    }
    Tensor::new(vec![d, region.rows.len(), region.cols.len()], out, grid.precision())
}

/// `[d, h, w]` channel-first grid to `[h·w, d]` tokens (row-major cells).
pub fn grid_to_tokens(grid: &Tensor) -> Result<Tensor> {
    let [d, h, w] = grid.shape()[..] else {
        return Err(Error::dim(format!("expected [d,h,w] grid, got {:?}", grid.shape())));
    };
    grid.reshape(vec![d, h * w])?.transpose()
}

/// Inverse of [`grid_to_tokens`].
pub fn tokens_to_grid(tokens: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (n, d) = tokens.dims2()?;
    if n != h * w {
        return Err(Error::dim(format!("{n} tokens for a {h}x{w} grid")));
    }
    tokens.transpose()?.reshape(vec![d, h, w])
}

/// Positionally encoded `[references ∥ noise]` token sequence.
#[derive(Debug, Clone)]
pub struct EncodedSequence {
    pub tokens: Tensor,
    pub layout: TokenLayout,
    pub quadrants: Vec<Quadrant>,
}

impl EncodedSequence {
    pub fn references(&self) -> Result<Tensor> {
        self.tokens.rows(0..self.layout.ref_tokens())
    }

    pub fn noise(&self) -> Result<Tensor> {
        self.tokens.rows(self.layout.noise_range())
    }
}

/// Adds the central encoding to the noise grid and each reference's
/// quadrant patch to that reference, then flattens to tokens in sequence
/// order.
pub fn assign_encodings(
    noise: &Tensor,
    refs: &[(Tensor, Quadrant)],
    layout: &PosEncLayout,
) -> Result<EncodedSequence> {
    let table = PositionalTable::new(layout.clone(), noise.precision())?;
    let (d, h, w) = (layout.d, layout.h, layout.w);
    if noise.shape() != [d, h, w] {
        return Err(Error::shape("assign_encodings(noise)", &[d, h, w], noise.shape()));
    }
    let mut parts = Vec::with_capacity(refs.len() + 1);
    for (r, q) in refs {
        if r.shape() != [d, h / 2, w / 2] {
            return Err(Error::shape("assign_encodings(reference)", &[d, h / 2, w / 2], r.shape()));
        }
        parts.push(grid_to_tokens(r)?.add(table.local(*q))?);
    }
    parts.push(grid_to_tokens(noise)?.add(table.central())?);
    let views: Vec<&Tensor> = parts.iter().collect();
    Ok(EncodedSequence {
        tokens: Tensor::concat_rows(&views)?,
        layout: layout.token_layout(refs.len())?,
        quadrants: refs.iter().map(|(_, q)| *q).collect(),
    })
}

/// Token-major encodings for the five parts, computed once per grid.
#[derive(Debug, Clone)]
pub struct PositionalTable {
    layout: PosEncLayout,
    central: Tensor,
    local: [Tensor; 4],
}

impl PositionalTable {
    pub fn new(layout: PosEncLayout, precision: Precision) -> Result<Self> {
        let (ch, cw) = layout.canvas();
        let grid = sincos_grid(layout.d, ch, cw)?.cast(precision);
        let central = grid_to_tokens(&extract_region(&grid, &layout.central)?)?;
        let mut local = Vec::with_capacity(4);
        for q in Quadrant::ALL {
            local.push(grid_to_tokens(&extract_region(&grid, layout.local(q))?)?);
        }
        let local: [Tensor; 4] = local.try_into().expect("four quadrants");
        Ok(Self { layout, central, local })
    }

    pub fn layout(&self) -> &PosEncLayout {
        &self.layout
    }

    pub fn central(&self) -> &Tensor {
        &self.central
    }

    pub fn local(&self, q: Quadrant) -> &Tensor {
        &self.local[q.index()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_by_four_partition() {
        let l = partition_layout(8, 4, 4).unwrap();
        assert_eq!(l.central().cols, 2..6);
        assert_eq!(l.central().rows, 0..4);
        let total = l.central().cells() + Quadrant::ALL.iter().map(|&q| l.local(q).cells()).sum::<usize>();
        assert_eq!(total, 32);
        assert_eq!(total, 4 * 8);
    }

    #[test]
    fn tl_and_br_disjoint_on_two_by_two() {
        let l = partition_layout(4, 2, 2).unwrap();
        let (tl, br) = (l.local(Quadrant::TopLeft), l.local(Quadrant::BottomRight));
        for r in 0..2 {
            for c in 0..4 {
                assert!(!(tl.contains(r, c) && br.contains(r, c)));
            }
        }
    }

    #[test]
    fn odd_sides_rejected() {
        assert!(partition_layout(4, 3, 4).is_err());
        assert!(partition_layout(4, 4, 5).is_err());
    }

    #[test]
    fn grid_token_round_trip() {
        let g = sincos_grid(8, 3, 5).unwrap();
        let t = grid_to_tokens(&g).unwrap();
        assert_eq!(t.shape(), &[15, 8]);
        assert_eq!(tokens_to_grid(&t, 3, 5).unwrap(), g);
        // token (r, c) holds the channel vector of cell (r, c)
        assert_eq!(t.get(&[7, 2]).unwrap(), g.get(&[2, 1, 2]).unwrap());
    }

    #[test]
    fn quadrant_parse() {
        for q in Quadrant::ALL {
            assert_eq!(q.as_str().parse::<Quadrant>().unwrap(), q);
        }
    }
}
