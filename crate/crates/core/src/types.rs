//! Small shared descriptors: planes and prediction kinds.

use std::fmt;
use std::str::FromStr;

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Plane {
    Y,
    U,
    V,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Y, Plane::U, Plane::V];

    pub fn is_luma(self) -> bool {
        self == Plane::Y
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// The thirteen intra modes, in the order used to index transform-set classes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntraMode {
    Dc,
    V,
    H,
    D45,
    D135,
    D113,
    D157,
    D203,
    D67,
    Smooth,
    SmoothV,
    SmoothH,
    Paeth,
}

impl IntraMode {
    pub const ALL: [IntraMode; 13] = [
        IntraMode::Dc,
        IntraMode::V,
        IntraMode::H,
        IntraMode::D45,
        IntraMode::D135,
        IntraMode::D113,
        IntraMode::D157,
        IntraMode::D203,
        IntraMode::D67,
        IntraMode::Smooth,
        IntraMode::SmoothV,
        IntraMode::SmoothH,
        IntraMode::Paeth,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            IntraMode::Dc => "DC_PRED",
            IntraMode::V => "V_PRED",
            IntraMode::H => "H_PRED",
            IntraMode::D45 => "D45_PRED",
            IntraMode::D135 => "D135_PRED",
            IntraMode::D113 => "D113_PRED",
            IntraMode::D157 => "D157_PRED",
            IntraMode::D203 => "D203_PRED",
            IntraMode::D67 => "D67_PRED",
            IntraMode::Smooth => "SMOOTH_PRED",
            IntraMode::SmoothV => "SMOOTH_V_PRED",
            IntraMode::SmoothH => "SMOOTH_H_PRED",
            IntraMode::Paeth => "PAETH_PRED",
        }
    }
}

impl fmt::Display for IntraMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntraMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let up = s.to_ascii_uppercase();
        IntraMode::ALL
            .into_iter()
            .find(|m| m.name() == up || m.name().trim_end_matches("_PRED") == up)
            .ok_or_else(|| Error::Param(format!("unknown intra mode {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Prediction {
    Intra(IntraMode),
    Inter,
}

impl Prediction {
    pub fn is_intra(self) -> bool {
        matches!(self, Prediction::Intra(_))
    }

    pub fn intra_mode(self) -> Option<IntraMode> {
        match self {
            Prediction::Intra(m) => Some(m),
            Prediction::Inter => None,
        }
    }
}

/// Row-major integer grid: residual samples or transform coefficients.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Block {
    pub width: usize,
    pub height: usize,
    pub data: Vec<i32>,
}

impl Block {
    pub fn new(width: usize, height: usize) -> Self {
        Block { width, height, data: vec![0; width * height] }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<i32>) -> Self {
        assert_eq!(data.len(), width * height, "block data length");
        Block { width, height, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i32 {
        self.data[r * self.width + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: i32) {
        self.data[r * self.width + c] = v;
    }

    pub fn column(&self, c: usize) -> Vec<i32> {
        (0..self.height).map(|r| self.get(r, c)).collect()
    }

    pub fn row(&self, r: usize) -> &[i32] {
        &self.data[r * self.width..(r + 1) * self.width]
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    pub fn transpose(&self) -> Block {
        let mut t = Block::new(self.height, self.width);
        for r in 0..self.height {
            for c in 0..self.width {
                t.set(c, r, self.get(r, c));
            }
        }
        t
    }

    /// Copy of the `w x h` region anchored at `(r0, c0)`.
    pub fn crop(&self, r0: usize, c0: usize, w: usize, h: usize) -> Block {
        let mut b = Block::new(w, h);
        for r in 0..h {
            b.data[r * w..(r + 1) * w].copy_from_slice(&self.data[(r0 + r) * self.width + c0..][..w]);
        }
        b
    }

    pub fn paste(&mut self, r0: usize, c0: usize, src: &Block) {
        for r in 0..src.height {
            let dst = (r0 + r) * self.width + c0;
            self.data[dst..dst + src.width].copy_from_slice(src.row(r));
        }
    }
}

/// Up-right diagonal order of a `w x h` region as `(row, col)` pairs: each
/// anti-diagonal is walked from its bottom-left end towards the top-right.
pub fn up_right_diagonal(w: usize, h: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(w * h);
    for d in 0..w + h - 1 {
        let r_hi = d.min(h - 1);
        let r_lo = d.saturating_sub(w - 1);
        for r in (r_lo..=r_hi).rev() {
            out.push((r, d - r));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_order() {
        assert_eq!(up_right_diagonal(2, 2), vec![(0, 0), (1, 0), (0, 1), (1, 1)]);
        let s = up_right_diagonal(8, 4);
        assert_eq!(s.len(), 32);
        let mut seen = s.clone();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 32);
        assert!(s.windows(2).all(|p| p[0].0 + p[0].1 <= p[1].0 + p[1].1));
    }

    #[test]
    fn block_regions() {
        let b = Block::from_vec(4, 2, (0..8).collect());
        assert_eq!(b.transpose().transpose(), b);
        let c = b.crop(0, 2, 2, 2);
        assert_eq!(c.data, vec![2, 3, 6, 7]);
        let mut z = Block::new(4, 2);
        z.paste(0, 2, &c);
        assert_eq!(z.data, vec![0, 0, 2, 3, 0, 0, 6, 7]);
    }

    #[test]
    fn intra_mode_names() {
        for m in IntraMode::ALL {
            assert_eq!(m.name().parse::<IntraMode>().unwrap(), m);
        }
    }
}
