//! Cross-chroma component transform (CCTX): an integer rotation of
//! colocated Cb/Cr coefficient pairs at 9-bit precision.

use crate::error::{Error, Result};

/// Angles in signaling order.
pub const ANGLES_DEG: [i32; 7] = [0, 45, 30, 60, -45, -30, -60];

/// `(cos, sin)` scaled by 256. The 30/60 degree pair is (221, 129) rather
/// than the nearest-rounded (222, 128): it keeps `cos^2 + sin^2` closer to
/// `2^16`, which is what bounds the round-trip error to one unit on 10-bit
/// inputs.
const TRIG: [(i32, i32); 7] = [(256, 0), (181, 181), (221, 129), (129, 221), (181, -181), (221, -129), (129, -221)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct CctxMode(u8);

impl CctxMode {
    pub const IDENTITY: CctxMode = CctxMode(0);
    pub const COUNT: usize = 7;

    pub fn new(index: u8) -> Result<Self> {
        if (index as usize) < Self::COUNT {
            Ok(CctxMode(index))
        } else {
            Err(Error::param(format!("CCTX mode {index} outside 0..7")))
        }
    }

    pub fn all() -> impl Iterator<Item = CctxMode> {
        (0..Self::COUNT as u8).map(CctxMode)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn degrees(self) -> i32 {
        ANGLES_DEG[self.0 as usize]
    }

    pub fn trig(self) -> (i32, i32) {
        TRIG[self.0 as usize]
    }

    /// The mode whose angle is 90 degrees away, if it is one of the seven.
    pub fn complement(self) -> Option<CctxMode> {
        let d = self.degrees();
        let target = if d > 0 { d - 90 } else { d + 90 };
        ANGLES_DEG.iter().position(|&a| a == target && d != 0).map(|i| CctxMode(i as u8))
    }
}

/// Rounds `p / 256` half away from zero, so the rotation commutes with negation.
fn rnd(p: i64) -> i32 {
    let m = (p.unsigned_abs() + 128) >> 8;
    (p.signum() * m as i64) as i32
}

pub fn cctx_forward(xu: i32, xv: i32, mode: CctxMode) -> (i32, i32) {
    if mode == CctxMode::IDENTITY {
        return (xu, xv);
    }
    let (c, s) = mode.trig();
    let (c, s, u, v) = (c as i64, s as i64, xu as i64, xv as i64);
    (rnd(c * u + s * v), rnd(-s * u + c * v))
}

pub fn cctx_inverse(c1: i32, c2: i32, mode: CctxMode) -> (i32, i32) {
    if mode == CctxMode::IDENTITY {
        return (c1, c2);
    }
    let (c, s) = mode.trig();
    let (c, s, a, b) = (c as i64, s as i64, c1 as i64, c2 as i64);
    (rnd(c * a - s * b), rnd(s * a + c * b))
}

/// Rotate two colocated chroma coefficient planes in place.
pub fn forward_planes(u: &mut [i32], v: &mut [i32], mode: CctxMode) {
    for (a, b) in u.iter_mut().zip(v.iter_mut()) {
        (*a, *b) = cctx_forward(*a, *b, mode);
    }
}

pub fn inverse_planes(c1: &mut [i32], c2: &mut [i32], mode: CctxMode) {
    for (a, b) in c1.iter_mut().zip(c2.iter_mut()) {
        (*a, *b) = cctx_inverse(*a, *b, mode);
    }
}

/// An all-zero C1 plane with a nonzero C2 plane is never a legal outcome:
/// the complementary angle carries the same content in C1.
pub fn cctx_signal_constraint(c1_all_zero: bool, c2_all_zero: bool) -> Result<()> {
    if c1_all_zero && !c2_all_zero {
        return Err(Error::conformance("CCTX block with zero C1 plane and nonzero C2 plane"));
    }
    Ok(())
}
