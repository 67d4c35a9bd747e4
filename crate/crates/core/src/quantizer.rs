//! q_index to step-size mapping, scalar (dead-zone) quantization and
//! quantization matrices.
//!
//! Step sizes carry 8x the precision of the legacy tables: a step of 32
//! dequantizes a level to itself.

use crate::error::{Error, Result};
use crate::types::Plane;

/// Right shift that removes the 8x step precision plus the transform gain.
pub const DEQUANT_SHIFT: u32 = 5;
/// Quantization-matrix weight that leaves the step unchanged.
pub const QM_UNIT: u32 = 32;
pub const MAX_LEVEL: u32 = 1 << 22;

pub fn max_qindex(bit_depth: u8) -> Result<u16> {
    match bit_depth {
        8 => Ok(255),
        10 => Ok(303),
        12 => Ok(351),
        _ => Err(Error::param(format!("unsupported bit depth {bit_depth}"))),
    }
}

fn base_step(q: u32) -> u32 {
    debug_assert!((1..=24).contains(&q));
    2f64.powf((q as f64 + 127.0) / 24.0).round() as u32
}

/// Step size for an 8-bit index in `[0, 255]` (and its natural continuation).
///
/// The recursive branch is evaluated on the index: the step at `q` is the
/// first-period step of `((q-1) mod 24) + 1`, doubled once per completed
/// period. That keeps the mapping strictly increasing with an exact doubling
/// every 24 indices.
fn qstep_8bit(q: u32) -> u32 {
    if q == 0 {
        return 32;
    }
    base_step((q - 1) % 24 + 1) << ((q - 1) / 24)
}

pub fn qstep_from_index(q: u16, bit_depth: u8) -> Result<u32> {
    let max = max_qindex(bit_depth)?;
    if q > max {
        return Err(Error::param(format!("q_index {q} exceeds {max} at {bit_depth}-bit")));
    }
    let q = q as u32;
    Ok(match (bit_depth, q) {
        (10, 256..) => qstep_8bit(q - 48) * 4,
        (12, 256..) => qstep_8bit(q - 96) * 16,
        _ => qstep_8bit(q),
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantParams {
    pub base_q_idx: u16,
    pub y_dc_delta: i8,
    pub uv_dc_delta: i8,
    pub bit_depth: u8,
    pub qm: Vec<QMatrix>,
}

impl QuantParams {
    pub fn new(base_q_idx: u16, bit_depth: u8) -> Result<Self> {
        let p = QuantParams { base_q_idx, y_dc_delta: 0, uv_dc_delta: 0, bit_depth, qm: Vec::new() };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let max = max_qindex(self.bit_depth)?;
        if self.base_q_idx > max {
            return Err(Error::param(format!("base_q_idx {} exceeds {max}", self.base_q_idx)));
        }
        for d in [self.y_dc_delta, self.uv_dc_delta] {
            if !(-8..=23).contains(&d) {
                return Err(Error::param(format!("DC delta {d} outside [-8, 23]")));
            }
        }
        Ok(())
    }

    pub fn is_lossless(&self) -> bool {
        self.base_q_idx == 0 && self.y_dc_delta <= 0 && self.uv_dc_delta <= 0
    }

    /// Matrix registered for this plane and transform size, if any.
    pub fn matrix(&self, plane: Plane, width: usize, height: usize) -> Option<&QMatrix> {
        self.qm.iter().find(|m| m.plane == plane && m.width == width && m.height == height)
    }

    pub fn qstep(&self, plane: Plane, is_dc: bool) -> u32 {
        let q = effective_qindex(self, plane, is_dc);
        qstep_from_index(q, self.bit_depth).expect("effective index is clipped to range")
    }
}

pub fn effective_qindex(params: &QuantParams, plane: Plane, is_dc: bool) -> u16 {
    let max = max_qindex(params.bit_depth).unwrap_or(255) as i32;
    let delta = match (plane, is_dc) {
        (_, false) => 0,
        (Plane::Y, true) => params.y_dc_delta,
        (_, true) => params.uv_dc_delta,
    };
    (params.base_q_idx as i32 + delta as i32).clamp(0, max) as u16
}

/// Dead-zone rounding offset in 1/64 of a step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rounding(pub u32);

impl Rounding {
    pub const INTRA: Rounding = Rounding(32);
    pub const INTER: Rounding = Rounding(24);
}

/// Step in units of 1/1024 coefficient: `QStep * weight`.
fn scaled_step(qstep: u32, weight: u32) -> u64 {
    qstep as u64 * weight as u64
}

pub fn quantize(coeff: i32, qstep: u32, weight: u32, rounding: Rounding) -> i32 {
    debug_assert!(qstep > 0 && weight > 0);
    let step = scaled_step(qstep, weight);
    let mag = coeff.unsigned_abs() as u64;
    let level = ((mag << 16) + rounding.0 as u64 * step) / (step << 6);
    let level = level.min(MAX_LEVEL as u64 - 1) as i32;
    if coeff < 0 {
        -level
    } else {
        level
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dequantized {
    pub value: i32,
    pub clipped: bool,
}

/// `sign * (level * QStep * weight / 32) >> 5`, clipped to the coefficient
/// range of the bit depth.
pub fn dequantize(level: i32, qstep: u32, weight: u32, bit_depth: u8) -> Dequantized {
    let mag = (level.unsigned_abs() as u64 * scaled_step(qstep, weight)) >> (DEQUANT_SHIFT + 5);
    let lim = 1i64 << (7 + bit_depth as u32);
    let v = if level < 0 { -(mag as i64) } else { mag as i64 };
    let c = v.clamp(-lim, lim - 1);
    Dequantized { value: c as i32, clipped: c != v }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QMatrix {
    pub plane: Plane,
    pub width: usize,
    pub height: usize,
    weights: Vec<u8>,
    symmetric: bool,
}

const QM_STOP: u8 = 0;

impl QMatrix {
    pub fn new(plane: Plane, width: usize, height: usize, weights: Vec<u8>) -> Result<Self> {
        if !matches!((width, height), (4, 4) | (8, 4) | (4, 8) | (8, 8)) {
            return Err(Error::param(format!("user matrices cover 4x4, 8x4, 4x8 and 8x8, not {width}x{height}")));
        }
        if weights.len() != width * height {
            return Err(Error::param("weight count does not match matrix size"));
        }
        if weights.contains(&0) {
            return Err(Error::param("matrix weights must be positive"));
        }
        let symmetric = width == 8 && height == 8 && (0..8).all(|r| (0..8).all(|c| weights[r * 8 + c] == weights[c * 8 + r]));
        Ok(QMatrix { plane, width, height, weights, symmetric })
    }

    pub fn flat(plane: Plane, width: usize, height: usize, w: u8) -> Result<Self> {
        Self::new(plane, width, height, vec![w; width * height])
    }

    pub fn weight(&self, r: usize, c: usize) -> u32 {
        self.weights[r * self.width + c] as u32
    }

    pub fn weights(&self) -> &[u8] {
        &self.weights
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    fn coded_positions(width: usize, height: usize, symmetric: bool) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for r in 0..height {
            for c in 0..width {
                if !symmetric || c >= r {
                    v.push((r, c));
                }
            }
        }
        v
    }
}

fn plane_code(p: Plane) -> u8 {
    p as u8
}

/// Layout: plane, width, height, symmetry flag, then coded weights in
/// row-major order (upper triangle only when symmetric). A constant tail is
/// cut after its first value and closed with a 0 stop byte.
pub fn qm_serialize(m: &QMatrix) -> Vec<u8> {
    let pos = QMatrix::coded_positions(m.width, m.height, m.symmetric);
    let vals: Vec<u8> = pos.iter().map(|&(r, c)| m.weights[r * m.width + c]).collect();
    let last = *vals.last().expect("matrices are non-empty");
    let tail = vals.iter().rposition(|&v| v != last).map_or(0, |i| i + 1);
    let mut out = vec![plane_code(m.plane), m.width as u8, m.height as u8, m.symmetric as u8];
    if tail + 1 < vals.len() {
        out.extend_from_slice(&vals[..=tail]);
        out.push(QM_STOP);
    } else {
        out.extend_from_slice(&vals);
    }
    out
}

/// Parse one matrix; returns it with the number of bytes consumed.
pub fn qm_deserialize(bytes: &[u8]) -> Result<(QMatrix, usize)> {
    let parse = |offset: usize, msg: &str| Error::Parse { offset, msg: msg.to_string() };
    if bytes.len() < 4 {
        return Err(parse(bytes.len(), "truncated matrix header"));
    }
    let plane = *Plane::ALL.get(bytes[0] as usize).ok_or_else(|| parse(0, "unknown plane"))?;
    let (width, height) = (bytes[1] as usize, bytes[2] as usize);
    let symmetric = match bytes[3] {
        0 => false,
        1 if width == 8 && height == 8 => true,
        _ => return Err(parse(3, "bad symmetry flag")),
    };
    let pos = QMatrix::coded_positions(width, height, symmetric);
    let mut vals = Vec::with_capacity(pos.len());
    let mut i = 4;
    while vals.len() < pos.len() {
        let b = *bytes.get(i).ok_or_else(|| parse(i, "truncated matrix body"))?;
        if b == QM_STOP {
            let &fill = vals.last().ok_or_else(|| parse(i, "stop before any weight"))?;
            vals.resize(pos.len(), fill);
            i += 1;
            break;
        }
        vals.push(b);
        i += 1;
    }
    let mut weights = vec![0u8; width * height];
    for (&(r, c), &v) in pos.iter().zip(&vals) {
        weights[r * width + c] = v;
        if symmetric {
            weights[c * width + r] = v;
        }
    }
    let m = QMatrix::new(plane, width, height, weights).map_err(|e| parse(0, &e.to_string()))?;
    Ok((m, i))
}
