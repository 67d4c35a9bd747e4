//! Residual corpus files.
//!
//! Layout, little endian throughout:
//!
//! ```text
//! "AVRC"  version u16
//! frame width u16, frame height u16, bit depth u8, chroma format u8 (0 = 4:2:0, 1 = 4:4:4)
//! block count u32
//! descriptors: x u16, y u16, width u16, height u16, planes u8, prediction u8   (per block)
//! samples: per block, per plane, row-major i16
//! ```
//!
//! Prediction is the intra mode index 0..12 or 255 for inter.

use std::path::Path;

use anyhow::{bail, Context, Result};
use avtx::block_codec::{ChromaFormat, CodecConfig};
use avtx::{Block, IntraMode, Plane, Prediction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const MAGIC: [u8; 4] = *b"AVRC";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 2 + 2 + 1 + 1 + 4;
const DESCRIPTOR_LEN: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusBlock {
    pub x: u16,
    pub y: u16,
    pub width: usize,
    pub height: usize,
    pub pred: Prediction,
    pub planes: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    pub width: u16,
    pub height: u16,
    pub bit_depth: u8,
    pub chroma: ChromaFormat,
    pub blocks: Vec<CorpusBlock>,
}

pub fn pred_code(p: Prediction) -> u8 {
    match p {
        Prediction::Intra(m) => m.index() as u8,
        Prediction::Inter => 0xff,
    }
}

fn plane_dims(chroma: ChromaFormat, plane: Plane, w: usize, h: usize) -> (usize, usize) {
    let cfg = CodecConfig { chroma, ..Default::default() };
    cfg.plane_dims(plane, w, h)
}

impl Corpus {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.push(self.bit_depth);
        out.push(self.chroma as u8);
        out.extend_from_slice(&(self.blocks.len() as u32).to_le_bytes());
        for b in &self.blocks {
            for v in [b.x, b.y, b.width as u16, b.height as u16] {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(b.planes.len() as u8);
            out.push(pred_code(b.pred));
        }
        for b in &self.blocks {
            for p in &b.planes {
                for &s in &p.data {
                    out.extend_from_slice(&(s as i16).to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 4 || buf[..4] != MAGIC {
            bail!("offset 0: not a residual corpus (bad magic)");
        }
        if buf.len() < HEADER_LEN {
            bail!("offset {}: truncated corpus header", buf.len());
        }
        let u16_at = |o: usize| u16::from_le_bytes([buf[o], buf[o + 1]]);
        let version = u16_at(4);
        if version != VERSION {
            bail!("offset 4: unsupported corpus version {version}");
        }
        let (width, height, bit_depth) = (u16_at(6), u16_at(8), buf[10]);
        if !matches!(bit_depth, 8 | 10 | 12) {
            bail!("offset 10: unsupported bit depth {bit_depth}");
        }
        let chroma = match buf[11] {
            0 => ChromaFormat::Yuv420,
            1 => ChromaFormat::Yuv444,
            c => bail!("offset 11: unknown chroma format {c}"),
        };
        let count = u32::from_le_bytes(buf[12..16].try_into().expect("4 bytes")) as usize;
        let desc_end = HEADER_LEN
            .checked_add(count.checked_mul(DESCRIPTOR_LEN).context("block count overflows")?)
            .context("block count overflows")?;
        if buf.len() < desc_end {
            bail!("offset {}: {count} descriptors need {desc_end} header bytes, file has {}", buf.len(), buf.len());
        }
        let lim = 1i32 << (bit_depth + 1);
        let mut pos = desc_end;
        let mut blocks = Vec::with_capacity(count);
        for i in 0..count {
            let d = HEADER_LEN + i * DESCRIPTOR_LEN;
            let (x, y, w, h) = (u16_at(d), u16_at(d + 2), u16_at(d + 4) as usize, u16_at(d + 6) as usize);
            let nplanes = buf[d + 8] as usize;
            let pred = match buf[d + 9] {
                0xff => Prediction::Inter,
                m => Prediction::Intra(
                    IntraMode::from_index(m as usize).with_context(|| format!("offset {}: unknown intra mode {m}", d + 9))?,
                ),
            };
            if nplanes != 1 && nplanes != 3 {
                bail!("offset {}: block {i} has {nplanes} planes, expected 1 or 3", d + 8);
            }
            if x as usize + w > width as usize || y as usize + h > height as usize {
                bail!("offset {d}: block {i} ({x},{y}) {w}x{h} lies outside the {width}x{height} frame");
            }
            let mut planes = Vec::with_capacity(nplanes);
            for &plane in &Plane::ALL[..nplanes] {
                let (pw, ph) = plane_dims(chroma, plane, w, h);
                let len = pw * ph * 2;
                if buf.len() - pos < len {
                    bail!("offset {pos}: samples of block {i} truncated");
                }
                let mut data = Vec::with_capacity(pw * ph);
                for k in 0..pw * ph {
                    let s = i16::from_le_bytes([buf[pos + 2 * k], buf[pos + 2 * k + 1]]) as i32;
                    if s <= -lim || s >= lim {
                        bail!("offset {}: sample {s} of block {i} exceeds the {bit_depth}-bit residual range", pos + 2 * k);
                    }
                    data.push(s);
                }
                pos += len;
                planes.push(Block::from_vec(pw, ph, data));
            }
            blocks.push(CorpusBlock { x, y, width: w, height: h, pred, planes });
        }
        if pos != buf.len() {
            bail!("offset {pos}: {} bytes after the last block's samples", buf.len() - pos);
        }
        Ok(Corpus { width, height, bit_depth, chroma, blocks })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_bytes(&buf).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).with_context(|| format!("writing {}", path.display()))
    }
}

/// Options of a synthetic corpus.
#[derive(Clone, Debug)]
pub struct SynthParams {
    pub blocks: usize,
    pub bit_depth: u8,
    pub chroma: ChromaFormat,
    pub seed: u64,
    pub max_size: usize,
}

/// Blocks tiled left to right in rows of 1024 samples, each a gradient plus
/// noise, with occasional flat, sparse and sharp-edge content.
pub fn synthesize(p: &SynthParams) -> Corpus {
    const ROW: usize = 1024;
    let mut r = ChaCha8Rng::seed_from_u64(p.seed);
    let peak = (1i32 << p.bit_depth) - 1;
    let dims: Vec<usize> = [4, 8, 16, 32, 64].into_iter().filter(|&d| d <= p.max_size.max(4)).collect();
    let (mut x, mut y, mut row_h) = (0usize, 0usize, 0usize);
    let mut blocks = Vec::with_capacity(p.blocks);
    while blocks.len() < p.blocks {
        let (w, h) = (dims[r.random_range(0..dims.len())], dims[r.random_range(0..dims.len())]);
        if w.max(h) > 16 * w.min(h) {
            continue;
        }
        if x + w > ROW {
            x = 0;
            y += row_h;
            row_h = 0;
        }
        let pred = IntraMode::from_index(r.random_range(0..14)).map_or(Prediction::Inter, Prediction::Intra);
        let nplanes = if r.random_bool(0.7) { 3 } else { 1 };
        let amp = r.random_range(1..=peak / 4);
        let kind = r.random_range(0..8);
        let planes = Plane::ALL[..nplanes]
            .iter()
            .map(|&plane| {
                let (pw, ph) = plane_dims(p.chroma, plane, w, h);
                let a = if plane.is_luma() { amp } else { amp / 2 + 1 };
                let (gx, gy) = (r.random_range(-a..=a), r.random_range(-a..=a));
                let noise = r.random_range(0..=a / 3);
                let data = (0..pw * ph)
                    .map(|i| {
                        let (row, col) = ((i / pw) as i32, (i % pw) as i32);
                        let v = match kind {
                            0 => 0,
                            1 if r.random_bool(0.9) => 0,
                            2 => if col * 2 < pw as i32 { a } else { -a },
                            _ => (gx * col + gy * row) / pw.max(ph) as i32 + r.random_range(-noise..=noise),
                        };
                        v.clamp(-peak, peak)
                    })
                    .collect();
                Block::from_vec(pw, ph, data)
            })
            .collect();
        blocks.push(CorpusBlock { x: x as u16, y: y as u16, width: w, height: h, pred, planes });
        x += w;
        row_h = row_h.max(h);
    }
    let height = (y + row_h) as u16;
    Corpus { width: ROW as u16, height, bit_depth: p.bit_depth, chroma: p.chroma, blocks }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Corpus {
        synthesize(&SynthParams { blocks: 40, bit_depth: 10, chroma: ChromaFormat::Yuv420, seed: 1, max_size: 64 })
    }

    #[test]
    fn bytes_round_trip() {
        let c = small();
        assert_eq!(Corpus::from_bytes(&c.to_bytes()).unwrap(), c);
    }

    #[test]
    fn synthesis_is_deterministic() {
        assert_eq!(small(), small());
    }

    #[test]
    fn rejects_bad_input() {
        let bytes = small().to_bytes();
        let err = |b: &[u8]| Corpus::from_bytes(b).unwrap_err().to_string();
        assert!(err(&bytes[..bytes.len() - 1]).contains("truncated"));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(err(&extra).contains("after the last block"));
        let mut magic = bytes.clone();
        magic[1] = b'x';
        assert!(err(&magic).contains("magic"));
        let mut big = bytes.clone();
        let first = HEADER_LEN + 40 * DESCRIPTOR_LEN;
        big[first..first + 2].copy_from_slice(&3000i16.to_le_bytes());
        assert!(err(&big).starts_with(&format!("offset {first}:")));
    }
}
