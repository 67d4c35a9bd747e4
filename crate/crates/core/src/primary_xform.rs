//! Separable primary transforms.
//!
//! Decoder-side kernels are `N x N` matrices of signed 8-bit multipliers,
//! each row a basis function scaled by `2^b`. The inverse is a plain
//! transpose product followed by a rounding shift of `b`. The encoder-side
//! forward transform uses the exact dual of that integer basis, stored at
//! 14-bit precision, so the integer inverse undoes it up to rounding.
//!
//! 2D pipeline, forward: `x << 2`, column pass, row pass. Inverse: column
//! pass, row pass, `(v + 2) >> 2`. Coefficients are therefore four times the
//! orthonormal transform of the residual. Axes of length 64 are averaged
//! pairwise to 32 before the forward pass and duplicated after the 32-point
//! inverse, so a 64-sample axis carries 32 coefficients.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::types::Block;

pub const DEFAULT_SEED: u64 = 0x4156_3254_5821;
const FWD_BITS: u32 = 14;
/// Extra input precision for the 2D pipeline.
pub const PRE_SHIFT: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    Dct2,
    Dst4,
    Ladst8,
    Dst7,
    Ddt8,
    Ddt16,
    Idtx,
    Wht4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KernelId {
    pub kind: KernelKind,
    pub n: usize,
}

impl KernelId {
    pub const DST4: KernelId = KernelId { kind: KernelKind::Dst4, n: 4 };
    pub const LADST8: KernelId = KernelId { kind: KernelKind::Ladst8, n: 8 };
    pub const DST7_16: KernelId = KernelId { kind: KernelKind::Dst7, n: 16 };
    pub const DDT8: KernelId = KernelId { kind: KernelKind::Ddt8, n: 8 };
    pub const DDT16: KernelId = KernelId { kind: KernelKind::Ddt16, n: 16 };
    pub const WHT4: KernelId = KernelId { kind: KernelKind::Wht4, n: 4 };

    pub fn dct(n: usize) -> Self {
        KernelId { kind: KernelKind::Dct2, n }
    }

    pub fn idtx(n: usize) -> Self {
        KernelId { kind: KernelKind::Idtx, n }
    }

    pub fn name(&self) -> String {
        match self.kind {
            KernelKind::Dct2 => format!("DCT2_{}", self.n),
            KernelKind::Dst4 => "DST4".into(),
            KernelKind::Ladst8 => "LADST8".into(),
            KernelKind::Dst7 => "DST7_16".into(),
            KernelKind::Ddt8 => "DDT8".into(),
            KernelKind::Ddt16 => "DDT16".into(),
            KernelKind::Idtx => format!("IDTX_{}", self.n),
            KernelKind::Wht4 => "WHT4".into(),
        }
    }

    pub fn is_matrix(&self) -> bool {
        !matches!(self.kind, KernelKind::Idtx | KernelKind::Wht4)
    }
}

/// Single-multiply scale of the identity kernel per length.
pub fn idtx_scale(n: usize) -> i32 {
    if n >= 32 {
        1
    } else {
        2
    }
}

/// Row scale `2^b` of the 8-bit kernels per length.
pub fn kernel_shift(n: usize) -> u32 {
    match n {
        4 => 7,
        8 | 16 => 8,
        _ => 9,
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Kernel {
    pub id: KernelId,
    pub shift: u32,
    /// `n x n`, row `k` is basis function `k`.
    coeffs: Vec<i8>,
    /// Dual basis `2^b (K^T)^-1` at 14-bit precision.
    forward: Vec<i32>,
}

impl Kernel {
    pub fn n(&self) -> usize {
        self.id.n
    }

    pub fn coeffs(&self) -> &[i8] {
        &self.coeffs
    }

    pub fn forward_coeffs(&self) -> &[i32] {
        &self.forward
    }

    pub fn at(&self, k: usize, n: usize) -> i32 {
        self.coeffs[k * self.id.n + n] as i32
    }

    fn forward(&self, x: &[i32], out: &mut [i32]) {
        let n = self.id.n;
        for (k, o) in out.iter_mut().enumerate() {
            let row = &self.forward[k * n..(k + 1) * n];
            let acc: i64 = row.iter().zip(x).map(|(&f, &v)| f as i64 * v as i64).sum();
            *o = ((acc + (1 << (FWD_BITS - 1))) >> FWD_BITS) as i32;
        }
    }

    fn inverse(&self, y: &[i32], out: &mut [i32]) {
        let n = self.id.n;
        let mut acc = vec![0i64; n];
        for (k, &v) in y.iter().enumerate() {
            if v == 0 {
                continue;
            }
            for (a, &c) in acc.iter_mut().zip(&self.coeffs[k * n..(k + 1) * n]) {
                *a += c as i64 * v as i64;
            }
        }
        let round = 1i64 << (self.shift - 1);
        for (o, a) in out.iter_mut().zip(acc) {
            *o = ((a + round) >> self.shift) as i32;
        }
    }

    /// `K K^T` compared against `4^b I`: the largest entry deviation relative to `4^b`.
    pub fn orthogonality_error(&self) -> f64 {
        let n = self.id.n;
        let s2 = (1u64 << (2 * self.shift)) as f64;
        let mut worst = 0f64;
        for i in 0..n {
            for j in 0..n {
                let dot: i64 = (0..n).map(|t| self.at(i, t) as i64 * self.at(j, t) as i64).sum();
                let target = if i == j { s2 } else { 0.0 };
                worst = worst.max((dot as f64 - target).abs() / s2);
            }
        }
        worst
    }
}

fn dct2_basis(n: usize) -> Vec<Vec<f64>> {
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let a = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            (0..n).map(|i| a * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2.0 * nf)).cos()).collect()
        })
        .collect()
}

fn dst4_basis(n: usize) -> Vec<Vec<f64>> {
    let nf = n as f64;
    (0..n)
        .map(|k| {
            (0..n)
                .map(|i| {
                    (2.0 / nf).sqrt()
                        * (std::f64::consts::PI * (2 * k + 1) as f64 * (2 * i + 1) as f64 / (4.0 * nf)).sin()
                })
                .collect()
        })
        .collect()
}

fn dst7_basis(n: usize) -> Vec<Vec<f64>> {
    let d = 2.0 * n as f64 + 1.0;
    (0..n)
        .map(|k| {
            (0..n)
                .map(|i| (4.0 / d).sqrt() * (std::f64::consts::PI * (2 * i + 1) as f64 * (k + 1) as f64 / d).sin())
                .collect()
        })
        .collect()
}

/// Perturb a basis with seeded noise and re-orthonormalize it row by row,
/// keeping each row's orientation. The strength backs off until every entry
/// stays within the 8-bit multiplier range (or the base's own peak).
fn perturbed_basis(base: &[Vec<f64>], seed: u64, strength: f64) -> Vec<Vec<f64>> {
    let peak = base.iter().flatten().fold(0f64, |m, v| m.max(v.abs()));
    let limit = peak.max(127.5 / (1u64 << kernel_shift(base.len())) as f64);
    let mut s = strength;
    loop {
        let b = perturb_once(base, seed, s);
        if s < 1e-3 || b.iter().flatten().all(|v| v.abs() <= limit) {
            return b;
        }
        s *= 0.8;
    }
}

fn perturb_once(base: &[Vec<f64>], seed: u64, strength: f64) -> Vec<Vec<f64>> {
    let n = base.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Columns of `m` are the perturbed rows, so QR orthonormalizes them in order.
    let m = DMatrix::from_fn(n, n, |i, k| base[k][i] + strength * rng.random_range(-1.0..1.0) / (n as f64).sqrt());
    let qr = m.qr();
    let (q, r) = (qr.q(), qr.r());
    (0..n)
        .map(|k| {
            let sign = if r[(k, k)] < 0.0 { -1.0 } else { 1.0 };
            (0..n).map(|i| sign * q[(i, k)]).collect()
        })
        .collect()
}

fn round_half_away(v: f64) -> i64 {
    v.round() as i64
}

/// Scale each row by `2^b`, nudging the per-row gain so the rounded row keeps
/// its norm closest to `2^b`.
fn quantize_rows(basis: &[Vec<f64>], shift: u32) -> Vec<i8> {
    let s = (1u64 << shift) as f64;
    let target = s * s;
    let mut out = Vec::with_capacity(basis.len() * basis.len());
    for row in basis {
        let mut best: Option<(f64, f64, Vec<i8>)> = None;
        for step in -40i32..=40 {
            let t = 1.0 + step as f64 * 5e-4;
            let q: Vec<i8> = row.iter().map(|&v| round_half_away(v * s * t).clamp(-127, 127) as i8).collect();
            let norm: f64 = q.iter().map(|&v| (v as f64) * (v as f64)).sum();
            let err = (norm - target).abs();
            let key = (err, (t - 1.0).abs());
            if best.as_ref().is_none_or(|b| key < (b.0, b.1)) {
                best = Some((key.0, key.1, q));
            }
        }
        out.extend(best.expect("search grid is non-empty").2);
    }
    out
}

/// Forward dual `2^b (K^T)^-1` rounded to 14 bits. For DCT kernels the rows
/// above DC are forced to sum to zero so a flat input stays DC-only.
fn dual_basis(id: KernelId, coeffs: &[i8], shift: u32) -> Vec<i32> {
    let n = id.n;
    let kt = DMatrix::from_fn(n, n, |i, j| coeffs[j * n + i] as f64);
    let inv = kt.try_inverse().expect("kernel matrices are nonsingular");
    let scale = (1u64 << (shift + FWD_BITS)) as f64;
    let exact: Vec<f64> = (0..n * n).map(|idx| inv[(idx / n, idx % n)] * scale).collect();
    let mut fq: Vec<i32> = exact.iter().map(|&v| round_half_away(v) as i32).collect();
    if id.kind == KernelKind::Dct2 {
        for k in 1..n {
            balance_row(&mut fq[k * n..(k + 1) * n], &exact[k * n..(k + 1) * n], k % 2 == 0);
        }
    }
    fq
}

fn balance_row(row: &mut [i32], exact: &[f64], even: bool) {
    let n = row.len();
    // Even rows are mirror-symmetric, odd rows antisymmetric; the latter already sum to zero.
    if !even {
        return;
    }
    let half = n / 2;
    loop {
        let sum: i32 = row[..half].iter().sum();
        if sum == 0 {
            break;
        }
        let dir = -sum.signum();
        // Move the entry whose rounding was closest to the other way.
        let i = (0..half)
            .min_by(|&a, &b| {
                let ca = (row[a] + dir) as f64 - exact[a];
                let cb = (row[b] + dir) as f64 - exact[b];
                ca.abs().total_cmp(&cb.abs())
            })
            .expect("half row is non-empty");
        row[i] += dir;
        row[n - 1 - i] += dir;
    }
}

fn build_kernel(id: KernelId, basis: &[Vec<f64>]) -> Kernel {
    let shift = kernel_shift(id.n);
    let coeffs = quantize_rows(basis, shift);
    let forward = dual_basis(id, &coeffs, shift);
    Kernel { id, shift, coeffs, forward }
}

/// All matrix kernels. Kernels with trained values in the reference design
/// (L-ADST and the data-driven transforms) are seeded orthonormal stand-ins.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelBank {
    pub seed: u64,
    kernels: Vec<Kernel>,
}

impl KernelBank {
    pub fn new(seed: u64) -> Self {
        let mut kernels = Vec::new();
        for n in [4, 8, 16, 32] {
            kernels.push(build_kernel(KernelId::dct(n), &dct2_basis(n)));
        }
        kernels.push(build_kernel(KernelId::DST4, &dst4_basis(4)));
        let ladst = perturbed_basis(&dst4_basis(8), seed ^ 0x1ad5, 0.12);
        kernels.push(build_kernel(KernelId::LADST8, &ladst));
        let dst7 = dst7_basis(16);
        kernels.push(build_kernel(KernelId::DST7_16, &dst7));
        let (ddt8, ddt16) = ddt_bases(seed);
        kernels.push(build_kernel(KernelId::DDT8, &ddt8));
        kernels.push(build_kernel(KernelId::DDT16, &ddt16));
        KernelBank { seed, kernels }
    }

    pub fn default_bank() -> &'static KernelBank {
        static BANK: OnceLock<KernelBank> = OnceLock::new();
        BANK.get_or_init(|| KernelBank::new(DEFAULT_SEED))
    }

    pub fn kernels(&self) -> &[Kernel] {
        &self.kernels
    }

    pub fn kernel(&self, id: KernelId) -> Result<&Kernel> {
        self.kernels
            .iter()
            .find(|k| k.id == id)
            .ok_or_else(|| Error::param(format!("no matrix kernel {}", id.name())))
    }

    pub fn forward_1d(&self, id: KernelId, input: &[i32]) -> Result<Vec<i32>> {
        check_len(id, input)?;
        let mut out = vec![0; id.n];
        match id.kind {
            KernelKind::Idtx => {
                let s = idtx_scale(id.n);
                out.iter_mut().zip(input).for_each(|(o, &v)| *o = v * s);
            }
            KernelKind::Wht4 => out.copy_from_slice(&wht4_fwd([input[0], input[1], input[2], input[3]])),
            _ => self.kernel(id)?.forward(input, &mut out),
        }
        Ok(out)
    }

    pub fn inverse_1d(&self, id: KernelId, input: &[i32]) -> Result<Vec<i32>> {
        check_len(id, input)?;
        let mut out = vec![0; id.n];
        match id.kind {
            KernelKind::Idtx => {
                let s = idtx_scale(id.n);
                out.iter_mut().zip(input).for_each(|(o, &v)| *o = div_round(v, s));
            }
            KernelKind::Wht4 => out.copy_from_slice(&wht4_inv([input[0], input[1], input[2], input[3]])),
            _ => self.kernel(id)?.inverse(input, &mut out),
        }
        Ok(out)
    }

    /// Forward 2D transform. The coefficient block is `min(W,32) x min(H,32)`.
    pub fn forward_2d(&self, block: &Block, tx: TxType, inter: bool) -> Result<Block> {
        let (w, h) = (block.width, block.height);
        check_dims(w, h)?;
        let vk = resolve(tx.vertical(), h, inter)?;
        let hk = resolve(tx.horizontal(), w, inter)?;
        let (cw, ch) = (w.min(32), h.min(32));
        let mut mid = Block::new(w, ch);
        for c in 0..w {
            let col: Vec<i32> = block.column(c).iter().map(|&v| v << PRE_SHIFT).collect();
            let out = self.axis_forward(tx.vertical(), vk, &col)?;
            for (r, v) in out.into_iter().enumerate() {
                mid.set(r, c, v);
            }
        }
        let mut out = Block::new(cw, ch);
        for r in 0..ch {
            let row = self.axis_forward(tx.horizontal(), hk, mid.row(r))?;
            out.data[r * cw..(r + 1) * cw].copy_from_slice(&row);
        }
        Ok(out)
    }

    /// Inverse 2D transform back to a `width x height` residual.
    pub fn inverse_2d(&self, coeffs: &Block, tx: TxType, inter: bool, width: usize, height: usize) -> Result<Block> {
        check_dims(width, height)?;
        let (cw, ch) = (width.min(32), height.min(32));
        if coeffs.width != cw || coeffs.height != ch {
            return Err(Error::param(format!(
                "coefficient block {}x{} does not match {width}x{height}",
                coeffs.width, coeffs.height
            )));
        }
        let vk = resolve(tx.vertical(), height, inter)?;
        let hk = resolve(tx.horizontal(), width, inter)?;
        let mut mid = Block::new(cw, height);
        for c in 0..cw {
            let col = self.axis_inverse(tx.vertical(), vk, &coeffs.column(c), height)?;
            for (r, v) in col.into_iter().enumerate() {
                mid.set(r, c, v);
            }
        }
        let mut out = Block::new(width, height);
        let round = 1 << (PRE_SHIFT - 1);
        for r in 0..height {
            let row = self.axis_inverse(tx.horizontal(), hk, mid.row(r), width)?;
            for (c, v) in row.into_iter().enumerate() {
                out.set(r, c, (v + round) >> PRE_SHIFT);
            }
        }
        Ok(out)
    }

    fn axis_forward(&self, t: Tx1d, id: KernelId, x: &[i32]) -> Result<Vec<i32>> {
        let mut x = if x.len() == 64 { downsample64(x) } else { x.to_vec() };
        if t == Tx1d::FlipAdst {
            x.reverse();
        }
        self.forward_1d(id, &x)
    }

    fn axis_inverse(&self, t: Tx1d, id: KernelId, y: &[i32], len: usize) -> Result<Vec<i32>> {
        let mut x = self.inverse_1d(id, y)?;
        if t == Tx1d::FlipAdst {
            x.reverse();
        }
        Ok(if len == 64 { upsample_dup(&x) } else { x })
    }
}

fn ddt_bases(seed: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let ddt8 = perturbed_basis(&dst4_basis(8), seed ^ 0xd478, 0.35);
    let ddt16 = perturbed_basis(&dst7_basis(16), seed ^ 0xd416, 0.35);
    (ddt8, ddt16)
}

/// The two data-driven kernels for `seed`. Flipped variants are applied by
/// reversing samples, exactly as for FLIPADST.
pub fn ddt_kernels(seed: u64) -> (Kernel, Kernel) {
    let (b8, b16) = ddt_bases(seed);
    (build_kernel(KernelId::DDT8, &b8), build_kernel(KernelId::DDT16, &b16))
}

fn check_len(id: KernelId, input: &[i32]) -> Result<()> {
    if input.len() != id.n {
        return Err(Error::param(format!("{} expects {} samples, got {}", id.name(), id.n, input.len())));
    }
    Ok(())
}

fn check_dims(w: usize, h: usize) -> Result<()> {
    let ok = |d: usize| matches!(d, 4 | 8 | 16 | 32 | 64);
    if !ok(w) || !ok(h) || w.max(h) / w.min(h) > 16 {
        return Err(Error::param(format!("unsupported transform size {w}x{h}")));
    }
    Ok(())
}

fn div_round(v: i32, s: i32) -> i32 {
    match s {
        1 => v,
        _ => (v + s / 2).div_euclid(s),
    }
}

/// 1D kernel class of one axis of a 2D type.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Tx1d {
    Dct,
    Adst,
    FlipAdst,
    Identity,
}

/// Concrete kernel for an axis class at a given length.
pub fn resolve(t: Tx1d, n: usize, inter: bool) -> Result<KernelId> {
    let n = n.min(32);
    Ok(match (t, n) {
        (Tx1d::Dct, _) => KernelId::dct(n),
        (Tx1d::Identity, _) => KernelId::idtx(n),
        (_, 4) => KernelId::DST4,
        (_, 8) if inter => KernelId::DDT8,
        (_, 8) => KernelId::LADST8,
        (_, 16) if inter => KernelId::DDT16,
        (_, 16) => KernelId::DST7_16,
        _ => return Err(Error::param(format!("no ADST-family kernel of length {n}"))),
    })
}

/// The sixteen 2D primary types, numbered as in the transform-type table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TxType(u8);

impl TxType {
    pub const DCT_DCT: TxType = TxType(0);
    pub const ADST_DCT: TxType = TxType(1);
    pub const DCT_ADST: TxType = TxType(2);
    pub const ADST_ADST: TxType = TxType(3);
    pub const FLIPADST_DCT: TxType = TxType(4);
    pub const DCT_FLIPADST: TxType = TxType(5);
    pub const FLIPADST_FLIPADST: TxType = TxType(6);
    pub const ADST_FLIPADST: TxType = TxType(7);
    pub const FLIPADST_ADST: TxType = TxType(8);
    pub const IDTX: TxType = TxType(9);
    pub const V_DCT: TxType = TxType(10);
    pub const H_DCT: TxType = TxType(11);
    pub const V_ADST: TxType = TxType(12);
    pub const H_ADST: TxType = TxType(13);
    pub const V_FLIPADST: TxType = TxType(14);
    pub const H_FLIPADST: TxType = TxType(15);

    const AXES: [(Tx1d, Tx1d); 16] = {
        use Tx1d::*;
        [
            (Dct, Dct),
            (Adst, Dct),
            (Dct, Adst),
            (Adst, Adst),
            (FlipAdst, Dct),
            (Dct, FlipAdst),
            (FlipAdst, FlipAdst),
            (Adst, FlipAdst),
            (FlipAdst, Adst),
            (Identity, Identity),
            (Dct, Identity),
            (Identity, Dct),
            (Adst, Identity),
            (Identity, Adst),
            (FlipAdst, Identity),
            (Identity, FlipAdst),
        ]
    };

    const NAMES: [&'static str; 16] = [
        "DCT_DCT",
        "ADST_DCT",
        "DCT_ADST",
        "ADST_ADST",
        "FLIPADST_DCT",
        "DCT_FLIPADST",
        "FLIPADST_FLIPADST",
        "ADST_FLIPADST",
        "FLIPADST_ADST",
        "IDTX",
        "V_DCT",
        "H_DCT",
        "V_ADST",
        "H_ADST",
        "V_FLIPADST",
        "H_FLIPADST",
    ];

    pub fn from_id(id: u8) -> Result<Self> {
        if id < 16 {
            Ok(TxType(id))
        } else {
            Err(Error::param(format!("transform type id {id} outside 0..16")))
        }
    }

    pub fn all() -> impl Iterator<Item = TxType> {
        (0..16).map(TxType)
    }

    pub fn id(self) -> u8 {
        self.0
    }

    pub fn vertical(self) -> Tx1d {
        Self::AXES[self.0 as usize].0
    }

    pub fn horizontal(self) -> Tx1d {
        Self::AXES[self.0 as usize].1
    }

    pub fn from_axes(v: Tx1d, h: Tx1d) -> TxType {
        TxType(Self::AXES.iter().position(|&a| a == (v, h)).expect("every axis pair has an id") as u8)
    }

    pub fn name(self) -> &'static str {
        Self::NAMES[self.0 as usize]
    }

    /// Exactly one identity axis.
    pub fn is_1d(self) -> bool {
        (self.vertical() == Tx1d::Identity) != (self.horizontal() == Tx1d::Identity)
    }

    pub fn is_idtx(self) -> bool {
        self == TxType::IDTX
    }

    /// Vertical 1D types keep the transform along columns; their coefficients
    /// are scanned row by row.
    pub fn is_vertical_1d(self) -> bool {
        self.is_1d() && self.horizontal() == Tx1d::Identity
    }
}

impl std::fmt::Display for TxType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

pub fn downsample64(x: &[i32]) -> Vec<i32> {
    x.chunks_exact(2).map(|p| (p[0] + p[1] + 1) >> 1).collect()
}

/// `[a0, a0, a1, a1, ...]`.
pub fn upsample_dup(x: &[i32]) -> Vec<i32> {
    x.iter().flat_map(|&v| [v, v]).collect()
}

/// 32-point inverse along a 64-sample axis followed by sample duplication.
pub fn long64_inverse(bank: &KernelBank, t: Tx1d, coeffs: &[i32], inter: bool) -> Result<Vec<i32>> {
    bank.axis_inverse(t, resolve(t, 32, inter)?, coeffs, 64)
}

fn wht4_fwd(x: [i32; 4]) -> [i32; 4] {
    let (mut a, mut b, mut c, mut d) = (x[0], x[1], x[2], x[3]);
    a += b;
    d -= c;
    let e = (a - d) >> 1;
    b = e - b;
    c = e - c;
    a -= c;
    d += b;
    [a, c, d, b]
}

fn wht4_inv(y: [i32; 4]) -> [i32; 4] {
    let (mut a, mut c, mut d, mut b) = (y[0], y[1], y[2], y[3]);
    a += c;
    d -= b;
    let e = (a - d) >> 1;
    b = e - b;
    c = e - c;
    a -= b;
    d += c;
    [a, b, c, d]
}

/// Lifting Walsh-Hadamard transform, columns then rows. A flat block of ones
/// maps to a DC of 4.
pub fn wht4x4_forward(block: &Block) -> Result<Block> {
    check_4x4(block)?;
    let mut t = block.clone();
    for c in 0..4 {
        let y = wht4_fwd([t.get(0, c), t.get(1, c), t.get(2, c), t.get(3, c)]);
        for (r, v) in y.into_iter().enumerate() {
            t.set(r, c, v);
        }
    }
    for r in 0..4 {
        let y = wht4_fwd([t.get(r, 0), t.get(r, 1), t.get(r, 2), t.get(r, 3)]);
        t.data[r * 4..r * 4 + 4].copy_from_slice(&y);
    }
    Ok(t)
}

/// Exact inverse of [`wht4x4_forward`]: rows are undone first.
pub fn wht4x4_inverse(coeffs: &Block) -> Result<Block> {
    check_4x4(coeffs)?;
    let mut t = coeffs.clone();
    for r in 0..4 {
        let x = wht4_inv([t.get(r, 0), t.get(r, 1), t.get(r, 2), t.get(r, 3)]);
        t.data[r * 4..r * 4 + 4].copy_from_slice(&x);
    }
    for c in 0..4 {
        let x = wht4_inv([t.get(0, c), t.get(1, c), t.get(2, c), t.get(3, c)]);
        for (r, v) in x.into_iter().enumerate() {
            t.set(r, c, v);
        }
    }
    Ok(t)
}

fn check_4x4(b: &Block) -> Result<()> {
    if b.width != 4 || b.height != 4 {
        return Err(Error::param("WHT operates on 4x4 blocks"));
    }
    Ok(())
}

/// Worst-case magnitudes of one inverse pass of a kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AccumulatorAudit {
    /// Largest column sum of `|K|`, i.e. the worst output gain before the shift.
    pub max_abs_sum: u32,
    /// Signed bits the accumulator needs for inputs of `input_bits` signed bits.
    pub accumulator_bits: u32,
    /// Signed bits of the normalized pass output.
    pub output_bits: u32,
}

fn signed_bits(mag: u64) -> u32 {
    64 - mag.leading_zeros() + 1
}

pub fn accumulator_audit(kernel: &Kernel, input_bits: u32) -> AccumulatorAudit {
    let n = kernel.n();
    let max_abs_sum = (0..n).map(|i| (0..n).map(|k| kernel.at(k, i).unsigned_abs()).sum::<u32>()).max().unwrap_or(0);
    let peak_in = 1u64 << (input_bits - 1);
    let acc = max_abs_sum as u64 * peak_in;
    AccumulatorAudit {
        max_abs_sum,
        accumulator_bits: signed_bits(acc),
        output_bits: signed_bits((acc + (1 << (kernel.shift - 1))) >> kernel.shift),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bank() -> &'static KernelBank {
        KernelBank::default_bank()
    }

    #[test]
    fn kernels_fit_and_are_near_orthogonal() {
        for k in bank().kernels() {
            assert!(k.coeffs().iter().all(|&v| v > i8::MIN), "{}", k.id.name());
            let e = k.orthogonality_error();
            assert!(e <= 0.02, "{} deviates by {e}", k.id.name());
        }
    }

    #[test]
    fn forward_multipliers_fit_16_bits() {
        for k in bank().kernels() {
            assert!(k.forward_coeffs().iter().all(|&v| v.unsigned_abs() < 1 << 15), "{}", k.id.name());
        }
    }

    #[test]
    fn dual_basis_is_exact_inverse() {
        for k in bank().kernels() {
            let n = k.n();
            for i in 0..n {
                for j in 0..n {
                    let dot: i64 =
                        (0..n).map(|t| k.at(t, i) as i64 * k.forward_coeffs()[t * n + j] as i64).sum();
                    let want = if i == j { 1i64 << (k.shift + FWD_BITS) } else { 0 };
                    let tol = (1i64 << k.shift) * n as i64 / 2;
                    assert!((dot - want).abs() <= tol, "{} ({i},{j})", k.id.name());
                }
            }
        }
    }

    #[test]
    fn dct_flat_input_is_dc_only() {
        for n in [4, 8, 16, 32] {
            for c in [-2048, -1, 1, 7, 511, 2047] {
                let y = bank().forward_1d(KernelId::dct(n), &vec![c; n]).unwrap();
                assert!(y[1..].iter().all(|&v| v == 0), "n={n} c={c} {y:?}");
            }
        }
        let flat = Block::from_vec(8, 8, vec![37; 64]);
        let co = bank().forward_2d(&flat, TxType::DCT_DCT, false).unwrap();
        assert!(co.data[1..].iter().all(|&v| v == 0));
        // DC gain is within the kernel's 8-bit norm error of 1.
        let dc = 37 * 8 * 4;
        assert!((co.data[0] - dc).abs() <= dc / 50, "{}", co.data[0]);
    }

    #[test]
    fn identity_scale() {
        let b = bank();
        assert_eq!(b.forward_1d(KernelId::idtx(4), &[1, 2, 3, 4]).unwrap(), vec![2, 4, 6, 8]);
        assert_eq!(b.inverse_1d(KernelId::idtx(4), &[2, 4, 6, 8]).unwrap(), vec![1, 2, 3, 4]);
        let x: Vec<i32> = (0..32).collect();
        assert_eq!(b.forward_1d(KernelId::idtx(32), &x).unwrap(), x);
        assert!(b.forward_1d(KernelId::idtx(8), &[1, 2]).is_err());
    }

    #[test]
    fn long_axis_duplicates() {
        let b = bank();
        let z = long64_inverse(b, Tx1d::Dct, &[0; 32], false).unwrap();
        assert_eq!(z, vec![0; 64]);
        let mut y = vec![0; 32];
        y[3] = 900;
        y[0] = -400;
        let a = b.inverse_1d(KernelId::dct(32), &y).unwrap();
        let up = long64_inverse(b, Tx1d::Dct, &y, false).unwrap();
        for (i, v) in up.iter().enumerate() {
            assert_eq!(*v, a[i / 2]);
        }
    }

    #[test]
    fn tall_64_block_shapes() {
        let b = bank();
        let blk = Block::from_vec(16, 64, (0..16 * 64).map(|i| i % 23 - 11).collect());
        let co = b.forward_2d(&blk, TxType::DCT_DCT, false).unwrap();
        assert_eq!((co.width, co.height), (16, 32));
        let rec = b.inverse_2d(&co, TxType::DCT_DCT, false, 16, 64).unwrap();
        assert_eq!((rec.width, rec.height), (16, 64));
        for r in (0..64).step_by(2) {
            assert_eq!(rec.row(r), rec.row(r + 1));
        }
    }

    #[test]
    fn wht_examples() {
        let ones = Block::from_vec(4, 4, vec![1; 16]);
        let co = wht4x4_forward(&ones).unwrap();
        assert_eq!(co.data[0], 4);
        assert!(co.data[1..].iter().all(|&v| v == 0));
        assert_eq!(wht4x4_inverse(&co).unwrap(), ones);

        // Impulse of 4k spreads to magnitude k everywhere, as H X H^T / 4 with H = +-1 Hadamard.
        for k in [1, 3, -5] {
            let mut imp = Block::new(4, 4);
            imp.set(0, 0, 4 * k);
            let co = wht4x4_forward(&imp).unwrap();
            assert!(co.data.iter().all(|&v| v.abs() == k.abs()), "{:?}", co.data);
            assert_eq!(wht4x4_inverse(&co).unwrap(), imp);
        }
    }

    #[test]
    fn resolution_rules() {
        assert_eq!(resolve(Tx1d::Adst, 8, true).unwrap(), KernelId::DDT8);
        assert_eq!(resolve(Tx1d::Adst, 8, false).unwrap(), KernelId::LADST8);
        assert_eq!(resolve(Tx1d::FlipAdst, 16, true).unwrap(), KernelId::DDT16);
        assert_eq!(resolve(Tx1d::Adst, 16, false).unwrap(), KernelId::DST7_16);
        assert_eq!(resolve(Tx1d::Adst, 4, true).unwrap(), KernelId::DST4);
        assert!(resolve(Tx1d::Adst, 32, false).is_err());
        assert_eq!(resolve(Tx1d::Dct, 64, false).unwrap(), KernelId::dct(32));
    }

    #[test]
    fn tx_type_table() {
        assert_eq!(TxType::ADST_DCT.vertical(), Tx1d::Adst);
        assert_eq!(TxType::ADST_DCT.horizontal(), Tx1d::Dct);
        assert_eq!(TxType::V_DCT.horizontal(), Tx1d::Identity);
        assert!(TxType::V_DCT.is_vertical_1d());
        assert!(!TxType::H_DCT.is_vertical_1d());
        assert!(TxType::H_FLIPADST.is_1d());
        assert!(!TxType::IDTX.is_1d());
        for t in TxType::all() {
            assert_eq!(TxType::from_axes(t.vertical(), t.horizontal()), t);
        }
        assert!(TxType::from_id(16).is_err());
    }

    #[test]
    fn seeded_kernels_are_deterministic() {
        let (a8, a16) = ddt_kernels(7);
        let (b8, b16) = ddt_kernels(7);
        assert_eq!((a8.coeffs(), a16.coeffs()), (b8.coeffs(), b16.coeffs()));
        let (c8, _) = ddt_kernels(8);
        assert_ne!(a8.coeffs(), c8.coeffs());
        assert!(a8.orthogonality_error() <= 0.02 && a16.orthogonality_error() <= 0.02);
        assert_eq!(KernelBank::new(DEFAULT_SEED), *bank());
    }

    #[test]
    fn pass_outputs_fit_16_bits() {
        for k in bank().kernels() {
            let a = accumulator_audit(k, 16);
            assert!(a.accumulator_bits <= 32, "{}: {a:?}", k.id.name());
            let a = accumulator_audit(k, 10);
            assert!(a.output_bits <= 16, "{}: {a:?}", k.id.name());
        }
    }

    fn arb_vec(n: usize) -> impl Strategy<Value = Vec<i32>> {
        prop::collection::vec(-512i32..512, n)
    }

    proptest! {
        #[test]
        fn kernel_round_trip_1d(x in arb_vec(32), pick in 0usize..9) {
            let k = &bank().kernels()[pick];
            let x = &x[..k.n()];
            let y = bank().forward_1d(k.id, x).unwrap();
            let r = bank().inverse_1d(k.id, &y).unwrap();
            for (a, b) in x.iter().zip(&r) {
                prop_assert!((a - b).abs() <= 2);
            }
        }

        #[test]
        fn flip_equals_reversed_input(x in arb_vec(16 * 8), inter in any::<bool>()) {
            let blk = Block::from_vec(8, 16, x);
            let mut rev = Block::new(8, 16);
            for r in 0..16 {
                for c in 0..8 {
                    rev.set(15 - r, c, blk.get(r, c));
                }
            }
            let a = bank().forward_2d(&blk, TxType::FLIPADST_DCT, inter).unwrap();
            let b = bank().forward_2d(&rev, TxType::ADST_DCT, inter).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn identity_2d_exact(x in prop::collection::vec(-2048i32..2048, 32 * 8)) {
            let blk = Block::from_vec(32, 8, x);
            let co = bank().forward_2d(&blk, TxType::IDTX, false).unwrap();
            prop_assert_eq!(bank().inverse_2d(&co, TxType::IDTX, false, 32, 8).unwrap(), blk);
        }

        #[test]
        fn wht_exact(x in prop::collection::vec(i16::MIN as i32..=i16::MAX as i32, 16)) {
            let blk = Block::from_vec(4, 4, x);
            prop_assert_eq!(wht4x4_inverse(&wht4x4_forward(&blk).unwrap()).unwrap(), blk);
        }

        #[test]
        fn energy_preserved(x in prop::collection::vec(-512i32..512, 16 * 16), t in 0u8..9, inter in any::<bool>()) {
            let blk = Block::from_vec(16, 16, x);
            let e_in: f64 = blk.data.iter().map(|&v| (v as f64).powi(2)).sum();
            prop_assume!(e_in > 1e4);
            let co = bank().forward_2d(&blk, TxType::from_id(t).unwrap(), inter).unwrap();
            let e_out: f64 = co.data.iter().map(|&v| (v as f64).powi(2)).sum();
            let ratio = e_out / (16.0 * e_in);
            prop_assert!((0.98..=1.02).contains(&ratio), "ratio {}", ratio);
        }
    }
}
