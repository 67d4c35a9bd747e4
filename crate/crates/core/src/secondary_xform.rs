//! Intra/inter secondary transform (IST).
//!
//! A reduced non-separable transform over an upper-left support region of
//! the primary coefficients. The forward stage gathers `N` coefficients along
//! the support mask, multiplies by an `M x N` kernel (`M < N`) and writes the
//! `M` outputs back into the first `M` mask positions; the remaining mask
//! positions become zero. The inverse multiplies by the transpose.
//!
//! Kernel values are seeded orthonormal matrices quantized to 8 bits at a
//! scale of 128. The registry holds 14 sets of 3 kernels: sets 0-1 serve
//! DCT-2 primaries and sets 2-13 serve ADST-family primaries. Small blocks
//! use one 8x16 kernel per (set, kernel); large blocks use 32x48 kernels for
//! the DCT sets and 20x48 kernels for the ADST sets. That gives 5.25 KB and
//! 42.75 KB of kernel storage.

use std::sync::OnceLock;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::primary_xform::{Tx1d, TxType, DEFAULT_SEED};
use crate::types::{up_right_diagonal, Block, Plane};

pub const IST_SHIFT: u32 = 7;
pub const KERNELS_PER_SET: usize = 3;
pub const DCT_SETS: usize = 2;
pub const ADST_SETS: usize = 12;
pub const TOTAL_SETS: usize = DCT_SETS + ADST_SETS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SizeClass {
    /// 8x16, blocks smaller than 8x8.
    Small,
    /// 32x48, DCT-2 primaries.
    LargeDct,
    /// 20x48, ADST-family primaries.
    LargeAdst,
}

impl SizeClass {
    pub fn dims(self) -> (usize, usize) {
        match self {
            SizeClass::Small => (8, 16),
            SizeClass::LargeDct => (32, 48),
            SizeClass::LargeAdst => (20, 48),
        }
    }

    pub fn for_block(width: usize, height: usize, family: TxFamily) -> Self {
        if width.min(height) < 8 {
            SizeClass::Small
        } else if family == TxFamily::Dct {
            SizeClass::LargeDct
        } else {
            SizeClass::LargeAdst
        }
    }

    /// Upper-left region the mask is drawn from, in diagonal order.
    fn region(self) -> usize {
        match self {
            SizeClass::Small => 4,
            _ => 8,
        }
    }
}

/// Primary-transform family, which picks the set range and large class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TxFamily {
    Dct,
    Adst,
}

impl TxFamily {
    pub fn set_count(self) -> usize {
        match self {
            TxFamily::Dct => DCT_SETS,
            TxFamily::Adst => ADST_SETS,
        }
    }

    fn first_set(self) -> usize {
        match self {
            TxFamily::Dct => 0,
            TxFamily::Adst => DCT_SETS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IstKernel {
    pub class: Option<SizeClass>,
    pub set: usize,
    pub index: usize,
    pub m: usize,
    pub n: usize,
    /// Row-major `m x n`.
    coeffs: Vec<i8>,
    mask: Vec<(usize, usize)>,
}

impl IstKernel {
    /// A kernel with explicit values and mask, mostly for tests and tooling.
    pub fn from_parts(m: usize, n: usize, coeffs: Vec<i8>, mask: Vec<(usize, usize)>) -> Result<Self> {
        if coeffs.len() != m * n || mask.len() != n || m > n || m == 0 {
            return Err(Error::param(format!("inconsistent IST kernel {m}x{n} with mask {}", mask.len())));
        }
        Ok(IstKernel { class: None, set: 0, index: 0, m, n, coeffs, mask })
    }

    pub fn coeffs(&self) -> &[i8] {
        &self.coeffs
    }

    pub fn mask(&self) -> &[(usize, usize)] {
        &self.mask
    }

    pub fn at(&self, k: usize, i: usize) -> i32 {
        self.coeffs[k * self.n + i] as i32
    }

    /// Largest deviation of `K K^T` from `2^14 I`, relative to `2^14`.
    pub fn orthogonality_error(&self) -> f64 {
        let s2 = (1u32 << (2 * IST_SHIFT)) as f64;
        let mut worst = 0f64;
        for a in 0..self.m {
            for b in 0..self.m {
                let dot: i32 = (0..self.n).map(|i| self.at(a, i) * self.at(b, i)).sum();
                let want = if a == b { s2 } else { 0.0 };
                worst = worst.max((dot as f64 - want).abs() / s2);
            }
        }
        worst
    }
}

fn mask_for(class: SizeClass) -> Vec<(usize, usize)> {
    let r = class.region();
    let mut m = up_right_diagonal(r, r);
    m.truncate(class.dims().1);
    m
}

fn random_kernel(class: SizeClass, set: usize, index: usize, rng: &mut ChaCha8Rng) -> IstKernel {
    let (m, n) = class.dims();
    let g = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0f64..1.0));
    let q = g.qr().q();
    let scale = (1u32 << IST_SHIFT) as f64;
    // Columns of q are orthonormal; the first m become kernel rows.
    let coeffs = (0..m)
        .flat_map(|k| (0..n).map(move |i| (k, i)))
        .map(|(k, i)| (q[(i, k)] * scale).round().clamp(-127.0, 127.0) as i8)
        .collect();
    IstKernel { class: Some(class), set, index, m, n, coeffs, mask: mask_for(class) }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IstRegistry {
    small: Vec<IstKernel>,
    large_dct: Vec<IstKernel>,
    large_adst: Vec<IstKernel>,
}

impl IstRegistry {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1575);
        let mut small = Vec::new();
        let mut large_dct = Vec::new();
        let mut large_adst = Vec::new();
        for set in 0..TOTAL_SETS {
            for k in 0..KERNELS_PER_SET {
                small.push(random_kernel(SizeClass::Small, set, k, &mut rng));
                if set < DCT_SETS {
                    large_dct.push(random_kernel(SizeClass::LargeDct, set, k, &mut rng));
                } else {
                    large_adst.push(random_kernel(SizeClass::LargeAdst, set, k, &mut rng));
                }
            }
        }
        IstRegistry { small, large_dct, large_adst }
    }

    pub fn default_registry() -> &'static IstRegistry {
        static REG: OnceLock<IstRegistry> = OnceLock::new();
        REG.get_or_init(|| IstRegistry::new(DEFAULT_SEED))
    }

    /// `set` counts within the family; `kernel` is 0-based.
    pub fn lookup(&self, family: TxFamily, set: usize, kernel: usize, class: SizeClass) -> Result<&IstKernel> {
        if set >= family.set_count() || kernel >= KERNELS_PER_SET {
            return Err(Error::param(format!("no IST kernel {kernel} in {family:?} set {set}")));
        }
        let global = family.first_set() + set;
        let (list, base) = match (class, family) {
            (SizeClass::Small, _) => (&self.small, global),
            (SizeClass::LargeDct, TxFamily::Dct) => (&self.large_dct, set),
            (SizeClass::LargeAdst, TxFamily::Adst) => (&self.large_adst, set),
            _ => return Err(Error::param(format!("{class:?} kernels do not serve {family:?} primaries"))),
        };
        Ok(&list[base * KERNELS_PER_SET + kernel])
    }

    pub fn kernels(&self) -> impl Iterator<Item = &IstKernel> {
        self.small.iter().chain(&self.large_dct).chain(&self.large_adst)
    }

    pub fn storage_bytes(&self, class: SizeClass) -> usize {
        self.kernels().filter(|k| k.class == Some(class)).map(|k| k.m * k.n).sum()
    }
}

/// Family of a primary type when IST may follow it. Chroma never uses IST;
/// inter luma needs DCT-2 on both axes, intra luma DCT-2 or ADST-family.
pub fn ist_eligibility(plane: Plane, intra: bool, tx: TxType) -> Option<TxFamily> {
    if !plane.is_luma() {
        return None;
    }
    let (v, h) = (tx.vertical(), tx.horizontal());
    if v == Tx1d::Identity || h == Tx1d::Identity {
        return None;
    }
    let dct = v == Tx1d::Dct && h == Tx1d::Dct;
    match (intra, dct) {
        (_, true) => Some(TxFamily::Dct),
        (true, false) => Some(TxFamily::Adst),
        (false, false) => None,
    }
}

fn check_mask(coeffs: &Block, kernel: &IstKernel) -> Result<()> {
    if kernel.mask.iter().any(|&(r, c)| r >= coeffs.height || c >= coeffs.width) {
        return Err(Error::param(format!(
            "IST mask does not fit a {}x{} coefficient block",
            coeffs.width, coeffs.height
        )));
    }
    Ok(())
}

pub fn gather_support(coeffs: &Block, kernel: &IstKernel) -> Result<Vec<i32>> {
    check_mask(coeffs, kernel)?;
    Ok(kernel.mask.iter().map(|&(r, c)| coeffs.get(r, c)).collect())
}

pub fn scatter_support(coeffs: &mut Block, kernel: &IstKernel, v: &[i32]) -> Result<()> {
    check_mask(coeffs, kernel)?;
    if v.len() != kernel.n {
        return Err(Error::param(format!("IST scatter expects {} values, got {}", kernel.n, v.len())));
    }
    for (&(r, c), &x) in kernel.mask.iter().zip(v) {
        coeffs.set(r, c, x);
    }
    Ok(())
}

fn round_shift(acc: i64) -> i32 {
    ((acc + (1 << (IST_SHIFT - 1))) >> IST_SHIFT) as i32
}

/// `u = (K v) >> 7`.
pub fn ist_forward(v: &[i32], kernel: &IstKernel) -> Vec<i32> {
    (0..kernel.m)
        .map(|k| round_shift((0..kernel.n).map(|i| kernel.at(k, i) as i64 * v[i] as i64).sum()))
        .collect()
}

/// `v = (K^T u) >> 7`; `u` may be shorter than `M`, missing entries are zero.
pub fn ist_inverse(u: &[i32], kernel: &IstKernel) -> Vec<i32> {
    (0..kernel.n)
        .map(|i| round_shift(u.iter().enumerate().map(|(k, &x)| kernel.at(k, i) as i64 * x as i64).sum()))
        .collect()
}

/// Forward IST in place on a primary coefficient block.
pub fn apply_forward(coeffs: &mut Block, kernel: &IstKernel) -> Result<()> {
    let u = ist_forward(&gather_support(coeffs, kernel)?, kernel);
    let mut out = vec![0; kernel.n];
    out[..kernel.m].copy_from_slice(&u);
    scatter_support(coeffs, kernel, &out)
}

/// Inverse IST in place. Values in mask positions past `M` are ignored.
pub fn apply_inverse(coeffs: &mut Block, kernel: &IstKernel) -> Result<()> {
    let v = gather_support(coeffs, kernel)?;
    let rec = ist_inverse(&v[..kernel.m], kernel);
    scatter_support(coeffs, kernel, &rec)
}

/// Multiplications per pixel of one IST stage on the smallest block of a class.
pub fn mults_per_pixel(class: SizeClass) -> f64 {
    let (m, n) = class.dims();
    let area = match class {
        SizeClass::Small => 16,
        _ => 64,
    };
    (m * n) as f64 / area as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reg() -> &'static IstRegistry {
        IstRegistry::default_registry()
    }

    #[test]
    fn storage_matches_table_totals() {
        assert_eq!(reg().storage_bytes(SizeClass::Small), 5376); // 5.25 KB
        let large = reg().storage_bytes(SizeClass::LargeDct) + reg().storage_bytes(SizeClass::LargeAdst);
        assert_eq!(large, 43776); // 42.75 KB
        assert_eq!(mults_per_pixel(SizeClass::Small), 8.0);
    }

    #[test]
    fn kernels_are_scaled_orthonormal() {
        for k in reg().kernels() {
            assert!(k.m < k.n && k.mask().len() == k.n);
            assert!(k.orthogonality_error() <= 0.02, "{:?} set {} idx {}", k.class, k.set, k.index);
            assert!(k.mask().iter().all(|&(r, c)| r < 8 && c < 8));
        }
    }

    #[test]
    fn support_lengths() {
        let big = reg().lookup(TxFamily::Dct, 0, 0, SizeClass::for_block(16, 16, TxFamily::Dct)).unwrap();
        let b = Block::new(16, 16);
        assert_eq!(gather_support(&b, big).unwrap().len(), 48);
        let small = reg().lookup(TxFamily::Adst, 3, 2, SizeClass::for_block(4, 4, TxFamily::Adst)).unwrap();
        assert_eq!(gather_support(&Block::new(4, 4), small).unwrap().len(), 16);
        assert!(gather_support(&Block::new(4, 4), big).is_err());
    }

    #[test]
    fn lookup_errors() {
        assert!(reg().lookup(TxFamily::Dct, 2, 0, SizeClass::LargeDct).is_err());
        assert!(reg().lookup(TxFamily::Adst, 0, 3, SizeClass::Small).is_err());
        assert!(reg().lookup(TxFamily::Adst, 0, 0, SizeClass::LargeDct).is_err());
        assert_eq!(reg().lookup(TxFamily::Adst, 11, 2, SizeClass::LargeAdst).unwrap().m, 20);
    }

    #[test]
    fn eligibility_rules() {
        assert_eq!(ist_eligibility(Plane::Y, true, TxType::ADST_ADST), Some(TxFamily::Adst));
        assert_eq!(SizeClass::for_block(16, 16, TxFamily::Adst).dims(), (20, 48));
        assert_eq!(ist_eligibility(Plane::Y, false, TxType::DCT_DCT), Some(TxFamily::Dct));
        assert_eq!(ist_eligibility(Plane::Y, false, TxType::ADST_DCT), None);
        assert_eq!(ist_eligibility(Plane::U, true, TxType::DCT_DCT), None);
        for t in TxType::all().filter(|t| t.is_1d() || t.is_idtx()) {
            assert_eq!(ist_eligibility(Plane::Y, true, t), None, "{t}");
        }
    }

    #[test]
    fn identity_kernel_and_zero() {
        let mut c = vec![0i8; 256];
        for i in 0..16 {
            c[i * 16 + i] = 127;
        }
        // 127 is the largest 8-bit multiplier, so the identity test kernel uses a scale of 127.
        let k = IstKernel::from_parts(16, 16, c, up_right_diagonal(4, 4)).unwrap();
        let v: Vec<i32> = (0..16).map(|i| i * 128 - 1000).collect();
        let u = ist_forward(&v, &k);
        for (a, b) in u.iter().zip(&v) {
            assert!((a - b * 127 / 128).abs() <= 1);
        }
        assert_eq!(ist_forward(&[0; 48], &reg().large_dct[0]), vec![0; 32]);
        assert_eq!(ist_inverse(&[0; 32], &reg().large_dct[0]), vec![0; 48]);
    }

    fn projection(k: &IstKernel, v: &[i32]) -> Vec<f64> {
        let s = (1 << IST_SHIFT) as f64;
        let u: Vec<f64> = (0..k.m).map(|r| (0..k.n).map(|i| k.at(r, i) as f64 * v[i] as f64).sum::<f64>() / s).collect();
        (0..k.n).map(|i| (0..k.m).map(|r| k.at(r, i) as f64 * u[r]).sum::<f64>() / s).collect()
    }

    proptest! {
        #[test]
        fn inverse_matches_float_projection(v in prop::collection::vec(-2048i32..2048, 48), pick in 0usize..84) {
            let k = reg().kernels().nth(pick).unwrap();
            let v = &v[..k.n];
            let rec = ist_inverse(&ist_forward(v, k), k);
            for (a, b) in rec.iter().zip(projection(k, v)) {
                prop_assert!((*a as f64 - b).abs() <= 2.0, "{} vs {}", a, b);
            }
        }

        #[test]
        fn outside_mask_untouched(x in prop::collection::vec(-4096i32..4096, 256), pick in 0usize..6) {
            let k = &reg().large_dct[pick];
            let orig = Block::from_vec(16, 16, x);
            let mut b = orig.clone();
            apply_forward(&mut b, k).unwrap();
            apply_inverse(&mut b, k).unwrap();
            for r in 0..16 {
                for c in 0..16 {
                    if !k.mask().contains(&(r, c)) {
                        prop_assert_eq!(b.get(r, c), orig.get(r, c));
                    }
                }
            }
        }

        #[test]
        fn gather_scatter_identity(x in prop::collection::vec(-100i32..100, 64)) {
            let k = &reg().small[5];
            let orig = Block::from_vec(8, 8, x);
            let mut b = orig.clone();
            let v = gather_support(&b, k).unwrap();
            scatter_support(&mut b, k, &v).unwrap();
            prop_assert_eq!(b, orig);
        }
    }
}
