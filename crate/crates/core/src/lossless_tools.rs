//! Lossless coding tools: residual-block refinement (RBR) and the lossless
//! transform choice between the Walsh-Hadamard transform and identity.

use crate::entropy_core::{ContextBank, Family, SymbolCoder};
use crate::error::{Error, Result};
use crate::primary_xform::{wht4x4_forward, wht4x4_inverse};
use crate::types::{Block, IntraMode, Prediction};

/// First-difference refinement along one axis of an intra residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum RbrMode {
    #[default]
    None,
    Vertical,
    Horizontal,
}

impl RbrMode {
    /// RBR follows the intra direction; every other block is left alone.
    pub fn for_prediction(pred: Prediction) -> Self {
        match pred {
            Prediction::Intra(IntraMode::V) => RbrMode::Vertical,
            Prediction::Intra(IntraMode::H) => RbrMode::Horizontal,
            _ => RbrMode::None,
        }
    }
}

/// Vertical: every row minus the row above. Horizontal: every column minus
/// the column to its left. The first row or column is kept.
pub fn rbr_forward(r: &Block, mode: RbrMode) -> Block {
    let mut out = r.clone();
    match mode {
        RbrMode::None => {}
        RbrMode::Vertical => {
            for row in (1..r.height).rev() {
                for c in 0..r.width {
                    out.set(row, c, r.get(row, c) - r.get(row - 1, c));
                }
            }
        }
        RbrMode::Horizontal => {
            for row in 0..r.height {
                for c in (1..r.width).rev() {
                    out.set(row, c, r.get(row, c) - r.get(row, c - 1));
                }
            }
        }
    }
    out
}

/// Cumulative sums along the refined axis.
pub fn rbr_inverse(d: &Block, mode: RbrMode) -> Block {
    let mut out = d.clone();
    match mode {
        RbrMode::None => {}
        RbrMode::Vertical => {
            for row in 1..d.height {
                for c in 0..d.width {
                    out.set(row, c, out.get(row - 1, c) + d.get(row, c));
                }
            }
        }
        RbrMode::Horizontal => {
            for row in 0..d.height {
                for c in 1..d.width {
                    out.set(row, c, out.get(row, c - 1) + d.get(row, c));
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LosslessKernel {
    Wht,
    Idtx,
}

/// Lossless transform of a plane: the kernel and the TB size tiling the CB.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LosslessTx {
    pub kernel: LosslessKernel,
    pub tb_w: usize,
    pub tb_h: usize,
}

impl LosslessTx {
    pub const WHT4: LosslessTx = LosslessTx { kernel: LosslessKernel::Wht, tb_w: 4, tb_h: 4 };
    pub const IDTX4: LosslessTx = LosslessTx { kernel: LosslessKernel::Idtx, tb_w: 4, tb_h: 4 };

    /// The large identity option for an `m x n` CB.
    pub fn large(m: usize, n: usize) -> Self {
        LosslessTx { kernel: LosslessKernel::Idtx, tb_w: m.min(32), tb_h: n.min(32) }
    }
}

/// Luma options available to the encoder for a lossless CB; the signaled one
/// must be among them.
pub fn lossless_options(pred: Prediction, fsc: bool, m: usize, n: usize) -> Vec<LosslessTx> {
    let mut v = match (pred.is_intra(), fsc) {
        (true, true) => vec![LosslessTx::IDTX4, LosslessTx::large(m, n)],
        (true, false) => vec![LosslessTx::WHT4],
        (false, _) => vec![LosslessTx::WHT4, LosslessTx::IDTX4, LosslessTx::large(m, n)],
    };
    v.dedup();
    v
}

/// Chroma follows the luma kernel at 4x4, with nothing signaled.
pub fn chroma_lossless_tx(luma: LosslessTx) -> LosslessTx {
    LosslessTx { kernel: luma.kernel, tb_w: 4, tb_h: 4 }
}

#[derive(Clone, Debug)]
pub struct LosslessContexts {
    size: Family,
    kind: Family,
}

impl LosslessContexts {
    pub fn new(bank: &mut ContextBank) -> Self {
        LosslessContexts { size: bank.add_family("lossless_tx_size", 2, 2), kind: bank.add_family("lossless_tx_type", 1, 2) }
    }
}

/// Luma lossless transform syntax for an `m x n` CB. Intra: a size symbol
/// under FSC (always identity), nothing otherwise (WHT 4x4). Inter: the size
/// first, then the kernel only at 4x4.
#[allow(clippy::too_many_arguments)]
pub fn code_lossless_tx<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &LosslessContexts,
    pred: Prediction,
    fsc: bool,
    m: usize,
    n: usize,
    choice: LosslessTx,
) -> Result<LosslessTx> {
    if c.is_encoder() && !lossless_options(pred, fsc, m, n).contains(&choice) {
        return Err(Error::param(format!("lossless transform {choice:?} not available for {m}x{n}")));
    }
    let large = LosslessTx::large(m, n);
    let small = choice.tb_w == 4 && choice.tb_h == 4;
    let size_coded = large.tb_w != 4 || large.tb_h != 4;
    if pred.is_intra() && !fsc {
        return Ok(LosslessTx::WHT4);
    }
    let is_small = if size_coded {
        c.symbol(bank, ctxs.size.ctx(pred.is_intra() as usize), (!small) as usize)? == 0
    } else {
        true
    };
    if !is_small {
        return Ok(large);
    }
    if pred.is_intra() {
        return Ok(LosslessTx::IDTX4);
    }
    let idtx = c.symbol(bank, ctxs.kind.ctx(0), (choice.kernel == LosslessKernel::Idtx) as usize)? == 1;
    Ok(if idtx { LosslessTx::IDTX4 } else { LosslessTx::WHT4 })
}

/// Lossless forward transform of one TB; levels equal coefficients.
pub fn lossless_forward(block: &Block, kernel: LosslessKernel) -> Result<Block> {
    match kernel {
        LosslessKernel::Idtx => Ok(block.clone()),
        LosslessKernel::Wht => wht4x4_forward(block),
    }
}

pub fn lossless_inverse(levels: &Block, kernel: LosslessKernel) -> Result<Block> {
    match kernel {
        LosslessKernel::Idtx => Ok(levels.clone()),
        LosslessKernel::Wht => wht4x4_inverse(levels),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy_core::{Decoder, Encoder};
    use proptest::prelude::*;

    #[test]
    fn vertical_on_flat_column() {
        let b = Block::from_vec(1, 4, vec![1, 1, 1, 1]);
        assert_eq!(rbr_forward(&b, RbrMode::Vertical).data, vec![1, 0, 0, 0]);
        let b = Block::from_vec(4, 4, (0..16).collect());
        assert_eq!(rbr_forward(&b, RbrMode::None), b);
    }

    #[test]
    fn matches_difference_matrices() {
        // W_v is bidiagonal: 1 on the diagonal, -1 just below it.
        let r = Block::from_vec(4, 4, vec![3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7, 9, 3]);
        let wv = |i: usize, j: usize| if i == j { 1 } else if i == j + 1 { -1 } else { 0 };
        let v = rbr_forward(&r, RbrMode::Vertical);
        let h = rbr_forward(&r, RbrMode::Horizontal);
        for i in 0..4 {
            for j in 0..4 {
                let left: i32 = (0..4).map(|k| wv(i, k) * r.get(k, j)).sum();
                let right: i32 = (0..4).map(|k| r.get(i, k) * wv(j, k)).sum();
                assert_eq!(v.get(i, j), left);
                assert_eq!(h.get(i, j), right);
            }
        }
    }

    #[test]
    fn modes_from_prediction() {
        assert_eq!(RbrMode::for_prediction(Prediction::Intra(IntraMode::V)), RbrMode::Vertical);
        assert_eq!(RbrMode::for_prediction(Prediction::Intra(IntraMode::H)), RbrMode::Horizontal);
        assert_eq!(RbrMode::for_prediction(Prediction::Intra(IntraMode::D45)), RbrMode::None);
        assert_eq!(RbrMode::for_prediction(Prediction::Inter), RbrMode::None);
    }

    #[test]
    fn gradients_get_sparser() {
        let b = Block::from_vec(8, 8, (0..64).map(|i| (i / 8) * 5 + 2).collect());
        let sum = |b: &Block| b.data.iter().map(|v| v.abs()).sum::<i32>();
        assert!(sum(&rbr_forward(&b, RbrMode::Vertical)) < sum(&b));
        let b = b.transpose();
        assert!(sum(&rbr_forward(&b, RbrMode::Horizontal)) < sum(&b));
    }

    #[test]
    fn selection_rules() {
        let intra = Prediction::Intra(IntraMode::Dc);
        assert_eq!(lossless_options(intra, true, 64, 32), vec![LosslessTx::IDTX4, LosslessTx::large(64, 32)]);
        assert_eq!(LosslessTx::large(64, 32), LosslessTx { kernel: LosslessKernel::Idtx, tb_w: 32, tb_h: 32 });
        assert_eq!(lossless_options(intra, false, 16, 16), vec![LosslessTx::WHT4]);
        assert_eq!(chroma_lossless_tx(LosslessTx::large(16, 16)), LosslessTx::IDTX4);

        // Intra without FSC and chroma spend no bits.
        let mut bank = ContextBank::new();
        let ctxs = LosslessContexts::new(&mut bank);
        let mut enc = Encoder::new();
        code_lossless_tx(&mut enc, &mut bank, &ctxs, intra, false, 16, 16, LosslessTx::WHT4).unwrap();
        assert_eq!(enc.cost_q9(), 0);
    }

    #[test]
    fn inter_large_size_implies_identity() {
        let mut bank = ContextBank::new();
        let ctxs = LosslessContexts::new(&mut bank);
        let mut enc = Encoder::with_trace();
        code_lossless_tx(&mut enc, &mut bank, &ctxs, Prediction::Inter, false, 16, 16, LosslessTx::large(16, 16)).unwrap();
        let t = enc.take_trace();
        assert_eq!(t.iter().map(|e| e.name).collect::<Vec<_>>(), vec!["lossless_tx_size"]);
    }

    #[test]
    fn signaling_round_trip() {
        let cases = [
            (Prediction::Intra(IntraMode::V), true, 16, 8),
            (Prediction::Intra(IntraMode::V), false, 16, 8),
            (Prediction::Inter, false, 32, 64),
            (Prediction::Inter, true, 4, 4),
        ];
        for (pred, fsc, m, n) in cases {
            for choice in lossless_options(pred, fsc, m, n) {
                let mut bank = ContextBank::new();
                let ctxs = LosslessContexts::new(&mut bank);
                let mut dbank = bank.clone();
                let mut enc = Encoder::new();
                code_lossless_tx(&mut enc, &mut bank, &ctxs, pred, fsc, m, n, choice).unwrap();
                let bytes = enc.finish();
                let mut dec = Decoder::new(&bytes).unwrap();
                let got = code_lossless_tx(&mut dec, &mut dbank, &ctxs, pred, fsc, m, n, LosslessTx::WHT4).unwrap();
                assert_eq!(got, choice);
            }
        }
    }

    proptest! {
        #[test]
        fn rbr_inverse_is_exact(
            w in prop::sample::select(vec![4usize, 8, 16, 32]),
            h in prop::sample::select(vec![4usize, 8, 16, 32]),
            data in prop::collection::vec(i16::MIN as i32..=i16::MAX as i32, 1024),
            vertical in any::<bool>(),
        ) {
            let b = Block::from_vec(w, h, data[..w * h].to_vec());
            let mode = if vertical { RbrMode::Vertical } else { RbrMode::Horizontal };
            prop_assert_eq!(rbr_inverse(&rbr_forward(&b, mode), mode), b);
        }

        #[test]
        fn lossless_kernels_are_exact(data in prop::collection::vec(-4096i32..4096, 16)) {
            let b = Block::from_vec(4, 4, data);
            for k in [LosslessKernel::Wht, LosslessKernel::Idtx] {
                prop_assert_eq!(lossless_inverse(&lossless_forward(&b, k).unwrap(), k).unwrap(), b.clone());
            }
        }
    }
}
