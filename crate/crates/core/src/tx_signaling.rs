//! Transform partitioning and transform-side syntax: partition types and
//! their signaling, mode-dependent intra transform sets (MDTX), size-mapped
//! inter sets, the DC-only restriction (DCTX) and the IST / CCTX elements.

use crate::chroma_xform::CctxMode;
use crate::entropy_core::{ContextBank, Family, SymbolCoder};
use crate::error::{Error, Result};
use crate::primary_xform::{resolve, TxType};
use crate::secondary_xform::{TxFamily, KERNELS_PER_SET};
use crate::types::{IntraMode, Plane, Prediction};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartitionType {
    None,
    Split,
    Horz,
    Vert,
    Horz4,
    Vert4,
    Horz5,
    Vert5,
}

impl PartitionType {
    pub const ALL: [PartitionType; 8] = [
        PartitionType::None,
        PartitionType::Split,
        PartitionType::Horz,
        PartitionType::Vert,
        PartitionType::Horz4,
        PartitionType::Vert4,
        PartitionType::Horz5,
        PartitionType::Vert5,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL.get(i).copied().ok_or_else(|| Error::param(format!("partition index {i} outside 0..8")))
    }

    pub fn name(self) -> &'static str {
        ["NONE", "SPLIT", "HORZ", "VERT", "HORZ4", "VERT4", "HORZ5", "VERT5"][self.index()]
    }
}

/// A transform block inside its coding block, in samples.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        Rect { x, y, w, h }
    }
}

fn valid_dim(d: usize) -> bool {
    matches!(d, 4 | 8 | 16 | 32 | 64)
}

/// Legal block shape: power-of-two sides from 4 to 64 with aspect at most 1:16.
pub fn valid_block_size(w: usize, h: usize) -> bool {
    valid_dim(w) && valid_dim(h) && w.max(h) <= 16 * w.min(h)
}

fn raw_layout(p: PartitionType, w: usize, h: usize) -> Vec<Rect> {
    use PartitionType::*;
    let (w2, h2, w4, h4) = (w / 2, h / 2, w / 4, h / 4);
    match p {
        None => vec![Rect::new(0, 0, w, h)],
        Split => vec![Rect::new(0, 0, w2, h2), Rect::new(w2, 0, w2, h2), Rect::new(0, h2, w2, h2), Rect::new(w2, h2, w2, h2)],
        Horz => vec![Rect::new(0, 0, w, h2), Rect::new(0, h2, w, h2)],
        Vert => vec![Rect::new(0, 0, w2, h), Rect::new(w2, 0, w2, h)],
        Horz4 => (0..4).map(|i| Rect::new(0, i * h4, w, h4)).collect(),
        Vert4 => (0..4).map(|i| Rect::new(i * w4, 0, w4, h)).collect(),
        Horz5 => vec![
            Rect::new(0, 0, w2, h4),
            Rect::new(w2, 0, w2, h4),
            Rect::new(0, h4, w, h2),
            Rect::new(0, h4 + h2, w2, h4),
            Rect::new(w2, h4 + h2, w2, h4),
        ],
        Vert5 => vec![
            Rect::new(0, 0, w4, h2),
            Rect::new(0, h2, w4, h2),
            Rect::new(w4, 0, w2, h),
            Rect::new(w4 + w2, 0, w4, h2),
            Rect::new(w4 + w2, h2, w4, h2),
        ],
    }
}

fn layout_ok(p: PartitionType, w: usize, h: usize) -> bool {
    raw_layout(p, w, h).iter().all(|r| valid_block_size(r.w, r.h))
}

/// Transform blocks of a partition, in coding order.
pub fn partition_layout(p: PartitionType, w: usize, h: usize) -> Result<Vec<Rect>> {
    if !valid_block_size(w, h) {
        return Err(Error::param(format!("unsupported coding block {w}x{h}")));
    }
    if !layout_ok(p, w, h) {
        return Err(Error::param(format!("{} is not allowed for {w}x{h}", p.name())));
    }
    Ok(raw_layout(p, w, h))
}

pub fn allowed_partitions(w: usize, h: usize) -> Vec<PartitionType> {
    if !valid_block_size(w, h) {
        return vec![];
    }
    PartitionType::ALL.into_iter().filter(|&p| layout_ok(p, w, h)).collect()
}

const SPLIT7: [PartitionType; 7] = [
    PartitionType::Split,
    PartitionType::Horz,
    PartitionType::Vert,
    PartitionType::Horz4,
    PartitionType::Vert4,
    PartitionType::Horz5,
    PartitionType::Vert5,
];
const HORZ_WAYS: [PartitionType; 3] = [PartitionType::Horz, PartitionType::Horz4, PartitionType::Horz5];
const VERT_WAYS: [PartitionType; 3] = [PartitionType::Vert, PartitionType::Vert4, PartitionType::Vert5];

/// Context group for size-dependent elements: log2 of the area, bucketed.
fn size_ctx(w: usize, h: usize) -> usize {
    ((w * h).trailing_zeros() as usize).saturating_sub(4).div_ceil(2).min(4)
}

pub const TX_SIZE_GROUPS: usize = 3;
pub const MDTX_CLASSES: usize = TX_SIZE_GROUPS * 13;
pub const MDTX_SET_SIZE: usize = 7;

/// Contexts owned by transform-side syntax.
#[derive(Clone, Debug)]
pub struct SignalingContexts {
    do_partition: Family,
    partition7: Family,
    partition2: Family,
    partition3: Family,
    intra_tx: Family,
    inter_tx16: Family,
    inter_tx12: Family,
    inter_tx2: Family,
    ist_kernel: Family,
    ist_set_dct: Family,
    ist_set_adst: Family,
    cctx: Family,
    fsc: Family,
}

impl SignalingContexts {
    pub fn new(bank: &mut ContextBank) -> Self {
        SignalingContexts {
            do_partition: bank.add_family("do_partition", 5, 2),
            partition7: bank.add_family("txfm_4way_partition_type", 5, 7),
            partition2: bank.add_family("txfm_2or3_way_partition_type", 5, 2),
            partition3: bank.add_family("txfm_2or3_way_partition_type", 5, 3),
            intra_tx: bank.add_family("intra_tx_type", MDTX_CLASSES, MDTX_SET_SIZE),
            inter_tx16: bank.add_family("inter_tx_type", 2, 16),
            inter_tx12: bank.add_family("inter_tx_type", 1, 12),
            inter_tx2: bank.add_family("inter_tx_type", 1, 2),
            ist_kernel: bank.add_family("ist_kernel", 2, KERNELS_PER_SET + 1),
            ist_set_dct: bank.add_family("ist_set", 1, TxFamily::Dct.set_count()),
            ist_set_adst: bank.add_family("ist_set", 1, TxFamily::Adst.set_count()),
            cctx: bank.add_family("cctx_type", 3, CctxMode::COUNT),
            fsc: bank.add_family("fsc_flag", 2, 2),
        }
    }
}

/// Partition syntax: `do_partition`, then either the 7-way type (both
/// directions allowed) or the 2-or-3-way choice along the one allowed axis.
pub fn code_partition<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &SignalingContexts,
    w: usize,
    h: usize,
    p: PartitionType,
) -> Result<PartitionType> {
    let allowed = allowed_partitions(w, h);
    if c.is_encoder() && !allowed.contains(&p) {
        return Err(Error::param(format!("{} is not allowed for {w}x{h}", p.name())));
    }
    let horz = allowed.contains(&PartitionType::Horz);
    let vert = allowed.contains(&PartitionType::Vert);
    if !horz && !vert {
        return Ok(PartitionType::None);
    }
    let sc = size_ctx(w, h);
    let split = c.symbol(bank, ctxs.do_partition.ctx(sc), (p != PartitionType::None) as usize)?;
    if split == 0 {
        return Ok(PartitionType::None);
    }
    let decoded = if horz && vert {
        let idx = SPLIT7.iter().position(|&q| q == p).unwrap_or(0);
        SPLIT7[c.symbol(bank, ctxs.partition7.ctx(sc), idx)?]
    } else {
        let ways: Vec<PartitionType> =
            (if horz { HORZ_WAYS } else { VERT_WAYS }).into_iter().filter(|q| allowed.contains(q)).collect();
        let idx = ways.iter().position(|&q| q == p).unwrap_or(0);
        match ways.len() {
            1 => ways[0],
            2 => ways[c.symbol(bank, ctxs.partition2.ctx(sc), idx)?],
            _ => ways[c.symbol(bank, ctxs.partition3.ctx(sc), idx)?],
        }
    };
    if !allowed.contains(&decoded) {
        return Err(Error::conformance(format!("partition {} decoded for {w}x{h}", decoded.name())));
    }
    Ok(decoded)
}

/// Size group for transform sets, or `None` when only DCT_DCT applies.
pub fn size_group(w: usize, h: usize) -> Option<usize> {
    if w.max(h) >= 32 {
        return None;
    }
    match w.min(h) {
        4 => Some(0),
        8 => Some(1),
        16 => Some(2),
        _ => None,
    }
}

pub fn mdtx_class(mode: IntraMode, w: usize, h: usize) -> Option<usize> {
    size_group(w, h).map(|g| g * 13 + mode.index())
}

/// Extra candidates per intra mode, beyond DCT_DCT and ADST_ADST. Directional
/// modes favour the ADST or FLIPADST axis that matches the prediction edge
/// and the 1D transform along it; smooth modes mix DCT and ADST.
const MDTX_EXTRA: [[u8; 5]; 13] = [
    [1, 2, 9, 10, 11],  // DC
    [1, 4, 10, 12, 9],  // V
    [2, 5, 11, 13, 9],  // H
    [1, 2, 8, 9, 10],   // D45
    [1, 2, 9, 10, 11],  // D135
    [1, 2, 4, 10, 12],  // D113
    [1, 2, 5, 11, 13],  // D157
    [2, 5, 8, 11, 13],  // D203
    [1, 4, 8, 10, 12],  // D67
    [1, 2, 9, 10, 11],  // SMOOTH
    [1, 2, 4, 10, 12],  // SMOOTH_V
    [1, 2, 5, 11, 13],  // SMOOTH_H
    [1, 2, 9, 10, 11],  // PAETH
];

/// The 16x16 group swaps the 1D ADST types for 2D flipped variants.
fn group_entry(group: usize, id: u8) -> u8 {
    match (group, id) {
        (2, 12 | 14) => 6,
        (2, 13 | 15) => 7,
        _ => id,
    }
}

pub fn mdtx_set(m: usize) -> Result<[TxType; MDTX_SET_SIZE]> {
    if m >= MDTX_CLASSES {
        return Err(Error::param(format!("MDTX class {m} outside 0..39")));
    }
    let (group, mode) = (m / 13, m % 13);
    let mut set = [TxType::DCT_DCT; MDTX_SET_SIZE];
    set[1] = TxType::ADST_ADST;
    for (slot, &id) in set[2..].iter_mut().zip(&MDTX_EXTRA[mode]) {
        *slot = TxType::from_id(group_entry(group, id))?;
    }
    Ok(set)
}

/// The full 39 x 7 table as transform ids.
pub fn mdtx_table() -> Vec<[u8; MDTX_SET_SIZE]> {
    (0..MDTX_CLASSES).map(|m| mdtx_set(m).expect("class in range").map(TxType::id)).collect()
}

/// Inter transform sets by TB size.
pub fn inter_tx_set(w: usize, h: usize) -> Vec<TxType> {
    let ids: Vec<u8> = match (w.min(h), w.max(h)) {
        (_, 64) => vec![0],
        (_, 32) => vec![0, 9],
        (16, _) => (0..12).collect(),
        _ => (0..16).collect(),
    };
    ids.into_iter().map(|i| TxType::from_id(i).expect("ids below 16")).collect()
}

/// Candidate luma types for a TB. FSC blocks and lossless blocks are handled
/// by their own tools and never reach this.
pub fn tx_candidates(pred: Prediction, w: usize, h: usize) -> Vec<TxType> {
    match pred {
        Prediction::Intra(mode) => match mdtx_class(mode, w, h) {
            Some(m) => mdtx_set(m).expect("class in range").to_vec(),
            None => vec![TxType::DCT_DCT],
        },
        Prediction::Inter => inter_tx_set(w, h),
    }
}

/// Transform type of a chroma TB: DCT_DCT for intra, the colocated luma type
/// for inter when it is usable at the chroma size.
pub fn chroma_tx_type(pred: Prediction, luma: TxType, w: usize, h: usize) -> TxType {
    let usable = |t: TxType| resolve(t.vertical(), h, true).is_ok() && resolve(t.horizontal(), w, true).is_ok();
    match pred {
        Prediction::Inter if usable(luma) => luma,
        _ => TxType::DCT_DCT,
    }
}

/// What the transform-type element needs to know about a TB.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TxSite {
    pub plane: Plane,
    pub pred: Prediction,
    pub width: usize,
    pub height: usize,
    pub eob: usize,
}

/// Luma transform type. Nothing is coded for DC-only blocks (inferred
/// DCT_DCT), for chroma, or when the candidate set has one entry.
pub fn code_tx_type<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &SignalingContexts,
    site: &TxSite,
    tx: TxType,
) -> Result<TxType> {
    if !site.plane.is_luma() || site.eob <= 1 {
        return Ok(TxType::DCT_DCT);
    }
    let set = tx_candidates(site.pred, site.width, site.height);
    if set.len() == 1 {
        return Ok(set[0]);
    }
    let idx = if c.is_encoder() {
        set.iter()
            .position(|&t| t == tx)
            .ok_or_else(|| Error::param(format!("{tx} is not in the transform set of this block")))?
    } else {
        0
    };
    let ctx = match (site.pred, set.len()) {
        (Prediction::Intra(mode), _) => ctxs.intra_tx.ctx(mdtx_class(mode, site.width, site.height).expect("set has 7 entries")),
        (Prediction::Inter, 16) => ctxs.inter_tx16.ctx((site.width.min(site.height) == 8) as usize),
        (Prediction::Inter, 12) => ctxs.inter_tx12.ctx(0),
        (Prediction::Inter, _) => ctxs.inter_tx2.ctx(0),
    };
    let s = c.symbol(bank, ctx, idx)?;
    set.get(s).copied().ok_or_else(|| Error::conformance(format!("transform index {s} outside set")))
}

/// Secondary-transform choice for a TB: the family, set within the family
/// and kernel index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct IstChoice {
    pub family: TxFamily,
    pub set: usize,
    pub kernel: usize,
}

/// IST syntax: a kernel symbol (0 = off), then the set symbol for intra
/// blocks. Inter blocks always use set 0. Skipped for DC-only blocks.
pub fn code_ist<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &SignalingContexts,
    family: Option<TxFamily>,
    intra: bool,
    eob: usize,
    choice: Option<IstChoice>,
) -> Result<Option<IstChoice>> {
    let Some(family) = family else { return Ok(None) };
    if eob <= 1 {
        return Ok(None);
    }
    if let Some(ch) = choice {
        if ch.family != family || ch.set >= family.set_count() || ch.kernel >= KERNELS_PER_SET || (!intra && ch.set != 0)
        {
            return Err(Error::param(format!("IST choice {ch:?} does not fit this block")));
        }
    }
    let k = c.symbol(bank, ctxs.ist_kernel.ctx(intra as usize), choice.map_or(0, |ch| ch.kernel + 1))?;
    if k == 0 {
        return Ok(None);
    }
    let set = if intra {
        let fam = match family {
            TxFamily::Dct => &ctxs.ist_set_dct,
            TxFamily::Adst => &ctxs.ist_set_adst,
        };
        c.symbol(bank, fam.ctx(0), choice.map_or(0, |ch| ch.set))?
    } else {
        0
    };
    Ok(Some(IstChoice { family, set, kernel: k - 1 }))
}

/// CCTX mode for a chroma TB pair. Inferred as identity when both planes are
/// DC-only or the first plane has no coefficients.
pub fn code_cctx<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &SignalingContexts,
    eob_u: usize,
    eob_v: usize,
    w: usize,
    h: usize,
    mode: CctxMode,
) -> Result<CctxMode> {
    if eob_u == 0 || (eob_u <= 1 && eob_v <= 1) {
        return Ok(CctxMode::IDENTITY);
    }
    let ctx = ctxs.cctx.ctx(size_ctx(w, h).min(2));
    CctxMode::new(c.symbol(bank, ctx, mode.index() as usize)? as u8)
}

/// Whether a mode can be signaled given the coded chroma outcome.
pub fn cctx_signalable(eob_u: usize, eob_v: usize, mode: CctxMode) -> bool {
    mode == CctxMode::IDENTITY || !(eob_u == 0 || (eob_u <= 1 && eob_v <= 1))
}

/// CB-level forward-skip flag, coded for intra blocks up to 32x32.
pub fn fsc_allowed(pred: Prediction, w: usize, h: usize) -> bool {
    pred.is_intra() && w.max(h) <= 32
}

pub fn code_fsc_flag<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &SignalingContexts,
    pred: Prediction,
    w: usize,
    h: usize,
    on: bool,
) -> Result<bool> {
    if !fsc_allowed(pred, w, h) {
        return Ok(false);
    }
    Ok(c.symbol(bank, ctxs.fsc.ctx((w.max(h) > 8) as usize), on as usize)? == 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy_core::{Decoder, Encoder};
    use proptest::prelude::*;

    const DIMS: [usize; 5] = [4, 8, 16, 32, 64];

    fn all_sizes() -> impl Iterator<Item = (usize, usize)> {
        DIMS.iter().flat_map(|&w| DIMS.iter().map(move |&h| (w, h))).filter(|&(w, h)| valid_block_size(w, h))
    }

    #[test]
    fn layouts_tile() {
        for (w, h) in all_sizes() {
            for p in allowed_partitions(w, h) {
                let rects = partition_layout(p, w, h).unwrap();
                let mut cover = vec![0u8; w * h];
                for r in &rects {
                    for y in r.y..r.y + r.h {
                        for x in r.x..r.x + r.w {
                            cover[y * w + x] += 1;
                        }
                    }
                }
                assert!(cover.iter().all(|&c| c == 1), "{} {w}x{h}", p.name());
            }
        }
    }

    #[test]
    fn layout_examples() {
        let dims = |p, w, h| partition_layout(p, w, h).unwrap().iter().map(|r| (r.w, r.h)).collect::<Vec<_>>();
        assert_eq!(dims(PartitionType::Horz5, 64, 64), vec![(32, 16), (32, 16), (64, 32), (32, 16), (32, 16)]);
        assert_eq!(dims(PartitionType::None, 16, 8), vec![(16, 8)]);
        assert_eq!(dims(PartitionType::Vert4, 32, 16), vec![(8, 16); 4]);
        assert_eq!(dims(PartitionType::Vert5, 64, 64), vec![(16, 32), (16, 32), (32, 64), (16, 32), (16, 32)]);
    }

    #[test]
    fn allowed_sets() {
        assert_eq!(allowed_partitions(4, 4), vec![PartitionType::None]);
        assert_eq!(allowed_partitions(64, 64), PartitionType::ALL.to_vec());
        let a = allowed_partitions(8, 32);
        assert!(a.contains(&PartitionType::Horz4));
        assert!(!a.contains(&PartitionType::Vert4));
        assert!(partition_layout(PartitionType::Vert4, 8, 32).is_err());
    }

    #[test]
    fn partition_round_trip_all() {
        let mut bank = ContextBank::new();
        let ctxs = SignalingContexts::new(&mut bank);
        let mut dec_bank = bank.clone();
        let mut enc = Encoder::new();
        let mut seq = Vec::new();
        for (w, h) in all_sizes() {
            for p in allowed_partitions(w, h) {
                assert_eq!(code_partition(&mut enc, &mut bank, &ctxs, w, h, p).unwrap(), p);
                seq.push((w, h, p));
            }
        }
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes).unwrap();
        for (w, h, p) in seq {
            assert_eq!(code_partition(&mut dec, &mut dec_bank, &ctxs, w, h, PartitionType::None).unwrap(), p);
        }
        assert_eq!(bank.digest(), dec_bank.digest());
    }

    #[test]
    fn none_is_one_symbol() {
        let mut bank = ContextBank::new();
        let ctxs = SignalingContexts::new(&mut bank);
        let mut enc = Encoder::with_trace();
        code_partition(&mut enc, &mut bank, &ctxs, 16, 16, PartitionType::None).unwrap();
        assert_eq!(enc.trace().unwrap().len(), 1);
        code_partition(&mut enc, &mut bank, &ctxs, 64, 64, PartitionType::Split).unwrap();
        let names: Vec<_> = enc.trace().unwrap()[1..].iter().map(|t| (t.name, t.symbol)).collect();
        assert_eq!(names, vec![("do_partition", 1), ("txfm_4way_partition_type", 0)]);
        code_partition(&mut enc, &mut bank, &ctxs, 4, 4, PartitionType::None).unwrap();
        assert_eq!(enc.trace().unwrap().len(), 3);
    }

    #[test]
    fn mdtx_shape() {
        let t = mdtx_table();
        assert_eq!(t.len(), 39);
        for row in &t {
            assert!(row.contains(&0) && row.contains(&3));
            let mut r = row.to_vec();
            r.sort();
            r.dedup();
            assert_eq!(r.len(), 7);
        }
        assert_eq!(mdtx_class(IntraMode::V, 8, 8), Some(13 + 1));
        assert_eq!(mdtx_class(IntraMode::Paeth, 32, 32), None);
        assert_eq!(tx_candidates(Prediction::Intra(IntraMode::Dc), 64, 16), vec![TxType::DCT_DCT]);
        let set = mdtx_set(mdtx_class(IntraMode::V, 8, 8).unwrap()).unwrap();
        assert_eq!(set.iter().position(|&t| t == TxType::ADST_ADST), Some(1));
    }

    #[test]
    fn mdtx_types_are_usable_at_their_sizes() {
        for (w, h) in all_sizes() {
            for mode in IntraMode::ALL {
                for t in tx_candidates(Prediction::Intra(mode), w, h) {
                    assert!(resolve(t.vertical(), h, false).is_ok() && resolve(t.horizontal(), w, false).is_ok());
                }
            }
            for t in inter_tx_set(w, h) {
                assert!(resolve(t.vertical(), h, true).is_ok() && resolve(t.horizontal(), w, true).is_ok());
            }
        }
    }

    #[test]
    fn inter_sets() {
        assert_eq!(inter_tx_set(16, 16).len(), 12);
        assert_eq!(inter_tx_set(4, 16).len(), 16);
        assert_eq!(inter_tx_set(32, 8).len(), 2);
        assert_eq!(inter_tx_set(64, 16).len(), 1);
    }

    #[test]
    fn dc_only_costs_nothing() {
        let mut bank = ContextBank::new();
        let ctxs = SignalingContexts::new(&mut bank);
        let mut enc = Encoder::with_trace();
        for pred in [Prediction::Intra(IntraMode::D45), Prediction::Inter] {
            let site = TxSite { plane: Plane::Y, pred, width: 8, height: 8, eob: 1 };
            assert_eq!(code_tx_type(&mut enc, &mut bank, &ctxs, &site, TxType::DCT_DCT).unwrap(), TxType::DCT_DCT);
            let fam = Some(TxFamily::Dct);
            assert_eq!(code_ist(&mut enc, &mut bank, &ctxs, fam, pred.is_intra(), 1, None).unwrap(), None);
        }
        let m = CctxMode::new(2).unwrap();
        assert_eq!(code_cctx(&mut enc, &mut bank, &ctxs, 1, 1, 8, 8, m).unwrap(), CctxMode::IDENTITY);
        assert!(enc.trace().unwrap().is_empty());
        assert_eq!(enc.cost_q9(), 0);
    }

    #[test]
    fn chroma_types() {
        assert_eq!(chroma_tx_type(Prediction::Intra(IntraMode::V), TxType::ADST_DCT, 8, 8), TxType::DCT_DCT);
        assert_eq!(chroma_tx_type(Prediction::Inter, TxType::ADST_DCT, 8, 8), TxType::ADST_DCT);
        assert_eq!(chroma_tx_type(Prediction::Inter, TxType::ADST_DCT, 32, 32), TxType::DCT_DCT);
    }

    fn arb_site() -> impl Strategy<Value = (TxSite, usize)> {
        let dims = prop::sample::select(vec![4usize, 8, 16, 32, 64]);
        (dims.clone(), dims, 0usize..14, 1usize..20, any::<usize>())
            .prop_filter("legal", |(w, h, ..)| valid_block_size(*w, *h))
            .prop_map(|(w, h, m, eob, pick)| {
                let pred = if m == 13 { Prediction::Inter } else { Prediction::Intra(IntraMode::ALL[m]) };
                (TxSite { plane: Plane::Y, pred, width: w, height: h, eob }, pick)
            })
    }

    proptest! {
        #[test]
        fn tx_syntax_round_trip(sites in prop::collection::vec(arb_site(), 1..40), kern in 0usize..4, set in 0usize..12) {
            let mut bank = ContextBank::new();
            let ctxs = SignalingContexts::new(&mut bank);
            let mut dbank = bank.clone();
            let mut enc = Encoder::new();
            let mut expect = Vec::new();
            for (site, pick) in &sites {
                let cands = tx_candidates(site.pred, site.width, site.height);
                let tx = if site.eob > 1 { cands[pick % cands.len()] } else { TxType::DCT_DCT };
                let got = code_tx_type(&mut enc, &mut bank, &ctxs, site, tx).unwrap();
                prop_assert_eq!(got, tx);
                let intra = site.pred.is_intra();
                let fam = crate::secondary_xform::ist_eligibility(Plane::Y, intra, tx);
                let ch = fam.filter(|_| kern > 0).map(|f| IstChoice { family: f, set: if intra { set % f.set_count() } else { 0 }, kernel: kern - 1 });
                let ist = code_ist(&mut enc, &mut bank, &ctxs, fam, intra, site.eob, ch).unwrap();
                expect.push((tx, ist));
            }
            let bytes = enc.finish();
            let mut dec = Decoder::new(&bytes).unwrap();
            for ((site, _), (tx, ist)) in sites.iter().zip(expect) {
                let t = code_tx_type(&mut dec, &mut dbank, &ctxs, site, TxType::DCT_DCT).unwrap();
                prop_assert_eq!(t, tx);
                let fam = crate::secondary_xform::ist_eligibility(Plane::Y, site.pred.is_intra(), t);
                prop_assert_eq!(code_ist(&mut dec, &mut dbank, &ctxs, fam, site.pred.is_intra(), site.eob, None).unwrap(), ist);
            }
            prop_assert_eq!(bank.digest(), dbank.digest());
        }
    }
}
