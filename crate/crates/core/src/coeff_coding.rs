//! Coefficient coding.
//!
//! Levels of a transform block are coded as
//!
//! 1. `all_zero`, then the end-of-block position (or, for forward skip
//!    coding, the beginning-of-block position);
//! 2. a reverse-scan pass carrying, per coefficient, a base-range (BR)
//!    symbol and, when it escapes, one low-range (LR) symbol;
//! 3. a forward pass carrying the high-range (HR) remainder with an
//!    adaptive truncated Rice code, and the sign.
//!
//! Positions are split into a low-frequency (LF) and a default region with
//! different alphabets: LF BR covers `0..=4` plus an escape and LF LR adds
//! `5, 6, 7`; default BR covers `0..=2` and LR `3, 4, 5`. The combined
//! BR+LR value `p` saturates at `cap` (8 in LF, 6 in default), where HR
//! takes over.
//!
//! Under TCQ the two highest `p` values both escape so that `p` keeps the
//! level parity, and HR is counted in steps of two. Under parity hiding the
//! DC magnitude is coded halved and its low bit is inferred from the sum of
//! the AC `p` values.

use crate::entropy_core::{symbol_cost_q9, ContextBank, CtxId, Family, SymbolCoder};
use crate::error::{Error, Result};
use crate::primary_xform::TxType;
use crate::quantizer::MAX_LEVEL;
use crate::trellis_quant::{Quantizer, RateModel, TcqTable, RESET_STATE};
use crate::types::{up_right_diagonal, Block, Plane};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanClass {
    /// Up-right diagonal, every 2D type including IDTX.
    Diag,
    /// Raster rows, for vertical 1D types.
    Row,
    /// Raster columns, for horizontal 1D types.
    Col,
}

impl ScanClass {
    pub fn for_tx(tx: TxType) -> Self {
        if !tx.is_1d() {
            ScanClass::Diag
        } else if tx.is_vertical_1d() {
            ScanClass::Row
        } else {
            ScanClass::Col
        }
    }

    pub fn is_2d(self) -> bool {
        self == ScanClass::Diag
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScanPlan {
    pub class: ScanClass,
    pub width: usize,
    pub height: usize,
    order: Vec<(usize, usize)>,
}

impl ScanPlan {
    pub fn new(width: usize, height: usize, class: ScanClass) -> Self {
        let order = match class {
            ScanClass::Diag => up_right_diagonal(width, height),
            ScanClass::Row => (0..height).flat_map(|r| (0..width).map(move |c| (r, c))).collect(),
            ScanClass::Col => (0..width).flat_map(|c| (0..height).map(move |r| (r, c))).collect(),
        };
        ScanPlan { class, width, height, order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn pos(&self, i: usize) -> (usize, usize) {
        self.order[i]
    }

    pub fn order(&self) -> &[(usize, usize)] {
        &self.order
    }

    /// Block values in scan order.
    pub fn gather(&self, b: &Block) -> Vec<i32> {
        self.order.iter().map(|&(r, c)| b.get(r, c)).collect()
    }

    pub fn scatter(&self, v: &[i32]) -> Block {
        let mut b = Block::new(self.width, self.height);
        for (&(r, c), &x) in self.order.iter().zip(v) {
            b.set(r, c, x);
        }
        b
    }

    /// End of block: one past the last nonzero scan position.
    pub fn eob(&self, b: &Block) -> usize {
        self.order.iter().rposition(|&(r, c)| b.get(r, c) != 0).map_or(0, |i| i + 1)
    }

    /// Beginning of block: the first nonzero scan position.
    pub fn bob(&self, b: &Block) -> Option<usize> {
        self.order.iter().position(|&(r, c)| b.get(r, c) != 0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    Lf,
    Default,
}

pub fn region(plane: Plane, class: ScanClass, r: usize, c: usize) -> Region {
    let lf = match (plane.is_luma(), class) {
        (true, ScanClass::Diag) => r + c < 4,
        (false, ScanClass::Diag) => r == 0 && c == 0,
        (true, ScanClass::Row) => r < 2,
        (true, ScanClass::Col) => c < 2,
        (false, ScanClass::Row) => r == 0,
        (false, ScanClass::Col) => c == 0,
    };
    if lf {
        Region::Lf
    } else {
        Region::Default
    }
}

/// BR escape symbol (also the number of plain BR values) per region.
pub fn br_escape(region: Region) -> u32 {
    match region {
        Region::Lf => 5,
        Region::Default => 3,
    }
}

/// Saturation point of the combined BR+LR value.
pub fn level_cap(region: Region) -> u32 {
    br_escape(region) + 3
}

/// `(sum + 1) >> 1` over neighbour levels.
pub fn nstats(levels: &[u32]) -> u32 {
    (levels.iter().sum::<u32>() + 1) >> 1
}

/// Neighbour offsets `(dr, dc)` for context derivation; all of them are coded
/// before the current position in reverse scan.
pub fn neighbours(plane: Plane, class: ScanClass) -> &'static [(usize, usize)] {
    match (plane.is_luma(), class) {
        (true, ScanClass::Diag) => &[(0, 1), (0, 2), (1, 0), (2, 0), (1, 1)],
        (true, ScanClass::Row) => &[(1, 0), (0, 1), (2, 0), (3, 0), (4, 0)],
        (true, ScanClass::Col) => &[(0, 1), (1, 0), (0, 2), (0, 3), (0, 4)],
        (false, ScanClass::Diag) => &[(0, 1), (1, 0), (1, 1)],
        (false, _) => &[(1, 0), (0, 1)],
    }
}

/// Base-range context within the family of the plane and region.
pub fn br_context(plane: Plane, region: Region, class: ScanClass, r: usize, c: usize, ns: u32) -> usize {
    let ns = ns as usize;
    let along = match class {
        ScanClass::Col => c,
        _ => r,
    };
    if plane.is_luma() {
        match (region, class.is_2d()) {
            (Region::Lf, true) if r + c == 0 => ns.min(8),
            (Region::Lf, true) if r + c < 2 => ns.min(6) + 9,
            (Region::Lf, true) => ns.min(4) + 16,
            (Region::Lf, false) if along == 0 => ns.min(6) + 21,
            (Region::Lf, false) => ns.min(4) + 28,
            (Region::Default, true) if r + c < 6 => ns.min(4),
            (Region::Default, true) if r + c < 8 => ns.min(4) + 5,
            (Region::Default, true) => ns.min(4) + 10,
            (Region::Default, false) => ns.min(4) + 15,
        }
    } else {
        let v_off = if plane == Plane::V { 4 } else { 0 };
        match (region, class.is_2d()) {
            (Region::Lf, false) => ns.min(3) + 8,
            _ => ns.min(3) + v_off,
        }
    }
}

/// Low-range context; `dc` is scan position 0.
pub fn lr_context(plane: Plane, region: Region, dc: bool, ns: u32) -> usize {
    let ns = ns as usize;
    match (plane.is_luma(), region) {
        (true, Region::Lf) => ns.min(6) + if dc { 0 } else { 7 },
        (false, Region::Lf) => ns.min(3) + if dc { 0 } else { 4 },
        (true, Region::Default) => ns.min(6),
        (false, Region::Default) => ns.min(3),
    }
}

/// Rice parameter from the running HR statistic.
pub fn rice_param(ctx: u32) -> u32 {
    match ctx {
        0..4 => 1,
        4..8 => 2,
        8..16 => 3,
        16..32 => 4,
        32..64 => 5,
        _ => 6,
    }
}

pub fn hr_ctx_update(ctx: u32, hr: u32) -> u32 {
    ((ctx as u64 + hr as u64) >> 1) as u32
}

fn rice_cmax(m: u32) -> u32 {
    (m + 4).min(6)
}

/// Truncated Rice codeword of `value` with parameter `m`, as bits.
pub fn tr_bits(value: u32, m: u32) -> Vec<bool> {
    let cmax = rice_cmax(m);
    let q = (value >> m).min(cmax);
    let mut bits = vec![true; q as usize];
    if q < cmax {
        bits.push(false);
        bits.extend((0..m).rev().map(|i| (value >> i) & 1 == 1));
    } else {
        let mut x = value as u64 - ((cmax as u64) << m);
        let mut k = m + 1;
        while x >= 1 << k {
            bits.push(true);
            x -= 1 << k;
            k += 1;
        }
        bits.push(false);
        bits.extend((0..k).rev().map(|i| (x >> i) & 1 == 1));
    }
    bits
}

pub fn tr_len(value: u32, m: u32) -> u32 {
    let cmax = rice_cmax(m);
    let q = (value >> m).min(cmax);
    if q < cmax {
        return q + 1 + m;
    }
    let mut x = value as u64 - ((cmax as u64) << m);
    let mut k = m + 1;
    let mut n = q;
    while x >= 1 << k {
        n += 1;
        x -= 1 << k;
        k += 1;
    }
    n + 1 + k
}

pub fn tr_encode<C: SymbolCoder>(c: &mut C, value: u32, m: u32) -> Result<()> {
    for b in tr_bits(value, m) {
        c.literal("coeff_hr", b as u32, 1)?;
    }
    Ok(())
}

pub fn tr_decode<C: SymbolCoder>(c: &mut C, m: u32) -> Result<u32> {
    let cmax = rice_cmax(m);
    let mut q = 0;
    while q < cmax && c.literal("coeff_hr", 0, 1)? == 1 {
        q += 1;
    }
    if q < cmax {
        let rem = c.literal("coeff_hr", 0, m)?;
        return Ok((q << m) | rem);
    }
    let mut k = m + 1;
    let mut base: u64 = 0;
    while c.literal("coeff_hr", 0, 1)? == 1 {
        base += 1 << k;
        k += 1;
        if k > 40 {
            return Err(Error::conformance("Exp-Golomb prefix too long"));
        }
    }
    let mut x: u64 = 0;
    for _ in 0..k {
        x = (x << 1) | c.literal("coeff_hr", 0, 1)? as u64;
    }
    let v = ((cmax as u64) << m) + base + x;
    u32::try_from(v).map_err(|_| Error::conformance("HR value overflows"))
}

/// Code one HR value with either direction of coder.
fn code_hr<C: SymbolCoder>(c: &mut C, value: u32, m: u32) -> Result<u32> {
    if c.is_encoder() {
        tr_encode(c, value, m)?;
        Ok(value)
    } else {
        tr_decode(c, m)
    }
}

/// Position classes for EOB/BOB: class `j` covers `[2^j, 2^(j+1))` with `j`
/// extra bits.
pub fn position_class(value: usize) -> (usize, u32, u32) {
    debug_assert!(value >= 1);
    let j = usize::BITS - 1 - value.leading_zeros();
    (j as usize, j, (value - (1 << j)) as u32)
}

pub fn position_classes(n: usize) -> usize {
    n.trailing_zeros() as usize + 1
}

/// Size index of a coded block for EOB families: 16..=1024 coefficients.
fn size_index(n: usize) -> usize {
    n.trailing_zeros() as usize - 4
}

const SIZE_BUCKETS: usize = 7;

/// TX-size offset for forward-skip level contexts.
pub fn fsc_size_offset(w: usize, h: usize) -> usize {
    match w.max(h) {
        0..=8 => 0,
        16 => 7,
        _ => 14,
    }
}

/// Sign contexts use banks of nine so the three size groups stay disjoint.
fn fsc_sign_offset(w: usize, h: usize) -> usize {
    fsc_size_offset(w, h) / 7 * 9
}

/// Forward-skip sign context from the neighbour sign sum and current level.
pub fn fsc_sign_context(s: i32, level: u32, size_offset: usize) -> usize {
    let delta = if level > 3 { 2 + size_offset } else { size_offset };
    match s {
        3.. => 5 + delta,
        ..=-3 => 6 + delta,
        1..=2 => 1 + delta,
        -2..=-1 => 2 + delta,
        0 => size_offset,
    }
}

pub const PH_MIN_AC: usize = 4;

#[derive(Clone, Debug)]
pub struct CoeffContexts {
    all_zero: Family,
    eob: Vec<Family>,
    bob: Vec<Family>,
    /// Luma BR per quantizer; scalar coding uses the Q0 set.
    br_luma_lf: [Family; 2],
    br_luma_def: [Family; 2],
    br_chroma_lf: Family,
    br_chroma_def: Family,
    base_eob_lf: Family,
    base_eob_def: Family,
    lr_luma_lf: Family,
    lr_luma_def: Family,
    lr_chroma_lf: Family,
    lr_chroma_def: Family,
    dc_sign: Family,
    ph_br: Family,
    ph_lr: Family,
    fsc_br: Family,
    fsc_lr: Family,
    fsc_sign: Family,
}

impl CoeffContexts {
    pub fn new(bank: &mut ContextBank) -> Self {
        let eob = (0..SIZE_BUCKETS).map(|i| bank.add_family("eob_class", 2, i + 5)).collect();
        let bob = (0..SIZE_BUCKETS).map(|i| bank.add_family("bob_class", 1, i + 5)).collect();
        CoeffContexts {
            all_zero: bank.add_family("all_zero", 10, 2),
            eob,
            bob,
            br_luma_lf: [bank.add_family("coeff_base", 33, 6), bank.add_family("coeff_base", 33, 6)],
            br_luma_def: [bank.add_family("coeff_base", 20, 4), bank.add_family("coeff_base", 20, 4)],
            br_chroma_lf: bank.add_family("coeff_base", 12, 6),
            br_chroma_def: bank.add_family("coeff_base", 8, 4),
            base_eob_lf: bank.add_family("coeff_base_eob", 2, 5),
            base_eob_def: bank.add_family("coeff_base_eob", 2, 3),
            lr_luma_lf: bank.add_family("coeff_br", 14, 4),
            lr_luma_def: bank.add_family("coeff_br", 7, 4),
            lr_chroma_lf: bank.add_family("coeff_br", 8, 4),
            lr_chroma_def: bank.add_family("coeff_br", 4, 4),
            dc_sign: bank.add_family("dc_sign", 2, 2),
            ph_br: bank.add_family("ph_base", 5, 6),
            ph_lr: bank.add_family("ph_br", 7, 4),
            fsc_br: bank.add_family("fsc_base", 21, 4),
            fsc_lr: bank.add_family("fsc_br", 21, 4),
            fsc_sign: bank.add_family("fsc_sign", 27, 2),
        }
    }

    fn br(&self, plane: Plane, region: Region, q: Quantizer) -> &Family {
        match (plane.is_luma(), region) {
            (true, Region::Lf) => &self.br_luma_lf[q.index()],
            (true, Region::Default) => &self.br_luma_def[q.index()],
            (false, Region::Lf) => &self.br_chroma_lf,
            (false, Region::Default) => &self.br_chroma_def,
        }
    }

    fn lr(&self, plane: Plane, region: Region) -> &Family {
        match (plane.is_luma(), region) {
            (true, Region::Lf) => &self.lr_luma_lf,
            (true, Region::Default) => &self.lr_luma_def,
            (false, Region::Lf) => &self.lr_chroma_lf,
            (false, Region::Default) => &self.lr_chroma_def,
        }
    }

    fn base_eob(&self, plane: Plane, region: Region) -> CtxId {
        let i = plane.is_luma() as usize;
        match region {
            Region::Lf => self.base_eob_lf.ctx(i),
            Region::Default => self.base_eob_def.ctx(i),
        }
    }
}

fn check_size(n: usize) -> Result<()> {
    if !(16..=1024).contains(&n) || !n.is_power_of_two() {
        return Err(Error::param(format!("coded block of {n} coefficients")));
    }
    Ok(())
}

fn all_zero_ctx(plane: Plane, n: usize) -> usize {
    (plane.is_luma() as usize) * 5 + ((n.trailing_zeros() as usize - 4) / 2).min(4)
}

/// The TB-level skip flag. Returns whether the block is all zero.
pub fn code_all_zero<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &CoeffContexts,
    plane: Plane,
    n: usize,
    zero: bool,
) -> Result<bool> {
    check_size(n)?;
    Ok(c.symbol(bank, ctxs.all_zero.ctx(all_zero_ctx(plane, n)), zero as usize)? == 1)
}

fn code_position<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    fam: &Family,
    ctx: usize,
    extra_name: &'static str,
    n: usize,
    value: usize,
) -> Result<usize> {
    if c.is_encoder() && !(1..=n).contains(&value) {
        return Err(Error::param(format!("position {value} outside 1..={n}")));
    }
    let (class, nbits, off) = if c.is_encoder() { position_class(value) } else { (0, 0, 0) };
    let class = c.symbol(bank, fam.ctx(ctx), class)?;
    let nbits = if c.is_encoder() { nbits } else { class as u32 };
    let off = c.literal(extra_name, off, nbits)?;
    let v = (1usize << class) + off as usize;
    if v > n {
        return Err(Error::conformance(format!("position {v} beyond block of {n}")));
    }
    Ok(v)
}

/// End-of-block position, `1..=n`.
pub fn code_eob<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &CoeffContexts,
    plane: Plane,
    n: usize,
    eob: usize,
) -> Result<usize> {
    check_size(n)?;
    let fam = ctxs.eob[size_index(n)];
    code_position(c, bank, &fam, plane.is_luma() as usize, "eob_extra", n, eob)
}

/// Beginning-of-block scan position, `0..n`; same layout as EOB, own contexts.
pub fn code_bob<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &CoeffContexts,
    n: usize,
    bob: usize,
) -> Result<usize> {
    check_size(n)?;
    let fam = ctxs.bob[size_index(n)];
    Ok(code_position(c, bank, &fam, 0, "bob_extra", n, bob + 1)? - 1)
}

/// Coded BR+LR value for a level.
pub fn pass1_value(level: u32, cap: u32, tcq: bool) -> u32 {
    if !tcq {
        level.min(cap)
    } else if level < cap - 1 {
        level
    } else {
        cap - 1 + ((level - (cap - 1)) & 1)
    }
}

fn has_hr(p: u32, cap: u32, tcq: bool) -> bool {
    if tcq {
        p >= cap - 1
    } else {
        p == cap
    }
}

fn hr_shift(tcq: bool) -> u32 {
    tcq as u32
}

/// One BR symbol and, on escape, one LR symbol. `nonzero` marks the EOB
/// coefficient, whose BR alphabet starts at 1.
fn code_p<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    br: CtxId,
    lr: CtxId,
    esc: u32,
    p: u32,
    nonzero: bool,
) -> Result<u32> {
    let s = if nonzero {
        c.symbol(bank, br, (p.min(esc) as usize).saturating_sub(1))? as u32 + 1
    } else {
        c.symbol(bank, br, p.min(esc) as usize)? as u32
    };
    if s < esc {
        return Ok(s);
    }
    Ok(esc + c.symbol(bank, lr, (p.saturating_sub(esc)).min(3) as usize)? as u32)
}

/// What a TB's level coding needs to know.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelSite {
    pub plane: Plane,
    pub tcq: bool,
    /// Parity hiding enabled and applicable to this TB.
    pub ph: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct LevelOutcome {
    /// DC parity was hidden.
    pub ph_used: bool,
}

fn neighbour_sum(pv: &[u32], w: usize, h: usize, r: usize, c: usize, offs: &[(usize, usize)]) -> u32 {
    offs.iter()
        .filter_map(|&(dr, dc)| {
            let (rr, cc) = (r + dr, c + dc);
            (rr < h && cc < w).then(|| pv[rr * w + cc])
        })
        .sum()
}

/// Parity of the AC `p` values and the count of nonzero ACs, over scan
/// positions `1..eob` of levels given in scan order.
pub fn ph_parity(levels_scan: &[i32], caps: &[u32], eob: usize) -> (usize, u32) {
    let mut n = 0;
    let mut sum = 0u32;
    for i in 1..eob.min(levels_scan.len()) {
        let l = levels_scan[i].unsigned_abs();
        if l > 0 {
            n += 1;
            sum = sum.wrapping_add(pass1_value(l, caps[i], false));
        }
    }
    (n, sum & 1)
}

/// Cap per scan position, for parity bookkeeping.
pub fn scan_caps(plane: Plane, scan: &ScanPlan) -> Vec<u32> {
    scan.order().iter().map(|&(r, c)| level_cap(region(plane, scan.class, r, c))).collect()
}

/// Reverse BR/LR pass and forward HR/sign pass for standard and TCQ coding.
/// The encoder reads `levels`; the decoder fills it.
#[allow(clippy::too_many_arguments)]
pub fn code_levels<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &CoeffContexts,
    site: &LevelSite,
    scan: &ScanPlan,
    eob: usize,
    table: &TcqTable,
    levels: &mut Block,
) -> Result<LevelOutcome> {
    let (w, h) = (scan.width, scan.height);
    let enc = c.is_encoder();
    if eob == 0 || eob > scan.len() {
        return Err(Error::param(format!("eob {eob} outside 1..={}", scan.len())));
    }
    if enc && levels.get(scan.pos(eob - 1).0, scan.pos(eob - 1).1) == 0 {
        return Err(Error::param("EOB coefficient is zero"));
    }
    let plane = site.plane;
    let tcq = site.tcq && scan.class.is_2d() && plane.is_luma();
    let offs = neighbours(plane, scan.class);
    let mut pv = vec![0u32; w * h];
    let mut dc_half = 0u32;
    let mut ph_used = false;
    let mut state = RESET_STATE;
    let mut ac_nonzero = 0usize;
    let mut ac_sum = 0u32;

    for i in (0..eob).rev() {
        let (r, col) = scan.pos(i);
        let reg = region(plane, scan.class, r, col);
        let cap = level_cap(reg);
        let esc = br_escape(reg);
        let level = levels.get(r, col).unsigned_abs();
        let sum = neighbour_sum(&pv, w, h, r, col, offs);
        let ns = nstats_from_sum(sum);
        if i == 0 && site.ph && ac_nonzero >= PH_MIN_AC {
            // Parity-hidden DC: code the halved magnitude with its own contexts.
            ph_used = true;
            if enc && level & 1 != ac_sum & 1 {
                return Err(Error::param("DC parity does not match the hidden parity"));
            }
            let v = level >> 1;
            let full = neighbour_sum(&pv, w, h, r, col, neighbours(Plane::Y, ScanClass::Diag));
            let lr3 = neighbour_sum(&pv, w, h, r, col, &[(0, 1), (1, 0), (1, 1)]);
            let br = ctxs.ph_br.ctx((((full + 1) >> 1) as usize).min(4));
            let lr = ctxs.ph_lr.ctx((((lr3 + 1) >> 1) as usize).min(6));
            let p = code_p(c, bank, br, lr, esc, pass1_value(v, cap, false), false)?;
            pv[r * w + col] = p;
            dc_half = p;
            continue;
        }
        let q = if tcq { table.quantizer_of(state) } else { Quantizer::Q0 };
        let p_enc = pass1_value(level, cap, tcq);
        let p = if i == eob - 1 {
            let br = ctxs.base_eob(plane, reg);
            let lr = ctxs.lr(plane, reg).ctx(lr_context(plane, reg, i == 0, ns));
            code_p(c, bank, br, lr, esc, p_enc, true)?
        } else {
            let br = ctxs.br(plane, reg, q).ctx(br_context(plane, reg, scan.class, r, col, ns));
            let lr = ctxs.lr(plane, reg).ctx(lr_context(plane, reg, i == 0, ns));
            code_p(c, bank, br, lr, esc, p_enc, false)?
        };
        pv[r * w + col] = p;
        if tcq {
            state = table.next_state(state, p);
        }
        if i > 0 && p > 0 {
            ac_nonzero += 1;
            ac_sum = ac_sum.wrapping_add(p);
        }
    }

    let mut rice_ctx = 0u32;
    for i in 0..eob {
        let (r, col) = scan.pos(i);
        let reg = region(plane, scan.class, r, col);
        let cap = level_cap(reg);
        let p = pv[r * w + col];
        let signed = levels.get(r, col);
        let level = signed.unsigned_abs();
        let mag = if i == 0 && ph_used {
            let v = if has_hr(p, cap, false) {
                let hr = code_hr(c, (level >> 1).saturating_sub(p), rice_param(rice_ctx))?;
                rice_ctx = hr_ctx_update(rice_ctx, hr);
                p as u64 + hr as u64
            } else {
                dc_half as u64
            };
            2 * v + (ac_sum & 1) as u64
        } else if has_hr(p, cap, tcq) {
            let hr = code_hr(c, (level.saturating_sub(p)) >> hr_shift(tcq), rice_param(rice_ctx))?;
            rice_ctx = hr_ctx_update(rice_ctx, hr);
            p as u64 + ((hr as u64) << hr_shift(tcq))
        } else {
            p as u64
        };
        if mag >= MAX_LEVEL as u64 {
            return Err(Error::conformance(format!("level {mag} exceeds the level range")));
        }
        if mag == 0 {
            continue;
        }
        let neg = if i == 0 {
            c.symbol(bank, ctxs.dc_sign.ctx(plane.is_luma() as usize), (signed < 0) as usize)? == 1
        } else {
            c.literal("sign", (signed < 0) as u32, 1)? == 1
        };
        let v = mag as i32;
        levels.set(r, col, if neg { -v } else { v });
    }
    Ok(LevelOutcome { ph_used })
}

fn nstats_from_sum(sum: u32) -> u32 {
    (sum + 1) >> 1
}

/// Forward skip coding of an IDTX block from `bob` up to `end` (exclusive):
/// forward BR pass, forward LR pass, then HR and context-coded signs.
#[allow(clippy::too_many_arguments)]
pub fn code_fsc_levels<C: SymbolCoder>(
    c: &mut C,
    bank: &mut ContextBank,
    ctxs: &CoeffContexts,
    scan: &ScanPlan,
    bob: usize,
    end: usize,
    levels: &mut Block,
) -> Result<()> {
    let (w, h) = (scan.width, scan.height);
    if bob >= end || end > scan.len() {
        return Err(Error::param(format!("forward-skip range {bob}..{end} invalid")));
    }
    let off = fsc_size_offset(w, h);
    let sign_off = fsc_sign_offset(w, h);
    let esc = br_escape(Region::Default);
    let cap = level_cap(Region::Default);
    let mut pv = vec![0u32; w * h];
    let left_top = |pv: &[u32], r: usize, col: usize| {
        let l = if col > 0 { pv[r * w + col - 1] } else { 0 };
        let t = if r > 0 { pv[(r - 1) * w + col] } else { 0 };
        ((l + t) as usize).min(6)
    };

    for i in bob..end {
        let (r, col) = scan.pos(i);
        let level = levels.get(r, col).unsigned_abs();
        let ctx = ctxs.fsc_br.ctx(left_top(&pv, r, col) + off);
        let s = c.symbol(bank, ctx, level.min(esc) as usize)? as u32;
        if i == bob && s == 0 {
            return Err(Error::conformance("first forward-skip coefficient is zero"));
        }
        pv[r * w + col] = s;
    }
    for i in bob..end {
        let (r, col) = scan.pos(i);
        if pv[r * w + col] < esc {
            continue;
        }
        let level = levels.get(r, col).unsigned_abs();
        let ctx = ctxs.fsc_lr.ctx(left_top(&pv, r, col) + off);
        let t = c.symbol(bank, ctx, level.saturating_sub(esc).min(3) as usize)? as u32;
        pv[r * w + col] = esc + t;
    }
    let mut sg = vec![0i32; w * h];
    let mut rice_ctx = 0u32;
    for i in bob..end {
        let (r, col) = scan.pos(i);
        let p = pv[r * w + col];
        let signed = levels.get(r, col);
        let mag = if p == cap {
            let hr = code_hr(c, signed.unsigned_abs().saturating_sub(cap), rice_param(rice_ctx))?;
            rice_ctx = hr_ctx_update(rice_ctx, hr);
            p as u64 + hr as u64
        } else {
            p as u64
        };
        if mag >= MAX_LEVEL as u64 {
            return Err(Error::conformance(format!("level {mag} exceeds the level range")));
        }
        if mag == 0 {
            continue;
        }
        let at = |rr: Option<usize>, cc: Option<usize>| match (rr, cc) {
            (Some(rr), Some(cc)) => sg[rr * w + cc],
            _ => 0,
        };
        let s = at(Some(r), col.checked_sub(1)) + at(r.checked_sub(1), Some(col)) + at(r.checked_sub(1), col.checked_sub(1));
        let ctx = ctxs.fsc_sign.ctx(fsc_sign_context(s, mag as u32, sign_off));
        let neg = c.symbol(bank, ctx, (signed < 0) as usize)? == 1;
        sg[r * w + col] = if neg { -1 } else { 1 };
        let v = mag as i32;
        levels.set(r, col, if neg { -v } else { v });
    }
    Ok(())
}

/// Encoder-side parity-hiding adjustment of scalar levels (scan order).
///
/// `cost(pos, level)` is the RD cost of putting `level` at scan position
/// `pos`; `gain` is the saving credited when the DC parity ends up hidden.
/// The search follows the decision table by nonzero-AC count: with three,
/// promote a zero or leave PH off; with four, promote a zero, nudge a
/// nonzero AC or the DC by one, or drop an AC to zero; with more, nudge one
/// AC or the DC. Returns whether PH is active afterwards.
pub fn ph_adjust(levels: &mut [i32], coeff_signs: &[i32], caps: &[u32], gain: i64, cost: &dyn Fn(usize, i32) -> i64) -> bool {
    let eob = levels.iter().rposition(|&l| l != 0).map_or(0, |i| i + 1);
    if eob <= 1 {
        return false;
    }
    let (n, _) = ph_parity(levels, caps, eob);
    if n + 1 < PH_MIN_AC {
        return false;
    }
    let signed = |pos: usize, mag: u32| if coeff_signs[pos] < 0 { -(mag as i32) } else { mag as i32 };
    let state = |lv: &[i32]| {
        let eob = lv.iter().rposition(|&l| l != 0).map_or(0, |i| i + 1);
        let (n, par) = ph_parity(lv, caps, eob);
        let on = n >= PH_MIN_AC;
        (on, !on || lv[0].unsigned_abs() & 1 == par)
    };

    let mut moves: Vec<(usize, u32)> = Vec::new();
    let ac = 1..eob;
    match n {
        3 => moves.extend(ac.filter(|&i| levels[i] == 0).map(|i| (i, 1))),
        4 => {
            for i in ac {
                let l = levels[i].unsigned_abs();
                if l == 0 {
                    moves.push((i, 1));
                } else {
                    moves.push((i, l + 1));
                    moves.push((i, l - 1));
                }
            }
            let d = levels[0].unsigned_abs();
            moves.push((0, d + 1));
            if d > 0 {
                moves.push((0, d - 1));
            }
        }
        _ => {
            for i in ac {
                let l = levels[i].unsigned_abs();
                moves.push((i, l + 1));
                if l > 0 {
                    moves.push((i, l - 1));
                }
            }
            let d = levels[0].unsigned_abs();
            moves.push((0, d + 1));
            if d > 0 {
                moves.push((0, d - 1));
            }
        }
    }

    let (on0, ok0) = state(levels);
    let mut best: Option<(i64, Option<(usize, u32)>)> = ok0.then_some((if on0 { -gain } else { 0 }, None));
    for (pos, mag) in moves {
        if mag >= MAX_LEVEL {
            continue;
        }
        let old = levels[pos];
        levels[pos] = signed(pos, mag);
        let (on, ok) = state(levels);
        let delta = cost(pos, levels[pos]) - cost(pos, old) - if on { gain } else { 0 };
        levels[pos] = old;
        if ok && best.as_ref().is_none_or(|b| delta < b.0) {
            best = Some((delta, Some((pos, mag))));
        }
    }
    if let Some((_, Some((pos, mag)))) = best {
        levels[pos] = signed(pos, mag);
    }
    state(levels).0
}

/// Additive rate estimate for trellis search, read from the live contexts.
/// Neighbourhood statistics come from a scalar pre-quantization of the block.
pub struct TbRateModel<'a> {
    bank: &'a ContextBank,
    ctxs: &'a CoeffContexts,
    plane: Plane,
    tcq: bool,
    n: usize,
    /// Per scan position: region, BR context per quantizer, LR context.
    sites: Vec<(Region, [CtxId; 2], CtxId)>,
}

impl<'a> TbRateModel<'a> {
    pub fn new(bank: &'a ContextBank, ctxs: &'a CoeffContexts, plane: Plane, tcq: bool, scan: &ScanPlan, prequant: &Block) -> Self {
        let (w, h) = (scan.width, scan.height);
        let pv: Vec<u32> = prequant.data.iter().map(|&l| l.unsigned_abs().min(8)).collect();
        let offs = neighbours(plane, scan.class);
        let sites = scan
            .order()
            .iter()
            .enumerate()
            .map(|(i, &(r, c))| {
                let reg = region(plane, scan.class, r, c);
                let ns = nstats_from_sum(neighbour_sum(&pv, w, h, r, c, offs));
                let bc = br_context(plane, reg, scan.class, r, c, ns);
                let br = [ctxs.br(plane, reg, Quantizer::Q0).ctx(bc), ctxs.br(plane, reg, Quantizer::Q1).ctx(bc)];
                (reg, br, ctxs.lr(plane, reg).ctx(lr_context(plane, reg, i == 0, ns)))
            })
            .collect();
        TbRateModel { bank, ctxs, plane, tcq, n: scan.len(), sites }
    }
}

impl RateModel for TbRateModel<'_> {
    fn level_cost(&self, pos: usize, q: Quantizer, level: u32, last: bool) -> u32 {
        let (reg, br, lr) = self.sites[pos];
        let esc = br_escape(reg);
        let cap = level_cap(reg);
        let tcq = self.tcq;
        let p = pass1_value(level, cap, tcq);
        let mut bits = if last {
            symbol_cost_q9(self.bank.entry(self.ctxs.base_eob(self.plane, reg)), (p.min(esc) - 1) as usize)
        } else {
            symbol_cost_q9(self.bank.entry(br[q.index()]), p.min(esc) as usize)
        };
        if p >= esc {
            bits += symbol_cost_q9(self.bank.entry(lr), (p - esc).min(3) as usize);
        }
        if has_hr(p, cap, tcq) {
            bits += 512 * tr_len((level - p) >> hr_shift(tcq), 1);
        }
        if level > 0 {
            bits += 512;
        }
        bits
    }

    fn eob_cost(&self, eob: usize) -> u32 {
        let (class, nbits, _) = position_class(eob);
        let fam = self.ctxs.eob[size_index(self.n)];
        let zero = self.ctxs.all_zero.ctx(all_zero_ctx(self.plane, self.n));
        symbol_cost_q9(self.bank.entry(fam.ctx(self.plane.is_luma() as usize)), class)
            + nbits * 512
            + symbol_cost_q9(self.bank.entry(zero), 0)
    }

    fn zero_block_cost(&self) -> u32 {
        symbol_cost_q9(self.bank.entry(self.ctxs.all_zero.ctx(all_zero_ctx(self.plane, self.n))), 1)
    }
}
