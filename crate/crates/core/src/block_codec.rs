//! Coding-block pipeline and container.
//!
//! A coding block (CB) is partitioned into transform blocks (TBs). Each luma
//! TB goes through the primary transform, the optional secondary transform,
//! quantization (scalar, parity hiding or TCQ) and coefficient coding; chroma
//! TBs share one optional cross-component rotation. Lossless CBs replace the
//! transform stages with RBR plus WHT or identity.
//!
//! The syntax of a CB is written once, generic over [`SymbolCoder`], and
//! driven by the encoder, the decoder and the rate estimator alike.
//! Reconstruction is shared too, so the encoder's reconstruction is the
//! decoder's by construction.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use crate::chroma_xform::{inverse_planes, forward_planes, CctxMode};
use crate::coeff_coding::{
    code_all_zero, code_bob, code_eob, code_fsc_levels, code_levels, ph_adjust, scan_caps, CoeffContexts, LevelSite,
    ScanClass, ScanPlan, TbRateModel,
};
use crate::entropy_core::{ContextBank, CostEstimator, Decoder, Encoder, Fnv1a, SymbolCoder};
use crate::error::{Error, Result};
use crate::lossless_tools::{
    chroma_lossless_tx, code_lossless_tx, lossless_forward, lossless_inverse, lossless_options, rbr_forward, rbr_inverse,
    LosslessContexts, LosslessKernel, LosslessTx, RbrMode,
};
use crate::primary_xform::{KernelBank, TxType, DEFAULT_SEED};
use crate::quantizer::{dequantize, quantize, QMatrix, QuantParams, Rounding, QM_UNIT};
use crate::secondary_xform::{apply_forward, apply_inverse, ist_eligibility, IstRegistry, SizeClass, KERNELS_PER_SET};
use crate::trellis_quant::{
    lambda_q8, tcq_applicability, tcq_dequantize, trellis_quantize, Candidates, Quantizer, RateModel, TcqTable,
    TrellisParams,
};
use crate::tx_signaling::{
    allowed_partitions, cctx_signalable, chroma_tx_type, code_cctx, code_fsc_flag, code_ist, code_partition,
    code_tx_type, fsc_allowed, partition_layout, tx_candidates, valid_block_size, IstChoice, PartitionType, Rect,
    SignalingContexts, TxSite,
};
use crate::types::{Block, IntraMode, Plane, Prediction};

pub const MAGIC: [u8; 4] = *b"AVTX";
pub const VERSION: u16 = 1;

/// Sequence-level tool switches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Tools {
    pub tcq: bool,
    pub ph: bool,
    pub fsc: bool,
    pub ist: bool,
    pub cctx: bool,
    pub qm: bool,
    pub lossless: bool,
}

impl Tools {
    fn to_bits(self) -> u8 {
        [self.tcq, self.ph, self.fsc, self.ist, self.cctx, self.qm, self.lossless]
            .iter()
            .enumerate()
            .fold(0, |acc, (i, &b)| acc | (b as u8) << i)
    }

    fn from_bits(b: u8) -> Option<Self> {
        if b >> 7 != 0 {
            return None;
        }
        let f = |i: u32| b >> i & 1 == 1;
        Some(Tools { tcq: f(0), ph: f(1), fsc: f(2), ist: f(3), cctx: f(4), qm: f(5), lossless: f(6) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub enum ChromaFormat {
    #[default]
    Yuv420,
    Yuv444,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecConfig {
    pub bit_depth: u8,
    pub base_q_idx: u16,
    pub y_dc_delta: i8,
    pub uv_dc_delta: i8,
    pub tools: Tools,
    /// Lagrangian scale: `lambda = scale * step^2` per bit.
    pub lambda_scale: f64,
    /// Seed of the stand-in kernels (L-ADST, DDT, IST).
    pub seed: u64,
    pub chroma: ChromaFormat,
    /// Quantization matrices, used when `tools.qm` is set.
    pub qm: Vec<QMatrix>,
}

impl Default for CodecConfig {
    fn default() -> Self {
        CodecConfig {
            bit_depth: 10,
            base_q_idx: 128,
            y_dc_delta: 0,
            uv_dc_delta: 0,
            tools: Tools { tcq: false, ph: true, fsc: true, ist: true, cctx: true, qm: false, lossless: false },
            lambda_scale: 0.12,
            seed: DEFAULT_SEED,
            chroma: ChromaFormat::Yuv420,
            qm: Vec::new(),
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        self.quant_params().validate()?;
        if self.tools.lossless && (self.base_q_idx != 0 || self.y_dc_delta > 0 || self.uv_dc_delta > 0) {
            return Err(Error::param("lossless coding needs q index 0"));
        }
        if !(self.lambda_scale.is_finite() && self.lambda_scale > 0.0) {
            return Err(Error::param(format!("lambda scale {} must be positive", self.lambda_scale)));
        }
        Ok(())
    }

    pub fn quant_params(&self) -> QuantParams {
        QuantParams {
            base_q_idx: self.base_q_idx,
            y_dc_delta: self.y_dc_delta,
            uv_dc_delta: self.uv_dc_delta,
            bit_depth: self.bit_depth,
            qm: if self.tools.qm { self.qm.clone() } else { Vec::new() },
        }
    }

    pub fn tcq_active(&self) -> bool {
        self.tools.tcq && !self.tools.lossless
    }

    /// TCQ takes precedence when both are switched on.
    pub fn ph_active(&self) -> bool {
        self.tools.ph && !self.tools.lossless && !self.tcq_active()
    }

    /// Chroma plane size of a `w x h` CB. Under 4:2:0 chroma never drops
    /// below 4 samples per side.
    pub fn chroma_dims(&self, w: usize, h: usize) -> (usize, usize) {
        match self.chroma {
            ChromaFormat::Yuv444 => (w, h),
            ChromaFormat::Yuv420 => ((w / 2).max(4), (h / 2).max(4)),
        }
    }

    pub fn plane_dims(&self, plane: Plane, w: usize, h: usize) -> (usize, usize) {
        if plane.is_luma() {
            (w, h)
        } else {
            self.chroma_dims(w, h)
        }
    }
}

/// Residual planes of one CB (Y, or Y, U, V) with its prediction descriptor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CbInput {
    pub width: usize,
    pub height: usize,
    pub pred: Prediction,
    pub planes: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockRecord {
    /// Position of the CB in its frame; informational for the codec.
    pub x: u16,
    pub y: u16,
    pub width: u16,
    pub height: u16,
    pub planes: u8,
    pub pred: Prediction,
    pub payload: Vec<u8>,
    /// FNV-1a over the coded levels, see [`levels_digest`].
    pub digest: u64,
}

/// Coded content of one TB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TbSyntax {
    pub plane: Plane,
    pub rect: Rect,
    pub tx: TxType,
    pub lossless: Option<LosslessKernel>,
    pub ist: Option<IstChoice>,
    pub tcq: bool,
    pub ph_used: bool,
    /// Levels over the coded area, at most 32x32.
    pub levels: Block,
}

impl TbSyntax {
    fn empty(plane: Plane, rect: Rect, tx: TxType, lossless: Option<LosslessKernel>) -> Self {
        TbSyntax {
            plane,
            rect,
            tx,
            lossless,
            ist: None,
            tcq: false,
            ph_used: false,
            levels: Block::new(rect.w.min(32), rect.h.min(32)),
        }
    }

    fn scan(&self) -> ScanPlan {
        let class = if self.lossless.is_some() { ScanClass::Diag } else { ScanClass::for_tx(self.tx) };
        ScanPlan::new(self.levels.width, self.levels.height, class)
    }
}

/// Everything coded for one CB.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CbSyntax {
    pub partition: PartitionType,
    pub fsc: bool,
    pub lossless_tx: Option<LosslessTx>,
    pub cctx: CctxMode,
    pub luma: Vec<TbSyntax>,
    /// Lossy: one U and one V TB. Lossless: U tiles, then V tiles.
    pub chroma: Vec<TbSyntax>,
}

impl CbSyntax {
    fn new() -> Self {
        CbSyntax {
            partition: PartitionType::None,
            fsc: false,
            lossless_tx: None,
            cctx: CctxMode::IDENTITY,
            luma: Vec::new(),
            chroma: Vec::new(),
        }
    }
}

/// 64-bit FNV-1a over every TB's levels in coding order, each level as a
/// little-endian `i32`, row-major over the coded area.
pub fn levels_digest(syn: &CbSyntax) -> u64 {
    let mut h = Fnv1a::new();
    for tb in syn.luma.iter().chain(&syn.chroma) {
        for &l in &tb.levels.data {
            h.write(&l.to_le_bytes());
        }
    }
    h.finish()
}

/// Adaptive state shared by all CBs of a container.
#[derive(Clone, Debug)]
struct Contexts {
    bank: ContextBank,
    sig: SignalingContexts,
    coeff: CoeffContexts,
    ll: LosslessContexts,
}

impl Contexts {
    fn new() -> Self {
        let mut bank = ContextBank::new();
        let sig = SignalingContexts::new(&mut bank);
        let coeff = CoeffContexts::new(&mut bank);
        let ll = LosslessContexts::new(&mut bank);
        Contexts { bank, sig, coeff, ll }
    }
}

/// The full context bank of a fresh container, for memory reports and dumps.
pub fn fresh_context_bank() -> ContextBank {
    Contexts::new().bank
}

/// Fixed tables: kernels and the TCQ state machine.
#[derive(Debug)]
struct Tables {
    kernels: Cow<'static, KernelBank>,
    ist: Cow<'static, IstRegistry>,
    tcq: TcqTable,
}

impl Tables {
    fn new(seed: u64) -> Self {
        if seed == DEFAULT_SEED {
            Tables {
                kernels: Cow::Borrowed(KernelBank::default_bank()),
                ist: Cow::Borrowed(IstRegistry::default_registry()),
                tcq: TcqTable::default(),
            }
        } else {
            Tables {
                kernels: Cow::Owned(KernelBank::new(seed)),
                ist: Cow::Owned(IstRegistry::new(seed)),
                tcq: TcqTable::default(),
            }
        }
    }
}

fn tiles(w: usize, h: usize, tw: usize, th: usize) -> Vec<Rect> {
    (0..h / th).flat_map(|r| (0..w / tw).map(move |c| Rect { x: c * tw, y: r * th, w: tw, h: th })).collect()
}

fn check_cb(cfg: &CodecConfig, w: usize, h: usize, planes: usize) -> Result<()> {
    if !valid_block_size(w, h) {
        return Err(Error::param(format!("unsupported coding block {w}x{h}")));
    }
    if planes != 1 && planes != 3 {
        return Err(Error::param(format!("{planes} planes; expected 1 or 3")));
    }
    let (cw, ch) = cfg.chroma_dims(w, h);
    if planes == 3 && !valid_block_size(cw, ch) {
        return Err(Error::param(format!("unsupported chroma block {cw}x{ch}")));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Syntax
// ---------------------------------------------------------------------------

struct SyntaxEnv<'a> {
    cfg: &'a CodecConfig,
    tcq: &'a TcqTable,
    pred: Prediction,
}

/// Code one CB. The encoder reads `syn`; the decoder fills it in.
#[allow(clippy::too_many_arguments)]
fn code_cb<C: SymbolCoder>(
    c: &mut C,
    ctx: &mut Contexts,
    env: &SyntaxEnv,
    w: usize,
    h: usize,
    planes: usize,
    syn: &mut CbSyntax,
) -> Result<()> {
    let enc = c.is_encoder();
    let cfg = env.cfg;
    let pred = env.pred;
    let Contexts { bank, sig, ll, .. } = ctx;
    syn.fsc = if cfg.tools.fsc { code_fsc_flag(c, bank, sig, pred, w, h, syn.fsc)? } else { false };

    if cfg.tools.lossless {
        let ltx = code_lossless_tx(c, bank, ll, pred, syn.fsc, w, h, syn.lossless_tx.unwrap_or(LosslessTx::WHT4))?;
        syn.lossless_tx = Some(ltx);
        if !enc {
            syn.luma = tiles(w, h, ltx.tb_w, ltx.tb_h)
                .into_iter()
                .map(|r| TbSyntax::empty(Plane::Y, r, TxType::IDTX, Some(ltx.kernel)))
                .collect();
            if planes == 3 {
                let ctx4 = chroma_lossless_tx(ltx);
                let (cw, ch) = cfg.chroma_dims(w, h);
                for p in [Plane::U, Plane::V] {
                    syn.chroma.extend(tiles(cw, ch, 4, 4).into_iter().map(|r| TbSyntax::empty(p, r, TxType::IDTX, Some(ctx4.kernel))));
                }
            }
        }
        for tb in syn.luma.iter_mut().chain(syn.chroma.iter_mut()) {
            code_tb(c, ctx, env, syn.fsc, tb).map_err(|e| e.at_block(0, tb.rect.x as u32, tb.rect.y as u32))?;
        }
        return Ok(());
    }

    let Contexts { bank, sig, .. } = ctx;
    syn.partition = code_partition(c, bank, sig, w, h, syn.partition)?;
    if !enc {
        syn.luma = partition_layout(syn.partition, w, h)?
            .into_iter()
            .map(|r| TbSyntax::empty(Plane::Y, r, TxType::DCT_DCT, None))
            .collect();
    }
    for tb in syn.luma.iter_mut() {
        code_tb(c, ctx, env, syn.fsc, tb).map_err(|e| e.at_block(0, tb.rect.x as u32, tb.rect.y as u32))?;
    }
    if planes == 3 {
        let (cw, ch) = cfg.chroma_dims(w, h);
        let tx = chroma_tx_type(pred, syn.luma[0].tx, cw, ch);
        if !enc {
            let r = Rect { x: 0, y: 0, w: cw, h: ch };
            syn.chroma = vec![TbSyntax::empty(Plane::U, r, tx, None), TbSyntax::empty(Plane::V, r, tx, None)];
        }
        code_chroma(c, ctx, env, syn)?;
    }
    Ok(())
}

fn code_tb<C: SymbolCoder>(c: &mut C, ctx: &mut Contexts, env: &SyntaxEnv, fsc_cb: bool, tb: &mut TbSyntax) -> Result<()> {
    let enc = c.is_encoder();
    let cfg = env.cfg;
    let Contexts { bank, sig, coeff, .. } = ctx;
    let (cw, ch) = (tb.levels.width, tb.levels.height);
    let n = cw * ch;
    let plane = tb.plane;
    let intra = env.pred.is_intra();
    let luma_fsc = plane.is_luma() && fsc_cb;

    if code_all_zero(c, bank, coeff, plane, n, tb.levels.is_zero())? {
        if !enc {
            tb.tx = if luma_fsc && tb.lossless.is_none() { TxType::IDTX } else { tb.tx };
        }
        return Ok(());
    }

    // Intra FSC: identity inferred, no EOB; the block runs from BOB to its end.
    if luma_fsc && tb.lossless.is_none_or(|k| k == LosslessKernel::Idtx) {
        if tb.lossless.is_none() {
            tb.tx = TxType::IDTX;
        }
        let scan = tb.scan();
        let bob = code_bob(c, bank, coeff, n, scan.bob(&tb.levels).unwrap_or(0))?;
        return code_fsc_levels(c, bank, coeff, &scan, bob, n, &mut tb.levels);
    }

    let enc_eob = if enc { tb.scan().eob(&tb.levels) } else { 0 };
    let eob = code_eob(c, bank, coeff, plane, n, enc_eob)?;
    if tb.lossless.is_none() && plane.is_luma() {
        let site = TxSite { plane, pred: env.pred, width: tb.rect.w, height: tb.rect.h, eob };
        tb.tx = code_tx_type(c, bank, sig, &site, tb.tx)?;
        tb.ist = if cfg.tools.ist {
            code_ist(c, bank, sig, ist_eligibility(plane, intra, tb.tx), intra, eob, tb.ist)?
        } else {
            None
        };
    }
    let scan = tb.scan();
    let identity = tb.lossless.map_or(tb.tx == TxType::IDTX, |k| k == LosslessKernel::Idtx);
    if plane.is_luma() && !intra && identity && cfg.tools.fsc {
        // Inter identity blocks take forward skip coding inside the EOB.
        let bob = code_bob(c, bank, coeff, n, scan.bob(&tb.levels).unwrap_or(0))?;
        if bob >= eob {
            return Err(Error::conformance(format!("BOB {bob} at or past EOB {eob}")));
        }
        return code_fsc_levels(c, bank, coeff, &scan, bob, eob, &mut tb.levels);
    }
    let lossy = tb.lossless.is_none();
    let tcq = lossy && cfg.tcq_active() && tcq_applicability(plane, scan.class.is_2d(), false, true);
    let ph = lossy && cfg.ph_active() && plane.is_luma() && !tb.tx.is_idtx();
    let out = code_levels(c, bank, coeff, &LevelSite { plane, tcq, ph }, &scan, eob, env.tcq, &mut tb.levels)?;
    tb.tcq = tcq;
    tb.ph_used = out.ph_used;
    Ok(())
}

/// Lossy chroma: both skip flags and EOBs, the CCTX mode, then both level sets.
fn code_chroma<C: SymbolCoder>(c: &mut C, ctx: &mut Contexts, env: &SyntaxEnv, syn: &mut CbSyntax) -> Result<()> {
    let Contexts { bank, sig, coeff, .. } = ctx;
    let mut eobs = [0usize; 2];
    for (k, tb) in syn.chroma.iter().enumerate() {
        let n = tb.levels.width * tb.levels.height;
        if !code_all_zero(c, bank, coeff, tb.plane, n, tb.levels.is_zero())? {
            let e = if c.is_encoder() { tb.scan().eob(&tb.levels) } else { 0 };
            eobs[k] = code_eob(c, bank, coeff, tb.plane, n, e)?;
        }
    }
    let (w, h) = (syn.chroma[0].rect.w, syn.chroma[0].rect.h);
    syn.cctx = if env.cfg.tools.cctx {
        code_cctx(c, bank, sig, eobs[0], eobs[1], w, h, syn.cctx)?
    } else {
        CctxMode::IDENTITY
    };
    for (k, tb) in syn.chroma.iter_mut().enumerate() {
        if eobs[k] > 0 {
            let scan = tb.scan();
            let site = LevelSite { plane: tb.plane, tcq: false, ph: false };
            code_levels(c, bank, coeff, &site, &scan, eobs[k], env.tcq, &mut tb.levels)?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Reconstruction
// ---------------------------------------------------------------------------

fn weight(qp: &QuantParams, plane: Plane, w: usize, h: usize, r: usize, c: usize) -> u32 {
    qp.matrix(plane, w, h).map_or(QM_UNIT, |m| m.weight(r, c))
}

/// Dequantized coefficients of a lossy TB, replaying TCQ states when used.
fn dequantize_tb(qp: &QuantParams, table: &TcqTable, tb: &TbSyntax) -> Block {
    let scan = tb.scan();
    let (w, h) = (tb.levels.width, tb.levels.height);
    let v = scan.gather(&tb.levels);
    let qs = if tb.tcq { table.replay(&v, scan.eob(&tb.levels)) } else { Vec::new() };
    let mut out = Block::new(w, h);
    for (i, &(r, c)) in scan.order().iter().enumerate() {
        if v[i] == 0 {
            continue;
        }
        let step = qp.qstep(tb.plane, i == 0);
        let wt = weight(qp, tb.plane, w, h, r, c);
        let d = if tb.tcq {
            tcq_dequantize(v[i], qs[i], step, wt, qp.bit_depth)
        } else {
            dequantize(v[i], step, wt, qp.bit_depth)
        };
        out.set(r, c, d.value);
    }
    out
}

fn ist_kernel<'t>(tables: &'t Tables, tb: &TbSyntax, ist: IstChoice) -> Result<&'t crate::secondary_xform::IstKernel> {
    let class = SizeClass::for_block(tb.levels.width, tb.levels.height, ist.family);
    tables.ist.lookup(ist.family, ist.set, ist.kernel, class)
}

/// Residual of a lossy TB from dequantized coefficients.
fn inverse_lossy(tables: &Tables, pred: Prediction, tb: &TbSyntax, mut coeffs: Block) -> Result<Block> {
    if let Some(ist) = tb.ist {
        apply_inverse(&mut coeffs, ist_kernel(tables, tb, ist)?)?;
    }
    tables.kernels.inverse_2d(&coeffs, tb.tx, !pred.is_intra(), tb.rect.w, tb.rect.h)
}

fn inverse_lossless(pred: Prediction, tb: &TbSyntax, kernel: LosslessKernel) -> Result<Block> {
    Ok(rbr_inverse(&lossless_inverse(&tb.levels, kernel)?, RbrMode::for_prediction(pred)))
}

/// Residual planes of a CB from its syntax.
fn reconstruct(cfg: &CodecConfig, tables: &Tables, pred: Prediction, w: usize, h: usize, syn: &CbSyntax) -> Result<Vec<Block>> {
    let qp = cfg.quant_params();
    let mut planes = vec![Block::new(w, h)];
    let tb_residual = |tb: &TbSyntax| match tb.lossless {
        Some(k) => inverse_lossless(pred, tb, k),
        None => inverse_lossy(tables, pred, tb, dequantize_tb(&qp, &tables.tcq, tb)),
    };
    for tb in &syn.luma {
        planes[0].paste(tb.rect.y, tb.rect.x, &tb_residual(tb)?);
    }
    if syn.chroma.is_empty() {
        return Ok(planes);
    }
    let (cw, ch) = cfg.chroma_dims(w, h);
    planes.push(Block::new(cw, ch));
    planes.push(Block::new(cw, ch));
    if cfg.tools.lossless {
        for tb in &syn.chroma {
            planes[tb.plane.index()].paste(tb.rect.y, tb.rect.x, &tb_residual(tb)?);
        }
    } else {
        let mut u = dequantize_tb(&qp, &tables.tcq, &syn.chroma[0]);
        let mut v = dequantize_tb(&qp, &tables.tcq, &syn.chroma[1]);
        inverse_planes(&mut u.data, &mut v.data, syn.cctx);
        planes[1] = inverse_lossy(tables, pred, &syn.chroma[0], u)?;
        planes[2] = inverse_lossy(tables, pred, &syn.chroma[1], v)?;
    }
    Ok(planes)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

/// Coding pass of a traced syntax element.
pub fn pass_of(label: &str) -> &'static str {
    match label {
        "coeff_base" | "coeff_base_eob" | "fsc_base" | "ph_base" => "BR",
        "coeff_br" | "fsc_br" | "ph_br" => "LR",
        "coeff_hr" => "HR",
        "sign" | "dc_sign" | "fsc_sign" => "sign",
        "all_zero" | "eob_class" | "eob_extra" | "bob_class" | "bob_extra" => "EOB",
        _ => "side",
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CodingStats {
    pub blocks: u64,
    pub payload_bytes: u64,
    /// Cost per syntax element in 1/512 bit.
    pub cost_q9: BTreeMap<&'static str, u64>,
    pub tools: BTreeMap<&'static str, u64>,
}

impl CodingStats {
    pub fn merge(&mut self, o: &CodingStats) {
        self.blocks += o.blocks;
        self.payload_bytes += o.payload_bytes;
        for (k, v) in &o.cost_q9 {
            *self.cost_q9.entry(k).or_default() += v;
        }
        for (k, v) in &o.tools {
            *self.tools.entry(k).or_default() += v;
        }
    }

    pub fn total_bits(&self) -> f64 {
        self.cost_q9.values().sum::<u64>() as f64 / 512.0
    }

    pub fn bits_by_pass(&self) -> BTreeMap<&'static str, f64> {
        let mut m = BTreeMap::new();
        for (k, v) in &self.cost_q9 {
            *m.entry(pass_of(k)).or_default() += *v as f64 / 512.0;
        }
        m
    }

    pub fn tool(&self, name: &str) -> u64 {
        self.tools.get(name).copied().unwrap_or(0)
    }

    /// Count tool usage of one coded CB.
    pub fn add_syntax(&mut self, cfg: &CodecConfig, pred: Prediction, syn: &CbSyntax) {
        let mut bump = |k: &'static str, n: u64| *self.tools.entry(k).or_default() += n;
        bump("cb", 1);
        if cfg.tools.lossless {
            bump("lossless_cb", 1);
            if RbrMode::for_prediction(pred) != RbrMode::None {
                bump("rbr_cb", 1);
            }
        } else {
            bump(partition_stat(syn.partition), 1);
        }
        bump("fsc_cb", syn.fsc as u64);
        for tb in syn.luma.iter().chain(&syn.chroma) {
            if tb.levels.is_zero() {
                continue;
            }
            bump("tcq_tb", tb.tcq as u64);
            bump("ph_tb", tb.ph_used as u64);
            bump("ist_tb", tb.ist.is_some() as u64);
        }
        if !syn.chroma.is_empty() && !cfg.tools.lossless {
            bump("cctx_tb", (syn.cctx != CctxMode::IDENTITY) as u64);
        }
    }
}

fn partition_stat(p: PartitionType) -> &'static str {
    match p {
        PartitionType::None => "partition_none",
        PartitionType::Split => "partition_split",
        PartitionType::Horz => "partition_horz",
        PartitionType::Vert => "partition_vert",
        PartitionType::Horz4 => "partition_horz4",
        PartitionType::Vert4 => "partition_vert4",
        PartitionType::Horz5 => "partition_horz5",
        PartitionType::Vert5 => "partition_vert5",
    }
}

// ---------------------------------------------------------------------------
// Encoder
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PartitionChoice {
    /// Rate-distortion search over every legal partition.
    #[default]
    Search,
    Fixed(PartitionType),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedCb {
    pub record: BlockRecord,
    pub syntax: CbSyntax,
    /// Reconstructed residual planes, identical to the decoder's.
    pub recon: Vec<Block>,
    pub stats: CodingStats,
}

/// One candidate outcome of a TB or CB decision.
struct Trial<T> {
    value: T,
    cost: f64,
}

pub struct CbEncoder {
    cfg: CodecConfig,
    qp: QuantParams,
    ctx: Contexts,
    tables: Tables,
    gains: HashMap<(usize, usize), f64>,
    pub partition: PartitionChoice,
    trace: bool,
}

impl CbEncoder {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        let tables = Tables::new(cfg.seed);
        Ok(CbEncoder {
            qp: cfg.quant_params(),
            cfg,
            ctx: Contexts::new(),
            tables,
            gains: HashMap::new(),
            partition: PartitionChoice::Search,
            trace: false,
        })
    }

    pub fn config(&self) -> &CodecConfig {
        &self.cfg
    }

    /// Keep a per-symbol trace of the next CBs (see [`CbEncoder::encode_traced`]).
    pub fn set_trace(&mut self, on: bool) {
        self.trace = on;
    }

    pub fn bank_digest(&self) -> u64 {
        self.ctx.bank.digest()
    }

    pub fn encode(&mut self, input: &CbInput) -> Result<EncodedCb> {
        Ok(self.encode_traced(input)?.0)
    }

    /// Encode one CB; with tracing on, also returns the coded symbols.
    pub fn encode_traced(&mut self, input: &CbInput) -> Result<(EncodedCb, Vec<crate::entropy_core::TraceEvent>)> {
        let (w, h) = (input.width, input.height);
        check_cb(&self.cfg, w, h, input.planes.len())?;
        self.check_input(input)?;
        let mut syn = if self.cfg.tools.lossless { self.decide_lossless(input)? } else { self.decide_lossy(input)? };

        let mut enc = if self.trace { Encoder::with_trace() } else { Encoder::new() };
        let env = SyntaxEnv { cfg: &self.cfg, tcq: &self.tables.tcq, pred: input.pred };
        code_cb(&mut enc, &mut self.ctx, &env, w, h, input.planes.len(), &mut syn)?;
        let recon = reconstruct(&self.cfg, &self.tables, input.pred, w, h, &syn)?;
        let mut stats = CodingStats { blocks: 1, cost_q9: enc.cost_by_label().clone(), ..Default::default() };
        stats.add_syntax(&self.cfg, input.pred, &syn);
        let trace = enc.take_trace();
        let payload = enc.finish();
        stats.payload_bytes = payload.len() as u64;
        let record = BlockRecord {
            x: 0,
            y: 0,
            width: w as u16,
            height: h as u16,
            planes: input.planes.len() as u8,
            pred: input.pred,
            payload,
            digest: levels_digest(&syn),
        };
        Ok((EncodedCb { record, syntax: syn, recon, stats }, trace))
    }

    fn check_input(&self, input: &CbInput) -> Result<()> {
        let lim = 1i32 << (self.cfg.bit_depth + 1);
        for (i, b) in input.planes.iter().enumerate() {
            let (pw, ph) = self.cfg.plane_dims(Plane::ALL[i], input.width, input.height);
            if b.width != pw || b.height != ph {
                return Err(Error::param(format!("plane {i} is {}x{}, expected {pw}x{ph}", b.width, b.height)));
            }
            if b.data.iter().any(|&v| v <= -lim || v >= lim) {
                return Err(Error::param(format!("plane {i} has residuals outside the {}-bit range", self.cfg.bit_depth)));
            }
        }
        Ok(())
    }

    /// Estimated bits of a complete CB syntax under the current contexts.
    fn estimate_cb(&mut self, pred: Prediction, w: usize, h: usize, planes: usize, syn: &CbSyntax) -> Result<f64> {
        let mut est = CostEstimator::default();
        let env = SyntaxEnv { cfg: &self.cfg, tcq: &self.tables.tcq, pred };
        code_cb(&mut est, &mut self.ctx, &env, w, h, planes, &mut syn.clone())?;
        Ok(est.cost_q9 as f64 / 512.0)
    }

    fn decide_lossless(&mut self, input: &CbInput) -> Result<CbSyntax> {
        let (w, h, pred) = (input.width, input.height, input.pred);
        let rbr = RbrMode::for_prediction(pred);
        let fsc_opts: &[bool] = if self.cfg.tools.fsc && fsc_allowed(pred, w, h) { &[false, true] } else { &[false] };
        let mut best: Option<Trial<CbSyntax>> = None;
        for &fsc in fsc_opts {
            for ltx in lossless_options(pred, fsc, w, h) {
                let mut syn = CbSyntax::new();
                syn.fsc = fsc;
                syn.lossless_tx = Some(ltx);
                let tb_of = |plane: Plane, r: Rect, k: LosslessKernel| -> Result<TbSyntax> {
                    let res = rbr_forward(&input.planes[plane.index()].crop(r.y, r.x, r.w, r.h), rbr);
                    let mut tb = TbSyntax::empty(plane, r, TxType::IDTX, Some(k));
                    tb.levels = lossless_forward(&res, k)?;
                    Ok(tb)
                };
                for r in tiles(w, h, ltx.tb_w, ltx.tb_h) {
                    syn.luma.push(tb_of(Plane::Y, r, ltx.kernel)?);
                }
                if input.planes.len() == 3 {
                    let ck = chroma_lossless_tx(ltx).kernel;
                    let (cw, ch) = self.cfg.chroma_dims(w, h);
                    for p in [Plane::U, Plane::V] {
                        for r in tiles(cw, ch, 4, 4) {
                            syn.chroma.push(tb_of(p, r, ck)?);
                        }
                    }
                }
                let cost = self.estimate_cb(pred, w, h, input.planes.len(), &syn)?;
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    best = Some(Trial { value: syn, cost });
                }
            }
        }
        Ok(best.expect("at least one lossless option").value)
    }

    /// Transform gain of DCT_DCT at a size, from a flat block.
    fn gain(&mut self, w: usize, h: usize) -> f64 {
        let kernels = &self.tables.kernels;
        *self.gains.entry((w, h)).or_insert_with(|| {
            let flat = Block::from_vec(w, h, vec![64; w * h]);
            let dc = kernels.forward_2d(&flat, TxType::DCT_DCT, false).map_or(1, |b| b.get(0, 0));
            (dc as f64 / (64.0 * ((w * h) as f64).sqrt())).max(1e-3)
        })
    }

    /// Lagrange multiplier per bit against residual-domain squared error.
    fn lambda(&mut self, plane: Plane, w: usize, h: usize) -> f64 {
        let step = self.qp.qstep(plane, false) as f64 / 32.0 / self.gain(w, h);
        self.cfg.lambda_scale * step * step
    }

    fn decide_lossy(&mut self, input: &CbInput) -> Result<CbSyntax> {
        let (w, h, pred) = (input.width, input.height, input.pred);
        let parts = match self.partition {
            PartitionChoice::Search => allowed_partitions(w, h),
            PartitionChoice::Fixed(p) => {
                partition_layout(p, w, h)?;
                vec![p]
            }
        };
        let fsc_opts: &[bool] = if self.cfg.tools.fsc && fsc_allowed(pred, w, h) { &[false, true] } else { &[false] };
        let lambda = self.lambda(Plane::Y, w, h);
        let mut best: Option<Trial<CbSyntax>> = None;
        for &p in &parts {
            for &fsc in fsc_opts {
                let mut syn = CbSyntax::new();
                syn.partition = p;
                syn.fsc = fsc;
                let mut cost = 0.0;
                for r in partition_layout(p, w, h)? {
                    let t = self.decide_luma_tb(input, r, fsc)?;
                    cost += t.cost;
                    syn.luma.push(t.value);
                }
                let mut est = CostEstimator::default();
                let Contexts { bank, sig, .. } = &mut self.ctx;
                code_partition(&mut est, bank, sig, w, h, p)?;
                if self.cfg.tools.fsc {
                    code_fsc_flag(&mut est, bank, sig, pred, w, h, fsc)?;
                }
                cost += lambda * est.cost_q9 as f64 / 512.0;
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    best = Some(Trial { value: syn, cost });
                }
            }
        }
        let mut syn = best.expect("NONE is always legal").value;
        if input.planes.len() == 3 {
            self.decide_chroma(input, &mut syn)?;
        }
        Ok(syn)
    }

    /// Levels of a lossy TB from its coefficients: trellis under TCQ, scalar
    /// rounding otherwise, then the parity-hiding adjustment.
    fn quantize_tb(&self, pred: Prediction, tb: &mut TbSyntax, coeffs: &Block, tcq: bool, ph: bool) {
        let scan = tb.scan();
        let (w, h) = (coeffs.width, coeffs.height);
        let plane = tb.plane;
        let c = scan.gather(coeffs);
        let weights: Vec<u32> = scan.order().iter().map(|&(r, cc)| weight(&self.qp, plane, w, h, r, cc)).collect();
        let (ac, dc) = (self.qp.qstep(plane, false), self.qp.qstep(plane, true));
        let step = |i: usize| if i == 0 { dc } else { ac };
        let rounding = if pred.is_intra() { Rounding::INTRA } else { Rounding::INTER };
        let mut levels: Vec<i32> = c.iter().enumerate().map(|(i, &x)| quantize(x, step(i), weights[i], rounding)).collect();
        let lq8 = lambda_q8(ac, self.cfg.lambda_scale);
        if tcq {
            let pre = scan.scatter(&levels);
            let rate = TbRateModel::new(&self.ctx.bank, &self.ctx.coeff, plane, true, &scan, &pre);
            let params = TrellisParams {
                qstep: ac,
                dc_qstep: dc,
                weights: &weights,
                lambda_q8: lq8,
                bit_depth: self.cfg.bit_depth,
                candidates: Candidates::Pruned,
                table: self.tables.tcq,
            };
            levels = trellis_quantize(&c, &params, &rate).levels;
        } else if ph {
            let pre = scan.scatter(&levels);
            let rate = TbRateModel::new(&self.ctx.bank, &self.ctx.coeff, plane, false, &scan, &pre);
            let caps = scan_caps(plane, &scan);
            let bd = self.cfg.bit_depth;
            let cost = |i: usize, l: i32| -> i64 {
                let d = c[i].unsigned_abs() as i64 - dequantize(l, step(i), weights[i], bd).value.unsigned_abs() as i64;
                ((d * d) << 17) + (lq8 * rate.level_cost(i, Quantizer::Q0, l.unsigned_abs(), false) as u64) as i64
            };
            ph_adjust(&mut levels, &c, &caps, (lq8 * 512) as i64, &cost);
        }
        tb.tcq = tcq;
        tb.levels = scan.scatter(&levels);
    }

    fn sse(a: &Block, b: &Block) -> f64 {
        a.data.iter().zip(&b.data).map(|(&x, &y)| ((x - y) as f64).powi(2)).sum()
    }

    fn decide_luma_tb(&mut self, input: &CbInput, r: Rect, fsc: bool) -> Result<Trial<TbSyntax>> {
        let pred = input.pred;
        let intra = pred.is_intra();
        let res = input.planes[0].crop(r.y, r.x, r.w, r.h);
        let lambda = self.lambda(Plane::Y, r.w, r.h);
        let txs = if fsc { vec![TxType::IDTX] } else { tx_candidates(pred, r.w, r.h) };
        let mut best: Option<Trial<TbSyntax>> = None;
        for tx in txs {
            let coeffs = self.tables.kernels.forward_2d(&res, tx, !intra)?;
            let mut ists: Vec<Option<IstChoice>> = vec![None];
            if self.cfg.tools.ist && !fsc {
                if let Some(family) = ist_eligibility(Plane::Y, intra, tx) {
                    let set = pred.intra_mode().map_or(0, |m| m.index() % family.set_count());
                    ists.extend((0..KERNELS_PER_SET).map(|kernel| Some(IstChoice { family, set, kernel })));
                }
            }
            for ist in ists {
                let mut tb = TbSyntax::empty(Plane::Y, r, tx, None);
                tb.ist = ist;
                let mut cf = coeffs.clone();
                if let Some(choice) = ist {
                    apply_forward(&mut cf, ist_kernel(&self.tables, &tb, choice)?)?;
                }
                let scan = tb.scan();
                let inter_fsc = !intra && tx == TxType::IDTX && self.cfg.tools.fsc;
                let tcq = !fsc && !inter_fsc && self.cfg.tcq_active() && tcq_applicability(Plane::Y, scan.class.is_2d(), false, true);
                let ph = !fsc && !inter_fsc && self.cfg.ph_active() && !tx.is_idtx();
                self.quantize_tb(pred, &mut tb, &cf, tcq, ph);
                let eob = scan.eob(&tb.levels);
                if eob == 0 {
                    if tx != TxType::IDTX && tx != TxType::DCT_DCT || ist.is_some() {
                        continue;
                    }
                    tb.tcq = false;
                } else if eob <= 1 && !fsc && (tx != TxType::DCT_DCT || ist.is_some()) {
                    // DC-only blocks carry no transform syntax: DCT_DCT without IST.
                    continue;
                }
                let recon = inverse_lossy(&self.tables, pred, &tb, dequantize_tb(&self.qp, &self.tables.tcq, &tb))?;
                let mut est = CostEstimator::default();
                let env = SyntaxEnv { cfg: &self.cfg, tcq: &self.tables.tcq, pred };
                code_tb(&mut est, &mut self.ctx, &env, fsc, &mut tb.clone())?;
                let cost = Self::sse(&res, &recon) + lambda * est.cost_q9 as f64 / 512.0;
                if best.as_ref().is_none_or(|b| cost < b.cost) {
                    best = Some(Trial { value: tb, cost });
                }
            }
        }
        let mut t = best.ok_or_else(|| Error::param(format!("no transform candidate for {}x{}", r.w, r.h)))?;
        if t.value.levels.is_zero() {
            t.value.tx = if fsc { TxType::IDTX } else { TxType::DCT_DCT };
            t.value.ist = None;
            t.value.tcq = false;
            t.value.ph_used = false;
        }
        Ok(t)
    }

    fn decide_chroma(&mut self, input: &CbInput, syn: &mut CbSyntax) -> Result<()> {
        let pred = input.pred;
        let (cw, ch) = self.cfg.chroma_dims(input.width, input.height);
        let r = Rect { x: 0, y: 0, w: cw, h: ch };
        let tx = chroma_tx_type(pred, syn.luma[0].tx, cw, ch);
        let inter = !pred.is_intra();
        let cu = self.tables.kernels.forward_2d(&input.planes[1], tx, inter)?;
        let cv = self.tables.kernels.forward_2d(&input.planes[2], tx, inter)?;
        let lambda = self.lambda(Plane::U, cw, ch);
        let modes: Vec<CctxMode> = if self.cfg.tools.cctx { CctxMode::all().collect() } else { vec![CctxMode::IDENTITY] };
        let mut best: Option<Trial<(CctxMode, Vec<TbSyntax>)>> = None;
        for mode in modes {
            let (mut a, mut b) = (cu.clone(), cv.clone());
            forward_planes(&mut a.data, &mut b.data, mode);
            let mut tbs = vec![TbSyntax::empty(Plane::U, r, tx, None), TbSyntax::empty(Plane::V, r, tx, None)];
            self.quantize_tb(pred, &mut tbs[0], &a, false, false);
            self.quantize_tb(pred, &mut tbs[1], &b, false, false);
            let eu = tbs[0].scan().eob(&tbs[0].levels);
            let ev = tbs[1].scan().eob(&tbs[1].levels);
            if !cctx_signalable(eu, ev, mode) {
                continue;
            }
            let mut trial = CbSyntax { cctx: mode, chroma: tbs, ..CbSyntax::new() };
            let mut est = CostEstimator::default();
            let env = SyntaxEnv { cfg: &self.cfg, tcq: &self.tables.tcq, pred };
            code_chroma(&mut est, &mut self.ctx, &env, &mut trial)?;
            let mut u = dequantize_tb(&self.qp, &self.tables.tcq, &trial.chroma[0]);
            let mut v = dequantize_tb(&self.qp, &self.tables.tcq, &trial.chroma[1]);
            inverse_planes(&mut u.data, &mut v.data, mode);
            let ru = inverse_lossy(&self.tables, pred, &trial.chroma[0], u)?;
            let rv = inverse_lossy(&self.tables, pred, &trial.chroma[1], v)?;
            let cost = Self::sse(&input.planes[1], &ru) + Self::sse(&input.planes[2], &rv) + lambda * est.cost_q9 as f64 / 512.0;
            if best.as_ref().is_none_or(|b| cost < b.cost) {
                best = Some(Trial { value: (mode, trial.chroma), cost });
            }
        }
        let (mode, tbs) = best.expect("identity is always signalable").value;
        syn.cctx = mode;
        syn.chroma = tbs;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Decoder
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodedCb {
    pub planes: Vec<Block>,
    pub syntax: CbSyntax,
    pub digest: u64,
}

pub struct CbDecoder {
    cfg: CodecConfig,
    ctx: Contexts,
    tables: Tables,
}

impl CbDecoder {
    pub fn new(cfg: CodecConfig) -> Result<Self> {
        cfg.validate()?;
        let tables = Tables::new(cfg.seed);
        Ok(CbDecoder { cfg, ctx: Contexts::new(), tables })
    }

    pub fn bank_digest(&self) -> u64 {
        self.ctx.bank.digest()
    }

    pub fn decode(&mut self, rec: &BlockRecord) -> Result<DecodedCb> {
        let (w, h) = (rec.width as usize, rec.height as usize);
        check_cb(&self.cfg, w, h, rec.planes as usize)?;
        let mut dec = Decoder::new(&rec.payload)?;
        let mut syn = CbSyntax::new();
        let env = SyntaxEnv { cfg: &self.cfg, tcq: &self.tables.tcq, pred: rec.pred };
        code_cb(&mut dec, &mut self.ctx, &env, w, h, rec.planes as usize, &mut syn)?;
        let digest = levels_digest(&syn);
        if digest != rec.digest {
            return Err(Error::conformance(format!("levels digest {digest:016x} differs from recorded {:016x}", rec.digest)));
        }
        let planes = reconstruct(&self.cfg, &self.tables, rec.pred, w, h, &syn)?;
        Ok(DecodedCb { planes, syntax: syn, digest })
    }
}

/// Encode CBs into records with one adaptive state.
pub fn encode_all(cfg: &CodecConfig, inputs: &[CbInput]) -> Result<(Vec<BlockRecord>, CodingStats)> {
    let mut enc = CbEncoder::new(cfg.clone())?;
    let mut stats = CodingStats::default();
    let mut records = Vec::with_capacity(inputs.len());
    for (i, input) in inputs.iter().enumerate() {
        let e = enc.encode(input).map_err(|e| e.at_block(i, 0, 0))?;
        stats.merge(&e.stats);
        records.push(e.record);
    }
    Ok((records, stats))
}

/// Decode records in order; errors carry the record index.
pub fn decode_all(cfg: &CodecConfig, records: &[BlockRecord]) -> Result<Vec<DecodedCb>> {
    let mut dec = CbDecoder::new(cfg.clone())?;
    records.iter().enumerate().map(|(i, r)| dec.decode(r).map_err(|e| e.at_block(i, r.x as u32, r.y as u32))).collect()
}

// ---------------------------------------------------------------------------
// Container
// ---------------------------------------------------------------------------

fn pred_code(p: Prediction) -> u8 {
    match p {
        Prediction::Intra(m) => m.index() as u8,
        Prediction::Inter => 0xff,
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Parse { offset: self.pos, msg: format!("truncated {what}") });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn err(&self, at: usize, msg: impl Into<String>) -> Error {
        Error::Parse { offset: at, msg: msg.into() }
    }
}

/// Layout (little endian): `"AVTX"`, version `u16`, config block, record
/// count `u32`, then per record: x `u16`, y `u16`, width `u16`, height `u16`, planes `u8`,
/// prediction `u8` (intra mode index, `0xff` inter), digest `u64`, payload
/// length `u32` and the payload.
///
/// Config block: bit depth `u8`, base q index `u16`, DC deltas `i8` x2, tool
/// bits `u8` (TCQ, PH, FSC, IST, CCTX, QM, lossless from bit 0), lambda scale
/// `f64`, seed `u64`, chroma format `u8`, matrix count `u8` and the matrices.
pub fn container_to_bytes(cfg: &CodecConfig, records: &[BlockRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(cfg.bit_depth);
    out.extend_from_slice(&cfg.base_q_idx.to_le_bytes());
    out.push(cfg.y_dc_delta as u8);
    out.push(cfg.uv_dc_delta as u8);
    out.push(cfg.tools.to_bits());
    out.extend_from_slice(&cfg.lambda_scale.to_le_bytes());
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    out.push(cfg.chroma as u8);
    out.push(cfg.qm.len() as u8);
    for m in &cfg.qm {
        out.extend_from_slice(&crate::quantizer::qm_serialize(m));
    }
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        out.extend_from_slice(&r.x.to_le_bytes());
        out.extend_from_slice(&r.y.to_le_bytes());
        out.extend_from_slice(&r.width.to_le_bytes());
        out.extend_from_slice(&r.height.to_le_bytes());
        out.push(r.planes);
        out.push(pred_code(r.pred));
        out.extend_from_slice(&r.digest.to_le_bytes());
        out.extend_from_slice(&(r.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&r.payload);
    }
    out
}

pub fn container_from_bytes(buf: &[u8]) -> Result<(CodecConfig, Vec<BlockRecord>)> {
    let mut rd = Reader { buf, pos: 0 };
    if buf.len() < 4 || buf[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    rd.pos = 4;
    let version = rd.u16("version")?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let bit_depth = rd.u8("config")?;
    let base_q_idx = rd.u16("config")?;
    let y_dc_delta = rd.u8("config")? as i8;
    let uv_dc_delta = rd.u8("config")? as i8;
    let at = rd.pos;
    let tools = Tools::from_bits(rd.u8("config")?).ok_or_else(|| rd.err(at, "unknown tool bits"))?;
    let lambda_scale = f64::from_bits(rd.u64("config")?);
    let seed = rd.u64("config")?;
    let at = rd.pos;
    let chroma = match rd.u8("config")? {
        0 => ChromaFormat::Yuv420,
        1 => ChromaFormat::Yuv444,
        _ => return Err(rd.err(at, "unknown chroma format")),
    };
    let nqm = rd.u8("config")?;
    let mut qm = Vec::with_capacity(nqm as usize);
    for _ in 0..nqm {
        let at = rd.pos;
        let (m, used) = crate::quantizer::qm_deserialize(&buf[at..]).map_err(|e| match e {
            Error::Parse { offset, msg } => Error::Parse { offset: at + offset, msg },
            other => other,
        })?;
        rd.pos += used;
        qm.push(m);
    }
    let cfg = CodecConfig { bit_depth, base_q_idx, y_dc_delta, uv_dc_delta, tools, lambda_scale, seed, chroma, qm };
    cfg.validate().map_err(|e| rd.err(6, e.to_string()))?;
    let count = rd.u32("record count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let x = rd.u16("record header")?;
        let y = rd.u16("record header")?;
        let width = rd.u16("record header")?;
        let height = rd.u16("record header")?;
        let planes = rd.u8("record header")?;
        let at = rd.pos;
        let pred = match rd.u8("record header")? {
            0xff => Prediction::Inter,
            m => Prediction::Intra(IntraMode::from_index(m as usize).ok_or_else(|| rd.err(at, "unknown intra mode"))?),
        };
        let digest = rd.u64("record header")?;
        let len = rd.u32("record header")? as usize;
        let payload = rd.take(len, "record payload")?.to_vec();
        records.push(BlockRecord { x, y, width, height, planes, pred, payload, digest });
    }
    if rd.pos != buf.len() {
        return Err(rd.err(rd.pos, "trailing bytes after the last record"));
    }
    Ok((cfg, records))
}

pub fn container_write(path: &Path, cfg: &CodecConfig, records: &[BlockRecord]) -> Result<()> {
    std::fs::write(path, container_to_bytes(cfg, records))?;
    Ok(())
}

pub fn container_read(path: &Path) -> Result<(CodecConfig, Vec<BlockRecord>)> {
    container_from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn smooth_block(rng: &mut ChaCha8Rng, w: usize, h: usize, amp: i32) -> Block {
        let (gx, gy) = (rng.random_range(-amp..=amp), rng.random_range(-amp..=amp));
        let data = (0..w * h)
            .map(|i| {
                let (r, c) = ((i / w) as i32, (i % w) as i32);
                ((gx * c + gy * r) / 8 + rng.random_range(-amp / 4..=amp / 4)).clamp(-1000, 1000)
            })
            .collect();
        Block::from_vec(w, h, data)
    }

    fn input(cfg: &CodecConfig, rng: &mut ChaCha8Rng, w: usize, h: usize, pred: Prediction, planes: usize) -> CbInput {
        let mut v = vec![smooth_block(rng, w, h, 200)];
        if planes == 3 {
            let (cw, ch) = cfg.chroma_dims(w, h);
            v.push(smooth_block(rng, cw, ch, 80));
            v.push(smooth_block(rng, cw, ch, 80));
        }
        CbInput { width: w, height: h, pred, planes: v }
    }

    fn round_trip(cfg: &CodecConfig, inputs: &[CbInput]) -> (Vec<EncodedCb>, Vec<DecodedCb>) {
        let mut enc = CbEncoder::new(cfg.clone()).unwrap();
        let mut dec = CbDecoder::new(cfg.clone()).unwrap();
        let mut e = Vec::new();
        let mut d = Vec::new();
        for i in inputs {
            let x = enc.encode(i).unwrap();
            let y = dec.decode(&x.record).unwrap();
            assert_eq!(enc.bank_digest(), dec.bank_digest());
            assert_eq!(x.recon, y.planes);
            assert_eq!(x.syntax, y.syntax);
            e.push(x);
            d.push(y);
        }
        (e, d)
    }

    #[test]
    fn all_zero_block() {
        let cfg = CodecConfig::default();
        let inp = CbInput {
            width: 16,
            height: 16,
            pred: Prediction::Intra(IntraMode::Dc),
            planes: vec![Block::new(16, 16), Block::new(8, 8), Block::new(8, 8)],
        };
        let mut enc = CbEncoder::new(cfg.clone()).unwrap();
        enc.set_trace(true);
        let (e, trace) = enc.encode_traced(&inp).unwrap();
        assert!(trace.iter().all(|t| matches!(t.name, "all_zero" | "do_partition" | "fsc_flag")), "{trace:?}");
        let d = CbDecoder::new(cfg).unwrap().decode(&e.record).unwrap();
        assert!(d.planes.iter().all(Block::is_zero));
    }

    #[test]
    fn lossy_reconstruction_is_close_and_shared() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = CodecConfig { base_q_idx: 40, ..Default::default() };
        let mut inputs: Vec<_> = IntraMode::ALL.iter().map(|&m| input(&cfg, &mut rng, 16, 8, Prediction::Intra(m), 3)).collect();
        inputs.push(input(&cfg, &mut rng, 32, 32, Prediction::Inter, 3));
        let (e, _) = round_trip(&cfg, &inputs);
        for (x, i) in e.iter().zip(&inputs) {
            let err = CbEncoder::sse(&x.recon[0], &i.planes[0]) / i.planes[0].data.len() as f64;
            let energy = i.planes[0].data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / i.planes[0].data.len() as f64;
            assert!(err < energy * 0.1 + 16.0, "mse {err} vs energy {energy}");
        }
    }

    #[test]
    fn lossless_intra_fsc_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = CodecConfig { base_q_idx: 0, tools: Tools { lossless: true, fsc: true, ..Default::default() }, ..Default::default() };
        let mut inputs: Vec<_> =
            [IntraMode::Dc, IntraMode::V, IntraMode::H].iter().map(|&m| input(&cfg, &mut rng, 16, 16, Prediction::Intra(m), 3)).collect();
        inputs.push(input(&cfg, &mut rng, 64, 32, Prediction::Inter, 3));
        let (e, d) = round_trip(&cfg, &inputs);
        for ((x, y), i) in e.iter().zip(&d).zip(&inputs) {
            assert_eq!(y.planes, i.planes);
            assert!(x.syntax.lossless_tx.is_some());
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = CodecConfig { tools: Tools { tcq: true, ist: true, cctx: true, ..Default::default() }, ..Default::default() };
        let inp = input(&cfg, &mut rng, 32, 16, Prediction::Intra(IntraMode::D45), 3);
        let a = CbEncoder::new(cfg.clone()).unwrap().encode(&inp).unwrap();
        let b = CbEncoder::new(cfg).unwrap().encode(&inp).unwrap();
        assert_eq!(a.record, b.record);
    }

    #[test]
    fn every_partition_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let cfg = CodecConfig { base_q_idx: 60, ..Default::default() };
        let mut enc = CbEncoder::new(cfg.clone()).unwrap();
        let mut dec = CbDecoder::new(cfg.clone()).unwrap();
        for p in allowed_partitions(64, 64) {
            enc.partition = PartitionChoice::Fixed(p);
            let i = input(&cfg, &mut rng, 64, 64, Prediction::Intra(IntraMode::Smooth), 3);
            let x = enc.encode(&i).unwrap();
            assert_eq!(x.syntax.partition, p);
            assert_eq!(dec.decode(&x.record).unwrap().planes, x.recon);
        }
    }

    #[test]
    fn decoder_rejects_tampered_digest() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = CodecConfig::default();
        let mut x = CbEncoder::new(cfg.clone()).unwrap().encode(&input(&cfg, &mut rng, 8, 8, Prediction::Inter, 1)).unwrap();
        x.record.digest ^= 1;
        assert!(matches!(CbDecoder::new(cfg).unwrap().decode(&x.record), Err(Error::Conformance(_))));
    }

    #[test]
    fn stage_order_inverts() {
        // At a fine step every stage pair must undo the other in reverse order;
        // swapping IST and primary inverses would not come close.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = CodecConfig { base_q_idx: 1, tools: Tools { ist: true, ..Default::default() }, ..Default::default() };
        let i = input(&cfg, &mut rng, 16, 16, Prediction::Intra(IntraMode::D135), 1);
        let (e, _) = round_trip(&cfg, std::slice::from_ref(&i));
        let mse = CbEncoder::sse(&e[0].recon[0], &i.planes[0]) / 256.0;
        assert!(mse < 4.0, "mse {mse}");
    }

    #[test]
    fn container_round_trip_and_errors() {
        let cfg = CodecConfig::default();
        let bytes = container_to_bytes(&cfg, &[]);
        assert_eq!(container_from_bytes(&bytes).unwrap(), (cfg.clone(), vec![]));

        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let records: Vec<BlockRecord> = (0..1000)
            .map(|i| BlockRecord {
                x: (i % 40) as u16 * 16,
                y: (i / 40) as u16 * 8,
                width: 16,
                height: 8,
                planes: if rng.random_bool(0.5) { 1 } else { 3 },
                pred: if rng.random_bool(0.3) {
                    Prediction::Inter
                } else {
                    Prediction::Intra(IntraMode::ALL[rng.random_range(0..13)])
                },
                payload: (0..rng.random_range(0..40)).map(|_| rng.random()).collect(),
                digest: rng.random(),
            })
            .collect();
        let bytes = container_to_bytes(&cfg, &records);
        let (c2, r2) = container_from_bytes(&bytes).unwrap();
        assert_eq!((c2, &r2), (cfg.clone(), &records));
        assert_eq!(container_to_bytes(&cfg, &r2), bytes);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(container_from_bytes(&bad), Err(Error::BadMagic));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert_eq!(container_from_bytes(&bad), Err(Error::UnsupportedVersion(9)));
        assert!(matches!(container_from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Parse { .. })));
    }

    #[test]
    fn config_invariants() {
        let bad = CodecConfig { tools: Tools { lossless: true, ..Default::default() }, base_q_idx: 5, ..Default::default() };
        assert!(bad.validate().is_err());
        let c = CodecConfig { tools: Tools { tcq: true, ph: true, ..Default::default() }, ..Default::default() };
        assert!(c.tcq_active() && !c.ph_active());
        let l = CodecConfig { base_q_idx: 0, tools: Tools { tcq: true, ph: true, lossless: true, ..Default::default() }, ..Default::default() };
        assert!(!l.tcq_active() && !l.ph_active());
        for bits in 0..128u8 {
            assert_eq!(Tools::from_bits(bits).unwrap().to_bits(), bits);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_cbs_round_trip(
            seed in any::<u64>(),
            dims in prop::sample::select(vec![(4usize, 4usize), (8, 8), (16, 4), (4, 16), (32, 8), (8, 32), (16, 16), (64, 16)]),
            mode in 0usize..14,
            bits in 0u8..64,
            q in 0u16..255,
        ) {
            let tools = Tools::from_bits(bits).unwrap();
            let cfg = CodecConfig { base_q_idx: q.max(1), tools, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pred = IntraMode::from_index(mode).map_or(Prediction::Inter, Prediction::Intra);
            let i = input(&cfg, &mut rng, dims.0, dims.1, pred, 3);
            let (e, d) = round_trip(&cfg, std::slice::from_ref(&i));
            prop_assert_eq!(e[0].record.digest, d[0].digest);
        }
    }
}
