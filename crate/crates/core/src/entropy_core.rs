//! Multi-symbol range coder with adaptive 15-bit CDFs.
//!
//! The coder keeps a 32-bit range and a 33-bit low register with carry
//! propagation through a cached byte, renormalizing one byte at a time.
//! Probability adaptation follows the counter-driven shift rule with a
//! per-context PARA offset added to the shift.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};

pub const CDF_BITS: u32 = 15;
pub const CDF_TOP: u16 = 1 << CDF_BITS;
pub const MAX_ALPHABET: usize = 16;
const ALPHAS: [i8; 4] = [0, 1, -1, -2];

/// One context: cumulative distribution, symbol counter and PARA triple.
///
/// `cdf[i]` is the cumulative frequency of symbols `0..=i`, so symbol `i`
/// owns the interval `[cdf[i-1], cdf[i])` with `cdf[-1] = 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CdfEntry {
    cdf: [u16; MAX_ALPHABET],
    m: u8,
    counter: u16,
    para: [i8; 3],
}

impl CdfEntry {
    /// Uniform initialization, `c_i = round((i+1) * 2^15 / M)`.
    pub fn uniform(m: usize) -> Result<Self> {
        check_alphabet(m)?;
        let mut cdf = [0u16; MAX_ALPHABET];
        let top = CDF_TOP as u32;
        for (i, c) in cdf.iter_mut().enumerate().take(m) {
            *c = (((i as u32 + 1) * top + m as u32 / 2) / m as u32) as u16;
        }
        // Rounding cannot collide for M <= 16, but keep the guarantee explicit.
        for i in 1..m {
            if cdf[i] <= cdf[i - 1] {
                cdf[i] = cdf[i - 1] + 1;
            }
        }
        cdf[m - 1] = CDF_TOP;
        Ok(CdfEntry { cdf, m: m as u8, counter: 0, para: [0; 3] })
    }

    pub fn from_cdf(values: &[u16], para: [i8; 3]) -> Result<Self> {
        let m = values.len();
        check_alphabet(m)?;
        for &a in &para {
            check_alpha(a)?;
        }
        if values[m - 1] != CDF_TOP {
            return Err(Error::param("last CDF value must be 32768"));
        }
        if values[0] == 0 || values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("CDF must be strictly increasing from a positive start"));
        }
        let mut cdf = [0u16; MAX_ALPHABET];
        cdf[..m].copy_from_slice(values);
        Ok(CdfEntry { cdf, m: m as u8, counter: 0, para })
    }

    pub fn with_para(mut self, para: [i8; 3]) -> Result<Self> {
        for &a in &para {
            check_alpha(a)?;
        }
        self.para = para;
        Ok(self)
    }

    pub fn cdf(&self) -> &[u16] {
        &self.cdf[..self.m as usize]
    }

    pub fn alphabet(&self) -> usize {
        self.m as usize
    }

    pub fn counter(&self) -> u16 {
        self.counter
    }

    pub fn para(&self) -> [i8; 3] {
        self.para
    }

    fn bounds(&self, s: usize) -> (u32, u32) {
        let lo = if s == 0 { 0 } else { self.cdf[s - 1] as u32 };
        (lo, self.cdf[s] as u32)
    }

    /// Frequency of symbol `s` out of 2^15.
    pub fn freq(&self, s: usize) -> u32 {
        let (lo, hi) = self.bounds(s);
        hi - lo
    }

    /// Invariant check used by tests and debug assertions.
    pub fn is_valid(&self) -> bool {
        let c = self.cdf();
        c.len() >= 2 && c[0] > 0 && c[c.len() - 1] == CDF_TOP && c.windows(2).all(|w| w[0] < w[1])
    }
}

fn check_alphabet(m: usize) -> Result<()> {
    if (2..=MAX_ALPHABET).contains(&m) {
        Ok(())
    } else {
        Err(Error::param(format!("alphabet size {m} outside 2..=16")))
    }
}

fn check_alpha(a: i8) -> Result<()> {
    if ALPHAS.contains(&a) {
        Ok(())
    } else {
        Err(Error::param(format!("PARA offset {a} not in {{0,1,-1,-2}}")))
    }
}

/// `3 + r_C(n) + r_M(M) + alpha`.
pub fn adaptation_shift(n: u16, m: usize, alpha: i8) -> Result<u32> {
    check_alpha(alpha)?;
    if m < 2 {
        return Err(Error::param("alphabet size must be at least 2"));
    }
    let r_c = match n {
        0..=15 => 0,
        16..=31 => 1,
        _ => 2,
    };
    let r_m = if m <= 3 { 1 } else { 2 };
    Ok((3 + r_c + r_m + alpha as i32) as u32)
}

pub fn select_alpha(entry: &CdfEntry) -> i8 {
    match entry.counter {
        0..=15 => entry.para[0],
        16..=31 => entry.para[1],
        _ => entry.para[2],
    }
}

/// Adapt `entry` after coding symbol `k`, with the shift derived from its
/// counter, alphabet and PARA triple.
pub fn update_cdf(entry: &mut CdfEntry, k: usize) -> Result<()> {
    let s = adaptation_shift(entry.counter, entry.alphabet(), select_alpha(entry))?;
    update_cdf_with_shift(entry, k, s)
}

/// The shift rule itself. Values that would collide with a neighbour are
/// clamped so the CDF stays strictly increasing; the clamp only engages once
/// neighbouring frequencies have decayed to a single unit.
pub fn update_cdf_with_shift(entry: &mut CdfEntry, k: usize, s: u32) -> Result<()> {
    let m = entry.alphabet();
    if k >= m {
        return Err(Error::param(format!("symbol {k} outside alphabet of {m}")));
    }
    let top = CDF_TOP as u32;
    let c = &mut entry.cdf;
    for i in (0..k).rev() {
        let v = c[i] as u32;
        let v = v - (v >> s);
        let ceiling = c[i + 1] as u32 - 1;
        c[i] = v.clamp(i as u32 + 1, ceiling) as u16;
    }
    for i in k..m - 1 {
        let v = c[i] as u32;
        let v = v + ((top - v) >> s);
        let floor = if i == 0 { 1 } else { c[i - 1] as u32 + 1 };
        let ceiling = top - (m - 1 - i) as u32;
        c[i] = v.clamp(floor, ceiling) as u16;
    }
    entry.counter = entry.counter.saturating_add(1);
    Ok(())
}

pub type CtxId = usize;

/// A contiguous run of contexts sharing one syntax label and alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Family {
    pub base: CtxId,
    pub count: usize,
    pub alphabet: usize,
}

impl Family {
    pub fn ctx(&self, i: usize) -> CtxId {
        debug_assert!(i < self.count, "context {i} outside family of {}", self.count);
        self.base + i
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ContextBank {
    entries: Vec<CdfEntry>,
    labels: Vec<&'static str>,
}

impl ContextBank {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, label: &'static str, entry: CdfEntry) -> CtxId {
        self.entries.push(entry);
        self.labels.push(label);
        self.entries.len() - 1
    }

    pub fn add_family(&mut self, label: &'static str, count: usize, alphabet: usize) -> Family {
        let base = self.entries.len();
        let init = CdfEntry::uniform(alphabet).expect("family alphabet within 2..=16");
        for _ in 0..count {
            self.push(label, init.clone());
        }
        Family { base, count, alphabet }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entry(&self, id: CtxId) -> &CdfEntry {
        &self.entries[id]
    }

    pub fn entry_mut(&mut self, id: CtxId) -> &mut CdfEntry {
        &mut self.entries[id]
    }

    pub fn label(&self, id: CtxId) -> &'static str {
        self.labels[id]
    }

    pub fn entries(&self) -> impl Iterator<Item = (&'static str, &CdfEntry)> {
        self.labels.iter().copied().zip(self.entries.iter())
    }

    /// Apply one PARA triple to every context carrying `label`.
    pub fn set_para(&mut self, label: &str, para: [i8; 3]) -> Result<usize> {
        let mut n = 0;
        for (l, e) in self.labels.iter().zip(self.entries.iter_mut()) {
            if *l == label {
                *e = e.clone().with_para(para)?;
                n += 1;
            }
        }
        Ok(n)
    }

    /// FNV-1a over every CDF value and counter; equal banks give equal digests.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv1a::new();
        for e in &self.entries {
            for &c in e.cdf() {
                h.write(&c.to_le_bytes());
            }
            h.write(&e.counter.to_le_bytes());
        }
        h.finish()
    }
}

/// 64-bit FNV-1a.
#[derive(Clone, Copy, Debug)]
pub struct Fnv1a(u64);

impl Fnv1a {
    pub fn new() -> Self {
        Fnv1a(0xcbf2_9ce4_8422_2325)
    }

    pub fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }
}

impl Default for Fnv1a {
    fn default() -> Self {
        Self::new()
    }
}

fn cost_table() -> &'static [u32] {
    static TABLE: OnceLock<Vec<u32>> = OnceLock::new();
    TABLE.get_or_init(|| {
        (0..=CDF_TOP as u32)
            .map(|f| {
                if f == 0 {
                    u32::MAX / 4
                } else {
                    ((CDF_BITS as f64 - (f as f64).log2()) * 512.0).round() as u32
                }
            })
            .collect()
    })
}

/// Ideal cost of coding `s` with `entry`, in 1/512 bit.
pub fn symbol_cost_q9(entry: &CdfEntry, s: usize) -> u32 {
    cost_table()[entry.freq(s) as usize]
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceEvent {
    pub name: &'static str,
    pub ctx: Option<CtxId>,
    pub symbol: u32,
    pub millibits: u32,
}

impl fmt::Display for TraceEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.ctx {
            Some(c) => write!(f, "{} ctx={} sym={} bits={}", self.name, c, self.symbol, self.millibits),
            None => write!(f, "{} ctx=- sym={} bits={}", self.name, self.symbol, self.millibits),
        }
    }
}

const RANGE_MIN: u32 = 1 << 24;

pub struct Encoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    cost_q9: u64,
    trace: Option<Vec<TraceEvent>>,
    by_label: BTreeMap<&'static str, u64>,
}

impl Default for Encoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Encoder {
    pub fn new() -> Self {
        Encoder {
            low: 0,
            range: u32::MAX,
            cache: 0,
            cache_size: 1,
            out: Vec::new(),
            cost_q9: 0,
            trace: None,
            by_label: BTreeMap::new(),
        }
    }

    pub fn with_trace() -> Self {
        let mut e = Self::new();
        e.trace = Some(Vec::new());
        e
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            loop {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    fn normalize(&mut self) {
        while self.range < RANGE_MIN {
            self.range <<= 8;
            self.shift_low();
        }
    }

    fn code_interval(&mut self, lo: u32, hi: u32) {
        let r = self.range >> CDF_BITS;
        self.low += (r * lo) as u64;
        self.range = r * (hi - lo);
        self.normalize();
    }

    /// Code `s` with `entry` and adapt the entry.
    pub fn encode_symbol(&mut self, entry: &mut CdfEntry, s: usize) -> Result<()> {
        if s >= entry.alphabet() {
            return Err(Error::param(format!("symbol {s} outside alphabet {}", entry.alphabet())));
        }
        let (lo, hi) = entry.bounds(s);
        self.cost_q9 += symbol_cost_q9(entry, s) as u64;
        self.code_interval(lo, hi);
        update_cdf(entry, s)
    }

    /// Code `s` with context `ctx` of `bank`, recording trace and stats.
    pub fn encode(&mut self, bank: &mut ContextBank, ctx: CtxId, s: usize) -> Result<()> {
        let cost = if s < bank.entry(ctx).alphabet() { symbol_cost_q9(bank.entry(ctx), s) } else { 0 };
        self.encode_symbol(bank.entry_mut(ctx), s)?;
        self.note(bank.label(ctx), Some(ctx), s as u32, cost);
        Ok(())
    }

    pub fn encode_bypass(&mut self, value: u32, nbits: u32) {
        debug_assert!(nbits <= 32);
        debug_assert!(nbits == 32 || value >> nbits == 0);
        for i in (0..nbits).rev() {
            let r = self.range >> 1;
            if (value >> i) & 1 == 1 {
                self.low += r as u64;
            }
            self.range = r;
            self.normalize();
        }
        self.cost_q9 += nbits as u64 * 512;
    }

    /// Bypass bits that show up in the trace under `name`.
    pub fn encode_literal(&mut self, name: &'static str, value: u32, nbits: u32) {
        if nbits == 0 {
            return;
        }
        self.encode_bypass(value, nbits);
        self.note(name, None, value, nbits * 512);
    }

    fn note(&mut self, name: &'static str, ctx: Option<CtxId>, symbol: u32, cost_q9: u32) {
        *self.by_label.entry(name).or_default() += cost_q9 as u64;
        if let Some(t) = self.trace.as_mut() {
            let millibits = ((cost_q9 as u64 * 1000 + 256) / 512) as u32;
            t.push(TraceEvent { name, ctx, symbol, millibits });
        }
    }

    /// Accumulated ideal cost in 1/512 bit.
    pub fn cost_q9(&self) -> u64 {
        self.cost_q9
    }

    pub fn trace(&self) -> Option<&[TraceEvent]> {
        self.trace.as_deref()
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Ideal cost per syntax label, in 1/512 bit.
    pub fn cost_by_label(&self) -> &BTreeMap<&'static str, u64> {
        &self.by_label
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct Decoder<'a> {
    code: u32,
    range: u32,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(data: &'a [u8]) -> Result<Self> {
        let mut d = Decoder { code: 0, range: u32::MAX, data, pos: 0 };
        for _ in 0..5 {
            let b = d.next_byte()?;
            d.code = (d.code << 8) | b as u32;
        }
        Ok(d)
    }

    fn next_byte(&mut self) -> Result<u8> {
        let b = *self.data.get(self.pos).ok_or(Error::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn normalize(&mut self) -> Result<()> {
        while self.range < RANGE_MIN {
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte()? as u32;
        }
        Ok(())
    }

    pub fn decode_symbol(&mut self, entry: &mut CdfEntry) -> Result<usize> {
        let r = self.range >> CDF_BITS;
        let v = self.code / r;
        if v >= CDF_TOP as u32 {
            return Err(Error::conformance("arithmetic code value outside the coding interval"));
        }
        let s = entry.cdf().iter().position(|&c| (c as u32) > v).expect("top value is 2^15");
        let (lo, hi) = entry.bounds(s);
        self.code -= r * lo;
        self.range = r * (hi - lo);
        self.normalize()?;
        update_cdf(entry, s)?;
        Ok(s)
    }

    pub fn decode(&mut self, bank: &mut ContextBank, ctx: CtxId) -> Result<usize> {
        self.decode_symbol(bank.entry_mut(ctx))
    }

    pub fn decode_bypass(&mut self, nbits: u32) -> Result<u32> {
        let mut v = 0u32;
        for _ in 0..nbits {
            let r = self.range >> 1;
            let bit = self.code >= r;
            if bit {
                self.code -= r;
            }
            self.range = r;
            self.normalize()?;
            v = (v << 1) | bit as u32;
        }
        Ok(v)
    }

    /// Bytes consumed so far.
    pub fn position(&self) -> usize {
        self.pos
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct MemoryReport {
    pub entries: usize,
    pub ram_bytes: usize,
    pub rom_bytes: usize,
}

/// RAM: 2 bytes per stored CDF value plus a 2-byte counter per context.
/// ROM: the initialization table, 2 bytes per value plus one byte per PARA offset.
pub fn cdf_memory_report(bank: &ContextBank) -> MemoryReport {
    let mut r = MemoryReport::default();
    for (_, e) in bank.entries() {
        r.entries += 1;
        r.ram_bytes += e.alphabet() * 2 + 2;
        r.rom_bytes += e.alphabet() * 2 + 3;
    }
    r
}

impl MemoryReport {
    /// Per-label breakdown followed by the totals, as a plain text table.
    pub fn table(bank: &ContextBank) -> String {
        let mut rows: BTreeMap<&str, (usize, usize, usize)> = BTreeMap::new();
        for (label, e) in bank.entries() {
            let row = rows.entry(label).or_default();
            row.0 += 1;
            row.1 += e.alphabet() * 2 + 2;
            row.2 += e.alphabet() * 2 + 3;
        }
        let mut s = String::from(
            "# layout: 2 B per CDF value, 2 B counter (RAM); 2 B per value + 1 B per PARA offset (ROM)\n",
        );
        s.push_str(&format!("{:<24} {:>8} {:>10} {:>10}\n", "syntax", "contexts", "ram_bytes", "rom_bytes"));
        for (label, (n, ram, rom)) in &rows {
            s.push_str(&format!("{label:<24} {n:>8} {ram:>10} {rom:>10}\n"));
        }
        let t = cdf_memory_report(bank);
        s.push_str(&format!("{:<24} {:>8} {:>10} {:>10}\n", "total", t.entries, t.ram_bytes, t.rom_bytes));
        s
    }
}

/// One interface over both coding directions, so each syntax element is
/// written once. The encoder codes `value` and returns it; the decoder
/// ignores `value` and returns what it reads.
pub trait SymbolCoder {
    fn is_encoder(&self) -> bool;
    fn symbol(&mut self, bank: &mut ContextBank, ctx: CtxId, value: usize) -> Result<usize>;
    /// Bypass bits, traced under `name` on the encoder side.
    fn literal(&mut self, name: &'static str, value: u32, nbits: u32) -> Result<u32>;
}

impl SymbolCoder for Encoder {
    fn is_encoder(&self) -> bool {
        true
    }

    fn symbol(&mut self, bank: &mut ContextBank, ctx: CtxId, value: usize) -> Result<usize> {
        self.encode(bank, ctx, value)?;
        Ok(value)
    }

    fn literal(&mut self, name: &'static str, value: u32, nbits: u32) -> Result<u32> {
        self.encode_literal(name, value, nbits);
        Ok(value)
    }
}

impl SymbolCoder for Decoder<'_> {
    fn is_encoder(&self) -> bool {
        false
    }

    fn symbol(&mut self, bank: &mut ContextBank, ctx: CtxId, _value: usize) -> Result<usize> {
        self.decode(bank, ctx)
    }

    fn literal(&mut self, _name: &'static str, _value: u32, nbits: u32) -> Result<u32> {
        self.decode_bypass(nbits)
    }
}

/// Rate estimation with the current probabilities: codes nothing and leaves
/// the bank untouched, accumulating cost in 1/512 bit.
#[derive(Clone, Debug, Default)]
pub struct CostEstimator {
    pub cost_q9: u64,
}

impl SymbolCoder for CostEstimator {
    fn is_encoder(&self) -> bool {
        true
    }

    fn symbol(&mut self, bank: &mut ContextBank, ctx: CtxId, value: usize) -> Result<usize> {
        let e = bank.entry(ctx);
        if value >= e.alphabet() {
            return Err(Error::param(format!("symbol {value} outside alphabet {}", e.alphabet())));
        }
        self.cost_q9 += symbol_cost_q9(e, value) as u64;
        Ok(value)
    }

    fn literal(&mut self, _name: &'static str, value: u32, nbits: u32) -> Result<u32> {
        self.cost_q9 += 512 * nbits as u64;
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn shift_examples() {
        assert_eq!(adaptation_shift(10, 2, 0).unwrap(), 4);
        assert_eq!(adaptation_shift(40, 8, -2).unwrap(), 5);
        assert_eq!(adaptation_shift(16, 3, 1).unwrap(), 6);
        assert!(adaptation_shift(10, 2, 2).is_err());
    }

    #[test]
    fn alpha_intervals() {
        let mut e = CdfEntry::uniform(4).unwrap().with_para([1, 0, -1]).unwrap();
        assert_eq!(select_alpha(&e), 1);
        e.counter = 31;
        assert_eq!(select_alpha(&e), 0);
        e.counter = 32;
        assert_eq!(select_alpha(&e), -1);
        let mut z = CdfEntry::uniform(4).unwrap();
        z.counter = 100;
        assert_eq!(select_alpha(&z), 0);
    }

    #[test]
    fn update_examples() {
        let mut e = CdfEntry::from_cdf(&[16384, 32768], [0; 3]).unwrap();
        update_cdf_with_shift(&mut e, 0, 4).unwrap();
        assert_eq!(e.cdf(), &[17408, 32768]);
        assert_eq!(e.counter(), 1);

        let mut e = CdfEntry::from_cdf(&[8192, 16384, 24576, 32768], [0; 3]).unwrap();
        update_cdf_with_shift(&mut e, 3, 5).unwrap();
        assert_eq!(e.cdf(), &[7936, 15872, 23808, 32768]);

        assert!(update_cdf_with_shift(&mut e, 4, 5).is_err());
    }

    #[test]
    fn uniform_init() {
        assert_eq!(CdfEntry::uniform(2).unwrap().cdf(), &[16384, 32768]);
        assert_eq!(CdfEntry::uniform(3).unwrap().cdf(), &[10923, 21845, 32768]);
        for m in 2..=16 {
            assert!(CdfEntry::uniform(m).unwrap().is_valid());
        }
        assert!(CdfEntry::uniform(1).is_err());
        assert!(CdfEntry::uniform(17).is_err());
    }

    #[test]
    fn counter_saturates() {
        let mut e = CdfEntry::uniform(2).unwrap();
        e.counter = u16::MAX;
        update_cdf(&mut e, 1).unwrap();
        assert_eq!(e.counter(), u16::MAX);
    }

    #[test]
    fn alternating_round_trip() {
        let symbols: Vec<usize> = (0..200).map(|i| i % 2).collect();
        let mut enc = Encoder::new();
        let mut e = CdfEntry::uniform(2).unwrap();
        for &s in &symbols {
            enc.encode_symbol(&mut e, s).unwrap();
        }
        let bytes = enc.finish();
        let mut d = CdfEntry::uniform(2).unwrap();
        let mut dec = Decoder::new(&bytes).unwrap();
        let got: Vec<usize> = symbols.iter().map(|_| dec.decode_symbol(&mut d).unwrap()).collect();
        assert_eq!(got, symbols);
        assert_eq!(d, e);
    }

    #[test]
    fn truncated_stream_errors() {
        let mut enc = Encoder::new();
        let mut e = CdfEntry::uniform(2).unwrap();
        for i in 0..2000 {
            enc.encode_symbol(&mut e, (i * 7 / 3) % 2).unwrap();
        }
        let bytes = enc.finish();
        let cut = &bytes[..bytes.len() / 2];
        let mut d = CdfEntry::uniform(2).unwrap();
        let mut dec = Decoder::new(cut).unwrap();
        let r: Result<Vec<usize>> = (0..2000).map(|_| dec.decode_symbol(&mut d)).collect();
        assert_eq!(r.unwrap_err(), Error::Truncated);
        assert_eq!(Decoder::new(&[0, 1]).err(), Some(Error::Truncated));
    }

    #[test]
    fn deterministic_source_is_cheap() {
        let mut enc = Encoder::new();
        let mut e = CdfEntry::uniform(2).unwrap();
        for _ in 0..10_000 {
            enc.encode_symbol(&mut e, 0).unwrap();
        }
        let bytes = enc.finish();
        let bps = bytes.len() as f64 * 8.0 / 10_000.0;
        assert!(bps < 0.02, "{bps} bits/symbol");
    }

    #[test]
    fn bypass_examples() {
        let mut enc = Encoder::new();
        enc.encode_bypass(5, 3);
        enc.encode_bypass(0, 1);
        assert_eq!(enc.cost_q9(), 4 * 512);
        let bytes = enc.finish();
        let mut dec = Decoder::new(&bytes).unwrap();
        assert_eq!(dec.decode_bypass(3).unwrap(), 5);
        assert_eq!(dec.decode_bypass(1).unwrap(), 0);
    }

    #[test]
    fn memory_report_examples() {
        assert_eq!(cdf_memory_report(&ContextBank::new()), MemoryReport::default());
        let mut b = ContextBank::new();
        b.push("x", CdfEntry::uniform(4).unwrap());
        let r = cdf_memory_report(&b);
        assert_eq!((r.entries, r.ram_bytes, r.rom_bytes), (1, 10, 11));
    }

    fn arb_entry() -> impl Strategy<Value = CdfEntry> {
        (2usize..=16, prop::array::uniform3(prop::sample::select(ALPHAS.to_vec())))
            .prop_map(|(m, p)| CdfEntry::uniform(m).unwrap().with_para(p).unwrap())
    }

    proptest! {
        #[test]
        fn invariants_hold_after_updates(e in arb_entry(), ks in prop::collection::vec(0usize..16, 1..400)) {
            let mut e = e;
            let m = e.alphabet();
            for k in ks {
                update_cdf(&mut e, k % m).unwrap();
                prop_assert!(e.is_valid(), "{:?}", e.cdf());
            }
        }

        #[test]
        fn skewed_updates_keep_invariants(m in 2usize..=16, k in 0usize..16, s in 1u32..8, n in 1usize..3000) {
            let mut e = CdfEntry::uniform(m).unwrap();
            for _ in 0..n {
                update_cdf_with_shift(&mut e, k % m, s).unwrap();
            }
            prop_assert!(e.is_valid(), "{:?}", e.cdf());
        }

        #[test]
        fn faster_alpha_moves_further(e in arb_entry(), warm in prop::collection::vec(0usize..16, 0..60), k in 0usize..16) {
            let mut e = e;
            let m = e.alphabet();
            for w in warm {
                update_cdf(&mut e, w % m).unwrap();
            }
            let k = k % m;
            let base = e.cdf().to_vec();
            let mut prev: Option<Vec<u32>> = None;
            // alpha = -2, -1, 0, 1 gives non-decreasing shifts
            for alpha in [-2i8, -1, 0, 1] {
                let s = adaptation_shift(e.counter(), m, alpha).unwrap();
                let mut t = e.clone();
                update_cdf_with_shift(&mut t, k, s).unwrap();
                let delta: Vec<u32> = t.cdf().iter().zip(&base).map(|(a, b)| (*a as i32 - *b as i32).unsigned_abs()).collect();
                if let Some(p) = &prev {
                    for (a, b) in p.iter().zip(&delta) {
                        prop_assert!(a >= b);
                    }
                }
                prev = Some(delta);
            }
        }

        #[test]
        fn mixed_stream_round_trips(ops in prop::collection::vec((0u8..3, 0u32..1 << 20, 1u32..21, 0usize..16), 1..300)) {
            let mut bank = ContextBank::new();
            for m in 2..=16 {
                bank.push("t", CdfEntry::uniform(m).unwrap().with_para([(m % 2) as i8, -1, -2]).unwrap());
            }
            let mut enc = Encoder::new();
            let mut eb = bank.clone();
            for &(kind, v, nbits, ctx) in &ops {
                if kind == 0 {
                    enc.encode_bypass(v & ((1 << nbits) - 1), nbits);
                } else {
                    let ctx = ctx % eb.len();
                    let m = eb.entry(ctx).alphabet();
                    enc.encode(&mut eb, ctx, v as usize % m).unwrap();
                }
            }
            let bytes = enc.finish();
            let mut db = bank.clone();
            let mut dec = Decoder::new(&bytes).unwrap();
            for &(kind, v, nbits, ctx) in &ops {
                if kind == 0 {
                    prop_assert_eq!(dec.decode_bypass(nbits).unwrap(), v & ((1 << nbits) - 1));
                } else {
                    let ctx = ctx % db.len();
                    let m = db.entry(ctx).alphabet();
                    prop_assert_eq!(dec.decode(&mut db, ctx).unwrap(), v as usize % m);
                }
            }
            prop_assert_eq!(eb.digest(), db.digest());
            prop_assert_eq!(eb, db);
        }
    }

    #[test]
    fn repeated_low_symbol_raises_c0_and_high_symbol_lowers_it() {
        let s = 4;
        let mut up = CdfEntry::uniform(4).unwrap();
        let mut down = CdfEntry::uniform(4).unwrap();
        let mut prev_up = up.cdf()[0];
        let mut prev_down = down.cdf()[0];
        for _ in 0..500 {
            update_cdf_with_shift(&mut up, 0, s).unwrap();
            update_cdf_with_shift(&mut down, 3, s).unwrap();
            assert!(up.cdf()[0] >= prev_up);
            assert!(down.cdf()[0] <= prev_down);
            assert!(down.cdf()[0] > 0);
            if prev_down >= 1 << s {
                assert!(down.cdf()[0] < prev_down);
            }
            prev_up = up.cdf()[0];
            prev_down = down.cdf()[0];
        }
        assert!(prev_up > 32000);
        assert!(prev_down < 1 << s);
    }
}
