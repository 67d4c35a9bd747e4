//! Trellis-coded quantization (TCQ).
//!
//! Two scalar quantizers share the zero level: Q0 reconstructs at integer
//! multiples of the step, Q1 at odd multiples of half a step. An 8-state
//! machine driven by the parity of each coded level picks the quantizer for
//! the next coefficient. States advance in coding order, which is reverse
//! scan starting at the last significant coefficient, and reset to state 0
//! at the start of every block.
//!
//! The encoder searches levels and the end-of-block position jointly with a
//! Viterbi pass over nine states (the eight machine states plus "nothing
//! coded yet") followed by a backtracking pass.
//!
//! Costs are fixed point: `J = D * 2^17 + lambda_q8 * R_q9`, with `D` the
//! squared coefficient error, `lambda_q8` in 1/256 and rates in 1/512 bit.

use crate::error::{Error, Result};
use crate::quantizer::{Dequantized, MAX_LEVEL, QM_UNIT};
use crate::types::Plane;

pub const STATES: usize = 8;
pub const RESET_STATE: u8 = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quantizer {
    Q0,
    Q1,
}

impl Quantizer {
    pub fn index(self) -> usize {
        self as usize
    }
}

/// Next-state table indexed by `[state][parity]`. Even states use Q0, odd
/// states Q1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TcqTable {
    next: [[u8; 2]; STATES],
}

impl Default for TcqTable {
    fn default() -> Self {
        TcqTable { next: [[0, 2], [5, 7], [1, 3], [6, 4], [2, 0], [4, 6], [3, 1], [7, 5]] }
    }
}

impl TcqTable {
    /// Validates that every entry is a state and each state has two distinct successors.
    pub fn new(next: [[u8; 2]; STATES]) -> Result<Self> {
        for (s, row) in next.iter().enumerate() {
            if row.iter().any(|&n| n as usize >= STATES) || row[0] == row[1] {
                return Err(Error::param(format!("TCQ state {s} has invalid successors {row:?}")));
            }
        }
        Ok(TcqTable { next })
    }

    pub fn rows(&self) -> &[[u8; 2]; STATES] {
        &self.next
    }

    pub fn next_state(&self, state: u8, parity: u32) -> u8 {
        self.next[state as usize][(parity & 1) as usize]
    }

    pub fn quantizer_of(&self, state: u8) -> Quantizer {
        if state & 1 == 0 {
            Quantizer::Q0
        } else {
            Quantizer::Q1
        }
    }

    /// Quantizer per scan position for levels given in scan order, replaying
    /// the machine the way a decoder does. Positions at or past `eob` get Q0.
    pub fn replay(&self, levels: &[i32], eob: usize) -> Vec<Quantizer> {
        let mut out = vec![Quantizer::Q0; levels.len()];
        let mut state = RESET_STATE;
        for i in (0..eob).rev() {
            out[i] = self.quantizer_of(state);
            state = self.next_state(state, levels[i].unsigned_abs());
        }
        out
    }
}

/// Reconstruction in step units: Q0 `level * QStep`, Q1 `(2 level - 1) * QStep / 2`.
pub fn tcq_reconstruct(level: u32, q: Quantizer, qstep: u32) -> i64 {
    match (q, level) {
        (_, 0) => 0,
        (Quantizer::Q0, l) => l as i64 * qstep as i64,
        (Quantizer::Q1, l) => ((2 * l as i64 - 1) * qstep as i64) >> 1,
    }
}

fn half_steps(level: u32, q: Quantizer) -> u64 {
    match (q, level) {
        (_, 0) => 0,
        (Quantizer::Q0, l) => 2 * l as u64,
        (Quantizer::Q1, l) => 2 * l as u64 - 1,
    }
}

/// Decoder-side dequantization of a TCQ level, matching the scalar
/// dequantizer exactly under Q0.
pub fn tcq_dequantize(level: i32, q: Quantizer, qstep: u32, weight: u32, bit_depth: u8) -> Dequantized {
    let mag = (half_steps(level.unsigned_abs(), q) * qstep as u64 * weight as u64) >> 11;
    let lim = 1i64 << (7 + bit_depth as u32);
    let v = if level < 0 { -(mag as i64) } else { mag as i64 };
    let c = v.clamp(-lim, lim - 1);
    Dequantized { value: c as i32, clipped: c != v }
}

/// TCQ runs on luma blocks with a 2D scan outside forward skip coding, when
/// enabled for the frame.
pub fn tcq_applicability(plane: Plane, scan_2d: bool, fsc: bool, enabled: bool) -> bool {
    enabled && plane.is_luma() && scan_2d && !fsc
}

/// `lambda = scale * (QStep / 32)^2` in 1/256 units.
pub fn lambda_q8(qstep: u32, scale: f64) -> u64 {
    let d = qstep as f64 / 32.0;
    ((scale * d * d * 256.0).round() as u64).max(1)
}

/// Rate of coding decisions in 1/512 bit. Positions are scan indices.
pub trait RateModel {
    /// Cost of `level` (magnitude, sign included when nonzero) at `pos`.
    /// `last` marks the end-of-block coefficient, which is never zero.
    fn level_cost(&self, pos: usize, q: Quantizer, level: u32, last: bool) -> u32;
    fn eob_cost(&self, eob: usize) -> u32;
    fn zero_block_cost(&self) -> u32;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Candidates {
    /// `{n - 1, n, n + 1, 0}` around the nearest level `n` of each quantizer.
    Pruned,
    /// Every level `0..=max`.
    Full(u32),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrellisParams<'a> {
    pub qstep: u32,
    /// Step at scan position 0, which may carry a DC delta.
    pub dc_qstep: u32,
    /// Quantization weight per scan position.
    pub weights: &'a [u32],
    pub lambda_q8: u64,
    pub bit_depth: u8,
    pub candidates: Candidates,
    pub table: TcqTable,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrellisResult {
    /// Signed levels in scan order.
    pub levels: Vec<i32>,
    pub eob: usize,
    pub final_state: u8,
    pub cost: i128,
}

struct Ctx<'p, 'a, R> {
    p: &'p TrellisParams<'a>,
    coeffs: &'p [i32],
    rate: &'p R,
}

impl<R: RateModel> Ctx<'_, '_, R> {
    fn step(&self, pos: usize) -> u32 {
        if pos == 0 {
            self.p.dc_qstep
        } else {
            self.p.qstep
        }
    }

    fn recon(&self, pos: usize, q: Quantizer, level: u32) -> i64 {
        tcq_dequantize(level as i32, q, self.step(pos), self.p.weights[pos], self.p.bit_depth).value as i64
    }

    fn dist(&self, pos: usize, q: Quantizer, level: u32) -> i128 {
        let e = self.coeffs[pos].unsigned_abs() as i64 - self.recon(pos, q, level);
        (e as i128 * e as i128) << 17
    }

    fn bits(&self, q9: u32) -> i128 {
        self.p.lambda_q8 as i128 * q9 as i128
    }

    /// Level whose reconstruction is closest to `|c|`; ties go to the lower level.
    fn nearest(&self, pos: usize, q: Quantizer) -> u32 {
        let mag = self.coeffs[pos].unsigned_abs() as i64;
        let step = (self.step(pos) as i64 * self.p.weights[pos] as i64).max(1);
        // Position in half steps, then the level whose reconstruction brackets it.
        let est = (((mag << 11) / step + 1) / 2).clamp(0, MAX_LEVEL as i64 - 1) as u32;
        let lo = est.saturating_sub(2);
        let hi = (est + 2).min(MAX_LEVEL - 1);
        (lo..=hi).min_by_key(|&l| ((mag - self.recon(pos, q, l)).abs(), l)).unwrap_or(0)
    }

    fn candidates(&self, pos: usize, q: Quantizer) -> Vec<u32> {
        match self.p.candidates {
            Candidates::Full(max) => (0..=max).collect(),
            Candidates::Pruned => {
                let n = self.nearest(pos, q);
                let mut v = vec![0, n.saturating_sub(1), n, (n + 1).min(MAX_LEVEL - 1)];
                v.sort_unstable();
                v.dedup();
                v
            }
        }
    }

    /// Last scan position where any candidate could be nonzero with a
    /// reconstruction no farther from the coefficient than zero.
    fn start(&self) -> Option<usize> {
        match self.p.candidates {
            Candidates::Full(_) => self.coeffs.len().checked_sub(1),
            Candidates::Pruned => (0..self.coeffs.len()).rev().find(|&i| self.nearest(i, Quantizer::Q1) > 0),
        }
    }

    fn signed(&self, pos: usize, level: u32) -> i32 {
        if self.coeffs[pos] < 0 {
            -(level as i32)
        } else {
            level as i32
        }
    }
}

/// Cost of an arbitrary level assignment (signed levels in scan order) under
/// the model the trellis minimizes.
pub fn path_cost<R: RateModel>(coeffs: &[i32], levels: &[i32], p: &TrellisParams, rate: &R) -> i128 {
    let ctx = Ctx { p, coeffs, rate };
    let eob = levels.iter().rposition(|&l| l != 0).map_or(0, |i| i + 1);
    let mut j: i128 = (eob..coeffs.len()).map(|i| ctx.dist(i, Quantizer::Q0, 0)).sum();
    if eob == 0 {
        return j + ctx.bits(rate.zero_block_cost());
    }
    j += ctx.bits(rate.eob_cost(eob));
    let mut state = RESET_STATE;
    for i in (0..eob).rev() {
        let q = p.table.quantizer_of(state);
        let l = levels[i].unsigned_abs();
        j += ctx.dist(i, q, l) + ctx.bits(rate.level_cost(i, q, l, i + 1 == eob));
        state = p.table.next_state(state, l);
    }
    j
}

const START: usize = STATES;
/// Backpointer marking the end-of-block coefficient.
const BEGIN: u8 = STATES as u8 + 1;

/// Viterbi search over levels and end-of-block position.
pub fn trellis_quantize<R: RateModel>(coeffs: &[i32], p: &TrellisParams, rate: &R) -> TrellisResult {
    assert_eq!(coeffs.len(), p.weights.len(), "one weight per coefficient");
    let ctx = Ctx { p, coeffs, rate };
    let Some(start) = ctx.start() else {
        return all_zero(&ctx);
    };
    let tail: i128 = (start + 1..coeffs.len()).map(|i| ctx.dist(i, Quantizer::Q0, 0)).sum();

    const INF: i128 = i128::MAX / 4;
    let mut cost = [INF; STATES + 1];
    cost[START] = tail;
    // back[k][s] = (previous state, level) for the transition into s at position k.
    let mut back = vec![[(u8::MAX, 0u32); STATES + 1]; start + 1];

    for k in (0..=start).rev() {
        let mut next = [INF; STATES + 1];
        let cands = [ctx.candidates(k, Quantizer::Q0), ctx.candidates(k, Quantizer::Q1)];
        let mut relax = |to: usize, j: i128, from: usize, level: u32, next: &mut [i128; STATES + 1]| {
            if j < next[to] {
                next[to] = j;
                back[k][to] = (from as u8, level);
            }
        };
        if cost[START] < INF {
            relax(START, cost[START] + ctx.dist(k, Quantizer::Q0, 0), START, 0, &mut next);
            let q = p.table.quantizer_of(RESET_STATE);
            let eob_bits = rate.eob_cost(k + 1);
            for &l in cands[q.index()].iter().filter(|&&l| l > 0) {
                let j = cost[START] + ctx.dist(k, q, l) + ctx.bits(eob_bits + rate.level_cost(k, q, l, true));
                relax(p.table.next_state(RESET_STATE, l) as usize, j, BEGIN as usize, l, &mut next);
            }
        }
        for s in 0..STATES {
            if cost[s] >= INF {
                continue;
            }
            let q = p.table.quantizer_of(s as u8);
            for &l in &cands[q.index()] {
                let j = cost[s] + ctx.dist(k, q, l) + ctx.bits(rate.level_cost(k, q, l, false));
                relax(p.table.next_state(s as u8, l) as usize, j, s, l, &mut next);
            }
        }
        cost = next;
    }

    let zero_total = cost[START] + ctx.bits(rate.zero_block_cost());
    let (best, best_cost) = (0..STATES).map(|s| (s, cost[s])).min_by_key(|&(s, c)| (c, s)).expect("eight states");
    if zero_total <= best_cost {
        return all_zero(&ctx);
    }

    let mut levels = vec![0i32; coeffs.len()];
    let mut s = best;
    let mut eob = 0;
    for (k, row) in back.iter().enumerate() {
        let (from, l) = row[s];
        levels[k] = ctx.signed(k, l);
        if from == BEGIN {
            eob = k + 1;
            break;
        }
        s = from as usize;
    }
    debug_assert!(eob > 0);
    TrellisResult { levels, eob, final_state: best as u8, cost: best_cost }
}

fn all_zero<R: RateModel>(ctx: &Ctx<'_, '_, R>) -> TrellisResult {
    let levels = vec![0; ctx.coeffs.len()];
    let cost = path_cost(ctx.coeffs, &levels, ctx.p, ctx.rate);
    TrellisResult { levels, eob: 0, final_state: RESET_STATE, cost }
}

/// Reference encoder: nearest reconstruction per position under the state
/// machine, starting from the last position where that is nonzero.
pub fn greedy_quantize<R: RateModel>(coeffs: &[i32], p: &TrellisParams, rate: &R) -> TrellisResult {
    let ctx = Ctx { p, coeffs, rate };
    let mut levels = vec![0i32; coeffs.len()];
    let first = (0..coeffs.len()).rev().find(|&i| ctx.nearest(i, p.table.quantizer_of(RESET_STATE)) > 0);
    let mut state = RESET_STATE;
    if let Some(first) = first {
        for i in (0..=first).rev() {
            let l = ctx.nearest(i, p.table.quantizer_of(state));
            levels[i] = ctx.signed(i, l);
            state = p.table.next_state(state, l);
        }
    }
    let eob = levels.iter().rposition(|&l| l != 0).map_or(0, |i| i + 1);
    let final_state = p.table.replay_state(&levels, eob);
    TrellisResult { cost: path_cost(coeffs, &levels, p, rate), levels, eob, final_state }
}

impl TcqTable {
    /// State after coding the first `eob` levels in coding order.
    pub fn replay_state(&self, levels: &[i32], eob: usize) -> u8 {
        (0..eob).rev().fold(RESET_STATE, |s, i| self.next_state(s, levels[i].unsigned_abs()))
    }
}

/// Flat weights for blocks without a quantization matrix.
pub fn unit_weights(n: usize) -> Vec<u32> {
    vec![QM_UNIT; n]
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Synthetic additive rate model: positions further down the scan and
    /// larger levels cost more; Q1 levels are slightly cheaper.
    pub struct ToyRate;

    impl RateModel for ToyRate {
        fn level_cost(&self, pos: usize, q: Quantizer, level: u32, last: bool) -> u32 {
            let base = if level == 0 { 160 } else { 700 + 380 * level.min(12) + 90 * (pos as u32 % 5) };
            let base = if q == Quantizer::Q1 { base - base / 8 } else { base };
            if last {
                base + 64
            } else {
                base
            }
        }

        fn eob_cost(&self, eob: usize) -> u32 {
            300 + 200 * (usize::BITS - eob.leading_zeros())
        }

        fn zero_block_cost(&self) -> u32 {
            40
        }
    }

    pub fn params(weights: &[u32], qstep: u32, candidates: Candidates) -> TrellisParams<'_> {
        TrellisParams {
            qstep,
            dc_qstep: qstep,
            weights,
            lambda_q8: lambda_q8(qstep, 0.12),
            bit_depth: 10,
            candidates,
            table: TcqTable::default(),
        }
    }

    #[test]
    fn table_shape() {
        let t = TcqTable::default();
        for s in 0..8u8 {
            assert_ne!(t.next_state(s, 0), t.next_state(s, 1));
        }
        assert_eq!(t.quantizer_of(0), Quantizer::Q0);
        assert_eq!(t.quantizer_of(3), Quantizer::Q1);
        // Every state is reachable from the reset state.
        let mut seen = [false; 8];
        let mut stack = vec![0u8];
        while let Some(s) = stack.pop() {
            if !std::mem::replace(&mut seen[s as usize], true) {
                stack.extend([t.next_state(s, 0), t.next_state(s, 1)]);
            }
        }
        assert!(seen.iter().all(|&b| b));
        assert!(TcqTable::new([[0, 0]; 8]).is_err());
        // Even parities walk a fixed cycle.
        let walk: Vec<u8> = (0..4).scan(0u8, |s, _| {
            *s = t.next_state(*s, 0);
            Some(*s)
        }).collect();
        assert_eq!(walk, vec![0, 0, 0, 0]);
    }

    #[test]
    fn reconstruction_points() {
        assert_eq!(tcq_reconstruct(0, Quantizer::Q1, 64), 0);
        assert_eq!(tcq_reconstruct(2, Quantizer::Q0, 64), 128);
        assert_eq!(tcq_reconstruct(2, Quantizer::Q1, 64), 96);
        // Q0 matches the scalar dequantizer.
        for l in [-9, -1, 0, 1, 5, 300] {
            let a = tcq_dequantize(l, Quantizer::Q0, 77, 40, 10);
            assert_eq!(a, crate::quantizer::dequantize(l, 77, 40, 10));
        }
        assert_eq!(tcq_dequantize(2, Quantizer::Q1, 64, QM_UNIT, 8).value, 3);
    }

    #[test]
    fn applicability() {
        assert!(tcq_applicability(Plane::Y, true, false, true));
        assert!(!tcq_applicability(Plane::U, true, false, true));
        assert!(!tcq_applicability(Plane::Y, false, false, true));
        assert!(!tcq_applicability(Plane::Y, true, true, true));
        assert!(!tcq_applicability(Plane::Y, true, false, false));
    }

    #[test]
    fn zero_input() {
        let w = unit_weights(16);
        let r = trellis_quantize(&[0; 16], &params(&w, 64, Candidates::Pruned), &ToyRate);
        assert_eq!((r.eob, r.levels, r.final_state), (0, vec![0; 16], 0));
    }

    #[test]
    fn exact_q0_point_with_tiny_lambda() {
        let w = unit_weights(2);
        let mut p = params(&w, 64, Candidates::Full(6));
        p.lambda_q8 = 0;
        // Level 3 under Q0 reconstructs to 3 * 64 / 32 = 6.
        let r = trellis_quantize(&[6, 0], &p, &ToyRate);
        assert_eq!(r.levels, vec![3, 0]);
        assert_eq!(r.eob, 1);
        assert_eq!(r.cost, 0);
    }

    #[test]
    fn decoder_replay_matches_encoder() {
        let w = unit_weights(16);
        let c: Vec<i32> = (0..16).map(|i| (i * 37 % 23 - 11) * 9).collect();
        let p = params(&w, 40, Candidates::Pruned);
        let r = trellis_quantize(&c, &p, &ToyRate);
        let qs = p.table.replay(&r.levels, r.eob);
        assert_eq!(p.table.replay_state(&r.levels, r.eob), r.final_state);
        assert_eq!(path_cost(&c, &r.levels, &p, &ToyRate), r.cost);
        for i in 0..r.eob {
            let d = tcq_dequantize(r.levels[i], qs[i], 40, QM_UNIT, 10).value;
            assert_eq!(d.signum() * r.levels[i].signum().abs(), d.signum());
        }
    }

    fn enumerate_min(c: &[i32], p: &TrellisParams, max: u32) -> i128 {
        let n = c.len();
        let mut best = i128::MAX;
        let mut digits = vec![0u32; n];
        loop {
            let levels: Vec<i32> = digits.iter().zip(c).map(|(&d, &x)| if x < 0 { -(d as i32) } else { d as i32 }).collect();
            best = best.min(path_cost(c, &levels, p, &ToyRate));
            let mut i = 0;
            while i < n && digits[i] == max {
                digits[i] = 0;
                i += 1;
            }
            if i == n {
                return best;
            }
            digits[i] += 1;
        }
    }

    proptest! {
        #[test]
        fn viterbi_is_globally_optimal(c in prop::collection::vec(-40i32..40, 1..=5), qstep in 32u32..160) {
            let w = unit_weights(c.len());
            let p = params(&w, qstep, Candidates::Full(4));
            let r = trellis_quantize(&c, &p, &ToyRate);
            prop_assert_eq!(r.cost, enumerate_min(&c, &p, 4));
            prop_assert_eq!(path_cost(&c, &r.levels, &p, &ToyRate), r.cost);
        }

        #[test]
        fn never_worse_than_greedy(c in prop::collection::vec(-600i32..600, 16), qstep in 32u32..400) {
            let w = unit_weights(16);
            let p = params(&w, qstep, Candidates::Pruned);
            let t = trellis_quantize(&c, &p, &ToyRate);
            let g = greedy_quantize(&c, &p, &ToyRate);
            prop_assert!(t.cost <= g.cost, "{} > {}", t.cost, g.cost);
            prop_assert_eq!(path_cost(&c, &t.levels, &p, &ToyRate), t.cost);
        }

        #[test]
        fn rate_weakly_decreases_with_lambda(c in prop::collection::vec(-300i32..300, 16), l1 in 1u64..2000, extra in 1u64..4000) {
            let w = unit_weights(16);
            let mut p = params(&w, 64, Candidates::Pruned);
            p.lambda_q8 = 0;
            let rate_of = |p: &TrellisParams, levels: &[i32]| {
                let mut q = p.clone();
                q.lambda_q8 = 1;
                let mut zero = p.clone();
                zero.lambda_q8 = 0;
                path_cost(&c, levels, &q, &ToyRate) - path_cost(&c, levels, &zero, &ToyRate)
            };
            p.lambda_q8 = l1;
            let a = trellis_quantize(&c, &p, &ToyRate);
            let ra = rate_of(&p, &a.levels);
            p.lambda_q8 = l1 + extra;
            let b = trellis_quantize(&c, &p, &ToyRate);
            prop_assert!(rate_of(&p, &b.levels) <= ra);
        }
    }
}
