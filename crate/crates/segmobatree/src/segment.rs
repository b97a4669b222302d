//! The per-segment lookup-cost model and the dynamic program that picks
//! prefix-length segments.
//!
//! A segment `[x, y]` serves every rule whose prefix length falls in that
//! range, behind one hash table keyed by prefixes reduced to length `x`.
//! Its modeled cost has two parts, both counted in memory accesses over a
//! workload where each rule is matched in proportion to its weight:
//!
//! * **hash cost** — packets probe tables long-to-short and stop at the
//!   first match, so a table is probed once for every packet whose final
//!   match has length `<= y`: the weight sum over lengths `0..=y`.
//! * **tree cost** — a bucket tree holding `n` rules answers in at most
//!   `ceil(log2 n) + 1` node visits, so a group of `n` rules sharing a
//!   reduced prefix contributes that depth bound times the group's weight.
//!
//! `S[x][y]`, the cheapest way to cover lengths `[x, y]` with contiguous
//! segments, satisfies `S[x][y] = min(C[x][y], min_k S[x][k] + S[k+1][y])`
//! and is filled bottom-up by window width; the chosen split points are
//! recorded so the optimal partition can be read back out.
//!
//! All costs are exact: rule weights are rescaled by the least common
//! multiple of their denominators once, and every cell is a plain integer
//! over that one denominator. Ties in the DP are therefore well defined;
//! they break toward fewer segments, then toward the leftmost split.

use std::collections::HashMap;
use std::fmt;

use num::integer::gcd;
use num::rational::Ratio;
use thiserror::Error;

use crate::lpm::{AddressWidth, RuleSet, Weight};

/// Exact cost value (memory accesses, possibly fractional under weights).
pub type Cost = Ratio<u128>;

/// Cells are capped so that summing one per segment (at most `w + 1` of
/// them, and `w <= 128`) can never overflow a `u128`.
const MAX_CELL: u128 = u128::MAX / 256;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CostError {
    #[error("cost arithmetic overflow; rule weights have pathologically large scaled values")]
    Overflow,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PlanError {
    #[error("a segment plan needs at least one segment")]
    Empty,
    #[error("segment {0} is inverted (lo > hi)")]
    Inverted(Segment),
    #[error("plan does not tile [0, {width}]: {detail}")]
    NotContiguous { width: AddressWidth, detail: String },
    #[error("plan width {plan} does not match {other}")]
    WidthMismatch { plan: AddressWidth, other: AddressWidth },
    #[error("cannot parse segment {0:?}, expected `lo-hi`")]
    Unparseable(String),
}

fn ck(v: Option<u128>) -> Result<u128, CostError> {
    v.ok_or(CostError::Overflow)
}

fn checked_lcm(a: u128, b: u128) -> Option<u128> {
    (a / gcd(a, b)).checked_mul(b)
}

/// `ceil(log2 n) + 1` — the binary-search depth bound for an `n`-rule tree.
fn depth_factor(n: u64) -> u128 {
    if n <= 1 {
        1
    } else {
        (64 - (n - 1).leading_zeros()) as u128 + 1
    }
}

/// A contiguous range of prefix lengths served by one hash table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Segment {
    pub lo: u8,
    pub hi: u8,
}

impl Segment {
    pub fn new(lo: u8, hi: u8) -> Self {
        Segment { lo, hi }
    }

    pub fn contains_len(&self, len: u8) -> bool {
        self.lo <= len && len <= self.hi
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// Rule counts and weight sums per prefix length, with weights rescaled to
/// one common denominator (`scale`).
#[derive(Clone, Debug)]
pub struct LengthHistogram {
    width: AddressWidth,
    count: Vec<u64>,
    weight_scaled: Vec<u128>,
    scale: u128,
}

impl LengthHistogram {
    pub fn from_ruleset(rules: &RuleSet) -> Result<Self, CostError> {
        let width = rules.width();
        let scale = weight_scale(rules)?;
        let mut count = vec![0u64; width.bits() as usize + 1];
        let mut weight_scaled = vec![0u128; width.bits() as usize + 1];
        for rule in rules.rules() {
            let l = rule.prefix.len() as usize;
            count[l] += 1;
            let ws = scaled_weight(rule.weight, scale)?;
            weight_scaled[l] = ck(weight_scaled[l].checked_add(ws))?;
        }
        Ok(LengthHistogram {
            width,
            count,
            weight_scaled,
            scale,
        })
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    pub fn count(&self, len: u8) -> u64 {
        self.count[len as usize]
    }

    pub fn weight_sum(&self, len: u8) -> Cost {
        Cost::new(self.weight_scaled[len as usize], self.scale)
    }

    fn cumulative_scaled(&self) -> Result<Vec<u128>, CostError> {
        let mut cum = Vec::with_capacity(self.weight_scaled.len());
        let mut acc = 0u128;
        for &w in &self.weight_scaled {
            acc = ck(acc.checked_add(w))?;
            cum.push(acc);
        }
        Ok(cum)
    }
}

fn weight_scale(rules: &RuleSet) -> Result<u128, CostError> {
    let mut scale = 1u128;
    for rule in rules.rules() {
        scale = ck(checked_lcm(scale, *rule.weight.denom() as u128))?;
    }
    Ok(scale)
}

fn scaled_weight(w: Weight, scale: u128) -> Result<u128, CostError> {
    ck((*w.numer() as u128).checked_mul(scale / *w.denom() as u128))
}

/// Memory accesses spent probing this segment's hash table: one probe for
/// every packet whose final match is at length `<= seg.hi`, since those are
/// the packets that have not already stopped in a longer segment.
pub fn hash_cost(hist: &LengthHistogram, seg: Segment) -> Cost {
    let mut acc: u128 = 0;
    for len in 0..=seg.hi.min(hist.width.bits()) {
        acc += hist.weight_scaled[len as usize];
    }
    Cost::new(acc, hist.scale)
}

/// Memory accesses spent inside this segment's bucket trees: rules with
/// lengths in `[seg.lo, seg.hi]` grouped by their length-`lo` reduced
/// prefix, each group of `n` costing `(ceil(log2 n) + 1) * weight`.
pub fn tree_cost(rules: &RuleSet, seg: Segment) -> Result<Cost, CostError> {
    let width = rules.width();
    let scale = weight_scale(rules)?;
    let mut groups: HashMap<u128, (u64, u128)> = HashMap::new();
    for rule in rules.rules() {
        if !seg.contains_len(rule.prefix.len()) {
            continue;
        }
        let key = rule.prefix.reduced(seg.lo, width).bits();
        let entry = groups.entry(key).or_insert((0, 0));
        entry.0 += 1;
        entry.1 = ck(entry.1.checked_add(scaled_weight(rule.weight, scale)?))?;
    }
    let mut acc: u128 = 0;
    for (n, w) in groups.values() {
        acc = ck(acc.checked_add(ck(depth_factor(*n).checked_mul(*w))?))?;
    }
    Ok(Cost::new(acc, scale))
}

/// The full `C[x][y]` table: hash cost plus tree cost for every segment.
#[derive(Clone, Debug)]
pub struct CostMatrix {
    width: AddressWidth,
    scale: u128,
    hash_cum: Vec<u128>,
    cells: Vec<u128>,
}

impl CostMatrix {
    fn idx(&self, x: u8, y: u8) -> usize {
        debug_assert!(x <= y && y <= self.width.bits());
        x as usize * (self.width.bits() as usize + 1) + y as usize
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    pub(crate) fn scale(&self) -> u128 {
        self.scale
    }

    pub(crate) fn scaled(&self, x: u8, y: u8) -> u128 {
        self.cells[self.idx(x, y)]
    }

    pub fn cost(&self, x: u8, y: u8) -> Cost {
        Cost::new(self.scaled(x, y), self.scale)
    }

    pub fn hash_part(&self, _x: u8, y: u8) -> Cost {
        Cost::new(self.hash_cum[y as usize], self.scale)
    }

    pub fn tree_part(&self, x: u8, y: u8) -> Cost {
        Cost::new(self.scaled(x, y) - self.hash_cum[y as usize], self.scale)
    }
}

/// Build `C` from the installed rules. Grouping is done incrementally per
/// lower bound `x`: sweeping `y` upward only ever adds rules of length `y`
/// to the running groups, so the whole table costs `O(w * rules)` hashing
/// rather than a fresh grouping per cell.
pub fn build_cost_matrix(rules: &RuleSet) -> Result<CostMatrix, CostError> {
    let width = rules.width();
    let w = width.bits();
    let hist = LengthHistogram::from_ruleset(rules)?;
    let hash_cum = hist.cumulative_scaled()?;

    let mut by_len: Vec<Vec<(u128, u128)>> = vec![Vec::new(); w as usize + 1];
    for rule in rules.rules() {
        by_len[rule.prefix.len() as usize]
            .push((rule.prefix.bits(), scaled_weight(rule.weight, hist.scale)?));
    }

    let mut cells = vec![0u128; (w as usize + 1) * (w as usize + 1)];
    for x in 0..=w {
        let keep_top = !width.host_mask(x);
        let mut groups: HashMap<u128, (u64, u128)> = HashMap::new();
        let mut tree: u128 = 0;
        for y in x..=w {
            for &(bits, ws) in &by_len[y as usize] {
                let entry = groups.entry(bits & keep_top).or_insert((0, 0));
                let old = if entry.0 == 0 {
                    0
                } else {
                    ck(depth_factor(entry.0).checked_mul(entry.1))?
                };
                entry.0 += 1;
                entry.1 = ck(entry.1.checked_add(ws))?;
                let new = ck(depth_factor(entry.0).checked_mul(entry.1))?;
                tree = ck(tree.checked_add(new - old))?;
            }
            let cell = ck(hash_cum[y as usize].checked_add(tree))?;
            if cell > MAX_CELL {
                return Err(CostError::Overflow);
            }
            cells[x as usize * (w as usize + 1) + y as usize] = cell;
        }
    }

    Ok(CostMatrix {
        width,
        scale: hist.scale,
        hash_cum,
        cells,
    })
}

/// An ordered, contiguous partition of prefix lengths `[0, w]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    width: AddressWidth,
    segments: Vec<Segment>,
}

impl SegmentPlan {
    pub fn new(width: AddressWidth, segments: Vec<Segment>) -> Result<Self, PlanError> {
        if segments.is_empty() {
            return Err(PlanError::Empty);
        }
        for seg in &segments {
            if seg.lo > seg.hi {
                return Err(PlanError::Inverted(*seg));
            }
        }
        let mut expected = 0u16;
        for seg in &segments {
            if seg.lo as u16 != expected {
                return Err(PlanError::NotContiguous {
                    width,
                    detail: format!("segment {seg} starts at {}, expected {expected}", seg.lo),
                });
            }
            expected = seg.hi as u16 + 1;
        }
        if expected != width.bits() as u16 + 1 {
            return Err(PlanError::NotContiguous {
                width,
                detail: format!("plan ends at {}, expected {}", expected as i32 - 1, width.bits()),
            });
        }
        Ok(SegmentPlan { width, segments })
    }

    /// Parse the CLI form `lo-hi,lo-hi,...`.
    pub fn parse(text: &str, width: AddressWidth) -> Result<Self, PlanError> {
        let mut segments = Vec::new();
        for part in text.split(',') {
            let (lo, hi) = part
                .split_once('-')
                .ok_or_else(|| PlanError::Unparseable(part.to_string()))?;
            let lo: u8 = lo.trim().parse().map_err(|_| PlanError::Unparseable(part.to_string()))?;
            let hi: u8 = hi.trim().parse().map_err(|_| PlanError::Unparseable(part.to_string()))?;
            segments.push(Segment::new(lo, hi));
        }
        SegmentPlan::new(width, segments)
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Index of the segment covering a prefix length. Plans tile `[0, w]`,
    /// so this cannot miss for valid lengths.
    pub fn segment_index_for(&self, len: u8) -> usize {
        debug_assert!(len <= self.width.bits());
        self.segments
            .partition_point(|s| s.hi < len)
    }
}

impl fmt::Display for SegmentPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, seg) in self.segments.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{seg}")?;
        }
        Ok(())
    }
}

/// Sum of `C` over a plan's segments.
pub fn plan_cost(plan: &SegmentPlan, matrix: &CostMatrix) -> Result<Cost, PlanError> {
    if plan.width != matrix.width() {
        return Err(PlanError::WidthMismatch {
            plan: plan.width,
            other: matrix.width(),
        });
    }
    let mut acc: u128 = 0;
    for seg in plan.segments() {
        acc += matrix.scaled(seg.lo, seg.hi);
    }
    Ok(Cost::new(acc, matrix.scale()))
}

/// The filled DP table: minimal cost, segment count, and chosen split point
/// per length window.
#[derive(Clone, Debug)]
pub struct SplitTable {
    width: AddressWidth,
    scale: u128,
    cost: Vec<u128>,
    nseg: Vec<u32>,
    split: Vec<Option<u8>>,
}

impl SplitTable {
    fn idx(&self, x: u8, y: u8) -> usize {
        debug_assert!(x <= y && y <= self.width.bits());
        x as usize * (self.width.bits() as usize + 1) + y as usize
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    pub fn cost(&self, x: u8, y: u8) -> Cost {
        Cost::new(self.cost[self.idx(x, y)], self.scale)
    }

    /// `S[0][w]` — modeled cost of the optimal partition.
    pub fn min_cost(&self) -> Cost {
        self.cost(0, self.width.bits())
    }

    pub fn split_point(&self, x: u8, y: u8) -> Option<u8> {
        self.split[self.idx(x, y)]
    }

    /// Read the optimal partition back out of the recorded split points.
    pub fn plan(&self) -> SegmentPlan {
        let mut segments = Vec::new();
        self.backtrack(0, self.width.bits(), &mut segments);
        SegmentPlan::new(self.width, segments).expect("backtracking yields a contiguous cover")
    }

    fn backtrack(&self, x: u8, y: u8, out: &mut Vec<Segment>) {
        match self.split_point(x, y) {
            None => out.push(Segment::new(x, y)),
            Some(k) => {
                self.backtrack(x, k, out);
                self.backtrack(k + 1, y, out);
            }
        }
    }
}

/// Fill `S` bottom-up by window width and recover the optimal plan.
///
/// Ties are broken toward the partition with fewer segments (an unsplit
/// window has one segment, so it always wins a cost tie) and then toward
/// the smallest split point, making the result deterministic.
pub fn dp_split(matrix: &CostMatrix) -> (SplitTable, SegmentPlan) {
    let width = matrix.width();
    let w = width.bits();
    let side = w as usize + 1;
    let mut table = SplitTable {
        width,
        scale: matrix.scale(),
        cost: vec![0; side * side],
        nseg: vec![0; side * side],
        split: vec![None; side * side],
    };

    for window in 0..=w {
        for x in 0..=(w - window) {
            let y = x + window;
            let mut best_cost = matrix.scaled(x, y);
            let mut best_nseg = 1u32;
            let mut best_split = None;
            for k in x..y {
                let cost = table.cost[table.idx(x, k)] + table.cost[table.idx(k + 1, y)];
                let nseg = table.nseg[table.idx(x, k)] + table.nseg[table.idx(k + 1, y)];
                if cost < best_cost || (cost == best_cost && nseg < best_nseg) {
                    best_cost = cost;
                    best_nseg = nseg;
                    best_split = Some(k);
                }
            }
            let at = table.idx(x, y);
            table.cost[at] = best_cost;
            table.nseg[at] = best_nseg;
            table.split[at] = best_split;
        }
    }

    let plan = table.plan();
    (table, plan)
}
