//! Deterministic generators for edge-style rulesets, lookup traces, and
//! update streams, plus their text formats. Everything is a pure function
//! of its inputs and a 64-bit seed, so benchmark inputs reproduce
//! byte-for-byte across runs and machines.

use std::collections::HashSet;
use std::io::{self, BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lpm::{
    fmt_address, parse_address, parse_prefix, Address, AddressWidth, ParseError, Prefix, Rule,
    RuleSet,
};

#[derive(Debug, Error)]
pub enum GenError {
    #[error("length histogram fractions sum to {0}, expected 1")]
    BadHistogram(f64),
    #[error("length {len} cannot supply {wanted} distinct prefixes (only 2^{len} exist)")]
    TooManyPrefixes { len: u8, wanted: u64 },
    #[error("histogram names length {len} beyond width {width}")]
    LengthBeyondWidth { len: u8, width: AddressWidth },
    #[error("rule count must be at least 1")]
    EmptyTarget,
    #[error("a non-empty ruleset is required here")]
    EmptyRuleset,
    #[error("match fraction {0} outside [0, 1]")]
    BadMatchFraction(f64),
    #[error("repeat factor must be at least 1")]
    BadRepeatFactor,
    #[error("could not generate a fresh distinct prefix after {0} attempts")]
    Saturated(u32),
}

/// Target shape for a generated ruleset: total rule count and the fraction
/// of rules at each prefix length (e.g. mass at 48/64/96/128).
#[derive(Clone, Debug)]
pub struct GenConfig {
    pub width: AddressWidth,
    pub rule_count: usize,
    /// `(length, fraction)` pairs; fractions must sum to 1 (±1e-9).
    pub hist: Vec<(u8, f64)>,
    pub seed: u64,
    /// When present, generated prefixes extend prefixes drawn from this set.
    pub base: Option<RuleSet>,
}

/// Shape of a lookup trace.
#[derive(Clone, Debug)]
pub struct TraceConfig {
    /// Distinct base packets before repetition.
    pub packet_count: usize,
    /// Each base address is emitted this many times consecutively, modeling
    /// repeated lookups of one flow.
    pub repeat_factor: usize,
    /// Fraction of base addresses drawn from inside rule ranges; the rest
    /// are uniform over the whole address space.
    pub match_fraction: f64,
    pub seed: u64,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            packet_count: 1000,
            repeat_factor: 1,
            match_fraction: 1.0,
            seed: 0,
        }
    }
}

/// One route-table update.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Update {
    Insert(Rule),
    Delete(Prefix),
}

/// Integer targets per length using largest-remainder rounding, so the
/// realized histogram stays within one rule of each target fraction.
fn length_targets(cfg: &GenConfig) -> Result<Vec<(u8, u64)>, GenError> {
    let total: f64 = cfg.hist.iter().map(|(_, f)| f).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(GenError::BadHistogram(total));
    }
    if cfg.rule_count == 0 {
        return Err(GenError::EmptyTarget);
    }
    for &(len, _) in &cfg.hist {
        if len > cfg.width.bits() {
            return Err(GenError::LengthBeyondWidth {
                len,
                width: cfg.width,
            });
        }
    }
    let n = cfg.rule_count as f64;
    let mut targets: Vec<(u8, u64, f64)> = cfg
        .hist
        .iter()
        .map(|&(len, frac)| {
            let exact = frac * n;
            (len, exact.floor() as u64, exact - exact.floor())
        })
        .collect();
    let assigned: u64 = targets.iter().map(|t| t.1).sum();
    let mut leftover = cfg.rule_count as u64 - assigned;
    // Hand remainders to the largest fractional parts, ties by length for
    // determinism.
    let mut order: Vec<usize> = (0..targets.len()).collect();
    order.sort_by(|&a, &b| {
        targets[b]
            .2
            .partial_cmp(&targets[a].2)
            .unwrap()
            .then(targets[a].0.cmp(&targets[b].0))
    });
    for idx in order {
        if leftover == 0 {
            break;
        }
        targets[idx].1 += 1;
        leftover -= 1;
    }
    for &(len, count, _) in &targets {
        if len < 64 && count > (1u64 << len) {
            return Err(GenError::TooManyPrefixes { len, wanted: count });
        }
    }
    Ok(targets.into_iter().map(|(len, c, _)| (len, c)).collect())
}

const RETRY_LIMIT: u32 = 10_000;

/// Generate `cfg.rule_count` distinct rules with the requested length mix,
/// deterministically in `cfg.seed`. With a base ruleset, each rule extends
/// a uniformly chosen base prefix with random bits out to its target
/// length; targets at or below the base prefix's length yield the base
/// prefix unchanged.
pub fn gen_ruleset(cfg: &GenConfig) -> Result<RuleSet, GenError> {
    let width = cfg.width;
    let targets = length_targets(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut seen: HashSet<(u128, u8)> = HashSet::with_capacity(cfg.rule_count);
    let mut rules: Vec<Rule> = Vec::with_capacity(cfg.rule_count);

    // Expand per-length targets into a shuffled work list so interleaving
    // with base extension stays unbiased.
    let mut lengths: Vec<u8> = Vec::with_capacity(cfg.rule_count);
    for &(len, count) in &targets {
        lengths.extend(std::iter::repeat(len).take(count as usize));
    }
    lengths.shuffle(&mut rng);

    for target_len in lengths {
        let mut placed = false;
        for _ in 0..RETRY_LIMIT {
            let (bits, len) = match &cfg.base {
                None => (
                    rng.gen::<u128>() & width.max_value() & !width.host_mask(target_len),
                    target_len,
                ),
                Some(base) => {
                    if base.is_empty() {
                        return Err(GenError::EmptyRuleset);
                    }
                    let parent = base.rules()[rng.gen_range(0..base.len())].prefix;
                    if target_len <= parent.len() {
                        (parent.bits(), parent.len())
                    } else {
                        let fresh = rng.gen::<u128>()
                            & width.host_mask(parent.len())
                            & !width.host_mask(target_len);
                        (parent.bits() | fresh, target_len)
                    }
                }
            };
            if seen.insert((bits, len)) {
                let prefix = Prefix::new(bits, len, width).expect("masked bits are valid");
                rules.push(Rule::new(prefix, rng.gen()));
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(GenError::Saturated(RETRY_LIMIT));
        }
    }

    Ok(RuleSet::from_rules(width, rules).expect("generated prefixes are distinct"))
}

/// Generate a lookup trace: matched addresses drawn uniformly inside
/// uniformly chosen rule ranges, fillers uniform over the address space,
/// the base sequence shuffled, then each address repeated consecutively.
pub fn gen_trace(rules: &RuleSet, cfg: &TraceConfig) -> Result<Vec<Address>, GenError> {
    if !(0.0..=1.0).contains(&cfg.match_fraction) {
        return Err(GenError::BadMatchFraction(cfg.match_fraction));
    }
    if cfg.repeat_factor < 1 {
        return Err(GenError::BadRepeatFactor);
    }
    if rules.is_empty() && cfg.match_fraction > 0.0 {
        return Err(GenError::EmptyRuleset);
    }
    let width = rules.width();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut base = Vec::with_capacity(cfg.packet_count);
    for _ in 0..cfg.packet_count {
        let addr = if cfg.match_fraction > 0.0 && rng.gen_bool(cfg.match_fraction) {
            let rule = &rules.rules()[rng.gen_range(0..rules.len())];
            let range = rule.prefix.range(width);
            Address::new(rng.gen_range(range.begin.value()..=range.end.value()))
        } else {
            Address::new(rng.gen::<u128>() & width.max_value())
        };
        base.push(addr);
    }
    base.shuffle(&mut rng);
    let mut out = Vec::with_capacity(base.len() * cfg.repeat_factor);
    for addr in base {
        out.extend(std::iter::repeat(addr).take(cfg.repeat_factor));
    }
    Ok(out)
}

/// Generate an update stream: alternating delete-of-existing and
/// insert-of-fresh operations, keeping the live set within one rule of its
/// starting size. Fresh prefixes sample their length from the ruleset's own
/// length mix.
pub fn gen_update_stream(rules: &RuleSet, n: usize, seed: u64) -> Result<Vec<Update>, GenError> {
    if rules.is_empty() && n > 0 {
        return Err(GenError::EmptyRuleset);
    }
    let width = rules.width();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut live: Vec<Rule> = rules.rules().to_vec();
    let mut present: HashSet<(u128, u8)> = live
        .iter()
        .map(|r| (r.prefix.bits(), r.prefix.len()))
        .collect();
    let lengths: Vec<u8> = rules.rules().iter().map(|r| r.prefix.len()).collect();

    let mut out = Vec::with_capacity(n);
    for step in 0..n {
        if step % 2 == 0 {
            // Delete a uniformly chosen existing rule.
            if live.is_empty() {
                return Err(GenError::EmptyRuleset);
            }
            let at = rng.gen_range(0..live.len());
            let victim = live.swap_remove(at);
            present.remove(&(victim.prefix.bits(), victim.prefix.len()));
            out.push(Update::Delete(victim.prefix));
        } else {
            // Insert a fresh prefix not currently live.
            let mut placed = false;
            for _ in 0..RETRY_LIMIT {
                let len = lengths[rng.gen_range(0..lengths.len())];
                let bits = rng.gen::<u128>() & width.max_value() & !width.host_mask(len);
                if present.insert((bits, len)) {
                    let rule = Rule::new(Prefix::new(bits, len, width).unwrap(), rng.gen());
                    live.push(rule);
                    out.push(Update::Insert(rule));
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(GenError::Saturated(RETRY_LIMIT));
            }
        }
    }
    Ok(out)
}

/// Write a trace: one address per line in the width's text encoding.
pub fn write_trace(trace: &[Address], width: AddressWidth, mut out: impl Write) -> io::Result<()> {
    for addr in trace {
        writeln!(out, "{}", fmt_address(*addr, width))?;
    }
    Ok(())
}

pub fn parse_trace(reader: impl BufRead, width: AddressWidth) -> Result<Vec<Address>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let addr = parse_address(content, width).map_err(|message| ParseError::Line {
            line: lineno + 1,
            message,
        })?;
        out.push(addr);
    }
    Ok(out)
}

/// Write an update stream: `I <address>/<len> <next_hop>` or
/// `D <address>/<len>`, one per line.
pub fn write_updates(updates: &[Update], width: AddressWidth, mut out: impl Write) -> io::Result<()> {
    for update in updates {
        match update {
            Update::Insert(rule) => {
                writeln!(out, "I {} {}", rule.prefix.display(width), rule.next_hop)?
            }
            Update::Delete(prefix) => writeln!(out, "D {}", prefix.display(width))?,
        }
    }
    Ok(())
}

pub fn parse_updates(reader: impl BufRead, width: AddressWidth) -> Result<Vec<Update>, ParseError> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |message: String| ParseError::Line {
            line: lineno,
            message,
        };
        let mut fields = content.split_whitespace();
        let op = fields.next().unwrap_or_default();
        let prefix_text = fields
            .next()
            .ok_or_else(|| err("missing prefix".to_string()))?;
        let prefix = parse_prefix(prefix_text, width).map_err(err)?;
        match op {
            "I" => {
                let nh_text = fields
                    .next()
                    .ok_or_else(|| err("insert line missing next hop".to_string()))?;
                let next_hop: u32 = nh_text
                    .parse()
                    .map_err(|e| err(format!("bad next hop {nh_text:?}: {e}")))?;
                if fields.next().is_some() {
                    return Err(err("trailing fields".to_string()));
                }
                out.push(Update::Insert(Rule::new(prefix, next_hop)));
            }
            "D" => {
                if fields.next().is_some() {
                    return Err(err("trailing fields".to_string()));
                }
                out.push(Update::Delete(prefix));
            }
            other => return Err(err(format!("unknown update op {other:?}"))),
        }
    }
    Ok(out)
}
