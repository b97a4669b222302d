//! Address and prefix arithmetic, rules, and the ruleset text format.
//!
//! Everything in the crate works on right-aligned `u128` address values under
//! a configurable [`AddressWidth`], so an 8-bit toy ruleset and a full 128-bit
//! IPv6 table run through the same code paths.

use std::collections::HashMap;
use std::fmt;
use std::io::{self, BufRead, Write};
use std::net::Ipv6Addr;

use num::rational::Ratio;
use thiserror::Error;

/// Per-rule traffic weight; exact rational so cost-model arithmetic stays exact.
pub type Weight = Ratio<u64>;

/// Mask with the low `bits` bits set. Safe for `bits >= 128`.
pub(crate) fn low_mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("address width must be between 1 and 128 bits, got {0}")]
pub struct WidthError(pub u8);

/// Number of meaningful address bits, fixed per ruleset/engine instance.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AddressWidth(u8);

impl AddressWidth {
    pub const IPV6: AddressWidth = AddressWidth::of(128);

    pub fn new(bits: u8) -> Result<Self, WidthError> {
        if (1..=128).contains(&bits) {
            Ok(AddressWidth(bits))
        } else {
            Err(WidthError(bits))
        }
    }

    /// Const constructor for statically known widths; panics outside 1..=128.
    pub const fn of(bits: u8) -> Self {
        assert!(bits >= 1 && bits <= 128);
        AddressWidth(bits)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    /// Highest representable address value.
    pub fn max_value(self) -> u128 {
        low_mask(self.0 as u32)
    }

    /// Mask of the host bits left uncovered by a prefix of length `len`;
    /// clearing these bits in a random value yields a valid prefix.
    pub fn host_mask(self, len: u8) -> u128 {
        debug_assert!(len <= self.0);
        low_mask((self.0 - len) as u32)
    }
}

impl fmt::Display for AddressWidth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A w-bit address value, right-aligned in a `u128`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address(u128);

impl Address {
    pub fn new(value: u128) -> Self {
        Address(value)
    }

    pub fn value(self) -> u128 {
        self.0
    }
}

impl From<u128> for Address {
    fn from(v: u128) -> Self {
        Address(v)
    }
}

/// Closed address interval `[begin, end]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AddrRange {
    pub begin: Address,
    pub end: Address,
}

impl AddrRange {
    pub fn contains(&self, ip: Address) -> bool {
        self.begin <= ip && ip <= self.end
    }

    pub fn contains_range(&self, other: &AddrRange) -> bool {
        self.begin <= other.begin && other.end <= self.end
    }

    pub fn is_disjoint(&self, other: &AddrRange) -> bool {
        self.end < other.begin || other.end < self.begin
    }
}

/// How two prefixes relate. Partial overlap is impossible for prefix ranges:
/// if two of them intersect, one contains the other.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PrefixRelation {
    Disjoint,
    Equal,
    FirstContainsSecond,
    SecondContainsFirst,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PrefixError {
    #[error("prefix length {len} exceeds address width {width}")]
    LengthOutOfRange { len: u8, width: u8 },
    #[error("address {bits} does not fit in {width} bits")]
    ValueOutOfRange { bits: u128, width: u8 },
    #[error("address {bits} has host bits set below prefix length {len}")]
    HostBitsSet { bits: u128, len: u8 },
}

/// The leading `len` bits of an address; equivalently an aligned range of
/// size `2^(w-len)`. `bits` is the full right-aligned value with the host
/// bits forced to zero.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Prefix {
    bits: u128,
    len: u8,
}

impl Prefix {
    pub fn new(bits: u128, len: u8, width: AddressWidth) -> Result<Self, PrefixError> {
        if len > width.bits() {
            return Err(PrefixError::LengthOutOfRange { len, width: width.bits() });
        }
        if bits > width.max_value() {
            return Err(PrefixError::ValueOutOfRange { bits, width: width.bits() });
        }
        if bits & width.host_mask(len) != 0 {
            return Err(PrefixError::HostBitsSet { bits, len });
        }
        Ok(Prefix { bits, len })
    }

    pub fn bits(self) -> u128 {
        self.bits
    }

    pub fn len(self) -> u8 {
        self.len
    }

    pub fn is_valid_under(self, width: AddressWidth) -> bool {
        self.len <= width.bits()
            && self.bits <= width.max_value()
            && self.bits & width.host_mask(self.len) == 0
    }

    /// The closed address range this prefix covers under `width`.
    pub fn range(self, width: AddressWidth) -> AddrRange {
        debug_assert!(self.is_valid_under(width));
        AddrRange {
            begin: Address(self.bits),
            end: Address(self.bits | width.host_mask(self.len)),
        }
    }

    /// The first `len` bits of `self` as a shorter prefix.
    ///
    /// Panics if `len > self.len()`; callers reduce to a segment's lower
    /// bound, which by construction never exceeds the rule's length.
    pub fn reduced(self, len: u8, width: AddressWidth) -> Prefix {
        assert!(
            len <= self.len,
            "cannot reduce a /{} prefix to length {len}",
            self.len
        );
        Prefix {
            bits: self.bits & !width.host_mask(len),
            len,
        }
    }

    pub fn relation(self, other: Prefix, width: AddressWidth) -> PrefixRelation {
        if self == other {
            return PrefixRelation::Equal;
        }
        let a = self.range(width);
        let b = other.range(width);
        if a.is_disjoint(&b) {
            PrefixRelation::Disjoint
        } else if a.contains_range(&b) {
            PrefixRelation::FirstContainsSecond
        } else {
            debug_assert!(b.contains_range(&a), "prefix ranges cannot partially overlap");
            PrefixRelation::SecondContainsFirst
        }
    }

    pub fn contains(self, other: Prefix, width: AddressWidth) -> bool {
        matches!(
            self.relation(other, width),
            PrefixRelation::Equal | PrefixRelation::FirstContainsSecond
        )
    }

    /// Render as `<address>/<len>` in the width's text encoding.
    pub fn display(self, width: AddressWidth) -> String {
        format!("{}/{}", fmt_address(Address(self.bits), width), self.len)
    }
}

/// A prefix bound to a next-hop identifier and a positive traffic weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rule {
    pub prefix: Prefix,
    pub next_hop: u32,
    pub weight: Weight,
}

impl Rule {
    pub fn new(prefix: Prefix, next_hop: u32) -> Self {
        Rule {
            prefix,
            next_hop,
            weight: Weight::from_integer(1),
        }
    }

    pub fn with_weight(prefix: Prefix, next_hop: u32, weight: Weight) -> Self {
        debug_assert!(weight > Weight::from_integer(0));
        Rule {
            prefix,
            next_hop,
            weight,
        }
    }
}

#[derive(Debug, Error)]
pub enum RuleSetError {
    #[error("duplicate prefix {0}")]
    DuplicatePrefix(String),
    #[error("rule prefix not valid under width {0}")]
    InvalidPrefix(AddressWidth),
    #[error("rule weight must be positive")]
    NonPositiveWeight,
}

/// An immutable set of rules over one address width, no two sharing a
/// `(bits, len)` pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RuleSet {
    width: AddressWidth,
    rules: Vec<Rule>,
}

impl RuleSet {
    pub fn from_rules(width: AddressWidth, rules: Vec<Rule>) -> Result<Self, RuleSetError> {
        let mut seen = HashMap::with_capacity(rules.len());
        for rule in &rules {
            if !rule.prefix.is_valid_under(width) {
                return Err(RuleSetError::InvalidPrefix(width));
            }
            if rule.weight <= Weight::from_integer(0) {
                return Err(RuleSetError::NonPositiveWeight);
            }
            if seen.insert(rule.prefix, ()).is_some() {
                return Err(RuleSetError::DuplicatePrefix(rule.prefix.display(width)));
            }
        }
        Ok(RuleSet { width, rules })
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// Rule count per prefix length, indexed `0..=width`.
    pub fn length_counts(&self) -> Vec<u64> {
        let mut counts = vec![0u64; self.width.bits() as usize + 1];
        for rule in &self.rules {
            counts[rule.prefix.len() as usize] += 1;
        }
        counts
    }
}

/// Parse a single address in the width's text encoding: canonical IPv6 text
/// when the width is 128 bits, unsigned decimal otherwise.
pub fn parse_address(text: &str, width: AddressWidth) -> Result<Address, String> {
    let value = if width.bits() == 128 {
        let addr: Ipv6Addr = text
            .parse()
            .map_err(|e| format!("bad IPv6 address {text:?}: {e}"))?;
        u128::from_be_bytes(addr.octets())
    } else {
        let v: u128 = text
            .parse()
            .map_err(|e| format!("bad decimal address {text:?}: {e}"))?;
        if v > width.max_value() {
            return Err(format!("address {v} does not fit in {width} bits"));
        }
        v
    };
    Ok(Address(value))
}

/// Render an address in the width's text encoding.
pub fn fmt_address(addr: Address, width: AddressWidth) -> String {
    if width.bits() == 128 {
        Ipv6Addr::from(addr.value().to_be_bytes()).to_string()
    } else {
        addr.value().to_string()
    }
}

fn parse_weight(text: &str) -> Result<Weight, String> {
    let ratio = if let Some((num, den)) = text.split_once('/') {
        let num: u64 = num.parse().map_err(|e| format!("bad weight {text:?}: {e}"))?;
        let den: u64 = den.parse().map_err(|e| format!("bad weight {text:?}: {e}"))?;
        if den == 0 {
            return Err(format!("bad weight {text:?}: zero denominator"));
        }
        Weight::new(num, den)
    } else if let Some((int, frac)) = text.split_once('.') {
        if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad weight {text:?}"));
        }
        let int: u64 = if int.is_empty() {
            0
        } else {
            int.parse().map_err(|e| format!("bad weight {text:?}: {e}"))?
        };
        let frac_val: u64 = frac.parse().map_err(|e| format!("bad weight {text:?}: {e}"))?;
        let den = 10u64
            .checked_pow(frac.len() as u32)
            .ok_or_else(|| format!("bad weight {text:?}"))?;
        let num = int
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(|| format!("weight {text:?} too large"))?;
        Weight::new(num, den)
    } else {
        let v: u64 = text.parse().map_err(|e| format!("bad weight {text:?}: {e}"))?;
        Weight::from_integer(v)
    };
    if ratio == Weight::from_integer(0) {
        return Err(format!("weight {text:?} must be positive"));
    }
    Ok(ratio)
}

fn fmt_weight(w: Weight) -> String {
    if w.is_integer() {
        w.numer().to_string()
    } else {
        format!("{}/{}", w.numer(), w.denom())
    }
}

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn line_err(line: usize, message: impl Into<String>) -> ParseError {
    ParseError::Line {
        line,
        message: message.into(),
    }
}

/// A parsed ruleset plus the number of duplicate lines resolved last-wins.
#[derive(Clone, Debug)]
pub struct ParsedRuleset {
    pub ruleset: RuleSet,
    pub duplicate_count: usize,
}

/// Parse a prefix written as `<address>/<len>` under `width`.
pub fn parse_prefix(text: &str, width: AddressWidth) -> Result<Prefix, String> {
    let (addr_text, len_text) = text
        .split_once('/')
        .ok_or_else(|| format!("expected <address>/<len>, got {text:?}"))?;
    let addr = parse_address(addr_text, width)?;
    let len: u8 = len_text
        .parse()
        .map_err(|e| format!("bad prefix length {len_text:?}: {e}"))?;
    Prefix::new(addr.value(), len, width).map_err(|e| e.to_string())
}

/// Read the ruleset text format: one `<address>/<len> <next_hop> [weight]`
/// per line, `#` starting a comment. Duplicate prefixes resolve last-wins
/// (route dumps repeat prefixes); the count is reported alongside.
pub fn parse_ruleset(reader: impl BufRead, width: AddressWidth) -> Result<ParsedRuleset, ParseError> {
    let mut rules: Vec<Rule> = Vec::new();
    let mut index: HashMap<Prefix, usize> = HashMap::new();
    let mut duplicate_count = 0usize;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut fields = content.split_whitespace();
        let prefix_text = fields.next().ok_or_else(|| line_err(lineno, "missing prefix"))?;
        let next_hop_text = fields
            .next()
            .ok_or_else(|| line_err(lineno, "missing next hop; expected `<address>/<len> <next_hop> [weight]`"))?;
        let weight_text = fields.next();
        if fields.next().is_some() {
            return Err(line_err(lineno, "trailing fields after weight"));
        }

        let prefix = parse_prefix(prefix_text, width).map_err(|m| line_err(lineno, m))?;
        let next_hop: u32 = next_hop_text
            .parse()
            .map_err(|e| line_err(lineno, format!("bad next hop {next_hop_text:?}: {e}")))?;
        let weight = match weight_text {
            Some(t) => parse_weight(t).map_err(|m| line_err(lineno, m))?,
            None => Weight::from_integer(1),
        };

        let rule = Rule::with_weight(prefix, next_hop, weight);
        match index.get(&prefix) {
            Some(&at) => {
                rules[at] = rule;
                duplicate_count += 1;
            }
            None => {
                index.insert(prefix, rules.len());
                rules.push(rule);
            }
        }
    }

    Ok(ParsedRuleset {
        ruleset: RuleSet { width, rules },
        duplicate_count,
    })
}

/// Convenience wrapper for in-memory text.
pub fn parse_ruleset_str(text: &str, width: AddressWidth) -> Result<ParsedRuleset, ParseError> {
    parse_ruleset(text.as_bytes(), width)
}

/// Write a ruleset in the same format `parse_ruleset` reads.
pub fn write_ruleset(ruleset: &RuleSet, mut out: impl Write) -> io::Result<()> {
    let width = ruleset.width();
    for rule in ruleset.rules() {
        if rule.weight == Weight::from_integer(1) {
            writeln!(out, "{} {}", rule.prefix.display(width), rule.next_hop)?;
        } else {
            writeln!(
                out,
                "{} {} {}",
                rule.prefix.display(width),
                rule.next_hop,
                fmt_weight(rule.weight)
            )?;
        }
    }
    Ok(())
}
