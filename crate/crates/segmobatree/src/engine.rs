//! The segmented engine: one hash table per prefix-length segment, each
//! bucket holding a small multilayer balanced tree.
//!
//! A rule lives in the single segment covering its prefix length, in the
//! bucket addressed by hashing its *reduced prefix* (the first `segment.lo`
//! bits). Lookup probes segments long-to-short: the first segment that
//! produces a match wins, because any rule there is longer than everything
//! in the segments after it. Hash collisions are harmless: a bucket tree
//! can mix reduced prefixes and still answers by range, and a wrong-key
//! rule can never cover the probed address.

use thiserror::Error;

use crate::lpm::{Address, AddressWidth, Prefix, Rule, RuleSet};
use crate::moba::{AccessCounter, MobaTree, WidthMismatch, NODE_BYTES, TREE_BYTES};
use crate::segment::{build_cost_matrix, dp_split, CostError, PlanError, Segment, SegmentPlan};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Deterministic, platform-stable bucket hash over (segment lower bound,
/// reduced prefix bits). Stability matters: rehashing and lookup must agree
/// within a build, and access counts must reproduce across runs.
fn bucket_hash(lo: u8, key_bits: u128) -> u64 {
    let mut h = FNV_OFFSET ^ lo as u64;
    h = h.wrapping_mul(FNV_PRIME);
    for b in key_bits.to_le_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Width(#[from] WidthMismatch),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// Byte costs used for the memory estimate; override to model a different
/// node layout.
#[derive(Clone, Copy, Debug)]
pub struct MemoryModel {
    pub node_bytes: u64,
    pub bucket_bytes: u64,
}

impl Default for MemoryModel {
    fn default() -> Self {
        MemoryModel {
            node_bytes: NODE_BYTES as u64,
            bucket_bytes: TREE_BYTES as u64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentStats {
    pub segment: Segment,
    pub rules: usize,
    pub distinct_keys: usize,
    pub bucket_capacity: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EngineStats {
    /// Total tree nodes, which equals the number of stored rules.
    pub node_count: usize,
    /// Total bucket slots across all materialized tables.
    pub bucket_count: usize,
    pub segments: Vec<SegmentStats>,
    pub estimated_bytes: u64,
}

/// One segment's hash table of bucket trees.
#[derive(Clone, Debug)]
struct SegmentTable {
    segment: Segment,
    /// Empty until the first rule arrives; a rule-less segment costs nothing.
    buckets: Vec<MobaTree>,
    distinct_keys: usize,
    rules: usize,
}

impl SegmentTable {
    fn new(segment: Segment) -> Self {
        SegmentTable {
            segment,
            buckets: Vec::new(),
            distinct_keys: 0,
            rules: 0,
        }
    }

    fn capacity_for(lo: u8, distinct: usize) -> usize {
        if lo == 0 {
            // The reduced prefix is empty: one key, one bucket, one tree.
            1
        } else {
            (distinct.max(8) * 2).next_power_of_two().max(16)
        }
    }

    fn bucket_index(&self, key_bits: u128) -> usize {
        debug_assert!(!self.buckets.is_empty());
        bucket_hash(self.segment.lo, key_bits) as usize & (self.buckets.len() - 1)
    }

    fn materialize(&mut self, width: AddressWidth, distinct_hint: usize) {
        if self.buckets.is_empty() {
            let cap = Self::capacity_for(self.segment.lo, distinct_hint);
            self.buckets = (0..cap).map(|_| MobaTree::new(width)).collect();
        }
    }

    fn key_of(&self, prefix: Prefix, width: AddressWidth) -> Prefix {
        prefix.reduced(self.segment.lo, width)
    }

    /// Does any stored rule share this reduced key? Rules under one key all
    /// sit inside the key's range, and the bucket tree's first layer always
    /// has a node with its begin in that range if any such rule exists.
    fn key_present(&self, key: Prefix, width: AddressWidth) -> bool {
        if self.buckets.is_empty() {
            return false;
        }
        let range = key.range(width);
        let tree = &self.buckets[self.bucket_index(key.bits())];
        tree.has_layer1_begin_in(range.begin, range.end)
    }

    fn insert(&mut self, rule: Rule, width: AddressWidth) -> Result<Option<Rule>, WidthMismatch> {
        debug_assert!(self.segment.contains_len(rule.prefix.len()));
        self.materialize(width, 1);
        let key = self.key_of(rule.prefix, width);
        let was_present = self.key_present(key, width);
        let idx = self.bucket_index(key.bits());
        let replaced = self.buckets[idx].insert(rule)?;
        if replaced.is_none() {
            self.rules += 1;
            if !was_present {
                self.distinct_keys += 1;
                if self.segment.lo != 0 && self.distinct_keys > self.buckets.len() / 2 {
                    self.grow(width);
                }
            }
        }
        Ok(replaced)
    }

    fn remove(&mut self, prefix: Prefix, width: AddressWidth) -> Option<Rule> {
        if self.buckets.is_empty() {
            return None;
        }
        let key = self.key_of(prefix, width);
        let idx = self.bucket_index(key.bits());
        let removed = self.buckets[idx].remove(prefix)?;
        self.rules -= 1;
        if !self.key_present(key, width) {
            self.distinct_keys -= 1;
        }
        Some(removed)
    }

    fn grow(&mut self, width: AddressWidth) {
        let new_cap = (self.buckets.len() * 2).max(16);
        let old = std::mem::replace(
            &mut self.buckets,
            (0..new_cap).map(|_| MobaTree::new(width)).collect(),
        );
        for tree in old {
            for rule in tree.rules() {
                let key = self.key_of(rule.prefix, width);
                let idx = self.bucket_index(key.bits());
                self.buckets[idx]
                    .insert(rule)
                    .expect("rehash re-inserts validated rules");
            }
        }
    }

    fn lookup(&self, ip: Address, width: AddressWidth, counter: &mut AccessCounter) -> Option<&Rule> {
        debug_assert!(self.rules > 0);
        counter.bucket_probes += 1;
        let key_bits = ip.value() & !width.host_mask(self.segment.lo);
        let idx = self.bucket_index(key_bits);
        self.buckets[idx].lookup(ip, counter)
    }
}

/// The full engine: a [`SegmentPlan`] plus one [`SegmentTable`] per segment,
/// kept in descending-`lo` order so iteration is the long-to-short probe
/// sequence.
#[derive(Clone, Debug)]
pub struct SegMobaTree {
    width: AddressWidth,
    plan: SegmentPlan,
    tables: Vec<SegmentTable>,
    rule_count: usize,
}

impl SegMobaTree {
    /// Build from a ruleset, computing the cost-optimal plan when none is
    /// supplied. Bucket capacities are sized off the distinct reduced keys
    /// actually present so collision chains start short.
    pub fn build(rules: &RuleSet, plan: Option<SegmentPlan>) -> Result<Self, EngineError> {
        let width = rules.width();
        let plan = match plan {
            Some(p) => {
                if p.width() != width {
                    return Err(PlanError::WidthMismatch {
                        plan: p.width(),
                        other: width,
                    }
                    .into());
                }
                p
            }
            None => dp_split(&build_cost_matrix(rules)?).1,
        };

        let mut tables: Vec<SegmentTable> = plan
            .segments()
            .iter()
            .rev()
            .map(|&segment| SegmentTable::new(segment))
            .collect();

        // Pre-size each table for its distinct reduced keys.
        let nseg = plan.segments().len();
        let mut keys: Vec<std::collections::HashSet<u128>> = vec![Default::default(); nseg];
        for rule in rules.rules() {
            let plan_idx = plan.segment_index_for(rule.prefix.len());
            let table = &tables[nseg - 1 - plan_idx];
            keys[plan_idx].insert(table.key_of(rule.prefix, width).bits());
        }
        for (plan_idx, key_set) in keys.iter().enumerate() {
            if !key_set.is_empty() {
                tables[nseg - 1 - plan_idx].materialize(width, key_set.len());
            }
        }

        let mut engine = SegMobaTree {
            width,
            plan,
            tables,
            rule_count: 0,
        };
        for &rule in rules.rules() {
            engine.insert(rule)?;
        }
        Ok(engine)
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    pub fn plan(&self) -> &SegmentPlan {
        &self.plan
    }

    pub fn len(&self) -> usize {
        self.rule_count
    }

    pub fn is_empty(&self) -> bool {
        self.rule_count == 0
    }

    /// Segments currently holding at least one rule; lookups never probe
    /// more tables than this.
    pub fn occupied_segments(&self) -> usize {
        self.tables.iter().filter(|t| t.rules > 0).count()
    }

    fn table_for_len(&mut self, len: u8) -> &mut SegmentTable {
        let idx = self.tables.len() - 1 - self.plan.segment_index_for(len);
        &mut self.tables[idx]
    }

    /// Longest-prefix match: probe non-empty segments long-to-short, one
    /// bucket probe each, and return the first bucket-tree match.
    pub fn lookup(&self, ip: Address, counter: &mut AccessCounter) -> Option<&Rule> {
        for table in &self.tables {
            if table.rules == 0 {
                continue;
            }
            if let Some(rule) = table.lookup(ip, self.width, counter) {
                return Some(rule);
            }
        }
        None
    }

    pub fn insert(&mut self, rule: Rule) -> Result<Option<Rule>, EngineError> {
        if !rule.prefix.is_valid_under(self.width) {
            return Err(WidthMismatch { width: self.width }.into());
        }
        let width = self.width;
        let table = self.table_for_len(rule.prefix.len());
        let replaced = table.insert(rule, width)?;
        if replaced.is_none() {
            self.rule_count += 1;
        }
        Ok(replaced)
    }

    pub fn remove(&mut self, prefix: Prefix) -> Option<Rule> {
        if !prefix.is_valid_under(self.width) {
            return None;
        }
        let width = self.width;
        let table = self.table_for_len(prefix.len());
        let removed = table.remove(prefix, width)?;
        self.rule_count -= 1;
        Some(removed)
    }

    /// Recompute the plan for the current rules and build a fresh engine
    /// beside this one; swapping them is the caller's move. `rules` must be
    /// the engine's current rule multiset.
    pub fn resplit(&self, rules: &RuleSet) -> Result<SegMobaTree, EngineError> {
        if rules.width() != self.width {
            return Err(WidthMismatch { width: self.width }.into());
        }
        SegMobaTree::build(rules, None)
    }

    /// Which segment stores `prefix`, and the containment chain above it
    /// inside its bucket tree.
    pub fn locate(&self, prefix: Prefix) -> Option<(Segment, Vec<Prefix>)> {
        if !prefix.is_valid_under(self.width) {
            return None;
        }
        let idx = self.tables.len() - 1 - self.plan.segment_index_for(prefix.len());
        let table = &self.tables[idx];
        if table.buckets.is_empty() {
            return None;
        }
        let key = table.key_of(prefix, self.width);
        let tree = &table.buckets[table.bucket_index(key.bits())];
        tree.locate(prefix).map(|chain| (table.segment, chain))
    }

    /// Shape of every layer of every bucket tree, for balance reporting.
    pub fn layer_stats(&self) -> Vec<crate::moba::LayerStats> {
        let mut out = Vec::new();
        for table in &self.tables {
            for tree in &table.buckets {
                out.extend(tree.layers());
            }
        }
        out
    }

    /// Every stored rule, in unspecified order.
    pub fn rules(&self) -> Vec<Rule> {
        let mut out = Vec::with_capacity(self.rule_count);
        for table in &self.tables {
            for tree in &table.buckets {
                out.extend(tree.rules());
            }
        }
        out
    }

    pub fn stats(&self, model: MemoryModel) -> EngineStats {
        let mut segments = Vec::with_capacity(self.tables.len());
        let mut bucket_count = 0usize;
        for table in &self.tables {
            bucket_count += table.buckets.len();
            segments.push(SegmentStats {
                segment: table.segment,
                rules: table.rules,
                distinct_keys: table.distinct_keys,
                bucket_capacity: table.buckets.len(),
            });
        }
        EngineStats {
            node_count: self.rule_count,
            bucket_count,
            segments,
            estimated_bytes: self.rule_count as u64 * model.node_bytes
                + bucket_count as u64 * model.bucket_bytes,
        }
    }

    /// Check every invariant: plan/table correspondence, per-rule segment
    /// membership, bucket placement, key counts, and the validity of every
    /// bucket tree.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        let mut total = 0usize;
        let mut last_lo: Option<u8> = None;
        for table in &self.tables {
            if let Some(prev) = last_lo {
                if table.segment.lo >= prev {
                    diags.push(format!(
                        "segment {} out of descending order",
                        table.segment
                    ));
                }
            }
            last_lo = Some(table.segment.lo);

            let mut seen_rules = 0usize;
            let mut keys = std::collections::HashSet::new();
            for (idx, tree) in table.buckets.iter().enumerate() {
                for d in tree.validate() {
                    diags.push(format!("segment {} bucket {idx}: {d}", table.segment));
                }
                for rule in tree.rules() {
                    seen_rules += 1;
                    if !table.segment.contains_len(rule.prefix.len()) {
                        diags.push(format!(
                            "segment {}: rule {} leaked across segments",
                            table.segment,
                            rule.prefix.display(self.width)
                        ));
                        continue;
                    }
                    let key = table.key_of(rule.prefix, self.width);
                    keys.insert(key.bits());
                    if table.bucket_index(key.bits()) != idx {
                        diags.push(format!(
                            "segment {}: rule {} in wrong bucket",
                            table.segment,
                            rule.prefix.display(self.width)
                        ));
                    }
                }
            }
            if seen_rules != table.rules {
                diags.push(format!(
                    "segment {}: rule tally {} != stored {}",
                    table.segment, seen_rules, table.rules
                ));
            }
            if keys.len() != table.distinct_keys {
                diags.push(format!(
                    "segment {}: distinct key tally {} != stored {}",
                    table.segment,
                    keys.len(),
                    table.distinct_keys
                ));
            }
            if !table.buckets.is_empty() && !table.buckets.len().is_power_of_two() {
                diags.push(format!(
                    "segment {}: capacity {} not a power of two",
                    table.segment,
                    table.buckets.len()
                ));
            }
            total += table.rules;
        }
        if total != self.rule_count {
            diags.push(format!(
                "rule count {} != sum of table tallies {total}",
                self.rule_count
            ));
        }
        diags
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baseline::linear_lookup;
    use crate::lpm::{parse_ruleset_str, Prefix, RuleSet};
    use crate::segment::plan_cost;
    use crate::testutil::{addr, demo_ruleset, prefix, DEMO_RULESET_TEXT, W8};
    use rand::{Rng, SeedableRng};

    fn published_plan() -> SegmentPlan {
        SegmentPlan::parse("0-1,2-4,5-8", W8).unwrap()
    }

    fn demo_engine() -> SegMobaTree {
        SegMobaTree::build(&demo_ruleset(), Some(published_plan())).unwrap()
    }

    #[test]
    fn build_places_rules_by_length() {
        let engine = demo_engine();
        assert!(engine.validate().is_empty(), "{:?}", engine.validate());
        assert_eq!(engine.len(), 12);
        // A-D (lengths 2-4) in segment [2,4]; E-L (lengths 5-7) in [5,8].
        for p in ["0/2", "64/2", "128/3", "176/4"] {
            assert_eq!(engine.locate(prefix(p)).unwrap().0, Segment::new(2, 4), "{p}");
        }
        for p in ["192/5", "224/6", "140/6", "48/7"] {
            assert_eq!(engine.locate(prefix(p)).unwrap().0, Segment::new(5, 8), "{p}");
        }
        let stats = engine.stats(MemoryModel::default());
        assert_eq!(stats.node_count, 12);
        let by_seg: Vec<(Segment, usize)> =
            stats.segments.iter().map(|s| (s.segment, s.rules)).collect();
        assert_eq!(
            by_seg,
            vec![
                (Segment::new(5, 8), 8),
                (Segment::new(2, 4), 4),
                (Segment::new(0, 1), 0)
            ]
        );
    }

    #[test]
    fn lookups_traverse_long_to_short() {
        let engine = demo_engine();
        let mut c = AccessCounter::new();
        assert_eq!(engine.lookup(addr(140), &mut c).unwrap().prefix, prefix("140/6"));

        // 100 misses [5,8], then key 01 in [2,4] finds B.
        c.reset();
        assert_eq!(engine.lookup(addr(100), &mut c).unwrap().prefix, prefix("64/2"));
        assert_eq!(c.bucket_probes, 2);

        // 255 matches nothing after probing both non-empty segments.
        c.reset();
        assert!(engine.lookup(addr(255), &mut c).is_none());
        assert_eq!(c.bucket_probes, 2);
    }

    #[test]
    fn agreement_with_oracle_over_all_addresses() {
        let rules = demo_ruleset();
        for plan in [None, Some(published_plan())] {
            let engine = SegMobaTree::build(&rules, plan).unwrap();
            let mut c = AccessCounter::new();
            for ip in 0..=255u128 {
                assert_eq!(
                    engine.lookup(addr(ip), &mut c).map(|r| r.prefix),
                    linear_lookup(&rules, addr(ip)).map(|r| r.prefix),
                    "ip {ip}"
                );
            }
        }
    }

    #[test]
    fn empty_ruleset_engine() {
        let rules = RuleSet::from_rules(W8, vec![]).unwrap();
        let engine = SegMobaTree::build(&rules, None).unwrap();
        let mut c = AccessCounter::new();
        assert!(engine.lookup(addr(7), &mut c).is_none());
        assert_eq!(c.total(), 0);
        assert_eq!(engine.occupied_segments(), 0);
        let stats = engine.stats(MemoryModel::default());
        assert_eq!(stats.node_count, 0);
        assert_eq!(stats.bucket_count, 0);
        assert_eq!(stats.estimated_bytes, 0);
    }

    #[test]
    fn insert_lands_in_the_nested_layer() {
        // Build from the first 11 demo rules, then add L.
        let text: String = DEMO_RULESET_TEXT.lines().take(11).collect::<Vec<_>>().join("\n");
        let rules = parse_ruleset_str(&text, W8).unwrap().ruleset;
        let mut engine = SegMobaTree::build(&rules, Some(published_plan())).unwrap();
        engine.insert(Rule::new(prefix("48/7"), 12)).unwrap();
        let (seg, chain) = engine.locate(prefix("48/7")).unwrap();
        assert_eq!(seg, Segment::new(5, 8));
        assert_eq!(chain, vec![prefix("48/6")]);
        assert!(engine.validate().is_empty());
    }

    #[test]
    fn insert_then_remove_is_inverse() {
        let rules = demo_ruleset();
        let mut engine = SegMobaTree::build(&rules, None).unwrap();
        engine.insert(Rule::new(prefix("52/6"), 99)).unwrap();
        assert_eq!(engine.remove(prefix("52/6")).unwrap().next_hop, 99);
        let mut c = AccessCounter::new();
        for ip in 0..=255u128 {
            assert_eq!(
                engine.lookup(addr(ip), &mut c).map(|r| r.prefix),
                linear_lookup(&rules, addr(ip)).map(|r| r.prefix),
                "ip {ip}"
            );
        }
    }

    #[test]
    fn remove_merges_layers_inside_buckets() {
        let mut engine = demo_engine();
        assert_eq!(engine.remove(prefix("48/6")).unwrap().prefix, prefix("48/6"));
        let mut c = AccessCounter::new();
        assert_eq!(engine.lookup(addr(50), &mut c).unwrap().prefix, prefix("0/2"));
        assert_eq!(engine.lookup(addr(49), &mut c).unwrap().prefix, prefix("48/7"));
        assert!(engine.validate().is_empty());
    }

    #[test]
    fn remove_absent_and_remove_all() {
        let mut engine = demo_engine();
        assert!(engine.remove(prefix("128/8")).is_none());
        assert_eq!(engine.len(), 12);

        for rule in demo_ruleset().rules() {
            assert!(engine.remove(rule.prefix).is_some());
        }
        assert_eq!(engine.len(), 0);
        assert_eq!(engine.stats(MemoryModel::default()).node_count, 0);
        let mut c = AccessCounter::new();
        for ip in 0..=255u128 {
            assert!(engine.lookup(addr(ip), &mut c).is_none());
        }
        assert!(engine.validate().is_empty());
    }

    #[test]
    fn growth_rehashes_consistently() {
        // Many distinct /6 keys in one segment force several doublings.
        let mut engine =
            SegMobaTree::build(&RuleSet::from_rules(W8, vec![]).unwrap(), Some(published_plan()))
                .unwrap();
        let mut rules = Vec::new();
        for v in 0..64u128 {
            let rule = Rule::new(Prefix::new(v << 2, 6, W8).unwrap(), v as u32);
            rules.push(rule);
            engine.insert(rule).unwrap();
        }
        assert!(engine.validate().is_empty(), "{:?}", engine.validate());
        let stats = engine.stats(MemoryModel::default());
        let seg58 = stats
            .segments
            .iter()
            .find(|s| s.segment == Segment::new(5, 8))
            .unwrap();
        // The 64 length-6 rules pair up under 32 distinct 5-bit keys.
        assert_eq!(seg58.distinct_keys, 32);
        assert!(seg58.bucket_capacity >= 64, "capacity {}", seg58.bucket_capacity);
        let set = RuleSet::from_rules(W8, rules).unwrap();
        let mut c = AccessCounter::new();
        for ip in 0..=255u128 {
            assert_eq!(
                engine.lookup(addr(ip), &mut c).map(|r| r.prefix),
                linear_lookup(&set, addr(ip)).map(|r| r.prefix)
            );
        }
    }

    #[test]
    fn probe_bound_holds_per_lookup() {
        let engine = demo_engine();
        for ip in 0..=255u128 {
            let mut c = AccessCounter::new();
            engine.lookup(addr(ip), &mut c);
            assert!(c.bucket_probes as usize <= engine.occupied_segments());
        }
    }

    #[test]
    fn resplit_tracks_drifted_rules() {
        let initial = demo_ruleset();
        let engine = SegMobaTree::build(&initial, None).unwrap();

        // Drift: everything now lives at length 6.
        let drifted = RuleSet::from_rules(
            W8,
            (0..40u128)
                .map(|v| Rule::new(Prefix::new(v << 2, 6, W8).unwrap(), v as u32))
                .collect(),
        )
        .unwrap();
        let rebuilt = engine.resplit(&drifted).unwrap();
        let matrix = build_cost_matrix(&drifted).unwrap();
        let new_cost = plan_cost(rebuilt.plan(), &matrix).unwrap();
        let old_cost = plan_cost(engine.plan(), &matrix).unwrap();
        assert!(new_cost <= old_cost, "{new_cost} > {old_cost}");

        // Resplit of an unchanged ruleset keeps the modeled cost.
        let same = engine.resplit(&initial).unwrap();
        let m0 = build_cost_matrix(&initial).unwrap();
        assert_eq!(
            plan_cost(same.plan(), &m0).unwrap(),
            plan_cost(engine.plan(), &m0).unwrap()
        );
        let mut c = AccessCounter::new();
        for ip in 0..=255u128 {
            assert_eq!(
                rebuilt.lookup(addr(ip), &mut c).map(|r| r.prefix),
                linear_lookup(&drifted, addr(ip)).map(|r| r.prefix)
            );
        }
    }

    #[test]
    fn randomized_updates_stay_valid() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut engine = SegMobaTree::build(
            &RuleSet::from_rules(W8, vec![]).unwrap(),
            Some(published_plan()),
        )
        .unwrap();
        let mut shadow: Vec<Rule> = Vec::new();
        for step in 0..4000 {
            let len = rng.gen_range(0..=8u8);
            let bits = (rng.gen::<u8>() as u128) & !W8.host_mask(len);
            let p = Prefix::new(bits, len, W8).unwrap();
            if rng.gen_bool(0.6) {
                let rule = Rule::new(p, rng.gen());
                engine.insert(rule).unwrap();
                match shadow.iter_mut().find(|r| r.prefix == p) {
                    Some(slot) => *slot = rule,
                    None => shadow.push(rule),
                }
            } else if let Some(at) = shadow.iter().position(|r| r.prefix == p) {
                assert!(engine.remove(p).is_some());
                shadow.swap_remove(at);
            } else {
                assert!(engine.remove(p).is_none());
            }
            if step % 500 == 0 {
                let diags = engine.validate();
                assert!(diags.is_empty(), "step {step}: {diags:?}");
                let set = RuleSet::from_rules(W8, shadow.clone()).unwrap();
                let mut c = AccessCounter::new();
                for ip in 0..=255u128 {
                    assert_eq!(
                        engine.lookup(addr(ip), &mut c).map(|r| (r.prefix, r.next_hop)),
                        linear_lookup(&set, addr(ip)).map(|r| (r.prefix, r.next_hop)),
                        "step {step} ip {ip}"
                    );
                }
            }
        }
    }
}
