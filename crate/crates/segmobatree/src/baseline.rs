//! Ground truth and comparison structures: the linear-scan oracle every
//! engine is checked against, a Treap over rules (begin-keyed search tree,
//! min-heap on prefix length) as the comparative baseline, and an
//! exhaustive partition enumerator that validates the DP splitter.

use thiserror::Error;

use crate::lpm::{AddrRange, Address, AddressWidth, Prefix, Rule, RuleSet};
use crate::moba::{AccessCounter, WidthMismatch};
use crate::segment::{Cost, CostMatrix, Segment, SegmentPlan};

/// Scan every rule and keep the longest match. The reference answer for
/// everything else in the crate; deliberately free of cleverness.
pub fn linear_lookup(rules: &RuleSet, ip: Address) -> Option<&Rule> {
    let width = rules.width();
    rules
        .rules()
        .iter()
        .filter(|r| r.prefix.range(width).contains(ip))
        .max_by_key(|r| r.prefix.len())
}

/// Like [`linear_lookup`], counting one node visit per rule scanned so the
/// oracle can participate in access benchmarks.
pub fn linear_lookup_counted<'a>(
    rules: &'a RuleSet,
    ip: Address,
    counter: &mut AccessCounter,
) -> Option<&'a Rule> {
    counter.node_visits += rules.len() as u64;
    linear_lookup(rules, ip)
}

type TLink = Option<Box<TreapNode>>;

#[derive(Clone, Debug)]
struct TreapNode {
    rule: Rule,
    range: AddrRange,
    left: TLink,
    right: TLink,
}

impl TreapNode {
    fn key(&self) -> (Address, u8) {
        (self.range.begin, self.rule.prefix.len())
    }

    /// Heap priority: prefix length, minimum at the root, so shorter
    /// (less specific) rules sit above the rules they contain.
    fn priority(&self) -> u8 {
        self.rule.prefix.len()
    }
}

fn treap_rotate_right(node: &mut Box<TreapNode>) {
    let mut child = node.left.take().expect("rotate_right needs a left child");
    node.left = child.right.take();
    std::mem::swap(node, &mut child);
    node.right = Some(child);
}

fn treap_rotate_left(node: &mut Box<TreapNode>) {
    let mut child = node.right.take().expect("rotate_left needs a right child");
    node.right = child.left.take();
    std::mem::swap(node, &mut child);
    node.left = Some(child);
}

/// A treap over whole rules: search-tree order on `(range begin, length)`,
/// heap order on prefix length. Non-nested rules with climbing lengths
/// degenerate into chains here, which is exactly the behavior the layered
/// tree is measured against.
#[derive(Clone, Debug)]
pub struct Treap {
    width: AddressWidth,
    root: TLink,
    size: usize,
}

impl Treap {
    pub fn new(width: AddressWidth) -> Self {
        Treap {
            width,
            root: None,
            size: 0,
        }
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Height in edges (empty or single-node tree: 0).
    pub fn height(&self) -> usize {
        fn depth(link: &TLink) -> usize {
            match link {
                None => 0,
                Some(n) => 1 + depth(&n.left).max(depth(&n.right)),
            }
        }
        depth(&self.root).saturating_sub(1)
    }

    /// Edge depth of the node holding `prefix`, if present.
    pub fn depth_of(&self, prefix: Prefix) -> Option<usize> {
        let mut link = &self.root;
        let mut depth = 0usize;
        if !prefix.is_valid_under(self.width) {
            return None;
        }
        let key = (prefix.range(self.width).begin, prefix.len());
        while let Some(n) = link.as_deref() {
            if key == n.key() {
                return Some(depth);
            }
            link = if key < n.key() { &n.left } else { &n.right };
            depth += 1;
        }
        None
    }

    pub fn insert(&mut self, rule: Rule) -> Result<Option<Rule>, WidthMismatch> {
        if !rule.prefix.is_valid_under(self.width) {
            return Err(WidthMismatch { width: self.width });
        }
        let range = rule.prefix.range(self.width);
        let replaced = insert_rec(&mut self.root, rule, range);
        if replaced.is_none() {
            self.size += 1;
        }
        Ok(replaced)
    }

    pub fn remove(&mut self, prefix: Prefix) -> Option<Rule> {
        if !prefix.is_valid_under(self.width) {
            return None;
        }
        let key = (prefix.range(self.width).begin, prefix.len());
        let removed = remove_rec(&mut self.root, key);
        if removed.is_some() {
            self.size -= 1;
        }
        removed
    }

    /// Longest-prefix match by a single descent.
    ///
    /// When the address sits left of a node's range begin, only the left
    /// subtree can hold a match. Otherwise the node itself is a candidate
    /// and the walk continues right: the heap order makes any match in the
    /// left subtree a strictly shorter container of this node's range,
    /// which would contradict it being a descendant. Matches encountered
    /// going down therefore have non-decreasing lengths and the last one
    /// recorded wins.
    pub fn lookup(&self, ip: Address, counter: &mut AccessCounter) -> Option<&Rule> {
        let mut best = None;
        let mut link = &self.root;
        while let Some(n) = link.as_deref() {
            counter.node_visits += 1;
            if ip < n.range.begin {
                link = &n.left;
            } else {
                if ip <= n.range.end {
                    best = Some(&n.rule);
                }
                link = &n.right;
            }
        }
        best
    }

    /// Check search-tree order, heap order, cached ranges, and the size
    /// tally; an empty report means the treap is valid.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        let count = validate_rec(&self.root, None, None, None, self.width, &mut diags);
        if count != self.size {
            diags.push(format!("size mismatch: counted {count}, recorded {}", self.size));
        }
        diags
    }
}

fn insert_rec(link: &mut TLink, rule: Rule, range: AddrRange) -> Option<Rule> {
    match link {
        None => {
            *link = Some(Box::new(TreapNode {
                rule,
                range,
                left: None,
                right: None,
            }));
            None
        }
        Some(n) => {
            if rule.prefix == n.rule.prefix {
                return Some(std::mem::replace(&mut n.rule, rule));
            }
            let key = (range.begin, rule.prefix.len());
            if key < n.key() {
                let replaced = insert_rec(&mut n.left, rule, range);
                // Equal priorities stay put: rotate only on strict violation.
                if n.left.as_ref().unwrap().priority() < n.priority() {
                    treap_rotate_right(n);
                }
                replaced
            } else {
                let replaced = insert_rec(&mut n.right, rule, range);
                if n.right.as_ref().unwrap().priority() < n.priority() {
                    treap_rotate_left(n);
                }
                replaced
            }
        }
    }
}

fn remove_rec(link: &mut TLink, key: (Address, u8)) -> Option<Rule> {
    let node_key = link.as_deref()?.key();
    if key == node_key {
        Some(remove_here(link))
    } else {
        let n = link.as_deref_mut().expect("checked above");
        if key < node_key {
            remove_rec(&mut n.left, key)
        } else {
            remove_rec(&mut n.right, key)
        }
    }
}

enum Unlink {
    Leaf,
    OnlyLeft,
    OnlyRight,
    PromoteLeft,
    PromoteRight,
}

/// Rotate the node at `link` downward, always promoting the lower-priority
/// child, until it can be unlinked without orphaning a subtree.
fn remove_here(link: &mut TLink) -> Rule {
    let case = {
        let n = link.as_deref().expect("remove_here on empty link");
        match (&n.left, &n.right) {
            (None, None) => Unlink::Leaf,
            (Some(_), None) => Unlink::OnlyLeft,
            (None, Some(_)) => Unlink::OnlyRight,
            (Some(l), Some(r)) => {
                if l.priority() <= r.priority() {
                    Unlink::PromoteLeft
                } else {
                    Unlink::PromoteRight
                }
            }
        }
    };
    match case {
        Unlink::Leaf => link.take().expect("present").rule,
        Unlink::OnlyLeft => {
            let mut node = link.take().expect("present");
            *link = node.left.take();
            node.rule
        }
        Unlink::OnlyRight => {
            let mut node = link.take().expect("present");
            *link = node.right.take();
            node.rule
        }
        Unlink::PromoteLeft => {
            let node = link.as_mut().expect("present");
            treap_rotate_right(node);
            remove_here(&mut node.right)
        }
        Unlink::PromoteRight => {
            let node = link.as_mut().expect("present");
            treap_rotate_left(node);
            remove_here(&mut node.left)
        }
    }
}

fn validate_rec(
    link: &TLink,
    min_key: Option<(Address, u8)>,
    max_key: Option<(Address, u8)>,
    parent_priority: Option<u8>,
    width: AddressWidth,
    diags: &mut Vec<String>,
) -> usize {
    let n = match link {
        Some(n) => n,
        None => return 0,
    };
    let label = n.rule.prefix.display(width);
    let key = n.key();
    if let Some(min) = min_key {
        if key <= min {
            diags.push(format!("{label}: violates search-tree order (left bound)"));
        }
    }
    if let Some(max) = max_key {
        if key >= max {
            diags.push(format!("{label}: violates search-tree order (right bound)"));
        }
    }
    if let Some(p) = parent_priority {
        if n.priority() < p {
            diags.push(format!("{label}: heap order violated (parent length {p})"));
        }
    }
    if !n.rule.prefix.is_valid_under(width) {
        diags.push(format!("{label}: prefix invalid under width {width}"));
    } else if n.range != n.rule.prefix.range(width) {
        diags.push(format!("{label}: cached range stale"));
    }
    let prio = Some(n.priority());
    validate_rec(&n.left, min_key, Some(key), prio, width, diags)
        + validate_rec(&n.right, Some(key), max_key, prio, width, diags)
        + 1
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BruteForceError {
    #[error("brute-force partition search is limited to widths <= {max} (got {got})")]
    WidthTooLarge { max: u8, got: u8 },
}

/// Enumerate every contiguous partition of `[0, w]` and return the minimal
/// total segment cost with one plan attaining it. `2^w` partitions, so the
/// width is capped; this exists to check the DP, not to be fast.
pub fn brute_force_min_cost(
    matrix: &CostMatrix,
) -> Result<(Cost, SegmentPlan), BruteForceError> {
    let width = matrix.width();
    let w = width.bits();
    if w > 16 {
        return Err(BruteForceError::WidthTooLarge { max: 16, got: w });
    }
    let mut best_scaled: Option<u128> = None;
    let mut best_plan: Option<Vec<Segment>> = None;
    // Bit i of `mask` cuts between lengths i and i+1.
    for mask in 0u32..(1u32 << w) {
        let mut segments = Vec::new();
        let mut lo = 0u8;
        let mut total = 0u128;
        for cut in 0..w {
            if mask & (1 << cut) != 0 {
                segments.push(Segment::new(lo, cut));
                total += matrix.scaled(lo, cut);
                lo = cut + 1;
            }
        }
        segments.push(Segment::new(lo, w));
        total += matrix.scaled(lo, w);
        if best_scaled.map_or(true, |b| total < b) {
            best_scaled = Some(total);
            best_plan = Some(segments);
        }
    }
    let plan = SegmentPlan::new(width, best_plan.expect("at least one partition"))
        .expect("enumerated partitions are contiguous");
    Ok((Cost::new(best_scaled.unwrap(), matrix.scale()), plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lpm::RuleSet;
    use crate::segment::{build_cost_matrix, dp_split};
    use crate::testutil::{addr, demo_ruleset, prefix, W8};
    use rand::{Rng, SeedableRng};

    #[test]
    fn linear_oracle_demo_answers() {
        let rules = demo_ruleset();
        assert_eq!(linear_lookup(&rules, addr(140)).unwrap().prefix, prefix("140/6"));
        // 49 is inside both I (48-51, /6) and L (48-49, /7); L is longer.
        assert_eq!(linear_lookup(&rules, addr(49)).unwrap().prefix, prefix("48/7"));
        let empty = RuleSet::from_rules(W8, vec![]).unwrap();
        assert!(linear_lookup(&empty, addr(0)).is_none());
    }

    fn demo_treap(upto: usize) -> Treap {
        let rules = demo_ruleset();
        let mut treap = Treap::new(W8);
        for &rule in rules.rules().iter().take(upto) {
            treap.insert(rule).unwrap();
        }
        assert!(treap.validate().is_empty(), "{:?}", treap.validate());
        treap
    }

    #[test]
    fn forefront_six_rules_form_the_long_chain() {
        // Inserted in order A..F, the equal-or-rising lengths pile into a
        // right chain B-F below A: height 5 in edges.
        let treap = demo_treap(6);
        assert_eq!(treap.height(), 5);
        assert_eq!(treap.depth_of(prefix("0/2")), Some(0)); // A
        assert_eq!(treap.depth_of(prefix("64/2")), Some(1)); // B
        assert_eq!(treap.depth_of(prefix("224/6")), Some(5)); // F
    }

    #[test]
    fn treap_keeps_searching_after_a_match() {
        let treap = demo_treap(6);
        let mut c = AccessCounter::new();
        let hit = treap.lookup(addr(192), &mut c).unwrap();
        assert_eq!(hit.prefix, prefix("192/5"));
        // E matches at depth 4 but the walk continues into F's subtree.
        assert_eq!(c.node_visits, 6);
    }

    #[test]
    fn treap_agrees_with_linear_oracle() {
        let rules = demo_ruleset();
        let mut treap = Treap::new(W8);
        for &rule in rules.rules() {
            treap.insert(rule).unwrap();
        }
        let mut c = AccessCounter::new();
        for ip in 0..=255u128 {
            assert_eq!(
                treap.lookup(addr(ip), &mut c).map(|r| r.prefix),
                linear_lookup(&rules, addr(ip)).map(|r| r.prefix),
                "ip {ip}"
            );
        }
    }

    #[test]
    fn treap_replace_and_remove() {
        let mut treap = Treap::new(W8);
        treap.insert(Rule::new(prefix("48/6"), 1)).unwrap();
        treap.insert(Rule::new(prefix("48/7"), 2)).unwrap();
        let old = treap.insert(Rule::new(prefix("48/6"), 3)).unwrap();
        assert_eq!(old.unwrap().next_hop, 1);
        assert_eq!(treap.len(), 2);
        assert!(treap.validate().is_empty());

        let removed = treap.remove(prefix("48/6")).unwrap();
        assert_eq!(removed.next_hop, 3);
        assert!(treap.remove(prefix("48/6")).is_none());
        let mut c = AccessCounter::new();
        assert_eq!(treap.lookup(addr(49), &mut c).unwrap().next_hop, 2);
        assert!(treap.validate().is_empty());
    }

    #[test]
    fn treap_shared_begin_keys_stay_ordered() {
        // I (48-51, /6) and L (48-49, /7) share a begin address; insertion
        // in either order must keep both reachable.
        for order in [[0usize, 1], [1, 0]] {
            let rules = [Rule::new(prefix("48/6"), 1), Rule::new(prefix("48/7"), 2)];
            let mut treap = Treap::new(W8);
            for &i in &order {
                treap.insert(rules[i]).unwrap();
            }
            assert!(treap.validate().is_empty(), "{order:?}");
            let mut c = AccessCounter::new();
            assert_eq!(treap.lookup(addr(49), &mut c).unwrap().next_hop, 2);
            assert_eq!(treap.lookup(addr(50), &mut c).unwrap().next_hop, 1);
        }
    }

    #[test]
    fn treap_randomized_equivalence() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        let mut treap = Treap::new(W8);
        let mut shadow: Vec<Rule> = Vec::new();
        for step in 0..3000 {
            let len = rng.gen_range(0..=8u8);
            let bits = (rng.gen::<u8>() as u128) & !W8.host_mask(len);
            let p = crate::lpm::Prefix::new(bits, len, W8).unwrap();
            if rng.gen_bool(0.6) {
                let rule = Rule::new(p, rng.gen());
                treap.insert(rule).unwrap();
                match shadow.iter_mut().find(|r| r.prefix == p) {
                    Some(slot) => *slot = rule,
                    None => shadow.push(rule),
                }
            } else if let Some(at) = shadow.iter().position(|r| r.prefix == p) {
                assert!(treap.remove(p).is_some());
                shadow.swap_remove(at);
            } else {
                assert!(treap.remove(p).is_none());
            }
            if step % 250 == 0 {
                assert!(treap.validate().is_empty(), "step {step}");
                let set = RuleSet::from_rules(W8, shadow.clone()).unwrap();
                let mut c = AccessCounter::new();
                for ip in 0..=255u128 {
                    assert_eq!(
                        treap.lookup(addr(ip), &mut c).map(|r| (r.prefix, r.next_hop)),
                        linear_lookup(&set, addr(ip)).map(|r| (r.prefix, r.next_hop)),
                        "step {step} ip {ip}"
                    );
                }
            }
        }
    }

    #[test]
    fn brute_force_matches_dp_on_demo() {
        let matrix = build_cost_matrix(&demo_ruleset()).unwrap();
        let (table, _plan) = dp_split(&matrix);
        let (best, best_plan) = brute_force_min_cost(&matrix).unwrap();
        assert_eq!(best, table.min_cost());
        assert_eq!(best, Cost::from_integer(32));
        // The published split attains the optimum.
        let published = SegmentPlan::parse("0-1,2-4,5-8", W8).unwrap();
        let published_cost = crate::segment::plan_cost(&published, &matrix).unwrap();
        assert_eq!(published_cost, best);
        let _ = best_plan;
    }

    #[test]
    fn brute_force_w1() {
        let w1 = AddressWidth::new(1).unwrap();
        let rules = RuleSet::from_rules(
            w1,
            vec![Rule::new(crate::lpm::Prefix::new(0, 1, w1).unwrap(), 1)],
        )
        .unwrap();
        let matrix = build_cost_matrix(&rules).unwrap();
        let (best, _) = brute_force_min_cost(&matrix).unwrap();
        // {[0,1]} costs C[0][1] = 1 + 1; {[0,0],[1,1]} costs 0 + (1 + 1).
        let split = matrix.cost(0, 0) + matrix.cost(1, 1);
        let joined = matrix.cost(0, 1);
        assert_eq!(best, split.min(joined));
    }

    #[test]
    fn brute_force_refuses_wide_matrices() {
        let rules = RuleSet::from_rules(AddressWidth::of(17), vec![]).unwrap();
        let matrix = build_cost_matrix(&rules).unwrap();
        assert!(matches!(
            brute_force_min_cost(&matrix),
            Err(BruteForceError::WidthTooLarge { .. })
        ));
    }
}
