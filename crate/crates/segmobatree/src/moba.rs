//! The multilayer online balanced tree.
//!
//! Each layer is a height-balanced search tree over pairwise disjoint rule
//! ranges, keyed by range begin. A rule contained by another rule never
//! shares a layer with it: it lives in the *next layer* hanging off the
//! containing node, under the closest (longest-prefix) container. Because
//! two prefix ranges either nest or are disjoint, the containment forest is
//! well defined and every layer stays sortable.
//!
//! Lookup walks one root-to-match path per layer: descend by range order
//! until a node covers the address, record its rule, then drop into that
//! node's next layer for a longer match. The rule recorded last is the
//! longest-prefix match.
//!
//! Updates keep each layer an AVL tree (per-node height difference at most
//! one). Insertion may demote existing layer nodes that the new rule
//! contains into the new node's next layer; deletion merges the victim's
//! next layer back into the layer it occupied. Both are built from standard
//! balanced insert/delete of single nodes, so rotations stay local and the
//! balance invariant is restored after every operation.

use std::fmt::Write as _;

use thiserror::Error;

use crate::lpm::{AddrRange, Address, AddressWidth, Prefix, Rule, Weight};

/// Memory-access tally for one or more lookups: one `node_visits` tick per
/// tree node inspected, one `bucket_probes` tick per hash-table probe (the
/// segmented engine increments the latter). Resettable between operations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AccessCounter {
    pub node_visits: u64,
    pub bucket_probes: u64,
}

impl AccessCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reset(&mut self) {
        *self = Self::default();
    }

    pub fn total(self) -> u64 {
        self.node_visits + self.bucket_probes
    }
}

/// Per-lookup diagnostics beyond the raw access count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LookupStats {
    pub node_visits: u64,
    /// How many times the walk dropped into a matching node's next layer.
    pub layer_descents: u64,
}

/// Shape of one layer tree, as reported by [`MobaTree::layers`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerStats {
    /// Height in nodes (empty layer = 0).
    pub height: usize,
    pub nodes: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("rule prefix is not valid under tree width {width}")]
pub struct WidthMismatch {
    pub width: AddressWidth,
}

type Link = Option<Box<MobaNode>>;

/// Byte sizes the default memory model charges per stored node and per
/// hash bucket slot.
pub(crate) const NODE_BYTES: usize = std::mem::size_of::<MobaNode>();
pub(crate) const TREE_BYTES: usize = std::mem::size_of::<MobaTree>();

#[derive(Clone, Debug)]
struct MobaNode {
    rule: Rule,
    range: AddrRange,
    height: u8,
    left: Link,
    right: Link,
    next_layer: Link,
}

impl MobaNode {
    fn new(rule: Rule, range: AddrRange) -> Self {
        MobaNode {
            rule,
            range,
            height: 1,
            left: None,
            right: None,
            next_layer: None,
        }
    }
}

fn height(link: &Link) -> u8 {
    link.as_ref().map_or(0, |n| n.height)
}

fn update_height(node: &mut MobaNode) {
    node.height = 1 + height(&node.left).max(height(&node.right));
}

fn balance_factor(node: &MobaNode) -> i16 {
    height(&node.left) as i16 - height(&node.right) as i16
}

fn rotate_left(node: &mut Box<MobaNode>) {
    let mut child = node.right.take().expect("rotate_left needs a right child");
    node.right = child.left.take();
    update_height(node);
    std::mem::swap(node, &mut child);
    node.left = Some(child);
    update_height(node);
}

fn rotate_right(node: &mut Box<MobaNode>) {
    let mut child = node.left.take().expect("rotate_right needs a left child");
    node.left = child.right.take();
    update_height(node);
    std::mem::swap(node, &mut child);
    node.right = Some(child);
    update_height(node);
}

fn rebalance(node: &mut Box<MobaNode>) {
    update_height(node);
    let bf = balance_factor(node);
    if bf > 1 {
        if balance_factor(node.left.as_ref().unwrap()) < 0 {
            rotate_left(node.left.as_mut().unwrap());
        }
        rotate_right(node);
    } else if bf < -1 {
        if balance_factor(node.right.as_ref().unwrap()) > 0 {
            rotate_right(node.right.as_mut().unwrap());
        }
        rotate_left(node);
    }
}

/// Balanced insert of a detached node into a layer. The caller guarantees
/// the node's range is disjoint from every range already in the layer, so
/// begin-order comparison is total.
fn avl_insert_node(link: &mut Link, node: Box<MobaNode>) {
    match link {
        None => {
            debug_assert!(node.left.is_none() && node.right.is_none());
            *link = Some(node);
        }
        Some(cur) => {
            debug_assert!(node.range.is_disjoint(&cur.range));
            if node.range.begin < cur.range.begin {
                avl_insert_node(&mut cur.left, node);
            } else {
                avl_insert_node(&mut cur.right, node);
            }
            rebalance(cur);
        }
    }
}

fn avl_delete_min(link: &mut Link) -> Option<Box<MobaNode>> {
    let mut node = link.take()?;
    if node.left.is_some() {
        let out = avl_delete_min(&mut node.left);
        *link = Some(node);
        rebalance(link.as_mut().unwrap());
        out
    } else {
        *link = node.right.take();
        node.height = 1;
        Some(node)
    }
}

/// Balanced delete by exact begin key; returns the detached node with its
/// next layer intact and its left/right links cleared.
fn avl_delete(link: &mut Link, begin: Address) -> Option<Box<MobaNode>> {
    let mut node = match link.take() {
        Some(n) => n,
        None => return None,
    };
    let removed;
    if begin < node.range.begin {
        removed = avl_delete(&mut node.left, begin);
        *link = Some(node);
    } else if begin > node.range.begin {
        removed = avl_delete(&mut node.right, begin);
        *link = Some(node);
    } else {
        let left = node.left.take();
        let right = node.right.take();
        match (left, right) {
            (None, None) => {}
            (Some(l), None) => *link = Some(l),
            (None, Some(r)) => *link = Some(r),
            (Some(l), Some(r)) => {
                let mut rest: Link = Some(r);
                let mut successor = avl_delete_min(&mut rest).expect("non-empty right subtree");
                successor.left = Some(l);
                successor.right = rest;
                *link = Some(successor);
            }
        }
        node.height = 1;
        removed = Some(node);
    }
    if removed.is_some() {
        if let Some(n) = link.as_mut() {
            rebalance(n);
        }
    }
    removed
}

/// Any begin key within `[lo, hi]` in this layer, if one exists.
fn find_begin_in(mut link: &Link, lo: Address, hi: Address) -> Option<Address> {
    while let Some(n) = link {
        if n.range.begin > hi {
            link = &n.left;
        } else if n.range.begin < lo {
            link = &n.right;
        } else {
            return Some(n.range.begin);
        }
    }
    None
}

/// Mutable handle to the layer node with the given begin key.
fn find_node_mut(mut link: &mut Link, begin: Address) -> &mut MobaNode {
    loop {
        let key = link.as_ref().expect("node must exist").range.begin;
        if begin < key {
            link = &mut link.as_mut().unwrap().left;
        } else if begin > key {
            link = &mut link.as_mut().unwrap().right;
        } else {
            return link.as_mut().unwrap();
        }
    }
}

enum InsertSpot {
    /// No overlap anywhere: plain balanced insert into this layer.
    Plain,
    /// A node with the identical range exists; replace its rule.
    Equal(Address),
    /// An existing node strictly contains the new range; recurse into it.
    Inside(Address),
    /// The new range strictly contains at least one layer node; demote them.
    Swallows,
}

fn classify_insert(mut link: &Link, range: AddrRange) -> InsertSpot {
    while let Some(n) = link {
        if range.end < n.range.begin {
            link = &n.left;
        } else if range.begin > n.range.end {
            link = &n.right;
        } else if range == n.range {
            return InsertSpot::Equal(n.range.begin);
        } else if n.range.contains_range(&range) {
            return InsertSpot::Inside(n.range.begin);
        } else {
            debug_assert!(range.contains_range(&n.range));
            return InsertSpot::Swallows;
        }
    }
    InsertSpot::Plain
}

fn layer_insert(layer: &mut Link, rule: Rule, range: AddrRange) -> Option<Rule> {
    match classify_insert(layer, range) {
        InsertSpot::Plain => {
            avl_insert_node(layer, Box::new(MobaNode::new(rule, range)));
            None
        }
        InsertSpot::Equal(begin) => {
            let node = find_node_mut(layer, begin);
            Some(std::mem::replace(&mut node.rule, rule))
        }
        InsertSpot::Inside(begin) => {
            let node = find_node_mut(layer, begin);
            layer_insert(&mut node.next_layer, rule, range)
        }
        InsertSpot::Swallows => {
            // Contained nodes occupy a contiguous begin interval; extract
            // them one by one and hang them under the new node. They were
            // pairwise disjoint, so re-attachment is plain insertion.
            let mut demoted: Link = None;
            while let Some(begin) = find_begin_in(layer, range.begin, range.end) {
                let victim = avl_delete(layer, begin).expect("victim just located");
                avl_insert_node(&mut demoted, victim);
            }
            let mut node = Box::new(MobaNode::new(rule, range));
            node.next_layer = demoted;
            avl_insert_node(layer, node);
            None
        }
    }
}

fn drain_layer(link: Link, out: &mut Vec<Box<MobaNode>>) {
    if let Some(mut n) = link {
        drain_layer(n.left.take(), out);
        drain_layer(n.right.take(), out);
        n.height = 1;
        out.push(n);
    }
}

enum RemoveSpot {
    Here(Address),
    Deeper(Address),
    Absent,
}

fn classify_remove(mut link: &Link, target: AddrRange) -> RemoveSpot {
    while let Some(n) = link {
        if target.end < n.range.begin {
            link = &n.left;
        } else if target.begin > n.range.end {
            link = &n.right;
        } else if target == n.range {
            return RemoveSpot::Here(n.range.begin);
        } else if n.range.contains_range(&target) {
            return RemoveSpot::Deeper(n.range.begin);
        } else {
            // The target strictly contains a stored rule; it cannot itself
            // be stored anywhere below this layer.
            return RemoveSpot::Absent;
        }
    }
    RemoveSpot::Absent
}

fn layer_remove(layer: &mut Link, target: AddrRange) -> Option<Box<MobaNode>> {
    match classify_remove(layer, target) {
        RemoveSpot::Absent => None,
        RemoveSpot::Deeper(begin) => {
            let node = find_node_mut(layer, begin);
            layer_remove(&mut node.next_layer, target)
        }
        RemoveSpot::Here(begin) => {
            let mut victim = avl_delete(layer, begin).expect("victim just located");
            // Merge the victim's first next-layer back into this layer. Those
            // rules sat inside the victim's range, so they are disjoint from
            // everything that remains here.
            let mut orphans = Vec::new();
            drain_layer(victim.next_layer.take(), &mut orphans);
            for orphan in orphans {
                avl_insert_node(layer, orphan);
            }
            Some(victim)
        }
    }
}

/// The multilayer online balanced tree over one address width.
#[derive(Clone, Debug)]
pub struct MobaTree {
    width: AddressWidth,
    root: Link,
    size: usize,
}

impl MobaTree {
    pub fn new(width: AddressWidth) -> Self {
        MobaTree {
            width,
            root: None,
            size: 0,
        }
    }

    pub fn width(&self) -> AddressWidth {
        self.width
    }

    /// Rules stored across all layers.
    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    /// Height of the first layer, in nodes.
    pub fn height(&self) -> usize {
        height(&self.root) as usize
    }

    /// Longest-prefix match. Walks each layer to its covering node, then
    /// drops into that node's next layer looking for a longer match; the
    /// last rule recorded wins. Each node inspected counts one visit.
    pub fn lookup(&self, ip: Address, counter: &mut AccessCounter) -> Option<&Rule> {
        let mut best = None;
        let mut link = &self.root;
        while let Some(n) = link.as_deref() {
            counter.node_visits += 1;
            if ip < n.range.begin {
                link = &n.left;
            } else if ip > n.range.end {
                link = &n.right;
            } else {
                best = Some(&n.rule);
                if n.next_layer.is_none() {
                    break;
                }
                link = &n.next_layer;
            }
        }
        best
    }

    /// Like [`lookup`](Self::lookup) but also reports how many next-layer
    /// descents the walk took.
    pub fn lookup_with_stats(&self, ip: Address) -> (Option<&Rule>, LookupStats) {
        let mut stats = LookupStats::default();
        let mut best = None;
        let mut link = &self.root;
        while let Some(n) = link.as_deref() {
            stats.node_visits += 1;
            if ip < n.range.begin {
                link = &n.left;
            } else if ip > n.range.end {
                link = &n.right;
            } else {
                best = Some(&n.rule);
                if n.next_layer.is_none() {
                    break;
                }
                stats.layer_descents += 1;
                link = &n.next_layer;
            }
        }
        (best, stats)
    }

    /// Insert a rule. An equal prefix replaces the stored rule and returns
    /// the old one; a rule contained by an existing node recurses into that
    /// node's next layer; a rule containing existing layer nodes demotes
    /// them underneath itself.
    pub fn insert(&mut self, rule: Rule) -> Result<Option<Rule>, WidthMismatch> {
        if !rule.prefix.is_valid_under(self.width) {
            return Err(WidthMismatch { width: self.width });
        }
        let range = rule.prefix.range(self.width);
        let replaced = layer_insert(&mut self.root, rule, range);
        if replaced.is_none() {
            self.size += 1;
        }
        Ok(replaced)
    }

    /// Remove the rule with exactly this prefix from whatever layer holds
    /// it, merging its next layer up. `None` means the prefix was absent.
    pub fn remove(&mut self, prefix: Prefix) -> Option<Rule> {
        if !prefix.is_valid_under(self.width) {
            return None;
        }
        let victim = layer_remove(&mut self.root, prefix.range(self.width))?;
        self.size -= 1;
        Some(victim.rule)
    }

    /// The chain of containing rules above `prefix`'s storage slot, outermost
    /// first: empty for first-layer rules, `None` if the prefix is absent.
    pub fn locate(&self, prefix: Prefix) -> Option<Vec<Prefix>> {
        if !prefix.is_valid_under(self.width) {
            return None;
        }
        let target = prefix.range(self.width);
        let mut chain = Vec::new();
        let mut layer = &self.root;
        loop {
            match classify_remove(layer, target) {
                RemoveSpot::Absent => return None,
                RemoveSpot::Here(_) => return Some(chain),
                RemoveSpot::Deeper(begin) => {
                    let mut link = layer;
                    loop {
                        let n = link.as_deref().expect("container just located");
                        if begin < n.range.begin {
                            link = &n.left;
                        } else if begin > n.range.begin {
                            link = &n.right;
                        } else {
                            chain.push(n.rule.prefix);
                            layer = &n.next_layer;
                            break;
                        }
                    }
                }
            }
        }
    }

    /// Whether the first layer holds any node whose range begins within
    /// `[lo, hi]`. The segmented engine uses this to track distinct reduced
    /// keys: rules sharing a reduced key occupy exactly that key's range.
    pub(crate) fn has_layer1_begin_in(&self, lo: Address, hi: Address) -> bool {
        find_begin_in(&self.root, lo, hi).is_some()
    }

    /// All stored rules, layer by layer in unspecified order.
    pub fn rules(&self) -> Vec<Rule> {
        let mut out = Vec::with_capacity(self.size);
        fn walk(link: &Link, out: &mut Vec<Rule>) {
            if let Some(n) = link {
                out.push(n.rule);
                walk(&n.left, out);
                walk(&n.right, out);
                walk(&n.next_layer, out);
            }
        }
        walk(&self.root, &mut out);
        out
    }

    /// Shape of every layer tree in the structure (first layer plus every
    /// next layer), for balance reporting.
    pub fn layers(&self) -> Vec<LayerStats> {
        fn walk<'a>(link: &'a Link, count: &mut usize, pending: &mut Vec<&'a Link>) {
            if let Some(n) = link {
                *count += 1;
                if n.next_layer.is_some() {
                    pending.push(&n.next_layer);
                }
                walk(&n.left, count, pending);
                walk(&n.right, count, pending);
            }
        }
        let mut out = Vec::new();
        let mut pending: Vec<&Link> = vec![&self.root];
        while let Some(layer) = pending.pop() {
            if layer.is_none() {
                continue;
            }
            let mut count = 0usize;
            walk(layer, &mut count, &mut pending);
            out.push(LayerStats {
                height: height(layer) as usize,
                nodes: count,
            });
        }
        out
    }

    /// Check every structural invariant; an empty report means the tree is
    /// valid. Violations are returned as data rather than panicking so a
    /// damaged tree can still be inspected.
    pub fn validate(&self) -> Vec<String> {
        let mut diags = Vec::new();
        let count = validate_layer(&self.root, None, self.width, &mut diags);
        if count != self.size {
            diags.push(format!(
                "size mismatch: counted {count} nodes, recorded {}",
                self.size
            ));
        }
        diags
    }
}

/// Validates one layer (and recursively its next layers). Returns the number
/// of nodes seen, including deeper layers.
fn validate_layer(
    link: &Link,
    container: Option<AddrRange>,
    width: AddressWidth,
    diags: &mut Vec<String>,
) -> usize {
    let window = container.map_or(
        (Address::new(0), Address::new(width.max_value())),
        |c| (c.begin, c.end),
    );
    let (count, _height) = validate_node(link, container, Some(window), width, diags);
    count
}

fn validate_node(
    link: &Link,
    container: Option<AddrRange>,
    window: Option<(Address, Address)>,
    width: AddressWidth,
    diags: &mut Vec<String>,
) -> (usize, u8) {
    let n = match link {
        Some(n) => n,
        None => return (0, 0),
    };
    let label = n.rule.prefix.display(width);

    if !n.rule.prefix.is_valid_under(width) {
        diags.push(format!("{label}: prefix invalid under width {width}"));
    }
    if n.rule.weight <= Weight::from_integer(0) {
        diags.push(format!("{label}: non-positive weight"));
    }
    if n.rule.prefix.is_valid_under(width) && n.range != n.rule.prefix.range(width) {
        diags.push(format!("{label}: cached range does not match prefix"));
    }
    match window {
        Some((lo, hi)) => {
            if n.range.begin < lo || n.range.end > hi {
                diags.push(format!("{label}: range violates layer ordering window"));
            }
        }
        None => diags.push(format!("{label}: node present where ordering permits none")),
    }
    if let Some(c) = container {
        if !(c.contains_range(&n.range) && c != n.range) {
            diags.push(format!(
                "{label}: not strictly contained by its parent layer's rule"
            ));
        }
    }

    let left_window = match (window, n.range.begin.value().checked_sub(1)) {
        (Some((lo, _)), Some(hi)) if lo.value() <= hi => Some((lo, Address::new(hi))),
        _ => None,
    };
    let right_window = match (window, n.range.end.value().checked_add(1)) {
        (Some((_, hi)), Some(lo)) if lo <= hi.value() => Some((Address::new(lo), hi)),
        _ => None,
    };
    let (lc, lh) = validate_node(&n.left, container, left_window, width, diags);
    let (rc, rh) = validate_node(&n.right, container, right_window, width, diags);

    let real_height = 1 + lh.max(rh);
    if n.height != real_height {
        diags.push(format!(
            "{label}: stored height {} but computed {real_height}",
            n.height
        ));
    }
    let bf = lh as i16 - rh as i16;
    if bf.abs() > 1 {
        diags.push(format!("{label}: AVL balance violated (factor {bf})"));
    }

    let deeper = validate_layer(&n.next_layer, Some(n.range), width, diags);
    (lc + rc + deeper + 1, real_height)
}

/// Renders validation output for error messages in tests and tools.
pub fn format_diagnostics(diags: &[String]) -> String {
    let mut out = String::new();
    for d in diags {
        let _ = writeln!(out, "- {d}");
    }
    out
}
