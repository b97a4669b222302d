//! Longest-prefix matching for wide (up to 128-bit) address spaces, built
//! around two ideas:
//!
//! * [`MobaTree`] — a multilayer online balanced tree. Each layer is an
//!   AVL tree over pairwise disjoint rule ranges; rules nested inside
//!   another rule live in that rule's next layer. Lookup walks one short
//!   path per layer instead of chasing a trie bit by bit.
//! * [`SegMobaTree`] — prefix lengths are partitioned into segments, each
//!   segment owning a hash table from reduced prefixes to small MobaTrees.
//!   The partition is chosen by dynamic programming over an explicit
//!   lookup-cost model ([`segment`]), trading hash probes against tree
//!   depth for the ruleset actually installed.
//!
//! The crate also carries the measurement kit the design was evaluated
//! with: a linear-scan oracle and a Treap baseline ([`baseline`]),
//! deterministic ruleset/trace/update generators ([`workload`]), and
//! memory-access counting hooks ([`AccessCounter`]). The `segmoba` binary
//! in this workspace drives all of it from the command line.

pub mod baseline;
pub mod engine;
pub mod lpm;
pub mod moba;
pub mod segment;
pub mod workload;

pub use engine::{EngineStats, MemoryModel, SegMobaTree};
pub use lpm::{
    parse_ruleset, parse_ruleset_str, write_ruleset, AddrRange, Address, AddressWidth, ParsedRuleset,
    Prefix, PrefixRelation, Rule, RuleSet, Weight,
};
pub use moba::{AccessCounter, LookupStats, MobaTree};
pub use segment::{
    build_cost_matrix, dp_split, hash_cost, plan_cost, tree_cost, CostMatrix, LengthHistogram,
    Segment, SegmentPlan, SplitTable,
};

// The book's code blocks double as doc-tests so the guide cannot drift from
// the API. `cargo test --doc` compiles and runs every ```rust fence below
// book/src/.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/prefixes.md")]
    mod prefixes {}
    #[doc = include_str!("../../../book/src/mobatree.md")]
    mod mobatree {}
    #[doc = include_str!("../../../book/src/cost-model.md")]
    mod cost_model {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/workloads.md")]
    mod workloads {}
}
