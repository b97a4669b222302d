//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `--nocapture`) and enforcing its runtime budget.
//!
//! Run with `cargo test -p segmobatree --test acceptance`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use segmobatree::baseline::{brute_force_min_cost, linear_lookup, Treap};
use segmobatree::segment::Cost;
use segmobatree::workload::{gen_ruleset, gen_trace, gen_update_stream, GenConfig, TraceConfig, Update};
use segmobatree::{
    build_cost_matrix, dp_split, hash_cost, parse_ruleset_str, plan_cost, tree_cost, AccessCounter,
    Address, AddressWidth, LengthHistogram, MobaTree, Prefix, Rule, RuleSet, SegMobaTree, Segment,
    SegmentPlan, Weight,
};

const W8: AddressWidth = AddressWidth::of(8);
const W128: AddressWidth = AddressWidth::IPV6;

const TABLE1: &str = "\
0/2 1
64/2 2
128/3 3
176/4 4
192/5 5
224/6 6
140/6 7
188/6 8
48/6 9
12/6 10
60/6 11
48/7 12
";

fn table1() -> RuleSet {
    parse_ruleset_str(TABLE1, W8).unwrap().ruleset
}

fn p8(text: &str) -> Prefix {
    segmobatree::lpm::parse_prefix(text, W8).unwrap()
}

fn budget(name: &str, started: Instant, limit_secs: f64) {
    let took = started.elapsed().as_secs_f64();
    assert!(
        took < limit_secs,
        "{name} took {took:.2}s, budget {limit_secs}s"
    );
}

fn pass(name: &str) {
    println!("ACCEPTANCE {name}: PASS");
}

#[test]
fn criterion_1_table1_golden_suite() {
    let started = Instant::now();
    let rules = table1();
    let mut tree = MobaTree::new(W8);
    for &rule in rules.rules() {
        tree.insert(rule).unwrap();
    }

    // Layer membership: A-F in layer 1; G under C; H under D; I, J, K
    // under A; L under I (inside A).
    for a in ["0/2", "64/2", "128/3", "176/4", "192/5", "224/6"] {
        assert_eq!(tree.locate(p8(a)).unwrap(), vec![], "{a} must sit in layer 1");
    }
    assert_eq!(tree.locate(p8("140/6")).unwrap(), vec![p8("128/3")]);
    assert_eq!(tree.locate(p8("188/6")).unwrap(), vec![p8("176/4")]);
    for nested in ["48/6", "12/6", "60/6"] {
        assert_eq!(tree.locate(p8(nested)).unwrap(), vec![p8("0/2")], "{nested}");
    }
    assert_eq!(tree.locate(p8("48/7")).unwrap(), vec![p8("0/2"), p8("48/6")]);

    // lookup(140) = G; lookup(192) = E with zero next-layer descents.
    let mut counter = AccessCounter::new();
    assert_eq!(tree.lookup(Address::new(140), &mut counter).unwrap().prefix, p8("140/6"));
    let (hit, stats) = tree.lookup_with_stats(Address::new(192));
    assert_eq!(hit.unwrap().prefix, p8("192/5"));
    assert_eq!(stats.layer_descents, 0, "192 must resolve without leaving layer 1");

    // Exhaustive agreement with the linear oracle over all 256 addresses.
    for ip in 0..=255u128 {
        let addr = Address::new(ip);
        let mut c = AccessCounter::new();
        assert_eq!(
            tree.lookup(addr, &mut c).map(|r| (r.prefix, r.next_hop)),
            linear_lookup(&rules, addr).map(|r| (r.prefix, r.next_hop)),
            "ip {ip}"
        );
    }

    budget("criterion 1", started, 1.0);
    pass("C1 table1-golden-suite");
}

#[test]
fn criterion_2_dp_golden_suite() {
    let started = Instant::now();
    let rules = table1();
    let hist = LengthHistogram::from_ruleset(&rules).unwrap();

    // Hash costs 2, 4, 12 for segments 0-2, 3-4, 5-8.
    assert_eq!(hash_cost(&hist, Segment::new(0, 2)), Cost::from_integer(2));
    assert_eq!(hash_cost(&hist, Segment::new(3, 4)), Cost::from_integer(4));
    assert_eq!(hash_cost(&hist, Segment::new(5, 8)), Cost::from_integer(12));
    // Tree cost 6 for segment 2-4.
    assert_eq!(tree_cost(&rules, Segment::new(2, 4)).unwrap(), Cost::from_integer(6));

    let matrix = build_cost_matrix(&rules).unwrap();
    let (table, plan) = dp_split(&matrix);
    let published = SegmentPlan::parse("0-1,2-4,5-8", W8).unwrap();

    // The DP must reach the published plan's cost exactly; this
    // implementation's tie-breaking reproduces the plan itself too.
    let published_cost = plan_cost(&published, &matrix).unwrap();
    assert_eq!(table.min_cost(), published_cost);
    assert_eq!(plan_cost(&plan, &matrix).unwrap(), table.min_cost());
    assert_eq!(plan, published);

    budget("criterion 2", started, 1.0);
    pass("C2 dp-golden-suite");
}

#[test]
fn criterion_3_dp_optimality_vs_brute_force() {
    let started = Instant::now();
    for case in 0..200u64 {
        let width_bits = 8 + (case % 5) as u8; // widths 8..=12
        let width = AddressWidth::new(width_bits).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0xD0_0000 + case);
        let mut rules = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let count = rng.gen_range(20..90);
        while rules.len() < count {
            let len = rng.gen_range(0..=width.bits());
            let bits = rng.gen::<u128>() & width.max_value() & !width.host_mask(len);
            if !seen.insert((bits, len)) {
                continue;
            }
            let weight = if case % 3 == 0 {
                Weight::new(rng.gen_range(1..9u64), rng.gen_range(1..5u64))
            } else {
                Weight::from_integer(1)
            };
            rules.push(Rule::with_weight(
                Prefix::new(bits, len, width).unwrap(),
                rng.gen(),
                weight,
            ));
        }
        let set = RuleSet::from_rules(width, rules).unwrap();
        let matrix = build_cost_matrix(&set).unwrap();
        let (table, plan) = dp_split(&matrix);
        let (best, _) = brute_force_min_cost(&matrix).unwrap();
        assert_eq!(table.min_cost(), best, "case {case}: DP diverged from enumeration");
        assert_eq!(
            plan_cost(&plan, &matrix).unwrap(),
            best,
            "case {case}: returned plan does not attain the optimum"
        );
    }
    budget("criterion 3", started, 30.0);
    pass("C3 dp-optimality");
}

/// Shared driver for criteria 4, 5, and 7: a seeded base ruleset and a
/// 100k-operation alternating update stream.
fn fuzz_base(seed: u64, rules: usize) -> (RuleSet, Vec<Update>) {
    let base = gen_ruleset(&GenConfig {
        width: W128,
        rule_count: rules,
        hist: vec![(48, 0.3), (64, 0.3), (96, 0.2), (128, 0.2)],
        seed,
        base: None,
    })
    .unwrap();
    let stream = gen_update_stream(&base, 100_000, seed ^ 0xFEED).unwrap();
    (base, stream)
}

fn sample_addresses(rng: &mut ChaCha8Rng, live: &[Rule], n: usize) -> Vec<Address> {
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i % 2 == 0 && !live.is_empty() {
            let rule = &live[rng.gen_range(0..live.len())];
            let range = rule.prefix.range(W128);
            out.push(Address::new(rng.gen_range(range.begin.value()..=range.end.value())));
        } else {
            out.push(Address::new(rng.gen::<u128>()));
        }
    }
    out
}

fn apply_to_live(live: &mut Vec<Rule>, update: &Update) {
    match update {
        Update::Insert(rule) => live.push(*rule),
        Update::Delete(prefix) => {
            let at = live
                .iter()
                .position(|r| r.prefix == *prefix)
                .expect("stream deletes existing rules");
            live.swap_remove(at);
        }
    }
}

#[test]
fn criterion_4_oracle_equivalence_fuzz() {
    let started = Instant::now();
    let (base, stream) = fuzz_base(0xACE, 2_000);

    let mut engine = SegMobaTree::build(&base, None).unwrap();
    let mut moba = MobaTree::new(W128);
    let mut treap = Treap::new(W128);
    for &rule in base.rules() {
        moba.insert(rule).unwrap();
        treap.insert(rule).unwrap();
    }
    let mut live: Vec<Rule> = base.rules().to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(0xCAFE);

    for (step, update) in stream.iter().enumerate() {
        match update {
            Update::Insert(rule) => {
                engine.insert(*rule).unwrap();
                moba.insert(*rule).unwrap();
                treap.insert(*rule).unwrap();
            }
            Update::Delete(prefix) => {
                assert!(engine.remove(*prefix).is_some(), "step {step}");
                assert!(moba.remove(*prefix).is_some(), "step {step}");
                assert!(treap.remove(*prefix).is_some(), "step {step}");
            }
        }
        apply_to_live(&mut live, update);

        if (step + 1) % 1_000 == 0 {
            let diags = moba.validate();
            assert!(diags.is_empty(), "step {step} moba: {diags:?}");
            let diags = treap.validate();
            assert!(diags.is_empty(), "step {step} treap: {diags:?}");
            let diags = engine.validate();
            assert!(diags.is_empty(), "step {step} engine: {diags:?}");

            let set = RuleSet::from_rules(W128, live.clone()).unwrap();
            let mut counter = AccessCounter::new();
            for addr in sample_addresses(&mut rng, &live, 10_000) {
                let want = linear_lookup(&set, addr).map(|r| (r.prefix, r.next_hop));
                let got = engine.lookup(addr, &mut counter).map(|r| (r.prefix, r.next_hop));
                assert_eq!(got, want, "segmoba diverged at step {step}");
                let got = moba.lookup(addr, &mut counter).map(|r| (r.prefix, r.next_hop));
                assert_eq!(got, want, "moba diverged at step {step}");
                let got = treap.lookup(addr, &mut counter).map(|r| (r.prefix, r.next_hop));
                assert_eq!(got, want, "treap diverged at step {step}");
            }
        }
    }

    budget("criterion 4", started, 300.0);
    pass("C4 oracle-equivalence-fuzz");
}

#[test]
fn criterion_5_balance_property() {
    // Replays criterion 4's exact operation sequence, then checks the
    // balance guarantee on every layer of every structure.
    let (base, stream) = fuzz_base(0xACE, 2_000);
    let mut engine = SegMobaTree::build(&base, None).unwrap();
    let mut moba = MobaTree::new(W128);
    for &rule in base.rules() {
        moba.insert(rule).unwrap();
    }
    for update in &stream {
        match update {
            Update::Insert(rule) => {
                engine.insert(*rule).unwrap();
                moba.insert(*rule).unwrap();
            }
            Update::Delete(prefix) => {
                engine.remove(*prefix).unwrap();
                moba.remove(*prefix).unwrap();
            }
        }
    }

    // validate() checks the per-node height-difference <= 1 on every layer.
    let diags = moba.validate();
    assert!(diags.is_empty(), "{diags:?}");
    let diags = engine.validate();
    assert!(diags.is_empty(), "{diags:?}");

    let bound = |nodes: usize| 1.45 * ((nodes as f64) + 2.0).log2();
    for (i, layer) in moba.layers().iter().enumerate() {
        assert!(
            (layer.height as f64) <= bound(layer.nodes),
            "moba layer {i}: height {} over bound for {} nodes",
            layer.height,
            layer.nodes
        );
    }
    for (i, layer) in engine.layer_stats().iter().enumerate() {
        assert!(
            (layer.height as f64) <= bound(layer.nodes),
            "engine layer {i}: height {} over bound for {} nodes",
            layer.height,
            layer.nodes
        );
    }
    pass("C5 balance-property");
}

#[test]
fn criterion_6_access_count_properties() {
    let started = Instant::now();
    // Edge-style ruleset: 100k rules massed at lengths 64/96/128.
    let rules = gen_ruleset(&GenConfig {
        width: W128,
        rule_count: 100_000,
        hist: vec![(64, 0.34), (96, 0.33), (128, 0.33)],
        seed: 0x6E,
        base: None,
    })
    .unwrap();
    let trace = gen_trace(
        &rules,
        &TraceConfig {
            packet_count: 10_000,
            repeat_factor: 1,
            match_fraction: 1.0,
            seed: 0x6E66,
        },
    )
    .unwrap();

    let engine = SegMobaTree::build(&rules, None).unwrap();
    let mut moba = MobaTree::new(W128);
    let mut treap = Treap::new(W128);
    for &rule in rules.rules() {
        moba.insert(rule).unwrap();
        treap.insert(rule).unwrap();
    }

    let occupied = engine.occupied_segments();
    let mut seg_total = 0u128;
    let mut moba_total = 0u128;
    let mut treap_total = 0u128;
    for &addr in &trace {
        let mut c = AccessCounter::new();
        engine.lookup(addr, &mut c);
        assert!(
            (c.bucket_probes as usize) <= occupied,
            "lookup probed {} tables, only {occupied} occupied",
            c.bucket_probes
        );
        seg_total += c.total() as u128;

        let mut c = AccessCounter::new();
        moba.lookup(addr, &mut c);
        moba_total += c.total() as u128;

        let mut c = AccessCounter::new();
        treap.lookup(addr, &mut c);
        treap_total += c.total() as u128;
    }

    let n = trace.len() as u128;
    let seg_avg = Cost::new(seg_total, n);
    let moba_avg = Cost::new(moba_total, n);
    let treap_avg = Cost::new(treap_total, n);
    println!(
        "avg accesses: segmoba {seg_total}/{n}, moba {moba_total}/{n}, treap {treap_total}/{n}"
    );
    assert!(seg_avg <= moba_avg, "segmented engine must not regress the single tree");
    assert!(moba_avg <= treap_avg, "layered tree must beat the treap baseline here");
    assert!(seg_avg <= treap_avg);

    budget("criterion 6", started, 120.0);
    pass("C6 access-count-properties");
}

#[test]
fn criterion_7_rebuild_equivalence() {
    let (base, stream) = fuzz_base(0x7777, 20_000);

    let mut engine = SegMobaTree::build(&base, None).unwrap();
    let mut moba = MobaTree::new(W128);
    for &rule in base.rules() {
        moba.insert(rule).unwrap();
    }
    let mut live: Vec<Rule> = base.rules().to_vec();
    for update in &stream {
        match update {
            Update::Insert(rule) => {
                engine.insert(*rule).unwrap();
                moba.insert(*rule).unwrap();
            }
            Update::Delete(prefix) => {
                engine.remove(*prefix).unwrap();
                moba.remove(*prefix).unwrap();
            }
        }
        apply_to_live(&mut live, update);
    }

    let final_set = RuleSet::from_rules(W128, live.clone()).unwrap();
    let fresh_engine = SegMobaTree::build(&final_set, None).unwrap();
    let mut fresh_moba = MobaTree::new(W128);
    for &rule in final_set.rules() {
        fresh_moba.insert(rule).unwrap();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(0x7AB);
    let mut counter = AccessCounter::new();
    for addr in sample_addresses(&mut rng, &live, 10_000) {
        assert_eq!(
            engine.lookup(addr, &mut counter).map(|r| (r.prefix, r.next_hop)),
            fresh_engine.lookup(addr, &mut counter).map(|r| (r.prefix, r.next_hop)),
            "updated segmoba differs from fresh build"
        );
        assert_eq!(
            moba.lookup(addr, &mut counter).map(|r| (r.prefix, r.next_hop)),
            fresh_moba.lookup(addr, &mut counter).map(|r| (r.prefix, r.next_hop)),
            "updated moba differs from fresh build"
        );
    }
    pass("C7 rebuild-equivalence");
}
