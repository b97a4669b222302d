//! A uniform mutable-engine facade over the four lookup structures so the
//! bench loops don't care which one they drive.

use anyhow::Result;
use segmobatree::baseline::{linear_lookup, Treap};
use segmobatree::{
    AccessCounter, Address, AddressWidth, MemoryModel, MobaTree, Prefix, Rule, RuleSet,
    SegMobaTree, SegmentPlan,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum EngineKind {
    Segmoba,
    Moba,
    Treap,
    Linear,
}

impl EngineKind {
    pub fn name(self) -> &'static str {
        match self {
            EngineKind::Segmoba => "segmoba",
            EngineKind::Moba => "moba",
            EngineKind::Treap => "treap",
            EngineKind::Linear => "linear",
        }
    }
}

pub enum Engine {
    Segmoba(SegMobaTree),
    Moba(MobaTree),
    Treap(Treap),
    /// The oracle as an engine: a flat rule list scanned per lookup.
    Linear { width: AddressWidth, rules: RuleSet },
}

impl Engine {
    pub fn build(kind: EngineKind, rules: &RuleSet, plan: Option<SegmentPlan>) -> Result<Self> {
        Ok(match kind {
            EngineKind::Segmoba => Engine::Segmoba(SegMobaTree::build(rules, plan)?),
            EngineKind::Moba => {
                let mut tree = MobaTree::new(rules.width());
                for &rule in rules.rules() {
                    tree.insert(rule)?;
                }
                Engine::Moba(tree)
            }
            EngineKind::Treap => {
                let mut treap = Treap::new(rules.width());
                for &rule in rules.rules() {
                    treap.insert(rule)?;
                }
                Engine::Treap(treap)
            }
            EngineKind::Linear => Engine::Linear {
                width: rules.width(),
                rules: rules.clone(),
            },
        })
    }

    pub fn lookup(&self, ip: Address, counter: &mut AccessCounter) -> Option<Rule> {
        match self {
            Engine::Segmoba(e) => e.lookup(ip, counter).copied(),
            Engine::Moba(e) => e.lookup(ip, counter).copied(),
            Engine::Treap(e) => e.lookup(ip, counter).copied(),
            Engine::Linear { rules, .. } => {
                counter.node_visits += rules.len() as u64;
                linear_lookup(rules, ip).copied()
            }
        }
    }

    pub fn insert(&mut self, rule: Rule) -> Result<()> {
        match self {
            Engine::Segmoba(e) => {
                e.insert(rule)?;
            }
            Engine::Moba(e) => {
                e.insert(rule)?;
            }
            Engine::Treap(e) => {
                e.insert(rule)?;
            }
            Engine::Linear { width, rules } => {
                let mut all = rules.rules().to_vec();
                match all.iter_mut().find(|r| r.prefix == rule.prefix) {
                    Some(slot) => *slot = rule,
                    None => all.push(rule),
                }
                *rules = RuleSet::from_rules(*width, all)?;
            }
        }
        Ok(())
    }

    pub fn remove(&mut self, prefix: Prefix) -> bool {
        match self {
            Engine::Segmoba(e) => e.remove(prefix).is_some(),
            Engine::Moba(e) => e.remove(prefix).is_some(),
            Engine::Treap(e) => e.remove(prefix).is_some(),
            Engine::Linear { width, rules } => {
                let mut all = rules.rules().to_vec();
                match all.iter().position(|r| r.prefix == prefix) {
                    Some(at) => {
                        all.remove(at);
                        *rules = RuleSet::from_rules(*width, all).expect("still distinct");
                        true
                    }
                    None => false,
                }
            }
        }
    }

    pub fn estimated_bytes(&self) -> Option<u64> {
        match self {
            Engine::Segmoba(e) => Some(e.stats(MemoryModel::default()).estimated_bytes),
            _ => None,
        }
    }

    pub fn plan_string(&self) -> Option<String> {
        match self {
            Engine::Segmoba(e) => Some(e.plan().to_string()),
            _ => None,
        }
    }
}
