//! Choosing the next heuristic to ask about: local search along hierarchy
//! edges from the seed, universal search over the whole hierarchy by
//! benefit, a hybrid that toggles between them after `tau` misses, and the
//! high-precision / high-coverage baselines.
//!
//! Node benefits are read from the hierarchy; callers refresh them first.

use std::cmp::Ordering;
use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::DocSet;
use crate::error::{Error, Result};
use crate::hierarchy::{Hierarchy, NodeId, Status};
use crate::index::DerivationIndex;

pub const DEFAULT_TAU: u32 = 5;
/// `tau` value that never toggles.
pub const TAU_INFINITE: u32 = u32::MAX;
/// Universal search skips nodes whose average benefit is at or below this.
pub const MIN_AVERAGE_BENEFIT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Local,
    Universal,
    Hybrid,
    #[serde(rename = "highp")]
    HighP,
    #[serde(rename = "highc")]
    HighC,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Local,
        Strategy::Universal,
        Strategy::Hybrid,
        Strategy::HighP,
        Strategy::HighC,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Local => "local",
            Strategy::Universal => "universal",
            Strategy::Hybrid => "hybrid",
            Strategy::HighP => "highp",
            Strategy::HighC => "highc",
        }
    }

    /// Whether the strategy follows parent/child edges from asked nodes.
    pub fn uses_local(self) -> bool {
        matches!(self, Strategy::Local | Strategy::Hybrid)
    }

    /// Whether the strategy draws from the generated candidate set.
    pub fn uses_universal(self) -> bool {
        !matches!(self, Strategy::Local)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalState {
    pub strategy: Strategy,
    pub tau: u32,
    pub universal_mode: bool,
    pub attempt: u32,
    local: BTreeSet<NodeId>,
    universal: Vec<NodeId>,
    pending: Option<NodeId>,
    asked: Vec<NodeId>,
}

/// Unasked, not pruned, not `*`, and adds at least one sentence outside P.
pub fn eligible(h: &Hierarchy, id: NodeId) -> bool {
    let n = h.node(id);
    n.status == Status::Unasked && !n.heuristic.is_root() && n.benefit.new_count > 0
}

/// Best node by `metric` desc, then coverage desc, then canonical form asc.
fn best_by(
    h: &Hierarchy,
    ids: impl IntoIterator<Item = NodeId>,
    metric: impl Fn(NodeId) -> f64,
) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for id in ids {
        let m = metric(id);
        let better = match best {
            None => true,
            Some((b, bm)) => {
                let (n, bn) = (h.node(id), h.node(b));
                m.partial_cmp(&bm)
                    .unwrap_or(Ordering::Equal)
                    .then(n.coverage.len().cmp(&bn.coverage.len()))
                    .then_with(|| bn.canonical.cmp(&n.canonical))
                    == Ordering::Greater
            }
        };
        if better {
            best = Some((id, m));
        }
    }
    best.map(|(id, _)| id)
}

/// Local candidate with the largest total benefit.
pub fn next_query_local(state: &TraversalState, h: &Hierarchy) -> Option<NodeId> {
    best_by(
        h,
        state.local.iter().copied().filter(|&id| eligible(h, id)),
        |id| h.node(id).benefit.total,
    )
}

/// Largest total benefit among generated candidates whose average benefit
/// exceeds the filter.
pub fn next_query_universal(state: &TraversalState, h: &Hierarchy) -> Option<NodeId> {
    best_by(
        h,
        state
            .universal
            .iter()
            .copied()
            .filter(|&id| eligible(h, id) && h.node(id).benefit.average > MIN_AVERAGE_BENEFIT),
        |id| h.node(id).benefit.total,
    )
}

/// Largest average benefit, unfiltered.
pub fn next_query_highp(state: &TraversalState, h: &Hierarchy) -> Option<NodeId> {
    best_by(
        h,
        state.universal.iter().copied().filter(|&id| eligible(h, id)),
        |id| h.node(id).benefit.average,
    )
}

/// Most sentences outside P.
pub fn next_query_highc(state: &TraversalState, h: &Hierarchy) -> Option<NodeId> {
    best_by(
        h,
        state.universal.iter().copied().filter(|&id| eligible(h, id)),
        |id| h.node(id).benefit.new_count as f64,
    )
}

impl TraversalState {
    pub fn new(strategy: Strategy, tau: u32) -> Result<Self> {
        if tau == 0 {
            return Err(Error::Config("tau must be at least 1".into()));
        }
        Ok(TraversalState {
            strategy,
            tau,
            universal_mode: true,
            attempt: 0,
            local: BTreeSet::new(),
            universal: Vec::new(),
            pending: None,
            asked: Vec::new(),
        })
    }

    pub fn local(&self) -> &BTreeSet<NodeId> {
        &self.local
    }

    pub fn universal(&self) -> &[NodeId] {
        &self.universal
    }

    /// Nodes submitted so far, in order.
    pub fn asked(&self) -> &[NodeId] {
        &self.asked
    }

    pub fn pending(&self) -> Option<NodeId> {
        self.pending
    }

    /// Replaces the universal candidates with a freshly generated set.
    pub fn set_universal(&mut self, ids: Vec<NodeId>) {
        self.universal = ids;
    }

    pub fn add_local(&mut self, ids: impl IntoIterator<Item = NodeId>) {
        self.local.extend(ids);
    }

    /// Every node a selection may look at.
    pub fn candidates(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.local.iter().chain(self.universal.iter()).copied()
    }

    /// Picks the next query and marks it pending; `None` when exhausted.
    /// Hybrid search toggles mode once `attempt` reaches `tau`, or when the
    /// current mode has nothing left.
    pub fn next_query(&mut self, h: &Hierarchy) -> Option<NodeId> {
        if let Some(p) = self.pending {
            return Some(p);
        }
        let pick = match self.strategy {
            Strategy::Local => next_query_local(self, h),
            Strategy::Universal => next_query_universal(self, h),
            Strategy::HighP => next_query_highp(self, h),
            Strategy::HighC => next_query_highc(self, h),
            Strategy::Hybrid => {
                if self.attempt >= self.tau {
                    self.toggle();
                }
                match self.hybrid_pick(h) {
                    Some(id) => Some(id),
                    None => {
                        self.toggle();
                        self.hybrid_pick(h)
                    }
                }
            }
        };
        self.pending = pick;
        pick
    }

    fn toggle(&mut self) {
        self.universal_mode = !self.universal_mode;
        self.attempt = 0;
    }

    fn hybrid_pick(&self, h: &Hierarchy) -> Option<NodeId> {
        if self.universal_mode {
            next_query_universal(self, h)
        } else {
            next_query_local(self, h)
        }
    }

    /// Records the answer for the pending node: YES adds its parents to the
    /// local candidates and resets `attempt`, NO adds its children and
    /// counts a miss. Missing parents/children are pulled into `h` from the
    /// index. `positives` is P after the answer.
    pub fn apply_feedback(
        &mut self,
        h: &mut Hierarchy,
        id: NodeId,
        answer: bool,
        index: &dyn DerivationIndex,
        positives: &DocSet,
    ) -> Result<()> {
        if self.pending != Some(id) {
            return Err(Error::UnexpectedFeedback(h.node(id).heuristic.to_string()));
        }
        self.pending = None;
        self.asked.push(id);
        self.local.remove(&id);
        if answer {
            self.attempt = 0;
        } else {
            self.attempt = self.attempt.saturating_add(1).min(self.tau);
        }
        if self.strategy.uses_local() {
            let next = if answer {
                h.expand_parents(id, index)?
            } else {
                h.expand_children(id, index)?
            };
            self.extend_local(h, next, index, positives, answer)?;
        }
        Ok(())
    }

    /// Seeds the local candidates: the parents of accepted seed rules, or the
    /// given start nodes themselves.
    pub fn start_from(
        &mut self,
        h: &mut Hierarchy,
        seeds: &[NodeId],
        accepted: bool,
        index: &dyn DerivationIndex,
        positives: &DocSet,
    ) -> Result<()> {
        if !self.strategy.uses_local() {
            return Ok(());
        }
        for &id in seeds {
            let next = if accepted {
                h.expand_parents(id, index)?
            } else {
                vec![id]
            };
            self.extend_local(h, next, index, positives, accepted)?;
        }
        Ok(())
    }

    /// Adds nodes to the local candidates. `*` is never asked; it stands for
    /// a rejected node, so its children join instead. Going up, a parent that
    /// adds nothing outside P would be a sure YES, so its own parents join.
    fn extend_local(
        &mut self,
        h: &mut Hierarchy,
        ids: Vec<NodeId>,
        index: &dyn DerivationIndex,
        positives: &DocSet,
        upward: bool,
    ) -> Result<()> {
        let mut stack = ids;
        let mut seen = HashSet::new();
        while let Some(id) = stack.pop() {
            if !seen.insert(id) || h.node(id).status != Status::Unasked {
                continue;
            }
            let node = h.node(id);
            if node.heuristic.is_root() {
                let children = h.expand_children(id, index)?;
                self.local
                    .extend(children.into_iter().filter(|&c| h.node(c).status == Status::Unasked));
            } else if upward && node.coverage.iter().all(|&d| positives.contains(d as usize)) {
                stack.extend(h.expand_parents(id, index)?);
            } else {
                self.local.insert(id);
            }
        }
        Ok(())
    }
}
