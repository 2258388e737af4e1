//! Greedy best-first candidate generation over an index and the
//! superset→subset hierarchy the traversal strategies walk.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{DocId, DocSet};
use crate::error::{Error, Result};
use crate::grammar::{Axis, Constraint, Element, Heuristic};
use crate::index::{CanonKey, DerivationIndex, Expander};

pub const DEFAULT_CANDIDATES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub heuristic: Heuristic,
    /// Sentences covered.
    pub count: u32,
    /// Covered sentences in the positive set used for generation.
    pub pos: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub candidates: Vec<Candidate>,
    /// The derivation space ran out before `k` candidates were found.
    pub exhausted: bool,
}

/// Frontier entry. Zero-score children of an expanded node are kept as one
/// group entry until every better candidate has been taken: the group ranks
/// at (0, parent count), which bounds each of its members.
struct Frontier {
    pos: u32,
    count: u32,
    group: bool,
    canon: CanonKey,
    key: u32,
}

impl PartialEq for Frontier {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Frontier {}

impl PartialOrd for Frontier {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Max-heap order: more positives, then more coverage, then groups before
/// members, then the smaller canonical form.
impl Ord for Frontier {
    fn cmp(&self, other: &Self) -> Ordering {
        self.pos
            .cmp(&other.pos)
            .then(self.count.cmp(&other.count))
            .then(self.group.cmp(&other.group))
            .then_with(|| other.canon.cmp(&self.canon))
            .then(other.key.cmp(&self.key))
    }
}

/// Picks `k` heuristics greedily by coverage of `positives` (ties: larger
/// total coverage, then smaller canonical form). The root `*` comes first and
/// counts toward `k`.
pub fn generate_candidates(
    index: &dyn DerivationIndex,
    positives: &DocSet,
    k: usize,
) -> Result<Generated> {
    if k == 0 {
        return Err(Error::Config("candidate count k must be at least 1".into()));
    }
    let mut ex = index.expander();
    let root = ex.root();
    let pos_root = positives.count_ones(..) as u32;
    let mut out = vec![Candidate {
        heuristic: ex.heuristic(root.key),
        count: root.count,
        pos: pos_root,
    }];
    let mut heap = BinaryHeap::new();
    let mut seen: HashSet<u32> = HashSet::from([root.key]);
    if k > 1 {
        push_children(ex.as_mut(), root.key, root.count, positives, &mut heap, &mut seen);
    }
    while out.len() < k {
        let Some(top) = heap.pop() else {
            break;
        };
        if top.group {
            for c in ex.zero_children(top.key, positives) {
                if seen.insert(c.key) {
                    heap.push(Frontier {
                        pos: 0,
                        count: c.count,
                        group: false,
                        canon: c.canon,
                        key: c.key,
                    });
                }
            }
            continue;
        }
        out.push(Candidate {
            heuristic: ex.heuristic(top.key),
            count: top.count,
            pos: top.pos,
        });
        push_children(ex.as_mut(), top.key, top.count, positives, &mut heap, &mut seen);
    }
    let exhausted = out.len() < k;
    Ok(Generated {
        candidates: out,
        exhausted,
    })
}

fn push_children(
    ex: &mut dyn Expander,
    key: u32,
    count: u32,
    positives: &DocSet,
    heap: &mut BinaryHeap<Frontier>,
    seen: &mut HashSet<u32>,
) {
    for c in ex.positive_children(key, positives) {
        if seen.insert(c.key) {
            heap.push(Frontier {
                pos: c.pos,
                count: c.count,
                group: false,
                canon: c.canon,
                key: c.key,
            });
        }
    }
    heap.push(Frontier {
        pos: 0,
        count,
        group: true,
        canon: Vec::new().into(),
        key,
    });
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Unasked,
    Accepted,
    Rejected,
    Pruned,
}

/// Expected gain of a heuristic: the summed and average positive probability
/// of the sentences it would add.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Benefit {
    pub total: f64,
    pub average: f64,
    /// Covered sentences outside the positive set.
    pub new_count: usize,
}

pub type NodeId = u32;

#[derive(Clone, Debug)]
pub struct HNode {
    pub heuristic: Heuristic,
    pub canonical: String,
    pub coverage: Vec<DocId>,
    pub status: Status,
    pub parents: Vec<NodeId>,
    pub children: Vec<NodeId>,
    pub benefit: Benefit,
}

impl HNode {
    /// Covered sentences outside `positives`.
    pub fn new_positives(&self, positives: &DocSet) -> usize {
        self.coverage
            .iter()
            .filter(|&&d| !positives.contains(d as usize))
            .count()
    }
}

/// Candidates linked parent→child wherever one is a one-step derivation of
/// the other. Nodes can be added lazily; edges are found through canonical
/// forms in O(1) per parent.
#[derive(Clone, Debug, Default)]
pub struct Hierarchy {
    nodes: Vec<HNode>,
    by_canonical: HashMap<String, NodeId>,
    /// Canonical form of a (possibly absent) parent -> nodes derived from it.
    by_parent: HashMap<String, Vec<NodeId>>,
}

impl Hierarchy {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &HNode {
        &self.nodes[id as usize]
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &HNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (i as NodeId, n))
    }

    pub fn find(&self, h: &Heuristic) -> Option<NodeId> {
        self.by_canonical.get(&h.canonical()).copied()
    }

    pub fn set_status(&mut self, id: NodeId, status: Status) {
        self.nodes[id as usize].status = status;
    }

    pub fn set_benefit(&mut self, id: NodeId, benefit: Benefit) {
        self.nodes[id as usize].benefit = benefit;
    }

    /// Adds `h` (if new) with the given coverage and links it to present
    /// parents and children.
    pub fn insert(&mut self, h: Heuristic, coverage: Vec<DocId>) -> NodeId {
        let canonical = h.canonical();
        if let Some(&id) = self.by_canonical.get(&canonical) {
            return id;
        }
        let id = self.nodes.len() as NodeId;
        let parent_forms: Vec<String> = h.parents().iter().map(Heuristic::canonical).collect();
        let mut parents = Vec::new();
        for pc in parent_forms {
            if let Some(&p) = self.by_canonical.get(&pc) {
                parents.push(p);
                self.nodes[p as usize].children.push(id);
            }
            self.by_parent.entry(pc).or_default().push(id);
        }
        let children = self.by_parent.get(&canonical).cloned().unwrap_or_default();
        for &c in &children {
            self.nodes[c as usize].parents.push(id);
        }
        self.by_canonical.insert(canonical.clone(), id);
        self.nodes.push(HNode {
            heuristic: h,
            canonical,
            coverage,
            status: Status::Unasked,
            parents,
            children,
            benefit: Benefit::default(),
        });
        id
    }

    /// Adds `h` with coverage from the index.
    pub fn ensure(&mut self, h: &Heuristic, index: &dyn DerivationIndex) -> Result<NodeId> {
        if let Some(id) = self.find(h) {
            return Ok(id);
        }
        let cov = index.coverage(h)?;
        Ok(self.insert(h.clone(), cov))
    }

    /// Parent nodes of `id`, adding absent one-step parents from the grammar.
    pub fn expand_parents(&mut self, id: NodeId, index: &dyn DerivationIndex) -> Result<Vec<NodeId>> {
        let parents = self.nodes[id as usize].heuristic.parents();
        for p in &parents {
            self.ensure(p, index)?;
        }
        Ok(self.nodes[id as usize].parents.clone())
    }

    /// Child nodes of `id`, adding absent one-step children from the index.
    pub fn expand_children(&mut self, id: NodeId, index: &dyn DerivationIndex) -> Result<Vec<NodeId>> {
        let h = self.nodes[id as usize].heuristic.clone();
        for c in index.children_of(&h)? {
            self.ensure(&c, index)?;
        }
        Ok(self.nodes[id as usize].children.clone())
    }

    /// Marks pruned every unasked node that adds nothing outside `positives`
    /// or lies below an accepted node. Pruned nodes stay linked.
    pub fn cleanup(&mut self, positives: &DocSet) -> usize {
        let mut under_accepted = vec![false; self.nodes.len()];
        // lazily added nodes break creation order, so walk down from each accepted node
        let mut stack: Vec<NodeId> = self
            .nodes()
            .filter(|(_, n)| n.status == Status::Accepted)
            .map(|(i, _)| i)
            .collect();
        while let Some(id) = stack.pop() {
            for &c in &self.nodes[id as usize].children {
                if !under_accepted[c as usize] {
                    under_accepted[c as usize] = true;
                    stack.push(c);
                }
            }
        }
        let mut pruned = 0;
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if node.status != Status::Unasked {
                continue;
            }
            let subsumed = under_accepted[i]
                || node
                    .coverage
                    .iter()
                    .all(|&d| positives.contains(d as usize));
            if subsumed {
                node.status = Status::Pruned;
                pruned += 1;
            }
        }
        pruned
    }

    pub fn dump(&self) -> HierarchyDump {
        HierarchyDump {
            v: 1,
            nodes: self
                .nodes()
                .map(|(id, n)| DumpNode {
                    id,
                    display: n.heuristic.to_string(),
                    canonical: n.canonical.clone(),
                    coverage_size: n.coverage.len(),
                    status: n.status,
                    total_benefit: n.benefit.total,
                    average_benefit: n.benefit.average,
                    parents: n.parents.clone(),
                    children: n.children.clone(),
                })
                .collect(),
        }
    }
}

/// Builds the hierarchy over `cands`, with coverage from the index.
pub fn build_hierarchy(cands: &[Heuristic], index: &dyn DerivationIndex) -> Result<Hierarchy> {
    let mut h = Hierarchy::default();
    for c in cands {
        h.ensure(c, index)?;
    }
    Ok(h)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HierarchyDump {
    pub v: u32,
    pub nodes: Vec<DumpNode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DumpNode {
    pub id: NodeId,
    pub display: String,
    pub canonical: String,
    pub coverage_size: usize,
    pub status: Status,
    pub total_benefit: f64,
    pub average_benefit: f64,
    pub parents: Vec<NodeId>,
    pub children: Vec<NodeId>,
}

/// Minimum shares of the selected candidates; all zero disables the filter.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiversityConfig {
    /// Share of `k` reserved for every derivation depth present in the pool.
    pub min_per_level: f64,
    /// Share of `k` reserved for every combination of derivation rules used.
    pub min_per_rule_kind: f64,
    /// Share of the positives that selected candidates must cover.
    pub min_positive_coverage: f64,
}

impl DiversityConfig {
    pub fn enabled(&self) -> bool {
        self.min_per_level > 0.0 || self.min_per_rule_kind > 0.0 || self.min_positive_coverage > 0.0
    }
}

/// Which derivation rules a heuristic uses, e.g. `literal+plus` or `child+and`.
pub fn rule_kind(h: &Heuristic) -> String {
    let mut kinds: Vec<&str> = Vec::new();
    match h {
        Heuristic::Tokens(p) => {
            for el in p.elements() {
                kinds.push(match el {
                    Element::Literal(_) => "literal",
                    Element::Gap(crate::grammar::Gap::Star) => "star",
                    Element::Gap(crate::grammar::Gap::Plus) => "plus",
                });
            }
        }
        Heuristic::Tree(p) => {
            fn walk(list: &[Constraint], kinds: &mut Vec<&str>) {
                if list.len() > 1 {
                    kinds.push("and");
                }
                for c in list {
                    kinds.push(match c.axis {
                        Axis::Child => "child",
                        Axis::Descendant => "descendant",
                    });
                    walk(&c.node.children, kinds);
                }
            }
            walk(p.constraints(), &mut kinds);
        }
    }
    kinds.sort_unstable();
    kinds.dedup();
    if kinds.is_empty() {
        "root".into()
    } else {
        kinds.join("+")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diversified {
    pub candidates: Vec<Candidate>,
    pub warnings: Vec<String>,
}

/// Chooses `k` of the ranked `cands`, first honoring the reserved shares, then
/// by rank. Unsatisfiable shares are met as far as possible and reported.
pub fn diversity_filter(
    cands: Vec<Candidate>,
    k: usize,
    config: &DiversityConfig,
    index: &dyn DerivationIndex,
    positives: &DocSet,
) -> Result<Diversified> {
    if !config.enabled() {
        return Ok(Diversified {
            candidates: cands,
            warnings: Vec::new(),
        });
    }
    let k = k.min(cands.len());
    let mut chosen = vec![false; cands.len()];
    let mut taken = 0;
    let mut warnings = Vec::new();

    let reserve = |groups: Vec<String>, share: f64, what: &str, chosen: &mut Vec<bool>, taken: &mut usize, warnings: &mut Vec<String>| {
        if share <= 0.0 {
            return;
        }
        let quota = (share * k as f64).ceil() as usize;
        let mut distinct: Vec<&String> = groups.iter().collect();
        distinct.sort();
        distinct.dedup();
        for g in distinct {
            let have = (0..cands.len()).filter(|&i| chosen[i] && groups[i] == *g).count();
            let mut need = quota.saturating_sub(have);
            for i in 0..cands.len() {
                if need == 0 {
                    break;
                }
                if !chosen[i] && groups[i] == *g && *taken < k {
                    chosen[i] = true;
                    *taken += 1;
                    need -= 1;
                }
            }
            if need > 0 {
                let msg = format!("{what} {g}: {need} short of the reserved {quota}");
                tracing::warn!("{msg}");
                warnings.push(msg);
            }
        }
    };
    let levels: Vec<String> = cands.iter().map(|c| c.heuristic.depth().to_string()).collect();
    reserve(levels, config.min_per_level, "level", &mut chosen, &mut taken, &mut warnings);
    let kinds: Vec<String> = cands.iter().map(|c| rule_kind(&c.heuristic)).collect();
    reserve(kinds, config.min_per_rule_kind, "rule kind", &mut chosen, &mut taken, &mut warnings);

    if config.min_positive_coverage > 0.0 {
        let total = positives.count_ones(..);
        let target = (config.min_positive_coverage * total as f64).ceil() as usize;
        let mut covered = DocSet::with_capacity(positives.len());
        for (i, c) in cands.iter().enumerate() {
            if chosen[i] && !c.heuristic.is_root() {
                covered.extend(index.coverage(&c.heuristic)?.into_iter().map(|d| d as usize));
            }
        }
        covered.intersect_with(positives);
        for (i, c) in cands.iter().enumerate() {
            if covered.count_ones(..) >= target || taken >= k {
                break;
            }
            if chosen[i] || c.heuristic.is_root() {
                continue;
            }
            let cov = index.coverage(&c.heuristic)?;
            if cov.iter().any(|&d| positives.contains(d as usize) && !covered.contains(d as usize)) {
                chosen[i] = true;
                taken += 1;
                covered.extend(cov.into_iter().map(|d| d as usize));
                covered.intersect_with(positives);
            }
        }
        let got = covered.count_ones(..);
        if got < target {
            let msg = format!("positive coverage {got} short of the reserved {target}");
            tracing::warn!("{msg}");
            warnings.push(msg);
        }
    }

    for c in chosen.iter_mut() {
        if taken >= k {
            break;
        }
        if !*c {
            *c = true;
            taken += 1;
        }
    }
    let candidates = cands
        .into_iter()
        .zip(chosen)
        .filter_map(|(c, keep)| keep.then_some(c))
        .collect();
    Ok(Diversified {
        candidates,
        warnings,
    })
}
