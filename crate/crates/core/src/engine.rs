//! The discovery loop: from a seed rule (or a few positive sentences), grow
//! the positive set by asking an oracle about generated candidate rules
//! within a query budget.

use std::collections::HashSet;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::classifier::{self, Embeddings, LinearScorer, ScoreCache, Scorer, ScorerConfig, ScorerSnapshot};
use crate::corpus::{Corpus, DocId, DocSet};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Heuristic};
use crate::hierarchy::{
    self, DiversityConfig, Hierarchy, HierarchyDump, NodeId, Status, DEFAULT_CANDIDATES,
};
use crate::index::SketchIndex;
use crate::oracle::{self, Oracle, OracleQuery, DEFAULT_SAMPLES};
use crate::traversal::{Strategy, TraversalState, DEFAULT_TAU};

pub const CHECKPOINT_VERSION: u32 = 1;
pub const RESULTS_VERSION: u32 = 1;
/// Scores at or above this count as predicted positives.
pub const PREDICTED_CUT: f64 = 0.5;
/// Share of sentences in the evaluation split.
pub const HELD_OUT_PERCENT: u64 = 20;
/// Largest set system `max_coverage_optimum` enumerates.
pub const MAX_OPTIMUM_SETS: usize = 20;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seed {
    /// A rule in the grammar's surface syntax.
    Rule(String),
    /// At least two positive sentence ids.
    Sentences(Vec<u64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub strategy: Strategy,
    pub tau: u32,
    pub budget: usize,
    /// Candidates generated per hierarchy refresh.
    pub candidates: usize,
    pub samples: usize,
    pub lazy_rescoring: bool,
    pub scorer: ScorerConfig,
    pub diversity: DiversityConfig,
    /// Optional word-vector file for the scorer.
    pub embeddings: Option<String>,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            strategy: Strategy::Hybrid,
            tau: DEFAULT_TAU,
            budget: 100,
            candidates: DEFAULT_CANDIDATES,
            samples: DEFAULT_SAMPLES,
            lazy_rescoring: true,
            scorer: ScorerConfig::default(),
            diversity: DiversityConfig::default(),
            embeddings: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionStatus {
    Running,
    AwaitingAnswer,
    Done,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub query_id: u64,
    pub heuristic: Heuristic,
    pub answer: bool,
    pub coverage_size: usize,
    /// Sentences the answer added to P.
    pub new_positives: usize,
    pub positives_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub queries: usize,
    pub positives: usize,
    pub recall: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub v: u32,
    pub queries_used: usize,
    pub budget: usize,
    pub rules: usize,
    pub positives: usize,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub classifier: Option<ClassifierMetrics>,
    pub curve: Vec<CurvePoint>,
}

/// One recorded oracle answer, enough to rebuild the session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointAnswer {
    pub query_id: u64,
    pub canonical: String,
    pub answer: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub v: u32,
    pub grammar: Grammar,
    pub config: SessionConfig,
    pub seed: Seed,
    pub answers: Vec<CheckpointAnswer>,
}

impl Checkpoint {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json_atomic(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cp: Checkpoint = serde_json::from_str(&text)?;
        if cp.v != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: cp.v,
                expected: CHECKPOINT_VERSION,
            });
        }
        Ok(cp)
    }
}

/// Writes pretty JSON through a temporary file so readers never see a torn file.
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RuleExport {
    pub name: String,
    pub grammar: String,
    pub pattern: String,
    pub canonical: String,
    /// Label the rule votes for.
    pub label: i8,
    pub coverage_size: usize,
    pub seed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub v: u32,
    pub grammar: Grammar,
    pub strategy: Strategy,
    pub rules: Vec<RuleExport>,
    /// Sorted sentence ids.
    pub positives: Vec<u64>,
    pub queries: Vec<QueryRecord>,
    pub metrics: Metrics,
}

impl Results {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

fn mix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Fixed evaluation split: about one sentence in five, chosen by id.
pub fn is_held_out(id: u64) -> bool {
    mix(id) % 100 < HELD_OUT_PERCENT
}

/// An interactive discovery session. Drive it with [`Session::next_query`]
/// and [`Session::answer`], or hand it an oracle via [`run_session`].
pub struct Session {
    corpus: Arc<Corpus>,
    index: Arc<SketchIndex>,
    config: SessionConfig,
    seed: Seed,
    embeddings: Option<Arc<Embeddings>>,
    seed_positives: DocSet,
    positives: DocSet,
    gold: Option<DocSet>,
    rules: Vec<NodeId>,
    seed_rule: Option<NodeId>,
    hierarchy: Hierarchy,
    traversal: TraversalState,
    scorer: LinearScorer,
    cache: ScoreCache,
    round: u64,
    /// Epoch at which each node's benefit was last computed.
    stamps: Vec<u64>,
    epoch: u64,
    generated_at: Option<usize>,
    queries: Vec<QueryRecord>,
    answers: Vec<CheckpointAnswer>,
    pending: Option<OracleQuery>,
    done: bool,
}

impl Session {
    pub fn new(
        corpus: Arc<Corpus>,
        index: Arc<SketchIndex>,
        config: SessionConfig,
        seed: Seed,
    ) -> Result<Self> {
        if config.candidates == 0 {
            return Err(Error::Config("candidates must be at least 1".into()));
        }
        if index.as_dyn().num_docs() != corpus.len() {
            return Err(Error::Config("index was built over a different corpus".into()));
        }
        let embeddings = match &config.embeddings {
            Some(path) => Some(Arc::new(Embeddings::load(path)?)),
            None => None,
        };
        let traversal = TraversalState::new(config.strategy, config.tau)?;
        let gold = corpus.has_gold().then(|| corpus.gold_positives()).transpose()?;
        let mut hierarchy = Hierarchy::default();
        let mut seed_positives = corpus.empty_set();
        let mut seed_rule = None;
        let mut seed_docs = Vec::new();
        match &seed {
            Seed::Rule(text) => {
                let h = index.as_dyn().grammar().parse(text)?;
                if h.is_root() {
                    return Err(Error::InvalidSeed("the root pattern covers everything".into()));
                }
                let cov = index.as_dyn().coverage(&h)?;
                if cov.is_empty() {
                    return Err(Error::EmptySeedCoverage);
                }
                seed_positives.extend(cov.iter().map(|&d| d as usize));
                let id = hierarchy.insert(h, cov);
                hierarchy.set_status(id, Status::Accepted);
                seed_rule = Some(id);
            }
            Seed::Sentences(ids) => {
                let mut unique = ids.clone();
                unique.sort_unstable();
                unique.dedup();
                if unique.len() < 2 {
                    return Err(Error::InvalidSeed("need at least two seed sentences".into()));
                }
                for id in unique {
                    let d = corpus
                        .doc_of(id)
                        .ok_or_else(|| Error::InvalidSeed(format!("unknown sentence id {id}")))?;
                    seed_positives.insert(d as usize);
                    seed_docs.push(d);
                }
            }
        }
        let scorer = classifier::train(&corpus, &seed_positives, None, &config.scorer, 0, embeddings.clone())?;
        let mut cache = ScoreCache::new(corpus.len());
        cache.score_all(&scorer, &corpus, false);

        let mut session = Session {
            positives: seed_positives.clone(),
            seed_positives,
            gold,
            rules: seed_rule.into_iter().collect(),
            seed_rule,
            hierarchy,
            traversal,
            scorer,
            cache,
            round: 0,
            stamps: Vec::new(),
            epoch: 0,
            generated_at: None,
            queries: Vec::new(),
            answers: Vec::new(),
            pending: None,
            done: false,
            corpus,
            index,
            config,
            seed,
            embeddings,
        };
        session.regenerate()?;
        let index = Arc::clone(&session.index);
        match seed_rule {
            Some(id) => session
                .traversal
                .start_from(&mut session.hierarchy, &[id], true, index.as_dyn(), &session.positives)?,
            None => {
                let starts = session.sentence_starts(&seed_docs)?;
                session
                    .traversal
                    .start_from(&mut session.hierarchy, &starts, false, index.as_dyn(), &session.positives)?;
            }
        }
        session.hierarchy.cleanup(&session.positives);
        Ok(session)
    }

    /// Rebuilds a session by replaying a checkpoint's answers.
    pub fn restore(corpus: Arc<Corpus>, index: Arc<SketchIndex>, cp: &Checkpoint) -> Result<Self> {
        if cp.v != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: cp.v,
                expected: CHECKPOINT_VERSION,
            });
        }
        if *index.as_dyn().grammar() != cp.grammar {
            return Err(Error::Config("checkpoint grammar differs from the index".into()));
        }
        let mut s = Session::new(corpus, index, cp.config.clone(), cp.seed.clone())?;
        for (i, a) in cp.answers.iter().enumerate() {
            let q = s.next_query()?.ok_or_else(|| Error::ReplayDiverged {
                index: i,
                message: "session ended early".into(),
            })?;
            if q.query_id != a.query_id || q.heuristic.canonical() != a.canonical {
                return Err(Error::ReplayDiverged {
                    index: i,
                    message: format!("expected {:?}, session asked {}", a.canonical, q.heuristic),
                });
            }
            s.answer(a.query_id, a.answer)?;
        }
        Ok(s)
    }

    /// Start nodes for sentence seeds: per sentence, the first generated
    /// candidate (best over the seeds, then by coverage) that covers it.
    fn sentence_starts(&mut self, docs: &[DocId]) -> Result<Vec<NodeId>> {
        if !self.config.strategy.uses_local() {
            return Ok(Vec::new());
        }
        let index = Arc::clone(&self.index);
        let gen = hierarchy::generate_candidates(index.as_dyn(), &self.seed_positives, self.config.candidates)?;
        let mut starts = Vec::new();
        for &d in docs {
            for c in &gen.candidates {
                if c.heuristic.is_root() || c.pos == 0 {
                    continue;
                }
                let id = self.hierarchy.ensure(&c.heuristic, index.as_dyn())?;
                if self.hierarchy.node(id).coverage.binary_search(&d).is_ok() {
                    starts.push(id);
                    break;
                }
            }
        }
        starts.sort_unstable();
        starts.dedup();
        Ok(starts)
    }

    /// Regenerates the universal candidates from P ∪ predicted positives when
    /// P changed since the last generation.
    fn regenerate(&mut self) -> Result<()> {
        let size = self.positives.count_ones(..);
        if !self.config.strategy.uses_universal() || self.generated_at == Some(size) {
            return Ok(());
        }
        self.generated_at = Some(size);
        let index = Arc::clone(&self.index);
        let mut guide = self.cache.predicted(PREDICTED_CUT);
        guide.union_with(&self.positives);
        let k = self.config.candidates;
        let cands = if self.config.diversity.enabled() {
            let pool = hierarchy::generate_candidates(index.as_dyn(), &guide, k.saturating_mul(2))?;
            let d = hierarchy::diversity_filter(pool.candidates, k, &self.config.diversity, index.as_dyn(), &guide)?;
            for w in &d.warnings {
                tracing::warn!("{w}");
            }
            d.candidates
        } else {
            hierarchy::generate_candidates(index.as_dyn(), &guide, k)?.candidates
        };
        let mut ids = Vec::with_capacity(cands.len());
        for c in cands {
            ids.push(self.hierarchy.ensure(&c.heuristic, index.as_dyn())?);
        }
        self.traversal.set_universal(ids);
        Ok(())
    }

    /// Recomputes stale benefits of every node a selection may look at.
    fn refresh_benefits(&mut self) {
        let mut seen = HashSet::new();
        let stale: Vec<NodeId> = self
            .traversal
            .candidates()
            .filter(|&id| {
                seen.insert(id)
                    && self.hierarchy.node(id).status == Status::Unasked
                    && self.stamps.get(id as usize) != Some(&self.epoch)
            })
            .collect();
        if stale.is_empty() {
            return;
        }
        let h = &self.hierarchy;
        let (positives, cache) = (&self.positives, &self.cache);
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(16);
        let chunk = stale.len().div_ceil(threads).max(256);
        let benefits: Vec<_> = std::thread::scope(|scope| {
            let handles: Vec<_> = stale
                .chunks(chunk)
                .map(|ids| {
                    scope.spawn(move || {
                        ids.iter()
                            .map(|&id| classifier::benefit(&h.node(id).coverage, positives, cache))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles
                .into_iter()
                .flat_map(|j| j.join().expect("benefit worker panicked"))
                .collect()
        });
        if self.stamps.len() < self.hierarchy.len() {
            self.stamps.resize(self.hierarchy.len(), u64::MAX);
        }
        for (id, b) in stale.into_iter().zip(benefits) {
            self.hierarchy.set_benefit(id, b);
            self.stamps[id as usize] = self.epoch;
        }
    }

    /// The pending query, picking a new one if needed; `None` once the budget
    /// is spent or no candidate remains.
    pub fn next_query(&mut self) -> Result<Option<OracleQuery>> {
        if let Some(q) = &self.pending {
            return Ok(Some(q.clone()));
        }
        if self.done {
            return Ok(None);
        }
        if self.queries.len() >= self.config.budget {
            self.done = true;
            return Ok(None);
        }
        self.refresh_benefits();
        let Some(id) = self.traversal.next_query(&self.hierarchy) else {
            self.done = true;
            return Ok(None);
        };
        let query_id = self.queries.len() as u64;
        let node = self.hierarchy.node(id);
        let q = oracle::build_query(
            query_id,
            &node.heuristic,
            &node.coverage,
            &self.corpus,
            self.config.samples,
            mix(self.config.seed ^ mix(query_id)),
        )?;
        self.pending = Some(q.clone());
        Ok(Some(q))
    }

    /// Applies the answer to the pending query. YES adds the rule to R and
    /// its coverage to P, retrains the scorer and refreshes the candidates.
    pub fn answer(&mut self, query_id: u64, yes: bool) -> Result<()> {
        let q = self.pending.as_ref().ok_or(Error::NoPendingQuery)?;
        if q.query_id != query_id {
            return Err(Error::UnexpectedFeedback(format!("query {query_id}")));
        }
        let id = self.traversal.pending().ok_or(Error::NoPendingQuery)?;
        let index = Arc::clone(&self.index);
        self.hierarchy
            .set_status(id, if yes { Status::Accepted } else { Status::Rejected });
        let mut added = 0;
        if yes {
            for &d in &self.hierarchy.node(id).coverage {
                if !self.positives.put(d as usize) {
                    added += 1;
                }
            }
        }
        self.traversal
            .apply_feedback(&mut self.hierarchy, id, yes, index.as_dyn(), &self.positives)?;
        if yes {
            self.rules.push(id);
            self.round += 1;
            self.scorer = classifier::train(
                &self.corpus,
                &self.positives,
                None,
                &self.config.scorer,
                self.round,
                self.embeddings.clone(),
            )?;
            self.cache
                .score_all(&self.scorer, &self.corpus, self.config.lazy_rescoring);
            self.regenerate()?;
            self.hierarchy.cleanup(&self.positives);
            self.epoch += 1;
        }
        let node = self.hierarchy.node(id);
        self.queries.push(QueryRecord {
            query_id,
            heuristic: node.heuristic.clone(),
            answer: yes,
            coverage_size: node.coverage.len(),
            new_positives: added,
            positives_after: self.positives.count_ones(..),
        });
        self.answers.push(CheckpointAnswer {
            query_id,
            canonical: node.canonical.clone(),
            answer: yes,
        });
        self.pending = None;
        Ok(())
    }

    pub fn status(&self) -> SessionStatus {
        if self.pending.is_some() {
            SessionStatus::AwaitingAnswer
        } else if self.done {
            SessionStatus::Done
        } else {
            SessionStatus::Running
        }
    }

    pub fn pending(&self) -> Option<&OracleQuery> {
        self.pending.as_ref()
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn corpus(&self) -> &Arc<Corpus> {
        &self.corpus
    }

    pub fn index(&self) -> &Arc<SketchIndex> {
        &self.index
    }

    pub fn positives(&self) -> &DocSet {
        &self.positives
    }

    pub fn seed_positives(&self) -> &DocSet {
        &self.seed_positives
    }

    /// Accepted rules, the seed rule first.
    pub fn rules(&self) -> Vec<&Heuristic> {
        self.rules
            .iter()
            .map(|&id| &self.hierarchy.node(id).heuristic)
            .collect()
    }

    pub fn rule_nodes(&self) -> &[NodeId] {
        &self.rules
    }

    pub fn queries(&self) -> &[QueryRecord] {
        &self.queries
    }

    pub fn hierarchy(&self) -> &Hierarchy {
        &self.hierarchy
    }

    pub fn traversal(&self) -> &TraversalState {
        &self.traversal
    }

    pub fn scorer(&self) -> &LinearScorer {
        &self.scorer
    }

    pub fn scorer_snapshot(&self) -> ScorerSnapshot {
        self.scorer.snapshot()
    }

    pub fn scores(&self) -> &ScoreCache {
        &self.cache
    }

    pub fn hierarchy_dump(&self) -> HierarchyDump {
        self.hierarchy.dump()
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            v: CHECKPOINT_VERSION,
            grammar: *self.index.as_dyn().grammar(),
            config: self.config.clone(),
            seed: self.seed.clone(),
            answers: self.answers.clone(),
        }
    }

    fn recall_of(&self, set: &DocSet) -> Option<f64> {
        let gold = self.gold.as_ref()?;
        let total = gold.count_ones(..);
        (total > 0).then(|| gold.intersection(set).count() as f64 / total as f64)
    }

    /// Positive-set quality against gold, the progressive curve, and a
    /// scorer trained on P evaluated on the fixed held-out split.
    pub fn evaluate(&self) -> Result<Metrics> {
        let curve = self.curve()?;
        let size = self.positives.count_ones(..);
        let precision = self.gold.as_ref().and_then(|g| {
            (size > 0).then(|| g.intersection(&self.positives).count() as f64 / size as f64)
        });
        Ok(Metrics {
            v: RESULTS_VERSION,
            queries_used: self.queries.len(),
            budget: self.config.budget,
            rules: self.rules.len(),
            positives: size,
            recall: self.recall(),
            precision,
            classifier: held_out_metrics(&self.corpus, &self.positives, &self.config.scorer, self.embeddings.clone())?,
            curve,
        })
    }

    /// Recall of P against gold, when the corpus has labels.
    pub fn recall(&self) -> Option<f64> {
        self.recall_of(&self.positives)
    }

    /// |P| (and recall) after each query, starting from the seed.
    pub fn curve(&self) -> Result<Vec<CurvePoint>> {
        let mut curve = Vec::with_capacity(self.queries.len() + 1);
        let mut running = self.seed_positives.clone();
        let point = |queries: usize, set: &DocSet| CurvePoint {
            queries,
            positives: set.count_ones(..),
            recall: self.recall_of(set),
        };
        curve.push(point(0, &running));
        for (i, q) in self.queries.iter().enumerate() {
            if q.answer {
                let cov = self.index.as_dyn().coverage(&q.heuristic)?;
                running.extend(cov.into_iter().map(|d| d as usize));
            }
            curve.push(point(i + 1, &running));
        }
        Ok(curve)
    }

    /// Rules, positives, the query log and metrics, in a stable order.
    pub fn results(&self) -> Result<Results> {
        let grammar = *self.index.as_dyn().grammar();
        let rules = self
            .rules
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                let n = self.hierarchy.node(id);
                RuleExport {
                    name: format!("rule_{i}"),
                    grammar: grammar.id.to_string(),
                    pattern: n.heuristic.to_string(),
                    canonical: n.canonical.clone(),
                    label: 1,
                    coverage_size: n.coverage.len(),
                    seed: Some(id) == self.seed_rule,
                }
            })
            .collect();
        let mut positives = self.corpus.ids(self.positives.ones().map(|d| d as DocId));
        positives.sort_unstable();
        Ok(Results {
            v: RESULTS_VERSION,
            grammar,
            strategy: self.config.strategy,
            rules,
            positives,
            queries: self.queries.clone(),
            metrics: self.evaluate()?,
        })
    }
}

/// Trains a scorer on `positives` outside the held-out split and measures it
/// on the split against gold. `None` without gold or training positives.
pub fn held_out_metrics(
    corpus: &Corpus,
    positives: &DocSet,
    config: &ScorerConfig,
    embeddings: Option<Arc<Embeddings>>,
) -> Result<Option<ClassifierMetrics>> {
    if !corpus.has_gold() {
        return Ok(None);
    }
    let gold = corpus.gold_positives()?;
    let mut pool = corpus.empty_set();
    let mut held = Vec::new();
    for (d, s) in corpus.sentences().iter().enumerate() {
        if is_held_out(s.id) {
            held.push(d);
        } else {
            pool.insert(d);
        }
    }
    if held.is_empty() || positives.intersection(&pool).next().is_none() {
        return Ok(None);
    }
    let scorer = classifier::train(corpus, positives, Some(&pool), config, u64::MAX, embeddings)?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for d in held {
        let predicted = scorer.score(corpus.get(d as DocId)) >= PREDICTED_CUT;
        match (predicted, gold.contains(d)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(Some(ClassifierMetrics {
        precision,
        recall,
        f1,
        accuracy: ratio(tp + tn, tp + fp + fn_ + tn),
    }))
}

/// Runs the session to completion against `oracle`.
pub fn run_session(session: &mut Session, oracle: &mut dyn Oracle) -> Result<()> {
    while let Some(q) = session.next_query()? {
        let id = session.traversal.pending().ok_or(Error::NoPendingQuery)?;
        let yes = oracle.answer(&q, &session.hierarchy.node(id).coverage, &session.corpus)?;
        session.answer(q.query_id, yes)?;
    }
    Ok(())
}

/// Largest number of elements covered by at most `b` of `sets`, by
/// enumerating every subset.
pub fn max_coverage_optimum(sets: &[Vec<u32>], b: usize) -> Result<usize> {
    if sets.len() > MAX_OPTIMUM_SETS {
        return Err(Error::Precondition(format!(
            "brute force handles at most {MAX_OPTIMUM_SETS} sets, got {}",
            sets.len()
        )));
    }
    let universe = sets.iter().flatten().map(|&x| x as usize + 1).max().unwrap_or(0);
    let masks: Vec<DocSet> = sets
        .iter()
        .map(|s| {
            let mut m = DocSet::with_capacity(universe);
            m.extend(s.iter().map(|&x| x as usize));
            m
        })
        .collect();
    let mut best = 0;
    for subset in 0u32..(1u32 << sets.len()) {
        if subset.count_ones() as usize > b {
            continue;
        }
        let mut union = DocSet::with_capacity(universe);
        for (i, m) in masks.iter().enumerate() {
            if subset >> i & 1 == 1 {
                union.union_with(m);
            }
        }
        best = best.max(union.count_ones(..));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_arithmetic() {
        let sets = vec![(0..5).collect(), (5..8).collect(), (8..10).collect()];
        assert_eq!(max_coverage_optimum(&sets, 2).unwrap(), 8);
        assert_eq!(max_coverage_optimum(&sets, 5).unwrap(), 10);
        assert_eq!(max_coverage_optimum(&sets, 0).unwrap(), 0);
        let many = vec![vec![0u32]; 21];
        assert!(max_coverage_optimum(&many, 2).is_err());
    }

    #[test]
    fn held_out_share_is_near_a_fifth() {
        let held = (0..10_000u64).filter(|&i| is_held_out(i)).count();
        assert!((1800..2200).contains(&held), "{held}");
    }
}
