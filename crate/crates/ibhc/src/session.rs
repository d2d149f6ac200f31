//! A live interactive session: one constrained chain that pauses at query
//! boundaries and waits for the user's answer.
//!
//! The engine is synchronous. Each block runs exactly `iterations_per_query`
//! MCMC steps before a query can be posed, so a session is a pure function
//! of its config, seed and answers, and [`SessionEngine::replay`] rebuilds it
//! from the query log.

use std::collections::HashMap;
use std::sync::Arc;

use ibhc_core::query::{select_query, Turn};
use ibhc_core::triplet::triplet_distance;
use ibhc_core::{ChainState, QueryScheme, SampleTrace, SchemeKind, Tree, Triplet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::experiment::{run_seeds, Sigma2};
use crate::formats::{Answer, QueryRecord};
use crate::newick::{to_newick, to_newick_labelled, LabelTable};

fn d100() -> usize {
    100
}
fn d20() -> usize {
    20
}
fn d10() -> usize {
    10
}
fn d5() -> usize {
    5
}
fn one() -> f64 {
    1.0
}
fn interleaved() -> SchemeKind {
    SchemeKind::Interleaved
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    #[serde(default = "interleaved", with = "scheme_name")]
    pub scheme: SchemeKind,
    #[serde(default = "d100")]
    pub iterations_per_query: usize,
    #[serde(default = "d10")]
    pub subset_size: usize,
    #[serde(default = "d20", rename = "candidates_L")]
    pub candidates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sigma2: Sigma2,
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default = "d20")]
    pub trace_capacity: usize,
    #[serde(default = "d5")]
    pub snapshot_stride: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults deserialize")
    }
}

mod scheme_name {
    use ibhc_core::SchemeKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &SchemeKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(k.name())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SchemeKind, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(|_| serde::de::Error::custom(format!("unknown scheme {s:?}")))
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: &str| Err(SessionError::Config(m.to_string()));
        if self.iterations_per_query == 0 || self.candidates == 0 {
            return bad("iterations_per_query and candidates_L must be positive");
        }
        if self.subset_size < 3 {
            return bad("subset_size must be at least 3");
        }
        if self.trace_capacity == 0 || self.snapshot_stride == 0 {
            return bad("trace_capacity and snapshot_stride must be positive");
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return bad("c must be positive");
        }
        if let Sigma2::Value(v) = self.sigma2 {
            if !(v > 0.0 && v.is_finite()) {
                return bad("sigma2 must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] ibhc_core::Error),
    #[error("replay diverged at query {query_index}: {message}")]
    Replay { query_index: usize, message: String },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnswerError {
    #[error("no query is pending")]
    NoPendingQuery,
    #[error("leaf {0} is not in the shown subset")]
    OutsideSubset(usize),
    #[error("triplet is already a constraint")]
    Duplicate,
    #[error("triplet contradicts the existing constraints")]
    Unrealizable,
    #[error("{0}")]
    Invalid(String),
}

/// Internal node of a shown subtree, for hit-testing in a client.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeInfo {
    pub id: String,
    pub leaves: Vec<usize>,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeafInfo {
    pub index: usize,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PendingQuery {
    pub query_index: usize,
    pub turn: String,
    pub subset: Vec<usize>,
    pub leaves: Vec<LeafInfo>,
    /// Induced subtree; internal nodes are labelled with the ids in `nodes`.
    pub newick: String,
    pub nodes: Vec<NodeInfo>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Sampling,
    AwaitingAnswer,
    Idle,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionState {
    pub status: Status,
    pub iteration: u64,
    pub queries_answered: usize,
    pub constraints_count: usize,
    pub constraints: Vec<String>,
    /// At creation and after each answer.
    pub log_posterior: Vec<f64>,
    /// Present when the dataset has a target tree; same points as `log_posterior`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triplet_distance: Option<Vec<f64>>,
    pub tree: String,
}

pub struct SessionEngine {
    config: SessionConfig,
    chain: ChainState,
    scheme: QueryScheme,
    trace: SampleTrace,
    qrng: ChaCha8Rng,
    labels: LabelTable,
    target: Option<Arc<Tree>>,
    block_steps: usize,
    pending: Option<PendingQuery>,
    log: Vec<QueryRecord>,
    log_posterior: Vec<f64>,
    distances: Vec<f64>,
}

impl SessionEngine {
    pub fn new(data: &Dataset, target: Option<Arc<Tree>>, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        let scheme = QueryScheme::new(config.scheme)
            .with_subset_size(config.subset_size)
            .with_candidates(config.candidates);
        scheme.validate()?;
        if config.subset_size > data.n() {
            return Err(SessionError::Config(format!("subset_size {} exceeds the {} data points", config.subset_size, data.n())));
        }
        let params = ibhc_core::DdtParams::new(config.sigma2.resolve(&data.rows)?, config.c, data.dim())?;
        let (chain_seed, query_seed) = run_seeds(config.seed, 0);
        let chain = ChainState::from_prior(&data.rows, params, chain_seed)?;
        let mut engine = Self {
            trace: SampleTrace::new(config.trace_capacity),
            qrng: ChaCha8Rng::seed_from_u64(query_seed),
            labels: data.label_table(),
            config,
            chain,
            scheme,
            target,
            block_steps: 0,
            pending: None,
            log: Vec::new(),
            log_posterior: Vec::new(),
            distances: Vec::new(),
        };
        engine.record_point()?;
        Ok(engine)
    }

    /// Rebuilds a session by re-posing and re-answering every logged query.
    pub fn replay(data: &Dataset, target: Option<Arc<Tree>>, config: SessionConfig, log: &[QueryRecord]) -> Result<Self, SessionError> {
        let mut engine = Self::new(data, target, config)?;
        for rec in log {
            let q = engine.pose_query()?;
            if q.query_index != rec.query_index || q.subset != rec.subset || q.turn != rec.scheme_turn {
                return Err(SessionError::Replay {
                    query_index: rec.query_index,
                    message: format!("posed subset {:?}, log has {:?}", q.subset, rec.subset),
                });
            }
            engine.answer(rec.answer).map_err(|e| SessionError::Replay {
                query_index: rec.query_index,
                message: e.to_string(),
            })?;
        }
        Ok(engine)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn tree(&self) -> &Tree {
        self.chain.tree()
    }

    pub fn chain(&self) -> &ChainState {
        &self.chain
    }

    pub fn log(&self) -> &[QueryRecord] {
        &self.log
    }

    pub fn pending(&self) -> Option<&PendingQuery> {
        self.pending.as_ref()
    }

    /// True once the current block's iterations are done.
    pub fn at_boundary(&self) -> bool {
        self.block_steps >= self.config.iterations_per_query
    }

    pub fn status(&self) -> Status {
        if self.pending.is_some() {
            Status::AwaitingAnswer
        } else if self.at_boundary() {
            Status::Idle
        } else {
            Status::Sampling
        }
    }

    /// Runs one MCMC iteration unless the block is finished. Returns whether
    /// a step ran.
    pub fn step(&mut self) -> Result<bool, SessionError> {
        if self.at_boundary() {
            return Ok(false);
        }
        self.chain.step()?;
        self.block_steps += 1;
        if self.block_steps % self.config.snapshot_stride == 0 {
            self.trace.push(self.chain.snapshot());
        }
        Ok(true)
    }

    /// Finishes the current block and selects a query, or returns the one
    /// already pending.
    pub fn pose_query(&mut self) -> Result<PendingQuery, SessionError> {
        if let Some(q) = &self.pending {
            return Ok(q.clone());
        }
        while self.step()? {}
        let query_index = self.log.len();
        let (turn, subset) = select_query(&self.scheme, self.chain.tree(), &self.trace, query_index, &mut self.qrng)?;
        let shown = match turn {
            Turn::Simple => subset[..3].to_vec(),
            _ => subset.clone(),
        };
        let q = self.describe(query_index, turn, shown)?;
        self.pending = Some(q.clone());
        Ok(q)
    }

    fn describe(&self, query_index: usize, turn: Turn, subset: Vec<usize>) -> Result<PendingQuery, SessionError> {
        let induced = self.chain.tree().induce(&subset)?;
        let mut ids = HashMap::new();
        let mut nodes = Vec::new();
        for (k, id) in induced.preorder().into_iter().filter(|&id| !induced.children(id).is_empty()).enumerate() {
            let name = format!("n{k}");
            nodes.push(NodeInfo {
                id: name.clone(),
                leaves: induced.leaves_of(id).iter().collect(),
                time: induced.time(id),
            });
            ids.insert(id, name);
        }
        Ok(PendingQuery {
            query_index,
            turn: turn.name().to_string(),
            leaves: subset
                .iter()
                .map(|&i| LeafInfo {
                    index: i,
                    name: self.labels.name(i),
                })
                .collect(),
            subset,
            newick: to_newick_labelled(&induced, &self.labels, &ids),
            nodes,
        })
    }

    /// Applies the user's answer to the pending query and opens the next
    /// block. Returns whether the constraint set grew.
    pub fn answer(&mut self, answer: Answer) -> Result<bool, AnswerError> {
        let pending = self.pending.as_ref().ok_or(AnswerError::NoPendingQuery)?;
        let added = match answer {
            Answer::Accept => false,
            Answer::Triplet(t) => {
                self.check_triplet(pending, t)?;
                match self.chain.add_constraint(t) {
                    Ok(added) => added,
                    Err(ibhc_core::Error::Unrealizable) => return Err(AnswerError::Unrealizable),
                    Err(e) => return Err(AnswerError::Invalid(e.to_string())),
                }
            }
        };
        let pending = self.pending.take().expect("checked above");
        self.log.push(QueryRecord {
            query_index: pending.query_index,
            scheme_turn: pending.turn,
            subset: pending.subset,
            answer,
        });
        self.block_steps = 0;
        self.record_point().map_err(|e| AnswerError::Invalid(e.to_string()))?;
        Ok(added)
    }

    fn check_triplet(&self, pending: &PendingQuery, t: Triplet) -> Result<(), AnswerError> {
        if let Some(&l) = t.leaves().iter().find(|l| !pending.subset.contains(l)) {
            return Err(AnswerError::OutsideSubset(l));
        }
        if self.chain.constraints().contains(&t) {
            return Err(AnswerError::Duplicate);
        }
        Ok(())
    }

    fn record_point(&mut self) -> Result<(), SessionError> {
        self.log_posterior.push(self.chain.log_posterior());
        if let Some(target) = &self.target {
            self.distances.push(triplet_distance(target, self.chain.tree())?);
        }
        Ok(())
    }

    /// Read-only snapshot of the session.
    pub fn state(&self) -> SessionState {
        SessionState {
            status: self.status(),
            iteration: self.chain.iteration(),
            queries_answered: self.log.len(),
            constraints_count: self.chain.constraints().len(),
            constraints: self.chain.constraints().iter().map(crate::formats::format_triplet).collect(),
            log_posterior: self.log_posterior.clone(),
            triplet_distance: self.target.as_ref().map(|_| self.distances.clone()),
            tree: to_newick(self.chain.tree(), &self.labels),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_dataset, target_from_labels, LoadOptions};
    use ibhc_core::check_satisfies;
    use ibhc_core::query::simulated_oracle;
    use std::path::Path;

    fn blobs() -> Dataset {
        let mut text = String::from("x,y,k\n");
        for i in 0..16 {
            let side = if i % 2 == 0 { -3.0 } else { 3.0 };
            let j = (i as f64 * 0.71).sin();
            text.push_str(&format!("{},{},{}\n", side + j, j, i % 2));
        }
        parse_dataset(text.as_bytes(), Path::new("blobs.csv"), &LoadOptions {
            label_column: Some("k".into()),
            ..Default::default()
        })
        .unwrap()
    }

    fn config() -> SessionConfig {
        SessionConfig {
            iterations_per_query: 7,
            subset_size: 5,
            candidates: 3,
            seed: 9,
            ..Default::default()
        }
    }

    #[test]
    fn config_defaults() {
        let c = SessionConfig::default();
        assert_eq!(c.scheme, SchemeKind::Interleaved);
        assert_eq!((c.iterations_per_query, c.subset_size, c.candidates), (100, 10, 20));
        let c: SessionConfig = serde_json::from_str(r#"{"scheme":"random","candidates_L":4}"#).unwrap();
        assert_eq!((c.scheme, c.candidates), (SchemeKind::Random, 4));
        assert!(serde_json::from_str::<SessionConfig>(r#"{"scheme":"psychic"}"#).is_err());
        assert!(serde_json::from_str::<SessionConfig>(r#"{"colour":1}"#).is_err());
    }

    #[test]
    fn pacing_stops_at_the_boundary() {
        let data = blobs();
        let mut s = SessionEngine::new(&data, None, config()).unwrap();
        assert_eq!(s.status(), Status::Sampling);
        let mut steps = 0;
        while s.step().unwrap() {
            steps += 1;
        }
        assert_eq!(steps, 7);
        assert_eq!(s.status(), Status::Idle);
        assert!(!s.step().unwrap());
        let q = s.pose_query().unwrap();
        assert_eq!(s.chain().iteration(), 7);
        assert_eq!(s.pose_query().unwrap(), q);
        assert_eq!(s.status(), Status::AwaitingAnswer);
    }

    #[test]
    fn query_shows_the_induced_subtree() {
        let data = blobs();
        let mut s = SessionEngine::new(&data, None, SessionConfig {
            scheme: SchemeKind::Random,
            ..config()
        })
        .unwrap();
        let q = s.pose_query().unwrap();
        assert_eq!(q.subset.len(), 5);
        let induced = s.tree().induce(&q.subset).unwrap();
        let parsed = crate::newick::parse_newick(&q.newick, &LabelTable::indices()).unwrap();
        assert!(parsed.same_topology(&induced));
        assert_eq!(q.nodes.len(), 4);
        assert_eq!(q.nodes[0].leaves, {
            let mut v = q.subset.clone();
            v.sort_unstable();
            v
        });
    }

    #[test]
    fn answers_are_validated() {
        let data = blobs();
        let mut s = SessionEngine::new(&data, None, SessionConfig {
            scheme: SchemeKind::Random,
            ..config()
        })
        .unwrap();
        assert_eq!(s.answer(Answer::Accept), Err(AnswerError::NoPendingQuery));
        let q = s.pose_query().unwrap();
        let outside = (0..16).find(|i| !q.subset.contains(i)).unwrap();
        let t = Triplet::new(q.subset[0], q.subset[1], outside).unwrap();
        assert_eq!(s.answer(Answer::Triplet(t)), Err(AnswerError::OutsideSubset(outside)));
        let t = Triplet::new(q.subset[0], q.subset[1], q.subset[2]).unwrap();
        assert_eq!(s.answer(Answer::Triplet(t)), Ok(true));
        assert!(s.chain().constraints().contains(&t));
        assert!(check_satisfies(s.tree(), s.chain().constraints()).unwrap());
        assert_eq!(s.status(), Status::Sampling);

        // the same triplet again, or its contradiction
        let mut tries = 0;
        loop {
            let q = s.pose_query().unwrap();
            let (a, b, c) = (t.pair().0, t.pair().1, t.outgroup());
            if [a, b, c].iter().all(|l| q.subset.contains(l)) {
                assert_eq!(s.answer(Answer::Triplet(t)), Err(AnswerError::Duplicate));
                let flip = Triplet::new(a, c, b).unwrap();
                assert_eq!(s.answer(Answer::Triplet(flip)), Err(AnswerError::Unrealizable));
                assert_eq!(s.chain().constraints().len(), 1);
                break;
            }
            s.answer(Answer::Accept).unwrap();
            tries += 1;
            assert!(tries < 500, "subset never repeated the triplet");
        }
    }

    #[test]
    fn state_series_track_answers() {
        let data = blobs();
        let target = Arc::new(target_from_labels(&data).unwrap());
        let mut s = SessionEngine::new(&data, Some(target.clone()), config()).unwrap();
        let st = s.state();
        assert_eq!((st.iteration, st.constraints_count), (0, 0));
        assert_eq!(st.triplet_distance.as_ref().map(Vec::len), Some(1));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..4 {
            let q = s.pose_query().unwrap();
            let shown = s.tree().induce(&q.subset).unwrap();
            let a = simulated_oracle(&target, &shown, &mut rng).unwrap();
            s.answer(a.map_or(Answer::Accept, Answer::Triplet)).unwrap();
        }
        let st = s.state();
        assert_eq!(st.queries_answered, 4);
        assert_eq!(st.log_posterior.len(), 5);
        assert_eq!(st.triplet_distance.unwrap().len(), 5);
        assert_eq!(st.iteration, 28);
        assert!(SessionEngine::new(&data, None, config()).unwrap().state().triplet_distance.is_none());
    }

    #[test]
    fn replay_reproduces_the_session() {
        let data = blobs();
        let target = Arc::new(target_from_labels(&data).unwrap());
        let mut s = SessionEngine::new(&data, None, config()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..6 {
            let q = s.pose_query().unwrap();
            let shown = s.tree().induce(&q.subset).unwrap();
            let a = simulated_oracle(&target, &shown, &mut rng).unwrap();
            s.answer(a.map_or(Answer::Accept, Answer::Triplet)).unwrap();
        }
        let r = SessionEngine::replay(&data, None, config(), s.log()).unwrap();
        assert_eq!(r.state(), s.state());
        assert_eq!(r.tree().canonical(), s.tree().canonical());

        let mut bad = s.log().to_vec();
        bad[2].subset.reverse();
        assert!(matches!(SessionEngine::replay(&data, None, config(), &bad), Err(SessionError::Replay { query_index: 2, .. })));
    }
}
