//! Experiment configuration and the simulated-user convergence loop.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ibhc_core::ddt::estimate_sigma2;
use ibhc_core::query::{select_query, simple_oracle, simulated_oracle, Turn};
use ibhc_core::triplet::triplet_distance;
use ibhc_core::{check_satisfies, ChainState, DdtParams, QueryScheme, SampleTrace, SchemeKind, Tree};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{load_dataset, target_from_labels, target_from_newick, ColumnRef, Dataset, DatasetError, LoadOptions};
use crate::formats::{write_jsonl, Answer, QueryRecord, TraceRecord};
use crate::linkage::average_linkage;
use crate::newick::{to_newick, LabelTable};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Core(#[from] ibhc_core::Error),
    #[error("{path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
}

/// Brownian variance: estimated from the data, or fixed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum Sigma2 {
    #[default]
    Auto,
    Value(f64),
}

impl Sigma2 {
    pub fn resolve(self, rows: &[Vec<f64>]) -> ibhc_core::Result<f64> {
        match self {
            Sigma2::Auto => estimate_sigma2(rows),
            Sigma2::Value(v) => Ok(v),
        }
    }
}

impl Serialize for Sigma2 {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Sigma2::Auto => s.serialize_str("auto"),
            Sigma2::Value(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for Sigma2 {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Sigma2::Value(v)),
            Repr::Str(s) if s == "auto" => Ok(Sigma2::Auto),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("sigma2 must be \"auto\" or a number, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSpec {
    /// Label column of the dataset.
    Labels(ColumnRef),
    /// Newick file; leaves are row indices or names from `names`.
    Newick(PathBuf),
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<String>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        One(String),
        Many(Vec<String>),
    }
    Ok(match Repr::deserialize(d)? {
        Repr::One(s) => vec![s],
        Repr::Many(v) => v,
    })
}

fn default_schemes() -> Vec<String> {
    SchemeKind::ALL.iter().map(|k| k.name().to_string()).collect()
}

fn d100() -> usize {
    100
}
fn d30() -> usize {
    30
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
fn d4() -> usize {
    4
}
fn one() -> f64 {
    1.0
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: PathBuf,
    pub target: TargetSpec,
    /// Column of row names, used to resolve Newick target labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub names: Option<ColumnRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub subsample_seed: u64,
    #[serde(default = "default_schemes", deserialize_with = "one_or_many")]
    pub scheme: Vec<String>,
    #[serde(default = "d100")]
    pub iterations_per_query: usize,
    #[serde(default = "d30")]
    pub total_queries: usize,
    #[serde(default = "d10")]
    pub subset_size: usize,
    #[serde(default = "d20", rename = "candidates_L")]
    pub candidates: usize,
    #[serde(default = "d4")]
    pub runs: usize,
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
    /// Also run the vanilla chain and average linkage.
    #[serde(default = "yes")]
    pub baselines: bool,
}

impl ExperimentConfig {
    /// A config with defaults for everything but the data and target.
    pub fn new(dataset: impl Into<PathBuf>, target: TargetSpec) -> Self {
        serde_json::from_value(serde_json::json!({
            "dataset": dataset.into(),
            "target": target,
        }))
        .expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside are taken relative to
    /// the file's directory.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.dataset = base.join(&cfg.dataset);
        if let TargetSpec::Newick(p) = &mut cfg.target {
            *p = base.join(&*p);
        }
        Ok(cfg)
    }

    pub fn schemes(&self) -> Result<Vec<SchemeKind>, ConfigError> {
        self.scheme
            .iter()
            .map(|s| s.parse().map_err(|_| ConfigError::Invalid(format!("unknown scheme {s:?}"))))
            .collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        self.schemes()?;
        if self.iterations_per_query == 0 || self.runs == 0 || self.candidates == 0 {
            return bad("iterations_per_query, runs and candidates_L must be positive");
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

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            label_column: match &self.target {
                TargetSpec::Labels(c) => Some(c.clone()),
                TargetSpec::Newick(_) => None,
            },
            name_column: self.names.clone(),
            has_header: None,
            subsample: self.subsample,
            subsample_seed: self.subsample_seed,
        }
    }

    /// Loads the dataset and builds the target tree.
    pub fn load(&self) -> Result<(Dataset, Tree), DatasetError> {
        let data = load_dataset(&self.dataset, &self.load_options())?;
        let target = match &self.target {
            TargetSpec::Labels(_) => target_from_labels(&data)?,
            TargetSpec::Newick(p) => target_from_newick(p, &data)?,
        };
        Ok((data, target))
    }

    pub fn params(&self, data: &Dataset) -> ibhc_core::Result<DdtParams> {
        DdtParams::new(self.sigma2.resolve(&data.rows)?, self.c, data.dim())
    }
}

/// One line of metrics.csv.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub scheme: String,
    pub run: usize,
    pub query_index: usize,
    pub triplet_distance: f64,
    pub log_posterior: Option<f64>,
    pub constraints_count: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub scheme: String,
    pub run: usize,
    pub rows: Vec<MetricRow>,
    pub queries: Vec<QueryRecord>,
    /// Chain state at each query boundary, starting with the initial tree.
    pub trace: Vec<TraceRecord>,
    pub trees_checked: usize,
    pub violations: usize,
    pub accepted: u64,
    pub proposed: u64,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub sigma2: f64,
    /// Scheme runs in config order, then vanilla runs.
    pub runs: Vec<RunOutput>,
    pub average_linkage: Option<(f64, String)>,
}

/// Mean over runs at one query index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeanRow {
    pub scheme: String,
    pub query_index: usize,
    pub triplet_distance: f64,
    pub log_posterior: Option<f64>,
    pub constraints_count: f64,
}

pub const VANILLA: &str = "vanilla";
pub const AVERAGE_LINKAGE: &str = "average_linkage";

impl ExperimentOutput {
    pub fn rows(&self) -> Vec<MetricRow> {
        let mut out: Vec<MetricRow> = self.runs.iter().flat_map(|r| r.rows.iter().cloned()).collect();
        if let Some((td, _)) = self.average_linkage {
            out.push(MetricRow {
                scheme: AVERAGE_LINKAGE.into(),
                run: 0,
                query_index: 0,
                triplet_distance: td,
                log_posterior: None,
                constraints_count: 0,
            });
        }
        out
    }

    /// Run-averaged series, one row per scheme and query index.
    pub fn means(&self) -> Vec<MeanRow> {
        let mut out: Vec<MeanRow> = Vec::new();
        let mut names: Vec<&str> = Vec::new();
        for r in &self.runs {
            if !names.contains(&r.scheme.as_str()) {
                names.push(&r.scheme);
            }
        }
        for name in names {
            let runs: Vec<&RunOutput> = self.runs.iter().filter(|r| r.scheme == name).collect();
            let k = runs.len() as f64;
            for q in 0..runs[0].rows.len() {
                let rows: Vec<&MetricRow> = runs.iter().map(|r| &r.rows[q]).collect();
                out.push(MeanRow {
                    scheme: name.to_string(),
                    query_index: q,
                    triplet_distance: rows.iter().map(|r| r.triplet_distance).sum::<f64>() / k,
                    log_posterior: rows.iter().map(|r| r.log_posterior).sum::<Option<f64>>().map(|s| s / k),
                    constraints_count: rows.iter().map(|r| r.constraints_count as f64).sum::<f64>() / k,
                });
            }
        }
        out
    }

    /// Mean triplet distance of `scheme` after its last query.
    pub fn final_mean(&self, scheme: &str) -> Option<f64> {
        self.means().into_iter().filter(|m| m.scheme == scheme).last().map(|m| m.triplet_distance)
    }

    pub fn trees_checked(&self) -> usize {
        self.runs.iter().map(|r| r.trees_checked).sum()
    }

    pub fn violations(&self) -> usize {
        self.runs.iter().map(|r| r.violations).sum()
    }

    pub fn write_metrics(&self, w: impl Write) -> csv::Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        for r in self.rows() {
            csv.serialize(r)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Writes metrics.csv, metrics_mean.csv, summary.json, and per-run
    /// traces/ and queries/ files under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), ExperimentError> {
        let wrap = |path: &Path| {
            let p = path.to_path_buf();
            move |source: std::io::Error| ExperimentError::Write { path: p, source }
        };
        let create = |path: &Path| File::create(path).map(BufWriter::new).map_err(wrap(path));
        let csv_err = |path: &Path| {
            let p = path.to_path_buf();
            move |e: csv::Error| ExperimentError::Write {
                path: p,
                source: std::io::Error::other(e),
            }
        };
        for sub in ["traces", "queries"] {
            std::fs::create_dir_all(dir.join(sub)).map_err(wrap(&dir.join(sub)))?;
        }
        let p = dir.join("metrics.csv");
        self.write_metrics(create(&p)?).map_err(csv_err(&p))?;
        let p = dir.join("metrics_mean.csv");
        let mut csv = csv::Writer::from_writer(create(&p)?);
        for m in self.means() {
            csv.serialize(m).map_err(csv_err(&p))?;
        }
        csv.flush().map_err(wrap(&p))?;
        for r in &self.runs {
            let p = dir.join("traces").join(format!("{}_run{}.jsonl", r.scheme, r.run));
            let mut w = create(&p)?;
            write_jsonl(&mut w, &r.trace).and_then(|_| w.flush()).map_err(wrap(&p))?;
            if r.scheme != VANILLA {
                let p = dir.join("queries").join(format!("{}_run{}.jsonl", r.scheme, r.run));
                let mut w = create(&p)?;
                write_jsonl(&mut w, &r.queries).and_then(|_| w.flush()).map_err(wrap(&p))?;
            }
        }
        if let Some((_, nwk)) = &self.average_linkage {
            let p = dir.join("average_linkage.nwk");
            std::fs::write(&p, format!("{nwk}\n")).map_err(wrap(&p))?;
        }
        let p = dir.join("summary.json");
        let mut w = create(&p)?;
        serde_json::to_writer_pretty(&mut w, &self.summary()).map_err(|e| ExperimentError::Write {
            path: p.clone(),
            source: e.into(),
        })?;
        w.write_all(b"\n").and_then(|_| w.flush()).map_err(wrap(&p))?;
        Ok(())
    }

    pub fn summary(&self) -> serde_json::Value {
        let mut finals = serde_json::Map::new();
        for m in self.means() {
            finals.insert(m.scheme.clone(), m.triplet_distance.into());
        }
        let (acc, prop) = self.runs.iter().fold((0, 0), |(a, p), r| (a + r.accepted, p + r.proposed));
        serde_json::json!({
            "sigma2": self.sigma2,
            "final_mean_triplet_distance": finals,
            "average_linkage_triplet_distance": self.average_linkage.as_ref().map(|a| a.0),
            "trees_checked": self.trees_checked(),
            "constraint_violations": self.violations(),
            "acceptance_rate": if prop > 0 { acc as f64 / prop as f64 } else { 0.0 },
        })
    }
}

/// Seeds for run `run`: (chain, query selection).
pub(crate) fn run_seeds(seed: u64, run: usize) -> (u64, u64) {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(run as u64);
    (r.next_u64(), r.next_u64())
}

struct Job<'a> {
    scheme: Option<SchemeKind>,
    run: usize,
    cfg: &'a ExperimentConfig,
    data: &'a Dataset,
    target: &'a Tree,
    params: DdtParams,
    labels: &'a LabelTable,
}

impl Job<'_> {
    fn name(&self) -> String {
        self.scheme.map_or(VANILLA.to_string(), |k| k.name().to_string())
    }

    fn row(&self, q: usize, chain: &ChainState) -> ibhc_core::Result<MetricRow> {
        Ok(MetricRow {
            scheme: self.name(),
            run: self.run,
            query_index: q,
            triplet_distance: triplet_distance(self.target, chain.tree())?,
            log_posterior: Some(chain.log_posterior()),
            constraints_count: chain.constraints().len(),
        })
    }

    fn record(&self, chain: &ChainState) -> TraceRecord {
        TraceRecord {
            iteration: chain.iteration(),
            log_prior: chain.log_prior(),
            log_likelihood: chain.log_likelihood(),
            newick: to_newick(chain.tree(), self.labels),
        }
    }

    fn run(&self) -> Result<RunOutput, ibhc_core::Error> {
        let cfg = self.cfg;
        let (chain_seed, query_seed) = run_seeds(cfg.seed, self.run);
        let mut chain = ChainState::from_prior(&self.data.rows, self.params, chain_seed)?;
        let mut qrng = ChaCha8Rng::seed_from_u64(query_seed);
        let scheme = self.scheme.map(|k| {
            QueryScheme::new(k)
                .with_subset_size(cfg.subset_size)
                .with_candidates(cfg.candidates)
        });
        let mut out = RunOutput {
            scheme: self.name(),
            run: self.run,
            rows: vec![self.row(0, &chain)?],
            queries: Vec::new(),
            trace: vec![self.record(&chain)],
            trees_checked: 0,
            violations: 0,
            accepted: 0,
            proposed: 0,
        };
        let mut trace = SampleTrace::new(cfg.trace_capacity);
        for q in 0..cfg.total_queries {
            for i in 0..cfg.iterations_per_query {
                chain.step()?;
                out.trees_checked += 1;
                if !check_satisfies(chain.tree(), chain.constraints())? {
                    out.violations += 1;
                }
                if (i + 1) % cfg.snapshot_stride == 0 {
                    trace.push(chain.snapshot());
                }
            }
            out.trace.push(self.record(&chain));
            if let Some(scheme) = &scheme {
                let (turn, subset) = select_query(scheme, chain.tree(), &trace, q, &mut qrng)?;
                let answer = match turn {
                    Turn::Simple => simple_oracle(self.target, [subset[0], subset[1], subset[2]])?,
                    _ => simulated_oracle(self.target, &chain.tree().induce(&subset)?, &mut qrng)?,
                };
                if let Some(t) = answer {
                    chain.add_constraint(t)?;
                }
                out.queries.push(QueryRecord {
                    query_index: q,
                    scheme_turn: turn.name().to_string(),
                    subset,
                    answer: answer.map_or(Answer::Accept, Answer::Triplet),
                });
            }
            out.rows.push(self.row(q + 1, &chain)?);
        }
        (out.proposed, out.accepted) = chain.acceptance_counts();
        Ok(out)
    }
}

/// Runs every configured scheme `runs` times (plus the baselines when
/// enabled). Runs are independent and execute in parallel; results do not
/// depend on scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, data: &Dataset, target: &Tree) -> Result<ExperimentOutput, ExperimentError> {
    cfg.validate()?;
    let params = cfg.params(data)?;
    let labels = data.label_table();
    let mut kinds: Vec<Option<SchemeKind>> = cfg.schemes()?.into_iter().map(Some).collect();
    if cfg.baselines {
        kinds.push(None);
    }
    let jobs: Vec<Job> = kinds
        .iter()
        .flat_map(|&k| {
            (0..cfg.runs).map(move |run| (k, run))
        })
        .map(|(scheme, run)| Job {
            scheme,
            run,
            cfg,
            data,
            target,
            params,
            labels: &labels,
        })
        .collect();
    let runs = jobs.par_iter().map(Job::run).collect::<Result<Vec<_>, _>>()?;
    let average_linkage = if cfg.baselines {
        let t = average_linkage(&data.rows);
        Some((triplet_distance(target, &t)?, to_newick(&t, &labels)))
    } else {
        None
    };
    Ok(ExperimentOutput {
        sigma2: params.sigma2(),
        runs,
        average_linkage,
    })
}
