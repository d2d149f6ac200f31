//! Command-line entry point.
//!
//! Exit codes: 0 on success, 2 for usage and config errors, 1 for runtime
//! failures.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use ibhc_core::triplet::triplet_distance;
use ibhc_core::{ChainState, DdtParams, SampleTrace};

use crate::dataset::{load_dataset, target_from_labels, target_from_newick, ColumnRef, LoadOptions};
use crate::experiment::{run_experiment, ExperimentConfig, ExperimentError, Sigma2};
use crate::formats::{parse_triplets, write_jsonl, TraceRecord};
use crate::linkage::average_linkage;
use crate::newick::{parse_target_newick, to_newick, LabelTable};
use crate::server::{AppState, DatasetEntry};

#[derive(Debug, Parser)]
#[command(name = "ibhc", version, about = "Interactive Bayesian hierarchical clustering")]
pub struct Cli {
    /// RNG seed; overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// JSON config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample trees for a dataset, optionally under triplet constraints.
    Fit(FitArgs),
    /// Run the simulated-user experiment described by --config.
    Experiment,
    /// Serve live sessions over HTTP.
    Serve(ServeArgs),
    /// Triplet distance of --tree from --target.
    Eval(EvalArgs),
    /// Average-linkage tree of a dataset.
    Baseline(DataArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// CSV file, one row per point.
    #[arg(long)]
    data: PathBuf,
    /// Column holding class labels (not used as a feature).
    #[arg(long)]
    labels: Option<String>,
    /// Column holding point names (not used as a feature).
    #[arg(long)]
    names: Option<String>,
}

impl DataArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions {
            label_column: self.labels.as_deref().map(ColumnRef::from),
            name_column: self.names.as_deref().map(ColumnRef::from),
            ..Default::default()
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Record the chain every this many iterations.
    #[arg(long, default_value_t = 10)]
    stride: usize,
    /// Brownian variance, or "auto" to estimate it from the data.
    #[arg(long, default_value = "auto", value_parser = parse_sigma2)]
    sigma2: Sigma2,
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    /// File of "a b | c" triplet constraints.
    #[arg(long)]
    constraints: Option<PathBuf>,
}

fn parse_sigma2(s: &str) -> Result<Sigma2, String> {
    match s {
        "auto" => Ok(Sigma2::Auto),
        _ => s.parse().map(Sigma2::Value).map_err(|_| format!("expected \"auto\" or a number, got {s:?}")),
    }
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: String,
    /// NAME=PATH[,labels=COLUMN][,names=COLUMN]; repeatable.
    #[arg(long = "dataset")]
    datasets: Vec<String>,
    /// Directory for per-session config and query logs.
    #[arg(long)]
    log_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    target: PathBuf,
    #[arg(long)]
    tree: PathBuf,
    /// Dataset whose name column resolves leaf labels.
    #[arg(long, requires = "names")]
    data: Option<PathBuf>,
    #[arg(long)]
    names: Option<String>,
}

/// Failure with its exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Runtime(m) => m,
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn config(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message());
            f.code()
        }
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    match &cli.command {
        Command::Fit(a) => fit(cli, a, out),
        Command::Experiment => experiment(cli, out),
        Command::Serve(a) => serve(cli, a, out),
        Command::Eval(a) => eval(a, out),
        Command::Baseline(a) => baseline(cli, a, out),
    }
}

fn out_dir(cli: &Cli) -> Result<Option<&Path>, Failure> {
    match &cli.out {
        Some(d) => {
            std::fs::create_dir_all(d).map_err(|e| runtime(format!("{}: {e}", d.display())))?;
            Ok(Some(d))
        }
        None => Ok(None),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn fit(cli: &Cli, a: &FitArgs, out: &mut dyn Write) -> Result<(), Failure> {
    if a.stride == 0 {
        return Err(config("--stride must be positive"));
    }
    if cli.config.is_some() {
        return Err(config("fit takes no --config"));
    }
    let data = load_dataset(&a.data.data, &a.data.options()).map_err(runtime)?;
    let params = DdtParams::new(a.sigma2.resolve(&data.rows).map_err(config)?, a.c, data.dim()).map_err(config)?;
    let mut chain = ChainState::from_prior(&data.rows, params, cli.seed.unwrap_or(0)).map_err(runtime)?;
    if let Some(p) = &a.constraints {
        let text = std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        for t in parse_triplets(&text).map_err(|e| config(format!("{}: {e}", p.display())))? {
            chain.add_constraint(t).map_err(|e| config(format!("{}: {t:?}: {e}", p.display())))?;
        }
    }
    let labels = data.label_table();
    let record = |c: &ChainState| TraceRecord {
        iteration: c.iteration(),
        log_prior: c.log_prior(),
        log_likelihood: c.log_likelihood(),
        newick: to_newick(c.tree(), &labels),
    };
    let mut trace = vec![record(&chain)];
    let mut snapshots = SampleTrace::new(1);
    for i in 0..a.iterations {
        chain.step().map_err(runtime)?;
        if (i + 1) % a.stride == 0 {
            trace.push(record(&chain));
            snapshots.push(chain.snapshot());
        }
    }
    let final_nwk = to_newick(chain.tree(), &labels);
    if let Some(dir) = out_dir(cli)? {
        let p = dir.join("trace.jsonl");
        let mut w = create(&p)?;
        write_jsonl(&mut w, &trace).and_then(|_| w.flush()).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        let p = dir.join("final.nwk");
        std::fs::write(&p, format!("{final_nwk}\n")).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    let (proposed, accepted) = chain.acceptance_counts();
    writeln!(out, "{final_nwk}").map_err(runtime)?;
    writeln!(
        out,
        "iterations {} log_posterior {:.6} acceptance {:.4}",
        chain.iteration(),
        chain.log_posterior(),
        if proposed > 0 { accepted as f64 / proposed as f64 } else { 0.0 }
    )
    .map_err(runtime)?;
    if data.labels.is_some() {
        let target = target_from_labels(&data).map_err(runtime)?;
        writeln!(out, "triplet_distance {:.6}", triplet_distance(&target, chain.tree()).map_err(runtime)?).map_err(runtime)?;
    }
    Ok(())
}

fn experiment(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let path = cli.config.as_ref().ok_or_else(|| config("experiment needs --config <json>"))?;
    let mut cfg = ExperimentConfig::from_file(path).map_err(config)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let (data, target) = cfg.load().map_err(runtime)?;
    let result = run_experiment(&cfg, &data, &target).map_err(|e| match e {
        ExperimentError::Config(e) => config(e),
        e => runtime(e),
    })?;
    let dir = out_dir(cli)?.unwrap_or(Path::new("."));
    result.write_to(dir).map_err(runtime)?;
    writeln!(out, "{:#}", result.summary()).map_err(runtime)?;
    Ok(())
}

fn baseline(cli: &Cli, a: &DataArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let data = load_dataset(&a.data, &a.options()).map_err(runtime)?;
    let tree = average_linkage(&data.rows);
    let nwk = to_newick(&tree, &data.label_table());
    writeln!(out, "{nwk}").map_err(runtime)?;
    if data.labels.is_some() {
        let target = target_from_labels(&data).map_err(runtime)?;
        writeln!(out, "triplet_distance {:.6}", triplet_distance(&target, &tree).map_err(runtime)?).map_err(runtime)?;
    }
    if let Some(dir) = out_dir(cli)? {
        let p = dir.join("average_linkage.nwk");
        std::fs::write(&p, format!("{nwk}\n")).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

fn eval(a: &EvalArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let labels = match (&a.data, &a.names) {
        (Some(d), Some(n)) => {
            let data = load_dataset(d, &LoadOptions {
                name_column: Some(n.as_str().into()),
                ..Default::default()
            })
            .map_err(runtime)?;
            data.label_table()
        }
        (None, Some(_)) => return Err(config("--names needs --data")),
        _ => LabelTable::indices(),
    };
    let read = |p: &Path| {
        let text = std::fs::read_to_string(p).map_err(|e| runtime(format!("{}: {e}", p.display())))?;
        parse_target_newick(&text, &labels).map_err(|e| runtime(format!("{}: {e}", p.display())))
    };
    let target = read(&a.target)?;
    let tree = read(&a.tree)?;
    writeln!(out, "{:.6}", triplet_distance(&target, &tree).map_err(runtime)?).map_err(runtime)?;
    Ok(())
}

#[derive(Debug, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct ServeConfig {
    #[serde(default)]
    addr: Option<String>,
    #[serde(default)]
    log_dir: Option<PathBuf>,
    #[serde(default)]
    datasets: Vec<DatasetSpec>,
}

#[derive(Debug, Clone, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetSpec {
    name: String,
    path: PathBuf,
    #[serde(default)]
    labels: Option<ColumnRef>,
    #[serde(default)]
    names: Option<ColumnRef>,
    /// Newick target, used instead of `labels`.
    #[serde(default)]
    target: Option<PathBuf>,
}

/// Parses `NAME=PATH[,labels=COLUMN][,names=COLUMN]`.
fn parse_dataset_spec(s: &str) -> Result<DatasetSpec, Failure> {
    let (name, rest) = s.split_once('=').ok_or_else(|| config(format!("--dataset {s:?}: expected NAME=PATH")))?;
    let mut parts = rest.split(',');
    let mut spec = DatasetSpec {
        name: name.to_string(),
        path: PathBuf::from(parts.next().unwrap_or("")),
        labels: None,
        names: None,
        target: None,
    };
    for p in parts {
        match p.split_once('=') {
            Some(("labels", c)) => spec.labels = Some(c.into()),
            Some(("names", c)) => spec.names = Some(c.into()),
            Some(("target", t)) => spec.target = Some(t.into()),
            _ => return Err(config(format!("--dataset {s:?}: unknown option {p:?}"))),
        }
    }
    if spec.name.is_empty() || spec.path.as_os_str().is_empty() {
        return Err(config(format!("--dataset {s:?}: expected NAME=PATH")));
    }
    Ok(spec)
}

fn load_entry(spec: &DatasetSpec) -> Result<DatasetEntry, Failure> {
    let data = load_dataset(&spec.path, &LoadOptions {
        label_column: spec.labels.clone(),
        name_column: spec.names.clone(),
        ..Default::default()
    })
    .map_err(runtime)?;
    let target = match (&spec.target, data.labels.is_some()) {
        (Some(p), _) => Some(Arc::new(target_from_newick(p, &data).map_err(runtime)?)),
        (None, true) => Some(Arc::new(target_from_labels(&data).map_err(runtime)?)),
        (None, false) => None,
    };
    Ok(DatasetEntry { data, target })
}

fn serve(cli: &Cli, a: &ServeArgs, out: &mut dyn Write) -> Result<(), Failure> {
    let mut file = ServeConfig {
        addr: None,
        log_dir: None,
        datasets: Vec::new(),
    };
    if let Some(p) = &cli.config {
        let text = std::fs::read_to_string(p).map_err(|e| config(format!("{}: {e}", p.display())))?;
        file = serde_json::from_str(&text).map_err(|e| config(format!("{}: {e}", p.display())))?;
        let base = p.parent().unwrap_or(Path::new(""));
        for d in &mut file.datasets {
            d.path = base.join(&d.path);
            d.target = d.target.as_ref().map(|t| base.join(t));
        }
    }
    let mut specs = file.datasets;
    for s in &a.datasets {
        specs.push(parse_dataset_spec(s)?);
    }
    if specs.is_empty() {
        return Err(config("serve needs at least one --dataset NAME=PATH"));
    }
    let mut datasets = HashMap::new();
    for s in &specs {
        if datasets.insert(s.name.clone(), load_entry(s)?).is_some() {
            return Err(config(format!("dataset {:?} given twice", s.name)));
        }
    }
    let addr = file.addr.filter(|_| a.addr == "127.0.0.1:8080").unwrap_or_else(|| a.addr.clone());
    let log_dir = a.log_dir.clone().or(file.log_dir).or_else(|| cli.out.clone());
    let state = Arc::new(AppState::new(datasets, log_dir));
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(runtime)?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr).await.map_err(|e| runtime(format!("{addr}: {e}")))?;
        let local = listener.local_addr().map_err(runtime)?;
        writeln!(out, "listening on http://{local}").map_err(runtime)?;
        out.flush().map_err(runtime)?;
        crate::server::serve(listener, state).await.map_err(runtime)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_specs() {
        let s = parse_dataset_spec("iris=data/iris.csv,labels=species").unwrap();
        assert_eq!((s.name.as_str(), s.path.as_path()), ("iris", Path::new("data/iris.csv")));
        assert_eq!(s.labels, Some(ColumnRef::Name("species".into())));
        assert!(parse_dataset_spec("data/iris.csv").is_err());
        assert!(parse_dataset_spec("x=a.csv,colour=red").is_err());
        assert!(parse_dataset_spec("=a.csv").is_err());
    }

    #[test]
    fn sigma2_flag() {
        assert_eq!(parse_sigma2("auto"), Ok(Sigma2::Auto));
        assert_eq!(parse_sigma2("0.5"), Ok(Sigma2::Value(0.5)));
        assert!(parse_sigma2("lots").is_err());
    }
}
