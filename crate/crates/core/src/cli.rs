//! The `him` command-line driver.
//!
//! Random streams derived from `--seed` (the master seed):
//!
//! | stream            | used by                                  |
//! |-------------------|------------------------------------------|
//! | `(graph, 0)`      | `synth-graph`                            |
//! | `(model, 0)`      | `sample-model`                           |
//! | `(instance, i)`   | `generate`, instance `i`                 |
//! | `(train, 0)`      | `train`                                  |
//! | `(select, 0)`     | `select --method random`                 |
//! | `(eval, r)`       | `evaluate`, `export-stats`, round `r`    |
//! | `(export, 0)`     | `export-stats` node sample               |
//! | `(pipeline, j)`   | `pipeline`, sub-master for ratio `j`     |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::seq::index;

use crate::diffusion::{self, DiffusionModel, ModelKind, DEFAULT_EVAL_ROUNDS, DEFAULT_INSTANCES};
use crate::embedding::{self, EmbeddingTable, Optimizer, RegSign, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::SocialGraph;
use crate::selection::{self, Method, SelectionResult};
use crate::{rng, synth};

#[derive(Debug, Parser)]
#[command(name = "him", version, about = "Influence maximization with hyperbolic embeddings")]
pub struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads for simulation (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Run every stage on a single worker.
    #[arg(long, global = true)]
    pub deterministic: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic edge list.
    SynthGraph(SynthArgs),
    /// Draw a frozen diffusion model instance for a graph.
    SampleModel(SampleModelArgs),
    /// Simulate propagation instances from random seed sets.
    Generate(GenerateArgs),
    /// Learn node embeddings.
    Train(TrainArgs),
    /// Pick seed nodes.
    Select(SelectArgs),
    /// Monte Carlo spread of a seed file.
    Evaluate(EvaluateArgs),
    /// Per-node degree, LDO and single-seed spread as CSV.
    ExportStats(ExportArgs),
    /// sample-model, generate, train, select and evaluate for several ratios and methods.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SynthKind {
    /// Preferential attachment.
    Pa,
    /// Uniform random edges.
    Uniform,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_enum, default_value = "pa")]
    pub kind: SynthKind,
    #[arg(long)]
    pub nodes: usize,
    /// Links per new node (pa).
    #[arg(long, default_value_t = 3)]
    pub m: usize,
    /// Edge draws (uniform).
    #[arg(long)]
    pub edges: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleModelArgs {
    #[arg(long, short)]
    pub graph: PathBuf,
    #[arg(long, default_value = "ic")]
    pub kind: ModelKind,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Seed set size as a fraction of |V|.
    #[arg(long)]
    pub ratio: f64,
    /// Number of instances.
    #[arg(long = "instances", short = 'm', default_value_t = DEFAULT_INSTANCES)]
    pub count: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TrainOpts {
    #[arg(long, default_value_t = TrainConfig::default().dim)]
    pub dim: usize,
    #[arg(long, default_value_t = TrainConfig::default().gamma)]
    pub gamma: f64,
    #[arg(long, default_value_t = TrainConfig::default().negatives)]
    pub negatives: usize,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long = "lr", default_value_t = TrainConfig::default().learning_rate)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = TrainConfig::default().init_std)]
    pub init_std: f64,
    /// sgd or adam.
    #[arg(long, default_value_t = TrainConfig::default().optimizer)]
    pub optimizer: Optimizer,
    /// Use the regularizer sign that pushes activators away from the origin.
    #[arg(long)]
    pub literal_reg: bool,
}

impl TrainOpts {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            dim: self.dim,
            gamma: self.gamma,
            negatives: self.negatives,
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed,
            reg_sign: if self.literal_reg {
                RegSign::Literal
            } else {
                RegSign::PullToOrigin
            },
            init_std: self.init_std,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, short)]
    pub graph: PathBuf,
    /// Propagation instances; structure-only training when absent.
    #[arg(long)]
    pub instances: Option<PathBuf>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("size").required(true).args(["k", "ratio"])))]
pub struct SelectArgs {
    #[arg(long, short)]
    pub graph: PathBuf,
    /// Required for him and him_md.
    #[arg(long, short)]
    pub embedding: Option<PathBuf>,
    #[arg(long, default_value = "him")]
    pub method: Method,
    #[arg(long, short)]
    pub k: Option<usize>,
    /// Seed count as a fraction of |V| (rounded up).
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Window coefficient (default by graph size).
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub seeds: PathBuf,
    #[arg(long, default_value_t = DEFAULT_EVAL_ROUNDS)]
    pub rounds: usize,
    /// Also write the report as TSV.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, short)]
    pub graph: PathBuf,
    #[arg(long, short)]
    pub embedding: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    /// Number of nodes to sample (default: all).
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_EVAL_ROUNDS)]
    pub rounds: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long, short)]
    pub graph: PathBuf,
    #[arg(long, default_value = "ic")]
    pub kind: ModelKind,
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.05,0.1")]
    pub ratios: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "him,him_md,degree,random")]
    pub methods: Vec<Method>,
    #[arg(long = "instances", short = 'm', default_value_t = DEFAULT_INSTANCES)]
    pub count: usize,
    #[arg(long, default_value_t = DEFAULT_EVAL_ROUNDS)]
    pub rounds: usize,
    #[arg(long)]
    pub beta: Option<f64>,
    #[command(flatten)]
    pub opts: TrainOpts,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Entry point of the `him` binary.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.kind());
            ExitCode::FAILURE
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(t) = threads {
        // a second init in the same process (tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t.max(1)).build_global();
    }
    let seed = cli.seed;
    match &cli.command {
        Command::SynthGraph(a) => synth_graph(a, seed),
        Command::SampleModel(a) => sample_model(a, seed),
        Command::Generate(a) => generate(a, seed),
        Command::Train(a) => train(a, seed),
        Command::Select(a) => select(a, seed),
        Command::Evaluate(a) => evaluate(a, seed),
        Command::ExportStats(a) => export_stats(a, seed),
        Command::Pipeline(a) => pipeline(a, seed),
    }
}

fn in_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

fn load_graph(path: &Path) -> Result<SocialGraph> {
    let (g, report) = in_file(path, SocialGraph::load_edge_list(path))?;
    log::info!(
        "graph {}: {} nodes, {} edges ({} self-loops, {} duplicates dropped)",
        path.display(),
        g.node_count(),
        g.edge_count(),
        report.self_loops,
        report.duplicates
    );
    Ok(g)
}

fn load_model(path: &Path) -> Result<DiffusionModel> {
    in_file(path, DiffusionModel::load(path))
}

fn load_embedding(path: &Path, g: &SocialGraph) -> Result<EmbeddingTable> {
    let t = in_file(path, EmbeddingTable::load(path))?;
    if t.node_count() != g.node_count() {
        return Err(Error::DimensionMismatch {
            left: t.node_count(),
            right: g.node_count(),
        });
    }
    Ok(t)
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

/// Writes `<out>.labels` with the graph's id-to-label map.
fn write_sidecar(out: &Path, g: &SocialGraph) -> Result<()> {
    let path = sidecar_path(out);
    diffusion::write_file(&path, |w| g.write_labels(w))
}

/// Copies `<src>.labels` to `<out>.labels` when present.
fn copy_sidecar(src: &Path, out: &Path) -> Result<()> {
    let from = sidecar_path(src);
    if from.exists() {
        let to = sidecar_path(out);
        fs::copy(&from, &to).map_err(|e| Error::io(&to, e))?;
    }
    Ok(())
}

fn synth_graph(a: &SynthArgs, seed: u64) -> Result<()> {
    let s = rng::derive_seed(seed, rng::GRAPH, 0);
    let g = match a.kind {
        SynthKind::Pa => synth::preferential_attachment(a.nodes, a.m, s)?,
        SynthKind::Uniform => synth::uniform_random(a.nodes, a.edges.unwrap_or(3 * a.nodes), s)?,
    };
    g.save_edge_list(&a.out)?;
    log::info!("wrote {} nodes, {} edges to {}", g.node_count(), g.edge_count(), a.out.display());
    Ok(())
}

fn sample_model(a: &SampleModelArgs, seed: u64) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let model = DiffusionModel::sample(a.kind, &g, rng::derive_seed(seed, rng::MODEL, 0));
    model.save(&a.out)?;
    write_sidecar(&a.out, &g)
}

fn generate(a: &GenerateArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let instances = model.generate_instances(a.ratio, a.count, seed)?;
    let acts: usize = instances.iter().map(|i| i.activations.len()).sum();
    log::info!("{} instances, {acts} activations", instances.len());
    diffusion::save_instances(&instances, &a.out)?;
    copy_sidecar(&a.model, &a.out)
}

fn read_training_instances(path: Option<&Path>) -> Result<Vec<diffusion::PropagationInstance>> {
    match path {
        Some(p) if p.exists() => in_file(p, diffusion::load_instances(p)),
        Some(p) => {
            log::warn!("instances file {} not found; training on structure only", p.display());
            Ok(Vec::new())
        }
        None => {
            log::warn!("no instances file given; training on structure only");
            Ok(Vec::new())
        }
    }
}

fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let instances = read_training_instances(a.instances.as_deref())?;
    let config = a.opts.config(seed);
    let start = Instant::now();
    let (table, report) = embedding::train_with_report(&g, &instances, &config)?;
    log::info!(
        "trained {} positives for {} epochs in {:.2?}, final loss {:.4}",
        report.positives,
        config.epochs,
        start.elapsed(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    table.save(&a.out)?;
    write_sidecar(&a.out, &g)
}

fn resolve_k(k: Option<usize>, ratio: Option<f64>, n: usize) -> Result<usize> {
    match (k, ratio) {
        (Some(k), _) => Ok(k),
        (None, Some(r)) => diffusion::seed_count(r, n),
        (None, None) => Err(Error::InvalidArgument("one of --k or --ratio is required".into())),
    }
}

fn run_method(
    method: Method,
    g: &SocialGraph,
    table: Option<&EmbeddingTable>,
    k: usize,
    beta: Option<f64>,
    seed: u64,
) -> Result<SelectionResult> {
    let need = || {
        table.ok_or_else(|| Error::InvalidArgument(format!("method {method} needs --embedding")))
    };
    match method {
        Method::Him => {
            let beta = beta.unwrap_or_else(|| selection::default_beta(g.node_count()));
            selection::select_asw(g, need()?, k, beta)
        }
        Method::HimMd => {
            if beta.is_some() {
                log::info!("him_md takes the k lowest LDO nodes; --beta is ignored");
            }
            selection::select_him_md(need()?, k)
        }
        Method::Degree => selection::select_degree_topk(g, k),
        Method::Random => selection::select_random(g, k, &mut rng::stream(seed, rng::SELECT, 0)),
    }
}

fn select(a: &SelectArgs, seed: u64) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let table = a.embedding.as_deref().map(|p| load_embedding(p, &g)).transpose()?;
    let k = resolve_k(a.k, a.ratio, g.node_count())?;
    let start = Instant::now();
    let result = run_method(a.method, &g, table.as_ref(), k, a.beta, seed)?;
    log::info!("{} picked {k} seeds in {:.2?}", a.method, start.elapsed());
    result.save(&a.out)?;
    write_sidecar(&a.out, &g)
}

fn evaluate(a: &EvaluateArgs, seed: u64) -> Result<()> {
    let model = load_model(&a.model)?;
    let seeds = in_file(&a.seeds, selection::load_seeds(&a.seeds))?;
    let start = Instant::now();
    let est = model.estimate_spread(&seeds, a.rounds, seed)?;
    let secs = start.elapsed().as_secs_f64();
    println!(
        "spread_pct={:.4} std_pct={:.4} rounds={} seeds={} runtime_s={secs:.3}",
        100.0 * est.mean,
        100.0 * est.std,
        est.rounds,
        seeds.len()
    );
    if let Some(out) = &a.out {
        diffusion::write_file(out, |w| {
            writeln!(w, "spread_pct\tstd_pct\trounds\tseeds")?;
            writeln!(w, "{}\t{}\t{}\t{}", 100.0 * est.mean, 100.0 * est.std, est.rounds, seeds.len())
        })?;
    }
    Ok(())
}

fn export_stats(a: &ExportArgs, seed: u64) -> Result<()> {
    let g = load_graph(&a.graph)?;
    let table = load_embedding(&a.embedding, &g)?;
    let model = load_model(&a.model)?;
    if model.node_count() != g.node_count() {
        return Err(Error::DimensionMismatch {
            left: model.node_count(),
            right: g.node_count(),
        });
    }
    let n = g.node_count();
    let nodes: Vec<usize> = match a.sample {
        Some(s) if s > n => return Err(Error::KOutOfRange { k: s, node_count: n }),
        Some(s) => {
            let mut v = index::sample(&mut rng::stream(seed, rng::EXPORT, 0), n, s).into_vec();
            v.sort_unstable();
            v
        }
        None => (0..n).collect(),
    };
    let mut rows = Vec::with_capacity(nodes.len());
    for &u in &nodes {
        let spread = model.estimate_spread(&[u], a.rounds, seed)?;
        rows.push((u, g.degree(u), table.ldo(u), spread.mean));
    }
    diffusion::write_file(&a.out, |w| {
        writeln!(w, "node,degree,ldo,spread")?;
        for (u, d, l, s) in &rows {
            writeln!(w, "{u},{d},{l},{s}")?;
        }
        Ok(())
    })?;
    write_sidecar(&a.out, &g)
}

/// One line of the pipeline results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub method: Method,
    pub ratio: f64,
    pub spread_pct: f64,
    pub std_pct: f64,
}

fn pipeline(a: &PipelineArgs, seed: u64) -> Result<()> {
    let rows = run_pipeline(a, seed)?;
    println!("{:<8} {:>7} {:>10} {:>8}", "method", "ratio", "spread_%", "std_%");
    for r in &rows {
        println!("{:<8} {:>7} {:>10.4} {:>8.4}", r.method.tag(), r.ratio, r.spread_pct, r.std_pct);
    }
    Ok(())
}

/// Runs the full experiment and writes every artifact under `out_dir`:
/// `model.txt`, `instances_<ratio>.txt`, `embedding_<ratio>.txt`,
/// `seeds_<method>_<ratio>.txt`, `results.tsv` and `graph.labels`.
pub fn run_pipeline(a: &PipelineArgs, seed: u64) -> Result<Vec<ResultRow>> {
    if a.ratios.is_empty() || a.methods.is_empty() {
        return Err(Error::InvalidArgument("need at least one ratio and one method".into()));
    }
    let g = load_graph(&a.graph)?;
    let n = g.node_count();
    fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let dir = |name: String| a.out_dir.join(name);
    diffusion::write_file(&dir("graph.labels".into()), |w| g.write_labels(w))?;

    let model = DiffusionModel::sample(a.kind, &g, rng::derive_seed(seed, rng::MODEL, 0));
    model.save(dir("model.txt".into()))?;

    let needs_embedding = a.methods.iter().any(|m| matches!(m, Method::Him | Method::HimMd));
    let mut rows = Vec::new();
    for (j, &ratio) in a.ratios.iter().enumerate() {
        let sub = rng::derive_seed(seed, rng::PIPELINE, j as u64);
        let k = diffusion::seed_count(ratio, n)?;
        let table = if needs_embedding {
            let instances = model.generate_instances(ratio, a.count, sub)?;
            diffusion::save_instances(&instances, dir(format!("instances_{ratio}.txt")))?;
            let start = Instant::now();
            let table = embedding::train(&g, &instances, &a.opts.config(sub))?;
            log::info!("ratio {ratio}: trained in {:.2?}", start.elapsed());
            table.save(dir(format!("embedding_{ratio}.txt")))?;
            Some(table)
        } else {
            None
        };
        for &method in &a.methods {
            let beta = if method.uses_beta() { a.beta } else { None };
            let result = run_method(method, &g, table.as_ref(), k, beta, sub)?;
            result.save(dir(format!("seeds_{}_{ratio}.txt", method.tag())))?;
            let est = model.estimate_spread(&result.seeds, a.rounds, sub)?;
            rows.push(ResultRow {
                method,
                ratio,
                spread_pct: 100.0 * est.mean,
                std_pct: 100.0 * est.std,
            });
        }
    }
    diffusion::write_file(&dir("results.tsv".into()), |w| {
        writeln!(w, "method\tratio\tspread_pct\tstd_pct")?;
        for r in &rows {
            writeln!(w, "{}\t{}\t{}\t{}", r.method, r.ratio, r.spread_pct, r.std_pct)?;
        }
        Ok(())
    })?;
    Ok(rows)
}
