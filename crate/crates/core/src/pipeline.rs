//! File-level pipeline commands behind the `sagess` binary.
//!
//! Every command is a function of the configuration, the root seed and its
//! input files; each stage draws from its own named substream of the root
//! seed, so outputs are byte-identical across runs and thread counts.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::assembler::{progressive_assemble, assemble, AssemblyReport, DiffusionSource};
use crate::denoiser::{loss_csv, train, Checkpoint, DenoiserParams, TrainConfig};
use crate::diffusion::{build_schedule, NoiseSchedule, DEFAULT_STEPS};
use crate::graph::{load_edge_list_with, write_edge_list, Graph};
use crate::linkpred::{
    build_eval_set, evaluate, train_link_predictor, EmbeddingModel, LinkPredConfig, LinkPredResult,
};
use crate::metrics::{comparison_csv, comparison_text, stats_report, StatsReport, CSV_COLUMNS};
use crate::rng::derive_seed;
use crate::sampling::{build_corpus, CorpusStats, SampleCorpus, SamplingConfig};
use crate::sbm::{sbm_graph, SbmConfig};

/// Exit code for configuration and input errors.
pub const EXIT_CONFIG: i32 = 2;
/// Exit code for failures while running a command.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => EXIT_CONFIG,
            PipelineError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Runtime(e.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserSection {
    pub hidden: usize,
    pub layers: usize,
    pub lambda: f64,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        DenoiserSection {
            hidden: t.hidden,
            layers: t.layers,
            lambda: t.lambda,
            steps: t.steps,
            batch: t.batch,
            learning_rate: t.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssemblySection {
    /// Edge target as a fraction of the real edge count.
    pub target_fraction: f64,
    /// Generated subgraph size; the sampling `k` when unset.
    pub k_gen: Option<usize>,
    /// Snapshot fractions for the progressive command.
    pub fractions: Vec<f64>,
}

impl Default for AssemblySection {
    fn default() -> Self {
        AssemblySection { target_fraction: 1.0, k_gen: None, fractions: (1..=10).map(|i| i as f64 / 10.0).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Whether `eval` also runs the link-prediction test.
    pub linkpred: bool,
    /// Fraction of real edges held as positives.
    pub fraction: f64,
    pub h: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Untrained embeddings averaged for the baseline row.
    pub baseline_runs: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        // low capacity: wide embeddings memorize the training graph
        EvalSection { linkpred: false, fraction: 0.9, h: 2, epochs: 100, lr: LinkPredConfig::default().lr, baseline_runs: 10 }
    }
}

impl EvalSection {
    pub fn linkpred_config(&self) -> LinkPredConfig {
        LinkPredConfig { h: self.h, epochs: self.epochs, lr: self.lr, ..Default::default() }
    }
}

/// JSON configuration; every field has a default and can be overridden
/// from the command line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Real graph as an edge list.
    pub dataset: Option<PathBuf>,
    /// Map arbitrary node tokens onto `0..n`.
    pub relabel: bool,
    pub sampling: SamplingConfig,
    /// Diffusion length `T`.
    pub diffusion_steps: usize,
    pub denoiser: DenoiserSection,
    pub assembly: AssemblySection,
    pub eval: EvalSection,
    /// Fixture written by `fixture-sbm`.
    pub sbm: SbmConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: None,
            relabel: false,
            sampling: SamplingConfig::default(),
            diffusion_steps: DEFAULT_STEPS,
            denoiser: DenoiserSection::default(),
            assembly: AssemblySection::default(),
            eval: EvalSection::default(),
            sbm: SbmConfig::equal(2, 60, 0.15, 0.01),
            seed: 0,
            out: PathBuf::from("out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self, PipelineError> {
        serde_json::from_str(text).map_err(config_err)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Apply a `dotted.path=value` override. The value is parsed as JSON
    /// when possible and taken as a string otherwise.
    pub fn set(&mut self, assignment: &str) -> Result<(), PipelineError> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| config_err(format!("override {assignment:?} is not key=value")))?;
        let value: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut root = serde_json::to_value(&*self).expect("config serializes");
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| config_err(format!("unknown config key {path:?}")))?;
        }
        *slot = value;
        *self = serde_json::from_value(root).map_err(|e| config_err(format!("{path}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let s = &self.sampling;
        if s.k == 0 {
            return Err(config_err("sampling.k must be positive"));
        }
        if self.diffusion_steps == 0 {
            return Err(config_err("diffusion_steps must be positive"));
        }
        let a = &self.assembly;
        if !(a.target_fraction > 0.0 && a.target_fraction <= 1.0) {
            return Err(config_err("assembly.target_fraction must lie in (0, 1]"));
        }
        if a.k_gen == Some(0) {
            return Err(config_err("assembly.k_gen must be positive"));
        }
        if a.fractions.is_empty()
            || a.fractions.iter().any(|&f| !(f > 0.0 && f <= 1.0))
            || a.fractions.windows(2).any(|w| w[0] > w[1])
        {
            return Err(config_err("assembly.fractions must be sorted and in (0, 1]"));
        }
        let e = &self.eval;
        if !(e.fraction > 0.0 && e.fraction <= 1.0) || e.h == 0 || !(e.lr > 0.0) || e.baseline_runs == 0 {
            return Err(config_err("eval: fraction in (0, 1], positive h, lr and baseline_runs required"));
        }
        self.train_config().validate().map_err(config_err)?;
        self.sbm.validate().map_err(config_err)?;
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        let d = &self.denoiser;
        TrainConfig {
            steps: d.steps,
            batch: d.batch,
            learning_rate: d.learning_rate,
            lambda: d.lambda,
            hidden: d.hidden,
            layers: d.layers,
            seed: derive_seed(self.seed, "train", &[]),
        }
    }

    pub fn k_gen(&self) -> usize {
        self.assembly.k_gen.unwrap_or(self.sampling.k)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.out.join(file)
    }
}

/// Output file names inside the output directory.
pub mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const CORPUS_STATS: &str = "corpus_stats.json";
    pub const CHECKPOINT: &str = "checkpoint.json";
    pub const LOSS: &str = "loss.csv";
    pub const SYNTHETIC: &str = "synthetic.edgelist";
    pub const ASSEMBLY: &str = "assembly.json";
    pub const STATS_JSON: &str = "stats.json";
    pub const STATS_CSV: &str = "stats.csv";
    pub const STATS_TEXT: &str = "stats.txt";
    pub const LINKPRED_JSON: &str = "linkpred.json";
    pub const LINKPRED_CSV: &str = "linkpred.csv";
    pub const PROGRESSIVE: &str = "progressive.csv";
    pub const SBM: &str = "sbm.edgelist";
    pub const SBM_BLOCKS: &str = "sbm_blocks.json";
}

fn read(path: &Path) -> Result<String, PipelineError> {
    fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| runtime_err(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| runtime_err(format!("cannot write {}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

pub fn load_graph(path: &Path, relabel: bool) -> Result<Graph, PipelineError> {
    let text = read(path)?;
    load_edge_list_with(&text, relabel)
        .map(|l| l.graph)
        .map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn dataset(cfg: &PipelineConfig) -> Result<Graph, PipelineError> {
    let path = cfg.dataset.as_ref().ok_or_else(|| config_err("no dataset configured (set `dataset`)"))?;
    load_graph(path, cfg.relabel)
}

fn dataset_name(cfg: &PipelineConfig) -> String {
    cfg.dataset
        .as_ref()
        .and_then(|p| p.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

/// Build the corpus; writes the JSON-lines corpus and its stats sidecar.
pub fn cmd_sample(cfg: &PipelineConfig) -> Result<CorpusStats, PipelineError> {
    let g = dataset(cfg)?;
    let corpus = build_corpus(&g, &cfg.sampling, derive_seed(cfg.seed, "sample", &[])).map_err(config_err)?;
    let stats = corpus.stats();
    write(&cfg.path(files::CORPUS), &corpus.to_jsonl())?;
    write(&cfg.path(files::CORPUS_STATS), &to_json(&stats))?;
    Ok(stats)
}

pub fn load_corpus(corpus: &Path, stats: &Path) -> Result<SampleCorpus, PipelineError> {
    let s: CorpusStats = serde_json::from_str(&read(stats)?).map_err(config_err)?;
    SampleCorpus::from_jsonl(&read(corpus)?, s.n_parent, s.scheme, s.k, s.d).map_err(config_err)
}

/// Fit the denoiser; writes the checkpoint (with its schedule) and the
/// loss trace.
pub fn cmd_train(cfg: &PipelineConfig, corpus_path: Option<&Path>) -> Result<Checkpoint, PipelineError> {
    let corpus_path = corpus_path.map(Path::to_path_buf).unwrap_or_else(|| cfg.path(files::CORPUS));
    let stats_path = corpus_path.with_file_name(files::CORPUS_STATS);
    let corpus = load_corpus(&corpus_path, &stats_path)?;
    let sched = build_schedule::<f64>(cfg.diffusion_steps, &corpus).map_err(config_err)?;
    let out = train(&corpus, &sched, &cfg.train_config()).map_err(runtime_err)?;
    let ckpt = Checkpoint::new(&out.params, Some(sched.to_file()));
    write(&cfg.path(files::CHECKPOINT), &(ckpt.to_json() + "\n"))?;
    write(&cfg.path(files::LOSS), &loss_csv(&out.loss_trace))?;
    Ok(ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<(DenoiserParams<f64>, NoiseSchedule<f64>), PipelineError> {
    let ckpt = Checkpoint::from_json(&read(path)?).map_err(config_err)?;
    let params = ckpt.params::<f64>().map_err(config_err)?;
    let file = ckpt.schedule.as_ref().ok_or_else(|| config_err("checkpoint carries no noise schedule"))?;
    let sched = NoiseSchedule::from_file(file).map_err(config_err)?;
    if sched.num_node_states() != params.dims().n {
        return Err(config_err("checkpoint schedule and model disagree on n"));
    }
    Ok((params, sched))
}

/// Assemble a synthetic graph whose edge target is a fraction of the real
/// edge count; writes the graph and an assembly report.
pub fn cmd_generate(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<AssemblyReport, PipelineError> {
    let real = dataset(cfg)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.path(files::CHECKPOINT));
    let (params, sched) = load_checkpoint(&ckpt)?;
    if params.dims().n != real.n() {
        return Err(config_err(format!("checkpoint has {} node IDs, dataset has {} nodes", params.dims().n, real.n())));
    }
    let target = crate::assembler::fraction_threshold(cfg.assembly.target_fraction, real.num_edges());
    let source = DiffusionSource { params: &params, sched: &sched, k: cfg.k_gen(), seed: derive_seed(cfg.seed, "generate", &[]) };
    let (g, acc) = assemble(&source, target).map_err(runtime_err)?;
    let report = AssemblyReport::new(&acc);
    write(&cfg.path(files::SYNTHETIC), &write_edge_list(&g))?;
    write(&cfg.path(files::ASSEMBLY), &to_json(&report))?;
    Ok(report)
}

/// Real, synthetic and their difference (synthetic minus real).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub real: StatsReport,
    pub synthetic: StatsReport,
    pub delta: Vec<(String, Option<f64>)>,
}

fn numeric(r: &StatsReport) -> [f64; 9] {
    [
        r.num_nodes as f64,
        r.num_edges as f64,
        r.triangles as f64,
        r.squares as f64,
        r.max_degree as f64,
        r.clustering_coef,
        r.assortativity,
        r.power_law_exp,
        r.cpl,
    ]
}

pub fn compare(real: &Graph, synthetic: &Graph) -> Comparison {
    let (a, b) = (stats_report(real), stats_report(synthetic));
    let delta = CSV_COLUMNS
        .iter()
        .zip(numeric(&a).iter().zip(numeric(&b)))
        .map(|(name, (x, y))| {
            let d = y - x;
            (name.to_string(), d.is_finite().then_some(d))
        })
        .collect();
    Comparison { real: a, synthetic: b, delta }
}

fn synthetic_path(cfg: &PipelineConfig, synthetic: Option<&Path>) -> PathBuf {
    synthetic.map(Path::to_path_buf).unwrap_or_else(|| cfg.path(files::SYNTHETIC))
}

/// Statistic comparison of the real and synthetic graphs as JSON, CSV and
/// aligned text; also runs link prediction when `eval.linkpred` is set.
pub fn cmd_eval(cfg: &PipelineConfig, synthetic: Option<&Path>) -> Result<Comparison, PipelineError> {
    let real = dataset(cfg)?;
    let syn = load_graph(&synthetic_path(cfg, synthetic), false)?;
    let cmp = compare(&real, &syn);
    let rows = [("real", &cmp.real), ("synthetic", &cmp.synthetic)];
    write(&cfg.path(files::STATS_JSON), &to_json(&cmp))?;
    write(&cfg.path(files::STATS_CSV), &comparison_csv(&rows))?;
    write(&cfg.path(files::STATS_TEXT), &comparison_text(&rows))?;
    if cfg.eval.linkpred {
        run_linkpred(cfg, &real, &syn)?;
    }
    Ok(cmp)
}

fn run_linkpred(cfg: &PipelineConfig, real: &Graph, syn: &Graph) -> Result<Vec<LinkPredResult>, PipelineError> {
    if syn.n() > real.n() {
        return Err(config_err("synthetic graph has more nodes than the real graph"));
    }
    let eval_seed = derive_seed(cfg.seed, "linkpred-eval", &[]);
    let eval = build_eval_set(real, cfg.eval.fraction, eval_seed).map_err(runtime_err)?;
    let lp = cfg.eval.linkpred_config();
    // score real node IDs with a model over the real node range
    let train_graph = Graph::from_edges(real.n(), syn.edges().iter().copied());
    let train_seed = derive_seed(cfg.seed, "linkpred-train", &[]);
    let model = train_link_predictor::<f64>(&train_graph, &lp, train_seed).map_err(runtime_err)?.model;
    let trained = evaluate(&model, &eval);
    let runs = cfg.eval.baseline_runs;
    let (mut auc, mut ap) = (0.0, 0.0);
    for r in 0..runs {
        let m = EmbeddingModel::<f64>::random(real.n(), lp.h, lp.init_scale, derive_seed(cfg.seed, "linkpred-baseline", &[r as u64]));
        let s = evaluate(&m, &eval);
        auc += s.auc;
        ap += s.ap;
    }
    let name = dataset_name(cfg);
    let results = vec![
        LinkPredResult { method: "synthetic-trained".into(), dataset: name.clone(), auc: trained.auc, ap: trained.ap, seed: cfg.seed },
        LinkPredResult { method: "random-embedding".into(), dataset: name, auc: auc / runs as f64, ap: ap / runs as f64, seed: cfg.seed },
    ];
    let mut csv = String::from("method,dataset,auc,ap,seed\n");
    for r in &results {
        csv.push_str(&format!("{},{},{:.6},{:.6},{}\n", r.method, r.dataset, r.auc, r.ap, r.seed));
    }
    write(&cfg.path(files::LINKPRED_JSON), &to_json(&results))?;
    write(&cfg.path(files::LINKPRED_CSV), &csv)?;
    Ok(results)
}

/// Train on the synthetic graph, score held real edges against non-edges.
pub fn cmd_linkpred(cfg: &PipelineConfig, synthetic: Option<&Path>) -> Result<Vec<LinkPredResult>, PipelineError> {
    let real = dataset(cfg)?;
    let syn = load_graph(&synthetic_path(cfg, synthetic), false)?;
    run_linkpred(cfg, &real, &syn)
}

pub const PROGRESSIVE_PREFIX: [&str; 4] = ["fraction", "threshold", "subgraphs_used", "overshoot"];

/// One assembly run with a statistics row per edge-budget fraction.
pub fn cmd_progressive(cfg: &PipelineConfig, checkpoint: Option<&Path>) -> Result<String, PipelineError> {
    let real = dataset(cfg)?;
    let ckpt = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| cfg.path(files::CHECKPOINT));
    let (params, sched) = load_checkpoint(&ckpt)?;
    if params.dims().n != real.n() {
        return Err(config_err("checkpoint and dataset disagree on n"));
    }
    let source = DiffusionSource { params: &params, sched: &sched, k: cfg.k_gen(), seed: derive_seed(cfg.seed, "generate", &[]) };
    let snaps = progressive_assemble(&source, &cfg.assembly.fractions, real.num_edges()).map_err(runtime_err)?;
    let mut csv = format!("{},{}\n", PROGRESSIVE_PREFIX.join(","), CSV_COLUMNS.join(","));
    for s in &snaps {
        let r = stats_report(&s.graph);
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            s.fraction,
            s.threshold,
            s.subgraphs_used,
            s.overshoot,
            r.values().join(",")
        ));
    }
    write(&cfg.path(files::PROGRESSIVE), &csv)?;
    Ok(csv)
}

/// Write the configured SBM fixture and its block assignment.
pub fn cmd_fixture_sbm(cfg: &PipelineConfig) -> Result<Graph, PipelineError> {
    let s = sbm_graph(&cfg.sbm, derive_seed(cfg.seed, "sbm", &[]));
    write(&cfg.path(files::SBM), &write_edge_list(&s.graph))?;
    write(&cfg.path(files::SBM_BLOCKS), &to_json(&s.block))?;
    Ok(s.graph)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let mut c = PipelineConfig::default();
        c.set("sampling.k=7").unwrap();
        c.set("sampling.scheme=ego").unwrap();
        c.set("denoiser.learning_rate=0.01").unwrap();
        c.set("dataset=data/g.txt").unwrap();
        assert_eq!(c.sampling.k, 7);
        assert_eq!(c.sampling.scheme, crate::sampling::Scheme::Ego);
        assert_eq!(c.denoiser.learning_rate, 0.01);
        assert_eq!(c.dataset, Some(PathBuf::from("data/g.txt")));
        assert!(matches!(c.set("sampling.nope=1"), Err(PipelineError::Config(_))));
        assert!(matches!(c.set("sampling.k=-3"), Err(PipelineError::Config(_))));
        assert!(matches!(c.set("novalue"), Err(PipelineError::Config(_))));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let c = PipelineConfig::default();
        assert_eq!(PipelineConfig::from_json(&c.to_json()).unwrap(), c);
        assert_eq!(PipelineConfig::from_json("{}").unwrap(), c);
        assert!(PipelineConfig::from_json("{\"bogus\": 1}").is_err());
        c.validate().unwrap();
        let mut bad = c.clone();
        bad.assembly.fractions = vec![0.5, 0.2];
        assert!(bad.validate().is_err());
        let mut bad = c;
        bad.denoiser.batch = 0;
        assert_eq!(bad.validate().unwrap_err().exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn self_comparison_has_zero_deltas() {
        let g = Graph::from_edges(6, [(0, 1), (1, 2), (2, 0), (2, 3), (3, 4)]);
        let c = compare(&g, &g);
        assert!(c.delta.iter().all(|(_, d)| *d == Some(0.0)));
        let e = compare(&g, &Graph::empty(6));
        assert!(e.synthetic.flags.len() == 4);
        assert!(e.delta.iter().any(|(_, d)| d.is_none()));
    }
}
