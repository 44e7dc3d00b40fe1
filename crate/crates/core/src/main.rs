use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sagess::pipeline::{self, PipelineConfig, PipelineError};

#[derive(Parser)]
#[command(name = "sagess", version, about = "Graph generation by diffusion over sampled subgraphs")]
struct Cli {
    /// JSON configuration file; missing fields take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Real graph edge list, overriding the config.
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Config override as dotted.key=value; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the training corpus from the dataset.
    Sample,
    /// Fit the denoiser on a corpus.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Assemble a synthetic graph from a checkpoint.
    Generate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare statistics of the real and synthetic graphs.
    Eval {
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Train a link predictor on the synthetic graph and test it on real edges.
    Linkpred {
        #[arg(long)]
        synthetic: Option<PathBuf>,
    },
    /// Statistics along one assembly at increasing edge budgets.
    Progressive {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a stochastic block model fixture graph.
    FixtureSbm,
    /// Print the effective configuration.
    Config,
}

fn config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_json(
            &std::fs::read_to_string(p)
                .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", p.display())))?,
        )?,
        None => PipelineConfig::default(),
    };
    for s in &cli.sets {
        cfg.set(s)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(d) = &cli.dataset {
        cfg.dataset = Some(d.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(PipelineError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    }
    let cfg = config(&cli)?;
    match &cli.command {
        Command::Sample => {
            let s = pipeline::cmd_sample(&cfg)?;
            println!("{} samples (scheme {}, k {}) over {} nodes", s.samples, s.scheme, s.k, s.n_parent);
        }
        Command::Train { corpus } => {
            let c = pipeline::cmd_train(&cfg, corpus.as_deref())?;
            println!("trained denoiser n={} hidden={} layers={}", c.dims.n, c.dims.hidden, c.dims.layers);
        }
        Command::Generate { checkpoint } => {
            let r = pipeline::cmd_generate(&cfg, checkpoint.as_deref())?;
            println!("{} edges from {} subgraphs (overshoot {})", r.edges, r.subgraphs_used, r.overshoot);
        }
        Command::Eval { synthetic } => {
            let c = pipeline::cmd_eval(&cfg, synthetic.as_deref())?;
            print!("{}", sagess::metrics::comparison_text(&[("real", &c.real), ("synthetic", &c.synthetic)]));
        }
        Command::Linkpred { synthetic } => {
            for r in pipeline::cmd_linkpred(&cfg, synthetic.as_deref())? {
                println!("{:<18} auc {:.4} ap {:.4}", r.method, r.auc, r.ap);
            }
        }
        Command::Progressive { checkpoint } => {
            print!("{}", pipeline::cmd_progressive(&cfg, checkpoint.as_deref())?);
        }
        Command::FixtureSbm => {
            let g = pipeline::cmd_fixture_sbm(&cfg)?;
            println!("{} nodes, {} edges", g.n(), g.num_edges());
        }
        Command::Config => println!("{}", cfg.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { pipeline::EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("sagess: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
