use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use enttype::config::RunConfig;
use enttype::models::Provenance;
use enttype::pipeline::Pipeline;

/// Corpus-level fine-grained entity typing pipeline.
///
/// Exit status: 0 on success, 2 on invalid input or configuration (including
/// missing prerequisite artifacts), 1 on other failures.
#[derive(Parser, Debug)]
#[command(name = "enttype", version)]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Forces single-threaded, fixed-order computation.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Overrides `workers` (used when not deterministic).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Overrides `run_dir`.
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set k=2`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus and knowledge base to the configured paths.
    GenerateSynthetic,
    /// Normalise the annotated corpus.
    Preprocess,
    /// Assign entities to train/dev/test.
    Split,
    /// Produce the entity-id and notable-type token streams.
    Rewrite,
    /// Train entity and word/type embeddings.
    Embed,
    /// Build and sample the distant-supervision context datasets.
    BuildDataset,
    /// Train the global or context model.
    Train { model: Trainable },
    /// Score dev and test entities.
    Score { model: Model },
    /// Tune thresholds on dev and report test metrics.
    Evaluate { model: Model },
    /// Train one context model per width and tabulate micro F1 and P@1.
    SweepContext {
        /// Comma-separated widths k (2k context words); defaults to `sweep_k`.
        #[arg(long, value_delimiter = ',')]
        k: Vec<usize>,
    },
    /// Run every stage after generation, for all four models.
    Run,
    /// Print every config key with its default.
    ShowConfig,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Trainable {
    Gm,
    Cm,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Model {
    Gm,
    Cm,
    Jm,
    Mft,
}

impl From<Model> for Provenance {
    fn from(m: Model) -> Self {
        match m {
            Model::Gm => Provenance::Gm,
            Model::Cm => Provenance::Cm,
            Model::Jm => Provenance::Jm,
            Model::Mft => Provenance::Mft,
        }
    }
}

fn build_config(cli: &Cli) -> enttype::Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &cli.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| enttype::Error::Invalid(format!("override {o:?} is not KEY=VALUE")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if cli.deterministic {
        cfg.deterministic = true;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(dir) = &cli.run_dir {
        cfg.run_dir = dir.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> enttype::Result<()> {
    let cfg = build_config(cli)?;
    if let Command::ShowConfig = cli.command {
        print!("{}", RunConfig::documented());
        return Ok(());
    }
    let p = Pipeline::new(cfg)?;
    match &cli.command {
        Command::GenerateSynthetic => p.generate_synthetic(),
        Command::Preprocess => p.preprocess(),
        Command::Split => p.split(),
        Command::Rewrite => p.rewrite(),
        Command::Embed => p.embed(),
        Command::BuildDataset => p.build_dataset(),
        Command::Train { model } => p.train(match model {
            Trainable::Gm => Provenance::Gm,
            Trainable::Cm => Provenance::Cm,
        }),
        Command::Score { model } => p.score((*model).into()),
        Command::Evaluate { model } => {
            let r = p.evaluate((*model).into())?;
            println!(
                "{}\tP@1 {:.4}\tBEP {:.4}\tacc {:.4}\tmicro {:.4}\tmacro {:.4}",
                r.model,
                r.precision_at_1,
                r.breakeven_point,
                r.classification.strict_accuracy,
                r.classification.micro_f1,
                r.classification.entity_macro_f1
            );
            Ok(())
        }
        Command::SweepContext { k } => {
            let ks = if k.is_empty() {
                p.config().sweep_k.clone()
            } else {
                k.clone()
            };
            println!("2k\tmicro_f1\tp_at_1");
            for row in p.sweep_context(&ks)? {
                println!(
                    "{}\t{:.4}\t{:.4}",
                    2 * row.k,
                    row.micro_f1,
                    row.precision_at_1
                );
            }
            Ok(())
        }
        Command::Run => {
            for r in p.run_all()?.values() {
                println!(
                    "{}\tP@1 {:.4}\tBEP {:.4}\tmicro {:.4}",
                    r.model, r.precision_at_1, r.breakeven_point, r.classification.micro_f1
                );
            }
            Ok(())
        }
        Command::ShowConfig => unreachable!(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
