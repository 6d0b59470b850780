//! `kcd`: knowledge-walk and textual-cue perspective detection from the
//! command line.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use kcd::dataset::{Dataset, CORPUS_FILE, TOPIC_EMBEDDINGS_FILE, TRANSE_DIR};
use kcd::embed_io::{load_corpus, EmbeddingMatrix, TEXT_ENCODER_SEED};
use kcd::hin::build_hin;
use kcd::kg::{train_transe, EmbeddingTable, KnowledgeGraph, TransEConfig};
use kcd::model::Model;
use kcd::synth::{generate, SynthConfig};
use kcd::train::{
    default_grid, evaluate_dataset, parse_grid, prepare_corpus, rows_to_tsv, run_ablation,
    thread_limit, train, AblationKind, TrainConfig, TrainOptions,
};
use kcd::walk::{embed_walks, walks_for_corpus, write_walks, WalkImportance, WalkSettings};

#[derive(Parser)]
#[command(
    name = "kcd",
    version,
    about = "Knowledge-walk and textual-cue perspective detection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for all outputs; created if missing.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Train TransE entity and relation embeddings on a knowledge graph.
    Transe {
        #[command(flatten)]
        common: Common,
        /// Knowledge graph directory.
        #[arg(long)]
        kg_dir: PathBuf,
        /// Embedding width.
        #[arg(long)]
        dim: Option<usize>,
        /// Training epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Generate biased knowledge walks for every paragraph of a corpus.
    Walks {
        #[command(flatten)]
        common: Common,
        /// Knowledge graph directory.
        #[arg(long)]
        kg_dir: PathBuf,
        /// Annotated corpus (`corpus.jsonl`).
        #[arg(long)]
        corpus: PathBuf,
        /// Hops per walk.
        #[arg(long)]
        k: Option<usize>,
        /// Walks started from each mentioned entity.
        #[arg(long)]
        walks_per_entity: Option<usize>,
        /// `relation_id<TAB>score` overrides of the relation importance.
        #[arg(long)]
        importance_file: Option<PathBuf>,
        /// Walk file name inside the output directory.
        #[arg(long, default_value = "walks.tsv")]
        out: String,
        /// Also embed the walk sentences with the stand-in encoder at this width.
        #[arg(long)]
        embed_dim: Option<usize>,
    },
    /// Build and dump every document graph.
    BuildHin {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
    },
    /// Cross-validated training.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Skip writing per-fold model checkpoints.
        #[arg(long)]
        no_checkpoints: bool,
    },
    /// Score a saved model.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint written by `train`.
        #[arg(long)]
        model: PathBuf,
        /// Only the test documents of this fold.
        #[arg(long)]
        fold: Option<usize>,
    },
    /// Run one grid study and write its results table.
    Ablate {
        /// walk-length, infusion-strategy, cue-removal or data-fraction.
        kind: String,
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated grid; defaults to the full study.
        #[arg(long)]
        grid: Option<String>,
    },
    /// Write a synthetic cue-separable dataset.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of documents.
        #[arg(long)]
        docs: Option<usize>,
        /// Embedding width.
        #[arg(long)]
        dim: Option<usize>,
    },
}

/// Errors that should exit with status 2.
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<kcd::Error>()
            .is_some_and(kcd::Error::is_validation)
            || e.downcast_ref::<Invalid>().is_some()
    })
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).map_err(|e| Invalid(format!("{}: {e}", path.display())).into())
}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_resolved_config(dir: &Path, cfg: &TrainConfig) -> Result<()> {
    write(
        &dir.join("config.toml"),
        &toml::to_string(cfg).context("serializing configuration")?,
    )
}

fn options() -> Result<TrainOptions> {
    Ok(TrainOptions {
        threads: thread_limit()?,
        checkpoint_dir: None,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Transe {
            common,
            kg_dir,
            dim,
            epochs,
        } => {
            let mut cfg: TransEConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.dim = dim.unwrap_or(cfg.dim);
            cfg.epochs = epochs.unwrap_or(cfg.epochs);
            let kg = KnowledgeGraph::load_dir(&kg_dir)?;
            let (table, report) = train_transe(&kg, &cfg)?;
            create_dir(&common.out_dir)?;
            table.write_dir(&common.out_dir)?;
            let mut loss = String::from("epoch\tloss\n");
            for (i, l) in report.epoch_loss.iter().enumerate() {
                let _ = writeln!(loss, "{}\t{l}", i + 1);
            }
            write(&common.out_dir.join("transe_loss.tsv"), &loss)?;
            tracing::info!(entities = kg.entity_count(), dim = cfg.dim, "TransE done");
        }
        Command::Walks {
            common,
            kg_dir,
            corpus,
            k,
            walks_per_entity,
            importance_file,
            out,
            embed_dim,
        } => {
            let cfg = train_config(&common)?;
            let kg = KnowledgeGraph::load_dir(&kg_dir)?;
            let corpus = load_corpus(&corpus)?;
            let mut importance = WalkImportance::from_graph(&kg);
            if let Some(path) = &importance_file {
                importance.apply_file(&kg, path)?;
            }
            let settings = WalkSettings {
                k: k.unwrap_or(cfg.walk_length),
                walks_per_entity: walks_per_entity.unwrap_or(cfg.walks_per_entity),
                seed: kcd::seed::derive(cfg.seed, "walks"),
            };
            if settings.k == 0 || settings.walks_per_entity == 0 {
                return Err(Invalid("--k and --walks-per-entity must be positive".into()).into());
            }
            let walks = walks_for_corpus(&kg, &corpus, &settings, &importance)?;
            create_dir(&common.out_dir)?;
            write_walks(&common.out_dir.join(&out), &walks)?;
            if let Some(d) = embed_dim {
                if d == 0 {
                    return Err(Invalid("--embed-dim must be positive".into()).into());
                }
                embed_walks(&walks, d, TEXT_ENCODER_SEED)?
                    .write(&common.out_dir.join(kcd::dataset::WALK_EMBEDDINGS_FILE))?;
            }
            tracing::info!(walks = walks.len(), k = settings.k, "walks written");
        }
        Command::BuildHin { common, data } => {
            let cfg = train_config(&common)?;
            let corpus = load_corpus(&data.join(CORPUS_FILE))?;
            let topics = EmbeddingMatrix::read(&data.join(TOPIC_EMBEDDINGS_FILE))?;
            let transe = EmbeddingTable::read_dir(&data.join(TRANSE_DIR))?;
            let graphs_dir = common.out_dir.join("graphs");
            create_dir(&graphs_dir)?;
            let mut summary = String::from("doc_id\tnodes\tedges\tV1\tV2\tV3\tV4\tV5\tV6\n");
            let drop_seed = kcd::seed::derive(cfg.seed, "cue-removal");
            for doc in &corpus.docs {
                let mut g = build_hin(doc, &topics, &transe.entities)?;
                for (&cue, &p) in &cfg.cue_removal {
                    g = kcd::hin::drop_cues(&g, cue, p, drop_seed)?;
                }
                g.validate()?;
                write(
                    &graphs_dir.join(format!("{}.txt", doc.doc_id)),
                    &g.to_text(),
                )?;
                let _ = write!(
                    summary,
                    "{}\t{}\t{}",
                    doc.doc_id,
                    g.nodes.len(),
                    g.edges.len()
                );
                for t in kcd::hin::NodeType::ALL {
                    let _ = write!(summary, "\t{}", g.count(t));
                }
                summary.push('\n');
            }
            write(&common.out_dir.join("summary.tsv"), &summary)?;
            tracing::info!(docs = corpus.len(), "graphs written");
        }
        Command::Train {
            common,
            data,
            no_checkpoints,
        } => {
            let cfg = train_config(&common)?;
            let dataset = Dataset::load_dir(&data)?;
            create_dir(&common.out_dir)?;
            let opts = TrainOptions {
                checkpoint_dir: (!no_checkpoints).then(|| common.out_dir.join("checkpoints")),
                ..options()?
            };
            let report = train(&dataset, &cfg, &opts)?;
            write_resolved_config(&common.out_dir, &cfg)?;
            write(&common.out_dir.join("report.json"), &report.to_json())?;
            write(
                &common.out_dir.join("loss_curve.tsv"),
                &report.loss_curve_tsv(),
            )?;
            println!(
                "accuracy {:.4}  macro-F1 {:.4}",
                report.accuracy, report.macro_f1
            );
        }
        Command::Eval {
            common,
            data,
            model,
            fold,
        } => {
            let cfg = train_config(&common)?;
            let dataset = Dataset::load_dir(&data)?;
            let model = Model::load(&model)?;
            let metrics = evaluate_dataset(&model, &dataset, &cfg, fold)?;
            create_dir(&common.out_dir)?;
            let json = serde_json::json!({ "fold": fold, "metrics": metrics });
            write(&common.out_dir.join("eval.json"), &format!("{json:#}\n"))?;
            println!(
                "accuracy {:.4}  macro-F1 {:.4}",
                metrics.accuracy, metrics.macro_f1
            );
        }
        Command::Ablate {
            kind,
            common,
            data,
            grid,
        } => {
            let kind = AblationKind::parse(&kind)?;
            let cfg = train_config(&common)?;
            let grid = match &grid {
                Some(g) => parse_grid(kind, g)?,
                None => default_grid(kind),
            };
            let dataset = Dataset::load_dir(&data)?;
            // surface invalid graphs (e.g. CA without cues) before the long runs
            prepare_corpus(&dataset, &cfg)?;
            let rows = run_ablation(&grid, &dataset, &cfg, Some(&data), &options()?)?;
            create_dir(&common.out_dir)?;
            write_resolved_config(&common.out_dir, &cfg)?;
            write(
                &common.out_dir.join(format!("ablation_{kind}.tsv")),
                &rows_to_tsv(&rows),
            )?;
            let reports: Vec<serde_json::Value> = rows
                .iter()
                .map(|r| serde_json::json!({ "setting": r.point.label(), "report": r.report }))
                .collect();
            write(
                &common.out_dir.join(format!("ablation_{kind}.json")),
                &format!("{:#}\n", serde_json::Value::Array(reports)),
            )?;
            println!("{} rows", rows.len());
        }
        Command::Synth { common, docs, dim } => {
            let mut cfg: SynthConfig = read_config(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.docs = docs.unwrap_or(cfg.docs);
            cfg.dim = dim.unwrap_or(cfg.dim);
            let dataset = generate(&cfg)?;
            dataset.write_dir(&common.out_dir)?;
            tracing::info!(
                docs = dataset.corpus.len(),
                dim = cfg.dim,
                "synthetic dataset written"
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_validation(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
