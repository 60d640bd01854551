use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hitter_core::batch::Batcher;
use hitter_core::config::RunConfig;
use hitter_core::eval::{
    breakdown_by_relation, mrr_by_hops, nearest_entities, write_breakdown_csv, write_ranks_csv, write_report_json,
};
use hitter_core::kg::{KnowledgeGraph, Split};
use hitter_core::model::Hitter;
use hitter_core::synthetic::{generate, SyntheticSpec};
use hitter_core::train::{evaluate_model, Trainer};

const CHECKPOINT_FILE: &str = "best.ckpt";
const CONFIG_FILE: &str = "config.json";

#[derive(Parser)]
#[command(name = "hitter", version, about = "Context-aware knowledge graph link prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Run configuration layers shared by every command that builds a model.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Dataset preset providing the defaults: fb15k237, wn18rr or custom.
    #[arg(long, default_value = "custom")]
    preset: String,
    /// TOML or JSON file of config keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set max_epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Dataset directory with train.txt, valid.txt and optionally test.txt.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Drop the context encoder and score from the source pair alone.
    #[arg(long)]
    no_context: bool,
    /// Disable source perturbation and its recovery loss.
    #[arg(long)]
    no_mep: bool,
    /// Strict removal of every training pair pointing at the target.
    #[arg(long)]
    remove_all_gold_pairs: bool,
    #[arg(long)]
    clip_norm: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self, fallback_file: Option<PathBuf>) -> Result<RunConfig> {
        let mut sets = self.overrides.clone();
        if let Some(d) = &self.data {
            sets.push(format!("dataset_dir={}", toml_string(&d.display().to_string())));
        }
        if let Some(s) = self.seed {
            sets.push(format!("seed={s}"));
        }
        for (flag, key) in [
            (self.no_context, "no_context"),
            (self.no_mep, "no_mep"),
            (self.remove_all_gold_pairs, "remove_all_gold_pairs"),
        ] {
            if flag {
                sets.push(format!("{key}=true"));
            }
        }
        if let Some(c) = self.clip_norm {
            sets.push(format!("clip_norm={c:?}"));
        }
        let file = self.config.clone().or(fallback_file.filter(|p| p.exists()));
        Ok(RunConfig::load(&self.preset, file.as_deref(), &sets)?)
    }
}

fn toml_string(s: &str) -> String {
    serde_json::to_string(s).expect("string serializes")
}

#[derive(Subcommand)]
enum Command {
    /// Train and keep the checkpoint with the best dev MRR.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filtered ranking metrics and breakdowns for one split.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Where to write report.json and the CSVs (defaults to the checkpoint's directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Embedding and graph analyses of a trained model.
    Analyze {
        #[command(subcommand)]
        what: Analysis,
    },
    /// Entity, relation and triple counts of a dataset as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
    },
    /// Write a small dataset whose held-out facts follow from known structure.
    GenSynthetic {
        #[arg(long, default_value_t = 200)]
        entities: usize,
        #[arg(long, default_value_t = 3)]
        relations: usize,
        /// composition, star or chain.
        #[arg(long, default_value = "composition")]
        pattern: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum Analysis {
    /// Entities closest to one entity by embedding cosine similarity.
    Neighbors {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        entity: String,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
    /// MRR grouped by the training-graph distance between source and gold.
    Hops {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn load_graph(cfg: &RunConfig) -> Result<KnowledgeGraph> {
    KnowledgeGraph::load_dir(&cfg.dataset_dir)
        .with_context(|| format!("loading dataset from {}", cfg.dataset_dir.display()))
}

fn load_model(path: &Path, graph: &KnowledgeGraph) -> Result<Hitter> {
    let model = Hitter::load(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    let v = graph.vocab();
    if model.num_entities() != v.num_entities() || model.num_relations() != v.num_relations() {
        bail!(
            "checkpoint was trained on {} entities / {} relations but the dataset has {} / {}",
            model.num_entities(),
            model.num_relations(),
            v.num_entities(),
            v.num_relations()
        );
    }
    Ok(model)
}

fn sibling_config(checkpoint: &Path) -> Option<PathBuf> {
    checkpoint.parent().map(|d| d.join(CONFIG_FILE))
}

fn train(cfg: &ConfigArgs, out: Option<PathBuf>) -> Result<()> {
    let run = cfg.resolve(None)?;
    let resolved = run.resolve()?;
    let out = out.unwrap_or_else(|| run.output_dir.clone());
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let echo = run.to_json()?;
    println!("{echo}");
    fs::write(out.join(CONFIG_FILE), &echo)?;

    let graph = load_graph(&run)?;
    let batcher = Batcher::new(&graph, resolved.sampling, resolved.mep)?;
    let model = Hitter::new(
        resolved.model,
        graph.vocab().num_entities(),
        graph.vocab().num_relations(),
        run.seed,
    )?;
    log::info!("{} parameters", model.param_count());
    let trainer = Trainer::new(&batcher, model, resolved.train)?;
    let outcome = trainer.fit(graph.valid().as_slice(), Some(&out.join(CHECKPOINT_FILE)))?;
    outcome.ledger.write_csv(&out.join("ledger.csv"))?;
    if let (Some(mrr), Some(epoch)) = (outcome.ledger.best_mrr, outcome.ledger.best_epoch) {
        eprintln!("best dev MRR {mrr:.4} at epoch {epoch}");
    }
    Ok(())
}

fn eval(cfg: &ConfigArgs, checkpoint: &Path, split: &str, out: Option<PathBuf>) -> Result<()> {
    let run = cfg.resolve(sibling_config(checkpoint))?;
    let resolved = run.resolve()?;
    let split: Split = split.parse()?;
    let graph = load_graph(&run)?;
    let model = load_model(checkpoint, &graph)?;
    let batcher = Batcher::new(&graph, resolved.sampling, resolved.mep)?;
    let triples = graph.split(split).as_slice();
    if triples.is_empty() {
        bail!("split {split:?} is empty");
    }
    let result = evaluate_model(&model, &batcher, &resolved.train, triples)?;
    let out = match out {
        Some(o) => o,
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    fs::create_dir_all(&out)?;
    write_report_json(&out.join("report.json"), &result.report)?;
    write_breakdown_csv(&out.join("relations.csv"), &breakdown_by_relation(&result.records, graph.vocab())?)?;
    write_breakdown_csv(&out.join("hops.csv"), &mrr_by_hops(&result.records, graph.neighbors())?)?;
    write_ranks_csv(&out.join("ranks.csv"), &result.records, graph.vocab())?;
    println!("{}", serde_json::to_string_pretty(&result.report)?);
    Ok(())
}

fn analyze(what: &Analysis) -> Result<()> {
    match what {
        Analysis::Neighbors {
            cfg,
            checkpoint,
            entity,
            k,
        } => {
            let run = cfg.resolve(sibling_config(checkpoint))?;
            let graph = load_graph(&run)?;
            let model = load_model(checkpoint, &graph)?;
            let id = graph.vocab().require_entity(entity)?;
            for (e, sim) in nearest_entities(model.entity_table(), id, *k)? {
                println!("{}\t{sim:.6}", graph.vocab().entity_name(e)?);
            }
        }
        Analysis::Hops { cfg, checkpoint, split } => {
            let run = cfg.resolve(sibling_config(checkpoint))?;
            let resolved = run.resolve()?;
            let graph = load_graph(&run)?;
            let model = load_model(checkpoint, &graph)?;
            let batcher = Batcher::new(&graph, resolved.sampling, resolved.mep)?;
            let split: Split = split.parse()?;
            let result = evaluate_model(&model, &batcher, &resolved.train, graph.split(split).as_slice())?;
            let rows = mrr_by_hops(&result.records, graph.neighbors())?;
            println!("{}", serde_json::to_string_pretty(&rows)?);
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { cfg, out } => train(&cfg, out),
        Command::Eval {
            cfg,
            checkpoint,
            split,
            out,
        } => eval(&cfg, &checkpoint, &split, out),
        Command::Analyze { what } => analyze(&what),
        Command::Stats { data } => {
            let graph = KnowledgeGraph::load_dir(&data)?;
            println!("{}", graph.stats().to_json());
            Ok(())
        }
        Command::GenSynthetic {
            entities,
            relations,
            pattern,
            seed,
            out,
        } => {
            let data = generate(&SyntheticSpec {
                entities,
                relations,
                pattern,
                seed,
            })?;
            data.write(&out)?;
            eprintln!(
                "wrote {} train / {} valid / {} test triples to {}",
                data.train.len(),
                data.valid.len(),
                data.test.len(),
                out.display()
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
