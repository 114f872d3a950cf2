use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use biorank_core::checks::{gradcheck_model, GRADCHECK_TOLERANCE};
use biorank_core::embed::{read_idf_table, write_idf_table, DefaultIdf, EmbeddingStore};
use biorank_core::index::{default_stopwords, parse_stopwords, read_corpus, InvertedIndex};
use biorank_core::model::{ModelFile, ModelKind};
use biorank_core::pipeline::data::{read_jsonl_path, write_jsonl, write_jsonl_path, write_trec};
use biorank_core::pipeline::rerank::train_kind;
use biorank_core::pipeline::{
    ensemble_runs, evaluate_run, run_queries, AnyModel, BiorankConfig, QrelEntry, Qrels, Query,
    Resources, RunEntry, TrainingData,
};
use biorank_core::synthetic::{toy_collection, ToyConfig};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "biorank",
    version,
    about = "Biomedical document and snippet retrieval"
)]
struct Cli {
    /// TOML file overriding any configuration key (see README).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initialisation, pair sampling and synthetic data.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a BM25 index from a JSON-lines corpus.
    Index {
        #[arg(long)]
        corpus: PathBuf,
        /// One stopword per line; a built-in list is used otherwise.
        #[arg(long)]
        stopwords: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a document reranker or the snippet model.
    Train {
        /// term_pacrr, pacrr, drmm, abel_drmm, abel_density or bcnn.
        #[arg(long)]
        kind: ModelKind,
        #[command(flatten)]
        resources: ResourceArgs,
        #[arg(long)]
        train_queries: PathBuf,
        #[arg(long)]
        train_qrels: PathBuf,
        #[arg(long)]
        dev_queries: PathBuf,
        #[arg(long)]
        dev_qrels: PathBuf,
        /// Overrides the number of epochs of the selected training setup.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Retrieve, rerank and extract snippets for a query file.
    Rank {
        #[command(flatten)]
        resources: ResourceArgs,
        #[arg(long)]
        queries: PathBuf,
        /// Document reranker parameters; BM25 order is kept without one.
        #[arg(long)]
        doc_model: Option<PathBuf>,
        /// BCNN parameters; no snippets are returned without one.
        #[arg(long)]
        snippet_model: Option<PathBuf>,
        /// Apply the confidence filter (ABEL-DRMM with density only).
        #[arg(long)]
        confidence: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write a six-column TREC run of the documents.
        #[arg(long)]
        trec: Option<PathBuf>,
    },
    /// Combine runs by rank-position voting.
    Ensemble {
        #[arg(long, required = true, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a run against relevance judgements.
    Evaluate {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// Write the report as JSON here as well.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Finite-difference gradient check of one model on tiny instances.
    Gradcheck {
        #[arg(long)]
        kind: ModelKind,
        #[arg(long, default_value_t = 20)]
        trials: usize,
    },
    /// Write a small synthetic collection with embeddings and judgements.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 120)]
        docs: usize,
        #[arg(long, default_value_t = 12)]
        train_queries: usize,
        #[arg(long, default_value_t = 4)]
        dev_queries: usize,
    },
}

#[derive(Args)]
struct ResourceArgs {
    #[arg(long)]
    index: PathBuf,
    /// Word vectors, one `token v1 .. vD` line each.
    #[arg(long)]
    embeddings: PathBuf,
    /// `token<TAB>idf` lines; idf comes from the index otherwise.
    #[arg(long)]
    idf: Option<PathBuf>,
}

impl ResourceArgs {
    fn load(&self, cfg: &BiorankConfig) -> Result<Resources> {
        let index = InvertedIndex::load_path(&self.index)
            .with_context(|| format!("reading index {}", self.index.display()))?;
        let mut store = EmbeddingStore::load(&self.embeddings)
            .with_context(|| format!("reading embeddings {}", self.embeddings.display()))?;
        if let Some(path) = &self.idf {
            let table = read_idf_table(
                File::open(path).with_context(|| format!("opening {}", path.display()))?,
            )?;
            store.set_idf_table(table, DefaultIdf::Auto);
        }
        Ok(Resources::new(index, store, cfg.bm25))
    }
}

fn load_config(path: Option<&Path>) -> Result<BiorankConfig> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?
        }
        None => BiorankConfig::default(),
    };
    cfg.pipeline.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Index {
            corpus,
            stopwords,
            out,
        } => {
            let load = read_corpus(
                File::open(&corpus).with_context(|| format!("opening {}", corpus.display()))?,
            )?;
            let stop = match stopwords {
                Some(p) => parse_stopwords(&std::fs::read_to_string(p)?),
                None => default_stopwords(),
            };
            let index = InvertedIndex::build(load.documents, stop)?;
            index.save_path(&out)?;
            log::info!(
                "indexed {} documents ({} rejected), mean length {:.1}",
                index.n_docs(),
                load.rejected.len(),
                index.avg_doc_length()
            );
        }
        Command::Train {
            kind,
            resources,
            train_queries,
            train_qrels,
            dev_queries,
            dev_qrels,
            epochs,
            out,
        } => {
            let mut cfg = cfg;
            if let Some(e) = epochs {
                let mut t = if kind == ModelKind::Bcnn {
                    cfg.snippet_train_config()
                } else {
                    let mut c = cfg.clone();
                    c.pipeline.reranker = reranker_for(kind);
                    c.doc_train_config()
                };
                t.epochs = e;
                if kind == ModelKind::Bcnn {
                    cfg.snippet_train = Some(t);
                } else {
                    cfg.train = Some(t);
                }
            }
            let res = resources.load(&cfg)?;
            let train_q: Vec<Query> = read_jsonl_path(&train_queries)?;
            let dev_q: Vec<Query> = read_jsonl_path(&dev_queries)?;
            let train_r = Qrels::new(read_jsonl_path::<QrelEntry>(&train_qrels)?);
            let dev_r = Qrels::new(read_jsonl_path::<QrelEntry>(&dev_qrels)?);
            let data = TrainingData {
                train_queries: &train_q,
                train_qrels: &train_r,
                dev_queries: &dev_q,
                dev_qrels: &dev_r,
            };
            let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
            let start = Instant::now();
            let (mut file, outcome) = train_kind(kind, &res, data, &cfg, &mut rng)?;
            file.seed = Some(cli.seed);
            file.save(&out)?;
            println!(
                "{kind}: best dev MAP@10 {:.4} at epoch {} of {} ({:.1}s)",
                outcome.best_dev_map,
                outcome.chosen_epoch,
                outcome.dev_maps.len(),
                start.elapsed().as_secs_f64()
            );
        }
        Command::Rank {
            resources,
            queries,
            doc_model,
            snippet_model,
            confidence,
            out,
            trec,
        } => {
            let res = resources.load(&cfg)?;
            let queries: Vec<Query> = read_jsonl_path(&queries)?;
            let doc = match doc_model {
                Some(p) => match AnyModel::from_file(&ModelFile::load(&p)?)? {
                    AnyModel::Doc(mut m) => {
                        if confidence || cfg.pipeline.reranker.confidence_filter() {
                            m.set_confidence(true)?;
                        }
                        Some(m)
                    }
                    AnyModel::Snippet(_) => bail!("{} holds a snippet model", p.display()),
                },
                None => None,
            };
            let snip = match snippet_model {
                Some(p) => match AnyModel::from_file(&ModelFile::load(&p)?)? {
                    AnyModel::Snippet(m) => Some(m),
                    AnyModel::Doc(_) => bail!("{} holds a document model", p.display()),
                },
                None => None,
            };
            let run = run_queries(&queries, &res, doc.as_ref(), snip.as_ref(), &cfg.pipeline)?;
            write_jsonl_path(&run, &out)?;
            if let Some(t) = trec {
                let tag = doc.as_ref().map_or("bm25", |m| m.kind.name());
                write_trec(&run, tag, BufWriter::new(File::create(t)?))?;
            }
            log::info!("ranked {} queries", run.len());
        }
        Command::Ensemble { runs, out } => {
            let loaded = runs
                .iter()
                .map(|p| {
                    read_jsonl_path::<RunEntry>(p)
                        .with_context(|| format!("reading run {}", p.display()))
                })
                .collect::<Result<Vec<_>>>()?;
            let merged = ensemble_runs(&loaded, 10, cfg.pipeline.k_d, cfg.pipeline.k_s);
            write_jsonl_path(&merged, &out)?;
        }
        Command::Evaluate { run, qrels, json } => {
            let run: Vec<RunEntry> = read_jsonl_path(&run)?;
            let qrels = Qrels::new(read_jsonl_path::<QrelEntry>(&qrels)?);
            let report = evaluate_run(&run, &qrels, cfg.gmap_epsilon);
            print!("{}", report.documents.table("documents"));
            print!("{}", report.snippets.table("snippets"));
            if let Some(p) = json {
                serde_json::to_writer_pretty(BufWriter::new(File::create(p)?), &report)?;
            }
        }
        Command::Gradcheck { kind, trials } => {
            let start = Instant::now();
            let s = gradcheck_model(kind, cli.seed, trials)?;
            let verdict = if s.passed(GRADCHECK_TOLERANCE) {
                "pass"
            } else {
                "FAIL"
            };
            println!(
                "{kind}: max relative error {:.3e} over {trials} instances ({verdict} at {GRADCHECK_TOLERANCE:e}, {:.2}s)",
                s.max_relative_error,
                start.elapsed().as_secs_f64()
            );
            if let Some(w) = &s.worst {
                println!(
                    "worst: {:?} analytic {:.6e} numeric {:.6e}",
                    w.worst, w.analytic, w.numeric
                );
            }
        }
        Command::Synth {
            out_dir,
            docs,
            train_queries,
            dev_queries,
        } => write_synth(
            &out_dir,
            &ToyConfig {
                seed: cli.seed,
                n_docs: docs,
                n_train_queries: train_queries,
                n_dev_queries: dev_queries,
                ..ToyConfig::default()
            },
        )?,
    }
    Ok(())
}

fn reranker_for(kind: ModelKind) -> biorank_core::pipeline::RerankerKind {
    biorank_core::pipeline::RerankerKind::ALL
        .into_iter()
        .find(|r| r.model_kind() == kind)
        .expect("document models have a reranker")
}

fn write_synth(dir: &Path, cfg: &ToyConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let toy = toy_collection(cfg)?;
    let corpus: Vec<serde_json::Value> = toy
        .documents
        .iter()
        .map(|d| json!({"id": d.id, "title": d.title, "abstract": d.abstract_text}))
        .collect();
    write_jsonl(
        &corpus,
        BufWriter::new(File::create(dir.join("corpus.jsonl"))?),
    )?;
    write_jsonl_path(&toy.train_queries, &dir.join("train_queries.jsonl"))?;
    write_jsonl_path(&toy.dev_queries, &dir.join("dev_queries.jsonl"))?;
    write_jsonl_path(&toy.qrels, &dir.join("qrels.jsonl"))?;
    let mut emb = BufWriter::new(File::create(dir.join("embeddings.txt"))?);
    toy.store.write_text(&mut emb)?;
    emb.flush()?;
    let idf: Vec<(String, f64)> = toy
        .store
        .vocab_tokens()
        .iter()
        .map(|t| (t.clone(), toy.store.idf_of(t)))
        .collect();
    write_idf_table(&idf, BufWriter::new(File::create(dir.join("idf.tsv"))?))?;
    println!(
        "wrote {} documents to {}",
        toy.documents.len(),
        dir.display()
    );
    Ok(())
}
