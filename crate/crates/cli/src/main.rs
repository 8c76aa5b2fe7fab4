//! Pipeline CLI: corpus prep, pre-training, two-stage fine-tuning,
//! encoding, search, evaluation, ablation sweeps, and annotation stats.
//! Every stage writes a manifest of input/output hashes into the shared
//! artifact directory and never mutates another stage's outputs.

use clap::{Parser, Subcommand, ValueEnum};
use qctx::corpus::{self, PairKind, Passage, QueryMap, Vocab};
use qctx::dense::{self, EmbeddingMatrix, MinedNegatives};
use qctx::eval::{self, AnnotationSheet, QrelSet, RankedRun};
use qctx::model::Model;
use qctx::pipeline::{
    self, AblationSweep, ContextMode, ExperimentConfig, PipelineManifest,
};
use qctx::sparse::InvertedIndex;
use qctx::synth::{self, QueryExample, SynthSpec};
use qctx::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "qctx", about = "Query-as-context retrieval pipeline")]
struct Cli {
    /// Print the default configuration as TOML and exit.
    #[arg(long, global = true)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Engine {
    Bm25,
    Dense,
}

#[derive(Clone, Copy, ValueEnum)]
enum Sweep {
    Candidates,
    Context,
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabulary, passages, candidate queries, and a pair dump.
    Prep {
        #[arg(long)]
        config: PathBuf,
        /// JSONL corpus of {doc_id, text} records.
        #[arg(long)]
        corpus: PathBuf,
        /// Artifact directory (created if missing).
        #[arg(long)]
        dir: PathBuf,
    },
    /// Pre-train under the configured objective and context mode.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
    },
    /// Fine-tune a retriever; stage 1 mines BM25 negatives, stage 2 mines
    /// dense negatives with retriever 1.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
        /// JSONL of {query_id, query, positive_passage_id}.
        #[arg(long)]
        train_queries: PathBuf,
    },
    /// Encode the passage collection with a checkpoint.
    Encode {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Search the collection and write a TREC run file.
    Search {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dir: PathBuf,
        #[arg(long, value_enum)]
        engine: Engine,
        /// JSONL of {query_id, query}.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 1000)]
        k: usize,
        /// Dense engine only: checkpoint for query encoding.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dense engine only: pre-encoded collection (defaults to encoding on the fly).
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a TREC run against qrels and write a JSON report.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        qrels: PathBuf,
        /// JSON sidecar path (defaults to <run>.report.json).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the full pipeline per sweep point on a synthetic corpus.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        sweep: Sweep,
        /// Candidate counts for the candidates sweep.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1usize, 5, 10, 20])]
        candidates: Vec<usize>,
        #[arg(long, default_value_t = 12)]
        num_docs: usize,
        #[arg(long, default_value_t = 4)]
        num_topics: usize,
        /// Optional path for the emitted table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Report annotator-correlation rates from an annotation sheet.
    AnnotateStats {
        #[arg(long)]
        annotations: PathBuf,
    },
}

/// One fine-tuning query with its annotated positive, as stored on disk.
#[derive(Serialize, Deserialize)]
struct TrainQueryRecord {
    query_id: String,
    query: String,
    positive_passage_id: String,
}

/// Query text record for the search subcommand.
#[derive(Serialize, Deserialize)]
struct SearchQueryRecord {
    query_id: String,
    query: String,
}

/// Mined-negatives dump, one record per query.
#[derive(Serialize, Deserialize)]
struct NegativesRecord {
    query_id: String,
    padded: bool,
    negatives: Vec<qctx::dense::MinedNegative>,
}

fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path)?;
    let config: ExperimentConfig =
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(config)
}

fn load_prep(dir: &Path) -> Result<(Vocab, Vec<Passage>, QueryMap)> {
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let passages: Vec<Passage> = corpus::read_jsonl(&dir.join("passages.jsonl"))?;
    let queries = corpus::read_query_file(&dir.join("queries.jsonl"), &vocab)?;
    Ok((vocab, passages, queries))
}

fn read_train_queries(path: &Path, vocab: &Vocab) -> Result<Vec<QueryExample>> {
    let records: Vec<TrainQueryRecord> = corpus::read_jsonl(path)?;
    Ok(records
        .into_iter()
        .map(|r| QueryExample {
            query_id: r.query_id,
            tokens: vocab.encode(&r.query),
            positive_passage_id: r.positive_passage_id,
        })
        .collect())
}

fn write_negatives(path: &Path, mined: &HashMap<String, MinedNegatives>) -> Result<()> {
    let mut ids: Vec<&String> = mined.keys().collect();
    ids.sort();
    let records: Vec<NegativesRecord> = ids
        .into_iter()
        .map(|qid| NegativesRecord {
            query_id: qid.clone(),
            padded: mined[qid].padded,
            negatives: mined[qid].negatives.clone(),
        })
        .collect();
    corpus::write_jsonl(path, &records)
}

fn cmd_prep(config_path: &Path, corpus_path: &Path, dir: &Path) -> Result<()> {
    let config = read_config(config_path)?;
    std::fs::create_dir_all(dir)?;
    let docs = corpus::read_corpus(corpus_path)?;
    let out = pipeline::prep(&docs, &config)?;

    out.vocab.save(&dir.join("vocab.txt"))?;
    corpus::write_jsonl(&dir.join("passages.jsonl"), &out.passages)?;
    corpus::write_jsonl(&dir.join("queries.jsonl"), &out.query_records)?;

    // Audit-able pair dump: one epoch of training pairs under the run seed.
    let queries = pipeline::query_map_from_records(&out.query_records, &out.vocab);
    let pairs = pipeline::epoch_pairs(&config, &out.passages, &queries)?;
    corpus::write_jsonl(&dir.join("pairs.jsonl"), &pairs)?;

    let mut manifest = PipelineManifest::new("prep", config.seed, &config);
    manifest.add_input("corpus", corpus_path)?;
    for name in ["vocab.txt", "passages.jsonl", "queries.jsonl", "pairs.jsonl"] {
        manifest.add_output(name, &dir.join(name))?;
    }
    manifest.write(&dir.join("manifest_prep.json"))?;
    println!(
        "prep: {} passages, {} query records, {} pairs",
        out.passages.len(),
        out.query_records.len(),
        pairs.len()
    );
    Ok(())
}

fn cmd_pretrain(config_path: &Path, dir: &Path) -> Result<()> {
    let config = read_config(config_path)?;
    let (vocab, passages, queries) = load_prep(dir)?;
    let (model, logs) = pipeline::pretrain(&config, &passages, &queries, &vocab)?;
    for log in &logs {
        let parts: Vec<String> = log
            .components
            .iter()
            .map(|(k, v)| format!("{k}={v:.4}"))
            .collect();
        println!(
            "step {:>5}  total={:.4}  {}",
            log.step,
            log.total,
            parts.join("  ")
        );
    }
    let ckpt = dir.join("pretrain.ckpt");
    model.save_checkpoint(&ckpt, true)?;
    corpus::write_jsonl(&dir.join("pretrain_log.jsonl"), &logs)?;

    let mut manifest = PipelineManifest::new("pretrain", config.seed, &config);
    for name in ["vocab.txt", "passages.jsonl", "queries.jsonl"] {
        manifest.add_input(name, &dir.join(name))?;
    }
    manifest.add_output("pretrain.ckpt", &ckpt)?;
    manifest.add_output("pretrain_log.jsonl", &dir.join("pretrain_log.jsonl"))?;
    manifest.write(&dir.join("manifest_pretrain.json"))?;
    println!("pretrain: {} steps, checkpoint {}", logs.len(), ckpt.display());
    Ok(())
}

fn cmd_finetune(
    config_path: &Path,
    dir: &Path,
    stage: u8,
    train_queries: &Path,
) -> Result<()> {
    let config = read_config(config_path)?;
    let (vocab, passages, _) = load_prep(dir)?;
    let examples = read_train_queries(train_queries, &vocab)?;

    let (init_ckpt, init_name) = match stage {
        1 => (dir.join("pretrain.ckpt"), "pretrain.ckpt"),
        _ => (dir.join("retriever1.ckpt"), "retriever1.ckpt"),
    };
    if !init_ckpt.exists() {
        return Err(Error::Data(format!(
            "stage {stage} requires {} in {}",
            init_name,
            dir.display()
        )));
    }
    // Stage 2 must be provably initialized from stage 1's recorded output.
    if stage == 2 {
        let m1 = PipelineManifest::read(&dir.join("manifest_finetune1.json")).map_err(|_| {
            Error::Data("stage 2 requires a retriever-1 manifest (run finetune --stage 1)".into())
        })?;
        let recorded = m1.outputs.get("retriever1.ckpt").ok_or_else(|| {
            Error::Data("retriever-1 manifest records no checkpoint".into())
        })?;
        let actual = pipeline::sha256_file(&init_ckpt)?;
        if recorded != &actual {
            return Err(Error::Data(
                "retriever1.ckpt does not match the retriever-1 manifest hash".into(),
            ));
        }
    }

    let model = Model::<f32>::load_checkpoint(&init_ckpt)?;
    let mined = match stage {
        1 => pipeline::mine_stage1(&config, &passages, &examples, config.seed.wrapping_add(10))?,
        _ => pipeline::mine_stage2(
            &config,
            &model,
            &passages,
            &examples,
            config.seed.wrapping_add(12),
        )?,
    };
    let neg_path = dir.join(format!("negatives{stage}.jsonl"));
    write_negatives(&neg_path, &mined)?;

    let seed = config.seed.wrapping_add(10 + stage as u64);
    let logs = pipeline::finetune(&config, &model, &examples, &passages, &mined, seed)?;
    for log in &logs {
        println!("step {:>5}  infonce={:.4}", log.step, log.total);
    }
    let out_ckpt = dir.join(format!("retriever{stage}.ckpt"));
    model.save_checkpoint(&out_ckpt, true)?;

    let mut manifest = PipelineManifest::new(&format!("finetune{stage}"), config.seed, &config);
    manifest.add_input(init_name, &init_ckpt)?;
    manifest.add_input("train_queries", train_queries)?;
    manifest.add_output(
        &format!("negatives{stage}.jsonl"),
        &neg_path,
    )?;
    manifest.add_output(&format!("retriever{stage}.ckpt"), &out_ckpt)?;
    manifest.write(&dir.join(format!("manifest_finetune{stage}.json")))?;
    println!(
        "finetune stage {stage}: {} steps, checkpoint {}",
        logs.len(),
        out_ckpt.display()
    );
    Ok(())
}

fn cmd_encode(config_path: &Path, dir: &Path, checkpoint: &Path, out: &Path) -> Result<()> {
    let config = read_config(config_path)?;
    let (_, passages, _) = load_prep(dir)?;
    let model = Model::<f32>::load_checkpoint(checkpoint)?;
    let matrix = dense::encode_corpus(&model, &passages, 16)?;
    matrix.save(out)?;

    let mut manifest = PipelineManifest::new("encode", config.seed, &config);
    manifest.add_input("checkpoint", checkpoint)?;
    manifest.add_input("passages.jsonl", &dir.join("passages.jsonl"))?;
    manifest.add_output("embeddings", out)?;
    manifest.write(&dir.join("manifest_encode.json"))?;
    println!(
        "encode: {} passages, dim {}, wrote {}",
        matrix.num_rows(),
        matrix.dim,
        out.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    config_path: &Path,
    dir: &Path,
    engine: Engine,
    queries_path: &Path,
    k: usize,
    checkpoint: Option<&Path>,
    embeddings: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let config = read_config(config_path)?;
    let (vocab, passages, _) = load_prep(dir)?;
    let records: Vec<SearchQueryRecord> = corpus::read_jsonl(queries_path)?;

    let mut run = RankedRun::new();
    match engine {
        Engine::Bm25 => {
            let index = InvertedIndex::build(&passages)?;
            for r in &records {
                let tokens = vocab.encode(&r.query);
                let ranked = qctx::sparse::bm25_search(&index, &tokens, k, config.bm25)?;
                run.insert(
                    &r.query_id,
                    ranked
                        .into_iter()
                        .map(|(ord, s)| (index.passage_id(ord).to_string(), s))
                        .collect(),
                )?;
            }
        }
        Engine::Dense => {
            let ckpt = checkpoint.ok_or_else(|| {
                Error::Config("dense search requires --checkpoint".into())
            })?;
            let model = Model::<f32>::load_checkpoint(ckpt)?;
            let matrix = match embeddings {
                Some(p) => EmbeddingMatrix::load(p)?,
                None => dense::encode_corpus(&model, &passages, 16)?,
            };
            for r in &records {
                let tokens = vocab.encode(&r.query);
                let q = dense::embed_sequence(&model, &tokens, tokens.len())?;
                let ranked = dense::dense_search(&matrix, &q, k)?;
                run.insert(
                    &r.query_id,
                    ranked
                        .into_iter()
                        .map(|(ord, s)| (matrix.passage_ids[ord].clone(), s))
                        .collect(),
                )?;
            }
        }
    }
    run.write_trec(out, "qctx")?;
    println!("search: {} queries, run {}", records.len(), out.display());
    Ok(())
}

fn cmd_eval(run_path: &Path, qrels_path: &Path, report_path: Option<&Path>) -> Result<()> {
    let run = RankedRun::read_trec(run_path)?;
    let qrels = QrelSet::read_trec(qrels_path)?;
    let report = pipeline::metric_report(&run, &qrels)?;
    println!("queries   {}", report.queries);
    println!("MRR@10    {:.6}", report.mrr_at_10);
    println!("R@50      {:.6}", report.recall_at_50);
    println!("R@1000    {:.6}", report.recall_at_1000);
    println!("NDCG@10   {:.6}", report.ndcg_at_10);
    let sidecar = report_path
        .map(Path::to_path_buf)
        .unwrap_or_else(|| run_path.with_extension("report.json"));
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(&sidecar, json + "\n")?;
    println!("report    {}", sidecar.display());
    Ok(())
}

fn cmd_ablate(
    config_path: &Path,
    sweep: Sweep,
    candidates: &[usize],
    num_docs: usize,
    num_topics: usize,
    out: Option<&Path>,
) -> Result<()> {
    let config = read_config(config_path)?;
    let docs = synth::generate_documents(&SynthSpec {
        num_docs,
        num_topics,
        seed: config.seed,
        ..SynthSpec::default()
    });
    let sweep = match sweep {
        Sweep::Candidates => AblationSweep::Candidates(candidates.to_vec()),
        Sweep::Context => AblationSweep::ContextModes(vec![
            ContextMode::Passage,
            ContextMode::Query,
            ContextMode::Mixed,
        ]),
    };
    let table = pipeline::ablate(&config, &docs, &sweep)?;
    print!("{table}");
    if let Some(path) = out {
        std::fs::write(path, table.to_string())?;
    }
    Ok(())
}

fn cmd_annotate_stats(annotations: &Path) -> Result<()> {
    let sheet = AnnotationSheet::read_jsonl(annotations)?;
    let pp = eval::correlation_rate(&sheet, PairKind::PassagePassage)?;
    let pq = eval::correlation_rate(&sheet, PairKind::PassageQuery)?;
    println!("passage-passage correlation: {:.1}%", pp * 100.0);
    println!("passage-query correlation:   {:.1}%", pq * 100.0);
    Ok(())
}

fn category(err: &Error) -> &'static str {
    match err {
        Error::Dimension(_) => "dimension",
        Error::Index(_) => "index",
        Error::Contract(_) => "contract",
        Error::Config(_) => "config",
        Error::Data(_) | Error::Json { .. } => "data",
        Error::Checkpoint(_) => "checkpoint",
        Error::Io(_) => "io",
    }
}

fn run(cli: Cli) -> Result<()> {
    if cli.dump_config {
        let toml = toml::to_string_pretty(&ExperimentConfig::default())
            .map_err(|e| Error::Config(e.to_string()))?;
        print!("{toml}");
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no subcommand given (see --help)".into()));
    };
    match command {
        Command::Prep { config, corpus, dir } => cmd_prep(&config, &corpus, &dir),
        Command::Pretrain { config, dir } => cmd_pretrain(&config, &dir),
        Command::Finetune {
            config,
            dir,
            stage,
            train_queries,
        } => cmd_finetune(&config, &dir, stage, &train_queries),
        Command::Encode {
            config,
            dir,
            checkpoint,
            out,
        } => cmd_encode(&config, &dir, &checkpoint, &out),
        Command::Search {
            config,
            dir,
            engine,
            queries,
            k,
            checkpoint,
            embeddings,
            out,
        } => cmd_search(
            &config,
            &dir,
            engine,
            &queries,
            k,
            checkpoint.as_deref(),
            embeddings.as_deref(),
            &out,
        ),
        Command::Eval { run, qrels, report } => cmd_eval(&run, &qrels, report.as_deref()),
        Command::Ablate {
            config,
            sweep,
            candidates,
            num_docs,
            num_topics,
            out,
        } => cmd_ablate(&config, sweep, &candidates, num_docs, num_topics, out.as_deref()),
        Command::AnnotateStats { annotations } => cmd_annotate_stats(&annotations),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error[{}]: {err}", category(&err));
        std::process::exit(1);
    }
}
