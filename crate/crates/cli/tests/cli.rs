//! End-to-end CLI tests over a miniature corpus: the full
//! prep -> pretrain -> finetune x2 -> encode -> search -> eval chain,
//! plus error paths and reproducibility of manifests and checkpoints.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qctx(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qctx"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

const CONFIG: &str = r#"
objective = "cocondenser"
context_mode = "query"
candidates = 2
max_passage_tokens = 30
min_token_freq = 1
seed = 7

[model]
hidden_dim = 16
num_heads = 2
encoder_layers = 2
tap_layer = 1
decoder_layers = 1
max_seq_len = 48

[pretrain]
steps = 2
batch_size = 4

[finetune]
steps = 1
batch_size = 2

[negatives]
depth = 6
count = 2
"#;

/// Eight single-passage docs over two vocabularies.
fn write_corpus(path: &Path) {
    let mut lines = Vec::new();
    for i in 0..8 {
        let words: Vec<String> = (0..8)
            .map(|j| format!("w{:02}x{:02}", (i % 2) * 10 + (i + j) % 6, j))
            .collect();
        lines.push(format!(
            r#"{{"doc_id": "d{i}", "text": "Topic {}."}}"#,
            words.join(" ")
        ));
    }
    std::fs::write(path, lines.join("\n") + "\n").unwrap();
}

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    corpus: PathBuf,
    dir: PathBuf,
}

fn workspace() -> Workspace {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    let config = root.join("config.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let corpus = root.join("corpus.jsonl");
    write_corpus(&corpus);
    let dir = root.join("artifacts");
    Workspace {
        _tmp: tmp,
        root,
        config,
        corpus,
        dir,
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn dump_config_prints_toml_defaults() {
    let out = qctx(&["--dump-config"]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("objective = \"cocondenser\""));
    assert!(text.contains("seed = 42"));
    assert!(text.contains("[model]"));
}

#[test]
fn prep_is_deterministic_and_respects_candidate_count() {
    let ws = workspace();
    assert_ok(&qctx(&[
        "prep",
        "--config",
        s(&ws.config),
        "--corpus",
        s(&ws.corpus),
        "--dir",
        s(&ws.dir),
    ]));
    let queries = std::fs::read_to_string(ws.dir.join("queries.jsonl")).unwrap();
    for line in queries.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["queries"].as_array().unwrap().len(), 2);
    }
    // Rerun into a second directory: identical artifacts and manifest.
    let dir2 = ws.root.join("artifacts2");
    assert_ok(&qctx(&[
        "prep",
        "--config",
        s(&ws.config),
        "--corpus",
        s(&ws.corpus),
        "--dir",
        s(&dir2),
    ]));
    for name in ["vocab.txt", "passages.jsonl", "queries.jsonl", "pairs.jsonl"] {
        assert_eq!(
            std::fs::read(ws.dir.join(name)).unwrap(),
            std::fs::read(dir2.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
    let m1: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.dir.join("manifest_prep.json")).unwrap())
            .unwrap();
    let m2: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir2.join("manifest_prep.json")).unwrap())
            .unwrap();
    assert_eq!(m1["outputs"], m2["outputs"]);
}

#[test]
fn prep_rejects_empty_and_malformed_corpora() {
    let ws = workspace();
    let empty = ws.root.join("empty.jsonl");
    std::fs::write(&empty, "").unwrap();
    let out = qctx(&[
        "prep",
        "--config",
        s(&ws.config),
        "--corpus",
        s(&empty),
        "--dir",
        s(&ws.dir),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("error[data]"), "{}", stderr(&out));
    assert!(stderr(&out).contains("no documents"));

    let bad = ws.root.join("bad.jsonl");
    std::fs::write(&bad, "{\"doc_id\": \"a\", \"text\": \"Ok here.\"}\n{broken\n").unwrap();
    let out = qctx(&[
        "prep",
        "--config",
        s(&ws.config),
        "--corpus",
        s(&bad),
        "--dir",
        s(&ws.dir),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_fail_with_config_error() {
    let ws = workspace();
    let bad = ws.root.join("bad.toml");
    std::fs::write(&bad, "bogus_key = 1\n").unwrap();
    let out = qctx(&[
        "prep",
        "--config",
        s(&bad),
        "--corpus",
        s(&ws.corpus),
        "--dir",
        s(&ws.dir),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("error[config]"), "{}", stderr(&out));
}

/// The full pipeline in order, checking stage dependencies and artifacts.
#[test]
fn full_pipeline_runs_end_to_end() {
    let ws = workspace();
    assert_ok(&qctx(&[
        "prep",
        "--config",
        s(&ws.config),
        "--corpus",
        s(&ws.corpus),
        "--dir",
        s(&ws.dir),
    ]));

    // Training queries: one per document, positive is its only passage.
    let passages = std::fs::read_to_string(ws.dir.join("passages.jsonl")).unwrap();
    let mut train_lines = Vec::new();
    for (i, line) in passages.lines().enumerate() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let doc = v["doc_id"].as_str().unwrap();
        let idx = v["passage_index"].as_u64().unwrap();
        train_lines.push(format!(
            r#"{{"query_id": "q{i}", "query": "w{:02}x00 w{:02}x01", "positive_passage_id": "{doc}#{idx}"}}"#,
            (i % 2) * 10 + i % 6,
            (i % 2) * 10 + (i + 1) % 6,
        ));
    }
    let train = ws.root.join("train.jsonl");
    std::fs::write(&train, train_lines.join("\n") + "\n").unwrap();

    // Stage 2 before stage 1 is a dependency error.
    std::fs::write(ws.dir.join("retriever1.ckpt"), b"bogus").unwrap();
    let out = qctx(&[
        "finetune",
        "--config",
        s(&ws.config),
        "--dir",
        s(&ws.dir),
        "--stage",
        "2",
        "--train-queries",
        s(&train),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("retriever-1"), "{}", stderr(&out));
    std::fs::remove_file(ws.dir.join("retriever1.ckpt")).unwrap();

    // Stage 1 without a pre-trained checkpoint is also an error.
    let out = qctx(&[
        "finetune",
        "--config",
        s(&ws.config),
        "--dir",
        s(&ws.dir),
        "--stage",
        "1",
        "--train-queries",
        s(&train),
    ]);
    assert!(!out.status.success());
    assert!(stderr(&out).contains("pretrain.ckpt"), "{}", stderr(&out));

    assert_ok(&qctx(&["pretrain", "--config", s(&ws.config), "--dir", s(&ws.dir)]));
    assert!(ws.dir.join("pretrain.ckpt").exists());
    assert!(ws.dir.join("pretrain_log.jsonl").exists());

    for stage in ["1", "2"] {
        assert_ok(&qctx(&[
            "finetune",
            "--config",
            s(&ws.config),
            "--dir",
            s(&ws.dir),
            "--stage",
            stage,
            "--train-queries",
            s(&train),
        ]));
        assert!(ws.dir.join(format!("retriever{stage}.ckpt")).exists());
        assert!(ws.dir.join(format!("negatives{stage}.jsonl")).exists());
    }
    // Stage-2 manifest links the exact retriever-1 checkpoint hash.
    let m1: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.dir.join("manifest_finetune1.json")).unwrap(),
    )
    .unwrap();
    let m2: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(ws.dir.join("manifest_finetune2.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(m1["outputs"]["retriever1.ckpt"], m2["inputs"]["retriever1.ckpt"]);

    // Encode the collection with retriever 2.
    let emb = ws.dir.join("embeddings.bin");
    assert_ok(&qctx(&[
        "encode",
        "--config",
        s(&ws.config),
        "--dir",
        s(&ws.dir),
        "--checkpoint",
        s(&ws.dir.join("retriever2.ckpt")),
        "--out",
        s(&emb),
    ]));

    // Search with both engines, then evaluate the dense run.
    let queries = ws.root.join("search_queries.jsonl");
    std::fs::write(
        &queries,
        "{\"query_id\": \"sq0\", \"query\": \"w00x00 w01x01\"}\n",
    )
    .unwrap();
    let bm25_run = ws.root.join("bm25.trec");
    assert_ok(&qctx(&[
        "search",
        "--config",
        s(&ws.config),
        "--dir",
        s(&ws.dir),
        "--engine",
        "bm25",
        "--queries",
        s(&queries),
        "--k",
        "5",
        "--out",
        s(&bm25_run),
    ]));
    let dense_run = ws.root.join("dense.trec");
    assert_ok(&qctx(&[
        "search",
        "--config",
        s(&ws.config),
        "--dir",
        s(&ws.dir),
        "--engine",
        "dense",
        "--queries",
        s(&queries),
        "--k",
        "5",
        "--checkpoint",
        s(&ws.dir.join("retriever2.ckpt")),
        "--embeddings",
        s(&emb),
        "--out",
        s(&dense_run),
    ]));
    for run in [&bm25_run, &dense_run] {
        let text = std::fs::read_to_string(run).unwrap();
        assert!(text.lines().count() >= 1, "{run:?} is empty");
        assert!(text.lines().all(|l| l.split_whitespace().count() == 6));
    }

    // Eval: identical run evaluated twice gives identical reports.
    let qrels = ws.root.join("qrels.trec");
    std::fs::write(&qrels, "sq0 0 d0#0 1\n").unwrap();
    let report = ws.root.join("report.json");
    for _ in 0..2 {
        let out = qctx(&[
            "eval",
            "--run",
            s(&dense_run),
            "--qrels",
            s(&qrels),
            "--report",
            s(&report),
        ]);
        assert_ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("MRR@10"));
    }
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(parsed["queries"], 1);
    assert!(parsed["mrr_at_10"].is_number());
}

#[test]
fn pretrain_reruns_are_byte_identical() {
    let ws = workspace();
    assert_ok(&qctx(&[
        "prep",
        "--config",
        s(&ws.config),
        "--corpus",
        s(&ws.corpus),
        "--dir",
        s(&ws.dir),
    ]));
    assert_ok(&qctx(&["pretrain", "--config", s(&ws.config), "--dir", s(&ws.dir)]));
    let first = std::fs::read(ws.dir.join("pretrain.ckpt")).unwrap();
    let first_manifest = std::fs::read(ws.dir.join("manifest_pretrain.json")).unwrap();
    assert_ok(&qctx(&["pretrain", "--config", s(&ws.config), "--dir", s(&ws.dir)]));
    assert_eq!(first, std::fs::read(ws.dir.join("pretrain.ckpt")).unwrap());
    assert_eq!(
        first_manifest,
        std::fs::read(ws.dir.join("manifest_pretrain.json")).unwrap()
    );
}

#[test]
fn ablate_emits_one_row_per_sweep_point() {
    let ws = workspace();
    let table = ws.root.join("table.txt");
    let out = qctx(&[
        "ablate",
        "--config",
        s(&ws.config),
        "--sweep",
        "candidates",
        "--candidates",
        "1",
        "--num-docs",
        "6",
        "--num-topics",
        "3",
        "--out",
        s(&table),
    ]);
    assert_ok(&out);
    let text = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("C="))
        .collect();
    assert_eq!(rows.len(), 1);
    assert!(text.contains("MRR@10"));
}

#[test]
fn annotate_stats_reports_fixture_rates() {
    let fixture = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/fixtures/annotations.jsonl");
    let out = qctx(&["annotate-stats", "--annotations", s(&fixture)]);
    assert_ok(&out);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("35.5%"), "{text}");
    assert!(text.contains("56.5%"), "{text}");
}
