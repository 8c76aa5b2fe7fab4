//! Retrieval metrics (MRR@10, Recall@k, NDCG@10), TREC qrels/run file
//! handling, and annotation-sheet aggregation.
//!
//! Judged queries missing from a run score 0 and are counted; run queries
//! without judgments are skipped with a warning (trec_eval behavior).

use crate::corpus::PairKind;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Graded relevance judgments keyed by (query id, passage id).
#[derive(Debug, Clone, Default)]
pub struct QrelSet {
    rels: HashMap<(String, String), u32>,
    queries: BTreeMap<String, Vec<String>>,
}

impl QrelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: &str, pid: &str, rel: u32) -> Result<()> {
        let key = (qid.to_string(), pid.to_string());
        if self.rels.contains_key(&key) {
            return Err(Error::Data(format!(
                "duplicate qrel for query {qid}, passage {pid}"
            )));
        }
        self.rels.insert(key, rel);
        self.queries
            .entry(qid.to_string())
            .or_default()
            .push(pid.to_string());
        Ok(())
    }

    pub fn relevance(&self, qid: &str, pid: &str) -> u32 {
        *self
            .rels
            .get(&(qid.to_string(), pid.to_string()))
            .unwrap_or(&0)
    }

    /// Judged query ids, sorted.
    pub fn query_ids(&self) -> Vec<&str> {
        self.queries.keys().map(String::as_str).collect()
    }

    pub fn has_query(&self, qid: &str) -> bool {
        self.queries.contains_key(qid)
    }

    /// Positively judged passage ids for a query.
    pub fn relevant_passages(&self, qid: &str) -> Vec<&str> {
        self.queries
            .get(qid)
            .map(|pids| {
                pids.iter()
                    .filter(|pid| self.relevance(qid, pid) > 0)
                    .map(String::as_str)
                    .collect()
            })
            .unwrap_or_default()
    }

    /// All graded relevances for a query (for ideal DCG).
    pub fn grades(&self, qid: &str) -> Vec<u32> {
        self.queries
            .get(qid)
            .map(|pids| pids.iter().map(|pid| self.relevance(qid, pid)).collect())
            .unwrap_or_default()
    }

    /// TREC qrels format: `qid 0 pid rel` per line.
    pub fn read_trec(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut out = QrelSet::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(Error::Data(format!(
                    "qrels line {}: expected 4 fields, got {}",
                    i + 1,
                    fields.len()
                )));
            }
            let rel: u32 = fields[3].parse().map_err(|_| {
                Error::Data(format!("qrels line {}: bad relevance {:?}", i + 1, fields[3]))
            })?;
            out.insert(fields[0], fields[2], rel)?;
        }
        Ok(out)
    }

    pub fn write_trec(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (qid, pids) in &self.queries {
            for pid in pids {
                writeln!(f, "{} 0 {} {}", qid, pid, self.relevance(qid, pid))?;
            }
        }
        Ok(())
    }
}

/// Per-query ranked results, descending score; the tie rule (ascending
/// passage ordinal at insert time) is the producer's responsibility and
/// validated here as non-increasing scores.
#[derive(Debug, Clone, Default)]
pub struct RankedRun {
    runs: BTreeMap<String, Vec<(String, f64)>>,
}

impl RankedRun {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, qid: &str, ranking: Vec<(String, f64)>) -> Result<()> {
        let mut seen = HashSet::new();
        for (pid, _) in &ranking {
            if !seen.insert(pid.clone()) {
                return Err(Error::Data(format!(
                    "run for query {qid}: duplicate passage {pid}"
                )));
            }
        }
        if ranking.windows(2).any(|w| w[0].1 < w[1].1) {
            return Err(Error::Data(format!(
                "run for query {qid}: scores not non-increasing"
            )));
        }
        if self.runs.insert(qid.to_string(), ranking).is_some() {
            return Err(Error::Data(format!("duplicate run for query {qid}")));
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn query_ids(&self) -> Vec<&str> {
        self.runs.keys().map(String::as_str).collect()
    }

    pub fn ranking(&self, qid: &str) -> Option<&[(String, f64)]> {
        self.runs.get(qid).map(Vec::as_slice)
    }

    /// TREC run format: `qid Q0 pid rank score tag`, rank 1-based.
    pub fn write_trec(&self, path: &Path, tag: &str) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (qid, ranking) in &self.runs {
            for (rank, (pid, score)) in ranking.iter().enumerate() {
                writeln!(f, "{} Q0 {} {} {:.6} {}", qid, pid, rank + 1, score, tag)?;
            }
        }
        Ok(())
    }

    pub fn read_trec(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut per_query: BTreeMap<String, Vec<(usize, String, f64)>> = BTreeMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 6 {
                return Err(Error::Data(format!(
                    "run line {}: expected 6 fields, got {}",
                    i + 1,
                    fields.len()
                )));
            }
            let rank: usize = fields[3].parse().map_err(|_| {
                Error::Data(format!("run line {}: bad rank {:?}", i + 1, fields[3]))
            })?;
            let score: f64 = fields[4].parse().map_err(|_| {
                Error::Data(format!("run line {}: bad score {:?}", i + 1, fields[4]))
            })?;
            per_query
                .entry(fields[0].to_string())
                .or_default()
                .push((rank, fields[2].to_string(), score));
        }
        let mut out = RankedRun::new();
        for (qid, mut rows) in per_query {
            rows.sort_by_key(|r| r.0);
            out.insert(&qid, rows.into_iter().map(|(_, p, s)| (p, s)).collect())?;
        }
        Ok(out)
    }
}

fn judged_queries<'a>(run: &RankedRun, qrels: &'a QrelSet) -> Result<Vec<&'a str>> {
    if run.is_empty() {
        return Err(Error::Data("empty run".into()));
    }
    for qid in run.query_ids() {
        if !qrels.has_query(qid) {
            eprintln!("warning: query {qid} in run has no judgments, skipping");
        }
    }
    Ok(qrels.query_ids())
}

/// Mean over judged queries of 1/rank of the first relevant passage in the
/// top-k, else 0.
pub fn mrr_at_k(run: &RankedRun, qrels: &QrelSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("mrr_at_k: k must be >= 1".into()));
    }
    let queries = judged_queries(run, qrels)?;
    let mut total = 0.0;
    for qid in &queries {
        if let Some(ranking) = run.ranking(qid) {
            for (i, (pid, _)) in ranking.iter().take(k).enumerate() {
                if qrels.relevance(qid, pid) > 0 {
                    total += 1.0 / (i + 1) as f64;
                    break;
                }
            }
        }
    }
    Ok(total / queries.len() as f64)
}

/// Mean over judged queries (excluding zero-relevant ones, warned) of
/// |relevant in top-k| / |relevant|.
pub fn recall_at_k(run: &RankedRun, qrels: &QrelSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("recall_at_k: k must be >= 1".into()));
    }
    let queries = judged_queries(run, qrels)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for qid in &queries {
        let relevant: HashSet<&str> = qrels.relevant_passages(qid).into_iter().collect();
        if relevant.is_empty() {
            eprintln!("warning: query {qid} has no relevant passages, excluded from recall");
            continue;
        }
        counted += 1;
        if let Some(ranking) = run.ranking(qid) {
            let hit = ranking
                .iter()
                .take(k)
                .filter(|(pid, _)| relevant.contains(pid.as_str()))
                .count();
            total += hit as f64 / relevant.len() as f64;
        }
    }
    if counted == 0 {
        return Err(Error::Data("recall_at_k: no query has relevant passages".into()));
    }
    Ok(total / counted as f64)
}

fn dcg(gains: impl Iterator<Item = u32>) -> f64 {
    gains
        .enumerate()
        .map(|(i, rel)| (2f64.powi(rel as i32) - 1.0) / ((i + 2) as f64).log2())
        .sum()
}

/// NDCG with gain 2^rel - 1 and discount log2(rank + 1); queries with zero
/// ideal DCG are excluded with a warning.
pub fn ndcg_at_k(run: &RankedRun, qrels: &QrelSet, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Config("ndcg_at_k: k must be >= 1".into()));
    }
    let queries = judged_queries(run, qrels)?;
    let mut total = 0.0;
    let mut counted = 0usize;
    for qid in &queries {
        let mut grades = qrels.grades(qid);
        grades.sort_unstable_by(|a, b| b.cmp(a));
        let idcg = dcg(grades.into_iter().take(k));
        if idcg == 0.0 {
            eprintln!("warning: query {qid} has zero ideal DCG, excluded from NDCG");
            continue;
        }
        counted += 1;
        if let Some(ranking) = run.ranking(qid) {
            let got = dcg(
                ranking
                    .iter()
                    .take(k)
                    .map(|(pid, _)| qrels.relevance(qid, pid)),
            );
            total += got / idcg;
        }
    }
    if counted == 0 {
        return Err(Error::Data("ndcg_at_k: no query has graded judgments".into()));
    }
    Ok(total / counted as f64)
}

/// One annotated pair: exactly three binary high/low-correlation votes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub pair_id: String,
    pub kind: PairKind,
    pub votes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct AnnotationSheet {
    pub records: Vec<AnnotationRecord>,
}

impl AnnotationSheet {
    pub fn from_records(records: Vec<AnnotationRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for r in &records {
            if r.votes.len() != 3 {
                return Err(Error::Data(format!(
                    "pair {}: expected 3 votes, got {}",
                    r.pair_id,
                    r.votes.len()
                )));
            }
            if r.votes.iter().any(|&v| v > 1) {
                return Err(Error::Data(format!("pair {}: votes must be 0 or 1", r.pair_id)));
            }
            if !seen.insert(r.pair_id.clone()) {
                return Err(Error::Data(format!("duplicate pair id {}", r.pair_id)));
            }
        }
        Ok(AnnotationSheet { records })
    }

    /// JSONL: `{pair_id, kind, votes: [0|1; 3]}` per line.
    pub fn read_jsonl(path: &Path) -> Result<Self> {
        Self::from_records(crate::corpus::read_jsonl(path)?)
    }
}

/// Fraction of pairs of the given kind whose majority vote is
/// high-correlation.
pub fn correlation_rate(sheet: &AnnotationSheet, kind: PairKind) -> Result<f64> {
    let of_kind: Vec<&AnnotationRecord> =
        sheet.records.iter().filter(|r| r.kind == kind).collect();
    if of_kind.is_empty() {
        return Err(Error::Data(format!("no pairs of kind {:?}", kind)));
    }
    let high = of_kind
        .iter()
        .filter(|r| r.votes.iter().map(|&v| v as u32).sum::<u32>() >= 2)
        .count();
    Ok(high as f64 / of_kind.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn qrels(entries: &[(&str, &str, u32)]) -> QrelSet {
        let mut q = QrelSet::new();
        for &(qid, pid, rel) in entries {
            q.insert(qid, pid, rel).unwrap();
        }
        q
    }

    fn run(entries: &[(&str, &[&str])]) -> RankedRun {
        let mut r = RankedRun::new();
        for &(qid, pids) in entries {
            let ranking = pids
                .iter()
                .enumerate()
                .map(|(i, p)| (p.to_string(), 100.0 - i as f64))
                .collect();
            r.insert(qid, ranking).unwrap();
        }
        r
    }

    #[test]
    fn mrr_hand_case_ranks_2_1_and_absent() {
        let qr = qrels(&[("q1", "a", 1), ("q2", "b", 1), ("q3", "c", 1)]);
        let rn = run(&[
            ("q1", &["x", "a", "y"]),
            ("q2", &["b", "x"]),
            ("q3", &["x", "y", "z", "u", "v", "w", "m", "n", "o", "p", "c"]),
        ]);
        let mrr = mrr_at_k(&rn, &qr, 10).unwrap();
        assert!((mrr - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mrr_all_rank_one_is_one() {
        let qr = qrels(&[("q1", "a", 1), ("q2", "b", 1)]);
        let rn = run(&[("q1", &["a"]), ("q2", &["b"])]);
        assert_eq!(mrr_at_k(&rn, &qr, 10).unwrap(), 1.0);
    }

    #[test]
    fn judged_query_missing_from_run_counts_as_zero() {
        let qr = qrels(&[("q1", "a", 1), ("q2", "b", 1)]);
        let rn = run(&[("q1", &["a"])]);
        assert!((mrr_at_k(&rn, &qr, 10).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn empty_run_is_an_error_and_k_zero_is_config_error() {
        let qr = qrels(&[("q1", "a", 1)]);
        assert!(mrr_at_k(&RankedRun::new(), &qr, 10).is_err());
        let rn = run(&[("q1", &["a"])]);
        assert!(matches!(recall_at_k(&rn, &qr, 0), Err(Error::Config(_))));
        assert!(matches!(mrr_at_k(&rn, &qr, 0), Err(Error::Config(_))));
        assert!(matches!(ndcg_at_k(&rn, &qr, 0), Err(Error::Config(_))));
    }

    #[test]
    fn recall_all_relevant_in_top_k_is_one() {
        let qr = qrels(&[("q1", "a", 1), ("q1", "b", 1)]);
        let rn = run(&[("q1", &["b", "a"])]);
        assert_eq!(recall_at_k(&rn, &qr, 10).unwrap(), 1.0);
    }

    #[test]
    fn zero_relevant_queries_are_excluded_from_recall() {
        let qr = qrels(&[("q1", "a", 1), ("q2", "b", 0)]);
        let rn = run(&[("q1", &["a"]), ("q2", &["b"])]);
        assert_eq!(recall_at_k(&rn, &qr, 10).unwrap(), 1.0);
    }

    #[test]
    fn ndcg_worked_example() {
        // Binary rels, 2 relevant, retrieved at ranks 1 and 3:
        // DCG = 1 + 1/log2(4) = 1.5; IDCG = 1 + 1/log2(3) = 1.6309.
        let qr = qrels(&[("q1", "a", 1), ("q1", "b", 1)]);
        let rn = run(&[("q1", &["a", "x", "b"])]);
        let ndcg = ndcg_at_k(&rn, &qr, 10).unwrap();
        let idcg = 1.0 + 1.0 / 3f64.log2();
        assert!((ndcg - 1.5 / idcg).abs() < 1e-12);
        assert!((ndcg - 0.9197).abs() < 1e-4);
    }

    #[test]
    fn perfect_ranking_has_ndcg_one() {
        let qr = qrels(&[("q1", "a", 3), ("q1", "b", 1)]);
        let rn = run(&[("q1", &["a", "b"])]);
        assert!((ndcg_at_k(&rn, &qr, 10).unwrap() - 1.0).abs() < 1e-12);
    }

    // Independent definition-level oracles, coded differently from the
    // implementations above.
    fn oracle_metrics(
        rankings: &HashMap<String, Vec<String>>,
        rels: &HashMap<String, HashMap<String, u32>>,
        k: usize,
    ) -> (f64, f64, f64) {
        let mut mrrs = Vec::new();
        let mut recalls = Vec::new();
        let mut ndcgs = Vec::new();
        for (qid, judged) in rels {
            let empty = Vec::new();
            let ranking = rankings.get(qid).unwrap_or(&empty);
            let rel_of = |pid: &str| judged.get(pid).copied().unwrap_or(0);
            let mut rr = 0.0;
            for rank in 1..=k.min(ranking.len()) {
                if rel_of(&ranking[rank - 1]) > 0 {
                    rr = 1.0 / rank as f64;
                    break;
                }
            }
            mrrs.push(rr);
            let total_rel = judged.values().filter(|&&r| r > 0).count();
            if total_rel > 0 {
                let mut hits = 0;
                for rank in 1..=k.min(ranking.len()) {
                    if rel_of(&ranking[rank - 1]) > 0 {
                        hits += 1;
                    }
                }
                recalls.push(hits as f64 / total_rel as f64);
            }
            let mut ideal: Vec<u32> = judged.values().copied().collect();
            ideal.sort_unstable();
            ideal.reverse();
            let idcg: f64 = ideal
                .iter()
                .take(k)
                .enumerate()
                .map(|(i, &r)| ((1u64 << r) - 1) as f64 / ((i as f64) + 2.0).log2())
                .sum();
            if idcg > 0.0 {
                let got: f64 = (1..=k.min(ranking.len()))
                    .map(|rank| {
                        ((1u64 << rel_of(&ranking[rank - 1])) - 1) as f64
                            / ((rank as f64) + 1.0).log2()
                    })
                    .sum();
                ndcgs.push(got / idcg);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        (mean(&mrrs), mean(&recalls), mean(&ndcgs))
    }

    #[test]
    fn metrics_match_independent_oracle_on_100_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for case in 0..100 {
            let num_q = rng.gen_range(1..5);
            let num_p = rng.gen_range(3..12);
            let k = rng.gen_range(1..=num_p);
            let pids: Vec<String> = (0..num_p).map(|i| format!("p{i}")).collect();
            let mut qr = QrelSet::new();
            let mut rels: HashMap<String, HashMap<String, u32>> = HashMap::new();
            let mut rn = RankedRun::new();
            let mut rankings: HashMap<String, Vec<String>> = HashMap::new();
            let mut any_rel = false;
            for q in 0..num_q {
                let qid = format!("q{q}");
                for pid in &pids {
                    if rng.gen_bool(0.5) {
                        let rel = rng.gen_range(0..3);
                        qr.insert(&qid, pid, rel).unwrap();
                        rels.entry(qid.clone()).or_default().insert(pid.clone(), rel);
                        if rel > 0 {
                            any_rel = true;
                        }
                    }
                }
                if !rels.contains_key(&qid) {
                    qr.insert(&qid, "pX", 1).unwrap();
                    rels.entry(qid.clone()).or_default().insert("pX".into(), 1);
                    any_rel = true;
                }
                // Random permutation ranking.
                let mut order = pids.clone();
                for i in (1..order.len()).rev() {
                    let j = rng.gen_range(0..=i);
                    order.swap(i, j);
                }
                let ranking: Vec<(String, f64)> = order
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (p.clone(), (num_p - i) as f64))
                    .collect();
                rn.insert(&qid, ranking).unwrap();
                rankings.insert(qid, order);
            }
            if !any_rel {
                continue;
            }
            let (om, orr, ond) = oracle_metrics(&rankings, &rels, k);
            assert!((mrr_at_k(&rn, &qr, k).unwrap() - om).abs() < 1e-9, "case {case}");
            assert!(
                (recall_at_k(&rn, &qr, k).unwrap() - orr).abs() < 1e-9,
                "case {case}"
            );
            assert!(
                (ndcg_at_k(&rn, &qr, k).unwrap() - ond).abs() < 1e-9,
                "case {case}"
            );
        }
    }

    #[test]
    fn metrics_depend_only_on_ranks_and_stay_in_unit_interval() {
        let qr = qrels(&[("q1", "a", 2), ("q1", "b", 1), ("q1", "z", 0)]);
        let mut r1 = RankedRun::new();
        r1.insert(
            "q1",
            vec![("x".into(), 9.0), ("a".into(), 5.0), ("b".into(), 1.0)],
        )
        .unwrap();
        let mut r2 = RankedRun::new();
        // Same order, exponentially transformed scores.
        r2.insert(
            "q1",
            vec![("x".into(), 9000.0), ("a".into(), 150.0), ("b".into(), 2.7)],
        )
        .unwrap();
        for k in [1, 2, 3, 10] {
            let m1 = mrr_at_k(&r1, &qr, k).unwrap();
            assert_eq!(m1, mrr_at_k(&r2, &qr, k).unwrap());
            assert!((0.0..=1.0).contains(&m1));
            let n1 = ndcg_at_k(&r1, &qr, k).unwrap();
            assert_eq!(n1, ndcg_at_k(&r2, &qr, k).unwrap());
            assert!((0.0..=1.0).contains(&n1));
            let rc1 = recall_at_k(&r1, &qr, k).unwrap();
            assert_eq!(rc1, recall_at_k(&r2, &qr, k).unwrap());
            assert!((0.0..=1.0).contains(&rc1));
        }
    }

    #[test]
    fn irrelevant_document_below_k_changes_nothing() {
        let qr = qrels(&[("q1", "a", 1)]);
        let short = run(&[("q1", &["a", "x"])]);
        let long = run(&[("q1", &["a", "x", "y"])]);
        let k = 2;
        assert_eq!(mrr_at_k(&short, &qr, k).unwrap(), mrr_at_k(&long, &qr, k).unwrap());
        assert_eq!(
            recall_at_k(&short, &qr, k).unwrap(),
            recall_at_k(&long, &qr, k).unwrap()
        );
        assert_eq!(
            ndcg_at_k(&short, &qr, k).unwrap(),
            ndcg_at_k(&long, &qr, k).unwrap()
        );
    }

    #[test]
    fn run_validation_rejects_duplicates_and_unsorted_scores() {
        let mut r = RankedRun::new();
        assert!(r
            .insert("q1", vec![("a".into(), 1.0), ("a".into(), 0.5)])
            .is_err());
        assert!(r
            .insert("q1", vec![("a".into(), 1.0), ("b".into(), 2.0)])
            .is_err());
    }

    #[test]
    fn qrels_reject_duplicate_keys() {
        let mut q = QrelSet::new();
        q.insert("q1", "a", 1).unwrap();
        assert!(q.insert("q1", "a", 0).is_err());
    }

    #[test]
    fn trec_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let qr = qrels(&[("q1", "a", 2), ("q1", "b", 0), ("q2", "c", 1)]);
        let qpath = dir.path().join("qrels.txt");
        qr.write_trec(&qpath).unwrap();
        let qr2 = QrelSet::read_trec(&qpath).unwrap();
        assert_eq!(qr2.relevance("q1", "a"), 2);
        assert_eq!(qr2.relevance("q1", "b"), 0);
        assert_eq!(qr2.relevance("q2", "c"), 1);

        let rn = run(&[("q1", &["a", "b"]), ("q2", &["c"])]);
        let rpath = dir.path().join("run.txt");
        rn.write_trec(&rpath, "toy").unwrap();
        let rn2 = RankedRun::read_trec(&rpath).unwrap();
        assert_eq!(rn2.ranking("q1").unwrap().len(), 2);
        assert_eq!(rn2.ranking("q1").unwrap()[0].0, "a");
        let text = std::fs::read_to_string(&rpath).unwrap();
        assert!(text.lines().next().unwrap().starts_with("q1 Q0 a 1 "));
    }

    fn record(pair_id: &str, kind: PairKind, votes: Vec<u8>) -> AnnotationRecord {
        AnnotationRecord {
            pair_id: pair_id.into(),
            kind,
            votes,
        }
    }

    #[test]
    fn correlation_rates_match_fixture_proportions() {
        let manifest = std::path::Path::new(env!("CARGO_MANIFEST_DIR"));
        let sheet =
            AnnotationSheet::read_jsonl(&manifest.join("fixtures/annotations.jsonl")).unwrap();
        let pp = correlation_rate(&sheet, PairKind::PassagePassage).unwrap();
        let pq = correlation_rate(&sheet, PairKind::PassageQuery).unwrap();
        assert!((pp - 0.355).abs() < 1e-12, "passage-passage rate {pp}");
        assert!((pq - 0.565).abs() < 1e-12, "passage-query rate {pq}");
    }

    #[test]
    fn unanimous_sheet_rate_equals_raw_fraction() {
        let sheet = AnnotationSheet::from_records(vec![
            record("a", PairKind::PassageQuery, vec![1, 1, 1]),
            record("b", PairKind::PassageQuery, vec![0, 0, 0]),
            record("c", PairKind::PassageQuery, vec![1, 1, 1]),
        ])
        .unwrap();
        assert!((correlation_rate(&sheet, PairKind::PassageQuery).unwrap() - 2.0 / 3.0).abs()
            < 1e-12);
    }

    #[test]
    fn wrong_vote_count_is_a_data_error() {
        assert!(AnnotationSheet::from_records(vec![record(
            "a",
            PairKind::PassageQuery,
            vec![1, 1]
        )])
        .is_err());
        assert!(AnnotationSheet::from_records(vec![record(
            "a",
            PairKind::PassageQuery,
            vec![1, 1, 2]
        )])
        .is_err());
    }
}
