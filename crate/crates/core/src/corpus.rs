//! Corpus handling: word-level tokenization, document-to-passage chunking,
//! and training-pair construction in the three context regimes
//! (passage-passage, passage-query, mixed).

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub type TokenId = usize;

pub const PAD_ID: TokenId = 0;
pub const UNK_ID: TokenId = 1;
pub const CLS_ID: TokenId = 2;
pub const SEP_ID: TokenId = 3;
pub const MASK_ID: TokenId = 4;

pub const SPECIAL_TOKENS: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// Maximum passage length in tokens (exclusive of [CLS]).
pub const MAX_PASSAGE_TOKENS: usize = 144;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub passage_index: usize,
    pub tokens: Vec<TokenId>,
}

impl Passage {
    pub fn key(&self) -> (String, usize) {
        (self.doc_id.clone(), self.passage_index)
    }

    /// Canonical passage id used by indexes, runs, and qrels.
    pub fn id(&self) -> String {
        format!("{}#{}", self.doc_id, self.passage_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairKind {
    PassagePassage,
    PassageQuery,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainingPair {
    pub kind: PairKind,
    pub doc_id: String,
    pub x_passage_index: usize,
    /// Partner passage index for passage-passage pairs.
    pub y_passage_index: Option<usize>,
    /// Candidate index for passage-query pairs.
    pub query_index: Option<usize>,
    pub x_tokens: Vec<TokenId>,
    pub y_tokens: Vec<TokenId>,
}

/// Per-passage candidate queries, keyed by (doc_id, passage_index).
pub type QueryMap = HashMap<(String, usize), Vec<Vec<TokenId>>>;

// --- tokenizer --------------------------------------------------------------

/// Lowercased word-level tokens with punctuation split off.
pub fn word_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch == '\'' {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                out.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        out.push(current);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Vocab {
    id_of: HashMap<String, TokenId>,
    token_of: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from raw texts. Tokens below `min_freq` map to
    /// [UNK]. Ordering is deterministic: specials first, then by
    /// descending frequency with lexicographic tie-break.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I, min_freq: usize) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for text in texts {
            for tok in word_tokens(text) {
                *counts.entry(tok).or_insert(0) += 1;
            }
        }
        let mut entries: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(_, c)| *c >= min_freq)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut token_of: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
        token_of.extend(entries.into_iter().map(|(t, _)| t));
        let id_of = token_of
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab { id_of, token_of }
    }

    pub fn len(&self) -> usize {
        self.token_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_of.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        *self.id_of.get(token).unwrap_or(&UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        self.token_of.get(id).map(String::as_str).unwrap_or("[UNK]")
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        word_tokens(text).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| self.token(id))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        for tok in &self.token_of {
            writeln!(f, "{}", tok)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let token_of: Vec<String> = std::fs::read_to_string(path)?
            .lines()
            .map(|l| l.to_string())
            .collect();
        if token_of.len() < SPECIAL_TOKENS.len() {
            return Err(Error::Data("vocab file too short".into()));
        }
        let id_of = token_of
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Vocab { id_of, token_of })
    }
}

// --- sentence segmentation and chunking -------------------------------------

const ABBREVIATIONS: [&str; 10] = [
    "mr", "mrs", "ms", "dr", "prof", "st", "vs", "etc", "e.g", "i.e",
];

/// Rule-based sentence split: `.` `!` `?` followed by whitespace and an
/// uppercase letter ends a sentence, unless the period closes a known
/// abbreviation.
pub fn split_sentences(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let ch = chars[i];
        if ch == '.' || ch == '!' || ch == '?' {
            let mut j = i + 1;
            let mut saw_ws = false;
            while j < chars.len() && chars[j].is_whitespace() {
                saw_ws = true;
                j += 1;
            }
            let next_upper = j < chars.len() && chars[j].is_uppercase();
            let abbrev = ch == '.' && {
                let word: String = chars[..i]
                    .iter()
                    .rev()
                    .take_while(|c| c.is_alphabetic() || **c == '.')
                    .collect::<Vec<_>>()
                    .into_iter()
                    .rev()
                    .collect();
                ABBREVIATIONS.contains(&word.to_lowercase().trim_end_matches('.'))
            };
            if saw_ws && next_upper && !abbrev {
                let sentence: String = chars[start..=i].iter().collect();
                let trimmed = sentence.trim();
                if !trimmed.is_empty() {
                    sentences.push(trimmed.to_string());
                }
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    let tail: String = chars[start..].iter().collect();
    let trimmed = tail.trim();
    if !trimmed.is_empty() {
        sentences.push(trimmed.to_string());
    }
    sentences
}

/// Splits a document into passages: sentence segmentation followed by
/// greedy packing up to `max_tokens`. A single over-long sentence is
/// hard-truncated. An empty document yields an empty list.
pub fn split_document(doc: &Document, vocab: &Vocab, max_tokens: usize) -> Vec<Passage> {
    let mut passages: Vec<Vec<TokenId>> = Vec::new();
    let mut current: Vec<TokenId> = Vec::new();
    for sentence in split_sentences(&doc.text) {
        let mut toks = vocab.encode(&sentence);
        if toks.is_empty() {
            continue;
        }
        if toks.len() > max_tokens {
            toks.truncate(max_tokens);
        }
        if current.is_empty() || current.len() + toks.len() <= max_tokens {
            current.extend(toks);
        } else {
            passages.push(std::mem::take(&mut current));
            current = toks;
        }
    }
    if !current.is_empty() {
        passages.push(current);
    }
    passages
        .into_iter()
        .enumerate()
        .map(|(i, tokens)| Passage {
            doc_id: doc.doc_id.clone(),
            passage_index: i,
            tokens,
        })
        .collect()
}

// --- pair construction -------------------------------------------------------

/// Groups passages by document, preserving first-appearance order.
fn group_by_doc(passages: &[Passage]) -> Vec<(&str, Vec<&Passage>)> {
    let mut order: Vec<&str> = Vec::new();
    let mut groups: HashMap<&str, Vec<&Passage>> = HashMap::new();
    for p in passages {
        groups
            .entry(p.doc_id.as_str())
            .or_insert_with(|| {
                order.push(p.doc_id.as_str());
                Vec::new()
            })
            .push(p);
    }
    order
        .into_iter()
        .map(|id| (id, groups.remove(id).unwrap()))
        .collect()
}

fn passage_pair_for_doc<R: Rng>(doc: &[&Passage], rng: &mut R) -> (usize, usize) {
    if doc.len() == 1 {
        return (0, 0); // single-passage docs self-pair
    }
    let i = rng.gen_range(0..doc.len());
    let mut j = rng.gen_range(0..doc.len() - 1);
    if j >= i {
        j += 1;
    }
    (i, j)
}

/// One passage-passage pair per document per epoch, uniformly among
/// ordered distinct-index pairs. Single-passage documents self-pair.
pub fn make_passage_pairs<R: Rng>(passages: &[Passage], rng: &mut R) -> Vec<TrainingPair> {
    group_by_doc(passages)
        .into_iter()
        .map(|(doc_id, doc)| {
            let (i, j) = passage_pair_for_doc(&doc, rng);
            TrainingPair {
                kind: PairKind::PassagePassage,
                doc_id: doc_id.to_string(),
                x_passage_index: doc[i].passage_index,
                y_passage_index: Some(doc[j].passage_index),
                query_index: None,
                x_tokens: doc[i].tokens.clone(),
                y_tokens: doc[j].tokens.clone(),
            }
        })
        .collect()
}

/// One passage-query pair per passage per epoch; the context is a fresh
/// uniform draw from the passage's candidate set.
pub fn make_query_pairs<R: Rng>(
    passages: &[Passage],
    queries: &QueryMap,
    rng: &mut R,
) -> Result<Vec<TrainingPair>> {
    passages
        .iter()
        .map(|p| {
            let key = p.key();
            let candidates = queries.ok_or_missing(&key)?;
            let qi = rng.gen_range(0..candidates.len());
            Ok(TrainingPair {
                kind: PairKind::PassageQuery,
                doc_id: p.doc_id.clone(),
                x_passage_index: p.passage_index,
                y_passage_index: None,
                query_index: Some(qi),
                x_tokens: p.tokens.clone(),
                y_tokens: candidates[qi].clone(),
            })
        })
        .collect()
}

trait QueryMapExt {
    fn ok_or_missing(&self, key: &(String, usize)) -> Result<&Vec<Vec<TokenId>>>;
}

impl QueryMapExt for QueryMap {
    fn ok_or_missing(&self, key: &(String, usize)) -> Result<&Vec<Vec<TokenId>>> {
        let candidates = self.get(key).ok_or_else(|| {
            Error::Data(format!(
                "no candidate queries for passage {}#{}",
                key.0, key.1
            ))
        })?;
        if candidates.is_empty() {
            return Err(Error::Data(format!(
                "empty candidate set for passage {}#{}",
                key.0, key.1
            )));
        }
        Ok(candidates)
    }
}

/// Per passage, a coin flip picks the context kind: a sampled candidate
/// query with probability `query_prob`, otherwise another passage from
/// the same document (self if alone).
pub fn make_mixed_pairs<R: Rng>(
    passages: &[Passage],
    queries: &QueryMap,
    query_prob: f64,
    rng: &mut R,
) -> Result<Vec<TrainingPair>> {
    let groups = group_by_doc(passages);
    let mut by_doc: HashMap<&str, &Vec<&Passage>> = HashMap::new();
    for (id, g) in &groups {
        by_doc.insert(id, g);
    }
    passages
        .iter()
        .map(|p| {
            if rng.gen_bool(query_prob) {
                let key = p.key();
                let candidates = queries.ok_or_missing(&key)?;
                let qi = rng.gen_range(0..candidates.len());
                Ok(TrainingPair {
                    kind: PairKind::PassageQuery,
                    doc_id: p.doc_id.clone(),
                    x_passage_index: p.passage_index,
                    y_passage_index: None,
                    query_index: Some(qi),
                    x_tokens: p.tokens.clone(),
                    y_tokens: candidates[qi].clone(),
                })
            } else {
                let doc = by_doc[p.doc_id.as_str()];
                let partner = if doc.len() == 1 {
                    doc[0]
                } else {
                    let mut j = rng.gen_range(0..doc.len() - 1);
                    let own = doc
                        .iter()
                        .position(|q| q.passage_index == p.passage_index)
                        .unwrap();
                    if j >= own {
                        j += 1;
                    }
                    doc[j]
                };
                Ok(TrainingPair {
                    kind: PairKind::PassagePassage,
                    doc_id: p.doc_id.clone(),
                    x_passage_index: p.passage_index,
                    y_passage_index: Some(partner.passage_index),
                    query_index: None,
                    x_tokens: p.tokens.clone(),
                    y_tokens: partner.tokens.clone(),
                })
            }
        })
        .collect()
}

// --- file formats ------------------------------------------------------------

/// Reads a JSONL corpus of `{doc_id, text}` objects.
pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    read_jsonl(path)
}

/// Reads a JSONL file, reporting the 1-based line number on parse errors.
pub fn read_jsonl<D: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<D>> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| Error::Json {
            line: i + 1,
            source,
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<S: Serialize>(path: &Path, items: &[S]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut f, item).map_err(|e| Error::Data(e.to_string()))?;
        f.write_all(b"\n")?;
    }
    Ok(())
}

/// On-disk record of the query file: external generators (or our
/// providers) deliver candidate query strings per passage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryRecord {
    pub doc_id: String,
    pub passage_index: usize,
    pub queries: Vec<String>,
}

/// Loads a query file, encoding queries with `vocab`.
pub fn read_query_file(path: &Path, vocab: &Vocab) -> Result<QueryMap> {
    let records: Vec<QueryRecord> = read_jsonl(path)?;
    let mut map = QueryMap::new();
    for r in records {
        let encoded = r.queries.iter().map(|q| vocab.encode(q)).collect();
        map.insert((r.doc_id, r.passage_index), encoded);
    }
    Ok(map)
}
