//! Corpus encoding into an embedding matrix, exact dot-product top-k
//! retrieval, and stage-2 dense hard-negative mining. Search is exact
//! brute force; the tests pin that contract for any later optimization.

use crate::corpus::Passage;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Read;
use std::path::Path;

pub const EMBEDDING_MAGIC: &[u8; 8] = b"QCTXEMB1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NegativeSource {
    Bm25,
    Dense,
    /// Candidate pool was exhausted; drawn uniformly from the corpus.
    RandomPad,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinedNegative {
    pub passage_id: String,
    /// 1-based rank in the mining run; 0 for random pads.
    pub rank: usize,
    pub score: f64,
    pub source: NegativeSource,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinedNegatives {
    pub negatives: Vec<MinedNegative>,
    /// True when the candidate pool ran short and random padding fired.
    pub padded: bool,
}

/// Shared tail of both mining paths: uniform sample of `n` candidates
/// without replacement, padding from random non-positive corpus passages
/// when the pool is short.
pub(crate) fn finish_mining<R: Rng>(
    candidates: Vec<MinedNegative>,
    positives: &HashSet<String>,
    all_ids: &[String],
    n: usize,
    rng: &mut R,
) -> Result<MinedNegatives> {
    if candidates.len() >= n {
        let mut pool = candidates;
        // Partial Fisher-Yates: first n slots are a uniform sample.
        for i in 0..n {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        pool.truncate(n);
        return Ok(MinedNegatives {
            negatives: pool,
            padded: false,
        });
    }
    let mut negatives = candidates;
    let mut taken: HashSet<String> = negatives.iter().map(|c| c.passage_id.clone()).collect();
    let eligible: Vec<&String> = all_ids
        .iter()
        .filter(|id| !positives.contains(*id) && !taken.contains(*id))
        .collect();
    if negatives.len() + eligible.len() < n {
        return Err(Error::Data(format!(
            "cannot mine {} negatives: only {} non-positive passages exist",
            n,
            negatives.len() + eligible.len()
        )));
    }
    let mut pool = eligible;
    while negatives.len() < n {
        let j = rng.gen_range(0..pool.len());
        let id = pool.swap_remove(j);
        taken.insert(id.clone());
        negatives.push(MinedNegative {
            passage_id: id.clone(),
            rank: 0,
            score: 0.0,
            source: NegativeSource::RandomPad,
        });
    }
    Ok(MinedNegatives {
        negatives,
        padded: true,
    })
}

/// Row-major [num_passages, d] embeddings plus the passage-id row map.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub dim: usize,
    pub passage_ids: Vec<String>,
    /// Row-major, len = passage_ids.len() * dim.
    pub data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(dim: usize, passage_ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if data.len() != dim * passage_ids.len() {
            return Err(Error::Dimension(format!(
                "embedding matrix: {} values for {} rows of dim {}",
                data.len(),
                passage_ids.len(),
                dim
            )));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite embedding value in row {}",
                bad / dim
            )));
        }
        Ok(EmbeddingMatrix {
            dim,
            passage_ids,
            data,
        })
    }

    pub fn num_rows(&self) -> usize {
        self.passage_ids.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ordinal_of(&self, passage_id: &str) -> Option<usize> {
        self.passage_ids.iter().position(|id| id == passage_id)
    }

    /// Binary format: magic, count u32, dim u32, ids (u16 len + utf8),
    /// payload of little-endian f32 row-major.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        use std::io::Write;
        w.write_all(EMBEDDING_MAGIC)?;
        w.write_u32::<LittleEndian>(self.num_rows() as u32)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        for id in &self.passage_ids {
            w.write_u16::<LittleEndian>(id.len() as u16)?;
            w.write_all(id.as_bytes())?;
        }
        for &v in &self.data {
            w.write_f32::<LittleEndian>(v)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != EMBEDDING_MAGIC {
            return Err(Error::Data("not an embedding matrix file".into()));
        }
        let count = r.read_u32::<LittleEndian>()? as usize;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let mut passage_ids = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            passage_ids
                .push(String::from_utf8(buf).map_err(|e| Error::Data(e.to_string()))?);
        }
        let mut data = vec![0f32; count * dim];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        EmbeddingMatrix::new(dim, passage_ids, data)
    }
}

/// Embeds one token sequence (without leading [CLS]) padded to `padded_len`
/// and returns the final-layer [CLS] state as f32.
pub fn embed_sequence<T: Scalar>(
    model: &Model<T>,
    tokens: &[usize],
    padded_len: usize,
) -> Result<Vec<f32>> {
    let mut seq = Vec::with_capacity(padded_len + 1);
    seq.push(model.config.cls_id);
    seq.extend_from_slice(tokens);
    seq.truncate(model.config.max_seq_len);
    while seq.len() < (padded_len + 1).min(model.config.max_seq_len) {
        seq.push(model.config.pad_id);
    }
    let states = model.encode(&seq)?;
    let emb = states.passage_embedding()?;
    Ok(emb.data().iter().map(|v| v.as_f64() as f32).collect())
}

/// Encodes a corpus batch by batch: sequences are padded to the longest
/// in their batch, so the result must be batch-size independent (the
/// key mask makes padding inert).
pub fn encode_corpus<T: Scalar>(
    model: &Model<T>,
    passages: &[Passage],
    batch_size: usize,
) -> Result<EmbeddingMatrix> {
    if batch_size == 0 {
        return Err(Error::Config("encode_corpus: batch_size must be >= 1".into()));
    }
    let d = model.config.hidden_dim;
    let mut data = Vec::with_capacity(passages.len() * d);
    let mut passage_ids = Vec::with_capacity(passages.len());
    for batch in passages.chunks(batch_size) {
        let padded_len = batch.iter().map(|p| p.tokens.len()).max().unwrap_or(0);
        for p in batch {
            let row = embed_sequence(model, &p.tokens, padded_len)?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "non-finite embedding for passage {}",
                    p.id()
                )));
            }
            data.extend(row);
            passage_ids.push(p.id());
        }
    }
    EmbeddingMatrix::new(d, passage_ids, data)
}

/// Exact top-k by dot product; ties break by ascending passage ordinal.
/// k beyond the corpus size returns the whole corpus.
pub fn dense_search(
    matrix: &EmbeddingMatrix,
    query: &[f32],
    k: usize,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::Config("dense_search: k must be >= 1".into()));
    }
    if query.len() != matrix.dim {
        return Err(Error::Dimension(format!(
            "dense_search: query dim {} vs matrix dim {}",
            query.len(),
            matrix.dim
        )));
    }
    let mut scored: Vec<(usize, f64)> = (0..matrix.num_rows())
        .map(|i| {
            let dot: f64 = matrix
                .row(i)
                .iter()
                .zip(query)
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            (i, dot)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k.min(matrix.num_rows()));
    Ok(scored)
}

/// Stage-2 mining: uniform sample of `n` from the top-`depth` dense
/// results minus positives (sampled, not top-ranked — the choice is
/// deliberate and recorded).
pub fn mine_dense_negatives<R: Rng>(
    matrix: &EmbeddingMatrix,
    query: &[f32],
    positives: &HashSet<String>,
    depth: usize,
    n: usize,
    rng: &mut R,
) -> Result<MinedNegatives> {
    if depth < n {
        return Err(Error::Contract(format!(
            "mine_dense_negatives: depth {depth} < n {n}"
        )));
    }
    let ranked = dense_search(matrix, query, depth)?;
    let candidates: Vec<MinedNegative> = ranked
        .iter()
        .enumerate()
        .filter(|(_, (ord, _))| !positives.contains(&matrix.passage_ids[*ord]))
        .map(|(i, &(ord, score))| MinedNegative {
            passage_id: matrix.passage_ids[ord].clone(),
            rank: i + 1,
            score,
            source: NegativeSource::Dense,
        })
        .collect();
    finish_mining(candidates, positives, &matrix.passage_ids, n, rng)
}
