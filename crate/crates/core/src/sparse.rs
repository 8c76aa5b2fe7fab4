//! Tokenized inverted index with Okapi BM25 scoring (Lucene-style
//! nonnegative idf) — the stage-1 hard-negative source and the classical
//! baseline. Index is immutable after build.

use crate::corpus::{Passage, TokenId};
use crate::error::{Error, Result};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::Path;

pub const INDEX_MAGIC: &[u8; 8] = b"QCTXBM25";
pub const INDEX_VERSION: u32 = 1;

/// MS-MARCO-style defaults; the source work never states BM25 parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 0.9, b: 0.4 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    /// term -> postings of (doc ordinal, term frequency), sorted by ordinal.
    postings: BTreeMap<TokenId, Vec<(u32, u32)>>,
    doc_lengths: Vec<u32>,
    passage_ids: Vec<String>,
}

impl InvertedIndex {
    pub fn build(passages: &[Passage]) -> Result<Self> {
        if passages.is_empty() {
            return Err(Error::Data("build_index: empty corpus".into()));
        }
        let mut postings: BTreeMap<TokenId, Vec<(u32, u32)>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(passages.len());
        let mut passage_ids = Vec::with_capacity(passages.len());
        for (ord, p) in passages.iter().enumerate() {
            let mut tf: BTreeMap<TokenId, u32> = BTreeMap::new();
            for &t in &p.tokens {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (t, f) in tf {
                postings.entry(t).or_default().push((ord as u32, f));
            }
            doc_lengths.push(p.tokens.len() as u32);
            passage_ids.push(p.id());
        }
        Ok(InvertedIndex {
            postings,
            doc_lengths,
            passage_ids,
        })
    }

    pub fn num_docs(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.doc_lengths.iter().map(|&l| l as f64).sum::<f64>() / self.num_docs() as f64
    }

    pub fn doc_length(&self, ordinal: usize) -> u32 {
        self.doc_lengths[ordinal]
    }

    pub fn passage_id(&self, ordinal: usize) -> &str {
        &self.passage_ids[ordinal]
    }

    pub fn passage_ids(&self) -> &[String] {
        &self.passage_ids
    }

    pub fn postings(&self, term: TokenId) -> Option<&[(u32, u32)]> {
        self.postings.get(&term).map(Vec::as_slice)
    }

    fn idf(&self, term: TokenId) -> f64 {
        let df = self.postings.get(&term).map_or(0, Vec::len) as f64;
        let n = self.num_docs() as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    // --- persistence ------------------------------------------------------

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(INDEX_MAGIC)?;
        w.write_u32::<LittleEndian>(INDEX_VERSION)?;
        w.write_u32::<LittleEndian>(self.num_docs() as u32)?;
        for (id, &len) in self.passage_ids.iter().zip(&self.doc_lengths) {
            let bytes = id.as_bytes();
            w.write_u16::<LittleEndian>(bytes.len() as u16)?;
            w.write_all(bytes)?;
            w.write_u32::<LittleEndian>(len)?;
        }
        w.write_u32::<LittleEndian>(self.postings.len() as u32)?;
        for (&term, list) in &self.postings {
            w.write_u64::<LittleEndian>(term as u64)?;
            w.write_u32::<LittleEndian>(list.len() as u32)?;
            for &(ord, tf) in list {
                w.write_u32::<LittleEndian>(ord)?;
                w.write_u32::<LittleEndian>(tf)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != INDEX_MAGIC {
            return Err(Error::Data("not a BM25 index file".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != INDEX_VERSION {
            return Err(Error::Data(format!("unsupported index version {version}")));
        }
        let n = r.read_u32::<LittleEndian>()? as usize;
        let mut passage_ids = Vec::with_capacity(n);
        let mut doc_lengths = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            passage_ids.push(
                String::from_utf8(buf).map_err(|e| Error::Data(e.to_string()))?,
            );
            doc_lengths.push(r.read_u32::<LittleEndian>()?);
        }
        let terms = r.read_u32::<LittleEndian>()? as usize;
        let mut postings = BTreeMap::new();
        for _ in 0..terms {
            let term = r.read_u64::<LittleEndian>()? as TokenId;
            let plen = r.read_u32::<LittleEndian>()? as usize;
            let mut list = Vec::with_capacity(plen);
            for _ in 0..plen {
                let ord = r.read_u32::<LittleEndian>()?;
                let tf = r.read_u32::<LittleEndian>()?;
                list.push((ord, tf));
            }
            postings.insert(term, list);
        }
        Ok(InvertedIndex {
            postings,
            doc_lengths,
            passage_ids,
        })
    }

    /// Human-auditable postings dump: one `term df: ord:tf ...` line each.
    pub fn dump_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# docs={} avgdl={:.4}",
            self.num_docs(),
            self.avg_doc_len()
        )?;
        for (&term, list) in &self.postings {
            write!(w, "{} df={}:", term, list.len())?;
            for &(ord, tf) in list {
                write!(w, " {}:{}", ord, tf)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Okapi BM25 over unique query terms. Returns up to `k` documents with
/// nonzero score, descending; ties break by ascending doc ordinal.
pub fn bm25_search(
    index: &InvertedIndex,
    query: &[TokenId],
    k: usize,
    params: Bm25Params,
) -> Result<Vec<(usize, f64)>> {
    if k == 0 {
        return Err(Error::Config("bm25_search: k must be >= 1".into()));
    }
    let avgdl = index.avg_doc_len();
    let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
    let unique: BTreeSet<TokenId> = query.iter().copied().collect();
    for term in unique {
        let Some(list) = index.postings(term) else {
            continue; // absent terms contribute 0 to every doc
        };
        let idf = index.idf(term);
        for &(ord, tf) in list {
            let tf = tf as f64;
            let dl = index.doc_length(ord as usize) as f64;
            let norm = tf + params.k1 * (1.0 - params.b + params.b * dl / avgdl);
            *scores.entry(ord).or_insert(0.0) += idf * tf * (params.k1 + 1.0) / norm;
        }
    }
    let mut ranked: Vec<(usize, f64)> = scores
        .into_iter()
        .map(|(ord, s)| (ord as usize, s))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    Ok(ranked)
}

/// Top-`depth` BM25 results minus positives, sampled down to `n` without
/// replacement. Short candidate pools are padded from random non-positive
/// corpus passages and flagged.
pub fn mine_bm25_negatives<R: Rng>(
    index: &InvertedIndex,
    query: &[TokenId],
    positives: &HashSet<String>,
    depth: usize,
    n: usize,
    params: Bm25Params,
    rng: &mut R,
) -> Result<crate::dense::MinedNegatives> {
    if depth < n {
        return Err(Error::Contract(format!(
            "mine_bm25_negatives: depth {depth} < n {n}"
        )));
    }
    let ranked = bm25_search(index, query, depth, params)?;
    let candidates: Vec<crate::dense::MinedNegative> = ranked
        .iter()
        .enumerate()
        .filter(|(_, (ord, _))| !positives.contains(index.passage_id(*ord)))
        .map(|(i, &(ord, score))| crate::dense::MinedNegative {
            passage_id: index.passage_id(ord).to_string(),
            rank: i + 1,
            score,
            source: crate::dense::NegativeSource::Bm25,
        })
        .collect();
    crate::dense::finish_mining(candidates, positives, index.passage_ids(), n, rng)
}
