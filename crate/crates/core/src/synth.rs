//! Synthetic topic corpus for directional experiments: each document has
//! a topic-coherent passage followed by an off-topic sibling passage, so
//! passage-passage contexts are misleading while query contexts (sampled
//! from the passage itself) stay on topic.

use crate::corpus::{Document, Passage, QueryRecord, Vocab};
use crate::error::Result;
use crate::eval::QrelSet;
use crate::querygen;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_topics: usize,
    pub num_docs: usize,
    pub words_per_topic: usize,
    pub sentences_per_passage: usize,
    pub words_per_sentence: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_topics: 8,
            num_docs: 60,
            words_per_topic: 20,
            sentences_per_passage: 3,
            words_per_sentence: 9,
            seed: 42,
        }
    }
}

fn topic_word(topic: usize, word: usize) -> String {
    format!("t{topic:02}w{word:02}")
}

fn sentence<R: Rng>(spec: &SynthSpec, topic: usize, rng: &mut R) -> String {
    let words: Vec<String> = (0..spec.words_per_sentence)
        .map(|_| topic_word(topic, rng.gen_range(0..spec.words_per_topic)))
        .collect();
    // Capitalized first word so the sentence splitter sees a boundary.
    let mut s = words.join(" ");
    s.replace_range(0..1, "T");
    s + "."
}

fn passage_text<R: Rng>(spec: &SynthSpec, topic: usize, rng: &mut R) -> String {
    (0..spec.sentences_per_passage)
        .map(|_| sentence(spec, topic, rng))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Generates documents of two passages each: a coherent passage on the
/// document's topic and a sibling passage drawn from a different topic.
pub fn generate_documents(spec: &SynthSpec) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.num_docs)
        .map(|i| {
            let topic = i % spec.num_topics;
            let mut off_topic = rng.gen_range(0..spec.num_topics - 1);
            if off_topic >= topic {
                off_topic += 1;
            }
            let text = format!(
                "{} {}",
                passage_text(spec, topic, &mut rng),
                passage_text(spec, off_topic, &mut rng)
            );
            Document {
                doc_id: format!("doc{i:03}"),
                text,
            }
        })
        .collect()
}

/// Maximum passage length that keeps the two topical halves of a
/// synthetic document in separate passages.
pub fn passage_budget(spec: &SynthSpec) -> usize {
    // words + one '.' token per sentence
    spec.sentences_per_passage * (spec.words_per_sentence + 1)
}

/// One fine-tuning / evaluation query with its annotated positive.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QueryExample {
    pub query_id: String,
    pub tokens: Vec<usize>,
    pub positive_passage_id: String,
}

/// Samples one lexical query per passage; relevance 1 to the source
/// passage. `tag` distinguishes train from held-out sets; seeds differ.
pub fn labeled_query_set(
    passages: &[Passage],
    vocab: &Vocab,
    tag: &str,
    seed: u64,
) -> Result<(Vec<QueryExample>, QrelSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idf = querygen::compute_idf(passages);
    let mut examples = Vec::new();
    let mut qrels = QrelSet::new();
    for (i, p) in passages.iter().enumerate() {
        let queries = querygen::lexical_query_sampler(p, vocab, &idf, 1, &mut rng)?;
        let qid = format!("{tag}{i:04}");
        qrels.insert(&qid, &p.id(), 1)?;
        examples.push(QueryExample {
            query_id: qid,
            tokens: queries.into_iter().next().unwrap(),
            positive_passage_id: p.id(),
        });
    }
    Ok((examples, qrels))
}

/// Candidate-query records for pre-training, via the lexical sampler.
pub fn candidate_queries(
    passages: &[Passage],
    vocab: &Vocab,
    c: usize,
    seed: u64,
) -> Result<Vec<QueryRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    querygen::lexical_query_records(passages, vocab, c, &mut rng)
}
