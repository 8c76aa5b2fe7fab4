//! Query providers: nucleus/top-k sampling, a deterministic lexical
//! sampler used as the test-time provider, and a toy seq2seq generator
//! driving the context-conditioned decoder autoregressively.
//!
//! Providers are stateless given (model, seed) and emit the query file
//! format defined in `corpus`.

use crate::corpus::{Passage, QueryRecord, TokenId, Vocab, MASK_ID};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingSpec {
    pub top_p: f64,
    pub top_k: usize,
    pub max_query_len: usize,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            top_p: 0.95,
            top_k: 25,
            max_query_len: 32,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!(
                "top_p {} outside (0, 1]",
                self.top_p
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("top_k must be >= 1".into()));
        }
        if self.max_query_len == 0 {
            return Err(Error::Config("max_query_len must be >= 1".into()));
        }
        Ok(())
    }
}

/// The truncated, renormalized distribution nucleus sampling draws from:
/// top_k filtering first, then the smallest descending-probability prefix
/// with cumulative mass >= top_p (boundary token included). Ties break by
/// ascending token id.
pub fn nucleus_distribution(dist: &[f64], spec: &SamplingSpec) -> Result<Vec<(usize, f64)>> {
    spec.validate()?;
    if dist.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(Error::Contract(
            "nucleus_sample: probabilities must be finite and nonnegative".into(),
        ));
    }
    let sum: f64 = dist.iter().sum();
    if sum == 0.0 {
        return Err(Error::Contract(
            "nucleus_sample: all-zero distribution".into(),
        ));
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::Contract(format!(
            "nucleus_sample: distribution sums to {sum}, expected 1"
        )));
    }
    let mut order: Vec<usize> = (0..dist.len()).collect();
    order.sort_by(|&a, &b| dist[b].partial_cmp(&dist[a]).unwrap().then(a.cmp(&b)));
    order.truncate(spec.top_k);
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += dist[i];
        if mass >= spec.top_p - 1e-12 {
            break;
        }
    }
    Ok(kept.into_iter().map(|i| (i, dist[i] / mass)).collect())
}

/// Samples a token id from the nucleus-truncated distribution.
pub fn nucleus_sample<R: Rng>(dist: &[f64], spec: &SamplingSpec, rng: &mut R) -> Result<usize> {
    let support = nucleus_distribution(dist, spec)?;
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(i, p) in &support {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    Ok(support.last().unwrap().0)
}

const STOPWORDS: [&str; 32] = [
    "the", "a", "an", "and", "or", "of", "to", "in", "on", "at", "is", "are", "was", "were",
    "be", "been", "it", "its", "that", "this", "these", "those", "with", "for", "as", "by",
    "from", "but", "not", "he", "she", "they",
];

/// Smoothed inverse document frequency over a passage collection.
pub fn compute_idf(passages: &[Passage]) -> HashMap<TokenId, f64> {
    let n = passages.len() as f64;
    let mut df: HashMap<TokenId, usize> = HashMap::new();
    for p in passages {
        let distinct: HashSet<TokenId> = p.tokens.iter().copied().collect();
        for t in distinct {
            *df.entry(t).or_insert(0) += 1;
        }
    }
    df.into_iter()
        .map(|(t, d)| (t, ((n + 1.0) / (d as f64 + 1.0)).ln() + 1.0))
        .collect()
}

/// Samples `c` distinct queries of 3-8 content tokens, weighted by
/// in-passage tf x corpus idf. A passage with no content tokens falls back
/// to uniform sampling over all its tokens. Query tokens are always a
/// subset of the passage's tokens.
pub fn lexical_query_sampler<R: Rng>(
    passage: &Passage,
    vocab: &Vocab,
    idf: &HashMap<TokenId, f64>,
    c: usize,
    rng: &mut R,
) -> Result<Vec<Vec<TokenId>>> {
    if passage.tokens.is_empty() {
        return Err(Error::Contract(format!(
            "lexical_query_sampler: empty passage {}#{}",
            passage.doc_id, passage.passage_index
        )));
    }
    if c == 0 {
        return Err(Error::Config("candidate count C must be >= 1".into()));
    }
    let mut tf: HashMap<TokenId, usize> = HashMap::new();
    for &t in &passage.tokens {
        *tf.entry(t).or_insert(0) += 1;
    }
    let is_content = |t: TokenId| {
        t > MASK_ID && {
            let s = vocab.token(t);
            !STOPWORDS.contains(&s) && s.chars().any(|ch| ch.is_alphanumeric())
        }
    };
    let mut candidates: Vec<(TokenId, f64)> = tf
        .iter()
        .filter(|(&t, _)| is_content(t))
        .map(|(&t, &f)| (t, f as f64 * idf.get(&t).copied().unwrap_or(1.0)))
        .collect();
    if candidates.is_empty() {
        // Stopword-only passage: uniform over its tokens.
        candidates = tf.keys().map(|&t| (t, 1.0)).collect();
    }
    candidates.sort_by_key(|&(t, _)| t); // deterministic iteration order
    let total: f64 = candidates.iter().map(|&(_, w)| w).sum();

    let draw_token = |rng: &mut R| {
        let u: f64 = rng.gen_range(0.0..total);
        let mut acc = 0.0;
        for &(t, w) in &candidates {
            acc += w;
            if u < acc {
                return t;
            }
        }
        candidates.last().unwrap().0
    };

    let mut out: Vec<Vec<TokenId>> = Vec::new();
    let mut seen: HashSet<Vec<TokenId>> = HashSet::new();
    let mut attempts = 0usize;
    let mut extra_len = 0usize;
    while out.len() < c {
        let len = (rng.gen_range(3..=8) + extra_len).min(32);
        let q: Vec<TokenId> = (0..len).map(|_| draw_token(rng)).collect();
        if seen.insert(q.clone()) {
            out.push(q);
        }
        attempts += 1;
        // Tiny passages can exhaust short queries; lengthen to force
        // distinctness rather than loop forever.
        if attempts > 50 * (out.len() + 1) {
            extra_len += 1;
            if extra_len > 24 {
                return Err(Error::Contract(format!(
                    "cannot produce {} distinct queries for passage {}#{}",
                    c, passage.doc_id, passage.passage_index
                )));
            }
        }
    }
    Ok(out)
}

/// Runs the lexical sampler over a whole collection, emitting the query
/// file records (decoded to strings) that `corpus::read_query_file` reads
/// back.
pub fn lexical_query_records<R: Rng>(
    passages: &[Passage],
    vocab: &Vocab,
    c: usize,
    rng: &mut R,
) -> Result<Vec<QueryRecord>> {
    let idf = compute_idf(passages);
    passages
        .iter()
        .map(|p| {
            let queries = lexical_query_sampler(p, vocab, &idf, c, rng)?
                .into_iter()
                .map(|q| vocab.decode(&q))
                .collect();
            Ok(QueryRecord {
                doc_id: p.doc_id.clone(),
                passage_index: p.passage_index,
                queries,
            })
        })
        .collect()
}

/// Autoregressive toy generation: the passage embedding conditions the
/// context decoder; each step nucleus-samples the next token until [SEP]
/// or max_query_len. Special tokens other than [SEP] are never emitted.
pub fn toy_seq2seq_generate<T: Scalar, R: Rng>(
    model: &Model<T>,
    passage: &Passage,
    spec: &SamplingSpec,
    rng: &mut R,
) -> Result<Vec<TokenId>> {
    spec.validate()?;
    let mut tokens = vec![model.config.cls_id];
    tokens.extend(&passage.tokens);
    tokens.truncate(model.config.max_seq_len);
    let states = model.encode(&tokens)?;
    let h_x = states.passage_embedding()?;
    let mut query: Vec<TokenId> = Vec::new();
    while query.len() < spec.max_query_len {
        let logits = model.cotmae_decoder_forward(&h_x, &query)?;
        let vocab = model.config.vocab_size;
        let data = logits.data();
        let row = &data[query.len() * vocab..(query.len() + 1) * vocab];
        let max = row.iter().cloned().fold(T::neg_infinity(), T::max);
        let mut probs: Vec<f64> = row.iter().map(|&x| (x - max).as_f64().exp()).collect();
        for special in [model.config.pad_id, model.config.cls_id, model.config.mask_id] {
            probs[special] = 0.0;
        }
        let sum: f64 = probs.iter().sum();
        for p in &mut probs {
            *p /= sum;
        }
        let next = nucleus_sample(&probs, spec, rng)?;
        if next == model.config.sep_id {
            break;
        }
        query.push(next);
    }
    Ok(query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadKind, ModelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(top_p: f64, top_k: usize) -> SamplingSpec {
        SamplingSpec {
            top_p,
            top_k,
            max_query_len: 32,
        }
    }

    #[test]
    fn nucleus_support_matches_enumeration_oracle() {
        let dist = [0.5, 0.3, 0.15, 0.05];
        let support = nucleus_distribution(&dist, &spec(0.7, 25)).unwrap();
        let ids: Vec<usize> = support.iter().map(|&(i, _)| i).collect();
        assert_eq!(ids, vec![0, 1]);
        assert!((support[0].1 - 0.625).abs() < 1e-12);
        assert!((support[1].1 - 0.375).abs() < 1e-12);
    }

    #[test]
    fn nucleus_frequencies_match_truncated_distribution_over_100k_draws() {
        let dist = [0.5, 0.3, 0.15, 0.05];
        let s = spec(0.7, 25);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[nucleus_sample(&dist, &s, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        assert_eq!(counts[3], 0);
        for (i, p) in [(0, 0.625), (1, 0.375)] {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!(
                (counts[i] as f64 - n as f64 * p).abs() < 3.0 * sigma,
                "token {i}: {} draws",
                counts[i]
            );
        }
    }

    #[test]
    fn no_truncation_is_plain_categorical_sampling() {
        let dist = [0.1, 0.2, 0.3, 0.4];
        let s = spec(1.0, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[nucleus_sample(&dist, &s, &mut rng).unwrap()] += 1;
        }
        for (i, &p) in dist.iter().enumerate() {
            let sigma = (n as f64 * p * (1.0 - p)).sqrt();
            assert!((counts[i] as f64 - n as f64 * p).abs() < 3.0 * sigma);
        }
    }

    #[test]
    fn top_k_one_is_argmax() {
        let dist = [0.2, 0.5, 0.3];
        let s = spec(0.95, 1);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(nucleus_sample(&dist, &s, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn top_k_truncation_applies_before_top_p() {
        let dist = [0.4, 0.3, 0.2, 0.1];
        let support = nucleus_distribution(&dist, &spec(1.0, 2)).unwrap();
        let ids: Vec<usize> = support.iter().map(|&(i, _)| i).collect();
        assert_eq!(ids, vec![0, 1]);
        assert!((support[0].1 - 0.4 / 0.7).abs() < 1e-12);
    }

    #[test]
    fn degenerate_distributions_are_rejected() {
        let s = spec(0.9, 25);
        assert!(matches!(
            nucleus_distribution(&[0.0, 0.0], &s),
            Err(Error::Contract(_))
        ));
        assert!(nucleus_distribution(&[0.9, -0.1, 0.2], &s).is_err());
        assert!(nucleus_distribution(&[0.3, 0.3], &s).is_err());
    }

    fn sample_passage(tokens: Vec<TokenId>) -> Passage {
        Passage {
            doc_id: "d".into(),
            passage_index: 0,
            tokens,
        }
    }

    fn sample_vocab() -> Vocab {
        Vocab::build(
            ["the cat sat on the mat with a quantum flux widget"].into_iter(),
            1,
        )
    }

    #[test]
    fn repeated_content_word_appears_in_every_query() {
        let vocab = sample_vocab();
        let cat = vocab.id("cat");
        let passage = sample_passage(vec![cat; 20]);
        let idf = compute_idf(std::slice::from_ref(&passage));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let queries = lexical_query_sampler(&passage, &vocab, &idf, 5, &mut rng).unwrap();
        assert_eq!(queries.len(), 5);
        for q in &queries {
            assert!(q.contains(&cat));
        }
    }

    #[test]
    fn queries_are_distinct_and_within_length_bounds() {
        let vocab = sample_vocab();
        let passage = sample_passage(vocab.encode("quantum flux widget cat mat sat"));
        let idf = compute_idf(std::slice::from_ref(&passage));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let queries = lexical_query_sampler(&passage, &vocab, &idf, 5, &mut rng).unwrap();
        let distinct: HashSet<&Vec<TokenId>> = queries.iter().collect();
        assert_eq!(distinct.len(), 5);
        for q in &queries {
            assert!(q.len() >= 3 && q.len() <= 32);
            assert!(q.len() < 144);
            for t in q {
                assert!(passage.tokens.contains(t), "query token outside passage");
            }
        }
    }

    #[test]
    fn stopword_only_passage_falls_back_to_uniform() {
        let vocab = sample_vocab();
        let passage = sample_passage(vocab.encode("the on the a the on"));
        let idf = compute_idf(std::slice::from_ref(&passage));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let queries = lexical_query_sampler(&passage, &vocab, &idf, 3, &mut rng).unwrap();
        assert_eq!(queries.len(), 3);
        for q in &queries {
            for t in q {
                assert!(passage.tokens.contains(t));
            }
        }
    }

    #[test]
    fn lexical_sampler_is_deterministic_under_seed() {
        let vocab = sample_vocab();
        let passage = sample_passage(vocab.encode("quantum flux widget cat mat"));
        let idf = compute_idf(std::slice::from_ref(&passage));
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            lexical_query_sampler(&passage, &vocab, &idf, 4, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    fn toy_model() -> Model<f32> {
        let config = ModelConfig {
            vocab_size: 24,
            hidden_dim: 8,
            num_heads: 2,
            encoder_layers: 2,
            tap_layer: 1,
            decoder_layers: 1,
            max_seq_len: 16,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        Model::new(config, HeadKind::ContextDecoder, &mut rng).unwrap()
    }

    #[test]
    fn greedy_generation_is_deterministic() {
        let model = toy_model();
        let passage = sample_passage(vec![10, 11, 12]);
        let s = SamplingSpec {
            top_p: 0.95,
            top_k: 1,
            max_query_len: 6,
        };
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(2);
        let a = toy_seq2seq_generate(&model, &passage, &s, &mut r1).unwrap();
        let b = toy_seq2seq_generate(&model, &passage, &s, &mut r2).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generation_halts_at_max_query_len() {
        let model = toy_model();
        let passage = sample_passage(vec![10, 11, 12]);
        let s = SamplingSpec {
            top_p: 1.0,
            top_k: 24,
            max_query_len: 4,
        };
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = toy_seq2seq_generate(&model, &passage, &s, &mut rng).unwrap();
            assert!(q.len() <= 4);
            assert!(!q.contains(&model.config.pad_id));
            assert!(!q.contains(&model.config.cls_id));
        }
    }

    #[test]
    fn different_seeds_diversify_outputs_across_passages() {
        let model = toy_model();
        let s = SamplingSpec {
            top_p: 0.95,
            top_k: 25,
            max_query_len: 6,
        };
        let passages: Vec<Passage> = (0..100)
            .map(|i| Passage {
                doc_id: format!("d{i}"),
                passage_index: 0,
                tokens: vec![5 + i % 19, 6 + i % 17, 7 + i % 13],
            })
            .collect();
        let gen_all = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            passages
                .iter()
                .map(|p| toy_seq2seq_generate(&model, p, &s, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_ne!(gen_all(1), gen_all(2));
    }

    #[test]
    fn encoder_only_model_cannot_generate() {
        let config = ModelConfig {
            vocab_size: 24,
            hidden_dim: 8,
            num_heads: 2,
            encoder_layers: 2,
            tap_layer: 1,
            decoder_layers: 1,
            max_seq_len: 16,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let model = Model::<f32>::new(config, HeadKind::EncoderOnly, &mut rng).unwrap();
        let passage = sample_passage(vec![10]);
        let mut r = ChaCha8Rng::seed_from_u64(0);
        assert!(toy_seq2seq_generate(&model, &passage, &SamplingSpec::default(), &mut r).is_err());
    }

    #[test]
    fn query_records_round_trip_through_the_query_file_format() {
        let vocab = sample_vocab();
        let passages = vec![
            sample_passage(vocab.encode("quantum flux widget cat")),
            Passage {
                doc_id: "e".into(),
                passage_index: 0,
                tokens: vocab.encode("mat sat cat widget flux"),
            },
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let records = lexical_query_records(&passages, &vocab, 3, &mut rng).unwrap();
        assert_eq!(records.len(), 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("queries.jsonl");
        crate::corpus::write_jsonl(&path, &records).unwrap();
        let map = crate::corpus::read_query_file(&path, &vocab).unwrap();
        assert_eq!(map[&("d".to_string(), 0)].len(), 3);
        // Decoded-and-re-encoded queries match the sampled token ids.
        let original = {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let idf = compute_idf(&passages);
            lexical_query_sampler(&passages[0], &vocab, &idf, 3, &mut rng).unwrap()
        };
        assert_eq!(map[&("d".to_string(), 0)], original);
    }
}
