//! End-to-end orchestration: corpus prep, pre-training under the three
//! objectives and three context modes, two-stage fine-tuning with mined
//! hard negatives, corpus encoding, retrieval evaluation, and ablation
//! sweeps. Every stage is deterministic under (config, seed) and records
//! a manifest of input/output hashes.

use crate::corpus::{
    self, Document, Passage, QueryMap, TrainingPair, Vocab,
};
use crate::dense::{self, MinedNegatives};
use crate::error::{Error, Result};
use crate::eval::{self, QrelSet, RankedRun};
use crate::model::{HeadKind, Model, ModelConfig};
use crate::objectives::{
    self, apply_masking, MaskedBatch, MaskingSpec, PairExample,
};
use crate::querygen::SamplingSpec;
use crate::sparse::{self, Bm25Params, InvertedIndex};
use crate::synth::QueryExample;
use crate::tensor::{AdamW, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Mlm,
    Cocondenser,
    Cotmae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ContextMode {
    Passage,
    Query,
    Mixed,
}

impl std::fmt::Display for Objective {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Objective::Mlm => "mlm",
            Objective::Cocondenser => "cocondenser",
            Objective::Cotmae => "cotmae",
        };
        f.write_str(s)
    }
}

impl std::fmt::Display for ContextMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ContextMode::Passage => "passage",
            ContextMode::Query => "query",
            ContextMode::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Objective {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlm" => Ok(Objective::Mlm),
            "cocondenser" => Ok(Objective::Cocondenser),
            "cotmae" => Ok(Objective::Cotmae),
            other => Err(Error::Config(format!("unknown objective {other:?}"))),
        }
    }
}

impl std::str::FromStr for ContextMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "passage" => Ok(ContextMode::Passage),
            "query" => Ok(ContextMode::Query),
            "mixed" => Ok(ContextMode::Mixed),
            other => Err(Error::Config(format!("unknown context mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainParams {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub warmup_ratio: f64,
    pub weight_decay: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        // Desk-scale defaults; the linear schedule and 0.1 warmup ratio
        // follow the source setup, the sizes do not.
        TrainParams {
            steps: 2000,
            batch_size: 64,
            learning_rate: 1e-3,
            warmup_ratio: 0.1,
            weight_decay: 0.01,
        }
    }
}

fn default_finetune_params() -> TrainParams {
    TrainParams {
        steps: 500,
        batch_size: 16,
        learning_rate: 1e-4,
        ..TrainParams::default()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NegativeParams {
    pub depth: usize,
    pub count: usize,
}

impl Default for NegativeParams {
    fn default() -> Self {
        NegativeParams {
            depth: 200,
            count: 15,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub objective: Objective,
    pub context_mode: ContextMode,
    /// Candidate queries generated per passage (C).
    pub candidates: usize,
    /// P(passage-query) per pair in mixed mode.
    pub mixed_query_prob: f64,
    pub encoder_mask_rate: Option<f64>,
    pub decoder_mask_rate: f64,
    pub temperature: f64,
    pub max_passage_tokens: usize,
    pub min_token_freq: usize,
    pub pretrain: TrainParams,
    pub finetune: TrainParams,
    pub negatives: NegativeParams,
    pub bm25: Bm25Params,
    pub sampling: SamplingSpec,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            objective: Objective::Cocondenser,
            context_mode: ContextMode::Query,
            candidates: 5,
            mixed_query_prob: 0.5,
            encoder_mask_rate: None,
            decoder_mask_rate: objectives::COTMAE_DECODER_MASK_RATE,
            temperature: 1.0,
            max_passage_tokens: corpus::MAX_PASSAGE_TOKENS,
            min_token_freq: 2,
            pretrain: TrainParams::default(),
            finetune: default_finetune_params(),
            negatives: NegativeParams::default(),
            bm25: Bm25Params::default(),
            sampling: SamplingSpec::default(),
            seed: 42,
        }
    }
}

impl ExperimentConfig {
    /// Encoder-side mask rate: explicit override, else the objective's
    /// convention (0.30 for CoT-MAE, 0.15 otherwise).
    pub fn encoder_rate(&self) -> f64 {
        self.encoder_mask_rate.unwrap_or(match self.objective {
            Objective::Cotmae => objectives::COTMAE_ENCODER_MASK_RATE,
            _ => objectives::MLM_MASK_RATE,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.sampling.validate()?;
        if self.candidates == 0 {
            return Err(Error::Config("candidates (C) must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mixed_query_prob) {
            return Err(Error::Config(format!(
                "mixed_query_prob {} outside [0, 1]",
                self.mixed_query_prob
            )));
        }
        for (name, rate) in [
            ("encoder_mask_rate", self.encoder_rate()),
            ("decoder_mask_rate", self.decoder_mask_rate),
        ] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} {rate} outside [0, 1]")));
            }
        }
        if self.temperature <= 0.0 {
            return Err(Error::Config("temperature must be > 0".into()));
        }
        if self.max_passage_tokens == 0 || self.max_passage_tokens > corpus::MAX_PASSAGE_TOKENS {
            return Err(Error::Config(format!(
                "max_passage_tokens {} outside 1..={}",
                self.max_passage_tokens,
                corpus::MAX_PASSAGE_TOKENS
            )));
        }
        if self.max_passage_tokens + 1 > self.model.max_seq_len {
            return Err(Error::Config(format!(
                "max_passage_tokens {} + [CLS] exceeds max_seq_len {}",
                self.max_passage_tokens, self.model.max_seq_len
            )));
        }
        if self.negatives.depth < self.negatives.count {
            return Err(Error::Config(format!(
                "negative depth {} < count {}",
                self.negatives.depth, self.negatives.count
            )));
        }
        for (name, tp) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            if tp.batch_size == 0 {
                return Err(Error::Config(format!("{name}.batch_size must be >= 1")));
            }
            if tp.learning_rate <= 0.0 {
                return Err(Error::Config(format!("{name}.learning_rate must be > 0")));
            }
            if !(0.0..1.0).contains(&tp.warmup_ratio) {
                return Err(Error::Config(format!(
                    "{name}.warmup_ratio {} outside [0, 1)",
                    tp.warmup_ratio
                )));
            }
        }
        Ok(())
    }
}

// --- prep --------------------------------------------------------------------

pub struct PrepOutput {
    pub vocab: Vocab,
    pub passages: Vec<Passage>,
    pub query_records: Vec<corpus::QueryRecord>,
}

/// Builds the vocabulary, chunks every document, and generates candidate
/// queries with the lexical provider.
pub fn prep(corpus_docs: &[Document], config: &ExperimentConfig) -> Result<PrepOutput> {
    config.validate()?;
    if corpus_docs.is_empty() {
        return Err(Error::Data("no documents in corpus".into()));
    }
    let texts: Vec<&str> = corpus_docs.iter().map(|d| d.text.as_str()).collect();
    let vocab = Vocab::build(texts.iter().copied(), config.min_token_freq);
    let passages: Vec<Passage> = corpus_docs
        .iter()
        .flat_map(|d| corpus::split_document(d, &vocab, config.max_passage_tokens))
        .collect();
    if passages.is_empty() {
        return Err(Error::Data("corpus produced no passages".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let query_records =
        crate::querygen::lexical_query_records(&passages, &vocab, config.candidates, &mut rng)?;
    Ok(PrepOutput {
        vocab,
        passages,
        query_records,
    })
}

/// The model config actually trained: vocab sized to the built vocabulary.
pub fn resolved_model_config(config: &ExperimentConfig, vocab: &Vocab) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.len(),
        ..config.model.clone()
    }
}

/// Encodes candidate-query records into the (doc, passage) -> queries map
/// consumed by pair construction.
pub fn query_map_from_records(records: &[corpus::QueryRecord], vocab: &Vocab) -> QueryMap {
    let mut map = QueryMap::new();
    for r in records {
        map.insert(
            (r.doc_id.clone(), r.passage_index),
            r.queries.iter().map(|q| vocab.encode(q)).collect(),
        );
    }
    map
}

/// One epoch of training pairs under the run seed; the audit dump prep emits.
pub fn epoch_pairs(
    config: &ExperimentConfig,
    passages: &[Passage],
    queries: &QueryMap,
) -> Result<Vec<TrainingPair>> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    match config.context_mode {
        ContextMode::Passage => Ok(corpus::make_passage_pairs(passages, &mut rng)),
        ContextMode::Query => corpus::make_query_pairs(passages, queries, &mut rng),
        ContextMode::Mixed => {
            corpus::make_mixed_pairs(passages, queries, config.mixed_query_prob, &mut rng)
        }
    }
}

// --- schedules and training loops ---------------------------------------------

/// Linear warmup over `warmup_ratio` of the run, then linear decay to 0.
pub fn lr_at_step(params: &TrainParams, step: usize) -> f64 {
    let total = params.steps.max(1);
    let warmup = ((total as f64 * params.warmup_ratio).ceil() as usize).max(1);
    if step < warmup {
        params.learning_rate * (step + 1) as f64 / warmup as f64
    } else if total == warmup {
        params.learning_rate
    } else {
        params.learning_rate * (total - step) as f64 / (total - warmup) as f64
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct StepLog {
    pub step: usize,
    pub total: f64,
    /// Named component losses (mlm, aux_mlm, contrastive, ctx_mlm ...).
    pub components: BTreeMap<String, f64>,
}

/// Endless deterministic pair stream: regenerates an epoch (fresh pair
/// draws, shuffled) whenever fewer than a batch remains.
struct PairStream<'a> {
    passages: &'a [Passage],
    queries: &'a QueryMap,
    mode: ContextMode,
    mixed_query_prob: f64,
    rng: ChaCha8Rng,
    buf: Vec<TrainingPair>,
    pos: usize,
}

impl<'a> PairStream<'a> {
    fn new(
        passages: &'a [Passage],
        queries: &'a QueryMap,
        mode: ContextMode,
        mixed_query_prob: f64,
        seed: u64,
    ) -> Self {
        PairStream {
            passages,
            queries,
            mode,
            mixed_query_prob,
            rng: ChaCha8Rng::seed_from_u64(seed),
            buf: Vec::new(),
            pos: 0,
        }
    }

    fn refill(&mut self) -> Result<()> {
        let mut pairs = match self.mode {
            ContextMode::Passage => corpus::make_passage_pairs(self.passages, &mut self.rng),
            ContextMode::Query => {
                corpus::make_query_pairs(self.passages, self.queries, &mut self.rng)?
            }
            ContextMode::Mixed => corpus::make_mixed_pairs(
                self.passages,
                self.queries,
                self.mixed_query_prob,
                &mut self.rng,
            )?,
        };
        pairs.shuffle(&mut self.rng);
        self.buf = pairs;
        self.pos = 0;
        Ok(())
    }

    /// Next `n` pairs, all from one epoch (distinct x passages).
    fn next_batch(&mut self, n: usize) -> Result<Vec<TrainingPair>> {
        if self.buf.len() < n {
            self.refill()?;
            if self.buf.len() < n {
                return Err(Error::Contract(format!(
                    "batch size {} exceeds pairs per epoch {}",
                    n,
                    self.buf.len()
                )));
            }
        }
        if self.pos + n > self.buf.len() {
            self.refill()?;
        }
        let batch = self.buf[self.pos..self.pos + n].to_vec();
        self.pos += n;
        Ok(batch)
    }
}

fn with_cls(tokens: &[usize], config: &ModelConfig) -> Vec<usize> {
    let mut seq = Vec::with_capacity(tokens.len() + 1);
    seq.push(config.cls_id);
    seq.extend_from_slice(tokens);
    seq.truncate(config.max_seq_len);
    seq
}

fn mask_side<R: Rng>(
    tokens: &[usize],
    rate: f64,
    model_config: &ModelConfig,
    rng: &mut R,
) -> Result<MaskedBatch> {
    let spec = MaskingSpec {
        mask_rate: rate,
        ..MaskingSpec::new(rate, model_config.vocab_size)
    };
    apply_masking(&with_cls(tokens, model_config), &spec, rng)
}

fn check_finite(step: usize, total: f64, components: &BTreeMap<String, f64>) -> Result<()> {
    if total.is_finite() && components.values().all(|v| v.is_finite()) {
        return Ok(());
    }
    Err(Error::Data(format!(
        "non-finite loss at step {step}: total={total}, components={components:?}"
    )))
}

/// Pre-trains a model under the configured objective and context mode.
/// `pair_id` for in-batch contrastive terms is the x-passage id, unique
/// within an epoch by construction.
pub fn pretrain(
    config: &ExperimentConfig,
    passages: &[Passage],
    queries: &QueryMap,
    vocab: &Vocab,
) -> Result<(Model<f32>, Vec<StepLog>)> {
    config.validate()?;
    let model_config = resolved_model_config(config, vocab);
    let kind = match config.objective {
        Objective::Mlm => HeadKind::EncoderOnly,
        Objective::Cocondenser => HeadKind::Condenser,
        Objective::Cotmae => HeadKind::ContextDecoder,
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = Model::new(model_config.clone(), kind, &mut init_rng)?;
    let params = model.param_tensors();
    let mut optim = AdamW::new(
        &params,
        config.pretrain.learning_rate,
        config.pretrain.weight_decay,
    );
    let mut stream = PairStream::new(
        passages,
        queries,
        config.context_mode,
        config.mixed_query_prob,
        config.seed.wrapping_add(1),
    );
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut logs = Vec::with_capacity(config.pretrain.steps);

    for step in 0..config.pretrain.steps {
        let raw = stream.next_batch(config.pretrain.batch_size)?;
        let batch: Vec<PairExample> = raw
            .iter()
            .map(|pair| {
                let x = mask_side(&pair.x_tokens, config.encoder_rate(), &model_config, &mut mask_rng)?;
                let y_rate = match config.objective {
                    Objective::Cotmae => config.decoder_mask_rate,
                    _ => config.encoder_rate(),
                };
                let y = mask_side(&pair.y_tokens, y_rate, &model_config, &mut mask_rng)?;
                Ok(PairExample {
                    pair_id: format!("{}#{}", pair.doc_id, pair.x_passage_index),
                    x,
                    y,
                })
            })
            .collect::<Result<_>>()?;

        let mut components = BTreeMap::new();
        let total_tensor = match config.objective {
            Objective::Mlm => {
                let mut terms = Vec::new();
                for ex in &batch {
                    if ex.x.mask_pos.is_empty() {
                        continue;
                    }
                    let states = model.encode(&ex.x.tokens)?;
                    let logits = model.mlm_logits(states.last())?;
                    terms.push(objectives::mlm_loss(&logits, &ex.x)?);
                }
                let mut acc = Tensor::scalar(0f32);
                let n = terms.len().max(1);
                for t in &terms {
                    acc = acc.add(t)?;
                }
                let loss = acc.scale(1.0 / n as f32);
                components.insert("mlm".into(), loss.item() as f64);
                loss
            }
            Objective::Cocondenser => {
                let out = objectives::cocondenser_total_loss(&model, &batch, config.temperature)?;
                components.insert("mlm".into(), out.mlm.item() as f64);
                components.insert("aux_mlm".into(), out.aux_mlm.item() as f64);
                components.insert("contrastive".into(), out.contrastive.item() as f64);
                out.total
            }
            Objective::Cotmae => {
                let mut mlm_sum = 0f64;
                let mut ctx_sum = 0f64;
                let mut acc = Tensor::scalar(0f32);
                for ex in &batch {
                    let out = objectives::cotmae_total_loss(&model, ex)?;
                    mlm_sum += out.mlm.item() as f64;
                    ctx_sum += out.ctx_mlm.item() as f64;
                    acc = acc.add(&out.total)?;
                }
                let n = batch.len() as f64;
                components.insert("mlm".into(), mlm_sum / n);
                components.insert("ctx_mlm".into(), ctx_sum / n);
                acc.scale(1.0 / batch.len() as f32)
            }
        };
        let total = total_tensor.item() as f64;
        check_finite(step, total, &components)?;
        model.zero_grad();
        total_tensor.backward()?;
        optim.step_with_lr(&params, lr_at_step(&config.pretrain, step))?;
        logs.push(StepLog {
            step,
            total,
            components,
        });
    }
    Ok((model, logs))
}

// --- fine-tuning ---------------------------------------------------------------

/// Embeds a token sequence with gradients, returning the [CLS] state [1, d].
fn embed_with_grad(model: &Model<f32>, tokens: &[usize]) -> Result<Tensor<f32>> {
    let seq = with_cls(tokens, &model.config);
    model.encode(&seq)?.passage_embedding()
}

/// InfoNCE fine-tuning (stage 1 or 2): for each query, candidates are its
/// positive, the other in-batch positives, and its mined hard negatives.
pub fn finetune(
    config: &ExperimentConfig,
    model: &Model<f32>,
    examples: &[QueryExample],
    passages: &[Passage],
    mined: &HashMap<String, MinedNegatives>,
    seed: u64,
) -> Result<Vec<StepLog>> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Data("finetune: no training queries".into()));
    }
    let by_id: HashMap<String, &Passage> =
        passages.iter().map(|p| (p.id(), p)).collect();
    for ex in examples {
        let negs = mined.get(&ex.query_id).ok_or_else(|| {
            Error::Data(format!("no mined negatives for query {}", ex.query_id))
        })?;
        if negs.negatives.len() != config.negatives.count {
            return Err(Error::Contract(format!(
                "query {}: {} negatives, expected {}",
                ex.query_id,
                negs.negatives.len(),
                config.negatives.count
            )));
        }
    }
    // Only the encoder participates in the embedding forward pass; the
    // pre-training heads stay frozen (and gradient-free) here.
    let params: Vec<Tensor<f32>> = model
        .params()
        .into_iter()
        .filter(|(name, _)| name.starts_with("encoder."))
        .map(|(_, t)| t)
        .collect();
    let mut optim = AdamW::new(
        &params,
        config.finetune.learning_rate,
        config.finetune.weight_decay,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = Vec::new();
    let mut logs = Vec::with_capacity(config.finetune.steps);
    let b = config.finetune.batch_size.min(examples.len());

    for step in 0..config.finetune.steps {
        if order.len() < b {
            order = (0..examples.len()).collect();
            order.shuffle(&mut rng);
        }
        let batch_idx: Vec<usize> = order.drain(..b).collect();
        let batch: Vec<&QueryExample> = batch_idx.iter().map(|&i| &examples[i]).collect();

        let pos_embs: Vec<Tensor<f32>> = batch
            .iter()
            .map(|ex| {
                let p = by_id.get(&ex.positive_passage_id).ok_or_else(|| {
                    Error::Data(format!("unknown positive {}", ex.positive_passage_id))
                })?;
                embed_with_grad(model, &p.tokens)
            })
            .collect::<Result<_>>()?;

        let mut acc = Tensor::scalar(0f32);
        for (i, ex) in batch.iter().enumerate() {
            let q_emb = embed_with_grad(model, &ex.tokens)?;
            let mut neg_rows: Vec<Tensor<f32>> = Vec::new();
            for (j, other) in pos_embs.iter().enumerate() {
                if j != i {
                    neg_rows.push(other.clone()); // in-batch negatives
                }
            }
            for neg in &mined[&ex.query_id].negatives {
                let p = by_id.get(&neg.passage_id).ok_or_else(|| {
                    Error::Data(format!("unknown negative {}", neg.passage_id))
                })?;
                neg_rows.push(embed_with_grad(model, &p.tokens)?);
            }
            let negatives = Tensor::concat_rows(&neg_rows)?;
            let loss = objectives::finetune_infonce(&q_emb, &pos_embs[i], &negatives)?;
            acc = acc.add(&loss)?;
        }
        let loss = acc.scale(1.0 / batch.len() as f32);
        let total = loss.item() as f64;
        let components = BTreeMap::from([("infonce".to_string(), total)]);
        check_finite(step, total, &components)?;
        model.zero_grad();
        loss.backward()?;
        optim.step_with_lr(&params, lr_at_step(&config.finetune, step))?;
        logs.push(StepLog {
            step,
            total,
            components,
        });
    }
    Ok(logs)
}

/// Stage-1 negatives: BM25 over the passage collection.
pub fn mine_stage1(
    config: &ExperimentConfig,
    passages: &[Passage],
    examples: &[QueryExample],
    seed: u64,
) -> Result<HashMap<String, MinedNegatives>> {
    let index = InvertedIndex::build(passages)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HashMap::new();
    for ex in examples {
        let positives: HashSet<String> = [ex.positive_passage_id.clone()].into();
        let mined = sparse::mine_bm25_negatives(
            &index,
            &ex.tokens,
            &positives,
            config.negatives.depth,
            config.negatives.count,
            config.bm25,
            &mut rng,
        )?;
        out.insert(ex.query_id.clone(), mined);
    }
    Ok(out)
}

/// Stage-2 negatives: dense mining with the retriever-1 model.
pub fn mine_stage2(
    config: &ExperimentConfig,
    model: &Model<f32>,
    passages: &[Passage],
    examples: &[QueryExample],
    seed: u64,
) -> Result<HashMap<String, MinedNegatives>> {
    let matrix = dense::encode_corpus(model, passages, 16)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HashMap::new();
    for ex in examples {
        let q = dense::embed_sequence(model, &ex.tokens, ex.tokens.len())?;
        let positives: HashSet<String> = [ex.positive_passage_id.clone()].into();
        let mined = dense::mine_dense_negatives(
            &matrix,
            &q,
            &positives,
            config.negatives.depth.min(matrix.num_rows()),
            config.negatives.count,
            &mut rng,
        )?;
        out.insert(ex.query_id.clone(), mined);
    }
    Ok(out)
}

// --- evaluation ----------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub queries: usize,
    pub mrr_at_10: f64,
    pub recall_at_50: f64,
    pub recall_at_1000: f64,
    pub ndcg_at_10: f64,
}

/// Builds a dense run for the given queries against the full collection.
pub fn search_dense_run(
    model: &Model<f32>,
    passages: &[Passage],
    examples: &[QueryExample],
    k: usize,
) -> Result<RankedRun> {
    let matrix = dense::encode_corpus(model, passages, 16)?;
    let mut run = RankedRun::new();
    for ex in examples {
        let q = dense::embed_sequence(model, &ex.tokens, ex.tokens.len())?;
        let ranked = dense::dense_search(&matrix, &q, k)?;
        run.insert(
            &ex.query_id,
            ranked
                .into_iter()
                .map(|(ord, score)| (matrix.passage_ids[ord].clone(), score))
                .collect(),
        )?;
    }
    Ok(run)
}

/// BM25 run over the same interface, for the CLI search engine switch.
pub fn search_bm25_run(
    passages: &[Passage],
    examples: &[QueryExample],
    k: usize,
    params: Bm25Params,
) -> Result<RankedRun> {
    let index = InvertedIndex::build(passages)?;
    let mut run = RankedRun::new();
    for ex in examples {
        let ranked = sparse::bm25_search(&index, &ex.tokens, k, params)?;
        run.insert(
            &ex.query_id,
            ranked
                .into_iter()
                .map(|(ord, score)| (index.passage_id(ord).to_string(), score))
                .collect(),
        )?;
    }
    Ok(run)
}

pub fn metric_report(run: &RankedRun, qrels: &QrelSet) -> Result<MetricReport> {
    Ok(MetricReport {
        queries: qrels.query_ids().len(),
        mrr_at_10: eval::mrr_at_k(run, qrels, 10)?,
        recall_at_50: eval::recall_at_k(run, qrels, 50)?,
        recall_at_1000: eval::recall_at_k(run, qrels, 1000)?,
        ndcg_at_10: eval::ndcg_at_k(run, qrels, 10)?,
    })
}

/// Encode + search + evaluate a retriever on held-out queries.
pub fn evaluate_retriever(
    model: &Model<f32>,
    passages: &[Passage],
    examples: &[QueryExample],
    qrels: &QrelSet,
) -> Result<MetricReport> {
    let k = passages.len().min(1000).max(10);
    let run = search_dense_run(model, passages, examples, k)?;
    metric_report(&run, qrels)
}

// --- manifests -------------------------------------------------------------------

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Ordered record of one stage's inputs and outputs by content hash.
/// Identical (config, seed, inputs) must reproduce identical manifests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

impl PipelineManifest {
    pub fn new(stage: &str, seed: u64, config: &ExperimentConfig) -> Self {
        let config_json = serde_json::to_string(config).expect("config serializes");
        PipelineManifest {
            stage: stage.to_string(),
            seed,
            config_hash: sha256_hex(config_json.as_bytes()),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn add_input(&mut self, name: &str, path: &Path) -> Result<()> {
        self.inputs.insert(name.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn add_output(&mut self, name: &str, path: &Path) -> Result<()> {
        self.outputs.insert(name.to_string(), sha256_file(path)?);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Data(e.to_string()))?;
        std::fs::write(path, json + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(e.to_string()))
    }
}

// --- end-to-end regimes and ablation -----------------------------------------------

/// Full two-stage pipeline from a prepared corpus: pretrain (unless
/// `pretrained` is None and the regime is random-init), fine-tune stage 1
/// on BM25 negatives, mine stage-2 negatives with retriever 1, fine-tune
/// stage 2, and evaluate.
pub struct TwoStageOutcome {
    pub retriever1: MetricReport,
    pub retriever2: MetricReport,
    pub pretrain_logs: Vec<StepLog>,
}

pub fn run_two_stage(
    config: &ExperimentConfig,
    prep_out: &PrepOutput,
    train: &[QueryExample],
    held_out: &[QueryExample],
    qrels: &QrelSet,
    pretrain_first: bool,
) -> Result<TwoStageOutcome> {
    let queries = query_map_from_records(&prep_out.query_records, &prep_out.vocab);
    let (model, pretrain_logs) = if pretrain_first {
        pretrain(config, &prep_out.passages, &queries, &prep_out.vocab)?
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mc = resolved_model_config(config, &prep_out.vocab);
        (Model::new(mc, HeadKind::EncoderOnly, &mut rng)?, Vec::new())
    };

    // Stage 1: BM25 negatives.
    let neg1 = mine_stage1(config, &prep_out.passages, train, config.seed.wrapping_add(10))?;
    finetune(
        config,
        &model,
        train,
        &prep_out.passages,
        &neg1,
        config.seed.wrapping_add(11),
    )?;
    let retriever1 = evaluate_retriever(&model, &prep_out.passages, held_out, qrels)?;

    // Stage 2: dense negatives mined by retriever 1.
    let neg2 = mine_stage2(
        config,
        &model,
        &prep_out.passages,
        train,
        config.seed.wrapping_add(12),
    )?;
    finetune(
        config,
        &model,
        train,
        &prep_out.passages,
        &neg2,
        config.seed.wrapping_add(13),
    )?;
    let retriever2 = evaluate_retriever(&model, &prep_out.passages, held_out, qrels)?;

    Ok(TwoStageOutcome {
        retriever1,
        retriever2,
        pretrain_logs,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub retriever1: MetricReport,
    pub retriever2: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationTable {
    pub sweep: String,
    pub rows: Vec<AblationRow>,
}

impl std::fmt::Display for AblationTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "# sweep: {}", self.sweep)?;
        writeln!(
            f,
            "{:<18} {:>9} {:>9} {:>9} | {:>9} {:>9} {:>9}",
            "setting", "MRR@10/1", "R@50/1", "R@1k/1", "MRR@10/2", "R@50/2", "R@1k/2"
        )?;
        for row in &self.rows {
            writeln!(
                f,
                "{:<18} {:>9.4} {:>9.4} {:>9.4} | {:>9.4} {:>9.4} {:>9.4}",
                row.label,
                row.retriever1.mrr_at_10,
                row.retriever1.recall_at_50,
                row.retriever1.recall_at_1000,
                row.retriever2.mrr_at_10,
                row.retriever2.recall_at_50,
                row.retriever2.recall_at_1000,
            )?;
        }
        Ok(())
    }
}

/// Sweep points for `ablate`: candidate counts or context modes.
pub enum AblationSweep {
    Candidates(Vec<usize>),
    ContextModes(Vec<ContextMode>),
}

pub fn ablate(
    base: &ExperimentConfig,
    corpus_docs: &[Document],
    sweep: &AblationSweep,
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    let points: Vec<(String, ExperimentConfig)> = match sweep {
        AblationSweep::Candidates(cs) => cs
            .iter()
            .map(|&c| {
                (
                    format!("C={c}"),
                    ExperimentConfig {
                        candidates: c,
                        ..base.clone()
                    },
                )
            })
            .collect(),
        AblationSweep::ContextModes(modes) => modes
            .iter()
            .map(|&m| {
                (
                    format!("context={m}"),
                    ExperimentConfig {
                        context_mode: m,
                        ..base.clone()
                    },
                )
            })
            .collect(),
    };
    for (label, config) in points {
        let prep_out = prep(corpus_docs, &config)?;
        let (train, _) = crate::synth::labeled_query_set(
            &prep_out.passages,
            &prep_out.vocab,
            "tq",
            config.seed.wrapping_add(100),
        )?;
        let (held_out, qrels) = crate::synth::labeled_query_set(
            &prep_out.passages,
            &prep_out.vocab,
            "eq",
            config.seed.wrapping_add(200),
        )?;
        let outcome = run_two_stage(&config, &prep_out, &train, &held_out, &qrels, true)?;
        rows.push(AblationRow {
            label,
            retriever1: outcome.retriever1,
            retriever2: outcome.retriever2,
        });
    }
    Ok(AblationTable {
        sweep: match sweep {
            AblationSweep::Candidates(_) => "candidate count C".into(),
            AblationSweep::ContextModes(_) => "context mode".into(),
        },
        rows,
    })
}
