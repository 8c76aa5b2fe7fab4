//! The four training losses and the masking procedure: MLM, coCondenser
//! (MLM + auxiliary Condenser-head MLM + in-batch contrastive), CoT-MAE
//! (encoder MLM + context-supervised decoder MLM), and fine-tuning InfoNCE.
//!
//! Per-sequence losses average over mask positions; batch losses average
//! over sequences that have at least one mask position.

use crate::corpus::TokenId;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Encoder-side mask rate for plain MLM and coCondenser.
pub const MLM_MASK_RATE: f64 = 0.15;
/// CoT-MAE uses a higher encoder-side rate.
pub const COTMAE_ENCODER_MASK_RATE: f64 = 0.30;
/// Decoder-side rate for the context-supervised reconstruction.
pub const COTMAE_DECODER_MASK_RATE: f64 = 0.45;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MaskingSpec {
    pub mask_rate: f64,
    /// Probability a selected position becomes [MASK].
    pub mask_token_prob: f64,
    /// Probability a selected position becomes a random non-special token.
    pub random_prob: f64,
    pub vocab_size: usize,
    pub mask_id: TokenId,
    pub cls_id: TokenId,
    pub pad_id: TokenId,
}

impl MaskingSpec {
    pub fn new(mask_rate: f64, vocab_size: usize) -> Self {
        MaskingSpec {
            mask_rate,
            mask_token_prob: 0.8,
            random_prob: 0.1,
            vocab_size,
            mask_id: crate::corpus::MASK_ID,
            cls_id: crate::corpus::CLS_ID,
            pad_id: crate::corpus::PAD_ID,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mask_rate) {
            return Err(Error::Config(format!(
                "mask_rate {} outside [0, 1]",
                self.mask_rate
            )));
        }
        if self.mask_token_prob < 0.0
            || self.random_prob < 0.0
            || self.mask_token_prob + self.random_prob > 1.0 + 1e-12
        {
            return Err(Error::Config(format!(
                "action split ({}, {}) is not a sub-probability",
                self.mask_token_prob, self.random_prob
            )));
        }
        if self.vocab_size <= crate::corpus::MASK_ID + 1 {
            return Err(Error::Config(
                "vocab too small for random-token replacement".into(),
            ));
        }
        Ok(())
    }
}

/// One masked sequence: every index in `mask_pos` has a stored target id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskedBatch {
    pub tokens: Vec<TokenId>,
    pub mask_pos: Vec<usize>,
    pub targets: Vec<TokenId>,
}

impl MaskedBatch {
    /// A sequence with nothing masked (decoder-off case, tests).
    pub fn unmasked(tokens: Vec<TokenId>) -> Self {
        MaskedBatch {
            tokens,
            mask_pos: Vec::new(),
            targets: Vec::new(),
        }
    }
}

/// Selects eligible positions (never [CLS] or [PAD]) independently with
/// probability `mask_rate`, then applies the [MASK]/random/keep split.
/// Random replacements draw from non-special ids so they cannot forge
/// padding or [CLS] markers.
pub fn apply_masking<R: Rng>(
    tokens: &[TokenId],
    spec: &MaskingSpec,
    rng: &mut R,
) -> Result<MaskedBatch> {
    spec.validate()?;
    if tokens.first() != Some(&spec.cls_id) {
        return Err(Error::Contract(
            "apply_masking: sequence must begin with [CLS]".into(),
        ));
    }
    let first_regular = crate::corpus::MASK_ID + 1;
    let mut out = tokens.to_vec();
    let mut mask_pos = Vec::new();
    let mut targets = Vec::new();
    for (i, &tok) in tokens.iter().enumerate() {
        if tok == spec.cls_id || tok == spec.pad_id {
            continue;
        }
        if !rng.gen_bool(spec.mask_rate) {
            continue;
        }
        mask_pos.push(i);
        targets.push(tok);
        let action: f64 = rng.gen();
        if action < spec.mask_token_prob {
            out[i] = spec.mask_id;
        } else if action < spec.mask_token_prob + spec.random_prob {
            out[i] = rng.gen_range(first_regular..spec.vocab_size);
        } // else: keep the original token
    }
    Ok(MaskedBatch {
        tokens: out,
        mask_pos,
        targets,
    })
}

/// Cross-entropy averaged over mask positions only. An empty mask set is
/// defined as zero loss (with a warning) so degenerate batches don't abort
/// training.
pub fn mlm_loss<T: Scalar>(logits: &Tensor<T>, batch: &MaskedBatch) -> Result<Tensor<T>> {
    if batch.mask_pos.is_empty() {
        eprintln!("warning: mlm_loss over empty mask set, returning 0");
        return Ok(Tensor::scalar(T::zero()));
    }
    logits.cross_entropy(&batch.targets, &batch.mask_pos)
}

/// B paired embeddings for in-batch contrastive learning. `pair_ids`
/// identify the source documents; a duplicate would make an in-batch
/// negative false.
pub struct ContrastiveBatch<T: Scalar> {
    /// Anchor embeddings h_x, [B, d].
    pub anchors: Tensor<T>,
    /// Paired context embeddings h_y, [B, d]; row i is row i's positive.
    pub contexts: Tensor<T>,
    pub pair_ids: Vec<String>,
    pub temperature: f64,
}

/// Mean over anchors of -log softmax(sim(x_i, .) / tau) at the paired
/// context, denominator over all context embeddings in the batch.
pub fn contrastive_loss<T: Scalar>(batch: &ContrastiveBatch<T>) -> Result<Tensor<T>> {
    let sa = batch.anchors.shape();
    let sc = batch.contexts.shape();
    if sa.len() != 2 || sa != sc {
        return Err(Error::Dimension(format!(
            "contrastive_loss: anchor shape {:?} vs context shape {:?}",
            sa, sc
        )));
    }
    let b = sa[0];
    if b < 2 {
        return Err(Error::Contract(format!(
            "contrastive_loss: need B >= 2 pairs, got {}",
            b
        )));
    }
    if batch.pair_ids.len() != b {
        return Err(Error::Contract(format!(
            "contrastive_loss: {} pair ids for {} pairs",
            batch.pair_ids.len(),
            b
        )));
    }
    let mut sorted = batch.pair_ids.clone();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0] == w[1]) {
        let dup = sorted
            .windows(2)
            .find(|w| w[0] == w[1])
            .unwrap()[0]
            .clone();
        return Err(Error::Contract(format!(
            "contrastive_loss: duplicate pair id {:?} in batch",
            dup
        )));
    }
    if batch.temperature <= 0.0 {
        return Err(Error::Config(format!(
            "contrastive_loss: temperature {} must be > 0",
            batch.temperature
        )));
    }
    let sims = batch
        .anchors
        .matmul(&batch.contexts.transpose2d()?)?
        .scale(T::of_f64(1.0 / batch.temperature));
    let diag: Vec<usize> = (0..b).collect();
    sims.cross_entropy(&diag, &diag)
}

/// One pre-training example: a passage x with its context y, both masked.
#[derive(Debug, Clone)]
pub struct PairExample {
    /// In-batch identity (document id); duplicates in one batch are an error.
    pub pair_id: String,
    pub x: MaskedBatch,
    pub y: MaskedBatch,
}

pub struct CoCondenserLoss<T: Scalar> {
    pub total: Tensor<T>,
    pub mlm: Tensor<T>,
    pub aux_mlm: Tensor<T>,
    pub contrastive: Tensor<T>,
}

fn mean_terms<T: Scalar>(terms: Vec<Tensor<T>>, what: &str) -> Result<Tensor<T>> {
    if terms.is_empty() {
        eprintln!("warning: no {what} terms in batch, contributing 0");
        return Ok(Tensor::scalar(T::zero()));
    }
    let n = terms.len();
    let mut acc = terms[0].clone();
    for t in &terms[1..] {
        acc = acc.add(t)?;
    }
    Ok(acc.scale(T::of_f64(1.0 / n as f64)))
}

/// coCondenser total: encoder MLM + auxiliary Condenser-head MLM + in-batch
/// contrastive over the pairs' [CLS] embeddings. Both sides of every pair
/// contribute to the MLM terms; anchors are the x side.
pub fn cocondenser_total_loss<T: Scalar>(
    model: &Model<T>,
    batch: &[PairExample],
    temperature: f64,
) -> Result<CoCondenserLoss<T>> {
    if batch.len() < 2 {
        return Err(Error::Contract(format!(
            "cocondenser_total_loss: need >= 2 pairs for in-batch negatives, got {}",
            batch.len()
        )));
    }
    let mut mlm_terms = Vec::new();
    let mut aux_terms = Vec::new();
    let mut anchors = Vec::new();
    let mut contexts = Vec::new();
    for pair in batch {
        for (seq, is_anchor) in [(&pair.x, true), (&pair.y, false)] {
            let states = model.encode(&seq.tokens)?;
            if !seq.mask_pos.is_empty() {
                let logits = model.mlm_logits(states.last())?;
                mlm_terms.push(logits.cross_entropy(&seq.targets, &seq.mask_pos)?);
                let aux = model.condenser_head_forward(&states, &seq.tokens)?;
                aux_terms.push(aux.cross_entropy(&seq.targets, &seq.mask_pos)?);
            }
            let emb = states.passage_embedding()?;
            if is_anchor {
                anchors.push(emb);
            } else {
                contexts.push(emb);
            }
        }
    }
    let mlm = mean_terms(mlm_terms, "MLM")?;
    let aux_mlm = mean_terms(aux_terms, "auxiliary MLM")?;
    let contrastive = contrastive_loss(&ContrastiveBatch {
        anchors: Tensor::concat_rows(&anchors)?,
        contexts: Tensor::concat_rows(&contexts)?,
        pair_ids: batch.iter().map(|p| p.pair_id.clone()).collect(),
        temperature,
    })?;
    let total = mlm.add(&aux_mlm)?.add(&contrastive)?;
    Ok(CoCondenserLoss {
        total,
        mlm,
        aux_mlm,
        contrastive,
    })
}

pub struct CotMaeLoss<T: Scalar> {
    pub total: Tensor<T>,
    pub mlm: Tensor<T>,
    pub ctx_mlm: Tensor<T>,
}

/// CoT-MAE total for one pair: encoder MLM on x plus context-supervised
/// decoder MLM on y, conditioned on x's [CLS] embedding. `y.tokens` keeps
/// its leading [CLS] for uniformity; the decoder sees y without it, with
/// h_x at position 0, so y's mask positions index decoder rows directly.
pub fn cotmae_total_loss<T: Scalar>(
    model: &Model<T>,
    pair: &PairExample,
) -> Result<CotMaeLoss<T>> {
    let states = model.encode(&pair.x.tokens)?;
    let mlm = if pair.x.mask_pos.is_empty() {
        eprintln!("warning: CoT-MAE encoder side has no mask positions");
        Tensor::scalar(T::zero())
    } else {
        let logits = model.mlm_logits(states.last())?;
        logits.cross_entropy(&pair.x.targets, &pair.x.mask_pos)?
    };
    let ctx_mlm = if pair.y.mask_pos.is_empty() {
        Tensor::scalar(T::zero())
    } else {
        let h_x = states.passage_embedding()?;
        let logits = model.cotmae_decoder_forward(&h_x, &pair.y.tokens[1..])?;
        // Position-0 logits belong to h_x and are never scored.
        debug_assert!(pair.y.mask_pos.iter().all(|&p| p >= 1));
        logits.cross_entropy(&pair.y.targets, &pair.y.mask_pos)?
    };
    let total = mlm.add(&ctx_mlm)?;
    Ok(CotMaeLoss {
        total,
        mlm,
        ctx_mlm,
    })
}

/// Fine-tuning InfoNCE (temperature fixed to 1): -log softmax of
/// dot(q, p+) against {p+} and the negatives.
pub fn finetune_infonce<T: Scalar>(
    query_emb: &Tensor<T>,
    positive_emb: &Tensor<T>,
    negatives: &Tensor<T>,
) -> Result<Tensor<T>> {
    let sq = query_emb.shape();
    let sp = positive_emb.shape();
    let sn = negatives.shape();
    if sq.len() != 2 || sq[0] != 1 || sp != sq {
        return Err(Error::Dimension(format!(
            "finetune_infonce: query shape {:?}, positive shape {:?}",
            sq, sp
        )));
    }
    if sn.len() != 2 || sn[1] != sq[1] {
        return Err(Error::Dimension(format!(
            "finetune_infonce: negatives shape {:?} vs dimension {}",
            sn, sq[1]
        )));
    }
    if sn[0] == 0 {
        return Err(Error::Contract(
            "finetune_infonce: at least one negative required".into(),
        ));
    }
    let candidates = Tensor::concat_rows(&[positive_emb.clone(), negatives.clone()])?;
    let sims = query_emb.matmul(&candidates.transpose2d()?)?;
    sims.cross_entropy(&[0], &[0])
}
