//! Transformer encoder with the three head wirings used downstream: a
//! plain MLM projection, a Condenser-style auxiliary decoder that reads
//! the final-layer [CLS] state plus mid-layer token states, and a shallow
//! context-conditioned decoder that reconstructs a masked text from its
//! unmasked tokens and a context embedding injected at position 0.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt};
use std::io::Read;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QCTXCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    /// Encoder depth L.
    pub encoder_layers: usize,
    /// Layer M whose token states feed the Condenser head; 1 <= M < L.
    pub tap_layer: usize,
    /// Depth N of the auxiliary/contextual decoder stacks.
    pub decoder_layers: usize,
    pub max_seq_len: usize,
    pub cls_id: usize,
    pub mask_id: usize,
    pub pad_id: usize,
    pub sep_id: usize,
    /// Tie the MLM projection to the input embedding matrix.
    pub tie_mlm_weights: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        // Toy scale: 144-token passages plus [CLS] fit in 160.
        ModelConfig {
            vocab_size: 2048,
            hidden_dim: 64,
            num_heads: 4,
            encoder_layers: 6,
            tap_layer: 3,
            decoder_layers: 2,
            max_seq_len: 160,
            cls_id: 2,
            mask_id: 4,
            pad_id: 0,
            sep_id: 3,
            tie_mlm_weights: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tap_layer < 1 || self.tap_layer >= self.encoder_layers {
            return Err(Error::Config(format!(
                "tap_layer must satisfy 1 <= M < L, got M={} L={}",
                self.tap_layer, self.encoder_layers
            )));
        }
        if self.decoder_layers < 1 {
            return Err(Error::Config("decoder_layers must be >= 1".into()));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return Err(Error::Config("vocab_size and max_seq_len must be > 0".into()));
        }
        Ok(())
    }
}

/// Which auxiliary stacks a model carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    /// Encoder + MLM projection only (fine-tuning retriever).
    EncoderOnly,
    /// Adds the Condenser auxiliary decoder.
    Condenser,
    /// Adds the context-conditioned decoder.
    ContextDecoder,
}

struct Block<T: Scalar> {
    wq: Tensor<T>,
    bq: Tensor<T>,
    wk: Tensor<T>,
    bk: Tensor<T>,
    wv: Tensor<T>,
    bv: Tensor<T>,
    wo: Tensor<T>,
    bo: Tensor<T>,
    ln1_g: Tensor<T>,
    ln1_b: Tensor<T>,
    w1: Tensor<T>,
    b1: Tensor<T>,
    w2: Tensor<T>,
    b2: Tensor<T>,
    ln2_g: Tensor<T>,
    ln2_b: Tensor<T>,
    num_heads: usize,
}

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

impl<T: Scalar> Block<T> {
    fn new<R: rand::Rng>(d: usize, num_heads: usize, rng: &mut R) -> Self {
        let ffn = 4 * d;
        let p = |t: Tensor<T>| {
            t.set_requires_grad(true);
            t
        };
        Block {
            wq: p(Tensor::randn(&[d, d], INIT_STD, rng)),
            bq: p(Tensor::zeros(&[d])),
            wk: p(Tensor::randn(&[d, d], INIT_STD, rng)),
            bk: p(Tensor::zeros(&[d])),
            wv: p(Tensor::randn(&[d, d], INIT_STD, rng)),
            bv: p(Tensor::zeros(&[d])),
            wo: p(Tensor::randn(&[d, d], INIT_STD, rng)),
            bo: p(Tensor::zeros(&[d])),
            ln1_g: p(Tensor::full(&[d], T::one())),
            ln1_b: p(Tensor::zeros(&[d])),
            w1: p(Tensor::randn(&[d, ffn], INIT_STD, rng)),
            b1: p(Tensor::zeros(&[ffn])),
            w2: p(Tensor::randn(&[ffn, d], INIT_STD, rng)),
            b2: p(Tensor::zeros(&[d])),
            ln2_g: p(Tensor::full(&[d], T::one())),
            ln2_b: p(Tensor::zeros(&[d])),
            num_heads,
        }
    }

    /// Post-layer-norm transformer block over a [n, d] sequence.
    fn forward(&self, x: &Tensor<T>, key_mask: &[T]) -> Result<Tensor<T>> {
        let s = x.shape();
        let (n, d) = (s[0], s[1]);
        let h = self.num_heads;
        let dh = d / h;

        let split = |t: &Tensor<T>| -> Result<Tensor<T>> {
            // [n, d] -> [h, n, dh]
            t.reshape(&[n, h, dh])?.permute3([1, 0, 2])
        };
        let q = split(&x.matmul(&self.wq)?.add_bias(&self.bq)?)?;
        let k = x.matmul(&self.wk)?.add_bias(&self.bk)?;
        let k_t = k.reshape(&[n, h, dh])?.permute3([1, 2, 0])?; // [h, dh, n]
        let v = split(&x.matmul(&self.wv)?.add_bias(&self.bv)?)?;

        let scale = T::of_f64(1.0 / (dh as f64).sqrt());
        let scores = q.bmm(&k_t)?.scale(scale).add_key_mask(key_mask)?;
        let probs = scores.softmax_rows()?;
        let ctx = probs
            .bmm(&v)? // [h, n, dh]
            .permute3([1, 0, 2])?
            .reshape(&[n, d])?;
        let attn = ctx.matmul(&self.wo)?.add_bias(&self.bo)?;
        let h1 = x.add(&attn)?.layer_norm(&self.ln1_g, &self.ln1_b, LN_EPS)?;

        let ffn = h1
            .matmul(&self.w1)?
            .add_bias(&self.b1)?
            .gelu()
            .matmul(&self.w2)?
            .add_bias(&self.b2)?;
        h1.add(&ffn)?.layer_norm(&self.ln2_g, &self.ln2_b, LN_EPS)
    }

    fn params(&self, prefix: &str, out: &mut Vec<(String, Tensor<T>)>) {
        let items: [(&str, &Tensor<T>); 16] = [
            ("wq", &self.wq),
            ("bq", &self.bq),
            ("wk", &self.wk),
            ("bk", &self.bk),
            ("wv", &self.wv),
            ("bv", &self.bv),
            ("wo", &self.wo),
            ("bo", &self.bo),
            ("ln1_g", &self.ln1_g),
            ("ln1_b", &self.ln1_b),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
            ("ln2_g", &self.ln2_g),
            ("ln2_b", &self.ln2_b),
        ];
        for (name, t) in items {
            out.push((format!("{prefix}.{name}"), t.clone()));
        }
    }
}

struct Stack<T: Scalar> {
    blocks: Vec<Block<T>>,
}

impl<T: Scalar> Stack<T> {
    fn new<R: rand::Rng>(layers: usize, d: usize, heads: usize, rng: &mut R) -> Self {
        Stack {
            blocks: (0..layers).map(|_| Block::new(d, heads, rng)).collect(),
        }
    }
}

/// Per-layer hidden states of one forward pass: index 0 is the embedding
/// output, index L the final layer. Each entry is [seq_len, d].
pub struct HiddenStates<T: Scalar> {
    pub layers: Vec<Tensor<T>>,
}

impl<T: Scalar> HiddenStates<T> {
    pub fn last(&self) -> &Tensor<T> {
        self.layers.last().unwrap()
    }

    /// h_0^L, the final-layer [CLS] state, as [1, d].
    pub fn passage_embedding(&self) -> Result<Tensor<T>> {
        self.last().slice_rows(0, 1)
    }
}

pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    tok_emb: Tensor<T>,
    pos_emb: Tensor<T>,
    emb_ln_g: Tensor<T>,
    emb_ln_b: Tensor<T>,
    blocks: Vec<Block<T>>,
    /// Untied MLM projection [hidden, vocab]; absent when weights are tied.
    mlm_w: Option<Tensor<T>>,
    mlm_bias: Tensor<T>,
    condenser: Option<Stack<T>>,
    decoder: Option<Stack<T>>,
    dec_emb_ln_g: Option<Tensor<T>>,
    dec_emb_ln_b: Option<Tensor<T>>,
}

impl<T: Scalar> Model<T> {
    pub fn new<R: rand::Rng>(config: ModelConfig, kind: HeadKind, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let p = |t: Tensor<T>| {
            t.set_requires_grad(true);
            t
        };
        let tok_emb = p(Tensor::randn(&[config.vocab_size, d], INIT_STD, rng));
        let pos_emb = p(Tensor::randn(&[config.max_seq_len, d], INIT_STD, rng));
        let emb_ln_g = p(Tensor::full(&[d], T::one()));
        let emb_ln_b = p(Tensor::zeros(&[d]));
        let blocks = (0..config.encoder_layers)
            .map(|_| Block::new(d, config.num_heads, rng))
            .collect();
        let mlm_w = if config.tie_mlm_weights {
            None
        } else {
            Some(p(Tensor::randn(&[d, config.vocab_size], INIT_STD, rng)))
        };
        let mlm_bias = p(Tensor::zeros(&[config.vocab_size]));
        let condenser = match kind {
            HeadKind::Condenser => Some(Stack::new(
                config.decoder_layers,
                d,
                config.num_heads,
                rng,
            )),
            _ => None,
        };
        let (decoder, dec_emb_ln_g, dec_emb_ln_b) = match kind {
            HeadKind::ContextDecoder => (
                Some(Stack::new(config.decoder_layers, d, config.num_heads, rng)),
                Some(p(Tensor::full(&[d], T::one()))),
                Some(p(Tensor::zeros(&[d]))),
            ),
            _ => (None, None, None),
        };
        Ok(Model {
            config,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            blocks,
            mlm_w,
            mlm_bias,
            condenser,
            decoder,
            dec_emb_ln_g,
            dec_emb_ln_b,
        })
    }

    pub fn kind(&self) -> HeadKind {
        if self.condenser.is_some() {
            HeadKind::Condenser
        } else if self.decoder.is_some() {
            HeadKind::ContextDecoder
        } else {
            HeadKind::EncoderOnly
        }
    }

    /// All trainable parameters in a fixed, name-stable order.
    pub fn params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        out.push(("encoder.tok_emb".into(), self.tok_emb.clone()));
        out.push(("encoder.pos_emb".into(), self.pos_emb.clone()));
        out.push(("encoder.emb_ln_g".into(), self.emb_ln_g.clone()));
        out.push(("encoder.emb_ln_b".into(), self.emb_ln_b.clone()));
        for (i, b) in self.blocks.iter().enumerate() {
            b.params(&format!("encoder.block{i}"), &mut out);
        }
        if let Some(w) = &self.mlm_w {
            out.push(("mlm.w".into(), w.clone()));
        }
        out.push(("mlm.bias".into(), self.mlm_bias.clone()));
        if let Some(stack) = &self.condenser {
            for (i, b) in stack.blocks.iter().enumerate() {
                b.params(&format!("condenser.block{i}"), &mut out);
            }
        }
        if let Some(stack) = &self.decoder {
            out.push((
                "decoder.emb_ln_g".into(),
                self.dec_emb_ln_g.as_ref().unwrap().clone(),
            ));
            out.push((
                "decoder.emb_ln_b".into(),
                self.dec_emb_ln_b.as_ref().unwrap().clone(),
            ));
            for (i, b) in stack.blocks.iter().enumerate() {
                b.params(&format!("decoder.block{i}"), &mut out);
            }
        }
        out
    }

    pub fn param_tensors(&self) -> Vec<Tensor<T>> {
        self.params().into_iter().map(|(_, t)| t).collect()
    }

    pub fn zero_grad(&self) {
        for (_, p) in self.params() {
            p.zero_grad();
        }
    }

    fn key_mask(&self, tokens: &[usize]) -> Vec<T> {
        tokens
            .iter()
            .map(|&t| if t == self.config.pad_id { T::zero() } else { T::one() })
            .collect()
    }

    /// Runs the encoder and returns all layer activations so callers can
    /// tap layer M and layer L. `tokens[0]` must be [CLS].
    pub fn encode(&self, tokens: &[usize]) -> Result<HiddenStates<T>> {
        let n = tokens.len();
        if n == 0 || n > self.config.max_seq_len {
            return Err(Error::Dimension(format!(
                "encode: sequence length {} outside 1..={}",
                n, self.config.max_seq_len
            )));
        }
        if tokens[0] != self.config.cls_id {
            return Err(Error::Contract("encode: position 0 must be [CLS]".into()));
        }
        let key_mask = self.key_mask(tokens);
        let emb = Tensor::embedding(&self.tok_emb, tokens)?
            .add(&self.pos_emb.slice_rows(0, n)?)?
            .layer_norm(&self.emb_ln_g, &self.emb_ln_b, LN_EPS)?;
        let mut layers = vec![emb];
        for block in &self.blocks {
            let next = block.forward(layers.last().unwrap(), &key_mask)?;
            layers.push(next);
        }
        Ok(HiddenStates { layers })
    }

    /// Projects hidden states [n, d] to vocabulary logits [n, vocab].
    pub fn mlm_logits(&self, h: &Tensor<T>) -> Result<Tensor<T>> {
        let proj = match &self.mlm_w {
            Some(w) => h.matmul(w)?,
            None => h.matmul(&self.tok_emb.transpose2d()?)?,
        };
        proj.add_bias(&self.mlm_bias)
    }

    /// Condenser auxiliary head: an N-layer stack over the sequence
    /// [h_0^L, h_1^M, ..., h_n^M], projected to per-position logits.
    pub fn condenser_head_forward(
        &self,
        states: &HiddenStates<T>,
        tokens: &[usize],
    ) -> Result<Tensor<T>> {
        let stack = self.condenser.as_ref().ok_or_else(|| {
            Error::Contract("model has no condenser head".into())
        })?;
        if states.layers.len() != self.config.encoder_layers + 1 {
            return Err(Error::Contract(format!(
                "expected {} hidden layers, got {}",
                self.config.encoder_layers + 1,
                states.layers.len()
            )));
        }
        let n = tokens.len();
        let cls = states.last().slice_rows(0, 1)?;
        let mid = states.layers[self.config.tap_layer].slice_rows(1, n)?;
        let mut h = Tensor::concat_rows(&[cls, mid])?;
        let key_mask = self.key_mask(tokens);
        for block in &stack.blocks {
            h = block.forward(&h, &key_mask)?;
        }
        self.mlm_logits(&h)
    }

    /// Context-conditioned decoder: input d^0 = {h_x, y_1, ..., y_n} where
    /// the context embedding occupies position 0; returns [n+1, vocab]
    /// logits. Position-0 logits exist but carry no label.
    pub fn cotmae_decoder_forward(
        &self,
        context_embedding: &Tensor<T>,
        masked_y: &[usize],
    ) -> Result<Tensor<T>> {
        let stack = self.decoder.as_ref().ok_or_else(|| {
            Error::Contract("model has no context decoder".into())
        })?;
        if context_embedding.shape() != [1, self.config.hidden_dim] {
            return Err(Error::Dimension(format!(
                "context embedding shape {:?}, expected [1, {}]",
                context_embedding.shape(),
                self.config.hidden_dim
            )));
        }
        let n = masked_y.len();
        if n + 1 > self.config.max_seq_len {
            return Err(Error::Dimension(format!(
                "decoder sequence {} exceeds max_seq_len {}",
                n + 1,
                self.config.max_seq_len
            )));
        }
        let y_emb = Tensor::embedding(&self.tok_emb, masked_y)?;
        let mut h = Tensor::concat_rows(&[context_embedding.clone(), y_emb])?
            .add(&self.pos_emb.slice_rows(0, n + 1)?)?
            .layer_norm(
                self.dec_emb_ln_g.as_ref().unwrap(),
                self.dec_emb_ln_b.as_ref().unwrap(),
                LN_EPS,
            )?;
        let mut key_mask = vec![T::one()];
        key_mask.extend(self.key_mask(masked_y));
        for block in &stack.blocks {
            h = block.forward(&h, &key_mask)?;
        }
        self.mlm_logits(&h)
    }

    // --- checkpoint I/O ---------------------------------------------------

    fn flags(&self) -> u8 {
        let mut f = 0u8;
        if self.condenser.is_some() {
            f |= 1;
        }
        if self.decoder.is_some() {
            f |= 2;
        }
        if self.config.tie_mlm_weights {
            f |= 4;
        }
        f
    }

    /// Serializes config and parameters. With `encoder_only`, auxiliary
    /// decoder stacks are dropped, matching the pre-train-then-discard
    /// pipeline.
    pub fn save_checkpoint(&self, path: &Path, encoder_only: bool) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.push(T::DTYPE);
        let flags = if encoder_only { self.flags() & 4 } else { self.flags() };
        buf.push(flags);
        for v in [
            self.config.vocab_size,
            self.config.hidden_dim,
            self.config.num_heads,
            self.config.encoder_layers,
            self.config.tap_layer,
            self.config.decoder_layers,
            self.config.max_seq_len,
            self.config.cls_id,
            self.config.mask_id,
            self.config.pad_id,
            self.config.sep_id,
        ] {
            buf.extend_from_slice(&(v as u32).to_le_bytes());
        }
        let params: Vec<(String, Tensor<T>)> = self
            .params()
            .into_iter()
            .filter(|(name, _)| {
                !encoder_only || (!name.starts_with("condenser.") && !name.starts_with("decoder."))
            })
            .collect();
        buf.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for (name, t) in params {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u16).to_le_bytes());
            buf.extend_from_slice(nb);
            let shape = t.shape();
            buf.push(shape.len() as u8);
            for d in &shape {
                buf.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in t.data() {
                v.write_le(&mut buf);
            }
        }
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let mut r = std::io::Cursor::new(&bytes[..]);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated file: magic".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic string".into()));
        }
        let version = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Checkpoint("truncated file: version".into()))?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "version mismatch: file has {}, expected {}",
                version, CHECKPOINT_VERSION
            )));
        }
        let dtype = r
            .read_u8()
            .map_err(|_| Error::Checkpoint("truncated file: dtype".into()))?;
        if dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!(
                "dtype mismatch: file dtype tag {}, expected {} ({})",
                dtype,
                T::DTYPE,
                T::DTYPE_NAME
            )));
        }
        let flags = r
            .read_u8()
            .map_err(|_| Error::Checkpoint("truncated file: flags".into()))?;
        let mut fields = [0usize; 11];
        for (i, f) in fields.iter_mut().enumerate() {
            *f = r.read_u32::<LittleEndian>().map_err(|_| {
                Error::Checkpoint(format!("truncated file: config field {}", i))
            })? as usize;
        }
        let config = ModelConfig {
            vocab_size: fields[0],
            hidden_dim: fields[1],
            num_heads: fields[2],
            encoder_layers: fields[3],
            tap_layer: fields[4],
            decoder_layers: fields[5],
            max_seq_len: fields[6],
            cls_id: fields[7],
            mask_id: fields[8],
            pad_id: fields[9],
            sep_id: fields[10],
            tie_mlm_weights: flags & 4 != 0,
        };
        let kind = if flags & 1 != 0 {
            HeadKind::Condenser
        } else if flags & 2 != 0 {
            HeadKind::ContextDecoder
        } else {
            HeadKind::EncoderOnly
        };
        // Parameter values are overwritten below; the RNG seed is irrelevant.
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let model = Model::new(config, kind, &mut rng)?;
        let expected = model.params();
        let count = r
            .read_u32::<LittleEndian>()
            .map_err(|_| Error::Checkpoint("truncated file: param count".into()))?
            as usize;
        if count != expected.len() {
            return Err(Error::Checkpoint(format!(
                "parameter count mismatch: file has {}, model expects {}",
                count,
                expected.len()
            )));
        }
        for (name, tensor) in expected {
            let name_len = r
                .read_u16::<LittleEndian>()
                .map_err(|_| Error::Checkpoint(format!("truncated file at {}", name)))?
                as usize;
            let mut nb = vec![0u8; name_len];
            r.read_exact(&mut nb)
                .map_err(|_| Error::Checkpoint(format!("truncated file at {}", name)))?;
            let file_name = String::from_utf8(nb)
                .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?;
            if file_name != name {
                return Err(Error::Checkpoint(format!(
                    "parameter order mismatch: file has {}, expected {}",
                    file_name, name
                )));
            }
            let ndim = r
                .read_u8()
                .map_err(|_| Error::Checkpoint(format!("truncated file at {}", name)))?
                as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.read_u32::<LittleEndian>().map_err(|_| {
                    Error::Checkpoint(format!("truncated file at {}", name))
                })? as usize);
            }
            if shape != tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for {}: file {:?}, model {:?}",
                    name,
                    shape,
                    tensor.shape()
                )));
            }
            let numel: usize = shape.iter().product();
            let mut raw = vec![0u8; numel * T::BYTE_LEN];
            r.read_exact(&mut raw)
                .map_err(|_| Error::Checkpoint(format!("truncated file at {}", name)))?;
            tensor.with_data_mut(|d| {
                for (i, chunk) in raw.chunks(T::BYTE_LEN).enumerate() {
                    d[i] = T::read_le(chunk);
                }
            });
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_config() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            hidden_dim: 16,
            num_heads: 2,
            encoder_layers: 3,
            tap_layer: 1,
            decoder_layers: 1,
            max_seq_len: 16,
            ..ModelConfig::default()
        }
    }

    fn tokens(cfg: &ModelConfig, body: &[usize]) -> Vec<usize> {
        let mut t = vec![cfg.cls_id];
        t.extend_from_slice(body);
        t
    }

    #[test]
    fn encode_returns_all_layers_with_correct_shapes() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::<f32>::new(cfg.clone(), HeadKind::EncoderOnly, &mut rng).unwrap();
        let toks = tokens(&cfg, &[5, 6, 7, 8]);
        let states = model.encode(&toks).unwrap();
        assert_eq!(states.layers.len(), cfg.encoder_layers + 1);
        for layer in &states.layers {
            assert_eq!(layer.shape(), vec![5, cfg.hidden_dim]);
        }
    }

    #[test]
    fn encode_rejects_overlength_and_missing_cls() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::<f32>::new(cfg.clone(), HeadKind::EncoderOnly, &mut rng).unwrap();
        let long = tokens(&cfg, &vec![5; cfg.max_seq_len]);
        assert!(model.encode(&long).is_err());
        assert!(model.encode(&[5, 6, 7]).is_err());
    }

    #[test]
    fn pad_positions_do_not_affect_other_tokens() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = Model::<f64>::new(cfg.clone(), HeadKind::EncoderOnly, &mut rng).unwrap();
        let base = tokens(&cfg, &[5, 6, 7]);
        let mut padded = base.clone();
        padded.extend([cfg.pad_id; 3]);
        let a = model.encode(&base).unwrap();
        let b = model.encode(&padded).unwrap();
        let la = a.last().data();
        let lb = b.last().data();
        for i in 0..base.len() * cfg.hidden_dim {
            assert!(
                (la[i] - lb[i]).abs() < 1e-9,
                "padding leaked into position {}",
                i / cfg.hidden_dim
            );
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = Model::<f32>::new(cfg.clone(), HeadKind::EncoderOnly, &mut rng).unwrap();
        let toks = tokens(&cfg, &[9, 10, 11]);
        let a = model.encode(&toks).unwrap().last().data();
        let b = model.encode(&toks).unwrap().last().data();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_is_permutation_sensitive() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = Model::<f32>::new(cfg.clone(), HeadKind::EncoderOnly, &mut rng).unwrap();
        let a = model
            .encode(&tokens(&cfg, &[5, 6, 7, 8]))
            .unwrap()
            .passage_embedding()
            .unwrap()
            .data();
        let b = model
            .encode(&tokens(&cfg, &[5, 8, 7, 6]))
            .unwrap()
            .passage_embedding()
            .unwrap()
            .data();
        assert_ne!(a, b);
    }

    #[test]
    fn condenser_head_output_matches_input_length() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = Model::<f32>::new(cfg.clone(), HeadKind::Condenser, &mut rng).unwrap();
        let toks = tokens(&cfg, &[5, 6, 7, 8]);
        let states = model.encode(&toks).unwrap();
        let logits = model.condenser_head_forward(&states, &toks).unwrap();
        assert_eq!(logits.shape(), vec![5, cfg.vocab_size]);
    }

    #[test]
    fn tap_layer_equal_to_depth_rejected_at_construction() {
        let mut cfg = small_config();
        cfg.tap_layer = cfg.encoder_layers;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        assert!(Model::<f32>::new(cfg, HeadKind::Condenser, &mut rng).is_err());
    }

    #[test]
    fn condenser_gradient_reaches_both_cls_and_tap_paths() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let model = Model::<f64>::new(cfg.clone(), HeadKind::Condenser, &mut rng).unwrap();
        let toks = tokens(&cfg, &[5, 6, 7, 8]);
        let states = model.encode(&toks).unwrap();
        states.last().set_requires_grad(true);
        states.layers[cfg.tap_layer].set_requires_grad(true);
        let logits = model.condenser_head_forward(&states, &toks).unwrap();
        let loss = logits.cross_entropy(&[5, 6, 7, 8], &[1, 2, 3, 4]).unwrap();
        loss.backward().unwrap();
        let g_last = states.last().grad().unwrap();
        let g_tap = states.layers[cfg.tap_layer].grad().unwrap();
        let d = cfg.hidden_dim;
        assert!(g_last[..d].iter().any(|&v| v != 0.0), "no grad into h_0^L");
        assert!(
            g_tap[d..].iter().any(|&v| v != 0.0),
            "no grad into layer-M token states"
        );
    }

    #[test]
    fn cotmae_decoder_shapes_and_context_dependence() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = Model::<f64>::new(cfg.clone(), HeadKind::ContextDecoder, &mut rng).unwrap();
        let y = vec![5, 6, cfg.mask_id, 8, 9, 10];
        let zero_ctx = Tensor::zeros(&[1, cfg.hidden_dim]);
        let rand_ctx = Tensor::randn(&[1, cfg.hidden_dim], 1.0, &mut rng);
        let a = model.cotmae_decoder_forward(&zero_ctx, &y).unwrap();
        assert_eq!(a.shape(), vec![7, cfg.vocab_size]);
        let b = model.cotmae_decoder_forward(&rand_ctx, &y).unwrap();
        assert_ne!(a.data(), b.data(), "context does not condition the output");
    }

    #[test]
    fn cotmae_decoder_rejects_wrong_context_dimension() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = Model::<f32>::new(cfg.clone(), HeadKind::ContextDecoder, &mut rng).unwrap();
        let ctx = Tensor::zeros(&[1, cfg.hidden_dim + 1]);
        assert!(model.cotmae_decoder_forward(&ctx, &[5, 6]).is_err());
    }

    #[test]
    fn cotmae_gradient_reaches_context_embedding() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let model = Model::<f64>::new(cfg.clone(), HeadKind::ContextDecoder, &mut rng).unwrap();
        let ctx = Tensor::randn(&[1, cfg.hidden_dim], 1.0, &mut rng);
        ctx.set_requires_grad(true);
        let y = vec![5, cfg.mask_id, 7];
        let logits = model.cotmae_decoder_forward(&ctx, &y).unwrap();
        // Score the masked position (index 2 in the shifted sequence).
        let loss = logits.cross_entropy(&[6], &[2]).unwrap();
        loss.backward().unwrap();
        assert!(ctx.grad().unwrap().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn untying_mlm_weights_adds_exactly_vocab_times_hidden_params() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let tied = Model::<f32>::new(cfg.clone(), HeadKind::EncoderOnly, &mut rng).unwrap();
        let mut untied_cfg = cfg.clone();
        untied_cfg.tie_mlm_weights = false;
        let untied = Model::<f32>::new(untied_cfg, HeadKind::EncoderOnly, &mut rng).unwrap();
        let count = |m: &Model<f32>| -> usize {
            m.params().iter().map(|(_, t)| t.numel()).sum()
        };
        assert_eq!(
            count(&untied) - count(&tied),
            cfg.vocab_size * cfg.hidden_dim
        );
    }

    #[test]
    fn checkpoint_round_trip_is_byte_identical() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let model = Model::<f32>::new(cfg, HeadKind::Condenser, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        model.save_checkpoint(&p1, false).unwrap();
        let loaded = Model::<f32>::load_checkpoint(&p1).unwrap();
        loaded.save_checkpoint(&p2, false).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn truncated_checkpoint_is_explicit_error() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let model = Model::<f32>::new(cfg, HeadKind::EncoderOnly, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        model.save_checkpoint(&p, false).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        std::fs::write(&p, &bytes[..bytes.len() / 2]).unwrap();
        match Model::<f32>::load_checkpoint(&p) {
            Err(Error::Checkpoint(msg)) => assert!(msg.contains("truncated")),
            other => panic!("expected checkpoint error, got {:?}", other.map(|_| ())),
        }
    }

    #[test]
    fn encoder_only_checkpoint_loads_without_decoder_weights() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let model = Model::<f32>::new(cfg, HeadKind::ContextDecoder, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("enc.ckpt");
        model.save_checkpoint(&p, true).unwrap();
        let loaded = Model::<f32>::load_checkpoint(&p).unwrap();
        assert_eq!(loaded.kind(), HeadKind::EncoderOnly);
        assert!(loaded
            .params()
            .iter()
            .all(|(n, _)| !n.starts_with("decoder.")));
    }

    #[test]
    fn dtype_mismatch_is_checkpoint_error() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let model = Model::<f64>::new(cfg, HeadKind::EncoderOnly, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        model.save_checkpoint(&p, false).unwrap();
        assert!(matches!(
            Model::<f32>::load_checkpoint(&p),
            Err(Error::Checkpoint(_))
        ));
    }
}
