//! The contextualized entity scorer: a transformer encoder over masked
//! chains that predicts the hidden head entity at position 0. Two
//! input variants exist, relations-only (CoKE) and entity-interleaved
//! (InterEnt); the network is the same, only chain serialization and
//! pretraining length policy differ.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::diff::layers::{self, AttentionNodes};
use crate::diff::{
    load_checkpoint, save_checkpoint, Binding, Graph, NodeId, Optimizer, ParameterStore, Tensor,
};
use crate::error::{Error, Result};
use crate::kg::{entity_token_index, AdjacencyIndex, Triple, Vocabulary, MASK_TOKEN};
use crate::sampler::{mask_head, sample_pretraining_set, Chain, ChainFormat, KPolicy, MaskedChain};
use crate::TrainRng;

pub const WEIGHT_INIT_STD: f64 = 0.02;

#[derive(Copy, Clone, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "coke")]
    CoKE,
    #[serde(rename = "interent")]
    InterEnt,
}

impl Variant {
    pub fn chain_format(self) -> ChainFormat {
        match self {
            Variant::CoKE => ChainFormat::RelOnly,
            Variant::InterEnt => ChainFormat::InterEnt,
        }
    }

    /// Pretraining length policy: fixed K for the interleaved variant,
    /// the 1..=5 uniform mix for relations-only.
    pub fn default_k_policy(self, n: usize) -> KPolicy {
        match self {
            Variant::CoKE => KPolicy::UniformMix { min: 1, max: 5 },
            Variant::InterEnt => KPolicy::Fixed(n),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::CoKE => "coke",
            Variant::InterEnt => "interent",
        }
    }
}

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub variant: Variant,
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub max_seq_len: usize,
    pub dropout: f64,
    /// Evaluation-time context steps N.
    pub context_length: usize,
    /// Ties the output projection to the token embedding table.
    pub tied_output: bool,
}

impl PredictorConfig {
    /// Desk-scale defaults; max_seq_len covers both evaluation chains
    /// and the longest pretraining chain of the variant.
    pub fn desk(variant: Variant, context_length: usize) -> Self {
        let max_seq_len = match variant {
            Variant::InterEnt => 3 + 2 * context_length,
            Variant::CoKE => 3 + context_length.max(5),
        };
        PredictorConfig {
            variant,
            d: 64,
            layers: 2,
            heads: 4,
            max_seq_len,
            dropout: 0.1,
            context_length,
            tied_output: false,
        }
    }

    /// Tokens in an evaluation chain of N context steps.
    pub fn eval_seq_len(&self) -> usize {
        match self.variant {
            Variant::InterEnt => 3 + 2 * self.context_length,
            Variant::CoKE => 3 + self.context_length,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.d == 0 || self.layers == 0 || self.heads == 0 {
            return fail("d, layers and heads must be positive".into());
        }
        if self.d % self.heads != 0 {
            return fail(format!(
                "width {} does not split into {} heads",
                self.d, self.heads
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} not in [0,1)", self.dropout));
        }
        if self.context_length == 0 {
            return fail("context length must be at least 1".into());
        }
        if self.max_seq_len < self.eval_seq_len() {
            return fail(format!(
                "max_seq_len {} cannot hold {}-token evaluation chains",
                self.max_seq_len,
                self.eval_seq_len()
            ));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: PredictorConfig,
    vocab_size: usize,
    entity_count: usize,
}

#[derive(Serialize, Clone, Copy, Debug)]
pub struct LossPoint {
    pub step: u64,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
    pub chains_per_triple: usize,
    pub k_policy: KPolicy,
    pub optimizer: Optimizer,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct PredictorModel {
    pub config: PredictorConfig,
    pub vocab_size: usize,
    pub entity_count: usize,
    pub vocab_hash: String,
    pub params: ParameterStore,
}

impl PredictorModel {
    pub fn new(config: PredictorConfig, vocab: &Vocabulary, rng: &mut TrainRng) -> Result<Self> {
        config.validate()?;
        let v = vocab.total_size();
        let d = config.d;
        let mut params = ParameterStore::new();
        let mut weight = |params: &mut ParameterStore, name: &str, rows, cols| {
            params.insert(name, Tensor::truncated_normal(rows, cols, WEIGHT_INIT_STD, rng))
        };
        weight(&mut params, "tok_emb", v, d)?;
        weight(&mut params, "pos_emb", config.max_seq_len, d)?;
        for l in 0..config.layers {
            for part in ["wq", "wk", "wv", "wo"] {
                weight(&mut params, &format!("layer{l}.attn.{part}"), d, d)?;
            }
            for part in ["bq", "bk", "bv", "bo"] {
                params.insert(&format!("layer{l}.attn.{part}"), Tensor::zeros(1, d))?;
            }
            weight(&mut params, &format!("layer{l}.ffn.w1"), d, 4 * d)?;
            params.insert(&format!("layer{l}.ffn.b1"), Tensor::zeros(1, 4 * d))?;
            weight(&mut params, &format!("layer{l}.ffn.w2"), 4 * d, d)?;
            params.insert(&format!("layer{l}.ffn.b2"), Tensor::zeros(1, d))?;
            for ln in ["ln1", "ln2"] {
                params.insert(&format!("layer{l}.{ln}.gain"), Tensor::full(1, d, 1.0))?;
                params.insert(&format!("layer{l}.{ln}.bias"), Tensor::zeros(1, d))?;
            }
        }
        weight(&mut params, "head.w1", d, d)?;
        params.insert("head.b1", Tensor::zeros(1, d))?;
        params.insert("head.ln.gain", Tensor::full(1, d, 1.0))?;
        params.insert("head.ln.bias", Tensor::zeros(1, d))?;
        if !config.tied_output {
            weight(&mut params, "head.w2", d, v)?;
        }
        params.insert("head.b2", Tensor::zeros(1, v))?;
        Ok(PredictorModel {
            config,
            vocab_size: v,
            entity_count: vocab.entity_count(),
            vocab_hash: vocab.hash(),
            params,
        })
    }

    fn maybe_dropout(
        &self,
        g: &mut Graph,
        x: NodeId,
        rng: &mut Option<&mut TrainRng>,
    ) -> Result<NodeId> {
        match rng.as_deref_mut() {
            Some(r) if self.config.dropout > 0.0 => layers::dropout(g, x, self.config.dropout, r),
            _ => Ok(x),
        }
    }

    /// Records the encoder stack for one token sequence; dropout is on
    /// only when a generator is supplied.
    pub fn encode_nodes(
        &self,
        g: &mut Graph,
        binding: &Binding,
        tokens: &[crate::kg::TokenId],
        mut rng: Option<&mut TrainRng>,
    ) -> Result<NodeId> {
        if tokens.is_empty() || tokens.len() > self.config.max_seq_len {
            return Err(Error::Contract(format!(
                "sequence length {} outside 1..={}",
                tokens.len(),
                self.config.max_seq_len
            )));
        }
        if let Some(bad) = tokens.iter().find(|t| t.0 as usize >= self.vocab_size) {
            return Err(Error::Contract(format!(
                "token id {} outside vocabulary of {}",
                bad.0, self.vocab_size
            )));
        }
        let ids: Vec<usize> = tokens.iter().map(|t| t.0 as usize).collect();
        let positions: Vec<usize> = (0..tokens.len()).collect();
        let tok = binding.node("tok_emb")?;
        let pos = binding.node("pos_emb")?;
        let te = g.gather_rows(tok, &ids)?;
        let pe = g.gather_rows(pos, &positions)?;
        let mut x = g.add(te, pe)?;
        x = self.maybe_dropout(g, x, &mut rng)?;
        for l in 0..self.config.layers {
            let p = AttentionNodes {
                wq: binding.node(&format!("layer{l}.attn.wq"))?,
                bq: binding.node(&format!("layer{l}.attn.bq"))?,
                wk: binding.node(&format!("layer{l}.attn.wk"))?,
                bk: binding.node(&format!("layer{l}.attn.bk"))?,
                wv: binding.node(&format!("layer{l}.attn.wv"))?,
                bv: binding.node(&format!("layer{l}.attn.bv"))?,
                wo: binding.node(&format!("layer{l}.attn.wo"))?,
                bo: binding.node(&format!("layer{l}.attn.bo"))?,
            };
            let attn = layers::multi_head_attention(g, x, &p, self.config.heads, None)?;
            let attn = self.maybe_dropout(g, attn, &mut rng)?;
            let res = g.add(x, attn)?;
            x = g.layer_norm(
                res,
                binding.node(&format!("layer{l}.ln1.gain"))?,
                binding.node(&format!("layer{l}.ln1.bias"))?,
            )?;
            let f = layers::ffn(
                g,
                x,
                binding.node(&format!("layer{l}.ffn.w1"))?,
                binding.node(&format!("layer{l}.ffn.b1"))?,
                binding.node(&format!("layer{l}.ffn.w2"))?,
                binding.node(&format!("layer{l}.ffn.b2"))?,
            )?;
            let f = self.maybe_dropout(g, f, &mut rng)?;
            let res = g.add(x, f)?;
            x = g.layer_norm(
                res,
                binding.node(&format!("layer{l}.ln2.gain"))?,
                binding.node(&format!("layer{l}.ln2.bias"))?,
            )?;
        }
        Ok(x)
    }

    /// Prediction head over a 1xD hidden state: affine, GELU, layer
    /// norm, then the output projection (tied to the embeddings when
    /// configured so).
    fn head_logits(&self, g: &mut Graph, binding: &Binding, h0: NodeId) -> Result<NodeId> {
        let a = layers::affine(g, h0, binding.node("head.w1")?, binding.node("head.b1")?)?;
        let act = g.gelu(a)?;
        let normed = g.layer_norm(
            act,
            binding.node("head.ln.gain")?,
            binding.node("head.ln.bias")?,
        )?;
        let w2 = if self.config.tied_output {
            let emb = binding.node("tok_emb")?;
            g.transpose(emb)?
        } else {
            binding.node("head.w2")?
        };
        let proj = g.matmul(normed, w2)?;
        g.add_bias(proj, binding.node("head.b2")?)
    }

    fn masked_logits(
        &self,
        g: &mut Graph,
        binding: &Binding,
        masked: &MaskedChain,
        rng: Option<&mut TrainRng>,
    ) -> Result<NodeId> {
        if masked.tokens.first() != Some(&MASK_TOKEN) {
            return Err(Error::Contract(
                "chain must be masked at position 0".into(),
            ));
        }
        if (masked.target.0 as usize) >= self.entity_count {
            return Err(Error::Contract(format!(
                "target {} is not an entity id below {}",
                masked.target.0, self.entity_count
            )));
        }
        let x = self.encode_nodes(g, binding, &masked.tokens, rng)?;
        let h0 = g.gather_rows(x, &[0])?;
        self.head_logits(g, binding, h0)
    }

    /// Mean cross-entropy of the batch against each chain's hidden
    /// entity, as a graph node.
    pub fn batch_loss(
        &self,
        g: &mut Graph,
        binding: &Binding,
        batch: &[MaskedChain],
        mut rng: Option<&mut TrainRng>,
    ) -> Result<NodeId> {
        if batch.is_empty() {
            return Err(Error::Argument("batch must be nonempty".into()));
        }
        let mut total = None;
        for masked in batch {
            let logits = self.masked_logits(g, binding, masked, rng.as_deref_mut())?;
            let target = entity_token_index(masked.target);
            let ce = g.cross_entropy_rows(logits, &[target])?;
            total = Some(match total {
                None => ce,
                Some(t) => g.add(t, ce)?,
            });
        }
        g.scale(total.expect("batch verified nonempty"), 1.0 / batch.len() as f64)
    }

    /// Final-layer hidden states, inference mode.
    pub fn encode(&self, tokens: &[crate::kg::TokenId]) -> Result<Tensor> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let x = self.encode_nodes(&mut g, &binding, tokens, None)?;
        Ok(g.value(x).clone())
    }

    /// Softmax over the whole token vocabulary for the hidden entity.
    pub fn predict_distribution(&self, masked: &MaskedChain) -> Result<Tensor> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let logits = self.masked_logits(&mut g, &binding, masked, None)?;
        let probs = g.softmax_rows(logits, None)?;
        Ok(g.value(probs).clone())
    }

    /// Probability mass the frozen model puts on the chain's true head
    /// entity; the path-search reward.
    pub fn target_probability(&self, masked: &MaskedChain) -> Result<f64> {
        let dist = self.predict_distribution(masked)?;
        Ok(dist.at(0, entity_token_index(masked.target)))
    }

    /// Probability masses restricted to entity ids, for ranking.
    pub fn score_entities(
        &self,
        vocab: &Vocabulary,
        query: &Triple,
        context: &Chain,
    ) -> Result<Vec<f64>> {
        if vocab.total_size() != self.vocab_size {
            return Err(Error::Compatibility(format!(
                "vocabulary holds {} tokens, model expects {}",
                vocab.total_size(),
                self.vocab_size
            )));
        }
        if context.query != *query {
            return Err(Error::Contract(
                "context was sampled for a different query".into(),
            ));
        }
        if context.format != self.config.variant.chain_format() {
            return Err(Error::Contract(format!(
                "chain format {:?} does not feed a {} model",
                context.format,
                self.config.variant.as_str()
            )));
        }
        let masked = mask_head(context, vocab);
        let dist = self.predict_distribution(&masked)?;
        let base = entity_token_index(crate::kg::EntityId(0));
        Ok(dist.data()[base..base + self.entity_count].to_vec())
    }

    /// One optimizer update on a batch; returns the pre-step loss.
    pub fn pretrain_step(
        &mut self,
        batch: &[MaskedChain],
        opt: &Optimizer,
        rng: &mut TrainRng,
    ) -> Result<f64> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let loss = self.batch_loss(&mut g, &binding, batch, Some(rng))?;
        let value = g.value(loss).scalar_value()?;
        let grads = g.backward(loss)?;
        self.params.accumulate(&binding, &grads)?;
        self.params.optimizer_step(opt)?;
        Ok(value)
    }

    /// Inference-mode mean loss, no update.
    pub fn mean_loss(&self, batch: &[MaskedChain]) -> Result<f64> {
        let mut g = Graph::new();
        let binding = self.params.bind(&mut g);
        let loss = self.batch_loss(&mut g, &binding, batch, None)?;
        g.value(loss).scalar_value()
    }

    /// Epoch loop: resample chains, shuffle, update per minibatch. The
    /// callback runs after every epoch, e.g. to checkpoint.
    pub fn pretrain(
        &mut self,
        vocab: &Vocabulary,
        adj: &AdjacencyIndex,
        train: &[Triple],
        opts: &PretrainOptions,
        mut on_epoch: impl FnMut(usize, &PredictorModel) -> Result<()>,
    ) -> Result<Vec<LossPoint>> {
        if opts.batch_size == 0 {
            return Err(Error::Argument("batch size must be positive".into()));
        }
        let longest = match (self.config.variant, opts.k_policy) {
            (Variant::InterEnt, KPolicy::Fixed(k)) => 3 + 2 * k,
            (Variant::CoKE, KPolicy::UniformMix { max, .. }) => 3 + max,
            _ => {
                return Err(Error::Argument(
                    "length policy does not match the model variant".into(),
                ))
            }
        };
        if longest > self.config.max_seq_len {
            return Err(Error::Config(format!(
                "pretraining chains reach {longest} tokens, max_seq_len is {}",
                self.config.max_seq_len
            )));
        }
        let mut rng = TrainRng::seed_from_u64(opts.seed);
        let mut curve = Vec::new();
        for epoch in 0..opts.epochs {
            let chains = sample_pretraining_set(
                adj,
                train,
                self.config.variant.chain_format(),
                opts.chains_per_triple,
                opts.k_policy,
                &mut rng,
            )?;
            let mut order: Vec<usize> = (0..chains.len()).collect();
            order.shuffle(&mut rng);
            for ids in order.chunks(opts.batch_size) {
                let batch: Vec<MaskedChain> =
                    ids.iter().map(|&i| mask_head(&chains[i], vocab)).collect();
                let loss = self.pretrain_step(&batch, &opts.optimizer, &mut rng)?;
                curve.push(LossPoint {
                    step: self.params.step(),
                    loss,
                });
            }
            on_epoch(epoch, self)?;
        }
        Ok(curve)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            vocab_size: self.vocab_size,
            entity_count: self.entity_count,
        };
        let config = serde_json::to_value(&meta)
            .map_err(|e| Error::Checkpoint(format!("config serialization failed: {e}")))?;
        save_checkpoint(path, "predictor", &config, &self.vocab_hash, &self.params)
    }

    /// Loads a predictor checkpoint; when an expected vocabulary hash
    /// is given, a mismatch is a compatibility error.
    pub fn load(path: &Path, expected_vocab_hash: Option<&str>) -> Result<Self> {
        let (header, params) = load_checkpoint(path)?;
        if header.kind != "predictor" {
            return Err(Error::Checkpoint(format!(
                "{} holds a {:?} checkpoint, not a predictor",
                path.display(),
                header.kind
            )));
        }
        if let Some(expected) = expected_vocab_hash {
            if expected != header.vocab_hash {
                return Err(Error::Compatibility(format!(
                    "checkpoint was built on vocabulary {}, dataset hashes to {expected}",
                    header.vocab_hash
                )));
            }
        }
        let meta: CheckpointMeta = serde_json::from_value(header.config)
            .map_err(|e| Error::Checkpoint(format!("bad predictor config: {e}")))?;
        meta.config.validate()?;
        let emb = params.value("tok_emb")?;
        if emb.shape() != (meta.vocab_size, meta.config.d) {
            return Err(Error::Checkpoint(format!(
                "embedding table is {}x{}, config says {}x{}",
                emb.rows(),
                emb.cols(),
                meta.vocab_size,
                meta.config.d
            )));
        }
        Ok(PredictorModel {
            config: meta.config,
            vocab_size: meta.vocab_size,
            entity_count: meta.entity_count,
            vocab_hash: header.vocab_hash,
            params,
        })
    }
}
