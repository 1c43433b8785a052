//! Encoder-decoder question generators: bidirectional GRU/LSTM with
//! Bahdanau or Luong attention, optional pointer-copy and coverage, and a
//! Transformer with optional copy.

mod config;
pub mod certify;
mod encode;
mod layout;
mod rnn;
mod transformer;

#[cfg(test)]
pub(crate) mod tests;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use config::{Arch, AttentionKind, FeatureDims, ModelConfig};
pub use encode::{encode_example, EncodedExample};
pub(crate) use layout::Layout;
pub use rnn::attend;
pub use transformer::positional_encoding;

use crate::tensor::{Gradients, Graph, NodeId, ParamStore, Tensor, TensorError};
use crate::textprep::vocab::EOS;
use crate::textprep::{EmbeddingMatrix, Vocabularies};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("model configuration error: {0}")]
    Config(String),
    #[error("model input error: {0}")]
    Input(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Configuration, vocabularies and named parameters.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub params: ParamStore,
    pub(crate) layout: Layout,
}

/// Builds a model with Xavier-uniform weights, zero biases and the word
/// table copied from `embeddings` (seeded random rows when `None`).
pub fn init_params(
    config: &ModelConfig,
    vocabs: &Vocabularies,
    embeddings: Option<&EmbeddingMatrix>,
    seed: u64,
) -> Result<Model> {
    config.validate()?;
    let v = vocabs.words.len();
    let owned;
    let emb = match embeddings {
        Some(e) => e,
        None => {
            owned = EmbeddingMatrix::random(v, config.word_dim, seed ^ 0x5eed);
            &owned
        }
    };
    if emb.rows() != v || emb.dim() != config.word_dim {
        return Err(ModelError::Config(format!(
            "embedding matrix is {}x{}, vocabulary needs {}x{}",
            emb.rows(),
            emb.dim(),
            v,
            config.word_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamStore::new();
    let layout = Layout::build(config, vocabs, &mut |name, shape, init| {
        let value = match init {
            layout::Init::Xavier => Tensor::xavier(shape[0], shape[1], &mut rng),
            layout::Init::Zeros => Tensor::zeros(&shape),
            layout::Init::Ones => Tensor::filled(&shape, 1.0),
            layout::Init::WordTable => emb.table.clone(),
        };
        Ok(params.add(name, value))
    })?;
    Ok(Model {
        config: config.clone(),
        vocabs: vocabs.clone(),
        params,
        layout,
    })
}

impl Model {
    /// Rebuilds a model around an existing parameter store (e.g. from a
    /// checkpoint), checking every expected name and shape.
    pub fn from_params(config: ModelConfig, vocabs: Vocabularies, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config, &vocabs, &mut |name, shape, _| {
            let id = params
                .id(name)
                .ok_or_else(|| ModelError::Config(format!("missing parameter {name}")))?;
            if params.value(id).shape() != shape {
                return Err(ModelError::Config(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    params.value(id).shape()
                )));
            }
            Ok(id)
        })?;
        if layout.count != params.len() {
            return Err(ModelError::Config(format!(
                "store has {} parameters, configuration uses {}",
                params.len(),
                layout.count
            )));
        }
        Ok(Self {
            config,
            vocabs,
            params,
            layout,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabs.words.len()
    }

    pub fn encode_example(&self, ex: &crate::corpus::PreparedExample) -> EncodedExample {
        encode_example(&self.vocabs, ex, self.config.use_copy)
    }

    /// Encoder states for inference.
    pub fn encode(&self, ex: &EncodedExample) -> Result<EncoderStates> {
        ex.check()?;
        let mut g = Graph::new(&self.params);
        let enc = self.encode_in(&mut g, ex, None)?;
        Ok(match self.config.arch {
            Arch::Transformer => EncoderStates {
                h: g.value(enc.h).clone(),
                keys: None,
                init: DecoderState::Transformer { prefix: Vec::new() },
                src_ext: ex.src_ext.clone(),
                ext_size: self.vocab_size() + ex.oov.len(),
            },
            Arch::BiGru | Arch::BiLstm => {
                let h_len = self.config.hidden;
                let n = ex.len();
                EncoderStates {
                    h: g.value(enc.h).clone(),
                    keys: enc.keys.map(|k| g.value(k).clone()),
                    init: DecoderState::Rnn {
                        h: g.value(enc.init_h.expect("rnn")).clone(),
                        c: enc.init_c.map(|c| g.value(c).clone()),
                        ctx: Tensor::zeros(&[1, 2 * h_len]),
                        coverage: self.config.use_coverage.then(|| Tensor::zeros(&[1, n])),
                    },
                    src_ext: ex.src_ext.clone(),
                    ext_size: self.vocab_size() + ex.oov.len(),
                }
            }
        })
    }

    fn encode_in(&self, g: &mut Graph, ex: &EncodedExample, dropout: Option<&mut ChaCha8Rng>) -> Result<EncNodes> {
        let x = self.embed_source(g, ex)?;
        let x = self.dropout(g, x, dropout)?;
        match self.config.arch {
            Arch::Transformer => transformer::encode(g, self, x),
            _ => rnn::encode(g, self, x),
        }
    }

    fn embed_source(&self, g: &mut Graph, ex: &EncodedExample) -> Result<NodeId> {
        let l = &self.layout;
        let word = g.param(l.emb_word);
        let mut parts = vec![g.gather_rows(word, &ex.src)?];
        for (table, ids) in [
            (l.emb_ans, &ex.ans),
            (l.emb_case, &ex.case),
            (l.emb_pos, &ex.pos),
            (l.emb_ne, &ex.ne),
        ] {
            if let Some(t) = table {
                let t = g.param(t);
                parts.push(g.gather_rows(t, ids)?);
            }
        }
        Ok(g.concat_cols(&parts)?)
    }

    pub(crate) fn embed_targets(&self, g: &mut Graph, ids: &[usize]) -> Result<NodeId> {
        let v = self.vocab_size();
        let base: Vec<usize> = ids
            .iter()
            .map(|&t| if t < v { t } else { crate::textprep::vocab::UNK })
            .collect();
        let word = g.param(self.layout.emb_word);
        Ok(g.gather_rows(word, &base)?)
    }

    fn dropout(&self, g: &mut Graph, x: NodeId, rng: Option<&mut ChaCha8Rng>) -> Result<NodeId> {
        let p = self.config.dropout;
        match rng {
            Some(rng) if p > 0.0 => {
                let keep = 1.0 / (1.0 - p);
                let mask = (0..g.value(x).len())
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect();
                Ok(g.mask_mul(x, mask)?)
            }
            _ => Ok(x),
        }
    }

    /// One decoder step from encoder states (RNN architectures) or a
    /// re-run over the decoded prefix (Transformer).
    pub fn decode_step(&self, prev_token: usize, state: &DecoderState, enc: &EncoderStates) -> Result<StepOutput> {
        if prev_token >= enc.ext_size {
            return Err(ModelError::Input(format!(
                "token {prev_token} outside the extended vocabulary of {}",
                enc.ext_size
            )));
        }
        match (self.config.arch, state) {
            (Arch::Transformer, DecoderState::Transformer { prefix }) => {
                let mut prefix = prefix.clone();
                prefix.push(prev_token);
                self.transformer_step(&prefix, enc)
            }
            (Arch::Transformer, _) | (_, DecoderState::Transformer { .. }) => {
                Err(ModelError::Input("decoder state does not match the architecture".into()))
            }
            _ => rnn::infer_step(self, prev_token, state, enc),
        }
    }

    /// Distribution for the token following `prefix` (which starts with SOS).
    pub fn transformer_step(&self, prefix: &[usize], enc: &EncoderStates) -> Result<StepOutput> {
        if self.config.arch != Arch::Transformer {
            return Err(ModelError::Config("transformer_step on a recurrent model".into()));
        }
        if self.config.use_coverage {
            return Err(ModelError::Config("coverage is not available for the transformer".into()));
        }
        if prefix.is_empty() {
            return Err(ModelError::Input("prefix must start with SOS".into()));
        }
        transformer::infer_step(self, prefix, enc)
    }

    /// Builds the teacher-forced loss graph for one example. The returned
    /// node holds `Σ_t −ln P_t(y_t) + λ Σ_t cov_t`.
    pub(crate) fn loss_graph<'g>(
        &'g self,
        ex: &EncodedExample,
        dropout_seed: Option<u64>,
    ) -> Result<(Graph<'g>, NodeId, LossParts)> {
        ex.check()?;
        let mut g = Graph::new(&self.params);
        let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
        let enc = self.encode_in(&mut g, ex, rng.as_mut())?;
        let steps = match self.config.arch {
            Arch::Transformer => transformer::teacher_forced(&mut g, self, &enc, ex, rng.as_mut())?,
            _ => rnn::teacher_forced(&mut g, self, &enc, ex, rng.as_mut())?,
        };
        let targets = ex.tgt_out();
        let picks: Vec<NodeId> = steps
            .probs
            .iter()
            .zip(&targets)
            .map(|(&p, &t)| g.pick_rows(p, &[t]))
            .collect::<std::result::Result<_, _>>()?;
        let picked = g.concat_rows(&picks)?;
        let logs = g.ln(picked);
        let nll_sum = g.sum(logs);
        let nll = g.scale(nll_sum, -1.0);
        let mut parts = LossParts {
            nll: g.value(nll).data()[0],
            coverage: 0.0,
            tokens: targets.len(),
        };
        let mut total = nll;
        if !steps.cov_losses.is_empty() {
            let c = g.concat_rows(&steps.cov_losses)?;
            let c = g.sum(c);
            parts.coverage = g.value(c).data()[0];
            if self.config.coverage_weight != 0.0 {
                let wc = g.scale(c, self.config.coverage_weight);
                total = g.add(total, wc)?;
            }
        }
        Ok((g, total, parts))
    }

    /// Summed loss and gradients for one example.
    pub fn example_gradients(&self, ex: &EncodedExample, dropout_seed: Option<u64>) -> Result<(LossParts, Gradients)> {
        let (g, total, parts) = self.loss_graph(ex, dropout_seed)?;
        let grads = g.backward(total)?;
        Ok((parts, grads))
    }
}

/// Per-example sums making up the loss.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub nll: f64,
    pub coverage: f64,
    pub tokens: usize,
}

/// Mean NLL over all target tokens of the batch, plus λ times the mean
/// per-token coverage loss when coverage is enabled.
pub fn model_loss(model: &Model, batch: &[EncodedExample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(ModelError::Input("empty batch".into()));
    }
    let mut nll = 0.0;
    let mut cov = 0.0;
    let mut tokens = 0;
    for ex in batch {
        let (_, _, p) = model.loss_graph(ex, None)?;
        nll += p.nll;
        cov += p.coverage;
        tokens += p.tokens;
    }
    let lambda = if model.config.use_coverage {
        model.config.coverage_weight
    } else {
        0.0
    };
    Ok((nll + lambda * cov) / tokens as f64)
}

/// Loss and dense gradients of [`model_loss`], for gradient checking.
pub fn model_loss_and_grads(model: &Model, params: &ParamStore, batch: &[EncodedExample]) -> Result<(f64, Vec<Tensor>)> {
    let view = Model {
        config: model.config.clone(),
        vocabs: model.vocabs.clone(),
        params: params.clone(),
        layout: model.layout.clone(),
    };
    let mut total = 0.0;
    let mut tokens = 0;
    let mut acc: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
    for ex in batch {
        let (parts, grads) = view.example_gradients(ex, None)?;
        let lambda = if view.config.use_coverage {
            view.config.coverage_weight
        } else {
            0.0
        };
        total += parts.nll + lambda * parts.coverage;
        tokens += parts.tokens;
        for (a, g) in acc.iter_mut().zip(grads.by_param) {
            if let Some(g) = g {
                a.add_assign(&g);
            }
        }
    }
    let scale = 1.0 / tokens as f64;
    acc.iter_mut().for_each(|a| a.scale_assign(scale));
    Ok((total * scale, acc))
}

/// Graph handles produced by the encoder.
pub(crate) struct EncNodes {
    /// `[n, width]` encoder outputs.
    pub h: NodeId,
    /// Precomputed attention keys (RNN only).
    pub keys: Option<NodeId>,
    pub init_h: Option<NodeId>,
    pub init_c: Option<NodeId>,
}

/// Encoder outputs detached from any graph, for decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderStates {
    pub h: Tensor,
    pub(crate) keys: Option<Tensor>,
    pub init: DecoderState,
    /// Source tokens in the extended vocabulary.
    pub src_ext: Vec<usize>,
    pub ext_size: usize,
}

impl EncoderStates {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DecoderState {
    Rnn {
        h: Tensor,
        c: Option<Tensor>,
        /// Previous attention context, fed back as input.
        ctx: Tensor,
        /// Running attention sum over previous steps.
        coverage: Option<Tensor>,
    },
    Transformer {
        prefix: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Distribution over the extended vocabulary.
    pub probs: Vec<f64>,
    pub attention: Vec<f64>,
    pub p_gen: Option<f64>,
    /// Coverage vector used at this step (sum of earlier attention).
    pub coverage: Option<Vec<f64>>,
    pub coverage_loss: Option<f64>,
    pub state: DecoderState,
}

impl StepOutput {
    pub fn eos_prob(&self) -> f64 {
        self.probs[EOS]
    }
}

/// Per-step graph handles of a teacher-forced pass.
pub(crate) struct Steps {
    pub probs: Vec<NodeId>,
    pub cov_losses: Vec<NodeId>,
}

/// Mixes the vocabulary distribution with copy attention:
/// `p_gen·P_vocab` padded to `ext` columns plus `(1−p_gen)·a` scattered by
/// source id.
pub(crate) fn copy_mix(
    g: &mut Graph,
    p_vocab: NodeId,
    attn: NodeId,
    p_gen: NodeId,
    src_ext: &[usize],
    ext: usize,
) -> Result<NodeId> {
    let v = g.value(p_vocab).cols();
    let rows = g.value(p_vocab).rows();
    let gen = g.mul_col(p_vocab, p_gen)?;
    let gen = if ext > v {
        let idx: Vec<usize> = (0..v).collect();
        g.scatter_cols(gen, &idx, ext)?
    } else {
        gen
    };
    let one_minus = g.one_minus(p_gen);
    let copied = g.mul_col(attn, one_minus)?;
    let copied = g.scatter_cols(copied, src_ext, ext)?;
    debug_assert_eq!(g.value(copied).rows(), rows);
    Ok(g.add(gen, copied)?)
}

/// Reads a `[1, n]` graph value back as a vector.
fn row_vec(g: &Graph, n: NodeId) -> Vec<f64> {
    g.value(n).data().to_vec()
}
