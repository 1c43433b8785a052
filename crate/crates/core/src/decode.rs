//! Greedy and beam-search decoding, and replacement of unknown tokens by
//! the most-attended source word.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PreparedExample;
use crate::metrics::{score_corpus, MetricReport, DEFAULT_BETA};
use crate::models::{DecoderState, EncodedExample, EncoderStates, Model, ModelError};
use crate::textprep::vocab::{EOS, SOS, UNK};

pub const DEFAULT_BEAM: usize = 5;
pub const DEFAULT_MAX_LEN: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("decoding configuration error: {0}")]
    Config(String),
    #[error("no attention recorded for output step {step} ({available} available)")]
    MissingAttention { step: usize, available: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, DecodeError>;

/// One decoder step: a distribution over output ids and the attention
/// over source positions used to produce it.
#[derive(Debug, Clone)]
pub struct Step<S> {
    pub probs: Vec<f64>,
    pub attention: Vec<f64>,
    pub state: S,
}

/// Anything that can be decoded token by token.
pub trait StepModel {
    type State: Clone;

    fn initial_state(&self) -> Self::State;
    fn step(&self, prev: usize, state: &Self::State) -> Result<Step<Self::State>>;

    fn sos(&self) -> usize {
        SOS
    }

    fn eos(&self) -> usize {
        EOS
    }
}

/// A trained model bound to the encoder states of one source.
pub struct BoundModel<'a> {
    pub model: &'a Model,
    pub enc: EncoderStates,
}

impl<'a> BoundModel<'a> {
    pub fn new(model: &'a Model, ex: &EncodedExample) -> Result<Self> {
        Ok(Self {
            model,
            enc: model.encode(ex)?,
        })
    }
}

impl StepModel for BoundModel<'_> {
    type State = DecoderState;

    fn initial_state(&self) -> DecoderState {
        self.enc.init.clone()
    }

    fn step(&self, prev: usize, state: &DecoderState) -> Result<Step<DecoderState>> {
        let out = self.model.decode_step(prev, state, &self.enc)?;
        Ok(Step {
            probs: out.probs,
            attention: out.attention,
            state: out.state,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Output ids (extended vocabulary), without the final EOS.
    pub tokens: Vec<usize>,
    /// Sum of step log-probabilities, including the EOS step when completed.
    pub score: f64,
    /// Attention used to emit each token in `tokens`.
    pub attention: Vec<Vec<f64>>,
    pub completed: bool,
}

impl Hypothesis {
    /// Decoding steps taken (EOS included).
    pub fn steps(&self) -> usize {
        self.tokens.len() + usize::from(self.completed)
    }

    /// `score / steps^penalty`; the raw score when the penalty is 0.
    pub fn normalized_score(&self, length_penalty: f64) -> f64 {
        if length_penalty == 0.0 {
            self.score
        } else {
            self.score / (self.steps().max(1) as f64).powf(length_penalty)
        }
    }

    fn key(&self, eos: usize) -> Vec<usize> {
        let mut k = self.tokens.clone();
        if self.completed {
            k.push(eos);
        }
        k
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len == 0 {
        return Err(DecodeError::Config("max_len must be at least 1".into()));
    }
    Ok(())
}

/// Picks the most probable token at every step (ties to the smaller id)
/// until EOS or `max_len` steps.
pub fn greedy_decode<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis> {
    check_max_len(max_len)?;
    let mut hyp = Hypothesis {
        tokens: Vec::new(),
        score: 0.0,
        attention: Vec::new(),
        completed: false,
    };
    let mut state = model.initial_state();
    let mut prev = model.sos();
    for _ in 0..max_len {
        let step = model.step(prev, &state)?;
        let best = crate::tensor::argmax(&step.probs);
        hyp.score += step.probs[best].ln();
        if best == model.eos() {
            hyp.completed = true;
            break;
        }
        hyp.tokens.push(best);
        hyp.attention.push(step.attention);
        state = step.state;
        prev = best;
    }
    Ok(hyp)
}

struct Live<S> {
    hyp: Hypothesis,
    state: S,
}

/// Orders by score (higher first), then by token sequence.
fn rank(a: &Hypothesis, b: &Hypothesis, penalty: f64, eos: usize) -> Ordering {
    b.normalized_score(penalty)
        .total_cmp(&a.normalized_score(penalty))
        .then_with(|| a.key(eos).cmp(&b.key(eos)))
}

/// The `k` most probable ids of `probs`, ties to the smaller id.
fn top_k(probs: &[f64], k: usize) -> Vec<usize> {
    let cmp = |a: &usize, b: &usize| probs[*b].total_cmp(&probs[*a]).then(a.cmp(b));
    let mut ids: Vec<usize> = (0..probs.len()).collect();
    if k < ids.len() {
        ids.select_nth_unstable_by(k, cmp);
        ids.truncate(k);
    }
    ids.sort_by(cmp);
    ids
}

/// Beam search over `max_len` steps. At every step the `beam_size` best
/// extensions of all live hypotheses are kept; those ending in EOS are
/// set aside as completed. Completed hypotheses are returned ranked by
/// `score / steps^length_penalty`, ties by token sequence. If none
/// completed, the surviving live hypotheses are returned instead.
pub fn beam_search<M: StepModel>(
    model: &M,
    beam_size: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Vec<Hypothesis>> {
    check_max_len(max_len)?;
    if beam_size == 0 {
        return Err(DecodeError::Config("beam size must be at least 1".into()));
    }
    let eos = model.eos();
    let mut live = vec![Live {
        hyp: Hypothesis {
            tokens: Vec::new(),
            score: 0.0,
            attention: Vec::new(),
            completed: false,
        },
        state: model.initial_state(),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        let mut candidates: Vec<(Hypothesis, usize, usize)> = Vec::new();
        let mut steps = Vec::with_capacity(live.len());
        for (b, l) in live.iter().enumerate() {
            let prev = l.hyp.tokens.last().copied().unwrap_or_else(|| model.sos());
            let step = model.step(prev, &l.state)?;
            for w in top_k(&step.probs, beam_size) {
                let mut h = Hypothesis {
                    tokens: l.hyp.tokens.clone(),
                    score: l.hyp.score + step.probs[w].ln(),
                    attention: l.hyp.attention.clone(),
                    completed: w == eos,
                };
                if !h.completed {
                    h.tokens.push(w);
                    h.attention.push(step.attention.clone());
                }
                candidates.push((h, b, w));
            }
            steps.push(step);
        }
        candidates.sort_by(|a, b| rank(&a.0, &b.0, 0.0, eos));
        candidates.truncate(beam_size);
        let mut next = Vec::new();
        for (h, b, _) in candidates {
            if h.completed {
                finished.push(h);
            } else {
                next.push(Live {
                    hyp: h,
                    state: steps[b].state.clone(),
                });
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
    }
    let mut out = if finished.is_empty() {
        live.into_iter().map(|l| l.hyp).collect()
    } else {
        finished
    };
    out.sort_by(|a, b| rank(a, b, length_penalty, eos));
    Ok(out)
}

/// Replaces every UNK output with the source token that received the
/// highest attention at that step (ties to the smaller position); other
/// ids are resolved through `surface`.
pub fn replace_unk(hyp: &Hypothesis, source: &[String], surface: impl Fn(usize) -> String) -> Result<Vec<String>> {
    hyp.tokens
        .iter()
        .enumerate()
        .map(|(t, &id)| {
            if id != UNK {
                return Ok(surface(id));
            }
            let att = hyp.attention.get(t).ok_or(DecodeError::MissingAttention {
                step: t,
                available: hyp.attention.len(),
            })?;
            if att.is_empty() || att.len() > source.len() {
                return Err(DecodeError::MissingAttention {
                    step: t,
                    available: hyp.attention.len(),
                });
            }
            Ok(source[crate::tensor::argmax(att)].clone())
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerateOptions {
    pub beam: usize,
    pub max_len: usize,
    pub length_penalty: f64,
    pub replace_unk: bool,
}

impl Default for GenerateOptions {
    fn default() -> Self {
        Self {
            beam: DEFAULT_BEAM,
            max_len: DEFAULT_MAX_LEN,
            length_penalty: 0.0,
            replace_unk: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub words: Vec<String>,
    pub hypothesis: Hypothesis,
}

/// Decodes one prepared example into surface words.
pub fn generate(model: &Model, ex: &PreparedExample, opts: &GenerateOptions) -> Result<Generated> {
    let enc = model.encode_example(ex);
    let bound = BoundModel::new(model, &enc)?;
    let hyp = if opts.beam == 1 {
        greedy_decode(&bound, opts.max_len)?
    } else {
        beam_search(&bound, opts.beam, opts.max_len, opts.length_penalty)?
            .into_iter()
            .next()
            .expect("beam search returns at least one hypothesis")
    };
    let surface = |id: usize| enc.token_str(&model.vocabs, id).to_string();
    let words = if opts.replace_unk {
        replace_unk(&hyp, &enc.src_tokens, surface)?
    } else {
        hyp.tokens.iter().map(|&id| surface(id)).collect()
    };
    Ok(Generated { words, hypothesis: hyp })
}

/// Decodes every example in parallel; output order follows input order.
pub fn generate_all(model: &Model, examples: &[PreparedExample], opts: &GenerateOptions) -> Result<Vec<Generated>> {
    examples.par_iter().map(|ex| generate(model, ex, opts)).collect()
}

/// Generates for every example and scores the outputs against the
/// examples' target questions (both sides lowercased).
pub fn evaluate_generation(
    model: &Model,
    examples: &[PreparedExample],
    opts: &GenerateOptions,
) -> Result<(MetricReport, Vec<Generated>)> {
    let generated = generate_all(model, examples, opts)?;
    let lower = |ws: &[String]| ws.iter().map(|w| w.to_lowercase()).collect::<Vec<_>>();
    let hyps: Vec<Vec<String>> = generated.iter().map(|g| lower(&g.words)).collect();
    let refs: Vec<Vec<String>> = examples.iter().map(|e| lower(&e.tgt)).collect();
    let report = score_corpus(&hyps, &refs, DEFAULT_BETA)
        .map_err(|e| DecodeError::Config(format!("cannot score generations: {e}")))?;
    Ok((report, generated))
}
