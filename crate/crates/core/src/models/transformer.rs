use rand_chacha::ChaCha8Rng;

use super::layout::{Ffn, Mha, Norm, TfLayout};
use super::{copy_mix, row_vec, DecoderState, EncNodes, EncodedExample, EncoderStates, Model, Result, StepOutput, Steps};
use crate::tensor::{Graph, NodeId, Tensor};

fn layout(m: &Model) -> &TfLayout {
    m.layout.tf.as_ref().expect("transformer layout")
}

/// Sinusoidal position table `[n, d]`.
pub fn positional_encoding(n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for j in 0..d {
            let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
            let angle = pos as f64 / rate;
            data.push(if j % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    Tensor::new(vec![n, d], data).expect("shape")
}

fn add_positions(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let (n, d) = (g.value(x).rows(), g.value(x).cols());
    let pe = g.constant(positional_encoding(n, d));
    Ok(g.add(x, pe)?)
}

fn norm(g: &mut Graph, p: &Norm, x: NodeId) -> Result<NodeId> {
    let gain = g.param(p.gain);
    let bias = g.param(p.bias);
    Ok(g.layer_norm(x, gain, bias)?)
}

fn ffn(g: &mut Graph, p: &Ffn, x: NodeId) -> Result<NodeId> {
    let a = g.linear(x, p.w1, Some(p.b1))?;
    let a = g.relu(a);
    Ok(g.linear(a, p.w2, Some(p.b2))?)
}

/// Multi-head scaled dot-product attention. Returns the projected output
/// and the attention weights averaged over heads.
fn mha(g: &mut Graph, p: &Mha, heads: usize, q_in: NodeId, kv: NodeId, causal: bool) -> Result<(NodeId, NodeId)> {
    let d = g.value(q_in).cols();
    let dk = d / heads;
    let q = g.linear(q_in, p.wq, None)?;
    let k = g.linear(kv, p.wk, None)?;
    let v = g.linear(kv, p.wv, None)?;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut outs = Vec::with_capacity(heads);
    let mut avg: Option<NodeId> = None;
    for h in 0..heads {
        let qh = g.slice_cols(q, h * dk, dk)?;
        let kh = g.slice_cols(k, h * dk, dk)?;
        let vh = g.slice_cols(v, h * dk, dk)?;
        let kt = g.transpose(kh);
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, scale);
        let a = g.softmax_rows(s, causal)?;
        outs.push(g.matmul(a, vh)?);
        avg = Some(match avg {
            Some(acc) => g.add(acc, a)?,
            None => a,
        });
    }
    let joined = g.concat_cols(&outs)?;
    let out = g.linear(joined, p.wo, Some(p.bo))?;
    let avg = g.scale(avg.expect("heads >= 1"), 1.0 / heads as f64);
    Ok((out, avg))
}

pub(super) fn encode(g: &mut Graph, m: &Model, x: NodeId) -> Result<EncNodes> {
    let l = layout(m);
    let z = g.linear(x, l.enc_in.0, Some(l.enc_in.1))?;
    let mut z = add_positions(g, z)?;
    for layer in &l.enc {
        let (a, _) = mha(g, &layer.attn, m.config.heads, z, z, false)?;
        let r = g.add(z, a)?;
        z = norm(g, &layer.ln1, r)?;
        let f = ffn(g, &layer.ffn, z)?;
        let r = g.add(z, f)?;
        z = norm(g, &layer.ln2, r)?;
    }
    Ok(EncNodes {
        h: z,
        keys: None,
        init_h: None,
        init_c: None,
    })
}

struct DecoderOut {
    /// `[t, ext]`
    probs: NodeId,
    /// `[t, n]` final-layer cross-attention averaged over heads.
    attn: NodeId,
    p_gen: Option<NodeId>,
}

fn decode(
    g: &mut Graph,
    m: &Model,
    enc: NodeId,
    prefix: &[usize],
    src_ext: &[usize],
    ext: usize,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<DecoderOut> {
    let l = layout(m);
    let heads = m.config.heads;
    let y = m.embed_targets(g, prefix)?;
    let y_in = g.linear(y, l.dec_in.0, Some(l.dec_in.1))?;
    let y_in = m.dropout(g, y_in, rng)?;
    let mut z = add_positions(g, y_in)?;
    let mut cross = None;
    for layer in &l.dec {
        let (a, _) = mha(g, &layer.self_attn, heads, z, z, true)?;
        let r = g.add(z, a)?;
        z = norm(g, &layer.ln1, r)?;
        let (c, attn) = mha(g, &layer.cross, heads, z, enc, false)?;
        cross = Some(attn);
        let r = g.add(z, c)?;
        z = norm(g, &layer.ln2, r)?;
        let f = ffn(g, &layer.ffn, z)?;
        let r = g.add(z, f)?;
        z = norm(g, &layer.ln3, r)?;
    }
    let attn = cross.expect("layers >= 1");
    let logits = g.linear(z, m.layout.out_w, Some(m.layout.out_b))?;
    let p_vocab = g.softmax_rows(logits, false)?;
    match m.layout.copy {
        Some((w, b)) => {
            let ctx = g.matmul(attn, enc)?;
            let gate_in = g.concat_cols(&[ctx, z, y_in])?;
            let pre = g.linear(gate_in, w, Some(b))?;
            let p_gen = g.sigmoid(pre);
            let probs = copy_mix(g, p_vocab, attn, p_gen, src_ext, ext)?;
            Ok(DecoderOut {
                probs,
                attn,
                p_gen: Some(p_gen),
            })
        }
        None => Ok(DecoderOut {
            probs: p_vocab,
            attn,
            p_gen: None,
        }),
    }
}

pub(super) fn teacher_forced(
    g: &mut Graph,
    m: &Model,
    enc: &EncNodes,
    ex: &EncodedExample,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Steps> {
    let inputs = ex.tgt_in();
    let ext = m.vocab_size() + ex.oov.len();
    let out = decode(g, m, enc.h, &inputs, &ex.src_ext, ext, rng)?;
    let probs = (0..inputs.len())
        .map(|t| g.row(out.probs, t))
        .collect::<std::result::Result<_, _>>()?;
    Ok(Steps {
        probs,
        cov_losses: Vec::new(),
    })
}

pub(super) fn infer_step(m: &Model, prefix: &[usize], enc: &EncoderStates) -> Result<StepOutput> {
    let mut g = Graph::new(&m.params);
    let h = g.constant(enc.h.clone());
    let out = decode(&mut g, m, h, prefix, &enc.src_ext, enc.ext_size, None)?;
    let last = prefix.len() - 1;
    let probs = g.row(out.probs, last)?;
    let attn = g.row(out.attn, last)?;
    Ok(StepOutput {
        probs: row_vec(&g, probs),
        attention: row_vec(&g, attn),
        p_gen: out.p_gen.map(|p| g.value(p).data()[last]),
        coverage: None,
        coverage_loss: None,
        state: DecoderState::Transformer {
            prefix: prefix.to_vec(),
        },
    })
}
