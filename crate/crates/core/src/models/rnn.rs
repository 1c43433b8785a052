use rand_chacha::ChaCha8Rng;

use super::layout::{Attention, Cell, RnnLayout};
use super::{copy_mix, row_vec, Arch, DecoderState, EncNodes, EncodedExample, EncoderStates, Model, ModelError, Result, StepOutput, Steps};
use crate::tensor::{Graph, NodeId, Tensor};

fn layout(m: &Model) -> &RnnLayout {
    m.layout.rnn.as_ref().expect("recurrent layout")
}

/// One cell update from the precomputed input projection `xw` (`[1, G·h]`).
/// Returns the new hidden state and, for the LSTM, the new cell state.
fn cell_step(
    g: &mut Graph,
    arch: Arch,
    cell: &Cell,
    hidden: usize,
    xw: NodeId,
    h: NodeId,
    c: Option<NodeId>,
) -> Result<(NodeId, Option<NodeId>)> {
    let u = g.param(cell.u);
    if arch == Arch::BiLstm {
        let rec = g.matmul(h, u)?;
        let a = g.add(xw, rec)?;
        let ifo = g.slice_cols(a, 0, 3 * hidden)?;
        let ifo = g.sigmoid(ifo);
        let i = g.slice_cols(ifo, 0, hidden)?;
        let f = g.slice_cols(ifo, hidden, hidden)?;
        let o = g.slice_cols(ifo, 2 * hidden, hidden)?;
        let cand = g.slice_cols(a, 3 * hidden, hidden)?;
        let cand = g.tanh(cand);
        let c = c.expect("lstm cell state");
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new);
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, Some(c_new)))
    } else {
        let xrz = g.slice_cols(xw, 0, 2 * hidden)?;
        let xh = g.slice_cols(xw, 2 * hidden, hidden)?;
        let rec = g.matmul(h, u)?;
        let rz = g.add(xrz, rec)?;
        let rz = g.sigmoid(rz);
        let r = g.slice_cols(rz, 0, hidden)?;
        let z = g.slice_cols(rz, hidden, hidden)?;
        let rh = g.mul(r, h)?;
        let u_h = g.param(cell.u_h.expect("gru candidate weights"));
        let rec_h = g.matmul(rh, u_h)?;
        let pre = g.add(xh, rec_h)?;
        let cand = g.tanh(pre);
        // z·h + (1 − z)·h̃ = h̃ + z·(h − h̃)
        let diff = g.sub(h, cand)?;
        let zd = g.mul(z, diff)?;
        Ok((g.add(cand, zd)?, None))
    }
}

/// Runs a cell over every row of `x`, in reverse when `reverse`. Returns the
/// hidden states in source order and the last processed cell state.
fn run_direction(
    g: &mut Graph,
    arch: Arch,
    cell: &Cell,
    hidden: usize,
    x: NodeId,
    reverse: bool,
) -> Result<(Vec<NodeId>, Option<NodeId>)> {
    let n = g.value(x).rows();
    let xw = g.linear(x, cell.w_in, Some(cell.b))?;
    let mut h = g.constant(Tensor::zeros(&[1, hidden]));
    let mut c = (arch == Arch::BiLstm).then(|| g.constant(Tensor::zeros(&[1, hidden])));
    let mut states = vec![h; n];
    let order: Vec<usize> = if reverse { (0..n).rev().collect() } else { (0..n).collect() };
    for i in order {
        let xi = g.row(xw, i)?;
        let (h2, c2) = cell_step(g, arch, cell, hidden, xi, h, c)?;
        h = h2;
        c = c2;
        states[i] = h;
    }
    Ok((states, c))
}

pub(super) fn encode(g: &mut Graph, m: &Model, x: NodeId) -> Result<EncNodes> {
    let l = layout(m);
    let (arch, hidden) = (m.config.arch, m.config.hidden);
    let n = g.value(x).rows();
    let mut input = x;
    let mut ends = None;
    for (fwd, bwd) in &l.enc {
        let (fs, fc) = run_direction(g, arch, fwd, hidden, input, false)?;
        let (bs, bc) = run_direction(g, arch, bwd, hidden, input, true)?;
        let f = g.concat_rows(&fs)?;
        let b = g.concat_rows(&bs)?;
        input = g.concat_cols(&[f, b])?;
        ends = Some((fs[n - 1], bs[0], fc, bc));
    }
    let (f_last, b_first, fc, bc) = ends.expect("at least one layer");
    let fin = g.concat_cols(&[f_last, b_first])?;
    let init = g.linear(fin, l.bridge_h.0, Some(l.bridge_h.1))?;
    let init_h = g.tanh(init);
    let init_c = match (l.bridge_c, fc, bc) {
        (Some((w, b)), Some(fc), Some(bc)) => {
            let cells = g.concat_cols(&[fc, bc])?;
            Some(g.linear(cells, w, Some(b))?)
        }
        _ => None,
    };
    let keys = attention_keys(g, &l.att, input)?;
    Ok(EncNodes {
        h: input,
        keys: Some(keys),
        init_h: Some(init_h),
        init_c,
    })
}

/// Bahdanau: `H·W_h` (`[n, a]`). Luong: `W·Hᵀ` (`[h, n]`).
fn attention_keys(g: &mut Graph, att: &Attention, h: NodeId) -> Result<NodeId> {
    match att {
        Attention::Bahdanau { w_h, .. } => {
            let w = g.param(*w_h);
            Ok(g.matmul(h, w)?)
        }
        Attention::Luong { w, .. } => {
            let w = g.param(*w);
            let ht = g.transpose(h);
            Ok(g.matmul(w, ht)?)
        }
    }
}

/// Attention weights `[1, n]` and context `[1, width]` for state `s`.
fn attend_nodes(
    g: &mut Graph,
    att: &Attention,
    s: NodeId,
    h: NodeId,
    keys: NodeId,
    coverage: Option<NodeId>,
) -> Result<(NodeId, NodeId)> {
    let scores = match att {
        Attention::Bahdanau { w_s, b, v, w_c, .. } => {
            let q = g.linear(s, *w_s, Some(*b))?;
            let mut e = g.add_row(keys, q)?;
            if let (Some(cov), Some(w_c)) = (coverage, w_c) {
                let wc = g.param(*w_c);
                let col = g.transpose(cov);
                let term = g.matmul(col, wc)?;
                e = g.add(e, term)?;
            }
            let t = g.tanh(e);
            let v = g.param(*v);
            let col = g.matmul(t, v)?;
            g.transpose(col)
        }
        Attention::Luong { w_c, .. } => {
            let mut e = g.matmul(s, keys)?;
            if let (Some(cov), Some(w_c)) = (coverage, w_c) {
                let wc = g.param(*w_c);
                let term = g.mul_col(cov, wc)?;
                e = g.add(e, term)?;
            }
            e
        }
    };
    let a = g.softmax_rows(scores, false)?;
    let ctx = g.matmul(a, h)?;
    Ok((ctx, a))
}

struct State {
    h: NodeId,
    c: Option<NodeId>,
    ctx: NodeId,
    cov: Option<NodeId>,
}

struct StepNodes {
    probs: NodeId,
    attn: NodeId,
    p_gen: Option<NodeId>,
    cov_loss: Option<NodeId>,
    state: State,
}

struct EncCtx<'a> {
    h: NodeId,
    keys: NodeId,
    src_ext: &'a [usize],
    ext: usize,
}

fn decoder_step(
    g: &mut Graph,
    m: &Model,
    enc: &EncCtx,
    y_emb: NodeId,
    st: &State,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<StepNodes> {
    let l = layout(m);
    let cfg = &m.config;
    let inp = g.concat_cols(&[y_emb, st.ctx])?;
    let xw = g.linear(inp, l.dec.w_in, Some(l.dec.b))?;
    let (h, c) = cell_step(g, cfg.arch, &l.dec, cfg.hidden, xw, st.h, st.c)?;
    let score_cov = if cfg.coverage_in_score { st.cov } else { None };
    let (ctx, attn) = attend_nodes(g, &l.att, h, enc.h, enc.keys, score_cov)?;
    let joined = g.concat_cols(&[h, ctx])?;
    let comb = g.linear(joined, l.comb_w, Some(l.comb_b))?;
    let comb = g.tanh(comb);
    let comb = m.dropout(g, comb, rng)?;
    let logits = g.linear(comb, m.layout.out_w, Some(m.layout.out_b))?;
    let p_vocab = g.softmax_rows(logits, false)?;
    let (probs, p_gen) = match m.layout.copy {
        Some((w, b)) => {
            let gate_in = g.concat_cols(&[ctx, h, y_emb])?;
            let pre = g.linear(gate_in, w, Some(b))?;
            let p_gen = g.sigmoid(pre);
            (copy_mix(g, p_vocab, attn, p_gen, enc.src_ext, enc.ext)?, Some(p_gen))
        }
        None => (p_vocab, None),
    };
    let (cov_loss, cov) = match st.cov {
        Some(cov) => {
            let overlap = g.min(attn, cov)?;
            let loss = g.sum(overlap);
            (Some(loss), Some(g.add(cov, attn)?))
        }
        None => (None, None),
    };
    Ok(StepNodes {
        probs,
        attn,
        p_gen,
        cov_loss,
        state: State { h, c, ctx, cov },
    })
}

pub(super) fn teacher_forced(
    g: &mut Graph,
    m: &Model,
    enc: &EncNodes,
    ex: &EncodedExample,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Steps> {
    let n = ex.len();
    let ctx = EncCtx {
        h: enc.h,
        keys: enc.keys.expect("rnn keys"),
        src_ext: &ex.src_ext,
        ext: m.vocab_size() + ex.oov.len(),
    };
    let inputs = ex.tgt_in();
    let emb = m.embed_targets(g, &inputs)?;
    let zeros_ctx = g.constant(Tensor::zeros(&[1, 2 * m.config.hidden]));
    let mut st = State {
        h: enc.init_h.expect("rnn init"),
        c: enc.init_c,
        ctx: zeros_ctx,
        cov: m.config.use_coverage.then(|| g.constant(Tensor::zeros(&[1, n]))),
    };
    let mut steps = Steps {
        probs: Vec::with_capacity(inputs.len()),
        cov_losses: Vec::new(),
    };
    for t in 0..inputs.len() {
        let y = g.row(emb, t)?;
        let out = decoder_step(g, m, &ctx, y, &st, rng.as_deref_mut())?;
        steps.probs.push(out.probs);
        steps.cov_losses.extend(out.cov_loss);
        st = out.state;
    }
    Ok(steps)
}

pub(super) fn infer_step(m: &Model, prev: usize, state: &DecoderState, enc: &EncoderStates) -> Result<StepOutput> {
    let DecoderState::Rnn { h, c, ctx, coverage } = state else {
        return Err(ModelError::Input("expected a recurrent decoder state".into()));
    };
    let mut g = Graph::new(&m.params);
    let keys = enc
        .keys
        .clone()
        .ok_or_else(|| ModelError::Input("encoder states lack attention keys".into()))?;
    let enc_ctx = EncCtx {
        h: g.constant(enc.h.clone()),
        keys: g.constant(keys),
        src_ext: &enc.src_ext,
        ext: enc.ext_size,
    };
    let st = State {
        h: g.constant(h.clone()),
        c: c.clone().map(|c| g.constant(c)),
        ctx: g.constant(ctx.clone()),
        cov: coverage.clone().map(|c| g.constant(c)),
    };
    let y = m.embed_targets(&mut g, &[prev])?;
    let out = decoder_step(&mut g, m, &enc_ctx, y, &st, None)?;
    Ok(StepOutput {
        probs: row_vec(&g, out.probs),
        attention: row_vec(&g, out.attn),
        p_gen: out.p_gen.map(|p| g.value(p).data()[0]),
        coverage: coverage.as_ref().map(|c| c.data().to_vec()),
        coverage_loss: out.cov_loss.map(|c| g.value(c).data()[0]),
        state: DecoderState::Rnn {
            h: g.value(out.state.h).clone(),
            c: out.state.c.map(|c| g.value(c).clone()),
            ctx: g.value(out.state.ctx).clone(),
            coverage: out.state.cov.map(|c| g.value(c).clone()),
        },
    })
}

/// Attention of decoder state `s` (`[1, hidden]`) over encoder outputs `h`
/// (`[n, 2·hidden]`), with an optional coverage row `[1, n]`. Returns the
/// context vector and the weights.
pub fn attend(m: &Model, s: &Tensor, h: &Tensor, coverage: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
    let l = m
        .layout
        .rnn
        .as_ref()
        .ok_or_else(|| ModelError::Config("attend needs a recurrent model".into()))?;
    let mut g = Graph::new(&m.params);
    let hn = g.constant(h.clone());
    let keys = attention_keys(&mut g, &l.att, hn)?;
    let sn = g.constant(s.clone());
    let cov = coverage.map(|c| g.constant(c.clone()));
    let cov = if m.config.coverage_in_score { cov } else { None };
    let (ctx, a) = attend_nodes(&mut g, &l.att, sn, hn, keys, cov)?;
    Ok((g.value(ctx).clone(), g.value(a).clone()))
}
