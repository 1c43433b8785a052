use super::*;
use crate::textprep::vocab::{SOS, UNK};

pub(crate) use super::certify::{toy_example, toy_vocabs};
use super::certify::{cell_config, cell_name, certify};

pub(crate) fn small_config(arch: Arch, attention: AttentionKind, copy: bool, coverage: bool) -> ModelConfig {
    cell_config(arch, attention, copy, coverage, 4)
}

pub(crate) fn cells() -> Vec<ModelConfig> {
    super::certify::cells(4)
}

#[test]
fn every_cell_passes_grad_check() {
    for cfg in super::certify::cells(8) {
        let r = certify(&cfg, 2).unwrap();
        let worst = r.worst_param().unwrap();
        assert!(r.passed, "{}: {} {:e} {:?}", cell_name(&cfg), worst.name, worst.max_rel_error, worst.worst);
    }
}

#[test]
fn init_is_deterministic_and_named() {
    let cfg = small_config(Arch::BiLstm, AttentionKind::Luong, true, true);
    let a = init_params(&cfg, &toy_vocabs(), None, 3).unwrap();
    let b = init_params(&cfg, &toy_vocabs(), None, 3).unwrap();
    let names: Vec<&str> = a.params.iter().map(|p| p.name.as_str()).collect();
    assert_eq!(names, b.params.iter().map(|p| p.name.as_str()).collect::<Vec<_>>());
    for (x, y) in a.params.iter().zip(b.params.iter()) {
        assert_eq!(x.value, y.value);
    }
    let rebuilt = Model::from_params(cfg, toy_vocabs(), a.params.clone()).unwrap();
    assert_eq!(rebuilt.params.len(), a.params.len());
}

#[test]
fn word_table_comes_from_embeddings() {
    let cfg = small_config(Arch::BiGru, AttentionKind::Bahdanau, false, false);
    let vocabs = toy_vocabs();
    let emb = EmbeddingMatrix::random(vocabs.words.len(), 5, 77);
    let m = init_params(&cfg, &vocabs, Some(&emb), 0).unwrap();
    assert_eq!(m.params.by_name("emb.word").unwrap().value, emb.table);
    let wrong = EmbeddingMatrix::random(vocabs.words.len(), 6, 77);
    assert!(matches!(init_params(&cfg, &vocabs, Some(&wrong), 0), Err(ModelError::Config(_))));
}

fn run_steps(m: &Model, ex: &EncodedExample, tokens: &[usize]) -> Vec<StepOutput> {
    let enc = m.encode(ex).unwrap();
    let mut state = enc.init.clone();
    let mut prev = SOS;
    let mut outs = Vec::new();
    for &t in tokens {
        let out = m.decode_step(prev, &state, &enc).unwrap();
        state = out.state.clone();
        prev = t;
        outs.push(out);
    }
    outs
}

#[test]
fn step_distributions_sum_to_one_and_coverage_grows() {
    for cfg in cells() {
        let m = init_params(&cfg, &toy_vocabs(), None, 5).unwrap();
        let ex = m.encode_example(&toy_example());
        let outs = run_steps(&m, &ex, &ex.tgt_out());
        for (t, o) in outs.iter().enumerate() {
            assert!((o.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!((o.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let ext = if cfg.use_copy { ex.oov.len() } else { 0 };
            assert_eq!(o.probs.len(), m.vocab_size() + ext);
            if cfg.use_coverage {
                let c = o.coverage.as_ref().unwrap();
                if t == 0 {
                    assert!(c.iter().all(|&x| x == 0.0));
                    assert_eq!(o.coverage_loss, Some(0.0));
                } else {
                    let p = outs[t - 1].coverage.as_ref().unwrap();
                    assert!(c.iter().zip(p).all(|(a, b)| a >= b));
                    assert!(o.coverage_loss.unwrap() >= 0.0);
                }
            }
        }
    }
}

#[test]
fn teacher_forced_loss_matches_stepwise_decoding() {
    for cfg in cells() {
        let m = init_params(&cfg, &toy_vocabs(), None, 8).unwrap();
        let ex = m.encode_example(&toy_example());
        let outs = run_steps(&m, &ex, &ex.tgt_out());
        let targets = ex.tgt_out();
        let nll: f64 = outs.iter().zip(&targets).map(|(o, &t)| -o.probs[t].ln()).sum();
        let cov: f64 = outs.iter().filter_map(|o| o.coverage_loss).sum();
        let lambda = if cfg.use_coverage { cfg.coverage_weight } else { 0.0 };
        let expected = (nll + lambda * cov) / targets.len() as f64;
        let loss = model_loss(&m, std::slice::from_ref(&ex)).unwrap();
        assert!((loss - expected).abs() < 1e-10, "{loss} vs {expected}");
    }
}

#[test]
fn copy_disabled_gives_base_distribution_and_lambda_zero_is_plain_nll() {
    let cfg = small_config(Arch::BiGru, AttentionKind::Bahdanau, false, false);
    let m = init_params(&cfg, &toy_vocabs(), None, 2).unwrap();
    let ex = m.encode_example(&toy_example());
    let o = &run_steps(&m, &ex, &[UNK])[0];
    assert_eq!(o.probs.len(), m.vocab_size());
    assert!(o.p_gen.is_none());

    let mut with_cov = small_config(Arch::BiGru, AttentionKind::Bahdanau, false, true);
    with_cov.coverage_weight = 0.0;
    with_cov.coverage_in_score = false;
    let mc = init_params(&with_cov, &toy_vocabs(), None, 2).unwrap();
    let a = model_loss(&m, std::slice::from_ref(&ex)).unwrap();
    let b = model_loss(&mc, std::slice::from_ref(&mc.encode_example(&toy_example()))).unwrap();
    assert_eq!(a, b);
}

#[test]
fn copy_mixture_matches_hand_mix() {
    let cfg = small_config(Arch::BiGru, AttentionKind::Luong, true, false);
    let m = init_params(&cfg, &toy_vocabs(), None, 4).unwrap();
    let ex = m.encode_example(&toy_example());
    let o = &run_steps(&m, &ex, &[UNK])[0];
    let mut base_cfg = cfg.clone();
    base_cfg.use_copy = false;
    // P_vocab recomputed from the same parameters without the gate
    let mut store = crate::tensor::ParamStore::new();
    for p in m.params.iter().filter(|p| !p.name.starts_with("copy.")) {
        store.add(p.name.clone(), p.value.clone());
    }
    let base = Model::from_params(base_cfg, toy_vocabs(), store).unwrap();
    let bo = &run_steps(&base, &base.encode_example(&toy_example()), &[UNK])[0];
    let g = o.p_gen.unwrap();
    let mut expected = vec![0.0; o.probs.len()];
    for (w, p) in bo.probs.iter().enumerate() {
        expected[w] += g * p;
    }
    for (i, &w) in ex.src_ext.iter().enumerate() {
        expected[w] += (1.0 - g) * o.attention[i];
    }
    for (a, b) in o.probs.iter().zip(&expected) {
        assert!((a - b).abs() < 1e-10);
    }
    // the OOV answer word is reachable
    assert!(o.probs[m.vocab_size()] > 0.0);
}

#[test]
fn attention_context_is_weighted_sum() {
    let cfg = small_config(Arch::BiGru, AttentionKind::Bahdanau, false, false);
    let m = init_params(&cfg, &toy_vocabs(), None, 6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let h = Tensor::uniform(&[5, 8], 1.0, &mut rng);
    let s = Tensor::uniform(&[1, 4], 1.0, &mut rng);
    let (ctx, a) = attend(&m, &s, &h, None).unwrap();
    assert!((a.sum() - 1.0).abs() < 1e-12);
    for j in 0..8 {
        let want: f64 = (0..5).map(|i| a.data()[i] * h.get(i, j)).sum();
        assert!((ctx.data()[j] - want).abs() < 1e-10);
    }
    let same = Tensor::new(vec![3, 8], [h.row_slice(0); 3].concat()).unwrap();
    let (ctx, a) = attend(&m, &s, &same, None).unwrap();
    assert!(a.data().iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-12));
    assert!(ctx.data().iter().zip(h.row_slice(0)).all(|(x, y)| (x - y).abs() < 1e-12));
    let one = Tensor::new(vec![1, 8], h.row_slice(2).to_vec()).unwrap();
    let (ctx, a) = attend(&m, &s, &one, None).unwrap();
    assert_eq!(a.data(), [1.0]);
    assert_eq!(ctx.data(), one.data());
}

#[test]
fn reversing_source_swaps_directional_halves() {
    let mut cfg = small_config(Arch::BiGru, AttentionKind::Bahdanau, false, false);
    cfg.feature_dims = FeatureDims {
        ans: 0,
        case: 0,
        pos: 0,
        ne: 0,
    };
    let m = init_params(&cfg, &toy_vocabs(), None, 9).unwrap();
    let ex = m.encode_example(&toy_example());
    let mut rev = ex.clone();
    for v in [&mut rev.src, &mut rev.src_ext, &mut rev.ans, &mut rev.case, &mut rev.pos, &mut rev.ne] {
        v.reverse();
    }
    // swap the two directions' weights so the reversed run mirrors the original
    let mut store = m.params.clone();
    for suffix in ["w_in", "b", "u_rz", "u_h"] {
        let f = store.id(&format!("enc.l0.fwd.{suffix}")).unwrap();
        let b = store.id(&format!("enc.l0.bwd.{suffix}")).unwrap();
        let fv = store.value(f).clone();
        let bv = store.value(b).clone();
        store.get_mut(f).value = bv;
        store.get_mut(b).value = fv;
    }
    let swapped = Model::from_params(cfg, toy_vocabs(), store).unwrap();
    let h1 = m.encode(&ex).unwrap().h;
    let h2 = swapped.encode(&rev).unwrap().h;
    let (n, hd) = (ex.len(), 4);
    for i in 0..n {
        for j in 0..hd {
            assert!((h1.get(i, j) - h2.get(n - 1 - i, hd + j)).abs() < 1e-12);
            assert!((h1.get(i, hd + j) - h2.get(n - 1 - i, j)).abs() < 1e-12);
        }
    }
}

#[test]
fn length_one_source() {
    for cfg in cells() {
        let m = init_params(&cfg, &toy_vocabs(), None, 1).unwrap();
        let mut ex = toy_example();
        for v in [&mut ex.src, &mut ex.pos, &mut ex.ne] {
            v.truncate(1);
        }
        ex.ans = vec![1];
        ex.case = vec![0];
        let e = m.encode_example(&ex);
        let enc = m.encode(&e).unwrap();
        assert_eq!(enc.h.rows(), 1);
        let o = m.decode_step(SOS, &enc.init, &enc).unwrap();
        assert_eq!(o.attention, [1.0]);
    }
}

#[test]
fn transformer_prefix_is_causal() {
    let cfg = small_config(Arch::Transformer, AttentionKind::Bahdanau, true, false);
    let m = init_params(&cfg, &toy_vocabs(), None, 12).unwrap();
    let ex = m.encode_example(&toy_example());
    let enc = m.encode(&ex).unwrap();
    let a = m.transformer_step(&[SOS, 5, 6], &enc).unwrap();
    let b = m.transformer_step(&[SOS, 5, 6, 7, 8], &enc).unwrap();
    let short = m.transformer_step(&[SOS, 5], &enc).unwrap();
    assert_ne!(a.probs, b.probs);
    // position 1 seen through a longer prefix equals the short prefix output
    assert_eq!(short.probs.len(), a.probs.len());
    let long = transformer_rows(&m, &enc, &[SOS, 5, 6, 7, 8]);
    let two = transformer_rows(&m, &enc, &[SOS, 5]);
    for (x, y) in long[1].iter().zip(&two[1]) {
        assert!((x - y).abs() < 1e-12);
    }
    assert_eq!(two[1], short.probs);
    let mut cov = cfg.clone();
    cov.use_coverage = true;
    assert!(init_params(&cov, &toy_vocabs(), None, 0).is_err());
}

fn transformer_rows(m: &Model, enc: &EncoderStates, prefix: &[usize]) -> Vec<Vec<f64>> {
    (1..=prefix.len())
        .map(|k| m.transformer_step(&prefix[..k], enc).unwrap().probs)
        .collect()
}

#[test]
fn single_head_transformer_matches_matrix_oracle() {
    let mut cfg = small_config(Arch::Transformer, AttentionKind::Bahdanau, false, false);
    cfg.heads = 1;
    let m = init_params(&cfg, &toy_vocabs(), None, 13).unwrap();
    let ex = m.encode_example(&toy_example());
    let enc = m.encode(&ex).unwrap();
    let got = m.transformer_step(&[SOS, 7], &enc).unwrap();
    let want = oracle::transformer_last(&m, &ex, &[SOS, 7]);
    for (a, b) in got.probs.iter().zip(&want) {
        assert!((a - b).abs() < 1e-8, "{a} vs {b}");
    }
}

/// Plain nested-loop reimplementation of a one-layer single-head
/// Transformer, independent of the graph code.
mod oracle {
    use super::*;

    type M = Vec<Vec<f64>>;

    fn p(m: &Model, name: &str) -> M {
        let t = &m.params.by_name(name).unwrap().value;
        (0..t.rows()).map(|i| t.row_slice(i).to_vec()).collect()
    }

    fn mm(a: &M, b: &M) -> M {
        a.iter()
            .map(|r| (0..b[0].len()).map(|j| r.iter().zip(b).map(|(x, br)| x * br[j]).sum()).collect())
            .collect()
    }

    fn t(a: &M) -> M {
        (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
    }

    fn add(a: &M, b: &M) -> M {
        a.iter().zip(b).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + q).collect()).collect()
    }

    fn bias(a: &M, b: &M) -> M {
        a.iter().map(|r| r.iter().zip(&b[0]).map(|(x, y)| x + y).collect()).collect()
    }

    fn softmax(a: &M, causal: bool) -> M {
        a.iter()
            .enumerate()
            .map(|(i, r)| {
                let lim = if causal { i + 1 } else { r.len() };
                let mx = r[..lim].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = (0..r.len()).map(|j| if j < lim { (r[j] - mx).exp() } else { 0.0 }).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }

    fn ln(a: &M, g: &M, b: &M) -> M {
        a.iter()
            .map(|r| {
                let n = r.len() as f64;
                let mean = r.iter().sum::<f64>() / n;
                let var = r.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                let inv = 1.0 / (var + 1e-5).sqrt();
                r.iter().enumerate().map(|(j, x)| (x - mean) * inv * g[0][j] + b[0][j]).collect()
            })
            .collect()
    }

    fn attn(m: &Model, pre: &str, q: &M, kv: &M, causal: bool) -> M {
        let d = q[0].len() as f64;
        let qq = mm(q, &p(m, &format!("{pre}.wq")));
        let kk = mm(kv, &p(m, &format!("{pre}.wk")));
        let vv = mm(kv, &p(m, &format!("{pre}.wv")));
        let s: M = mm(&qq, &t(&kk)).into_iter().map(|r| r.into_iter().map(|x| x / d.sqrt()).collect()).collect();
        let a = softmax(&s, causal);
        bias(&mm(&mm(&a, &vv), &p(m, &format!("{pre}.wo"))), &p(m, &format!("{pre}.bo")))
    }

    fn ffn(m: &Model, pre: &str, x: &M) -> M {
        let h: M = bias(&mm(x, &p(m, &format!("{pre}.w1"))), &p(m, &format!("{pre}.b1")))
            .into_iter()
            .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
            .collect();
        bias(&mm(&h, &p(m, &format!("{pre}.w2"))), &p(m, &format!("{pre}.b2")))
    }

    fn pe(n: usize, d: usize) -> M {
        let t = positional_encoding(n, d);
        (0..n).map(|i| t.row_slice(i).to_vec()).collect()
    }

    pub fn transformer_last(m: &Model, ex: &EncodedExample, prefix: &[usize]) -> Vec<f64> {
        let d = m.config.hidden;
        let rows = |name: &str, ids: &[usize]| -> M {
            let t = p(m, name);
            ids.iter().map(|&i| t[i].clone()).collect()
        };
        let feats = [
            rows("emb.word", &ex.src),
            rows("emb.ans", &ex.ans),
            rows("emb.case", &ex.case),
            rows("emb.pos", &ex.pos),
            rows("emb.ne", &ex.ne),
        ];
        let x: M = (0..ex.len()).map(|i| feats.iter().flat_map(|f| f[i].clone()).collect()).collect();
        let mut z = add(&bias(&mm(&x, &p(m, "tf.enc_in.w")), &p(m, "tf.enc_in.b")), &pe(ex.len(), d));
        z = ln(&add(&z, &attn(m, "tf.enc.l0.attn", &z, &z, false)), &p(m, "tf.enc.l0.ln1.gain"), &p(m, "tf.enc.l0.ln1.bias"));
        z = ln(&add(&z, &ffn(m, "tf.enc.l0.ffn", &z)), &p(m, "tf.enc.l0.ln2.gain"), &p(m, "tf.enc.l0.ln2.bias"));
        let enc = z;
        let y = rows("emb.word", prefix);
        let mut z = add(&bias(&mm(&y, &p(m, "tf.dec_in.w")), &p(m, "tf.dec_in.b")), &pe(prefix.len(), d));
        z = ln(&add(&z, &attn(m, "tf.dec.l0.self", &z, &z, true)), &p(m, "tf.dec.l0.ln1.gain"), &p(m, "tf.dec.l0.ln1.bias"));
        z = ln(&add(&z, &attn(m, "tf.dec.l0.cross", &z, &enc, false)), &p(m, "tf.dec.l0.ln2.gain"), &p(m, "tf.dec.l0.ln2.bias"));
        z = ln(&add(&z, &ffn(m, "tf.dec.l0.ffn", &z)), &p(m, "tf.dec.l0.ln3.gain"), &p(m, "tf.dec.l0.ln3.bias"));
        let logits = bias(&mm(&z, &p(m, "out.w")), &p(m, "out.b"));
        softmax(&logits, false).pop().unwrap()
    }
}
