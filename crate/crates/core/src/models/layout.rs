use super::{Arch, AttentionKind, ModelConfig, Result};
use crate::tensor::ParamId;
use crate::textprep::Vocabularies;

#[derive(Debug, Clone, Copy)]
pub(crate) enum Init {
    Xavier,
    Zeros,
    Ones,
    WordTable,
}

/// Recurrent cell weights. GRU packs `[r z h̃]`, LSTM packs `[i f o g]`.
#[derive(Debug, Clone)]
pub(crate) struct Cell {
    pub w_in: ParamId,
    pub b: ParamId,
    /// GRU: recurrent weights of the r and z gates; LSTM: all four gates.
    pub u: ParamId,
    /// GRU only: recurrent weights of the candidate.
    pub u_h: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub(crate) enum Attention {
    Bahdanau {
        w_h: ParamId,
        w_s: ParamId,
        b: ParamId,
        v: ParamId,
        w_c: Option<ParamId>,
    },
    Luong {
        w: ParamId,
        w_c: Option<ParamId>,
    },
}

#[derive(Debug, Clone)]
pub(crate) struct RnnLayout {
    pub enc: Vec<(Cell, Cell)>,
    pub bridge_h: (ParamId, ParamId),
    pub bridge_c: Option<(ParamId, ParamId)>,
    pub dec: Cell,
    pub att: Attention,
    pub comb_w: ParamId,
    pub comb_b: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Mha {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct Ffn {
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct EncLayer {
    pub attn: Mha,
    pub ln1: Norm,
    pub ffn: Ffn,
    pub ln2: Norm,
}

#[derive(Debug, Clone)]
pub(crate) struct DecLayer {
    pub self_attn: Mha,
    pub ln1: Norm,
    pub cross: Mha,
    pub ln2: Norm,
    pub ffn: Ffn,
    pub ln3: Norm,
}

#[derive(Debug, Clone)]
pub(crate) struct TfLayout {
    pub enc_in: (ParamId, ParamId),
    pub enc: Vec<EncLayer>,
    pub dec_in: (ParamId, ParamId),
    pub dec: Vec<DecLayer>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub count: usize,
    pub emb_word: ParamId,
    pub emb_ans: Option<ParamId>,
    pub emb_case: Option<ParamId>,
    pub emb_pos: Option<ParamId>,
    pub emb_ne: Option<ParamId>,
    pub rnn: Option<RnnLayout>,
    pub tf: Option<TfLayout>,
    pub out_w: ParamId,
    pub out_b: ParamId,
    pub copy: Option<(ParamId, ParamId)>,
}

pub(crate) type Declare<'a> = dyn FnMut(&str, [usize; 2], Init) -> Result<ParamId> + 'a;

struct Builder<'a, 'b> {
    f: &'a mut Declare<'b>,
    count: usize,
}

impl Builder<'_, '_> {
    fn p(&mut self, name: &str, shape: [usize; 2], init: Init) -> Result<ParamId> {
        self.count += 1;
        (self.f)(name, shape, init)
    }

    fn w(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        self.p(name, [rows, cols], Init::Xavier)
    }

    fn b(&mut self, name: &str, cols: usize) -> Result<ParamId> {
        self.p(name, [1, cols], Init::Zeros)
    }

    fn cell(&mut self, prefix: &str, arch: Arch, input: usize, h: usize) -> Result<Cell> {
        let gates = if arch == Arch::BiLstm { 4 } else { 3 };
        let w_in = self.w(&format!("{prefix}.w_in"), input, gates * h)?;
        let b = self.b(&format!("{prefix}.b"), gates * h)?;
        let (u, u_h) = if arch == Arch::BiLstm {
            (self.w(&format!("{prefix}.u"), h, 4 * h)?, None)
        } else {
            (
                self.w(&format!("{prefix}.u_rz"), h, 2 * h)?,
                Some(self.w(&format!("{prefix}.u_h"), h, h)?),
            )
        };
        Ok(Cell { w_in, b, u, u_h })
    }

    fn mha(&mut self, prefix: &str, d: usize) -> Result<Mha> {
        Ok(Mha {
            wq: self.w(&format!("{prefix}.wq"), d, d)?,
            wk: self.w(&format!("{prefix}.wk"), d, d)?,
            wv: self.w(&format!("{prefix}.wv"), d, d)?,
            wo: self.w(&format!("{prefix}.wo"), d, d)?,
            bo: self.b(&format!("{prefix}.bo"), d)?,
        })
    }

    fn norm(&mut self, prefix: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.p(&format!("{prefix}.gain"), [1, d], Init::Ones)?,
            bias: self.b(&format!("{prefix}.bias"), d)?,
        })
    }

    fn ffn(&mut self, prefix: &str, d: usize) -> Result<Ffn> {
        Ok(Ffn {
            w1: self.w(&format!("{prefix}.w1"), d, 4 * d)?,
            b1: self.b(&format!("{prefix}.b1"), 4 * d)?,
            w2: self.w(&format!("{prefix}.w2"), 4 * d, d)?,
            b2: self.b(&format!("{prefix}.b2"), d)?,
        })
    }
}

impl Layout {
    /// Declares every parameter in a fixed order through `declare`, which
    /// either creates it or looks it up.
    pub fn build(cfg: &ModelConfig, vocabs: &Vocabularies, declare: &mut Declare<'_>) -> Result<Layout> {
        let mut b = Builder { f: declare, count: 0 };
        let v = vocabs.words.len();
        let dw = cfg.word_dim;
        let fd = cfg.feature_dims;
        let h = cfg.hidden;

        let emb_word = b.p("emb.word", [v, dw], Init::WordTable)?;
        let mut table = |name: &str, rows: usize, dim: usize| -> Result<Option<ParamId>> {
            if dim == 0 {
                Ok(None)
            } else {
                b.w(name, rows, dim).map(Some)
            }
        };
        let emb_ans = table("emb.ans", 2, fd.ans)?;
        let emb_case = table("emb.case", 2, fd.case)?;
        let emb_pos = table("emb.pos", vocabs.pos.len(), fd.pos)?;
        let emb_ne = table("emb.ne", vocabs.ne.len(), fd.ne)?;

        let coverage_param = cfg.use_coverage && cfg.coverage_in_score;
        let (rnn, tf, out_in, copy_in) = if cfg.arch.is_recurrent() {
            let mut enc = Vec::with_capacity(cfg.layers);
            let mut input = cfg.input_width();
            for l in 0..cfg.layers {
                let fwd = b.cell(&format!("enc.l{l}.fwd"), cfg.arch, input, h)?;
                let bwd = b.cell(&format!("enc.l{l}.bwd"), cfg.arch, input, h)?;
                enc.push((fwd, bwd));
                input = 2 * h;
            }
            let bridge_h = (b.w("bridge.h.w", 2 * h, h)?, b.b("bridge.h.b", h)?);
            let bridge_c = if cfg.arch == Arch::BiLstm {
                Some((b.w("bridge.c.w", 2 * h, h)?, b.b("bridge.c.b", h)?))
            } else {
                None
            };
            let dec = b.cell("dec.cell", cfg.arch, dw + 2 * h, h)?;
            let att = match cfg.attention {
                AttentionKind::Bahdanau => Attention::Bahdanau {
                    w_h: b.w("att.w_h", 2 * h, h)?,
                    w_s: b.w("att.w_s", h, h)?,
                    b: b.b("att.b", h)?,
                    v: b.w("att.v", h, 1)?,
                    w_c: if coverage_param { Some(b.w("att.w_c", 1, h)?) } else { None },
                },
                AttentionKind::Luong => Attention::Luong {
                    w: b.w("att.w", h, 2 * h)?,
                    w_c: if coverage_param { Some(b.w("att.w_c", 1, 1)?) } else { None },
                },
            };
            let comb_w = b.w("out.comb.w", 3 * h, h)?;
            let comb_b = b.b("out.comb.b", h)?;
            (
                Some(RnnLayout {
                    enc,
                    bridge_h,
                    bridge_c,
                    dec,
                    att,
                    comb_w,
                    comb_b,
                }),
                None,
                h,
                2 * h + h + dw,
            )
        } else {
            let enc_in = (b.w("tf.enc_in.w", cfg.input_width(), h)?, b.b("tf.enc_in.b", h)?);
            let mut enc = Vec::with_capacity(cfg.layers);
            for l in 0..cfg.layers {
                let p = format!("tf.enc.l{l}");
                enc.push(EncLayer {
                    attn: b.mha(&format!("{p}.attn"), h)?,
                    ln1: b.norm(&format!("{p}.ln1"), h)?,
                    ffn: b.ffn(&format!("{p}.ffn"), h)?,
                    ln2: b.norm(&format!("{p}.ln2"), h)?,
                });
            }
            let dec_in = (b.w("tf.dec_in.w", dw, h)?, b.b("tf.dec_in.b", h)?);
            let mut dec = Vec::with_capacity(cfg.layers);
            for l in 0..cfg.layers {
                let p = format!("tf.dec.l{l}");
                dec.push(DecLayer {
                    self_attn: b.mha(&format!("{p}.self"), h)?,
                    ln1: b.norm(&format!("{p}.ln1"), h)?,
                    cross: b.mha(&format!("{p}.cross"), h)?,
                    ln2: b.norm(&format!("{p}.ln2"), h)?,
                    ffn: b.ffn(&format!("{p}.ffn"), h)?,
                    ln3: b.norm(&format!("{p}.ln3"), h)?,
                });
            }
            (
                None,
                Some(TfLayout {
                    enc_in,
                    enc,
                    dec_in,
                    dec,
                }),
                h,
                3 * h,
            )
        };
        let out_w = b.w("out.w", out_in, v)?;
        let out_b = b.b("out.b", v)?;
        let copy = if cfg.use_copy {
            Some((b.w("copy.w", copy_in, 1)?, b.b("copy.b", 1)?))
        } else {
            None
        };
        Ok(Layout {
            count: b.count,
            emb_word,
            emb_ans,
            emb_case,
            emb_pos,
            emb_ne,
            rnn,
            tf,
            out_w,
            out_b,
            copy,
        })
    }
}
