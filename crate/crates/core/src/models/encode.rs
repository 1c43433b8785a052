use serde::{Deserialize, Serialize};

use super::{ModelError, Result};
use crate::corpus::PreparedExample;
use crate::textprep::vocab::{EOS, SOS, UNK};
use crate::textprep::Vocabularies;

/// An example mapped to ids. Source words outside the vocabulary keep an
/// extended id `|V| + k` (k-th distinct OOV word of this example) in
/// `src_ext`, and target words that occur among them are mapped to the same
/// extended ids when copying is enabled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodedExample {
    /// Base-vocabulary ids (OOV -> UNK).
    pub src: Vec<usize>,
    pub src_ext: Vec<usize>,
    pub ans: Vec<usize>,
    pub case: Vec<usize>,
    pub pos: Vec<usize>,
    pub ne: Vec<usize>,
    /// Distinct out-of-vocabulary source words, in order of appearance.
    pub oov: Vec<String>,
    /// Target ids without SOS/EOS, extended when copying is enabled.
    pub tgt: Vec<usize>,
    pub src_tokens: Vec<String>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Decoder inputs: SOS followed by the target.
    pub fn tgt_in(&self) -> Vec<usize> {
        std::iter::once(SOS).chain(self.tgt.iter().copied()).collect()
    }

    /// Decoder outputs: the target followed by EOS.
    pub fn tgt_out(&self) -> Vec<usize> {
        self.tgt.iter().copied().chain(std::iter::once(EOS)).collect()
    }

    pub(crate) fn check(&self) -> Result<()> {
        let n = self.src.len();
        if n == 0 {
            return Err(ModelError::Input("empty source".into()));
        }
        if [self.src_ext.len(), self.ans.len(), self.case.len(), self.pos.len(), self.ne.len()]
            .iter()
            .any(|&l| l != n)
        {
            return Err(ModelError::Input("source feature lengths differ".into()));
        }
        Ok(())
    }

    /// Surface form of an extended-vocabulary id.
    pub fn token_str<'a>(&'a self, vocabs: &'a Vocabularies, id: usize) -> &'a str {
        let v = vocabs.words.len();
        if id < v {
            vocabs.words.token(id).unwrap_or("<unk>")
        } else {
            self.oov.get(id - v).map_or("<unk>", String::as_str)
        }
    }
}

pub fn encode_example(vocabs: &Vocabularies, ex: &PreparedExample, use_copy: bool) -> EncodedExample {
    let words = &vocabs.words;
    let v = words.len();
    let mut oov: Vec<String> = Vec::new();
    let mut src = Vec::with_capacity(ex.src.len());
    let mut src_ext = Vec::with_capacity(ex.src.len());
    for t in &ex.src {
        let id = words.id(t);
        src.push(id);
        if id == UNK && !words.contains(t) {
            let k = oov.iter().position(|o| o == t).unwrap_or_else(|| {
                oov.push(t.clone());
                oov.len() - 1
            });
            src_ext.push(v + k);
        } else {
            src_ext.push(id);
        }
    }
    let tgt = ex
        .tgt
        .iter()
        .map(|t| {
            let id = words.id(t);
            match oov.iter().position(|o| o == t) {
                Some(k) if use_copy && id == UNK => v + k,
                _ => id,
            }
        })
        .collect();
    EncodedExample {
        src,
        src_ext,
        ans: ex.ans.iter().map(|&a| a as usize).collect(),
        case: ex.case.iter().map(|&c| c as usize).collect(),
        pos: ex.pos.iter().map(|t| vocabs.pos.id(t)).collect(),
        ne: ex.ne.iter().map(|t| vocabs.ne.id(t)).collect(),
        oov,
        tgt,
        src_tokens: ex.src.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::build_vocab;

    fn vocabs() -> Vocabularies {
        Vocabularies {
            words: build_vocab("di mana ia lahir ?".split(' '), 100, 1),
            pos: build_vocab(["X"], 100, 1),
            ne: build_vocab(["O"], 100, 1),
        }
    }

    fn prepared() -> PreparedExample {
        PreparedExample {
            src: "ia lahir di Houston dan Houston".split(' ').map(String::from).collect(),
            tgt: "di mana Houston ?".split(' ').map(String::from).collect(),
            ans: vec![0, 0, 0, 1, 0, 0],
            case: vec![0, 0, 0, 1, 0, 1],
            pos: vec!["X".into(); 6],
            ne: vec!["O".into(); 6],
            answer_text: vec!["Houston".into()],
        }
    }

    #[test]
    fn oov_source_words_get_extended_ids() {
        let vs = vocabs();
        let v = vs.words.len();
        let e = encode_example(&vs, &prepared(), true);
        assert_eq!(e.oov, ["Houston", "dan"]);
        assert_eq!(e.src[3], UNK);
        assert_eq!(e.src_ext[3], v);
        assert_eq!(e.src_ext[4], v + 1);
        assert_eq!(e.src_ext[5], v);
        assert_eq!(e.tgt[2], v);
        assert_eq!(e.token_str(&vs, v), "Houston");
        assert_eq!(e.tgt_out().last(), Some(&EOS));
        assert_eq!(e.tgt_in()[0], SOS);
    }

    #[test]
    fn without_copy_targets_use_unk() {
        let e = encode_example(&vocabs(), &prepared(), false);
        assert_eq!(e.tgt[2], UNK);
    }
}
