use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    align_tags, char_span_to_words, filter_outliers, make_binary_features, normalize_ascii,
    normalize_with_offsets, select_answer_sentence, tokenize, tokenize_words, FilterMode, TagSequence,
    TextprepError,
};
use crate::corpus::{Article, PreparedExample, QAPair};

pub const FALLBACK_POS_TAG: &str = "X";
pub const FALLBACK_NE_TAG: &str = "O";

#[derive(Debug, Clone, Default)]
pub struct PrepareOptions {
    pub uncased: bool,
    /// One tag block per paragraph, in corpus order. `None` uses the
    /// fallback tagger.
    pub pos_tags: Option<Vec<TagSequence>>,
    pub ne_tags: Option<Vec<TagSequence>>,
    /// Refuse to run without both tag sources.
    pub require_tags: bool,
    pub drop_impossible: bool,
    pub filter: FilterMode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareReport {
    pub pairs: usize,
    pub unrepaired: usize,
    pub impossible: usize,
    /// Pairs whose answer could not be placed on the tokenised context.
    pub unusable: usize,
    pub outliers: usize,
    pub kept: usize,
}

struct Paragraph<'a> {
    context: &'a str,
    qas: &'a [QAPair],
    pos: Option<&'a TagSequence>,
    ne: Option<&'a TagSequence>,
}

enum Outcome {
    Kept(PreparedExample),
    Unrepaired,
    Impossible,
    Unusable,
}

pub fn prepare(articles: &[Article], opts: &PrepareOptions) -> Result<Vec<PreparedExample>, TextprepError> {
    prepare_with_report(articles, opts).map(|(x, _)| x)
}

/// Discards unrepaired pairs, then per pair: ASCII folding, tokenisation,
/// answer offset conversion, sentence selection, ans/case features, tag
/// alignment, optional lowercasing and finally outlier filtering.
pub fn prepare_with_report(
    articles: &[Article],
    opts: &PrepareOptions,
) -> Result<(Vec<PreparedExample>, PrepareReport), TextprepError> {
    if opts.require_tags && (opts.pos_tags.is_none() || opts.ne_tags.is_none()) {
        return Err(TextprepError::Config(
            "POS and NE features requested but a tag file is missing".into(),
        ));
    }
    let paragraphs: Vec<(&str, &[QAPair])> = articles
        .iter()
        .flat_map(|a| &a.paragraphs)
        .map(|p| (p.context.as_str(), p.qas.as_slice()))
        .collect();
    for (name, tags) in [("POS", &opts.pos_tags), ("NE", &opts.ne_tags)] {
        if let Some(t) = tags {
            if t.len() != paragraphs.len() {
                return Err(TextprepError::Config(format!(
                    "{name} tag file has {} blocks for {} paragraphs",
                    t.len(),
                    paragraphs.len()
                )));
            }
        }
    }
    let paragraphs: Vec<Paragraph> = paragraphs
        .into_iter()
        .enumerate()
        .map(|(i, (context, qas))| Paragraph {
            context,
            qas,
            pos: opts.pos_tags.as_ref().map(|t| &t[i]),
            ne: opts.ne_tags.as_ref().map(|t| &t[i]),
        })
        .collect();

    let outcomes: Vec<Vec<Outcome>> = paragraphs
        .par_iter()
        .map(|p| prepare_paragraph(p, opts))
        .collect::<Result<_, _>>()?;

    let mut report = PrepareReport::default();
    let mut kept = Vec::new();
    for o in outcomes.into_iter().flatten() {
        report.pairs += 1;
        match o {
            Outcome::Kept(e) => kept.push(e),
            Outcome::Unrepaired => report.unrepaired += 1,
            Outcome::Impossible => report.impossible += 1,
            Outcome::Unusable => report.unusable += 1,
        }
    }
    let before = kept.len();
    let kept = filter_outliers(kept, opts.filter);
    report.outliers = before - kept.len();
    report.kept = kept.len();
    Ok((kept, report))
}

fn prepare_paragraph(p: &Paragraph, opts: &PrepareOptions) -> Result<Vec<Outcome>, TextprepError> {
    let (norm, offsets) = normalize_with_offsets(p.context);
    let spans = tokenize(&norm);
    let tags_for = |t: Option<&TagSequence>, fallback: &str| -> Result<Vec<String>, TextprepError> {
        match t {
            Some(t) => align_tags(&spans, t),
            None => Ok(vec![fallback.to_owned(); spans.len()]),
        }
    };
    let pos = tags_for(p.pos, FALLBACK_POS_TAG)?;
    let ne = tags_for(p.ne, FALLBACK_NE_TAG)?;
    let n_chars = offsets.len() - 1;

    let outcomes = p
        .qas
        .iter()
        .map(|qa| {
            if opts.drop_impossible && qa.is_impossible {
                return Outcome::Impossible;
            }
            let (text, start) = match (qa.indonesian_answer_start, qa.primary_answer()) {
                (Some(s), _) if s < 0 => return Outcome::Unrepaired,
                (Some(s), a) => match qa.indonesian_answer.as_deref().or(a.map(|a| a.text.as_str())) {
                    Some(t) => (t, s as usize),
                    None => return Outcome::Unusable,
                },
                (None, Some(a)) => (a.text.as_str(), a.answer_start),
                (None, None) => return Outcome::Unusable,
            };
            let len = text.chars().count();
            if len == 0 || start >= n_chars {
                return Outcome::Unusable;
            }
            let (ns, ne_) = (offsets[start], offsets[(start + len).min(n_chars)]);
            if ns >= ne_ {
                return Outcome::Unusable;
            }
            let Ok(answer) = char_span_to_words(&spans, ns, ne_) else {
                return Outcome::Unusable;
            };
            let Ok(sel) = select_answer_sentence(&spans, answer) else {
                return Outcome::Unusable;
            };
            let tgt = tokenize_words(&normalize_ascii(&qa.question));
            if tgt.is_empty() {
                return Outcome::Unusable;
            }
            let src: Vec<String> = sel.tokens(&spans).iter().map(|t| t.token.clone()).collect();
            let (ans, case) = make_binary_features(&src, sel.answer);
            let answer_text: Vec<String> = spans[answer.0..=answer.1].iter().map(|t| t.token.clone()).collect();
            let lower = |v: Vec<String>| -> Vec<String> {
                if opts.uncased {
                    v.into_iter().map(|t| t.to_lowercase()).collect()
                } else {
                    v
                }
            };
            Outcome::Kept(PreparedExample {
                src: lower(src),
                tgt: lower(tgt),
                ans,
                case,
                pos: pos[sel.start..sel.end].to_vec(),
                ne: ne[sel.start..sel.end].to_vec(),
                answer_text: lower(answer_text),
            })
        })
        .collect();
    Ok(outcomes)
}
