use std::fs;
use std::path::Path;

use super::{normalize_ascii, TextprepError, TokenSpan};

pub const UNMATCHED_TAG: &str = "UNK-TAG";
/// Fraction of our characters that may go uncovered by tagger tokens.
pub const MAX_COVERAGE_GAP: f64 = 0.2;
/// How far ahead of the cursor a tagger token is searched for.
const SEARCH_AHEAD: usize = 64;

/// Tokens and tags produced by an external tagger.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TagSequence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

impl TagSequence {
    pub fn new(tokens: Vec<String>, tags: Vec<String>) -> Result<Self, TextprepError> {
        if tokens.len() != tags.len() {
            return Err(TextprepError::TagFile {
                path: String::new(),
                line: 0,
                message: format!("{} tokens but {} tags", tokens.len(), tags.len()),
            });
        }
        Ok(Self { tokens, tags })
    }

    /// Built-in stand-in tagger: every token receives `tag`.
    pub fn uniform<S: AsRef<str>>(tokens: &[S], tag: &str) -> Self {
        Self {
            tokens: tokens.iter().map(|t| t.as_ref().to_owned()).collect(),
            tags: vec![tag.to_owned(); tokens.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn is_punct_token(t: &str) -> bool {
    !t.is_empty() && t.chars().all(|c| !c.is_alphanumeric())
}

/// Maps tagger tags onto our tokenisation by character offsets.
///
/// Both token streams are compared with whitespace removed. Each tagger
/// token is located greedily at or after the cursor; our token then takes
/// the tag of the first overlapping non-punctuation tagger token (or of the
/// first overlapping one if all are punctuation). A tagger token spanning
/// several of ours gives each of them its tag. Tokens with no overlap get
/// [`UNMATCHED_TAG`].
pub fn align_tags(ours: &[TokenSpan], tagger: &TagSequence) -> Result<Vec<String>, TextprepError> {
    let mut stream: Vec<char> = Vec::new();
    let mut our_ranges = Vec::with_capacity(ours.len());
    for t in ours {
        let s = stream.len();
        stream.extend(t.token.chars().filter(|c| !c.is_whitespace()));
        our_ranges.push((s, stream.len()));
    }

    let mut tag_ranges: Vec<Option<(usize, usize)>> = Vec::with_capacity(tagger.len());
    let mut cursor = 0usize;
    for tok in &tagger.tokens {
        let needle: Vec<char> = normalize_ascii(tok)
            .chars()
            .filter(|c| !c.is_whitespace())
            .collect();
        if needle.is_empty() || needle.len() > stream.len() {
            tag_ranges.push(None);
            continue;
        }
        let last = (stream.len() - needle.len()).min(cursor + SEARCH_AHEAD);
        let found = (cursor..=last).find(|&p| stream[p..p + needle.len()] == needle[..]);
        match found {
            Some(p) => {
                tag_ranges.push(Some((p, p + needle.len())));
                cursor = p + needle.len();
            }
            None => tag_ranges.push(None),
        }
    }

    let mut covered = vec![false; stream.len()];
    for &(s, e) in tag_ranges.iter().flatten() {
        covered[s..e].iter_mut().for_each(|c| *c = true);
    }
    if !stream.is_empty() {
        let gap = covered.iter().filter(|c| !**c).count() as f64 / stream.len() as f64;
        if gap > MAX_COVERAGE_GAP {
            let sentence: Vec<&str> = ours.iter().take(12).map(|t| t.token.as_str()).collect();
            return Err(TextprepError::Alignment {
                sentence: sentence.join(" "),
                uncovered: gap,
            });
        }
    }

    let tags = our_ranges
        .iter()
        .map(|&(os, oe)| {
            let overlapping: Vec<usize> = tag_ranges
                .iter()
                .enumerate()
                .filter_map(|(j, r)| match r {
                    Some((s, e)) if *s < oe && os < *e => Some(j),
                    _ => None,
                })
                .collect();
            overlapping
                .iter()
                .find(|&&j| !is_punct_token(&tagger.tokens[j]))
                .or(overlapping.first())
                .map_or_else(|| UNMATCHED_TAG.to_owned(), |&j| tagger.tags[j].clone())
        })
        .collect();
    Ok(tags)
}

/// Reads `token<TAB>tag` lines; a blank line closes a block.
pub fn read_tag_file(path: &Path) -> Result<Vec<TagSequence>, TextprepError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| TextprepError::Io {
        path: p.clone(),
        message: e.to_string(),
    })?;
    parse_tag_blocks(&text, &p)
}

pub fn parse_tag_blocks(text: &str, path: &str) -> Result<Vec<TagSequence>, TextprepError> {
    let mut blocks = Vec::new();
    let mut cur = TagSequence::default();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            if !cur.is_empty() {
                blocks.push(std::mem::take(&mut cur));
            }
            continue;
        }
        let (tok, tag) = line.split_once('\t').ok_or_else(|| TextprepError::TagFile {
            path: path.to_owned(),
            line: i + 1,
            message: "expected token<TAB>tag".into(),
        })?;
        if tok.is_empty() || tag.trim().is_empty() {
            return Err(TextprepError::TagFile {
                path: path.to_owned(),
                line: i + 1,
                message: "empty token or tag".into(),
            });
        }
        cur.tokens.push(tok.to_owned());
        cur.tags.push(tag.trim().to_owned());
    }
    if !cur.is_empty() {
        blocks.push(cur);
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::tokenize;

    fn seq(tokens: &[&str], tags: &[&str]) -> TagSequence {
        TagSequence::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            tags.iter().map(|s| s.to_string()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identical_tokenisations_copy_tags() {
        let ours = tokenize("Dia lahir di Houston");
        let t = seq(&["Dia", "lahir", "di", "Houston"], &["PRP", "VB", "IN", "NNP"]);
        assert_eq!(align_tags(&ours, &t).unwrap(), ["PRP", "VB", "IN", "NNP"]);
    }

    #[test]
    fn several_tagger_tokens_take_first_non_punct() {
        let ours = tokenize("23:00");
        let t = seq(&["23", ":", "00"], &["NUM", "PUNCT", "NUM"]);
        assert_eq!(align_tags(&ours, &t).unwrap(), ["NUM"]);
        let t = seq(&[":", "23"], &["PUNCT", "NUM"]);
        assert_eq!(align_tags(&tokenize(":23"), &t).unwrap(), ["PUNCT", "NUM"]);
    }

    #[test]
    fn wide_tagger_token_is_replicated() {
        let ours = tokenize("a b");
        let t = seq(&["ab"], &["X"]);
        assert_eq!(align_tags(&ours, &t).unwrap(), ["X", "X"]);
    }

    #[test]
    fn unmatched_tokens_and_gap_error() {
        let ours = tokenize("satu dua tiga empat lima enam tujuh delapan sembilan sepuluh x");
        let toks: Vec<&str> = ours.iter().map(|t| t.token.as_str()).collect();
        let mut tags = vec!["T"; toks.len()];
        let mut partial = toks.clone();
        partial.pop();
        tags.pop();
        let out = align_tags(&ours, &seq(&partial, &tags)).unwrap();
        assert_eq!(out.last().unwrap(), UNMATCHED_TAG);

        let err = align_tags(&ours, &seq(&["satu"], &["T"])).unwrap_err();
        assert!(matches!(err, TextprepError::Alignment { .. }));
        assert!(err.to_string().contains("satu dua"));
    }

    #[test]
    fn tagger_text_is_normalised_before_matching() {
        let ours = tokenize("Beyonce datang");
        let t = seq(&["Beyoncé", "datang"], &["NNP", "VB"]);
        assert_eq!(align_tags(&ours, &t).unwrap(), ["NNP", "VB"]);
    }

    #[test]
    fn tag_file_blocks() {
        let blocks = parse_tag_blocks("a\tX\nb\tY\n\n\nc\tZ\n", "mem").unwrap();
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[1].tags, ["Z"]);
        let err = parse_tag_blocks("a X\n", "mem").unwrap_err();
        assert!(err.to_string().contains(":1"));
    }
}
