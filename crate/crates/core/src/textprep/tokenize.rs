use serde::{Deserialize, Serialize};

use super::TextprepError;

/// A token and its character span `[char_start, char_end)` in the text it
/// was cut from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSpan {
    pub token: String,
    pub char_start: usize,
    pub char_end: usize,
}

fn is_joiner(c: char) -> bool {
    matches!(c, '.' | ',' | ':')
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric()
}

/// Splits on whitespace and punctuation. `.`, `,` and `:` stay inside a
/// token when flanked on both sides by letters or digits (`23:00`,
/// `20,000`, `Ph.D`); every other punctuation character is its own token.
pub fn tokenize(text: &str) -> Vec<TokenSpan> {
    let chars: Vec<char> = text.chars().collect();
    let mut spans = Vec::new();
    let mut start: Option<usize> = None;
    let flush = |spans: &mut Vec<TokenSpan>, s: usize, e: usize| {
        spans.push(TokenSpan {
            token: chars[s..e].iter().collect(),
            char_start: s,
            char_end: e,
        });
    };
    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            if let Some(s) = start.take() {
                flush(&mut spans, s, i);
            }
        } else if is_word_char(c) {
            start.get_or_insert(i);
        } else {
            let internal = is_joiner(c)
                && start.is_some()
                && i + 1 < chars.len()
                && is_word_char(chars[i - 1])
                && is_word_char(chars[i + 1]);
            if internal {
                continue;
            }
            if let Some(s) = start.take() {
                flush(&mut spans, s, i);
            }
            flush(&mut spans, i, i + 1);
        }
    }
    if let Some(s) = start {
        flush(&mut spans, s, chars.len());
    }
    spans
}

pub fn tokenize_words(text: &str) -> Vec<String> {
    tokenize(text).into_iter().map(|s| s.token).collect()
}

/// Index of the token containing `char_index`, or of the next token when the
/// index falls between tokens.
pub fn char_to_word(spans: &[TokenSpan], char_index: usize) -> Result<usize, TextprepError> {
    let pos = spans.partition_point(|s| s.char_end <= char_index);
    if pos < spans.len() {
        Ok(pos)
    } else {
        Err(TextprepError::CharRange {
            index: char_index,
            len: spans.last().map_or(0, |s| s.char_end),
        })
    }
}

/// Inclusive token range overlapping the character range `[start, end)`.
pub fn char_span_to_words(
    spans: &[TokenSpan],
    start: usize,
    end: usize,
) -> Result<(usize, usize), TextprepError> {
    let first = char_to_word(spans, start)?;
    let last = spans
        .partition_point(|s| s.char_start < end)
        .saturating_sub(1)
        .max(first);
    Ok((first, last))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceSelection {
    /// Token range `[start, end)` of the sentence in the context.
    pub start: usize,
    pub end: usize,
    /// Inclusive answer range in sentence-local coordinates, clipped to the
    /// sentence.
    pub answer: (usize, usize),
}

impl SentenceSelection {
    pub fn tokens<'a>(&self, context: &'a [TokenSpan]) -> &'a [TokenSpan] {
        &context[self.start..self.end]
    }
}

fn is_terminator(t: &str) -> bool {
    matches!(t, "." | "?" | "!")
}

/// Sentence holding the answer's first token. Sentences end at standalone
/// `.`, `?` or `!` tokens, which belong to the sentence they close.
pub fn select_answer_sentence(
    context: &[TokenSpan],
    answer: (usize, usize),
) -> Result<SentenceSelection, TextprepError> {
    let (first, last) = answer;
    if first >= context.len() || last < first {
        return Err(TextprepError::AnswerRange {
            first,
            last,
            len: context.len(),
        });
    }
    let start = context[..first]
        .iter()
        .rposition(|t| is_terminator(&t.token))
        .map_or(0, |p| p + 1);
    let end = context[first..]
        .iter()
        .position(|t| is_terminator(&t.token))
        .map_or(context.len(), |p| first + p + 1);
    let local_last = last.min(end - 1) - start;
    Ok(SentenceSelection {
        start,
        end,
        answer: (first - start, local_last),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        tokenize_words(s)
    }

    #[test]
    fn keeps_internal_joiners() {
        assert_eq!(words("pukul 23:00 WIB"), ["pukul", "23:00", "WIB"]);
        assert_eq!(words("sekitar 20,000 orang"), ["sekitar", "20,000", "orang"]);
        assert_eq!(words("gelar Ph.D miliknya"), ["gelar", "Ph.D", "miliknya"]);
    }

    #[test]
    fn splits_other_punctuation() {
        assert_eq!(words("Houston, Texas"), ["Houston", ",", "Texas"]);
        assert_eq!(words("(lahir 1981)."), ["(", "lahir", "1981", ")", "."]);
        assert_eq!(words("Knowles-Carter"), ["Knowles", "-", "Carter"]);
        assert_eq!(words("akhir."), ["akhir", "."]);
        assert_eq!(words(":a"), [":", "a"]);
    }

    #[test]
    fn spans_index_the_input() {
        let text = "a bb  c.";
        let spans = tokenize(text);
        let chars: Vec<char> = text.chars().collect();
        for s in &spans {
            assert_eq!(chars[s.char_start..s.char_end].iter().collect::<String>(), s.token);
        }
        assert_eq!(spans.len(), 4);
    }

    #[test]
    fn char_to_word_cases() {
        let spans = tokenize("a bb c");
        assert_eq!(char_to_word(&spans, 0).unwrap(), 0);
        assert_eq!(char_to_word(&spans, 2).unwrap(), 1);
        assert_eq!(char_to_word(&spans, 1).unwrap(), 1);
        assert!(char_to_word(&spans, 6).is_err());
    }

    #[test]
    fn answer_range_over_chars() {
        let spans = tokenize("di Houston, Texas, ia");
        assert_eq!(char_span_to_words(&spans, 3, 17).unwrap(), (1, 3));
    }

    #[test]
    fn sentence_selection() {
        let ctx = tokenize("Satu dua . Tiga empat lima . Enam");
        let s = select_answer_sentence(&ctx, (4, 4)).unwrap();
        let toks: Vec<&str> = s.tokens(&ctx).iter().map(|t| t.token.as_str()).collect();
        assert_eq!(toks, ["Tiga", "empat", "lima", "."]);
        assert_eq!(s.answer, (1, 1));

        // answer crossing a boundary keeps the first word's sentence only
        let s = select_answer_sentence(&ctx, (5, 7)).unwrap();
        assert_eq!((s.start, s.end), (3, 7));
        assert_eq!(s.answer, (2, 3));

        let single = tokenize("tanpa titik di sini");
        let s = select_answer_sentence(&single, (2, 2)).unwrap();
        assert_eq!((s.start, s.end), (0, 4));
    }

    proptest! {
        #[test]
        fn retokenizing_joined_tokens_is_fixed_point(text in "[a-zA-Z0-9 .,:;()?!-]{0,40}") {
            let toks = words(&text);
            let joined = toks.join(" ");
            prop_assert_eq!(words(&joined), toks);
        }

        #[test]
        fn char_to_word_inverts_span_starts(text in "[a-z0-9 .,:]{1,40}") {
            let spans = tokenize(&text);
            for (i, s) in spans.iter().enumerate() {
                prop_assert_eq!(char_to_word(&spans, s.char_start).unwrap(), i);
            }
            for w in spans.windows(2) {
                prop_assert!(w[0].char_start < w[0].char_end && w[0].char_end <= w[1].char_start);
            }
        }
    }
}
