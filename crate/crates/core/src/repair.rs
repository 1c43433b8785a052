//! Recovers answer locations in translated contexts.
//!
//! A translated answer is first searched verbatim. Failing that, windows of
//! the context whose width lies within ±30% of the answer length are scored
//! with a normalised Levenshtein ratio (case-folded), and the best window is
//! accepted when it reaches the threshold. All positions are character
//! indices.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Article, QAPair};

pub const DEFAULT_THRESHOLD: f64 = 0.8;
const WIDTH_SLACK: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SearchScope {
    /// Search a neighbourhood of the expected position first and fall back
    /// to the whole context when nothing there reaches the threshold.
    #[default]
    NearOriginalFirst,
    WholeContext,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepairConfig {
    pub threshold: f64,
    pub search_scope: SearchScope,
}

impl Default for RepairConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            search_scope: SearchScope::default(),
        }
    }
}

impl RepairConfig {
    pub fn new(threshold: f64, search_scope: SearchScope) -> Result<Self, String> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(format!("repair threshold must be in (0, 1], got {threshold}"));
        }
        Ok(Self {
            threshold,
            search_scope,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepairOutcome {
    pub found: bool,
    pub new_start: i64,
    pub matched_text: String,
    pub ratio: f64,
    /// Verbatim occurrence rather than a fuzzy window.
    pub exact: bool,
}

impl RepairOutcome {
    fn not_found(ratio: f64) -> Self {
        Self {
            found: false,
            new_start: -1,
            matched_text: String::new(),
            ratio,
            exact: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepairReport {
    pub repaired: usize,
    pub exact: usize,
    pub not_found: usize,
}

impl RepairReport {
    pub fn total(&self) -> usize {
        self.repaired + self.exact + self.not_found
    }
}

fn lev_chars(a: &[char], b: &[char]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Edit distance counting single-character insertions, deletions and
/// substitutions.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    lev_chars(&a, &b)
}

fn ratio_chars(a: &[char], b: &[char]) -> f64 {
    let longest = a.len().max(b.len());
    if longest == 0 {
        return 1.0;
    }
    1.0 - lev_chars(a, b) as f64 / longest as f64
}

/// `1 − levenshtein(a, b) / max(|a|, |b|)`; two empty strings score 1.
pub fn similarity_ratio(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    ratio_chars(&a, &b)
}

fn fold(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

/// Best fuzzy window found in a search range.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    start: usize,
    width: usize,
    ratio: f64,
    distance_to_expected: usize,
}

impl Candidate {
    fn better_than(&self, other: &Candidate) -> bool {
        if self.ratio != other.ratio {
            return self.ratio > other.ratio;
        }
        if self.distance_to_expected != other.distance_to_expected {
            return self.distance_to_expected < other.distance_to_expected;
        }
        if self.start != other.start {
            return self.start < other.start;
        }
        self.width < other.width
    }
}

/// Scores every window starting in `starts` with a width in
/// `min_w..=max_w`. One DP over the widest window per start yields the
/// distances to every shorter prefix.
fn best_window(
    ctx: &[char],
    ans: &[char],
    starts: std::ops::Range<usize>,
    min_w: usize,
    max_w: usize,
    expected: usize,
) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    let n = ans.len();
    let mut prev = vec![0usize; max_w + 1];
    let mut cur = vec![0usize; max_w + 1];
    let mut col = vec![0usize; max_w + 1];
    for start in starts {
        let avail = (ctx.len() - start).min(max_w);
        if avail < min_w {
            continue;
        }
        let window = &ctx[start..start + avail];
        // prev[j] = distance(ans[..i], window[..j])
        for (j, p) in prev.iter_mut().enumerate().take(avail + 1) {
            *p = j;
        }
        col[0] = n;
        for i in 0..n {
            cur[0] = i + 1;
            for j in 0..avail {
                let sub = prev[j] + usize::from(ans[i] != window[j]);
                cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
            }
            std::mem::swap(&mut prev, &mut cur);
        }
        col[..=avail].copy_from_slice(&prev[..=avail]);
        for w in min_w..=avail {
            let cand = Candidate {
                start,
                width: w,
                ratio: 1.0 - col[w] as f64 / n.max(w) as f64,
                distance_to_expected: start.abs_diff(expected),
            };
            if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                best = Some(cand);
            }
        }
    }
    best
}

fn rescale(original_start: usize, translated_len: usize, original_len: Option<usize>) -> usize {
    match original_len {
        Some(ol) if ol > 0 => {
            ((original_start as f64) * translated_len as f64 / ol as f64).round() as usize
        }
        _ => original_start,
    }
    .min(translated_len.saturating_sub(1))
}

/// Locates `translated_answer` inside `context`.
///
/// `original_context_len` (characters of the untranslated context) rescales
/// `original_start` into the translated context; without it the offset is
/// used as-is.
pub fn repair_answer(
    context: &str,
    translated_answer: &str,
    original_start: usize,
    original_context_len: Option<usize>,
    cfg: &RepairConfig,
) -> RepairOutcome {
    let ctx: Vec<char> = context.chars().collect();
    let ans: Vec<char> = translated_answer.chars().collect();
    if ans.is_empty() || ctx.is_empty() {
        return RepairOutcome::not_found(0.0);
    }
    let expected = rescale(original_start, ctx.len(), original_context_len);

    // verbatim occurrences, nearest to the expected position
    if ans.len() <= ctx.len() {
        let exact = (0..=ctx.len() - ans.len())
            .filter(|&s| ctx[s..s + ans.len()] == ans[..])
            .min_by_key(|&s| (s.abs_diff(expected), s));
        if let Some(s) = exact {
            return RepairOutcome {
                found: true,
                new_start: s as i64,
                matched_text: translated_answer.to_owned(),
                ratio: 1.0,
                exact: true,
            };
        }
    }

    let ctx_f: Vec<char> = ctx.iter().map(|&c| fold(c)).collect();
    let ans_f: Vec<char> = ans.iter().map(|&c| fold(c)).collect();
    let n = ans.len();
    let min_w = ((n as f64) * (1.0 - WIDTH_SLACK)).floor().max(1.0) as usize;
    let max_w = (((n as f64) * (1.0 + WIDTH_SLACK)).ceil() as usize).min(ctx.len());
    if min_w > max_w {
        return RepairOutcome::not_found(0.0);
    }
    let last_start = ctx.len() - min_w;

    let accept = |c: Candidate| RepairOutcome {
        found: true,
        new_start: c.start as i64,
        matched_text: ctx[c.start..c.start + c.width].iter().collect(),
        ratio: c.ratio,
        exact: false,
    };

    if cfg.search_scope == SearchScope::NearOriginalFirst {
        let radius = 2 * n + 20;
        let lo = expected.saturating_sub(radius);
        let hi = (expected + radius).min(last_start);
        if lo <= hi {
            if let Some(c) = best_window(&ctx_f, &ans_f, lo..hi + 1, min_w, max_w, expected) {
                if c.ratio >= cfg.threshold {
                    return accept(c);
                }
            }
        }
    }
    match best_window(&ctx_f, &ans_f, 0..last_start + 1, min_w, max_w, expected) {
        Some(c) if c.ratio >= cfg.threshold => accept(c),
        Some(c) => RepairOutcome::not_found(c.ratio),
        None => RepairOutcome::not_found(0.0),
    }
}

/// Key holding the untranslated context length, when a record carries it.
pub const ORIGINAL_CONTEXT_LEN_KEY: &str = "original_context_length";

fn repair_pair(context: &str, original_len: Option<usize>, qa: &mut QAPair, cfg: &RepairConfig) -> RepairOutcome {
    let outcome = match qa.primary_answer() {
        Some(a) if !a.text.is_empty() => {
            repair_answer(context, &a.text, a.answer_start, original_len, cfg)
        }
        _ => RepairOutcome::not_found(0.0),
    };
    qa.indonesian_answer = Some(outcome.matched_text.clone());
    qa.indonesian_answer_start = Some(outcome.new_start);
    outcome
}

/// Annotates every pair with `indonesian_answer` / `indonesian_answer_start`.
pub fn repair_corpus(articles: &[Article], cfg: &RepairConfig) -> (Vec<Article>, RepairReport) {
    let mut out = articles.to_vec();
    let outcomes: Vec<Vec<RepairOutcome>> = out
        .par_iter_mut()
        .flat_map_iter(|a| a.paragraphs.iter_mut())
        .map(|p| {
            let original_len = p
                .extra
                .get(ORIGINAL_CONTEXT_LEN_KEY)
                .and_then(|v| v.as_u64())
                .map(|v| v as usize);
            let context = p.context.clone();
            p.qas
                .iter_mut()
                .map(|qa| repair_pair(&context, original_len, qa, cfg))
                .collect()
        })
        .collect();
    let mut report = RepairReport::default();
    for o in outcomes.iter().flatten() {
        match (o.found, o.exact) {
            (true, true) => report.exact += 1,
            (true, false) => report.repaired += 1,
            _ => report.not_found += 1,
        }
    }
    (out, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Plain recursive definition, exponential; only for tiny inputs.
    fn lev_recursive(a: &[char], b: &[char]) -> usize {
        match (a.split_first(), b.split_first()) {
            (None, _) => b.len(),
            (_, None) => a.len(),
            (Some((x, ar)), Some((y, br))) => {
                let sub = lev_recursive(ar, br) + usize::from(x != y);
                sub.min(lev_recursive(ar, b) + 1).min(lev_recursive(a, br) + 1)
            }
        }
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein("", "abc"), 3);
        assert_eq!(levenshtein("abc", "abc"), 0);
        assert_eq!(levenshtein("kitten", "sitting"), 3);
        let k: Vec<char> = "kitten".chars().collect();
        let s: Vec<char> = "sitting".chars().collect();
        assert_eq!(lev_recursive(&k, &s), 3);
    }

    #[test]
    fn ratio_examples() {
        assert_eq!(similarity_ratio("abcd", "abcd"), 1.0);
        assert_eq!(similarity_ratio("abcd", "abce"), 0.75);
        assert_eq!(similarity_ratio("", ""), 1.0);
        let r = similarity_ratio("dangerously in love", "berbahaya dalam cinta");
        assert!(r < 0.8, "{r}");
    }

    proptest! {
        #[test]
        fn levenshtein_is_a_metric(a in "[abc]{0,6}", b in "[abc]{0,6}", c in "[abc]{0,6}") {
            let ac: Vec<char> = a.chars().collect();
            let bc: Vec<char> = b.chars().collect();
            let d = levenshtein(&a, &b);
            prop_assert_eq!(d, lev_recursive(&ac, &bc));
            prop_assert_eq!(levenshtein(&a, &a), 0);
            prop_assert_eq!(d, levenshtein(&b, &a));
            prop_assert!(levenshtein(&a, &c) <= d + levenshtein(&b, &c));
        }

        #[test]
        fn raising_threshold_never_finds_more(ctx in "[a-e ]{5,40}", ans in "[a-e]{2,8}", t in 0.3f64..0.9, bump in 0.0f64..0.1) {
            let lo = repair_answer(&ctx, &ans, 0, None, &RepairConfig::new(t, SearchScope::NearOriginalFirst).unwrap());
            let hi = repair_answer(&ctx, &ans, 0, None, &RepairConfig::new(t + bump, SearchScope::NearOriginalFirst).unwrap());
            prop_assert!(lo.found || !hi.found);
            prop_assert_eq!(lo.found, lo.new_start >= 0);
            prop_assert_eq!(lo.found, !lo.matched_text.is_empty());
            prop_assert_eq!(&lo, &repair_answer(&ctx, &ans, 0, None, &RepairConfig::new(t, SearchScope::NearOriginalFirst).unwrap()));
        }
    }

    const CONTEXT: &str = "Beyoncé Giselle Knowles-Carter (/ bi: ˈjɒnsei / bee-YON-say) (lahir 4 September 1981) adalah penyanyi, penulis lagu, produser dan aktris rekaman Amerika. Dilahirkan dan dibesarkan di Houston, Texas, ia tampil di berbagai kompetisi menyanyi dan menari sebagai ... Hiatus mereka melihat rilis album debut Beyoncé, Dangerously in Love (2003), yang ...";

    #[test]
    fn table_i_pairs() {
        let cfg = RepairConfig::default();
        let o = repair_answer(CONTEXT, "Houston, Texas", 166, None, &cfg);
        assert!(o.found && o.exact);
        assert_eq!(o.ratio, 1.0);
        assert_eq!(o.matched_text, "Houston, Texas");
        let chars: Vec<char> = CONTEXT.chars().collect();
        let s = o.new_start as usize;
        assert_eq!(chars[s..s + 14].iter().collect::<String>(), "Houston, Texas");

        let o = repair_answer(CONTEXT, "Berbahaya dalam Cinta", 505, None, &cfg);
        assert!(!o.found);
        assert_eq!(o.new_start, -1);
        assert!(o.matched_text.is_empty());
    }

    #[test]
    fn spacing_perturbation_is_repaired() {
        let o = repair_answer("xx Houston , Texas xx", "Houston, Texas", 3, None, &RepairConfig::default());
        assert!(o.found && !o.exact);
        assert_eq!(o.new_start, 3);
        assert_eq!(o.matched_text, "Houston , Texas");
        assert!((o.ratio - (1.0 - 1.0 / 15.0)).abs() < 1e-12);
    }

    #[test]
    fn case_folded_scoring_keeps_original_case() {
        let o = repair_answer("di kota HOUSTON TEXAS itu", "houston texas", 0, None, &RepairConfig::default());
        assert!(o.found);
        assert_eq!(o.ratio, 1.0);
        assert_eq!(o.matched_text, "HOUSTON TEXAS");
    }

    #[test]
    fn nearest_exact_occurrence_wins() {
        let ctx = "ab xx ab xx ab";
        let o = repair_answer(ctx, "ab", 10, None, &RepairConfig::default());
        assert_eq!(o.new_start, 12);
        let o = repair_answer(ctx, "ab", 4, None, &RepairConfig::default());
        assert_eq!(o.new_start, 6);
        // original 20 of 28 chars maps to 10 here
        let o = repair_answer(ctx, "ab", 20, Some(28), &RepairConfig::default());
        assert_eq!(o.new_start, 12);
    }

    #[test]
    fn corpus_report_partitions_pairs() {
        let text = r#"{"data":[{"title":"t","paragraphs":[{"context":"kota Houston, Texas besar","qas":[
            {"id":"1","question":"q","answers":[{"text":"Houston, Texas","answer_start":5}],"is_impossible":false},
            {"id":"2","question":"q","answers":[{"text":"zzzzzzzz","answer_start":0}],"is_impossible":false}]}]}]}"#;
        let f = crate::corpus::parse_squad(text, "mem").unwrap();
        let (out, report) = repair_corpus(&f.data, &RepairConfig::default());
        assert_eq!(report, RepairReport { repaired: 0, exact: 1, not_found: 1 });
        let qas = &out[0].paragraphs[0].qas;
        assert_eq!(qas[0].indonesian_answer_start, Some(5));
        assert_eq!(qas[1].indonesian_answer_start, Some(-1));
        assert_eq!(qas[1].indonesian_answer.as_deref(), Some(""));

        let (_, empty) = repair_corpus(&[], &RepairConfig::default());
        assert_eq!(empty, RepairReport::default());
    }

    #[test]
    fn threshold_validation() {
        assert!(RepairConfig::new(0.0, SearchScope::WholeContext).is_err());
        assert!(RepairConfig::new(1.2, SearchScope::WholeContext).is_err());
        assert!(RepairConfig::new(1.0, SearchScope::WholeContext).is_ok());
    }
}
