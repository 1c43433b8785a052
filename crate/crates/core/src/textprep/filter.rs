use serde::{Deserialize, Serialize};

use crate::corpus::{PreparedExample, MAX_ANSWER_TOKENS, MAX_QUESTION_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "mode")]
pub enum FilterMode {
    /// Drop questions over 60 tokens and answers over 20 tokens.
    #[default]
    FixedCaps,
    /// Drop the `fraction` longest questions and the `fraction` longest
    /// answers (counted separately, rounded down), then apply the caps.
    Percentile { fraction: f64 },
}

/// Indices of the `k` largest `lens`, ties resolved towards earlier indices.
fn top_k(lens: &[usize], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..lens.len()).collect();
    order.sort_by(|&a, &b| lens[b].cmp(&lens[a]).then(a.cmp(&b)));
    order.truncate(k);
    order
}

pub fn filter_outliers(examples: Vec<PreparedExample>, mode: FilterMode) -> Vec<PreparedExample> {
    let mut keep = vec![true; examples.len()];
    if let FilterMode::Percentile { fraction } = mode {
        let k = (examples.len() as f64 * fraction.clamp(0.0, 1.0)).floor() as usize;
        let q: Vec<usize> = examples.iter().map(|e| e.tgt.len()).collect();
        let a: Vec<usize> = examples.iter().map(|e| e.answer_text.len()).collect();
        for i in top_k(&q, k).into_iter().chain(top_k(&a, k)) {
            keep[i] = false;
        }
    }
    examples
        .into_iter()
        .zip(keep)
        .filter(|(e, k)| *k && e.tgt.len() <= MAX_QUESTION_TOKENS && e.answer_text.len() <= MAX_ANSWER_TOKENS)
        .map(|(e, _)| e)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ex(q: usize, a: usize) -> PreparedExample {
        PreparedExample {
            src: vec!["x".into()],
            tgt: vec!["q".into(); q],
            ans: vec![1],
            case: vec![0],
            pos: vec!["X".into()],
            ne: vec!["O".into()],
            answer_text: vec!["a".into(); a],
        }
    }

    #[test]
    fn caps() {
        assert!(filter_outliers(vec![ex(61, 1)], FilterMode::FixedCaps).is_empty());
        assert!(filter_outliers(vec![ex(5, 21)], FilterMode::FixedCaps).is_empty());
        assert_eq!(filter_outliers(vec![ex(60, 20)], FilterMode::FixedCaps).len(), 1);
    }

    #[test]
    fn percentile_matches_sort_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs: Vec<PreparedExample> = (0..200)
            .map(|_| ex(rng.gen_range(1..70), rng.gen_range(1..25)))
            .collect();
        // oracle: stable sort by length descending, flag the first 2 of each
        let mut flagged = std::collections::BTreeSet::new();
        let mut by_q: Vec<(usize, usize)> = xs.iter().enumerate().map(|(i, e)| (e.tgt.len(), i)).collect();
        by_q.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        let mut by_a: Vec<(usize, usize)> = xs.iter().enumerate().map(|(i, e)| (e.answer_text.len(), i)).collect();
        by_a.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
        flagged.extend(by_q.iter().take(2).map(|p| p.1));
        flagged.extend(by_a.iter().take(2).map(|p| p.1));
        let expected = xs
            .iter()
            .enumerate()
            .filter(|(i, e)| !flagged.contains(i) && e.tgt.len() <= 60 && e.answer_text.len() <= 20)
            .count();

        let out = filter_outliers(xs, FilterMode::Percentile { fraction: 0.01 });
        assert_eq!(out.len(), expected);
        assert!(out.iter().all(|e| e.tgt.len() <= 60 && e.answer_text.len() <= 20));
    }
}
