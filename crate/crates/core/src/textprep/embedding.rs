use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::vocab::{Vocabulary, PAD};
use super::TextprepError;
use crate::tensor::Tensor;

pub const DEFAULT_WORD_DIM: usize = 300;
/// Half-width of the uniform range used for rows the vector file lacks.
pub const MISSING_ROW_BOUND: f64 = 0.1;

/// One row per vocabulary id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub table: Tensor,
    /// Number of rows copied from the vector file.
    pub pretrained_rows: usize,
}

impl EmbeddingMatrix {
    /// Every row uniform in `[-0.1, 0.1]`, PAD row zero.
    pub fn random(vocab_size: usize, dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data: Vec<f64> = (0..vocab_size * dim)
            .map(|_| rng.gen_range(-MISSING_ROW_BOUND..=MISSING_ROW_BOUND))
            .collect();
        if vocab_size > PAD {
            data[PAD * dim..(PAD + 1) * dim].iter_mut().for_each(|x| *x = 0.0);
        }
        Self {
            table: Tensor::new(vec![vocab_size, dim], data).expect("shape"),
            pretrained_rows: 0,
        }
    }

    pub fn rows(&self) -> usize {
        self.table.rows()
    }

    pub fn dim(&self) -> usize {
        self.table.cols()
    }

    pub fn row(&self, id: usize) -> &[f64] {
        self.table.row_slice(id)
    }
}

/// Reads a word-vector text file (`count dim` header, then
/// `token v1 ... vd` per line). Tokens outside `vocab` are skipped; the
/// first occurrence of a duplicate wins.
pub fn load_word_vectors(
    path: &Path,
    vocab: &Vocabulary,
    expected_dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix, TextprepError> {
    let p = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| TextprepError::Io {
        path: p.clone(),
        message: e.to_string(),
    })?;
    parse_word_vectors(&text, &p, vocab, expected_dim, seed)
}

pub fn parse_word_vectors(
    text: &str,
    path: &str,
    vocab: &Vocabulary,
    expected_dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix, TextprepError> {
    let bad = |line: usize, message: String| TextprepError::WordVectors {
        path: path.to_owned(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, "missing `count dim` header".into()))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        [c, d] => (
            c.parse::<usize>().map_err(|e| bad(1, format!("count: {e}")))?,
            d.parse::<usize>().map_err(|e| bad(1, format!("dim: {e}")))?,
        ),
        _ => return Err(bad(1, "header must be `count dim`".into())),
    };
    if dim != expected_dim {
        return Err(TextprepError::Config(format!(
            "{path}: vectors have dimension {dim}, model expects {expected_dim}"
        )));
    }

    let mut m = EmbeddingMatrix::random(vocab.len(), dim, seed);
    let mut seen = HashSet::new();
    let mut rows_read = 0usize;
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        rows_read += 1;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != dim + 1 {
            return Err(bad(i + 1, format!("expected token and {dim} values, found {} fields", parts.len())));
        }
        let values = parts[1..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| bad(i + 1, e.to_string()))?;
        let token = parts[0];
        if !vocab.contains(token) || !seen.insert(token.to_owned()) {
            continue;
        }
        let id = vocab.id(token);
        m.table.data_mut()[id * dim..(id + 1) * dim].copy_from_slice(&values);
        m.pretrained_rows += 1;
    }
    if rows_read != count {
        return Err(bad(1, format!("header announces {count} vectors, file has {rows_read}")));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::textprep::vocab::build_vocab;

    fn vocab() -> Vocabulary {
        build_vocab("halo dunia dunia".split(' '), 100, 1)
    }

    #[test]
    fn rows_are_copied_exactly() {
        let text = "2 3\nhalo 0.1 -2.5 3e-3\nasing 1 1 1\n";
        let v = vocab();
        let m = parse_word_vectors(text, "mem", &v, 3, 0).unwrap();
        assert_eq!(m.row(v.id("halo")), [0.1, -2.5, 3e-3]);
        assert_eq!(m.pretrained_rows, 1);
        assert!(m.row(PAD).iter().all(|&x| x == 0.0));
        assert!(m.row(v.id("dunia")).iter().all(|x| x.abs() <= MISSING_ROW_BOUND));
        assert_eq!(m.rows(), v.len());
    }

    #[test]
    fn seeded_and_deterministic() {
        let v = vocab();
        let a = parse_word_vectors("0 4\n", "mem", &v, 4, 9).unwrap();
        let b = parse_word_vectors("0 4\n", "mem", &v, 4, 9).unwrap();
        let c = parse_word_vectors("0 4\n", "mem", &v, 4, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn errors() {
        let v = vocab();
        assert!(matches!(
            parse_word_vectors("1 5\nhalo 1 2 3 4 5\n", "mem", &v, 300, 0),
            Err(TextprepError::Config(_))
        ));
        let err = parse_word_vectors("2 2\nhalo 1 2\ndunia 1 x\n", "mem", &v, 2, 0).unwrap_err();
        assert!(err.to_string().contains("mem:3"), "{err}");
        let err = parse_word_vectors("1 2\nhalo 1\n", "mem", &v, 2, 0).unwrap_err();
        assert!(err.to_string().contains("mem:2"), "{err}");
    }
}
