//! Dense row-major arrays, a closed set of differentiable operations and a
//! finite-difference gradient checker.
//!
//! Model code builds its forward computation on a [`Graph`], which records
//! every operation. Each operation carries its own analytic backward rule;
//! [`Graph::backward`] replays them in reverse. [`grad_check`] certifies the
//! composition against central differences.

mod gradcheck;
mod graph;
mod param;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, NodeId};
pub use param::{ParamId, ParamStore, Parameter};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("numeric error in {0}: non-finite input")]
    NonFinite(&'static str),
    #[error("nll_loss: every target is padding")]
    AllPadding,
    #[error("target id {id} out of range for {classes} classes")]
    TargetRange { id: usize, classes: usize },
    #[error("gradient check: function is not deterministic ({first} vs {second})")]
    NonDeterministic { first: f64, second: f64 },
    #[error("gradient check: {0}")]
    Harness(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::Shape {
                op: "Tensor::new",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// A `[1, n]` row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Self {
            shape: vec![1, data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// Xavier/Glorot uniform initialisation for a `[fan_in, fan_out]` matrix.
    pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        Self::uniform(&[rows, cols], bound, rng)
    }

    pub fn uniform<R: Rng>(shape: &[usize], bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of a 2-D view; a 1-D tensor is a single row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(TensorError::Shape {
                op: "reshape",
                left: self.shape,
                right: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn scale_assign(&mut self, s: f64) {
        for a in &mut self.data {
            *a *= s;
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn argmax(&self) -> usize {
        argmax(&self.data)
    }
}

/// Index of the largest entry; ties go to the smaller index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Softmax over `axis` of a tensor with at most two dimensions
/// (`axis = last` normalises each row, `axis = 0` each column).
pub fn softmax(x: &Tensor, axis: usize) -> Result<Tensor> {
    if x.data.iter().any(|v| v.is_nan()) {
        return Err(TensorError::NonFinite("softmax"));
    }
    let rank = x.shape.len().max(1);
    if axis >= rank || rank > 2 {
        return Err(TensorError::Shape {
            op: "softmax",
            left: x.shape.clone(),
            right: vec![axis],
        });
    }
    let (rows, cols) = (x.rows(), x.cols());
    let mut out = x.clone();
    if axis + 1 == rank {
        for r in 0..rows {
            softmax_in_place(&mut out.data[r * cols..(r + 1) * cols]);
        }
    } else {
        for c in 0..cols {
            let mut column: Vec<f64> = (0..rows).map(|r| x.data[r * cols + c]).collect();
            softmax_in_place(&mut column);
            for (r, v) in column.into_iter().enumerate() {
                out.data[r * cols + c] = v;
            }
        }
    }
    Ok(out)
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

/// Mean negative log-probability of `targets` under row-wise
/// log-probabilities, skipping positions whose target is `pad_id`.
pub fn nll_loss(log_probs: &Tensor, targets: &[usize], pad_id: usize) -> Result<f64> {
    if log_probs.rows() != targets.len() {
        return Err(TensorError::Shape {
            op: "nll_loss",
            left: log_probs.shape.clone(),
            right: vec![targets.len()],
        });
    }
    let classes = log_probs.cols();
    let mut total = 0.0;
    let mut count = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        if t == pad_id {
            continue;
        }
        if t >= classes {
            return Err(TensorError::TargetRange { id: t, classes });
        }
        total -= log_probs.get(r, t);
        count += 1;
    }
    if count == 0 {
        return Err(TensorError::AllPadding);
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_symmetric_pair() {
        let y = softmax(&Tensor::row(vec![0.0, 0.0]), 1).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let y = softmax(&Tensor::row(vec![1000.0, 0.0]), 1).unwrap();
        assert!(y.is_finite());
        assert!((y.data()[0] - 1.0).abs() < 1e-12);
        assert!(y.data()[1] < 1e-300 || y.data()[1] == 0.0);
    }

    #[test]
    fn softmax_rejects_nan() {
        let err = softmax(&Tensor::row(vec![f64::NAN, 0.0]), 1).unwrap_err();
        assert_eq!(err, TensorError::NonFinite("softmax"));
    }

    #[test]
    fn softmax_columns() {
        let x = Tensor::matrix(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let y = softmax(&x, 0).unwrap();
        for v in y.data() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    /// Extended-precision reference: exp and sums evaluated with a
    /// compensated (Kahan) accumulator on differences from the maximum,
    /// using the series-free identity softmax_i = 1 / sum_j exp(x_j - x_i).
    fn softmax_reference(xs: &[f64]) -> Vec<f64> {
        xs.iter()
            .map(|&xi| {
                let mut sum = 0.0f64;
                let mut comp = 0.0f64;
                for &xj in xs {
                    let term = (xj - xi).exp() - comp;
                    let t = sum + term;
                    comp = (t - sum) - term;
                    sum = t;
                }
                1.0 / sum
            })
            .collect()
    }

    #[test]
    fn softmax_random_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let xs: Vec<f64> = (0..5).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let y = softmax(&Tensor::row(xs.clone()), 1).unwrap();
            let r = softmax_reference(&xs);
            for (a, b) in y.data().iter().zip(&r) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn nll_of_perfect_prediction_is_zero() {
        let lp = Tensor::matrix(2, 3, vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY]).unwrap();
        assert_eq!(nll_loss(&lp, &[0, 1], 99).unwrap(), 0.0);
    }

    #[test]
    fn nll_uniform_is_log_v() {
        let v = 7;
        let lp = Tensor::filled(&[3, v], -(v as f64).ln());
        let l = nll_loss(&lp, &[1, 2, 6], 0).unwrap();
        assert!((l - (v as f64).ln()).abs() < 1e-15);
    }

    #[test]
    fn nll_skips_padding_and_rejects_all_pad() {
        let lp = Tensor::matrix(2, 2, vec![-0.1, -2.0, -0.3, -1.5]).unwrap();
        let l = nll_loss(&lp, &[1, 0], 0).unwrap();
        assert!((l - 2.0).abs() < 1e-15);
        assert_eq!(nll_loss(&lp, &[0, 0], 0), Err(TensorError::AllPadding));
        assert!(matches!(nll_loss(&lp, &[5, 1], 0), Err(TensorError::TargetRange { .. })));
    }

    #[test]
    fn nll_random_matches_hand_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows = 6;
        let cols = 4;
        let mut data = Vec::new();
        for _ in 0..rows {
            let mut r: Vec<f64> = (0..cols).map(|_| rng.gen_range(-3.0..3.0)).collect();
            softmax_in_place(&mut r);
            data.extend(r.into_iter().map(f64::ln));
        }
        let lp = Tensor::matrix(rows, cols, data.clone()).unwrap();
        let targets = [1, 0, 3, 2, 0, 1];
        // pad id 0 drops rows 1 and 4
        let hand = -(data[1] + data[2 * cols + 3] + data[3 * cols + 2] + data[5 * cols + 1]) / 4.0;
        assert!((nll_loss(&lp, &targets, 0).unwrap() - hand).abs() < 1e-10);
    }
}
