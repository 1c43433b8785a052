use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ParamStore, Result, Tensor, TensorError};

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    pub tolerance: f64,
    /// Coordinates checked per parameter; tensors with more entries are sampled.
    pub max_coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            tolerance: 1e-4,
            max_coords_per_param: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
    /// Coordinate, analytic value and numeric value of the worst entry.
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn worst_param(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Compares the analytic gradient returned by `f` with central differences
/// `(f(θ+ε) − f(θ−ε)) / 2ε`, one coordinate at a time.
///
/// `f` returns the scalar loss and one dense gradient tensor per parameter in
/// store order. The store is restored to its original values on return.
pub fn grad_check<F>(store: &mut ParamStore, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Vec<Tensor>)>,
{
    let (loss, analytic) = f(store)?;
    let (again, _) = f(store)?;
    if loss.to_bits() != again.to_bits() {
        return Err(TensorError::NonDeterministic {
            first: loss,
            second: again,
        });
    }
    if analytic.len() != store.len() {
        return Err(TensorError::Harness(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            store.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut checks = Vec::with_capacity(store.len());
    let ids: Vec<_> = store.ids().collect();
    for (id, grad) in ids.into_iter().zip(&analytic) {
        let n = store.get(id).value.len();
        if grad.len() != n {
            return Err(TensorError::Harness(format!(
                "gradient for {} has {} entries, expected {n}",
                store.get(id).name,
                grad.len()
            )));
        }
        let coords: Vec<usize> = if n <= cfg.max_coords_per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, cfg.max_coords_per_param).into_vec();
            v.sort_unstable();
            v
        };

        let mut max_rel = 0.0f64;
        let mut worst = None;
        for &c in &coords {
            let original = store.get(id).value.data()[c];
            store.get_mut(id).value.data_mut()[c] = original + cfg.epsilon;
            let plus = f(store).map(|r| r.0);
            store.get_mut(id).value.data_mut()[c] = original - cfg.epsilon;
            let minus = f(store).map(|r| r.0);
            store.get_mut(id).value.data_mut()[c] = original;
            let numeric = (plus? - minus?) / (2.0 * cfg.epsilon);
            let a = grad.data()[c];
            let rel = relative_error(a, numeric);
            if rel > max_rel || worst.is_none() {
                max_rel = max_rel.max(rel);
                worst = Some((c, a, numeric));
            }
        }
        checks.push(ParamCheck {
            name: store.get(id).name.clone(),
            coords_checked: coords.len(),
            max_rel_error: max_rel,
            worst,
        });
    }

    let max_rel_error = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        passed: max_rel_error < cfg.tolerance,
        params: checks,
        max_rel_error,
    })
}
