use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ParamStore;
use crate::error::{Error, Result};

/// Compare analytic gradients against central differences.
///
/// `loss_fn` must zero nothing itself: it receives a store whose gradients were
/// zeroed, returns the loss and accumulates its analytic gradient. Up to
/// `max_coords` coordinates are sampled under `seed` (all of them when the
/// model is smaller). Returns the max of
/// `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn grad_check<F>(mut loss_fn: F, params: &ParamStore, h: f64, max_coords: usize, seed: u64) -> Result<f64>
where
    F: FnMut(&mut ParamStore) -> Result<f64>,
{
    if !(h > 0.0) {
        return Err(Error::Config(format!("step h must be > 0, got {h}")));
    }
    let mut work = params.clone();
    work.zero_grad();
    let base = loss_fn(&mut work)?;
    if !base.is_finite() {
        return Err(Error::Numeric(format!("loss is not finite: {base}")));
    }
    let analytic = work.clone();

    let total = params.num_params();
    let coords: Vec<usize> = if total <= max_coords {
        (0..total).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, total, max_coords).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut worst = 0.0f64;
    for i in coords {
        let (t, j) = params.locate(i);
        let original = params.tensor(t).data[j];
        let mut eval = |value: f64| -> Result<f64> {
            let mut p = params.clone();
            p.tensor_mut(t).data[j] = value;
            p.zero_grad();
            let l = loss_fn(&mut p)?;
            if l.is_finite() {
                Ok(l)
            } else {
                Err(Error::Numeric(format!("loss is not finite at coordinate {i}")))
            }
        };
        let numeric = (eval(original + h)? - eval(original - h)?) / (2.0 * h);
        let a = analytic.tensor(t).grad[j];
        let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}
