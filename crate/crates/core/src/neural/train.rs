use serde::{Deserialize, Serialize};

use super::{batch_order, Optimizer, OptimizerConfig, ParamStore};
use crate::error::{Error, Result};

/// Per-epoch training record and the epoch whose parameters were kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    /// Dev accuracy after each epoch; empty when no dev set was given.
    pub dev_accuracy: Vec<f64>,
    /// 0 means the initial parameters were returned.
    pub selected_epoch: usize,
    pub steps: u64,
}

/// Mini-batch training with end-of-epoch checkpoint selection.
///
/// `batch_loss` receives zeroed gradients, must accumulate the gradient of the
/// batch loss and return the loss. `dev_accuracy` scores a checkpoint; the
/// best-scoring epoch is returned (earliest on ties). When it yields `None`
/// the final epoch is kept.
pub fn fit<M, P, L, D>(
    mut model: M,
    num_items: usize,
    config: &OptimizerConfig,
    params: P,
    mut batch_loss: L,
    mut dev_accuracy: D,
) -> Result<(M, TrainReport)>
where
    M: Clone,
    P: Fn(&mut M) -> &mut ParamStore,
    L: FnMut(&mut M, &[usize]) -> Result<f64>,
    D: FnMut(&M) -> Option<f64>,
{
    config.validate()?;
    let mut report = TrainReport::default();
    if config.epochs == 0 || num_items == 0 {
        return Ok((model, report));
    }
    let mut optimizer = Optimizer::new(config, params(&mut model));
    let mut best: Option<(f64, usize, M)> = None;
    for epoch in 1..=config.epochs {
        let order = batch_order(num_items, config.seed, epoch as u64);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            params(&mut model).zero_grad();
            let loss = batch_loss(&mut model, batch)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss in epoch {epoch}")));
            }
            total += loss;
            optimizer.step(params(&mut model), batch.len());
            if let Some(t) = params(&mut model).tensors().iter().find(|t| t.data.iter().any(|v| !v.is_finite())) {
                return Err(Error::Numeric(format!("training diverged in epoch {epoch}: {} is not finite", t.name)));
            }
        }
        report.epoch_loss.push(total);
        match dev_accuracy(&model) {
            Some(acc) => {
                report.dev_accuracy.push(acc);
                if best.as_ref().is_none_or(|(b, _, _)| acc > *b) {
                    best = Some((acc, epoch, model.clone()));
                }
            }
            None => report.selected_epoch = epoch,
        }
    }
    params(&mut model).zero_grad();
    report.steps = optimizer.steps();
    match best {
        Some((_, epoch, mut chosen)) => {
            report.selected_epoch = epoch;
            params(&mut chosen).zero_grad();
            Ok((chosen, report))
        }
        None => Ok((model, report)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::Tensor;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.push(Tensor::from_data("w", 1, 1, vec![0.0]).unwrap());
        p
    }

    fn loss(p: &mut ParamStore, batch: &[usize]) -> Result<f64> {
        let t = p.tensor_mut(0);
        let w = t.data[0];
        t.grad[0] += batch.len() as f64 * (w - 1.0);
        Ok(batch.len() as f64 * 0.5 * (w - 1.0) * (w - 1.0))
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let cfg = OptimizerConfig {
            epochs: 0,
            ..Default::default()
        };
        let (m, r) = fit(store(), 10, &cfg, |p| p, loss, |_| Some(0.0)).unwrap();
        assert_eq!(m, store());
        assert_eq!(r.selected_epoch, 0);
    }

    #[test]
    fn selects_best_dev_epoch_earliest_on_ties() {
        let cfg = OptimizerConfig {
            epochs: 5,
            batch_size: 4,
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut calls = 0;
        let scores = [0.2, 0.7, 0.7, 0.1, 0.5];
        let (_, r) = fit(store(), 10, &cfg, |p| p, loss, |_| {
            calls += 1;
            Some(scores[calls - 1])
        })
        .unwrap();
        assert_eq!(r.selected_epoch, 2);
        assert_eq!(r.dev_accuracy, scores.to_vec());
        assert!(r.epoch_loss.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn without_dev_keeps_last_epoch() {
        let cfg = OptimizerConfig {
            epochs: 3,
            ..Default::default()
        };
        let (_, r) = fit(store(), 10, &cfg, |p| p, loss, |_| None).unwrap();
        assert_eq!(r.selected_epoch, 3);
    }

    #[test]
    fn training_is_reproducible() {
        let cfg = OptimizerConfig {
            epochs: 4,
            batch_size: 3,
            ..Default::default()
        };
        let a = fit(store(), 11, &cfg, |p| p, loss, |_| None).unwrap();
        let b = fit(store(), 11, &cfg, |p| p, loss, |_| None).unwrap();
        assert_eq!(a.0.tensor(0).data[0].to_bits(), b.0.tensor(0).data[0].to_bits());
    }
}
