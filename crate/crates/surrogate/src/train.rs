//! Mini-batch training with MSE loss.
//!
//! Samples of a batch run forward and backward in parallel; their gradients
//! are summed in sample order, so results do not depend on thread count.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::adam::{AdamConfig, AdamState};
use crate::data::TrainingSet;
use crate::model::{CnnLstm, ModelConfig, TrainedModel};
use crate::tensor::{NnError, Tensor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("non-finite loss {loss} at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize, loss: f64 },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model and training data disagree: {0}")]
    Incompatible(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    /// 1-based, counting epochs of earlier runs.
    pub epoch: usize,
    pub loss: f64,
    pub elapsed: Duration,
}

/// Untrained model bound to the normalization and prefix of `set`.
pub fn new_model(config: ModelConfig, set: &TrainingSet) -> Result<TrainedModel, TrainError> {
    if config.window != set.window {
        return Err(TrainError::Incompatible(format!("window {} vs {}", config.window, set.window)));
    }
    let network = CnnLstm::build(&config)?;
    Ok(TrainedModel {
        config,
        network,
        normalization: set.normalization.clone(),
        train_steps: set.train_steps,
        loss_history: Vec::new(),
        adam: None,
    })
}

/// Loss and gradients of one sample; `scale` multiplies the gradient.
fn sample_gradients(net: &CnnLstm, input: &[f64], target: &[f64], scale: f64) -> Result<(f64, Vec<Tensor>), NnError> {
    let (y, trace) = net.forward(input)?;
    let n = target.len() as f64;
    let diff: Vec<f64> = y.data().iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let dy = Tensor::new(y.shape().to_vec(), diff.iter().map(|d| 2.0 * d / n * scale).collect())?;
    Ok((loss, net.backward(&trace, &dy)?))
}

/// Mean squared error of the current network over `indices`.
pub fn evaluate_loss(model: &TrainedModel, set: &TrainingSet, indices: &[usize]) -> Result<f64, NnError> {
    let losses = indices
        .par_iter()
        .map(|&i| {
            let y = model.network.predict(set.input(i))?;
            let t = set.target(i);
            Ok(y.data().iter().zip(t).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / t.len() as f64)
        })
        .collect::<Result<Vec<f64>, NnError>>()?;
    Ok(losses.iter().sum::<f64>() / indices.len().max(1) as f64)
}

/// Run `model.config.epochs` more epochs. The per-epoch loss is the
/// sample-weighted mean of the batch losses seen during the epoch.
pub fn train(
    model: &mut TrainedModel,
    set: &TrainingSet,
    mut observer: impl FnMut(&EpochReport),
) -> Result<(), TrainError> {
    if set.is_empty() {
        return Err(TrainError::Incompatible("no training samples".into()));
    }
    if model.normalization != set.normalization || model.train_steps != set.train_steps || model.config.window != set.window {
        return Err(TrainError::Incompatible("normalization, prefix or window differ".into()));
    }
    let cfg = model.config.clone();
    let adam_cfg = AdamConfig { learning_rate: cfg.learning_rate, ..AdamConfig::default() };
    let mut adam = match model.adam.take() {
        Some(state) => state,
        None => AdamState::new(adam_cfg, &model.network.params()),
    };
    let mut order: Vec<usize> = (0..set.len()).collect();
    for _ in 0..cfg.epochs {
        let started = Instant::now();
        let epoch = model.loss_history.len() + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64));
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f64;
            let net = &model.network;
            let results = batch
                .par_iter()
                .map(|&i| sample_gradients(net, set.input(i), set.target(i), scale))
                .collect::<Result<Vec<_>, NnError>>()?;
            let mut iter = results.into_iter();
            let (first_loss, mut grads) = iter.next().expect("batch is non-empty");
            let mut batch_loss = first_loss;
            for (loss, g) in iter {
                batch_loss += loss;
                grads.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b));
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                model.adam = Some(adam);
                return Err(TrainError::NonFinite { epoch, batch: b + 1, loss: batch_loss / batch.len() as f64 });
            }
            total += batch_loss;
            adam.update(&mut model.network.params_mut(), &grads);
        }
        let loss = total / set.len() as f64;
        model.loss_history.push(loss);
        observer(&EpochReport { epoch, loss, elapsed: started.elapsed() });
    }
    model.adam = Some(adam);
    Ok(())
}
