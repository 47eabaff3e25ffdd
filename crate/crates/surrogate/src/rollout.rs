//! Autoregressive forecast past the training prefix.
//!
//! Frames up to `N` use the simulated product; later frames use the model's
//! own predictions. Velocity and dispersion channels always come from the
//! dataset. Each frame is encoded once and its LSTM input projection reused
//! by every window that contains it.

use std::time::{Duration, Instant};

use rtmix_core::{Channel, SnapshotDataset};
use thiserror::Error;

use crate::data::{normalization_for, normalized_frame, DataError};
use crate::model::TrainedModel;
use crate::tensor::NnError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RolloutError {
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("cannot roll out to step {to} from a prefix of {from} steps")]
    Range { from: usize, to: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    /// Step of `frames[0]`, i.e. `N + 1`.
    pub first_step: usize,
    pub frames: Vec<Vec<f64>>,
    /// Wall-clock time of each prediction.
    pub step_times: Vec<Duration>,
}

impl Rollout {
    pub fn last_step(&self) -> usize {
        self.first_step + self.frames.len() - 1
    }

    pub fn mean_step_time(&self) -> Duration {
        if self.step_times.is_empty() {
            return Duration::ZERO;
        }
        self.step_times.iter().sum::<Duration>() / self.step_times.len() as u32
    }
}

/// Check grid, prefix length and normalization constants against `ds`.
pub fn check_compatible(model: &TrainedModel, ds: &SnapshotDataset) -> Result<(), RolloutError> {
    let cfg = &model.config;
    if cfg.nx != ds.nx() || cfg.ny != ds.ny() {
        return Err(DataError::GridMismatch { model_nx: cfg.nx, model_ny: cfg.ny, nx: ds.nx(), ny: ds.ny() }.into());
    }
    let n = model.train_steps;
    if n < cfg.window {
        return Err(RolloutError::Range { from: n, to: n });
    }
    let norm = normalization_for(ds, n)?;
    for c in 0..norm.channels() {
        let same = |a: &[f64], b: &[f64]| a.get(c).map(|v| v.to_bits()) == b.get(c).map(|v| v.to_bits());
        if !same(&norm.min, &model.normalization.min) || !same(&norm.max, &model.normalization.max) {
            return Err(DataError::NormalizationMismatch { channel: c }.into());
        }
    }
    if norm.channels() != model.normalization.channels() {
        return Err(DataError::NormalizationMismatch { channel: norm.channels() }.into());
    }
    Ok(())
}

/// Predict `c_C` for steps `N+1..=to_step`.
pub fn rollout(model: &TrainedModel, ds: &SnapshotDataset, to_step: usize) -> Result<Rollout, RolloutError> {
    check_compatible(model, ds)?;
    let n = model.train_steps;
    let w = model.config.window;
    if to_step <= n {
        return Err(RolloutError::Range { from: n, to: to_step });
    }
    // Predicting step k+1 reads frames k−W+1..=k.
    if ds.steps() < to_step - 1 {
        return Err(DataError::MissingSteps { have: ds.steps(), need: to_step - 1 }.into());
    }
    let net = &model.network;
    let norm = &model.normalization;
    // projections[s] holds step s + 1.
    let mut projections: Vec<Vec<f64>> = Vec::with_capacity(to_step);
    for s in (n + 1 - w)..=n {
        while projections.len() + 1 < s {
            projections.push(Vec::new());
        }
        projections.push(net.frame_projection(&normalized_frame(ds, s, norm, None))?);
    }
    let mut frames = Vec::with_capacity(to_step - n);
    let mut step_times = Vec::with_capacity(to_step - n);
    for k in n..to_step {
        let started = Instant::now();
        if k > n {
            let prev: &Vec<f64> = frames.last().expect("a prediction exists for k > N");
            projections.push(net.frame_projection(&normalized_frame(ds, k, norm, Some(prev)))?);
        }
        let pred = net.predict_from_projections(&projections[k - w..k])?;
        step_times.push(started.elapsed());
        frames.push(pred.into_data());
    }
    Ok(Rollout { first_step: n + 1, frames, step_times })
}

/// Same forecast without the projection cache; every window is re-encoded.
pub fn rollout_uncached(model: &TrainedModel, ds: &SnapshotDataset, to_step: usize) -> Result<Rollout, RolloutError> {
    check_compatible(model, ds)?;
    let n = model.train_steps;
    let w = model.config.window;
    if to_step <= n {
        return Err(RolloutError::Range { from: n, to: to_step });
    }
    let mut frames: Vec<Vec<f64>> = Vec::new();
    let mut step_times = Vec::new();
    for k in n..to_step {
        let started = Instant::now();
        let mut window = Vec::new();
        for s in (k + 1 - w)..=k {
            let product = (s > n).then(|| frames[s - n - 1].as_slice());
            window.extend(normalized_frame(ds, s, &model.normalization, product));
        }
        let pred = model.network.predict(&window)?;
        step_times.push(started.elapsed());
        frames.push(pred.into_data());
    }
    Ok(Rollout { first_step: n + 1, frames, step_times })
}

/// Ground-truth `c_C` for the rolled-out steps, for comparisons.
pub fn truth_for(ds: &SnapshotDataset, rollout: &Rollout) -> Vec<Vec<f64>> {
    (rollout.first_step..=rollout.last_step()).map(|s| ds.frame(s, Channel::Product).to_vec()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::make_training_samples;
    use crate::model::ModelConfig;
    use crate::train::new_model;
    use rtmix_core::SimulationConfig;

    fn dataset(steps: usize) -> SnapshotDataset {
        let cfg = SimulationConfig { t_end: steps as f64 * 1e-3, ..SimulationConfig::reaction_tank(9, 2.0) };
        let mut ds = SnapshotDataset::new(cfg);
        for s in 1..=steps {
            let fields: Vec<Vec<f64>> =
                (0..6).map(|c| (0..81).map(|i| ((s * 7 + c * 3 + i) % 11) as f64 / 11.0).collect()).collect();
            ds.push(&fields);
        }
        ds
    }

    fn model(ds: &SnapshotDataset, fraction: f64, window: usize) -> TrainedModel {
        let set = make_training_samples(ds, fraction, window).unwrap();
        let cfg = ModelConfig { conv_layers: 1, filters: 3, lstm_units: 5, window, ..ModelConfig::reference(9, 9) };
        new_model(cfg, &set).unwrap()
    }

    #[test]
    fn counts_and_range() {
        let ds = dataset(20);
        let m = model(&ds, 0.5, 3);
        let r = rollout(&m, &ds, 20).unwrap();
        assert_eq!(r.first_step, 11);
        assert_eq!(r.frames.len(), 10);
        assert_eq!(r.last_step(), 20);
        assert_eq!(rollout(&m, &ds, 11).unwrap().frames.len(), 1);
        assert!(matches!(rollout(&m, &ds, 10), Err(RolloutError::Range { .. })));
        for f in &r.frames {
            assert!(f.iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn cache_is_bitwise_transparent() {
        let ds = dataset(20);
        let m = model(&ds, 0.4, 4);
        let cached = rollout(&m, &ds, 20).unwrap();
        let plain = rollout_uncached(&m, &ds, 20).unwrap();
        assert_eq!(cached.frames, plain.frames);
        assert_eq!(rollout(&m, &ds, 20).unwrap().frames, cached.frames);
    }

    #[test]
    fn constant_network_gives_constant_frames() {
        let ds = dataset(15);
        let mut m = model(&ds, 0.6, 2);
        for p in m.network.head.params_mut() {
            p.value.fill(0.0);
        }
        let r = rollout(&m, &ds, 15).unwrap();
        assert!(r.frames.iter().flatten().all(|&v| v == 0.5));
    }

    #[test]
    fn frames_outside_the_window_do_not_matter() {
        let ds = dataset(20);
        let m = model(&ds, 0.5, 3);
        let base = rollout(&m, &ds, 11).unwrap();
        // Step 11 is predicted from steps 8..=10; step 7 lies outside.
        let mut poked = ds.clone();
        poked.frame_mut(7, Channel::VelocityX)[4] = 0.3;
        poked.frame_mut(7, Channel::Product)[4] = 0.1;
        let same = rollout_uncached(&m, &poked, 11).unwrap_or_else(|_| panic!());
        assert_eq!(same.frames, base.frames);
    }

    #[test]
    fn foreign_normalization_rejected() {
        let ds = dataset(20);
        let mut m = model(&ds, 0.5, 3);
        m.normalization.max[2] += 1e-9;
        assert!(matches!(rollout(&m, &ds, 20), Err(RolloutError::Data(DataError::NormalizationMismatch { channel: 2 }))));
        let other = dataset(20);
        let mut shifted = other.clone();
        shifted.frame_mut(1, Channel::DispersionXX)[0] = 50.0;
        let m = model(&ds, 0.5, 3);
        assert!(rollout(&m, &shifted, 20).is_err());
    }
}
