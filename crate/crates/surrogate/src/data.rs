//! Training windows cut from the head of a snapshot dataset.

use rtmix_core::{Channel, SnapshotDataset};
use thiserror::Error;

use crate::model::Normalization;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DataError {
    #[error("training fraction must lie in (0, 1], got {0}")]
    BadFraction(f64),
    #[error("training prefix of {prefix} steps is too short for a window of {window} (needs at least {})", window + 1)]
    TooShort { prefix: usize, window: usize },
    #[error("window length must be positive")]
    ZeroWindow,
    #[error("dataset has {have} steps, {need} required")]
    MissingSteps { have: usize, need: usize },
    #[error("normalization constants differ from the ones recomputed on this dataset (channel {channel})")]
    NormalizationMismatch { channel: usize },
    #[error("model expects a {model_nx}×{model_ny} grid, dataset is {nx}×{ny}")]
    GridMismatch { model_nx: usize, model_ny: usize, nx: usize, ny: usize },
}

/// `N = round(f · total)`.
pub fn train_steps_for(total: usize, fraction: f64) -> Result<usize, DataError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(DataError::BadFraction(fraction));
    }
    Ok((fraction * total as f64).round() as usize)
}

/// Per-channel min and max of the model input channels over steps `1..=steps`.
pub fn normalization_for(ds: &SnapshotDataset, steps: usize) -> Result<Normalization, DataError> {
    if steps > ds.steps() {
        return Err(DataError::MissingSteps { have: ds.steps(), need: steps });
    }
    let mut min = vec![f64::INFINITY; Channel::MODEL_INPUTS.len()];
    let mut max = vec![f64::NEG_INFINITY; Channel::MODEL_INPUTS.len()];
    for s in 1..=steps {
        for (c, ch) in Channel::MODEL_INPUTS.into_iter().enumerate() {
            for &v in ds.frame(s, ch) {
                min[c] = min[c].min(v);
                max[c] = max[c].max(v);
            }
        }
    }
    Ok(Normalization { min, max })
}

/// Normalized model input for one step, `channels × nodes`.
pub fn normalized_frame(ds: &SnapshotDataset, step: usize, norm: &Normalization, product: Option<&[f64]>) -> Vec<f64> {
    let mut out = Vec::with_capacity(Channel::MODEL_INPUTS.len() * ds.node_count());
    for (c, ch) in Channel::MODEL_INPUTS.into_iter().enumerate() {
        let values = match (ch, product) {
            (Channel::Product, Some(p)) => p,
            _ => ds.frame(step, ch),
        };
        out.extend(values.iter().map(|&v| norm.apply(c, v)));
    }
    out
}

/// Windows ending at `k = W..=N−1` with targets `c_C` at `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub window: usize,
    pub train_steps: usize,
    pub normalization: Normalization,
    frame_len: usize,
    node_count: usize,
    /// Normalized frames for steps `1..=N`.
    frames: Vec<f64>,
    /// Raw `c_C` for steps `1..=N`.
    targets: Vec<f64>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.train_steps - self.window
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Last input step of sample `i`.
    pub fn window_end(&self, i: usize) -> usize {
        self.window + i
    }

    /// Input frames `k−W+1..=k`, oldest first.
    pub fn input(&self, i: usize) -> &[f64] {
        let k = self.window_end(i);
        &self.frames[(k - self.window) * self.frame_len..k * self.frame_len]
    }

    /// Raw `c_C` at step `k + 1`.
    pub fn target(&self, i: usize) -> &[f64] {
        let k = self.window_end(i);
        &self.targets[k * self.node_count..(k + 1) * self.node_count]
    }
}

pub fn make_training_samples(ds: &SnapshotDataset, train_fraction: f64, window: usize) -> Result<TrainingSet, DataError> {
    if window == 0 {
        return Err(DataError::ZeroWindow);
    }
    let total = ds.config().step_count();
    let n = train_steps_for(total, train_fraction)?;
    if n < window + 1 {
        return Err(DataError::TooShort { prefix: n, window });
    }
    if ds.steps() < n {
        return Err(DataError::MissingSteps { have: ds.steps(), need: n });
    }
    let normalization = normalization_for(ds, n)?;
    let mut frames = Vec::new();
    let mut targets = Vec::new();
    for s in 1..=n {
        frames.extend(normalized_frame(ds, s, &normalization, None));
        targets.extend_from_slice(ds.frame(s, Channel::Product));
    }
    Ok(TrainingSet {
        window,
        train_steps: n,
        normalization,
        frame_len: Channel::MODEL_INPUTS.len() * ds.node_count(),
        node_count: ds.node_count(),
        frames,
        targets,
    })
}
