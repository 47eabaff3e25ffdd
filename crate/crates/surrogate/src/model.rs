//! Per-frame CNN encoder, LSTM across the window, dense sigmoid head.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::layers::{Activation, LayerSpec};
use crate::lstm::{Lstm, LstmRecord};
use crate::sequential::{Sequential, Trace};
use crate::tensor::{shape_err, NnError, Param, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub nx: usize,
    pub ny: usize,
    /// Input channels per frame.
    pub channels: usize,
    /// Frames per sample.
    pub window: usize,
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel: usize,
    pub pool: usize,
    pub lstm_units: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Constrain conv filters and the dense weight to be non-negative.
    pub nonneg: bool,
}

impl ModelConfig {
    /// Reference architecture for an `nx × ny` grid.
    pub fn reference(nx: usize, ny: usize) -> Self {
        Self {
            nx,
            ny,
            channels: 6,
            window: 8,
            conv_layers: 3,
            filters: 16,
            kernel: 3,
            pool: 2,
            lstm_units: 400,
            batch_size: 6,
            epochs: 100,
            learning_rate: 1e-3,
            seed: 0,
            nonneg: true,
        }
    }

    pub fn validate(&self) -> Result<(), NnError> {
        let positive = [
            ("nx", self.nx),
            ("ny", self.ny),
            ("channels", self.channels),
            ("window", self.window),
            ("filters", self.filters),
            ("kernel", self.kernel),
            ("pool", self.pool),
            ("lstm_units", self.lstm_units),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(NnError::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NnError::Config(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        Ok(())
    }

    pub fn frame_shape(&self) -> [usize; 3] {
        [self.channels, self.ny, self.nx]
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.nx * self.ny
    }

    pub fn output_len(&self) -> usize {
        self.nx * self.ny
    }

    fn encoder_specs(&self) -> Vec<LayerSpec> {
        let mut specs = Vec::new();
        for _ in 0..self.conv_layers {
            specs.push(LayerSpec::Conv2d { filters: self.filters, kernel: self.kernel, nonneg: self.nonneg });
            specs.push(LayerSpec::Activation(Activation::Relu));
            specs.push(LayerSpec::MaxPool { pool: self.pool });
        }
        specs.push(LayerSpec::Flatten);
        specs
    }
}

/// The network itself, without training metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnLstm {
    pub encoder: Sequential,
    pub lstm: Lstm,
    pub head: Sequential,
}

/// Records of one forward pass over a window.
#[derive(Debug, Clone)]
pub struct ModelTrace {
    encoder: Vec<Trace>,
    lstm: LstmRecord,
    head: Trace,
}

impl CnnLstm {
    pub fn build(cfg: &ModelConfig) -> Result<Self, NnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let encoder = Sequential::build(&cfg.frame_shape(), &cfg.encoder_specs(), "encoder.", &mut rng)
            .map_err(|e| NnError::Config(format!("encoder does not fit the {}×{} grid: {e}", cfg.nx, cfg.ny)))?;
        let features = encoder.output_shape()[0];
        let lstm = Lstm::init(features, cfg.lstm_units, "lstm", &mut rng);
        let head_specs = [
            LayerSpec::Dense { units: cfg.output_len(), nonneg: cfg.nonneg },
            LayerSpec::Activation(Activation::Sigmoid),
            LayerSpec::Reshape(vec![cfg.ny, cfg.nx]),
        ];
        let head = Sequential::build(&[cfg.lstm_units], &head_specs, "head.", &mut rng)?;
        Ok(Self { encoder, lstm, head })
    }

    pub fn features(&self) -> usize {
        self.lstm.features()
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.lstm.params());
        p.extend(self.head.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.lstm.params_mut());
        p.extend(self.head.params_mut());
        p
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params().iter().map(|p| Tensor::zeros(p.value.shape())).collect()
    }

    fn frame_len(&self) -> usize {
        self.encoder.input_shape().iter().product()
    }

    fn frames<'a>(&self, window: &'a [f64]) -> Result<std::slice::Chunks<'a, f64>, NnError> {
        let len = self.frame_len();
        if window.is_empty() || window.len() % len != 0 {
            return Err(shape_err("window", format!("a multiple of {len} values"), &[window.len()]));
        }
        Ok(window.chunks(len))
    }

    fn frame_tensor(&self, frame: &[f64]) -> Tensor {
        Tensor::new(self.encoder.input_shape().to_vec(), frame.to_vec()).expect("frame length checked")
    }

    /// LSTM input projection of one normalized frame.
    pub fn frame_projection(&self, frame: &[f64]) -> Result<Vec<f64>, NnError> {
        if frame.len() != self.frame_len() {
            return Err(shape_err("frame", format!("{} values", self.frame_len()), &[frame.len()]));
        }
        let z = self.encoder.infer(&self.frame_tensor(frame))?;
        Ok(self.lstm.input_projection(z.data()))
    }

    /// Prediction from cached frame projections, oldest first.
    pub fn predict_from_projections(&self, projections: &[Vec<f64>]) -> Result<Tensor, NnError> {
        let h = self.lstm.run_projected(projections);
        self.head.infer(&Tensor::vector(h))
    }

    /// Prediction for a window of normalized frames laid out frame after frame.
    pub fn predict(&self, window: &[f64]) -> Result<Tensor, NnError> {
        let projections = self.frames(window)?.map(|f| self.frame_projection(f)).collect::<Result<Vec<_>, _>>()?;
        self.predict_from_projections(&projections)
    }

    pub fn forward(&self, window: &[f64]) -> Result<(Tensor, ModelTrace), NnError> {
        let mut encoder = Vec::new();
        let mut features = Vec::new();
        for frame in self.frames(window)? {
            let (z, trace) = self.encoder.forward(&self.frame_tensor(frame))?;
            features.extend_from_slice(z.data());
            encoder.push(trace);
        }
        let seq = Tensor::new(vec![encoder.len(), self.features()], features)?;
        let (h, lstm) = self.lstm.forward(&seq)?;
        let (y, head) = self.head.forward(&h)?;
        Ok((y, ModelTrace { encoder, lstm, head }))
    }

    /// Parameter gradients for an upstream gradient on the prediction.
    pub fn backward(&self, trace: &ModelTrace, dy: &Tensor) -> Result<Vec<Tensor>, NnError> {
        let mut grads = self.zero_grads();
        let n_enc = self.encoder.params().len();
        let (enc_grads, rest) = grads.split_at_mut(n_enc);
        let (lstm_grads, head_grads) = rest.split_at_mut(3);
        let dh = self.head.backward(&trace.head, dy, head_grads)?;
        let dseq = self.lstm.backward(&trace.lstm, &dh, lstm_grads)?;
        let f = self.features();
        for (t, tr) in trace.encoder.iter().enumerate() {
            let dz = Tensor::vector(dseq.data()[t * f..(t + 1) * f].to_vec());
            self.encoder.backward(tr, &dz, enc_grads)?;
        }
        Ok(grads)
    }

    pub fn project(&mut self) {
        self.params_mut().into_iter().for_each(|p| p.project());
    }
}

/// Per-channel min-max constants.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    pub fn channels(&self) -> usize {
        self.min.len()
    }

    /// `(x − min) / (max − min)`; constant channels are only shifted.
    pub fn apply(&self, channel: usize, x: f64) -> f64 {
        let span = self.max[channel] - self.min[channel];
        if span > 0.0 {
            (x - self.min[channel]) / span
        } else {
            x - self.min[channel]
        }
    }
}

/// Network plus everything needed to resume training or run a rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub network: CnnLstm,
    pub normalization: Normalization,
    /// Training prefix length `N`; frames `1..=N` were seen during training.
    pub train_steps: usize,
    pub loss_history: Vec<f64>,
    pub adam: Option<AdamState>,
}

pub fn build_model(cfg: &ModelConfig) -> Result<CnnLstm, NnError> {
    CnnLstm::build(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny() -> ModelConfig {
        ModelConfig { lstm_units: 6, filters: 2, window: 3, ..ModelConfig::reference(9, 9) }
    }

    #[test]
    fn reference_parameter_count() {
        // Flatten size after three conv/pool stages: 81 → 79 → 39 → 37 → 18 → 16 → 8.
        let convs = (6 * 9 + 1) * 16 + 2 * (16 * 9 + 1) * 16;
        let f = 8 * 8 * 16;
        let lstm = 4 * 400 * (f + 400 + 1);
        let dense = 400 * 6561 + 6561;
        let net = build_model(&ModelConfig::reference(81, 81)).unwrap();
        assert_eq!(net.features(), f);
        assert_eq!(net.param_count(), convs + lstm + dense);
        assert_eq!(net.param_count(), 4_916_481);
    }

    #[test]
    fn desk_model_builds_deterministically() {
        let cfg = ModelConfig { window: 4, ..ModelConfig::reference(27, 27) };
        let a = build_model(&cfg).unwrap();
        let b = build_model(&cfg).unwrap();
        assert_eq!(a, b);
        // 27 → 25 → 12 → 10 → 5 → 3 → 1.
        assert_eq!(a.features(), 16);
        let dense = a.head.params()[0];
        assert!(dense.nonneg && dense.value.min() >= 0.0);
        let other = build_model(&ModelConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn too_small_grid_rejected() {
        assert!(matches!(build_model(&ModelConfig::reference(9, 9)), Err(NnError::Config(_))));
        assert!(build_model(&ModelConfig { window: 0, ..tiny() }).is_err());
    }

    #[test]
    fn cached_and_direct_predictions_agree_bitwise() {
        let cfg = ModelConfig { conv_layers: 1, ..tiny() };
        let net = build_model(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let window: Vec<f64> = (0..3 * cfg.frame_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let direct = net.predict(&window).unwrap();
        let (traced, _) = net.forward(&window).unwrap();
        assert_eq!(direct, traced);
        let proj: Vec<Vec<f64>> = window.chunks(cfg.frame_len()).map(|f| net.frame_projection(f).unwrap()).collect();
        assert_eq!(net.predict_from_projections(&proj).unwrap(), direct);
        assert_eq!(direct.shape(), &[9, 9]);
        assert!(direct.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        let cfg = ModelConfig { conv_layers: 1, filters: 2, lstm_units: 3, window: 2, nonneg: false, ..ModelConfig::reference(5, 5) };
        let mut net = build_model(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        net.params_mut().into_iter().for_each(|p| p.value.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2)));
        let window: Vec<f64> = (0..2 * cfg.frame_len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let (y, trace) = net.forward(&window).unwrap();
        let r: Vec<f64> = (0..y.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let grads = net.backward(&trace, &Tensor::new(y.shape().to_vec(), r.clone()).unwrap()).unwrap();
        let eps = 1e-6;
        // Entries far below the largest gradient are dominated by rounding in the difference.
        let floor = 1e-3 * grads.iter().map(|g| g.data().iter().fold(0.0f64, |m, v| m.max(v.abs()))).fold(0.0, f64::max);
        let mut worst: f64 = 0.0;
        for k in 0..grads.len() {
            for j in (0..grads[k].len()).step_by(7) {
                let orig = net.params()[k].value.data()[j];
                net.params_mut()[k].value.data_mut()[j] = orig + eps;
                let plus = net.predict(&window).unwrap();
                net.params_mut()[k].value.data_mut()[j] = orig - eps;
                let minus = net.predict(&window).unwrap();
                net.params_mut()[k].value.data_mut()[j] = orig;
                let num: f64 = r.iter().zip(plus.data().iter().zip(minus.data())).map(|(r, (p, m))| r * (p - m)).sum::<f64>()
                    / (2.0 * eps);
                let a = grads[k].data()[j];
                worst = worst.max((a - num).abs() / a.abs().max(num.abs()).max(floor));
            }
        }
        assert!(worst <= 1e-6, "worst relative error {worst:e}");
    }

    #[test]
    fn normalization() {
        let n = Normalization { min: vec![0.0, 2.0], max: vec![4.0, 2.0] };
        assert_eq!(n.apply(0, 1.0), 0.25);
        assert_eq!(n.apply(1, 2.0), 0.0);
    }
}
