//! RTNN model files.
//!
//! Little-endian layout:
//!
//! ```text
//! "RTNN" | version u32 | blob_len u32 | blob (UTF-8 key = value text)
//! tensor_count u32, then per tensor:
//!     name_len u32 | name | ndim u32 | dims u32 × ndim | flags u32 | f64 × len
//! norm_count u32 | (min f64, max f64) × norm_count
//! loss_count u32 | f64 × loss_count
//! has_adam u32; if 1: step u64 | lr f64 | β1 f64 | β2 f64 | ε f64 | (m, v) f64 per tensor
//! ```
//!
//! Flag bit 0 marks a non-negative tensor; such tensors are validated on load.

use std::io::{self, Read, Write};

use rtmix_core::config::{ConfigError, KeyValues};
use thiserror::Error;

use crate::adam::{AdamConfig, AdamState};
use crate::model::{CnnLstm, ModelConfig, Normalization, TrainedModel};
use crate::tensor::{NnError, Tensor};

pub const MAGIC: [u8; 4] = *b"RTNN";
pub const VERSION: u32 = 1;
const FLAG_NONNEG: u32 = 1;
/// Upper bound on any single length field, to reject garbage before allocating.
const MAX_LEN: usize = 1 << 31;

#[derive(Debug, Error)]
pub enum RtnnError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an RTNN file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported RTNN version {0}")]
    Version(u32),
    #[error("invalid UTF-8 in {0}")]
    Utf8(&'static str),
    #[error("tensor `{name}` is flagged non-negative but holds {value:e}")]
    NegativeFlagged { name: String, value: f64 },
    #[error("unknown flag bits {flags:#x} on tensor `{name}`")]
    BadFlags { name: String, flags: u32 },
    #[error("length field {0} is implausibly large")]
    TooLarge(usize),
    #[error("trailing bytes after model")]
    Trailing,
    #[error("config blob: {0}")]
    Config(#[from] ConfigError),
    #[error("model does not match its config: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub nonneg: bool,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamRecord {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtnnFile {
    pub blob: String,
    pub tensors: Vec<TensorRecord>,
    pub normalization: Vec<(f64, f64)>,
    pub loss_history: Vec<f64>,
    pub adam: Option<AdamRecord>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    values.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()));
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn u32(&mut self) -> io::Result<u32> {
        let mut b = [0u8; 4];
        self.inner.read_exact(&mut b)?;
        Ok(u32::from_le_bytes(b))
    }

    fn len(&mut self) -> Result<usize, RtnnError> {
        let v = self.u32()? as usize;
        if v > MAX_LEN {
            return Err(RtnnError::TooLarge(v));
        }
        Ok(v)
    }

    fn u64(&mut self) -> io::Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn f64(&mut self) -> io::Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }

    fn f64s(&mut self, n: usize) -> io::Result<Vec<f64>> {
        let mut out = Vec::with_capacity(n.min(1 << 16));
        let mut buf = vec![0u8; 8 * 4096];
        while out.len() < n {
            let want = (n - out.len()).min(4096);
            self.inner.read_exact(&mut buf[..8 * want])?;
            out.extend(buf[..8 * want].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        }
        Ok(out)
    }

    fn string(&mut self, what: &'static str) -> Result<String, RtnnError> {
        let n = self.len()?;
        let mut bytes = Vec::new();
        (&mut self.inner).take(n as u64).read_to_end(&mut bytes)?;
        if bytes.len() != n {
            return Err(io::Error::from(io::ErrorKind::UnexpectedEof).into());
        }
        String::from_utf8(bytes).map_err(|_| RtnnError::Utf8(what))
    }
}

impl RtnnFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        put_u32(&mut out, VERSION as usize);
        put_u32(&mut out, self.blob.len());
        out.extend_from_slice(self.blob.as_bytes());
        put_u32(&mut out, self.tensors.len());
        for t in &self.tensors {
            put_u32(&mut out, t.name.len());
            out.extend_from_slice(t.name.as_bytes());
            put_u32(&mut out, t.shape.len());
            t.shape.iter().for_each(|&d| put_u32(&mut out, d));
            put_u32(&mut out, if t.nonneg { FLAG_NONNEG as usize } else { 0 });
            put_f64s(&mut out, &t.data);
        }
        put_u32(&mut out, self.normalization.len());
        for (lo, hi) in &self.normalization {
            put_f64s(&mut out, &[*lo, *hi]);
        }
        put_u32(&mut out, self.loss_history.len());
        put_f64s(&mut out, &self.loss_history);
        match &self.adam {
            None => put_u32(&mut out, 0),
            Some(a) => {
                put_u32(&mut out, 1);
                out.extend_from_slice(&a.step.to_le_bytes());
                put_f64s(&mut out, &[a.learning_rate, a.beta1, a.beta2, a.epsilon]);
                for (m, v) in a.m.iter().zip(&a.v) {
                    put_f64s(&mut out, m);
                    put_f64s(&mut out, v);
                }
            }
        }
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), RtnnError> {
        w.write_all(&self.to_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from(r: impl Read) -> Result<Self, RtnnError> {
        let mut r = Reader { inner: r };
        let mut magic = [0u8; 4];
        r.inner.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(RtnnError::BadMagic(magic));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(RtnnError::Version(version));
        }
        let blob = r.string("config blob")?;
        let count = r.len()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let name = r.string("tensor name")?;
            let ndim = r.len()?;
            let shape = (0..ndim).map(|_| r.len()).collect::<Result<Vec<_>, _>>()?;
            let len = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).filter(|&n| n <= MAX_LEN);
            let len = len.ok_or(RtnnError::TooLarge(usize::MAX))?;
            let flags = r.u32()?;
            if flags & !FLAG_NONNEG != 0 {
                return Err(RtnnError::BadFlags { name, flags });
            }
            let nonneg = flags & FLAG_NONNEG != 0;
            let data = r.f64s(len)?;
            if nonneg {
                if let Some(&value) = data.iter().find(|v| !(**v >= 0.0)) {
                    return Err(RtnnError::NegativeFlagged { name, value });
                }
            }
            tensors.push(TensorRecord { name, shape, nonneg, data });
        }
        let norm_count = r.len()?;
        let normalization = (0..norm_count).map(|_| Ok((r.f64()?, r.f64()?))).collect::<io::Result<Vec<_>>>()?;
        let loss_count = r.len()?;
        let loss_history = r.f64s(loss_count)?;
        let adam = match r.u32()? {
            0 => None,
            1 => {
                let step = r.u64()?;
                let (learning_rate, beta1, beta2, epsilon) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
                let mut m = Vec::with_capacity(tensors.len());
                let mut v = Vec::with_capacity(tensors.len());
                for t in &tensors {
                    m.push(r.f64s(t.data.len())?);
                    v.push(r.f64s(t.data.len())?);
                }
                Some(AdamRecord { step, learning_rate, beta1, beta2, epsilon, m, v })
            }
            other => return Err(RtnnError::Mismatch(format!("optimizer flag {other}"))),
        };
        let mut extra = [0u8; 1];
        if r.inner.read(&mut extra)? != 0 {
            return Err(RtnnError::Trailing);
        }
        Ok(RtnnFile { blob, tensors, normalization, loss_history, adam })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RtnnError> {
        Self::read_from(bytes)
    }
}

pub fn model_config_to_key_values(cfg: &ModelConfig, train_steps: usize) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("nx", cfg.nx);
    kv.set("ny", cfg.ny);
    kv.set("channels", cfg.channels);
    kv.set("window", cfg.window);
    kv.set("conv_layers", cfg.conv_layers);
    kv.set("filters", cfg.filters);
    kv.set("kernel", cfg.kernel);
    kv.set("pool", cfg.pool);
    kv.set("lstm_units", cfg.lstm_units);
    kv.set("batch_size", cfg.batch_size);
    kv.set("epochs", cfg.epochs);
    kv.set("learning_rate", cfg.learning_rate);
    kv.set("seed", cfg.seed);
    kv.set("nonneg", cfg.nonneg);
    kv.set("train_steps", train_steps);
    kv
}

pub fn model_config_from_key_values(kv: &KeyValues) -> Result<(ModelConfig, usize), RtnnError> {
    let cfg = ModelConfig {
        nx: kv.require("nx")?,
        ny: kv.require("ny")?,
        channels: kv.require("channels")?,
        window: kv.require("window")?,
        conv_layers: kv.require("conv_layers")?,
        filters: kv.require("filters")?,
        kernel: kv.require("kernel")?,
        pool: kv.require("pool")?,
        lstm_units: kv.require("lstm_units")?,
        batch_size: kv.require("batch_size")?,
        epochs: kv.require("epochs")?,
        learning_rate: kv.require("learning_rate")?,
        seed: kv.require("seed")?,
        nonneg: kv.require("nonneg")?,
    };
    Ok((cfg, kv.require("train_steps")?))
}

pub fn model_to_rtnn(model: &TrainedModel) -> RtnnFile {
    let tensors = model
        .network
        .params()
        .iter()
        .map(|p| TensorRecord {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            nonneg: p.nonneg,
            data: p.value.data().to_vec(),
        })
        .collect();
    let norm = &model.normalization;
    RtnnFile {
        blob: model_config_to_key_values(&model.config, model.train_steps).to_text(),
        tensors,
        normalization: norm.min.iter().copied().zip(norm.max.iter().copied()).collect(),
        loss_history: model.loss_history.clone(),
        adam: model.adam.as_ref().map(|a| AdamRecord {
            step: a.step,
            learning_rate: a.config.learning_rate,
            beta1: a.config.beta1,
            beta2: a.config.beta2,
            epsilon: a.config.epsilon,
            m: a.m.iter().map(|t| t.data().to_vec()).collect(),
            v: a.v.iter().map(|t| t.data().to_vec()).collect(),
        }),
    }
}

pub fn model_from_rtnn(file: RtnnFile) -> Result<TrainedModel, RtnnError> {
    let (config, train_steps) = model_config_from_key_values(&KeyValues::parse(&file.blob)?)?;
    let mut network = CnnLstm::build(&config)?;
    let mut params = network.params_mut();
    if params.len() != file.tensors.len() {
        return Err(RtnnError::Mismatch(format!("{} tensors, architecture has {}", file.tensors.len(), params.len())));
    }
    for (p, rec) in params.iter_mut().zip(&file.tensors) {
        if p.name != rec.name || p.value.shape() != rec.shape.as_slice() || p.nonneg != rec.nonneg {
            return Err(RtnnError::Mismatch(format!("tensor `{}` {:?} does not fit `{}` {:?}", rec.name, rec.shape, p.name, p.value.shape())));
        }
        p.value = Tensor::new(rec.shape.clone(), rec.data.clone())?;
    }
    let adam = match file.adam {
        None => None,
        Some(a) => {
            let to_tensors = |vals: Vec<Vec<f64>>| {
                vals.into_iter().zip(&file.tensors).map(|(d, t)| Tensor::new(t.shape.clone(), d)).collect::<Result<Vec<_>, _>>()
            };
            Some(AdamState {
                config: AdamConfig { learning_rate: a.learning_rate, beta1: a.beta1, beta2: a.beta2, epsilon: a.epsilon },
                step: a.step,
                m: to_tensors(a.m)?,
                v: to_tensors(a.v)?,
            })
        }
    };
    let (min, max) = file.normalization.iter().copied().unzip();
    Ok(TrainedModel {
        config,
        network,
        normalization: Normalization { min, max },
        train_steps,
        loss_history: file.loss_history,
        adam,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adam::AdamState;

    fn tiny_file() -> RtnnFile {
        RtnnFile {
            blob: "k = v\n".into(),
            tensors: vec![TensorRecord { name: "w".into(), shape: vec![2], nonneg: true, data: vec![0.5, 0.0] }],
            normalization: vec![(0.0, 2.0)],
            loss_history: vec![0.25],
            adam: None,
        }
    }

    #[test]
    fn golden_bytes() {
        #[rustfmt::skip]
        let want: Vec<u8> = vec![
            b'R', b'T', b'N', b'N',
            1, 0, 0, 0,
            6, 0, 0, 0, b'k', b' ', b'=', b' ', b'v', b'\n',
            1, 0, 0, 0,
            1, 0, 0, 0, b'w',
            1, 0, 0, 0, 2, 0, 0, 0,
            1, 0, 0, 0,
            0, 0, 0, 0, 0, 0, 0xE0, 0x3F,
            0, 0, 0, 0, 0, 0, 0, 0,
            1, 0, 0, 0,
            0, 0, 0, 0, 0, 0, 0, 0,
            0, 0, 0, 0, 0, 0, 0, 0x40,
            1, 0, 0, 0,
            0, 0, 0, 0, 0, 0, 0xD0, 0x3F,
            0, 0, 0, 0,
        ];
        assert_eq!(tiny_file().to_bytes(), want);
        assert_eq!(RtnnFile::from_bytes(&want).unwrap(), tiny_file());
    }

    #[test]
    fn negative_flagged_tensor_rejected() {
        let mut f = tiny_file();
        f.tensors[0].data[1] = -1e-300;
        let err = RtnnFile::from_bytes(&f.to_bytes()).unwrap_err();
        assert!(matches!(err, RtnnError::NegativeFlagged { ref name, .. } if name == "w"));
        f.tensors[0].nonneg = false;
        assert!(RtnnFile::from_bytes(&f.to_bytes()).is_ok());
    }

    #[test]
    fn truncation_and_garbage_rejected() {
        let bytes = tiny_file().to_bytes();
        assert!(RtnnFile::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(7);
        assert!(matches!(RtnnFile::from_bytes(&long), Err(RtnnError::Trailing)));
        let mut bad = bytes;
        bad[0] = b'Q';
        assert!(matches!(RtnnFile::from_bytes(&bad), Err(RtnnError::BadMagic(_))));
    }

    #[test]
    fn model_roundtrip_with_optimizer_state() {
        let cfg = ModelConfig { conv_layers: 1, filters: 2, lstm_units: 3, window: 2, ..ModelConfig::reference(9, 9) };
        let network = CnnLstm::build(&cfg).unwrap();
        let mut adam = AdamState::new(AdamConfig::default(), &network.params());
        adam.step = 3;
        adam.m[0].fill(0.125);
        let model = TrainedModel {
            config: cfg,
            network,
            normalization: Normalization { min: vec![0.0; 6], max: vec![1.0; 6] },
            train_steps: 7,
            loss_history: vec![0.5, 0.25],
            adam: Some(adam),
        };
        let bytes = model_to_rtnn(&model).to_bytes();
        let back = model_from_rtnn(RtnnFile::from_bytes(&bytes).unwrap()).unwrap();
        assert_eq!(back, model);
        assert_eq!(model_to_rtnn(&back).to_bytes(), bytes);
    }

    #[test]
    fn architecture_mismatch_rejected() {
        let cfg = ModelConfig { conv_layers: 1, filters: 2, lstm_units: 3, window: 2, ..ModelConfig::reference(9, 9) };
        let model = TrainedModel {
            config: cfg.clone(),
            network: CnnLstm::build(&cfg).unwrap(),
            normalization: Normalization { min: vec![0.0; 6], max: vec![1.0; 6] },
            train_steps: 7,
            loss_history: vec![],
            adam: None,
        };
        let mut file = model_to_rtnn(&model);
        file.blob = file.blob.replace("lstm_units = 3", "lstm_units = 4");
        assert!(matches!(model_from_rtnn(file), Err(RtnnError::Mismatch(_))));
    }
}
