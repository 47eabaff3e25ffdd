//! RTMX snapshot files.
//!
//! Little-endian layout:
//!
//! ```text
//! "RTMX" | version u32 | nx u32 | ny u32 | channels u32 | steps u32
//! dt f64 | t_end f64 | blob_len u32 | blob (UTF-8 key = value text)
//! steps × channels × (nx·ny) f64, node index fastest
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::config::{simulation_from_key_values, simulation_to_key_values, ConfigError, KeyValues};
use crate::transport::{Channel, SnapshotDataset};

pub const MAGIC: [u8; 4] = *b"RTMX";
pub const VERSION: u32 = 1;
/// Blob key marking a dataset cut short by a failed step.
pub const TRUNCATED_KEY: &str = "truncated_at";
/// Blob key giving the absolute step of the first frame in a prediction file.
pub const FIRST_STEP_KEY: &str = "first_step";

#[derive(Debug, Error)]
pub enum RtmxError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not an RTMX file (magic {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported RTMX version {0}")]
    Version(u32),
    #[error("config blob is not UTF-8")]
    Utf8,
    #[error("payload has {got} values, header implies {expected}")]
    Payload { expected: usize, got: usize },
    #[error("trailing bytes after payload")]
    Trailing,
    #[error("config blob: {0}")]
    Config(#[from] ConfigError),
    #[error("header and config disagree: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtmxFile {
    pub nx: u32,
    pub ny: u32,
    pub channels: u32,
    pub steps: u32,
    pub dt: f64,
    pub t_end: f64,
    pub blob: String,
    pub data: Vec<f64>,
}

impl RtmxFile {
    pub fn node_count(&self) -> usize {
        self.nx as usize * self.ny as usize
    }

    pub fn expected_len(&self) -> usize {
        self.steps as usize * self.channels as usize * self.node_count()
    }

    /// Values of one channel at a 0-based frame index.
    pub fn frame(&self, index: usize, channel: usize) -> &[f64] {
        let n = self.node_count();
        let start = (index * self.channels as usize + channel) * n;
        &self.data[start..start + n]
    }

    pub fn header_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(40 + self.blob.len());
        out.extend_from_slice(&MAGIC);
        for v in [VERSION, self.nx, self.ny, self.channels, self.steps] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&self.t_end.to_le_bytes());
        out.extend_from_slice(&(self.blob.len() as u32).to_le_bytes());
        out.extend_from_slice(self.blob.as_bytes());
        out
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), RtmxError> {
        if self.data.len() != self.expected_len() {
            return Err(RtmxError::Payload { expected: self.expected_len(), got: self.data.len() });
        }
        w.write_all(&self.header_bytes())?;
        let mut buf = Vec::with_capacity(8 * 4096);
        for chunk in self.data.chunks(4096) {
            buf.clear();
            chunk.iter().for_each(|v| buf.extend_from_slice(&v.to_le_bytes()));
            w.write_all(&buf)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, RtmxError> {
        let mut out = Vec::with_capacity(48 + self.blob.len() + 8 * self.data.len());
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, RtmxError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if magic != MAGIC {
            return Err(RtmxError::BadMagic(magic));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(RtmxError::Version(version));
        }
        let nx = read_u32(&mut r)?;
        let ny = read_u32(&mut r)?;
        let channels = read_u32(&mut r)?;
        let steps = read_u32(&mut r)?;
        let dt = read_f64(&mut r)?;
        let t_end = read_f64(&mut r)?;
        let blob_len = read_u32(&mut r)? as usize;
        let mut blob = Vec::new();
        (&mut r).take(blob_len as u64).read_to_end(&mut blob)?;
        if blob.len() != blob_len {
            return Err(RtmxError::Io(io::ErrorKind::UnexpectedEof.into()));
        }
        let blob = String::from_utf8(blob).map_err(|_| RtmxError::Utf8)?;
        let mut file = RtmxFile { nx, ny, channels, steps, dt, t_end, blob, data: Vec::new() };
        let expected = file.expected_len();
        // Grow as bytes arrive so a corrupt header cannot force a huge allocation.
        let mut buf = vec![0u8; 8 * 4096];
        while file.data.len() < expected {
            let want = (expected - file.data.len()).min(4096);
            let bytes = &mut buf[..8 * want];
            if let Err(e) = r.read_exact(bytes) {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    return Err(RtmxError::Payload { expected, got: file.data.len() });
                }
                return Err(e.into());
            }
            file.data.extend(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())));
        }
        let mut extra = [0u8; 1];
        if r.read(&mut extra)? != 0 {
            return Err(RtmxError::Trailing);
        }
        Ok(file)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RtmxError> {
        Self::read_from(bytes)
    }

    pub fn key_values(&self) -> Result<KeyValues, RtmxError> {
        Ok(KeyValues::parse(&self.blob)?)
    }
}

fn read_u32(r: &mut impl Read) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

/// Encode a dataset; incomplete datasets get a [`TRUNCATED_KEY`] entry.
pub fn dataset_to_rtmx(ds: &SnapshotDataset) -> RtmxFile {
    let cfg = ds.config();
    let mut kv = simulation_to_key_values(cfg);
    if !ds.is_complete() {
        kv.set(TRUNCATED_KEY, ds.steps());
    }
    RtmxFile {
        nx: cfg.nx as u32,
        ny: cfg.ny as u32,
        channels: ds.channels().len() as u32,
        steps: ds.steps() as u32,
        dt: cfg.dt,
        t_end: cfg.t_end,
        blob: kv.to_text(),
        data: ds.raw().to_vec(),
    }
}

/// Decode a dataset file. Returns the dataset and whether it was truncated.
pub fn dataset_from_rtmx(file: RtmxFile) -> Result<(SnapshotDataset, bool), RtmxError> {
    let mut kv = file.key_values()?;
    let truncated = kv.remove(TRUNCATED_KEY).is_some();
    let cfg = simulation_from_key_values(&kv)?;
    let mismatch = |what: &str| Err(RtmxError::Inconsistent(what.to_string()));
    if cfg.nx != file.nx as usize || cfg.ny != file.ny as usize {
        return mismatch("grid size");
    }
    if cfg.dt.to_bits() != file.dt.to_bits() || cfg.t_end.to_bits() != file.t_end.to_bits() {
        return mismatch("time step or end time");
    }
    if Channel::layout(cfg.store_invariants).len() != file.channels as usize {
        return mismatch("channel count");
    }
    let steps = file.steps as usize;
    if steps > cfg.step_count() || (steps < cfg.step_count()) != truncated {
        return mismatch("step count");
    }
    let ds = SnapshotDataset::from_raw(cfg, steps, file.data).map_err(|e| RtmxError::Inconsistent(e.to_string()))?;
    Ok((ds, truncated))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{run, SimulationConfig};

    fn tiny() -> RtmxFile {
        RtmxFile { nx: 2, ny: 1, channels: 1, steps: 1, dt: 0.5, t_end: 0.5, blob: "a = 1\n".into(), data: vec![1.0, -2.0] }
    }

    #[test]
    fn golden_bytes() {
        #[rustfmt::skip]
        let want: Vec<u8> = vec![
            b'R', b'T', b'M', b'X',
            1, 0, 0, 0,
            2, 0, 0, 0,
            1, 0, 0, 0,
            1, 0, 0, 0,
            1, 0, 0, 0,
            0, 0, 0, 0, 0, 0, 0xE0, 0x3F,
            0, 0, 0, 0, 0, 0, 0xE0, 0x3F,
            6, 0, 0, 0,
            b'a', b' ', b'=', b' ', b'1', b'\n',
            0, 0, 0, 0, 0, 0, 0xF0, 0x3F,
            0, 0, 0, 0, 0, 0, 0, 0xC0,
        ];
        assert_eq!(tiny().to_bytes().unwrap(), want);
        assert_eq!(RtmxFile::from_bytes(&want).unwrap(), tiny());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = tiny().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(RtmxFile::from_bytes(&bad), Err(RtmxError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(RtmxFile::from_bytes(&bad), Err(RtmxError::Version(9))));
        assert!(matches!(RtmxFile::from_bytes(&bytes[..bytes.len() - 3]), Err(RtmxError::Payload { expected: 2, .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(RtmxFile::from_bytes(&long), Err(RtmxError::Trailing)));
        let mut huge = bytes;
        huge[20..24].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(RtmxFile::from_bytes(&huge), Err(RtmxError::Payload { .. })));
    }

    #[test]
    fn dataset_roundtrip_is_bit_exact() {
        let cfg = SimulationConfig { t_end: 3e-3, ..SimulationConfig::reaction_tank(5, 2.0) };
        let ds = run(cfg).unwrap();
        let bytes = dataset_to_rtmx(&ds).to_bytes().unwrap();
        let (back, truncated) = dataset_from_rtmx(RtmxFile::from_bytes(&bytes).unwrap()).unwrap();
        assert!(!truncated);
        assert_eq!(back, ds);
        assert_eq!(dataset_to_rtmx(&back).to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_datasets_are_marked() {
        let cfg = SimulationConfig { t_end: 3e-3, ..SimulationConfig::reaction_tank(5, 2.0) };
        let ds = run(cfg).unwrap().truncated(2);
        let file = dataset_to_rtmx(&ds);
        assert!(file.blob.contains("truncated_at = 2"));
        let (back, truncated) = dataset_from_rtmx(file).unwrap();
        assert!(truncated);
        assert_eq!(back.steps(), 2);
    }
}
