//! Single-channel RTMX files holding forecast `c_C` frames.

use rtmix_core::config::{simulation_from_key_values, simulation_to_key_values};
use rtmix_core::rtmx::{RtmxFile, FIRST_STEP_KEY, TRUNCATED_KEY};
use rtmix_core::SimulationConfig;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Simulation config of the dataset the forecast was made from.
    pub config: SimulationConfig,
    /// Absolute step of `frames[0]`.
    pub first_step: usize,
    pub frames: Vec<Vec<f64>>,
}

impl Prediction {
    pub fn last_step(&self) -> usize {
        self.first_step + self.frames.len() - 1
    }

    pub fn to_rtmx(&self) -> RtmxFile {
        let mut kv = simulation_to_key_values(&self.config);
        kv.set(FIRST_STEP_KEY, self.first_step);
        RtmxFile {
            nx: self.config.nx as u32,
            ny: self.config.ny as u32,
            channels: 1,
            steps: self.frames.len() as u32,
            dt: self.config.dt,
            t_end: self.config.t_end,
            blob: kv.to_text(),
            data: self.frames.concat(),
        }
    }

    pub fn from_rtmx(file: &RtmxFile) -> Result<Prediction, CliError> {
        let bad = |m: String| CliError::Config(format!("not a prediction file: {m}"));
        let mut kv = file.key_values().map_err(|e| bad(e.to_string()))?;
        let first_step: usize = kv.require(FIRST_STEP_KEY).map_err(|e| bad(e.to_string()))?;
        kv.remove(FIRST_STEP_KEY);
        kv.remove(TRUNCATED_KEY);
        let config = simulation_from_key_values(&kv).map_err(|e| bad(e.to_string()))?;
        if file.channels != 1 {
            return Err(bad(format!("{} channels", file.channels)));
        }
        if config.nx != file.nx as usize || config.ny != file.ny as usize {
            return Err(bad("grid size disagrees with config".into()));
        }
        if first_step == 0 || file.steps == 0 {
            return Err(bad("empty or zero-based step range".into()));
        }
        let frames = (0..file.steps as usize).map(|i| file.frame(i, 0).to_vec()).collect();
        Ok(Prediction { config, first_step, frames })
    }
}
