//! Plain `key = value` text configs.
//!
//! Lines starting with `#` and blank lines are ignored. Keys are unique.

use std::fmt::Write as _;
use std::str::FromStr;

use thiserror::Error;

use crate::assembly::MassKind;
use crate::chemistry::Stoichiometry;
use crate::flowfield::{DispersionConfig, FlowConfig};
use crate::qp::QpOptions;
use crate::transport::{DispersionModel, InitialCondition, SimulationConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing required key `{0}`")]
    Missing(String),
    #[error("unknown key `{0}`")]
    Unknown(String),
    #[error("invalid value `{value}` for `{key}`: {reason}")]
    Invalid { key: String, value: String, reason: String },
}

/// Ordered key/value pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KeyValues {
    entries: Vec<(String, String)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut kv = KeyValues::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax { line: i + 1, text: raw.to_string() });
            }
            if kv.get(k).is_some() {
                return Err(ConfigError::Duplicate { line: i + 1, key: k.to_string() });
            }
            kv.entries.push((k.to_string(), v.to_string()));
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Insert or replace.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn remove(&mut self, key: &str) -> Option<String> {
        let pos = self.entries.iter().position(|(k, _)| k == key)?;
        Some(self.entries.remove(pos).1)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| ConfigError::Invalid {
                key: key.to_string(),
                value: v.to_string(),
                reason: e.to_string(),
            }),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_value(key)?.ok_or_else(|| ConfigError::Missing(key.to_string()))
    }
}

pub const REQUIRED_KEYS: [&str; 10] =
    ["nx", "ny", "dt", "t_end", "kappa_fl", "v0", "period", "d_m", "alpha_l", "alpha_t"];

pub const OPTIONAL_KEYS: [&str; 14] = [
    "domain_length",
    "n_a",
    "n_b",
    "n_c",
    "initial_a",
    "initial_b",
    "qp_tol",
    "qp_max_iter",
    "eval_offset",
    "mass",
    "dispersion_model",
    "isotropic_d",
    "store_invariants",
    "mirror_flow",
];

fn invalid(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), value: value.to_string(), reason: reason.to_string() }
}

fn parse_bool(kv: &KeyValues, key: &str) -> Result<bool, ConfigError> {
    match kv.get(key) {
        None => Ok(false),
        Some("true") | Some("1") | Some("yes") => Ok(true),
        Some("false") | Some("0") | Some("no") => Ok(false),
        Some(v) => Err(invalid(key, v, "expected true or false")),
    }
}

/// Build a simulation config; shape checks run via [`SimulationConfig::validate`].
pub fn simulation_from_key_values(kv: &KeyValues) -> Result<SimulationConfig, ConfigError> {
    if let Some(k) = kv.keys().find(|k| !REQUIRED_KEYS.contains(k) && !OPTIONAL_KEYS.contains(k)) {
        return Err(ConfigError::Unknown(k.to_string()));
    }
    for key in REQUIRED_KEYS {
        if kv.get(key).is_none() {
            return Err(ConfigError::Missing(key.to_string()));
        }
    }
    let flow = FlowConfig {
        kappa_fl: kv.require("kappa_fl")?,
        v0: kv.require("v0")?,
        period: kv.require("period")?,
        domain_length: kv.parse_value("domain_length")?.unwrap_or(1.0),
    };
    let dispersion = DispersionConfig {
        molecular: kv.require("d_m")?,
        alpha_l: kv.require("alpha_l")?,
        alpha_t: kv.require("alpha_t")?,
    };
    let dispersion_model = match kv.get("dispersion_model").unwrap_or("subsurface") {
        "subsurface" => {
            if kv.get("isotropic_d").is_some() {
                return Err(invalid("isotropic_d", kv.get("isotropic_d").unwrap(), "only used with dispersion_model = isotropic"));
            }
            DispersionModel::Subsurface
        }
        "isotropic" => DispersionModel::Isotropic(kv.require("isotropic_d")?),
        other => return Err(invalid("dispersion_model", other, "expected subsurface or isotropic")),
    };
    let mass = match kv.get("mass").unwrap_or("consistent") {
        "consistent" => MassKind::Consistent,
        "lumped" => MassKind::Lumped,
        other => return Err(invalid("mass", other, "expected consistent or lumped")),
    };
    let qp_max_iter: usize = kv.parse_value("qp_max_iter")?.unwrap_or(0);
    let cfg = SimulationConfig {
        nx: kv.require("nx")?,
        ny: kv.require("ny")?,
        dt: kv.require("dt")?,
        t_end: kv.require("t_end")?,
        flow,
        dispersion,
        dispersion_model,
        stoichiometry: Stoichiometry {
            n_a: kv.parse_value("n_a")?.unwrap_or(1.0),
            n_b: kv.parse_value("n_b")?.unwrap_or(1.0),
            n_c: kv.parse_value("n_c")?.unwrap_or(1.0),
        },
        initial: InitialCondition {
            a_left: kv.parse_value("initial_a")?.unwrap_or(1.0),
            b_right: kv.parse_value("initial_b")?.unwrap_or(1.0),
        },
        qp: QpOptions {
            tol: kv.parse_value("qp_tol")?.unwrap_or(QpOptions::default().tol),
            max_iter: (qp_max_iter > 0).then_some(qp_max_iter),
        },
        eval_offset: kv.parse_value("eval_offset")?.unwrap_or(0.0),
        mass,
        store_invariants: parse_bool(kv, "store_invariants")?,
        mirror_flow: parse_bool(kv, "mirror_flow")?,
        sources: None,
    };
    cfg.validate().map_err(|e| invalid("config", "", &e.to_string()))?;
    Ok(cfg)
}

pub fn parse_simulation_config(text: &str) -> Result<SimulationConfig, ConfigError> {
    simulation_from_key_values(&KeyValues::parse(text)?)
}

/// Canonical text form; parsing it back yields an equal config.
/// Floats use Rust's shortest round-trip formatting.
pub fn simulation_to_key_values(cfg: &SimulationConfig) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.set("nx", cfg.nx);
    kv.set("ny", cfg.ny);
    kv.set("dt", cfg.dt);
    kv.set("t_end", cfg.t_end);
    kv.set("kappa_fl", cfg.flow.kappa_fl);
    kv.set("v0", cfg.flow.v0);
    kv.set("period", cfg.flow.period);
    kv.set("domain_length", cfg.flow.domain_length);
    kv.set("d_m", cfg.dispersion.molecular);
    kv.set("alpha_l", cfg.dispersion.alpha_l);
    kv.set("alpha_t", cfg.dispersion.alpha_t);
    match cfg.dispersion_model {
        DispersionModel::Subsurface => kv.set("dispersion_model", "subsurface"),
        DispersionModel::Isotropic(d) => {
            kv.set("dispersion_model", "isotropic");
            kv.set("isotropic_d", d);
        }
    }
    kv.set("n_a", cfg.stoichiometry.n_a);
    kv.set("n_b", cfg.stoichiometry.n_b);
    kv.set("n_c", cfg.stoichiometry.n_c);
    kv.set("initial_a", cfg.initial.a_left);
    kv.set("initial_b", cfg.initial.b_right);
    kv.set("qp_tol", cfg.qp.tol);
    kv.set("qp_max_iter", cfg.qp.max_iter.unwrap_or(0));
    kv.set("eval_offset", cfg.eval_offset);
    kv.set(
        "mass",
        match cfg.mass {
            MassKind::Consistent => "consistent",
            MassKind::Lumped => "lumped",
        },
    );
    kv.set("store_invariants", cfg.store_invariants);
    kv.set("mirror_flow", cfg.mirror_flow);
    kv
}
