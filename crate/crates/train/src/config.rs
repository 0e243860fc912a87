//! Training configuration read from a TOML file with optional overrides.

use std::path::Path;

use c2b_model::{ModelConfig, ModelVariant};
use toml::{Table, Value};

use crate::error::{Result, TrainError};

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub model: ModelConfig,
    /// Weight of the total-variation term.
    pub lambda: f64,
    pub lr: f64,
    pub epochs: u64,
    pub batch: usize,
    /// Stops early after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Square patch side in full-resolution pixels.
    pub patch: usize,
    /// Window stride when cutting clips from frame sequences; defaults to T.
    pub clip_stride: Option<usize>,
}

impl TrainConfig {
    /// Full-size settings: 240-pixel patches, batch 64, 200 epochs.
    pub fn full_scale(seed: u64) -> Self {
        TrainConfig {
            seed,
            model: ModelConfig::default(),
            lambda: 0.1,
            lr: 1e-4,
            epochs: 200,
            batch: 64,
            max_steps: None,
            patch: 240,
            clip_stride: None,
        }
    }

    /// Small settings that train in minutes on one CPU core.
    pub fn desk_scale(seed: u64) -> Self {
        TrainConfig {
            model: ModelConfig {
                unet_widths: [64, 64, 128],
                bottleneck: 256,
                ..ModelConfig::default()
            },
            lr: 5e-4,
            epochs: 1000,
            batch: 4,
            max_steps: Some(800),
            patch: 72,
            ..TrainConfig::full_scale(seed)
        }
    }

    pub fn with_variant(mut self, variant: ModelVariant) -> Self {
        self.model.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let unit = self.model.n * 8;
        if self.patch == 0 || !self.patch.is_multiple_of(unit) {
            return Err(TrainError::Config(format!(
                "data.patch = {} must be a positive multiple of N*8 = {unit}",
                self.patch
            )));
        }
        if self.batch == 0 {
            return Err(TrainError::Config("train.batch must be at least 1".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(TrainError::Config(format!("train.lambda = {} must be >= 0", self.lambda)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("train.lr = {} must be > 0", self.lr)));
        }
        if self.clip_stride == Some(0) {
            return Err(TrainError::Config("data.stride must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, overrides)
    }

    /// Parses TOML text, then applies `section.key=value` overrides.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| TrainError::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(&table)
    }

    fn from_table(t: &Table) -> Result<Self> {
        let mut model = ModelConfig {
            n: get_uint(t, "code.N")? as usize,
            t: get_uint(t, "code.T")? as usize,
            variant: get_str(t, "model.variant")?.parse()?,
            ..ModelConfig::default()
        };
        if let Some(v) = lookup(t, "model.encoder_widths") {
            model.encoder_widths = widths(v, "model.encoder_widths")?;
        }
        if let Some(v) = lookup(t, "model.unet_widths") {
            model.unet_widths = widths(v, "model.unet_widths")?;
        }
        if lookup(t, "model.bottleneck").is_some() {
            model.bottleneck = get_uint(t, "model.bottleneck")? as usize;
        }
        let config = TrainConfig {
            seed: get_uint(t, "seed")?,
            model,
            lambda: get_float(t, "train.lambda")?,
            lr: get_float(t, "train.lr")?,
            epochs: get_uint(t, "train.epochs")?,
            batch: get_uint(t, "train.batch")? as usize,
            max_steps: lookup(t, "train.max_steps").map(|_| get_uint(t, "train.max_steps")).transpose()?,
            patch: get_uint(t, "data.patch")? as usize,
            clip_stride: lookup(t, "data.stride").map(|_| get_uint(t, "data.stride").map(|v| v as usize)).transpose()?,
        };
        config.validate()?;
        Ok(config)
    }

    /// Renders the configuration as TOML accepted by [`TrainConfig::from_toml`].
    pub fn to_toml(&self) -> String {
        let m = &self.model;
        let list = |w: &[usize; 3]| format!("[{}, {}, {}]", w[0], w[1], w[2]);
        let mut s = format!("seed = {}\n\n[code]\nN = {}\nT = {}\n\n", self.seed, m.n, m.t);
        s += &format!(
            "[model]\nvariant = \"{}\"\nencoder_widths = {}\nunet_widths = {}\nbottleneck = {}\n\n",
            m.variant,
            list(&m.encoder_widths),
            list(&m.unet_widths),
            m.bottleneck
        );
        s += &format!(
            "[train]\nlr = {:?}\nlambda = {:?}\nepochs = {}\nbatch = {}\n",
            self.lr, self.lambda, self.epochs, self.batch
        );
        if let Some(ms) = self.max_steps {
            s += &format!("max_steps = {ms}\n");
        }
        s += &format!("\n[data]\npatch = {}\n", self.patch);
        if let Some(st) = self.clip_stride {
            s += &format!("stride = {st}\n");
        }
        s
    }
}

fn lookup<'a>(t: &'a Table, key: &str) -> Option<&'a Value> {
    let mut parts = key.split('.');
    let mut v = t.get(parts.next()?)?;
    for p in parts {
        v = v.as_table()?.get(p)?;
    }
    Some(v)
}

fn require<'a>(t: &'a Table, key: &str) -> Result<&'a Value> {
    lookup(t, key).ok_or_else(|| TrainError::MissingKey(key.to_string()))
}

fn wrong_type(key: &str, want: &str, v: &Value) -> TrainError {
    TrainError::Config(format!("'{key}' must be {want}, got {v}"))
}

fn get_uint(t: &Table, key: &str) -> Result<u64> {
    let v = require(t, key)?;
    v.as_integer()
        .and_then(|i| u64::try_from(i).ok())
        .ok_or_else(|| wrong_type(key, "a non-negative integer", v))
}

fn get_float(t: &Table, key: &str) -> Result<f64> {
    let v = require(t, key)?;
    v.as_float()
        .or_else(|| v.as_integer().map(|i| i as f64))
        .ok_or_else(|| wrong_type(key, "a number", v))
}

fn get_str<'a>(t: &'a Table, key: &str) -> Result<&'a str> {
    let v = require(t, key)?;
    v.as_str().ok_or_else(|| wrong_type(key, "a string", v))
}

fn widths(v: &Value, key: &str) -> Result<[usize; 3]> {
    let arr = v.as_array().ok_or_else(|| wrong_type(key, "an array of three integers", v))?;
    let vals: Vec<usize> = arr
        .iter()
        .map(|x| x.as_integer().and_then(|i| usize::try_from(i).ok()))
        .collect::<Option<_>>()
        .ok_or_else(|| wrong_type(key, "an array of three integers", v))?;
    vals.try_into()
        .map_err(|_| wrong_type(key, "an array of three integers", v))
}

/// Applies `a.b.c=value`; the value is read as TOML, falling back to a
/// plain string.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| TrainError::Config(format!("override '{assignment}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(TrainError::Config(format!("bad override key '{key}'")));
    }
    let (last, sections) = parts.split_last().expect("non-empty");
    let mut cur = table;
    for s in sections {
        let entry = cur
            .entry(s.to_string())
            .or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| TrainError::Config(format!("override '{key}': '{s}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
