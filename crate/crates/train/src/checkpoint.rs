//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "C2BV"  u32 version
//! u32 byte length, then UTF-8 `key=value` lines (hyperparameters)
//! u32 array count, then per array:
//!     u32 name length, name bytes, u32 rank, rank × u64 dims, f32 values
//! ```
//!
//! Model parameters keep their own names; Adam moments are stored as
//! `adam.m.<name>` and `adam.v.<name>`.

use std::collections::BTreeMap;
use std::path::Path;

use c2b_core::ExposureCode;
use c2b_model::Model;
use c2b_nn::{Adam, Tensor};

use crate::config::TrainConfig;
use crate::error::{Result, TrainError};
use crate::trainer::TrainState;

pub const MAGIC: &[u8; 4] = b"C2BV";
pub const VERSION: u32 = 1;

const KEY_CONFIG: &str = "config";
const KEY_CODE: &str = "code";
const KEY_STEP: &str = "step";
const KEY_ADAM_STEP: &str = "adam.step";

/// Decoded checkpoint contents.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub hyper: BTreeMap<String, String>,
    pub arrays: Vec<(String, Tensor<f32>)>,
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| format!("truncated at byte {} (wanted {n} more)", self.pos))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Checkpoint {
    /// Captures model, optimizer and progress of a run.
    pub fn from_state(config: &TrainConfig, code: &ExposureCode, state: &TrainState) -> Self {
        let mut ck = Self::from_model(config, code, &state.model);
        ck.hyper.insert(KEY_STEP.into(), state.step.to_string());
        ck.hyper.insert(KEY_ADAM_STEP.into(), state.adam.step_count().to_string());
        let (m, v) = state.adam.moments();
        for (prefix, moments) in [("adam.m.", m), ("adam.v.", v)] {
            for (p, t) in state.model.params().iter().zip(moments) {
                ck.arrays.push((format!("{prefix}{}", p.name), t.clone()));
            }
        }
        ck
    }

    /// Model weights only.
    pub fn from_model(config: &TrainConfig, code: &ExposureCode, model: &Model<f32>) -> Self {
        let mut hyper = BTreeMap::new();
        hyper.insert(KEY_CONFIG.into(), config.to_toml());
        hyper.insert(KEY_CODE.into(), code.to_text());
        hyper.insert("variant".into(), model.variant().to_string());
        let arrays = model.params().iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        Checkpoint { hyper, arrays }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let text: String = self
            .hyper
            .iter()
            .map(|(k, v)| format!("{}={}\n", escape(k), escape(v)))
            .collect();
        out.extend_from_slice(&(text.len() as u32).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err("not a checkpoint (bad magic)".into());
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(format!("unsupported version {version} (expected {VERSION})"));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|e| format!("hyperparameters: {e}"))?;
        let mut hyper = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| format!("bad hyperparameter line '{line}'"))?;
            hyper.insert(unescape(k), unescape(v));
        }
        let count = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| format!("array name: {e}"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<std::result::Result<Vec<_>, _>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| format!("array '{name}' is too large"))?;
            let raw = r.take(numel.checked_mul(4).ok_or("array too large")?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            let t = Tensor::new(shape, data).map_err(|e| e.to_string())?;
            arrays.push((name, t));
        }
        if r.pos != bytes.len() {
            return Err(format!("{} trailing bytes", bytes.len() - r.pos));
        }
        Ok(Checkpoint { hyper, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes).map_err(|detail| TrainError::Checkpoint {
            path: path.to_path_buf(),
            detail,
        })
    }

    fn required(&self, key: &str) -> Result<&str> {
        self.hyper
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| TrainError::Config(format!("checkpoint lacks '{key}'")))
    }

    pub fn config(&self) -> Result<TrainConfig> {
        TrainConfig::from_toml(self.required(KEY_CONFIG)?, &[])
    }

    pub fn code(&self) -> Result<ExposureCode> {
        Ok(ExposureCode::from_text(self.required(KEY_CODE)?)?)
    }

    pub fn array(&self, name: &str) -> Option<&Tensor<f32>> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn step_value(&self, key: &str) -> Result<Option<u64>> {
        self.hyper
            .get(key)
            .map(|s| s.parse().map_err(|_| TrainError::Config(format!("checkpoint '{key}' is not an integer"))))
            .transpose()
    }

    /// Rebuilds the model; every parameter must be present.
    pub fn model(&self) -> Result<Model<f32>> {
        let config = self.config()?;
        let mut model = Model::new(config.model, 0)?;
        let names: Vec<String> = model.params().iter().map(|p| p.name.clone()).collect();
        for name in names {
            let t = self
                .array(&name)
                .ok_or_else(|| TrainError::Config(format!("checkpoint lacks parameter '{name}'")))?;
            model.set_param(&name, t.clone())?;
        }
        Ok(model)
    }

    /// Rebuilds the full training state, or `None` for weight-only files.
    pub fn train_state(&self) -> Result<Option<TrainState>> {
        let Some(step) = self.step_value(KEY_STEP)? else {
            return Ok(None);
        };
        let config = self.config()?;
        let model = self.model()?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for p in model.params().iter() {
            for (prefix, out) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
                let t = self
                    .array(&format!("{prefix}{}", p.name))
                    .ok_or_else(|| TrainError::Config(format!("checkpoint lacks {prefix}{}", p.name)))?;
                if t.shape() != p.value.shape() {
                    return Err(TrainError::Config(format!("{prefix}{} has the wrong shape", p.name)));
                }
                out.push(t.clone());
            }
        }
        let mut adam = Adam::new(config.lr);
        adam.restore(self.step_value(KEY_ADAM_STEP)?.unwrap_or(step), m, v);
        Ok(Some(TrainState { model, adam, step }))
    }
}

/// Writes the run state to `path`.
pub fn save_checkpoint(path: &Path, config: &TrainConfig, code: &ExposureCode, state: &TrainState) -> Result<()> {
    Checkpoint::from_state(config, code, state).save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escape_round_trip() {
        for s in ["plain", "a\nb", "back\\slash\\n", "tail\\", "=x=\n\n"] {
            assert_eq!(unescape(&escape(s)), s);
            assert!(!escape(s).contains('\n'));
        }
    }

    #[test]
    fn rejects_bad_headers() {
        assert!(Checkpoint::from_bytes(b"XXXX\x01\0\0\0").unwrap_err().contains("magic"));
        assert!(Checkpoint::from_bytes(b"C2BV\x02\0\0\0").unwrap_err().contains("version"));
        assert!(Checkpoint::from_bytes(b"C2BV\x01\0\0").unwrap_err().contains("truncated"));
    }
}
