//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

/// Keys accepted in a config file. A file may be shared between commands,
/// so keys a command does not use are ignored, but unknown keys are errors.
pub const KNOWN_KEYS: &[&str] = &[
    "data",
    "out",
    "synth_seed",
    "count",
    "size",
    "luma_delta",
    "chroma_mode",
    "illumination_gradient",
    "noise_sigma",
    "split_seed",
    "val_fraction",
    "test_fraction",
    "levels",
    "epsilon",
    "tolerance",
    "epochs",
    "batch_size",
    "lr",
    "seed",
    "threshold",
    "ablate",
    "widths",
    "scale",
    "window",
    "heads",
    "decoder_width",
    "checkpoints",
    "seeds",
    "split",
    "baseline",
    "csv",
    "min_dice",
    "checkpoint",
    "image",
];

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    path: Option<PathBuf>,
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::PathNotFound(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text).map_err(|e| match e {
            Error::InvalidArgument(m) => Error::InvalidArgument(format!("{}: {m}", path.display())),
            other => other,
        })?;
        cfg.path = Some(path.to_path_buf());
        Ok(cfg)
    }

    /// Blank lines and lines starting with `#` are skipped. Keys may use
    /// `-` or `_` interchangeably.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("line {}: expected 'key = value'", i + 1)))?;
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidArgument(format!("line {}: unknown key '{key}'", i + 1)));
            }
            let value = v.trim().trim_matches('"').to_string();
            if values.insert(key.clone(), value).is_some() {
                return Err(Error::InvalidArgument(format!("line {}: duplicate key '{key}'", i + 1)));
            }
        }
        Ok(Self { path: None, values })
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>().map_err(|e| {
                    let origin = self.path.as_ref().map_or("config".into(), |p| p.display().to_string());
                    Error::InvalidArgument(format!("{origin}: {key} = '{v}': {e}"))
                })
            })
            .transpose()
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.raw(key).map(|v| parse_list(key, v)).transpose()
    }

    /// Flag value, else the file value, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }

    pub fn pick_opt<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match flag {
            Some(v) => Ok(Some(v)),
            None => self.get(key),
        }
    }
}

pub fn parse_list<T>(key: &str, v: &str) -> Result<Vec<T>>
where
    T: FromStr,
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| Error::InvalidArgument(format!("{key}: '{s}': {e}")))
        })
        .collect()
}
