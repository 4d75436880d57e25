//! Merged run configuration: model, training and paths in one
//! `key = value` namespace.

use std::path::PathBuf;

use anytsr::config::{ModelConfig, Preset};
use anytsr::training::TrainConfig;

use crate::CliError;

pub const PATH_KEYS: &[&str] = &["data", "out"];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Every accepted key.
    pub fn keys() -> Vec<&'static str> {
        let mut keys: Vec<&str> = ModelConfig::KEYS.to_vec();
        keys.extend(TrainConfig::KEYS);
        keys.extend(PATH_KEYS);
        keys
    }

    /// Applies `pairs` in order on top of the preset's defaults; a later
    /// pair wins. The preset itself is taken from the last `preset` pair so
    /// model keys are always relative to it.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self, CliError> {
        let preset: Preset = match pairs.iter().rev().find(|(k, _)| k == "preset") {
            Some((_, v)) => v.trim().parse()?,
            None => Preset::Tiny,
        };
        let mut rc = Self {
            model: ModelConfig::preset(preset),
            train: TrainConfig {
                preset,
                ..TrainConfig::default()
            },
            data: None,
            out: None,
        };
        for (k, v) in pairs {
            rc.set(k, v)?;
        }
        rc.model.validate()?;
        rc.train.validate()?;
        Ok(rc)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            k if TrainConfig::KEYS.contains(&k) => self.train.set(k, value)?,
            k if ModelConfig::KEYS.contains(&k) => self.model.set(k, value)?,
            other => return Err(CliError::config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Resolved settings, one `key = value` line each.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.train.to_pairs().into_iter().chain(self.model.to_pairs()) {
            out.push_str(&format!("{k} = {v}\n"));
        }
        for (k, v) in [("data", &self.data), ("out", &self.out)] {
            if let Some(p) = v {
                out.push_str(&format!("{k} = {}\n", p.display()));
            }
        }
        out
    }
}
