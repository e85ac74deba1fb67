//! Flat `key = value` configuration text with `#` comments.

use std::str::FromStr;

use crate::datasets::DistributionSpec;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

/// Parses lines of `key = value`; blank lines and `#` comments are skipped
/// and duplicate keys are rejected.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got '{line}'", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.iter().any(|(seen, _)| seen == k) {
            return Err(Error::Config(format!("line {}: duplicate key '{k}'", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

fn value<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("invalid value '{v}' for key '{key}'")))
}

/// Keys accepted in a training config.
pub const TRAIN_KEYS: [&str; 17] = [
    "epochs",
    "num",
    "lr",
    "optimizer",
    "step_size",
    "gamma",
    "size_step",
    "size",
    "level",
    "batch_size",
    "max_size",
    "min_batch_size",
    "re_limit",
    "channels",
    "precision",
    "seed",
    "coef_distribution",
];

impl TrainConfig {
    /// Defaults overridden by the keys present in `text`; unknown keys are
    /// an error.
    pub fn from_config_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (k, v) in parse_key_values(text)? {
            match k.as_str() {
                "epochs" => cfg.epochs = value(&k, &v)?,
                "num" => cfg.batches_per_epoch = value(&k, &v)?,
                "lr" => cfg.lr = value(&k, &v)?,
                "optimizer" if v.eq_ignore_ascii_case("adam") => {}
                "optimizer" => return Err(Error::Config(format!("unsupported optimizer '{v}'"))),
                "step_size" => cfg.lr_step_epochs = value(&k, &v)?,
                "gamma" => cfg.lr_gamma = value(&k, &v)?,
                "size_step" => cfg.size_step = value(&k, &v)?,
                "size" => cfg.initial_size = value(&k, &v)?,
                "level" => cfg.initial_level = value(&k, &v)?,
                "batch_size" => cfg.initial_batch = value(&k, &v)?,
                "max_size" => cfg.max_size = value(&k, &v)?,
                "min_batch_size" => cfg.min_batch = value(&k, &v)?,
                "re_limit" => cfg.re_limit = value(&k, &v)?,
                "channels" => cfg.channels = value(&k, &v)?,
                "precision" => cfg.precision = value(&k, &v)?,
                "seed" => cfg.seed = value(&k, &v)?,
                "coef_distribution" => cfg.coef_distribution = DistributionSpec::parse(&v)?,
                _ => return Err(Error::Config(format!("unknown key '{k}'"))),
            }
        }
        Ok(cfg)
    }

    pub fn to_config_text(&self) -> String {
        let rows: [(&str, String); 17] = [
            ("epochs", self.epochs.to_string()),
            ("num", self.batches_per_epoch.to_string()),
            ("lr", self.lr.to_string()),
            ("optimizer", "adam".into()),
            ("step_size", self.lr_step_epochs.to_string()),
            ("gamma", self.lr_gamma.to_string()),
            ("size_step", self.size_step.to_string()),
            ("size", self.initial_size.to_string()),
            ("level", self.initial_level.to_string()),
            ("batch_size", self.initial_batch.to_string()),
            ("max_size", self.max_size.to_string()),
            ("min_batch_size", self.min_batch.to_string()),
            ("re_limit", self.re_limit.to_string()),
            ("channels", self.channels.to_string()),
            ("precision", self.precision.to_string()),
            ("seed", self.seed.to_string()),
            ("coef_distribution", self.coef_distribution.to_string()),
        ];
        rows.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
