//! Flat `key=value` config files. One namespace covers the model and the
//! trainer; unknown keys are rejected rather than ignored so typos fail
//! loudly. `#` starts a comment. The same serialization becomes the
//! checkpoint's `.cfg` sidecar.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use demoire_core::model::ModelConfig;
use demoire_core::train::{Stage, TrainConfig};

use crate::{usage, CliError};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Seed of the frozen random-feature extractor behind the perceptual
    /// loss term.
    pub perceptual_seed: u64,
}

impl Default for FullConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(Stage::Stage1High),
            perceptual_seed: 17,
        }
    }
}

fn parse_triple(v: &str, key: &str) -> Result<[usize; 3], CliError> {
    let parts: Vec<&str> = v.split(',').collect();
    if parts.len() != 3 {
        return Err(usage(format!("{key}: want three comma-separated values, got {v:?}")));
    }
    let mut out = [0usize; 3];
    for (i, p) in parts.iter().enumerate() {
        out[i] = p
            .trim()
            .parse()
            .map_err(|_| usage(format!("{key}: bad entry {p:?}")))?;
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(v: &str, key: &str) -> Result<T, CliError> {
    v.trim()
        .parse()
        .map_err(|_| usage(format!("{key}: cannot parse {v:?}")))
}

pub fn parse(text: &str) -> Result<FullConfig, CliError> {
    let mut cfg = FullConfig::default();
    let mut seen: BTreeMap<&str, ()> = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| usage(format!("config line {}: no '=' in {line:?}", lineno + 1)))?;
        let (key, v) = (key.trim(), value.trim());
        if seen.insert(key, ()).is_some() {
            return Err(usage(format!("config line {}: duplicate key {key}", lineno + 1)));
        }
        let m = &mut cfg.model;
        let t = &mut cfg.train;
        match key {
            "base_channels" => m.base_channels = parse_num(v, key)?,
            "enc_n_high" => m.enc_n_high = parse_triple(v, key)?,
            "dec_n_high" => m.dec_n_high = parse_triple(v, key)?,
            "enc_n_low" => m.enc_n_low = parse_triple(v, key)?,
            "dec_n_low" => m.dec_n_low = parse_triple(v, key)?,
            "heads" => m.heads = parse_triple(v, key)?,
            "n_f" => m.n_f = parse_num(v, key)?,
            "ffn_expand" => m.ffn_expand = parse_num(v, key)?,
            "rddb_growth" => m.rddb_growth = parse_num(v, key)?,
            "freq_levels" => m.freq_levels = parse_num(v, key)?,
            "shuffle_factor" => m.shuffle_factor = parse_num(v, key)?,
            "low_side" => m.low_side = parse_num(v, key)?,
            "lr0" => t.lr0 = parse_num(v, key)?,
            "epochs" => t.epochs = parse_num(v, key)?,
            "batch" => t.batch = parse_num(v, key)?,
            "crop_side" => t.crop_side = parse_num(v, key)?,
            "resize_side" => t.resize_side = parse_num(v, key)?,
            "lambda1" => t.lambda1 = parse_num(v, key)?,
            "lambda2" => t.lambda2 = parse_num(v, key)?,
            "cycle_epochs" => t.cycle_epochs = parse_num(v, key)?,
            "seed" => t.seed = parse_num(v, key)?,
            "beta1" => t.beta1 = parse_num(v, key)?,
            "beta2" => t.beta2 = parse_num(v, key)?,
            "eps" => t.eps = parse_num(v, key)?,
            "clip_norm" => t.clip_norm = parse_num(v, key)?,
            "perceptual_seed" => cfg.perceptual_seed = parse_num(v, key)?,
            other => {
                return Err(usage(format!(
                    "config line {}: unknown key {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(cfg)
}

fn triple(v: [usize; 3]) -> String {
    format!("{},{},{}", v[0], v[1], v[2])
}

pub fn serialize(cfg: &FullConfig) -> String {
    let m = &cfg.model;
    let t = &cfg.train;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        let _ = writeln!(s, "{k}={v}");
    };
    kv("base_channels", m.base_channels.to_string());
    kv("enc_n_high", triple(m.enc_n_high));
    kv("dec_n_high", triple(m.dec_n_high));
    kv("enc_n_low", triple(m.enc_n_low));
    kv("dec_n_low", triple(m.dec_n_low));
    kv("heads", triple(m.heads));
    kv("n_f", m.n_f.to_string());
    kv("ffn_expand", m.ffn_expand.to_string());
    kv("rddb_growth", m.rddb_growth.to_string());
    kv("freq_levels", m.freq_levels.to_string());
    kv("shuffle_factor", m.shuffle_factor.to_string());
    kv("low_side", m.low_side.to_string());
    kv("lr0", t.lr0.to_string());
    kv("epochs", t.epochs.to_string());
    kv("batch", t.batch.to_string());
    kv("crop_side", t.crop_side.to_string());
    kv("resize_side", t.resize_side.to_string());
    kv("lambda1", t.lambda1.to_string());
    kv("lambda2", t.lambda2.to_string());
    kv("cycle_epochs", t.cycle_epochs.to_string());
    kv("seed", t.seed.to_string());
    kv("beta1", t.beta1.to_string());
    kv("beta2", t.beta2.to_string());
    kv("eps", t.eps.to_string());
    kv("clip_norm", t.clip_norm.to_string());
    kv("perceptual_seed", cfg.perceptual_seed.to_string());
    s
}
