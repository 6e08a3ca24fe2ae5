//! Optional config file, JSON or `key = value` lines. Flags win over the
//! file, the file wins over built-in defaults.

use std::path::Path;

use anyhow::{Context, Result};
use serde::Deserialize;
use serde_json::{Map, Value};
use trafficgraph::ingest::{PreprocessConfig, TransportFilter};
use trafficgraph::model::Hyperparams;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub epoch: Option<usize>,
    pub batchsize: Option<usize>,
    pub learn_rate: Option<f64>,
    pub dropout: Option<f64>,
    pub lambda_conv: Option<f64>,
    pub lambda_lstm: Option<f64>,
    pub per_class: Option<usize>,
    pub test_fraction: Option<f64>,
    pub time_unit_secs: Option<f64>,
    pub anonymize: Option<bool>,
    pub dedupe: Option<bool>,
    pub tcp_only: Option<bool>,
    pub sink: Option<Vec<String>>,
}

/// Raised for anything wrong with the config file contents.
#[derive(Debug, thiserror::Error)]
#[error("config {path}: {msg}")]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).map_err(|msg| {
            ConfigError {
                path: path.display().to_string(),
                msg,
            }
            .into()
        })
    }

    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| e.to_string())?
        } else {
            Value::Object(key_values(text)?)
        };
        serde_json::from_value(value).map_err(|e| e.to_string())
    }
}

fn key_values(text: &str) -> std::result::Result<Map<String, Value>, String> {
    let mut map = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, raw)) = line.split_once('=') else {
            return Err(format!("line {}: expected key = value", n + 1));
        };
        let (key, raw) = (key.trim(), raw.trim());
        // bare words are strings, anything else is read as JSON
        let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let value = match (key, value) {
            ("sink", Value::String(s)) => Value::Array(s.split(',').map(|p| Value::String(p.trim().into())).collect()),
            (_, v) => v,
        };
        if map.insert(key.to_string(), value).is_some() {
            return Err(format!("line {}: duplicate key {key}", n + 1));
        }
    }
    Ok(map)
}

#[derive(Debug, Clone, Copy, Default, clap::Args)]
pub struct HyperArgs {
    /// Full passes over the training set [default: 5000]
    #[arg(long)]
    pub epoch: Option<usize>,
    /// Samples per optimizer step [default: 200]
    #[arg(long)]
    pub batchsize: Option<usize>,
    /// Adam learning rate [default: 0.0006]
    #[arg(long)]
    pub learn_rate: Option<f64>,
    /// Dropout probability [default: 0.5]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// L1 weight on convolution and dense weights [default: 0.0005]
    #[arg(long)]
    pub lambda_conv: Option<f64>,
    /// L1 weight on LSTM weights [default: 0.00009]
    #[arg(long)]
    pub lambda_lstm: Option<f64>,
}

impl HyperArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<Hyperparams> {
        let d = Hyperparams::default();
        let hp = Hyperparams {
            epoch: self.epoch.or(file.epoch).unwrap_or(d.epoch),
            batchsize: self.batchsize.or(file.batchsize).unwrap_or(d.batchsize),
            learn_rate: self.learn_rate.or(file.learn_rate).unwrap_or(d.learn_rate),
            dropout: self.dropout.or(file.dropout).unwrap_or(d.dropout),
            lambda_conv: self.lambda_conv.or(file.lambda_conv).unwrap_or(d.lambda_conv),
            lambda_lstm: self.lambda_lstm.or(file.lambda_lstm).unwrap_or(d.lambda_lstm),
        };
        hp.validate()?;
        Ok(hp)
    }
}

#[derive(Debug, Clone, Copy, Default, clap::Args)]
pub struct PreprocessArgs {
    /// Width of a deduplication time unit in seconds [default: 60]
    #[arg(long, value_name = "SECS")]
    pub time_unit: Option<f64>,
    /// Keep MAC and IP addresses instead of zeroing them
    #[arg(long)]
    pub no_anonymize: bool,
    /// Keep duplicate payloads within a time unit
    #[arg(long)]
    pub no_dedupe: bool,
    /// Drop UDP packets
    #[arg(long)]
    pub tcp_only: bool,
}

impl PreprocessArgs {
    pub fn resolve(&self, file: &FileConfig) -> Result<PreprocessConfig> {
        let d = PreprocessConfig::default();
        let tcp_only = self.tcp_only || file.tcp_only.unwrap_or(false);
        let cfg = PreprocessConfig {
            time_unit_secs: self.time_unit.or(file.time_unit_secs).unwrap_or(d.time_unit_secs),
            anonymize: !self.no_anonymize && file.anonymize.unwrap_or(d.anonymize),
            dedupe: !self.no_dedupe && file.dedupe.unwrap_or(d.dedupe),
            include_transport: if tcp_only { TransportFilter::TcpOnly } else { TransportFilter::TcpUdp },
            ..d
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
