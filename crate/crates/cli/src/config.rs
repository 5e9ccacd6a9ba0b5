//! Run configuration: one structured file with per-command sections.
//!
//! TOML is the primary encoding; a `.json` file with the same schema is
//! accepted as an alternative. Unknown keys are rejected everywhere, and
//! every stochastic stage requires an explicit seed.

use std::path::Path;

use serde::{Deserialize, Serialize};

use gridalign_core::criterion::LossWeights;
use gridalign_core::synth::DiffeoSpec;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifyConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub heatmap: Option<HeatmapConfig>,
    pub io: IoConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub d: usize,
    pub cells_per_axis: Vec<usize>,
    pub ranges: Vec<[f64; 2]>,
    /// Multiplier on the diagonal-cell priors; 1 leaves them untouched.
    #[serde(default = "one")]
    pub diagonal_boost: f64,
    pub n: usize,
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case", tag = "kind")]
pub enum MixingConfig {
    /// Observations equal latents.
    Identity,
    /// Random square matrix redrawn until its condition number is below
    /// the limit.
    RandomLinear {
        #[serde(default = "default_cond")]
        condition_limit: f64,
        seed: u64,
    },
    /// Explicit map.
    Spec { spec: DiffeoSpec },
}

fn default_cond() -> f64 {
    100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Gridalign,
    Fastica,
    Hfs,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Gridalign => "gridalign",
            Method::Fastica => "fastica",
            Method::Hfs => "hfs",
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_method")]
    pub method: Method,
    /// Defaults per method: 0.1 for gridalign, 1e-4 for hfs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Defaults per method: 0.9 for gridalign, 0 for hfs.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_window")]
    pub plateau_window: usize,
    #[serde(default = "default_plateau_tol")]
    pub plateau_tol: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    pub seed: u64,
    #[serde(default)]
    pub loss_weights: LossWeights,
    #[serde(default)]
    pub fastica: FasticaConfig,
}

fn default_method() -> Method {
    Method::Gridalign
}
fn default_batch() -> usize {
    5000
}
fn default_epochs() -> usize {
    200
}
fn default_window() -> usize {
    10
}
fn default_plateau_tol() -> f64 {
    1e-3
}
fn default_bandwidth() -> f64 {
    0.1
}

impl TrainSection {
    pub fn learning_rate(&self) -> f64 {
        self.learning_rate.unwrap_or(match self.method {
            Method::Hfs => 1e-4,
            _ => 0.1,
        })
    }

    pub fn momentum(&self) -> f64 {
        self.momentum.unwrap_or(match self.method {
            Method::Hfs => 0.0,
            _ => 0.9,
        })
    }

    pub fn to_core(&self) -> gridalign_core::train::TrainConfig {
        gridalign_core::train::TrainConfig {
            learning_rate: self.learning_rate(),
            momentum: self.momentum(),
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            plateau_window: self.plateau_window,
            plateau_tol: self.plateau_tol,
            bandwidth: self.bandwidth,
            seed: self.seed,
            loss_weights: self.loss_weights.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FasticaConfig {
    #[serde(default = "default_nonlinearity")]
    pub nonlinearity: gridalign_core::baselines::IcaNonlinearity,
    #[serde(default = "default_ica_tol")]
    pub tol: f64,
    #[serde(default = "default_ica_iter")]
    pub max_iter: usize,
}

fn default_nonlinearity() -> gridalign_core::baselines::IcaNonlinearity {
    gridalign_core::baselines::IcaNonlinearity::Tanh
}
fn default_ica_tol() -> f64 {
    1e-6
}
fn default_ica_iter() -> usize {
    500
}

impl Default for FasticaConfig {
    fn default() -> Self {
        Self {
            nonlinearity: default_nonlinearity(),
            tol: default_ica_tol(),
            max_iter: default_ica_iter(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub k_per_axis: Vec<usize>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_top_fraction")]
    pub top_fraction: f64,
    #[serde(default = "default_edge_margin")]
    pub edge_margin: f64,
    pub seed: u64,
    #[serde(default = "default_null_shuffles")]
    pub null_shuffles: usize,
}

fn default_top_fraction() -> f64 {
    0.1
}
fn default_edge_margin() -> f64 {
    2.0
}
fn default_null_shuffles() -> usize {
    10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Battery {
    Default,
    None,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Samples per exact-recovery case.
    #[serde(default = "default_verify_n")]
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_pf_n")]
    pub pushforward_n: usize,
    #[serde(default = "default_pf_points")]
    pub pushforward_points: usize,
    #[serde(default = "default_pf_tol")]
    pub pushforward_tolerance: f64,
    #[serde(default = "default_margin")]
    pub margin_bandwidths: f64,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_battery")]
    pub recovery_battery: Battery,
    #[serde(default = "default_battery")]
    pub pushforward_battery: Battery,
}

fn default_verify_n() -> usize {
    100_000
}
fn default_pf_n() -> usize {
    50_000
}
fn default_pf_points() -> usize {
    4000
}
fn default_pf_tol() -> f64 {
    0.15
}
fn default_margin() -> f64 {
    3.0
}
fn default_battery() -> Battery {
    Battery::Default
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeatmapConfig {
    #[serde(default = "default_resolution")]
    pub resolution: [usize; 2],
    #[serde(default = "default_axes")]
    pub axes: [usize; 2],
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    /// Natural log of every column before anything else.
    #[serde(default)]
    pub log_transform: bool,
    #[serde(default = "default_true")]
    pub standardize: bool,
    /// Defaults to the data range of the selected axes.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[[f64; 2]; 2]>,
    #[serde(default = "default_source")]
    pub source: HeatmapSource,
}

fn default_resolution() -> [usize; 2] {
    [160, 160]
}
fn default_axes() -> [usize; 2] {
    [0, 1]
}
fn default_true() -> bool {
    true
}
fn default_source() -> HeatmapSource {
    HeatmapSource::Latents
}

impl Default for HeatmapConfig {
    fn default() -> Self {
        Self {
            resolution: default_resolution(),
            axes: default_axes(),
            bandwidth: default_bandwidth(),
            log_transform: false,
            standardize: true,
            bbox: None,
            source: default_source(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapSource {
    Latents,
    Observations,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoConfig {
    pub out_dir: std::path::PathBuf,
}

impl RunConfig {
    /// Load from a `.toml` (default) or `.json` file.
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let raw = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let cfg = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_slice(&raw)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        } else {
            let text = std::str::from_utf8(&raw)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            toml::from_str(text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        };
        Ok((cfg, raw))
    }

    pub fn synth(&self) -> Result<&SynthConfig> {
        self.synth
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [synth] section".into()))
    }

    pub fn train(&self) -> Result<&TrainSection> {
        self.train
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [train] section".into()))
    }

    pub fn eval(&self) -> Result<&EvalConfig> {
        self.eval
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [eval] section".into()))
    }

    pub fn verify(&self) -> Result<&VerifyConfig> {
        self.verify
            .as_ref()
            .ok_or_else(|| CliError::Config("missing [verify] section".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
[synth]
d = 2
cells_per_axis = [4, 4]
ranges = [[0.0, 4.0], [0.0, 4.0]]
diagonal_boost = 6.0
n = 50000
seed = 48

[mixing]
kind = "random_linear"
seed = 3

[train]
method = "gridalign"
seed = 7

[eval]
k_per_axis = [3, 3]
seed = 11

[io]
out_dir = "runs/demo"
"#;

    #[test]
    fn parses_sample_with_defaults() {
        let cfg: RunConfig = toml::from_str(SAMPLE).unwrap();
        let train = cfg.train().unwrap();
        assert_eq!(train.learning_rate(), 0.1);
        assert_eq!(train.momentum(), 0.9);
        assert_eq!(train.batch_size, 5000);
        assert_eq!(train.bandwidth, 0.1);
        assert_eq!(cfg.eval().unwrap().top_fraction, 0.1);
        match cfg.mixing.as_ref().unwrap() {
            MixingConfig::RandomLinear { condition_limit, seed } => {
                assert_eq!(*condition_limit, 100.0);
                assert_eq!(*seed, 3);
            }
            other => panic!("unexpected mixing {other:?}"),
        }
    }

    #[test]
    fn hfs_defaults_differ() {
        let mut cfg: RunConfig = toml::from_str(SAMPLE).unwrap();
        let mut train = cfg.train.take().unwrap();
        train.method = Method::Hfs;
        assert_eq!(train.learning_rate(), 1e-4);
        assert_eq!(train.momentum(), 0.0);
    }

    #[test]
    fn rejects_unknown_keys() {
        let bad = format!("{SAMPLE}\n[synth.extra]\nx = 1\n");
        assert!(toml::from_str::<RunConfig>(&bad).is_err());
        let bad2 = SAMPLE.replace("seed = 7", "seed = 7\nlearning_rte = 0.5");
        assert!(toml::from_str::<RunConfig>(&bad2).is_err());
    }

    #[test]
    fn seeds_are_required() {
        let missing = SAMPLE.replace("seed = 7\n", "");
        assert!(toml::from_str::<RunConfig>(&missing).is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg: RunConfig = toml::from_str(SAMPLE).unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let back: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(
            serde_json::to_string(&cfg).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
    }
}
