//! JSON experiment configurations, one schema per recipe.
//!
//! Unknown keys are rejected everywhere, and parse failures carry the path of
//! the offending value (`network.layers[0].width`, ...).

use std::path::Path;

use ntklab_core::{Activation, NetworkSpec};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{Generator, LabelMap, Target};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Recipe {
    Spectrum,
    SpectralBias,
    EffectiveRank,
    HessianProbe,
    CoverAudit,
}

impl Recipe {
    pub fn name(self) -> &'static str {
        match self {
            Recipe::Spectrum => "spectrum",
            Recipe::SpectralBias => "spectral-bias",
            Recipe::EffectiveRank => "effective-rank",
            Recipe::HessianProbe => "hessian-probe",
            Recipe::CoverAudit => "cover-audit",
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("{file}: cannot read config: {message}")]
    Io { file: String, message: String },
    #[error("{file}: invalid config at `{path}`: {message}")]
    Invalid { file: String, path: String, message: String },
}

impl ConfigError {
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Invalid { path, .. } => Some(path),
            ConfigError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    Synthetic {
        generator: Generator,
        #[serde(default)]
        target: Target,
        n: usize,
        /// Held-out sample size; recipes that need one default it to `n`.
        #[serde(default)]
        holdout: Option<usize>,
    },
    Idx {
        /// Relative paths are resolved against the config file's directory.
        images: String,
        labels: String,
        #[serde(default)]
        label_map: LabelMap,
        n: usize,
        #[serde(default)]
        holdout: Option<usize>,
    },
}

impl DataSpec {
    pub fn n(&self) -> usize {
        match self {
            DataSpec::Synthetic { n, .. } | DataSpec::Idx { n, .. } => *n,
        }
    }

    pub fn holdout(&self) -> Option<usize> {
        match self {
            DataSpec::Synthetic { holdout, .. } | DataSpec::Idx { holdout, .. } => *holdout,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let DataSpec::Idx { images, labels, .. } = self {
            for p in [images, labels] {
                if Path::new(p.as_str()).is_relative() {
                    *p = base.join(p.as_str()).display().to_string();
                }
            }
        }
    }
}

fn default_eta0() -> f64 {
    1e-2
}
fn default_top_decay() -> f64 {
    100.0
}
fn default_checkpoints() -> usize {
    24
}
fn default_tracked() -> usize {
    5
}
fn default_ranks() -> Vec<usize> {
    vec![1, 3, 5]
}
fn default_limit_inits() -> usize {
    64
}
fn default_pairs() -> usize {
    256
}
fn default_true() -> bool {
    true
}
fn default_eps_relative() -> Vec<f64> {
    vec![1.0, 0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005, 0.002, 0.001]
}
fn default_radii() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 8.0]
}
fn default_cover_eps() -> f64 {
    0.1
}
fn default_gamma() -> f64 {
    0.25
}
fn default_input_dim() -> usize {
    8
}
fn default_depth() -> usize {
    2
}
fn default_activation() -> Activation {
    Activation::Softplus
}
fn default_widths() -> Vec<usize> {
    vec![64, 128, 256, 512]
}
fn default_probes() -> usize {
    8
}
fn default_iterations() -> usize {
    100
}
fn default_ellipsoids() -> usize {
    25
}
fn default_min_dim() -> usize {
    1
}
fn default_max_dim() -> usize {
    3
}
fn default_axis_min() -> f64 {
    0.3
}
fn default_axis_max() -> f64 {
    2.5
}
fn default_gammas() -> Vec<f64> {
    vec![0.1, 0.25, 0.4]
}
fn default_samples() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
    pub network: NetworkSpec,
    pub data: DataSpec,
    /// Number of normalized eigenvalues to report; defaults to `n / 2`.
    #[serde(default)]
    pub k_max: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(default = "default_eta0")]
    pub eta0: f64,
    /// Final time; when absent, chosen so the top eigendirection decays by
    /// `top_decay` under the kernel dynamics.
    #[serde(default)]
    pub t_max: Option<f64>,
    #[serde(default = "default_top_decay")]
    pub top_decay: f64,
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// First checkpoint; defaults to `t_max / 500`.
    #[serde(default)]
    pub t_first: Option<f64>,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            eta0: default_eta0(),
            t_max: None,
            top_decay: default_top_decay(),
            checkpoints: default_checkpoints(),
            t_first: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralBiasConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
    pub network: NetworkSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// Number of leading eigendirections whose projections are tracked.
    #[serde(default = "default_tracked")]
    pub tracked: usize,
    #[serde(default = "default_ranks")]
    pub deviation_ranks: Vec<usize>,
    /// Initializations averaged into the Monte-Carlo limit kernel.
    #[serde(default = "default_limit_inits")]
    pub limit_inits: usize,
    /// Input pairs used to estimate the squared kernel distance.
    #[serde(default = "default_pairs")]
    pub distance_pairs: usize,
    /// Slack in the deviation bound; defaults to the measured integration error
    /// of the run. The held-out check adds the measured finite-sample operator
    /// error of the limit kernel on top.
    #[serde(default)]
    pub eps_slack: Option<f64>,
    /// Fit decay rates to least-squares projection coefficients rather than
    /// plain inner products.
    #[serde(default = "default_true")]
    pub least_squares: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EffectiveRankConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
    pub network: NetworkSpec,
    pub data: DataSpec,
    /// Scales, as fractions of the top singular value of `F^(1/2)`.
    #[serde(default = "default_eps_relative")]
    pub eps_relative: Vec<f64>,
    #[serde(default = "default_radii")]
    pub radii: Vec<f64>,
    #[serde(default = "default_cover_eps")]
    pub cover_eps: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Form the `p x p` matrix (only allowed for small `p`).
    #[serde(default)]
    pub explicit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HessianProbeConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
    /// Hidden layers, all of the probed width.
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    /// Distance from initialization at which the Hessian is probed, along a
    /// random unit direction.
    #[serde(default)]
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoverAuditConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing)]
    pub output_dir: Option<String>,
    #[serde(default = "default_ellipsoids")]
    pub ellipsoids: usize,
    #[serde(default = "default_min_dim")]
    pub min_dim: usize,
    #[serde(default = "default_max_dim")]
    pub max_dim: usize,
    #[serde(default = "default_axis_min")]
    pub axis_min: f64,
    #[serde(default = "default_axis_max")]
    pub axis_max: f64,
    #[serde(default = "default_gammas")]
    pub gammas: Vec<f64>,
    #[serde(default = "default_samples")]
    pub audit_samples: usize,
    #[serde(default = "default_samples")]
    pub rejection_limit: usize,
    #[serde(default)]
    pub keep_centers: bool,
}

impl Default for CoverAuditConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Any recipe's configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ExperimentConfig {
    Spectrum(SpectrumConfig),
    SpectralBias(SpectralBiasConfig),
    EffectiveRank(EffectiveRankConfig),
    HessianProbe(HessianProbeConfig),
    CoverAudit(CoverAuditConfig),
}

impl ExperimentConfig {
    pub fn recipe(&self) -> Recipe {
        match self {
            ExperimentConfig::Spectrum(_) => Recipe::Spectrum,
            ExperimentConfig::SpectralBias(_) => Recipe::SpectralBias,
            ExperimentConfig::EffectiveRank(_) => Recipe::EffectiveRank,
            ExperimentConfig::HessianProbe(_) => Recipe::HessianProbe,
            ExperimentConfig::CoverAudit(_) => Recipe::CoverAudit,
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Spectrum(c) => c.seed,
            ExperimentConfig::SpectralBias(c) => c.seed,
            ExperimentConfig::EffectiveRank(c) => c.seed,
            ExperimentConfig::HessianProbe(c) => c.seed,
            ExperimentConfig::CoverAudit(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::Spectrum(c) => c.seed = seed,
            ExperimentConfig::SpectralBias(c) => c.seed = seed,
            ExperimentConfig::EffectiveRank(c) => c.seed = seed,
            ExperimentConfig::HessianProbe(c) => c.seed = seed,
            ExperimentConfig::CoverAudit(c) => c.seed = seed,
        }
    }

    pub fn output_dir(&self) -> Option<&str> {
        match self {
            ExperimentConfig::Spectrum(c) => c.output_dir.as_deref(),
            ExperimentConfig::SpectralBias(c) => c.output_dir.as_deref(),
            ExperimentConfig::EffectiveRank(c) => c.output_dir.as_deref(),
            ExperimentConfig::HessianProbe(c) => c.output_dir.as_deref(),
            ExperimentConfig::CoverAudit(c) => c.output_dir.as_deref(),
        }
    }

    /// The resolved configuration as JSON, without the output location.
    pub fn to_json(&self) -> serde_json::Value {
        let v = match self {
            ExperimentConfig::Spectrum(c) => serde_json::to_value(c),
            ExperimentConfig::SpectralBias(c) => serde_json::to_value(c),
            ExperimentConfig::EffectiveRank(c) => serde_json::to_value(c),
            ExperimentConfig::HessianProbe(c) => serde_json::to_value(c),
            ExperimentConfig::CoverAudit(c) => serde_json::to_value(c),
        };
        v.expect("config structs serialize")
    }

    fn resolve_paths(&mut self, base: &Path) {
        match self {
            ExperimentConfig::Spectrum(c) => c.data.resolve_paths(base),
            ExperimentConfig::SpectralBias(c) => c.data.resolve_paths(base),
            ExperimentConfig::EffectiveRank(c) => c.data.resolve_paths(base),
            ExperimentConfig::HessianProbe(_) | ExperimentConfig::CoverAudit(_) => {}
        }
    }
}

fn parse<T: DeserializeOwned>(text: &str, file: &str) -> Result<T, ConfigError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let value: T = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::Invalid {
            file: file.to_string(),
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|e| ConfigError::Invalid {
        file: file.to_string(),
        path: ".".into(),
        message: e.to_string(),
    })?;
    Ok(value)
}

/// Parses `text` as the configuration of `recipe`. `file` labels errors.
pub fn parse_config(recipe: Recipe, text: &str, file: &str) -> Result<ExperimentConfig, ConfigError> {
    Ok(match recipe {
        Recipe::Spectrum => ExperimentConfig::Spectrum(parse(text, file)?),
        Recipe::SpectralBias => ExperimentConfig::SpectralBias(parse(text, file)?),
        Recipe::EffectiveRank => ExperimentConfig::EffectiveRank(parse(text, file)?),
        Recipe::HessianProbe => ExperimentConfig::HessianProbe(parse(text, file)?),
        Recipe::CoverAudit => ExperimentConfig::CoverAudit(parse(text, file)?),
    })
}

/// Reads and parses a config file, resolving dataset paths against its directory.
pub fn load_config(recipe: Recipe, path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let file = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        file: file.clone(),
        message: e.to_string(),
    })?;
    let mut config = parse_config(recipe, &text, &file)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve_paths(&base);
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_nested_key_names_its_path() {
        let text = r#"{"network": {"input_dim": 3, "layers": [{"kind": "fully_connected", "width": 4}],
            "activation": "softplus"}, "data": {"source": "synthetic",
            "generator": {"kind": "sphere_uniform", "d": 3}, "n": 8}, "k_maxx": 3}"#;
        let err = parse_config(Recipe::Spectrum, text, "c.json").unwrap_err();
        assert_eq!(err.path(), Some("k_maxx"));
        let text = r#"{"widths": [8, "x"]}"#;
        let err = parse_config(Recipe::HessianProbe, text, "c.json").unwrap_err();
        assert_eq!(err.path(), Some("widths[1]"));
    }

    #[test]
    fn defaults_fill_in() {
        let c = CoverAuditConfig::default();
        assert_eq!(c.ellipsoids, 25);
        assert_eq!(c.gammas, vec![0.1, 0.25, 0.4]);
        assert!(parse_config(Recipe::CoverAudit, "{} {}", "c.json").is_err());
    }
}
