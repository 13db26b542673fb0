//! Experiment configuration: JSON in, validated config plus warnings out.

use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use iqnet::cftp::CftpConfig;
use iqnet::domain::{Boundary, Domain, FrozenStripSchedule};
use iqnet::kernel::InterferenceKernel;
use iqnet::noise::env_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Mean,
    Tails,
    Mgf,
    Correlation,
    Maxbox,
    Ergodic,
    FrozenStrip,
    VerifyAll,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Mean => "mean",
            ExperimentKind::Tails => "tails",
            ExperimentKind::Mgf => "mgf",
            ExperimentKind::Correlation => "correlation",
            ExperimentKind::Maxbox => "maxbox",
            ExperimentKind::Ergodic => "ergodic",
            ExperimentKind::FrozenStrip => "frozen-strip",
            ExperimentKind::VerifyAll => "verify-all",
        }
    }
}

fn default_n() -> i64 {
    16
}
fn default_dim() -> usize {
    1
}
fn default_boundary() -> Boundary {
    Boundary::TorusWrap
}
fn default_horizon() -> f64 {
    10_000.0
}
fn default_sample_dt() -> f64 {
    1.0
}
fn default_batch_count() -> usize {
    32
}
fn default_replicas() -> usize {
    8
}
fn default_cap() -> u32 {
    30
}
fn default_k_max() -> usize {
    5
}
fn default_observe_k() -> i64 {
    0
}
fn default_strip_replicates() -> usize {
    4_000
}
fn default_cftp() -> CftpConfig {
    CftpConfig::default()
}

/// One experiment: model parameters, run lengths, and the artifact sink.
/// Unknown keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_n")]
    pub n: i64,
    #[serde(default = "default_boundary")]
    pub boundary: Boundary,
    pub kernel: InterferenceKernel,
    pub lambda: f64,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Defaults to 20% of the horizon.
    #[serde(default)]
    pub burn_in: Option<f64>,
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    #[serde(default = "default_batch_count")]
    pub batch_count: usize,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_cftp")]
    pub cftp: CftpConfig,
    #[serde(default = "default_observe_k")]
    pub observe_k: i64,
    #[serde(default)]
    pub experiment: Option<ExperimentKind>,
    #[serde(default = "default_cap")]
    pub cap: u32,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    /// Exponential-moment arguments; defaults to `{c0/4, c0/2}` when the
    /// rate is stable.
    #[serde(default)]
    pub c_grid: Option<Vec<f64>>,
    /// Covariance offsets along the first axis.
    #[serde(default)]
    pub offsets: Option<Vec<i64>>,
    /// Box radii for maxbox / ergodic experiments; defaults to powers of
    /// two up to n/2.
    #[serde(default)]
    pub box_radii: Option<Vec<i64>>,
    /// Frozen-strip half-width override; defaults to the schedule value.
    #[serde(default)]
    pub strip_half_width: Option<i64>,
    #[serde(default = "default_strip_replicates")]
    pub strip_replicates: usize,
    #[serde(default)]
    pub dump_pi: bool,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("config validation error: {0}")]
    Validation(String),
}

/// Parses and validates a JSON config, returning warnings for legal but
/// suspicious settings (an unstable arrival rate is allowed for
/// exploration, with a warning).
pub fn parse_config(text: &str) -> Result<(ExperimentConfig, Vec<String>), ConfigError> {
    let cfg: ExperimentConfig = serde_json::from_str(text)?;
    let mut warnings = Vec::new();
    if cfg.lambda < 0.0 {
        return Err(ConfigError::Validation(format!(
            "lambda must be nonnegative, got {}",
            cfg.lambda
        )));
    }
    if cfg.n < 1 {
        return Err(ConfigError::Validation(format!("n must be at least 1, got {}", cfg.n)));
    }
    if cfg.dim != cfg.kernel.dim() {
        return Err(ConfigError::Validation(format!(
            "dim = {} does not match kernel dim = {}",
            cfg.dim,
            cfg.kernel.dim()
        )));
    }
    if cfg.horizon <= 0.0 {
        return Err(ConfigError::Validation("horizon must be positive".to_string()));
    }
    if cfg.sample_dt <= 0.0 {
        return Err(ConfigError::Validation("sample_dt must be positive".to_string()));
    }
    if cfg.lambda >= cfg.kernel.critical_rate() {
        warnings.push(format!(
            "lambda = {} is not below the critical rate 1/sum_a = {}; the queue \
             field has no stationary regime at this rate",
            cfg.lambda,
            cfg.kernel.critical_rate()
        ));
    }
    Ok((cfg, warnings))
}

impl ExperimentConfig {
    /// Flag beats config field beats `IQNET_SEED` beats zero.
    pub fn resolved_seed(&self, flag: Option<u64>) -> u64 {
        flag.or(self.seed).or_else(env_seed).unwrap_or(0)
    }

    pub fn resolved_burn_in(&self) -> f64 {
        self.burn_in.unwrap_or(0.2 * self.horizon)
    }

    pub fn strip_half(&self) -> i64 {
        self.strip_half_width
            .unwrap_or_else(|| FrozenStripSchedule::default().strip_half_width(self.n))
    }

    /// The domain this config describes.
    pub fn domain(&self) -> Result<Arc<Domain>, ConfigError> {
        let dom = match self.boundary {
            Boundary::TorusWrap => Domain::torus(self.dim, self.n),
            Boundary::ZeroBox => Domain::zero_box(self.dim, self.n),
            Boundary::FrozenStrip => Domain::frozen_strip(self.dim, self.n, self.strip_half())
                .map_err(|e| ConfigError::Validation(e.to_string()))?,
        };
        Ok(Arc::new(dom))
    }

    pub fn resolved_offsets(&self) -> Vec<i64> {
        self.offsets.clone().unwrap_or_else(|| vec![1, 8])
    }

    pub fn resolved_box_radii(&self) -> Vec<i64> {
        self.box_radii.clone().unwrap_or_else(|| {
            let mut radii = Vec::new();
            let mut r = 8i64;
            while r <= self.n / 2 {
                radii.push(r);
                r *= 2;
            }
            if radii.is_empty() {
                radii.push((self.n / 2).max(1));
            }
            radii
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "dim": 1, "n": 16,
        "kernel": {"dim": 1, "entries": [[-1, 0.5], [0, 1.0], [1, 0.5]]},
        "lambda": 0.2,
        "experiment": "mean"
    }"#;

    #[test]
    fn minimal_config_fills_defaults() {
        let (cfg, warnings) = parse_config(MINIMAL).unwrap();
        assert!(warnings.is_empty());
        assert_eq!(cfg.replicas, 8);
        assert_eq!(cfg.resolved_seed(None), 0);
        assert_eq!(cfg.resolved_burn_in(), 2_000.0);
        assert_eq!(cfg.experiment, Some(ExperimentKind::Mean));
    }

    #[test]
    fn unknown_key_rejected_by_name() {
        let bad = MINIMAL.replace("\"lambda\"", "\"lamda\"");
        let err = parse_config(&bad).unwrap_err();
        assert!(err.to_string().contains("lamda"), "{err}");
    }

    #[test]
    fn unstable_lambda_warns_but_parses() {
        let hot = MINIMAL.replace("0.2", "0.6");
        let (cfg, warnings) = parse_config(&hot).unwrap();
        assert_eq!(cfg.lambda, 0.6);
        assert_eq!(warnings.len(), 1);
        assert!(warnings[0].contains("critical"));
    }

    #[test]
    fn negative_lambda_rejected() {
        let bad = MINIMAL.replace("0.2", "-0.2");
        assert!(matches!(parse_config(&bad), Err(ConfigError::Validation(_))));
    }

    #[test]
    fn seed_precedence() {
        let with_seed = MINIMAL.replace("\"lambda\"", "\"seed\": 9, \"lambda\"");
        let (cfg, _) = parse_config(&with_seed).unwrap();
        assert_eq!(cfg.resolved_seed(None), 9);
        assert_eq!(cfg.resolved_seed(Some(4)), 4);
    }

    #[test]
    fn round_trip_preserves_config() {
        let (cfg, _) = parse_config(MINIMAL).unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let (back, _) = parse_config(&text).unwrap();
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }
}
