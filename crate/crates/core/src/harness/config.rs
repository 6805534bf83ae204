use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env_model::{check_assumptions, EnvDistribution};
use crate::oracles::VerifyBudget;
use crate::valleys::ValleySchedule;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config is not valid TOML: {0}")]
    Parse(String),
    #[error("{0}")]
    Invalid(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Invalid(msg.into()))
}

/// Valley construction and the window it is searched in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValleyParams {
    pub epsilon: f64,
    pub c0: f64,
    pub c2: f64,
    /// Defaults to 1.1 times the smallest admissible value.
    pub c4: Option<f64>,
    pub i_max: usize,
    /// Number of deep-valley indices `i(0..=n_max)` to select.
    pub n_max: usize,
    /// Sites realized left of 0.
    pub left_extent: i64,
    /// First right edge; doubled until the census completes.
    pub initial_window: i64,
    /// Hard cap on the right edge.
    pub max_sites: i64,
}

impl Default for ValleyParams {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            c0: 1.0,
            c2: 1.0,
            c4: None,
            i_max: 6,
            n_max: 1,
            left_extent: 1024,
            initial_window: 1 << 14,
            max_sites: 1 << 24,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollideParams {
    /// Walker starting sites; their number is `d`.
    pub starts: Vec<i64>,
    pub horizon: u64,
    pub n_seeds: usize,
    pub checkpoint_stride: u64,
    /// Meetings before this time are excluded from `meetings_after` counts.
    pub min_meeting_time: u64,
}

impl Default for CollideParams {
    fn default() -> Self {
        Self { starts: vec![0, 2], horizon: 1_000_000, n_seeds: 30, checkpoint_stride: 0, min_meeting_time: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TailParams {
    pub samples: usize,
    pub h_min: f64,
}

impl Default for TailParams {
    fn default() -> Self {
        Self { samples: 100_000, h_min: 3.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckEnvParams {
    /// Dump `x, ω_x, V(x)` on this window when set.
    pub path_window: Option<[i64; 2]>,
}

/// Where results go and how many worker threads produce them. Neither
/// affects the results, so neither enters the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputParams {
    pub dir: PathBuf,
    /// 0 uses every available core.
    pub jobs: usize,
}

impl Default for OutputParams {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), jobs: 0 }
    }
}

/// Everything an experiment needs. The distribution is given at top level:
///
/// ```toml
/// kind = "two_point"   # or "finite" with `values` and `masses`
/// p_low = 0.25
/// p_high = 0.75
/// q = 0.3
/// epsilon0 = 0.25
/// master_seed = 1
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: String,
    pub p_low: Option<f64>,
    pub p_high: Option<f64>,
    pub q: Option<f64>,
    pub values: Option<Vec<f64>>,
    pub masses: Option<Vec<f64>>,
    pub epsilon0: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub check_env: CheckEnvParams,
    #[serde(default)]
    pub valleys: ValleyParams,
    #[serde(default)]
    pub collide: CollideParams,
    #[serde(default)]
    pub tail: TailParams,
    #[serde(default)]
    pub verify: VerifyBudget,
    #[serde(default)]
    pub output: OutputParams,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    /// The two-point law with `P(ω = 1/4) = q`, `ω = 3/4` otherwise.
    pub fn two_point(q: f64, master_seed: u64) -> Self {
        Self {
            kind: "two_point".into(),
            p_low: Some(0.25),
            p_high: Some(0.75),
            q: Some(q),
            values: None,
            masses: None,
            epsilon0: 0.25,
            master_seed,
            check_env: CheckEnvParams::default(),
            valleys: ValleyParams::default(),
            collide: CollideParams::default(),
            tail: TailParams::default(),
            verify: VerifyBudget::default(),
            output: OutputParams::default(),
        }
    }

    pub fn distribution(&self) -> Result<EnvDistribution, ConfigError> {
        let built = match self.kind.as_str() {
            "two_point" => {
                if self.values.is_some() || self.masses.is_some() {
                    return invalid("kind = \"two_point\" takes p_low, p_high and q, not values/masses");
                }
                let (Some(lo), Some(hi), Some(q)) = (self.p_low, self.p_high, self.q) else {
                    return invalid("kind = \"two_point\" needs p_low, p_high and q");
                };
                EnvDistribution::two_point(lo, hi, q, self.epsilon0)
            }
            "finite" => {
                if self.p_low.is_some() || self.p_high.is_some() || self.q.is_some() {
                    return invalid("kind = \"finite\" takes values and masses, not p_low/p_high/q");
                }
                let (Some(v), Some(m)) = (&self.values, &self.masses) else {
                    return invalid("kind = \"finite\" needs values and masses arrays");
                };
                if v.len() != m.len() {
                    return invalid(format!("values has {} entries but masses has {}", v.len(), m.len()));
                }
                let pairs: Vec<(f64, f64)> = v.iter().copied().zip(m.iter().copied()).collect();
                EnvDistribution::new(&pairs, self.epsilon0)
            }
            other => return invalid(format!("unknown kind {other:?}; use \"two_point\" or \"finite\"")),
        };
        built.map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Valley schedule, rejecting `ε` outside `(0, (1 − κ)/(2κ))`.
    pub fn schedule(&self, dist: &EnvDistribution) -> Result<ValleySchedule, ConfigError> {
        let m = check_assumptions(dist).moments;
        let Some(kappa) = m.kappa.filter(|k| *k > 0.0 && *k < 1.0) else {
            return invalid("valleys need a law with 0 < kappa < 1; run check-env for details");
        };
        let hi = (1.0 - kappa) / (2.0 * kappa);
        let p = &self.valleys;
        if !(p.epsilon > 0.0 && p.epsilon < hi) {
            return invalid(format!(
                "valleys.epsilon = {} must lie in (0, {hi:.6}) for kappa = {kappa:.6}",
                p.epsilon
            ));
        }
        ValleySchedule::for_distribution(dist, p.epsilon, p.c0, p.c2, p.c4).map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// Checks that do not depend on the command.
    pub fn validate(&self) -> Result<EnvDistribution, ConfigError> {
        let dist = self.distribution()?;
        let c = &self.collide;
        if c.starts.is_empty() {
            return invalid("collide.starts must list at least one site");
        }
        if let Some(&odd) = c.starts.iter().find(|&&s| (s - c.starts[0]).rem_euclid(2) != 0) {
            return invalid(format!(
                "collide.starts {:?} mix parities ({} vs {}); walkers of different parity never meet",
                c.starts, c.starts[0], odd
            ));
        }
        let v = &self.valleys;
        if v.left_extent < 0 || v.initial_window < 1 || v.max_sites < v.initial_window {
            return invalid("valleys window needs left_extent ≥ 0 and 1 ≤ initial_window ≤ max_sites");
        }
        if let Some([lo, hi]) = self.check_env.path_window {
            if lo > 0 || hi < 0 {
                return invalid("check_env.path_window must contain 0");
            }
        }
        Ok(dist)
    }

    /// SHA-256 of the canonical JSON form, leaving out the output section.
    pub fn hash(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        v.as_object_mut().expect("object").remove("output");
        hex::encode(Sha256::digest(v.to_string().as_bytes()))
    }
}
