use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{RapidError, Result};
use crate::measurement::Terminals;
use crate::recovery::{RecoveryConfig, SolverKind};

/// Beam-training scheme compared in an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "ES")]
    Es,
    #[serde(rename = "RDB")]
    Rdb,
    #[serde(rename = "ES+RAPID")]
    EsRapid,
    #[serde(rename = "RDB+RAPID")]
    RdbRapid,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Es, Scheme::Rdb, Scheme::EsRapid, Scheme::RdbRapid];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Es => "ES",
            Scheme::Rdb => "RDB",
            Scheme::EsRapid => "ES+RAPID",
            Scheme::RdbRapid => "RDB+RAPID",
        }
    }

    /// True when the scheme measures with the exhaustive sweep.
    pub fn exhaustive(self) -> bool {
        matches!(self, Scheme::Es | Scheme::EsRapid)
    }

    pub fn cooperative(self) -> bool {
        matches!(self, Scheme::EsRapid | Scheme::RdbRapid)
    }

    /// The non-cooperative scheme sharing this scheme's measurements.
    pub fn baseline(self) -> Scheme {
        if self.exhaustive() {
            Scheme::Es
        } else {
            Scheme::Rdb
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = RapidError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| RapidError::Config(format!("unknown scheme {s:?}")))
    }
}

/// Variance assigned to estimated path coefficients inside the fusion posteriors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PosteriorVariance {
    /// Receiver noise referred to the beamspace through the measurement gain,
    /// `N0 / A_g^2`.
    #[default]
    Referred,
    /// The raw receiver noise power `N0`.
    N0,
}

fn default_num_bs() -> usize {
    3
}
fn default_n_ue() -> usize {
    16
}
fn default_n_bs() -> usize {
    32
}
fn default_r_ue() -> usize {
    4
}
fn default_r_bs() -> usize {
    8
}
fn default_t_e() -> usize {
    48
}
fn default_half_width() -> f64 {
    50.0
}
fn default_beta() -> f64 {
    4.0
}
fn default_n0() -> f64 {
    1e-5
}
fn default_p_dbm() -> Vec<f64> {
    vec![0.0, 10.0]
}
fn default_trials() -> usize {
    500
}
fn default_seed() -> u64 {
    1
}
fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}
fn default_r_th() -> Vec<f64> {
    vec![1.0, 2.0, 4.0, 6.0, 8.0]
}
fn default_one() -> usize {
    1
}
fn default_max_iters() -> usize {
    500
}
fn default_tol() -> f64 {
    1e-9
}
fn default_solver() -> SolverKind {
    SolverKind::OrthogonalMatchingPursuit
}
fn default_nlos_power() -> f64 {
    0.1
}
fn default_max_range_factor() -> f64 {
    10.0
}
fn default_min_distance() -> f64 {
    1.0
}

/// Every knob of a Monte Carlo experiment. Missing keys take the defaults of
/// the three-cell desk-scale setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_num_bs")]
    pub num_bs: usize,
    #[serde(default = "default_n_ue")]
    pub n_ue: usize,
    #[serde(default = "default_n_bs")]
    pub n_bs: usize,
    #[serde(default = "default_r_ue")]
    pub r_ue: usize,
    #[serde(default = "default_r_bs")]
    pub r_bs: usize,
    /// Pilot slots used by random directional beamforming.
    #[serde(default = "default_t_e")]
    pub t_e: usize,
    /// BS positions are uniform in `[-w, w]^2` around the UE.
    #[serde(default = "default_half_width")]
    pub grid_half_width: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_n0")]
    pub n0: f64,
    #[serde(default = "default_p_dbm")]
    pub p_dbm: Vec<f64>,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    /// Entries passed to each peer; absent means the whole masked estimate.
    #[serde(default)]
    pub share_n_d: Option<usize>,
    #[serde(default = "default_r_th")]
    pub r_th: Vec<f64>,
    /// Paths per link. The first is line-of-sight, the rest are scattered.
    #[serde(default = "default_one")]
    pub expected_paths: usize,
    /// Mean power of each scattered path relative to the LOS path.
    #[serde(default = "default_nlos_power")]
    pub nlos_power: f64,
    #[serde(default = "default_solver")]
    pub solver: SolverKind,
    #[serde(default = "default_one")]
    pub sparsity_k: usize,
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub posterior_variance: PosteriorVariance,
    /// Intercepts further than this multiple of the BS bounding-box diagonal
    /// are ignored; `inf` keeps every intercept.
    #[serde(default = "default_max_range_factor")]
    pub max_range_factor: f64,
    /// Fused pairs below this probability are never selected.
    #[serde(default)]
    pub probability_floor: f64,
    /// Beam pairs used per link for data.
    #[serde(default = "default_one")]
    pub streams: usize,
    /// Deployments with a BS closer than this to the UE are redrawn.
    #[serde(default = "default_min_distance")]
    pub min_distance: f64,
    /// Worker threads; absent uses every core. Never changes the results.
    #[serde(default)]
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        toml::from_str("").expect("all keys have defaults")
    }
}

impl ExperimentConfig {
    /// Reads TOML, or JSON when the file ends in `.json`.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg = if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Self::from_json(&text)?
        } else {
            Self::from_toml(&text)?
        };
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| RapidError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| RapidError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn terminals(&self) -> Terminals {
        Terminals {
            num_bs: self.num_bs,
            n_ue: self.n_ue,
            r_ue: self.r_ue,
            n_bs: self.n_bs,
            r_bs: self.r_bs,
        }
    }

    pub fn recovery(&self) -> RecoveryConfig {
        RecoveryConfig {
            solver: self.solver,
            sparsity_k: self.sparsity_k,
            gamma: self.gamma,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(RapidError::Config(msg));
        self.terminals().validate()?;
        self.recovery().validate()?;
        if self.num_bs == 0 {
            return bad("num_bs must be at least 1".into());
        }
        if self.t_e == 0 {
            return bad("t_e must be positive".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if !(self.grid_half_width > 0.0 && self.grid_half_width.is_finite()) {
            return bad(format!(
                "grid_half_width must be > 0, got {}",
                self.grid_half_width
            ));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be > 0, got {}", self.beta));
        }
        if !(self.n0 > 0.0 && self.n0.is_finite()) {
            return bad(format!("n0 must be > 0, got {}", self.n0));
        }
        if self.p_dbm.is_empty() || self.p_dbm.iter().any(|p| !p.is_finite()) {
            return bad("p_dbm must be a non-empty list of finite values".into());
        }
        if self.schemes.is_empty() {
            return bad("schemes must not be empty".into());
        }
        if self.num_bs < 2 && self.schemes.iter().any(|s| s.cooperative()) {
            return bad("cooperative schemes need num_bs >= 2".into());
        }
        if self.share_n_d == Some(0) {
            return bad("share_n_d must be at least 1".into());
        }
        if self.r_th.iter().any(|r| !(*r >= 0.0)) {
            return bad("r_th values must be >= 0".into());
        }
        if self.expected_paths == 0 {
            return bad("expected_paths must be at least 1".into());
        }
        if !(self.nlos_power >= 0.0 && self.nlos_power.is_finite()) {
            return bad(format!("nlos_power must be >= 0, got {}", self.nlos_power));
        }
        if !(0.0..=1.0).contains(&self.probability_floor) {
            return bad(format!(
                "probability_floor must lie in [0, 1], got {}",
                self.probability_floor
            ));
        }
        if self.streams == 0 || self.streams > self.n_ue.min(self.n_bs) {
            return bad(format!(
                "streams must lie in 1..={}",
                self.n_ue.min(self.n_bs)
            ));
        }
        if !(self.min_distance >= 0.0) || self.min_distance >= self.grid_half_width {
            return bad("min_distance must lie in [0, grid_half_width)".into());
        }
        if !(self.max_range_factor > 0.0) {
            return bad(format!(
                "max_range_factor must be > 0, got {}",
                self.max_range_factor
            ));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }
}

impl ExperimentConfig {
    /// Posterior variance for a measurement gain `A_g`.
    pub fn posterior_variance_for(&self, gain: f64) -> f64 {
        match self.posterior_variance {
            PosteriorVariance::Referred => self.n0 / (gain * gain),
            PosteriorVariance::N0 => self.n0,
        }
    }
}

/// Linear transmit power for a dBm value, with 0 dBm mapped to 1.
pub fn dbm_to_linear(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

/// Path SNR `r^-beta / N0` in dB.
pub fn link_snr_db(r: f64, beta: f64, n0: f64) -> f64 {
    10.0 * (r.powf(-beta) / n0).log10()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.num_bs, 3);
        assert_eq!(cfg.schemes.len(), 4);
    }

    #[test]
    fn toml_and_json_agree() {
        let t = ExperimentConfig::from_toml(
            "trials = 7\np_dbm = [5.0]\nschemes = [\"RDB\", \"RDB+RAPID\"]\nsolver = \"omp\"\n",
        )
        .unwrap();
        let j = ExperimentConfig::from_json(
            r#"{"trials": 7, "p_dbm": [5.0], "schemes": ["RDB", "RDB+RAPID"], "solver": "orthogonal-matching-pursuit"}"#,
        )
        .unwrap();
        assert_eq!(t, j);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("r_bs = 64").is_err());
        assert!(ExperimentConfig::from_toml("trials = 0").is_err());
        assert!(ExperimentConfig::from_toml("n0 = -1.0").is_err());
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("num_bs = 1").is_err());
        assert!(ExperimentConfig::from_toml("num_bs = 1\nschemes = [\"ES\"]").is_ok());
        assert!(ExperimentConfig::from_toml("share_n_d = 0").is_err());
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("XYZ".parse::<Scheme>().is_err());
    }

    #[test]
    fn power_conversion() {
        assert_eq!(dbm_to_linear(0.0), 1.0);
        assert!((dbm_to_linear(10.0) - 10.0).abs() < 1e-12);
    }
}
