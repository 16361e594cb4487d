//! Run configuration: every tunable of the fitting pipeline, plus the flat
//! `key = value` file format the CLI accepts. Command-line flags override
//! file values; unknown keys are rejected.

use crate::kmeans::CovarianceMode;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Interpretation of the occupation-count term in split/merge ratios:
/// `factorial` reads the count weight as `ln N!`, `gamma` as `ln Gamma(N)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaConvention {
    Factorial,
    Gamma,
}

/// When a split proposal on a component holding labelled instances is
/// vetoed outright.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitVeto {
    /// Any labelled instance in the component blocks the split.
    AnyLabelled,
    /// Splits are blocked only when both proposed halves would contain
    /// labelled instances, i.e. when the split would tear a labelled class
    /// apart. Peeling unlabelled structure off a labelled component stays
    /// allowed.
    ClassBreaking,
}

/// How often the PCA basis used by representation refinement is refit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaRefresh {
    Epoch,
    Batch,
}

/// Complete set of pipeline tunables. Field names map 1:1 to kebab-cased
/// CLI flags and config-file keys (`prior_kappa` <-> `prior-kappa`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    /// Initial component count; `None` applies the labelled-count rule.
    pub k_init: Option<usize>,
    pub epochs: usize,
    /// Epochs with unchanged K before the loop stops early.
    pub patience: usize,
    pub seed: u64,
    pub gamma_convention: GammaConvention,
    pub covariance_mode: CovarianceMode,
    pub split_veto: SplitVeto,
    pub prior_kappa: f64,
    /// Degrees of freedom; `None` uses `d + 2`.
    pub prior_nu: Option<f64>,
    pub prior_psi_scale: f64,
    /// Enables contrastive representation refinement.
    pub replearn: bool,
    pub tau: f64,
    /// Epochs over which the prototype-loss weight ramps from 0 to 1.
    pub warmup_epochs: usize,
    /// View-noise scale, relative to the per-feature standard deviation.
    pub sigma_aug: f64,
    pub lr: f64,
    pub batch_labelled: usize,
    pub batch_unlabelled: usize,
    /// Encoder output width; `None` keeps the input width.
    pub encoder_dim: Option<usize>,
    /// Projection width; `None` uses `min(encoder width, 128)`.
    pub pca_q: Option<usize>,
    pub pca_refresh: PcaRefresh,
    /// Worker threads; `None` defers to the GPC_THREADS environment
    /// variable, then to the machine's core count.
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            k_init: None,
            epochs: 200,
            patience: 15,
            seed: 0,
            gamma_convention: GammaConvention::Factorial,
            covariance_mode: CovarianceMode::Full,
            split_veto: SplitVeto::AnyLabelled,
            prior_kappa: crate::niw::DEFAULT_KAPPA,
            prior_nu: None,
            prior_psi_scale: crate::niw::DEFAULT_PSI_SCALE,
            replearn: true,
            tau: 0.1,
            warmup_epochs: 20,
            sigma_aug: 0.1,
            lr: 0.1,
            batch_labelled: 64,
            batch_unlabelled: 64,
            encoder_dim: None,
            pca_q: None,
            pca_refresh: PcaRefresh::Epoch,
            threads: None,
        }
    }
}

impl RunConfig {
    /// Effective initial component count for a dataset with `k_labelled`
    /// labelled classes.
    pub fn k_init_for(&self, k_labelled: usize) -> usize {
        self.k_init.unwrap_or_else(|| crate::default_k_init(k_labelled))
    }

    /// Loads a config file over the defaults.
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.load_file(path)?;
        Ok(cfg)
    }

    /// Applies every `key = value` line of a flat config file.
    pub fn load_file(&mut self, path: &std::path::Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Sets one field by its kebab-cased key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn bad(key: &str, value: &str, want: &str) -> Error {
            Error::Config(format!("key `{key}`: cannot parse `{value}` as {want}"))
        }
        match key {
            "k-init" => {
                self.k_init = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value, "count or `auto`"))?)
                }
            }
            "epochs" => self.epochs = value.parse().map_err(|_| bad(key, value, "count"))?,
            "patience" => self.patience = value.parse().map_err(|_| bad(key, value, "count"))?,
            "seed" => self.seed = value.parse().map_err(|_| bad(key, value, "u64"))?,
            "gamma-convention" => {
                self.gamma_convention = match value {
                    "factorial" => GammaConvention::Factorial,
                    "gamma" => GammaConvention::Gamma,
                    _ => return Err(bad(key, value, "`factorial` or `gamma`")),
                }
            }
            "covariance-mode" => {
                self.covariance_mode = match value {
                    "full" => CovarianceMode::Full,
                    "diag" => CovarianceMode::Diag,
                    _ => return Err(bad(key, value, "`full` or `diag`")),
                }
            }
            "split-veto" => {
                self.split_veto = match value {
                    "any-labelled" => SplitVeto::AnyLabelled,
                    "class-breaking" => SplitVeto::ClassBreaking,
                    _ => return Err(bad(key, value, "`any-labelled` or `class-breaking`")),
                }
            }
            "prior-kappa" => self.prior_kappa = value.parse().map_err(|_| bad(key, value, "f64"))?,
            "prior-nu" => {
                self.prior_nu = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value, "f64 or `auto`"))?)
                }
            }
            "prior-psi-scale" => {
                self.prior_psi_scale = value.parse().map_err(|_| bad(key, value, "f64"))?
            }
            "replearn" => {
                self.replearn = match value {
                    "true" | "on" => true,
                    "false" | "off" => false,
                    _ => return Err(bad(key, value, "bool")),
                }
            }
            "tau" => self.tau = value.parse().map_err(|_| bad(key, value, "f64"))?,
            "warmup-epochs" => {
                self.warmup_epochs = value.parse().map_err(|_| bad(key, value, "count"))?
            }
            "sigma-aug" => self.sigma_aug = value.parse().map_err(|_| bad(key, value, "f64"))?,
            "lr" => self.lr = value.parse().map_err(|_| bad(key, value, "f64"))?,
            "batch-labelled" => {
                self.batch_labelled = value.parse().map_err(|_| bad(key, value, "count"))?
            }
            "batch-unlabelled" => {
                self.batch_unlabelled = value.parse().map_err(|_| bad(key, value, "count"))?
            }
            "encoder-dim" => {
                self.encoder_dim = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value, "count or `auto`"))?)
                }
            }
            "pca-q" => {
                self.pca_q = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value, "count or `auto`"))?)
                }
            }
            "pca-refresh" => {
                self.pca_refresh = match value {
                    "epoch" => PcaRefresh::Epoch,
                    "batch" => PcaRefresh::Batch,
                    _ => return Err(bad(key, value, "`epoch` or `batch`")),
                }
            }
            "threads" => {
                self.threads = if value == "auto" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad(key, value, "count or `auto`"))?)
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Validates cross-field consistency.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.prior_kappa > 0.0) {
            return Err(Error::Config("prior-kappa must be positive".into()));
        }
        if !(self.prior_psi_scale > 0.0) {
            return Err(Error::Config("prior-psi-scale must be positive".into()));
        }
        if !(self.sigma_aug >= 0.0) {
            return Err(Error::Config("sigma-aug must be nonnegative".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be positive".into()));
        }
        if self.replearn && self.batch_labelled + self.batch_unlabelled == 0 {
            return Err(Error::Config("batch sizes cannot both be zero".into()));
        }
        if let Some(k) = self.k_init {
            if k == 0 {
                return Err(Error::Config("k-init must be at least 1".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        RunConfig::default().validate().unwrap();
    }

    #[test]
    fn file_roundtrip_and_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nk-init = 12\ntau = 0.25\ngamma-convention = gamma\nreplearn = off\n",
        )
        .unwrap();
        let mut cfg = RunConfig::from_file(&path).unwrap();
        assert_eq!(cfg.k_init, Some(12));
        assert_eq!(cfg.tau, 0.25);
        assert_eq!(cfg.gamma_convention, GammaConvention::Gamma);
        assert!(!cfg.replearn);
        // A later flag-style set wins over the file value.
        cfg.set("tau", "0.5").unwrap();
        assert_eq!(cfg.tau, 0.5);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let mut cfg = RunConfig::default();
        let err = cfg.set("no-such-key", "1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_value_is_rejected() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("epochs", "many").is_err());
        assert!(cfg.set("split-veto", "sometimes").is_err());
    }

    #[test]
    fn k_init_rule_applies_when_auto() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.k_init_for(100), 150);
        assert_eq!(cfg.k_init_for(5), 8);
        let mut fixed = cfg;
        fixed.k_init = Some(30);
        assert_eq!(fixed.k_init_for(5), 30);
    }
}
