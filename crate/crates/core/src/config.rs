//! Experiment configuration: a flat, diff-able key-value document with
//! dotted section names. Omitted keys fall back to the published training
//! recipe; every value is validated on load with the offending key named.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar weights of the composite objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub eta1: f64,
    pub eta2: f64,
    pub eta3: f64,
    pub eta4: f64,
    pub lambda_a: f64,
    pub lambda_b: f64,
    pub lambda_c: f64,
    pub lambda_ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            eta1: 10.0,
            eta2: 10.0,
            eta3: 5.0,
            eta4: 5.0,
            lambda_a: 1.0,
            lambda_b: 1.0,
            lambda_c: 1.0,
            lambda_ce: 0.5,
        }
    }
}

impl LossWeights {
    /// Same weights with the scheduled classifier weight substituted in.
    pub fn with_lambda_ce(mut self, lambda_ce: f64) -> Self {
        self.lambda_ce = lambda_ce;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Translation-network learning rate for epochs 1..=gan_lr_boundary.
    pub gan_lr_phase1: f64,
    /// Translation-network learning rate after the boundary.
    pub gan_lr_phase2: f64,
    pub gan_lr_boundary: usize,
    /// Classifier-loss weight for epochs 1..=lambda_ce_boundary.
    pub lambda_ce_early: f64,
    pub lambda_ce_late: f64,
    pub lambda_ce_boundary: usize,
    /// Discriminators update once per this many generator updates.
    pub disc_update_period: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            gan_lr_phase1: 2e-4,
            gan_lr_phase2: 1e-4,
            gan_lr_boundary: 50,
            lambda_ce_early: 0.5,
            lambda_ce_late: 2.5,
            lambda_ce_boundary: 20,
            disc_update_period: 5,
        }
    }
}

impl ScheduleConfig {
    /// Piecewise-constant learning rate; `epoch` is 1-based.
    pub fn gan_lr(&self, epoch: usize) -> f64 {
        if epoch <= self.gan_lr_boundary {
            self.gan_lr_phase1
        } else {
            self.gan_lr_phase2
        }
    }

    /// Piecewise-constant classifier-loss weight; `epoch` is 1-based.
    pub fn lambda_ce(&self, epoch: usize) -> f64 {
        if epoch <= self.lambda_ce_boundary {
            self.lambda_ce_early
        } else {
            self.lambda_ce_late
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Generators and discriminators. The lr field is the phase-1 value and
    /// is kept in sync with the schedule when loaded from file.
    pub gan: AdamConfig,
    pub classifier: AdamConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            gan: AdamConfig {
                lr: 2e-4,
                beta1: 0.5,
                beta2: 0.999,
            },
            classifier: AdamConfig {
                lr: 5e-4,
                beta1: 0.9,
                beta2: 0.999,
            },
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochConfig {
    pub pretrain: usize,
    pub transductive: usize,
    pub finetune: usize,
}

impl Default for EpochConfig {
    fn default() -> Self {
        EpochConfig {
            pretrain: 40,
            transductive: 100,
            finetune: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub gen_base_width: usize,
    pub gen_res_blocks: usize,
    pub disc_base_width: usize,
    pub classifier_base_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            gen_base_width: 64,
            gen_res_blocks: 6,
            disc_base_width: 64,
            classifier_base_width: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialObjective {
    /// Sigmoid cross-entropy with the non-saturating generator form.
    Logistic,
    /// Least-squares variant.
    LeastSquares,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialConfig {
    pub objective: AdversarialObjective,
    /// Train discriminators against a pool of previously generated images.
    pub history_pool: bool,
    pub pool_size: usize,
}

impl Default for AdversarialConfig {
    fn default() -> Self {
        AdversarialConfig {
            objective: AdversarialObjective::Logistic,
            history_pool: true,
            pool_size: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub data: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            data: PathBuf::from("data"),
            checkpoints: PathBuf::from("checkpoints"),
            reports: PathBuf::from("reports"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub num_classes: usize,
    pub chip_size: usize,
    pub canonical_distance_m: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Worker threads for per-sample parallelism; 0 = serial reference mode.
    pub workers: usize,
    /// Optional global-norm gradient clip; 0 disables.
    pub grad_clip: f64,
    pub weights: LossWeights,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: EpochConfig,
    pub model: ModelConfig,
    pub adversarial: AdversarialConfig,
    pub paths: PathsConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            num_classes: 10,
            chip_size: 68,
            canonical_distance_m: 2000.0,
            seed: 0,
            batch_size: 160,
            workers: 0,
            grad_clip: 0.0,
            weights: LossWeights::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            epochs: EpochConfig::default(),
            model: ModelConfig::default(),
            adversarial: AdversarialConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn invalid(key: &str, reason: impl Into<String>) -> Error {
    Error::InvalidValue {
        key: key.into(),
        reason: reason.into(),
    }
}

fn check_beta(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(invalid(key, format!("beta {v} outside (0, 1)")));
    }
    Ok(())
}

fn check_pos(key: &str, v: f64) -> Result<()> {
    if !(v > 0.0) {
        return Err(invalid(key, format!("{v} must be > 0")));
    }
    Ok(())
}

fn check_nonneg(key: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) {
        return Err(invalid(key, format!("{v} must be >= 0")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(invalid("num_classes", "must be positive"));
        }
        if self.chip_size < 16 || self.chip_size % 4 != 0 {
            return Err(invalid(
                "chip_size",
                "must be >= 16 and divisible by 4 (two stride-2 halvings must invert)",
            ));
        }
        check_pos("canonical_distance_m", self.canonical_distance_m)?;
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be >= 1"));
        }
        check_nonneg("grad_clip", self.grad_clip)?;
        let w = &self.weights;
        for (key, v) in [
            ("weights.eta1", w.eta1),
            ("weights.eta2", w.eta2),
            ("weights.eta3", w.eta3),
            ("weights.eta4", w.eta4),
            ("weights.lambda_a", w.lambda_a),
            ("weights.lambda_b", w.lambda_b),
            ("weights.lambda_c", w.lambda_c),
            ("weights.lambda_ce", w.lambda_ce),
        ] {
            check_nonneg(key, v)?;
        }
        let s = &self.schedule;
        check_pos("schedule.gan_lr_phase1", s.gan_lr_phase1)?;
        check_pos("schedule.gan_lr_phase2", s.gan_lr_phase2)?;
        check_nonneg("schedule.lambda_ce_early", s.lambda_ce_early)?;
        check_nonneg("schedule.lambda_ce_late", s.lambda_ce_late)?;
        if s.disc_update_period == 0 {
            return Err(invalid("schedule.disc_update_period", "must be >= 1"));
        }
        check_pos("optimizer.gan.lr", self.optimizer.gan.lr)?;
        check_beta("optimizer.gan.beta1", self.optimizer.gan.beta1)?;
        check_beta("optimizer.gan.beta2", self.optimizer.gan.beta2)?;
        check_pos("optimizer.classifier.lr", self.optimizer.classifier.lr)?;
        check_beta("optimizer.classifier.beta1", self.optimizer.classifier.beta1)?;
        check_beta("optimizer.classifier.beta2", self.optimizer.classifier.beta2)?;
        let m = &self.model;
        for (key, v) in [
            ("model.gen_base_width", m.gen_base_width),
            ("model.disc_base_width", m.disc_base_width),
            ("model.classifier_base_width", m.classifier_base_width),
        ] {
            if v == 0 {
                return Err(invalid(key, "must be >= 1"));
            }
        }
        if self.adversarial.pool_size == 0 {
            return Err(invalid("adversarial.pool_size", "must be >= 1"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::MalformedConfig {
                path: origin.to_path_buf(),
                reason: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string()).map_err(|e| Error::io(path, e))
    }

    /// Flat dotted-key rendering. Stays valid TOML so `load` round-trips it.
    pub fn to_kv_string(&self) -> String {
        let mut out = String::new();
        let f = |v: f64| format!("{v:?}");
        let q = |p: &Path| toml::Value::String(p.display().to_string()).to_string();
        let _ = write!(
            out,
            "num_classes = {}\nchip_size = {}\ncanonical_distance_m = {}\nseed = {}\n\
             batch_size = {}\nworkers = {}\ngrad_clip = {}\n",
            self.num_classes,
            self.chip_size,
            f(self.canonical_distance_m),
            self.seed,
            self.batch_size,
            self.workers,
            f(self.grad_clip),
        );
        let w = &self.weights;
        let _ = write!(
            out,
            "weights.eta1 = {}\nweights.eta2 = {}\nweights.eta3 = {}\nweights.eta4 = {}\n\
             weights.lambda_a = {}\nweights.lambda_b = {}\nweights.lambda_c = {}\nweights.lambda_ce = {}\n",
            f(w.eta1), f(w.eta2), f(w.eta3), f(w.eta4),
            f(w.lambda_a), f(w.lambda_b), f(w.lambda_c), f(w.lambda_ce),
        );
        let s = &self.schedule;
        let _ = write!(
            out,
            "schedule.gan_lr_phase1 = {}\nschedule.gan_lr_phase2 = {}\nschedule.gan_lr_boundary = {}\n\
             schedule.lambda_ce_early = {}\nschedule.lambda_ce_late = {}\nschedule.lambda_ce_boundary = {}\n\
             schedule.disc_update_period = {}\n",
            f(s.gan_lr_phase1), f(s.gan_lr_phase2), s.gan_lr_boundary,
            f(s.lambda_ce_early), f(s.lambda_ce_late), s.lambda_ce_boundary,
            s.disc_update_period,
        );
        let o = &self.optimizer;
        let _ = write!(
            out,
            "optimizer.gan.lr = {}\noptimizer.gan.beta1 = {}\noptimizer.gan.beta2 = {}\n\
             optimizer.classifier.lr = {}\noptimizer.classifier.beta1 = {}\noptimizer.classifier.beta2 = {}\n",
            f(o.gan.lr), f(o.gan.beta1), f(o.gan.beta2),
            f(o.classifier.lr), f(o.classifier.beta1), f(o.classifier.beta2),
        );
        let e = &self.epochs;
        let _ = write!(
            out,
            "epochs.pretrain = {}\nepochs.transductive = {}\nepochs.finetune = {}\n",
            e.pretrain, e.transductive, e.finetune,
        );
        let m = &self.model;
        let _ = write!(
            out,
            "model.gen_base_width = {}\nmodel.gen_res_blocks = {}\nmodel.disc_base_width = {}\n\
             model.classifier_base_width = {}\n",
            m.gen_base_width, m.gen_res_blocks, m.disc_base_width, m.classifier_base_width,
        );
        let a = &self.adversarial;
        let objective = match a.objective {
            AdversarialObjective::Logistic => "logistic",
            AdversarialObjective::LeastSquares => "least_squares",
        };
        let _ = write!(
            out,
            "adversarial.objective = \"{}\"\nadversarial.history_pool = {}\nadversarial.pool_size = {}\n",
            objective, a.history_pool, a.pool_size,
        );
        let p = &self.paths;
        let _ = write!(
            out,
            "paths.data = {}\npaths.checkpoints = {}\npaths.reports = {}\n",
            q(&p.data),
            q(&p.checkpoints),
            q(&p.reports),
        );
        out
    }
}

/// Load a config file, filling omitted keys with the published defaults.
pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_gives_published_defaults() {
        let cfg = ExperimentConfig::from_toml_str("", Path::new("empty")).unwrap();
        assert_eq!(cfg.weights.eta1, 10.0);
        assert_eq!(cfg.weights.eta2, 10.0);
        assert_eq!(cfg.weights.eta3, 5.0);
        assert_eq!(cfg.weights.eta4, 5.0);
        assert_eq!(cfg.batch_size, 160);
        assert_eq!(cfg.schedule.gan_lr_phase1, 2e-4);
        assert_eq!(cfg.epochs.pretrain, 40);
        assert_eq!(cfg.optimizer.gan.beta1, 0.5);
        assert_eq!(cfg.optimizer.classifier.lr, 5e-4);
    }

    #[test]
    fn explicit_key_overrides_default() {
        let cfg =
            ExperimentConfig::from_toml_str("batch_size = 160", Path::new("t")).unwrap();
        assert_eq!(cfg.batch_size, 160);
        let cfg = ExperimentConfig::from_toml_str("batch_size = 16", Path::new("t")).unwrap();
        assert_eq!(cfg.batch_size, 16);
    }

    #[test]
    fn beta_out_of_range_is_invalid_value() {
        let err = ExperimentConfig::from_toml_str("optimizer.gan.beta1 = 1.5", Path::new("t"))
            .unwrap_err();
        assert_eq!(err.code(), "INVALID_VALUE");
        assert!(err.to_string().contains("optimizer.gan.beta1"));
    }

    #[test]
    fn unknown_key_is_malformed() {
        let err =
            ExperimentConfig::from_toml_str("no_such_key = 1", Path::new("t")).unwrap_err();
        assert_eq!(err.code(), "MALFORMED_CONFIG");
    }

    #[test]
    fn kv_round_trip_is_value_identical() {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = 1234;
        cfg.batch_size = 13;
        cfg.model.gen_base_width = 24;
        cfg.schedule.gan_lr_phase2 = 3.25e-5;
        cfg.adversarial.objective = AdversarialObjective::LeastSquares;
        cfg.paths.data = PathBuf::from("some/dir with space");
        let text = cfg.to_kv_string();
        let back = ExperimentConfig::from_toml_str(&text, Path::new("rt")).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn negative_weight_rejected() {
        let err = ExperimentConfig::from_toml_str("weights.eta1 = -1.0", Path::new("t"))
            .unwrap_err();
        assert_eq!(err.code(), "INVALID_VALUE");
    }
}
