//! Run configuration and its flat key/value text format.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::inference::{Curriculum, FlowArchitecture, PretrainObjective, TrainConfig};
use crate::models::{ModelKind, SSMSpec};

/// Everything needed to run an experiment end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelKind,
    pub t_len: usize,
    pub dt: f64,
    /// Observations at indices 0, stride, 2·stride, ...
    pub obs_stride: usize,
    pub observation_variance: Vec<f64>,
    /// True parameters (natural space) used to simulate synthetic data.
    pub theta_true: Vec<f64>,
    pub x0: Option<Vec<f64>>,

    pub m_affine: usize,
    pub ell: usize,
    pub filters: usize,
    pub side_width: usize,
    pub ell_prime: usize,
    pub theta_layers: usize,
    pub theta_hidden: usize,
    pub softplus_output: bool,
    pub batch_norm: bool,

    pub n_samples: usize,
    pub batch_len: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub clip_threshold: f64,
    pub max_iters: u64,
    pub checkpoint_interval: u64,
    pub pretrain_objective: String,
    pub pretrain_iters: u64,
    pub pretrain_theta_star: Vec<f64>,
    pub curriculum_initial: usize,
    pub curriculum_increment: usize,
    /// 0 disables the curriculum.
    pub curriculum_period: u64,

    pub run_mcmc: bool,
    pub mcmc_iters: u64,
    pub mcmc_retain: usize,
    pub mcmc_initial_scale: f64,

    pub eval_samples: usize,
    pub path_samples: usize,

    pub seed: u64,
    pub threads: usize,
    pub out_dir: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelKind::Ar1,
            t_len: 2_000,
            dt: 1.0,
            obs_stride: 1,
            observation_variance: vec![1.0],
            theta_true: vec![5.0, 0.5, 3.0],
            x0: None,
            m_affine: 3,
            ell: 10,
            filters: 50,
            side_width: 50,
            ell_prime: 10,
            theta_layers: 5,
            theta_hidden: 10,
            softplus_output: false,
            batch_norm: true,
            n_samples: 50,
            batch_len: 50,
            learning_rate: 1e-3,
            beta1: 0.95,
            beta2: 0.999,
            clip_threshold: 100.0,
            max_iters: 10_000,
            checkpoint_interval: 1_000,
            pretrain_objective: "l2_observed".into(),
            pretrain_iters: 500,
            pretrain_theta_star: vec![],
            curriculum_initial: 0,
            curriculum_increment: 0,
            curriculum_period: 0,
            run_mcmc: true,
            mcmc_iters: 50_000,
            mcmc_retain: 1_000,
            mcmc_initial_scale: 0.1,
            eval_samples: 1_000,
            path_samples: 100,
            seed: 1,
            threads: 0,
            out_dir: "out".into(),
        }
    }
}

impl RunConfig {
    /// Reference configurations for the bundled experiments.
    pub fn preset(name: &str) -> Result<RunConfig> {
        let base = RunConfig::default();
        match name {
            "ar1" => Ok(base),
            "lv_a" => Ok(RunConfig {
                model: ModelKind::LotkaVolterra,
                t_len: 500,
                dt: 0.1,
                obs_stride: 10,
                observation_variance: vec![1.0, 1.0],
                theta_true: vec![0.5, 0.0025, 0.3],
                ell: 20,
                softplus_output: true,
                learning_rate: 1e-3,
                max_iters: 30_000,
                pretrain_objective: "l2_interpolated".into(),
                run_mcmc: false,
                ..base
            }),
            "lv_b" => Ok(RunConfig {
                model: ModelKind::LotkaVolterra,
                t_len: 500,
                dt: 0.1,
                obs_stride: 100,
                observation_variance: vec![1.0, 1.0],
                theta_true: vec![0.5, 0.0025, 0.3],
                ell: 20,
                softplus_output: true,
                learning_rate: 5e-4,
                max_iters: 30_000,
                pretrain_objective: "path_likelihood".into(),
                pretrain_theta_star: vec![0.5, 0.0025, 0.3],
                run_mcmc: false,
                ..base
            }),
            "fhn" => Ok(RunConfig {
                model: ModelKind::FitzHughNagumo,
                t_len: 10_000,
                dt: 0.1,
                obs_stride: 1,
                observation_variance: vec![0.01],
                theta_true: vec![2.0, 1.0, 1.5, 0.5, 0.3],
                ell: 20,
                learning_rate: 5e-4,
                max_iters: 4_000,
                pretrain_objective: "l2_norm".into(),
                curriculum_initial: 1_000,
                curriculum_increment: 1_000,
                curriculum_period: 100,
                run_mcmc: false,
                ..base
            }),
            other => Err(Error::Config(format!("unknown preset '{other}'"))),
        }
    }

    pub fn ssm_spec(&self) -> SSMSpec {
        let mut spec = SSMSpec::new(self.model, self.t_len, self.dt);
        spec.observation_variance = self.observation_variance.clone();
        spec.x0_override = self.x0.clone();
        spec
    }

    pub fn flow_architecture(&self) -> FlowArchitecture {
        FlowArchitecture {
            m_affine: self.m_affine,
            ell: self.ell,
            filters: self.filters,
            side_width: self.side_width,
            ell_prime: self.ell_prime,
            theta_layers: self.theta_layers,
            theta_hidden: self.theta_hidden,
            softplus_output: self.softplus_output,
            batch_norm: self.batch_norm,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            n_samples: self.n_samples,
            batch_len: self.batch_len,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            clip_threshold: self.clip_threshold,
            max_iters: self.max_iters,
            curriculum: if self.curriculum_period > 0 {
                Some(Curriculum {
                    initial: self.curriculum_initial,
                    increment: self.curriculum_increment,
                    period: self.curriculum_period,
                })
            } else {
                None
            },
            seed: self.seed,
            checkpoint_interval: self.checkpoint_interval,
        }
    }

    pub fn pretrain_objective(&self) -> Result<Option<PretrainObjective>> {
        match self.pretrain_objective.as_str() {
            "none" => Ok(None),
            "expected_prior" => Ok(Some(PretrainObjective::ExpectedPrior)),
            "l2_observed" => Ok(Some(PretrainObjective::L2Observed)),
            "l2_interpolated" => Ok(Some(PretrainObjective::L2Interpolated)),
            "l2_norm" => Ok(Some(PretrainObjective::L2Norm)),
            "path_likelihood" => {
                if self.pretrain_theta_star.len() != self.model.n_params() {
                    return Err(Error::Config(
                        "path_likelihood pre-training needs pretrain_theta_star with one value \
                         per parameter"
                            .into(),
                    ));
                }
                Ok(Some(PretrainObjective::PathLikelihood(
                    self.pretrain_theta_star.clone(),
                )))
            }
            other => Err(Error::Config(format!(
                "unknown pretrain objective '{other}'"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_len == 0 {
            return Err(Error::Config("t_len must be >= 1".into()));
        }
        if self.obs_stride == 0 {
            return Err(Error::Config("obs_stride must be >= 1".into()));
        }
        if self.theta_true.len() != self.model.n_params() {
            return Err(Error::Config(format!(
                "model '{}' has {} parameters, theta_true has {}",
                self.model.name(),
                self.model.n_params(),
                self.theta_true.len()
            )));
        }
        if self.m_affine == 0 || self.ell == 0 || self.filters == 0 {
            return Err(Error::Config("flow architecture sizes must be >= 1".into()));
        }
        self.ssm_spec().validate()?;
        self.train_config().validate()?;
        self.pretrain_objective()?;
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("model", self.model.name().into());
        kv("t_len", self.t_len.to_string());
        kv("dt", format!("{}", self.dt));
        kv("obs_stride", self.obs_stride.to_string());
        kv("observation_variance", join(&self.observation_variance));
        kv("theta_true", join(&self.theta_true));
        if let Some(x0) = &self.x0 {
            kv("x0", join(x0));
        }
        kv("m_affine", self.m_affine.to_string());
        kv("ell", self.ell.to_string());
        kv("filters", self.filters.to_string());
        kv("side_width", self.side_width.to_string());
        kv("ell_prime", self.ell_prime.to_string());
        kv("theta_layers", self.theta_layers.to_string());
        kv("theta_hidden", self.theta_hidden.to_string());
        kv("softplus_output", self.softplus_output.to_string());
        kv("batch_norm", self.batch_norm.to_string());
        kv("n_samples", self.n_samples.to_string());
        kv("batch_len", self.batch_len.to_string());
        kv("learning_rate", format!("{}", self.learning_rate));
        kv("beta1", format!("{}", self.beta1));
        kv("beta2", format!("{}", self.beta2));
        kv("clip_threshold", format!("{}", self.clip_threshold));
        kv("max_iters", self.max_iters.to_string());
        kv("checkpoint_interval", self.checkpoint_interval.to_string());
        kv("pretrain_objective", self.pretrain_objective.clone());
        kv("pretrain_iters", self.pretrain_iters.to_string());
        if !self.pretrain_theta_star.is_empty() {
            kv("pretrain_theta_star", join(&self.pretrain_theta_star));
        }
        kv("curriculum_initial", self.curriculum_initial.to_string());
        kv("curriculum_increment", self.curriculum_increment.to_string());
        kv("curriculum_period", self.curriculum_period.to_string());
        kv("run_mcmc", self.run_mcmc.to_string());
        kv("mcmc_iters", self.mcmc_iters.to_string());
        kv("mcmc_retain", self.mcmc_retain.to_string());
        kv("mcmc_initial_scale", format!("{}", self.mcmc_initial_scale));
        kv("eval_samples", self.eval_samples.to_string());
        kv("path_samples", self.path_samples.to_string());
        kv("seed", self.seed.to_string());
        kv("threads", self.threads.to_string());
        kv("out_dir", self.out_dir.clone());
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn from_text(text: &str, source: &str) -> Result<RunConfig> {
        let err = |detail: String| Error::Parse {
            file: source.to_string(),
            detail,
        };
        let mut cfg = RunConfig::default();
        let mut x0 = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("line {}: expected 'key = value'", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| err(format!("line {}: bad {what} '{value}'", lineno + 1));
            match key {
                "model" => cfg.model = ModelKind::parse(value)?,
                "t_len" => cfg.t_len = value.parse().map_err(|_| bad("integer"))?,
                "dt" => cfg.dt = value.parse().map_err(|_| bad("float"))?,
                "obs_stride" => cfg.obs_stride = value.parse().map_err(|_| bad("integer"))?,
                "observation_variance" => {
                    cfg.observation_variance = parse_list(value).map_err(|_| bad("float list"))?
                }
                "theta_true" => {
                    cfg.theta_true = parse_list(value).map_err(|_| bad("float list"))?
                }
                "x0" => x0 = Some(parse_list(value).map_err(|_| bad("float list"))?),
                "m_affine" => cfg.m_affine = value.parse().map_err(|_| bad("integer"))?,
                "ell" => cfg.ell = value.parse().map_err(|_| bad("integer"))?,
                "filters" => cfg.filters = value.parse().map_err(|_| bad("integer"))?,
                "side_width" => cfg.side_width = value.parse().map_err(|_| bad("integer"))?,
                "ell_prime" => cfg.ell_prime = value.parse().map_err(|_| bad("integer"))?,
                "theta_layers" => cfg.theta_layers = value.parse().map_err(|_| bad("integer"))?,
                "theta_hidden" => cfg.theta_hidden = value.parse().map_err(|_| bad("integer"))?,
                "softplus_output" => {
                    cfg.softplus_output = value.parse().map_err(|_| bad("bool"))?
                }
                "batch_norm" => cfg.batch_norm = value.parse().map_err(|_| bad("bool"))?,
                "n_samples" => cfg.n_samples = value.parse().map_err(|_| bad("integer"))?,
                "batch_len" => cfg.batch_len = value.parse().map_err(|_| bad("integer"))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad("float"))?,
                "beta1" => cfg.beta1 = value.parse().map_err(|_| bad("float"))?,
                "beta2" => cfg.beta2 = value.parse().map_err(|_| bad("float"))?,
                "clip_threshold" => {
                    cfg.clip_threshold = value.parse().map_err(|_| bad("float"))?
                }
                "max_iters" => cfg.max_iters = value.parse().map_err(|_| bad("integer"))?,
                "checkpoint_interval" => {
                    cfg.checkpoint_interval = value.parse().map_err(|_| bad("integer"))?
                }
                "pretrain_objective" => cfg.pretrain_objective = value.to_string(),
                "pretrain_iters" => {
                    cfg.pretrain_iters = value.parse().map_err(|_| bad("integer"))?
                }
                "pretrain_theta_star" => {
                    cfg.pretrain_theta_star = parse_list(value).map_err(|_| bad("float list"))?
                }
                "curriculum_initial" => {
                    cfg.curriculum_initial = value.parse().map_err(|_| bad("integer"))?
                }
                "curriculum_increment" => {
                    cfg.curriculum_increment = value.parse().map_err(|_| bad("integer"))?
                }
                "curriculum_period" => {
                    cfg.curriculum_period = value.parse().map_err(|_| bad("integer"))?
                }
                "run_mcmc" => cfg.run_mcmc = value.parse().map_err(|_| bad("bool"))?,
                "mcmc_iters" => cfg.mcmc_iters = value.parse().map_err(|_| bad("integer"))?,
                "mcmc_retain" => cfg.mcmc_retain = value.parse().map_err(|_| bad("integer"))?,
                "mcmc_initial_scale" => {
                    cfg.mcmc_initial_scale = value.parse().map_err(|_| bad("float"))?
                }
                "eval_samples" => cfg.eval_samples = value.parse().map_err(|_| bad("integer"))?,
                "path_samples" => cfg.path_samples = value.parse().map_err(|_| bad("integer"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("integer"))?,
                "threads" => cfg.threads = value.parse().map_err(|_| bad("integer"))?,
                "out_dir" => cfg.out_dir = value.to_string(),
                other => {
                    return Err(err(format!("line {}: unknown key '{other}'", lineno + 1)))
                }
            }
        }
        cfg.x0 = x0;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_text(&text, &path.display().to_string())
    }
}

fn join(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, std::num::ParseFloatError> {
    s.split(',').map(|p| p.trim().parse::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in ["ar1", "lv_a", "lv_b", "fhn"] {
            RunConfig::preset(name).unwrap().validate().unwrap();
        }
        assert!(RunConfig::preset("bogus").is_err());
    }

    #[test]
    fn lv_b_preset_matches_protocol() {
        let cfg = RunConfig::preset("lv_b").unwrap();
        assert_eq!(cfg.obs_stride, 100);
        assert!(cfg.softplus_output);
        assert_eq!(cfg.pretrain_objective, "path_likelihood");
        assert_eq!(cfg.pretrain_theta_star, vec![0.5, 0.0025, 0.3]);
        assert_eq!(cfg.pretrain_iters, 500);
        assert_eq!(cfg.learning_rate, 5e-4);
        assert_eq!(cfg.ell, 20);
    }

    #[test]
    fn round_trip_is_lossless() {
        let mut cfg = RunConfig::preset("lv_b").unwrap();
        cfg.learning_rate = 0.000123456789012345;
        cfg.dt = 0.1;
        cfg.x0 = Some(vec![99.5, 101.25]);
        cfg.seed = 987654321;
        let text = cfg.to_text();
        let parsed = RunConfig::from_text(&text, "test").unwrap();
        assert_eq!(parsed, cfg);
        // And float fields round-trip bit-exactly.
        assert_eq!(parsed.learning_rate.to_bits(), cfg.learning_rate.to_bits());
    }

    #[test]
    fn unknown_keys_are_errors() {
        let err = RunConfig::from_text("bogus_key = 3\n", "test");
        assert!(matches!(err, Err(Error::Parse { .. })));
    }

    #[test]
    fn mismatched_theta_true_is_rejected() {
        let mut cfg = RunConfig::preset("ar1").unwrap();
        cfg.theta_true = vec![1.0, 2.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn path_likelihood_requires_theta_star() {
        let mut cfg = RunConfig::preset("lv_b").unwrap();
        cfg.pretrain_theta_star = vec![];
        assert!(cfg.validate().is_err());
    }
}
