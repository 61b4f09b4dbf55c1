//! Variational objective, mini-batch training loop, optimiser and
//! pre-training.

mod objective;
mod optimizer;
mod pretrain;
mod side_info;
mod train;


pub use objective::{build_r_kappa_vars, elbo_gradient_estimate, estimate_r_kappa, SampleObjective};
pub use optimizer::{clip_global_l1, AdaMax};
pub use pretrain::{pretrain, PretrainObjective};
pub use side_info::{build_side_info, side_vector, DataSide, SideInfoVector};
pub use train::{smoothed_elbo, train, IterationRecord, TrainEvent};

use crate::diffcore::ParameterStore;
use crate::error::{Error, Result};
use crate::flows::{LocalIaf, MaskedIaf, OutputBijection, SideEncoder, SideSource};
use crate::models::Dataset;
use crate::rngstream::{mix, stream, uniform_index_at};

/// The joint variational family: a masked flow over θ and a local flow
/// over x, sharing one parameter store.
pub struct VariationalFlows {
    pub theta: MaskedIaf,
    pub x: LocalIaf,
}

/// Architecture hyperparameters of both flows.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowArchitecture {
    /// Affine layers in the sequence flow.
    pub m_affine: usize,
    /// Receptive field of the off-centre convolution.
    pub ell: usize,
    /// Filters in the intermediate CNN layers.
    pub filters: usize,
    /// Width of the side-information encoding.
    pub side_width: usize,
    /// Side-information receptive field.
    pub ell_prime: usize,
    /// Affine layers in the parameter flow.
    pub theta_layers: usize,
    /// Hidden units per masked layer in the parameter flow.
    pub theta_hidden: usize,
    /// Restrict the sequence flow's support to positive values.
    pub softplus_output: bool,
    pub batch_norm: bool,
}

impl Default for FlowArchitecture {
    fn default() -> Self {
        FlowArchitecture {
            m_affine: 3,
            ell: 10,
            filters: 50,
            side_width: 50,
            ell_prime: 10,
            theta_layers: 5,
            theta_hidden: 10,
            softplus_output: false,
            batch_norm: true,
        }
    }
}

impl FlowArchitecture {
    /// Construct both flows for a dataset and register their weights in a
    /// fresh store.
    pub fn build(&self, dataset: &Dataset, seed: u64) -> Result<(VariationalFlows, ParameterStore)> {
        let spec = &dataset.spec;
        let d = spec.state_dim();
        let p = spec.kind.n_params();
        let feature_dim = DataSide::full(dataset).feature_dim();
        let encoder = SideEncoder::new(
            "x_flow/side_enc",
            self.ell_prime,
            feature_dim,
            p,
            self.side_width,
        );
        let mut x = LocalIaf::new(
            "x_flow",
            d,
            self.m_affine,
            self.ell,
            self.filters,
            encoder,
            if self.softplus_output {
                OutputBijection::Softplus
            } else {
                OutputBijection::None
            },
        );
        x.batch_norm = self.batch_norm;
        let theta = MaskedIaf::new(
            "theta_flow",
            p,
            self.theta_layers,
            self.theta_hidden,
            mix(&[seed, 0x7]),
        );
        let mut store = ParameterStore::new();
        theta.init(&mut store, mix(&[seed, 0x8]))?;
        x.init(&mut store, mix(&[seed, 0x9]))?;
        Ok((VariationalFlows { theta, x }, store))
    }
}

/// Data-exposure curriculum: training initially sees a prefix of the
/// series, enlarged on a fixed schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Curriculum {
    pub initial: usize,
    pub increment: usize,
    /// Iterations between increments.
    pub period: u64,
}

impl Curriculum {
    /// Default schedule for very long series: expose 100,000 points at
    /// first and add another 100,000 every 1,000 iterations.
    pub fn long_series_default() -> Self {
        Curriculum {
            initial: 100_000,
            increment: 100_000,
            period: 1_000,
        }
    }

    /// Exposed prefix length at a given iteration.
    pub fn exposed(&self, iter: u64, t_len: usize) -> usize {
        let steps = if self.period == 0 { 0 } else { iter / self.period };
        self.initial
            .saturating_add(self.increment.saturating_mul(steps as usize))
            .min(t_len)
            .max(1)
    }
}

/// Training hyperparameters.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Monte Carlo samples per gradient estimate.
    pub n_samples: usize,
    /// Batch length M.
    pub batch_len: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Global L1 gradient clip.
    pub clip_threshold: f64,
    pub max_iters: u64,
    pub curriculum: Option<Curriculum>,
    pub seed: u64,
    /// Checkpoint every this many iterations (0 disables).
    pub checkpoint_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            n_samples: 50,
            batch_len: 50,
            learning_rate: 1e-3,
            beta1: 0.95,
            beta2: 0.999,
            clip_threshold: 100.0,
            max_iters: 10_000,
            curriculum: None,
            seed: 0,
            checkpoint_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 || self.batch_len == 0 {
            return Err(Error::Config("n and M must be >= 1".into()));
        }
        if self.clip_threshold <= 0.0 {
            return Err(Error::Config("clip threshold must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("beta1 and beta2 must lie in [0, 1)".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Partition of 1..=T into consecutive batches of length M (the last batch
/// possibly shorter), with selection weights |B_κ|/T.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPartition {
    t_total: usize,
    batch_len: usize,
}

impl BatchPartition {
    pub fn new(t_total: usize, batch_len: usize) -> Result<Self> {
        if t_total == 0 || batch_len == 0 {
            return Err(Error::Config("partition needs T >= 1 and M >= 1".into()));
        }
        Ok(BatchPartition { t_total, batch_len })
    }

    pub fn t_total(&self) -> usize {
        self.t_total
    }

    pub fn batch_len(&self) -> usize {
        self.batch_len
    }

    pub fn n_batches(&self) -> usize {
        self.t_total.div_ceil(self.batch_len)
    }

    /// Inclusive endpoints (u, v) of batch κ (0-based κ).
    pub fn bounds(&self, kappa: usize) -> (usize, usize) {
        debug_assert!(kappa < self.n_batches());
        let u = kappa * self.batch_len + 1;
        let v = ((kappa + 1) * self.batch_len).min(self.t_total);
        (u, v)
    }

    pub fn len_of(&self, kappa: usize) -> usize {
        let (u, v) = self.bounds(kappa);
        v - u + 1
    }

    /// Selection probability |B_κ|/T.
    pub fn weight(&self, kappa: usize) -> f64 {
        self.len_of(kappa) as f64 / self.t_total as f64
    }

    /// ELBO scale factor T/|B_κ|.
    pub fn scale(&self, kappa: usize) -> f64 {
        self.t_total as f64 / self.len_of(kappa) as f64
    }

    /// Draw κ with probability |B_κ|/T by drawing a uniform position.
    pub fn draw(&self, seed: u64, iter: u64) -> usize {
        let pos = uniform_index_at(seed, stream::BATCH_DRAW, iter as i64, self.t_total);
        pos / self.batch_len
    }
}
