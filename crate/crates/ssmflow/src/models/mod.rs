//! State space model definitions: the three concrete models, their
//! densities and simulators, and the dataset container.

mod dataset_io;
mod dynamics;
pub mod grad;
mod simulate;

pub use dynamics::{
    drift_diffusion, normal_logpdf, observation_logpdf, prior_logpdf, transition_logpdf,
};
pub use simulate::{simulate, strided_indices};

use crate::error::{Error, Result};

/// Which state space model a specification describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Ar1,
    LotkaVolterra,
    FitzHughNagumo,
}

impl ModelKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "ar1" => Ok(ModelKind::Ar1),
            "lotka_volterra" => Ok(ModelKind::LotkaVolterra),
            "fitzhugh_nagumo" => Ok(ModelKind::FitzHughNagumo),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Ar1 => "ar1",
            ModelKind::LotkaVolterra => "lotka_volterra",
            ModelKind::FitzHughNagumo => "fitzhugh_nagumo",
        }
    }

    /// State dimension d.
    pub fn state_dim(&self) -> usize {
        match self {
            ModelKind::Ar1 => 1,
            ModelKind::LotkaVolterra | ModelKind::FitzHughNagumo => 2,
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            ModelKind::Ar1 | ModelKind::LotkaVolterra => 3,
            ModelKind::FitzHughNagumo => 5,
        }
    }

    /// Per-component transform tags: which parameters live on the log scale.
    pub fn transforms(&self) -> Vec<Transform> {
        match self {
            ModelKind::Ar1 => vec![Transform::Identity, Transform::Identity, Transform::Log],
            ModelKind::LotkaVolterra => vec![Transform::Log; 3],
            ModelKind::FitzHughNagumo => vec![
                Transform::Log,
                Transform::Identity,
                Transform::Identity,
                Transform::Log,
                Transform::Log,
            ],
        }
    }

    /// Default deterministic initial state.
    pub fn default_x0(&self) -> Vec<f64> {
        match self {
            ModelKind::Ar1 => vec![10.0],
            ModelKind::LotkaVolterra => vec![100.0, 100.0],
            ModelKind::FitzHughNagumo => vec![2.0, 3.0],
        }
    }

    /// Components of the state that are observed.
    pub fn default_observed_components(&self) -> Vec<usize> {
        match self {
            ModelKind::Ar1 => vec![0],
            ModelKind::LotkaVolterra => vec![0, 1],
            ModelKind::FitzHughNagumo => vec![0],
        }
    }

    /// Default per-component observation variance.
    pub fn default_observation_variance(&self) -> Vec<f64> {
        match self {
            ModelKind::Ar1 => vec![1.0],
            ModelKind::LotkaVolterra => vec![1.0, 1.0],
            ModelKind::FitzHughNagumo => vec![0.01],
        }
    }
}

/// Per-component parameter transform between unconstrained and natural space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    Log,
}

impl Transform {
    pub fn to_natural(&self, unconstrained: f64) -> f64 {
        match self {
            Transform::Identity => unconstrained,
            Transform::Log => unconstrained.exp(),
        }
    }

    pub fn to_unconstrained(&self, natural: f64) -> f64 {
        match self {
            Transform::Identity => natural,
            Transform::Log => natural.ln(),
        }
    }
}

/// Independent normal prior on one unconstrained component.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorComponent {
    pub mean: f64,
    pub sd: f64,
}

impl Default for PriorComponent {
    fn default() -> Self {
        PriorComponent { mean: 0.0, sd: 10.0 }
    }
}

/// Model parameters in unconstrained space, with transform tags and priors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub unconstrained: Vec<f64>,
    pub transforms: Vec<Transform>,
    pub prior: Vec<PriorComponent>,
}

impl ParameterVector {
    pub fn from_unconstrained(unconstrained: Vec<f64>, transforms: Vec<Transform>) -> Self {
        let prior = vec![PriorComponent::default(); unconstrained.len()];
        debug_assert_eq!(unconstrained.len(), transforms.len());
        ParameterVector {
            unconstrained,
            transforms,
            prior,
        }
    }

    /// Build from natural-space values; log-tagged components must be
    /// strictly positive.
    pub fn from_natural(natural: &[f64], transforms: Vec<Transform>) -> Result<Self> {
        if natural.len() != transforms.len() {
            return Err(Error::Shape(format!(
                "{} parameters vs {} transforms",
                natural.len(),
                transforms.len()
            )));
        }
        let mut unconstrained = Vec::with_capacity(natural.len());
        for (k, (&v, t)) in natural.iter().zip(&transforms).enumerate() {
            if matches!(t, Transform::Log) && v <= 0.0 {
                return Err(Error::InvalidState(format!(
                    "parameter {} is log-transformed but has non-positive value {v}",
                    k + 1
                )));
            }
            unconstrained.push(t.to_unconstrained(v));
        }
        Ok(ParameterVector::from_unconstrained(
            unconstrained,
            transforms,
        ))
    }

    pub fn len(&self) -> usize {
        self.unconstrained.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unconstrained.is_empty()
    }

    pub fn natural(&self) -> Vec<f64> {
        self.unconstrained
            .iter()
            .zip(&self.transforms)
            .map(|(&u, t)| t.to_natural(u))
            .collect()
    }
}

/// Static description of one state space model instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SSMSpec {
    pub kind: ModelKind,
    /// Chain length T; states are x_1..x_T plus the deterministic x_0.
    pub t_len: usize,
    /// Euler time step for the SDE models; unused by AR(1).
    pub dt: f64,
    /// Per observed component.
    pub observation_variance: Vec<f64>,
    pub observed_components: Vec<usize>,
    /// Override of the model's default initial state.
    pub x0_override: Option<Vec<f64>>,
}

impl SSMSpec {
    pub fn new(kind: ModelKind, t_len: usize, dt: f64) -> Self {
        SSMSpec {
            kind,
            t_len,
            dt,
            observation_variance: kind.default_observation_variance(),
            observed_components: kind.default_observed_components(),
            x0_override: None,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.kind.state_dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.observed_components.len()
    }

    /// The deterministic initial state x_0(θ).
    pub fn x0(&self, _theta_natural: &[f64]) -> Vec<f64> {
        self.x0_override
            .clone()
            .unwrap_or_else(|| self.kind.default_x0())
    }

    pub fn validate(&self) -> Result<()> {
        if self.observation_variance.len() != self.observed_components.len() {
            return Err(Error::Config(format!(
                "{} observation variances for {} observed components",
                self.observation_variance.len(),
                self.observed_components.len()
            )));
        }
        if self.observation_variance.iter().any(|&v| v <= 0.0) {
            return Err(Error::Config("observation variance must be > 0".into()));
        }
        if self
            .observed_components
            .iter()
            .any(|&c| c >= self.state_dim())
        {
            return Err(Error::Config("observed component out of range".into()));
        }
        if let Some(x0) = &self.x0_override {
            if x0.len() != self.state_dim() {
                return Err(Error::Config("x0 override has wrong dimension".into()));
            }
        }
        Ok(())
    }
}

/// A latent path x_0..x_T, flat row-major (T+1, d).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub d: usize,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn new(d: usize, states: Vec<f64>) -> Result<Self> {
        if states.len() % d != 0 {
            return Err(Error::Shape(format!(
                "trajectory of {} values is not a multiple of d={d}",
                states.len()
            )));
        }
        Ok(Trajectory { d, states })
    }

    /// Number of stored states (T+1).
    pub fn len(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.d..(i + 1) * self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.states
    }
}

/// Ground truth attached to a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub theta_natural: Vec<f64>,
    pub trajectory: Option<Trajectory>,
    /// Simulation restarts forced by positivity violations.
    pub retries: u32,
}

/// Observations at a sorted index set, plus the model specification.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub spec: SSMSpec,
    obs_indices: Vec<usize>,
    /// Flat (n_obs, obs_dim) values, aligned with `obs_indices`.
    obs_values: Vec<f64>,
    pub provenance: Option<Provenance>,
}

impl Dataset {
    pub fn new(
        spec: SSMSpec,
        obs_indices: Vec<usize>,
        obs_values: Vec<f64>,
        provenance: Option<Provenance>,
    ) -> Result<Self> {
        let k = spec.obs_dim();
        if obs_values.len() != obs_indices.len() * k {
            return Err(Error::Shape(format!(
                "{} observation values for {} indices of dim {k}",
                obs_values.len(),
                obs_indices.len()
            )));
        }
        if !obs_indices.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(
                "observation indices must be strictly increasing".into(),
            ));
        }
        if let Some(&last) = obs_indices.last() {
            if last > spec.t_len {
                return Err(Error::Config(format!(
                    "observation index {last} beyond T={}",
                    spec.t_len
                )));
            }
        }
        Ok(Dataset {
            spec,
            obs_indices,
            obs_values,
            provenance,
        })
    }

    pub fn n_obs(&self) -> usize {
        self.obs_indices.len()
    }

    pub fn obs_indices(&self) -> &[usize] {
        &self.obs_indices
    }

    /// Observation vector at index `i`, if observed.
    pub fn obs_at(&self, i: usize) -> Option<&[f64]> {
        let k = self.spec.obs_dim();
        self.obs_indices
            .binary_search(&i)
            .ok()
            .map(|pos| &self.obs_values[pos * k..(pos + 1) * k])
    }

    /// First observation at an index >= `i` (for integer `i` of any sign).
    pub fn next_obs_at_or_after(&self, i: i64) -> Option<(usize, &[f64])> {
        let k = self.spec.obs_dim();
        let pos = if i <= 0 {
            0
        } else {
            self.obs_indices.partition_point(|&idx| (idx as i64) < i)
        };
        self.obs_indices.get(pos).map(|&idx| {
            let v = &self.obs_values[pos * k..(pos + 1) * k];
            (idx, v)
        })
    }

    /// Whether every index 0..=T is observed.
    pub fn fully_observed(&self) -> bool {
        self.obs_indices.len() == self.spec.t_len + 1
    }

    pub fn obs_row(&self, pos: usize) -> &[f64] {
        let k = self.spec.obs_dim();
        &self.obs_values[pos * k..(pos + 1) * k]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_round_trip() {
        let t = ModelKind::Ar1.transforms();
        let p = ParameterVector::from_natural(&[5.0, 0.5, 3.0], t).unwrap();
        let nat = p.natural();
        assert!((nat[0] - 5.0).abs() < 1e-12);
        assert!((nat[2] - 3.0).abs() < 1e-12);
        assert!((p.unconstrained[2] - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn log_components_must_be_positive() {
        let t = ModelKind::LotkaVolterra.transforms();
        assert!(ParameterVector::from_natural(&[0.5, -0.1, 0.3], t).is_err());
    }

    #[test]
    fn dataset_lookup() {
        let spec = SSMSpec::new(ModelKind::Ar1, 10, 1.0);
        let ds = Dataset::new(spec, vec![0, 3, 7], vec![1.0, 2.0, 3.0], None).unwrap();
        assert_eq!(ds.obs_at(3), Some(&[2.0][..]));
        assert_eq!(ds.obs_at(4), None);
        assert_eq!(ds.next_obs_at_or_after(4).unwrap().0, 7);
        assert_eq!(ds.next_obs_at_or_after(-5).unwrap().0, 0);
        assert!(ds.next_obs_at_or_after(8).is_none());
        assert!(!ds.fully_observed());
    }

    #[test]
    fn dataset_rejects_unsorted_indices() {
        let spec = SSMSpec::new(ModelKind::Ar1, 10, 1.0);
        assert!(Dataset::new(spec, vec![3, 1], vec![0.0, 0.0], None).is_err());
    }
}
