//! The mini-batch ELBO estimator.
//!
//! One draw of the estimator picks a batch κ (weighted by batch length),
//! samples (θ, x_window) from the flows by reparameterisation, and evaluates
//!
//! r_κ = log p(θ) − log q(θ) + log p(y₀|x₀,θ)
//!       + (T/|B_κ|) Σ_{i∈B_κ} [ log p(x_i|x_{i−1},θ) + log p(y_i|x_i,θ) − λ_i ]
//!
//! with observation terms dropped at unobserved indices. Averaged over n
//! reparameterised samples this gives an unbiased ELBO gradient estimate.

use rayon::prelude::*;

use crate::diffcore::{BatchStats, GradMap, NormMode, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::flows::FlowSample;
use crate::models::grad::{
    natural_params, observation_sum_var, prior_logpdf_var, transition_sum_var,
};
use crate::models::{
    observation_logpdf, prior_logpdf, transition_logpdf, Dataset, ParameterVector,
};
use crate::rngstream::{mix, standard_normal_at, stream};

use super::side_info::DataSide;
use super::{BatchPartition, TrainConfig, VariationalFlows};

/// Plain-value evaluation of r_κ for a fixed (θ, x) draw.
pub fn estimate_r_kappa(
    theta: &ParameterVector,
    logq_theta: f64,
    x_window: &FlowSample,
    dataset: &Dataset,
    kappa: usize,
    partition: &BatchPartition,
) -> Result<f64> {
    let (u, v) = partition.bounds(kappa);
    let expected_first = if u == 1 { 1 } else { u - 1 };
    if x_window.first_index > expected_first || x_window.last_index() < v {
        return Err(Error::Shape(format!(
            "window covers {}..{} but batch {kappa} needs {expected_first}..{v}",
            x_window.first_index,
            x_window.last_index()
        )));
    }
    let lambda_last = x_window.lambda_first + x_window.lambdas.len() - 1;
    if x_window.lambda_first > u || lambda_last < v {
        return Err(Error::Shape(format!(
            "lambda values cover {}..{lambda_last} but batch {kappa} needs {u}..{v}",
            x_window.lambda_first
        )));
    }
    let spec = &dataset.spec;
    let nat = theta.natural();
    let x0 = spec.x0(&nat);

    let mut r = prior_logpdf(theta) - logq_theta;
    if let Some(y0) = dataset.obs_at(0) {
        r += observation_logpdf(y0, &x0, spec);
    }
    let mut batch_sum = 0.0;
    for i in u..=v {
        let x_i = x_window.state(i);
        let trans = if i == 1 {
            transition_logpdf(x_i, &x0, theta, spec)
        } else {
            transition_logpdf(x_i, x_window.state(i - 1), theta, spec)
        }
        .map_err(|e| Error::InvalidState(format!("transition at index {i}: {e}")))?;
        batch_sum += trans;
        if let Some(y) = dataset.obs_at(i) {
            batch_sum += observation_logpdf(y, x_i, spec);
        }
        batch_sum -= x_window.lambda_at(i);
    }
    Ok(r + partition.scale(kappa) * batch_sum)
}

/// One reparameterised draw of r_κ on the tape.
pub struct SampleObjective {
    pub r: Var,
    pub r_value: f64,
    pub theta_natural: Vec<f64>,
    pub batch_stats: Vec<(String, BatchStats)>,
}

/// Build the full r_κ computation for one Monte Carlo sample: θ from the
/// masked flow, the x window from the local flow, and the model terms.
#[allow(clippy::too_many_arguments)]
pub fn build_r_kappa_vars(
    tape: &mut Tape,
    flows: &VariationalFlows,
    dataset: &Dataset,
    side: &DataSide,
    partition: &BatchPartition,
    kappa: usize,
    sample_seed: u64,
    mode: NormMode,
) -> Result<SampleObjective> {
    let spec = &dataset.spec;
    let (u, v) = partition.bounds(kappa);
    let p = flows.theta.dim;
    let epsilon: Vec<f64> = (0..p)
        .map(|k| standard_normal_at(sample_seed, stream::THETA_NOISE, k as i64, 0))
        .collect();
    let (theta_unc, logq_theta) = flows.theta.sample_theta(tape, &epsilon)?;

    let transforms = spec.kind.transforms();
    let nat_vars = natural_params(tape, theta_unc, &transforms)?;
    let theta_nat: Vec<f64> = nat_vars.iter().map(|&nv| tape.value(nv).item()).collect();

    let window = flows.x.sample_window_vars(
        tape,
        theta_unc,
        side,
        spec.t_len,
        u,
        v,
        mix(&[sample_seed, stream::X_NOISE]),
        mode,
    )?;

    let prior = {
        let pv = ParameterVector::from_unconstrained(vec![0.0; p], transforms.clone());
        prior_logpdf_var(tape, theta_unc, &pv.prior)?
    };

    // Transitions: consecutive pairs inside the window, plus the boundary
    // step from the deterministic x₀ when the window starts at 1.
    let x0 = spec.x0(&theta_nat);
    let rows = tape.value(window.x).shape()[0];
    let mut trans = if rows >= 2 {
        let prev = tape.slice_rows(window.x, 0, rows - 1)?;
        let cur = tape.slice_rows(window.x, 1, rows)?;
        Some(transition_sum_var(tape, spec, &nat_vars, prev, cur)?)
    } else {
        None
    };
    if u == 1 {
        let x0_var = tape.constant(Tensor::matrix(1, spec.state_dim(), x0.clone())?);
        let x1 = tape.slice_rows(window.x, 0, 1)?;
        let boundary = transition_sum_var(tape, spec, &nat_vars, x0_var, x1)?;
        trans = Some(match trans {
            Some(t) => tape.add(t, boundary)?,
            None => boundary,
        });
    }
    let trans = trans.expect("at least one transition per batch");

    let obs = observation_sum_var(tape, dataset, window.x, window.first_index, u, v)?;
    let lambda_sum = tape.sum(window.lambda);

    let inner = {
        let a = tape.add(trans, obs)?;
        tape.sub(a, lambda_sum)?
    };
    let scaled = tape.mul_const(inner, partition.scale(kappa));

    let mut r = tape.sub(prior, logq_theta)?;
    r = tape.add(r, scaled)?;
    if let Some(y0) = dataset.obs_at(0) {
        r = tape.add_const(r, observation_logpdf(y0, &x0, spec));
    }
    let r_value = tape.value(r).item();
    Ok(SampleObjective {
        r,
        r_value,
        theta_natural: theta_nat,
        batch_stats: window.batch_stats,
    })
}

pub(crate) struct ElboStep {
    pub grads: GradMap,
    pub elbo: f64,
    pub kappa: usize,
    pub batch_stats: Vec<(String, BatchStats)>,
}

/// Average the gradient of r_κ over n independent reparameterised samples.
/// Samples are evaluated in parallel and reduced in fixed order, so the
/// result does not depend on thread scheduling.
pub(crate) fn elbo_step(
    flows: &VariationalFlows,
    store: &ParameterStore,
    dataset: &Dataset,
    config: &TrainConfig,
    partition: &BatchPartition,
    iter: u64,
) -> Result<ElboStep> {
    let kappa = partition.draw(config.seed, iter);
    let side = DataSide::new(dataset, partition.t_total());
    let per_sample: Vec<Result<(GradMap, f64, Vec<(String, BatchStats)>)>> = (0..config
        .n_samples)
        .into_par_iter()
        .map(|j| {
            let sample_seed = mix(&[config.seed, stream::SAMPLE_SEED, iter, j as u64]);
            let mut tape = Tape::new(store);
            let obj = build_r_kappa_vars(
                &mut tape,
                flows,
                dataset,
                &side,
                partition,
                kappa,
                sample_seed,
                NormMode::Train,
            )?;
            let grads = tape.gradient(obj.r)?;
            if !obj.r_value.is_finite() || !grads.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at iteration {iter}, batch {kappa}, seed {sample_seed}"
                )));
            }
            Ok((grads, obj.r_value, obj.batch_stats))
        })
        .collect();

    let mut total: Option<GradMap> = None;
    let mut elbo = 0.0;
    let mut stats = Vec::new();
    for item in per_sample {
        let (g, r, s) = item?;
        match &mut total {
            Some(t) => t.add(&g),
            None => total = Some(g),
        }
        elbo += r;
        stats.extend(s);
    }
    let mut grads = total.expect("n >= 1");
    grads.scale(1.0 / config.n_samples as f64);
    elbo /= config.n_samples as f64;
    Ok(ElboStep {
        grads,
        elbo,
        kappa,
        batch_stats: stats,
    })
}

/// Unbiased ELBO gradient estimate at the current parameters: draws a batch
/// and n flow samples, and averages the per-sample gradients of r_κ.
/// Returns the ascent-direction gradient map and the ELBO estimate.
pub fn elbo_gradient_estimate(
    flows: &VariationalFlows,
    store: &ParameterStore,
    dataset: &Dataset,
    config: &TrainConfig,
    iter: u64,
) -> Result<(GradMap, f64)> {
    config.validate()?;
    let exposed = match &config.curriculum {
        Some(c) => c.exposed(iter, dataset.spec.t_len),
        None => dataset.spec.t_len,
    };
    let partition = BatchPartition::new(exposed, config.batch_len.min(exposed))?;
    let step = elbo_step(flows, store, dataset, config, &partition, iter)?;
    Ok((step.grads, step.elbo))
}
