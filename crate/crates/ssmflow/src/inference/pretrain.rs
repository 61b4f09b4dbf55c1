//! Pre-training objectives.
//!
//! A few hundred cheap SGD iterations move the flows to sensible starting
//! points before ELBO training: pulling θ toward the prior bulk, pulling
//! sampled paths toward the data (or zero), or maximising the path
//! likelihood at a fixed reference parameter to select a posterior mode.

use rayon::prelude::*;

use crate::diffcore::{GradMap, NormMode, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::models::grad::{natural_params, prior_logpdf_var, transition_sum_var};
use crate::models::{Dataset, ParameterVector};
use crate::rngstream::{mix, standard_normal_at, stream};

use super::optimizer::{clip_global_l1, AdaMax};
use super::side_info::DataSide;
use super::{BatchPartition, TrainConfig, VariationalFlows};

/// What the pre-training phase optimises.
#[derive(Debug, Clone, PartialEq)]
pub enum PretrainObjective {
    /// Pull q(θ) toward the prior: minimise E[log q(θ) − log p(θ)].
    ExpectedPrior,
    /// Minimise E‖x − ŷ‖₂ with ŷ the observed data (requires a fully
    /// observed series with every state component observed).
    L2Observed,
    /// Minimise E‖x − ŷ‖₂ with ŷ the linear interpolation of the data.
    L2Interpolated,
    /// Minimise E‖x‖₂.
    L2Norm,
    /// Maximise E[Σ log p(x_i | x_{i−1}, θ*)] at a fixed natural-space θ*.
    PathLikelihood(Vec<f64>),
}

impl PretrainObjective {
    pub fn name(&self) -> &'static str {
        match self {
            PretrainObjective::ExpectedPrior => "expected_prior",
            PretrainObjective::L2Observed => "l2_observed",
            PretrainObjective::L2Interpolated => "l2_interpolated",
            PretrainObjective::L2Norm => "l2_norm",
            PretrainObjective::PathLikelihood(_) => "path_likelihood",
        }
    }
}

/// Per-position target ŷ over 1..=T, or None when the objective needs no
/// target.
fn build_target(objective: &PretrainObjective, dataset: &Dataset) -> Result<Option<Vec<f64>>> {
    let spec = &dataset.spec;
    let d = spec.state_dim();
    let t_len = spec.t_len;
    match objective {
        PretrainObjective::ExpectedPrior | PretrainObjective::PathLikelihood(_) => Ok(None),
        PretrainObjective::L2Norm => Ok(Some(vec![0.0; t_len * d])),
        PretrainObjective::L2Observed => {
            if !dataset.fully_observed() || spec.obs_dim() != d {
                return Err(Error::Config(
                    "l2_observed needs every index observed on every component".into(),
                ));
            }
            let mut target = vec![0.0; t_len * d];
            for i in 1..=t_len {
                let y = dataset.obs_at(i).expect("fully observed");
                for (c, &comp) in spec.observed_components.iter().enumerate() {
                    target[(i - 1) * d + comp] = y[c];
                }
            }
            Ok(Some(target))
        }
        PretrainObjective::L2Interpolated => {
            if spec.obs_dim() != d {
                return Err(Error::Config(
                    "l2_interpolated needs every state component observed".into(),
                ));
            }
            if dataset.n_obs() == 0 {
                return Err(Error::Config("no observations to interpolate".into()));
            }
            let mut target = vec![0.0; t_len * d];
            let idxs = dataset.obs_indices();
            for i in 1..=t_len {
                let pos = idxs.partition_point(|&j| j < i);
                let (lo, hi) = if pos == 0 {
                    (0, 0)
                } else if pos == idxs.len() {
                    (idxs.len() - 1, idxs.len() - 1)
                } else {
                    (pos - 1, pos)
                };
                let (i0, i1) = (idxs[lo], idxs[hi]);
                let w = if i1 == i0 {
                    0.0
                } else {
                    (i - i0) as f64 / (i1 - i0) as f64
                };
                for (c, &comp) in spec.observed_components.iter().enumerate() {
                    let y0 = dataset.obs_row(lo)[c];
                    let y1 = dataset.obs_row(hi)[c];
                    target[(i - 1) * d + comp] = (1.0 - w) * y0 + w * y1;
                }
            }
            Ok(Some(target))
        }
    }
}

/// Loss for one Monte Carlo sample (lower is better).
#[allow(clippy::too_many_arguments)]
fn sample_loss(
    tape: &mut Tape,
    flows: &VariationalFlows,
    dataset: &Dataset,
    side: &DataSide,
    partition: &BatchPartition,
    kappa: usize,
    objective: &PretrainObjective,
    target: Option<&[f64]>,
    sample_seed: u64,
) -> Result<Var> {
    let spec = &dataset.spec;
    let d = spec.state_dim();
    let (u, v) = partition.bounds(kappa);
    match objective {
        PretrainObjective::ExpectedPrior => {
            let p = flows.theta.dim;
            let epsilon: Vec<f64> = (0..p)
                .map(|k| standard_normal_at(sample_seed, stream::THETA_NOISE, k as i64, 0))
                .collect();
            let (theta_unc, logq) = flows.theta.sample_theta(tape, &epsilon)?;
            let transforms = spec.kind.transforms();
            let pv = ParameterVector::from_unconstrained(vec![0.0; p], transforms);
            let logp = prior_logpdf_var(tape, theta_unc, &pv.prior)?;
            tape.sub(logq, logp)
        }
        PretrainObjective::PathLikelihood(theta_star) => {
            let transforms = spec.kind.transforms();
            let star = ParameterVector::from_natural(theta_star, transforms.clone())?;
            let theta_unc = tape.constant(Tensor::vector(star.unconstrained.clone()));
            let nat_vars = natural_params(tape, theta_unc, &transforms)?;
            let window = flows.x.sample_window_vars(
                tape,
                theta_unc,
                side,
                spec.t_len,
                u,
                v,
                mix(&[sample_seed, stream::X_NOISE]),
                NormMode::Train,
            )?;
            let rows = tape.value(window.x).shape()[0];
            let mut trans = if rows >= 2 {
                let prev = tape.slice_rows(window.x, 0, rows - 1)?;
                let cur = tape.slice_rows(window.x, 1, rows)?;
                Some(transition_sum_var(tape, spec, &nat_vars, prev, cur)?)
            } else {
                None
            };
            if u == 1 {
                let x0 = spec.x0(&star.natural());
                let x0_var = tape.constant(Tensor::matrix(1, d, x0)?);
                let x1 = tape.slice_rows(window.x, 0, 1)?;
                let boundary = transition_sum_var(tape, spec, &nat_vars, x0_var, x1)?;
                trans = Some(match trans {
                    Some(t) => tape.add(t, boundary)?,
                    None => boundary,
                });
            }
            let total = tape.mul_const(trans.expect("non-empty batch"), partition.scale(kappa));
            Ok(tape.neg(total))
        }
        _ => {
            // L2 objectives: sample (θ, x_window) and pull the window toward
            // the target slice.
            let p = flows.theta.dim;
            let epsilon: Vec<f64> = (0..p)
                .map(|k| standard_normal_at(sample_seed, stream::THETA_NOISE, k as i64, 0))
                .collect();
            let (theta_unc, _) = flows.theta.sample_theta(tape, &epsilon)?;
            let window = flows.x.sample_window_vars(
                tape,
                theta_unc,
                side,
                spec.t_len,
                u,
                v,
                mix(&[sample_seed, stream::X_NOISE]),
                NormMode::Train,
            )?;
            let target = target.expect("l2 objectives carry a target");
            let len = v - u + 1;
            let slice: Vec<f64> = target[(u - 1) * d..v * d].to_vec();
            let off = u - window.first_index;
            let x = tape.slice_rows(window.x, off, off + len)?;
            let yhat = tape.constant(Tensor::matrix(len, d, slice)?);
            let diff = tape.sub(x, yhat)?;
            let sq = tape.square(diff);
            let ssq = tape.sum(sq);
            Ok(tape.sqrt(ssq))
        }
    }
}

/// Run pre-training; returns the per-iteration objective trace.
pub fn pretrain(
    flows: &VariationalFlows,
    store: &mut ParameterStore,
    dataset: &Dataset,
    objective: &PretrainObjective,
    iters: u64,
    config: &TrainConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    let target = build_target(objective, dataset)?;
    let partition = BatchPartition::new(dataset.spec.t_len, config.batch_len)?;
    let side = DataSide::full(dataset);
    let mut opt = AdaMax::new(store, config.learning_rate, config.beta1, config.beta2);
    let mut trace = Vec::with_capacity(iters as usize);
    let pre_seed = mix(&[config.seed, 0x9e7]);
    for iter in 0..iters {
        let kappa = partition.draw(pre_seed, iter);
        let per_sample: Vec<Result<(GradMap, f64, Vec<(String, crate::diffcore::BatchStats)>)>> =
            (0..config.n_samples)
                .into_par_iter()
                .map(|j| {
                    let sample_seed = mix(&[pre_seed, stream::SAMPLE_SEED, iter, j as u64]);
                    let mut tape = Tape::new(store);
                    let loss = sample_loss(
                        &mut tape,
                        flows,
                        dataset,
                        &side,
                        &partition,
                        kappa,
                        objective,
                        target.as_deref(),
                        sample_seed,
                    )?;
                    let grads = tape.gradient(loss)?;
                    if !grads.all_finite() {
                        return Err(Error::Numeric(format!(
                            "non-finite pre-training gradient at iteration {iter}"
                        )));
                    }
                    Ok((grads, tape.value(loss).item(), Vec::new()))
                })
                .collect();
        let mut total: Option<GradMap> = None;
        let mut loss_sum = 0.0;
        for item in per_sample {
            let (g, l, _) = item?;
            match &mut total {
                Some(t) => t.add(&g),
                None => total = Some(g),
            }
            loss_sum += l;
        }
        let mut grads = total.expect("n >= 1");
        grads.scale(1.0 / config.n_samples as f64);
        clip_global_l1(&mut grads, store, config.clip_threshold)?;
        opt.step(store, &grads);
        trace.push(loss_sum / config.n_samples as f64);
    }
    Ok(trace)
}
