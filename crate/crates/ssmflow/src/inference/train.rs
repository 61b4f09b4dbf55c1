//! The mini-batch training loop.
//!
//! Each iteration draws a batch κ weighted by batch length, estimates the
//! ELBO gradient from n reparameterised flow samples over the corresponding
//! window, clips it by global L1 norm, and applies an AdaMax update to all
//! flow weights. With a curriculum, batches are drawn from the currently
//! exposed prefix and the T/|B_κ| weighting uses the exposed length.

use std::time::Instant;

use crate::diffcore::ParameterStore;
use crate::error::{Error, Result};
use crate::models::Dataset;

use super::objective::elbo_step;
use super::optimizer::{clip_global_l1, AdaMax};
use super::{BatchPartition, TrainConfig, VariationalFlows};

/// One row of the training log.
#[derive(Debug, Clone, Copy)]
pub struct IterationRecord {
    pub iter: u64,
    pub kappa: usize,
    pub elbo: f64,
    /// Global L1 norm of the gradient estimate before clipping.
    pub grad_l1: f64,
    pub wall_secs: f64,
}

/// Callback events emitted by the training loop.
pub enum TrainEvent<'a> {
    Iteration(&'a IterationRecord),
    Checkpoint(u64, &'a ParameterStore),
}

const MAX_CONSECUTIVE_FAILURES: u32 = 50;

/// Run the training loop, mutating the store in place. The sink receives
/// one `Iteration` event per iteration and a `Checkpoint` event every
/// `checkpoint_interval` iterations.
pub fn train(
    flows: &VariationalFlows,
    store: &mut ParameterStore,
    dataset: &Dataset,
    config: &TrainConfig,
    sink: &mut dyn FnMut(TrainEvent) -> Result<()>,
) -> Result<Vec<IterationRecord>> {
    config.validate()?;
    let t_len = dataset.spec.t_len;
    let mut opt = AdaMax::new(store, config.learning_rate, config.beta1, config.beta2);
    let mut records = Vec::with_capacity(config.max_iters as usize);
    let mut partition: Option<BatchPartition> = None;
    let mut consecutive_failures = 0u32;

    for iter in 0..config.max_iters {
        let started = Instant::now();
        let exposed = match &config.curriculum {
            Some(c) => c.exposed(iter, t_len),
            None => t_len,
        };
        if partition.map(|p| p.t_total()) != Some(exposed) {
            partition = Some(BatchPartition::new(exposed, config.batch_len.min(exposed))?);
        }
        let part = partition.as_ref().expect("set above");

        match elbo_step(flows, store, dataset, config, part, iter) {
            Ok(step) => {
                consecutive_failures = 0;
                let mut grads = step.grads;
                // Ascent on the ELBO: descend on its negation.
                grads.scale(-1.0);
                let grad_l1 = clip_global_l1(&mut grads, store, config.clip_threshold)?;
                opt.step(store, &grads);
                for (prefix, stats) in &step.batch_stats {
                    store.ema_update_stat(&format!("{prefix}/running_mean"), &stats.mean)?;
                    store.ema_update_stat(&format!("{prefix}/running_var"), &stats.var)?;
                }
                let record = IterationRecord {
                    iter,
                    kappa: step.kappa,
                    elbo: step.elbo,
                    grad_l1,
                    wall_secs: started.elapsed().as_secs_f64(),
                };
                sink(TrainEvent::Iteration(&record))?;
                records.push(record);
            }
            Err(Error::Numeric(msg)) => {
                consecutive_failures += 1;
                if consecutive_failures >= MAX_CONSECUTIVE_FAILURES {
                    return Err(Error::Numeric(format!(
                        "ELBO estimate non-finite for {MAX_CONSECUTIVE_FAILURES} consecutive \
                         iterations (last at iteration {iter}: {msg})"
                    )));
                }
            }
            Err(e) => return Err(e),
        }

        if config.checkpoint_interval > 0 && (iter + 1) % config.checkpoint_interval == 0 {
            sink(TrainEvent::Checkpoint(iter + 1, store))?;
        }
    }
    Ok(records)
}

/// Running mean of the ELBO trace over a window, for reporting.
pub fn smoothed_elbo(records: &[IterationRecord], window: usize) -> Vec<f64> {
    if records.is_empty() || window == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(records.len());
    let mut sum = 0.0;
    for (i, r) in records.iter().enumerate() {
        sum += r.elbo;
        if i >= window {
            sum -= records[i - window].elbo;
        }
        out.push(sum / (i.min(window - 1) + 1) as f64);
    }
    out
}
