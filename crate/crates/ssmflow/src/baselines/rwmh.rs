//! Random-walk Metropolis-Hastings over the unconstrained parameters.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Target acceptance rate for the burn-in adaptation.
const TARGET_ACCEPT: f64 = 0.25;

/// Retained posterior draws plus tuning diagnostics.
#[derive(Debug, Clone)]
pub struct MCMCChain {
    /// Retained samples in unconstrained space, flat (n, dim).
    pub samples: Vec<f64>,
    pub dim: usize,
    pub acceptance_rate: f64,
    /// Proposal scales after burn-in adaptation.
    pub proposal_scales: Vec<f64>,
    pub seed: u64,
    pub iters: u64,
    pub burn_in: u64,
    pub thin: u64,
}

impl MCMCChain {
    pub fn n_samples(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }
}

/// Settings for [`rwmh_chain`].
#[derive(Debug, Clone)]
pub struct RwmhSettings {
    pub iters: u64,
    /// Burn-in fraction during which the proposal scale adapts.
    pub burn_in_frac: f64,
    /// Number of retained (thinned) samples.
    pub retain: usize,
    pub initial_scale: f64,
    pub seed: u64,
}

impl Default for RwmhSettings {
    fn default() -> Self {
        RwmhSettings {
            iters: 50_000,
            burn_in_frac: 0.1,
            retain: 1_000,
            initial_scale: 0.1,
            seed: 0,
        }
    }
}

/// The Metropolis accept test for a symmetric proposal.
#[inline]
pub fn mh_accept(log_target_diff: f64, uniform: f64) -> bool {
    log_target_diff >= 0.0 || uniform < log_target_diff.exp()
}

/// Gaussian random-walk Metropolis-Hastings.
///
/// Proposal scales adapt toward a 25% acceptance rate during burn-in
/// (Robbins-Monro on the log scale) and are frozen afterwards. Draws after
/// burn-in are thinned to `retain` samples.
pub fn rwmh_chain(
    log_target: &dyn Fn(&[f64]) -> f64,
    init: &[f64],
    settings: &RwmhSettings,
) -> Result<MCMCChain> {
    let dim = init.len();
    if dim == 0 || settings.iters == 0 || settings.retain == 0 {
        return Err(Error::Config("empty chain request".into()));
    }
    let mut current = init.to_vec();
    let mut current_lp = log_target(&current);
    if !current_lp.is_finite() {
        return Err(Error::Config(format!(
            "log target is not finite at the initial point ({current_lp})"
        )));
    }
    let burn_in = ((settings.iters as f64) * settings.burn_in_frac) as u64;
    let kept_iters = settings.iters - burn_in;
    let thin = (kept_iters / settings.retain as u64).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut log_scale = settings.initial_scale.ln();
    let mut scales = vec![settings.initial_scale; dim];
    let mut proposal = vec![0.0; dim];
    let mut accepted = 0u64;
    let mut accepted_since_tune = 0u64;
    let mut rejected_streak = 0u64;
    let mut samples = Vec::with_capacity(settings.retain * dim);

    for iter in 0..settings.iters {
        let scale = log_scale.exp();
        for (p, c) in proposal.iter_mut().zip(&current) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *p = c + scale * z;
        }
        let lp = log_target(&proposal);
        let accept = lp.is_finite() && mh_accept(lp - current_lp, rng.gen::<f64>());
        if accept {
            current.copy_from_slice(&proposal);
            current_lp = lp;
            accepted += 1;
            accepted_since_tune += 1;
            rejected_streak = 0;
        } else {
            rejected_streak += 1;
            if rejected_streak >= 10_000 {
                return Err(Error::Numeric(format!(
                    "no acceptance over 10000 proposals (iteration {iter}, scale {scale:.3e})"
                )));
            }
        }
        if iter < burn_in {
            // Robbins-Monro step toward the target acceptance rate, one
            // batch of 50 proposals at a time.
            if (iter + 1) % 50 == 0 {
                let rate = accepted_since_tune as f64 / 50.0;
                let step = 1.0 / ((iter / 50 + 1) as f64).powf(0.6);
                log_scale += step * (rate - TARGET_ACCEPT);
                accepted_since_tune = 0;
            }
            if iter + 1 == burn_in {
                scales.iter_mut().for_each(|s| *s = log_scale.exp());
            }
        } else if (iter - burn_in) % thin == 0 && samples.len() < settings.retain * dim {
            samples.extend_from_slice(&current);
        }
    }
    Ok(MCMCChain {
        samples,
        dim,
        acceptance_rate: accepted as f64 / settings.iters as f64,
        proposal_scales: scales,
        seed: settings.seed,
        iters: settings.iters,
        burn_in,
        thin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_normal_target(x: &[f64]) -> f64 {
        -0.5 * x.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn recovers_standard_normal_moments() {
        let settings = RwmhSettings {
            iters: 100_000,
            burn_in_frac: 0.1,
            retain: 9_000,
            initial_scale: 1.0,
            seed: 3,
        };
        let chain = rwmh_chain(&standard_normal_target, &[0.0, 0.0, 0.0], &settings).unwrap();
        assert!(chain.acceptance_rate > 0.05 && chain.acceptance_rate < 0.95);
        for k in 0..3 {
            let vals: Vec<f64> = (0..chain.n_samples()).map(|i| chain.sample(i)[k]).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 0.05, "dim {k} mean {mean}");
            assert!((var - 1.0).abs() < 0.1, "dim {k} var {var}");
        }
    }

    #[test]
    fn vanishing_proposal_scale_accepts_everything_and_barely_moves() {
        let settings = RwmhSettings {
            iters: 4_000,
            burn_in_frac: 0.0, // no adaptation; scale stays tiny
            retain: 3_000,
            initial_scale: 1e-9,
            seed: 5,
        };
        let chain = rwmh_chain(&standard_normal_target, &[0.4], &settings).unwrap();
        assert!(chain.acceptance_rate > 0.999);
        // Lag-1 autocorrelation of the traced coordinate is near 1.
        let vals: Vec<f64> = (0..chain.n_samples()).map(|i| chain.sample(i)[0]).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        let mut acf = 0.0;
        for w in vals.windows(2) {
            acf += (w[0] - mean) * (w[1] - mean);
        }
        acf /= (vals.len() - 1) as f64 * var.max(1e-30);
        assert!(acf > 0.99, "autocorrelation {acf}");
    }

    #[test]
    fn accept_rule_satisfies_detailed_balance_on_two_point_target() {
        // Two states with unnormalised probabilities (p0, p1) and a
        // symmetric flip proposal. Detailed balance demands
        // p0 · P(0→1) = p1 · P(1→0); empirical transition frequencies from
        // the accept rule must match the theoretical probabilities.
        let (p0, p1) = (0.7, 0.3);
        let lp = [p0_ln(p0), p0_ln(p1)];
        fn p0_ln(p: f64) -> f64 {
            p.ln()
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let steps = 200_000;
        let mut state = 0usize;
        let mut transitions = [[0u64; 2]; 2];
        for _ in 0..steps {
            let proposal = 1 - state;
            let next = if mh_accept(lp[proposal] - lp[state], rng.gen::<f64>()) {
                proposal
            } else {
                state
            };
            transitions[state][next] += 1;
            state = next;
        }
        let visits0 = (transitions[0][0] + transitions[0][1]) as f64;
        let visits1 = (transitions[1][0] + transitions[1][1]) as f64;
        let emp01 = transitions[0][1] as f64 / visits0;
        let emp10 = transitions[1][0] as f64 / visits1;
        let theory01 = (p1 / p0).min(1.0);
        let theory10 = (p0 / p1).min(1.0);
        let se01 = (theory01 * (1.0 - theory01) / visits0).sqrt();
        let se10: f64 = (theory10 * (1.0 - theory10) / visits1).sqrt();
        assert!((emp01 - theory01).abs() < 3.0 * se01, "{emp01} vs {theory01}");
        assert!((emp10 - theory10).abs() < 3.0 * se10.max(1e-9), "{emp10} vs {theory10}");
        // Detailed balance on the empirical flow.
        let flow01 = p0 * emp01;
        let flow10 = p1 * emp10;
        assert!((flow01 - flow10).abs() / flow01 < 0.05);
    }

    #[test]
    fn chain_is_stationary_when_started_from_a_target_draw() {
        // Starting at a draw from the target, summary statistics stay at
        // their stationary values over a further 10^4 steps.
        let settings = RwmhSettings {
            iters: 10_000,
            burn_in_frac: 0.0,
            retain: 5_000,
            initial_scale: 0.8,
            seed: 13,
        };
        let chain = rwmh_chain(&standard_normal_target, &[0.31], &settings).unwrap();
        let vals: Vec<f64> = (0..chain.n_samples()).map(|i| chain.sample(i)[0]).collect();
        let half = vals.len() / 2;
        let mean_a = vals[..half].iter().sum::<f64>() / half as f64;
        let mean_b = vals[half..].iter().sum::<f64>() / (vals.len() - half) as f64;
        // Monte Carlo error with heavy autocorrelation; a loose bound still
        // detects drift.
        assert!((mean_a - mean_b).abs() < 0.25, "{mean_a} vs {mean_b}");
    }

    #[test]
    fn rejects_non_finite_initial_point() {
        let target = |x: &[f64]| if x[0] > 0.0 { 0.0 } else { f64::NEG_INFINITY };
        let settings = RwmhSettings::default();
        assert!(rwmh_chain(&target, &[-1.0], &settings).is_err());
    }
}
