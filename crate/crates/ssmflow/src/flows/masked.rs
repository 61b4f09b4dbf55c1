//! Masked inverse autoregressive flow for the parameter vector θ.
//!
//! Affine layers alternate with fixed random permutations. Each affine
//! layer's shift and scale come from a masked feed-forward network whose
//! connectivity enforces the autoregressive property: position i's shift
//! and scale depend only on inputs at positions before i.

use crate::diffcore::{Activation, ParameterStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rngstream::{mix, stream, uniform_at, uniform_index_at};

use super::noise::log_phi;
use super::SIGMA_FLOOR;

/// Raw pre-activation that makes `softplus(raw) + SIGMA_FLOOR == 1`.
pub(crate) fn identity_sigma_bias() -> f64 {
    ((1.0 - SIGMA_FLOOR) as f64).exp_m1().ln()
}

/// Masked flow specification: architecture, masks and permutations.
#[derive(Debug, Clone)]
pub struct MaskedIaf {
    pub dim: usize,
    pub n_affine: usize,
    pub hidden: usize,
    /// Fixed random permutation applied between consecutive affine layers.
    permutations: Vec<Vec<usize>>,
    mask_in: Tensor,
    mask_hidden: Tensor,
    mask_out: Tensor,
    prefix: String,
}

impl MaskedIaf {
    /// Standard architecture: `n_affine` affine layers, each a three-layer
    /// masked network with `hidden` units, alternating with random
    /// permutations derived from `seed`.
    pub fn new(prefix: &str, dim: usize, n_affine: usize, hidden: usize, seed: u64) -> Self {
        let permutations = (0..n_affine.saturating_sub(1))
            .map(|g| random_permutation(dim, mix(&[seed, 0x70, g as u64])))
            .collect();
        let (mask_in, mask_hidden, mask_out) = build_masks(dim, hidden);
        MaskedIaf {
            dim,
            n_affine,
            hidden,
            permutations,
            mask_in,
            mask_hidden,
            mask_out,
            prefix: prefix.to_string(),
        }
    }

    /// Replace the inter-layer permutations (identity permutations give a
    /// plain stack of affine layers).
    pub fn with_permutations(mut self, perms: Vec<Vec<usize>>) -> Result<Self> {
        if perms.len() + 1 != self.n_affine || perms.iter().any(|p| p.len() != self.dim) {
            return Err(Error::Config("bad permutation set for masked flow".into()));
        }
        self.permutations = perms;
        Ok(self)
    }

    fn name(&self, layer: usize, part: &str) -> String {
        format!("{}/affine{layer}/{part}", self.prefix)
    }

    /// Register learnable weights. Hidden layers draw uniform weights with
    /// scale 1/sqrt(fan_in); the output layer starts at the identity map
    /// (zero weights, shift 0, scale 1).
    pub fn init(&self, store: &mut ParameterStore, seed: u64) -> Result<()> {
        for l in 0..self.n_affine {
            let draws = |tag: u64, fan_in: usize, n: usize| -> Vec<f64> {
                let scale = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|e| {
                        (2.0 * uniform_at(mix(&[seed, l as u64, tag]), stream::THETA_NOISE, e as i64, 0x3)
                            - 1.0)
                            * scale
                    })
                    .collect()
            };
            store.insert_learnable(
                &self.name(l, "w1"),
                Tensor::matrix(self.dim, self.hidden, draws(1, self.dim, self.dim * self.hidden))?,
            )?;
            store.insert_learnable(
                &self.name(l, "b1"),
                Tensor::vector(vec![0.0; self.hidden]),
            )?;
            store.insert_learnable(
                &self.name(l, "w2"),
                Tensor::matrix(
                    self.hidden,
                    self.hidden,
                    draws(2, self.hidden, self.hidden * self.hidden),
                )?,
            )?;
            store.insert_learnable(
                &self.name(l, "b2"),
                Tensor::vector(vec![0.0; self.hidden]),
            )?;
            store.insert_learnable(
                &self.name(l, "w3"),
                Tensor::matrix(self.hidden, 2 * self.dim, vec![0.0; self.hidden * 2 * self.dim])?,
            )?;
            let mut b3 = vec![0.0; 2 * self.dim];
            for s in b3.iter_mut().skip(self.dim) {
                *s = identity_sigma_bias();
            }
            store.insert_learnable(&self.name(l, "b3"), Tensor::vector(b3))?;
        }
        Ok(())
    }

    /// Transform base noise ε into θ (unconstrained space), returning the
    /// sample and its log density under the flow.
    ///
    /// Reparameterisable: the output is a deterministic function of ε and
    /// the weights, so gradients flow to the weights.
    pub fn sample_theta(&self, tape: &mut Tape, epsilon: &[f64]) -> Result<(Var, Var)> {
        if epsilon.len() != self.dim {
            return Err(Error::Shape(format!(
                "epsilon has {} entries, flow dim is {}",
                epsilon.len(),
                self.dim
            )));
        }
        let phi_sum = log_phi(epsilon);
        let mut z = tape.constant(Tensor::vector(epsilon.to_vec()));
        let mut log_sigma_total: Option<Var> = None;
        for l in 0..self.n_affine {
            let (z_new, log_sigma_sum) = self.affine_layer(tape, l, z)?;
            z = z_new;
            log_sigma_total = Some(match log_sigma_total {
                Some(t) => tape.add(t, log_sigma_sum)?,
                None => log_sigma_sum,
            });
            if l + 1 < self.n_affine {
                z = tape.permute(z, &self.permutations[l])?;
            }
        }
        let neg = tape.neg(log_sigma_total.expect("n_affine >= 1"));
        let logq = tape.add_const(neg, phi_sum);
        Ok((z, logq))
    }

    /// One affine layer: z_out = μ + σ ⊙ z_in with (μ, σ) from the masked
    /// network. Returns the output and Σ_i log σ_i.
    fn affine_layer(&self, tape: &mut Tape, l: usize, z_in: Var) -> Result<(Var, Var)> {
        let w1 = tape.param(&self.name(l, "w1"))?;
        let b1 = tape.param(&self.name(l, "b1"))?;
        let w2 = tape.param(&self.name(l, "w2"))?;
        let b2 = tape.param(&self.name(l, "b2"))?;
        let w3 = tape.param(&self.name(l, "w3"))?;
        let b3 = tape.param(&self.name(l, "b3"))?;
        let h1 = tape.masked_dense(z_in, w1, b1, &self.mask_in)?;
        let h1 = tape.activation(h1, Activation::Elu);
        let h2 = tape.masked_dense(h1, w2, b2, &self.mask_hidden)?;
        let h2 = tape.activation(h2, Activation::Elu);
        let out = tape.masked_dense(h2, w3, b3, &self.mask_out)?;
        let mu = tape.slice_rows(out, 0, self.dim)?;
        let raw = tape.slice_rows(out, self.dim, 2 * self.dim)?;
        let sp = tape.activation(raw, Activation::Softplus);
        let sigma = tape.add_const(sp, SIGMA_FLOOR);
        debug_assert!(tape.value(sigma).data().iter().all(|&s| s > 0.0));
        let scaled = tape.mul(sigma, z_in)?;
        let z_out = tape.add(mu, scaled)?;
        let ln_sigma = tape.ln(sigma);
        let s = tape.sum(ln_sigma);
        Ok((z_out, s))
    }

    /// Verify the autoregressive property structurally: the composed mask
    /// product must leave output position i independent of inputs at
    /// positions >= i.
    pub fn validate(&self) -> Result<()> {
        let (p, h) = (self.dim, self.hidden);
        // connectivity = mask_in · mask_hidden · mask_out
        let mut c1 = vec![0.0; p * h];
        for j in 0..p {
            for v in 0..h {
                let mut acc = 0.0;
                for u in 0..h {
                    acc += self.mask_in.data()[j * h + u] * self.mask_hidden.data()[u * h + v];
                }
                c1[j * h + v] = acc;
            }
        }
        for j in 0..p {
            for o in 0..2 * p {
                let mut acc = 0.0;
                for v in 0..h {
                    acc += c1[j * h + v] * self.mask_out.data()[v * 2 * p + o];
                }
                let pos = o % p;
                if acc != 0.0 && j >= pos {
                    return Err(Error::Shape(format!(
                        "mask violates autoregressive structure: input {j} reaches output position {pos}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Degree-based masks for a three-layer masked network.
///
/// Input position k has degree k+1; hidden units cycle degrees 1..p-1; the
/// output for position k (both shift and raw scale) connects only to hidden
/// units of degree < k+1, giving strictly-causal connectivity.
fn build_masks(p: usize, h: usize) -> (Tensor, Tensor, Tensor) {
    let deg_h: Vec<usize> = (0..h)
        .map(|u| if p > 1 { 1 + u % (p - 1) } else { 0 })
        .collect();
    let mut m_in = vec![0.0; p * h];
    for j in 0..p {
        for (u, &dh) in deg_h.iter().enumerate() {
            if dh >= j + 1 {
                m_in[j * h + u] = 1.0;
            }
        }
    }
    let mut m_hidden = vec![0.0; h * h];
    for (u, &du) in deg_h.iter().enumerate() {
        for (v, &dv) in deg_h.iter().enumerate() {
            if dv >= du {
                m_hidden[u * h + v] = 1.0;
            }
        }
    }
    let mut m_out = vec![0.0; h * 2 * p];
    for (u, &dh) in deg_h.iter().enumerate() {
        for o in 0..2 * p {
            let pos = o % p; // outputs are [μ_1..μ_p, s_1..s_p]
            if dh < pos + 1 {
                m_out[u * 2 * p + o] = 1.0;
            }
        }
    }
    (
        Tensor::new_unchecked(vec![p, h], m_in),
        Tensor::new_unchecked(vec![h, h], m_hidden),
        Tensor::new_unchecked(vec![h, 2 * p], m_out),
    )
}

fn random_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = uniform_index_at(seed, stream::THETA_NOISE, i as i64, i + 1);
        perm.swap(i, j);
    }
    perm
}
