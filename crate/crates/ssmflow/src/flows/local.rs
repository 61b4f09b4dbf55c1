//! Local inverse autoregressive flow for the latent path x.
//!
//! Each affine layer computes its shift and scale with a CNN whose first
//! layer is an off-centre convolution of receptive field ℓ, so position i
//! sees only positions i-ℓ..i-1, the untransformed components of position i
//! (multivariate coupling), and encoded side information. Later CNN layers
//! are length-1 convolutions. The finite receptive field means a window
//! x_{u-1:v} can be sampled from base noise over u-1-mℓ..v alone, at cost
//! independent of the sequence length.

use crate::diffcore::{
    Activation, BatchStats, NormMode, ParameterStore, Tape, Tensor, Var,
};
use crate::error::{Error, Result};
use crate::models::ParameterVector;
use crate::rngstream::{mix, stream, uniform_at};

use super::masked::identity_sigma_bias;
use super::noise::{log_phi, BaseNoise};
use super::side::{SideEncoder, SideSource};
use super::SIGMA_FLOOR;

/// Final elementwise bijection applied to the flow output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputBijection {
    None,
    /// Elementwise softplus, restricting the support to positive values.
    Softplus,
}

/// Architecture of the sequence flow.
#[derive(Debug, Clone)]
pub struct LocalIaf {
    /// State dimension.
    pub d: usize,
    /// Number of affine layers.
    pub m: usize,
    /// Receptive field length of the off-centre convolution.
    pub ell: usize,
    /// Coupling split: components 0..split pass through unchanged. Zero for
    /// d = 1 (every component is transformed).
    pub split: usize,
    /// Filters in the intermediate CNN layers.
    pub filters: usize,
    /// Channel normalisation in the intermediate CNN layers.
    pub batch_norm: bool,
    pub output_bijection: OutputBijection,
    pub encoder: SideEncoder,
    prefix: String,
}

/// Tape-level window sample: the transformed values, per-position log
/// density contributions, and any batch statistics produced in train mode.
pub struct FlowWindowVars {
    /// (L, d) values for absolute positions `first_index..=v`.
    pub x: Var,
    /// λ_i for absolute positions `lambda_first..=v`.
    pub lambda: Var,
    pub first_index: usize,
    pub lambda_first: usize,
    pub batch_stats: Vec<(String, BatchStats)>,
}

/// Plain-value window sample.
#[derive(Debug, Clone)]
pub struct FlowSample {
    /// Absolute index of the first row of `values`.
    pub first_index: usize,
    /// (L, d) sampled values.
    pub values: Tensor,
    /// Absolute index of `lambdas[0]`.
    pub lambda_first: usize,
    pub lambdas: Vec<f64>,
    /// Natural-space θ used as side information.
    pub theta_natural: Vec<f64>,
}

impl FlowSample {
    /// State at absolute index `i`.
    pub fn state(&self, i: usize) -> &[f64] {
        let r = i - self.first_index;
        self.values.row(r)
    }

    pub fn lambda_at(&self, i: usize) -> f64 {
        self.lambdas[i - self.lambda_first]
    }

    pub fn last_index(&self) -> usize {
        self.first_index + self.values.shape()[0] - 1
    }

    /// Σ λ_i over the window.
    pub fn lambda_sum(&self) -> f64 {
        self.lambdas.iter().sum()
    }
}

enum NoiseSource<'a> {
    Seeded(BaseNoise),
    /// Explicit (T, d) base values for positions 1..=T.
    Explicit(&'a Tensor, usize),
}

impl NoiseSource<'_> {
    fn fill(&self, i: i64, out: &mut [f64]) {
        match self {
            NoiseSource::Seeded(bn) => bn.vector_at(i, out),
            NoiseSource::Explicit(z, t_len) => {
                if i >= 1 && i <= *t_len as i64 {
                    out.copy_from_slice(z.row((i - 1) as usize));
                } else {
                    out.iter_mut().for_each(|s| *s = 0.0);
                }
            }
        }
    }

    fn window(&self, from: i64, to: i64, d: usize) -> Tensor {
        let rows = (to - from + 1).max(0) as usize;
        let mut data = vec![0.0; rows * d];
        for (r, i) in (from..=to).enumerate() {
            self.fill(i, &mut data[r * d..(r + 1) * d]);
        }
        Tensor::new_unchecked(vec![rows, d], data)
    }
}

impl LocalIaf {
    pub fn new(
        prefix: &str,
        d: usize,
        m: usize,
        ell: usize,
        filters: usize,
        encoder: SideEncoder,
        output_bijection: OutputBijection,
    ) -> Self {
        let split = if d == 1 { 0 } else { d.div_ceil(2) };
        LocalIaf {
            d,
            m,
            ell,
            split,
            filters,
            batch_norm: true,
            output_bijection,
            encoder,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, layer: usize, part: &str) -> String {
        format!("{}/affine{layer}/{part}", self.prefix)
    }

    /// Extra positions required below the window start after `j` affine
    /// layers have been applied.
    pub fn shrink(&self, j: usize) -> usize {
        (self.m - j) * self.ell
    }

    /// Transformed (shifted/scaled) component count per position.
    pub fn n_transformed(&self) -> usize {
        self.d - self.split
    }

    /// Cyclic component permutation applied between affine layers.
    fn component_perm(&self) -> Vec<usize> {
        (0..self.d).map(|k| (k + self.d - 1) % self.d).collect()
    }

    /// Register all learnable weights and normalisation statistics.
    ///
    /// Hidden weights draw from a zero-mean uniform with scale
    /// 1/sqrt(fan_in); the CNN output layer starts at the identity map.
    pub fn init(&self, store: &mut ParameterStore, seed: u64) -> Result<()> {
        self.encoder.init(store, mix(&[seed, 0xe2c]))?;
        let nt = self.n_transformed();
        for j in 0..self.m {
            let draws = |tag: u64, fan_in: usize, n: usize| -> Vec<f64> {
                let scale = 1.0 / (fan_in as f64).sqrt();
                (0..n)
                    .map(|e| {
                        (2.0 * uniform_at(
                            mix(&[seed, j as u64, tag]),
                            stream::X_NOISE,
                            e as i64,
                            0xf,
                        ) - 1.0)
                            * scale
                    })
                    .collect()
            };
            store.insert_learnable(
                &self.name(j, "conv"),
                Tensor::new(
                    vec![self.ell, self.d, self.filters],
                    draws(1, self.ell * self.d, self.ell * self.d * self.filters),
                )?,
            )?;
            if self.split > 0 {
                store.insert_learnable(
                    &self.name(j, "keep_w"),
                    Tensor::matrix(
                        self.split,
                        self.filters,
                        draws(2, self.split, self.split * self.filters),
                    )?,
                )?;
            }
            store.insert_learnable(
                &self.name(j, "side_w"),
                Tensor::matrix(
                    self.encoder.width,
                    self.filters,
                    draws(3, self.encoder.width, self.encoder.width * self.filters),
                )?,
            )?;
            store.insert_learnable(
                &self.name(j, "b1"),
                Tensor::vector(vec![0.0; self.filters]),
            )?;
            store.insert_learnable(
                &self.name(j, "w2"),
                Tensor::matrix(
                    self.filters,
                    self.filters,
                    draws(4, self.filters, self.filters * self.filters),
                )?,
            )?;
            store.insert_learnable(
                &self.name(j, "b2"),
                Tensor::vector(vec![0.0; self.filters]),
            )?;
            store.insert_learnable(
                &self.name(j, "w3"),
                Tensor::matrix(
                    self.filters,
                    self.filters,
                    draws(5, self.filters, self.filters * self.filters),
                )?,
            )?;
            store.insert_learnable(
                &self.name(j, "b3"),
                Tensor::vector(vec![0.0; self.filters]),
            )?;
            for bn in 1..=3 {
                store.insert_learnable(
                    &self.name(j, &format!("bn{bn}/gamma")),
                    Tensor::vector(vec![1.0; self.filters]),
                )?;
                store.insert_learnable(
                    &self.name(j, &format!("bn{bn}/beta")),
                    Tensor::vector(vec![0.0; self.filters]),
                )?;
                store.insert_stat(
                    &self.name(j, &format!("bn{bn}/running_mean")),
                    Tensor::vector(vec![0.0; self.filters]),
                )?;
                store.insert_stat(
                    &self.name(j, &format!("bn{bn}/running_var")),
                    Tensor::vector(vec![1.0; self.filters]),
                )?;
            }
            store.insert_learnable(
                &self.name(j, "out_w"),
                Tensor::matrix(self.filters, 2 * nt, vec![0.0; self.filters * 2 * nt])?,
            )?;
            let mut out_b = vec![0.0; 2 * nt];
            for s in out_b.iter_mut().skip(nt) {
                *s = identity_sigma_bias();
            }
            store.insert_learnable(&self.name(j, "out_b"), Tensor::vector(out_b))?;
        }
        Ok(())
    }

    fn normalize(
        &self,
        tape: &mut Tape,
        j: usize,
        bn: usize,
        input: Var,
        mode: NormMode,
        stats_out: &mut Vec<(String, BatchStats)>,
    ) -> Result<Var> {
        if !self.batch_norm {
            return Ok(input);
        }
        let gamma = tape.param(&self.name(j, &format!("bn{bn}/gamma")))?;
        let beta = tape.param(&self.name(j, &format!("bn{bn}/beta")))?;
        let rm = tape
            .store()
            .value(&self.name(j, &format!("bn{bn}/running_mean")))?
            .clone();
        let rv = tape
            .store()
            .value(&self.name(j, &format!("bn{bn}/running_var")))?
            .clone();
        let (out, stats) = tape.normalize(input, gamma, beta, &rm, &rv, mode)?;
        if let Some(s) = stats {
            stats_out.push((self.name(j, &format!("bn{bn}")), s));
        }
        Ok(out)
    }

    /// One affine layer applied to `z_prev`, producing outputs for rows
    /// `drop..` of the input window. `enc` must be aligned with the output
    /// rows. Returns the transformed window, per-position log σ values
    /// (columns are the transformed components), and any batch statistics.
    fn affine_core(
        &self,
        tape: &mut Tape,
        j: usize,
        z_prev: Var,
        enc: Var,
        drop: usize,
        mode: NormMode,
        stats_out: &mut Vec<(String, BatchStats)>,
    ) -> Result<(Var, Var)> {
        let rows_in = tape.value(z_prev).shape()[0];
        let rows_out = rows_in - drop;
        let nt = self.n_transformed();

        let kernel = tape.param(&self.name(j, "conv"))?;
        let conv = tape.conv1d_offcentre(z_prev, kernel, 0.0)?;
        let conv = tape.slice_rows(conv, drop, rows_in)?;

        let z_here = tape.slice_rows(z_prev, drop, rows_in)?;
        let side_w = tape.param(&self.name(j, "side_w"))?;
        let b1 = tape.param(&self.name(j, "b1"))?;
        let side_in = tape.dense(enc, side_w, Some(b1))?;
        let mut h = tape.add(conv, side_in)?;
        if self.split > 0 {
            let kept = tape.slice_cols(z_here, 0, self.split)?;
            let keep_w = tape.param(&self.name(j, "keep_w"))?;
            let kept_in = tape.dense(kept, keep_w, None)?;
            h = tape.add(h, kept_in)?;
        }
        h = self.normalize(tape, j, 1, h, mode, stats_out)?;
        h = tape.activation(h, Activation::Elu);

        let w2 = tape.param(&self.name(j, "w2"))?;
        let b2 = tape.param(&self.name(j, "b2"))?;
        h = tape.dense(h, w2, Some(b2))?;
        h = self.normalize(tape, j, 2, h, mode, stats_out)?;
        h = tape.activation(h, Activation::Elu);

        let w3 = tape.param(&self.name(j, "w3"))?;
        let b3 = tape.param(&self.name(j, "b3"))?;
        h = tape.dense(h, w3, Some(b3))?;
        h = self.normalize(tape, j, 3, h, mode, stats_out)?;
        h = tape.activation(h, Activation::Elu);

        let out_w = tape.param(&self.name(j, "out_w"))?;
        let out_b = tape.param(&self.name(j, "out_b"))?;
        let out = tape.dense(h, out_w, Some(out_b))?;
        let mu = tape.slice_cols(out, 0, nt)?;
        let raw = tape.slice_cols(out, nt, 2 * nt)?;
        let sp = tape.activation(raw, Activation::Softplus);
        let sigma = tape.add_const(sp, SIGMA_FLOOR);

        let trans = tape.slice_cols(z_here, self.split, self.d)?;
        let scaled = tape.mul(sigma, trans)?;
        let trans_out = tape.add(mu, scaled)?;
        let z_out = if self.split > 0 {
            let kept = tape.slice_cols(z_here, 0, self.split)?;
            tape.concat_cols(kept, trans_out)?
        } else {
            trans_out
        };
        let log_sigma = tape.ln(sigma);
        let _ = rows_out;
        Ok((z_out, log_sigma))
    }

    /// Apply a single affine layer over a full window (no shrinking).
    /// Row r of `z` is treated as sequence position r+1, so the off-centre
    /// convolution zero-pads before the first row.
    pub fn local_affine_layer(
        &self,
        tape: &mut Tape,
        j: usize,
        z: Var,
        enc: Var,
        mode: NormMode,
    ) -> Result<(Var, Var)> {
        let mut stats = Vec::new();
        self.affine_core(tape, j, z, enc, 0, mode, &mut stats)
    }

    fn window_core(
        &self,
        tape: &mut Tape,
        theta_unc: Var,
        side: &dyn SideSource,
        t_len: usize,
        u: usize,
        v: usize,
        noise: &NoiseSource,
        mode: NormMode,
    ) -> Result<FlowWindowVars> {
        if u < 1 || u > v || v > t_len {
            return Err(Error::Config(format!(
                "window {u}..{v} outside 1..{t_len}"
            )));
        }
        let a = if u == 1 { 1 } else { u - 1 };
        let b = v as i64;
        let lambda_first = u;
        let lam_len = v - u + 1;

        let lo0 = a as i64 - self.shrink(0) as i64;
        let z0 = noise.window(lo0, b, self.d);

        // φ(z_i) for the λ range, from the base noise.
        let mut phi = Vec::with_capacity(lam_len);
        for i in u..=v {
            let r = (i as i64 - lo0) as usize;
            phi.push(log_phi(z0.row(r)));
        }

        // Side encodings over the widest range any affine layer extracts.
        let lo_enc = a as i64 - self.shrink(1.min(self.m)) as i64;
        let enc = self
            .encoder
            .encode(tape, side, theta_unc, lo_enc, b)?;

        let mut stats_out = Vec::new();
        let mut z = tape.constant(z0);
        let mut cur_lo = lo0;
        let mut lambda_acc: Option<Var> = None;
        for j in 1..=self.m {
            let out_lo = a as i64 - self.shrink(j) as i64;
            let rows_out = (b - out_lo + 1) as usize;
            let enc_off = (out_lo - lo_enc) as usize;
            let enc_slice = tape.slice_rows(enc, enc_off, enc_off + rows_out)?;
            let (mut z_new, log_sigma) =
                self.affine_core(tape, j - 1, z, enc_slice, self.ell, mode, &mut stats_out)?;
            // Positions outside 1..=T stay zero vectors at every stage.
            if out_lo < 1 {
                let zero_rows = (1 - out_lo) as usize;
                let mut mask = vec![1.0; rows_out * self.d];
                mask[..zero_rows * self.d].iter_mut().for_each(|m| *m = 0.0);
                let mask = tape.constant(Tensor::new_unchecked(vec![rows_out, self.d], mask));
                z_new = tape.mul(z_new, mask)?;
            }
            let lam_off = (lambda_first as i64 - out_lo) as usize;
            let ls_slice = tape.slice_rows(log_sigma, lam_off, lam_off + lam_len)?;
            let contrib = tape.row_sums(ls_slice)?;
            lambda_acc = Some(match lambda_acc {
                Some(acc) => tape.add(acc, contrib)?,
                None => contrib,
            });
            if j < self.m && self.d > 1 {
                z_new = tape.permute_cols(z_new, &self.component_perm())?;
            }
            z = z_new;
            cur_lo = out_lo;
        }
        debug_assert_eq!(cur_lo, a as i64);

        let phi_var = tape.constant(Tensor::vector(phi));
        let sum_ls = lambda_acc.expect("m >= 1");
        let mut lambda = tape.sub(phi_var, sum_ls)?;

        let x = match self.output_bijection {
            OutputBijection::None => z,
            OutputBijection::Softplus => {
                let (x, correction) = softplus_bijection(tape, z)?;
                let lam_off = lambda_first - a;
                let corr = tape.slice_rows(correction, lam_off, lam_off + lam_len)?;
                lambda = tape.add(lambda, corr)?;
                x
            }
        };
        Ok(FlowWindowVars {
            x,
            lambda,
            first_index: a,
            lambda_first,
            batch_stats: stats_out,
        })
    }

    /// Sample the window x_{u-1:v} (x_{1:v} when u = 1) with λ_{u:v}, on the
    /// tape. Base noise is addressed by `(noise_seed, position, component)`,
    /// so any window of the same seed agrees bit-exactly with the full
    /// sequence.
    pub fn sample_window_vars(
        &self,
        tape: &mut Tape,
        theta_unc: Var,
        side: &dyn SideSource,
        t_len: usize,
        u: usize,
        v: usize,
        noise_seed: u64,
        mode: NormMode,
    ) -> Result<FlowWindowVars> {
        let noise = NoiseSource::Seeded(BaseNoise::new(noise_seed, self.d, t_len));
        self.window_core(tape, theta_unc, side, t_len, u, v, &noise, mode)
    }

    /// Sample the full sequence x_{1:T} with λ_{1:T}, on the tape.
    pub fn sample_full_vars(
        &self,
        tape: &mut Tape,
        theta_unc: Var,
        side: &dyn SideSource,
        t_len: usize,
        noise_seed: u64,
        mode: NormMode,
    ) -> Result<FlowWindowVars> {
        self.sample_window_vars(tape, theta_unc, side, t_len, 1, t_len, noise_seed, mode)
    }

    /// Deterministic transform of explicit base noise (T, d) into the full
    /// sequence; used to verify densities by numerical change of variables.
    pub fn transform_full_vars(
        &self,
        tape: &mut Tape,
        theta_unc: Var,
        side: &dyn SideSource,
        z_full: &Tensor,
        mode: NormMode,
    ) -> Result<FlowWindowVars> {
        let t_len = z_full.shape()[0];
        let noise = NoiseSource::Explicit(z_full, t_len);
        self.window_core(tape, theta_unc, side, t_len, 1, t_len, &noise, mode)
    }

    /// Plain-value window sample for a fixed parameter vector.
    pub fn sample_window(
        &self,
        store: &ParameterStore,
        theta: &ParameterVector,
        side: &dyn SideSource,
        t_len: usize,
        u: usize,
        v: usize,
        noise_seed: u64,
        mode: NormMode,
    ) -> Result<FlowSample> {
        let mut tape = Tape::new(store);
        let th = tape.constant(Tensor::vector(theta.unconstrained.clone()));
        let w = self.sample_window_vars(&mut tape, th, side, t_len, u, v, noise_seed, mode)?;
        Ok(FlowSample {
            first_index: w.first_index,
            values: tape.value(w.x).clone(),
            lambda_first: w.lambda_first,
            lambdas: tape.value(w.lambda).data().to_vec(),
            theta_natural: theta.natural(),
        })
    }

    /// Plain-value full-sequence sample.
    pub fn sample_full(
        &self,
        store: &ParameterStore,
        theta: &ParameterVector,
        side: &dyn SideSource,
        t_len: usize,
        noise_seed: u64,
        mode: NormMode,
    ) -> Result<FlowSample> {
        self.sample_window(store, theta, side, t_len, 1, t_len, noise_seed, mode)
    }
}

/// Elementwise softplus output bijection.
///
/// Returns the positive values and the per-position log-density correction
/// to add to λ: −Σ_k log γ(x̃_ik) with γ the logistic function.
pub fn softplus_bijection(tape: &mut Tape, x_tilde: Var) -> Result<(Var, Var)> {
    if tape.value(x_tilde).shape().len() != 2 {
        return Err(Error::Shape("softplus_bijection needs (L, d) input".into()));
    }
    let x = tape.activation(x_tilde, Activation::Softplus);
    let gamma = tape.activation(x_tilde, Activation::Logistic);
    let lg = tape.ln(gamma);
    let sums = tape.row_sums(lg)?;
    let correction = tape.neg(sums);
    Ok((x, correction))
}
