//! Side-information encoding.
//!
//! The sequence flow conditions on the parameters θ (global) and on local
//! data features around each position. A position's raw side information is
//! the window of feature vectors `s_{i-ℓ'} .. s_{i+ℓ'}` concatenated with θ;
//! a shared feed-forward network encodes it to a fixed-width vector injected
//! into the first CNN layer of every affine layer.

use crate::diffcore::{Activation, ParameterStore, Tape, Tensor, Var};
use crate::error::Result;
use crate::rngstream::{stream, uniform_at};

/// Supplier of per-position raw data features (everything except θ).
///
/// Features must exist for every integer index, including indices outside
/// the observed range.
pub trait SideSource: Sync {
    /// Feature dimension of a single position.
    fn feature_dim(&self) -> usize;

    /// Append the features for position `i` to `out`.
    fn append_features(&self, i: i64, out: &mut Vec<f64>);
}

/// Constant features; used when no data conditioning is wanted.
#[derive(Debug, Clone)]
pub struct ConstSide {
    pub values: Vec<f64>,
}

impl SideSource for ConstSide {
    fn feature_dim(&self) -> usize {
        self.values.len()
    }

    fn append_features(&self, _i: i64, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.values);
    }
}

/// Three-layer feed-forward encoder with ELU activations on the hidden
/// layers.
#[derive(Debug, Clone)]
pub struct SideEncoder {
    pub ell_prime: usize,
    /// Raw input width: (2ℓ'+1) · feature_dim + θ dimension.
    pub raw_dim: usize,
    /// Output (and hidden) width.
    pub width: usize,
    prefix: String,
}

impl SideEncoder {
    pub fn new(prefix: &str, ell_prime: usize, feature_dim: usize, theta_dim: usize, width: usize) -> Self {
        SideEncoder {
            ell_prime,
            raw_dim: (2 * ell_prime + 1) * feature_dim + theta_dim,
            width,
            prefix: prefix.to_string(),
        }
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}/{}", self.prefix, suffix)
    }

    /// Register learnable weights, drawn uniform with scale 1/sqrt(fan_in).
    pub fn init(&self, store: &mut ParameterStore, seed: u64) -> Result<()> {
        let dims = [
            (self.raw_dim, self.width),
            (self.width, self.width),
            (self.width, self.width),
        ];
        for (l, (fan_in, fan_out)) in dims.into_iter().enumerate() {
            let scale = 1.0 / (fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|e| {
                    (2.0 * uniform_at(seed, stream::THETA_NOISE, (l * 1_000_000 + e) as i64, 0xe)
                        - 1.0)
                        * scale
                })
                .collect();
            store.insert_learnable(
                &self.name(&format!("w{l}")),
                Tensor::matrix(fan_in, fan_out, data)?,
            )?;
            store.insert_learnable(
                &self.name(&format!("b{l}")),
                Tensor::vector(vec![0.0; fan_out]),
            )?;
        }
        Ok(())
    }

    /// Encode positions `from..=to`: assembles each position's raw window
    /// (constant data features plus θ), then applies the network. Returns an
    /// (L, width) tensor aligned with the position range.
    pub fn encode(
        &self,
        tape: &mut Tape,
        side: &dyn SideSource,
        theta_unc: Var,
        from: i64,
        to: i64,
    ) -> Result<Var> {
        let rows = (to - from + 1).max(0) as usize;
        let fdim = side.feature_dim();
        let window_dim = (2 * self.ell_prime + 1) * fdim;
        let mut data = Vec::with_capacity(rows * window_dim);
        for i in from..=to {
            for j in (i - self.ell_prime as i64)..=(i + self.ell_prime as i64) {
                side.append_features(j, &mut data);
            }
        }
        let raw = tape.constant(Tensor::matrix(rows, window_dim, data)?);
        let theta_rows = tape.broadcast_row(theta_unc, rows)?;
        let mut h = tape.concat_cols(raw, theta_rows)?;
        for l in 0..3 {
            let w = tape.param(&self.name(&format!("w{l}")))?;
            let b = tape.param(&self.name(&format!("b{l}")))?;
            h = tape.dense(h, w, Some(b))?;
            if l < 2 {
                h = tape.activation(h, Activation::Elu);
            }
        }
        Ok(h)
    }
}
