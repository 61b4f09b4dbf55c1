//! Tape-based (differentiable) evaluation of the model densities.
//!
//! These builders mirror the plain-f64 functions in `dynamics` but operate
//! on tape variables, so gradients flow through both the sampled path and
//! the sampled parameters. Transition and observation terms are vectorised
//! over a window of consecutive positions.

use super::{Dataset, ModelKind, PriorComponent, SSMSpec, Transform};
use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Natural-space parameter scalars from the unconstrained vector.
pub fn natural_params(
    tape: &mut Tape,
    theta_unc: Var,
    transforms: &[Transform],
) -> Result<Vec<Var>> {
    let mut out = Vec::with_capacity(transforms.len());
    for (k, t) in transforms.iter().enumerate() {
        let u = tape.elem(theta_unc, k)?;
        out.push(match t {
            Transform::Identity => u,
            Transform::Log => tape.exp(u),
        });
    }
    Ok(out)
}

/// Log prior density of the unconstrained parameter vector.
pub fn prior_logpdf_var(tape: &mut Tape, theta_unc: Var, prior: &[PriorComponent]) -> Result<Var> {
    let p = prior.len();
    let means = tape.constant(Tensor::vector(prior.iter().map(|c| c.mean).collect()));
    let inv_sd = tape.constant(Tensor::vector(prior.iter().map(|c| 1.0 / c.sd).collect()));
    let centred = tape.sub(theta_unc, means)?;
    let z = tape.mul(centred, inv_sd)?;
    let sq = tape.square(z);
    let quad = tape.sum(sq);
    let scaled = tape.mul_const(quad, -0.5);
    let log_norm: f64 = prior
        .iter()
        .map(|c| -0.5 * LN_2PI - c.sd.ln())
        .sum::<f64>();
    let _ = p;
    Ok(tape.add_const(scaled, log_norm))
}

/// Sum of transition log densities over consecutive pairs.
///
/// `prev` and `cur` are aligned (L, d) windows: row r of `cur` is the state
/// one step after row r of `prev`.
pub fn transition_sum_var(
    tape: &mut Tape,
    spec: &SSMSpec,
    theta_nat: &[Var],
    prev: Var,
    cur: Var,
) -> Result<Var> {
    let rows = tape.value(prev).shape()[0];
    if tape.value(prev).shape() != tape.value(cur).shape() {
        return Err(Error::Shape("transition windows misaligned".into()));
    }
    let n = rows as f64;
    match spec.kind {
        ModelKind::Ar1 => {
            let scaled_prev = tape.mul_scalar(prev, theta_nat[1])?;
            let mean = tape.add_scalar(scaled_prev, theta_nat[0])?;
            let resid = tape.sub(cur, mean)?;
            let one = tape.constant_scalar(1.0);
            let inv_sd = tape.div(one, theta_nat[2])?;
            let z = tape.mul_scalar(resid, inv_sd)?;
            let sq = tape.square(z);
            let quad = tape.sum(sq);
            let neg_half_quad = tape.mul_const(quad, -0.5);
            let ln_sd = tape.ln(theta_nat[2]);
            let sd_term = tape.mul_const(ln_sd, -n);
            let partial = tape.add(neg_half_quad, sd_term)?;
            Ok(tape.add_const(partial, -0.5 * LN_2PI * n))
        }
        ModelKind::LotkaVolterra => {
            let dt = spec.dt;
            let u = tape.slice_cols(prev, 0, 1)?;
            let v = tape.slice_cols(prev, 1, 2)?;
            let uv = tape.mul(u, v)?;
            let t1u = tape.mul_scalar(u, theta_nat[0])?;
            let t2uv = tape.mul_scalar(uv, theta_nat[1])?;
            let t3v = tape.mul_scalar(v, theta_nat[2])?;
            let a1 = tape.sub(t1u, t2uv)?;
            let a2 = tape.sub(t2uv, t3v)?;
            let m1 = {
                let step = tape.mul_const(a1, dt);
                tape.add(u, step)?
            };
            let m2 = {
                let step = tape.mul_const(a2, dt);
                tape.add(v, step)?
            };
            let c1 = tape.slice_cols(cur, 0, 1)?;
            let c2 = tape.slice_cols(cur, 1, 2)?;
            let r1 = tape.sub(c1, m1)?;
            let r2 = tape.sub(c2, m2)?;
            let b11 = tape.add(t1u, t2uv)?;
            let b22 = tape.add(t2uv, t3v)?;
            // b12 = -t2uv enters only squared or via r1·r2·b12.
            let det = {
                let prod = tape.mul(b11, b22)?;
                let b12sq = tape.square(t2uv);
                tape.sub(prod, b12sq)?
            };
            let q1 = {
                let r1sq = tape.square(r1);
                tape.mul(r1sq, b22)?
            };
            let q2 = {
                let r12 = tape.mul(r1, r2)?;
                let r12b = tape.mul(r12, t2uv)?;
                tape.mul_const(r12b, 2.0) // -2 r1 r2 b12 with b12 = -t2uv
            };
            let q3 = {
                let r2sq = tape.square(r2);
                tape.mul(r2sq, b11)?
            };
            let qn = {
                let q12 = tape.add(q1, q2)?;
                tape.add(q12, q3)?
            };
            let quad = {
                let det_dt = tape.mul_const(det, dt);
                tape.div(qn, det_dt)?
            };
            let s_quad = tape.sum(quad);
            let ln_det = tape.ln(det);
            let s_ld = tape.sum(ln_det);
            let t_quad = tape.mul_const(s_quad, -0.5);
            let t_ld = tape.mul_const(s_ld, -0.5);
            let partial = tape.add(t_quad, t_ld)?;
            Ok(tape.add_const(partial, -n * (LN_2PI + dt.ln())))
        }
        ModelKind::FitzHughNagumo => {
            let dt = spec.dt;
            let v = tape.slice_cols(prev, 0, 1)?;
            let w = tape.slice_cols(prev, 1, 2)?;
            let v2 = tape.square(v);
            let v3 = tape.mul(v2, v)?;
            let inner = {
                let a = tape.sub(v, v3)?;
                let b = tape.sub(a, w)?;
                tape.add_scalar(b, theta_nat[1])?
            };
            let a1 = tape.mul_scalar(inner, theta_nat[0])?;
            let a2 = {
                let t3v = tape.mul_scalar(v, theta_nat[2])?;
                let c = tape.sub(t3v, w)?;
                tape.add_const(c, 1.4)
            };
            let m1 = {
                let step = tape.mul_const(a1, dt);
                tape.add(v, step)?
            };
            let m2 = {
                let step = tape.mul_const(a2, dt);
                tape.add(w, step)?
            };
            let c1 = tape.slice_cols(cur, 0, 1)?;
            let c2 = tape.slice_cols(cur, 1, 2)?;
            let r1 = tape.sub(c1, m1)?;
            let r2 = tape.sub(c2, m2)?;
            let s1 = {
                let sq = tape.square(r1);
                tape.sum(sq)
            };
            let s2 = {
                let sq = tape.square(r2);
                tape.sum(sq)
            };
            let one = tape.constant_scalar(1.0);
            let inv4 = {
                let t4dt = tape.mul_const(theta_nat[3], dt);
                tape.div(one, t4dt)?
            };
            let inv5 = {
                let t5dt = tape.mul_const(theta_nat[4], dt);
                tape.div(one, t5dt)?
            };
            let quad = {
                let q1 = tape.mul(s1, inv4)?;
                let q2 = tape.mul(s2, inv5)?;
                tape.add(q1, q2)?
            };
            let ln4 = tape.ln(theta_nat[3]);
            let ln5 = tape.ln(theta_nat[4]);
            let ln45 = tape.add(ln4, ln5)?;
            let sd_term = tape.mul_const(ln45, -0.5 * n);
            let t_quad = tape.mul_const(quad, -0.5);
            let partial = tape.add(t_quad, sd_term)?;
            Ok(tape.add_const(partial, -n * (LN_2PI + dt.ln())))
        }
    }
}

/// Sum of observation log densities for window positions that carry an
/// observation.
///
/// `x_win` is an (L, d) window whose row 0 sits at absolute index
/// `first_abs`; terms are accumulated for absolute indices `lo..=hi`.
pub fn observation_sum_var(
    tape: &mut Tape,
    dataset: &Dataset,
    x_win: Var,
    first_abs: usize,
    lo: usize,
    hi: usize,
) -> Result<Var> {
    let spec = &dataset.spec;
    let off = lo - first_abs;
    let len = hi - lo + 1;
    let window = tape.slice_rows(x_win, off, off + len)?;

    let mut mask = vec![0.0; len];
    let mut n_obs = 0usize;
    let mut ys: Vec<Vec<f64>> = vec![vec![0.0; len]; spec.obs_dim()];
    for (r, i) in (lo..=hi).enumerate() {
        if let Some(y) = dataset.obs_at(i) {
            mask[r] = 1.0;
            n_obs += 1;
            for (c, &yv) in y.iter().enumerate() {
                ys[c][r] = yv;
            }
        }
    }
    let mask_var = tape.constant(Tensor::matrix(len, 1, mask).unwrap());

    let mut total: Option<Var> = None;
    for (c_idx, (&comp, &var)) in spec
        .observed_components
        .iter()
        .zip(&spec.observation_variance)
        .enumerate()
    {
        let x_c = tape.slice_cols(window, comp, comp + 1)?;
        let y_c = tape.constant(Tensor::matrix(len, 1, ys[c_idx].clone()).unwrap());
        let diff = tape.sub(y_c, x_c)?;
        let masked = tape.mul(diff, mask_var)?;
        let sq = tape.square(masked);
        let ssq = tape.sum(sq);
        let scaled = tape.mul_const(ssq, -0.5 / var);
        let term = tape.add_const(scaled, -(n_obs as f64) * 0.5 * (LN_2PI + var.ln()));
        total = Some(match total {
            Some(t) => tape.add(t, term)?,
            None => term,
        });
    }
    Ok(total.unwrap_or_else(|| tape.constant_scalar(0.0)))
}
