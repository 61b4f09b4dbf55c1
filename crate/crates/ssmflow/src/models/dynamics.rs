//! Densities and drift/diffusion functions of the concrete models.

use super::{ModelKind, ParameterVector, SSMSpec};
use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837877066409345483560659472811;

/// Scalar normal log density.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -0.5 * (LN_2PI + var.ln() + d * d / var)
}

/// Log prior density: independent normals on the unconstrained scale.
pub fn prior_logpdf(theta: &ParameterVector) -> f64 {
    theta
        .unconstrained
        .iter()
        .zip(&theta.prior)
        .map(|(&u, p)| normal_logpdf(u, p.mean, p.sd * p.sd))
        .sum()
}

/// Drift vector, diffusion matrix and its Cholesky factor for the SDE
/// models, evaluated at state `x` with natural-space parameters.
///
/// Matrices are row-major (d, d); the Cholesky factor is lower-triangular.
pub fn drift_diffusion(
    x: &[f64],
    theta_natural: &[f64],
    kind: ModelKind,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    match kind {
        ModelKind::Ar1 => Err(Error::Config(
            "ar1 is not a discretised SDE; it has no drift/diffusion".into(),
        )),
        ModelKind::LotkaVolterra => {
            let (u, v) = (x[0], x[1]);
            if u <= 0.0 || v <= 0.0 {
                return Err(Error::InvalidState(format!(
                    "lotka_volterra state ({u}, {v}) is not positive"
                )));
            }
            let (t1, t2, t3) = (theta_natural[0], theta_natural[1], theta_natural[2]);
            let alpha = vec![t1 * u - t2 * u * v, t2 * u * v - t3 * v];
            let beta = vec![
                t1 * u + t2 * u * v,
                -t2 * u * v,
                -t2 * u * v,
                t2 * u * v + t3 * v,
            ];
            let chol = cholesky_2x2(&beta)?;
            Ok((alpha, beta, chol))
        }
        ModelKind::FitzHughNagumo => {
            let (v, w) = (x[0], x[1]);
            let t = theta_natural;
            let alpha = vec![t[0] * (-v * v * v + v - w + t[1]), t[2] * v - w + 1.4];
            let beta = vec![t[3], 0.0, 0.0, t[4]];
            if t[3] <= 0.0 || t[4] <= 0.0 {
                return Err(Error::InvalidState(format!(
                    "fitzhugh_nagumo diffusion ({}, {}) is not positive",
                    t[3], t[4]
                )));
            }
            let chol = vec![t[3].sqrt(), 0.0, 0.0, t[4].sqrt()];
            Ok((alpha, beta, chol))
        }
    }
}

/// Lower Cholesky factor of a symmetric 2x2 matrix, with a jitter retry of
/// 1e-9 times the trace before giving up.
fn cholesky_2x2(m: &[f64]) -> Result<Vec<f64>> {
    let attempt = |m: &[f64]| -> Option<Vec<f64>> {
        let a = m[0];
        if a <= 0.0 {
            return None;
        }
        let l11 = a.sqrt();
        let l21 = m[2] / l11;
        let rest = m[3] - l21 * l21;
        if rest <= 0.0 {
            return None;
        }
        Some(vec![l11, 0.0, l21, rest.sqrt()])
    };
    if let Some(c) = attempt(m) {
        return Ok(c);
    }
    let jitter = 1e-9 * (m[0] + m[3]).abs();
    let jittered = vec![m[0] + jitter, m[1], m[2], m[3] + jitter];
    attempt(&jittered).ok_or_else(|| {
        Error::InvalidState(format!(
            "diffusion matrix [[{}, {}], [{}, {}]] is not positive definite",
            m[0], m[1], m[2], m[3]
        ))
    })
}

/// Transition log density p(x_i | x_{i-1}, θ).
pub fn transition_logpdf(
    x_i: &[f64],
    x_prev: &[f64],
    theta: &ParameterVector,
    spec: &SSMSpec,
) -> Result<f64> {
    let nat = theta.natural();
    match spec.kind {
        ModelKind::Ar1 => {
            let mean = nat[0] + nat[1] * x_prev[0];
            let sd = nat[2];
            if sd <= 0.0 {
                return Err(Error::InvalidState(format!(
                    "ar1 innovation scale {sd} must be positive"
                )));
            }
            Ok(normal_logpdf(x_i[0], mean, sd * sd))
        }
        ModelKind::LotkaVolterra | ModelKind::FitzHughNagumo => {
            let (alpha, beta, _) = drift_diffusion(x_prev, &nat, spec.kind)?;
            let dt = spec.dt;
            // Covariance β·Δt for a 2-d state; explicit inverse.
            let det_beta = beta[0] * beta[3] - beta[1] * beta[2];
            if det_beta <= 0.0 || beta[0] <= 0.0 {
                return Err(Error::InvalidState(
                    "transition covariance is not positive definite".into(),
                ));
            }
            let r0 = x_i[0] - (x_prev[0] + alpha[0] * dt);
            let r1 = x_i[1] - (x_prev[1] + alpha[1] * dt);
            let quad =
                (r0 * r0 * beta[3] - 2.0 * r0 * r1 * beta[1] + r1 * r1 * beta[0]) / (det_beta * dt);
            let log_det_cov = det_beta.ln() + 2.0 * dt.ln();
            Ok(-LN_2PI - 0.5 * log_det_cov - 0.5 * quad)
        }
    }
}

/// Observation log density p(y_i | x_i, θ).
pub fn observation_logpdf(y_i: &[f64], x_i: &[f64], spec: &SSMSpec) -> f64 {
    spec.observed_components
        .iter()
        .zip(y_i)
        .zip(&spec.observation_variance)
        .map(|((&c, &y), &var)| normal_logpdf(y, x_i[c], var))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::Transform;
    use crate::rngstream::{standard_normal_at, stream};

    fn ar1_theta(vals: &[f64]) -> ParameterVector {
        ParameterVector::from_natural(vals, ModelKind::Ar1.transforms()).unwrap()
    }

    #[test]
    fn prior_at_mean() {
        let theta = ParameterVector::from_unconstrained(
            vec![0.0, 0.0, 0.0],
            ModelKind::Ar1.transforms(),
        );
        let lp = prior_logpdf(&theta);
        let per_component = -(10.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((per_component - (-3.2215)).abs() < 1e-4);
        assert!((lp - 3.0 * per_component).abs() < 1e-12);
    }

    #[test]
    fn prior_one_sd_out() {
        let mut theta = ParameterVector::from_unconstrained(
            vec![0.0, 0.0, 0.0],
            ModelKind::Ar1.transforms(),
        );
        theta.unconstrained[0] = 10.0;
        let per_component = -(10.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        let lp = prior_logpdf(&theta);
        assert!((lp - (3.0 * per_component - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn prior_matches_termwise_oracle() {
        let theta = ParameterVector::from_unconstrained(
            vec![1.3, -4.2, 0.7, 2.2],
            vec![Transform::Identity; 4],
        );
        let oracle: f64 = theta
            .unconstrained
            .iter()
            .map(|&u| normal_logpdf(u, 0.0, 100.0))
            .sum();
        assert!((prior_logpdf(&theta) - oracle).abs() < 1e-12);
    }

    #[test]
    fn ar1_transition_at_mean() {
        let spec = SSMSpec::new(ModelKind::Ar1, 10, 1.0);
        let theta = ar1_theta(&[5.0, 0.5, 3.0]);
        let lp = transition_logpdf(&[10.0], &[10.0], &theta, &spec).unwrap();
        let expect = -(3.0 * (2.0 * std::f64::consts::PI).sqrt()).ln();
        assert!((lp - expect).abs() < 1e-12);
        assert!((expect - (-2.0176)).abs() < 1e-4);
    }

    #[test]
    fn fhn_transition_at_deterministic_mean() {
        let mut spec = SSMSpec::new(ModelKind::FitzHughNagumo, 10, 0.1);
        spec.dt = 0.1;
        let theta = ParameterVector::from_natural(
            &[2.0, 1.0, 1.5, 0.3, 0.3],
            ModelKind::FitzHughNagumo.transforms(),
        )
        .unwrap();
        let x_prev = [1.0, 0.5];
        let nat = theta.natural();
        let (alpha, _, _) = drift_diffusion(&x_prev, &nat, ModelKind::FitzHughNagumo).unwrap();
        let mean = [x_prev[0] + alpha[0] * 0.1, x_prev[1] + alpha[1] * 0.1];
        let lp = transition_logpdf(&mean, &x_prev, &theta, &spec).unwrap();
        // Two independent components with variance 0.3 * 0.1 = 0.03 each.
        let expect = -(2.0 * std::f64::consts::PI * 0.03).ln();
        assert!((lp - expect).abs() < 1e-12, "{lp} vs {expect}");
    }

    #[test]
    fn lv_euler_mean_from_drift() {
        let nat = [0.5, 0.0025, 0.3];
        let (alpha, beta, chol) =
            drift_diffusion(&[100.0, 100.0], &nat, ModelKind::LotkaVolterra).unwrap();
        assert!((alpha[0] - 25.0).abs() < 1e-12);
        assert!((alpha[1] + 5.0).abs() < 1e-12);
        assert_eq!(beta, vec![75.0, -25.0, -25.0, 55.0]);
        // One hand-evaluated Euler step with Δt = 0.1.
        let mean = [100.0 + 0.1 * alpha[0], 100.0 + 0.1 * alpha[1]];
        assert!((mean[0] - 102.5).abs() < 1e-12);
        assert!((mean[1] - 99.5).abs() < 1e-12);
        // L Lᵀ reproduces β.
        let recon = [
            chol[0] * chol[0],
            chol[0] * chol[2],
            chol[2] * chol[0],
            chol[2] * chol[2] + chol[3] * chol[3],
        ];
        for (r, b) in recon.iter().zip(&beta) {
            assert!((r - b).abs() < 1e-10);
        }
    }

    #[test]
    fn fhn_diffusion_is_constant_diagonal() {
        let nat = [2.0, 1.0, 1.5, 0.5, 0.3];
        let (a1, b1, _) = drift_diffusion(&[2.0, 3.0], &nat, ModelKind::FitzHughNagumo).unwrap();
        let (_, b2, _) = drift_diffusion(&[-1.0, 7.0], &nat, ModelKind::FitzHughNagumo).unwrap();
        assert_eq!(b1, vec![0.5, 0.0, 0.0, 0.3]);
        assert_eq!(b1, b2);
        // Hand evaluation of the drift at (v, w) = (2, 3).
        assert!((a1[0] - 2.0 * (-8.0 + 2.0 - 3.0 + 1.0)).abs() < 1e-12);
        assert!((a1[0] + 16.0).abs() < 1e-12);
        assert!((a1[1] - 1.4).abs() < 1e-12);
    }

    #[test]
    fn lv_rejects_nonpositive_state() {
        let nat = [0.5, 0.0025, 0.3];
        assert!(drift_diffusion(&[-1.0, 100.0], &nat, ModelKind::LotkaVolterra).is_err());
        assert!(drift_diffusion(&[0.0, 100.0], &nat, ModelKind::LotkaVolterra).is_err());
    }

    #[test]
    fn observation_density_examples() {
        let spec = SSMSpec::new(ModelKind::Ar1, 10, 1.0);
        // y equal to the observed component, unit variance, one dimension.
        let lp = observation_logpdf(&[4.0], &[4.0], &spec);
        assert!((lp - (-0.9189)).abs() < 1e-4);

        // The FHN observation ignores the w component entirely.
        let fhn = SSMSpec::new(ModelKind::FitzHughNagumo, 10, 0.1);
        let a = observation_logpdf(&[1.0], &[1.2, 5.0], &fhn);
        let b = observation_logpdf(&[1.0], &[1.2, -3.0], &fhn);
        assert_eq!(a, b);

        // Random case against a direct scalar pdf evaluation.
        let y = 0.37;
        let x = -0.81;
        let got = observation_logpdf(&[y], &[x], &spec);
        let direct = normal_logpdf(y, x, 1.0);
        assert_eq!(got, direct);
    }

    #[test]
    fn lv_beta_symmetric_positive_definite_on_random_inputs() {
        for s in 0..200u64 {
            let u = standard_normal_at(s, stream::X_NOISE, 0, 0).abs() * 100.0 + 1.0;
            let v = standard_normal_at(s, stream::X_NOISE, 1, 0).abs() * 100.0 + 1.0;
            let t1 = standard_normal_at(s, stream::X_NOISE, 2, 0).abs() + 0.01;
            let t2 = standard_normal_at(s, stream::X_NOISE, 3, 0).abs() * 0.01 + 1e-4;
            let t3 = standard_normal_at(s, stream::X_NOISE, 4, 0).abs() + 0.01;
            let (_, beta, chol) =
                drift_diffusion(&[u, v], &[t1, t2, t3], ModelKind::LotkaVolterra).unwrap();
            assert_eq!(beta[1], beta[2]);
            assert!(beta[0] > 0.0);
            assert!(beta[0] * beta[3] - beta[1] * beta[2] > 0.0);
            assert!(chol[0] > 0.0 && chol[3] > 0.0);
        }
    }

    #[test]
    fn transition_density_integrates_to_one() {
        // Quadrature of exp(transition_logpdf) over x_i.
        // d = 1: AR(1) on a grid of mean ± 10 sd.
        let spec = SSMSpec::new(ModelKind::Ar1, 10, 1.0);
        let theta = ar1_theta(&[5.0, 0.5, 3.0]);
        let mean = 5.0 + 0.5 * 2.0;
        let sd = 3.0;
        let n = 4000;
        let (lo, hi) = (mean - 10.0 * sd, mean + 10.0 * sd);
        let h = (hi - lo) / n as f64;
        let mut integral = 0.0;
        for j in 0..=n {
            let x = lo + j as f64 * h;
            let w = if j == 0 || j == n { 0.5 } else { 1.0 };
            integral += w * transition_logpdf(&[x], &[2.0], &theta, &spec).unwrap().exp();
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-3, "ar1 integral {integral}");

        // d = 2: FHN product grid at small Δt.
        let fhn = SSMSpec::new(ModelKind::FitzHughNagumo, 10, 0.1);
        let theta = ParameterVector::from_natural(
            &[2.0, 1.0, 1.5, 0.5, 0.3],
            ModelKind::FitzHughNagumo.transforms(),
        )
        .unwrap();
        let x_prev = [1.0, 0.5];
        let nat = theta.natural();
        let (alpha, beta, _) = drift_diffusion(&x_prev, &nat, ModelKind::FitzHughNagumo).unwrap();
        let m = [x_prev[0] + alpha[0] * 0.1, x_prev[1] + alpha[1] * 0.1];
        let sds = [(beta[0] * 0.1).sqrt(), (beta[3] * 0.1).sqrt()];
        let n2 = 400;
        let mut integral2 = 0.0;
        for j0 in 0..=n2 {
            let w0 = if j0 == 0 || j0 == n2 { 0.5 } else { 1.0 };
            let x0 = m[0] - 8.0 * sds[0] + j0 as f64 * (16.0 * sds[0] / n2 as f64);
            for j1 in 0..=n2 {
                let w1 = if j1 == 0 || j1 == n2 { 0.5 } else { 1.0 };
                let x1 = m[1] - 8.0 * sds[1] + j1 as f64 * (16.0 * sds[1] / n2 as f64);
                integral2 += w0
                    * w1
                    * transition_logpdf(&[x0, x1], &x_prev, &theta, &fhn)
                        .unwrap()
                        .exp();
            }
        }
        integral2 *= (16.0 * sds[0] / n2 as f64) * (16.0 * sds[1] / n2 as f64);
        assert!((integral2 - 1.0).abs() < 1e-3, "fhn integral {integral2}");
    }
}
