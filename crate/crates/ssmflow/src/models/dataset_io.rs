//! Dataset text format.
//!
//! A versioned text table. Header lines are `# key: value` pairs, followed
//! by one row per observed index: `index,y_1,...,y_k`. Indices absent from
//! the file are unobserved. Floats are printed in shortest round-trip form,
//! so save/load is bit-exact.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Dataset, ModelKind, Provenance, SSMSpec, Trajectory};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# dataset_version: {DATASET_FORMAT_VERSION}");
        let _ = writeln!(out, "# kind: {}", self.spec.kind.name());
        let _ = writeln!(out, "# d: {}", self.spec.state_dim());
        let _ = writeln!(out, "# T: {}", self.spec.t_len);
        let _ = writeln!(out, "# dt: {}", self.spec.dt);
        let _ = writeln!(
            out,
            "# observation_variance: {}",
            join_floats(&self.spec.observation_variance)
        );
        let _ = writeln!(
            out,
            "# observed_components: {}",
            self.spec
                .observed_components
                .iter()
                .map(|c| c.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        if let Some(x0) = &self.spec.x0_override {
            let _ = writeln!(out, "# x0: {}", join_floats(x0));
        }
        if let Some(p) = &self.provenance {
            let _ = writeln!(out, "# theta_true: {}", join_floats(&p.theta_natural));
            let _ = writeln!(out, "# retries: {}", p.retries);
        }
        for (pos, &i) in self.obs_indices().iter().enumerate() {
            let _ = writeln!(out, "{i},{}", join_floats(self.obs_row(pos)));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Dataset> {
        let text = fs::read_to_string(path)?;
        let err = |detail: String| Error::Parse {
            file: path.display().to_string(),
            detail,
        };
        let mut kind = None;
        let mut t_len = None;
        let mut dt = None;
        let mut obs_var = None;
        let mut obs_comps = None;
        let mut x0 = None;
        let mut theta_true: Option<Vec<f64>> = None;
        let mut retries = 0u32;
        let mut indices = Vec::new();
        let mut values = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest
                    .split_once(':')
                    .ok_or_else(|| err(format!("line {}: bad header line", lineno + 1)))?;
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "dataset_version" => {
                        let v: u32 = value
                            .parse()
                            .map_err(|_| err(format!("bad version '{value}'")))?;
                        if v != DATASET_FORMAT_VERSION {
                            return Err(err(format!("unsupported dataset version {v}")));
                        }
                    }
                    "kind" => kind = Some(ModelKind::parse(value)?),
                    "d" => {} // implied by kind; kept for readability
                    "T" => {
                        t_len = Some(
                            value
                                .parse::<usize>()
                                .map_err(|_| err(format!("bad T '{value}'")))?,
                        )
                    }
                    "dt" => {
                        dt = Some(
                            value
                                .parse::<f64>()
                                .map_err(|_| err(format!("bad dt '{value}'")))?,
                        )
                    }
                    "observation_variance" => obs_var = Some(parse_floats(value, &err)?),
                    "observed_components" => {
                        obs_comps = Some(
                            value
                                .split(',')
                                .map(|s| s.trim().parse::<usize>())
                                .collect::<std::result::Result<Vec<_>, _>>()
                                .map_err(|_| err(format!("bad components '{value}'")))?,
                        )
                    }
                    "x0" => x0 = Some(parse_floats(value, &err)?),
                    "theta_true" => theta_true = Some(parse_floats(value, &err)?),
                    "retries" => {
                        retries = value
                            .parse()
                            .map_err(|_| err(format!("bad retries '{value}'")))?
                    }
                    other => return Err(err(format!("unknown header key '{other}'"))),
                }
            } else {
                let mut parts = line.split(',');
                let idx: usize = parts
                    .next()
                    .unwrap()
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("line {}: bad index", lineno + 1)))?;
                indices.push(idx);
                for p in parts {
                    values.push(
                        p.trim()
                            .parse::<f64>()
                            .map_err(|_| err(format!("line {}: bad value", lineno + 1)))?,
                    );
                }
            }
        }
        let kind = kind.ok_or_else(|| err("missing kind".into()))?;
        let t_len = t_len.ok_or_else(|| err("missing T".into()))?;
        let dt = dt.ok_or_else(|| err("missing dt".into()))?;
        let mut spec = SSMSpec::new(kind, t_len, dt);
        if let Some(v) = obs_var {
            spec.observation_variance = v;
        }
        if let Some(c) = obs_comps {
            spec.observed_components = c;
        }
        spec.x0_override = x0;
        let provenance = theta_true.map(|nat| Provenance {
            theta_natural: nat,
            trajectory: None,
            retries,
        });
        Dataset::new(spec, indices, values, provenance)
    }
}

impl Trajectory {
    /// Truth table: one `index,x_1..x_d` row per state.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for i in 0..self.len() {
            let _ = writeln!(out, "{i},{}", join_floats(self.state(i)));
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path, d: usize) -> Result<Trajectory> {
        let text = fs::read_to_string(path)?;
        let mut states = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            for (j, p) in line.split(',').enumerate() {
                if j == 0 {
                    continue;
                }
                states.push(p.trim().parse::<f64>().map_err(|_| Error::Parse {
                    file: path.display().to_string(),
                    detail: format!("bad value '{p}'"),
                })?);
            }
        }
        Trajectory::new(d, states)
    }
}

pub(crate) fn join_floats(vals: &[f64]) -> String {
    vals.iter()
        .map(|v| format!("{v}"))
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_floats(s: &str, err: &impl Fn(String) -> Error) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| err(format!("bad float '{p}'")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::simulate::{simulate, strided_indices};
    use super::super::ParameterVector;
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = SSMSpec::new(ModelKind::LotkaVolterra, 60, 0.1);
        let theta = ParameterVector::from_natural(
            &[0.5, 0.0025, 0.3],
            ModelKind::LotkaVolterra.transforms(),
        )
        .unwrap();
        let ds = simulate(&theta, &spec, &strided_indices(60, 10), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dataset.csv");
        ds.save(&path).unwrap();
        let loaded = Dataset::load(&path).unwrap();
        assert_eq!(loaded.spec, ds.spec);
        assert_eq!(loaded.obs_indices(), ds.obs_indices());
        for pos in 0..ds.n_obs() {
            for (a, b) in loaded.obs_row(pos).iter().zip(ds.obs_row(pos)) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        let p = loaded.provenance.unwrap();
        for (a, b) in p
            .theta_natural
            .iter()
            .zip(&ds.provenance.as_ref().unwrap().theta_natural)
        {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn unknown_header_key_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(
            &path,
            "# dataset_version: 1\n# kind: ar1\n# T: 5\n# dt: 1\n# bogus: 3\n0,1.0\n",
        )
        .unwrap();
        assert!(Dataset::load(&path).is_err());
    }
}
