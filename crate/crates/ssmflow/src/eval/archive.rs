//! Labelled sample sets with provenance.

use std::fmt::Write as _;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// Where a sample set came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Provenance {
    ViIteration(u64),
    McmcChain(u64),
    Prior,
}

impl Provenance {
    fn to_header(&self) -> String {
        match self {
            Provenance::ViIteration(i) => format!("vi:{i}"),
            Provenance::McmcChain(id) => format!("mcmc:{id}"),
            Provenance::Prior => "prior".to_string(),
        }
    }

    fn parse(s: &str) -> Result<Self> {
        if s == "prior" {
            return Ok(Provenance::Prior);
        }
        if let Some(i) = s.strip_prefix("vi:") {
            return Ok(Provenance::ViIteration(i.parse().map_err(|_| {
                Error::Config(format!("bad provenance '{s}'"))
            })?));
        }
        if let Some(i) = s.strip_prefix("mcmc:") {
            return Ok(Provenance::McmcChain(i.parse().map_err(|_| {
                Error::Config(format!("bad provenance '{s}'"))
            })?));
        }
        Err(Error::Config(format!("bad provenance '{s}'")))
    }
}

/// A labelled (n, dim) set of parameter samples with shared ordering.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleArchive {
    pub label: String,
    pub provenance: Provenance,
    pub samples: Tensor,
}

impl SampleArchive {
    pub fn new(label: &str, provenance: Provenance, samples: Tensor) -> Result<Self> {
        if samples.shape().len() != 2 {
            return Err(Error::Shape(format!(
                "archive samples must be (n, dim), got {:?}",
                samples.shape()
            )));
        }
        Ok(SampleArchive {
            label: label.to_string(),
            provenance,
            samples,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.samples.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.samples.shape()[1]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        let _ = writeln!(out, "# archive_version: 1");
        let _ = writeln!(out, "# label: {}", self.label);
        let _ = writeln!(out, "# provenance: {}", self.provenance.to_header());
        let _ = writeln!(out, "# dim: {}", self.dim());
        for i in 0..self.n_samples() {
            let row: Vec<String> = self.samples.row(i).iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let err = |detail: String| Error::Parse {
            file: path.display().to_string(),
            detail,
        };
        let mut label = None;
        let mut provenance = None;
        let mut dim = None;
        let mut data = Vec::new();
        let mut rows = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest
                    .split_once(':')
                    .ok_or_else(|| err("bad header".into()))?;
                match key.trim() {
                    "archive_version" => {}
                    "label" => label = Some(value.trim().to_string()),
                    "provenance" => provenance = Some(Provenance::parse(value.trim())?),
                    "dim" => {
                        dim = Some(
                            value
                                .trim()
                                .parse::<usize>()
                                .map_err(|_| err("bad dim".into()))?,
                        )
                    }
                    other => return Err(err(format!("unknown header key '{other}'"))),
                }
            } else {
                rows += 1;
                for p in line.split(',') {
                    data.push(
                        p.trim()
                            .parse::<f64>()
                            .map_err(|_| err(format!("bad value '{p}'")))?,
                    );
                }
            }
        }
        let dim = dim.ok_or_else(|| err("missing dim".into()))?;
        let samples = Tensor::matrix(rows, dim, data)?;
        Ok(SampleArchive {
            label: label.ok_or_else(|| err("missing label".into()))?,
            provenance: provenance.ok_or_else(|| err("missing provenance".into()))?,
            samples,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_round_trip() {
        let samples = Tensor::matrix(3, 2, vec![1.5, -0.25, 2.0, 1e-12, 0.0, -7.5]).unwrap();
        let archive = SampleArchive::new("vi", Provenance::ViIteration(500), samples).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        archive.save(&path).unwrap();
        let loaded = SampleArchive::load(&path).unwrap();
        assert_eq!(loaded.label, "vi");
        assert_eq!(loaded.provenance, Provenance::ViIteration(500));
        for (a, b) in loaded.samples.data().iter().zip(archive.samples.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }
}
