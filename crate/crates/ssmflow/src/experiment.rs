//! End-to-end experiment pipeline: simulate, pre-train, train, sample the
//! baseline, evaluate, and write plot-ready tables.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::baselines::{ar1_posterior_log_density, rwmh_chain, MCMCChain, RwmhSettings};
use crate::config::RunConfig;
use crate::diffcore::{load_checkpoint, save_checkpoint, NormMode, ParameterStore, Tape, Tensor};
use crate::error::{Error, Result};
use crate::eval::{
    posterior_summary, standardized_mmd, ArchiveProvenance, ParamSummary, SampleArchive,
};
use crate::inference::{
    pretrain, train, DataSide, IterationRecord, TrainEvent, VariationalFlows,
};
use crate::models::{simulate, strided_indices, Dataset, ParameterVector, Transform};
use crate::rngstream::{mix, standard_normal_at, stream};

pub const DATASET_FILE: &str = "dataset.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const CONFIG_FILE: &str = "config.resolved";
pub const PRETRAIN_LOG_FILE: &str = "pretrain_log.csv";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const PRETRAINED_CHECKPOINT: &str = "checkpoint_pretrained.ckpt";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.ckpt";
pub const CHAIN_FILE: &str = "mcmc_chain.csv";
pub const VI_SAMPLES_FILE: &str = "samples_vi.csv";
pub const MCMC_SAMPLES_FILE: &str = "samples_mcmc.csv";
pub const PRIOR_SAMPLES_FILE: &str = "samples_prior.csv";
pub const VI_SUMMARY_FILE: &str = "summary_vi.csv";
pub const MCMC_SUMMARY_FILE: &str = "summary_mcmc.csv";
pub const MMD_FILE: &str = "mmd_vs_iteration.csv";
pub const MARGINALS_FILE: &str = "marginals.csv";
pub const PATH_ENVELOPE_FILE: &str = "path_envelope.csv";

pub fn checkpoint_file(iter: u64) -> String {
    format!("checkpoint_{iter:07}.ckpt")
}

/// Evaluation outputs of a finished run.
pub struct EvalResult {
    /// Natural-space θ samples from the trained flow.
    pub vi_samples: Tensor,
    pub vi_summary: Vec<ParamSummary>,
    pub prior_samples: Tensor,
    pub mcmc_samples: Option<Tensor>,
    pub mcmc_summary: Option<Vec<ParamSummary>>,
    /// Standardised MMD(VI at checkpoint, MCMC) per checkpoint iteration.
    pub mmd_vs_iteration: Vec<(u64, f64)>,
    /// Standardised MMD of the final VI samples against MCMC.
    pub final_mmd: Option<f64>,
    /// Standardised MMD of prior samples against MCMC.
    pub prior_mmd: Option<f64>,
    /// Per-position path statistics over 1..=T, flat (T, d).
    pub path_mean: Vec<f64>,
    pub path_lo: Vec<f64>,
    pub path_hi: Vec<f64>,
}

/// Everything a full pipeline run produces.
pub struct ExperimentResult {
    pub dataset: Dataset,
    pub records: Vec<IterationRecord>,
    pub eval: EvalResult,
}

/// Run `f` inside a thread pool with the configured parallelism
/// (0 keeps the global default).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    if threads == 0 {
        f()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .expect("thread pool");
        pool.install(f)
    }
}

/// Simulate the configured dataset and write it (plus the true path) to the
/// output directory.
pub fn stage_simulate(config: &RunConfig, out_dir: &Path) -> Result<Dataset> {
    let spec = config.ssm_spec();
    let theta = ParameterVector::from_natural(&config.theta_true, config.model.transforms())
        .map_err(|e| e.in_stage("simulate"))?;
    let indices = strided_indices(config.t_len, config.obs_stride);
    let dataset =
        simulate(&theta, &spec, &indices, config.seed).map_err(|e| e.in_stage("simulate"))?;
    fs::create_dir_all(out_dir)?;
    dataset.save(&out_dir.join(DATASET_FILE))?;
    if let Some(p) = &dataset.provenance {
        if let Some(traj) = &p.trajectory {
            traj.save(&out_dir.join(TRUTH_FILE))?;
        }
    }
    config.save(&out_dir.join(CONFIG_FILE))?;
    Ok(dataset)
}

/// Load the dataset from the output directory, simulating it first if the
/// file does not exist yet.
pub fn load_or_simulate(config: &RunConfig, out_dir: &Path) -> Result<Dataset> {
    let path = out_dir.join(DATASET_FILE);
    if path.exists() {
        let mut ds = Dataset::load(&path)?;
        let truth = out_dir.join(TRUTH_FILE);
        if truth.exists() {
            if let Some(p) = &mut ds.provenance {
                p.trajectory = Some(crate::models::Trajectory::load(
                    &truth,
                    ds.spec.state_dim(),
                )?);
            }
        }
        Ok(ds)
    } else {
        stage_simulate(config, out_dir)
    }
}

/// Pre-train the flows per the configuration; writes the objective trace
/// and a checkpoint.
pub fn stage_pretrain(
    config: &RunConfig,
    dataset: &Dataset,
    flows: &VariationalFlows,
    store: &mut ParameterStore,
    out_dir: &Path,
) -> Result<()> {
    let objective = match config.pretrain_objective()? {
        Some(o) => o,
        None => return Ok(()),
    };
    let trace = pretrain(
        flows,
        store,
        dataset,
        &objective,
        config.pretrain_iters,
        &config.train_config(),
    )
    .map_err(|e| e.in_stage("pretrain"))?;
    let mut text = String::from("iteration,objective\n");
    for (i, v) in trace.iter().enumerate() {
        let _ = writeln!(text, "{i},{v}");
    }
    fs::write(out_dir.join(PRETRAIN_LOG_FILE), text)?;
    save_checkpoint(store, &out_dir.join(PRETRAINED_CHECKPOINT))?;
    Ok(())
}

/// Train the flows; writes the append-only training log and periodic
/// checkpoints, and returns the per-iteration records.
pub fn stage_train(
    config: &RunConfig,
    dataset: &Dataset,
    flows: &VariationalFlows,
    store: &mut ParameterStore,
    out_dir: &Path,
) -> Result<Vec<IterationRecord>> {
    let mut log = std::io::BufWriter::new(
        fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out_dir.join(TRAIN_LOG_FILE))?,
    );
    if log.get_ref().metadata()?.len() == 0 {
        writeln!(log, "iteration,kappa,elbo,grad_l1_preclip,wall_secs")?;
    }
    let out = out_dir.to_path_buf();
    let records = train(
        flows,
        store,
        dataset,
        &config.train_config(),
        &mut |event| match event {
            TrainEvent::Iteration(r) => {
                writeln!(
                    log,
                    "{},{},{},{},{}",
                    r.iter, r.kappa, r.elbo, r.grad_l1, r.wall_secs
                )?;
                Ok(())
            }
            TrainEvent::Checkpoint(iter, store) => {
                save_checkpoint(store, &out.join(checkpoint_file(iter)))
            }
        },
    )
    .map_err(|e| e.in_stage("train"))?;
    log.flush()?;
    save_checkpoint(store, &out_dir.join(FINAL_CHECKPOINT))?;
    Ok(records)
}

/// Draw natural-space θ samples from the trained parameter flow.
pub fn sample_theta_natural(
    flows: &VariationalFlows,
    store: &ParameterStore,
    transforms: &[Transform],
    n: usize,
    seed: u64,
) -> Result<Tensor> {
    let p = flows.theta.dim;
    let mut data = Vec::with_capacity(n * p);
    for s in 0..n {
        let eps: Vec<f64> = (0..p)
            .map(|k| standard_normal_at(mix(&[seed, s as u64]), stream::THETA_NOISE, k as i64, 1))
            .collect();
        let mut tape = Tape::new(store);
        let (theta, _) = flows.theta.sample_theta(&mut tape, &eps)?;
        for (u, t) in tape.value(theta).data().iter().zip(transforms) {
            data.push(t.to_natural(*u));
        }
    }
    Tensor::matrix(n, p, data)
}

/// Draw natural-space samples from the prior.
pub fn sample_prior_natural(transforms: &[Transform], n: usize, seed: u64) -> Result<Tensor> {
    let p = transforms.len();
    let mut data = Vec::with_capacity(n * p);
    for s in 0..n {
        for (k, t) in transforms.iter().enumerate() {
            let u = 10.0 * standard_normal_at(mix(&[seed, s as u64]), stream::THETA_NOISE, k as i64, 2);
            data.push(t.to_natural(u));
        }
    }
    Tensor::matrix(n, p, data)
}

/// Run the AR(1) random-walk Metropolis-Hastings baseline; writes the chain
/// table and returns retained natural-space samples.
pub fn stage_mcmc(
    config: &RunConfig,
    dataset: &Dataset,
    init_unconstrained: &[f64],
    out_dir: &Path,
) -> Result<MCMCChain> {
    let log_target = ar1_posterior_log_density(dataset).map_err(|e| e.in_stage("mcmc"))?;
    let settings = RwmhSettings {
        iters: config.mcmc_iters,
        burn_in_frac: 0.1,
        retain: config.mcmc_retain,
        initial_scale: config.mcmc_initial_scale,
        seed: mix(&[config.seed, 0x6d636d63]),
    };
    let chain =
        rwmh_chain(&|u| log_target(u), init_unconstrained, &settings).map_err(|e| e.in_stage("mcmc"))?;
    chain.save(&out_dir.join(CHAIN_FILE), &config.model.transforms())?;
    Ok(chain)
}

/// Load a saved chain table back into a natural-space sample tensor.
pub fn load_chain_samples(path: &Path, dim: usize) -> Result<Tensor> {
    let text = fs::read_to_string(path)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        rows += 1;
        for p in line.split(',') {
            data.push(p.trim().parse::<f64>().map_err(|_| Error::Parse {
                file: path.display().to_string(),
                detail: format!("bad value '{p}'"),
            })?);
        }
    }
    Tensor::matrix(rows, dim, data)
}

fn write_summary(path: &Path, summary: &[ParamSummary]) -> Result<()> {
    let mut text = String::from("parameter,mean,sd,p2.5,p50,p97.5\n");
    for (k, s) in summary.iter().enumerate() {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            k + 1,
            s.mean,
            s.sd,
            s.p2_5,
            s.p50,
            s.p97_5
        );
    }
    fs::write(path, text)?;
    Ok(())
}

/// Gaussian kernel density estimate on a grid, Silverman bandwidth.
fn kde(samples: &[f64], grid: &[f64]) -> Vec<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
    let h = (1.06 * sd * n.powf(-0.2)).max(1e-12);
    grid.iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| {
                    let z = (x - s) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                / (n * h * (2.0 * std::f64::consts::PI).sqrt())
        })
        .collect()
}

fn write_marginals(
    path: &Path,
    vi: &Tensor,
    mcmc: Option<&Tensor>,
    truth: Option<&[f64]>,
) -> Result<()> {
    let p = vi.shape()[1];
    let mut text = String::from(if mcmc.is_some() {
        "parameter,value,vi_density,mcmc_density,true_value\n"
    } else {
        "parameter,value,vi_density,true_value\n"
    });
    for k in 0..p {
        let vi_col: Vec<f64> = (0..vi.shape()[0]).map(|r| vi.row(r)[k]).collect();
        let mcmc_col: Option<Vec<f64>> =
            mcmc.map(|m| (0..m.shape()[0]).map(|r| m.row(r)[k]).collect());
        let mut lo = vi_col.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut hi = vi_col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if let Some(mc) = &mcmc_col {
            lo = lo.min(mc.iter().cloned().fold(f64::INFINITY, f64::min));
            hi = hi.max(mc.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        }
        let pad = 0.1 * (hi - lo).max(1e-9);
        let (lo, hi) = (lo - pad, hi + pad);
        let grid: Vec<f64> = (0..=100)
            .map(|g| lo + (hi - lo) * g as f64 / 100.0)
            .collect();
        let vi_d = kde(&vi_col, &grid);
        let mcmc_d = mcmc_col.as_ref().map(|mc| kde(mc, &grid));
        let tv = truth.map(|t| t[k]);
        for (g, &x) in grid.iter().enumerate() {
            let t_str = tv.map(|v| format!("{v}")).unwrap_or_default();
            match &mcmc_d {
                Some(md) => {
                    let _ = writeln!(text, "{},{x},{},{},{t_str}", k + 1, vi_d[g], md[g]);
                }
                None => {
                    let _ = writeln!(text, "{},{x},{},{t_str}", k + 1, vi_d[g]);
                }
            }
        }
    }
    fs::write(path, text)?;
    Ok(())
}

/// Sample posterior paths and reduce them to per-position envelopes.
fn path_envelope(
    flows: &VariationalFlows,
    store: &ParameterStore,
    dataset: &Dataset,
    n_paths: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let t_len = dataset.spec.t_len;
    let d = dataset.spec.state_dim();
    let side = DataSide::full(dataset);
    let transforms = dataset.spec.kind.transforms();
    // One path per draw of (θ, z).
    let mut all = vec![0.0; n_paths * t_len * d];
    for s in 0..n_paths {
        let p = flows.theta.dim;
        let eps: Vec<f64> = (0..p)
            .map(|k| standard_normal_at(mix(&[seed, 0xa11, s as u64]), stream::THETA_NOISE, k as i64, 3))
            .collect();
        let theta = {
            let mut tape = Tape::new(store);
            let (tv, _) = flows.theta.sample_theta(&mut tape, &eps)?;
            ParameterVector::from_unconstrained(
                tape.value(tv).data().to_vec(),
                transforms.clone(),
            )
        };
        let sample = flows.x.sample_full(
            store,
            &theta,
            &side,
            t_len,
            mix(&[seed, 0xa12, s as u64]),
            NormMode::Inference,
        )?;
        all[s * t_len * d..(s + 1) * t_len * d].copy_from_slice(sample.values.data());
    }
    let mut mean = vec![0.0; t_len * d];
    let mut lo = vec![0.0; t_len * d];
    let mut hi = vec![0.0; t_len * d];
    let mut buf = vec![0.0; n_paths];
    for e in 0..t_len * d {
        for s in 0..n_paths {
            buf[s] = all[s * t_len * d + e];
        }
        mean[e] = buf.iter().sum::<f64>() / n_paths as f64;
        buf.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |q: f64| -> f64 {
            let h = q * (n_paths - 1) as f64;
            let l = h.floor() as usize;
            let u = h.ceil() as usize;
            buf[l] * (1.0 - (h - l as f64)) + buf[u] * (h - l as f64)
        };
        lo[e] = q(0.025);
        hi[e] = q(0.975);
    }
    Ok((mean, lo, hi))
}

fn write_path_envelope(
    path: &Path,
    dataset: &Dataset,
    mean: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<()> {
    let d = dataset.spec.state_dim();
    let t_len = dataset.spec.t_len;
    let truth = dataset
        .provenance
        .as_ref()
        .and_then(|p| p.trajectory.as_ref());
    let mut header = String::from("index");
    for k in 0..d {
        let _ = write!(header, ",mean_{k},lo_{k},hi_{k}");
    }
    if truth.is_some() {
        for k in 0..d {
            let _ = write!(header, ",true_{k}");
        }
    }
    let mut text = header;
    text.push('\n');
    for i in 1..=t_len {
        let _ = write!(text, "{i}");
        for k in 0..d {
            let e = (i - 1) * d + k;
            let _ = write!(text, ",{},{},{}", mean[e], lo[e], hi[e]);
        }
        if let Some(traj) = truth {
            for k in 0..d {
                let _ = write!(text, ",{}", traj.state(i)[k]);
            }
        }
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Evaluate a trained run: θ samples and summaries, the MMD-vs-iteration
/// table against the MCMC baseline, marginal density grids and path
/// envelopes.
pub fn stage_evaluate(
    config: &RunConfig,
    dataset: &Dataset,
    flows: &VariationalFlows,
    final_store: &ParameterStore,
    out_dir: &Path,
) -> Result<EvalResult> {
    let transforms = config.model.transforms();
    let vi_samples = sample_theta_natural(
        flows,
        final_store,
        &transforms,
        config.eval_samples,
        mix(&[config.seed, 0xe7a1]),
    )?;
    let vi_summary = posterior_summary(&vi_samples)?;
    write_summary(&out_dir.join(VI_SUMMARY_FILE), &vi_summary)?;
    SampleArchive::new(
        "vi",
        ArchiveProvenance::ViIteration(config.max_iters),
        vi_samples.clone(),
    )?
    .save(&out_dir.join(VI_SAMPLES_FILE))?;

    let prior_samples =
        sample_prior_natural(&transforms, config.eval_samples, mix(&[config.seed, 0xe7a2]))?;
    SampleArchive::new("prior", ArchiveProvenance::Prior, prior_samples.clone())?
        .save(&out_dir.join(PRIOR_SAMPLES_FILE))?;

    let chain_path = out_dir.join(CHAIN_FILE);
    let mcmc_samples = if chain_path.exists() {
        Some(load_chain_samples(&chain_path, config.model.n_params())?)
    } else {
        None
    };
    let mut mcmc_summary = None;
    let mut mmd_vs_iteration = Vec::new();
    let mut final_mmd = None;
    let mut prior_mmd = None;
    if let Some(mcmc) = &mcmc_samples {
        SampleArchive::new("mcmc", ArchiveProvenance::McmcChain(0), mcmc.clone())?
            .save(&out_dir.join(MCMC_SAMPLES_FILE))?;
        let summary = posterior_summary(mcmc)?;
        write_summary(&out_dir.join(MCMC_SUMMARY_FILE), &summary)?;
        mcmc_summary = Some(summary);
        final_mmd = Some(standardized_mmd(&vi_samples, mcmc)?);
        prior_mmd = Some(standardized_mmd(&prior_samples, mcmc)?);
        // MMD trajectory over saved checkpoints.
        let mut iters: Vec<u64> = fs::read_dir(out_dir)?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_prefix("checkpoint_")
                    .and_then(|r| r.strip_suffix(".ckpt"))
                    .and_then(|digits| digits.parse::<u64>().ok())
            })
            .collect();
        iters.sort_unstable();
        for iter in iters {
            let ckpt = load_checkpoint(&out_dir.join(checkpoint_file(iter)))?;
            let mut store_at = final_store.clone();
            store_at.load_values_from(&ckpt)?;
            let samples = sample_theta_natural(
                flows,
                &store_at,
                &transforms,
                config.eval_samples,
                mix(&[config.seed, 0xe7a1]),
            )?;
            mmd_vs_iteration.push((iter, standardized_mmd(&samples, mcmc)?));
        }
        let mut text = String::from("iteration,mmd\n");
        for (iter, m) in &mmd_vs_iteration {
            let _ = writeln!(text, "{iter},{m}");
        }
        fs::write(out_dir.join(MMD_FILE), text)?;
    }

    let truth = dataset.provenance.as_ref().map(|p| &p.theta_natural[..]);
    write_marginals(
        &out_dir.join(MARGINALS_FILE),
        &vi_samples,
        mcmc_samples.as_ref(),
        truth,
    )?;

    let (path_mean, path_lo, path_hi) = path_envelope(
        flows,
        final_store,
        dataset,
        config.path_samples,
        mix(&[config.seed, 0xe7a3]),
    )?;
    write_path_envelope(
        &out_dir.join(PATH_ENVELOPE_FILE),
        dataset,
        &path_mean,
        &path_lo,
        &path_hi,
    )?;

    Ok(EvalResult {
        vi_samples,
        vi_summary,
        prior_samples,
        mcmc_samples,
        mcmc_summary,
        mmd_vs_iteration,
        final_mmd,
        prior_mmd,
        path_mean,
        path_lo,
        path_hi,
    })
}

/// The full pipeline: simulate, pre-train, train, baseline, evaluate.
pub fn run_experiment(config: &RunConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let out_dir = PathBuf::from(&config.out_dir);
    with_threads(config.threads, || -> Result<ExperimentResult> {
        let dataset = stage_simulate(config, &out_dir)?;
        let (flows, mut store) = config
            .flow_architecture()
            .build(&dataset, config.seed)
            .map_err(|e| e.in_stage("build"))?;
        stage_pretrain(config, &dataset, &flows, &mut store, &out_dir)?;
        let records = stage_train(config, &dataset, &flows, &mut store, &out_dir)?;
        if config.run_mcmc {
            // Start the chain from the variational mean; burn-in adaptation
            // then explores the posterior from a plausible point.
            let init = {
                let samples = sample_theta_natural(
                    &flows,
                    &store,
                    &config.model.transforms(),
                    200,
                    mix(&[config.seed, 0x1717]),
                )?;
                let p = samples.shape()[1];
                let mut mean_nat = vec![0.0; p];
                for r in 0..samples.shape()[0] {
                    for (k, v) in samples.row(r).iter().enumerate() {
                        mean_nat[k] += v / samples.shape()[0] as f64;
                    }
                }
                ParameterVector::from_natural(&mean_nat, config.model.transforms())
                    .map_err(|e| e.in_stage("mcmc"))?
                    .unconstrained
            };
            stage_mcmc(config, &dataset, &init, &out_dir)?;
        }
        let eval = stage_evaluate(config, &dataset, &flows, &store, &out_dir)?;
        Ok(ExperimentResult {
            dataset,
            records,
            eval,
        })
    })
}

/// Mean wall seconds per iteration over a half-open iteration range.
pub fn mean_wall_secs(records: &[IterationRecord], lo: u64, hi: u64) -> f64 {
    let picked: Vec<f64> = records
        .iter()
        .filter(|r| r.iter >= lo && r.iter < hi)
        .map(|r| r.wall_secs)
        .collect();
    if picked.is_empty() {
        return f64::NAN;
    }
    picked.iter().sum::<f64>() / picked.len() as f64
}
