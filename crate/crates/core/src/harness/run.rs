use super::config::{Command, ExperimentConfig};
use super::registry::{RegisteredModel, Registry};
use crate::bayes::{pif, pmmh, ProposalSpec};
use crate::error::{PompError, Result};
use crate::filter::{pfilter, FilterOptions};
use crate::model::{fmt_f64, simulate, ModelSpec, ParamVector, TimeSeriesData};
use crate::optimizers::{
    aif, avif, if1, if2, is2, momentum_mif, AccelSequences, AvifOptions, Is2Options, IteratedOptions,
    OptimizerTrace, PerturbationSpec,
};
use crate::rng::RngStream;
use crate::smoother::{psmooth, SmoothOptions, SmoothResult};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const SUMMARY_FILE: &str = "summary.json";
pub const ORACLE_MLE_FILE: &str = "oracle_mle.json";

/// Outcome of one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate: usize,
    pub seed: u64,
    pub file: String,
    pub start: BTreeMap<String, f64>,
    /// Final estimate (optimizers), last sample (samplers) or the evaluated
    /// point (filters).
    pub estimate: BTreeMap<String, f64>,
    /// The algorithm's own log-likelihood estimate.
    pub loglik: Option<f64>,
    /// Exact log-likelihood at `estimate`, where the model has an oracle.
    pub oracle_loglik: Option<f64>,
    pub n_failures: usize,
    pub wall_time_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ess: Option<BTreeMap<String, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acceptance_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub posterior_mean: Option<BTreeMap<String, f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleMleRecord {
    /// Identifies the data and base parameters the maximum belongs to.
    pub key: String,
    pub params: BTreeMap<String, f64>,
    pub loglik: f64,
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub model: String,
    pub command: String,
    pub seed: u64,
    pub n_obs: usize,
    /// Exact log-likelihood at the model's default parameters.
    pub oracle_at_default: Option<f64>,
    pub oracle_mle: Option<OracleMleRecord>,
    pub burn_in: Option<usize>,
    pub replicates: Vec<ReplicateRecord>,
    pub wall_time_s: f64,
    pub config: ExperimentConfig,
}

impl RunSummary {
    pub fn read(dir: impl AsRef<Path>) -> Result<Self> {
        let f = File::open(dir.as_ref().join(SUMMARY_FILE))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

fn named(names: &[String], v: &[f64]) -> BTreeMap<String, f64> {
    names.iter().cloned().zip(v.iter().copied()).collect()
}

/// Parameters the run starts from: model defaults with `params` applied.
fn base_params(cfg: &ExperimentConfig, entry: &RegisteredModel) -> Vec<f64> {
    let mut v = entry.defaults.clone();
    for (k, x) in &cfg.params {
        if let Some(i) = entry.model.param_index(k) {
            v[i] = *x;
        }
    }
    v
}

fn load_data(cfg: &ExperimentConfig, entry: &RegisteredModel) -> Result<(ModelSpec, TimeSeriesData)> {
    match &cfg.data {
        Some(path) => {
            let data = TimeSeriesData::read_csv_path(path)?;
            let model = entry.model.clone().with_times(entry.model.t0, data.times().to_vec())?;
            Ok((model, data))
        }
        None => {
            let model = sim_model(cfg, entry)?;
            let theta = ParamVector::for_model(&model, entry.defaults.clone())?;
            let (data, _) = simulate(&model, &theta, &RngStream::new(cfg.data_seed))?;
            Ok((model, data))
        }
    }
}

fn sim_model(cfg: &ExperimentConfig, entry: &RegisteredModel) -> Result<ModelSpec> {
    let t0 = entry.model.t0;
    let times = (1..=cfg.n_obs).map(|k| t0 + k as f64).collect();
    entry.model.clone().with_times(t0, times)
}

fn data_key(data: &TimeSeriesData, base: &[f64]) -> String {
    let vals: Vec<String> = data.values().iter().chain(base).map(|v| fmt_f64(*v)).collect();
    // FNV-1a over the formatted values.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in vals.join(",").bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{}:{h:016x}", data.len())
}

/// Oracle MLE, computed once and cached in the run directory.
fn oracle_mle(
    dir: &Path,
    entry: &RegisteredModel,
    data: &TimeSeriesData,
    base: &[f64],
) -> Result<Option<OracleMleRecord>> {
    let Some(f) = entry.oracle_mle else { return Ok(None) };
    let key = data_key(data, base);
    let path = dir.join(ORACLE_MLE_FILE);
    if let Ok(file) = File::open(&path) {
        if let Ok(rec) = serde_json::from_reader::<_, OracleMleRecord>(std::io::BufReader::new(file)) {
            if rec.key == key {
                return Ok(Some(rec));
            }
        }
    }
    let (v, ll) = f(base, data)?;
    let rec = OracleMleRecord {
        key,
        params: named(&entry.model.param_names, &v),
        loglik: ll,
    };
    write_atomic(&path, serde_json::to_string_pretty(&rec)?.as_bytes())?;
    Ok(Some(rec))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn iterated_options(cfg: &ExperimentConfig, model: &ModelSpec, filter: FilterOptions) -> Result<IteratedOptions> {
    let pc = cfg
        .perturbation
        .as_ref()
        .ok_or_else(|| PompError::Validation(vec!["missing [perturbation] section".into()]))?;
    let m = cfg.algorithm.iterations.unwrap_or(1);
    let scales: Vec<(&str, f64)> = pc.sigma.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let pert = PerturbationSpec::for_model(model, &scales, pc.cooling_rate(m), pc.init_multiplier)?
        .with_lag(cfg.algorithm.lag);
    let mut o = IteratedOptions::new(m, cfg.algorithm.particles.unwrap_or(1), pert);
    o.filter = filter;
    Ok(o)
}

fn proposal(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<ProposalSpec> {
    let pc = cfg
        .proposal
        .as_ref()
        .ok_or_else(|| PompError::Validation(vec!["missing [proposal] section".into()]))?;
    let scales: Vec<(&str, f64)> = pc.scales.iter().map(|(k, v)| (k.as_str(), *v)).collect();
    let mut p = ProposalSpec::for_model(model, &scales)?.with_epsilon(pc.epsilon);
    p.score_particles = pc.score_particles;
    if let Some(f) = pc.score_walk_fraction {
        p.score_walk_fraction = f;
    }
    if let Some(c) = pc.score_init_multiplier {
        p.score_init_multiplier = c;
    }
    Ok(p)
}

fn write_smooth_csv<W: Write>(r: &SmoothResult, mut w: W, comments: &[String]) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let dx = r.state_means.cols();
    let mut header = vec!["n".to_string(), "cond_loglik".to_string()];
    header.extend((1..=dx).map(|i| format!("x_smooth_{i}")));
    header.extend((1..=dx).map(|i| format!("x_smooth_var_{i}")));
    header.extend((1..=dx).map(|i| format!("x_filter_{i}")));
    writeln!(w, "{}", header.join(","))?;
    for n in 0..r.cond_loglik.len() {
        let mut line = format!("{},{}", n + 1, fmt_f64(r.cond_loglik[n]));
        let row = r.state_means.row(n).iter().chain(r.state_vars.row(n)).chain(r.filter_state_means.row(n));
        for v in row {
            line.push(',');
            line.push_str(&fmt_f64(*v));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    entry: &'a RegisteredModel,
    model: ModelSpec,
    data: TimeSeriesData,
    base: Vec<f64>,
    dir: PathBuf,
    config_json: String,
}

impl Context<'_> {
    fn oracle(&self, theta: &[f64]) -> Option<f64> {
        self.entry.oracle.and_then(|f| f(theta, &self.data).ok())
    }

    fn replicate(&self, r: usize) -> Result<ReplicateRecord> {
        let t = Instant::now();
        let cfg = self.cfg;
        let seed = cfg.seed ^ r as u64;
        let rng = RngStream::new(seed);
        let names = &self.model.param_names;
        let mut theta = self.base.clone();
        {
            let mut g = rng.substream("start").generator();
            for (k, [lo, hi]) in &cfg.replicates.start_box {
                if let Some(i) = self.model.param_index(k) {
                    theta[i] = lo + (hi - lo) * g.gen::<f64>();
                }
            }
        }
        let theta0 = ParamVector::for_model(&self.model, theta.clone())?;
        let file = format!("rep_{r:03}.csv");
        let comments = vec![
            format!("config: {}", self.config_json),
            format!("seed: {seed}"),
            format!("replicate: {r}"),
        ];
        let mut w = BufWriter::new(File::create(self.dir.join(&file))?);
        let filter = FilterOptions {
            max_fail: cfg.algorithm.max_fail,
            ..Default::default()
        };
        let j = cfg.algorithm.particles.unwrap_or(1);
        let mut rec = ReplicateRecord {
            replicate: r,
            seed,
            file,
            start: named(names, &theta),
            estimate: named(names, &theta),
            loglik: None,
            oracle_loglik: None,
            n_failures: 0,
            wall_time_s: 0.0,
            ess: None,
            acceptance_rate: None,
            posterior_mean: None,
        };
        let mut estimate = theta.clone();
        match cfg.command {
            Command::Simulate => {
                let model = sim_model(cfg, self.entry)?;
                let (data, _) = simulate(&model, &theta0, &rng)?;
                data.write_csv(&mut w, &comments)?;
                rec.oracle_loglik = self.entry.oracle.and_then(|f| f(&theta, &data).ok());
            }
            Command::Kalman => {
                let f = self.entry.oracle.ok_or_else(|| PompError::Unsupported("model has no oracle".into()))?;
                let ll = f(&theta, &self.data)?;
                for c in &comments {
                    writeln!(w, "# {c}")?;
                }
                writeln!(w, "loglik\n{}", fmt_f64(ll))?;
                rec.loglik = Some(ll);
            }
            Command::Pfilter => {
                let res = pfilter(&self.model, &theta0, &self.data, j, &rng, &filter)?;
                res.write_csv(&mut w, &comments)?;
                rec.loglik = Some(res.loglik);
                rec.n_failures = res.n_failures;
            }
            Command::Psmooth => {
                let opts = SmoothOptions {
                    filter,
                    ..Default::default()
                };
                let res = psmooth(&self.model, &theta0, &self.data, j, cfg.algorithm.lag, &rng, &opts)?;
                write_smooth_csv(&res, &mut w, &comments)?;
                rec.loglik = Some(res.loglik);
                rec.n_failures = res.n_failures;
            }
            Command::Pmmh | Command::Pif => {
                let prop = proposal(cfg, &self.model)?;
                let m = cfg.algorithm.iterations.unwrap_or(1);
                let chain = if cfg.command == Command::Pmmh {
                    pmmh(&self.model, &theta0, &self.data, m, j, &prop, &filter, &rng)?
                } else {
                    pif(&self.model, &theta0, &self.data, m, j, &prop, &filter, &rng)?
                };
                chain.write_csv(&mut w, &comments)?;
                let burn = cfg.algorithm.burn_in;
                let ess = chain.ess(burn)?;
                let active = prop.active();
                rec.ess = Some(active.iter().map(|&i| (names[i].clone(), ess[i])).collect());
                rec.acceptance_rate = Some(chain.acceptance_rate());
                rec.posterior_mean = Some(
                    (0..names.len())
                        .map(|i| {
                            let t = chain.trace(i, burn);
                            (names[i].clone(), t.iter().sum::<f64>() / t.len() as f64)
                        })
                        .collect(),
                );
                estimate = chain.samples.row(chain.len() - 1).to_vec();
                rec.loglik = chain.loglik.last().copied();
            }
            cmd => {
                let trace = self.optimize(cmd, &theta0, filter, &rng)?;
                trace.write_csv(&mut w, &comments)?;
                estimate = trace.estimate().values().to_vec();
                rec.loglik = trace.loglik.last().copied();
                rec.n_failures = trace.n_failures.iter().sum();
            }
        }
        w.flush()?;
        if cfg.command != Command::Simulate {
            rec.oracle_loglik = self.oracle(&estimate);
        }
        rec.estimate = named(names, &estimate);
        rec.wall_time_s = t.elapsed().as_secs_f64();
        Ok(rec)
    }

    fn optimize(
        &self,
        cmd: Command,
        theta0: &ParamVector,
        filter: FilterOptions,
        rng: &RngStream,
    ) -> Result<OptimizerTrace> {
        let (model, data, alg) = (&self.model, &self.data, &self.cfg.algorithm);
        let opts = iterated_options(self.cfg, model, filter)?;
        match cmd {
            Command::If1 => if1(model, theta0, data, &opts, rng),
            Command::If2 => if2(model, theta0, data, &opts, rng),
            Command::Momentum => momentum_mif(model, theta0, data, &opts, alg.gamma.unwrap_or(0.0), rng),
            Command::Avif => {
                let a = AvifOptions {
                    k_start: alg.k_start,
                    telescoped: alg.telescoped,
                };
                avif(model, theta0, data, &opts, &a, rng)
            }
            Command::Aif => {
                let seqs = match &alg.sequences {
                    Some(s) => s.clone(),
                    None => AccelSequences::standard(opts.iterations, alg.lambda0.unwrap_or(1.0)),
                };
                aif(model, theta0, data, &opts, &seqs, rng)
            }
            Command::Is2 => {
                let g = Is2Options {
                    form: alg.is2_form,
                    ..Default::default()
                };
                is2(model, theta0, data, &opts, &g, rng)
            }
            other => Err(PompError::Unsupported(format!("{} is not an optimizer", other.name()))),
        }
    }
}

/// Runs every replicate of `cfg`, writing `rep_<r>.csv` files and
/// `summary.json` into the output directory.
pub fn run(cfg: &ExperimentConfig, registry: &Registry) -> Result<RunSummary> {
    cfg.validate(registry, None)?;
    let entry = registry.get(&cfg.model).expect("validated model");
    let started = Instant::now();
    let (model, data) = load_data(cfg, entry)?;
    cfg.validate(registry, Some(data.len()))?;
    let dir = cfg.out_dir();
    std::fs::create_dir_all(&dir)?;
    let base = base_params(cfg, entry);
    let mle = if cfg.command.is_optimizer() {
        oracle_mle(&dir, entry, &data, &base)?
    } else {
        None
    };
    let ctx = Context {
        cfg,
        entry,
        model,
        data,
        base,
        dir: dir.clone(),
        config_json: serde_json::to_string(cfg)?,
    };
    let jobs = cfg
        .replicates
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PompError::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let records: Vec<ReplicateRecord> = pool.install(|| {
        (0..cfg.replicates.count)
            .into_par_iter()
            .map(|r| {
                let rec = ctx.replicate(r);
                if let Ok(x) = &rec {
                    log::info!("replicate {r} done in {:.2}s", x.wall_time_s);
                }
                rec
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let summary = RunSummary {
        model: cfg.model.clone(),
        command: cfg.command.name().to_string(),
        seed: cfg.seed,
        n_obs: ctx.data.len(),
        oracle_at_default: ctx.oracle(&entry.defaults),
        oracle_mle: mle,
        burn_in: cfg.command.is_sampler().then_some(cfg.algorithm.burn_in),
        replicates: records,
        wall_time_s: started.elapsed().as_secs_f64(),
        config: cfg.clone(),
    };
    write_atomic(&dir.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    Ok(summary)
}
