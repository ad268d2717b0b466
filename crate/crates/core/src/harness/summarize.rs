use super::run::{RunSummary, SUMMARY_FILE};
use crate::error::{PompError, Result};
use crate::model::fmt_f64;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

/// Band thresholds in log units below the reference log-likelihood.
pub const BANDS: [f64; 3] = [2.0, 4.0, 10.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub label: String,
    pub command: String,
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub iqr: f64,
    pub mean: f64,
    pub within_2: f64,
    pub within_4: f64,
    pub within_10: f64,
    /// Position after sorting by median, best first (1-based).
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssRow {
    pub label: String,
    pub param: String,
    /// ESS per chain, in replicate order.
    pub per_chain: Vec<f64>,
    pub mean: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// Log-likelihood the bands are measured from.
    pub reference: Option<f64>,
    /// `oracle_mle` or `best_observed`.
    pub reference_kind: String,
    pub methods: Vec<MethodStats>,
    pub ess: Vec<EssRow>,
}

impl Report {
    pub fn method(&self, label: &str) -> Option<&MethodStats> {
        self.methods.iter().find(|m| m.label == label)
    }

    pub fn ess_row(&self, label: &str, param: &str) -> Option<&EssRow> {
        self.ess.iter().find(|e| e.label == label && e.param == param)
    }
}

/// Runs found under `dirs`: each directory either holds a `summary.json`
/// itself or has run directories one level down. Labels are directory names.
pub fn collect_runs(dirs: &[PathBuf]) -> Result<Vec<(String, RunSummary)>> {
    let mut runs = Vec::new();
    for d in dirs {
        if d.join(SUMMARY_FILE).is_file() {
            runs.push((label_of(d), RunSummary::read(d)?));
            continue;
        }
        let mut subs: Vec<PathBuf> = match std::fs::read_dir(d) {
            Ok(rd) => rd.filter_map(|e| e.ok().map(|e| e.path())).collect(),
            Err(e) => return Err(PompError::InvalidArgument(format!("cannot read {}: {e}", d.display()))),
        };
        subs.sort();
        for s in subs {
            if s.join(SUMMARY_FILE).is_file() {
                runs.push((label_of(&s), RunSummary::read(&s)?));
            }
        }
    }
    if runs.is_empty() {
        return Err(PompError::InvalidArgument("no completed runs (summary.json) found".into()));
    }
    Ok(runs)
}

fn label_of(d: &Path) -> String {
    d.file_name().map_or_else(|| d.display().to_string(), |s| s.to_string_lossy().into_owned())
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Final-loglik distribution per method, band fractions and ESS tables.
pub fn summarize_runs(runs: &[(String, RunSummary)]) -> Result<Report> {
    let value = |r: &super::run::ReplicateRecord| r.oracle_loglik.or(r.loglik);
    let scored: Vec<&(String, RunSummary)> = runs
        .iter()
        .filter(|(_, s)| s.burn_in.is_none() && s.command != "simulate")
        .collect();
    let mle = runs
        .iter()
        .filter_map(|(_, s)| s.oracle_mle.as_ref().map(|m| m.loglik))
        .fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))));
    let (reference, kind) = match mle {
        Some(v) => (Some(v), "oracle_mle"),
        None => {
            let best = scored
                .iter()
                .flat_map(|(_, s)| s.replicates.iter().filter_map(value))
                .filter(|v| v.is_finite())
                .fold(None, |a: Option<f64>, b| Some(a.map_or(b, |a| a.max(b))));
            (best, "best_observed")
        }
    };
    let mut methods = Vec::new();
    for (label, s) in &scored {
        let mut vals: Vec<f64> = s.replicates.iter().filter_map(value).collect();
        if vals.is_empty() {
            continue;
        }
        vals.sort_by(|a, b| a.total_cmp(b));
        let n = vals.len();
        let frac = |k: f64| match reference {
            Some(r) => vals.iter().filter(|v| r - **v <= k).count() as f64 / n as f64,
            None => 0.0,
        };
        let (q1, q3) = (quantile(&vals, 0.25), quantile(&vals, 0.75));
        methods.push(MethodStats {
            label: label.clone(),
            command: s.command.clone(),
            n,
            median: quantile(&vals, 0.5),
            q1,
            q3,
            iqr: q3 - q1,
            mean: vals.iter().sum::<f64>() / n as f64,
            within_2: frac(BANDS[0]),
            within_4: frac(BANDS[1]),
            within_10: frac(BANDS[2]),
            rank: 0,
        });
    }
    methods.sort_by(|a, b| b.median.total_cmp(&a.median).then(b.mean.total_cmp(&a.mean)));
    for (k, m) in methods.iter_mut().enumerate() {
        m.rank = k + 1;
    }

    let mut ess = Vec::new();
    for (label, s) in runs.iter().filter(|(_, s)| s.burn_in.is_some()) {
        let mut params: Vec<String> = s
            .replicates
            .iter()
            .flat_map(|r| r.ess.iter().flat_map(|m| m.keys().cloned()))
            .collect();
        params.sort();
        params.dedup();
        for p in params {
            let per_chain: Vec<f64> = s
                .replicates
                .iter()
                .map(|r| r.ess.as_ref().and_then(|m| m.get(&p).copied()).unwrap_or(0.0))
                .collect();
            let total: f64 = per_chain.iter().sum();
            ess.push(EssRow {
                label: label.clone(),
                param: p,
                mean: total / per_chain.len() as f64,
                total,
                per_chain,
            });
        }
    }
    Ok(Report {
        reference,
        reference_kind: kind.to_string(),
        methods,
        ess,
    })
}

pub fn summarize(dirs: &[PathBuf]) -> Result<Report> {
    summarize_runs(&collect_runs(dirs)?)
}

/// Writes `bands.csv`, `ess.csv`, `final_points.csv` and `report.json` to `out`.
pub fn write_report(out: &Path, runs: &[(String, RunSummary)], report: &Report) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut w = std::fs::File::create(out.join("bands.csv"))?;
    writeln!(w, "rank,method,command,n,median,q1,q3,iqr,within_2,within_4,within_10")?;
    for m in &report.methods {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            m.rank,
            m.label,
            m.command,
            m.n,
            fmt_f64(m.median),
            fmt_f64(m.q1),
            fmt_f64(m.q3),
            fmt_f64(m.iqr),
            fmt_f64(m.within_2),
            fmt_f64(m.within_4),
            fmt_f64(m.within_10)
        )?;
    }
    let mut w = std::fs::File::create(out.join("ess.csv"))?;
    writeln!(w, "method,param,chain,ess")?;
    for e in &report.ess {
        for (c, v) in e.per_chain.iter().enumerate() {
            writeln!(w, "{},{},{},{}", e.label, e.param, c, fmt_f64(*v))?;
        }
    }
    let mut w = std::fs::File::create(out.join("final_points.csv"))?;
    writeln!(w, "method,replicate,param,start,estimate,loglik,oracle_loglik")?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for (label, s) in runs {
        for r in &s.replicates {
            for (p, v) in &r.estimate {
                let start = r.start.get(p).copied().unwrap_or(f64::NAN);
                writeln!(
                    w,
                    "{label},{},{p},{},{},{},{}",
                    r.replicate,
                    fmt_f64(start),
                    fmt_f64(*v),
                    opt(r.loglik),
                    opt(r.oracle_loglik)
                )?;
            }
        }
    }
    std::fs::write(out.join("report.json"), serde_json::to_string_pretty(report)?)?;
    Ok(())
}

/// Plain-text table for the terminal.
pub fn render(report: &Report) -> String {
    let mut s = String::new();
    if let Some(r) = report.reference {
        s.push_str(&format!("reference loglik {r:.4} ({})\n", report.reference_kind));
    }
    if !report.methods.is_empty() {
        s.push_str(&format!(
            "{:<4} {:<20} {:>4} {:>12} {:>10} {:>8} {:>8} {:>8}\n",
            "rank", "method", "n", "median", "iqr", "<=2", "<=4", "<=10"
        ));
        for m in &report.methods {
            s.push_str(&format!(
                "{:<4} {:<20} {:>4} {:>12.4} {:>10.4} {:>8.3} {:>8.3} {:>8.3}\n",
                m.rank, m.label, m.n, m.median, m.iqr, m.within_2, m.within_4, m.within_10
            ));
        }
    }
    if !report.ess.is_empty() {
        s.push_str(&format!("{:<20} {:<10} {:>10} {:>10}\n", "method", "param", "mean ESS", "total"));
        for e in &report.ess {
            s.push_str(&format!("{:<20} {:<10} {:>10.1} {:>10.1}\n", e.label, e.param, e.mean, e.total));
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::ExperimentConfig;
    use crate::harness::run::ReplicateRecord;
    use std::collections::BTreeMap;

    fn run_with(command: &str, vals: &[f64], mle: Option<f64>) -> RunSummary {
        let cfg = ExperimentConfig::from_toml_str("model = \"ou2\"\ncommand = \"if1\"\n").unwrap();
        RunSummary {
            model: "ou2".into(),
            command: command.into(),
            seed: 1,
            n_obs: 100,
            oracle_at_default: None,
            oracle_mle: mle.map(|l| super::super::run::OracleMleRecord {
                key: String::new(),
                params: BTreeMap::new(),
                loglik: l,
            }),
            burn_in: None,
            replicates: vals
                .iter()
                .enumerate()
                .map(|(k, v)| ReplicateRecord {
                    replicate: k,
                    seed: k as u64,
                    file: String::new(),
                    start: BTreeMap::new(),
                    estimate: BTreeMap::new(),
                    loglik: None,
                    oracle_loglik: Some(*v),
                    n_failures: 0,
                    wall_time_s: 0.0,
                    ess: None,
                    acceptance_rate: None,
                    posterior_mean: None,
                })
                .collect(),
            wall_time_s: 0.0,
            config: cfg,
        }
    }

    #[test]
    fn run_at_the_maximum() {
        let runs = vec![("a".to_string(), run_with("if1", &[-10.0], Some(-10.0)))];
        let r = summarize_runs(&runs).unwrap();
        assert_eq!(r.methods[0].within_2, 1.0);
        assert_eq!(r.reference_kind, "oracle_mle");
    }

    #[test]
    fn dominating_method_ranks_first() {
        let runs = vec![
            ("worse".to_string(), run_with("if1", &[-20.0, -15.0, -30.0], Some(-10.0))),
            ("better".to_string(), run_with("if2", &[-12.0, -11.0, -25.0], Some(-10.0))),
        ];
        let r = summarize_runs(&runs).unwrap();
        assert_eq!(r.methods[0].label, "better");
        assert_eq!(r.methods[1].rank, 2);
        let b = r.method("better").unwrap();
        assert!((b.within_2 - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.within_10 - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_directory_is_an_error() {
        let d = tempfile::tempdir().unwrap();
        assert!(summarize(&[d.path().to_path_buf()]).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
    }
}
