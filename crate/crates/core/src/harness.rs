//! Experiment plumbing: configs, replication runs, manifests, replay and
//! plot data.
//!
//! A run is computed fully in memory, then every artifact is written with a
//! temp-file-and-rename so a failed run never leaves half-written files. The
//! manifest records the resolved config, its hash, every derived seed and a
//! SHA-256 per artifact; [`replay`] recomputes from it and compares hashes.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::catalog::{generate_catalog, CatalogSpec};
use crate::par::{self, Exec};
use crate::selection::Budget;
use crate::tuner::{self, Environment, Method, RoundMetrics, RunLog, TunerConfig};
use crate::workload::{build_schedule, generate_templates, DriftKind, DriftSchedule, ScheduleFile};
use crate::{seed, simdb, Error, Result};

pub const MANIFEST_NAME: &str = "manifest.json";

fn default_catalog() -> CatalogSpec {
    CatalogSpec { n_tables: 8, rows_range: (10_000, 1_000_000), cols_per_table_range: (4, 8) }
}
fn default_templates() -> usize {
    20
}
fn default_noise() -> f64 {
    0.05
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}
fn default_replications() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_catalog")]
    pub catalog: CatalogSpec,
    #[serde(default = "default_templates")]
    pub n_templates: usize,
    #[serde(default)]
    pub schedule: DriftSchedule,
    /// Pre-built templates and rounds; replaces generation when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule_file: Option<PathBuf>,
    #[serde(default)]
    pub tuner: TunerConfig,
    #[serde(default = "default_noise")]
    pub noise_sigma: f64,
    /// Fixed ground-truth seed shared by all replications; derived per
    /// replication when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth_seed: Option<u64>,
    /// Overrides `tuner.budget`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<Budget>,
    #[serde(default)]
    pub baselines: Vec<Method>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "default_replications")]
    pub replications: Vec<u64>,
    #[serde(default)]
    pub exec: Exec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            catalog: default_catalog(),
            n_templates: default_templates(),
            schedule: DriftSchedule::default(),
            schedule_file: None,
            tuner: TunerConfig::default(),
            noise_sigma: default_noise(),
            ground_truth_seed: None,
            budget: None,
            baselines: Vec::new(),
            out_dir: default_out(),
            replications: default_replications(),
            exec: Exec::default(),
        }
    }
}

/// Command-line overrides applied after parsing.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub schedule: Option<DriftKind>,
}

impl ExperimentConfig {
    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.replications = vec![s];
        }
        if let Some(out) = &o.out {
            self.out_dir = out.clone();
        }
        if let Some(k) = o.schedule {
            self.schedule.kind = k;
        }
    }

    /// Tuner settings with the top-level budget folded in.
    pub fn tuner_config(&self) -> TunerConfig {
        let mut t = self.tuner;
        if let Some(b) = self.budget {
            t.budget = b;
        }
        t
    }

    /// Methods in run order: the full tuner, then baselines.
    pub fn methods(&self) -> Vec<Method> {
        let mut m = vec![Method::Full];
        for b in &self.baselines {
            if !m.contains(b) {
                m.push(*b);
            }
        }
        m
    }

    /// Validates and names the offending key on failure.
    fn check(&self) -> std::result::Result<(), (&'static str, Error)> {
        if self.replications.is_empty() {
            return Err(("replications", Error::config("replications must list at least one seed")));
        }
        let mut seen = self.replications.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.replications.len() {
            return Err(("replications", Error::config("replications contain a duplicate seed")));
        }
        if self.baselines.contains(&Method::Full) {
            return Err(("baselines", Error::config("\"full\" is the tuner itself, not a baseline")));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(("noise_sigma", Error::config(format!("noise_sigma {} must be finite and >= 0", self.noise_sigma))));
        }
        if self.n_templates == 0 {
            return Err(("n_templates", Error::config("n_templates must be positive")));
        }
        if self.schedule_file.is_none() {
            self.schedule.validate().map_err(|e| ("schedule", e))?;
            let need = self.schedule.templates_needed();
            if need > self.n_templates {
                return Err((
                    "n_templates",
                    Error::config(format!("schedule needs {need} distinct templates but n_templates is {}", self.n_templates)),
                ));
            }
        }
        self.tuner_config().validate().map_err(|e| ("tuner", e))?;
        if self.catalog.n_tables == 0 {
            return Err(("catalog", Error::config("catalog needs n_tables >= 1")));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.check().map_err(|(_, e)| e)
    }

    /// Hex SHA-256 of the config with output placement and execution mode
    /// blanked, neither of which affects results.
    pub fn hash(&self) -> Result<String> {
        let mut canon = self.clone();
        canon.out_dir = PathBuf::new();
        canon.exec = Exec::default();
        Ok(sha256_hex(&serde_json::to_vec(&canon)?))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// First line that starts with `key` as a TOML key, TOML table or JSON key.
fn line_of_key(text: &str, key: &str) -> usize {
    let quoted = format!("\"{key}\"");
    text.lines()
        .position(|l| {
            let l = l.trim_start().trim_start_matches('[');
            l.starts_with(&quoted) || (l.starts_with(key) && l[key.len()..].trim_start().starts_with(['=', ']', '.']))
        })
        .map_or(1, |i| i + 1)
}

/// Parses a TOML or JSON (by `.json` extension) config from `text`.
///
/// Errors carry `path:line:` prefixes.
pub fn parse_config(text: &str, path: &Path) -> Result<ExperimentConfig> {
    let shown = path.display();
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let mut cfg: ExperimentConfig = if is_json {
        serde_json::from_str(text).map_err(|e| Error::config(format!("{shown}:{}: {e}", e.line())))?
    } else {
        toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(1, |s| line_of_offset(text, s.start));
            Error::config(format!("{shown}:{line}: {}", e.message()))
        })?
    };
    if let Some(f) = &cfg.schedule_file {
        if f.is_relative() {
            cfg.schedule_file = Some(path.parent().unwrap_or(Path::new(".")).join(f));
        }
    }
    cfg.check().map_err(|(key, e)| {
        let msg = match e {
            Error::Config(m) => m,
            other => other.to_string(),
        };
        Error::config(format!("{shown}:{}: {msg}", line_of_key(text, key)))
    })?;
    Ok(cfg)
}

/// Reads, parses, overrides and re-validates a config file.
pub fn load_config(path: &Path, o: &Overrides) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = parse_config(&text, path)?;
    cfg.apply(o);
    cfg.check().map_err(|(key, e)| Error::config(format!("{}: override of {key}: {e}", path.display())))?;
    Ok(cfg)
}

/// Every seed a replication uses, all derived from its replication seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplicationSeeds {
    pub replication: u64,
    pub catalog: u64,
    pub templates: u64,
    pub schedule: u64,
    pub ground_truth: u64,
    pub exec: u64,
    pub tuner: u64,
}

impl ReplicationSeeds {
    pub fn derive(cfg: &ExperimentConfig, r: u64) -> Self {
        ReplicationSeeds {
            replication: r,
            catalog: seed::derive_str(r, "catalog"),
            templates: seed::derive_str(r, "templates"),
            schedule: seed::derive_str(r, "schedule"),
            ground_truth: cfg.ground_truth_seed.unwrap_or_else(|| seed::derive_str(r, "ground-truth")),
            exec: seed::derive_str(r, "exec"),
            tuner: seed::derive_str(r, "tuner"),
        }
    }
}

/// Builds the environment a replication runs against.
pub fn build_environment(cfg: &ExperimentConfig, s: &ReplicationSeeds) -> Result<Environment> {
    let catalog = generate_catalog(&cfg.catalog, s.catalog)?;
    let (templates, workloads) = match &cfg.schedule_file {
        Some(path) => {
            let f = ScheduleFile::from_json(&fs::read_to_string(path)?)?;
            for t in &f.templates {
                t.validate(&catalog)?;
            }
            (f.templates, f.rounds)
        }
        None => {
            let templates = generate_templates(&catalog, cfg.n_templates, s.templates)?;
            let workloads = build_schedule(&templates, &cfg.schedule, s.schedule)?;
            (templates, workloads)
        }
    };
    let ground_truth = simdb::make_ground_truth(&catalog, s.ground_truth, cfg.noise_sigma)?;
    Ok(Environment { catalog, templates, ground_truth, workloads, exec_seed: s.exec })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Path relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_improvement: f64,
    pub stdev_improvement: f64,
    /// `(replication seed, overall improvement)`.
    pub per_replication: Vec<(u64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub replications: Vec<ReplicationSeeds>,
    pub artifacts: Vec<Artifact>,
    pub summary: Vec<MethodSummary>,
}

/// A computed but unwritten run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub files: Vec<(String, Vec<u8>)>,
    pub logs: Vec<(u64, RunLog)>,
    pub manifest: Manifest,
}

fn artifact_stem(method: Method, r: u64) -> String {
    format!("{}-s{r}", method.name())
}

fn mean_stdev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every (replication, method) pair in memory. `jobs` bounds the worker
/// pool when parallel execution is available.
pub fn execute(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunOutput> {
    cfg.validate()?;
    let methods = cfg.methods();
    let tcfg = cfg.tuner_config();
    let seeds: Vec<ReplicationSeeds> = cfg.replications.iter().map(|r| ReplicationSeeds::derive(cfg, *r)).collect();
    let per_rep: Vec<Result<Vec<RunLog>>> = par::with_jobs(jobs, || {
        par::map(cfg.exec, &seeds, |s| {
            let env = build_environment(cfg, s)?;
            par::map(cfg.exec, &methods, |m| tuner::run_method(*m, &env, tcfg, s.tuner, cfg.exec)).into_iter().collect()
        })
    });

    let mut files = Vec::new();
    let mut logs = Vec::new();
    for (s, runs) in seeds.iter().zip(per_rep) {
        for log in runs? {
            let stem = artifact_stem(log.method, s.replication);
            files.push((format!("{stem}.csv"), log.csv().into_bytes()));
            files.push((format!("{stem}.jsonl"), log.jsonl()?.into_bytes()));
            logs.push((s.replication, log));
        }
    }
    let mut summary = Vec::new();
    for m in &methods {
        let per: Vec<(u64, f64)> = logs
            .iter()
            .filter(|(_, l)| l.method == *m)
            .map(|(r, l)| tuner::overall_improvement(&l.metrics()).map(|v| (*r, v)))
            .collect::<Result<_>>()?;
        let (mean, sd) = mean_stdev(&per.iter().map(|p| p.1).collect::<Vec<_>>());
        summary.push(MethodSummary { method: *m, mean_improvement: mean, stdev_improvement: sd, per_replication: per });
    }
    let artifacts = files
        .iter()
        .map(|(p, b)| Artifact { path: p.clone(), sha256: sha256_hex(b), bytes: b.len() as u64 })
        .collect();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: cfg.hash()?,
        config: cfg.clone(),
        replications: seeds,
        artifacts,
        summary,
    };
    Ok(RunOutput { files, logs, manifest })
}

/// Writes `bytes` to `path` through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().ok_or_else(|| Error::precondition(format!("{} has no file name", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}

/// Writes a computed run under `out` and returns the manifest path.
pub fn write_output(out: &RunOutput, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    for (name, bytes) in &out.files {
        write_atomic(&dir.join(name), bytes)?;
    }
    let path = dir.join(MANIFEST_NAME);
    write_atomic(&path, serde_json::to_string_pretty(&out.manifest)?.as_bytes())?;
    Ok(path)
}

/// `run`: execute then write everything under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: Option<usize>) -> Result<RunOutput> {
    let out = execute(cfg, jobs)?;
    write_output(&out, &cfg.out_dir)?;
    Ok(out)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::config(format!("{}:{}: {e}", path.display(), e.line())))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub matched: usize,
    /// Artifacts whose recomputed hash differs or that were not produced.
    pub mismatched: Vec<String>,
    pub config_hash_ok: bool,
}

impl ReplayReport {
    pub fn ok(&self) -> bool {
        self.mismatched.is_empty() && self.config_hash_ok
    }
}

/// Recomputes a manifest's run and compares every artifact hash. With `out`,
/// the recomputed artifacts are also written there.
pub fn replay(manifest_path: &Path, jobs: Option<usize>, out: Option<&Path>) -> Result<ReplayReport> {
    let m = read_manifest(manifest_path)?;
    let run = execute(&m.config, jobs)?;
    let mut report = ReplayReport { matched: 0, mismatched: Vec::new(), config_hash_ok: run.manifest.config_hash == m.config_hash };
    for a in &m.artifacts {
        match run.manifest.artifacts.iter().find(|b| b.path == a.path) {
            Some(b) if b.sha256 == a.sha256 => report.matched += 1,
            _ => report.mismatched.push(a.path.clone()),
        }
    }
    if let Some(dir) = out {
        write_output(&run, dir)?;
    }
    Ok(report)
}

/// Parses a metrics CSV written by [`RunLog::csv`].
pub fn parse_metrics_csv(text: &str) -> Result<Vec<RoundMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(tuner::CSV_HEADER) {
        return Err(Error::contract("unexpected metrics CSV header"));
    }
    let bad = |i: usize| Error::contract(format!("malformed metrics CSV row {}", i + 2));
    lines
        .enumerate()
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad(i));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(i));
            let int = |k: usize| f[k].parse::<usize>().map_err(|_| bad(i));
            Ok(RoundMetrics {
                round: int(0)?,
                exec_time_s: num(1)?,
                noindex_time_s: num(2)?,
                improvement: num(3)?,
                n_new_indexes: int(4)?,
                creation_s: num(5)?,
                mean_uncertainty: num(6)?,
            })
        })
        .collect()
}

/// A labeled series of runs, one metrics log per replication.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub runs: Vec<Vec<RoundMetrics>>,
}

/// One `(file name, TSV)` per series with `round<TAB>improvement` rows, the
/// improvement averaged over replications. Negative values are kept.
pub fn emit_plot_data(summary: &[Series]) -> Result<Vec<(String, String)>> {
    if summary.is_empty() {
        return Err(Error::precondition("nothing to plot"));
    }
    summary
        .iter()
        .map(|s| {
            let rounds = s.runs.iter().map(Vec::len).max().unwrap_or(0);
            let mut tsv = String::from("# round\timprovement\n");
            for r in 0..rounds {
                let vals: Vec<f64> = s.runs.iter().filter_map(|run| run.get(r)).map(|m| m.improvement).collect();
                tsv.push_str(&format!("{r}\t{}\n", vals.iter().sum::<f64>() / vals.len() as f64));
            }
            Ok((format!("{}.tsv", s.label), tsv))
        })
        .collect()
}

/// Plain-text table: one line per (label, method).
pub fn summary_table(rows: &[(String, MethodSummary)]) -> String {
    let mut s = format!("{:<24} {:<22} {:>4}  {}\n", "run", "method", "n", "improvement (mean ± sd)");
    for (label, m) in rows {
        s.push_str(&format!(
            "{:<24} {:<22} {:>4}  {:.4} ± {:.4}\n",
            label,
            m.method.name(),
            m.per_replication.len(),
            m.mean_improvement,
            m.stdev_improvement
        ));
    }
    s
}

/// Reads run directories, checks artifact hashes, writes one plot TSV per
/// method (prefixed by directory name when several are given) into `out`,
/// and returns the summary table.
pub fn compare(dirs: &[PathBuf], out: &Path) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::config("compare needs at least one run directory"));
    }
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for (i, dir) in dirs.iter().enumerate() {
        let m = read_manifest(&dir.join(MANIFEST_NAME))?;
        let label = if dirs.len() == 1 {
            String::new()
        } else {
            let base = dir.file_name().map_or_else(|| format!("run{i}"), |n| n.to_string_lossy().into_owned());
            format!("{base}-")
        };
        for summary in &m.summary {
            let mut runs = Vec::new();
            for (r, _) in &summary.per_replication {
                let name = format!("{}.csv", artifact_stem(summary.method, *r));
                let bytes = fs::read(dir.join(&name))?;
                let recorded = m.artifacts.iter().find(|a| a.path == name);
                if recorded.is_none_or(|a| a.sha256 != sha256_hex(&bytes)) {
                    return Err(Error::contract(format!("{} does not match its manifest checksum", dir.join(&name).display())));
                }
                runs.push(parse_metrics_csv(&String::from_utf8_lossy(&bytes))?);
            }
            series.push(Series { label: format!("{label}{}", summary.method.name()), runs });
            rows.push((dir.display().to_string(), summary.clone()));
        }
    }
    fs::create_dir_all(out)?;
    for (name, tsv) in emit_plot_data(&series)? {
        write_atomic(&out.join(name), tsv.as_bytes())?;
    }
    Ok(summary_table(&rows))
}

/// Process exit status for an error: 2 for configuration problems, 3 for
/// I/O, 1 otherwise.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Io(_) => 3,
        _ => 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            catalog: CatalogSpec { n_tables: 3, rows_range: (5_000, 50_000), cols_per_table_range: (3, 5) },
            n_templates: 6,
            ..Default::default()
        };
        c.schedule.total_rounds = 3;
        c.schedule.templates_per_round = 4;
        c
    }

    #[test]
    fn minimal_toml_resolves_defaults() {
        let text = "noise_sigma = 0.05\nreplications = [0]\nout_dir = \"runs\"\n[schedule]\nkind = \"static\"\n";
        let c = parse_config(text, Path::new("x.toml")).unwrap();
        assert_eq!(c.catalog, default_catalog());
        assert_eq!(c.tuner, TunerConfig::default());
        assert_eq!(c.schedule, DriftSchedule::default());
        assert_eq!(c.methods(), vec![Method::Full]);
    }

    #[test]
    fn json_and_toml_agree() {
        let t = parse_config("replications = [3, 4]\nbaselines = [\"whatif_greedy\"]\n", Path::new("a.toml")).unwrap();
        let j = parse_config("{\"replications\": [3, 4], \"baselines\": [\"whatif_greedy\"]}", Path::new("a.json")).unwrap();
        assert_eq!(t, j);
    }

    #[test]
    fn errors_name_the_line() {
        let e = parse_config("noise_sigma = 0.05\n\nreplications = []\n", Path::new("c.toml")).unwrap_err();
        assert!(e.to_string().contains("c.toml:3:"), "{e}");
        let e = parse_config("noise_sigma = 0.05\nbogus = 1\n", Path::new("c.toml")).unwrap_err();
        assert!(e.to_string().contains("c.toml:2:"), "{e}");
        let e = parse_config("noise_sigma = \n", Path::new("c.toml")).unwrap_err();
        assert!(e.to_string().contains("c.toml:1:"), "{e}");
        let e = parse_config("{\n\"noise_sigma\": -1\n}", Path::new("c.json")).unwrap_err();
        assert!(e.to_string().contains("c.json:2:"), "{e}");
        assert_eq!(exit_code(&e), 2);
    }

    #[test]
    fn overrides_apply() {
        let mut c = tiny();
        c.apply(&Overrides { seed: Some(9), out: Some("o".into()), schedule: Some(DriftKind::Periodic) });
        assert_eq!(c.replications, vec![9]);
        assert_eq!(c.out_dir, PathBuf::from("o"));
        assert_eq!(c.schedule.kind, DriftKind::Periodic);
    }

    #[test]
    fn hash_ignores_placement() {
        let a = tiny();
        let mut b = tiny();
        b.out_dir = "elsewhere".into();
        b.exec = Exec::Sequential;
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.noise_sigma = 0.2;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }

    #[test]
    fn execution_modes_agree() {
        let mut a = tiny();
        a.baselines = vec![Method::WhatifGreedy];
        let mut b = a.clone();
        b.exec = Exec::Sequential;
        let (x, y) = (execute(&a, None).unwrap(), execute(&b, Some(1)).unwrap());
        assert_eq!(x.files, y.files);
        assert_eq!(x.manifest.artifacts.len(), 4);
    }

    #[test]
    fn plot_data_rows_and_signs() {
        let m = |r: usize, v: f64| RoundMetrics {
            round: r,
            exec_time_s: 1.0,
            noindex_time_s: 1.0,
            improvement: v,
            n_new_indexes: 0,
            creation_s: 0.0,
            mean_uncertainty: 0.0,
        };
        let zeros = Series { label: "z".into(), runs: vec![(0..20).map(|r| m(r, 0.0)).collect()] };
        let neg = Series { label: "n".into(), runs: vec![vec![m(0, -0.25), m(1, 0.5)]] };
        let out = emit_plot_data(&[zeros, neg]).unwrap();
        assert_eq!(out[0].1.lines().filter(|l| !l.starts_with('#')).count(), 20);
        assert!(out[0].1.lines().skip(1).all(|l| l.ends_with("\t0")));
        assert!(out[1].1.contains("0\t-0.25"));
        assert!(emit_plot_data(&[]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let out = execute(&tiny(), None).unwrap();
        let log = &out.logs[0].1;
        assert_eq!(parse_metrics_csv(&log.csv()).unwrap(), log.metrics());
    }
}
