//! The online tuning loop, its comparison baselines, and evaluation metrics.
//!
//! One round: weigh exploration by template novelty, value each candidate by
//! its corrected what-if benefit and model uncertainty, sample a
//! configuration, execute the mini-workload against the ground truth, turn
//! the observed benefits into CAM labels, and retrain.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::cam::{Assessor, CamConfig, CamSet};
use crate::catalog::{Catalog, IndexCandidate};
use crate::correction::{self, cost_correction};
use crate::par::{self, Exec};
use crate::plan::{self, OpKind, PlanNode};
use crate::selection::{self, Budget, Configuration, IndexValuation};
use crate::simdb::{self, GroundTruth, Planner};
use crate::workload::{self, MiniWorkload, QueryTemplate, TemplateId};
use crate::{seed, Error, Result};

/// Bytes per second of simulated index build time.
pub const BUILD_BYTES_PER_S: f64 = 100.0 * 1024.0 * 1024.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Uncertainty-aware tuner with learned cost corrections.
    Full,
    /// Top-K by uncorrected what-if benefit, no learning.
    WhatifGreedy,
    /// Greedy with ε-uniform exploration, no learning.
    PlainEpsilonGreedy,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "full",
            Method::WhatifGreedy => "whatif_greedy",
            Method::PlainEpsilonGreedy => "plain_epsilon_greedy",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Method::Full),
            "whatif_greedy" => Ok(Method::WhatifGreedy),
            "plain_epsilon_greedy" => Ok(Method::PlainEpsilonGreedy),
            other => Err(Error::config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerConfig {
    pub rho: f64,
    pub lambda0: f64,
    pub gamma: f64,
    pub budget: Budget,
    pub per_table_cap: usize,
    pub epsilon: f64,
    pub cam: CamConfig,
}

impl Default for TunerConfig {
    fn default() -> Self {
        TunerConfig {
            rho: 0.1,
            lambda0: 0.5,
            gamma: 0.9,
            budget: Budget::Count(8),
            per_table_cap: 3,
            epsilon: 0.1,
            cam: CamConfig::default(),
        }
    }
}

impl TunerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rho >= 0.0) {
            return Err(Error::config(format!("rho {} must be >= 0", self.rho)));
        }
        selection::exploration_weight(0, 1.0, self.lambda0, self.gamma)?;
        self.budget.validate()?;
        if self.per_table_cap == 0 {
            return Err(Error::config("per_table_cap must be positive"));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(Error::config(format!("epsilon {} must be in [0, 1]", self.epsilon)));
        }
        self.cam.validate()
    }
}

/// Everything a run observes but does not control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub catalog: Catalog,
    pub templates: Vec<QueryTemplate>,
    pub ground_truth: GroundTruth,
    pub workloads: Vec<MiniWorkload>,
    /// Seed of the execution noise, shared by every method on this
    /// environment.
    pub exec_seed: u64,
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub exec_time_s: f64,
    pub noindex_time_s: f64,
    pub improvement: f64,
    pub n_new_indexes: usize,
    pub creation_s: f64,
    pub mean_uncertainty: f64,
}

pub const CSV_HEADER: &str = "round,exec_time_s,noindex_time_s,improvement,n_new_indexes,creation_s,mean_uncertainty";

impl RoundMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.round,
            self.exec_time_s,
            self.noindex_time_s,
            self.improvement,
            self.n_new_indexes,
            self.creation_s,
            self.mean_uncertainty
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_key: u64,
    pub template: TemplateId,
    pub b_c: f64,
    pub b_t: f64,
    pub exec_time_s: f64,
    pub noindex_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub kind: OpKind,
    pub table: String,
    pub omega: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    pub unseen_fraction: f64,
    pub lambda: f64,
    pub valuations: Vec<IndexValuation>,
    pub configuration: Configuration,
    pub queries: Vec<QueryOutcome>,
    pub improvement: f64,
    pub labels: Vec<LabelRecord>,
    pub mean_u_before: f64,
    pub mean_u_after: f64,
    pub metrics: RoundMetrics,
}

impl RoundReport {
    /// Mean `|b_c − b_t|` over the round's queries.
    pub fn mean_benefit_gap(&self) -> f64 {
        if self.queries.is_empty() {
            return 0.0;
        }
        self.queries.iter().map(|q| (q.b_c - q.b_t).abs()).sum::<f64>() / self.queries.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TunerState {
    pub method: Method,
    pub config: TunerConfig,
    pub exec: Exec,
    pub t: usize,
    pub cams: CamSet,
    pub seen: BTreeSet<TemplateId>,
    pub deployed: Configuration,
    pub ever_deployed: BTreeSet<(String, Vec<String>)>,
    pub log: Vec<RoundMetrics>,
    noindex_times: BTreeMap<u64, f64>,
    seed: u64,
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

impl TunerState {
    pub fn new(method: Method, c: &Catalog, config: TunerConfig, seed: u64, exec: Exec) -> Result<Self> {
        config.validate()?;
        Ok(TunerState {
            method,
            config,
            exec,
            t: 0,
            cams: CamSet::new(c, config.cam, seed::derive_str(seed, "cam"))?,
            seen: BTreeSet::new(),
            deployed: Configuration::empty(),
            ever_deployed: BTreeSet::new(),
            log: Vec::new(),
            noindex_times: BTreeMap::new(),
            seed,
        })
    }

    fn round_seed(&self, tag: &str) -> u64 {
        seed::derive(seed::derive_str(seed::derive_str(self.seed, self.method.name()), tag), self.t as u64)
    }

    fn assessor<'a>(&'a self, c: &'a Catalog, tag: &str) -> Assessor<'a> {
        Assessor::new(&self.cams, c, self.round_seed(tag))
    }

    /// Values every candidate for the full tuner.
    fn value_candidates(&self, planner: &Planner<'_>, w: &MiniWorkload, cands: &[IndexCandidate], base: &[f64], lambda: f64, assessor: &Assessor<'_>) -> Result<Vec<(f64, f64, f64)>> {
        par::map(self.exec, cands, |x| -> Result<(f64, f64, f64)> {
            let single = std::slice::from_ref(x);
            let mut costs = Vec::with_capacity(w.queries.len());
            let mut plans = Vec::new();
            for (q, c0) in w.queries.iter().zip(base) {
                let (p, _) = planner.whatif_plan(q, single)?;
                let uses = p.walk().iter().any(|(_, n)| n.index.as_ref().is_some_and(|ix| ix.same_definition(x)));
                let weight = f64::from(q.frequency_weight);
                if uses {
                    let corrected = cost_correction(&p, assessor, self.config.rho)?;
                    costs.push((weight * c0, weight * corrected.cost));
                    plans.push(p);
                } else {
                    costs.push((weight * c0, weight * c0));
                }
            }
            let eb = selection::execution_benefit(&costs)?;
            let ev = selection::exploratory_value(x, &plans, |n| Ok(assessor.assess_node(n)?.1.combined))?;
            Ok((eb, ev, selection::total_value(eb, ev, lambda)?))
        })
        .into_iter()
        .collect()
    }

    /// Uncorrected single-index benefits for the baselines.
    fn whatif_benefits(&self, planner: &Planner<'_>, w: &MiniWorkload, cands: &[IndexCandidate], base: &[f64]) -> Result<Vec<f64>> {
        par::map(self.exec, cands, |x| -> Result<f64> {
            let mut costs = Vec::with_capacity(w.queries.len());
            for (q, c0) in w.queries.iter().zip(base) {
                let (_, c) = planner.whatif_plan(q, std::slice::from_ref(x))?;
                let weight = f64::from(q.frequency_weight);
                costs.push((weight * c0, weight * c));
            }
            selection::execution_benefit(&costs)
        })
        .into_iter()
        .collect()
    }

    /// Greedy by benefit with ε-uniform exploration per slot.
    ///
    /// Slots are spent exactly like the sampled enumeration: every pick uses
    /// one of the `K` slots whether or not pruning admits it.
    fn epsilon_greedy(&self, cands: &[IndexCandidate], benefits: &[f64], epsilon: f64) -> Configuration {
        let mut rng = seed::rng(self.round_seed("select"));
        let mut remaining: Vec<usize> = (0..cands.len()).collect();
        remaining.sort_by(|a, b| benefits[*b].total_cmp(&benefits[*a]).then(a.cmp(b)));
        let slots = match self.config.budget {
            Budget::Count(k) => k,
            Budget::StorageBytes(_) => cands.len(),
        };
        let mut out = Configuration::empty();
        for _ in 0..slots {
            if remaining.is_empty() {
                break;
            }
            let pos = if epsilon > 0.0 && rng.random::<f64>() < epsilon {
                rng.random_range(0..remaining.len())
            } else if benefits[remaining[0]] > 0.0 {
                0
            } else {
                break;
            };
            let x = &cands[remaining.remove(pos)];
            if selection::prune_reason(x, &out, self.config.per_table_cap).is_some() {
                continue;
            }
            if let Budget::StorageBytes(cap) = self.config.budget {
                if out.total_size_bytes + x.estimated_size_bytes > cap {
                    continue;
                }
            }
            out.indexes.push(x.clone());
            out.total_size_bytes += x.estimated_size_bytes;
        }
        out
    }

    fn noindex_time(&mut self, planner: &Planner<'_>, env: &Environment, q: &workload::Query) -> Result<f64> {
        if let Some(t) = self.noindex_times.get(&q.key()) {
            return Ok(*t);
        }
        let (_, tel) = simdb::execute(planner, q, &[], &env.ground_truth, env.exec_seed)?;
        self.noindex_times.insert(q.key(), tel.total_time);
        Ok(tel.total_time)
    }

    fn mean_leaf_uncertainty(&self, assessor: &Assessor<'_>, plans: &[PlanNode]) -> Result<f64> {
        let mut us = Vec::new();
        for p in plans {
            for l in plan::leaves(p) {
                us.push(assessor.assess_node(p.node(&l).expect("leaf exists"))?.1.combined);
            }
        }
        Ok(mean(&us))
    }

    /// Runs one tuning round on `w`.
    pub fn run_round(&mut self, env: &Environment, w: &MiniWorkload) -> Result<RoundReport> {
        if w.queries.is_empty() {
            return Err(Error::precondition(format!("mini-workload {} is empty", w.round)));
        }
        let planner = Planner::new(&env.catalog, &env.templates);
        let unseen = workload::unseen_fraction(w, &self.seen);
        let lambda = selection::exploration_weight(self.t, 1.0 - unseen, self.config.lambda0, self.config.gamma)?;

        let cands = selection::generate_candidates(w, &env.templates, &env.catalog)?;
        let base: Vec<f64> = par::map(self.exec, &w.queries, |q| planner.whatif_plan(q, &[]).map(|(_, c)| c))
            .into_iter()
            .collect::<Result<_>>()?;

        let t0s: Vec<f64> = w.queries.iter().map(|q| self.noindex_time(&planner, env, q)).collect::<Result<_>>()?;

        let assessor = self.assessor(&env.catalog, "assess");
        let mut valuations = Vec::new();
        let config = if cands.is_empty() {
            Configuration::empty()
        } else {
            match self.method {
                Method::Full => {
                    let vals = self.value_candidates(&planner, w, &cands, &base, lambda, &assessor)?;
                    let probs = selection::selection_probabilities(&vals.iter().map(|v| v.2).collect::<Vec<_>>())?;
                    for ((x, (eb, ev, v)), pr) in cands.iter().zip(&vals).zip(&probs) {
                        valuations.push(IndexValuation { candidate: x.clone(), eb: *eb, ev: *ev, v: *v, pr: *pr });
                    }
                    let mut rng = seed::rng(self.round_seed("select"));
                    selection::enumerate_configuration(&cands, &probs, self.config.budget, self.config.per_table_cap, &mut rng)?
                }
                Method::WhatifGreedy | Method::PlainEpsilonGreedy => {
                    let eps = if self.method == Method::WhatifGreedy { 0.0 } else { self.config.epsilon };
                    let ebs = self.whatif_benefits(&planner, w, &cands, &base)?;
                    for (x, eb) in cands.iter().zip(&ebs) {
                        valuations.push(IndexValuation { candidate: x.clone(), eb: *eb, ev: 0.0, v: *eb, pr: 0.0 });
                    }
                    self.epsilon_greedy(&cands, &ebs, eps)
                }
            }
        };
        let mut config = config;
        let created: Vec<&IndexCandidate> = config.indexes.iter().filter(|x| !self.deployed.contains(x)).collect();
        let creation_s = created.iter().map(|x| x.estimated_size_bytes as f64).sum::<f64>() / BUILD_BYTES_PER_S;
        config.creation_cost_s = creation_s;
        let n_new = config
            .indexes
            .iter()
            .filter(|x| !self.ever_deployed.contains(&(x.table.clone(), x.key_columns.clone())))
            .count();

        // Execute and label.
        let executed: Vec<(PlanNode, simdb::ExecutionTelemetry)> =
            par::map(self.exec, &w.queries, |q| simdb::execute(&planner, q, &config.indexes, &env.ground_truth, env.exec_seed))
                .into_iter()
                .collect::<Result<_>>()?;
        let mut queries = Vec::with_capacity(w.queries.len());
        let mut labels = Vec::new();
        let mut label_records = Vec::new();
        let (mut exec_total, mut noindex_total) = (0.0, 0.0);
        for (((q, c0), (p, tel)), &t0) in w.queries.iter().zip(&base).zip(&executed).zip(&t0s) {
            let b_t = correction::actual_benefit(t0, tel.total_time)?;
            let c_believed = match self.method {
                Method::Full => cost_correction(p, &assessor, self.config.rho)?.cost,
                _ => p.total_cost(),
            };
            let b_c = correction::estimated_benefit(*c0, c_believed)?;
            let weight = f64::from(q.frequency_weight);
            exec_total += weight * tel.total_time;
            noindex_total += weight * t0;
            queries.push(QueryOutcome {
                query_key: q.key(),
                template: q.template,
                b_c,
                b_t,
                exec_time_s: tel.total_time,
                noindex_time_s: t0,
            });
            if self.method == Method::Full && !config.is_empty() {
                for l in correction::telemetry_to_labels(p, &config.indexes, &self.cams.omega, b_t, *c0)? {
                    let n = p.node(&l.path).expect("labeled leaf exists");
                    labels.push((n.kind, plan::encode_operator(n, &env.catalog)?.vector, l.omega_index));
                    label_records.push(LabelRecord { kind: n.kind, table: n.table.clone().unwrap_or_default(), omega: l.omega });
                }
            }
        }

        let plans: Vec<PlanNode> = executed.iter().map(|(p, _)| p.clone()).collect();
        let (mean_u_before, mean_u_after) = if self.method == Method::Full {
            let before = self.mean_leaf_uncertainty(&assessor, &plans)?;
            drop(assessor);
            if !labels.is_empty() {
                self.cams.update(&labels)?;
            }
            let after = self.mean_leaf_uncertainty(&self.assessor(&env.catalog, "assess-after"), &plans)?;
            (before, after)
        } else {
            (0.0, 0.0)
        };

        let improvement = 1.0 - exec_total / noindex_total;
        let metrics = RoundMetrics {
            round: self.t,
            exec_time_s: exec_total,
            noindex_time_s: noindex_total,
            improvement,
            n_new_indexes: n_new,
            creation_s,
            mean_uncertainty: mean_u_before,
        };
        for x in &config.indexes {
            self.ever_deployed.insert((x.table.clone(), x.key_columns.clone()));
        }
        self.seen.extend(w.template_ids());
        self.deployed = config.clone();
        self.log.push(metrics.clone());
        let report = RoundReport {
            round: self.t,
            unseen_fraction: unseen,
            lambda,
            valuations,
            configuration: config,
            queries,
            improvement,
            labels: label_records,
            mean_u_before,
            mean_u_after,
            metrics,
        };
        self.t += 1;
        Ok(report)
    }
}

/// `Σ (C(W,∅) − C(W,X)) / Σ C(W,∅)` over the log.
pub fn overall_improvement(log: &[RoundMetrics]) -> Result<f64> {
    if log.is_empty() {
        return Err(Error::precondition("empty metrics log"));
    }
    let base: f64 = log.iter().map(|m| m.noindex_time_s).sum();
    if base == 0.0 {
        return Err(Error::contract("total no-index time is zero"));
    }
    let with: f64 = log.iter().map(|m| m.exec_time_s).sum();
    Ok((base - with) / base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub method: Method,
    pub reports: Vec<RoundReport>,
}

impl RunLog {
    pub fn metrics(&self) -> Vec<RoundMetrics> {
        self.reports.iter().map(|r| r.metrics.clone()).collect()
    }

    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.reports {
            s.push_str(&r.metrics.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn jsonl(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.reports {
            s.push_str(&serde_json::to_string(r)?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Runs `method` over every mini-workload of `env`.
pub fn run_method(method: Method, env: &Environment, config: TunerConfig, seed: u64, exec: Exec) -> Result<RunLog> {
    let mut state = TunerState::new(method, &env.catalog, config, seed, exec)?;
    let mut reports = Vec::with_capacity(env.workloads.len());
    for w in &env.workloads {
        reports.push(state.run_round(env, w)?);
    }
    Ok(RunLog { method, reports })
}

/// Runs one of the learning-free baselines.
pub fn run_baseline(kind: &str, env: &Environment, config: TunerConfig, seed: u64, exec: Exec) -> Result<RunLog> {
    let method: Method = kind.parse()?;
    if method == Method::Full {
        return Err(Error::config(format!("{kind:?} is not a baseline")));
    }
    run_method(method, env, config, seed, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, CatalogSpec};
    use crate::workload::{build_schedule, generate_templates, DriftKind, DriftSchedule};

    pub(crate) fn small_env(seed: u64, rounds: usize, noise: f64) -> Environment {
        let catalog = generate_catalog(&CatalogSpec { n_tables: 4, rows_range: (5_000, 200_000), cols_per_table_range: (3, 6) }, seed).unwrap();
        let templates = generate_templates(&catalog, 6, seed).unwrap();
        let sched = DriftSchedule::new(DriftKind::Static, rounds, 4);
        let workloads = build_schedule(&templates, &sched, seed).unwrap();
        let ground_truth = simdb::make_ground_truth(&catalog, seed, noise).unwrap();
        Environment { catalog, templates, ground_truth, workloads, exec_seed: seed }
    }

    fn metrics(exec: f64, base: f64) -> RoundMetrics {
        RoundMetrics {
            round: 0,
            exec_time_s: exec,
            noindex_time_s: base,
            improvement: 1.0 - exec / base,
            n_new_indexes: 0,
            creation_s: 0.0,
            mean_uncertainty: 0.0,
        }
    }

    #[test]
    fn overall_improvement_examples() {
        assert_eq!(overall_improvement(&[metrics(100.0, 100.0)]).unwrap(), 0.0);
        assert_eq!(overall_improvement(&[metrics(50.0, 100.0), metrics(5.0, 10.0)]).unwrap(), 0.5);
        assert_eq!(overall_improvement(&[metrics(80.0, 100.0), metrics(120.0, 100.0)]).unwrap(), 0.0);
        assert!(matches!(overall_improvement(&[metrics(0.0, 0.0)]), Err(Error::Contract(_))));
        assert!(overall_improvement(&[]).is_err());
    }

    #[test]
    fn rounds_are_deterministic_and_budgeted() {
        let env = small_env(3, 3, 0.05);
        let cfg = TunerConfig::default();
        let a = run_method(Method::Full, &env, cfg, 1, Exec::Parallel).unwrap();
        let b = run_method(Method::Full, &env, cfg, 1, Exec::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reports.len(), 3);
        for r in &a.reports {
            selection::check_configuration(&r.configuration, cfg.budget, cfg.per_table_cap).unwrap();
            let s: f64 = r.valuations.iter().map(|v| v.pr).sum();
            assert!(r.valuations.is_empty() || (s - 1.0).abs() < 1e-9);
            for v in &r.valuations {
                assert_eq!(v.v, v.eb * (1.0 + r.lambda * v.ev));
            }
        }
    }

    #[test]
    fn baselines_share_workloads_and_epsilon_zero_is_greedy() {
        let env = small_env(4, 3, 0.05);
        let mut cfg = TunerConfig::default();
        let g = run_baseline("whatif_greedy", &env, cfg, 2, Exec::Parallel).unwrap();
        cfg.epsilon = 0.0;
        let e = run_baseline("plain_epsilon_greedy", &env, cfg, 2, Exec::Parallel).unwrap();
        let f = run_method(Method::Full, &env, cfg, 2, Exec::Parallel).unwrap();
        for ((a, b), c) in g.reports.iter().zip(&e.reports).zip(&f.reports) {
            assert_eq!(a.configuration, b.configuration);
            let keys = |r: &RoundReport| r.queries.iter().map(|q| q.query_key).collect::<Vec<_>>();
            assert_eq!(keys(a), keys(b));
            assert_eq!(keys(a), keys(c));
            // Same no-index calibration for every method.
            let t0 = |r: &RoundReport| r.queries.iter().map(|q| q.noindex_time_s).collect::<Vec<_>>();
            assert_eq!(t0(a), t0(c));
        }
        assert!(run_baseline("full", &env, cfg, 2, Exec::Parallel).is_err());
        assert!(run_baseline("nope", &env, cfg, 2, Exec::Parallel).is_err());
    }

    #[test]
    fn round_without_candidates_deploys_nothing() {
        let mut env = small_env(5, 1, 0.05);
        let bare = QueryTemplate {
            id: 999,
            tables: vec![env.catalog.tables[0].name.clone()],
            join_predicates: vec![],
            filter_specs: vec![],
            order_by: vec![],
            group_by: vec![],
            payload_columns: vec![],
            limit: None,
        };
        env.templates.push(bare.clone());
        let w = MiniWorkload { round: 0, queries: vec![bare.instantiate(&mut seed::rng(1), 1)] };
        let mut s = TunerState::new(Method::Full, &env.catalog, TunerConfig::default(), 1, Exec::Sequential).unwrap();
        let r = s.run_round(&env, &w).unwrap();
        assert!(r.configuration.is_empty());
        assert_eq!(r.improvement, 0.0);
        assert!(r.labels.is_empty());
        assert_eq!(s.t, 1);
        assert_eq!(s.log.len(), 1);
    }
}
