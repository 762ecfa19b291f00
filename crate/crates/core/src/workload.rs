//! Query templates and drifting mini-workload schedules.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ColumnKind, ColumnRef};
use crate::plan::{CmpOp, Literal};
use crate::seed;
use crate::{Error, Result};

pub type TemplateId = u32;

/// Distribution a filter literal is drawn from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiteralSampler {
    /// Uniform real in `[lo, hi]`.
    Numeric { lo: f64, hi: f64 },
    /// Uniform cardinality rank in `[lo, hi]`.
    Token { lo: u64, hi: u64 },
}

impl LiteralSampler {
    pub fn sample(&self, rng: &mut seed::Rng) -> Literal {
        match *self {
            LiteralSampler::Numeric { lo, hi } => {
                if hi > lo {
                    Literal::Num(rng.random_range(lo..=hi))
                } else {
                    Literal::Num(lo)
                }
            }
            LiteralSampler::Token { lo, hi } => Literal::Token(rng.random_range(lo..=hi.max(lo))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub column: ColumnRef,
    pub op: CmpOp,
    pub sampler: LiteralSampler,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JoinSpec {
    /// Column of the already-joined (outer) side.
    pub left: ColumnRef,
    /// Column of the table being joined in.
    pub right: ColumnRef,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTemplate {
    pub id: TemplateId,
    /// Left-deep join order.
    pub tables: Vec<String>,
    /// `join_predicates[i]` connects `tables[i]` to `tables[i + 1]`.
    pub join_predicates: Vec<JoinSpec>,
    pub filter_specs: Vec<FilterSpec>,
    #[serde(default)]
    pub order_by: Vec<ColumnRef>,
    #[serde(default)]
    pub group_by: Vec<ColumnRef>,
    #[serde(default)]
    pub payload_columns: Vec<ColumnRef>,
    #[serde(default)]
    pub limit: Option<u64>,
}

impl QueryTemplate {
    /// Every column the template touches on `table`.
    pub fn columns_on(&self, table: &str) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        let mut add = |r: &ColumnRef| {
            if r.table == table {
                out.insert(r.column.clone());
            }
        };
        for j in &self.join_predicates {
            add(&j.left);
            add(&j.right);
        }
        self.filter_specs.iter().for_each(|f| add(&f.column));
        self.order_by.iter().for_each(&mut add);
        self.group_by.iter().for_each(&mut add);
        self.payload_columns.iter().for_each(&mut add);
        out
    }

    pub fn validate(&self, c: &Catalog) -> Result<()> {
        if self.tables.is_empty() {
            return Err(Error::config(format!("template {} has no tables", self.id)));
        }
        if self.join_predicates.len() + 1 != self.tables.len() {
            return Err(Error::config(format!("template {} needs one join per adjacent table pair", self.id)));
        }
        for t in &self.tables {
            c.table(t)?;
        }
        for (i, j) in self.join_predicates.iter().enumerate() {
            if j.left.table != self.tables[i] || j.right.table != self.tables[i + 1] {
                return Err(Error::config(format!("template {} join {i} does not link adjacent tables", self.id)));
            }
            c.column(&j.left)?;
            c.column(&j.right)?;
        }
        let cols = self
            .filter_specs
            .iter()
            .map(|f| &f.column)
            .chain(&self.order_by)
            .chain(&self.group_by)
            .chain(&self.payload_columns);
        for r in cols {
            if !self.tables.contains(&r.table) {
                return Err(Error::config(format!("template {} references table {} outside its FROM list", self.id, r.table)));
            }
            c.column(r)?;
        }
        Ok(())
    }

    fn signature(&self) -> String {
        let f: Vec<String> = self.filter_specs.iter().map(|f| format!("{}{:?}", f.column, f.op)).collect();
        format!("{}|{}", self.tables.join(","), f.join(","))
    }

    /// Binds fresh literals for one query instance.
    pub fn instantiate(&self, rng: &mut seed::Rng, frequency_weight: u32) -> Query {
        Query {
            template: self.id,
            bound_literals: self.filter_specs.iter().map(|f| f.sampler.sample(rng)).collect(),
            frequency_weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub template: TemplateId,
    pub bound_literals: Vec<Literal>,
    pub frequency_weight: u32,
}

impl Query {
    /// Stable identity over template and literal bits.
    pub fn key(&self) -> u64 {
        let mut h = seed::mix(u64::from(self.template));
        for l in &self.bound_literals {
            let bits = match l {
                Literal::Num(v) => v.to_bits(),
                Literal::Token(r) => r.rotate_left(17) ^ 0xA5A5,
                Literal::Column(c) => seed::fnv1a(c.to_string().as_bytes()),
            };
            h = seed::derive(h, bits);
        }
        h
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniWorkload {
    pub round: usize,
    pub queries: Vec<Query>,
}

impl MiniWorkload {
    pub fn template_ids(&self) -> BTreeSet<TemplateId> {
        self.queries.iter().map(|q| q.template).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    #[default]
    Static,
    Continuous,
    Periodic,
    Cyclic,
}

impl std::str::FromStr for DriftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "static" => Ok(DriftKind::Static),
            "continuous" => Ok(DriftKind::Continuous),
            "periodic" => Ok(DriftKind::Periodic),
            "cyclic" => Ok(DriftKind::Cyclic),
            other => Err(Error::config(format!("unknown schedule kind {other:?}"))),
        }
    }
}

fn default_change_fraction() -> f64 {
    0.2
}
fn default_period() -> usize {
    4
}
fn default_cycle() -> usize {
    15
}
fn default_qpt() -> u32 {
    2
}
fn default_rounds() -> usize {
    20
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSchedule {
    #[serde(default)]
    pub kind: DriftKind,
    #[serde(default = "default_rounds")]
    pub total_rounds: usize,
    #[serde(default = "default_rounds")]
    pub templates_per_round: usize,
    #[serde(default = "default_change_fraction")]
    pub change_fraction: f64,
    #[serde(default = "default_period")]
    pub period: usize,
    #[serde(default = "default_cycle")]
    pub cycle_length: usize,
    /// Query instances materialized per selected template per round.
    #[serde(default = "default_qpt")]
    pub queries_per_template: u32,
}

impl Default for DriftSchedule {
    fn default() -> Self {
        DriftSchedule::new(DriftKind::Static, default_rounds(), default_rounds())
    }
}

impl DriftSchedule {
    pub fn new(kind: DriftKind, total_rounds: usize, templates_per_round: usize) -> Self {
        DriftSchedule {
            kind,
            total_rounds,
            templates_per_round,
            change_fraction: default_change_fraction(),
            period: default_period(),
            cycle_length: default_cycle(),
            queries_per_template: default_qpt(),
        }
    }

    /// Templates replaced at each drift event.
    pub fn changes_per_drift(&self) -> usize {
        (self.change_fraction * self.templates_per_round as f64 - 1e-9).ceil().max(0.0) as usize
    }

    /// Whether round `t` (≥ 1) replaces templates relative to round `t - 1`
    /// when generating fresh sets.
    pub fn drifts_at(&self, t: usize) -> bool {
        if t == 0 || self.changes_per_drift() == 0 {
            return false;
        }
        match self.kind {
            DriftKind::Static => false,
            DriftKind::Continuous => true,
            DriftKind::Periodic => t.is_multiple_of(self.period),
            DriftKind::Cyclic => !t.is_multiple_of(self.cycle_length),
        }
    }

    fn fresh_rounds(&self) -> usize {
        match self.kind {
            DriftKind::Cyclic => self.total_rounds.min(self.cycle_length),
            _ => self.total_rounds,
        }
    }

    /// Distinct templates needed to honor the drift over all rounds.
    pub fn templates_needed(&self) -> usize {
        let events = (1..self.fresh_rounds()).filter(|&t| self.drifts_at(t)).count();
        self.templates_per_round + events * self.changes_per_drift()
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_rounds == 0 || self.templates_per_round == 0 {
            return Err(Error::config("schedule needs total_rounds >= 1 and templates_per_round >= 1"));
        }
        if !(0.0..=1.0).contains(&self.change_fraction) {
            return Err(Error::config(format!("change_fraction {} outside [0, 1]", self.change_fraction)));
        }
        if self.period == 0 || self.cycle_length == 0 {
            return Err(Error::config("period and cycle_length must be >= 1"));
        }
        if self.queries_per_template == 0 {
            return Err(Error::config("queries_per_template must be >= 1"));
        }
        Ok(())
    }
}

fn pick_numeric(rng: &mut seed::Rng, c: &Catalog, table: &str, prefer_key: bool) -> Result<ColumnRef> {
    let t = c.table(table)?;
    let numeric: Vec<&str> = t
        .columns
        .iter()
        .filter(|col| col.kind == ColumnKind::Numeric)
        .map(|col| col.name.as_str())
        .collect();
    let name = if prefer_key || numeric.len() == 1 { numeric[0] } else { numeric[rng.random_range(1..numeric.len())] };
    Ok(ColumnRef::new(table, name))
}

fn filter_for(rng: &mut seed::Rng, c: &Catalog, col: ColumnRef) -> Result<FilterSpec> {
    let def = c.column(&col)?;
    let target = (rng.random_range(0.001f64.ln()..0.2f64.ln())).exp();
    let roll: f64 = rng.random();
    let (op, sampler) = match def.kind {
        ColumnKind::Numeric => {
            let (lo, hi) = def.domain().unwrap_or((0.0, 1.0));
            let span = hi - lo;
            if roll < 0.4 {
                (CmpOp::Eq, LiteralSampler::Numeric { lo, hi })
            } else if roll < 0.65 {
                let op = if rng.random_bool(0.5) { CmpOp::Lt } else { CmpOp::Le };
                (op, LiteralSampler::Numeric { lo: lo + 0.5 * target * span, hi: lo + target * span })
            } else if roll < 0.9 {
                let op = if rng.random_bool(0.5) { CmpOp::Gt } else { CmpOp::Ge };
                (op, LiteralSampler::Numeric { lo: hi - target * span, hi: hi - 0.5 * target * span })
            } else {
                (CmpOp::Ne, LiteralSampler::Numeric { lo, hi })
            }
        }
        ColumnKind::String => {
            let top = def.distinct_count.saturating_sub(1);
            let ndv = def.distinct_count as f64;
            if roll < 0.7 {
                (CmpOp::Eq, LiteralSampler::Token { lo: 0, hi: top })
            } else if roll < 0.9 {
                let lo = (0.5 * target * ndv) as u64;
                let hi = ((target * ndv) as u64).max(lo);
                (CmpOp::Lt, LiteralSampler::Token { lo, hi })
            } else {
                (CmpOp::Ne, LiteralSampler::Token { lo: 0, hi: top })
            }
        }
    };
    Ok(FilterSpec { column: col, op, sampler })
}

fn random_template(rng: &mut seed::Rng, c: &Catalog, id: TemplateId) -> Result<QueryTemplate> {
    let max_tables = c.tables.len().min(3);
    let k = rng.random_range(1..=max_tables);
    let mut names: Vec<String> = c.tables.iter().map(|t| t.name.clone()).collect();
    names.shuffle(rng);
    let tables: Vec<String> = names.into_iter().take(k).collect();

    let mut join_predicates = Vec::with_capacity(k - 1);
    for i in 0..k.saturating_sub(1) {
        let left = pick_numeric(rng, c, &tables[i], false)?;
        let prefer_key = rng.random_bool(0.5);
        let right = pick_numeric(rng, c, &tables[i + 1], prefer_key)?;
        join_predicates.push(JoinSpec { left, right });
    }

    let all_cols: Vec<ColumnRef> = tables
        .iter()
        .flat_map(|t| c.table(t).map(|td| td.columns.iter().map(|col| ColumnRef::new(t, &col.name)).collect::<Vec<_>>()))
        .flatten()
        .collect();
    let n_filters = rng.random_range(1..=3usize.min(all_cols.len()));
    let mut filter_cols = all_cols.clone();
    filter_cols.shuffle(rng);
    let mut filter_specs = Vec::with_capacity(n_filters);
    for col in filter_cols.into_iter().take(n_filters) {
        filter_specs.push(filter_for(rng, c, col)?);
    }

    let pick = |rng: &mut seed::Rng| all_cols[rng.random_range(0..all_cols.len())].clone();
    let order_by = if rng.random_bool(0.3) { vec![pick(rng)] } else { Vec::new() };
    let group_by = if rng.random_bool(0.25) { vec![pick(rng)] } else { Vec::new() };
    let limit = (!order_by.is_empty() && rng.random_bool(0.5)).then(|| rng.random_range(10..=100));
    let n_payload = rng.random_range(1..=2);
    let payload_columns = (0..n_payload).map(|_| pick(rng)).collect();

    let t = QueryTemplate { id, tables, join_predicates, filter_specs, order_by, group_by, payload_columns, limit };
    t.validate(c)?;
    Ok(t)
}

/// Generates `n` structurally distinct templates as a pure function of
/// `(catalog, n, seed)`.
pub fn generate_templates(c: &Catalog, n: usize, seed: u64) -> Result<Vec<QueryTemplate>> {
    if n == 0 {
        return Err(Error::config("need at least one template"));
    }
    let mut rng = seed::rng(seed::derive_str(seed, "templates"));
    let mut out = Vec::with_capacity(n);
    let mut seen = HashSet::new();
    let max_attempts = 200 * n + 1000;
    for _ in 0..max_attempts {
        if out.len() == n {
            break;
        }
        let t = random_template(&mut rng, c, out.len() as TemplateId)?;
        if seen.insert(t.signature()) {
            out.push(t);
        }
    }
    if out.len() < n {
        return Err(Error::config(format!(
            "catalog supports only {} distinct templates, {n} requested",
            out.len()
        )));
    }
    Ok(out)
}

/// Materializes the per-round mini-workloads of a drift schedule.
pub fn build_schedule(templates: &[QueryTemplate], sched: &DriftSchedule, seed: u64) -> Result<Vec<MiniWorkload>> {
    sched.validate()?;
    if sched.templates_per_round > templates.len() {
        return Err(Error::config(format!(
            "templates_per_round {} exceeds the {} available templates",
            sched.templates_per_round,
            templates.len()
        )));
    }
    let needed = sched.templates_needed();
    if needed > templates.len() {
        return Err(Error::config(format!(
            "schedule needs {needed} distinct templates to honor change_fraction over {} rounds; only {} given",
            sched.total_rounds,
            templates.len()
        )));
    }

    let mut rng = seed::rng(seed::derive_str(seed, "schedule"));
    let mut order: Vec<usize> = (0..templates.len()).collect();
    order.shuffle(&mut rng);
    let mut current: Vec<usize> = order[..sched.templates_per_round].to_vec();
    let mut fresh = order[sched.templates_per_round..].iter().copied();
    let k = sched.changes_per_drift();

    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(sched.total_rounds);
    for t in 0..sched.total_rounds {
        if sched.kind == DriftKind::Cyclic && t >= sched.cycle_length {
            sets.push(sets[t % sched.cycle_length].clone());
            continue;
        }
        if sched.drifts_at(t) {
            let mut slots: Vec<usize> = (0..current.len()).collect();
            slots.shuffle(&mut rng);
            for &slot in slots.iter().take(k) {
                current[slot] = fresh
                    .next()
                    .ok_or_else(|| Error::config("ran out of fresh templates"))?;
            }
        }
        sets.push(current.clone());
    }

    let literal_seed = seed::derive_str(seed, "literals");
    Ok(sets
        .into_iter()
        .enumerate()
        .map(|(round, set)| {
            let mut lrng = seed::rng(seed::derive(literal_seed, round as u64));
            let mut queries = Vec::with_capacity(set.len() * sched.queries_per_template as usize);
            for idx in set {
                for _ in 0..sched.queries_per_template {
                    queries.push(templates[idx].instantiate(&mut lrng, 1));
                }
            }
            MiniWorkload { round, queries }
        })
        .collect())
}

/// Fraction of distinct templates in `w` absent from `seen`.
pub fn unseen_fraction(w: &MiniWorkload, seen: &BTreeSet<TemplateId>) -> f64 {
    let ids = w.template_ids();
    if ids.is_empty() {
        return 0.0;
    }
    let unseen = ids.iter().filter(|id| !seen.contains(id)).count();
    unseen as f64 / ids.len() as f64
}

/// Workload pinned to disk: the templates plus every materialized round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleFile {
    pub schedule: DriftSchedule,
    pub templates: Vec<QueryTemplate>,
    pub rounds: Vec<MiniWorkload>,
}

impl ScheduleFile {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}
