//! Candidate generation, the uncertainty-aware index value, and sampled
//! configuration enumeration with pruning.

use std::collections::BTreeSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ColumnRef, IndexCandidate};
use crate::plan::PlanNode;
use crate::seed;
use crate::workload::{MiniWorkload, QueryTemplate};
use crate::{Error, Result};

/// Floor added to clamped values so every candidate stays reachable.
pub const VALUE_FLOOR: f64 = 1e-6;

/// A set of indexes deployed together, in selection order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub indexes: Vec<IndexCandidate>,
    pub creation_cost_s: f64,
    pub total_size_bytes: u64,
}

impl Configuration {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_indexes(indexes: Vec<IndexCandidate>) -> Self {
        let total_size_bytes = indexes.iter().map(|x| x.estimated_size_bytes).sum();
        Configuration { indexes, creation_cost_s: 0.0, total_size_bytes }
    }

    pub fn len(&self) -> usize {
        self.indexes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indexes.is_empty()
    }

    pub fn contains(&self, x: &IndexCandidate) -> bool {
        self.indexes.iter().any(|y| y.same_definition(x))
    }

    fn push(&mut self, x: IndexCandidate) {
        self.total_size_bytes += x.estimated_size_bytes;
        self.indexes.push(x);
    }
}

/// Either at most `K` indexes or at most a number of bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Count(usize),
    StorageBytes(u64),
}

impl Budget {
    pub fn validate(&self) -> Result<()> {
        match self {
            Budget::Count(0) | Budget::StorageBytes(0) => Err(Error::config("budget must be positive")),
            _ => Ok(()),
        }
    }
}

fn push_unique(out: &mut Vec<IndexCandidate>, seen: &mut BTreeSet<(String, Vec<String>)>, x: IndexCandidate) {
    if seen.insert((x.table.clone(), x.key_columns.clone())) {
        out.push(x);
    }
}

/// Candidates targeting filters, join keys, ordering/grouping, and
/// filter‖join composites of the workload's templates, in first-seen order.
pub fn generate_candidates(w: &MiniWorkload, templates: &[QueryTemplate], c: &Catalog) -> Result<Vec<IndexCandidate>> {
    if w.queries.is_empty() {
        return Err(Error::precondition(format!("mini-workload {} is empty", w.round)));
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    let mut visited = BTreeSet::new();
    for q in &w.queries {
        if !visited.insert(q.template) {
            continue;
        }
        let t = templates
            .iter()
            .find(|t| t.id == q.template)
            .ok_or_else(|| Error::lookup(format!("template {} not found", q.template)))?;
        let single = |r: &ColumnRef| IndexCandidate::new(&r.table, &[&r.column], c);
        let joins: Vec<&ColumnRef> = t.join_predicates.iter().flat_map(|j| [&j.left, &j.right]).collect();
        for f in &t.filter_specs {
            push_unique(&mut out, &mut seen, single(&f.column)?);
        }
        for r in &joins {
            push_unique(&mut out, &mut seen, single(r)?);
        }
        for r in t.order_by.iter().chain(&t.group_by) {
            push_unique(&mut out, &mut seen, single(r)?);
        }
        for f in &t.filter_specs {
            for r in joins.iter().filter(|r| r.table == f.column.table && r.column != f.column.column) {
                let x = IndexCandidate::new(&r.table, &[&f.column.column, &r.column], c)?;
                push_unique(&mut out, &mut seen, x);
            }
        }
    }
    Ok(out)
}

/// `EB = 1 − Σ c'(q,{x}) / Σ c(q,∅)` over `(c(q,∅), c'(q,{x}))` pairs.
pub fn execution_benefit(costs: &[(f64, f64)]) -> Result<f64> {
    let base: f64 = costs.iter().map(|c| c.0).sum();
    if !(base > 0.0) {
        return Err(Error::contract(format!("total no-index cost {base} must be > 0")));
    }
    let with: f64 = costs.iter().map(|c| c.1).sum();
    Ok(1.0 - with / base)
}

/// Sum of uncertainties of the operators in `plans` that read through `x`.
pub fn exploratory_value(x: &IndexCandidate, plans: &[PlanNode], uncertainty: impl Fn(&PlanNode) -> Result<f64>) -> Result<f64> {
    let mut ev = 0.0;
    for p in plans {
        for (_, n) in p.walk() {
            if n.index.as_ref().is_some_and(|ix| ix.same_definition(x)) {
                ev += uncertainty(n)?;
            }
        }
    }
    Ok(ev)
}

/// `V = EB · (1 + λ·EV)`.
pub fn total_value(eb: f64, ev: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 0.0) {
        return Err(Error::precondition(format!("exploration weight {lambda} must be >= 0")));
    }
    Ok(eb * (1.0 + lambda * ev))
}

/// `λ = λ0 · γ^(β·t)`.
pub fn exploration_weight(t: usize, beta: f64, lambda0: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::config(format!("gamma {gamma} must be in (0, 1)")));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::config(format!("lambda0 {lambda0} must be > 0")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::config(format!("beta {beta} must be in [0, 1]")));
    }
    Ok(lambda0 * gamma.powf(beta * t as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexValuation {
    pub candidate: IndexCandidate,
    pub eb: f64,
    pub ev: f64,
    pub v: f64,
    pub pr: f64,
}

/// Probabilities proportional to `max(V, 0) + floor`.
///
/// The floor is `VALUE_FLOOR` times the largest positive value (or times 1
/// when none is positive), so rescaling every value leaves the distribution
/// unchanged while nonpositive candidates stay reachable.
pub fn selection_probabilities(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::precondition("selection needs at least one candidate"));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::precondition(format!("index value {bad} is not finite")));
    }
    let top = values.iter().copied().fold(0.0, f64::max);
    let floor = VALUE_FLOOR * if top > 0.0 { top } else { 1.0 };
    let v: Vec<f64> = values.iter().map(|v| v.max(0.0) + floor).collect();
    let s: f64 = v.iter().sum();
    Ok(v.into_iter().map(|x| x / s).collect())
}

/// Why a drawn candidate was rejected, if it was.
pub fn prune_reason(x: &IndexCandidate, selected: &Configuration, per_table_cap: usize) -> Option<&'static str> {
    let same_table = selected.indexes.iter().filter(|s| s.table == x.table).count();
    if same_table >= per_table_cap {
        Some("per-table cap")
    } else if selected.indexes.iter().any(|s| s.covers(x)) {
        Some("covered")
    } else if selected.indexes.iter().any(|s| s.extends_prefix_of(x)) {
        Some("longer prefix selected")
    } else {
        None
    }
}

/// Samples a configuration: draws without replacement by `probs`
/// (renormalized after each draw), admitting each draw unless pruned.
///
/// Count budgets make exactly `K` draws; storage budgets draw until the pool
/// is exhausted and skip candidates that no longer fit.
pub fn enumerate_configuration(candidates: &[IndexCandidate], probs: &[f64], budget: Budget, per_table_cap: usize, rng: &mut seed::Rng) -> Result<Configuration> {
    budget.validate()?;
    if candidates.len() != probs.len() {
        return Err(Error::Shape { expected: candidates.len(), actual: probs.len() });
    }
    let mut weights = probs.to_vec();
    let mut out = Configuration::empty();
    let draws = match budget {
        Budget::Count(k) => k.min(candidates.len()),
        Budget::StorageBytes(_) => candidates.len(),
    };
    for _ in 0..draws {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            break;
        }
        let mut r = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, w) in weights.iter().enumerate() {
            if *w <= 0.0 {
                continue;
            }
            pick = Some(i);
            if r < *w {
                break;
            }
            r -= w;
        }
        let i = pick.expect("positive total weight");
        weights[i] = 0.0;
        let x = &candidates[i];
        if prune_reason(x, &out, per_table_cap).is_some() {
            continue;
        }
        if let Budget::StorageBytes(cap) = budget {
            if out.total_size_bytes + x.estimated_size_bytes > cap {
                continue;
            }
        }
        out.push(x.clone());
    }
    Ok(out)
}

/// Structural check of an enumerated configuration against its budget and
/// the pruning rules.
pub fn check_configuration(x: &Configuration, budget: Budget, per_table_cap: usize) -> Result<()> {
    match budget {
        Budget::Count(k) if x.len() > k => return Err(Error::contract(format!("{} indexes exceed K = {k}", x.len()))),
        Budget::StorageBytes(cap) if x.total_size_bytes > cap => {
            return Err(Error::contract(format!("{} bytes exceed budget {cap}", x.total_size_bytes)))
        }
        _ => {}
    }
    for (i, idx) in x.indexes.iter().enumerate() {
        let before = Configuration::from_indexes(x.indexes[..i].to_vec());
        if let Some(why) = prune_reason(idx, &before, per_table_cap) {
            return Err(Error::contract(format!("{idx} admitted despite rule: {why}")));
        }
    }
    Ok(())
}
