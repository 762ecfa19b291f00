//! Simulated database: a what-if planner producing cost-annotated plans and
//! a ground-truth executor whose systematic deviations from those costs are
//! what the CAM models learn.
//!
//! Cost composition follows the linear startup/execution rules used by the
//! correction module, so a node's cost is its children's contribution plus a
//! node-local constant. The executor attributes the root cost to operators
//! through the same rules, then scales each operator's share by its hidden
//! `(kind, table)` multiplier and lognormal noise.

use std::collections::BTreeMap;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::{self, Catalog, ColumnRef, IndexCandidate};
use crate::correction::jacobian;
use crate::plan::{CmpOp, Literal, NodePath, OpKind, PlanNode, Predicate};
use crate::seed;
use crate::workload::{Query, QueryTemplate, TemplateId};
use crate::{Error, Result};

pub const SEQ_PAGE_COST: f64 = 1.0;
pub const RANDOM_PAGE_COST: f64 = 4.0;
pub const CPU_TUPLE_COST: f64 = 0.01;
pub const CPU_INDEX_TUPLE_COST: f64 = 0.005;
pub const CPU_OPERATOR_COST: f64 = 0.0025;

/// Seconds of true execution time per optimizer cost unit (1 ms).
pub const TIME_UNIT_S: f64 = 1e-3;

pub const MULTIPLIER_MIN: f64 = 0.05;
pub const MULTIPLIER_MAX: f64 = 20.0;

/// One way of reading a table.
#[derive(Debug, Clone)]
struct AccessPath {
    node: PlanNode,
}

/// Per-table facts a plan needs.
struct TableAccess<'a> {
    table: &'a str,
    filters: Vec<Predicate>,
    filter_rows: f64,
    needed: Vec<String>,
}

/// What-if planner over a catalog and a template dictionary.
#[derive(Debug, Clone)]
pub struct Planner<'a> {
    catalog: &'a Catalog,
    templates: BTreeMap<TemplateId, &'a QueryTemplate>,
}

fn rows_floor(r: f64) -> f64 {
    r.max(1.0)
}

fn btree_height(rows: u64) -> f64 {
    1.0 + ((rows.max(1) as f64).ln() / 256f64.ln()).floor()
}

impl<'a> Planner<'a> {
    pub fn new(catalog: &'a Catalog, templates: &'a [QueryTemplate]) -> Self {
        Planner { catalog, templates: templates.iter().map(|t| (t.id, t)).collect() }
    }

    pub fn catalog(&self) -> &'a Catalog {
        self.catalog
    }

    pub fn template(&self, id: TemplateId) -> Result<&'a QueryTemplate> {
        self.templates
            .get(&id)
            .copied()
            .ok_or_else(|| Error::lookup(format!("template {id} not found")))
    }

    fn bound_filters(&self, t: &QueryTemplate, q: &Query) -> Result<Vec<Predicate>> {
        if q.bound_literals.len() != t.filter_specs.len() {
            return Err(Error::contract(format!(
                "query for template {} binds {} literals for {} filters",
                t.id,
                q.bound_literals.len(),
                t.filter_specs.len()
            )));
        }
        Ok(t.filter_specs
            .iter()
            .zip(&q.bound_literals)
            .map(|(f, v)| Predicate::new(f.column.clone(), f.op, v.clone()))
            .collect())
    }

    fn table_access<'t>(&self, t: &'t QueryTemplate, table: &'t str, filters: &[Predicate]) -> Result<TableAccess<'t>> {
        let def = self.catalog.table(table)?;
        let mine: Vec<Predicate> = filters.iter().filter(|p| p.column.table == table).cloned().collect();
        let mut sel = 1.0;
        for p in &mine {
            sel *= catalog::selectivity(p, self.catalog)?;
        }
        Ok(TableAccess {
            table,
            filters: mine,
            filter_rows: rows_floor(def.row_count as f64 * sel),
            needed: t.columns_on(table).into_iter().collect(),
        })
    }

    fn seq_scan(&self, a: &TableAccess<'_>) -> Result<AccessPath> {
        let def = self.catalog.table(a.table)?;
        let exec = def.page_count as f64 * SEQ_PAGE_COST
            + def.row_count as f64 * (CPU_TUPLE_COST + a.filters.len() as f64 * CPU_OPERATOR_COST);
        Ok(AccessPath {
            node: PlanNode::leaf(OpKind::SeqScan, a.table, 0.0, exec, a.filter_rows).with_predicates(a.filters.clone()),
        })
    }

    /// Cost of an index probe returning `matched` rows, `residual` of which
    /// filters are checked on the heap tuple.
    fn index_probe_cost(&self, x: &IndexCandidate, matched: f64, key_preds: usize, residual: usize, covering: bool) -> Result<f64> {
        let def = self.catalog.table(&x.table)?;
        let idx_pages = (x.estimated_size_bytes as f64 / catalog::PAGE_SIZE_BYTES as f64).ceil().max(1.0);
        let frac = (matched / def.row_count as f64).min(1.0);
        let mut cost = btree_height(def.row_count) * RANDOM_PAGE_COST
            + (idx_pages * frac).ceil() * SEQ_PAGE_COST
            + matched * (CPU_INDEX_TUPLE_COST + key_preds as f64 * CPU_OPERATOR_COST);
        if !covering {
            cost += matched.min(def.page_count as f64).ceil() * RANDOM_PAGE_COST
                + matched * (CPU_TUPLE_COST + residual as f64 * CPU_OPERATOR_COST);
        }
        Ok(cost)
    }

    fn covering(x: &IndexCandidate, needed: &[String]) -> bool {
        needed.iter().all(|c| x.key_columns.contains(c))
    }

    /// Filter-driven index scan, when the index's leading key has a
    /// sargable filter.
    fn index_scan(&self, a: &TableAccess<'_>, x: &IndexCandidate) -> Result<Option<AccessPath>> {
        if x.table != a.table {
            return Ok(None);
        }
        let mut sel = 1.0;
        let mut matched_preds = 0;
        for key in &x.key_columns {
            let Some(p) = a
                .filters
                .iter()
                .find(|p| p.column.column == *key && p.op.is_sargable() && !matches!(p.value, Literal::Column(_)))
            else {
                break;
            };
            sel *= catalog::selectivity(p, self.catalog)?;
            matched_preds += 1;
            if p.op != CmpOp::Eq {
                break;
            }
        }
        if matched_preds == 0 {
            return Ok(None);
        }
        let def = self.catalog.table(a.table)?;
        let matched = rows_floor(def.row_count as f64 * sel);
        let covering = Self::covering(x, &a.needed);
        let residual = a.filters.len().saturating_sub(matched_preds);
        let exec = self.index_probe_cost(x, matched, matched_preds, residual, covering)?;
        let kind = if covering { OpKind::IndexOnlyScan } else { OpKind::IndexScan };
        Ok(Some(AccessPath {
            node: PlanNode::leaf(kind, a.table, 0.0, exec, a.filter_rows)
                .with_index(x.clone())
                .with_predicates(a.filters.clone()),
        }))
    }

    /// Parameterized inner index scan for a nested-loop join on `join_col`.
    /// Costs are per outer row.
    fn param_index_scan(&self, a: &TableAccess<'_>, x: &IndexCandidate, join_col: &ColumnRef, outer_col: &ColumnRef) -> Result<Option<AccessPath>> {
        if x.table != a.table || x.leading_column() != join_col.column {
            return Ok(None);
        }
        let def = self.catalog.table(a.table)?;
        let ndv = self.catalog.column(join_col)?.distinct_count as f64;
        let per_key = def.row_count as f64 / ndv;
        let mut filter_sel = 1.0;
        for p in &a.filters {
            filter_sel *= catalog::selectivity(p, self.catalog)?;
        }
        let covering = Self::covering(x, &a.needed);
        let exec = self.index_probe_cost(x, per_key, 1, a.filters.len(), covering)?;
        let kind = if covering { OpKind::IndexOnlyScan } else { OpKind::IndexScan };
        let mut preds = vec![Predicate::new(join_col.clone(), CmpOp::Eq, Literal::Column(outer_col.clone()))];
        preds.extend(a.filters.iter().cloned());
        Ok(Some(AccessPath {
            node: PlanNode::leaf(kind, a.table, 0.0, exec, rows_floor(per_key * filter_sel))
                .with_index(x.clone())
                .with_predicates(preds),
        }))
    }

    fn scan_options(&self, a: &TableAccess<'_>, config: &[IndexCandidate]) -> Result<Vec<AccessPath>> {
        let mut out = vec![self.seq_scan(a)?];
        for x in config {
            if let Some(p) = self.index_scan(a, x)? {
                out.push(p);
            }
        }
        Ok(out)
    }

    fn hash_join(&self, outer: PlanNode, inner: PlanNode, out_rows: f64, join_pred: Predicate) -> PlanNode {
        let inner_rows = inner.est_rows;
        let hash_own = inner_rows * (CPU_OPERATOR_COST + CPU_TUPLE_COST);
        let hash = PlanNode::inner(OpKind::Hash, inner.startup_cost + inner.exec_cost + hash_own, 0.0, inner_rows, vec![inner]);
        let exec = outer.exec_cost + outer.est_rows * CPU_OPERATOR_COST + out_rows * CPU_TUPLE_COST;
        let startup = outer.startup_cost + hash.startup_cost;
        PlanNode::inner(OpKind::HashJoin, startup, exec, out_rows, vec![outer, hash]).with_predicates(vec![join_pred])
    }

    fn nested_loop(&self, outer: PlanNode, inner: PlanNode, out_rows: f64, join_pred: Predicate) -> PlanNode {
        let startup = outer.startup_cost + inner.startup_cost;
        let exec = outer.exec_cost + outer.est_rows * inner.exec_cost + out_rows * CPU_TUPLE_COST;
        PlanNode::inner(OpKind::NestedLoopJoin, startup, exec, out_rows, vec![outer, inner]).with_predicates(vec![join_pred])
    }

    fn finish(&self, t: &QueryTemplate, mut root: PlanNode) -> Result<PlanNode> {
        if !t.group_by.is_empty() {
            let mut groups = 1.0f64;
            for g in &t.group_by {
                groups *= self.catalog.column(g)?.distinct_count as f64;
            }
            let n = root.est_rows;
            let groups = groups.min(n).max(1.0);
            let startup = root.total_cost() + n * CPU_OPERATOR_COST;
            root = PlanNode::inner(OpKind::Aggregate, startup, groups * CPU_TUPLE_COST, groups, vec![root]);
        }
        if !t.order_by.is_empty() {
            let n = root.est_rows;
            let startup = root.total_cost() + 2.0 * CPU_OPERATOR_COST * n * n.max(2.0).log2();
            root = PlanNode::inner(OpKind::Sort, startup, n * CPU_OPERATOR_COST, n, vec![root]);
        }
        if let Some(limit) = t.limit {
            let n = root.est_rows;
            let kept = (limit as f64).min(n);
            let exec = kept / n * root.exec_cost;
            root = PlanNode::inner(OpKind::Limit, root.startup_cost, exec, kept, vec![root]);
        }
        Ok(root)
    }

    /// What-if call: the cheapest plan for `q` under hypothetical `config`,
    /// and its root total cost.
    pub fn whatif_plan(&self, q: &Query, config: &[IndexCandidate]) -> Result<(PlanNode, f64)> {
        let t = self.template(q.template)?;
        let filters = self.bound_filters(t, q)?;
        let accesses: Vec<TableAccess<'_>> =
            t.tables.iter().map(|tb| self.table_access(t, tb, &filters)).collect::<Result<_>>()?;

        // Per position: (is_nested_loop, access path) options.
        let mut options: Vec<Vec<(bool, AccessPath)>> = Vec::with_capacity(accesses.len());
        for (i, a) in accesses.iter().enumerate() {
            let mut opts: Vec<(bool, AccessPath)> =
                self.scan_options(a, config)?.into_iter().map(|p| (false, p)).collect();
            if i > 0 {
                let j = &t.join_predicates[i - 1];
                for x in config {
                    if let Some(p) = self.param_index_scan(a, x, &j.right, &j.left)? {
                        opts.push((true, p));
                    }
                }
            }
            options.push(opts);
        }

        let mut join_rows = Vec::with_capacity(accesses.len());
        let mut rows = accesses[0].filter_rows;
        join_rows.push(rows);
        for (i, a) in accesses.iter().enumerate().skip(1) {
            let j = &t.join_predicates[i - 1];
            let ndv = self
                .catalog
                .column(&j.left)?
                .distinct_count
                .max(self.catalog.column(&j.right)?.distinct_count) as f64;
            rows = rows_floor(rows * a.filter_rows / ndv);
            join_rows.push(rows);
        }

        let mut best: Option<PlanNode> = None;
        let mut choice = vec![0usize; options.len()];
        loop {
            let mut acc = options[0][choice[0]].1.node.clone();
            for i in 1..options.len() {
                let (nested, path) = &options[i][choice[i]];
                let j = &t.join_predicates[i - 1];
                let pred = Predicate::new(j.left.clone(), CmpOp::Eq, Literal::Column(j.right.clone()));
                acc = if *nested {
                    self.nested_loop(acc, path.node.clone(), join_rows[i], pred)
                } else {
                    self.hash_join(acc, path.node.clone(), join_rows[i], pred)
                };
            }
            let plan = self.finish(t, acc)?;
            if best.as_ref().is_none_or(|b| plan.total_cost() < b.total_cost()) {
                best = Some(plan);
            }
            // Odometer over the option lists, first position fastest.
            let mut pos = 0;
            loop {
                if pos == choice.len() {
                    let plan = best.expect("at least one plan");
                    let cost = plan.total_cost();
                    return Ok((plan, cost));
                }
                choice[pos] += 1;
                if choice[pos] < options[pos].len() {
                    break;
                }
                choice[pos] = 0;
                pos += 1;
            }
        }
    }
}

/// Per-operator share of the root total cost.
///
/// Each node's own startup/execution constants are recovered by subtracting
/// its children's contribution, then weighted by the sensitivity of the root
/// total to that node. The shares sum to the root total cost.
pub fn attributed_costs(plan: &PlanNode) -> Vec<(NodePath, f64)> {
    let mut out = Vec::new();
    let mut stack = vec![(NodePath::root(), plan, 1.0f64, 1.0f64)];
    while let Some((path, node, ws, we)) = stack.pop() {
        let mut own_s = node.startup_cost;
        let mut own_e = node.exec_cost;
        for (j, child) in node.children.iter().enumerate() {
            let jac = jacobian(node, j);
            own_s -= jac.ss * child.startup_cost + jac.se * child.exec_cost;
            own_e -= jac.es * child.startup_cost + jac.ee * child.exec_cost;
            let cws = ws * jac.ss + we * jac.es;
            let cwe = ws * jac.se + we * jac.ee;
            stack.push((path.child(j), child, cws, cwe));
        }
        out.push((path, ws * own_s + we * own_e));
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

/// Table a subtree is charged to: its first (outer-most) leaf's table.
pub fn subtree_table(node: &PlanNode) -> Option<&str> {
    let mut cur = node;
    loop {
        if let Some(t) = &cur.table {
            return Some(t);
        }
        cur = cur.children.first()?;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierEntry {
    pub kind: OpKind,
    pub table: String,
    pub g: f64,
}

/// Hidden systematic error of the optimizer, per `(operator kind, table)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    #[serde(with = "multiplier_entries")]
    pub multipliers: BTreeMap<(OpKind, String), f64>,
    pub noise_sigma: f64,
    pub seed: u64,
}

mod multiplier_entries {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<(OpKind, String), f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v: Vec<MultiplierEntry> =
            m.iter().map(|((k, t), g)| MultiplierEntry { kind: *k, table: t.clone(), g: *g }).collect();
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<BTreeMap<(OpKind, String), f64>, D::Error> {
        let v: Vec<MultiplierEntry> = Vec::deserialize(d)?;
        Ok(v.into_iter().map(|e| ((e.kind, e.table), e.g)).collect())
    }
}

impl GroundTruth {
    /// Ground truth with every multiplier equal to `g`.
    pub fn uniform(c: &Catalog, g: f64, noise_sigma: f64) -> Self {
        let multipliers = OpKind::ALL
            .iter()
            .flat_map(|k| c.tables.iter().map(move |t| ((*k, t.name.clone()), g)))
            .collect();
        GroundTruth { multipliers, noise_sigma, seed: 0 }
    }

    pub fn set(&mut self, kind: OpKind, table: &str, g: f64) {
        self.multipliers.insert((kind, table.to_string()), g);
    }

    pub fn multiplier(&self, kind: OpKind, table: &str) -> f64 {
        self.multipliers.get(&(kind, table.to_string())).copied().unwrap_or(1.0)
    }
}

/// Draws one log-uniform multiplier in `[0.05, 20]` per `(kind, table)`.
pub fn make_ground_truth(c: &Catalog, seed: u64, noise_sigma: f64) -> Result<GroundTruth> {
    if !(noise_sigma >= 0.0) {
        return Err(Error::precondition(format!("noise_sigma {noise_sigma} must be >= 0")));
    }
    let mut rng = seed::rng(seed::derive_str(seed, "ground-truth"));
    let (lo, hi) = (MULTIPLIER_MIN.ln(), MULTIPLIER_MAX.ln());
    let mut multipliers = BTreeMap::new();
    for k in OpKind::ALL {
        for t in &c.tables {
            multipliers.insert((k, t.name.clone()), rng.random_range(lo..=hi).exp());
        }
    }
    Ok(GroundTruth { multipliers, noise_sigma, seed })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTelemetry {
    pub query_key: u64,
    pub config: Vec<IndexCandidate>,
    pub total_time: f64,
    pub per_operator: Vec<(NodePath, f64)>,
}

/// Executes the what-if plan of `q` under `config` against the ground truth.
pub fn execute(planner: &Planner<'_>, q: &Query, config: &[IndexCandidate], gt: &GroundTruth, round_seed: u64) -> Result<(PlanNode, ExecutionTelemetry)> {
    let (plan, _) = planner.whatif_plan(q, config)?;
    let telemetry = execute_plan(&plan, q.key(), config, gt, round_seed)?;
    Ok((plan, telemetry))
}

/// Executes an already-chosen plan.
pub fn execute_plan(plan: &PlanNode, query_key: u64, config: &[IndexCandidate], gt: &GroundTruth, round_seed: u64) -> Result<ExecutionTelemetry> {
    let noise = if gt.noise_sigma > 0.0 {
        Some(LogNormal::new(0.0, gt.noise_sigma).map_err(|e| Error::precondition(e.to_string()))?)
    } else {
        None
    };
    let stream = seed::derive(seed::derive(round_seed, query_key), gt.seed);
    let mut per_operator = Vec::new();
    for (i, (path, share)) in attributed_costs(plan).into_iter().enumerate() {
        let node = plan.node(&path).expect("attributed path exists");
        let table = subtree_table(node).unwrap_or("");
        let mut factor = gt.multiplier(node.kind, table);
        if let Some(ln) = &noise {
            let mut rng = seed::rng(seed::derive(stream, i as u64));
            factor *= ln.sample(&mut rng);
        }
        per_operator.push((path, share.max(0.0) * factor * TIME_UNIT_S));
    }
    let total_time = per_operator.iter().map(|(_, t)| t).sum();
    Ok(ExecutionTelemetry { query_key, config: config.to_vec(), total_time, per_operator })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{generate_catalog, CatalogSpec};
    use crate::workload::generate_templates;

    fn env(seed: u64) -> (Catalog, Vec<QueryTemplate>) {
        let c = generate_catalog(
            &CatalogSpec { n_tables: 4, rows_range: (2_000, 200_000), cols_per_table_range: (3, 6) },
            seed,
        )
        .unwrap();
        let ts = generate_templates(&c, 12, seed).unwrap();
        (c, ts)
    }

    fn all_single_indexes(c: &Catalog) -> Vec<IndexCandidate> {
        c.tables
            .iter()
            .flat_map(|t| t.columns.iter().map(|col| IndexCandidate::new(&t.name, &[&col.name], c).unwrap()))
            .collect()
    }

    #[test]
    fn no_indexes_means_seq_scans_only() {
        let (c, ts) = env(1);
        let p = Planner::new(&c, &ts);
        let mut rng = seed::rng(3);
        for t in &ts {
            let q = t.instantiate(&mut rng, 1);
            let (plan, cost) = p.whatif_plan(&q, &[]).unwrap();
            plan.validate().unwrap();
            assert!(cost > 0.0);
            for l in crate::plan::leaves(&plan) {
                assert_eq!(plan.node(&l).unwrap().kind, OpKind::SeqScan);
            }
        }
    }

    #[test]
    fn useless_index_leaves_plan_unchanged() {
        let (c, ts) = env(2);
        let p = Planner::new(&c, &ts);
        let mut rng = seed::rng(4);
        let q = ts[0].instantiate(&mut rng, 1);
        let (base, base_cost) = p.whatif_plan(&q, &[]).unwrap();
        // An index on a column the query never filters or joins on cannot be
        // chosen.
        let used = ts[0].tables.iter().flat_map(|tb| ts[0].columns_on(tb).into_iter().map(move |c| (tb.clone(), c)));
        let used: Vec<(String, String)> = used.collect();
        let unused = c
            .tables
            .iter()
            .flat_map(|t| t.columns.iter().map(move |col| (t.name.clone(), col.name.clone())))
            .find(|tc| !used.contains(tc))
            .unwrap();
        let x = IndexCandidate::new(&unused.0, &[&unused.1], &c).unwrap();
        let (plan, cost) = p.whatif_plan(&q, &[x]).unwrap();
        assert_eq!(plan, base);
        assert_eq!(cost, base_cost);
    }

    #[test]
    fn whatif_cost_never_exceeds_no_index_cost() {
        let mut checked = 0;
        for s in 0..10u64 {
            let (c, ts) = env(s);
            let p = Planner::new(&c, &ts);
            let pool = all_single_indexes(&c);
            let mut rng = seed::rng(s + 100);
            for _ in 0..100 {
                let t = &ts[rng.random_range(0..ts.len())];
                let q = t.instantiate(&mut rng, 1);
                let k = rng.random_range(1..=4);
                let x: Vec<IndexCandidate> = (0..k).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
                let (_, base) = p.whatif_plan(&q, &[]).unwrap();
                let (plan, cost) = p.whatif_plan(&q, &x).unwrap();
                plan.validate().unwrap();
                assert!(cost <= base, "{cost} > {base}");
                checked += 1;
            }
        }
        assert_eq!(checked, 1000);
    }

    #[test]
    fn attribution_sums_to_root_cost() {
        let (c, ts) = env(5);
        let p = Planner::new(&c, &ts);
        let pool = all_single_indexes(&c);
        let mut rng = seed::rng(9);
        for t in &ts {
            let q = t.instantiate(&mut rng, 1);
            let (plan, cost) = p.whatif_plan(&q, &pool).unwrap();
            let shares = attributed_costs(&plan);
            let sum: f64 = shares.iter().map(|(_, s)| s).sum();
            assert!((sum - cost).abs() <= 1e-9 * cost, "{sum} vs {cost}");
            assert!(shares.iter().all(|(_, s)| *s >= -1e-9 * cost));
        }
    }

    #[test]
    fn identity_ground_truth_matches_costs() {
        let (c, ts) = env(6);
        let p = Planner::new(&c, &ts);
        let gt = GroundTruth::uniform(&c, 1.0, 0.0);
        let mut rng = seed::rng(1);
        let q = ts[3].instantiate(&mut rng, 1);
        let (plan, tel) = execute(&p, &q, &[], &gt, 11).unwrap();
        let cost = plan.total_cost();
        assert!((tel.total_time - TIME_UNIT_S * cost).abs() <= 1e-9 * tel.total_time);
        let sum: f64 = tel.per_operator.iter().map(|(_, t)| t).sum();
        assert!((sum - tel.total_time).abs() <= 1e-9 * tel.total_time);
    }

    #[test]
    fn leaf_multiplier_doubles_its_time() {
        let (c, ts) = env(7);
        let p = Planner::new(&c, &ts);
        let pool = all_single_indexes(&c);
        let mut rng = seed::rng(2);
        // Find a query whose plan uses an index scan.
        for t in &ts {
            let q = t.instantiate(&mut rng, 1);
            let (plan, _) = p.whatif_plan(&q, &pool).unwrap();
            let Some(leaf) = crate::plan::leaves(&plan)
                .into_iter()
                .find(|l| plan.node(l).unwrap().kind == OpKind::IndexScan)
            else {
                continue;
            };
            let table = plan.node(&leaf).unwrap().table.clone().unwrap();
            let base = GroundTruth::uniform(&c, 1.0, 0.0);
            let mut doubled = base.clone();
            doubled.set(OpKind::IndexScan, &table, 2.0);
            let a = execute_plan(&plan, q.key(), &pool, &base, 1).unwrap();
            let b = execute_plan(&plan, q.key(), &pool, &doubled, 1).unwrap();
            let ta = a.per_operator.iter().find(|(pp, _)| *pp == leaf).unwrap().1;
            let tb = b.per_operator.iter().find(|(pp, _)| *pp == leaf).unwrap().1;
            assert_eq!(tb, 2.0 * ta);
            return;
        }
        panic!("no index scan found");
    }

    #[test]
    fn execution_is_deterministic() {
        let (c, ts) = env(8);
        let p = Planner::new(&c, &ts);
        let gt = make_ground_truth(&c, 5, 0.3).unwrap();
        let mut rng = seed::rng(2);
        let q = ts[1].instantiate(&mut rng, 1);
        let a = execute(&p, &q, &[], &gt, 42).unwrap().1;
        let b = execute(&p, &q, &[], &gt, 42).unwrap().1;
        assert_eq!(a, b);
        let c2 = execute(&p, &q, &[], &gt, 43).unwrap().1;
        assert_ne!(a.total_time, c2.total_time);
        assert!(a.total_time > 0.0);
    }

    #[test]
    fn ground_truth_range_determinism_and_median() {
        let (c, _) = env(9);
        let a = make_ground_truth(&c, 3, 0.05).unwrap();
        assert_eq!(a, make_ground_truth(&c, 3, 0.05).unwrap());
        assert_eq!(a.multipliers.len(), OpKind::ALL.len() * c.tables.len());
        let mut draws = Vec::new();
        let mut s = 0;
        while draws.len() < 10_000 {
            let g = make_ground_truth(&c, s, 0.0).unwrap();
            draws.extend(g.multipliers.values().copied());
            s += 1;
        }
        assert!(draws.iter().all(|g| (MULTIPLIER_MIN..=MULTIPLIER_MAX).contains(g)));
        draws.sort_by(f64::total_cmp);
        let median = draws[draws.len() / 2];
        assert!((median - 1.0).abs() <= 0.3, "median {median}");
        assert!(make_ground_truth(&c, 1, -0.1).is_err());
    }

    #[test]
    fn ground_truth_json_round_trip() {
        let (c, _) = env(10);
        let g = make_ground_truth(&c, 1, 0.05).unwrap();
        let back: GroundTruth = serde_json::from_str(&serde_json::to_string(&g).unwrap()).unwrap();
        assert_eq!(g, back);
    }
}
