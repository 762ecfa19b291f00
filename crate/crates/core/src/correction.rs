//! Uncertainty-gated cost correction and execution-telemetry labeling.
//!
//! Corrections are applied at leaves and pushed to the root with the linear
//! startup/execution rules of each parent kind. Every rule is a 2x2 map from a
//! child's `(Δc_s, Δc_e)` to its parent's contribution, see [`jacobian`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cam::OmegaSet;
use crate::catalog::IndexCandidate;
use crate::plan::{self, NodePath, OpKind, PlanNode};
use crate::{Error, Result};

/// Linear map from a child's `(c_s, c_e)` to its parent's `(c_s, c_e)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian {
    /// ∂c_s(parent)/∂c_s(child)
    pub ss: f64,
    /// ∂c_s(parent)/∂c_e(child)
    pub se: f64,
    /// ∂c_e(parent)/∂c_s(child)
    pub es: f64,
    /// ∂c_e(parent)/∂c_e(child)
    pub ee: f64,
}

impl Jacobian {
    const PASS: Jacobian = Jacobian { ss: 1.0, se: 0.0, es: 0.0, ee: 1.0 };
    const STARTUP_ONLY: Jacobian = Jacobian { ss: 1.0, se: 0.0, es: 0.0, ee: 0.0 };
    const BLOCKING: Jacobian = Jacobian { ss: 1.0, se: 1.0, es: 0.0, ee: 0.0 };

    pub fn apply(&self, ds: f64, de: f64) -> (f64, f64) {
        (self.ss * ds + self.se * de, self.es * ds + self.ee * de)
    }
}

/// Contribution of child `j` of `parent` to the parent's costs.
///
/// Blocking operators (Hash, Sort, Aggregate, Gather) fold the child's whole
/// cost into their own startup. Nested loops re-run the inner side once per
/// outer row. A hash join's execution cost follows its probe (outer) side
/// only; the build side arrives through the Hash node's startup.
pub fn jacobian(parent: &PlanNode, j: usize) -> Jacobian {
    match parent.kind {
        OpKind::SeqScan | OpKind::IndexScan | OpKind::IndexOnlyScan => Jacobian::PASS,
        OpKind::NestedLoopJoin => {
            if j == 0 {
                Jacobian::PASS
            } else {
                Jacobian { ee: parent.children[0].est_rows, ..Jacobian::PASS }
            }
        }
        OpKind::Limit => {
            let child_rows = parent.children[j].est_rows;
            let ratio = if child_rows > 0.0 { parent.est_rows / child_rows } else { 0.0 };
            Jacobian { ee: ratio, ..Jacobian::PASS }
        }
        OpKind::Hash | OpKind::Sort | OpKind::Aggregate | OpKind::Gather => Jacobian::BLOCKING,
        OpKind::HashJoin | OpKind::GatherMerge => {
            if j == 0 {
                Jacobian::PASS
            } else {
                Jacobian::STARTUP_ONLY
            }
        }
    }
}

/// Cost deltas accumulated by corrections on one plan.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorrectionLedger {
    pub deltas: BTreeMap<NodePath, (f64, f64)>,
    pub applied: Vec<(NodePath, f64)>,
}

impl CorrectionLedger {
    pub fn root_delta(&self) -> (f64, f64) {
        self.deltas.get(&NodePath::root()).copied().unwrap_or((0.0, 0.0))
    }
}

/// Scales leaf `o`'s execution cost by `omega` and propagates the change to
/// the root.
pub fn update_cost(p: &mut PlanNode, o: &NodePath, omega: f64, ledger: &mut CorrectionLedger) -> Result<()> {
    if !(omega > 0.0) {
        return Err(Error::precondition(format!("multiplier {omega} must be > 0")));
    }
    let ancestors = plan::path_to_root(p, o)?;
    let leaf = p.node(o).expect("path_to_root checked membership");
    if !leaf.is_leaf() {
        return Err(Error::precondition(format!("node {o} is a {} not a leaf", leaf.kind)));
    }
    let mut delta = (0.0, (omega - 1.0) * leaf.exec_cost);
    let mut changes = vec![(o.clone(), delta)];
    // ancestors[0] is `o` itself, the last element is the root.
    for w in ancestors.windows(2) {
        let (child, parent) = (&w[0], &w[1]);
        let node = p.node(parent).expect("ancestor exists");
        delta = jacobian(node, child.last().expect("non-root child")).apply(delta.0, delta.1);
        changes.push((parent.clone(), delta));
    }
    for (path, (ds, de)) in changes {
        let n = p.node_mut(&path).expect("path exists");
        n.startup_cost += ds;
        n.exec_cost += de;
        let e = ledger.deltas.entry(path).or_insert((0.0, 0.0));
        e.0 += ds;
        e.1 += de;
    }
    ledger.applied.push((o.clone(), omega));
    Ok(())
}

/// A source of per-leaf multiplier predictions and their uncertainty.
pub trait LeafAssessor {
    /// Returns `(argmax multiplier, combined uncertainty)` for a leaf.
    fn assess(&self, leaf: &PlanNode) -> Result<(f64, f64)>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafDecision {
    pub path: NodePath,
    pub omega: f64,
    pub uncertainty: f64,
    pub applied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corrected {
    pub plan: PlanNode,
    pub cost: f64,
    pub ledger: CorrectionLedger,
    pub leaves: Vec<LeafDecision>,
}

impl Corrected {
    pub fn n_applied(&self) -> usize {
        self.leaves.iter().filter(|l| l.applied).count()
    }
}

/// Corrects every leaf whose combined uncertainty is at most `rho`, in DFS
/// order, and returns the corrected plan and root cost.
pub fn cost_correction(p: &PlanNode, models: &dyn LeafAssessor, rho: f64) -> Result<Corrected> {
    if !(rho >= 0.0) {
        return Err(Error::precondition(format!("threshold {rho} must be >= 0")));
    }
    let mut out = p.clone();
    let mut ledger = CorrectionLedger::default();
    let mut leaves = Vec::new();
    for path in plan::leaves(p) {
        let (omega, u) = models.assess(p.node(&path).expect("leaf exists"))?;
        let applied = u <= rho;
        if applied {
            update_cost(&mut out, &path, omega, &mut ledger)?;
        }
        leaves.push(LeafDecision { path, omega, uncertainty: u, applied });
    }
    let cost = out.total_cost();
    Ok(Corrected { plan: out, cost, ledger, leaves })
}

/// `b_c = 1 − c_corrected / c_noindex`.
pub fn estimated_benefit(c_noindex: f64, c_corrected: f64) -> Result<f64> {
    if !(c_noindex > 0.0) {
        return Err(Error::contract(format!("no-index cost {c_noindex} must be > 0")));
    }
    Ok(1.0 - c_corrected / c_noindex)
}

/// `b_t = 1 − t_with / t_noindex`.
pub fn actual_benefit(t_noindex: f64, t_with: f64) -> Result<f64> {
    if !(t_noindex > 0.0) {
        return Err(Error::contract(format!("no-index time {t_noindex} must be > 0")));
    }
    Ok(1.0 - t_with / t_noindex)
}

/// Leaves whose behavior depends on `x`: index accesses through a member of
/// `x`, and sequential scans of tables that have an index in `x`.
pub fn related_leaves(p: &PlanNode, x: &[IndexCandidate]) -> Vec<NodePath> {
    plan::leaves(p)
        .into_iter()
        .filter(|path| {
            let n = p.node(path).expect("leaf exists");
            match n.kind {
                OpKind::IndexScan | OpKind::IndexOnlyScan => {
                    n.index.as_ref().is_some_and(|ix| x.iter().any(|c| c.same_definition(ix)))
                }
                OpKind::SeqScan => n.table.as_ref().is_some_and(|t| x.iter().any(|c| &c.table == t)),
                _ => false,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafLabel {
    pub path: NodePath,
    pub omega_index: usize,
    pub omega: f64,
}

/// For each related leaf independently, the multiplier whose corrected
/// benefit lands closest to the observed benefit `b_t`.
///
/// The search starts from ω = 1 and only moves on strict improvement; equal
/// distances prefer the multiplier nearest 1 in log space. Every trial starts
/// from an unmodified copy of `p`.
pub fn telemetry_to_labels(p: &PlanNode, x: &[IndexCandidate], omega: &OmegaSet, b_t: f64, c_noindex: f64) -> Result<Vec<LeafLabel>> {
    if !b_t.is_finite() {
        return Err(Error::precondition(format!("observed benefit {b_t} is not finite")));
    }
    let one = omega.one_index();
    let mut out = Vec::new();
    for path in related_leaves(p, x) {
        let mut best = one;
        let mut best_delta = (b_t - estimated_benefit(c_noindex, p.total_cost())?).abs();
        for (k, &w) in omega.values().iter().enumerate() {
            let mut trial = p.clone();
            update_cost(&mut trial, &path, w, &mut CorrectionLedger::default())?;
            let delta = (b_t - estimated_benefit(c_noindex, trial.total_cost())?).abs();
            let closer_to_one = w.ln().abs() < omega.values()[best].ln().abs();
            if delta < best_delta || (delta == best_delta && closer_to_one) {
                best = k;
                best_delta = delta;
            }
        }
        out.push(LeafLabel { path, omega_index: best, omega: omega.values()[best] });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(kind: OpKind, table: &str, e: f64, rows: f64) -> PlanNode {
        PlanNode::leaf(kind, table, 0.0, e, rows)
    }

    /// Example 1's shape: NLJ over a sequential outer scan and an index inner.
    fn example_plan() -> PlanNode {
        PlanNode::inner(
            OpKind::NestedLoopJoin,
            0.0,
            113587.0,
            50000.0,
            vec![scan(OpKind::SeqScan, "a", 46087.0, 50000.0), scan(OpKind::IndexScan, "b", 1.35, 1.0)],
        )
    }

    #[test]
    fn example_one_propagation() {
        let mut p = example_plan();
        let mut l = CorrectionLedger::default();
        update_cost(&mut p, &NodePath(vec![1]), 2.0, &mut l).unwrap();
        assert_eq!(p.children[1].exec_cost, 2.70);
        assert_eq!(l.deltas[&NodePath(vec![1])], (0.0, 1.35));
        assert_eq!(p.exec_cost, 181087.0);
        assert_eq!(l.root_delta(), (0.0, 67500.0));
    }

    #[test]
    fn identity_multiplier_is_noop() {
        let base = example_plan();
        let mut p = base.clone();
        let mut l = CorrectionLedger::default();
        update_cost(&mut p, &NodePath(vec![0]), 1.0, &mut l).unwrap();
        assert_eq!(p, base);
        assert!(l.deltas.values().all(|d| *d == (0.0, 0.0)));
    }

    #[test]
    fn limit_scales_execution_delta() {
        let mut p = PlanNode::inner(OpKind::Limit, 0.0, 10.0, 10.0, vec![scan(OpKind::SeqScan, "a", 50.0, 100.0)]);
        let mut l = CorrectionLedger::default();
        update_cost(&mut p, &NodePath(vec![0]), 2.0, &mut l).unwrap();
        assert_eq!(l.root_delta(), (0.0, 5.0));
    }

    #[test]
    fn blocking_and_hash_join_rules() {
        let build = scan(OpKind::SeqScan, "b", 30.0, 10.0);
        let probe = scan(OpKind::SeqScan, "a", 20.0, 10.0);
        let hash = PlanNode::inner(OpKind::Hash, 31.0, 0.0, 10.0, vec![build]);
        let mut p = PlanNode::inner(OpKind::HashJoin, 31.0, 21.0, 10.0, vec![probe, hash]);
        let mut l = CorrectionLedger::default();
        update_cost(&mut p, &NodePath(vec![1, 0]), 2.0, &mut l).unwrap();
        assert_eq!(l.deltas[&NodePath(vec![1])], (30.0, 0.0));
        assert_eq!(l.root_delta(), (30.0, 0.0));
        update_cost(&mut p, &NodePath(vec![0]), 0.5, &mut l).unwrap();
        assert_eq!(l.root_delta(), (30.0, -10.0));
        assert_eq!(p.startup_cost, 61.0);
        assert_eq!(p.exec_cost, 11.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut p = example_plan();
        let mut l = CorrectionLedger::default();
        assert!(matches!(update_cost(&mut p, &NodePath(vec![1]), 0.0, &mut l), Err(Error::Precondition(_))));
        assert!(matches!(update_cost(&mut p, &NodePath::root(), 2.0, &mut l), Err(Error::Precondition(_))));
        assert!(matches!(update_cost(&mut p, &NodePath(vec![7]), 2.0, &mut l), Err(Error::Lookup(_))));
    }

    struct Fixed(Vec<(f64, f64)>, std::cell::Cell<usize>);

    impl LeafAssessor for Fixed {
        fn assess(&self, _: &PlanNode) -> Result<(f64, f64)> {
            let i = self.1.get();
            self.1.set(i + 1);
            Ok(self.0[i])
        }
    }

    #[test]
    fn example_one_gate() {
        let p = example_plan();
        let m = Fixed(vec![(3.0, 0.53), (2.0, 0.06)], Default::default());
        let c = cost_correction(&p, &m, 0.1).unwrap();
        assert_eq!(c.n_applied(), 1);
        assert!(c.leaves[1].applied && !c.leaves[0].applied);
        assert_eq!(c.cost, 181087.0);
        let m = Fixed(vec![(3.0, 0.53), (2.0, 0.06)], Default::default());
        assert_eq!(cost_correction(&p, &m, 0.0).unwrap().cost, p.total_cost());
        assert!(cost_correction(&p, &m, -1.0).is_err());
    }

    #[test]
    fn benefits() {
        assert_eq!(estimated_benefit(10.0, 10.0).unwrap(), 0.0);
        assert_eq!(estimated_benefit(10.0, 5.0).unwrap(), 0.5);
        assert_eq!(estimated_benefit(10.0, 20.0).unwrap(), -1.0);
        assert!(matches!(estimated_benefit(0.0, 1.0), Err(Error::Contract(_))));
        assert_eq!(actual_benefit(10.0, 5.0).unwrap(), 0.5);
        assert_eq!(actual_benefit(10.0, 10.0).unwrap(), 0.0);
        assert!((actual_benefit(10.0, 29.0).unwrap() + 1.9).abs() < 1e-12);
        assert!(matches!(actual_benefit(-1.0, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn labels_recover_leaf_multiplier() {
        let omega = OmegaSet::standard();
        let mut ix = crate::catalog::IndexCandidate {
            table: "b".into(),
            key_columns: vec!["x".into()],
            estimated_size_bytes: 8192,
        };
        let mut p = example_plan();
        p.children[1] = p.children[1].clone().with_index(ix.clone());
        let c_noindex = 400000.0;
        let b_c = estimated_benefit(c_noindex, p.total_cost()).unwrap();
        // Exact what-if: ω = 1.
        let labels = telemetry_to_labels(&p, std::slice::from_ref(&ix), &omega, b_c, c_noindex).unwrap();
        assert_eq!(labels.len(), 1);
        assert_eq!(labels[0].omega, 1.0);
        // True leaf cost doubled.
        let mut truth = p.clone();
        update_cost(&mut truth, &NodePath(vec![1]), 2.0, &mut CorrectionLedger::default()).unwrap();
        let b_t = 1.0 - truth.total_cost() / c_noindex;
        let labels = telemetry_to_labels(&p, std::slice::from_ref(&ix), &omega, b_t, c_noindex).unwrap();
        assert_eq!(labels[0].omega, 2.0);
        // Unrelated configuration: nothing to label.
        ix.table = "zz".into();
        assert!(telemetry_to_labels(&p, &[ix], &omega, b_t, c_noindex).unwrap().is_empty());
    }
}
