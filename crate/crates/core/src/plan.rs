//! Plan trees and operator featurization.
//!
//! Nodes are addressed by [`NodePath`]: the sequence of child positions from
//! the root. Child 0 is always the outer input.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{self, Catalog, ColumnKind, ColumnRef, IndexCandidate, MAX_INDEX_WIDTH};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OpKind {
    SeqScan,
    IndexScan,
    IndexOnlyScan,
    NestedLoopJoin,
    HashJoin,
    Hash,
    Sort,
    Aggregate,
    Limit,
    Gather,
    GatherMerge,
}

impl OpKind {
    pub const ALL: [OpKind; 11] = [
        OpKind::SeqScan,
        OpKind::IndexScan,
        OpKind::IndexOnlyScan,
        OpKind::NestedLoopJoin,
        OpKind::HashJoin,
        OpKind::Hash,
        OpKind::Sort,
        OpKind::Aggregate,
        OpKind::Limit,
        OpKind::Gather,
        OpKind::GatherMerge,
    ];

    pub const LEAVES: [OpKind; 3] = [OpKind::SeqScan, OpKind::IndexScan, OpKind::IndexOnlyScan];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn is_leaf(self) -> bool {
        matches!(self, OpKind::SeqScan | OpKind::IndexScan | OpKind::IndexOnlyScan)
    }

    pub fn uses_index(self) -> bool {
        matches!(self, OpKind::IndexScan | OpKind::IndexOnlyScan)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CmpOp {
    #[serde(rename = "=")]
    Eq,
    #[serde(rename = ">")]
    Gt,
    #[serde(rename = "<")]
    Lt,
    #[serde(rename = ">=")]
    Ge,
    #[serde(rename = "<=")]
    Le,
    #[serde(rename = "!=")]
    Ne,
}

impl CmpOp {
    pub const ALL: [CmpOp; 6] = [CmpOp::Eq, CmpOp::Gt, CmpOp::Lt, CmpOp::Ge, CmpOp::Le, CmpOp::Ne];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Whether a B-tree key can seek on this comparison.
    pub fn is_sargable(self) -> bool {
        !matches!(self, CmpOp::Ne)
    }
}

/// Right-hand side of a predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Literal {
    Num(f64),
    /// A string value, identified by its cardinality rank within the column.
    Token(u64),
    /// Another column (join predicates).
    Column(ColumnRef),
}

/// A `⟨column, operator, value⟩` triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub column: ColumnRef,
    pub op: CmpOp,
    pub value: Literal,
}

impl Predicate {
    pub fn new(column: ColumnRef, op: CmpOp, value: Literal) -> Self {
        Self { column, op, value }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodePath(pub Vec<usize>);

impl NodePath {
    pub fn root() -> Self {
        NodePath(Vec::new())
    }

    pub fn child(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v.push(i);
        NodePath(v)
    }

    pub fn parent(&self) -> Option<NodePath> {
        if self.0.is_empty() {
            None
        } else {
            Some(NodePath(self.0[..self.0.len() - 1].to_vec()))
        }
    }

    pub fn depth(&self) -> usize {
        self.0.len()
    }

    /// Position of this node among its parent's children.
    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }
}

impl fmt::Display for NodePath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/")?;
        let parts: Vec<String> = self.0.iter().map(|i| i.to_string()).collect();
        write!(f, "{}", parts.join("/"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanNode {
    pub kind: OpKind,
    pub startup_cost: f64,
    pub exec_cost: f64,
    pub est_rows: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexCandidate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub predicates: Vec<Predicate>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<PlanNode>,
}

impl PlanNode {
    pub fn leaf(kind: OpKind, table: &str, startup_cost: f64, exec_cost: f64, est_rows: f64) -> Self {
        PlanNode {
            kind,
            startup_cost,
            exec_cost,
            est_rows,
            table: Some(table.to_string()),
            index: None,
            predicates: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn inner(kind: OpKind, startup_cost: f64, exec_cost: f64, est_rows: f64, children: Vec<PlanNode>) -> Self {
        PlanNode {
            kind,
            startup_cost,
            exec_cost,
            est_rows,
            table: None,
            index: None,
            predicates: Vec::new(),
            children,
        }
    }

    pub fn with_index(mut self, index: IndexCandidate) -> Self {
        self.index = Some(index);
        self
    }

    pub fn with_predicates(mut self, predicates: Vec<Predicate>) -> Self {
        self.predicates = predicates;
        self
    }

    pub fn total_cost(&self) -> f64 {
        self.startup_cost + self.exec_cost
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn node(&self, path: &NodePath) -> Option<&PlanNode> {
        let mut cur = self;
        for &i in &path.0 {
            cur = cur.children.get(i)?;
        }
        Some(cur)
    }

    pub fn node_mut(&mut self, path: &NodePath) -> Option<&mut PlanNode> {
        let mut cur = self;
        for &i in &path.0 {
            cur = cur.children.get_mut(i)?;
        }
        Some(cur)
    }

    /// Pre-order traversal, outer child first.
    pub fn walk(&self) -> Vec<(NodePath, &PlanNode)> {
        let mut out = Vec::new();
        let mut stack = vec![(NodePath::root(), self)];
        while let Some((p, n)) = stack.pop() {
            for (i, c) in n.children.iter().enumerate().rev() {
                stack.push((p.child(i), c));
            }
            out.push((p, n));
        }
        out
    }

    /// Checks the structural invariants of every node in the tree.
    pub fn validate(&self) -> Result<()> {
        for (p, n) in self.walk() {
            if !(n.startup_cost >= 0.0 && n.exec_cost >= 0.0) {
                return Err(Error::contract(format!("node {p} has negative cost")));
            }
            if n.kind.is_leaf() {
                if !n.children.is_empty() || n.table.is_none() {
                    return Err(Error::contract(format!("scan node {p} must be a childless table access")));
                }
                if n.kind.uses_index() != n.index.is_some() {
                    return Err(Error::contract(format!("node {p}: index reference mismatch for {}", n.kind)));
                }
            } else if n.children.is_empty() {
                return Err(Error::contract(format!("non-scan node {p} has no children")));
            }
        }
        Ok(())
    }
}

/// Leaf paths in depth-first, outer-first order.
pub fn leaves(p: &PlanNode) -> Vec<NodePath> {
    p.walk().into_iter().filter(|(_, n)| n.is_leaf()).map(|(path, _)| path).collect()
}

/// `[o, parent(o), …, root]`.
pub fn path_to_root(p: &PlanNode, o: &NodePath) -> Result<Vec<NodePath>> {
    if p.node(o).is_none() {
        return Err(Error::lookup(format!("node {o} is not part of this plan")));
    }
    let mut out = Vec::with_capacity(o.depth() + 1);
    let mut cur = Some(o.clone());
    while let Some(c) = cur {
        cur = c.parent();
        out.push(c);
    }
    Ok(out)
}

/// Fixed-length operator feature vector.
///
/// Layout: node-kind one-hot ‖ three key-column one-hots ‖ predicate column
/// one-hot ‖ comparison one-hot ‖ normalized numeric value ‖ normalized
/// cardinality rank. Column one-hots span every column of the catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorEncoding {
    pub vector: Vec<f64>,
}

impl OperatorEncoding {
    pub fn len(&self) -> usize {
        self.vector.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vector.is_empty()
    }

    /// Bitwise key suitable for memoization.
    pub fn key(&self) -> Vec<u64> {
        self.vector.iter().map(|v| v.to_bits()).collect()
    }
}

/// Block offsets of the encoding for a given catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingLayout {
    pub n_columns: usize,
}

impl EncodingLayout {
    pub fn for_catalog(c: &Catalog) -> Self {
        EncodingLayout { n_columns: c.total_columns() }
    }

    pub fn kind_offset(&self) -> usize {
        0
    }

    pub fn key_offset(&self, slot: usize) -> usize {
        OpKind::ALL.len() + slot * self.n_columns
    }

    pub fn predicate_column_offset(&self) -> usize {
        self.key_offset(MAX_INDEX_WIDTH)
    }

    pub fn op_offset(&self) -> usize {
        self.predicate_column_offset() + self.n_columns
    }

    pub fn value_offset(&self) -> usize {
        self.op_offset() + CmpOp::ALL.len()
    }

    pub fn rank_offset(&self) -> usize {
        self.value_offset() + 1
    }

    pub fn len(&self) -> usize {
        self.rank_offset() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Encoding length for a catalog; identical for every operator.
pub fn encoding_len(c: &Catalog) -> usize {
    EncodingLayout::for_catalog(c).len()
}

/// The predicate with the lowest estimated selectivity (first on ties).
pub fn most_selective<'a>(preds: &'a [Predicate], c: &Catalog) -> Result<Option<&'a Predicate>> {
    let mut best: Option<(&Predicate, f64)> = None;
    for p in preds {
        let s = catalog::selectivity(p, c)?;
        if best.is_none_or(|(_, b)| s < b) {
            best = Some((p, s));
        }
    }
    Ok(best.map(|(p, _)| p))
}

pub fn encode_operator(n: &PlanNode, c: &Catalog) -> Result<OperatorEncoding> {
    let layout = EncodingLayout::for_catalog(c);
    let mut v = vec![0.0; layout.len()];
    v[layout.kind_offset() + n.kind.ordinal()] = 1.0;
    if let Some(ix) = &n.index {
        for (slot, key) in ix.key_columns.iter().take(MAX_INDEX_WIDTH).enumerate() {
            v[layout.key_offset(slot) + c.column_ordinal(&ix.table, key)?] = 1.0;
        }
    }
    if let Some(p) = most_selective(&n.predicates, c)? {
        let def = c.column(&p.column)?;
        v[layout.predicate_column_offset() + c.column_ordinal(&p.column.table, &p.column.column)?] = 1.0;
        v[layout.op_offset() + p.op.ordinal()] = 1.0;
        match &p.value {
            Literal::Num(x) => {
                if let Some((lo, hi)) = def.domain() {
                    if hi > lo {
                        v[layout.value_offset()] = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
                    }
                }
            }
            Literal::Token(rank) => {
                if def.kind == ColumnKind::String && def.distinct_count > 1 {
                    v[layout.rank_offset()] = (*rank as f64 / (def.distinct_count - 1) as f64).clamp(0.0, 1.0);
                }
            }
            Literal::Column(_) => {}
        }
    }
    Ok(OperatorEncoding { vector: v })
}
