//! Taxonomic-tree pipeline: cumulative counts, per-node subcomposition
//! slices, per-subtree paired tests with FDR control, global combined
//! tests, the L¹ Kantorovich–Rubinstein distance between trees, and a
//! paired-strata PERMANOVA comparator.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{degenerate, invalid, Error, Result};
use crate::estimate::{CountMatrix, PairedCounts};
use crate::hypothesis::{bh_fdr, fisher_combine, paired_f_test, second_smallest_combine, unpaired_dm_test, TestResult};
use crate::numkit::{RngStream, SymMatrix};

/// One row of a node table; `parent` is `None` for the root.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub id: String,
    pub parent: Option<String>,
    pub rank: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxNode {
    pub id: String,
    pub rank: String,
    pub name: String,
    pub parent: Option<usize>,
}

/// Rooted taxonomy. Node indices follow the input order; children keep
/// their input order.
#[derive(Debug, Clone)]
pub struct TaxTree {
    nodes: Vec<TaxNode>,
    children: Vec<Vec<usize>>,
    root: usize,
    preorder: Vec<usize>,
    index: HashMap<String, usize>,
}

impl TaxTree {
    pub fn new(specs: Vec<NodeSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidTree("no nodes".into()));
        }
        let mut index = HashMap::with_capacity(specs.len());
        for (k, s) in specs.iter().enumerate() {
            if s.id.is_empty() {
                return Err(Error::InvalidTree(format!("node {k} has an empty id")));
            }
            if index.insert(s.id.clone(), k).is_some() {
                return Err(Error::InvalidTree(format!("duplicate node id {:?}", s.id)));
            }
        }
        let mut nodes = Vec::with_capacity(specs.len());
        let mut children = vec![Vec::new(); specs.len()];
        let mut roots = Vec::new();
        for (k, s) in specs.into_iter().enumerate() {
            let parent = match &s.parent {
                None => {
                    roots.push(k);
                    None
                }
                Some(p) => {
                    let &pk = index
                        .get(p)
                        .ok_or_else(|| Error::InvalidTree(format!("node {:?} has unknown parent {p:?}", s.id)))?;
                    if pk == k {
                        return Err(Error::InvalidTree(format!("node {:?} is its own parent", s.id)));
                    }
                    children[pk].push(k);
                    Some(pk)
                }
            };
            nodes.push(TaxNode {
                id: s.id,
                rank: s.rank,
                name: s.name,
                parent,
            });
        }
        let root = match roots.as_slice() {
            [r] => *r,
            [] => return Err(Error::InvalidTree("no root (every node has a parent)".into())),
            _ => return Err(Error::InvalidTree(format!("{} roots", roots.len()))),
        };
        let mut preorder = Vec::with_capacity(nodes.len());
        let mut stack = vec![root];
        while let Some(k) = stack.pop() {
            preorder.push(k);
            stack.extend(children[k].iter().rev());
        }
        if preorder.len() != nodes.len() {
            return Err(Error::InvalidTree("some nodes are not reachable from the root (cycle)".into()));
        }
        Ok(TaxTree {
            nodes,
            children,
            root,
            preorder,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, k: usize) -> &TaxNode {
        &self.nodes[k]
    }

    pub fn nodes(&self) -> &[TaxNode] {
        &self.nodes
    }

    pub fn children(&self, k: usize) -> &[usize] {
        &self.children[k]
    }

    pub fn is_internal(&self, k: usize) -> bool {
        !self.children[k].is_empty()
    }

    pub fn preorder(&self) -> &[usize] {
        &self.preorder
    }

    /// Internal nodes in preorder.
    pub fn internal_nodes(&self) -> Vec<usize> {
        self.preorder.iter().copied().filter(|&k| self.is_internal(k)).collect()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Finds a node by name (first in input order).
    pub fn find_by_name(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// `k` and its ancestors up to the root, starting with `k`.
    pub fn lineage(&self, k: usize) -> Vec<usize> {
        let mut out = vec![k];
        let mut cur = k;
        while let Some(p) = self.nodes[cur].parent {
            out.push(p);
            cur = p;
        }
        out
    }

    pub fn to_specs(&self) -> Vec<NodeSpec> {
        self.nodes
            .iter()
            .map(|n| NodeSpec {
                id: n.id.clone(),
                parent: n.parent.map(|p| self.nodes[p].id.clone()),
                rank: n.rank.clone(),
                name: n.name.clone(),
            })
            .collect()
    }
}

/// Cumulative counts: `Q(v) = assigned(v) + Σ_{children c} Q(c)`.
pub fn aggregate_q(tree: &TaxTree, assigned: &[u64]) -> Result<Vec<u64>> {
    if assigned.len() != tree.len() {
        return Err(invalid(format!(
            "{} assigned counts for a tree of {} nodes",
            assigned.len(),
            tree.len()
        )));
    }
    let mut q = assigned.to_vec();
    for &k in tree.preorder().iter().rev() {
        if let Some(p) = tree.node(k).parent {
            q[p] = q[p]
                .checked_add(q[k])
                .ok_or_else(|| invalid("cumulative count overflows u64"))?;
        }
    }
    Ok(q)
}

/// Directly assigned and cumulative counts for `n` paired subjects.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeCounts {
    pub ids: Vec<String>,
    /// `assigned[t][i][k]`: reads of subject `i`, condition `t`, assigned to node `k` itself.
    pub assigned: [Vec<Vec<u64>>; 2],
    /// `cumulative[t][i][k]` = Q of node `k`.
    pub cumulative: [Vec<Vec<u64>>; 2],
}

impl TreeCounts {
    pub fn new(tree: &TaxTree, ids: Vec<String>, assigned1: Vec<Vec<u64>>, assigned2: Vec<Vec<u64>>) -> Result<Self> {
        if assigned1.len() != ids.len() || assigned2.len() != ids.len() {
            return Err(invalid("subject ids and count rows disagree"));
        }
        let agg = |rows: &[Vec<u64>]| rows.iter().map(|r| aggregate_q(tree, r)).collect::<Result<Vec<_>>>();
        let cumulative = [agg(&assigned1)?, agg(&assigned2)?];
        Ok(TreeCounts {
            ids,
            assigned: [assigned1, assigned2],
            cumulative,
        })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }
}

/// Paired counts of one internal node's subcomposition: the cumulative
/// counts of its children in tree order, then the remainder assigned to the
/// node itself.
#[derive(Debug, Clone)]
pub struct SubtreeSlice {
    pub node: usize,
    /// All subjects and all `|children| + 1` categories.
    pub full: PairedCounts,
    /// Subjects with a positive total at this node in both conditions.
    pub sample_mask: Vec<bool>,
    /// Categories with at least one count among the kept subjects.
    pub category_mask: Vec<bool>,
    /// `full` restricted to both masks.
    pub kept: PairedCounts,
}

impl SubtreeSlice {
    pub fn effective_n(&self) -> usize {
        self.kept.n()
    }

    pub fn effective_d(&self) -> usize {
        self.kept.d()
    }

    /// Enough data for the paired test (`n > d ≥ 2`).
    pub fn testable(&self) -> bool {
        let (n, d) = (self.effective_n(), self.effective_d());
        d >= 2 && n > d
    }
}

pub fn slice_subtree(tree: &TaxTree, tc: &TreeCounts, k: usize) -> Result<SubtreeSlice> {
    if k >= tree.len() {
        return Err(Error::InvalidNode(k, "no such node".into()));
    }
    if !tree.is_internal(k) {
        return Err(Error::InvalidNode(k, format!("{:?} is a leaf", tree.node(k).id)));
    }
    let kids = tree.children(k);
    let build = |q: &[Vec<u64>]| -> Result<CountMatrix> {
        let rows: Vec<Vec<u64>> = q
            .iter()
            .map(|qi| {
                let mut row: Vec<u64> = kids.iter().map(|&c| qi[c]).collect();
                let below: u64 = row.iter().sum();
                row.push(qi[k] - below);
                row
            })
            .collect();
        if rows.is_empty() {
            Ok(CountMatrix::empty(kids.len() + 1))
        } else {
            CountMatrix::from_rows(&rows)
        }
    };
    let full = PairedCounts::new(tc.ids.clone(), build(&tc.cumulative[0])?, build(&tc.cumulative[1])?)?;
    let (kept, sample_mask, category_mask) = full.reduced();
    Ok(SubtreeSlice {
        node: k,
        full,
        sample_mask,
        category_mask,
        kept,
    })
}

/// Which per-subtree test to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtreeMethod {
    /// Paired F-test.
    #[default]
    Paired,
    /// Two-sample Dirichlet-multinomial test ignoring the pairing.
    UnpairedDm,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NodeOutcome {
    Tested(TestResult),
    /// Effective `n ≤ d` (or `d < 2`).
    SkippedSmallSample { n: usize, d: usize },
    SkippedDegenerate { reason: String },
}

impl NodeOutcome {
    pub fn p_value(&self) -> Option<f64> {
        match self {
            NodeOutcome::Tested(r) => Some(r.p_value),
            _ => None,
        }
    }

    pub fn skip_reason(&self) -> Option<String> {
        match self {
            NodeOutcome::Tested(_) => None,
            NodeOutcome::SkippedSmallSample { n, d } => Some(format!("n<=d (n={n}, d={d})")),
            NodeOutcome::SkippedDegenerate { reason } => Some(format!("degenerate: {reason}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node: usize,
    pub outcome: NodeOutcome,
    pub p_adjusted: Option<f64>,
    pub rejected: bool,
}

/// Per-node outcomes for every internal node, in tree preorder.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtreeReport {
    pub records: Vec<NodeRecord>,
    pub fdr: f64,
}

impl SubtreeReport {
    pub fn tested_pvalues(&self) -> Vec<f64> {
        self.records.iter().filter_map(|r| r.outcome.p_value()).collect()
    }

    pub fn rejected_nodes(&self) -> Vec<usize> {
        self.records.iter().filter(|r| r.rejected).map(|r| r.node).collect()
    }

    pub fn record(&self, node: usize) -> Option<&NodeRecord> {
        self.records.iter().find(|r| r.node == node)
    }
}

fn test_slice(slice: &SubtreeSlice, method: SubtreeMethod) -> Result<NodeOutcome> {
    let (n, d) = (slice.effective_n(), slice.effective_d());
    if !slice.testable() {
        return Ok(NodeOutcome::SkippedSmallSample { n, d });
    }
    let result = match method {
        SubtreeMethod::Paired => paired_f_test(&slice.kept),
        SubtreeMethod::UnpairedDm => unpaired_dm_test(&slice.kept.counts1, &slice.kept.counts2),
    };
    match result {
        Ok(r) => Ok(NodeOutcome::Tested(r)),
        Err(Error::InsufficientSamples { n, d }) => Ok(NodeOutcome::SkippedSmallSample { n, d }),
        Err(e) if e.is_degeneracy() => Ok(NodeOutcome::SkippedDegenerate { reason: e.to_string() }),
        Err(e) => Err(e),
    }
}

/// Tests every internal node, then applies Benjamini–Hochberg at level
/// `fdr` across the nodes that could be tested.
pub fn subtree_tests(tree: &TaxTree, tc: &TreeCounts, fdr: f64, method: SubtreeMethod) -> Result<SubtreeReport> {
    let internal = tree.internal_nodes();
    let outcomes: Vec<NodeOutcome> = internal
        .par_iter()
        .map(|&k| test_slice(&slice_subtree(tree, tc, k)?, method))
        .collect::<Result<_>>()?;
    let tested: Vec<usize> = (0..outcomes.len()).filter(|&i| outcomes[i].p_value().is_some()).collect();
    if tested.is_empty() {
        return Err(Error::EmptyReport);
    }
    let pvals: Vec<f64> = tested.iter().map(|&i| outcomes[i].p_value().unwrap()).collect();
    let bh = bh_fdr(&pvals, fdr)?;
    let mut records: Vec<NodeRecord> = internal
        .iter()
        .zip(outcomes)
        .map(|(&node, outcome)| NodeRecord {
            node,
            outcome,
            p_adjusted: None,
            rejected: false,
        })
        .collect();
    for (j, &i) in tested.iter().enumerate() {
        records[i].p_adjusted = Some(bh.adjusted[j]);
        records[i].rejected = bh.rejected[j];
    }
    Ok(SubtreeReport { records, fdr })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalMethod {
    Fisher,
    #[serde(alias = "second")]
    SecondSmallest,
}

/// Combined p-value over the tested subtrees.
pub fn global_test(report: &SubtreeReport, method: GlobalMethod) -> Result<f64> {
    let p = report.tested_pvalues();
    match method {
        GlobalMethod::Fisher => Ok(fisher_combine(&p)?.p_value),
        GlobalMethod::SecondSmallest => second_smallest_combine(&p),
    }
}

/// Share of a sample's reads assigned to each node itself:
/// `(Q(v) − Σ_{children} Q(c)) / Q(root)`. For leaves this is `Q(v)/Q(root)`.
pub fn remainder_proportions(tree: &TaxTree, q: &[u64]) -> Result<Vec<f64>> {
    if q.len() != tree.len() {
        return Err(invalid("count vector length does not match the tree"));
    }
    let total = q[tree.root()];
    if total == 0 {
        return Err(degenerate("sample has zero reads"));
    }
    let total = total as f64;
    (0..tree.len())
        .map(|k| {
            let below: u64 = tree.children(k).iter().map(|&c| q[c]).sum();
            q[k].checked_sub(below)
                .map(|r| r as f64 / total)
                .ok_or_else(|| invalid(format!("node {k}: children exceed the cumulative count")))
        })
        .collect()
}

/// L¹ Kantorovich–Rubinstein distance with unit branch lengths.
pub fn kr_distance(tree: &TaxTree, qa: &[u64], qb: &[u64]) -> Result<f64> {
    let pa = remainder_proportions(tree, qa)?;
    let pb = remainder_proportions(tree, qb)?;
    Ok(l1(&pa, &pb))
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Pairwise K-R distances between cumulative count vectors.
pub fn kr_distance_matrix(tree: &TaxTree, samples: &[&[u64]]) -> Result<SymMatrix> {
    let props: Vec<Vec<f64>> = samples.iter().map(|q| remainder_proportions(tree, q)).collect::<Result<_>>()?;
    Ok(SymMatrix::from_upper(props.len(), |i, j| if i == j { 0.0 } else { l1(&props[i], &props[j]) }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PermanovaResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_perm: usize,
}

/// Relative size below which the among-group sum of squares is roundoff.
const SS_TOL: f64 = 1e-12;

/// Pseudo-F with condition as the single factor, computed from squared
/// distances (equivalently, traces of the Gower-centred matrix).
fn pseudo_f(sq: &SymMatrix, group: &[u8], ss_total: f64) -> f64 {
    let n = group.len();
    let mut within = [0.0f64; 2];
    let mut size = [0usize; 2];
    for i in 0..n {
        size[group[i] as usize] += 1;
        for j in i + 1..n {
            if group[i] == group[j] {
                within[group[i] as usize] += sq.get(i, j);
            }
        }
    }
    let ss_within: f64 = (0..2).filter(|&g| size[g] > 0).map(|g| within[g] / size[g] as f64).sum();
    let ss_among = ss_total - ss_within;
    if ss_among <= SS_TOL * ss_total {
        return 0.0;
    }
    if ss_within == 0.0 {
        return f64::INFINITY;
    }
    ss_among / (ss_within / (n as f64 - 2.0))
}

/// PERMANOVA for paired samples: each subject is a stratum and the null
/// distribution comes from independently swapping the two condition labels
/// within each pair. `pairs[i] = (index of condition 1, index of condition 2)`
/// into the distance matrix. Permutation `r` draws from `rng.substream(r)`.
pub fn permanova_paired(dist: &SymMatrix, pairs: &[(usize, usize)], n_perm: usize, rng: &RngStream) -> Result<PermanovaResult> {
    let m = dist.dim();
    if n_perm < 99 {
        return Err(invalid(format!("n_perm = {n_perm}; at least 99 permutations are required")));
    }
    if pairs.len() < 2 || m != 2 * pairs.len() {
        return Err(invalid(format!("{} pairs do not cover a {m}x{m} distance matrix", pairs.len())));
    }
    let mut seen = vec![false; m];
    for &(a, b) in pairs {
        for x in [a, b] {
            if x >= m || std::mem::replace(&mut seen[x], true) {
                return Err(invalid(format!("sample index {x} is out of range or used twice")));
            }
        }
    }
    for i in 0..m {
        if dist.get(i, i) != 0.0 {
            return Err(invalid(format!("distance matrix has nonzero diagonal at {i}")));
        }
        for j in 0..m {
            let v = dist.get(i, j);
            if !v.is_finite() || v < 0.0 {
                return Err(invalid(format!("distance ({i}, {j}) = {v} is not a finite nonnegative number")));
            }
        }
    }
    let sq = SymMatrix::from_upper(m, |i, j| dist.get(i, j).powi(2));
    let ss_total: f64 = (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).map(|(i, j)| sq.get(i, j)).sum::<f64>() / m as f64;

    let mut group = vec![0u8; m];
    for &(_, b) in pairs {
        group[b] = 1;
    }
    let observed = pseudo_f(&sq, &group, ss_total);
    let tie = 1e-12 * observed.abs();
    let hits: usize = (0..n_perm)
        .into_par_iter()
        .map(|r| {
            let mut stream = rng.substream(r as u64);
            let mut g = vec![0u8; m];
            for &(a, b) in pairs {
                let flip = stream.uniform() < 0.5;
                g[a] = flip as u8;
                g[b] = (!flip) as u8;
            }
            let f = pseudo_f(&sq, &g, ss_total);
            usize::from(f >= observed - tie)
        })
        .sum();
    Ok(PermanovaResult {
        statistic: observed,
        p_value: (1 + hits) as f64 / (1 + n_perm) as f64,
        n_perm,
    })
}
