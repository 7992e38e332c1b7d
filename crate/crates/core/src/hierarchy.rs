//! Weighted label trees.
//!
//! A [`LabelTree`] is a rooted hierarchy whose leaves are the trainable
//! classes. Leaves are indexed `0..C` in ascending node-id order; these are
//! the coordinates of every leaf probability vector in the crate. Node
//! vectors (aggregated probabilities) are indexed by node position, which is
//! also ascending node-id order.
//!
//! Levels count upward from the leaves: every leaf sits at level 0 and an
//! internal node sits one level above its highest child, so the root is at
//! level `K`. The level of an edge is the level of its child node.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One node as it appears in a tree document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: u64,
    pub name: String,
    pub parent: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_weight: Option<f64>,
}

/// On-disk tree document: `{"nodes": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDocument {
    pub nodes: Vec<NodeRecord>,
}

/// Edge-weight assignment strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeWeightScheme {
    /// 1 on edges into leaves, 0 elsewhere.
    LeafOnly,
    /// 1 on edges from the root to its children, 0 elsewhere.
    TopOnly,
    /// 1 everywhere.
    Equal,
    /// 100/10/1 on top/middle/bottom edges of a 3-level tree.
    Hierarchical,
    /// Weight per edge level (level of the child node).
    Custom(BTreeMap<usize, f64>),
}

impl EdgeWeightScheme {
    /// Short name used on the command line and in reports.
    pub fn short_name(&self) -> &'static str {
        match self {
            EdgeWeightScheme::LeafOnly => "leaf",
            EdgeWeightScheme::TopOnly => "top",
            EdgeWeightScheme::Equal => "equal",
            EdgeWeightScheme::Hierarchical => "hier",
            EdgeWeightScheme::Custom(_) => "custom",
        }
    }

    pub fn from_short_name(name: &str) -> Option<Self> {
        match name {
            "leaf" => Some(EdgeWeightScheme::LeafOnly),
            "top" => Some(EdgeWeightScheme::TopOnly),
            "equal" => Some(EdgeWeightScheme::Equal),
            "hier" => Some(EdgeWeightScheme::Hierarchical),
            _ => None,
        }
    }

    fn weight_for(&self, edge_level: usize, top_level: usize) -> Result<f64> {
        Ok(match self {
            EdgeWeightScheme::LeafOnly => f64::from(u8::from(edge_level == 0)),
            EdgeWeightScheme::TopOnly => f64::from(u8::from(edge_level == top_level)),
            EdgeWeightScheme::Equal => 1.0,
            EdgeWeightScheme::Hierarchical => match edge_level {
                2 => 100.0,
                1 => 10.0,
                _ => 1.0,
            },
            EdgeWeightScheme::Custom(map) => *map
                .get(&edge_level)
                .ok_or(Error::MissingLevelWeight(edge_level))?,
        })
    }
}

impl fmt::Display for EdgeWeightScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

/// A validated, immutable label hierarchy.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelTree {
    nodes: Vec<NodeRecord>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    level: Vec<usize>,
    root: usize,
    leaves: Vec<usize>,
    leaf_slot: Vec<Option<usize>>,
    /// Children always precede their parent.
    post_order: Vec<usize>,
    subtree_leaves: Vec<Vec<usize>>,
    weighted: bool,
    /// The scheme that produced the weights, when one was applied.
    scheme: Option<EdgeWeightScheme>,
}

impl LabelTree {
    /// Builds a tree from node records, validating structure and weights.
    pub fn from_records(mut records: Vec<NodeRecord>) -> Result<Self> {
        records.sort_by_key(|n| n.id);
        for pair in records.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(Error::DuplicateId(pair[0].id));
            }
        }
        let index: HashMap<u64, usize> =
            records.iter().enumerate().map(|(i, n)| (n.id, i)).collect();

        let mut parent = vec![None; records.len()];
        let mut children = vec![Vec::new(); records.len()];
        let mut roots = Vec::new();
        for (i, node) in records.iter().enumerate() {
            if let Some(w) = node.edge_weight {
                if !w.is_finite() || w < 0.0 {
                    return Err(Error::InvalidWeight {
                        id: node.id,
                        weight: w,
                    });
                }
            }
            match node.parent {
                None => roots.push(i),
                Some(p) => {
                    let &pi = index.get(&p).ok_or(Error::UnknownParent {
                        child: node.id,
                        parent: p,
                    })?;
                    parent[i] = Some(pi);
                    children[pi].push(i);
                }
            }
        }
        let root = match roots.as_slice() {
            [] => return Err(Error::NoRoot),
            [r] => *r,
            many => {
                return Err(Error::MultipleRoots(
                    many.iter().map(|&i| records[i].id).collect(),
                ))
            }
        };

        // Breadth-first from the root; anything unreached sits on a cycle.
        let mut order = Vec::with_capacity(records.len());
        let mut seen = vec![false; records.len()];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for &v in &children[u] {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        if order.len() != records.len() {
            let stuck = (0..records.len())
                .filter(|&i| !seen[i])
                .map(|i| records[i].id)
                .collect();
            return Err(Error::Cycle(stuck));
        }
        let post_order: Vec<usize> = order.into_iter().rev().collect();

        let leaves: Vec<usize> = (0..records.len())
            .filter(|&i| children[i].is_empty())
            .collect();
        if leaves.len() < 2 {
            return Err(Error::TooFewLeaves(leaves.len()));
        }
        let mut leaf_slot = vec![None; records.len()];
        for (slot, &i) in leaves.iter().enumerate() {
            leaf_slot[i] = Some(slot);
        }

        let mut level = vec![0usize; records.len()];
        let mut subtree_leaves: Vec<Vec<usize>> = vec![Vec::new(); records.len()];
        for &u in &post_order {
            if let Some(slot) = leaf_slot[u] {
                subtree_leaves[u].push(slot);
            } else {
                level[u] = 1 + children[u].iter().map(|&c| level[c]).max().unwrap_or(0);
                let mut acc: Vec<usize> = children[u]
                    .iter()
                    .flat_map(|&c| subtree_leaves[c].iter().copied())
                    .collect();
                acc.sort_unstable();
                subtree_leaves[u] = acc;
            }
        }

        let weighted = records
            .iter()
            .enumerate()
            .all(|(i, n)| i == root || n.edge_weight.is_some());
        Ok(Self {
            nodes: records,
            parent,
            children,
            level,
            root,
            leaves,
            leaf_slot,
            post_order,
            subtree_leaves,
            weighted,
            scheme: None,
        })
    }

    /// Parses a JSON tree document.
    pub fn parse(document: &str) -> Result<Self> {
        let doc: TreeDocument = serde_json::from_str(document)?;
        Self::from_records(doc.nodes)
    }

    pub fn to_document(&self) -> TreeDocument {
        TreeDocument {
            nodes: self.nodes.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("tree serializes")
    }

    /// Returns a copy whose every edge carries the weight `scheme` assigns to
    /// its level.
    pub fn assign_weights(&self, scheme: &EdgeWeightScheme) -> Result<Self> {
        let top = self.depth();
        if *scheme == EdgeWeightScheme::Hierarchical && top != 3 {
            return Err(Error::NotThreeLevels(top));
        }
        let mut out = self.clone();
        for i in 0..out.nodes.len() {
            out.nodes[i].edge_weight = if i == out.root {
                None
            } else {
                Some(scheme.weight_for(out.level[i], top - 1)?)
            };
        }
        out.weighted = true;
        out.scheme = Some(scheme.clone());
        Ok(out)
    }

    /// Number of levels above the leaves (`K`): the level of the root.
    pub fn depth(&self) -> usize {
        self.level[self.root]
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_leaves(&self) -> usize {
        self.leaves.len()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn node(&self, index: usize) -> &NodeRecord {
        &self.nodes[index]
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn node_index(&self, id: u64) -> Option<usize> {
        self.nodes.binary_search_by_key(&id, |n| n.id).ok()
    }

    pub fn parent(&self, index: usize) -> Option<usize> {
        self.parent[index]
    }

    pub fn children(&self, index: usize) -> &[usize] {
        &self.children[index]
    }

    pub fn level(&self, index: usize) -> usize {
        self.level[index]
    }

    /// Level of every node keyed by node id.
    pub fn node_levels(&self) -> BTreeMap<u64, usize> {
        self.nodes
            .iter()
            .zip(&self.level)
            .map(|(n, &l)| (n.id, l))
            .collect()
    }

    /// Node indices of the leaves in slot order.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn leaf_slot(&self, index: usize) -> Option<usize> {
        self.leaf_slot[index]
    }

    pub fn leaf_names(&self) -> Vec<&str> {
        self.leaves
            .iter()
            .map(|&i| self.nodes[i].name.as_str())
            .collect()
    }

    pub fn post_order(&self) -> &[usize] {
        &self.post_order
    }

    /// Leaf slots below (or equal to) a node, ascending.
    pub fn subtree_leaves(&self, index: usize) -> &[usize] {
        &self.subtree_leaves[index]
    }

    /// Weight of the edge into a node; `None` for the root or an unweighted tree.
    pub fn weight(&self, index: usize) -> Option<f64> {
        self.nodes[index].edge_weight
    }

    pub fn scheme(&self) -> Option<&EdgeWeightScheme> {
        self.scheme.as_ref()
    }

    pub fn is_weighted(&self) -> bool {
        self.weighted
    }

    /// Nodes from a leaf up to, but excluding, the root.
    pub fn path_to_root(&self, leaf_slot: usize) -> Vec<usize> {
        let mut path = Vec::new();
        let mut u = self.leaves[leaf_slot];
        while u != self.root {
            path.push(u);
            u = self.parent[u].expect("non-root node has a parent");
        }
        path
    }

    /// The classes of level `k`: the highest nodes at or below level `k`.
    ///
    /// On a balanced tree these are exactly the level-`k` nodes; otherwise
    /// shallow leaves stand in for their branch. The returned nodes always
    /// partition the leaves.
    pub fn level_partition(&self, k: usize) -> Result<LevelPartition> {
        let depth = self.depth();
        if k >= depth {
            return Err(Error::InvalidLevel {
                level: k,
                levels: depth,
            });
        }
        let nodes: Vec<usize> = (0..self.nodes.len())
            .filter(|&v| self.level[v] <= k && self.parent[v].is_some_and(|p| self.level[p] > k))
            .collect();
        let mut leaf_class = vec![usize::MAX; self.leaves.len()];
        for (class, &v) in nodes.iter().enumerate() {
            for &slot in &self.subtree_leaves[v] {
                leaf_class[slot] = class;
            }
        }
        debug_assert!(leaf_class.iter().all(|&c| c != usize::MAX));
        Ok(LevelPartition {
            level: k,
            nodes,
            leaf_class,
        })
    }

    /// Tree-induced leaf-to-leaf distances.
    pub fn ground_distance(&self) -> Result<DistanceMatrix> {
        if !self.is_weighted() {
            return Err(Error::WeightsUnassigned);
        }
        let c = self.leaves.len();
        let mut ancestors: Vec<Vec<usize>> = Vec::with_capacity(c);
        for slot in 0..c {
            let mut chain = self.path_to_root(slot);
            chain.push(self.root);
            ancestors.push(chain);
        }
        let mut entries = vec![0.0; c * c];
        for a in 0..c {
            for b in (a + 1)..c {
                let d = self.path_length(&ancestors[a], &ancestors[b]);
                entries[a * c + b] = d;
                entries[b * c + a] = d;
            }
        }
        Ok(DistanceMatrix {
            size: c,
            entries,
            scheme: self.scheme.clone(),
        })
    }

    /// Sums edge weights from `a` up to the common ancestor, then down to `b`.
    fn path_length(&self, up_a: &[usize], up_b: &[usize]) -> f64 {
        // Strip the shared suffix (common ancestors).
        let mut ia = up_a.len();
        let mut ib = up_b.len();
        while ia > 0 && ib > 0 && up_a[ia - 1] == up_b[ib - 1] {
            ia -= 1;
            ib -= 1;
        }
        let mut total = 0.0;
        for &v in &up_a[..ia] {
            total += self.nodes[v].edge_weight.unwrap_or(0.0);
        }
        for &v in up_b[..ib].iter().rev() {
            total += self.nodes[v].edge_weight.unwrap_or(0.0);
        }
        total
    }

    pub fn adjacency(&self) -> AdjacencyOperator<'_> {
        AdjacencyOperator { tree: self }
    }
}

/// Classes at one evaluation level.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelPartition {
    pub level: usize,
    /// Node index of each class, ascending node id.
    pub nodes: Vec<usize>,
    /// Zero-based class of every leaf slot.
    pub leaf_class: Vec<usize>,
}

impl LevelPartition {
    pub fn num_classes(&self) -> usize {
        self.nodes.len()
    }
}

/// Dense `C x C` ground-distance matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    size: usize,
    entries: Vec<f64>,
    scheme: Option<EdgeWeightScheme>,
}

impl DistanceMatrix {
    /// Wraps raw row-major entries. No metric checks are performed.
    pub fn from_entries(size: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != size * size {
            return Err(Error::DimensionMismatch {
                expected: size * size,
                actual: entries.len(),
            });
        }
        Ok(Self {
            size,
            entries,
            scheme: None,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.entries[a * self.size + b]
    }

    pub fn row(&self, a: usize) -> &[f64] {
        &self.entries[a * self.size..(a + 1) * self.size]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn scheme(&self) -> Option<&EdgeWeightScheme> {
        self.scheme.as_ref()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&d| d == 0.0)
    }

    /// CSV with a header row and column of leaf names.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut out = String::from("leaf");
        for n in names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for (a, name) in names.iter().enumerate() {
            out.push_str(name);
            for &d in self.row(a) {
                out.push_str(&format!(",{d}"));
            }
            out.push('\n');
        }
        out
    }
}

/// The parent-to-child incidence operator `A` over node vectors.
#[derive(Debug, Clone, Copy)]
pub struct AdjacencyOperator<'a> {
    tree: &'a LabelTree,
}

impl AdjacencyOperator<'_> {
    /// `(A x)_u = sum of x over the children of u`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let tree = self.tree;
        (0..tree.num_nodes())
            .map(|u| tree.children[u].iter().map(|&v| x[v]).sum())
            .collect()
    }

    /// `sum_{k=0..=K} A^k x`; higher powers vanish.
    pub fn power_series(&self, x: &[f64]) -> Vec<f64> {
        let mut total = x.to_vec();
        let mut term = x.to_vec();
        for _ in 0..self.tree.depth() {
            term = self.apply(&term);
            for (t, v) in total.iter_mut().zip(&term) {
                *t += v;
            }
        }
        total
    }

    /// Dense row-major matrix, `A[u][v] = 1` when `u` is the parent of `v`.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.tree.num_nodes();
        let mut a = vec![vec![0.0; n]; n];
        for v in 0..n {
            if let Some(u) = self.tree.parent[v] {
                a[u][v] = 1.0;
            }
        }
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, parent: Option<u64>) -> NodeRecord {
        NodeRecord {
            id,
            name: format!("n{id}"),
            parent,
            edge_weight: None,
        }
    }

    /// root 0 -> a 1, P 2 -> {b 3, c 4}
    fn three_leaf() -> LabelTree {
        LabelTree::from_records(vec![
            rec(0, None),
            rec(1, Some(0)),
            rec(2, Some(0)),
            rec(3, Some(2)),
            rec(4, Some(2)),
        ])
        .unwrap()
    }

    #[test]
    fn chain_plus_leaf() {
        let t = LabelTree::from_records(vec![
            rec(0, None),
            rec(1, Some(0)),
            rec(2, Some(1)),
            rec(3, Some(0)),
        ])
        .unwrap();
        assert_eq!(t.num_leaves(), 2);
        assert_eq!(t.depth(), 2);
        assert_eq!(t.leaf_names(), vec!["n2", "n3"]);
    }

    #[test]
    fn structural_errors() {
        let two_roots = LabelTree::from_records(vec![rec(0, None), rec(1, None), rec(2, Some(0))]);
        assert!(matches!(two_roots, Err(Error::MultipleRoots(_))));

        let dup = LabelTree::from_records(vec![rec(0, None), rec(1, Some(0)), rec(1, Some(0))]);
        assert!(matches!(dup, Err(Error::DuplicateId(1))));

        let cycle = LabelTree::from_records(vec![
            rec(0, None),
            rec(1, Some(0)),
            rec(2, Some(0)),
            rec(3, Some(4)),
            rec(4, Some(3)),
        ]);
        assert!(matches!(cycle, Err(Error::Cycle(ids)) if ids == vec![3, 4]));

        let mut neg = vec![rec(0, None), rec(1, Some(0)), rec(2, Some(0))];
        neg[1].edge_weight = Some(-1.0);
        assert!(matches!(
            LabelTree::from_records(neg),
            Err(Error::InvalidWeight { id: 1, .. })
        ));

        let one_leaf = LabelTree::from_records(vec![rec(0, None), rec(1, Some(0))]);
        assert!(matches!(one_leaf, Err(Error::TooFewLeaves(1))));

        let dangling =
            LabelTree::from_records(vec![rec(0, None), rec(1, Some(9)), rec(2, Some(0))]);
        assert!(matches!(
            dangling,
            Err(Error::UnknownParent {
                child: 1,
                parent: 9
            })
        ));
    }

    #[test]
    fn parse_document() {
        let doc = r#"{"nodes":[
            {"id":0,"name":"root","parent":null},
            {"id":1,"name":"x","parent":0,"edge_weight":1.5},
            {"id":2,"name":"y","parent":0,"edge_weight":0.5}]}"#;
        let t = LabelTree::parse(doc).unwrap();
        assert!(t.is_weighted());
        let m = t.ground_distance().unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        let round = LabelTree::parse(&t.to_json()).unwrap();
        assert_eq!(round.nodes(), t.nodes());
    }

    #[test]
    fn levels_of_unbalanced_tree() {
        let t = three_leaf();
        let levels = t.node_levels();
        assert_eq!(levels[&0], 2);
        assert_eq!(levels[&1], 0);
        assert_eq!(levels[&2], 1);
        assert_eq!(levels[&3], 0);
        let top = t.level_partition(1).unwrap();
        assert_eq!(top.nodes, vec![1, 2]);
        assert_eq!(top.leaf_class, vec![0, 1, 1]);
        assert!(t.level_partition(2).is_err());
    }

    #[test]
    fn root_to_leaf_levels() {
        let t =
            LabelTree::from_records(vec![rec(0, None), rec(1, Some(0)), rec(2, Some(0))]).unwrap();
        assert_eq!(t.node_levels(), BTreeMap::from([(0, 1), (1, 0), (2, 0)]));
    }

    #[test]
    fn unit_distances() {
        let t = three_leaf()
            .assign_weights(&EdgeWeightScheme::Equal)
            .unwrap();
        let m = t.ground_distance().unwrap();
        assert_eq!(m.row(0), &[0.0, 3.0, 3.0]);
        assert_eq!(m.get(1, 2), 2.0);

        let pair = LabelTree::from_records(vec![rec(0, None), rec(1, Some(0)), rec(2, Some(0))])
            .unwrap()
            .assign_weights(&EdgeWeightScheme::Equal)
            .unwrap();
        assert_eq!(
            pair.ground_distance().unwrap().entries(),
            &[0.0, 2.0, 2.0, 0.0]
        );
    }

    #[test]
    fn unweighted_tree_has_no_distance() {
        assert!(matches!(
            three_leaf().ground_distance(),
            Err(Error::WeightsUnassigned)
        ));
    }

    #[test]
    fn scheme_errors() {
        let t = three_leaf();
        assert!(matches!(
            t.assign_weights(&EdgeWeightScheme::Hierarchical),
            Err(Error::NotThreeLevels(2))
        ));
        let partial = EdgeWeightScheme::Custom(BTreeMap::from([(0, 1.0)]));
        assert!(matches!(
            t.assign_weights(&partial),
            Err(Error::MissingLevelWeight(1))
        ));
    }

    #[test]
    fn leaf_only_on_two_level_tree() {
        let t = three_leaf()
            .assign_weights(&EdgeWeightScheme::LeafOnly)
            .unwrap();
        // a is a leaf directly below the root: its edge is a leaf edge.
        assert_eq!(t.weight(1), Some(1.0));
        assert_eq!(t.weight(2), Some(0.0));
        assert_eq!(t.weight(3), Some(1.0));
        let m = t.ground_distance().unwrap();
        assert_eq!(m.get(0, 1), 2.0);
        assert_eq!(m.get(1, 2), 2.0);
    }

    #[test]
    fn top_only_weights_root_children() {
        let t = three_leaf()
            .assign_weights(&EdgeWeightScheme::TopOnly)
            .unwrap();
        assert_eq!(t.weight(2), Some(1.0));
        assert_eq!(t.weight(3), Some(0.0));
        let m = t.ground_distance().unwrap();
        assert_eq!(m.get(1, 2), 0.0);
        // a is level 0, not a level-1 node, so its edge carries no top weight.
        assert_eq!(m.get(0, 1), 1.0);
    }

    #[test]
    fn adjacency_is_nilpotent() {
        let t = three_leaf();
        let a = t.adjacency();
        let mut x = vec![1.0; t.num_nodes()];
        for _ in 0..=t.depth() {
            x = a.apply(&x);
        }
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn distance_csv() {
        let t = LabelTree::from_records(vec![rec(0, None), rec(1, Some(0)), rec(2, Some(0))])
            .unwrap()
            .assign_weights(&EdgeWeightScheme::Equal)
            .unwrap();
        let csv = t.ground_distance().unwrap().to_csv(&t.leaf_names());
        assert_eq!(csv, "leaf,n1,n2\nn1,0,2\nn2,2,0\n");
    }
}
