//! Static interaction graph among units.
//!
//! Neighbor lists are sorted, symmetric, free of duplicates and self-entries.
//! Self-influence is modeled inside the ODE function, never as an edge.

mod generate;
mod partition;

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub use generate::{generate_synthetic_graph, DegreeProfile};
pub use partition::{partition_graph, GraphPartition};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Graph {
    neighbors: Vec<Vec<usize>>,
}

impl Graph {
    /// Builds a graph from edges given in either orientation. Duplicates and
    /// self-pairs are dropped.
    pub fn new(num_nodes: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut neighbors = vec![Vec::new(); num_nodes];
        for &(i, j) in edges {
            if i >= num_nodes || j >= num_nodes {
                return Err(Error::EdgeOutOfRange(i, j, num_nodes));
            }
            if i == j {
                continue;
            }
            neighbors[i].push(j);
            neighbors[j].push(i);
        }
        for list in &mut neighbors {
            list.sort_unstable();
            list.dedup();
        }
        Ok(Graph { neighbors })
    }

    pub fn num_nodes(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.neighbors[node]
    }

    pub fn degree(&self, node: usize) -> usize {
        self.neighbors[node].len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        self.neighbors.iter().map(Vec::len).collect()
    }

    pub fn num_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn mean_degree(&self) -> f64 {
        if self.neighbors.is_empty() {
            return 0.0;
        }
        2.0 * self.num_edges() as f64 / self.num_nodes() as f64
    }

    /// Each undirected edge once, as `(i, j)` with `i < j`, in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(i, list)| list.iter().copied().filter(move |&j| j > i).map(move |j| (i, j)))
    }

    /// Mean over neighbors of a per-node quantity; 0 for isolated nodes.
    pub fn neighbor_mean(&self, node: usize, values: &[f64]) -> f64 {
        let list = &self.neighbors[node];
        if list.is_empty() {
            return 0.0;
        }
        list.iter().map(|&j| values[j]).sum::<f64>() / list.len() as f64
    }

    /// Fraction of treated neighbors per node. Isolated nodes get 0.
    pub fn interference_summary(&self, treatments: &[u8]) -> Result<Vec<f64>> {
        if treatments.len() != self.num_nodes() {
            return Err(Error::dim(
                "interference_summary",
                &[self.num_nodes()],
                &[treatments.len()],
            ));
        }
        if let Some(bad) = treatments.iter().position(|&a| a > 1) {
            return Err(Error::Domain(format!(
                "treatment of node {bad} is {}, expected 0 or 1",
                treatments[bad]
            )));
        }
        Ok(self
            .neighbors
            .iter()
            .map(|list| {
                if list.is_empty() {
                    0.0
                } else {
                    let treated = list.iter().filter(|&&j| treatments[j] == 1).count();
                    treated as f64 / list.len() as f64
                }
            })
            .collect())
    }

    /// Subgraph induced by `nodes`, relabeled so that `nodes[k]` becomes `k`.
    pub fn induced_subgraph(&self, nodes: &[usize]) -> Result<Graph> {
        let mut index = vec![usize::MAX; self.num_nodes()];
        for (k, &node) in nodes.iter().enumerate() {
            if node >= self.num_nodes() {
                return Err(Error::param(format!(
                    "subgraph node {node} outside graph of {} nodes",
                    self.num_nodes()
                )));
            }
            if index[node] != usize::MAX {
                return Err(Error::param(format!("subgraph node {node} listed twice")));
            }
            index[node] = k;
        }
        let neighbors = nodes
            .iter()
            .map(|&node| {
                let mut list: Vec<usize> = self.neighbors[node]
                    .iter()
                    .filter_map(|&j| (index[j] != usize::MAX).then_some(index[j]))
                    .collect();
                list.sort_unstable();
                list
            })
            .collect();
        Ok(Graph { neighbors })
    }

    /// Connected-component label per node, labels assigned in order of first node.
    pub fn components(&self) -> Vec<usize> {
        let n = self.num_nodes();
        let mut label = vec![usize::MAX; n];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = next;
            stack.push(start);
            while let Some(u) = stack.pop() {
                for &v in &self.neighbors[u] {
                    if label[v] == usize::MAX {
                        label[v] = next;
                        stack.push(v);
                    }
                }
            }
            next += 1;
        }
        label
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.num_nodes() {
            return Err(Error::dim("permuted", &[self.num_nodes()], &[perm.len()]));
        }
        let edges: Vec<_> = self.edges().map(|(i, j)| (perm[i], perm[j])).collect();
        Graph::new(self.num_nodes(), &edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut out = format!("# nodes {}\n", self.num_nodes());
        for (i, j) in self.edges() {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    /// Parses the plain-text edge list format: one `i j` pair per line,
    /// `#` starts a comment. A `# nodes N` header fixes the node count;
    /// otherwise `num_nodes` is used, or the largest index plus one.
    pub fn parse_edge_list(text: &str, num_nodes: Option<usize>) -> Result<Graph> {
        let mut edges = Vec::new();
        let mut declared = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                let mut words = comment.split_whitespace();
                if words.next() == Some("nodes") {
                    declared = words.next().and_then(|w| w.parse::<usize>().ok());
                }
                continue;
            }
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let parse = |f: Option<&str>| -> Result<usize> {
                f.and_then(|s| s.parse().ok()).ok_or_else(|| {
                    Error::format("edge list", "<text>", format!("line {}: {raw:?}", lineno + 1))
                })
            };
            let i = parse(fields.next())?;
            let j = parse(fields.next())?;
            if fields.next().is_some() {
                return Err(Error::format(
                    "edge list",
                    "<text>",
                    format!("line {}: more than two fields", lineno + 1),
                ));
            }
            edges.push((i, j));
        }
        let n = num_nodes.or(declared).unwrap_or_else(|| {
            edges.iter().map(|&(i, j)| i.max(j) + 1).max().unwrap_or(0)
        });
        Graph::new(n, &edges)
    }

    pub fn read_edge_list(path: &Path, num_nodes: Option<usize>) -> Result<Graph> {
        let text = std::fs::read_to_string(path)?;
        Graph::parse_edge_list(&text, num_nodes).map_err(|e| match e {
            Error::Format { what, reason, .. } => Error::format(what, path, reason),
            other => other,
        })
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_symmetrizes_and_dedups() {
        let g = Graph::new(3, &[(0, 1), (1, 0), (1, 2)]).unwrap();
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0, 2]);
        assert_eq!(g.neighbors(2), &[1]);
        assert_eq!(g.degrees(), vec![1, 2, 1]);
    }

    #[test]
    fn empty_edge_set() {
        let g = Graph::new(2, &[]).unwrap();
        assert_eq!(g.degrees(), vec![0, 0]);
        assert_eq!(g.num_edges(), 0);
    }

    #[test]
    fn self_pairs_dropped() {
        let g = Graph::new(2, &[(1, 1), (0, 1)]).unwrap();
        assert_eq!(g.neighbors(1), &[0]);
    }

    #[test]
    fn out_of_range_edge_is_rejected() {
        let err = Graph::new(2, &[(0, 5)]).unwrap_err();
        assert!(err.to_string().contains("index out of range"));
        assert!(err.to_string().contains("(0, 5)"));
    }

    #[test]
    fn interference_is_neighbor_mean() {
        let g = Graph::new(5, &[(0, 1), (0, 2), (0, 3), (0, 4)]).unwrap();
        let g_sum = g.interference_summary(&[0, 1, 0, 1, 0]).unwrap();
        assert_eq!(g_sum[0], 0.5);
        let all = g.interference_summary(&[0, 1, 1, 1, 1]).unwrap();
        assert_eq!(all[0], 1.0);
    }

    #[test]
    fn isolated_node_has_zero_interference() {
        let g = Graph::new(3, &[(0, 1)]).unwrap();
        let s = g.interference_summary(&[1, 1, 1]).unwrap();
        assert_eq!(s, vec![1.0, 1.0, 0.0]);
    }

    #[test]
    fn interference_length_mismatch() {
        let g = Graph::new(3, &[(0, 1)]).unwrap();
        assert!(matches!(
            g.interference_summary(&[1, 0]),
            Err(Error::Dimension { .. })
        ));
        assert!(matches!(
            g.interference_summary(&[1, 0, 2]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn edge_list_round_trip_keeps_isolated_tail() {
        let g = Graph::new(6, &[(0, 3), (2, 1), (3, 4)]).unwrap();
        let text = g.to_edge_list();
        assert_eq!(Graph::parse_edge_list(&text, None).unwrap(), g);
    }

    #[test]
    fn edge_list_ignores_comments() {
        let text = "# a comment\n0 1\n\n1 2 # trailing\n#2 3\n";
        let g = Graph::parse_edge_list(text, None).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert!(Graph::parse_edge_list("0 x\n", None).is_err());
    }

    #[test]
    fn induced_subgraph_keeps_internal_edges() {
        let g = Graph::new(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let sub = g.induced_subgraph(&[2, 1, 3]).unwrap();
        assert_eq!(sub.neighbors(0), &[1, 2]);
        assert_eq!(sub.neighbors(1), &[0]);
        assert_eq!(sub.neighbors(2), &[0]);
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (1usize..30).prop_flat_map(|n| {
            proptest::collection::vec((0..n, 0..n), 0..60)
                .prop_map(move |edges| Graph::new(n, &edges).unwrap())
        })
    }

    proptest! {
        #[test]
        fn graph_invariants_hold(g in arb_graph()) {
            for i in 0..g.num_nodes() {
                let list = g.neighbors(i);
                prop_assert!(list.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(!list.contains(&i));
                for &j in list {
                    prop_assert!(g.neighbors(j).contains(&i));
                }
                prop_assert_eq!(g.degree(i), list.len());
            }
        }

        #[test]
        fn interference_bounds(g in arb_graph(), bits in proptest::collection::vec(0u8..2, 30)) {
            let n = g.num_nodes();
            let s = g.interference_summary(&bits[..n]).unwrap();
            prop_assert!(s.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let zeros = g.interference_summary(&vec![0; n]).unwrap();
            prop_assert!(zeros.iter().all(|&v| v == 0.0));
            let ones = g.interference_summary(&vec![1; n]).unwrap();
            for i in 0..n {
                let expect = if g.degree(i) > 0 { 1.0 } else { 0.0 };
                prop_assert_eq!(ones[i], expect);
            }
        }
    }
}
