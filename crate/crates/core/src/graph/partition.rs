use std::collections::VecDeque;

use rand::seq::SliceRandom;

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;

/// Disjoint train/valid/test node sets with their induced subgraphs.
#[derive(Clone, Debug)]
pub struct GraphPartition {
    pub train_nodes: Vec<usize>,
    pub valid_nodes: Vec<usize>,
    pub test_nodes: Vec<usize>,
    pub train_graph: Graph,
    pub valid_graph: Graph,
    pub test_graph: Graph,
}

impl GraphPartition {
    pub fn sets(&self) -> [&[usize]; 3] {
        [&self.train_nodes, &self.valid_nodes, &self.test_nodes]
    }

    /// Checks pairwise disjointness of the three node sets.
    pub fn check_disjoint(&self) -> Result<()> {
        let n = self.sets().iter().flat_map(|s| s.iter()).max().map_or(0, |&m| m + 1);
        let mut owner = vec![usize::MAX; n];
        for (k, set) in self.sets().iter().enumerate() {
            for &node in *set {
                if owner[node] != usize::MAX {
                    return Err(Error::param(format!(
                        "partition sets {} and {k} share node {node}",
                        owner[node]
                    )));
                }
                owner[node] = k;
            }
        }
        Ok(())
    }
}

/// Splits nodes into three parts by seeded multi-source BFS growth.
///
/// Part sizes are the largest-remainder rounding of `fractions * n`. Each
/// part starts from a random seed node and grows breadth-first; the part
/// furthest below its quota expands next. A part whose frontier runs dry
/// restarts from a random unassigned node.
pub fn partition_graph(graph: &Graph, fractions: [f64; 3], seed: u64) -> Result<GraphPartition> {
    if fractions.iter().any(|f| !(*f > 0.0 && *f < 1.0)) {
        return Err(Error::param(format!(
            "partition fractions must lie in (0, 1), got {fractions:?}"
        )));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::param(format!(
            "partition fractions must sum to 1, got {fractions:?}"
        )));
    }
    let n = graph.num_nodes();
    let quotas = largest_remainder(n, &fractions);
    if quotas.contains(&0) {
        return Err(Error::param(format!(
            "partition of {n} nodes with fractions {fractions:?} leaves an empty part"
        )));
    }

    let mut rng = rng::stream(seed, 0);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    const NONE: usize = usize::MAX;
    let mut owner = vec![NONE; n];
    let mut parts: [Vec<usize>; 3] = Default::default();
    let mut frontiers: [VecDeque<usize>; 3] = Default::default();

    for _ in 0..n {
        let k = (0..3)
            .filter(|&k| parts[k].len() < quotas[k])
            .max_by(|&a, &b| {
                let da = (quotas[a] - parts[a].len()) as f64 / quotas[a] as f64;
                let db = (quotas[b] - parts[b].len()) as f64 / quotas[b] as f64;
                da.total_cmp(&db).then(b.cmp(&a))
            })
            .expect("quotas sum to n");
        let node = loop {
            match frontiers[k].pop_front() {
                Some(v) if owner[v] == NONE => break v,
                Some(_) => continue,
                None => {
                    while owner[order[cursor]] != NONE {
                        cursor += 1;
                    }
                    break order[cursor];
                }
            }
        };
        owner[node] = k;
        parts[k].push(node);
        frontiers[k].extend(graph.neighbors(node).iter().copied().filter(|&v| owner[v] == NONE));
    }

    for part in &mut parts {
        part.sort_unstable();
    }
    let [train_nodes, valid_nodes, test_nodes] = parts;
    Ok(GraphPartition {
        train_graph: graph.induced_subgraph(&train_nodes)?,
        valid_graph: graph.induced_subgraph(&valid_nodes)?,
        test_graph: graph.induced_subgraph(&test_nodes)?,
        train_nodes,
        valid_nodes,
        test_nodes,
    })
}

fn largest_remainder(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut sizes = [0usize; 3];
    for k in 0..3 {
        sizes[k] = exact[k].floor() as usize;
    }
    let mut rest = n - sizes.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..3).collect();
    by_remainder.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    for &k in by_remainder.iter().cycle() {
        if rest == 0 {
            break;
        }
        sizes[k] += 1;
        rest -= 1;
    }
    sizes
}
