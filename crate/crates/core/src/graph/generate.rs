use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::Graph;
use crate::error::{Error, Result};
use crate::rng;

/// Target degree statistics for synthetic topologies.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegreeProfile {
    pub mean_degree: f64,
    pub degree_std: f64,
}

impl DegreeProfile {
    /// Sparse social graph, 2.0 ± 1.7.
    pub const FLICKR: DegreeProfile = DegreeProfile {
        mean_degree: 2.0,
        degree_std: 1.7,
    };
    /// Dense social graph, 30.7 ± 25.1.
    pub const BLOGCATALOG: DegreeProfile = DegreeProfile {
        mean_degree: 30.7,
        degree_std: 25.1,
    };
}

const REMATCH_ROUNDS: usize = 16;

/// Degree-targeted configuration-model graph.
///
/// Per-node target degrees come from a normal with the profile's mean and
/// std truncated to `[0, n-1]`; the stub total is then nudged to exactly
/// `round(mean * n)` so the realized mean tracks the request. Stubs are
/// matched at random, self-pairs and duplicates are re-matched for a few
/// rounds and finally discarded. Edges lost that way are spent joining
/// stray components to the largest one.
pub fn generate_synthetic_graph(num_nodes: usize, profile: DegreeProfile, seed: u64) -> Result<Graph> {
    let DegreeProfile {
        mean_degree,
        degree_std,
    } = profile;
    if num_nodes < 2 {
        return Err(Error::param("synthetic graph needs at least 2 nodes"));
    }
    if !(mean_degree >= 0.0) || !(degree_std >= 0.0) {
        return Err(Error::param(format!(
            "degree profile must be non-negative, got {mean_degree} ± {degree_std}"
        )));
    }
    if mean_degree >= num_nodes as f64 {
        return Err(Error::param(format!(
            "mean degree {mean_degree} not below node count {num_nodes}"
        )));
    }
    let max_degree = (num_nodes - 1) as f64;
    let mut rng = rng::stream(seed, 0);

    let mut degrees: Vec<usize> = if degree_std == 0.0 {
        vec![mean_degree.round() as usize; num_nodes]
    } else {
        let normal = Normal::new(mean_degree, degree_std).expect("std checked above");
        (0..num_nodes)
            .map(|_| loop {
                let d: f64 = normal.sample(&mut rng);
                if (0.0..=max_degree).contains(&d) {
                    break d.round() as usize;
                }
            })
            .collect()
    };

    let target_stubs = 2 * ((mean_degree * num_nodes as f64 / 2.0).round() as usize);
    let mut total: usize = degrees.iter().sum();
    while total < target_stubs {
        let i = rng.random_range(0..num_nodes);
        if degrees[i] < num_nodes - 1 {
            degrees[i] += 1;
            total += 1;
        }
    }
    while total > target_stubs {
        let i = rng.random_range(0..num_nodes);
        if degrees[i] > 0 {
            degrees[i] -= 1;
            total -= 1;
        }
    }

    let mut stubs: Vec<usize> = degrees
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect();
    let mut edges: HashSet<(usize, usize)> = HashSet::with_capacity(total / 2);
    for _ in 0..REMATCH_ROUNDS {
        if stubs.len() < 2 {
            break;
        }
        stubs.shuffle(&mut rng);
        let mut leftover = Vec::new();
        for pair in stubs.chunks_exact(2) {
            let (a, b) = (pair[0].min(pair[1]), pair[0].max(pair[1]));
            if a == b || !edges.insert((a, b)) {
                leftover.extend_from_slice(pair);
            }
        }
        if leftover.len() == stubs.len() {
            break;
        }
        stubs = leftover;
    }

    let mut edge_list: Vec<(usize, usize)> = edges.into_iter().collect();
    edge_list.sort_unstable();
    let mut graph = Graph::new(num_nodes, &edge_list)?;

    let budget = (target_stubs / 2).saturating_sub(graph.num_edges());
    if budget > 0 {
        graph = connect_components(graph, edge_list, budget, &mut rng)?;
    }
    Ok(graph)
}

fn connect_components(
    graph: Graph,
    mut edges: Vec<(usize, usize)>,
    budget: usize,
    rng: &mut impl Rng,
) -> Result<Graph> {
    let labels = graph.components();
    let count = labels.iter().max().map_or(0, |&m| m + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); count];
    for (node, &label) in labels.iter().enumerate() {
        members[label].push(node);
    }
    // largest first; ties by label for determinism
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by_key(|&c| (std::cmp::Reverse(members[c].len()), c));
    let Some((&giant, rest)) = order.split_first() else {
        return Ok(graph);
    };
    for &comp in rest.iter().take(budget) {
        let u = members[comp][rng.random_range(0..members[comp].len())];
        let v = members[giant][rng.random_range(0..members[giant].len())];
        edges.push((u, v));
    }
    Graph::new(graph.num_nodes(), &edges)
}
