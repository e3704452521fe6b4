//! 1-WL color refinement and the perturbation expressiveness demo.
//!
//! Colors are interned, not hashed: at every round the distinct signatures
//! `(color, sorted neighbor colors)` of all graphs under comparison are
//! sorted and replaced by their rank. Ranks depend only on the multiset of
//! signatures, so they are independent of node order and collision free.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::perturb::{apply_mask, PerturbationMask};
use crate::sparse::CsrMatrix;

/// Stable colors with their multiplicities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColorHistogram {
    pub counts: BTreeMap<usize, usize>,
}

impl ColorHistogram {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn num_colors(&self) -> usize {
        self.counts.len()
    }
}

/// Result of refining several graphs under one shared color space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Refinement {
    pub histograms: Vec<ColorHistogram>,
    /// Per-graph final node colors.
    pub colors: Vec<Vec<usize>>,
    /// Rounds performed until the partition stopped changing.
    pub iterations: usize,
}

/// Replaces each key by its rank among the sorted distinct keys.
fn intern<K: Ord + Clone>(keys: &[Vec<K>]) -> Vec<Vec<usize>> {
    let distinct: BTreeMap<K, usize> = keys
        .iter()
        .flatten()
        .cloned()
        .map(|k| (k, 0))
        .collect::<BTreeMap<_, _>>()
        .into_keys()
        .enumerate()
        .map(|(i, k)| (k, i))
        .collect();
    keys.iter().map(|g| g.iter().map(|k| distinct[k]).collect()).collect()
}

fn initial_keys(g: &Graph) -> Vec<Vec<u64>> {
    (0..g.num_nodes())
        .map(|i| {
            if g.num_features() == 0 {
                vec![g.adj.row_len(i) as u64]
            } else {
                g.features.row(i).iter().map(|v| v.to_bits()).collect()
            }
        })
        .collect()
}

fn num_distinct(colors: &[Vec<usize>]) -> usize {
    colors.iter().flatten().max().map_or(0, |m| m + 1)
}

/// Refines `graphs` jointly for at most `max_iters` rounds (stopping early
/// once no color class splits). Initial colors are feature-row equality
/// classes, or degrees when graphs carry no features.
pub fn wl_refine_many(graphs: &[&Graph], max_iters: usize) -> Refinement {
    let mut colors = intern(&graphs.iter().map(|g| initial_keys(g)).collect::<Vec<_>>());
    let mut classes = num_distinct(&colors);
    let mut iterations = 0;
    while iterations < max_iters {
        let signatures: Vec<Vec<(usize, Vec<usize>)>> = graphs
            .iter()
            .zip(&colors)
            .map(|(g, c)| {
                (0..g.num_nodes())
                    .map(|i| {
                        let mut nbrs: Vec<usize> = g.adj.row(i).0.iter().map(|&j| c[j]).collect();
                        nbrs.sort_unstable();
                        (c[i], nbrs)
                    })
                    .collect()
            })
            .collect();
        let next = intern(&signatures);
        iterations += 1;
        let next_classes = num_distinct(&next);
        colors = next;
        if next_classes == classes {
            break;
        }
        classes = next_classes;
    }
    let histograms = colors
        .iter()
        .map(|c| {
            let mut counts = BTreeMap::new();
            for &col in c {
                *counts.entry(col).or_insert(0) += 1;
            }
            ColorHistogram { counts }
        })
        .collect();
    Refinement {
        histograms,
        colors,
        iterations,
    }
}

/// Stable histogram of a single graph.
pub fn wl_refine(g: &Graph, max_iters: usize) -> ColorHistogram {
    wl_refine_many(&[g], max_iters).histograms.remove(0)
}

/// True when 1-WL separates the two graphs.
pub fn wl_distinguish(a: &Graph, b: &Graph) -> bool {
    let rounds = a.num_nodes().max(b.num_nodes()).max(1);
    let r = wl_refine_many(&[a, b], rounds);
    r.histograms[0] != r.histograms[1]
}

/// Cycle on `n` nodes without features.
pub fn cycle(n: usize) -> Graph {
    let adj = CsrMatrix::from_edges(n, (0..n).map(|i| (i, (i + 1) % n))).expect("valid cycle");
    featureless(adj)
}

/// `copies` disjoint cycles on `n` nodes each.
pub fn disjoint_cycles(copies: usize, n: usize) -> Graph {
    let edges = (0..copies).flat_map(|c| (0..n).map(move |i| (c * n + i, c * n + (i + 1) % n)));
    featureless(CsrMatrix::from_edges(copies * n, edges).expect("valid cycles"))
}

fn featureless(adj: CsrMatrix) -> Graph {
    let n = adj.n();
    Graph::new(adj, ndarray::Array2::zeros((n, 0)), 0).expect("consistent shapes")
}

/// `g` with node `node` removed by zeroing its row and column.
pub fn delete_node(g: &Graph, node: usize) -> Graph {
    let mut mask = PerturbationMask::all(g.num_nodes());
    mask.kept[node] = false;
    let adj = apply_mask(&g.adj, &mask).expect("mask matches graph");
    Graph::new(adj, g.features.clone(), g.label).expect("consistent shapes")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeletionPair {
    pub left: usize,
    pub right: usize,
    pub distinguishable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WlDemo {
    pub left_name: String,
    pub right_name: String,
    pub original_distinguishable: bool,
    pub left_histogram: ColorHistogram,
    pub right_histogram: ColorHistogram,
    pub pairs: Vec<DeletionPair>,
    pub distinguishable_pairs: usize,
}

/// Compares two graphs, then every pair of single-node deletions.
pub fn deletion_demo(left: &Graph, right: &Graph, left_name: &str, right_name: &str) -> WlDemo {
    let rounds = left.num_nodes().max(right.num_nodes()).max(1);
    let base = wl_refine_many(&[left, right], rounds);
    let mut pairs = Vec::with_capacity(left.num_nodes() * right.num_nodes());
    for i in 0..left.num_nodes() {
        let a = delete_node(left, i);
        for j in 0..right.num_nodes() {
            let b = delete_node(right, j);
            pairs.push(DeletionPair {
                left: i,
                right: j,
                distinguishable: wl_distinguish(&a, &b),
            });
        }
    }
    let distinguishable_pairs = pairs.iter().filter(|p| p.distinguishable).count();
    WlDemo {
        left_name: left_name.into(),
        right_name: right_name.into(),
        original_distinguishable: base.histograms[0] != base.histograms[1],
        left_histogram: base.histograms[0].clone(),
        right_histogram: base.histograms[1].clone(),
        pairs,
        distinguishable_pairs,
    }
}

/// The 6-cycle against two disjoint triangles.
pub fn cycle_demo() -> WlDemo {
    deletion_demo(&cycle(6), &disjoint_cycles(2, 3), "C6", "2xC3")
}
