//! Random graphs and dense reference implementations shared by the
//! integration tests.

#![allow(dead_code)]

pub mod gradcheck;
pub mod params;

use std::path::PathBuf;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use se2p::{apply_mask, diffuse, normalize_sym, CsrMatrix, Graph, PerturbationMask};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi graph with uniform features in `[-1, 1]`.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, edge_prob: f64, d: usize, label: usize) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < edge_prob {
                edges.push((u, v));
            }
        }
    }
    let adj = CsrMatrix::from_edges(n, edges).unwrap();
    let features = Array2::from_shape_simple_fn((n, d), || rng.gen_range(-1.0..1.0));
    Graph::new(adj, features, label).unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, n: usize, p: f64) -> PerturbationMask {
    PerturbationMask {
        kept: (0..n).map(|_| rng.gen::<f64>() >= p).collect(),
    }
}

/// Dense `D^{-1/2} A D^{-1/2}` after zeroing dropped rows and columns.
pub fn dense_normalized(adj: &CsrMatrix, mask: &PerturbationMask) -> Array2<f64> {
    let n = adj.n();
    let mut a = adj.to_dense();
    for i in 0..n {
        for j in 0..n {
            if !mask.kept[i] || !mask.kept[j] {
                a[[i, j]] = 0.0;
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).sum()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| {
        if deg[i] == 0.0 || deg[j] == 0.0 {
            0.0
        } else {
            a[[i, j]] / (deg[i].sqrt() * deg[j].sqrt())
        }
    })
}

/// `[X, ÂX, …, Â^L X]` using explicit dense matrix powers.
pub fn dense_diffusion(a_hat: &Array2<f64>, x: &Array2<f64>, l: usize) -> Vec<Array2<f64>> {
    let n = a_hat.nrows();
    let mut power = Array2::<f64>::eye(n);
    let mut out = Vec::with_capacity(l + 1);
    for _ in 0..=l {
        out.push(power.dot(x));
        power = power.dot(a_hat);
    }
    out
}

/// `‖a − b‖_F / ‖b‖_F`, or `‖a‖_F` when `b` is zero.
pub fn rel_error(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let diff = (a - b).mapv(|v| v * v).sum().sqrt();
    let norm = b.mapv(|v| v * v).sum().sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

pub fn mutag_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/MUTAG")
}

/// Largest relative error between sparse diffusion and dense matrix powers
/// over `trials` random graphs with `n <= 12` and edge probability 0.3;
/// every other trial drops nodes first.
pub fn worst_diffusion_error(seed: u64, trials: usize) -> f64 {
    let mut rng = rng(seed);
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let n = rng.gen_range(1..=12);
        let d = rng.gen_range(1..=4);
        let l = rng.gen_range(1..=4);
        let g = random_graph(&mut rng, n, 0.3, d, 0);
        let mask = if trial % 2 == 0 {
            PerturbationMask::all(n)
        } else {
            random_mask(&mut rng, n, 0.4)
        };
        let sparse = diffuse(&normalize_sym(&apply_mask(&g.adj, &mask).unwrap()), &g.features, l).unwrap();
        let dense = dense_diffusion(&dense_normalized(&g.adj, &mask), &g.features, l);
        assert_eq!(sparse.len(), l + 1);
        for (s, o) in sparse.iter().zip(&dense) {
            worst = worst.max(rel_error(s, o));
        }
    }
    worst
}
