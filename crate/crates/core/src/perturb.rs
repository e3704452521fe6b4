//! Node-dropout perturbations and symmetric normalization.
//!
//! Dropping a node zeroes its adjacency row and column; the node count and
//! the feature matrix stay unchanged.
//!
//! Randomness comes from ChaCha8 (`rand_chacha`). Perturbation `r` of the
//! graph with stream id `s` draws from
//! `ChaCha8Rng::seed_from_u64(seed ^ r)` switched to stream `s`, one `f64`
//! per node in node order; the node is dropped when the draw is below `p`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbationPlan {
    /// Probability of dropping each node.
    pub p: f64,
    /// Number of perturbations.
    pub r: usize,
    pub seed: u64,
}

impl PerturbationPlan {
    pub fn new(p: f64, r: usize, seed: u64) -> Result<Self> {
        let plan = Self { p, r, seed };
        plan.validate()?;
        Ok(plan)
    }

    /// The unperturbed plan: one copy, nothing dropped.
    pub fn identity(seed: u64) -> Self {
        Self { p: 0.0, r: 1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p) {
            return Err(Error::InvalidParam(format!(
                "drop probability {} outside [0, 1)",
                self.p
            )));
        }
        if self.r == 0 {
            return Err(Error::InvalidParam("perturbation count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Default drop probability, perturbation count and diffusion depth
/// derived from the dataset degree statistic `gamma`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefaultHparams {
    pub p: f64,
    pub r: usize,
    pub l: usize,
}

/// `p = 2 / (1 + gamma)`, `R = max(1, floor(gamma))`, and `L = 3` for
/// sparse datasets (`gamma < 10`), `L = 2` for dense ones.
pub fn default_hparams(gamma: f64) -> Result<DefaultHparams> {
    if !gamma.is_finite() || gamma <= 0.0 {
        return Err(Error::InvalidParam(format!("gamma must be positive, got {gamma}")));
    }
    let p = 2.0 / (1.0 + gamma);
    if p >= 1.0 {
        return Err(Error::InvalidParam(format!(
            "gamma {gamma} gives drop probability {p} >= 1"
        )));
    }
    let r = (gamma.floor() as usize).max(1);
    let l = if gamma < 10.0 { 3 } else { 2 };
    Ok(DefaultHparams { p, r, l })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PerturbationMask {
    /// `true` where the node survives.
    pub kept: Vec<bool>,
}

impl PerturbationMask {
    pub fn all(n: usize) -> Self {
        Self { kept: vec![true; n] }
    }

    pub fn len(&self) -> usize {
        self.kept.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kept.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.kept.iter().filter(|k| !**k).count()
    }

    /// Moves entry `i` to position `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let mut kept = vec![true; self.kept.len()];
        for (i, &p) in perm.iter().enumerate() {
            kept[p] = self.kept[i];
        }
        Self { kept }
    }
}

/// Random generator for perturbation `index` on stream `stream`.
pub fn perturbation_rng(seed: u64, index: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ index);
    rng.set_stream(stream);
    rng
}

/// Samples `plan.r` independent masks over `n` nodes. `stream` separates
/// graphs that share a seed (the dataset pipeline passes the graph index).
pub fn make_masks(n: usize, plan: &PerturbationPlan, stream: u64) -> Vec<PerturbationMask> {
    (0..plan.r as u64)
        .map(|r| {
            if plan.p == 0.0 {
                return PerturbationMask::all(n);
            }
            let mut rng = perturbation_rng(plan.seed, r, stream);
            let kept = (0..n).map(|_| rng.gen::<f64>() >= plan.p).collect();
            PerturbationMask { kept }
        })
        .collect()
}

/// Zeroes the rows and columns of dropped nodes.
pub fn apply_mask(adj: &CsrMatrix, mask: &PerturbationMask) -> Result<CsrMatrix> {
    if mask.len() != adj.n() {
        return Err(Error::shape(format!(
            "mask over {} nodes for a {}-node graph",
            mask.len(),
            adj.n()
        )));
    }
    Ok(adj.filter_map(|i| mask.kept[i], |_, _, v| v))
}

/// `D^{-1/2} A D^{-1/2}` with `D` the row-degree diagonal. Nodes of degree
/// zero keep all-zero rows and columns.
pub fn normalize_sym(adj: &CsrMatrix) -> CsrMatrix {
    let inv_sqrt: Vec<f64> = (0..adj.n())
        .map(|i| {
            let d = adj.degree(i);
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    adj.filter_map(|_| true, |i, j, v| v * inv_sqrt[i] * inv_sqrt[j])
}
