//! Feature diffusion over perturbed graphs and the non-learnable
//! aggregation stages that can run ahead of training.
//!
//! Each configuration class preprocesses up to its first learnable
//! aggregator:
//!
//! | class | stored stage        | payload shape         |
//! |-------|---------------------|-----------------------|
//! | C1    | concat, mean, sum   | `(L+1)d`              |
//! | C2    | concat, mean        | `n × (L+1)d`          |
//! | C3    | concat              | `R × n × (L+1)d`      |
//! | C4    | diffusion only      | `R × (L+1) × n × d`   |

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Dataset, Graph};
use crate::perturb::{apply_mask, make_masks, normalize_sym, PerturbationPlan};
use crate::sparse::CsrMatrix;

/// Which of the COMB / MERGE / POOL aggregators are learnable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConfigClass {
    C1,
    C2,
    C3,
    C4,
}

impl ConfigClass {
    pub const ALL: [ConfigClass; 4] = [Self::C1, Self::C2, Self::C3, Self::C4];

    pub fn stage(self) -> Stage {
        match self {
            Self::C1 => Stage::GraphVector,
            Self::C2 => Stage::NodeMatrix,
            Self::C3 => Stage::PerPerturbation,
            Self::C4 => Stage::FullDiffusion,
        }
    }
}

impl fmt::Display for ConfigClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::C1 => "c1",
            Self::C2 => "c2",
            Self::C3 => "c3",
            Self::C4 => "c4",
        };
        f.write_str(s)
    }
}

impl FromStr for ConfigClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "c1" | "1" => Ok(Self::C1),
            "c2" | "2" => Ok(Self::C2),
            "c3" | "3" => Ok(Self::C3),
            "c4" | "4" => Ok(Self::C4),
            _ => Err(Error::InvalidParam(format!("unknown configuration class {s:?}"))),
        }
    }
}

/// Ablations that remove parts of the preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    /// One unperturbed copy (`p = 0`, `R = 1`); all diffusion levels kept.
    NoPerturbation,
    /// One unperturbed copy and only the deepest level `Â^L X`.
    SingleDiffusion,
}

impl Ablation {
    pub fn plan(self, plan: PerturbationPlan) -> PerturbationPlan {
        match self {
            Self::None => plan,
            _ => PerturbationPlan::identity(plan.seed),
        }
    }

    /// Number of diffusion levels kept for depth `l`.
    pub fn levels(self, l: usize) -> usize {
        match self {
            Self::SingleDiffusion => 1,
            _ => l + 1,
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::NoPerturbation => "sign",
            Self::SingleDiffusion => "sgcn",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "sign" | "no_perturbation" => Ok(Self::NoPerturbation),
            "sgcn" | "single_diffusion" => Ok(Self::SingleDiffusion),
            _ => Err(Error::InvalidParam(format!("unknown ablation {s:?}"))),
        }
    }
}

/// Hand-off point between preprocessing and training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    GraphVector = 1,
    NodeMatrix = 2,
    PerPerturbation = 3,
    FullDiffusion = 4,
}

impl Stage {
    pub fn from_u32(v: u32) -> Option<Self> {
        match v {
            1 => Some(Self::GraphVector),
            2 => Some(Self::NodeMatrix),
            3 => Some(Self::PerPerturbation),
            4 => Some(Self::FullDiffusion),
            _ => None,
        }
    }

    /// Payload length for a graph with `n` nodes.
    pub fn payload_len(self, n: usize, r: usize, levels: usize, d: usize) -> usize {
        match self {
            Self::GraphVector => levels * d,
            Self::NodeMatrix => n * levels * d,
            Self::PerPerturbation | Self::FullDiffusion => r * n * levels * d,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Diffused feature matrices of one graph, indexed `[r][l]`, each `n × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSet {
    pub levels: Vec<Vec<Array2<f64>>>,
}

impl DiffusionSet {
    pub fn num_perturbations(&self) -> usize {
        self.levels.len()
    }
}

/// `[X, ÂX, …, Â^L X]` by repeated sparse–dense products.
pub fn diffuse(a_hat: &CsrMatrix, x: &Array2<f64>, l: usize) -> Result<Vec<Array2<f64>>> {
    if l == 0 {
        return Err(Error::InvalidParam("diffusion depth must be >= 1".into()));
    }
    if x.nrows() != a_hat.n() {
        return Err(Error::shape(format!(
            "{} feature rows for {} nodes",
            x.nrows(),
            a_hat.n()
        )));
    }
    let mut out = Vec::with_capacity(l + 1);
    out.push(x.clone());
    for k in 1..=l {
        let next = a_hat.spmm(&out[k - 1])?;
        out.push(next);
    }
    Ok(out)
}

/// Diffusion of `g` over every perturbation of `plan`.
pub fn diffusion_set(g: &Graph, plan: &PerturbationPlan, l: usize, stream: u64) -> Result<DiffusionSet> {
    plan.validate()?;
    let levels = make_masks(g.num_nodes(), plan, stream)
        .iter()
        .map(|mask| {
            let a_hat = normalize_sym(&apply_mask(&g.adj, mask)?);
            diffuse(&a_hat, &g.features, l)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DiffusionSet { levels })
}

/// Column-wise concatenation of the parts in order.
pub fn combine_concat(parts: &[Array2<f64>]) -> Result<Array2<f64>> {
    let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| p.view()).collect();
    if let Some(first) = views.first() {
        if views.iter().any(|v| v.nrows() != first.nrows()) {
            return Err(Error::shape("concatenated parts differ in row count"));
        }
    } else {
        return Err(Error::shape("nothing to concatenate"));
    }
    concatenate(Axis(1), &views).map_err(|e| Error::shape(e.to_string()))
}

/// Element-wise mean, accumulated in input order.
pub fn merge_mean(zs: &[Array2<f64>]) -> Result<Array2<f64>> {
    let first = zs.first().ok_or_else(|| Error::shape("nothing to merge"))?;
    let mut acc = first.clone();
    for z in &zs[1..] {
        if z.dim() != acc.dim() {
            return Err(Error::shape("merged matrices differ in shape"));
        }
        acc += z;
    }
    acc /= zs.len() as f64;
    Ok(acc)
}

/// Column sums, accumulated top to bottom.
pub fn pool_sum(z: &Array2<f64>) -> Array1<f64> {
    let mut acc = Array1::zeros(z.ncols());
    for row in z.outer_iter() {
        acc += &row;
    }
    acc
}

/// Everything needed to turn a graph into a training input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub plan: PerturbationPlan,
    pub l: usize,
    pub class: ConfigClass,
    pub ablation: Ablation,
}

impl Preprocessing {
    pub fn new(plan: PerturbationPlan, l: usize, class: ConfigClass) -> Self {
        Self {
            plan,
            l,
            class,
            ablation: Ablation::None,
        }
    }

    /// The plan after the ablation is applied.
    pub fn effective_plan(&self) -> PerturbationPlan {
        self.ablation.plan(self.plan)
    }

    pub fn levels(&self) -> usize {
        self.ablation.levels(self.l)
    }
}

/// A graph after the non-learnable stages of its configuration class.
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedGraph {
    pub stage: Stage,
    /// Node count of the source graph.
    pub n: usize,
    pub r: usize,
    /// Diffusion levels per perturbation (`L + 1` unless ablated).
    pub levels: usize,
    pub d: usize,
    pub label: usize,
    /// Row-major payload; axis order (r, l, node, feature) restricted to the
    /// axes present at `stage`.
    pub payload: Vec<f32>,
}

impl PreprocessedGraph {
    /// Width of a combined node representation.
    pub fn node_width(&self) -> usize {
        self.levels * self.d
    }

    pub fn shape(&self) -> Vec<usize> {
        match self.stage {
            Stage::GraphVector => vec![self.node_width()],
            Stage::NodeMatrix => vec![self.n, self.node_width()],
            Stage::PerPerturbation => vec![self.r, self.n, self.node_width()],
            Stage::FullDiffusion => vec![self.r, self.levels, self.n, self.d],
        }
    }

    pub fn check(&self) -> Result<()> {
        let expected = self.stage.payload_len(self.n, self.r, self.levels, self.d);
        if self.payload.len() != expected {
            return Err(Error::shape(format!(
                "{} payload has {} values, expected {expected}",
                self.stage,
                self.payload.len()
            )));
        }
        Ok(())
    }
}

fn to_f32(values: impl IntoIterator<Item = f64>) -> Vec<f32> {
    values.into_iter().map(|v| v as f32).collect()
}

/// Preprocesses one graph on perturbation stream `stream`.
pub fn preprocess_graph_with(g: &Graph, prep: &Preprocessing, stream: u64) -> Result<PreprocessedGraph> {
    let plan = prep.effective_plan();
    let set = diffusion_set(g, &plan, prep.l, stream)?;
    let keep_from = prep.l + 1 - prep.levels();
    let kept: Vec<&[Array2<f64>]> = set.levels.iter().map(|lv| &lv[keep_from..]).collect();
    let stage = prep.class.stage();

    let payload = match stage {
        Stage::FullDiffusion => to_f32(kept.iter().flat_map(|lv| lv.iter()).flat_map(|m| m.iter().copied())),
        _ => {
            let combined = kept.iter().map(|lv| combine_concat(lv)).collect::<Result<Vec<_>>>()?;
            match stage {
                Stage::PerPerturbation => to_f32(combined.iter().flat_map(|m| m.iter().copied())),
                Stage::NodeMatrix => to_f32(merge_mean(&combined)?.iter().copied()),
                Stage::GraphVector => to_f32(pool_sum(&merge_mean(&combined)?).iter().copied()),
                Stage::FullDiffusion => unreachable!(),
            }
        }
    };

    let out = PreprocessedGraph {
        stage,
        n: g.num_nodes(),
        r: plan.r,
        levels: prep.levels(),
        d: g.num_features(),
        label: g.label,
        payload,
    };
    out.check()?;
    Ok(out)
}

/// Preprocesses one graph on stream 0.
pub fn preprocess_graph(g: &Graph, plan: &PerturbationPlan, l: usize, class: ConfigClass) -> Result<PreprocessedGraph> {
    preprocess_graph_with(g, &Preprocessing::new(*plan, l, class), 0)
}

/// Preprocesses every graph in parallel; graph `i` uses stream `i`, so the
/// result does not depend on the worker count.
pub fn preprocess_dataset(ds: &Dataset, prep: &Preprocessing) -> Result<Vec<PreprocessedGraph>> {
    ds.graphs
        .par_iter()
        .enumerate()
        .map(|(i, g)| preprocess_graph_with(g, prep, i as u64))
        .collect()
}
