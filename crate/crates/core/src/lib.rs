//! Graph classification with precomputed node-dropout perturbations and
//! feature diffusion.
//!
//! A graph is perturbed `R` times by dropping nodes, each perturbed
//! adjacency is symmetrically normalized and the node features are
//! diffused `L` steps. Depending on the [`ConfigClass`], the aggregation
//! across diffusion depths, perturbations and nodes is either fixed (and
//! computed once ahead of training) or learned.
//!
//! ```no_run
//! use se2p::{parse_tu_dataset, default_hparams, PerturbationPlan, Preprocessing, ConfigClass, preprocess_dataset};
//!
//! let ds = parse_tu_dataset("data/MUTAG", "MUTAG")?;
//! let hp = default_hparams(ds.gamma)?;
//! let plan = PerturbationPlan::new(hp.p, hp.r, 0)?;
//! let graphs = preprocess_dataset(&ds, &Preprocessing::new(plan, hp.l, ConfigClass::C2))?;
//! assert_eq!(graphs.len(), ds.len());
//! # Ok::<(), se2p::Error>(())
//! ```

pub mod cache;
pub mod diffusion;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod perturb;
pub mod sparse;
pub mod trainer;
pub mod wl;

pub use cache::{decode_cache, encode_cache, read_cache, write_cache, Cache, CacheHeader};
pub use diffusion::{
    combine_concat, diffuse, diffusion_set, merge_mean, pool_sum, preprocess_dataset, preprocess_graph, Ablation,
    ConfigClass, DiffusionSet, PreprocessedGraph, Preprocessing, Stage,
};
pub use error::{Error, Result};
pub use graph::{
    avg_degree, encode_degree_features, mean_max_degree, parse_tu_dataset, write_tu_dataset, Dataset, Graph,
};
pub use model::{build_model, param_count, CountMode, Model, ModelConfig};
pub use perturb::{apply_mask, default_hparams, make_masks, normalize_sym, PerturbationMask, PerturbationPlan};
pub use sparse::CsrMatrix;
pub use trainer::{ablation_run, bench, cross_validate, kfold_split, BenchReport, CvResult, FoldSplit, TrainConfig};
pub use wl::{wl_distinguish, wl_refine, ColorHistogram};
