//! Run configuration: JSON files, command-line overrides and the bundled
//! per-dataset defaults.
//!
//! Every field resolves independently: a command-line value wins over the
//! config file, which wins over the dataset's row in the defaults table.
//! Perturbation settings left open after that fall back to the values
//! derived from the dataset's degree statistic.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use se2p::{default_hparams, Ablation, ConfigClass, Dataset, ModelConfig, PerturbationPlan, Preprocessing};

use crate::CliError;

/// Optional settings as they appear in a config file or on the command
/// line.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: Option<String>,
    pub data_dir: Option<PathBuf>,
    pub config_class: Option<ConfigClass>,
    pub ablation: Option<Ablation>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub p: Option<f64>,
    pub r: Option<usize>,
    pub l: Option<usize>,
    pub hidden: Option<usize>,
    pub n_final: Option<usize>,
    pub n_pool: Option<usize>,
    pub n_merge_inner: Option<usize>,
    pub n_merge_outer: Option<usize>,
    pub n_comb_inner: Option<usize>,
    pub n_comb_outer: Option<usize>,
    pub dropout: Option<f64>,
    pub batch_size: Option<usize>,
    pub epochs: Option<usize>,
    pub folds: Option<usize>,
}

macro_rules! layer_fields {
    ($hi:expr, $lo:expr, $($f:ident),* $(,)?) => {
        RunConfigFile { $($f: $hi.$f.clone().or_else(|| $lo.$f.clone()),)* }
    };
}

impl RunConfigFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, CliError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Field-wise merge in which `self` takes precedence over `lower`.
    pub fn layer(&self, lower: &RunConfigFile) -> RunConfigFile {
        layer_fields!(
            self,
            lower,
            dataset,
            data_dir,
            config_class,
            ablation,
            seed,
            out,
            p,
            r,
            l,
            hidden,
            n_final,
            n_pool,
            n_merge_inner,
            n_merge_outer,
            n_comb_inner,
            n_comb_outer,
            dropout,
            batch_size,
            epochs,
            folds,
        )
    }
}

/// One row of the bundled defaults table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDefaults {
    pub batch_size: usize,
    pub dropout: f64,
    pub l: usize,
    pub n_final: usize,
    pub n_pool: usize,
    pub hidden: usize,
    pub n_merge_inner: usize,
    pub n_merge_outer: usize,
    pub n_comb_inner: usize,
    pub n_comb_outer: usize,
}

impl From<DatasetDefaults> for RunConfigFile {
    fn from(d: DatasetDefaults) -> Self {
        RunConfigFile {
            batch_size: Some(d.batch_size),
            dropout: Some(d.dropout),
            l: Some(d.l),
            n_final: Some(d.n_final),
            n_pool: Some(d.n_pool),
            hidden: Some(d.hidden),
            n_merge_inner: Some(d.n_merge_inner),
            n_merge_outer: Some(d.n_merge_outer),
            n_comb_inner: Some(d.n_comb_inner),
            n_comb_outer: Some(d.n_comb_outer),
            ..Default::default()
        }
    }
}

/// Used for datasets missing from the table.
pub const FALLBACK_DEFAULTS: DatasetDefaults = DatasetDefaults {
    batch_size: 32,
    dropout: 0.5,
    l: 0,
    n_final: 1,
    n_pool: 1,
    hidden: 32,
    n_merge_inner: 1,
    n_merge_outer: 1,
    n_comb_inner: 1,
    n_comb_outer: 1,
};

pub fn defaults_table() -> &'static BTreeMap<String, DatasetDefaults> {
    static TABLE: OnceLock<BTreeMap<String, DatasetDefaults>> = OnceLock::new();
    TABLE.get_or_init(|| serde_json::from_str(include_str!("../data/defaults.json")).expect("bundled defaults parse"))
}

/// Maps common spellings onto TUDataset directory names.
pub fn canonical_dataset_name(name: &str) -> String {
    let upper = name.trim().to_ascii_uppercase().replace('_', "-");
    match upper.as_str() {
        "PTC-MR" | "PTCMR" => "PTC_MR".into(),
        "IMDB-B" | "IMDB-BINARY" | "IMDBBINARY" => "IMDB-BINARY".into(),
        "IMDB-M" | "IMDB-MULTI" | "IMDBMULTI" => "IMDB-MULTI".into(),
        "MUTAG" | "PROTEINS" | "COLLAB" => upper,
        _ => name.trim().to_string(),
    }
}

pub fn dataset_defaults(name: &str) -> Option<DatasetDefaults> {
    defaults_table().get(&canonical_dataset_name(name)).copied()
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub dataset: String,
    pub class: ConfigClass,
    pub ablation: Ablation,
    pub seed: u64,
    pub out: PathBuf,
    pub plan: PerturbationPlan,
    pub l: usize,
    pub epochs: usize,
    pub folds: usize,
    pub model: ModelConfig,
}

impl ResolvedConfig {
    pub fn preprocessing(&self) -> Preprocessing {
        Preprocessing {
            plan: self.plan,
            l: self.l,
            class: self.class,
            ablation: self.ablation,
        }
    }

    /// `<dataset>_<class>[-<ablation>]_<seed>`.
    pub fn run_name(&self) -> String {
        let tag = match self.ablation {
            Ablation::None => self.class.to_string(),
            a => format!("{}-{a}", self.class),
        };
        format!("{}_{}_{}", self.dataset, tag, self.seed)
    }
}

/// Completes `merged` (already layered as CLI over file) with the table row
/// for the dataset and the dataset-derived perturbation defaults.
pub fn resolve(merged: &RunConfigFile, ds: &Dataset) -> Result<ResolvedConfig, CliError> {
    let table = dataset_defaults(&ds.name).unwrap_or(FALLBACK_DEFAULTS);
    let mut table_layer = RunConfigFile::from(table);
    if table.l == 0 {
        table_layer.l = None;
    }
    let c = merged.layer(&table_layer);
    let derived = default_hparams(ds.gamma).map_err(CliError::from_core)?;
    let class = c.config_class.unwrap_or(ConfigClass::C2);
    let ablation = c.ablation.unwrap_or_default();
    let seed = c.seed.unwrap_or(0);
    let l = c.l.unwrap_or(derived.l);
    let plan =
        PerturbationPlan::new(c.p.unwrap_or(derived.p), c.r.unwrap_or(derived.r), seed).map_err(CliError::from_core)?;
    let model = ModelConfig {
        class,
        l,
        d: ds.d,
        num_classes: ds.num_classes,
        hidden: c.hidden.unwrap_or(table.hidden),
        n_final: c.n_final.unwrap_or(table.n_final),
        n_pool: c.n_pool,
        n_merge_inner: c.n_merge_inner,
        n_merge_outer: c.n_merge_outer,
        n_comb_inner: c.n_comb_inner,
        n_comb_outer: c.n_comb_outer,
        dropout: c.dropout.unwrap_or(table.dropout),
        batch_size: c.batch_size.unwrap_or(table.batch_size),
        ablation,
    };
    model.validate().map_err(CliError::from_core)?;
    Ok(ResolvedConfig {
        dataset: ds.name.clone(),
        class,
        ablation,
        seed,
        out: c.out.unwrap_or_else(|| PathBuf::from("out")),
        plan,
        l,
        epochs: c.epochs.unwrap_or(se2p::trainer::DEFAULT_EPOCHS),
        folds: c.folds.unwrap_or(se2p::trainer::DEFAULT_FOLDS),
        model,
    })
}
