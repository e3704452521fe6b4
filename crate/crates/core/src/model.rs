//! The four learnable pipelines over preprocessed graphs, their parameter
//! accounting and checkpoint files.
//!
//! | class | COMB     | MERGE    | POOL      | final |
//! |-------|----------|----------|-----------|-------|
//! | C1    | concat   | mean     | sum       | MLP   |
//! | C2    | concat   | mean     | MLP + sum | MLP   |
//! | C3    | concat   | DeepSet  | MLP + sum | MLP   |
//! | C4    | DeepSet  | DeepSet  | MLP + sum | MLP   |
//!
//! Inputs are laid out as one row per set element so every learnable stage
//! is a dense layer over a row block: C3 rows are ordered (node, r) and C4
//! rows (node, r, level).

use std::fs;
use std::path::Path;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{Ablation, ConfigClass, PreprocessedGraph, Stage};
use crate::error::{Error, Result};
use crate::nn::{segment_sum, segment_sum_backward, DeepSet, DeepSetTape, Mlp, MlpTape, Mode, Parameters, Real};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub class: ConfigClass,
    /// Diffusion depth `L`.
    pub l: usize,
    /// Node feature width.
    pub d: usize,
    pub num_classes: usize,
    /// Hidden width `h` of the pool MLP and the DeepSets.
    pub hidden: usize,
    /// Hidden layers of the final MLP.
    pub n_final: usize,
    pub n_pool: Option<usize>,
    pub n_merge_inner: Option<usize>,
    pub n_merge_outer: Option<usize>,
    pub n_comb_inner: Option<usize>,
    pub n_comb_outer: Option<usize>,
    pub dropout: f64,
    pub batch_size: usize,
    #[serde(default)]
    pub ablation: Ablation,
}

fn require(v: Option<usize>, name: &str, class: ConfigClass) -> Result<usize> {
    v.ok_or_else(|| Error::config(format!("{class} requires {name}")))
}

impl ModelConfig {
    /// Diffusion levels seen by the model after the ablation.
    pub fn levels(&self) -> usize {
        self.ablation.levels(self.l)
    }

    /// Width of a combined node representation.
    pub fn node_width(&self) -> usize {
        self.levels() * self.d
    }

    pub fn validate(&self) -> Result<()> {
        if self.l == 0 {
            return Err(Error::config("diffusion depth L must be >= 1"));
        }
        if self.d == 0 {
            return Err(Error::config("feature width d must be >= 1"));
        }
        if self.num_classes == 0 {
            return Err(Error::config("class count must be >= 1"));
        }
        if self.hidden == 0 {
            return Err(Error::config("hidden width must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        let c = self.class;
        if c != ConfigClass::C1 {
            require(self.n_pool, "n_pool", c)?;
        }
        if matches!(c, ConfigClass::C3 | ConfigClass::C4) {
            require(self.n_merge_inner, "n_merge_inner", c)?;
            require(self.n_merge_outer, "n_merge_outer", c)?;
        }
        if c == ConfigClass::C4 {
            require(self.n_comb_inner, "n_comb_inner", c)?;
            require(self.n_comb_outer, "n_comb_outer", c)?;
        }
        let top = self.final_input();
        if top >> self.n_final == 0 {
            return Err(Error::config(format!(
                "final MLP input {top} cannot be halved {} times",
                self.n_final
            )));
        }
        Ok(())
    }

    fn final_input(&self) -> usize {
        match self.class {
            ConfigClass::C1 => self.node_width(),
            _ => self.hidden,
        }
    }

    /// Final MLP widths: `h_0, h_0/2, …, h_0/2^{N_f}, C`.
    pub fn final_widths(&self) -> Vec<usize> {
        let top = self.final_input();
        let mut w: Vec<usize> = (0..=self.n_final).map(|k| top >> k).collect();
        w.push(self.num_classes);
        w
    }

    fn set_widths(&self, input: usize, hidden_layers: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.hidden, hidden_layers + 1));
        w
    }
}

/// Learnable components; presence depends on the configuration class.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub cfg: ModelConfig,
    pub comb: Option<DeepSet<T>>,
    pub merge: Option<DeepSet<T>>,
    pub pool: Option<Mlp<T>>,
    pub final_mlp: Mlp<T>,
}

/// Builds and initializes the components required by `cfg.class`.
pub fn build_model<T: Real>(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Model<T>> {
    cfg.validate()?;
    let c = cfg.class;
    let rate = cfg.dropout;
    let h = cfg.hidden;
    let comb = if c == ConfigClass::C4 {
        Some(DeepSet {
            inner: Mlp::init(
                &cfg.set_widths(cfg.d, require(cfg.n_comb_inner, "n_comb_inner", c)?),
                true,
                rate,
                rng,
            ),
            outer: Mlp::init(
                &cfg.set_widths(h, require(cfg.n_comb_outer, "n_comb_outer", c)?),
                true,
                rate,
                rng,
            ),
        })
    } else {
        None
    };
    let merge = if matches!(c, ConfigClass::C3 | ConfigClass::C4) {
        let input = if c == ConfigClass::C4 { h } else { cfg.node_width() };
        Some(DeepSet {
            inner: Mlp::init(
                &cfg.set_widths(input, require(cfg.n_merge_inner, "n_merge_inner", c)?),
                true,
                rate,
                rng,
            ),
            outer: Mlp::init(
                &cfg.set_widths(h, require(cfg.n_merge_outer, "n_merge_outer", c)?),
                true,
                rate,
                rng,
            ),
        })
    } else {
        None
    };
    let pool = if c == ConfigClass::C1 {
        None
    } else {
        let input = if c == ConfigClass::C2 { cfg.node_width() } else { h };
        Some(Mlp::init(
            &cfg.set_widths(input, require(cfg.n_pool, "n_pool", c)?),
            true,
            rate,
            rng,
        ))
    };
    let final_mlp = Mlp::init(&cfg.final_widths(), false, rate, rng);
    Ok(Model {
        cfg: cfg.clone(),
        comb,
        merge,
        pool,
        final_mlp,
    })
}

impl<T: Real> Model<T> {
    /// Same architecture with every parameter zero; used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        Self {
            cfg: self.cfg.clone(),
            comb: self.comb.as_ref().map(DeepSet::zeros_like),
            merge: self.merge.as_ref().map(DeepSet::zeros_like),
            pool: self.pool.as_ref().map(Mlp::zeros_like),
            final_mlp: self.final_mlp.zeros_like(),
        }
    }

    /// Names of the present components, in pipeline order.
    pub fn components(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.comb.is_some() {
            out.push("comb");
        }
        if self.merge.is_some() {
            out.push("merge");
        }
        if self.pool.is_some() {
            out.push("pool");
        }
        out.push("final");
        out
    }

    pub fn forward(&self, batch: &Batch<T>, mode: &mut Mode<'_>) -> Result<(Array2<T>, ModelTape<T>)> {
        self.check_batch(batch)?;
        let mut h = batch.rows.clone();
        let comb = match &self.comb {
            Some(ds) => {
                let (out, tape) = ds.forward(&h, batch.levels, mode)?;
                h = out;
                Some(tape)
            }
            None => None,
        };
        let merge = match &self.merge {
            Some(ds) => {
                let (out, tape) = ds.forward(&h, batch.r, mode)?;
                h = out;
                Some(tape)
            }
            None => None,
        };
        let pool = match &self.pool {
            Some(mlp) => {
                let (out, tape) = mlp.forward(&h, mode)?;
                h = segment_sum(&out, &batch.sizes)?;
                Some(tape)
            }
            None => None,
        };
        let (logits, final_tape) = self.final_mlp.forward(&h, mode)?;
        Ok((
            logits,
            ModelTape {
                comb,
                merge,
                pool,
                final_tape,
                sizes: batch.sizes.clone(),
            },
        ))
    }

    /// Accumulates parameter gradients for `grad_logits` into `grads` and
    /// returns the gradient with respect to the batch rows.
    pub fn backward(&self, tape: &ModelTape<T>, grad_logits: &Array2<T>, grads: &mut Model<T>) -> Array2<T> {
        let mut g = self
            .final_mlp
            .backward(&tape.final_tape, grad_logits, &mut grads.final_mlp);
        if let (Some(mlp), Some(t), Some(gm)) = (&self.pool, &tape.pool, grads.pool.as_mut()) {
            g = segment_sum_backward(&g, &tape.sizes);
            g = mlp.backward(t, &g, gm);
        }
        if let (Some(ds), Some(t), Some(gm)) = (&self.merge, &tape.merge, grads.merge.as_mut()) {
            g = ds.backward(t, &g, gm);
        }
        if let (Some(ds), Some(t), Some(gm)) = (&self.comb, &tape.comb, grads.comb.as_mut()) {
            g = ds.backward(t, &g, gm);
        }
        g
    }

    /// Logits for a single preprocessed graph in evaluation mode.
    pub fn predict_graph(&self, pg: &PreprocessedGraph) -> Result<Vec<T>> {
        let input = GraphInput::from_preprocessed(pg)?;
        let batch = Batch::from_inputs(&[&input])?;
        let (logits, _) = self.forward(&batch, &mut Mode::Eval)?;
        Ok(logits.row(0).to_vec())
    }

    fn check_batch(&self, batch: &Batch<T>) -> Result<()> {
        if batch.stage != self.cfg.class.stage() {
            return Err(Error::StageMismatch {
                expected: self.cfg.class.stage().to_string(),
                found: batch.stage.to_string(),
            });
        }
        let width = if batch.stage == Stage::FullDiffusion {
            self.cfg.d
        } else {
            self.cfg.node_width()
        };
        if batch.rows.ncols() != width {
            return Err(Error::shape(format!(
                "input width {} does not match the model's {width}",
                batch.rows.ncols()
            )));
        }
        Ok(())
    }
}

impl<T: Real> Parameters<T> for Model<T> {
    fn tensors(&self) -> Vec<(String, &[T])> {
        let mut parts = Vec::new();
        if let Some(ds) = &self.comb {
            parts.push(("comb", ds.tensors()));
        }
        if let Some(ds) = &self.merge {
            parts.push(("merge", ds.tensors()));
        }
        if let Some(mlp) = &self.pool {
            parts.push(("pool", mlp.tensors()));
        }
        parts.push(("final", self.final_mlp.tensors()));
        parts
            .into_iter()
            .flat_map(|(prefix, list)| list.into_iter().map(move |(n, t)| (format!("{prefix}.{n}"), t)))
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out = Vec::new();
        if let Some(ds) = self.comb.as_mut() {
            out.extend(ds.tensors_mut());
        }
        if let Some(ds) = self.merge.as_mut() {
            out.extend(ds.tensors_mut());
        }
        if let Some(mlp) = self.pool.as_mut() {
            out.extend(mlp.tensors_mut());
        }
        out.extend(self.final_mlp.tensors_mut());
        out
    }
}

pub struct ModelTape<T> {
    comb: Option<DeepSetTape<T>>,
    merge: Option<DeepSetTape<T>>,
    pool: Option<MlpTape<T>>,
    final_tape: MlpTape<T>,
    sizes: Vec<usize>,
}

/// One graph in row layout, ready to be batched.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphInput<T> {
    pub stage: Stage,
    pub rows: Array2<T>,
    pub n: usize,
    pub r: usize,
    pub levels: usize,
    pub label: usize,
}

impl<T: Real> GraphInput<T> {
    /// Reorders a cached payload into one row per set element.
    pub fn from_preprocessed(pg: &PreprocessedGraph) -> Result<Self> {
        pg.check()?;
        let (n, r, lv, d) = (pg.n, pg.r, pg.levels, pg.d);
        let k = pg.node_width();
        let cast = |v: f32| T::from_f64(v as f64);
        let rows = match pg.stage {
            Stage::GraphVector => Array2::from_shape_fn((1, k), |(_, j)| cast(pg.payload[j])),
            Stage::NodeMatrix => Array2::from_shape_fn((n, k), |(i, j)| cast(pg.payload[i * k + j])),
            Stage::PerPerturbation => Array2::from_shape_fn((n * r, k), |(row, j)| {
                let (node, p) = (row / r, row % r);
                cast(pg.payload[(p * n + node) * k + j])
            }),
            Stage::FullDiffusion => Array2::from_shape_fn((n * r * lv, d), |(row, j)| {
                let node = row / (r * lv);
                let p = (row / lv) % r;
                let l = row % lv;
                cast(pg.payload[((p * lv + l) * n + node) * d + j])
            }),
        };
        Ok(Self {
            stage: pg.stage,
            rows,
            n,
            r,
            levels: lv,
            label: pg.label,
        })
    }
}

/// Row-wise concatenation of graph inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<T> {
    pub stage: Stage,
    pub rows: Array2<T>,
    /// Node count of each graph.
    pub sizes: Vec<usize>,
    pub r: usize,
    pub levels: usize,
    pub labels: Vec<usize>,
}

impl<T: Real> Batch<T> {
    pub fn from_inputs(inputs: &[&GraphInput<T>]) -> Result<Self> {
        let first = inputs.first().ok_or_else(|| Error::shape("empty batch"))?;
        let width = first.rows.ncols();
        let total: usize = inputs.iter().map(|g| g.rows.nrows()).sum();
        let mut rows = Array2::from_elem((total, width), T::zero());
        let mut at = 0;
        for g in inputs {
            if (g.stage, g.r, g.levels, g.rows.ncols()) != (first.stage, first.r, first.levels, width) {
                return Err(Error::shape("batched graphs differ in stage or shape"));
            }
            let len = g.rows.nrows();
            rows.slice_mut(ndarray::s![at..at + len, ..]).assign(&g.rows);
            at += len;
        }
        Ok(Self {
            stage: first.stage,
            rows,
            sizes: inputs.iter().map(|g| g.n).collect(),
            r: first.r,
            levels: first.levels,
            labels: inputs.iter().map(|g| g.label).collect(),
        })
    }
}

/// How to count parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CountMode {
    /// The bias-free closed forms with final-MLP widths `h_0 / 2^k`.
    Formula,
    /// Every scalar allocated by [`build_model`], biases included.
    WithBias,
}

/// Parameter count of `cfg` under `mode`.
///
/// With `N_f = 1` the formula mode reduces to
/// `|C1| = ((L+1)d/2)((L+1)d + C)`,
/// `|C2| = (Ld + d + C/2)h + (N_p + 1/2)h²`,
/// `|C3| = (Ld + d + C/2)h + (N_inn_mer + N_out_mer + N_p + 5/2)h²` and
/// `|C4| = (N_inn_mer + N_out_mer + N_inn_com + N_out_com + N_p + 9/2)h² + (C/2 + d)h`.
pub fn param_count(cfg: &ModelConfig, mode: CountMode) -> Result<u64> {
    cfg.validate()?;
    match mode {
        CountMode::WithBias => Ok(with_bias_count(cfg)),
        CountMode::Formula => formula_count(cfg),
    }
}

fn with_bias_count(cfg: &ModelConfig) -> u64 {
    let mlp = |w: &[usize]| -> u64 { w.windows(2).map(|p| (p[0] * p[1] + p[1]) as u64).sum() };
    let h = cfg.hidden;
    let c = cfg.class;
    let mut total = mlp(&cfg.final_widths());
    if c != ConfigClass::C1 {
        let input = if c == ConfigClass::C2 { cfg.node_width() } else { h };
        total += mlp(&cfg.set_widths(input, cfg.n_pool.unwrap_or(0)));
    }
    if matches!(c, ConfigClass::C3 | ConfigClass::C4) {
        let input = if c == ConfigClass::C4 { h } else { cfg.node_width() };
        total += mlp(&cfg.set_widths(input, cfg.n_merge_inner.unwrap_or(0)));
        total += mlp(&cfg.set_widths(h, cfg.n_merge_outer.unwrap_or(0)));
    }
    if c == ConfigClass::C4 {
        total += mlp(&cfg.set_widths(cfg.d, cfg.n_comb_inner.unwrap_or(0)));
        total += mlp(&cfg.set_widths(h, cfg.n_comb_outer.unwrap_or(0)));
    }
    total
}

/// Exact evaluation in units of `1 / 2^(2 N_f + 1)`: the halving final MLP
/// is the only source of fractions.
fn formula_count(cfg: &ModelConfig) -> Result<u64> {
    let nf = cfg.n_final as u32;
    let scale: u128 = 1 << (2 * nf + 1);
    let h = cfg.hidden as u128;
    let k = cfg.node_width() as u128;
    let d = cfg.d as u128;
    let classes = cfg.num_classes as u128;

    // Σ_{j < N_f} h_0² / 2^(2j+1) + h_0 C / 2^{N_f}, scaled.
    let mlp_f = |h0: u128| -> u128 {
        let hidden: u128 = (0..nf).map(|j| h0 * h0 * (1u128 << (2 * (nf - j)))).sum();
        hidden + h0 * classes * (1u128 << (nf + 1))
    };
    let mlp_p = |h0: u128, n: usize| h0 * h + n as u128 * h * h;
    let ds = |h0: u128, inner: usize, outer: usize| h0 * h + (inner + outer + 1) as u128 * h * h;

    let n_pool = cfg.n_pool.unwrap_or(0);
    let merge = (cfg.n_merge_inner.unwrap_or(0), cfg.n_merge_outer.unwrap_or(0));
    let comb = (cfg.n_comb_inner.unwrap_or(0), cfg.n_comb_outer.unwrap_or(0));
    let scaled = match cfg.class {
        ConfigClass::C1 => mlp_f(k),
        ConfigClass::C2 => scale * mlp_p(k, n_pool) + mlp_f(h),
        ConfigClass::C3 => scale * (ds(k, merge.0, merge.1) + mlp_p(h, n_pool)) + mlp_f(h),
        ConfigClass::C4 => scale * (ds(d, comb.0, comb.1) + ds(h, merge.0, merge.1) + mlp_p(h, n_pool)) + mlp_f(h),
    };
    if scaled % scale != 0 {
        return Err(Error::InvalidParam(format!(
            "closed-form count {}/{} is not an integer for this configuration",
            scaled, scale
        )));
    }
    u64::try_from(scaled / scale).map_err(|_| Error::InvalidParam("parameter count overflows u64".into()))
}

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"SE2M";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serializes a model: magic, version, JSON config, then named `f32`
/// sections in a fixed order.
pub fn encode_checkpoint(model: &Model<f32>) -> Result<Vec<u8>> {
    let cfg = serde_json::to_vec(&model.cfg).map_err(|e| Error::config(e.to_string()))?;
    let tensors = model.tensors();
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    buf.extend_from_slice(&cfg);
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, data) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn decode_checkpoint(buf: &[u8]) -> Result<Model<f32>> {
    let mut pos = 0usize;
    let mut take = |len: usize| -> Result<(&[u8], usize)> {
        if buf.len() - pos < len {
            return Err(Error::Corrupt {
                offset: pos as u64,
                msg: format!("truncated checkpoint: need {len} bytes"),
            });
        }
        let at = pos;
        pos += len;
        Ok((&buf[at..at + len], at))
    };
    let le32 = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize;

    let (magic, _) = take(4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Corrupt {
            offset: 0,
            msg: "bad checkpoint magic".into(),
        });
    }
    let (v, at) = take(4)?;
    if le32(v) != CHECKPOINT_VERSION as usize {
        return Err(Error::Corrupt {
            offset: at as u64,
            msg: format!("unsupported checkpoint version {}", le32(v)),
        });
    }
    let cfg_len = le32(take(4)?.0);
    let (cfg_bytes, at) = take(cfg_len)?;
    let cfg: ModelConfig = serde_json::from_slice(cfg_bytes).map_err(|e| Error::Corrupt {
        offset: at as u64,
        msg: format!("bad config: {e}"),
    })?;
    let mut model = build_model::<f32>(&cfg, &mut rand::SeedableRng::seed_from_u64(0))?;
    let expected: Vec<(String, usize)> = model.tensors().into_iter().map(|(n, t)| (n, t.len())).collect();

    let (count, at) = take(4)?;
    if le32(count) != expected.len() {
        return Err(Error::Corrupt {
            offset: at as u64,
            msg: format!("{} sections, architecture has {}", le32(count), expected.len()),
        });
    }
    let mut sections = Vec::with_capacity(expected.len());
    for (name, len) in &expected {
        let name_len = le32(take(4)?.0);
        let (stored, at) = take(name_len)?;
        let (n_bytes, _) = take(8)?;
        let n = u64::from_le_bytes(n_bytes.try_into().expect("8 bytes")) as usize;
        if stored != name.as_bytes() || n != *len {
            return Err(Error::Corrupt {
                offset: at as u64,
                msg: format!(
                    "section {:?} does not match expected {name}",
                    String::from_utf8_lossy(stored)
                ),
            });
        }
        let (data, _) = take(n.saturating_mul(4))?;
        sections.push(
            data.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect::<Vec<f32>>(),
        );
    }
    if pos != buf.len() {
        return Err(Error::Corrupt {
            offset: pos as u64,
            msg: "trailing bytes after checkpoint".into(),
        });
    }
    for (dst, src) in model.tensors_mut().into_iter().zip(sections) {
        dst.copy_from_slice(&src);
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model<f32>> {
    let path = path.as_ref();
    decode_checkpoint(&fs::read(path).map_err(|e| Error::io(path, e))?)
}
