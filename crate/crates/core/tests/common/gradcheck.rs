//! Central finite-difference checking of hand-written backward passes, in
//! `f64`, with randomized trial generators for every layer type and every
//! configuration class.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use se2p::model::{Batch, GraphInput};
use se2p::nn::{
    segment_sum, segment_sum_backward, softmax_xent, sum_groups, sum_groups_backward, DeepSet, Linear, Mlp, Mode,
    Parameters,
};
use se2p::{build_model, Ablation, ConfigClass, Model, ModelConfig, PerturbationPlan};

use super::{random_graph, rng};

const STEP: f64 = 1e-5;
pub const TOLERANCE: f64 = 1e-4;

/// Fourth-order central difference of `f` at zero, or `None` when the
/// stencil straddles a ReLU kink (the one-sided slopes disagree).
fn central<F: Fn(f64) -> f64>(f: F) -> Option<f64> {
    let (m2, m1, z, p1, p2) = (f(-2.0 * STEP), f(-STEP), f(0.0), f(STEP), f(2.0 * STEP));
    let left = (z - m2) / (2.0 * STEP);
    let right = (p2 - z) / (2.0 * STEP);
    if (right - left).abs() > 1e-3 * left.abs().max(right.abs()) + 1e-7 {
        return None;
    }
    Some((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * STEP))
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

/// Worst relative error over the checked scalars, with the number of
/// scalars checked and skipped at kinks.
#[derive(Debug, Default, Clone, Copy)]
pub struct Report {
    pub worst: f64,
    pub checked: usize,
    pub kinks: usize,
}

impl Report {
    fn add(&mut self, analytic: f64, numeric: Option<f64>, what: impl Fn() -> String) {
        match numeric {
            Some(n) => {
                let e = rel_err(analytic, n);
                if std::env::var("GRAD_DEBUG").is_ok() && e > TOLERANCE {
                    eprintln!("{}: analytic {analytic} numeric {n}", what());
                }
                self.worst = self.worst.max(e);
                self.checked += 1;
            }
            None => self.kinks += 1,
        }
    }

    pub fn merge(mut self, other: Report) -> Report {
        self.worst = self.worst.max(other.worst);
        self.checked += other.checked;
        self.kinks += other.kinks;
        self
    }

    /// Why the report fails, if it does: the worst error reaches the
    /// tolerance, nothing was checked, or more than 1% of scalars sat on
    /// kinks.
    pub fn failure(&self) -> Option<String> {
        if self.worst >= TOLERANCE {
            Some(format!("max relative error {:e}", self.worst))
        } else if self.checked == 0 {
            Some("nothing checked".to_string())
        } else if self.kinks * 100 > self.checked {
            Some(format!("{} of {} scalars sat on kinks", self.kinks, self.checked))
        } else {
            None
        }
    }

    pub fn assert_ok(&self, what: &str) {
        if let Some(why) = self.failure() {
            panic!("{what}: {why}");
        }
    }
}

/// Checks every scalar of `params` and of `input`.
fn check<P, F>(params: &P, input: &Array2<f64>, grads: &P, grad_input: &Array2<f64>, loss: F) -> Report
where
    P: Parameters<f64> + Clone,
    F: Fn(&P, &Array2<f64>) -> f64,
{
    let mut report = Report::default();
    let analytic: Vec<f64> = grads.tensors().into_iter().flat_map(|(_, t)| t.to_vec()).collect();
    let mut flat = 0;
    for t in 0..params.tensors().len() {
        for i in 0..params.tensors()[t].1.len() {
            let eval = |delta: f64| {
                let mut q = params.clone();
                q.tensors_mut()[t][i] += delta;
                loss(&q, input)
            };
            report.add(analytic[flat], central(eval), || format!("param {t}/{i}"));
            flat += 1;
        }
    }
    report.merge(input_check(input, grad_input, |x| loss(params, x)))
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-1.0..1.0))
}

/// Fixed random projection turning any output into a scalar loss.
fn projection(rng: &mut ChaCha8Rng, shape: (usize, usize)) -> Array2<f64> {
    random_matrix(rng, shape.0, shape.1)
}

fn project(y: &Array2<f64>, w: &Array2<f64>) -> f64 {
    (y * w).sum()
}

pub fn linear_trials(trials: u64) -> Report {
    let mut report = Report::default();
    for trial in 0..trials {
        let mut r = rng(trial);
        let (b, i, o) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(1..5));
        let mut layer = Linear::<f64>::init(i, o, &mut r);
        layer.bias = ndarray::Array1::from_shape_simple_fn(o, || r.gen_range(-0.5..0.5));
        let x = random_matrix(&mut r, b, i);
        let w = projection(&mut r, (b, o));
        let mut grads = Linear::zeros(i, o);
        let gx = layer.backward(&x, &w, &mut grads);
        report = report.merge(check(&layer, &x, &grads, &gx, |l, x| {
            project(&l.forward(x).unwrap(), &w)
        }));
    }
    report
}

fn mlp_case(trial: u64, relu_output: bool, dropout: f64) -> Report {
    let mut r = rng(1000 + trial);
    let depth = r.gen_range(1..4);
    let widths: Vec<usize> = (0..=depth).map(|_| r.gen_range(1..5)).collect();
    let mlp = Mlp::<f64>::init(&widths, relu_output, dropout, &mut r);
    let mut mlp = mlp;
    for layer in &mut mlp.layers {
        layer.bias.mapv_inplace(|_| r.gen_range(-0.3..0.3));
    }
    let b = r.gen_range(1..5);
    let x = random_matrix(&mut r, b, widths[0]);
    let w = projection(&mut r, (b, *widths.last().unwrap()));
    let mask_seed = r.gen::<u64>();
    let run = |m: &Mlp<f64>, x: &Array2<f64>| {
        let mut dr = ChaCha8Rng::seed_from_u64(mask_seed);
        m.forward(x, &mut Mode::Train(&mut dr)).unwrap()
    };
    let (_, tape) = run(&mlp, &x);
    let mut grads = mlp.zeros_like();
    let gx = mlp.backward(&tape, &w, &mut grads);
    check(&mlp, &x, &grads, &gx, |m, x| project(&run(m, x).0, &w))
}

/// MLPs of random depth and widths, alternating linear and ReLU outputs,
/// in training mode with a fixed dropout mask per trial.
pub fn mlp_trials(trials: u64, dropout: f64) -> Report {
    let relu_on_even = dropout == 0.0;
    (0..trials)
        .map(|t| mlp_case(t, (t % 2 == 0) == relu_on_even, dropout))
        .fold(Report::default(), Report::merge)
}

pub fn deepset_trials(trials: u64) -> Report {
    let mut report = Report::default();
    for trial in 0..trials {
        let mut r = rng(2000 + trial);
        let (input, h) = (r.gen_range(1..4), r.gen_range(1..4));
        let (sets, size) = (r.gen_range(1..4), r.gen_range(1..4));
        let inner_w: Vec<usize> = std::iter::once(input)
            .chain(std::iter::repeat_n(h, r.gen_range(1..3)))
            .collect();
        let outer_w: Vec<usize> = std::iter::repeat_n(h, r.gen_range(2..4)).collect();
        let mut ds = DeepSet {
            inner: Mlp::<f64>::init(&inner_w, true, 0.0, &mut r),
            outer: Mlp::<f64>::init(&outer_w, true, 0.0, &mut r),
        };
        for layer in ds.inner.layers.iter_mut().chain(ds.outer.layers.iter_mut()) {
            layer.bias.mapv_inplace(|_| r.gen_range(-0.3..0.3));
        }
        let x = random_matrix(&mut r, sets * size, input);
        let w = projection(&mut r, (sets, h));
        let (_, tape) = ds.forward(&x, size, &mut Mode::Eval).unwrap();
        let mut grads = ds.zeros_like();
        let gx = ds.backward(&tape, &w, &mut grads);
        report = report.merge(check(&ds, &x, &grads, &gx, |d, x| {
            project(&d.forward(x, size, &mut Mode::Eval).unwrap().0, &w)
        }));
    }
    report
}

/// Parameter-free maps only have an input gradient.
fn input_check<F: Fn(&Array2<f64>) -> f64>(x: &Array2<f64>, gx: &Array2<f64>, f: F) -> Report {
    let mut report = Report::default();
    let (rows, cols) = x.dim();
    for i in 0..rows {
        for j in 0..cols {
            let eval = |delta: f64| {
                let mut y = x.clone();
                y[[i, j]] += delta;
                f(&y)
            };
            report.add(gx[[i, j]], central(eval), || format!("input {i},{j}"));
        }
    }
    report
}

/// Segment sums, group sums and softmax cross-entropy.
pub fn aggregation_trials(trials: u64) -> Report {
    let mut report = Report::default();
    for trial in 0..trials {
        let mut r = rng(3000 + trial);
        let cols = r.gen_range(1..4);

        let sizes: Vec<usize> = (0..r.gen_range(1..4)).map(|_| r.gen_range(1..4)).collect();
        let rows: usize = sizes.iter().sum();
        let x = random_matrix(&mut r, rows, cols);
        let w = projection(&mut r, (sizes.len(), cols));
        let gx = segment_sum_backward(&w, &sizes);
        report = report.merge(input_check(&x, &gx, |x| project(&segment_sum(x, &sizes).unwrap(), &w)));

        let group = r.gen_range(1..4);
        let groups = r.gen_range(1..4);
        let x = random_matrix(&mut r, group * groups, cols);
        let w = projection(&mut r, (groups, cols));
        let gx = sum_groups_backward(&w, group);
        report = report.merge(input_check(&x, &gx, |x| project(&sum_groups(x, group).unwrap(), &w)));

        let classes = r.gen_range(2..5);
        let n = r.gen_range(1..5);
        let logits = random_matrix(&mut r, n, classes).mapv(|v| 3.0 * v);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..classes)).collect();
        let (_, g) = softmax_xent(&logits, &labels).unwrap();
        report = report.merge(input_check(&logits, &g, |z| softmax_xent(z, &labels).unwrap().0));
    }
    report
}

pub fn tiny_config(class: ConfigClass, ablation: Ablation, dropout: f64) -> ModelConfig {
    ModelConfig {
        class,
        l: 1,
        d: 2,
        num_classes: 3,
        hidden: 3,
        n_final: 1,
        n_pool: Some(1),
        n_merge_inner: Some(1),
        n_merge_outer: Some(0),
        n_comb_inner: Some(0),
        n_comb_outer: Some(1),
        dropout,
        batch_size: 4,
        ablation,
    }
}

fn tiny_batch(r: &mut ChaCha8Rng, cfg: &ModelConfig) -> Batch<f64> {
    let plan = PerturbationPlan::new(0.3, 2, r.gen()).unwrap();
    let plan = cfg.ablation.plan(plan);
    let inputs: Vec<GraphInput<f64>> = (0..3)
        .map(|i| {
            let g = random_graph(r, 4, 0.6, cfg.d, i % cfg.num_classes);
            let prep = se2p::Preprocessing {
                plan,
                l: cfg.l,
                class: cfg.class,
                ablation: cfg.ablation,
            };
            let pg = se2p::diffusion::preprocess_graph_with(&g, &prep, i as u64).unwrap();
            GraphInput::from_preprocessed(&pg).unwrap()
        })
        .collect();
    let refs: Vec<&GraphInput<f64>> = inputs.iter().collect();
    Batch::from_inputs(&refs).unwrap()
}

/// Whole models with tiny widths on three random 4-node graphs, weights
/// jittered away from initialization.
pub fn model_trials(class: ConfigClass, ablation: Ablation, dropout: f64, trials: u64) -> Report {
    let mut report = Report::default();
    for trial in 0..trials {
        let mut r = rng(4000 + trial * 7 + class as u64);
        let cfg = tiny_config(class, ablation, dropout);
        let mut model: Model<f64> = build_model(&cfg, &mut r).unwrap();
        for t in model.tensors_mut() {
            for v in t.iter_mut() {
                *v += r.gen_range(-0.2..0.2);
            }
        }
        let batch = tiny_batch(&mut r, &cfg);
        let mask_seed = r.gen::<u64>();
        let loss = |m: &Model<f64>, rows: &Array2<f64>| {
            let mut b = batch.clone();
            b.rows = rows.clone();
            let mut dr = ChaCha8Rng::seed_from_u64(mask_seed);
            let (logits, _) = m.forward(&b, &mut Mode::Train(&mut dr)).unwrap();
            softmax_xent(&logits, &b.labels).unwrap().0
        };
        let mut dr = ChaCha8Rng::seed_from_u64(mask_seed);
        let (logits, tape) = model.forward(&batch, &mut Mode::Train(&mut dr)).unwrap();
        let (_, g) = softmax_xent(&logits, &batch.labels).unwrap();
        let mut grads = model.zeros_like();
        let gx = model.backward(&tape, &g, &mut grads);
        report = report.merge(check(&model, &batch.rows, &grads, &gx, loss));
    }
    report
}
