//! Model configurations and an independent evaluation of the bias-free
//! parameter closed forms.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use se2p::{Ablation, ConfigClass, ModelConfig};

pub fn config(class: ConfigClass, l: usize, d: usize, c: usize, h: usize) -> ModelConfig {
    ModelConfig {
        class,
        l,
        d,
        num_classes: c,
        hidden: h,
        n_final: 1,
        n_pool: Some(1),
        n_merge_inner: Some(1),
        n_merge_outer: Some(1),
        n_comb_inner: Some(1),
        n_comb_outer: Some(1),
        dropout: 0.0,
        batch_size: 8,
        ablation: Ablation::None,
    }
}

pub fn random_config(r: &mut ChaCha8Rng) -> ModelConfig {
    let class = ConfigClass::ALL[r.gen_range(0..4)];
    let mut cfg = config(
        class,
        r.gen_range(1..5),
        r.gen_range(1..12),
        r.gen_range(2..8),
        r.gen_range(2..65),
    );
    cfg.n_pool = Some(r.gen_range(0..4));
    cfg.n_merge_inner = Some(r.gen_range(0..4));
    cfg.n_merge_outer = Some(r.gen_range(0..4));
    cfg.n_comb_inner = Some(r.gen_range(0..4));
    cfg.n_comb_outer = Some(r.gen_range(0..4));
    cfg
}

/// Twice the bias-free closed forms for one final hidden layer, so every
/// term is an integer.
pub fn doubled_closed_form(cfg: &ModelConfig) -> i128 {
    let (l, d, c, h) = (
        cfg.l as i128,
        cfg.d as i128,
        cfg.num_classes as i128,
        cfg.hidden as i128,
    );
    let np = cfg.n_pool.unwrap() as i128;
    let (mi, mo) = (cfg.n_merge_inner.unwrap() as i128, cfg.n_merge_outer.unwrap() as i128);
    let (ci, co) = (cfg.n_comb_inner.unwrap() as i128, cfg.n_comb_outer.unwrap() as i128);
    let k = (l + 1) * d;
    match cfg.class {
        ConfigClass::C1 => k * (k + c),
        ConfigClass::C2 => (2 * l * d + 2 * d + c) * h + (2 * np + 1) * h * h,
        ConfigClass::C3 => (2 * l * d + 2 * d + c) * h + (2 * (mi + mo + np) + 5) * h * h,
        ConfigClass::C4 => (2 * (mi + mo + ci + co + np) + 9) * h * h + (c + 2 * d) * h,
    }
}
