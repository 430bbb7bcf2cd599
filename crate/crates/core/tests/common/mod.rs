#![allow(dead_code)]

use autograd::gradcheck::{numeric_gradient, relative_error};
use autograd::Graph;
use ndarray::{Array4, ArrayD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatchgan::discriminator::{build_discriminator, Discriminator, DiscriminatorConfig, InputShape};
use spatchgan::generators::{BackwardGenerator, ForwardGenerator, GeneratorConfig};
use spatchgan::image::ImageBatch;
use spatchgan::losses::{
    d_adversarial_term, g_adversarial_term, generator_objective, identity_term, weak_cycle_term, LossWeights,
};

pub fn random_images(n: usize, size: usize, seed: u64) -> ImageBatch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBatch::new(Array4::from_shape_simple_fn((n, 3, size, size), || rng.random_range(-1.0..1.0))).unwrap()
}

pub fn small_generator_config() -> GeneratorConfig {
    GeneratorConfig {
        base_channels: 4,
        num_residual_blocks: 2,
        ..Default::default()
    }
}

pub fn small_discriminator_config(num_scales: usize) -> DiscriminatorConfig {
    DiscriminatorConfig {
        num_scales,
        base_channels: 8,
        channel_cap: 32,
        ..Default::default()
    }
}

pub struct ToyModels {
    pub gen: ForwardGenerator<f64>,
    pub back: BackwardGenerator<f64>,
    pub disc: Discriminator<f64>,
}

/// 32×32 f64 build with a three-scale discriminator.
pub fn toy_models(seed: u64) -> ToyModels {
    let gcfg = small_generator_config();
    let mut disc = build_discriminator(&small_discriminator_config(3), InputShape::new(3, 32, 32), seed + 2).unwrap();
    disc.spectral_step();
    ToyModels {
        gen: ForwardGenerator::new(&gcfg, 32, 32, seed).unwrap(),
        back: BackwardGenerator::new(&gcfg, 32, 32, seed + 1).unwrap(),
        disc,
    }
}

/// Weighted generator objective with `gen` parameters replaced by `values`
/// (or the stored ones), returning the value and, when tracked, the gradient
/// for parameter `param`.
pub fn generator_total(
    m: &ToyModels,
    x1: &ImageBatch<f64>,
    x2: &ImageBatch<f64>,
    w: &LossWeights,
    param: usize,
    override_value: Option<&ArrayD<f64>>,
) -> (f64, ArrayD<f64>) {
    let g = Graph::new();
    let mut store = m.gen.params().clone();
    let id = store.iter().nth(param).map(|p| p.name.clone()).unwrap();
    if let Some(v) = override_value {
        store.by_name_mut(&id).unwrap().value = v.clone();
    }
    let gb = store.bind(&g, true);
    let bb = m.back.params().bind(&g, false);
    let db = m.disc.params().bind(&g, false);
    let fake = m.gen.forward(g.constant(x1.to_dyn()), &gb).unwrap();
    let adv = g_adversarial_term(&m.disc.forward(fake, &db).unwrap()).unwrap();
    let cyc = weak_cycle_term(g.constant(x1.to_dyn()), fake, |y| m.back.forward(y, &bb)).unwrap();
    let same = m.gen.forward(g.constant(x2.to_dyn()), &gb).unwrap();
    let idl = identity_term(g.constant(x2.to_dyn()), same).unwrap();
    let total = generator_objective(adv, cyc, idl, w);
    let value = total.item();
    let mut grads = g.backward(total);
    let all = store.collect_grads(&gb, &mut grads);
    (value, all[param].clone().unwrap())
}

/// Finite-difference check of the weighted generator objective at `count`
/// random parameter entries. Returns the worst relative error.
pub fn generator_gradient_check(seed: u64, count: usize) -> f64 {
    let m = toy_models(seed);
    let x1 = random_images(2, 32, seed + 10);
    let x2 = random_images(2, 32, seed + 11);
    let w = LossWeights::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 12);
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let param = rng.random_range(0..m.gen.params().len());
        let base = m.gen.params().iter().nth(param).unwrap().value.clone();
        let flat = rng.random_range(0..base.len());
        let (_, grad) = generator_total(&m, &x1, &x2, &w, param, None);
        let analytic = grad.as_standard_layout().as_slice().unwrap()[flat];
        let numeric = numeric_gradient(
            |v| generator_total(&m, &x1, &x2, &w, param, Some(v)).0,
            &base,
            &[flat],
            1e-6,
        )[0];
        worst = worst.max(relative_error(analytic, numeric, 1e-6));
    }
    worst
}

/// Finite-difference check of a weighted sum of discriminator outputs with
/// respect to `count` random input pixels. Returns the worst relative error.
pub fn discriminator_gradient_check(seed: u64, count: usize) -> f64 {
    let d = build_discriminator::<f64>(&small_discriminator_config(3), InputShape::new(3, 32, 32), seed).unwrap();
    let x = random_images(1, 32, seed + 1).to_dyn();
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
    let weights: Vec<f64> = (0..9).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |x: &ArrayD<f64>| {
        let g = Graph::new();
        let out = d.forward(g.constant(x.clone()), &d.params().bind(&g, false)).unwrap();
        out.heads.iter().zip(&weights).map(|((_, v), w)| v.item() * w).sum::<f64>()
    };
    let g = Graph::new();
    let xv = g.variable(x.clone());
    let out = d.forward(xv, &d.params().bind(&g, false)).unwrap();
    let total = out
        .heads
        .iter()
        .zip(&weights)
        .map(|((_, v), &w)| v.mul_scalar(w))
        .reduce(|a, b| a.add(b))
        .unwrap()
        .sum_all();
    let grads = g.backward(total);
    let analytic = grads.get(xv).unwrap().as_standard_layout().into_owned();
    let idx: Vec<usize> = (0..count).map(|_| rng.random_range(0..x.len())).collect();
    let numeric = numeric_gradient(objective, &x, &idx, 1e-5);
    idx.iter()
        .zip(&numeric)
        .map(|(&i, n)| relative_error(analytic.as_slice().unwrap()[i], *n, 1e-8))
        .fold(0.0, f64::max)
}

/// Discriminator loss value for given images (keeps the import used).
pub fn d_loss_value(d: &Discriminator<f64>, real: &ImageBatch<f64>, fake: &ImageBatch<f64>) -> f64 {
    let g = Graph::new();
    let b = d.params().bind(&g, false);
    let r = d.forward(g.constant(real.to_dyn()), &b).unwrap();
    let f = d.forward(g.constant(fake.to_dyn()), &b).unwrap();
    d_adversarial_term(&r, &f).unwrap().item()
}
