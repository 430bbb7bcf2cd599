//! Least-squares adversarial losses, the weak cycle loss and the identity loss.
//!
//! Every L1 term is a mean over all elements. Each adversarial head is
//! averaged over batch and patches before the heads are averaged together.

use autograd::{Graph, Real, Var};
use serde::{Deserialize, Serialize};

use crate::discriminator::{DisOutput, DisOutputGrid, HeadLabel};
use crate::generators::{downscale_var, BackwardGenerator, GeneratorError};
use crate::image::ImageBatch;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_adv: f64,
    pub lambda_cyc: f64,
    pub lambda_id: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 4.0,
            lambda_cyc: 20.0,
            lambda_id: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [
            ("lambda_adv", self.lambda_adv),
            ("lambda_cyc", self.lambda_cyc),
            ("lambda_id", self.lambda_id),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LossError::Weight { name, value: v });
            }
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("real and fake batches differ in size ({real} vs {fake})")]
    BatchMismatch { real: usize, fake: usize },
    #[error("real and fake outputs have different heads")]
    HeadMismatch,
    #[error("discriminator output has no heads")]
    NoHeads,
    #[error("image shapes differ: {0:?} vs {1:?}")]
    Shape(Vec<usize>, Vec<usize>),
    #[error("loss weight {name} must be finite and non-negative, got {value}")]
    Weight { name: &'static str, value: f64 },
    #[error(transparent)]
    Generator(#[from] GeneratorError),
}

fn head_mean_sq<'g, T: Real>(v: Var<'g, T>, target: f64) -> Var<'g, T> {
    if target == 0.0 {
        v.square().mean_all()
    } else {
        v.add_scalar(T::lit(-target)).square().mean_all()
    }
}

fn mean_over_heads<'g, T: Real>(terms: Vec<Var<'g, T>>) -> Var<'g, T> {
    let n = terms.len();
    let sum = terms.into_iter().reduce(|a, b| a.add(b)).unwrap();
    sum.mul_scalar(T::lit(1.0 / n as f64))
}

/// Discriminator objective: `mean_heads[ mean (D(real) − 1)² + mean D(fake)² ]`.
pub fn d_adversarial_term<'g, T: Real>(
    real: &DisOutput<'g, T>,
    fake: &DisOutput<'g, T>,
) -> Result<Var<'g, T>, LossError> {
    if real.heads.is_empty() {
        return Err(LossError::NoHeads);
    }
    if real.labels() != fake.labels() {
        return Err(LossError::HeadMismatch);
    }
    if real.batch() != fake.batch() {
        return Err(LossError::BatchMismatch {
            real: real.batch(),
            fake: fake.batch(),
        });
    }
    let terms = real
        .heads
        .iter()
        .zip(&fake.heads)
        .map(|((_, r), (_, f))| head_mean_sq(*r, 1.0).add(head_mean_sq(*f, 0.0)))
        .collect();
    Ok(mean_over_heads(terms))
}

/// Generator objective: `mean_heads mean (D(G(x)) − 1)²`.
pub fn g_adversarial_term<'g, T: Real>(fake: &DisOutput<'g, T>) -> Result<Var<'g, T>, LossError> {
    if fake.heads.is_empty() {
        return Err(LossError::NoHeads);
    }
    Ok(mean_over_heads(
        fake.heads.iter().map(|(_, f)| head_mean_sq(*f, 1.0)).collect(),
    ))
}

/// Unweighted generator adversarial loss of each head.
pub fn g_adversarial_per_head<T: Real>(fake: &DisOutput<'_, T>) -> Vec<(HeadLabel, f64)> {
    fake.heads
        .iter()
        .map(|(l, f)| {
            let v = f.value();
            let loss = v.iter().map(|x| (x.as_f64() - 1.0).powi(2)).sum::<f64>() / v.len() as f64;
            (*l, loss)
        })
        .collect()
}

/// Discriminator loss on evaluated grids.
pub fn d_adversarial_loss<T: Real>(real: &DisOutputGrid<T>, fake: &DisOutputGrid<T>) -> Result<f64, LossError> {
    let g = Graph::new();
    let r = DisOutput::from_grid(&g, real);
    let f = DisOutput::from_grid(&g, fake);
    Ok(d_adversarial_term(&r, &f)?.item().as_f64())
}

/// Generator adversarial loss on an evaluated grid.
pub fn g_adversarial_loss<T: Real>(fake: &DisOutputGrid<T>) -> Result<f64, LossError> {
    let g = Graph::new();
    Ok(g_adversarial_term(&DisOutput::from_grid(&g, fake))?.item().as_f64())
}

fn check_same_shape<T: Real>(a: Var<'_, T>, b: Var<'_, T>) -> Result<(), LossError> {
    if a.shape() != b.shape() {
        return Err(LossError::Shape(a.shape(), b.shape()));
    }
    Ok(())
}

/// `mean |u(x1) − B(u(gx1))|`, with the backward generator passed as a closure.
pub fn weak_cycle_term<'g, T, B>(x1: Var<'g, T>, gx1: Var<'g, T>, backward: B) -> Result<Var<'g, T>, LossError>
where
    T: Real,
    B: FnOnce(Var<'g, T>) -> Result<Var<'g, T>, GeneratorError>,
{
    check_same_shape(x1, gx1)?;
    let target = downscale_var(x1)?;
    let rec = backward(downscale_var(gx1)?)?;
    check_same_shape(target, rec)?;
    Ok(target.sub(rec).abs().mean_all())
}

/// Weak cycle loss on image batches.
pub fn weak_cycle_loss<T: Real>(
    x1: &ImageBatch<T>,
    gx1: &ImageBatch<T>,
    backward: &BackwardGenerator<T>,
) -> Result<f64, LossError> {
    let g = Graph::new();
    let bound = backward.params().bind(&g, false);
    let loss = weak_cycle_term(g.constant(x1.to_dyn()), g.constant(gx1.to_dyn()), |y| {
        backward.forward(y, &bound)
    })?;
    Ok(loss.item().as_f64())
}

/// `mean |x2 − G(x2)|` on full-size target-domain images.
pub fn identity_term<'g, T: Real>(x2: Var<'g, T>, gx2: Var<'g, T>) -> Result<Var<'g, T>, LossError> {
    check_same_shape(x2, gx2)?;
    Ok(x2.sub(gx2).abs().mean_all())
}

pub fn identity_loss<T: Real>(x2: &ImageBatch<T>, gx2: &ImageBatch<T>) -> Result<f64, LossError> {
    let g = Graph::new();
    Ok(identity_term(g.constant(x2.to_dyn()), g.constant(gx2.to_dyn()))?
        .item()
        .as_f64())
}

/// `λadv·g_adv + λcyc·cyc + λid·id` on a graph.
pub fn generator_objective<'g, T: Real>(
    g_adv: Var<'g, T>,
    cyc: Var<'g, T>,
    id: Var<'g, T>,
    w: &LossWeights,
) -> Var<'g, T> {
    g_adv
        .mul_scalar(T::lit(w.lambda_adv))
        .add(cyc.mul_scalar(T::lit(w.lambda_cyc)))
        .add(id.mul_scalar(T::lit(w.lambda_id)))
}

/// Unweighted loss values of one training step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossComponents {
    pub d_adv: f64,
    pub g_adv: f64,
    pub cyc: f64,
    pub id: f64,
    pub g_adv_heads: Vec<(HeadLabel, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub d_adv: f64,
    pub g_adv: f64,
    pub cyc: f64,
    pub id: f64,
    pub g_total: f64,
    /// Generator adversarial loss of each head, keyed by head label.
    pub g_adv_heads: Vec<(String, f64)>,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.d_adv, self.g_adv, self.cyc, self.id, self.g_total]
            .iter()
            .chain(self.g_adv_heads.iter().map(|(_, v)| v))
            .all(|v| v.is_finite())
    }
}

pub fn total_generator_loss(c: &LossComponents, w: &LossWeights) -> LossReport {
    LossReport {
        d_adv: c.d_adv,
        g_adv: c.g_adv,
        cyc: c.cyc,
        id: c.id,
        g_total: w.lambda_adv * c.g_adv + w.lambda_cyc * c.cyc + w.lambda_id * c.id,
        g_adv_heads: c.g_adv_heads.iter().map(|(l, v)| (l.to_string(), *v)).collect(),
    }
}
