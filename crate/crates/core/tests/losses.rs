mod common;

use autograd::Graph;
use ndarray::{Array2, Array4};
use proptest::prelude::*;
use spatchgan::discriminator::{stat_labels, DisOutputGrid, HeadLabel};
use spatchgan::feature_stats::StatKind;
use spatchgan::generators::{downscale_var, GeneratorError};
use spatchgan::image::ImageBatch;
use spatchgan::losses::{
    d_adversarial_loss, g_adversarial_loss, identity_loss, total_generator_loss, weak_cycle_term, LossComponents,
    LossError, LossWeights,
};

fn grid(batch: usize, value: f64) -> DisOutputGrid<f64> {
    DisOutputGrid::filled(stat_labels(4, &StatKind::ALL), batch, value)
}

fn single(values: &[f64]) -> DisOutputGrid<f64> {
    DisOutputGrid {
        labels: vec![HeadLabel::Stat { scale: 1, stat: StatKind::Mean }],
        values: Array2::from_shape_vec((values.len(), 1), values.to_vec()).unwrap(),
    }
}

#[test]
fn discriminator_loss_examples() {
    assert_eq!(d_adversarial_loss(&grid(4, 1.0), &grid(4, 0.0)).unwrap(), 0.0);
    assert!((d_adversarial_loss(&grid(4, 0.5), &grid(4, 0.5)).unwrap() - 0.5).abs() < 1e-12);
    assert!((d_adversarial_loss(&single(&[0.8]), &single(&[0.3])).unwrap() - 0.13).abs() < 1e-12);
}

#[test]
fn generator_loss_examples() {
    assert_eq!(g_adversarial_loss(&grid(2, 1.0)).unwrap(), 0.0);
    assert_eq!(g_adversarial_loss(&grid(2, 0.0)).unwrap(), 1.0);
    assert!((g_adversarial_loss(&grid(2, 0.5)).unwrap() - 0.25).abs() < 1e-12);
}

#[test]
fn mismatched_grids_rejected() {
    assert_eq!(
        d_adversarial_loss(&grid(4, 1.0), &grid(3, 0.0)).unwrap_err(),
        LossError::BatchMismatch { real: 4, fake: 3 }
    );
    assert_eq!(
        d_adversarial_loss(&grid(4, 1.0), &single(&[0.0; 4])).unwrap_err(),
        LossError::HeadMismatch
    );
}

fn images(value: f64, size: usize) -> ImageBatch<f64> {
    ImageBatch::filled([2, 3, size, size], value)
}

#[test]
fn weak_cycle_with_identity_backward_and_perfect_translation_is_zero() {
    let x = common::random_images(2, 32, 1);
    let g = Graph::new();
    let xv = g.constant(x.to_dyn());
    let loss = weak_cycle_term(xv, xv, Ok).unwrap();
    assert_eq!(loss.item(), 0.0);
}

#[test]
fn weak_cycle_against_constant_reconstruction() {
    let g = Graph::new();
    let x = g.constant(images(0.0, 16).to_dyn());
    let fake = g.constant(common::random_images(2, 16, 4).to_dyn());
    let loss = weak_cycle_term(x, fake, |y| Ok(y.mul_scalar(0.0).add_scalar(0.5))).unwrap();
    assert!((loss.item() - 0.5).abs() < 1e-15);
}

#[test]
fn weak_cycle_ignores_pixels_outside_the_low_res_path() {
    let x = common::random_images(1, 16, 5);
    let fake = common::random_images(1, 16, 6);
    let mut perturbed = fake.as_array().clone();
    for y in 0..16 {
        for x in 0..16 {
            if !matches!(y % 8, 3 | 4) || !matches!(x % 8, 3 | 4) {
                perturbed[[0, 1, y, x]] = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
            }
        }
    }
    let eval = |f: &Array4<f64>| {
        let g = Graph::new();
        weak_cycle_term(g.constant(x.to_dyn()), g.constant(f.clone().into_dyn()), |y| {
            Ok::<_, GeneratorError>(y.tanh())
        })
            .unwrap()
            .item()
    };
    assert_eq!(eval(fake.as_array()), eval(&perturbed));
    let g = Graph::new();
    let a = downscale_var(g.constant(fake.to_dyn())).unwrap().value();
    let b = downscale_var(g.constant(perturbed.into_dyn())).unwrap().value();
    assert_eq!(a, b);
}

#[test]
fn weak_cycle_size_mismatch() {
    let g = Graph::new();
    let a = g.constant(images(0.0, 16).to_dyn());
    let b = g.constant(images(0.0, 32).to_dyn());
    assert!(matches!(weak_cycle_term(a, b, Ok), Err(LossError::Shape(..))));
}

#[test]
fn identity_loss_examples() {
    let x = common::random_images(3, 8, 9);
    assert_eq!(identity_loss(&x, &x).unwrap(), 0.0);
    assert_eq!(identity_loss(&images(-1.0, 8), &images(1.0, 8)).unwrap(), 2.0);
    let y = common::random_images(3, 8, 10);
    let order = [2, 0, 1];
    let permute = |b: &ImageBatch<f64>| {
        let parts: Vec<_> = order.iter().map(|&i| b.slice(i, 1)).collect();
        ImageBatch::concat(&parts.iter().collect::<Vec<_>>()).unwrap()
    };
    let a = identity_loss(&x, &y).unwrap();
    let b = identity_loss(&permute(&x), &permute(&y)).unwrap();
    assert!((a - b).abs() < 1e-15);
    assert!(matches!(identity_loss(&x, &images(0.0, 8)), Err(LossError::Shape(..))));
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    let c = LossComponents {
        g_adv: 0.25,
        cyc: 0.1,
        id: 0.05,
        ..Default::default()
    };
    assert!((total_generator_loss(&c, &w).g_total - 3.5).abs() < 1e-12);
    assert_eq!(total_generator_loss(&LossComponents::default(), &w).g_total, 0.0);
    let only_adv = LossWeights {
        lambda_adv: 1.0,
        lambda_cyc: 0.0,
        lambda_id: 0.0,
    };
    let r = total_generator_loss(&c, &only_adv);
    assert_eq!(r.g_total, r.g_adv);
    assert_eq!((r.cyc, r.id), (0.1, 0.05));
}

#[test]
fn negative_weights_rejected() {
    let w = LossWeights {
        lambda_cyc: -1.0,
        ..Default::default()
    };
    assert!(w.validate().is_err());
    assert!(LossWeights::default().validate().is_ok());
}

#[test]
fn generator_objective_gradient_matches_finite_differences() {
    let worst = common::generator_gradient_check(3, 10);
    assert!(worst < 1e-3, "worst relative error {worst}");
}

fn grid_strategy() -> impl Strategy<Value = DisOutputGrid<f64>> {
    (1usize..5).prop_flat_map(|n| {
        proptest::collection::vec(-2.0f64..2.0, n * 12).prop_map(move |v| DisOutputGrid {
            labels: stat_labels(4, &StatKind::ALL),
            values: Array2::from_shape_vec((n, 12), v).unwrap(),
        })
    })
}

proptest! {
    #[test]
    fn squared_grid_mean_equals_generator_loss_of_complement(v in grid_strategy()) {
        let direct = v.values.iter().map(|x| x * x).sum::<f64>() / v.values.len() as f64;
        let complement = DisOutputGrid { labels: v.labels.clone(), values: v.values.mapv(|x| 1.0 - x) };
        prop_assert!((g_adversarial_loss(&complement).unwrap() - direct).abs() < 1e-12);
        let ones = DisOutputGrid::filled(v.labels.clone(), v.batch(), 1.0);
        prop_assert!((d_adversarial_loss(&ones, &v).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn losses_are_non_negative(real in grid_strategy(), seed in 0u64..100) {
        let fake = DisOutputGrid { labels: real.labels.clone(), values: real.values.mapv(|x| x * 0.5 - 0.2) };
        prop_assert!(d_adversarial_loss(&real, &fake).unwrap() >= 0.0);
        prop_assert!(g_adversarial_loss(&fake).unwrap() >= 0.0);
        let a = common::random_images(1, 8, seed);
        let b = common::random_images(1, 8, seed + 1);
        prop_assert!(identity_loss(&a, &b).unwrap() >= 0.0);
    }
}
