use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spatchgan::data::toy;
use spatchgan::image::ImageBatch;
use spatchgan::metrics::{
    embedder_by_tag, evaluate, fid, fit_gaussian, kid, polynomial_kernel, EmbeddingModel, GaussianStats,
    MetricsError, ToyConvEmbedder,
};

fn random_rows(n: usize, d: usize, shift: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0) + shift)
}

fn diag_stats(mean: &[f64], var: &[f64]) -> GaussianStats {
    GaussianStats {
        mean: DVector::from_column_slice(mean),
        cov: DMatrix::from_diagonal(&DVector::from_column_slice(var)),
        count: 10,
    }
}

/// Brute-force unbiased MMD² over one block, straight from the double sum.
fn kid_oracle(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let m = a.nrows();
    let row = |x: &Array2<f64>, i: usize| x.row(i).to_vec();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                total += polynomial_kernel(&row(a, i), &row(a, j)) + polynomial_kernel(&row(b, i), &row(b, j))
                    - polynomial_kernel(&row(a, i), &row(b, j))
                    - polynomial_kernel(&row(a, j), &row(b, i));
            }
        }
    }
    total / (m * (m - 1)) as f64
}

#[test]
fn two_point_gaussian() {
    let g = fit_gaussian(&array![[0.0, 0.0], [2.0, 0.0]]).unwrap();
    assert_eq!(g.mean, DVector::from_column_slice(&[1.0, 0.0]));
    assert_eq!(g.cov, DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]));
    assert_eq!(g.count, 2);
}

#[test]
fn identical_points_have_zero_covariance() {
    let g = fit_gaussian(&array![[1.5, -2.0, 3.0], [1.5, -2.0, 3.0], [1.5, -2.0, 3.0]]).unwrap();
    assert!(g.cov.iter().all(|&v| v == 0.0));
}

#[test]
fn single_sample_is_rejected() {
    assert!(matches!(fit_gaussian(&array![[1.0, 2.0]]), Err(MetricsError::TooFewSamples(1))));
}

#[test]
fn affine_map_moves_mean_and_covariance() {
    let x = random_rows(30, 3, 0.0, 1);
    let a = array![[2.0, 0.5, 0.0], [0.0, -1.0, 1.0], [1.0, 0.0, 3.0]];
    let b = array![0.5, -2.0, 4.0];
    let y = x.dot(&a.t()) + &b;
    let gx = fit_gaussian(&x).unwrap();
    let gy = fit_gaussian(&y).unwrap();
    let am = DMatrix::from_row_slice(3, 3, a.as_slice().unwrap());
    let expected_mean = &am * &gx.mean + DVector::from_column_slice(b.as_slice().unwrap());
    let expected_cov = &am * &gx.cov * am.transpose();
    assert!((gy.mean - expected_mean).amax() < 1e-12);
    assert!((gy.cov - expected_cov).amax() < 1e-12);
}

#[test]
fn covariance_is_symmetric_psd() {
    let g = fit_gaussian(&random_rows(8, 12, 0.3, 2)).unwrap();
    assert_eq!(g.cov, g.cov.transpose());
    assert!(g.cov.clone().symmetric_eigenvalues().iter().all(|&l| l >= -1e-8));
}

#[test]
fn fid_of_identical_stats_is_zero() {
    let g = fit_gaussian(&random_rows(40, 6, 0.0, 3)).unwrap();
    assert!(fid(&g, &g).unwrap().abs() < 1e-10);
}

#[test]
fn fid_of_shifted_identity_gaussians_is_squared_distance() {
    let a = diag_stats(&[0.0, 0.0, 0.0], &[1.0, 1.0, 1.0]);
    let b = diag_stats(&[1.0, -2.0, 0.5], &[1.0, 1.0, 1.0]);
    assert!((fid(&a, &b).unwrap() - 5.25).abs() < 1e-12);
}

#[test]
fn fid_dimension_mismatch() {
    let a = diag_stats(&[0.0, 0.0], &[1.0, 1.0]);
    let b = diag_stats(&[0.0], &[1.0]);
    assert!(matches!(fid(&a, &b), Err(MetricsError::Dimension(2, 1))));
}

#[test]
fn kid_matches_hand_computed_point_masses() {
    // Three copies of (0,0) against three copies of (2,2) in d = 2:
    // k(x,x) = 1, k(y,y) = (8/2 + 1)³ = 125, k(x,y) = 1.
    let a = Array2::zeros((3, 2));
    let b = Array2::from_elem((3, 2), 2.0);
    let value = kid(&a, &b, None).unwrap();
    assert!((value - (1.0 + 125.0 - 2.0)).abs() < 1e-12, "{value}");
}

#[test]
fn kid_of_identical_sets_is_zero() {
    let a = random_rows(25, 8, 0.0, 4);
    assert_eq!(kid(&a, &a, None).unwrap(), 0.0);
    assert_eq!(kid(&a, &a, Some(5)).unwrap(), 0.0);
}

#[test]
fn kid_of_same_distribution_is_small() {
    let a = random_rows(400, 8, 0.0, 5);
    let b = random_rows(400, 8, 0.0, 6);
    let c = random_rows(400, 8, 0.5, 7);
    let same = kid(&a, &b, None).unwrap();
    let shifted = kid(&a, &c, None).unwrap();
    assert!(same.abs() < 0.01, "{same}");
    assert!(shifted > 10.0 * same.abs(), "{shifted} vs {same}");
}

#[test]
fn kid_blocks_average_consecutive_chunks() {
    let a = random_rows(12, 4, 0.0, 8);
    let b = random_rows(13, 4, 0.2, 9);
    let expected: f64 = (0..3)
        .map(|k| {
            let r = k * 4..(k + 1) * 4;
            kid_oracle(
                &a.slice(ndarray::s![r.clone(), ..]).to_owned(),
                &b.slice(ndarray::s![r, ..]).to_owned(),
            )
        })
        .sum::<f64>()
        / 3.0;
    assert!((kid(&a, &b, Some(4)).unwrap() - expected).abs() < 1e-10);
}

#[test]
fn kid_oversized_block_falls_back_to_one_block() {
    let a = random_rows(6, 3, 0.0, 10);
    let b = random_rows(6, 3, 1.0, 11);
    assert_eq!(kid(&a, &b, Some(50)).unwrap(), kid(&a, &b, Some(6)).unwrap());
    assert!(matches!(kid(&a, &b, Some(0)), Err(MetricsError::ZeroBlock)));
}

#[test]
fn kid_dimension_mismatch() {
    assert!(matches!(
        kid(&random_rows(4, 3, 0.0, 1), &random_rows(4, 2, 0.0, 1), None),
        Err(MetricsError::Dimension(3, 2))
    ));
}

#[test]
fn unknown_embedder_lists_registered_tags() {
    let err = embedder_by_tag("inception-v3").err().unwrap();
    let msg = err.to_string();
    assert!(msg.contains("inception-v3") && msg.contains(ToyConvEmbedder::TAG), "{msg}");
}

#[test]
fn toy_embedder_is_deterministic() {
    let e = embedder_by_tag(ToyConvEmbedder::TAG).unwrap();
    assert_eq!(e.tag(), ToyConvEmbedder::TAG);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let imgs = ImageBatch::new(ndarray::Array4::from_shape_fn((3, 3, 48, 40), |_| rng.random_range(-1.0f32..1.0)))
        .unwrap();
    let a = e.embed(&imgs);
    let b = ToyConvEmbedder::new().unwrap().embed(&imgs);
    assert_eq!(a.dim(), (3, 64));
    assert_eq!(a, b);
    assert!(a.iter().all(|v| v.is_finite()));
    let single = e.embed(&imgs.slice(1, 1));
    assert!((&single.row(0) - &a.row(1)).iter().all(|v| v.abs() < 1e-6));
}

#[test]
fn toy_embedder_separates_texture_domains() {
    let e = ToyConvEmbedder::new().unwrap();
    let (src, tgt) = toy::texture_domains(200, 64, 1);
    let (src2, _) = toy::texture_domains(200, 64, 2);
    let batch = |v: &[ndarray::Array3<f32>]| {
        let views: Vec<_> = v.iter().map(|a| a.mapv(|p| p / 127.5 - 1.0).insert_axis(ndarray::Axis(0))).collect();
        let views: Vec<_> = views.iter().map(|a| a.view()).collect();
        ImageBatch::new(ndarray::concatenate(ndarray::Axis(0), &views).unwrap()).unwrap()
    };
    let (s, s2, t) = (e.embed(&batch(&src)), e.embed(&batch(&src2)), e.embed(&batch(&tgt)));
    let f = |a: &Array2<f64>, b: &Array2<f64>| fid(&fit_gaussian(a).unwrap(), &fit_gaussian(b).unwrap()).unwrap();
    assert!(f(&s, &t) > 2.0 * f(&s, &s2), "{} vs {}", f(&s, &t), f(&s, &s2));
}

#[test]
fn identical_directories_evaluate_to_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = toy::write_texture_domains(tmp.path(), 12, 32, 0).unwrap();
    let e = ToyConvEmbedder::new().unwrap();
    let report = evaluate(&spec.target_dir, &spec.target_dir, &e, 32, None).unwrap();
    assert!(report.fid < 1e-6, "{}", report.fid);
    assert!(report.kid.abs() < 1e-6, "{}", report.kid);
    assert_eq!((report.n_generated, report.n_reference), (12, 12));
    assert_eq!(report.embedder_tag, ToyConvEmbedder::TAG);
    assert_eq!((report.embedding_dim, report.kid_block_size), (64, 12));
    let cross = evaluate(&spec.source_dir, &spec.target_dir, &e, 32, None).unwrap();
    assert!(cross.fid > 0.0);
    let json: serde_json::Value = serde_json::to_value(&report).unwrap();
    assert_eq!(json["embedder_tag"], ToyConvEmbedder::TAG);
    assert!(report.table().starts_with("fid"));
}

#[test]
fn empty_directory_fails_evaluation() {
    let tmp = tempfile::tempdir().unwrap();
    let e = ToyConvEmbedder::new().unwrap();
    assert!(evaluate(tmp.path(), tmp.path(), &e, 32, None).is_err());
}

fn psd(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fid_is_symmetric_and_zero_on_itself(d in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mean = || DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let a = GaussianStats { mean: mean(), cov: psd(d, seed ^ 1), count: 5 };
        let b = GaussianStats { mean: mean(), cov: psd(d, seed ^ 2), count: 5 };
        let ab = fid(&a, &b).unwrap();
        let ba = fid(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-8 * ab.max(1.0), "{} vs {}", ab, ba);
        prop_assert!(fid(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn fid_matches_diagonal_closed_form(
        d in 1usize..=16,
        vals in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0.0f64..4.0, 0.0f64..4.0), 16),
    ) {
        let v = &vals[..d];
        let a = diag_stats(&v.iter().map(|t| t.0).collect::<Vec<_>>(), &v.iter().map(|t| t.2).collect::<Vec<_>>());
        let b = diag_stats(&v.iter().map(|t| t.1).collect::<Vec<_>>(), &v.iter().map(|t| t.3).collect::<Vec<_>>());
        let expected: f64 = v.iter().map(|&(ma, mb, sa, sb)| (ma - mb).powi(2) + sa + sb - 2.0 * (sa * sb).sqrt()).sum();
        prop_assert!((fid(&a, &b).unwrap() - expected).abs() < 1e-6);
    }

    #[test]
    fn kid_matches_brute_force(n in 2usize..=20, d in 1usize..6, seed in any::<u64>()) {
        let a = random_rows(n, d, 0.0, seed);
        let b = random_rows(n, d, 0.3, seed.wrapping_add(1));
        let fast = kid(&a, &b, None).unwrap();
        prop_assert!((fast - kid_oracle(&a, &b)).abs() < 1e-10);
        prop_assert!((fast - kid(&b, &a, None).unwrap()).abs() < 1e-12);
    }
}
