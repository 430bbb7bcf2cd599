//! FID and KID between embedded image sets, with pluggable embedders.

use std::path::Path;

use autograd::Graph;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array2, ArrayD, Axis, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{decode_image, list_images, to_signed_range, DataError};
use crate::image::ImageBatch;
use crate::resize::{bilinear_matrix_as, resize_planes};

/// Default KID block size cap.
pub const KID_BLOCK: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("need at least 2 embeddings to fit a Gaussian, got {0}")]
    TooFewSamples(usize),
    #[error("embedding dimensions differ: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("unknown embedder {tag:?}; registered embedders: {known:?}")]
    UnknownEmbedder { tag: String, known: Vec<String> },
    #[error("embedder weights do not match the published hash (got {0})")]
    WeightHash(String),
    #[error("directory {0} contains no images")]
    EmptyDir(std::path::PathBuf),
    #[error("KID block size must be positive")]
    ZeroBlock,
    #[error(transparent)]
    Data(#[from] DataError),
}

/// A deterministic map from images to `d`-vectors.
pub trait EmbeddingModel {
    fn tag(&self) -> &str;
    fn dim(&self) -> usize;
    /// One row per image.
    fn embed(&self, images: &ImageBatch<f32>) -> Array2<f64>;
}

/// Small fixed-seed convolutional embedder for desk-scale evaluation.
///
/// Each image is resized to 64×64 and standardised per channel. Three
/// stride-2 4×4 ReLU convolutions follow. The embedding concatenates the
/// per-channel mean and standard deviation of the raw image and of every
/// convolution output, 64 values in all.
pub struct ToyConvEmbedder {
    weights: Vec<ArrayD<f32>>,
}

const TOY_SEED: u64 = 0x5EED_0064;
const TOY_INPUT: usize = 64;
const TOY_CHANNELS: [usize; 4] = [3, 8, 8, 13];

/// Per-channel mean and population standard deviation, `[N, 2C]`.
fn channel_moments(x: &ArrayD<f32>) -> Array2<f64> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let f = x
        .mapv(|v| v as f64)
        .into_shape_with_order((n, c, x.len() / (n * c)))
        .expect("contiguous NCHW");
    let mean = f.mean_axis(Axis(2)).unwrap();
    let std = f.std_axis(Axis(2), 0.0);
    ndarray::concatenate(Axis(1), &[mean.view(), std.view()]).unwrap()
}

impl ToyConvEmbedder {
    pub const TAG: &'static str = "toy-conv64-v1";
    /// SHA-256 of the weights as little-endian `f32`, layer by layer.
    pub const WEIGHT_SHA256: &'static str = "ee42e2a26e9e293c2ead21c4e53d6f20148e179e91437c86c5d0ffd15007ddc7";

    pub fn new() -> Result<Self, MetricsError> {
        let mut rng = ChaCha8Rng::seed_from_u64(TOY_SEED);
        let weights: Vec<ArrayD<f32>> = TOY_CHANNELS
            .windows(2)
            .map(|w| {
                let (cin, cout) = (w[0], w[1]);
                let std = (2.0 / (cin * 16) as f64).sqrt();
                let normal = Normal::new(0.0, std).unwrap();
                ArrayD::from_shape_simple_fn(IxDyn(&[cout, cin, 4, 4]), || normal.sample(&mut rng) as f32)
            })
            .collect();
        let hash = Self::hash(&weights);
        if hash != Self::WEIGHT_SHA256 {
            return Err(MetricsError::WeightHash(hash));
        }
        Ok(Self { weights })
    }

    fn hash(weights: &[ArrayD<f32>]) -> String {
        let mut h = Sha256::new();
        for w in weights {
            for v in w.iter() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

impl EmbeddingModel for ToyConvEmbedder {
    fn tag(&self) -> &str {
        Self::TAG
    }

    fn dim(&self) -> usize {
        2 * TOY_CHANNELS.iter().sum::<usize>()
    }

    fn embed(&self, images: &ImageBatch<f32>) -> Array2<f64> {
        let g = Graph::new();
        let [_, _, h, w] = images.shape();
        let raw = images.to_dyn();
        let moments = channel_moments(&raw);
        let c = moments.ncols() / 2;
        let mut standardized = raw;
        for (i, mut img) in standardized.outer_iter_mut().enumerate() {
            for (ch, mut plane) in img.outer_iter_mut().enumerate() {
                let (m, s) = (moments[[i, ch]], moments[[i, c + ch]] + 1e-3);
                plane.mapv_inplace(|v| ((v as f64 - m) / s) as f32);
            }
        }
        let mut x = g
            .constant(standardized)
            .resample(&bilinear_matrix_as(h, TOY_INPUT), &bilinear_matrix_as(w, TOY_INPUT));
        let mut parts = vec![moments];
        for wt in &self.weights {
            x = x.conv2d(g.constant(wt.clone()), 2, 1).relu();
            parts.push(channel_moments(&x.value()));
        }
        let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
        ndarray::concatenate(Axis(1), &views).unwrap()
    }
}

/// Tags accepted by [`embedder_by_tag`].
pub fn registered_embedders() -> Vec<String> {
    vec![ToyConvEmbedder::TAG.to_string()]
}

pub fn embedder_by_tag(tag: &str) -> Result<Box<dyn EmbeddingModel>, MetricsError> {
    match tag {
        ToyConvEmbedder::TAG => Ok(Box::new(ToyConvEmbedder::new()?)),
        _ => Err(MetricsError::UnknownEmbedder {
            tag: tag.to_string(),
            known: registered_embedders(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub count: usize,
}

/// Sample mean and unbiased (divisor `n − 1`) covariance of the rows.
pub fn fit_gaussian(embeddings: &Array2<f64>) -> Result<GaussianStats, MetricsError> {
    let (n, d) = embeddings.dim();
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let mean = embeddings.mean_axis(Axis(0)).unwrap();
    let centered = embeddings - &mean;
    let cov = centered.t().dot(&centered) / (n as f64 - 1.0);
    Ok(GaussianStats {
        mean: DVector::from_iterator(d, mean.iter().copied()),
        cov: DMatrix::from_fn(d, d, |i, j| 0.5 * (cov[[i, j]] + cov[[j, i]])),
        count: n,
    })
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2 (Σa^{1/2} Σb Σa^{1/2})^{1/2})`, clamped at 0.
pub fn fid(a: &GaussianStats, b: &GaussianStats) -> Result<f64, MetricsError> {
    if a.mean.len() != b.mean.len() {
        return Err(MetricsError::Dimension(a.mean.len(), b.mean.len()));
    }
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = sqrt_psd(&a.cov);
    let mid = &root_a * &b.cov * &root_a;
    let mid = (&mid + mid.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(mid)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    Ok((diff + a.cov.trace() + b.cov.trace() - 2.0 * cross).max(0.0))
}

/// `(xᵀy / d + 1)³`.
pub fn polynomial_kernel(x: &[f64], y: &[f64]) -> f64 {
    let d = x.len() as f64;
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    (dot / d + 1.0).powi(3)
}

/// Unbiased MMD² between two equally sized blocks:
/// `1/(m(m−1)) Σ_{i≠j} [k(xi,xj) + k(yi,yj) − k(xi,yj) − k(xj,yi)]`.
fn block_mmd(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
    let m = x.nrows();
    let d = x.ncols() as f64;
    let kxx = x.dot(&x.t()).mapv(|v| (v / d + 1.0).powi(3));
    let kyy = y.dot(&y.t()).mapv(|v| (v / d + 1.0).powi(3));
    let kxy = x.dot(&y.t()).mapv(|v| (v / d + 1.0).powi(3));
    let off = |k: &Array2<f64>| k.sum() - k.diag().sum();
    (off(&kxx) + off(&kyy) - 2.0 * off(&kxy)) / (m * (m - 1)) as f64
}

/// KID: the unbiased MMD² with [`polynomial_kernel`], averaged over
/// consecutive blocks of `block` rows from each set.
///
/// `block` defaults to `min(n, 100)` with `n` the smaller set size. When
/// either set has fewer rows than the block, one block of `n` rows is used
/// and a warning is logged.
pub fn kid(a: &Array2<f64>, b: &Array2<f64>, block: Option<usize>) -> Result<f64, MetricsError> {
    if a.ncols() != b.ncols() {
        return Err(MetricsError::Dimension(a.ncols(), b.ncols()));
    }
    let n = a.nrows().min(b.nrows());
    if n < 2 {
        return Err(MetricsError::TooFewSamples(n));
    }
    let mut size = block.unwrap_or(KID_BLOCK.min(n));
    if size == 0 {
        return Err(MetricsError::ZeroBlock);
    }
    if size > n {
        log::warn!("KID block size {size} exceeds the {n} available samples; using one block of {n}");
        size = n;
    }
    let size = size.max(2);
    let blocks = n / size;
    let total: f64 = (0..blocks)
        .map(|k| {
            let r = k * size..(k + 1) * size;
            block_mmd(
                &a.slice(ndarray::s![r.clone(), ..]).to_owned(),
                &b.slice(ndarray::s![r, ..]).to_owned(),
            )
        })
        .sum();
    Ok(total / blocks as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid: f64,
    pub kid: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub embedder_tag: String,
    pub embedding_dim: usize,
    pub kid_block_size: usize,
}

impl MetricReport {
    /// Fixed-order `name  value` lines for terminals.
    pub fn table(&self) -> String {
        format!(
            "fid            {:.6}\nkid            {:.6}\nn_generated    {}\nn_reference    {}\nembedder       {}\nembedding_dim  {}\nkid_block_size {}\n",
            self.fid,
            self.kid,
            self.n_generated,
            self.n_reference,
            self.embedder_tag,
            self.embedding_dim,
            self.kid_block_size
        )
    }
}

/// Embeds images in chunks of 32.
pub fn embed_images(model: &dyn EmbeddingModel, images: &[ImageBatch<f32>]) -> Array2<f64> {
    let rows: Vec<Array2<f64>> = images.chunks(32).map(|chunk| {
        let refs: Vec<&ImageBatch<f32>> = chunk.iter().collect();
        model.embed(&ImageBatch::concat(&refs).expect("same-size images"))
    }).collect();
    let views: Vec<_> = rows.iter().map(|r| r.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("same embedding width")
}

/// Loads every image of a directory as a single-image batch at `size`.
pub fn load_directory(dir: &Path, size: usize) -> Result<Vec<ImageBatch<f32>>, MetricsError> {
    let files = list_images(dir)?;
    let mut out = Vec::new();
    for f in files {
        match decode_image(&f) {
            Ok(img) => {
                let img = to_signed_range(&resize_planes(&img, size, size)).insert_axis(Axis(0));
                out.push(ImageBatch::new(img).expect("finite pixels"));
            }
            Err(e) => log::warn!("skipping {e}"),
        }
    }
    if out.is_empty() {
        return Err(MetricsError::EmptyDir(dir.to_path_buf()));
    }
    Ok(out)
}

/// FID and KID between embedded image sets.
pub fn compare_embeddings(
    generated: &Array2<f64>,
    reference: &Array2<f64>,
    model: &dyn EmbeddingModel,
    kid_block: Option<usize>,
) -> Result<MetricReport, MetricsError> {
    let fid_value = fid(&fit_gaussian(generated)?, &fit_gaussian(reference)?)?;
    let n = generated.nrows().min(reference.nrows());
    let block = kid_block.unwrap_or(KID_BLOCK.min(n)).min(n);
    Ok(MetricReport {
        fid: fid_value,
        kid: kid(generated, reference, kid_block)?,
        n_generated: generated.nrows(),
        n_reference: reference.nrows(),
        embedder_tag: model.tag().to_string(),
        embedding_dim: model.dim(),
        kid_block_size: block,
    })
}

/// Embeds two directories (images resized to `size`) and compares them.
pub fn evaluate(
    generated_dir: &Path,
    reference_dir: &Path,
    model: &dyn EmbeddingModel,
    size: usize,
    kid_block: Option<usize>,
) -> Result<MetricReport, MetricsError> {
    let a = embed_images(model, &load_directory(generated_dir, size)?);
    let b = embed_images(model, &load_directory(reference_dir, size)?);
    compare_embeddings(&a, &b, model, kid_block)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_embedder_weights_match_hash() {
        let e = ToyConvEmbedder::new().unwrap();
        assert_eq!(e.dim(), 64);
        let x = ImageBatch::filled([2, 3, 16, 16], 0.25f32);
        assert_eq!(e.embed(&x).dim(), (2, 64));
    }
}
