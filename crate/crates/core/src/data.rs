//! Image loading, augmentation and seeded batching for the two domains.
//!
//! Decoded images are `[3, H, W]` arrays with values in `[0, 255]`; the
//! augmentations end by mapping them to `[-1, 1]` via `v / 127.5 − 1`.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array3, Array4, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::image::ImageBatch;
use crate::resize::resize_planes;

/// Size of the square window cut from the centre of face images.
pub const CELEBA_CROP: usize = 178;
/// Pre-crop resize of the anime-style pipeline, relative to a 256 output.
pub const ANIME_RESIZE_AT_256: usize = 286;
/// Maximum shift of the face pipeline, relative to a 256 output.
pub const CELEBA_SHIFT_AT_256: usize = 13;
/// Optional list of relative image paths inside a domain directory.
pub const MANIFEST_NAME: &str = "manifest.txt";

const IMAGE_EXTENSIONS: [&str; 4] = ["png", "jpg", "jpeg", "bmp"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    /// Square resize, random crop, random flip.
    AnimeStyle,
    /// Centre crop, resize, random shift with edge replication, random flip.
    CelebaStyle,
    /// Resize only.
    None,
}

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("dataset directory {0} does not exist")]
    MissingDir(PathBuf),
    #[error("no decodable images in {0}")]
    Empty(PathBuf),
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot decode {path}: {message}")]
    Decode { path: PathBuf, message: String },
    #[error("cannot encode {path}: {message}")]
    Encode { path: PathBuf, message: String },
    #[error("image is {height}x{width}, smaller than the {min}x{min} centre crop")]
    TooSmall { height: usize, width: usize, min: usize },
    #[error("batch size must be positive")]
    ZeroBatch,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Decodes any supported file to `[3, H, W]` in `[0, 255]`; grayscale is
/// replicated across channels.
pub fn decode_image(path: &Path) -> Result<Array3<f32>, DataError> {
    let img = image::open(path).map_err(|e| DataError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let raw = rgb.into_raw();
    let hwc = Array3::from_shape_vec((h as usize, w as usize, 3), raw).expect("rgb buffer size");
    Ok(hwc.permuted_axes([2, 0, 1]).mapv(f32::from).as_standard_layout().into_owned())
}

/// Writes a `[C, H, W]` image in `[-1, 1]` as 8-bit PNG.
pub fn write_image(path: &Path, img: &Array3<f32>) -> Result<(), DataError> {
    let (c, h, w) = img.dim();
    let mut buf = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = img[[ch.min(c - 1), y, x]];
                buf.push(((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round() as u8);
            }
        }
    }
    image::RgbImage::from_raw(w as u32, h as u32, buf)
        .expect("buffer size")
        .save(path)
        .map_err(|e| DataError::Encode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

fn has_image_extension(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Image files of a domain: the manifest entries if present, otherwise every
/// file with an image extension, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>, DataError> {
    if !dir.is_dir() {
        return Err(DataError::MissingDir(dir.to_path_buf()));
    }
    let manifest = dir.join(MANIFEST_NAME);
    if manifest.is_file() {
        let text = fs::read_to_string(&manifest).map_err(io_err(&manifest))?;
        return Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(|l| dir.join(l))
            .collect());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_image_extension(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Test hook: forces the random parts of an augmentation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AugmentParams {
    /// `(top, left)` crop offset.
    pub crop: Option<(usize, usize)>,
    /// `(down, right)` shift in pixels.
    pub shift: Option<(i64, i64)>,
    pub flip: Option<bool>,
}

/// `v / 127.5 − 1`.
pub fn to_signed_range(img: &Array3<f32>) -> Array3<f32> {
    img.mapv(|v| v / 127.5 - 1.0)
}

pub fn flip_horizontal(img: &Array3<f32>) -> Array3<f32> {
    img.slice(s![.., .., ..;-1]).to_owned()
}

fn scaled(size: usize, at_256: usize) -> usize {
    ((size * at_256) as f64 / 256.0).round() as usize
}

pub fn augment_anime<R: Rng>(img: &Array3<f32>, size: usize, rng: &mut R, forced: &AugmentParams) -> Array3<f32> {
    let big = scaled(size, ANIME_RESIZE_AT_256).max(size);
    let resized = resize_planes(img, big, big);
    let span = big - size;
    let (top, left) = forced
        .crop
        .unwrap_or_else(|| (rng.random_range(0..=span), rng.random_range(0..=span)));
    let (top, left) = (top.min(span), left.min(span));
    let mut out = resized.slice(s![.., top..top + size, left..left + size]).to_owned();
    if forced.flip.unwrap_or_else(|| rng.random_bool(0.5)) {
        out = flip_horizontal(&out);
    }
    to_signed_range(&out)
}

/// Moves content by `(dy, dx)`, filling uncovered pixels from the nearest edge.
pub fn shift_replicate(img: &Array3<f32>, dy: i64, dx: i64) -> Array3<f32> {
    let (c, h, w) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ch, y, x)| {
        let sy = (y as i64 - dy).clamp(0, h as i64 - 1) as usize;
        let sx = (x as i64 - dx).clamp(0, w as i64 - 1) as usize;
        img[[ch, sy, sx]]
    })
}

pub fn center_crop(img: &Array3<f32>, side: usize) -> Result<Array3<f32>, DataError> {
    let (_, h, w) = img.dim();
    if h < side || w < side {
        return Err(DataError::TooSmall {
            height: h,
            width: w,
            min: side,
        });
    }
    let top = (h - side) / 2;
    let left = (w - side) / 2;
    Ok(img.slice(s![.., top..top + side, left..left + side]).to_owned())
}

pub fn augment_celeba<R: Rng>(
    img: &Array3<f32>,
    size: usize,
    rng: &mut R,
    forced: &AugmentParams,
) -> Result<Array3<f32>, DataError> {
    let cropped = center_crop(img, CELEBA_CROP)?;
    let resized = resize_planes(&cropped, size, size);
    let max = scaled(size, CELEBA_SHIFT_AT_256) as i64;
    let (dy, dx) = forced
        .shift
        .unwrap_or_else(|| (rng.random_range(-max..=max), rng.random_range(-max..=max)));
    let mut out = shift_replicate(&resized, dy, dx);
    if forced.flip.unwrap_or_else(|| rng.random_bool(0.5)) {
        out = flip_horizontal(&out);
    }
    Ok(to_signed_range(&out))
}

pub fn augment_none(img: &Array3<f32>, size: usize) -> Array3<f32> {
    to_signed_range(&resize_planes(img, size, size))
}

pub fn augment<R: Rng>(
    kind: Augmentation,
    img: &Array3<f32>,
    size: usize,
    rng: &mut R,
    forced: &AugmentParams,
) -> Result<Array3<f32>, DataError> {
    match kind {
        Augmentation::AnimeStyle => Ok(augment_anime(img, size, rng, forced)),
        Augmentation::CelebaStyle => augment_celeba(img, size, rng, forced),
        Augmentation::None => Ok(augment_none(img, size)),
    }
}

enum Items {
    Files(Vec<PathBuf>),
    Decoded(Vec<Array3<f32>>),
}

/// The images of one domain, either decoded up front or read on demand.
pub struct Domain {
    name: String,
    items: Items,
}

impl Domain {
    /// Lists a directory, skipping unreadable files with a warning. With
    /// `preload` every image is decoded once and kept in memory.
    pub fn open(dir: &Path, preload: bool) -> Result<Self, DataError> {
        let files = list_images(dir)?;
        let name = dir.display().to_string();
        let items = if preload {
            let decoded: Vec<_> = files
                .iter()
                .filter_map(|p| match decode_image(p) {
                    Ok(img) => Some(img),
                    Err(e) => {
                        log::warn!("skipping {e}");
                        None
                    }
                })
                .collect();
            if decoded.is_empty() {
                return Err(DataError::Empty(dir.to_path_buf()));
            }
            Items::Decoded(decoded)
        } else {
            let readable: Vec<_> = files
                .into_iter()
                .filter(|p| match image::image_dimensions(p) {
                    Ok(_) => true,
                    Err(e) => {
                        log::warn!("skipping {}: {e}", p.display());
                        false
                    }
                })
                .collect();
            if readable.is_empty() {
                return Err(DataError::Empty(dir.to_path_buf()));
            }
            Items::Files(readable)
        };
        Ok(Self { name, items })
    }

    /// In-memory domain of `[3, H, W]` images in `[0, 255]`.
    pub fn from_images(name: &str, images: Vec<Array3<f32>>) -> Result<Self, DataError> {
        if images.is_empty() {
            return Err(DataError::Empty(PathBuf::from(name)));
        }
        Ok(Self {
            name: name.to_string(),
            items: Items::Decoded(images),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        match &self.items {
            Items::Files(f) => f.len(),
            Items::Decoded(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn image(&self, index: usize) -> Result<Array3<f32>, DataError> {
        match &self.items {
            Items::Files(f) => decode_image(&f[index]),
            Items::Decoded(d) => Ok(d[index].clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub source_dir: PathBuf,
    pub target_dir: PathBuf,
    pub augmentation: Augmentation,
    pub output_size: usize,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent RNG seed from a base seed and a path of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(splitmix(seed), |acc, &l| splitmix(acc ^ splitmix(l)))
}

/// Dataset indices of batch `k` for a domain of `n` images.
///
/// Each pass over the domain is a fresh seeded permutation holding
/// `max(1, n / batch)` batches; leftover images of a pass are dropped and a
/// domain smaller than the batch wraps around its permutation.
pub fn batch_indices(n: usize, batch: usize, seed: u64, domain: u64, k: u64) -> Vec<usize> {
    let per_pass = (n / batch).max(1) as u64;
    let pass = k / per_pass;
    let pos = (k % per_pass) as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[domain, pass])));
    (0..batch).map(|i| perm[(pos * batch + i) % n]).collect()
}

/// Source of training batches, addressed by batch number so that a resumed
/// run sees the same data as an uninterrupted one.
pub trait BatchSource {
    fn batch(&mut self, k: u64) -> Result<(ImageBatch<f32>, ImageBatch<f32>), DataError>;
}

/// Paired source/target batches with independent per-domain shuffling.
pub struct PairedBatches {
    domains: [Domain; 2],
    augmentation: Augmentation,
    size: usize,
    batch_size: usize,
    seed: u64,
    /// Forced augmentation parameters (test hook).
    pub forced: AugmentParams,
}

impl PairedBatches {
    pub fn new(
        source: Domain,
        target: Domain,
        augmentation: Augmentation,
        size: usize,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self, DataError> {
        if batch_size == 0 {
            return Err(DataError::ZeroBatch);
        }
        Ok(Self {
            domains: [source, target],
            augmentation,
            size,
            batch_size,
            seed,
            forced: AugmentParams::default(),
        })
    }

    pub fn from_spec(spec: &DatasetSpec, batch_size: usize, seed: u64, preload: bool) -> Result<Self, DataError> {
        Self::new(
            Domain::open(&spec.source_dir, preload)?,
            Domain::open(&spec.target_dir, preload)?,
            spec.augmentation,
            spec.output_size,
            batch_size,
            seed,
        )
    }

    pub fn domain(&self, index: usize) -> &Domain {
        &self.domains[index]
    }

    fn domain_batch(&self, d: usize, k: u64) -> Result<ImageBatch<f32>, DataError> {
        let domain = &self.domains[d];
        let idx = batch_indices(domain.len(), self.batch_size, self.seed, d as u64, k);
        let mut out = Array4::zeros((self.batch_size, 3, self.size, self.size));
        for (i, &j) in idx.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, &[d as u64, k, i as u64, 1]));
            let img = self.decodable(domain, j)?;
            let aug = augment(self.augmentation, &img, self.size, &mut rng, &self.forced)?;
            out.index_axis_mut(Axis(0), i).assign(&aug);
        }
        Ok(ImageBatch::new(out).expect("augmented pixels are finite"))
    }

    /// The image at `index`, or the next decodable one after it.
    fn decodable(&self, domain: &Domain, index: usize) -> Result<Array3<f32>, DataError> {
        let n = domain.len();
        let mut last = None;
        for step in 0..n {
            match domain.image((index + step) % n) {
                Ok(img) => return Ok(img),
                Err(e) => {
                    log::warn!("skipping {e}");
                    last = Some(e);
                }
            }
        }
        Err(last.unwrap_or_else(|| DataError::Empty(PathBuf::from(domain.name()))))
    }

    /// Iterates batches `0, 1, 2, …`.
    pub fn iter(&mut self) -> impl Iterator<Item = Result<(ImageBatch<f32>, ImageBatch<f32>), DataError>> + '_ {
        (0u64..).map(move |k| self.batch(k))
    }
}

impl BatchSource for PairedBatches {
    fn batch(&mut self, k: u64) -> Result<(ImageBatch<f32>, ImageBatch<f32>), DataError> {
        Ok((self.domain_batch(0, k)?, self.domain_batch(1, k)?))
    }
}

/// Opens both domains of `spec` and returns a seeded batch stream.
pub fn batch_iterator(spec: &DatasetSpec, batch_size: usize, seed: u64) -> Result<PairedBatches, DataError> {
    PairedBatches::from_spec(spec, batch_size, seed, false)
}

/// Synthetic texture domains for desk-scale runs.
pub mod toy {
    use super::*;

    fn random_color<R: Rng>(rng: &mut R) -> [f32; 3] {
        [0; 3].map(|_| rng.random_range(0.0..=255.0f32))
    }

    fn paint<F: Fn(f64, f64) -> bool>(size: usize, a: [f32; 3], b: [f32; 3], pick: F) -> Array3<f32> {
        Array3::from_shape_fn((3, size, size), |(c, y, x)| if pick(y as f64, x as f64) { a[c] } else { b[c] })
    }

    /// Two-colour stripes at a random orientation, period and phase.
    pub fn stripes<R: Rng>(size: usize, rng: &mut R) -> Array3<f32> {
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let period = rng.random_range(6.0..14.0);
        let phase = rng.random_range(0.0..period);
        let (a, b) = (random_color(rng), random_color(rng));
        let (ca, sa) = (angle.cos(), angle.sin());
        paint(size, a, b, |y, x| ((x * ca + y * sa + phase) / period).rem_euclid(1.0) < 0.5)
    }

    /// Two-colour axis-aligned checkerboard with a random cell size and offset.
    pub fn checkers<R: Rng>(size: usize, rng: &mut R) -> Array3<f32> {
        let cell = rng.random_range(4.0..12.0);
        let (oy, ox) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
        let (a, b) = (random_color(rng), random_color(rng));
        paint(size, a, b, |y, x| {
            let cy = ((y + oy) / cell).floor() as i64;
            let cx = ((x + ox) / cell).floor() as i64;
            (cy + cx).rem_euclid(2) == 0
        })
    }

    /// `count` stripe images and `count` checker images, `[0, 255]` valued.
    pub fn texture_domains(count: usize, size: usize, seed: u64) -> (Vec<Array3<f32>>, Vec<Array3<f32>>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let src = (0..count).map(|_| stripes(size, &mut rng)).collect();
        let tgt = (0..count).map(|_| checkers(size, &mut rng)).collect();
        (src, tgt)
    }

    /// Writes both domains as PNG files under `root/source` and `root/target`.
    pub fn write_texture_domains(root: &Path, count: usize, size: usize, seed: u64) -> Result<DatasetSpec, DataError> {
        let (src, tgt) = texture_domains(count, size, seed);
        let spec = DatasetSpec {
            source_dir: root.join("source"),
            target_dir: root.join("target"),
            augmentation: Augmentation::None,
            output_size: size,
        };
        for (dir, images) in [(&spec.source_dir, src), (&spec.target_dir, tgt)] {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
            for (i, img) in images.iter().enumerate() {
                write_image(&dir.join(format!("{i:05}.png")), &to_signed_range(img))?;
            }
        }
        Ok(spec)
    }
}
