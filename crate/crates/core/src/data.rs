//! Datasets: MNIST (IDX), CIFAR-10 (binary batches) and synthetic blobs.
//!
//! Pixels are scaled to `[0, 1]` by dividing by 255 and nothing else. The
//! validation split is the tail tenth of the official training order (6000 of
//! 60000 for MNIST, the last 5000 records of batch 5 for CIFAR-10).

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const MNIST_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const MNIST_LABEL_MAGIC: u32 = 0x0000_0801;
pub const CIFAR_RECORDS_PER_BATCH: usize = 10_000;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Environment variable naming the dataset root directory.
pub const DATA_DIR_ENV: &str = "DROPNET_DATA_DIR";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Images in `[0, 1]` with integer labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    sample_shape: Vec<usize>,
    pixels: Vec<f32>,
    labels: Vec<usize>,
    classes: usize,
    split: Split,
}

impl Dataset {
    /// `images` is `[N × sample_shape...]`.
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let sample_shape = images.shape()[1..].to_vec();
        Self::from_parts(sample_shape, images.into_data(), labels, classes, split)
    }

    pub fn from_parts(
        sample_shape: Vec<usize>,
        pixels: Vec<f32>,
        labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if sample_shape.is_empty() || per == 0 || pixels.len() != per * labels.len() {
            return Err(Error::shape(
                "dataset",
                format!(
                    "{} values for {} samples of shape {sample_shape:?}",
                    pixels.len(),
                    labels.len()
                ),
            ));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::shape("dataset", "pixel values must lie in [0, 1]"));
        }
        Ok(Dataset {
            sample_shape,
            pixels,
            labels,
            classes,
            split,
        })
    }

    pub fn empty(sample_shape: Vec<usize>, classes: usize, split: Split) -> Self {
        Dataset {
            sample_shape,
            pixels: Vec::new(),
            labels: Vec::new(),
            classes,
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    fn batch_shape(&self, n: usize) -> Vec<usize> {
        let mut shape = Vec::with_capacity(self.sample_shape.len() + 1);
        shape.push(n);
        shape.extend_from_slice(&self.sample_shape);
        shape
    }

    /// Samples `start..end` as a batch. Panics on an empty range.
    pub fn range(&self, start: usize, end: usize) -> (Tensor<f32>, Vec<usize>) {
        let per = self.sample_len();
        let images = Tensor::new(
            self.batch_shape(end - start),
            self.pixels[start * per..end * per].to_vec(),
        )
        .expect("non-empty range");
        (images, self.labels[start..end].to_vec())
    }

    /// Samples at `indices`, in that order.
    pub fn gather(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let per = self.sample_len();
        let mut pixels = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            pixels.extend_from_slice(&self.pixels[i * per..(i + 1) * per]);
        }
        let images = Tensor::new(self.batch_shape(indices.len()), pixels).expect("non-empty batch");
        (images, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// Samples `start..end` as a new dataset with the given split tag.
    pub fn slice(&self, start: usize, end: usize, split: Split) -> Dataset {
        let per = self.sample_len();
        Dataset {
            sample_shape: self.sample_shape.clone(),
            pixels: self.pixels[start * per..end * per].to_vec(),
            labels: self.labels[start..end].to_vec(),
            classes: self.classes,
            split,
        }
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        if indices.is_empty() {
            return Dataset::empty(self.sample_shape.clone(), self.classes, self.split);
        }
        let (images, labels) = self.gather(indices);
        Dataset {
            sample_shape: self.sample_shape.clone(),
            pixels: images.into_data(),
            labels,
            classes: self.classes,
            split: self.split,
        }
    }
}

/// Train, validation and test sets.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl Splits {
    /// Carves the tail tenth of `pool` off as validation, after truncating the
    /// pool to `limit` samples.
    pub fn from_pool(pool: &Dataset, limit: Option<usize>, test: Dataset) -> Result<Self> {
        let n = limit.map_or(pool.len(), |l| l.min(pool.len()));
        let val = n / 10;
        if n - val == 0 || val == 0 {
            return Err(Error::InvalidConfig(format!(
                "training pool of {n} samples is too small to split"
            )));
        }
        Ok(Splits {
            train: pool.slice(0, n - val, Split::Train),
            val: pool.slice(n - val, n, Split::Val),
            test,
        })
    }
}

/// Reads a file, transparently decompressing `.gz`. `name` may be given
/// without the `.gz` suffix; the compressed variant is tried second.
fn read_dataset_file(dir: &Path, name: &str) -> Result<(PathBuf, Vec<u8>)> {
    let plain = dir.join(name);
    let gz = dir.join(format!("{name}.gz"));
    let path = if plain.is_file() {
        plain
    } else if gz.is_file() {
        gz
    } else {
        return Err(Error::DatasetMissing(plain));
    };
    let mut bytes = Vec::new();
    let file = File::open(&path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        GzDecoder::new(file)
            .read_to_end(&mut bytes)
            .map_err(|e| Error::format(&path, format!("gzip: {e}")))?;
    } else {
        let mut file = file;
        file.read_to_end(&mut bytes)?;
    }
    Ok((path, bytes))
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::format(path, "truncated header"))
}

/// Parses an IDX3 image file into `[N, 1, rows, cols]` pixels in `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_IMAGE_MAGIC {
        return Err(Error::format(
            path,
            format!("bad image magic {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let rows = be_u32(bytes, 8, path)? as usize;
    let cols = be_u32(bytes, 12, path)? as usize;
    let body = &bytes[16..];
    if body.len() != n * rows * cols {
        return Err(Error::format(
            path,
            format!(
                "expected {} pixel bytes for {n} images, found {}",
                n * rows * cols,
                body.len()
            ),
        ));
    }
    Ok((
        vec![n, 1, rows, cols],
        body.iter().map(|&b| f32::from(b) / 255.0).collect(),
    ))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = be_u32(bytes, 0, path)?;
    if magic != MNIST_LABEL_MAGIC {
        return Err(Error::format(
            path,
            format!("bad label magic {magic:#010x}"),
        ));
    }
    let n = be_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(Error::format(
            path,
            format!("expected {n} labels, found {}", body.len()),
        ));
    }
    if let Some(&l) = body.iter().find(|&&l| l > 9) {
        return Err(Error::format(path, format!("label {l} > 9")));
    }
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

fn load_idx_pair(dir: &Path, prefix: &str, split: Split) -> Result<Dataset> {
    let (ipath, ibytes) = read_dataset_file(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let (lpath, lbytes) = read_dataset_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let (shape, pixels) = parse_idx_images(&ibytes, &ipath)?;
    let labels = parse_idx_labels(&lbytes, &lpath)?;
    if labels.len() != shape[0] {
        return Err(Error::format(
            lpath,
            format!(
                "{} labels for {} images in {}",
                labels.len(),
                shape[0],
                ipath.display()
            ),
        ));
    }
    Dataset::from_parts(shape[1..].to_vec(), pixels, labels, 10, split)
}

/// MNIST from the four IDX files (optionally `.gz`): 54000 / 6000 / 10000.
pub fn load_mnist(dir: &Path) -> Result<Splits> {
    load_mnist_subset(dir, None)
}

/// MNIST restricted to the first `limit` samples of the training file; the
/// tail tenth of those is the validation set.
pub fn load_mnist_subset(dir: &Path, limit: Option<usize>) -> Result<Splits> {
    let pool = load_idx_pair(dir, "train", Split::Train)?;
    let test = load_idx_pair(dir, "t10k", Split::Test)?;
    Splits::from_pool(&pool, limit, test)
}

/// Parses one CIFAR-10 binary batch of `records` 3073-byte records into
/// `[N, 3, 32, 32]`.
pub fn parse_cifar_batch(
    bytes: &[u8],
    path: &Path,
    records: usize,
) -> Result<(Vec<f32>, Vec<usize>)> {
    if bytes.len() != records * CIFAR_RECORD {
        return Err(Error::format(
            path,
            format!(
                "expected {records} records ({} bytes), found {} bytes",
                records * CIFAR_RECORD,
                bytes.len()
            ),
        ));
    }
    let mut pixels = Vec::with_capacity(records * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(records);
    for rec in bytes.chunks_exact(CIFAR_RECORD) {
        if rec[0] > 9 {
            return Err(Error::format(path, format!("label {} > 9", rec[0])));
        }
        labels.push(usize::from(rec[0]));
        pixels.extend(rec[1..].iter().map(|&b| f32::from(b) / 255.0));
    }
    Ok((pixels, labels))
}

fn load_cifar_files(dir: &Path, names: &[String], records: usize, split: Split) -> Result<Dataset> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for name in names {
        let (path, bytes) = read_dataset_file(dir, name)?;
        let (p, l) = parse_cifar_batch(&bytes, &path, records)?;
        pixels.extend(p);
        labels.extend(l);
    }
    Dataset::from_parts(vec![3, 32, 32], pixels, labels, 10, split)
}

/// CIFAR-10 binary version: 45000 / 5000 / 10000.
pub fn load_cifar10(dir: &Path) -> Result<Splits> {
    load_cifar10_subset(dir, None)
}

pub fn load_cifar10_subset(dir: &Path, limit: Option<usize>) -> Result<Splits> {
    load_cifar10_with(dir, limit, CIFAR_RECORDS_PER_BATCH)
}

pub(crate) fn load_cifar10_with(
    dir: &Path,
    limit: Option<usize>,
    records: usize,
) -> Result<Splits> {
    let train: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    let pool = load_cifar_files(dir, &train, records, Split::Train)?;
    let test = load_cifar_files(dir, &["test_batch.bin".to_string()], records, Split::Test)?;
    Splits::from_pool(&pool, limit, test)
}

/// Gaussian clusters around random centers, rescaled into `[0, 1]` and split
/// 80/10/10.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlobConfig {
    pub classes: usize,
    pub dims: usize,
    pub per_class: usize,
    /// Standard deviation of the per-coordinate noise, in the same units as
    /// the centers (which lie in `[-1, 1]`).
    pub noise: f64,
    pub seed: u64,
    /// Shape samples as a `1 × √dims × √dims` image.
    pub image: bool,
}

impl Default for BlobConfig {
    fn default() -> Self {
        BlobConfig {
            classes: 4,
            dims: 16,
            per_class: 250,
            noise: 0.5,
            seed: 0,
            image: false,
        }
    }
}

pub fn synthetic_blobs(cfg: &BlobConfig) -> Result<Splits> {
    if cfg.classes < 2 {
        return Err(Error::InvalidConfig(
            "synthetic blobs need at least 2 classes".into(),
        ));
    }
    if cfg.dims == 0 || cfg.per_class == 0 || !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::InvalidConfig(
            "synthetic blobs need positive dims, samples and finite noise".into(),
        ));
    }
    let sample_shape = if cfg.image {
        let side = (cfg.dims as f64).sqrt().round() as usize;
        if side * side != cfg.dims {
            return Err(Error::InvalidConfig(format!(
                "{} dims is not a perfect square",
                cfg.dims
            )));
        }
        vec![1, side, side]
    } else {
        vec![cfg.dims]
    };
    let root = Rng::new(cfg.seed);
    let mut centers_rng = root.fork("centers");
    let centers: Vec<f64> = (0..cfg.classes * cfg.dims)
        .map(|_| centers_rng.uniform_in(-1.0, 1.0))
        .collect();
    let mut noise_rng = root.fork("noise");
    let n = cfg.classes * cfg.per_class;
    let mut raw = Vec::with_capacity(n * cfg.dims);
    let mut labels = Vec::with_capacity(n);
    for class in 0..cfg.classes {
        let center = &centers[class * cfg.dims..(class + 1) * cfg.dims];
        for _ in 0..cfg.per_class {
            for &c in center {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                raw.push(c + cfg.noise * z);
            }
            labels.push(class);
        }
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    let pixels: Vec<f32> = raw
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span) as f32
            } else {
                0.5
            }
        })
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    let all = Dataset::from_parts(sample_shape, pixels, labels, cfg.classes, Split::Train)?;
    let order = root.fork("order").permutation(n);
    let shuffled = all.subset(&order);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    if n_train == 0 || n_val == 0 || n - n_train - n_val == 0 {
        return Err(Error::InvalidConfig(format!(
            "{n} synthetic samples are too few for an 80/10/10 split"
        )));
    }
    Ok(Splits {
        train: shuffled.slice(0, n_train, Split::Train),
        val: shuffled.slice(n_train, n_train + n_val, Split::Val),
        test: shuffled.slice(n_train + n_val, n, Split::Test),
    })
}

/// One epoch of shuffled mini-batches; the final partial batch is kept.
pub struct Batches<'a> {
    data: &'a Dataset,
    order: Vec<usize>,
    size: usize,
    pos: usize,
}

pub fn batches<'a>(data: &'a Dataset, batch_size: usize, rng: &mut Rng) -> Result<Batches<'a>> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    Ok(Batches {
        data,
        order: rng.permutation(data.len()),
        size: batch_size,
        pos: 0,
    })
}

impl Iterator for Batches<'_> {
    type Item = (Tensor<f32>, Vec<usize>);

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.size).min(self.order.len());
        let batch = self.data.gather(&self.order[self.pos..end]);
        self.pos = end;
        Some(batch)
    }
}

/// Hex SHA-256 of a file.
pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

/// Checks every `<hex>  <file>` line of a `SHA256SUMS` manifest in `dir`.
/// Returns the mismatching or missing file names.
pub fn verify_checksums(dir: &Path, manifest: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(manifest)?;
    let mut bad = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (hex, name) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::format(manifest, format!("malformed line `{line}`")))?;
        let name = name.trim_start().trim_start_matches('*');
        let path = dir.join(name);
        if !path.is_file() || sha256_file(&path)? != hex.to_ascii_lowercase() {
            bad.push(name.to_string());
        }
    }
    Ok(bad)
}
