//! Datasets: IDX and CIFAR-10 binary readers, synthetic blobs, batching.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NUM_CLASSES;
use crate::numerics::{Rng, Stream, Tensor};

/// Environment variable naming the dataset root when none is configured.
pub const DATA_DIR_ENV: &str = "ROBUSTPRUNE_DATA_DIR";

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
    Synthetic,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "synthetic" => Ok(Split::Synthetic),
            _ => Err(Error::invalid(format!("unknown split `{s}`"))),
        }
    }
}

/// Labelled images with pixel values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    split: Split,
}

impl Dataset {
    /// `images` must be `[n, c, h, w]` with values in `[0, 1]`, and `labels`
    /// must hold `n` entries below ten.
    pub fn new(images: Tensor, labels: Vec<usize>, split: Split) -> Result<Self> {
        if images.shape().len() != 4 {
            return Err(Error::invalid(format!(
                "dataset images must be [n, c, h, w], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= NUM_CLASSES) {
            return Err(Error::invalid(format!(
                "label {l} outside [0, {NUM_CLASSES})"
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        Ok(Self {
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// `[c, h, w]` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    fn image_len(&self) -> usize {
        self.image_shape().iter().product()
    }

    /// Copies the selected samples into a batch tensor and label list.
    pub fn gather(&self, indices: &[usize]) -> (Tensor, Vec<usize>) {
        let d = self.image_len();
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            data.extend_from_slice(&self.images.data()[i * d..(i + 1) * d]);
        }
        let [c, h, w] = self.image_shape();
        let x = Tensor::new(vec![indices.len(), c, h, w], data)
            .expect("gathered batch has consistent length");
        (x, indices.iter().map(|&i| self.labels[i]).collect())
    }

    /// The first `n` samples (all of them if `n` exceeds the length).
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn select(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.gather(indices);
        Dataset {
            images,
            labels,
            split: self.split,
        }
    }

    /// Number of samples per class.
    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| {
            Error::parse(
                bytes.len() as u64,
                format!("file ends inside the {what} field"),
            )
        })
}

/// Parses an IDX image file (`u8` pixels, three dimensions) into
/// `[n, 1, rows, cols]` values scaled by 1/255.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor> {
    let magic = read_u32_be(bytes, 0, "magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::parse(
            0,
            format!("expected image magic 0x00000803, found {magic:#010x}"),
        ));
    }
    let n = read_u32_be(bytes, 4, "image count")? as usize;
    let rows = read_u32_be(bytes, 8, "row count")? as usize;
    let cols = read_u32_be(bytes, 12, "column count")? as usize;
    if rows == 0 || cols == 0 || n == 0 {
        return Err(Error::parse(4, "image dimensions must be positive"));
    }
    let payload = &bytes[16..];
    let expected = n * rows * cols;
    if payload.len() < expected {
        return Err(Error::parse(
            bytes.len() as u64,
            format!(
                "truncated pixel payload: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(Error::parse(
            (16 + expected) as u64,
            "trailing bytes after pixel payload",
        ));
    }
    let data = payload.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![n, 1, rows, cols], data)
}

/// Parses an IDX label file (`u8` labels, one dimension).
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let magic = read_u32_be(bytes, 0, "magic")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::parse(
            0,
            format!("expected label magic 0x00000801, found {magic:#010x}"),
        ));
    }
    let n = read_u32_be(bytes, 4, "label count")? as usize;
    let payload = &bytes[8..];
    if payload.len() < n {
        return Err(Error::parse(
            bytes.len() as u64,
            format!(
                "truncated label payload: expected {n} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > n {
        return Err(Error::parse(
            (8 + n) as u64,
            "trailing bytes after label payload",
        ));
    }
    payload
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            if (b as usize) < NUM_CLASSES {
                Ok(b as usize)
            } else {
                Err(Error::parse(
                    (8 + i) as u64,
                    format!("label {b} outside [0, 10)"),
                ))
            }
        })
        .collect()
}

/// Reads an IDX image file and its matching label file.
pub fn load_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset> {
    let images = parse_idx_images(&fs::read(images_path)?)?;
    let labels = parse_idx_labels(&fs::read(labels_path)?)?;
    if images.shape()[0] != labels.len() {
        return Err(Error::parse(
            4,
            format!(
                "image file holds {} images, label file {} labels",
                images.shape()[0],
                labels.len()
            ),
        ));
    }
    Dataset::new(images, labels, split)
}

/// Parses concatenated CIFAR-10 binary records: one label byte, then 3072
/// pixel bytes in channel-major 32x32 order.
pub fn parse_cifar10(bytes: &[u8]) -> Result<(Vec<f64>, Vec<usize>)> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let whole = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(Error::parse(
            whole as u64,
            format!(
                "length {} is not a positive multiple of {CIFAR_RECORD}",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(n);
    for (r, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = rec[0] as usize;
        if label >= NUM_CLASSES {
            return Err(Error::parse(
                (r * CIFAR_RECORD) as u64,
                format!("label {label} outside [0, 10)"),
            ));
        }
        labels.push(label);
        pixels.extend(rec[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((pixels, labels))
}

/// Reads and concatenates CIFAR-10 binary batch files.
pub fn load_cifar10_bin<P: AsRef<Path>>(paths: &[P], split: Split) -> Result<Dataset> {
    if paths.is_empty() {
        return Err(Error::invalid("no CIFAR-10 batch files given"));
    }
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let (p, l) = parse_cifar10(&fs::read(path)?).map_err(|e| match e {
            Error::Parse { offset, message } => {
                Error::parse(offset, format!("{}: {message}", path.as_ref().display()))
            }
            other => other,
        })?;
        pixels.extend(p);
        labels.extend(l);
    }
    let images = Tensor::new(vec![labels.len(), 3, 32, 32], pixels)?;
    Dataset::new(images, labels, split)
}

/// Dataset root: the explicit path if given, else `$ROBUSTPRUNE_DATA_DIR`,
/// else `./data`.
pub fn resolve_data_dir(explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => std::env::var_os(DATA_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("data")),
    }
}

/// MNIST from `<root>/mnist/` (or `<root>/` itself) using the standard
/// uncompressed file names.
pub fn load_mnist(root: &Path, split: Split) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
        Split::Synthetic => return Err(Error::invalid("MNIST has no synthetic split")),
    };
    let images = format!("{prefix}-images-idx3-ubyte");
    let labels = format!("{prefix}-labels-idx1-ubyte");
    let dir = [root.join("mnist"), root.to_path_buf()]
        .into_iter()
        .find(|d| d.join(&images).is_file())
        .ok_or_else(|| Error::invalid(format!("`{images}` not found under {}", root.display())))?;
    load_idx(dir.join(&images), dir.join(&labels), split)
}

/// CIFAR-10 from `<root>/cifar-10-batches-bin/` (or `<root>/cifar10/`, or `<root>/`).
pub fn load_cifar10(root: &Path, split: Split) -> Result<Dataset> {
    let files: Vec<String> = match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".into()],
        Split::Synthetic => return Err(Error::invalid("CIFAR-10 has no synthetic split")),
    };
    let dir = [
        root.join("cifar-10-batches-bin"),
        root.join("cifar10"),
        root.to_path_buf(),
    ]
    .into_iter()
    .find(|d| d.join(&files[0]).is_file())
    .ok_or_else(|| Error::invalid(format!("`{}` not found under {}", files[0], root.display())))?;
    let paths: Vec<PathBuf> = files.iter().map(|f| dir.join(f)).collect();
    load_cifar10_bin(&paths, split)
}

/// Class-conditional Gaussian blobs clamped to `[0, 1]`.
///
/// Every pixel of a class-`k` image is `0.5 + separation * m_k + 0.1 * noise`,
/// where `m_k` is a fixed random direction with unit-variance entries.
/// Labels cycle through the classes, so every class has `n / classes` or
/// one more samples.
pub fn synthetic_blobs(
    classes: usize,
    n: usize,
    shape: [usize; 3],
    separation: f64,
    rng: &Rng,
) -> Result<Dataset> {
    if classes == 0 || classes > NUM_CLASSES {
        return Err(Error::invalid(format!(
            "classes must lie in [1, {NUM_CLASSES}]"
        )));
    }
    if n < classes {
        return Err(Error::invalid(format!(
            "need at least {classes} samples, got {n}"
        )));
    }
    let d: usize = shape.iter().product();
    let mut centre_rng = rng.substream(Stream::Data, 0);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..d).map(|_| centre_rng.normal(0.0, 1.0)).collect())
        .collect();
    let mut noise = rng.substream(Stream::Data, 1);
    let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    let mut data = Vec::with_capacity(n * d);
    for &l in &labels {
        for &m in &centres[l] {
            let v = 0.5 + separation * m + 0.1 * noise.normal(0.0, 1.0);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    let [c, h, w] = shape;
    Dataset::new(
        Tensor::new(vec![n, c, h, w], data)?,
        labels,
        Split::Synthetic,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchPlan {
    pub batch_size: usize,
    pub shuffle_seed: u64,
    #[serde(default)]
    pub drop_last: bool,
}

impl Default for BatchPlan {
    fn default() -> Self {
        Self {
            batch_size: 64,
            shuffle_seed: 0,
            drop_last: false,
        }
    }
}

impl BatchPlan {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be at least 1"));
        }
        Ok(())
    }

    /// Sample indices of every batch in `epoch`, from a permutation seeded
    /// by `(shuffle_seed, epoch)`.
    pub fn index_batches(&self, n: usize, epoch: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        Rng::new(self.shuffle_seed)
            .substream(Stream::Shuffle, epoch as u64)
            .shuffle(&mut order);
        let size = self.batch_size.max(1);
        order
            .chunks(size)
            .filter(|c| !self.drop_last || c.len() == size || n < size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

/// Materialized batches of one epoch.
pub fn batches(ds: &Dataset, plan: &BatchPlan, epoch: usize) -> Result<Vec<(Tensor, Vec<usize>)>> {
    plan.validate()?;
    Ok(plan
        .index_batches(ds.len(), epoch)
        .iter()
        .map(|idx| ds.gather(idx))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx_images(n: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = IDX_IMAGES_MAGIC.to_be_bytes().to_vec();
        for v in [n, rows, cols] {
            b.extend(v.to_be_bytes());
        }
        b.extend(pixels);
        b
    }

    #[test]
    fn idx_pixel_scaling() {
        let t = parse_idx_images(&idx_images(1, 1, 1, &[255])).unwrap();
        assert_eq!(t.shape(), &[1, 1, 1, 1]);
        assert_eq!(t.data(), &[1.0]);
    }

    #[test]
    fn idx_wrong_magic() {
        let mut b = idx_images(1, 1, 1, &[0]);
        b[3] = 0x02;
        match parse_idx_images(&b) {
            Err(Error::Parse { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn idx_truncated() {
        let b = idx_images(2, 2, 2, &[0; 7]);
        match parse_idx_images(&b) {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 23),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn cifar_record() {
        let mut rec = vec![7u8];
        rec.extend(vec![0u8; 3072]);
        let (p, l) = parse_cifar10(&rec).unwrap();
        assert_eq!(l, vec![7]);
        assert!(p.iter().all(|&v| v == 0.0));
        assert!(parse_cifar10(&rec[..3072]).is_err());
    }

    #[test]
    fn small_dataset_single_batch() {
        let ds = synthetic_blobs(10, 20, [1, 2, 2], 1.0, &Rng::new(0)).unwrap();
        let plan = BatchPlan {
            batch_size: 64,
            ..BatchPlan::default()
        };
        let b = batches(&ds, &plan, 0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].1.len(), 20);
    }

    #[test]
    fn drop_last_drops_partial() {
        let plan = BatchPlan {
            batch_size: 3,
            shuffle_seed: 1,
            drop_last: true,
        };
        let b = plan.index_batches(10, 0);
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|c| c.len() == 3));
    }
}
