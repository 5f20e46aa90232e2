//! IDX container parsing and minibatch iteration for MNIST.
//!
//! Images use magic `0x00000803` followed by big-endian `u32` count, rows
//! and columns; labels use `0x00000801` followed by the count. Gzipped
//! files (leading `1f 8b`) are inflated transparently by the loaders.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use thiserror::Error;

use crate::nn::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
pub const CLASSES: usize = 10;

#[derive(Debug, Error)]
pub enum IdxError {
    #[error("wrong magic: expected {expected:#010x}, found {found:#010x}")]
    WrongMagic { expected: u32, found: u32 },

    #[error("truncated file: header needs {declared} bytes, only {actual} present")]
    Truncated { declared: usize, actual: usize },

    #[error("size mismatch: header declares {declared} body bytes, file has {actual}")]
    SizeMismatch { declared: usize, actual: usize },

    #[error("label byte {value} at index {index} is not a digit class")]
    LabelOutOfRange { index: usize, value: u8 },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("IDX header declares an empty dimension")]
    EmptyDimension,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Reads the magic and `n_dims` big-endian `u32` dimensions, returning the
/// dimensions and the body slice.
fn split_header(bytes: &[u8], magic: u32, n_dims: usize) -> Result<(Vec<usize>, &[u8]), IdxError> {
    let header_len = 4 * (n_dims + 1);
    if bytes.len() < 4 {
        return Err(IdxError::Truncated { declared: header_len, actual: bytes.len() });
    }
    let word = |i: usize| u32::from_be_bytes(bytes[4 * i..4 * i + 4].try_into().expect("4 bytes"));
    let found = word(0);
    if found != magic {
        return Err(IdxError::WrongMagic { expected: magic, found });
    }
    if bytes.len() < header_len {
        return Err(IdxError::Truncated { declared: header_len, actual: bytes.len() });
    }
    let dims: Vec<usize> = (1..=n_dims).map(|i| word(i) as usize).collect();
    let body = &bytes[header_len..];
    let declared: usize = dims.iter().product();
    if body.len() != declared {
        return Err(IdxError::SizeMismatch { declared, actual: body.len() });
    }
    if dims.contains(&0) {
        return Err(IdxError::EmptyDimension);
    }
    Ok((dims, body))
}

/// Decodes an IDX image file into `[N, 1, H, W]` with pixels scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8]) -> Result<Tensor, IdxError> {
    let (dims, body) = split_header(bytes, IMAGE_MAGIC, 3)?;
    let values = body.iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok(Tensor::new(&[dims[0], 1, dims[1], dims[2]], values).expect("header dims match body"))
}

/// Decodes an IDX label file; every byte must be a digit class.
pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>, IdxError> {
    let (_, body) = split_header(bytes, LABEL_MAGIC, 1)?;
    if let Some((index, &value)) = body.iter().enumerate().find(|(_, &b)| usize::from(b) >= CLASSES) {
        return Err(IdxError::LabelOutOfRange { index, value });
    }
    Ok(body.to_vec())
}

/// Re-encodes `[N, 1, H, W]` pixels in `[0, 1]` as an IDX image file.
pub fn encode_idx_images(images: &Tensor) -> Vec<u8> {
    let shape = images.shape();
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    let mut out = Vec::with_capacity(16 + images.len());
    for word in [IMAGE_MAGIC, n as u32, h as u32, w as u32] {
        out.extend_from_slice(&word.to_be_bytes());
    }
    out.extend(images.values().iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
    out
}

pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Reads a file fully, inflating it when it starts with the gzip magic.
pub fn read_maybe_gz(path: &Path) -> Result<Vec<u8>, IdxError> {
    let io = |source| IdxError::Io { path: path.to_path_buf(), source };
    let raw = fs::read(path).map_err(io)?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(io)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Which half of the canonical distribution to load.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn stem(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

/// Locates `<stem>-{images-idx3,labels-idx1}-ubyte[.gz]` inside `dir`.
/// Falls back to the uncompressed name when neither exists, so errors name
/// the expected file.
pub fn split_paths(dir: &Path, split: Split) -> (PathBuf, PathBuf) {
    let find = |kind: &str| {
        let plain = dir.join(format!("{}-{kind}-ubyte", split.stem()));
        let gz = PathBuf::from(format!("{}.gz", plain.display()));
        if !plain.exists() && gz.exists() {
            gz
        } else {
            plain
        }
    };
    (find("images-idx3"), find("labels-idx1"))
}

/// Images and labels decoded from a pair of IDX files.
#[derive(Clone, Debug)]
pub struct IdxDataset {
    pub images: Tensor,
    pub labels: Vec<u8>,
}

impl IdxDataset {
    pub fn new(images: Tensor, labels: Vec<u8>) -> Result<Self, IdxError> {
        let n = images.shape()[0];
        if n != labels.len() {
            return Err(IdxError::CountMismatch { images: n, labels: labels.len() });
        }
        Ok(Self { images, labels })
    }

    pub fn load(images: &Path, labels: &Path) -> Result<Self, IdxError> {
        let labels = parse_idx_labels(&read_maybe_gz(labels)?)?;
        let images = parse_idx_images(&read_maybe_gz(images)?)?;
        Self::new(images, labels)
    }

    /// Loads the train or test split from a directory of canonical file names.
    pub fn load_split(dir: &Path, split: Split) -> Result<Self, IdxError> {
        let (images, labels) = split_paths(dir, split);
        Self::load(&images, &labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The first `n` samples (all of them if `n` exceeds the size).
    pub fn head(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.select(&idx)
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            images: self.images.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Shuffled full minibatches for one epoch; the trailing partial batch
    /// is dropped. The order depends only on `(seed, epoch)`.
    pub fn batches(&self, batch_size: usize, seed: u64, epoch: u64) -> Batches<'_> {
        assert!(batch_size >= 1 && batch_size <= self.len(), "batch size must be in 1..=N");
        Batches { data: self, order: epoch_order(self.len(), seed, epoch), batch_size, next: 0 }
    }
}

/// Permutation of `0..n` used for epoch `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ epoch.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub images: Tensor,
    pub labels: Vec<usize>,
}

pub struct Batches<'a> {
    data: &'a IdxDataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        let end = self.next + self.batch_size;
        if end > self.order.len() {
            return None;
        }
        let indices = self.order[self.next..end].to_vec();
        self.next = end;
        Some(Batch {
            images: self.data.images.select_rows(&indices),
            labels: indices.iter().map(|&i| usize::from(self.data.labels[i])).collect(),
            indices,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn header(words: &[u32]) -> Vec<u8> {
        words.iter().flat_map(|w| w.to_be_bytes()).collect()
    }

    #[test]
    fn parses_tiny_image_file() {
        let mut bytes = header(&[IMAGE_MAGIC, 1, 2, 2]);
        bytes.extend([0, 255, 0, 255]);
        let t = parse_idx_images(&bytes).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2, 2]);
        assert_eq!(t.values(), &[0.0, 1.0, 0.0, 1.0]);
        assert_eq!(encode_idx_images(&t), bytes);
    }

    #[test]
    fn parses_labels() {
        let mut bytes = header(&[LABEL_MAGIC, 3]);
        bytes.extend([5, 0, 4]);
        assert_eq!(parse_idx_labels(&bytes).unwrap(), vec![5, 0, 4]);
        assert_eq!(encode_idx_labels(&[5, 0, 4]), bytes);

        let mut bad = header(&[LABEL_MAGIC, 1]);
        bad.push(12);
        assert!(matches!(parse_idx_labels(&bad), Err(IdxError::LabelOutOfRange { index: 0, value: 12 })));
    }

    #[test]
    fn malformed_headers_are_distinct_errors() {
        let mut labels_as_images = header(&[LABEL_MAGIC, 1, 2, 2]);
        labels_as_images.extend([0; 4]);
        assert!(matches!(parse_idx_images(&labels_as_images), Err(IdxError::WrongMagic { .. })));

        let short_header = header(&[IMAGE_MAGIC, 1]);
        assert!(matches!(parse_idx_images(&short_header), Err(IdxError::Truncated { .. })));

        let mut short_body = header(&[IMAGE_MAGIC, 1, 2, 2]);
        short_body.extend([0; 3]);
        assert!(matches!(parse_idx_images(&short_body), Err(IdxError::SizeMismatch { declared: 4, actual: 3 })));

        let mut long_body = header(&[IMAGE_MAGIC, 1, 2, 2]);
        long_body.extend([0; 5]);
        assert!(matches!(parse_idx_images(&long_body), Err(IdxError::SizeMismatch { declared: 4, actual: 5 })));

        assert!(matches!(parse_idx_images(&[0, 0]), Err(IdxError::Truncated { .. })));
    }

    #[test]
    fn gzip_input_is_detected() {
        use flate2::{write::GzEncoder, Compression};
        use std::io::Write;
        let mut raw = header(&[LABEL_MAGIC, 2]);
        raw.extend([1, 9]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.gz");
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&raw).unwrap();
        fs::write(&path, enc.finish().unwrap()).unwrap();
        assert_eq!(parse_idx_labels(&read_maybe_gz(&path).unwrap()).unwrap(), vec![1, 9]);
    }

    fn toy(n: usize) -> IdxDataset {
        let images = Tensor::new(&[n, 1, 1, 1], (0..n).map(|i| i as f64 / n as f64).collect()).unwrap();
        IdxDataset::new(images, (0..n).map(|i| (i % 10) as u8).collect()).unwrap()
    }

    #[test]
    fn batches_drop_partial_tail_and_are_reproducible() {
        let data = toy(10);
        let batches: Vec<Batch> = data.batches(3, 1, 0).collect();
        assert_eq!(batches.len(), 3);
        assert!(batches.iter().all(|b| b.labels.len() == 3 && b.images.shape()[0] == 3));
        let again: Vec<Vec<usize>> = data.batches(3, 1, 0).map(|b| b.indices).collect();
        assert_eq!(batches.iter().map(|b| b.indices.clone()).collect::<Vec<_>>(), again);
        let other: Vec<Vec<usize>> = data.batches(3, 1, 1).map(|b| b.indices).collect();
        assert_ne!(again, other);
    }

    #[test]
    fn each_epoch_covers_all_but_the_tail() {
        let data = toy(50);
        for epoch in 0..5 {
            let seen: HashSet<usize> = data.batches(7, 3, epoch).flat_map(|b| b.indices).collect();
            assert!(seen.len() > 50 - 7);
            assert_eq!(seen.len(), 49);
        }
    }

    #[test]
    fn count_mismatch_rejected() {
        let images = Tensor::zeros(&[2, 1, 1, 1]);
        assert!(matches!(IdxDataset::new(images, vec![1]), Err(IdxError::CountMismatch { .. })));
    }
}
