//! MNIST in IDX format, preprocessing, and label encoding.
//!
//! IDX: big-endian magic `0x0000_08_nn` (unsigned bytes, `nn` dimensions),
//! `nn` big-endian `u32` sizes, then the raw payload. Files ending in `.gz`
//! are decompressed transparently.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;
pub const CLASSES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn magic(&self) -> u32 {
        0x0800 | self.dims.len() as u32
    }

    /// Number of leading-axis items and the size of each.
    pub fn items(&self) -> (usize, usize) {
        let n = self.dims.first().copied().unwrap_or(0);
        (n, self.dims[1..].iter().product())
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    if bytes.len() < 4 {
        return Err(Error::Idx(format!("file too short for a header ({} bytes)", bytes.len())));
    }
    if bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Idx(format!("bad magic prefix {:02x}{:02x}", bytes[0], bytes[1])));
    }
    if bytes[2] != 0x08 {
        return Err(Error::Idx(format!("unsupported element type 0x{:02x}", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims == 0 {
        return Err(Error::Idx("zero dimensions".into()));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(Error::Idx("truncated dimension header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let expected = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::Idx(format!("dimension product overflows: {dims:?}")))?;
    let payload = &bytes[header..];
    if payload.len() != expected {
        return Err(Error::Idx(format!(
            "payload has {} bytes, dimensions {dims:?} need {expected}",
            payload.len()
        )));
    }
    Ok(IdxTensor {
        dims,
        data: payload.to_vec(),
    })
}

pub fn encode_idx(tensor: &IdxTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * tensor.dims.len() + tensor.data.len());
    out.extend_from_slice(&tensor.magic().to_be_bytes());
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&tensor.data);
    out
}

pub fn load_idx(path: &Path) -> Result<IdxTensor> {
    let mut raw = Vec::new();
    File::open(path)?.read_to_end(&mut raw)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        raw = out;
    }
    parse_idx(&raw)
}

fn expect_magic(t: &IdxTensor, magic: u32, what: &str) -> Result<()> {
    if t.magic() != magic {
        return Err(Error::Idx(format!(
            "{what}: magic {} (expected {magic})",
            t.magic()
        )));
    }
    Ok(())
}

/// Dense row-major matrix of preprocessed samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Training-set statistics: per-feature means and one global scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub means: Vec<f64>,
    pub std: f64,
}

impl Normalization {
    pub fn fit(images: &IdxTensor) -> Result<Self> {
        let (n, d) = images.items();
        if n == 0 || d == 0 {
            return Err(Error::Empty("training images"));
        }
        let mut means = vec![0.0; d];
        for row in images.data.chunks_exact(d) {
            for (m, &p) in means.iter_mut().zip(row) {
                *m += f64::from(p);
            }
        }
        means.iter_mut().for_each(|m| *m /= n as f64);
        let mut sq = 0.0;
        for row in images.data.chunks_exact(d) {
            for (m, &p) in means.iter().zip(row) {
                sq += (f64::from(p) - m).powi(2);
            }
        }
        let std = (sq / (n * d) as f64).sqrt();
        if std == 0.0 {
            return Err(Error::Config("training images have zero variance".into()));
        }
        Ok(Self { means, std })
    }

    /// Centers, scales, and appends the constant bias input.
    pub fn apply(&self, images: &IdxTensor) -> Result<Matrix> {
        let (n, d) = images.items();
        if d != self.means.len() {
            return Err(Error::DimensionMismatch {
                what: "image features",
                expected: self.means.len(),
                actual: d,
            });
        }
        let cols = d + 1;
        let mut data = Vec::with_capacity(n * cols);
        for row in images.data.chunks_exact(d) {
            data.extend(row.iter().zip(&self.means).map(|(&p, m)| (f64::from(p) - m) / self.std));
            data.push(1.0);
        }
        Ok(Matrix { rows: n, cols, data })
    }
}

/// Normalizes both sets with training statistics only; `V_0 = features + 1`.
pub fn preprocess(train: &IdxTensor, test: &IdxTensor) -> Result<(Matrix, Matrix, Normalization)> {
    let norm = Normalization::fit(train)?;
    Ok((norm.apply(train)?, norm.apply(test)?, norm))
}

/// `y_k = 2 [k = label] - 1` over `classes` outputs.
pub fn encode_label(label: usize, classes: usize) -> Result<Vec<f64>> {
    if label >= classes {
        return Err(Error::InvalidLabel(format!("label {label} not in 0..{classes}")));
    }
    Ok((0..classes).map(|k| if k == label { 1.0 } else { -1.0 }).collect())
}

#[derive(Debug, Clone)]
pub struct MnistData {
    pub train: Matrix,
    pub train_labels: Vec<u8>,
    pub test: Matrix,
    pub test_labels: Vec<u8>,
    pub normalization: Normalization,
}

fn find_file(dir: &Path, stem: &str) -> Result<PathBuf> {
    let dotted = stem.replacen("-idx", ".idx", 1);
    for name in [stem.to_string(), format!("{stem}.gz"), dotted.clone(), format!("{dotted}.gz")] {
        let p = dir.join(&name);
        if p.is_file() {
            return Ok(p);
        }
    }
    Err(Error::MissingData(dir.join(stem)))
}

fn load_pair(dir: &Path, prefix: &str) -> Result<(IdxTensor, Vec<u8>)> {
    let images = load_idx(&find_file(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = load_idx(&find_file(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    expect_magic(&images, IMAGES_MAGIC, "images")?;
    expect_magic(&labels, LABELS_MAGIC, "labels")?;
    if images.dims[0] != labels.dims[0] {
        return Err(Error::Idx(format!(
            "{} images but {} labels",
            images.dims[0], labels.dims[0]
        )));
    }
    if let Some(bad) = labels.data.iter().find(|&&l| l as usize >= CLASSES) {
        return Err(Error::Idx(format!("label {bad} out of range")));
    }
    Ok((images, labels.data))
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte[.gz]` from `dir` and
/// preprocesses them.
pub fn load_mnist(dir: &Path) -> Result<MnistData> {
    let (train_images, train_labels) = load_pair(dir, "train")?;
    let (test_images, test_labels) = load_pair(dir, "t10k")?;
    let (train, test, normalization) = preprocess(&train_images, &test_images)?;
    Ok(MnistData {
        train,
        train_labels,
        test,
        test_labels,
        normalization,
    })
}
