//! Dataset construction and ingestion: the synthetic 2D two-class set, the
//! CIFAR-10 binary batch format, IDX image/label files, target picking, and a
//! paired-split container format used by the CLI.

use std::fs;
use std::path::Path;

use crate::bytes::{read_f64_le, read_u32_be, read_u32_le, take};
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 4] = b"ADS1";
pub const CIFAR_RECORD_LEN: usize = 3073;
pub const IDX_IMAGE_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABEL_MAGIC: u32 = 0x0000_0801;

const SYNTH_LO: f64 = 0.0;
const SYNTH_HI: f64 = 10.0;
const SYNTH_BOUNDARY: f64 = 10.0;

/// Examples with integer labels and the feature box they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub examples: Vec<Tensor>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub feature_lo: f64,
    pub feature_hi: f64,
}

impl LabeledDataset {
    /// Validates the container invariants: nonempty, aligned lengths, uniform
    /// dimension, labels in range, features inside the box.
    pub fn new(
        examples: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
        feature_lo: f64,
        feature_hi: f64,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset("no examples".into()));
        }
        if examples.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} examples but {} labels",
                examples.len(),
                labels.len()
            )));
        }
        let dim = examples[0].len();
        for (i, ex) in examples.iter().enumerate() {
            if ex.len() != dim {
                return Err(Error::InvalidArgument(format!(
                    "example {i} has dimension {} but example 0 has {dim}",
                    ex.len()
                )));
            }
            if ex.data().iter().any(|v| *v < feature_lo || *v > feature_hi) {
                return Err(Error::InvalidArgument(format!(
                    "example {i} has features outside [{feature_lo}, {feature_hi}]"
                )));
            }
        }
        for (i, &label) in labels.iter().enumerate() {
            if label >= num_classes {
                return Err(Error::InvalidArgument(format!(
                    "label {label} of example {i} out of range for {num_classes} classes"
                )));
            }
        }
        Ok(Self {
            examples,
            labels,
            num_classes,
            feature_lo,
            feature_hi,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples[0].len()
    }

    /// First `n` examples (all of them when `n` exceeds the length).
    pub fn truncated(&self, n: usize) -> LabeledDataset {
        let n = n.min(self.len());
        LabeledDataset {
            examples: self.examples[..n].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }
}

/// Class rule of the synthetic problem: 0 below the line x₁ + x₂ = 10, 1 on
/// or above it.
pub fn boundary_label(x1: f64, x2: f64) -> usize {
    if x1 + x2 < SYNTH_BOUNDARY {
        0
    } else {
        1
    }
}

/// Two-class synthetic dataset on [0,10]²: uniform draws labeled by the line
/// x₁ + x₂ = 10, with points closer than `margin` to the line rejected and
/// exactly `n_train_per_class` / `n_test_per_class` points kept per class and
/// split. Deterministic per seed.
pub fn gen_synthetic_2d(
    seed: u64,
    n_train_per_class: usize,
    n_test_per_class: usize,
    margin: f64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if n_train_per_class == 0 || n_test_per_class == 0 {
        return Err(Error::InvalidArgument("per-class counts must be positive".into()));
    }
    if !(0.0..5.0).contains(&margin) {
        return Err(Error::InvalidArgument(format!(
            "margin must be in [0, 5), got {margin}"
        )));
    }
    let mut rng = SeededRng::new(seed);
    let mut sample_split = |per_class: usize| -> Result<LabeledDataset> {
        let total = 2 * per_class;
        let mut quota = [per_class, per_class];
        let mut examples = Vec::with_capacity(total);
        let mut labels = Vec::with_capacity(total);
        let max_attempts = total.saturating_mul(10_000);
        let mut attempts = 0usize;
        while examples.len() < total {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::SamplingFailed(format!(
                    "gave up after {max_attempts} draws; margin {margin} leaves too little area"
                )));
            }
            let x1 = rng.uniform(SYNTH_LO, SYNTH_HI);
            let x2 = rng.uniform(SYNTH_LO, SYNTH_HI);
            if (x1 + x2 - SYNTH_BOUNDARY).abs() < margin {
                continue;
            }
            let label = boundary_label(x1, x2);
            if quota[label] == 0 {
                continue;
            }
            quota[label] -= 1;
            examples.push(Tensor::from_vec(vec![x1, x2]));
            labels.push(label);
        }
        LabeledDataset::new(examples, labels, 2, SYNTH_LO, SYNTH_HI)
    };
    let train = sample_split(n_train_per_class)?;
    let test = sample_split(n_test_per_class)?;
    Ok((train, test))
}

/// Parse a CIFAR-10 binary batch: consecutive 3073-byte records of one label
/// byte followed by 3072 pixel bytes, scaled into [0,1].
pub fn parse_cifar10_bin(bytes: &[u8]) -> Result<LabeledDataset> {
    if bytes.is_empty() {
        return Err(Error::EmptyDataset("CIFAR batch file is empty".into()));
    }
    if !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::parse(
            bytes.len() - bytes.len() % CIFAR_RECORD_LEN,
            format!(
                "file length {} is not a multiple of the {CIFAR_RECORD_LEN}-byte record",
                bytes.len()
            ),
        ));
    }
    let n = bytes.len() / CIFAR_RECORD_LEN;
    let mut examples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for record in 0..n {
        let start = record * CIFAR_RECORD_LEN;
        let label = bytes[start];
        if label > 9 {
            return Err(Error::parse(
                start,
                format!("record {record} has label {label} > 9"),
            ));
        }
        let pixels = &bytes[start + 1..start + CIFAR_RECORD_LEN];
        examples.push(Tensor::from_vec(
            pixels.iter().map(|&p| p as f64 / 255.0).collect(),
        ));
        labels.push(label as usize);
    }
    LabeledDataset::new(examples, labels, 10, 0.0, 1.0)
}

pub fn read_cifar10_bin(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    parse_cifar10_bin(&fs::read(path)?)
}

/// Serialize a dataset of 3072-feature examples back into CIFAR-10 record
/// bytes, quantizing each feature to the nearest u8.
pub fn to_cifar10_bytes(data: &LabeledDataset) -> Result<Vec<u8>> {
    if data.dim() != CIFAR_RECORD_LEN - 1 {
        return Err(Error::InvalidArgument(format!(
            "CIFAR records need {} features, dataset has {}",
            CIFAR_RECORD_LEN - 1,
            data.dim()
        )));
    }
    let mut out = Vec::with_capacity(data.len() * CIFAR_RECORD_LEN);
    for (ex, &label) in data.examples.iter().zip(&data.labels) {
        if label > 9 {
            return Err(Error::InvalidArgument(format!("label {label} > 9")));
        }
        out.push(label as u8);
        out.extend(ex.data().iter().map(|v| (v * 255.0).round() as u8));
    }
    Ok(out)
}

/// Parse a pair of IDX buffers (big-endian magics 0x803 / 0x801). Pixels are
/// scaled into [0,1] and flattened row-major; the class count is the largest
/// label plus one, floored at two.
pub fn parse_idx(images: &[u8], label_bytes: &[u8]) -> Result<LabeledDataset> {
    let mut off = 0usize;
    let magic = read_u32_be(images, &mut off, "image magic")?;
    if magic != IDX_IMAGE_MAGIC {
        return Err(Error::parse(
            0,
            format!("image magic {magic:#010x}, expected {IDX_IMAGE_MAGIC:#010x}"),
        ));
    }
    let count = read_u32_be(images, &mut off, "image count")? as usize;
    let rows = read_u32_be(images, &mut off, "row count")? as usize;
    let cols = read_u32_be(images, &mut off, "column count")? as usize;
    let pixels_needed = count
        .checked_mul(rows)
        .and_then(|v| v.checked_mul(cols))
        .ok_or_else(|| Error::parse(4, "implausible image dimensions"))?;
    let pixel_off = off;
    let pixels = take(images, &mut off, pixels_needed, "image pixels")?;
    if off != images.len() {
        return Err(Error::parse(off, "trailing bytes after image pixels"));
    }

    let mut loff = 0usize;
    let lmagic = read_u32_be(label_bytes, &mut loff, "label magic")?;
    if lmagic != IDX_LABEL_MAGIC {
        return Err(Error::parse(
            0,
            format!("label magic {lmagic:#010x}, expected {IDX_LABEL_MAGIC:#010x}"),
        ));
    }
    let label_count = read_u32_be(label_bytes, &mut loff, "label count")? as usize;
    if label_count != count {
        return Err(Error::parse(
            4,
            format!("label count {label_count} does not match image count {count}"),
        ));
    }
    let labels_raw = take(label_bytes, &mut loff, label_count, "labels")?;
    if loff != label_bytes.len() {
        return Err(Error::parse(loff, "trailing bytes after labels"));
    }

    if count == 0 {
        return Err(Error::EmptyDataset("IDX file holds zero images".into()));
    }
    let dim = rows * cols;
    if dim == 0 {
        return Err(Error::parse(pixel_off, "zero-sized images"));
    }
    let mut examples = Vec::with_capacity(count);
    for i in 0..count {
        let chunk = &pixels[i * dim..(i + 1) * dim];
        examples.push(Tensor::from_vec(
            chunk.iter().map(|&p| p as f64 / 255.0).collect(),
        ));
    }
    let labels: Vec<usize> = labels_raw.iter().map(|&l| l as usize).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0).max(1) + 1;
    LabeledDataset::new(examples, labels, num_classes, 0.0, 1.0)
}

pub fn read_idx(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<LabeledDataset> {
    parse_idx(&fs::read(images_path)?, &fs::read(labels_path)?)
}

/// Serialize into IDX buffers (images as one row of `dim` quantized pixels per
/// example), the inverse of `parse_idx` up to u8 quantization.
pub fn to_idx_bytes(data: &LabeledDataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut images = Vec::new();
    images.extend_from_slice(&IDX_IMAGE_MAGIC.to_be_bytes());
    images.extend_from_slice(&(data.len() as u32).to_be_bytes());
    images.extend_from_slice(&1u32.to_be_bytes());
    images.extend_from_slice(&(data.dim() as u32).to_be_bytes());
    for ex in &data.examples {
        images.extend(ex.data().iter().map(|v| (v * 255.0).round() as u8));
    }
    let mut labels = Vec::new();
    labels.extend_from_slice(&IDX_LABEL_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(data.len() as u32).to_be_bytes());
    for &l in &data.labels {
        if l > 255 {
            return Err(Error::InvalidArgument(format!("label {l} does not fit in a byte")));
        }
        labels.push(l as u8);
    }
    Ok((images, labels))
}

/// Uniform random target class per example, never equal to the true label.
pub fn pick_targets(labels: &[usize], num_classes: usize, rng: &mut SeededRng) -> Vec<usize> {
    assert!(num_classes >= 2, "need at least 2 classes to pick targets");
    labels
        .iter()
        .map(|&label| {
            let draw = rng.below(num_classes - 1);
            if draw < label {
                draw
            } else {
                draw + 1
            }
        })
        .collect()
}

/// Write a train/test pair into the "ADS1" container (all little-endian):
/// magic, u32 class count, f64 box bounds, u32 dimension, u32 split sizes,
/// then per split the labels as u32 and the features as f64 row-major.
pub fn write_dataset(
    train: &LabeledDataset,
    test: &LabeledDataset,
    path: impl AsRef<Path>,
) -> Result<()> {
    Ok(fs::write(path, dataset_to_bytes(train, test)?)?)
}

pub fn dataset_to_bytes(train: &LabeledDataset, test: &LabeledDataset) -> Result<Vec<u8>> {
    if train.dim() != test.dim()
        || train.num_classes != test.num_classes
        || train.feature_lo != test.feature_lo
        || train.feature_hi != test.feature_hi
    {
        return Err(Error::InvalidArgument(
            "train and test splits disagree on dimension, classes or bounds".into(),
        ));
    }
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(train.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&train.feature_lo.to_le_bytes());
    out.extend_from_slice(&train.feature_hi.to_le_bytes());
    out.extend_from_slice(&(train.dim() as u32).to_le_bytes());
    out.extend_from_slice(&(train.len() as u32).to_le_bytes());
    out.extend_from_slice(&(test.len() as u32).to_le_bytes());
    for split in [train, test] {
        for &label in &split.labels {
            out.extend_from_slice(&(label as u32).to_le_bytes());
        }
        for ex in &split.examples {
            for v in ex.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<(LabeledDataset, LabeledDataset)> {
    dataset_from_bytes(&fs::read(path)?)
}

pub fn dataset_from_bytes(bytes: &[u8]) -> Result<(LabeledDataset, LabeledDataset)> {
    let mut off = 0usize;
    let magic = take(bytes, &mut off, 4, "magic")?;
    if magic != DATASET_MAGIC {
        return Err(Error::parse(0, format!("bad magic {magic:?}, expected \"ADS1\"")));
    }
    let num_classes = read_u32_le(bytes, &mut off, "class count")? as usize;
    let lo = read_f64_le(bytes, &mut off, "feature_lo")?;
    let hi = read_f64_le(bytes, &mut off, "feature_hi")?;
    let dim = read_u32_le(bytes, &mut off, "dimension")? as usize;
    let n_train = read_u32_le(bytes, &mut off, "train count")? as usize;
    let n_test = read_u32_le(bytes, &mut off, "test count")? as usize;
    if num_classes < 2 || dim == 0 {
        return Err(Error::parse(4, "class count must be >= 2 and dimension positive"));
    }
    let mut read_split = |n: usize, what: &str| -> Result<LabeledDataset> {
        let mut labels = Vec::with_capacity(n);
        for _ in 0..n {
            labels.push(read_u32_le(bytes, &mut off, "label")? as usize);
        }
        let mut examples = Vec::with_capacity(n);
        for _ in 0..n {
            let mut features = Vec::with_capacity(dim);
            for _ in 0..dim {
                features.push(read_f64_le(bytes, &mut off, "feature")?);
            }
            examples.push(Tensor::from_vec(features));
        }
        LabeledDataset::new(examples, labels, num_classes, lo, hi)
            .map_err(|e| Error::parse(off, format!("invalid {what} split: {e}")))
    };
    let train = read_split(n_train, "train")?;
    let test = read_split(n_test, "test")?;
    if off != bytes.len() {
        return Err(Error::parse(off, "trailing bytes after test split"));
    }
    Ok((train, test))
}
