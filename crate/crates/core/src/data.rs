//! Datasets: MNIST IDX files, delimited text tables, the four-point XOR
//! problem, and deterministic train/test splitting.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Labelled samples stored row-wise in an `N × d` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    classes: usize,
    name: String,
    class_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, name: impl Into<String>) -> Result<Self> {
        if features.rows() == 0 {
            return Err(Error::Spec("dataset needs at least one sample".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= classes) {
            return Err(Error::Spec(format!(
                "label {y} of sample {i} is not below the class count {classes}"
            )));
        }
        if !features.all_finite() {
            return Err(Error::Spec("features contain non-finite values".into()));
        }
        Ok(Self {
            features,
            labels,
            classes,
            name: name.into(),
            class_names: None,
        })
    }

    pub fn with_class_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.classes {
            return Err(Error::Dimension(format!(
                "{} class names for {} classes",
                names.len(),
                self.classes
            )));
        }
        self.class_names = Some(names);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class_names(&self) -> Option<&[String]> {
        self.class_names.as_deref()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Samples at `indices`, in that order. The class count is kept.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let d = self.dim();
        let mut data = Vec::with_capacity(indices.len() * d);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange { index: i, len: self.len() });
            }
            data.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        let mut out = Self::new(
            Matrix::from_vec(indices.len(), d, data)?,
            labels,
            self.classes,
            self.name.clone(),
        )?;
        out.class_names = self.class_names.clone();
        Ok(out)
    }

    /// First `n` samples (all of them if `n >= len`).
    pub fn take(&self, n: usize) -> Result<Self> {
        if n >= self.len() {
            return Ok(self.clone());
        }
        let indices: Vec<usize> = (0..n).collect();
        let mut out = self.subset(&indices)?;
        out.name = format!("{}[..{n}]", self.name);
        Ok(out)
    }

    /// SHA-256 over the shape, the feature bits and the labels, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for v in [self.len(), self.dim(), self.classes] {
            h.update((v as u64).to_le_bytes());
        }
        for v in self.features.as_slice() {
            h.update(v.to_le_bytes());
        }
        for &y in &self.labels {
            h.update((y as u64).to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }
}

fn read_u32_be(bytes: &[u8], offset: usize, what: &str, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::Length(format!("{}: file ends inside the {what}", path.display())))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(bytes)
}

/// Loads an IDX image file and its label file. Pixels are divided by 255.
/// The class count is one more than the largest label.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (images_path, labels_path) = (images_path.as_ref(), labels_path.as_ref());
    let images = read_file(images_path)?;
    let labels = read_file(labels_path)?;

    let magic = read_u32_be(&images, 0, "magic number", images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: image magic number {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}",
            images_path.display()
        )));
    }
    let count = read_u32_be(&images, 4, "image count", images_path)? as usize;
    let rows = read_u32_be(&images, 8, "row count", images_path)? as usize;
    let cols = read_u32_be(&images, 12, "column count", images_path)? as usize;
    let d = rows * cols;
    let pixels = &images[16..];
    if pixels.len() < count * d {
        return Err(Error::Length(format!(
            "{}: {} pixel bytes for {count} images of {rows}x{cols}",
            images_path.display(),
            pixels.len()
        )));
    }

    let magic = read_u32_be(&labels, 0, "magic number", labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: label magic number {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}",
            labels_path.display()
        )));
    }
    let label_count = read_u32_be(&labels, 4, "label count", labels_path)? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let label_bytes = &labels[8..];
    if label_bytes.len() < count {
        return Err(Error::Length(format!(
            "{}: {} label bytes for {count} labels",
            labels_path.display(),
            label_bytes.len()
        )));
    }

    let features: Vec<f64> = pixels[..count * d].iter().map(|&p| f64::from(p) / 255.0).collect();
    let labels: Vec<usize> = label_bytes[..count].iter().map(|&y| usize::from(y)).collect();
    let classes = labels.iter().max().map_or(0, |m| m + 1);
    let name = images_path
        .file_name()
        .map_or_else(|| "idx".to_string(), |n| n.to_string_lossy().into_owned());
    Dataset::new(Matrix::from_vec(count, d, features)?, labels, classes, name)
}

/// Writes `count = pixels.len() / (rows * cols)` images in IDX format.
pub fn write_idx_images(path: impl AsRef<Path>, rows: usize, cols: usize, pixels: &[u8]) -> Result<()> {
    let d = rows * cols;
    if d == 0 || !pixels.len().is_multiple_of(d) {
        return Err(Error::Dimension(format!(
            "{} pixels do not form whole {rows}x{cols} images",
            pixels.len()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    for v in [IDX_IMAGES_MAGIC, (pixels.len() / d) as u32, rows as u32, cols as u32] {
        w.write_all(&v.to_be_bytes())?;
    }
    w.write_all(pixels)?;
    w.flush()?;
    Ok(())
}

pub fn write_idx_labels(path: impl AsRef<Path>, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&IDX_LABELS_MAGIC.to_be_bytes())?;
    w.write_all(&(labels.len() as u32).to_be_bytes())?;
    w.write_all(labels)?;
    w.flush()?;
    Ok(())
}

/// Options for [`load_delimited`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DelimitedOptions {
    /// Zero-based label column; `None` means the last column.
    pub label_column: Option<usize>,
    pub delimiter: u8,
}

impl Default for DelimitedOptions {
    fn default() -> Self {
        Self {
            label_column: None,
            delimiter: b',',
        }
    }
}

/// Loads a delimited text table with one label column.
///
/// A first row whose feature cells are not all numeric is treated as a
/// header. If every label is a non-negative integer the integers are used as
/// class indices; otherwise class names map to indices in order of first
/// appearance. Row numbers in errors are one-based file lines.
pub fn load_delimited(path: impl AsRef<Path>, opts: DelimitedOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .delimiter(opts.delimiter)
        .from_path(path)?;

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        records.push((line, rec));
    }
    let Some((_, first)) = records.first() else {
        return Err(Error::Parse {
            row: 0,
            column: None,
            message: format!("{} contains no rows", path.display()),
        });
    };
    let width = first.len();
    if width < 2 {
        return Err(Error::Parse {
            row: records[0].0,
            column: None,
            message: "need at least one feature column and one label column".into(),
        });
    }
    let label_col = opts.label_column.unwrap_or(width - 1);
    if label_col >= width {
        return Err(Error::Spec(format!(
            "label column {label_col} but rows have {width} columns"
        )));
    }

    let is_header = first
        .iter()
        .enumerate()
        .any(|(c, cell)| c != label_col && cell.parse::<f64>().is_err());
    let body = if is_header { &records[1..] } else { &records[..] };
    if body.is_empty() {
        return Err(Error::Parse {
            row: records[0].0,
            column: None,
            message: "table has a header but no data rows".into(),
        });
    }

    let d = width - 1;
    let mut features = Vec::with_capacity(body.len() * d);
    let mut raw_labels = Vec::with_capacity(body.len());
    for (line, rec) in body {
        if rec.len() != width {
            return Err(Error::Parse {
                row: *line,
                column: None,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        for (c, cell) in rec.iter().enumerate() {
            if c == label_col {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row: *line,
                column: Some(c + 1),
                message: format!("cannot parse {cell:?} as a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: *line,
                    column: Some(c + 1),
                    message: format!("non-finite value {cell:?}"),
                });
            }
            features.push(v);
        }
    }

    let numeric: Option<Vec<usize>> = raw_labels.iter().map(|s| s.parse::<usize>().ok()).collect();
    let (labels, classes, names) = match numeric {
        Some(labels) => {
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            (labels, classes, None)
        }
        None => {
            let mut index = HashMap::new();
            let mut names = Vec::new();
            let labels = raw_labels
                .into_iter()
                .map(|s| {
                    *index.entry(s.clone()).or_insert_with(|| {
                        names.push(s);
                        names.len() - 1
                    })
                })
                .collect();
            (labels, names.len(), Some(names))
        }
    };

    let name = path
        .file_name()
        .map_or_else(|| "table".to_string(), |n| n.to_string_lossy().into_owned());
    let ds = Dataset::new(Matrix::from_vec(body.len(), d, features)?, labels, classes, name)?;
    match names {
        Some(names) => ds.with_class_names(names),
        None => Ok(ds),
    }
}

/// The four XOR points `(1,1), (1,-1), (-1,1), (-1,-1)` with labels
/// `0, 1, 1, 0`.
pub fn make_xor() -> Dataset {
    let features = Matrix::from_rows(&[
        [1.0, 1.0],
        [1.0, -1.0],
        [-1.0, 1.0],
        [-1.0, -1.0],
    ])
    .expect("rectangular");
    Dataset::new(features, vec![0, 1, 1, 0], 2, "xor").expect("valid xor dataset")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Fraction of samples held out, strictly between 0 and 1.
    pub test_fraction: f64,
    pub seed: u64,
}

/// Test and train indices, each sorted ascending.
pub fn split_indices(n: usize, spec: SplitSpec) -> Result<(Vec<usize>, Vec<usize>)> {
    let f = spec.test_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::Spec(format!("test fraction {f} must lie in (0, 1)")));
    }
    let n_test = (f * n as f64).round() as usize;
    if n_test == 0 || n_test >= n {
        return Err(Error::Spec(format!(
            "test fraction {f} of {n} samples leaves an empty side"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    let mut test = perm[..n_test].to_vec();
    let mut train = perm[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((train, test))
}

/// Deterministic partition into `(train, test)`.
pub fn split(dataset: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset)> {
    let (train, test) = split_indices(dataset.len(), spec)?;
    let mut tr = dataset.subset(&train)?;
    let mut te = dataset.subset(&test)?;
    tr.name = format!("{}:train", dataset.name);
    te.name = format!("{}:test", dataset.name);
    Ok((tr, te))
}
