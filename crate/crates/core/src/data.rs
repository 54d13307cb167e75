//! Datasets: IDX (MNIST) loading, train/holdout subsetting, global contrast
//! normalisation and synthetic Gaussian blobs.

use std::fs::File;
use std::io::{self, BufReader, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use thiserror::Error;

use crate::rng::Rng;
use crate::tensor::Matrix;

pub const IDX_IMAGES_MAGIC: u32 = 2051;
pub const IDX_LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad magic number {found} (expected {expected})")]
    Format {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("inconsistent data: {0}")]
    Consistency(String),
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Labelled samples, one feature row per sample.
///
/// Sample ids are the row indices `0..n`. `source_ids` records which row of
/// the dataset this one was cut from (identity for freshly loaded data).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub source_ids: Vec<usize>,
}

impl Dataset {
    pub fn new(
        name: impl Into<String>,
        features: Matrix,
        labels: Vec<usize>,
        classes: usize,
    ) -> Result<Self, DataError> {
        if features.rows() != labels.len() {
            return Err(DataError::Consistency(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(DataError::Consistency(format!(
                "label {bad} outside 0..{classes}"
            )));
        }
        let source_ids = (0..labels.len()).collect();
        Ok(Self {
            name: name.into(),
            features,
            labels,
            classes,
            source_ids,
        })
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

    /// Rows `ids` (in that order) as a new dataset.
    pub fn select(&self, ids: &[usize]) -> Self {
        Self {
            name: self.name.clone(),
            features: self.features.select_rows(ids),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            source_ids: ids.iter().map(|&i| self.source_ids[i]).collect(),
        }
    }

    /// Appends `other`'s rows. Feature widths must match.
    pub fn concat(&self, other: &Dataset) -> Result<Self, DataError> {
        if self.dim() != other.dim() {
            return Err(DataError::Consistency(format!(
                "cannot append {}-wide rows to {}-wide rows",
                other.dim(),
                self.dim()
            )));
        }
        let mut data = self.features.data().to_vec();
        data.extend_from_slice(other.features.data());
        let features = Matrix::from_vec(self.len() + other.len(), self.dim(), data)
            .expect("row counts add up");
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        let mut source_ids = self.source_ids.clone();
        source_ids.extend_from_slice(&other.source_ids);
        Ok(Self {
            name: self.name.clone(),
            features,
            labels,
            classes: self.classes.max(other.classes),
            source_ids,
        })
    }

    /// Count of samples per class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

fn open_maybe_gz(path: &Path) -> Result<Box<dyn Read>, DataError> {
    let file = File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    if path.extension().is_some_and(|e| e == "gz") {
        Ok(Box::new(GzDecoder::new(reader)))
    } else {
        Ok(Box::new(reader))
    }
}

fn read_u32_be(r: &mut dyn Read, path: &Path) -> Result<u32, DataError> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(u32::from_be_bytes(buf))
}

fn read_bytes(r: &mut dyn Read, len: usize, path: &Path) -> Result<Vec<u8>, DataError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(buf)
}

fn expect_magic(r: &mut dyn Read, path: &Path, expected: u32) -> Result<(), DataError> {
    let found = read_u32_be(r, path)?;
    if found != expected {
        return Err(DataError::Format {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an IDX image file and its label file. Paths ending in `.gz` are
/// decompressed on the fly. Pixels are scaled from `0..=255` to `[0, 1]`.
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let mut images = open_maybe_gz(images_path)?;
    expect_magic(&mut *images, images_path, IDX_IMAGES_MAGIC)?;
    let count = read_u32_be(&mut *images, images_path)? as usize;
    let rows = read_u32_be(&mut *images, images_path)? as usize;
    let cols = read_u32_be(&mut *images, images_path)? as usize;
    let pixels = read_bytes(&mut *images, count * rows * cols, images_path)?;

    let mut labels_in = open_maybe_gz(labels_path)?;
    expect_magic(&mut *labels_in, labels_path, IDX_LABELS_MAGIC)?;
    let label_count = read_u32_be(&mut *labels_in, labels_path)? as usize;
    if label_count != count {
        return Err(DataError::Consistency(format!(
            "{} images but {} labels",
            count, label_count
        )));
    }
    let labels: Vec<usize> = read_bytes(&mut *labels_in, count, labels_path)?
        .into_iter()
        .map(usize::from)
        .collect();

    let features = Matrix::from_vec(
        count,
        rows * cols,
        pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
    )
    .expect("length is count × rows × cols");
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let name = images_path
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Dataset::new(name, features, labels, classes)
}

/// Looks for `<prefix>-images-idx3-ubyte[.gz]` and the matching labels file.
pub fn find_idx_pair(dir: &Path, prefix: &str) -> Option<(PathBuf, PathBuf)> {
    let pick = |stem: String| {
        [dir.join(format!("{stem}.gz")), dir.join(&stem)]
            .into_iter()
            .find(|p| p.is_file())
    };
    let images = pick(format!("{prefix}-images-idx3-ubyte"))?;
    let labels = pick(format!("{prefix}-labels-idx1-ubyte"))?;
    Some((images, labels))
}

/// Raw IDX bytes for `count` images of `rows × cols` unsigned bytes.
pub fn encode_idx_images(count: usize, rows: usize, cols: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), count * rows * cols);
    let mut out = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, count as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

/// Raw IDX bytes for a label vector.
pub fn encode_idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// How many samples to keep for training, and the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub train_size: usize,
    pub seed: u64,
}

/// Seeded shuffle of `train`; the first `train_size` rows train, the rest
/// form the holdout (which joins the validation data).
pub fn subset_split(train: &Dataset, spec: SplitSpec) -> Result<(Dataset, Dataset), DataError> {
    if spec.train_size == 0 || spec.train_size > train.len() {
        return Err(DataError::Argument(format!(
            "train_size {} outside 1..={}",
            spec.train_size,
            train.len()
        )));
    }
    let order = Rng::new(spec.seed).shuffle(train.len());
    let (keep, rest) = order.split_at(spec.train_size);
    Ok((train.select(keep), train.select(rest)))
}

/// Per-row centring and scaling to unit (population) standard deviation.
/// Rows with standard deviation below `1e-8` are only centred.
pub fn gcn_normalize(dataset: &Dataset) -> Dataset {
    let mut out = dataset.clone();
    let cols = out.features.cols();
    if cols == 0 {
        return out;
    }
    for r in 0..out.features.rows() {
        let row = out.features.row_mut(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
        let denom = var.sqrt().max(1e-8);
        for v in row.iter_mut() {
            *v = (*v - mean) / denom;
        }
    }
    out
}

/// Distance between neighbouring blob centres, in units of the blob
/// standard deviation.
pub const BLOB_SEPARATION: f64 = 10.0;

/// Gaussian class clusters with a fraction of deliberately hard samples.
///
/// Classes get `n / classes` samples each, the first `n % classes` classes
/// one more. When `dim ≥ classes` the centres sit on scaled unit vectors at
/// pairwise distance [`BLOB_SEPARATION`]; otherwise they are drawn at random
/// with that scale. In every class `round(hardness_fraction · count)` samples
/// are placed around the midpoint between their own centre and another
/// class's centre instead. Rows come out shuffled.
pub fn synthetic_blobs(
    n: usize,
    classes: usize,
    dim: usize,
    hardness_fraction: f64,
    seed: u64,
) -> Result<Dataset, DataError> {
    if classes < 2 || dim == 0 || n < classes {
        return Err(DataError::Argument(format!(
            "need classes ≥ 2, dim ≥ 1 and n ≥ classes (n={n}, classes={classes}, dim={dim})"
        )));
    }
    if !(0.0..1.0).contains(&hardness_fraction) {
        return Err(DataError::Argument(format!(
            "hardness_fraction {hardness_fraction} outside [0, 1)"
        )));
    }
    let mut rng = Rng::new(seed);
    let centres: Vec<Vec<f64>> = (0..classes)
        .map(|c| {
            if dim >= classes {
                let mut v = vec![0.0; dim];
                v[c] = BLOB_SEPARATION / std::f64::consts::SQRT_2;
                v
            } else {
                (0..dim).map(|_| BLOB_SEPARATION * rng.normal()).collect()
            }
        })
        .collect();

    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (c, centre) in centres.iter().enumerate() {
        let count = n / classes + usize::from(c < n % classes);
        let hard = (hardness_fraction * count as f64).round() as usize;
        for k in 0..count {
            let anchor: Vec<f64> = if k < hard {
                let mut other = rng.below(classes - 1);
                if other >= c {
                    other += 1;
                }
                centre
                    .iter()
                    .zip(&centres[other])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect()
            } else {
                centre.clone()
            };
            data.extend(anchor.iter().map(|a| a + rng.normal()));
            labels.push(c);
        }
    }
    let features = Matrix::from_vec(n, dim, data).expect("n × dim");
    let ordered = Dataset::new(format!("blobs-{n}x{dim}-c{classes}"), features, labels, classes)?;
    let order = rng.shuffle(n);
    let mut shuffled = ordered.select(&order);
    shuffled.source_ids = (0..n).collect();
    Ok(shuffled)
}
