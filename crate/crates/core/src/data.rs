//! MNIST ingestion: IDX parsing, binarization and scarce-data scenario splits.

use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::persist::{self, Reader, Writer};
use crate::rng;

pub const IMAGE_SIDE: usize = 28;
pub const PIXELS: usize = IMAGE_SIDE * IMAGE_SIDE;
pub const NUM_CLASSES: usize = 10;

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

/// Environment variable naming the directory that holds the MNIST files.
pub const DATA_DIR_ENV: &str = "SGEN_DATA_DIR";

/// Images as stored in the IDX container. Gray value of a pixel is `byte / 255`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImageSet {
    bytes: Array3<u8>,
}

impl RawImageSet {
    pub fn count(&self) -> usize {
        self.bytes.len_of(Axis(0))
    }

    /// Gray values in `[0, 1]` of image `i`.
    pub fn gray(&self, i: usize) -> Array2<f64> {
        self.bytes
            .index_axis(Axis(0), i)
            .mapv(|p| f64::from(p) / 255.0)
    }

    pub fn raw(&self) -> &Array3<u8> {
        &self.bytes
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn check_magic(bytes: &[u8], magic: u32) -> Result<()> {
    if bytes.len() < 4 {
        return Err(Error::TruncatedPayload {
            expected: 4,
            found: bytes.len(),
        });
    }
    let found = be_u32(bytes, 0);
    if found != magic {
        return Err(Error::BadMagic {
            expected: format!("{magic:#010x}"),
            found: format!("{found:#010x}"),
        });
    }
    Ok(())
}

fn check_len(bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

pub fn parse_idx_images(bytes: &[u8]) -> Result<RawImageSet> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    if bytes.len() < 16 {
        return Err(Error::TruncatedPayload {
            expected: 16,
            found: bytes.len(),
        });
    }
    let count = be_u32(bytes, 4);
    let rows = be_u32(bytes, 8);
    let cols = be_u32(bytes, 12);
    if rows as usize != IMAGE_SIDE || cols as usize != IMAGE_SIDE {
        return Err(Error::UnsupportedShape { rows, cols });
    }
    let count = count as usize;
    check_len(bytes, 16 + count * PIXELS)?;
    let bytes = Array3::from_shape_vec((count, IMAGE_SIDE, IMAGE_SIDE), bytes[16..].to_vec())
        .expect("length checked");
    Ok(RawImageSet { bytes })
}

pub fn parse_idx_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    if bytes.len() < 8 {
        return Err(Error::TruncatedPayload {
            expected: 8,
            found: bytes.len(),
        });
    }
    let count = be_u32(bytes, 4) as usize;
    check_len(bytes, 8 + count)?;
    let labels = &bytes[8..];
    if let Some((index, &label)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| usize::from(l) >= NUM_CLASSES)
    {
        return Err(Error::LabelOutOfRange { index, label });
    }
    Ok(labels.to_vec())
}

/// Gray values strictly above 0.5 saturate to 1, everything else to 0.
pub fn binarize_pixel(gray: f64) -> u8 {
    u8::from(gray > 0.5)
}

/// Binarizes and flattens row-major to 784-vectors. With `p / 255` scaling
/// the threshold is the integer test `byte > 127`.
pub fn binarize(raw: &RawImageSet) -> BinaryDataset {
    let count = raw.count();
    let images = raw
        .bytes
        .to_shape((count, PIXELS))
        .expect("contiguous")
        .mapv(|p| binarize_pixel(f64::from(p) / 255.0));
    BinaryDataset {
        images,
        labels: None,
    }
}

/// 784-pixel binary images with optional class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryDataset {
    images: Array2<u8>,
    labels: Option<Vec<u8>>,
}

impl BinaryDataset {
    /// Validates that every entry is 0/1 and labels (if any) match in length and range.
    pub fn new(images: Array2<u8>, labels: Option<Vec<u8>>) -> Result<Self> {
        if images.iter().any(|&v| v > 1) {
            return Err(Error::Config("binary dataset entries must be 0 or 1".into()));
        }
        if let Some(labels) = &labels {
            if labels.len() != images.nrows() {
                return Err(Error::DimensionMismatch {
                    context: "dataset labels",
                    expected: images.nrows(),
                    got: labels.len(),
                });
            }
            if let Some((index, &label)) = labels
                .iter()
                .enumerate()
                .find(|(_, &l)| usize::from(l) >= NUM_CLASSES)
            {
                return Err(Error::LabelOutOfRange { index, label });
            }
        }
        Ok(BinaryDataset { images, labels })
    }

    pub fn with_labels(self, labels: Vec<u8>) -> Result<Self> {
        BinaryDataset::new(self.images, Some(labels))
    }

    pub fn len(&self) -> usize {
        self.images.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.images.ncols()
    }

    pub fn images(&self) -> ArrayView2<'_, u8> {
        self.images.view()
    }

    pub fn image(&self, i: usize) -> ArrayView1<'_, u8> {
        self.images.row(i)
    }

    pub fn labels(&self) -> Option<&[u8]> {
        self.labels.as_deref()
    }

    pub fn label(&self, i: usize) -> Option<u8> {
        self.labels.as_ref().map(|l| l[i])
    }

    pub fn subset(&self, indices: &[usize]) -> BinaryDataset {
        BinaryDataset {
            images: self.images.select(Axis(0), indices),
            labels: self
                .labels
                .as_ref()
                .map(|l| indices.iter().map(|&i| l[i]).collect()),
        }
    }

    pub fn without_labels(&self) -> BinaryDataset {
        BinaryDataset {
            images: self.images.clone(),
            labels: None,
        }
    }

    /// Stacks two datasets; labels survive only if both carry them.
    pub fn concat(&self, other: &BinaryDataset) -> Result<BinaryDataset> {
        crate::error::check_dim("dataset concat", self.dim(), other.dim())?;
        let images = ndarray::concatenate(Axis(0), &[self.images.view(), other.images.view()])
            .expect("column counts checked");
        let labels = match (&self.labels, &other.labels) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).copied().collect()),
            _ => None,
        };
        Ok(BinaryDataset { images, labels })
    }

    /// All images as a `count x dim` matrix of 0.0/1.0.
    pub fn to_matrix(&self) -> Array2<f64> {
        self.images.mapv(f64::from)
    }

    pub fn rows_to_matrix(&self, rows: &[usize]) -> Array2<f64> {
        self.images.select(Axis(0), rows).mapv(f64::from)
    }

    pub fn class_histogram(&self) -> Option<[usize; NUM_CLASSES]> {
        self.labels.as_ref().map(|labels| {
            let mut hist = [0; NUM_CLASSES];
            labels.iter().for_each(|&l| hist[usize::from(l)] += 1);
            hist
        })
    }
}

const STORE_MAGIC: &[u8; 8] = b"SGEN-DAT";
const STORE_VERSION: u32 = 1;

impl BinaryDataset {
    /// Compact store: magic, version, count u32, dim u32, has_labels u8,
    /// bit-packed images (LSB first), then one label byte per image.
    pub fn to_store_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(STORE_MAGIC, STORE_VERSION);
        w.u32(self.len() as u32);
        w.u32(self.dim() as u32);
        w.u8(u8::from(self.labels.is_some()));
        for row in self.images.rows() {
            w.bytes(&persist::pack_bits(&row.to_vec()));
        }
        if let Some(labels) = &self.labels {
            w.bytes(labels);
        }
        w.finish()
    }

    pub fn from_store_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, STORE_MAGIC, STORE_VERSION)?;
        let count = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let has_labels = r.u8()? != 0;
        let row_bytes = dim.div_ceil(8);
        let mut data = Vec::with_capacity(count * dim);
        for _ in 0..count {
            data.extend(persist::unpack_bits(r.bytes(row_bytes)?, dim));
        }
        let labels = if has_labels {
            Some(r.bytes(count)?.to_vec())
        } else {
            None
        };
        r.finish()?;
        let images = Array2::from_shape_vec((count, dim), data).expect("sized");
        BinaryDataset::new(images, labels)
    }
}

/// Binarized MNIST train and test sets.
#[derive(Debug, Clone)]
pub struct Mnist {
    pub train: BinaryDataset,
    pub test: BinaryDataset,
}

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";
pub const TRAIN_STORE: &str = "train.sgd";
pub const TEST_STORE: &str = "test.sgd";

pub fn load_idx_pair(images: &Path, labels: &Path) -> Result<BinaryDataset> {
    let raw = parse_idx_images(&persist::read_file(images)?)?;
    let labels = parse_idx_labels(&persist::read_file(labels)?)?;
    binarize(&raw).with_labels(labels)
}

impl Mnist {
    /// Loads a directory holding either the ingested stores (`train.sgd`,
    /// `test.sgd`) or the four original IDX files.
    pub fn load(dir: &Path) -> Result<Mnist> {
        let (train_store, test_store) = (dir.join(TRAIN_STORE), dir.join(TEST_STORE));
        if train_store.is_file() && test_store.is_file() {
            return Ok(Mnist {
                train: BinaryDataset::from_store_bytes(&persist::read_file(&train_store)?)?,
                test: BinaryDataset::from_store_bytes(&persist::read_file(&test_store)?)?,
            });
        }
        Ok(Mnist {
            train: load_idx_pair(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?,
            test: load_idx_pair(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?,
        })
    }
}

/// `$SGEN_DATA_DIR` if set, otherwise `fallback`.
pub fn data_dir_or(fallback: impl Into<PathBuf>) -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| fallback.into())
}

/// Labeled/unlabeled partition of a random pool drawn from the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSplit {
    pub labeled: BinaryDataset,
    pub unlabeled: BinaryDataset,
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
    pub total: usize,
    pub seed: u64,
}

pub const MAX_SCENARIO_ATTEMPTS: usize = 100;

/// Draws `total` training indices uniformly under `seed` and takes the first
/// `labeled_count / 10` of each class (in draw order) as the labeled subset.
/// The pool is redrawn when some class is too rare, up to
/// [`MAX_SCENARIO_ATTEMPTS`] times.
pub fn make_scenario(
    train: &BinaryDataset,
    total: usize,
    labeled_count: usize,
    seed: u64,
) -> Result<ScenarioSplit> {
    let labels = train.labels().ok_or(Error::MissingLabels("training pool"))?;
    if labeled_count == 0 || labeled_count % NUM_CLASSES != 0 {
        return Err(Error::InvalidCounts(format!(
            "labeled count {labeled_count} must be a positive multiple of {NUM_CLASSES}"
        )));
    }
    if labeled_count > total {
        return Err(Error::InvalidCounts(format!(
            "labeled count {labeled_count} exceeds total {total}"
        )));
    }
    if total > train.len() {
        return Err(Error::InvalidCounts(format!(
            "total {total} exceeds training pool of {}",
            train.len()
        )));
    }
    let per_class = labeled_count / NUM_CLASSES;
    let mut rng = rng::seeded(seed);
    let mut short_class = 0u8;
    for _ in 0..MAX_SCENARIO_ATTEMPTS {
        let pool = index::sample(&mut rng, train.len(), total).into_vec();
        let mut taken = [0usize; NUM_CLASSES];
        let mut labeled_indices = Vec::with_capacity(labeled_count);
        let mut unlabeled_indices = Vec::with_capacity(total - labeled_count);
        for &i in &pool {
            let class = usize::from(labels[i]);
            if taken[class] < per_class {
                taken[class] += 1;
                labeled_indices.push(i);
            } else {
                unlabeled_indices.push(i);
            }
        }
        match taken.iter().position(|&t| t < per_class) {
            Some(class) => short_class = class as u8,
            None => {
                return Ok(ScenarioSplit::from_indices(
                    train,
                    labeled_indices,
                    unlabeled_indices,
                    seed,
                ))
            }
        }
    }
    Err(Error::InsufficientClassSamples {
        class: short_class,
        needed: per_class,
        attempts: MAX_SCENARIO_ATTEMPTS,
    })
}

/// Persisted description of a split; enough to rebuild it bit-exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioManifest {
    pub format: String,
    pub version: u32,
    pub seed: u64,
    pub total: usize,
    pub labeled_count: usize,
    pub labeled_indices: Vec<usize>,
    pub unlabeled_indices: Vec<usize>,
}

pub const MANIFEST_FORMAT: &str = "sgen-scenario";

impl ScenarioSplit {
    fn from_indices(
        train: &BinaryDataset,
        labeled_indices: Vec<usize>,
        unlabeled_indices: Vec<usize>,
        seed: u64,
    ) -> ScenarioSplit {
        ScenarioSplit {
            labeled: train.subset(&labeled_indices),
            unlabeled: train.subset(&unlabeled_indices).without_labels(),
            total: labeled_indices.len() + unlabeled_indices.len(),
            labeled_indices,
            unlabeled_indices,
            seed,
        }
    }

    /// Every image of the pool (labeled first), labels dropped.
    pub fn pool(&self) -> BinaryDataset {
        self.labeled
            .without_labels()
            .concat(&self.unlabeled)
            .expect("same width")
    }

    pub fn manifest(&self) -> ScenarioManifest {
        ScenarioManifest {
            format: MANIFEST_FORMAT.into(),
            version: 1,
            seed: self.seed,
            total: self.total,
            labeled_count: self.labeled.len(),
            labeled_indices: self.labeled_indices.clone(),
            unlabeled_indices: self.unlabeled_indices.clone(),
        }
    }

    pub fn from_manifest(train: &BinaryDataset, manifest: &ScenarioManifest) -> Result<Self> {
        if manifest.format != MANIFEST_FORMAT || manifest.version != 1 {
            return Err(Error::Config(format!(
                "unsupported manifest {} v{}",
                manifest.format, manifest.version
            )));
        }
        train.labels().ok_or(Error::MissingLabels("training pool"))?;
        let mut seen = std::collections::HashSet::new();
        for &i in manifest.labeled_indices.iter().chain(&manifest.unlabeled_indices) {
            if i >= train.len() || !seen.insert(i) {
                return Err(Error::InconsistentScenario(format!(
                    "index {i} is out of range or repeated"
                )));
            }
        }
        if manifest.labeled_indices.len() != manifest.labeled_count || seen.len() != manifest.total
        {
            return Err(Error::InconsistentScenario(
                "manifest counts disagree with its index lists".into(),
            ));
        }
        Ok(ScenarioSplit::from_indices(
            train,
            manifest.labeled_indices.clone(),
            manifest.unlabeled_indices.clone(),
            manifest.seed,
        ))
    }
}

impl ScenarioManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("scenario manifest: {e}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, self.to_toml().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = persist::read_file(path)?;
        Self::from_toml(&String::from_utf8_lossy(&bytes))
    }
}
