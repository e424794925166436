//! Labels for generated samples: every sample inherits its chain's seed label,
//! and self-filtering keeps only those the classifier under training agrees
//! with.

use ndarray::{s, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{check_dim, Error, Result};
use crate::mlp::MlpClassifier;
use crate::sampler::SampleChain;

pub const DEFAULT_WARMUP_EPOCHS: usize = 5;

/// Rows per Eval-mode forward pass while filtering.
const FILTER_CHUNK: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FilterMode {
    /// Keep every generated sample (`n`).
    All,
    /// Keep samples whose predicted class equals their label (`y`), once
    /// `warmup_epochs` epochs have passed.
    SelfFiltered { warmup_epochs: usize },
}

impl FilterMode {
    pub fn self_filtered() -> Self {
        FilterMode::SelfFiltered {
            warmup_epochs: DEFAULT_WARMUP_EPOCHS,
        }
    }

    /// `'y'` or `'n'`.
    pub fn flag(self) -> char {
        match self {
            FilterMode::All => 'n',
            FilterMode::SelfFiltered { .. } => 'y',
        }
    }

    pub fn from_flag(flag: &str, warmup_epochs: usize) -> Result<Self> {
        match flag {
            "n" => Ok(FilterMode::All),
            "y" => Ok(FilterMode::SelfFiltered { warmup_epochs }),
            other => Err(Error::Config(format!("filter mode must be 'y' or 'n', got {other:?}"))),
        }
    }
}

/// The chain's samples, each labeled with the seed label, in chain order.
pub fn propagate_labels(chain: &SampleChain) -> BinaryDataset {
    BinaryDataset::new(chain.samples.clone(), Some(vec![chain.seed_label; chain.len()]))
        .expect("chain samples are binary and seed labels are in range")
}

/// Which of `samples` to train on at `epoch`.
pub fn filter_by_classifier(
    samples: &BinaryDataset,
    clf: &MlpClassifier,
    epoch: usize,
    mode: FilterMode,
) -> Result<Vec<bool>> {
    let labels = samples.labels().ok_or(Error::MissingLabels("generated samples"))?;
    if !samples.is_empty() {
        check_dim("filtered sample width", clf.input_dim(), samples.dim())?;
    }
    match mode {
        FilterMode::All => Ok(vec![true; samples.len()]),
        FilterMode::SelfFiltered { warmup_epochs } if epoch < warmup_epochs => Ok(vec![true; samples.len()]),
        FilterMode::SelfFiltered { .. } => {
            let predicted = predict_u8_rows(clf, samples.images())?;
            Ok(predicted.iter().zip(labels).map(|(p, l)| p == l).collect())
        }
    }
}

pub(crate) fn predict_u8_rows(clf: &MlpClassifier, rows: ndarray::ArrayView2<'_, u8>) -> Result<Vec<u8>> {
    let mut predicted = Vec::with_capacity(rows.nrows());
    for start in (0..rows.nrows()).step_by(FILTER_CHUNK) {
        let end = (start + FILTER_CHUNK).min(rows.nrows());
        predicted.extend(clf.predict(&rows.slice(s![start..end, ..]).mapv(f64::from))?);
    }
    Ok(predicted)
}

/// Labeled seeds together with the generated samples of their chains.
#[derive(Debug, Clone)]
pub struct AugmentedBatch {
    pub real: BinaryDataset,
    pub generated: BinaryDataset,
    /// For each generated row, the index of the chain it came from.
    pub origins: Vec<usize>,
    pub kept_mask: Vec<bool>,
}

impl AugmentedBatch {
    /// All generated samples start out kept.
    pub fn new(real: BinaryDataset, chains: &[(usize, &SampleChain)]) -> Result<Self> {
        if real.labels().is_none() {
            return Err(Error::MissingLabels("real samples"));
        }
        let dim = real.dim();
        let mut images = Array2::zeros((0, dim));
        let mut labels = Vec::new();
        let mut origins = Vec::new();
        for &(chain_index, chain) in chains {
            if !chain.is_empty() {
                check_dim("chain sample width", dim, chain.samples.ncols())?;
            }
            images
                .append(Axis(0), chain.samples.view())
                .expect("widths checked");
            labels.extend(std::iter::repeat_n(chain.seed_label, chain.len()));
            origins.extend(std::iter::repeat_n(chain_index, chain.len()));
        }
        let kept_mask = vec![true; labels.len()];
        Ok(AugmentedBatch {
            real,
            generated: BinaryDataset::new(images, Some(labels))?,
            origins,
            kept_mask,
        })
    }

    pub fn refilter(&mut self, clf: &MlpClassifier, epoch: usize, mode: FilterMode) -> Result<()> {
        self.kept_mask = filter_by_classifier(&self.generated, clf, epoch, mode)?;
        Ok(())
    }

    pub fn kept_count(&self) -> usize {
        self.kept_mask.iter().filter(|&&k| k).count()
    }

    /// Real rows followed by kept generated rows, as a 0/1 matrix with labels.
    pub fn training_rows(&self) -> (Array2<f64>, Vec<u8>) {
        let kept: Vec<usize> = (0..self.generated.len()).filter(|&i| self.kept_mask[i]).collect();
        let generated = self.generated.subset(&kept);
        let all = self.real.concat(&generated).expect("widths checked on construction");
        let labels = all.labels().expect("both parts labeled").to_vec();
        (all.to_matrix(), labels)
    }
}
