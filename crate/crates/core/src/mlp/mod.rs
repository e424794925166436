//! Fully-connected classifier with Gaussian input noise, batch
//! normalization and dropout.
//!
//! Each hidden layer computes `dropout(relu(bn(x W^T)))`; batch-norm's shift
//! takes the place of a bias. The output layer is a plain affine map to
//! unnormalized class scores.

use std::path::Path;

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::{PIXELS, NUM_CLASSES};
use crate::error::{check_dim, Error, Result};
use crate::math::{all_finite, standard_normal};
use crate::persist::{self, Reader, Writer};

mod train;

pub use train::{evaluate, train_classifier, train_classifier_observed, BatchPolicy, EpochKeep, TrainSchedule, TrainedClassifier};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    /// 784-1024-1024-10
    Fc1,
    /// 784-1000-500-250-250-250-10
    Fc2,
    /// Arbitrary widths, input first and class count last (toy networks).
    Custom(Vec<usize>),
}

impl Architecture {
    pub fn widths(&self) -> Vec<usize> {
        match self {
            Architecture::Fc1 => vec![PIXELS, 1024, 1024, NUM_CLASSES],
            Architecture::Fc2 => vec![PIXELS, 1000, 500, 250, 250, 250, NUM_CLASSES],
            Architecture::Custom(w) => w.clone(),
        }
    }

    pub fn name(&self) -> String {
        match self {
            Architecture::Fc1 => "FC1".into(),
            Architecture::Fc2 => "FC2".into(),
            Architecture::Custom(w) => {
                let parts: Vec<String> = w.iter().map(|v| v.to_string()).collect();
                parts.join("-")
            }
        }
    }

    fn tag(&self) -> u8 {
        match self {
            Architecture::Fc1 => 0,
            Architecture::Fc2 => 1,
            Architecture::Custom(_) => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenLayer {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpClassifier {
    pub architecture: Architecture,
    pub hidden: Vec<HiddenLayer>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
    pub dropout_rate: f64,
    pub input_noise_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Input noise, dropout and batch statistics.
    Train,
    /// Deterministic: running statistics, no noise, no dropout.
    Eval,
}

/// The random quantities of one Train-mode pass, drawn up front so a pass can
/// be replayed exactly.
#[derive(Debug, Clone)]
pub struct StochasticDraws {
    /// Already scaled by `input_noise_sigma`.
    pub input_noise: Array2<f64>,
    /// One per hidden layer; entries are `0` or `1 / keep_prob`.
    pub dropout_masks: Vec<Array2<f64>>,
}

/// Gradient with the same layout as the parameters.
#[derive(Debug, Clone)]
pub struct MlpGradient {
    pub hidden_weights: Vec<Array2<f64>>,
    pub gamma: Vec<Array1<f64>>,
    pub beta: Vec<Array1<f64>>,
    pub output_weights: Array2<f64>,
    pub output_bias: Array1<f64>,
}

/// Per-layer batch mean and (biased) variance of the pre-activations.
#[derive(Debug, Clone)]
pub struct BatchStats {
    pub mean: Vec<Array1<f64>>,
    pub var: Vec<Array1<f64>>,
    pub rows: usize,
}

struct LayerCache {
    input: Array2<f64>,
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    /// ReLU output before dropout.
    activated: Array2<f64>,
}

struct TrainPass {
    scores: Array2<f64>,
    layers: Vec<LayerCache>,
    last: Array2<f64>,
    stats: BatchStats,
}

impl MlpClassifier {
    /// He-normal hidden weights, `Normal(0, 1/fan_in)` output weights,
    /// `gamma = 1`, `beta = 0`, running statistics `(0, 1)`.
    pub fn init<R: Rng + ?Sized>(
        architecture: Architecture,
        dropout_rate: f64,
        input_noise_sigma: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let widths = architecture.widths();
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        if !(0.0..1.0).contains(&dropout_rate) || !(input_noise_sigma >= 0.0) {
            return Err(Error::Config("dropout must be in [0, 1) and noise sigma >= 0".into()));
        }
        let mut hidden = Vec::new();
        for pair in widths[..widths.len() - 1].windows(2) {
            let (fan_in, out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("valid sd");
            hidden.push(HiddenLayer {
                weights: Array2::from_shape_simple_fn((out, fan_in), || rng.sample(normal)),
                gamma: Array1::ones(out),
                beta: Array1::zeros(out),
                running_mean: Array1::zeros(out),
                running_var: Array1::ones(out),
            });
        }
        let fan_in = widths[widths.len() - 2];
        let classes = widths[widths.len() - 1];
        let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid sd");
        Ok(MlpClassifier {
            architecture,
            hidden,
            output_weights: Array2::from_shape_simple_fn((classes, fan_in), || rng.sample(normal)),
            output_bias: Array1::zeros(classes),
            dropout_rate,
            input_noise_sigma,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map(|l| l.weights.ncols())
            .unwrap_or_else(|| self.output_weights.ncols())
    }

    pub fn classes(&self) -> usize {
        self.output_weights.nrows()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> StochasticDraws {
        let input_noise = standard_normal(rows, self.input_dim(), rng) * self.input_noise_sigma;
        let keep = 1.0 - self.dropout_rate;
        let dropout_masks = self
            .hidden
            .iter()
            .map(|l| {
                Array2::from_shape_simple_fn((rows, l.weights.nrows()), || {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            })
            .collect();
        StochasticDraws {
            input_noise,
            dropout_masks,
        }
    }

    /// Class scores (`batch x classes`, unnormalized).
    pub fn forward<R: Rng + ?Sized>(&self, x: &Array2<f64>, mode: Mode, rng: &mut R) -> Result<Array2<f64>> {
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => {
                let draws = self.draw(x.nrows(), rng);
                Ok(self.train_pass(x, &draws)?.scores)
            }
        }
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim("classifier input", self.input_dim(), x.ncols())?;
        let mut a = x.clone();
        for l in &self.hidden {
            let z = a.dot(&l.weights.t());
            let inv_std = l.running_var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let scale = &l.gamma * &inv_std;
            let shift = &l.beta - &(&l.running_mean * &scale);
            a = (z * &scale + &shift).mapv(|v| v.max(0.0));
        }
        Ok(a.dot(&self.output_weights.t()) + &self.output_bias)
    }

    /// Train-mode forward pass with the given draws.
    pub fn forward_with(&self, x: &Array2<f64>, draws: &StochasticDraws) -> Result<Array2<f64>> {
        Ok(self.train_pass(x, draws)?.scores)
    }

    fn train_pass(&self, x: &Array2<f64>, draws: &StochasticDraws) -> Result<TrainPass> {
        check_dim("classifier input", self.input_dim(), x.ncols())?;
        if x.nrows() < 2 && !self.hidden.is_empty() {
            return Err(Error::BatchTooSmall(x.nrows()));
        }
        check_dim("input noise rows", x.nrows(), draws.input_noise.nrows())?;
        let n = x.nrows() as f64;
        let mut a = x + &draws.input_noise;
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut stats = BatchStats {
            mean: Vec::new(),
            var: Vec::new(),
            rows: x.nrows(),
        };
        for (l, mask) in self.hidden.iter().zip(&draws.dropout_masks) {
            let z = a.dot(&l.weights.t());
            let mean = z.sum_axis(Axis(0)) / n;
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
            let inv_std = var.mapv(|v| 1.0 / (v + BN_EPS).sqrt());
            let normalized = centered * &inv_std;
            let activated = (&normalized * &l.gamma + &l.beta).mapv(|v| v.max(0.0));
            let out = &activated * mask;
            layers.push(LayerCache {
                input: a,
                normalized,
                inv_std,
                activated,
            });
            stats.mean.push(mean);
            stats.var.push(var);
            a = out;
        }
        let scores = a.dot(&self.output_weights.t()) + &self.output_bias;
        Ok(TrainPass {
            scores,
            layers,
            last: a,
            stats,
        })
    }

    /// Mean softmax cross-entropy and its gradient under fixed draws.
    pub fn loss_and_grad_with(
        &self,
        x: &Array2<f64>,
        labels: &[u8],
        draws: &StochasticDraws,
    ) -> Result<(f64, MlpGradient, BatchStats)> {
        check_dim("classifier labels", x.nrows(), labels.len())?;
        if let Some(&bad) = labels.iter().find(|&&l| usize::from(l) >= self.classes()) {
            return Err(Error::LabelOutOfRange {
                index: labels.iter().position(|&l| l == bad).unwrap_or(0),
                label: bad,
            });
        }
        let pass = self.train_pass(x, draws)?;
        let n = x.nrows() as f64;
        let probs = softmax_rows(&pass.scores);
        let loss = cross_entropy(&pass.scores, labels);
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("classifier loss {loss}")));
        }
        let mut d_scores = probs;
        for (i, &l) in labels.iter().enumerate() {
            d_scores[[i, usize::from(l)]] -= 1.0;
        }
        d_scores /= n;

        let output_weights = d_scores.t().dot(&pass.last);
        let output_bias = d_scores.sum_axis(Axis(0));
        let mut upstream = d_scores.dot(&self.output_weights);

        let depth = self.hidden.len();
        let mut hidden_weights = vec![Array2::zeros((0, 0)); depth];
        let mut gamma = vec![Array1::zeros(0); depth];
        let mut beta = vec![Array1::zeros(0); depth];
        for k in (0..depth).rev() {
            let (l, cache) = (&self.hidden[k], &pass.layers[k]);
            // dropout, then relu
            let mut d_bn = upstream * &draws.dropout_masks[k];
            Zip::from(&mut d_bn)
                .and(&cache.activated)
                .for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
            gamma[k] = (&d_bn * &cache.normalized).sum_axis(Axis(0));
            beta[k] = d_bn.sum_axis(Axis(0));
            let d_norm = d_bn * &l.gamma;
            let sum_d = d_norm.sum_axis(Axis(0));
            let sum_dx = (&d_norm * &cache.normalized).sum_axis(Axis(0));
            let d_pre = (&d_norm * n - &sum_d - &(&cache.normalized * &sum_dx)) * &(&cache.inv_std / n);
            hidden_weights[k] = d_pre.t().dot(&cache.input);
            upstream = d_pre.dot(&l.weights);
        }
        Ok((
            loss,
            MlpGradient {
                hidden_weights,
                gamma,
                beta,
                output_weights,
                output_bias,
            },
            pass.stats,
        ))
    }

    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        x: &Array2<f64>,
        labels: &[u8],
        rng: &mut R,
    ) -> Result<(f64, MlpGradient, BatchStats)> {
        let draws = self.draw(x.nrows(), rng);
        self.loss_and_grad_with(x, labels, &draws)
    }

    /// Folds batch statistics into the running estimates (unbiased variance).
    pub fn update_running_stats(&mut self, stats: &BatchStats) {
        let n = stats.rows as f64;
        let correction = if stats.rows > 1 { n / (n - 1.0) } else { 1.0 };
        for ((l, mean), var) in self.hidden.iter_mut().zip(&stats.mean).zip(&stats.var) {
            l.running_mean = &l.running_mean * (1.0 - BN_MOMENTUM) + mean * BN_MOMENTUM;
            l.running_var = &l.running_var * (1.0 - BN_MOMENTUM) + var * (BN_MOMENTUM * correction);
        }
    }

    /// Eval-mode argmax per row; ties go to the lowest class index.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<u8>> {
        Ok(argmax_rows(&self.forward_eval(x)?))
    }

    pub fn all_finite(&self) -> bool {
        self.hidden.iter().all(|l| {
            all_finite(&l.weights)
                && all_finite(&l.gamma)
                && all_finite(&l.beta)
                && all_finite(&l.running_mean)
                && all_finite(&l.running_var)
        }) && all_finite(&self.output_weights)
            && all_finite(&self.output_bias)
    }
}

pub fn argmax_rows(scores: &Array2<f64>) -> Vec<u8> {
    scores
        .rows()
        .into_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best as u8
        })
        .collect()
}

pub fn softmax_rows(scores: &Array2<f64>) -> Array2<f64> {
    let mut out = scores.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    out
}

/// Mean of `-log softmax(scores)[label]`, via log-sum-exp.
pub fn cross_entropy(scores: &Array2<f64>, labels: &[u8]) -> f64 {
    let total: f64 = scores
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(row, &l)| {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
            lse - row[usize::from(l)]
        })
        .sum();
    total / labels.len().max(1) as f64
}

const MAGIC: &[u8; 8] = b"SGEN-MLP";
const VERSION: u32 = 1;

impl MlpClassifier {
    /// `SGEN-MLP`, version, architecture tag u8 (0 FC1, 1 FC2, 2 custom),
    /// width count u32 and widths u32, dropout and noise sigma f64, then per
    /// hidden layer W, gamma, beta, running mean, running var, then output W
    /// and bias; all f64 LE, matrices row-major.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC, VERSION);
        w.u8(self.architecture.tag());
        let widths = self.architecture.widths();
        w.u32(widths.len() as u32);
        widths.iter().for_each(|&v| w.u32(v as u32));
        w.f64(self.dropout_rate);
        w.f64(self.input_noise_sigma);
        for l in &self.hidden {
            w.matrix(&l.weights);
            w.vector(&l.gamma);
            w.vector(&l.beta);
            w.vector(&l.running_mean);
            w.vector(&l.running_var);
        }
        w.matrix(&self.output_weights);
        w.vector(&self.output_bias);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let tag = r.u8()?;
        let count = r.u32()? as usize;
        if count < 2 || count > 64 {
            return Err(Error::Config(format!("implausible layer count {count}")));
        }
        let widths = (0..count)
            .map(|_| r.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let architecture = match tag {
            0 => Architecture::Fc1,
            1 => Architecture::Fc2,
            2 => Architecture::Custom(widths.clone()),
            t => return Err(Error::Config(format!("unknown architecture tag {t}"))),
        };
        if architecture.widths() != widths {
            return Err(Error::InconsistentScenario(format!(
                "{} stored with widths {widths:?}",
                architecture.name()
            )));
        }
        let dropout_rate = r.f64()?;
        let input_noise_sigma = r.f64()?;
        let mut hidden = Vec::new();
        for pair in widths[..count - 1].windows(2) {
            hidden.push(HiddenLayer {
                weights: r.matrix(pair[1], pair[0])?,
                gamma: r.vector(pair[1])?,
                beta: r.vector(pair[1])?,
                running_mean: r.vector(pair[1])?,
                running_var: r.vector(pair[1])?,
            });
        }
        let output_weights = r.matrix(widths[count - 1], widths[count - 2])?;
        let output_bias = r.vector(widths[count - 1])?;
        r.finish()?;
        let clf = MlpClassifier {
            architecture,
            hidden,
            output_weights,
            output_bias,
            dropout_rate,
            input_noise_sigma,
        };
        if !clf.all_finite() || clf.hidden.iter().any(|l| l.running_var.iter().any(|&v| v <= 0.0)) {
            return Err(Error::Config("classifier parameters must be finite with positive running variance".into()));
        }
        Ok(clf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&persist::read_file(path)?)
    }
}
