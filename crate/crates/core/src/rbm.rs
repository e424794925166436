//! Binary-binary restricted Boltzmann machine trained with contrastive divergence.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{check_dim, Error, Result};
use crate::math::{all_finite, bernoulli, logistic_inplace, softplus};
use crate::persist::{self, Reader, Writer};
use crate::rng;

/// Energy `E(x, h) = -b'x - c'h - h'Wx` over binary visible `x` and hidden `h`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmModel {
    /// `hidden x visible`.
    weights: Array2<f64>,
    visible_bias: Array1<f64>,
    hidden_bias: Array1<f64>,
}

/// Direction of one CD step, before scaling by the learning rate.
#[derive(Debug, Clone)]
pub struct RbmGradient {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
}

impl RbmModel {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
    ) -> Result<Self> {
        check_dim("rbm visible bias", weights.ncols(), visible_bias.len())?;
        check_dim("rbm hidden bias", weights.nrows(), hidden_bias.len())?;
        if !(all_finite(&weights) && all_finite(&visible_bias) && all_finite(&hidden_bias)) {
            return Err(Error::NonFiniteUpdate("rbm parameters".into()));
        }
        Ok(RbmModel {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    pub fn zeros(visible: usize, hidden: usize) -> Self {
        RbmModel {
            weights: Array2::zeros((hidden, visible)),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
        }
    }

    /// `W ~ Normal(0, 0.01^2)`, zero biases.
    pub fn init<R: Rng + ?Sized>(visible: usize, hidden: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.01).expect("valid sd");
        RbmModel {
            weights: Array2::from_shape_simple_fn((hidden, visible), || rng.sample(normal)),
            visible_bias: Array1::zeros(visible),
            hidden_bias: Array1::zeros(hidden),
        }
    }

    pub fn visible_units(&self) -> usize {
        self.weights.ncols()
    }

    pub fn hidden_units(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn visible_bias(&self) -> &Array1<f64> {
        &self.visible_bias
    }

    pub fn hidden_bias(&self) -> &Array1<f64> {
        &self.hidden_bias
    }

    /// `p(h_j = 1 | x) = sigma(W_j x + c_j)`.
    pub fn hidden_given_visible(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim("rbm visible input", self.visible_units(), x.len())?;
        let mut p = self.weights.dot(&x) + &self.hidden_bias;
        logistic_inplace(&mut p);
        Ok(p)
    }

    /// `p(x_i = 1 | h) = sigma(W^T h + b)_i`.
    pub fn visible_given_hidden(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        check_dim("rbm hidden input", self.hidden_units(), h.len())?;
        let mut p = self.weights.t().dot(&h) + &self.visible_bias;
        logistic_inplace(&mut p);
        Ok(p)
    }

    /// Row-wise [`Self::hidden_given_visible`] for a `batch x visible` matrix.
    pub fn hidden_probs(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim("rbm visible batch", self.visible_units(), x.ncols())?;
        let mut p = x.dot(&self.weights.t()) + &self.hidden_bias;
        logistic_inplace(&mut p);
        Ok(p)
    }

    pub fn visible_probs(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        check_dim("rbm hidden batch", self.hidden_units(), h.ncols())?;
        let mut p = h.dot(&self.weights) + &self.visible_bias;
        logistic_inplace(&mut p);
        Ok(p)
    }

    /// `F(x) = -b'x - sum_j softplus(W_j x + c_j)`, so that `p(x) ∝ exp(-F(x))`.
    pub fn free_energy(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        check_dim("rbm visible input", self.visible_units(), x.len())?;
        let pre = self.weights.dot(&x) + &self.hidden_bias;
        Ok(-self.visible_bias.dot(&x) - pre.iter().map(|&z| softplus(z)).sum::<f64>())
    }

    /// CD-k statistics for `batch`.
    ///
    /// The positive phase uses `p(h|x)`. The negative phase starts at each
    /// batch row and alternates sampled `h` and sampled `x` for `k` steps; the
    /// final hidden term uses probabilities.
    pub fn cd_gradient<R: Rng + ?Sized>(
        &self,
        batch: &Array2<f64>,
        k: usize,
        rng: &mut R,
    ) -> Result<RbmGradient> {
        if batch.nrows() == 0 {
            return Err(Error::EmptyEffectiveBatch);
        }
        if k == 0 {
            return Err(Error::Config("cd steps must be at least 1".into()));
        }
        let n = batch.nrows() as f64;
        let pos_hidden = self.hidden_probs(batch)?;
        let mut hidden = bernoulli(&pos_hidden, rng);
        let mut neg_visible = Array2::zeros(batch.raw_dim());
        let mut neg_hidden = pos_hidden.clone();
        for step in 0..k {
            neg_visible = bernoulli(&self.visible_probs(&hidden)?, rng);
            neg_hidden = self.hidden_probs(&neg_visible)?;
            if step + 1 < k {
                hidden = bernoulli(&neg_hidden, rng);
            }
        }
        let weights = (pos_hidden.t().dot(batch) - neg_hidden.t().dot(&neg_visible)) / n;
        let visible_bias = (batch - &neg_visible).sum_axis(Axis(0)) / n;
        let hidden_bias = (&pos_hidden - &neg_hidden).sum_axis(Axis(0)) / n;
        Ok(RbmGradient {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    /// One CD-k step with learning rate `lr`. The model is left untouched if
    /// the update would produce a non-finite parameter.
    pub fn cd_update<R: Rng + ?Sized>(
        &mut self,
        batch: &Array2<f64>,
        k: usize,
        lr: f64,
        rng: &mut R,
    ) -> Result<()> {
        let grad = self.cd_gradient(batch, k, rng)?;
        self.apply(&grad, lr)
    }

    fn apply(&mut self, step: &RbmGradient, scale: f64) -> Result<()> {
        let weights = &self.weights + &(scale * &step.weights);
        let visible_bias = &self.visible_bias + &(scale * &step.visible_bias);
        let hidden_bias = &self.hidden_bias + &(scale * &step.hidden_bias);
        if !(all_finite(&weights) && all_finite(&visible_bias) && all_finite(&hidden_bias)) {
            return Err(Error::NonFiniteUpdate("contrastive divergence step".into()));
        }
        self.weights = weights;
        self.visible_bias = visible_bias;
        self.hidden_bias = hidden_bias;
        Ok(())
    }

    /// Mean over rows of the Bernoulli cross-entropy between `x` and its
    /// mean-field reconstruction `p(x | p(h|x))`.
    pub fn reconstruction_cross_entropy(&self, data: &Array2<f64>) -> Result<f64> {
        let recon = self.visible_probs(&self.hidden_probs(data)?)?;
        let total: f64 = data
            .iter()
            .zip(recon.iter())
            .map(|(&x, &p)| -(x * p.ln() + (1.0 - x) * (1.0 - p).ln()))
            .sum();
        Ok(total / data.nrows().max(1) as f64)
    }
}

const MAGIC: &[u8; 8] = b"SGEN-RBM";
const VERSION: u32 = 1;

impl RbmModel {
    /// `SGEN-RBM`, version, H, V (u32 LE), then W row-major, b, c as f64 LE.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC, VERSION);
        w.u32(self.hidden_units() as u32);
        w.u32(self.visible_units() as u32);
        w.matrix(&self.weights);
        w.vector(&self.visible_bias);
        w.vector(&self.hidden_bias);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let hidden = r.u32()? as usize;
        let visible = r.u32()? as usize;
        let expected = 20 + 8 * (hidden * visible + hidden + visible);
        if bytes.len() != expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        let weights = r.matrix(hidden, visible)?;
        let visible_bias = r.vector(visible)?;
        let hidden_bias = r.vector(hidden)?;
        r.finish()?;
        RbmModel::new(weights, visible_bias, hidden_bias)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&persist::read_file(path)?)
    }
}

/// Convergence regime: an under-trained ("bad") or a converged ("good") RBM.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Bad,
    Good,
}

impl Regime {
    pub fn default_epochs(self) -> usize {
        match self {
            Regime::Bad => 5,
            Regime::Good => 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmTrainConfig {
    pub regime: Regime,
    pub epochs: usize,
    pub hidden_units: usize,
    pub learning_rate: f64,
    pub cd_steps: usize,
    /// Effective batch size is `min(batch_size, data.len())`.
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl RbmTrainConfig {
    pub fn for_regime(regime: Regime, seed: u64) -> Self {
        RbmTrainConfig {
            regime,
            epochs: regime.default_epochs(),
            hidden_units: 500,
            learning_rate: 0.05,
            cd_steps: 1,
            batch_size: 20,
            momentum: 0.0,
            weight_decay: 0.0,
            seed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RbmFit {
    pub model: RbmModel,
    /// Mean reconstruction cross-entropy after each epoch.
    pub reconstruction: Vec<f64>,
}

/// Minibatch CD-k from a `Normal(0, 0.01^2)` initialization. Rows are
/// reshuffled every epoch.
pub fn train_rbm(data: &BinaryDataset, cfg: &RbmTrainConfig) -> Result<RbmFit> {
    if data.is_empty() {
        return Err(Error::InvalidCounts("cannot train an RBM on an empty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.hidden_units == 0 {
        return Err(Error::Config("rbm batch size and hidden units must be positive".into()));
    }
    let mut init_rng = rng::derived(cfg.seed, &["rbm-init".into()]);
    let mut rng = rng::derived(cfg.seed, &["rbm-train".into()]);
    let mut model = RbmModel::init(data.dim(), cfg.hidden_units, &mut init_rng);
    let x = data.to_matrix();
    let batch_size = cfg.batch_size.min(data.len());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity: Option<RbmGradient> = None;
    let mut reconstruction = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch_size) {
            let batch = x.select(Axis(0), chunk);
            let mut step = model.cd_gradient(&batch, cfg.cd_steps, &mut rng)?;
            if cfg.weight_decay != 0.0 {
                step.weights.scaled_add(-cfg.weight_decay, &model.weights);
            }
            if cfg.momentum != 0.0 {
                if let Some(v) = velocity.as_mut() {
                    v.weights = cfg.momentum * &v.weights + &step.weights;
                    v.visible_bias = cfg.momentum * &v.visible_bias + &step.visible_bias;
                    v.hidden_bias = cfg.momentum * &v.hidden_bias + &step.hidden_bias;
                    step = v.clone();
                } else {
                    velocity = Some(step.clone());
                }
            }
            model.apply(&step, cfg.learning_rate)?;
        }
        let ce = model.reconstruction_cross_entropy(&x)?;
        log::debug!("rbm epoch={epoch} regime={:?} recon_ce={ce:.4}", cfg.regime);
        reconstruction.push(ce);
    }
    Ok(RbmFit {
        model,
        reconstruction,
    })
}
