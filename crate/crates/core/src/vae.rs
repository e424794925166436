//! Fully-connected variational autoencoder with a factorized Gaussian
//! posterior `q(h|x)` and a Bernoulli decoder `p(x|h)`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::data::BinaryDataset;
use crate::error::{check_dim, Error, Result};
use crate::math::{all_finite, logistic, standard_normal};
use crate::persist::{self, Reader, Writer};
use crate::rng;

pub const LOGVAR_CLAMP: f64 = 10.0;
pub const PROB_CLAMP: f64 = 1e-7;

/// Affine map `y = x W^T + b` with `W` stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn init<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / inputs as f64).sqrt()).expect("valid sd");
        Dense {
            weights: Array2::from_shape_simple_fn((outputs, inputs), || rng.sample(normal)),
            bias: Array1::zeros(outputs),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weights.t()) + &self.bias
    }

    /// Accumulates parameter gradients for upstream `dy` and returns `dx`.
    fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Dense) -> Array2<f64> {
        grad.weights += &dy.t().dot(x);
        grad.bias += &dy.sum_axis(Axis(0));
        dy.dot(&self.weights)
    }

    fn inputs(&self) -> usize {
        self.weights.ncols()
    }

    fn outputs(&self) -> usize {
        self.weights.nrows()
    }

    fn finite(&self) -> bool {
        all_finite(&self.weights) && all_finite(&self.bias)
    }
}

/// Encoder `V -> hidden (tanh) -> (mu, logvar)`, decoder `L -> hidden (tanh) -> V` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub encoder: Dense,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: Dense,
    pub output: Dense,
}

/// Batch-mean evidence lower bound split into its two terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub elbo: f64,
    /// Expected Bernoulli log-likelihood (one reparameterized draw per row).
    pub llh: f64,
    pub kl: f64,
}

impl ElboBreakdown {
    fn new(llh: f64, kl: f64) -> Self {
        ElboBreakdown {
            elbo: llh - kl,
            llh,
            kl,
        }
    }
}

/// Closed-form `KL(N(mu, diag(exp(logvar))) || N(0, I))`, clamped at zero.
pub fn kl_to_standard_normal(mu: ArrayView1<'_, f64>, logvar: ArrayView1<'_, f64>) -> f64 {
    let kl = -0.5
        * mu.iter()
            .zip(logvar.iter())
            .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
            .sum::<f64>();
    kl.max(0.0)
}

struct Forward {
    enc_act: Array2<f64>,
    mu: Array2<f64>,
    logvar: Array2<f64>,
    /// Where the raw log-variance sat strictly inside the clamp.
    logvar_free: Array2<bool>,
    latent: Array2<f64>,
    dec_act: Array2<f64>,
    probs: Array2<f64>,
}

impl VaeModel {
    pub fn zeros(visible: usize, hidden: usize, latent: usize) -> Self {
        VaeModel {
            encoder: Dense::zeros(visible, hidden),
            mu_head: Dense::zeros(hidden, latent),
            logvar_head: Dense::zeros(hidden, latent),
            decoder: Dense::zeros(latent, hidden),
            output: Dense::zeros(hidden, visible),
        }
    }

    /// Weights `Normal(0, 1/fan_in)`, zero biases.
    pub fn init<R: Rng + ?Sized>(visible: usize, hidden: usize, latent: usize, rng: &mut R) -> Self {
        VaeModel {
            encoder: Dense::init(visible, hidden, rng),
            mu_head: Dense::init(hidden, latent, rng),
            logvar_head: Dense::init(hidden, latent, rng),
            decoder: Dense::init(latent, hidden, rng),
            output: Dense::init(hidden, visible, rng),
        }
    }

    pub fn visible_dim(&self) -> usize {
        self.encoder.inputs()
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder.outputs()
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.outputs()
    }

    pub fn layers(&self) -> [&Dense; 5] {
        [
            &self.encoder,
            &self.mu_head,
            &self.logvar_head,
            &self.decoder,
            &self.output,
        ]
    }

    pub fn layers_mut(&mut self) -> [&mut Dense; 5] {
        [
            &mut self.encoder,
            &mut self.mu_head,
            &mut self.logvar_head,
            &mut self.decoder,
            &mut self.output,
        ]
    }

    fn validate(&self) -> Result<()> {
        let (v, hid, l) = (self.visible_dim(), self.hidden_dim(), self.latent_dim());
        check_dim("vae mu head input", hid, self.mu_head.inputs())?;
        check_dim("vae logvar head input", hid, self.logvar_head.inputs())?;
        check_dim("vae logvar head output", l, self.logvar_head.outputs())?;
        check_dim("vae decoder input", l, self.decoder.inputs())?;
        check_dim("vae output input", self.decoder.outputs(), self.output.inputs())?;
        check_dim("vae output width", v, self.output.outputs())?;
        for layer in self.layers() {
            check_dim("vae bias", layer.outputs(), layer.bias.len())?;
            if !layer.finite() {
                return Err(Error::NonFiniteLoss("vae parameters".into()));
            }
        }
        Ok(())
    }

    fn encode_batch(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>, Array2<f64>, Array2<bool>)> {
        check_dim("vae input", self.visible_dim(), x.ncols())?;
        let enc_act = self.encoder.forward(x).mapv(f64::tanh);
        let mu = self.mu_head.forward(&enc_act);
        let raw = self.logvar_head.forward(&enc_act);
        let logvar_free = raw.mapv(|v| v > -LOGVAR_CLAMP && v < LOGVAR_CLAMP);
        let logvar = raw.mapv(|v| v.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP));
        Ok((enc_act, mu, logvar, logvar_free))
    }

    /// Bernoulli means of `p(x|h)` for each latent row.
    fn decode_batch(&self, h: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        check_dim("vae latent", self.latent_dim(), h.ncols())?;
        let dec_act = self.decoder.forward(h).mapv(f64::tanh);
        let probs = self.output.forward(&dec_act).mapv(logistic);
        Ok((dec_act, probs))
    }

    /// Posterior mean and (clamped) log-variance of `q(h|x)`.
    pub fn encode(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let x = x.to_owned().insert_axis(Axis(0));
        let (_, mu, logvar, _) = self.encode_batch(&x)?;
        Ok((mu.row(0).to_owned(), logvar.row(0).to_owned()))
    }

    pub fn decode(&self, h: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let h = h.to_owned().insert_axis(Axis(0));
        Ok(self.decode_batch(&h)?.1.row(0).to_owned())
    }

    /// Row-wise posterior parameters for a batch.
    pub fn encode_rows(&self, x: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let (_, mu, logvar, _) = self.encode_batch(x)?;
        Ok((mu, logvar))
    }

    pub fn decode_rows(&self, h: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.decode_batch(h)?.1)
    }

    fn forward(&self, x: &Array2<f64>, noise: &Array2<f64>) -> Result<Forward> {
        let (enc_act, mu, logvar, logvar_free) = self.encode_batch(x)?;
        check_dim("vae noise rows", x.nrows(), noise.nrows())?;
        check_dim("vae noise width", self.latent_dim(), noise.ncols())?;
        let latent = &mu + &(logvar.mapv(|lv| (0.5 * lv).exp()) * noise);
        let (dec_act, probs) = self.decode_batch(&latent)?;
        Ok(Forward {
            enc_act,
            mu,
            logvar,
            logvar_free,
            latent,
            dec_act,
            probs,
        })
    }

    fn breakdown(x: &Array2<f64>, f: &Forward) -> Result<ElboBreakdown> {
        let n = x.nrows() as f64;
        let llh: f64 = Zip::from(x)
            .and(&f.probs)
            .fold(0.0, |acc, &x, &p| {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                acc + x * p.ln() + (1.0 - x) * (1.0 - p).ln()
            })
            / n;
        let kl: f64 = f
            .mu
            .rows()
            .into_iter()
            .zip(f.logvar.rows())
            .map(|(m, lv)| kl_to_standard_normal(m, lv))
            .sum::<f64>()
            / n;
        let out = ElboBreakdown::new(llh, kl);
        if !(out.elbo.is_finite() && out.llh.is_finite() && out.kl.is_finite()) {
            return Err(Error::NonFiniteLoss(format!("elbo {out:?}")));
        }
        Ok(out)
    }

    /// ELBO for a fixed reparameterization draw `noise` (`batch x latent`).
    pub fn elbo_with_noise(&self, x: &Array2<f64>, noise: &Array2<f64>) -> Result<ElboBreakdown> {
        let f = self.forward(x, noise)?;
        Self::breakdown(x, &f)
    }

    /// ELBO and its gradient with respect to every parameter (ascent direction).
    pub fn elbo_and_grad(&self, x: &Array2<f64>, noise: &Array2<f64>) -> Result<(ElboBreakdown, VaeModel)> {
        let f = self.forward(x, noise)?;
        let out = Self::breakdown(x, &f)?;
        let n = x.nrows() as f64;
        let mut grad = VaeModel::zeros(self.visible_dim(), self.hidden_dim(), self.latent_dim());

        // d llh / d logit = x - p where the probability clamp is inactive.
        let d_logits = Zip::from(x).and(&f.probs).map_collect(|&x, &p| {
            if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                (x - p) / n
            } else {
                0.0
            }
        });
        let d_dec_act = self.output.backward(&f.dec_act, &d_logits, &mut grad.output);
        let d_dec_pre = d_dec_act * f.dec_act.mapv(|a| 1.0 - a * a);
        let d_latent = self.decoder.backward(&f.latent, &d_dec_pre, &mut grad.decoder);

        // h = mu + exp(logvar / 2) * eps; the KL term contributes -mu and
        // -(exp(logvar) - 1) / 2.
        let d_mu = &d_latent - &(&f.mu / n);
        let mut d_logvar = Zip::from(&d_latent)
            .and(noise)
            .and(&f.logvar)
            .map_collect(|&dl, &eps, &lv| {
                let sd = (0.5 * lv).exp();
                dl * eps * 0.5 * sd - 0.5 * (lv.exp() - 1.0) / n
            });
        Zip::from(&mut d_logvar)
            .and(&f.logvar_free)
            .for_each(|d, &free| {
                if !free {
                    *d = 0.0;
                }
            });
        let d_enc_act = self.mu_head.backward(&f.enc_act, &d_mu, &mut grad.mu_head)
            + self.logvar_head.backward(&f.enc_act, &d_logvar, &mut grad.logvar_head);
        let d_enc_pre = d_enc_act * f.enc_act.mapv(|a| 1.0 - a * a);
        self.encoder.backward(x, &d_enc_pre, &mut grad.encoder);
        Ok((out, grad))
    }

    /// One-sample reparameterized ELBO estimate for `batch`.
    pub fn elbo_batch<R: Rng + ?Sized>(&self, batch: &Array2<f64>, rng: &mut R) -> Result<ElboBreakdown> {
        if batch.nrows() == 0 {
            return Err(Error::EmptyEffectiveBatch);
        }
        let noise = standard_normal(batch.nrows(), self.latent_dim(), rng);
        self.elbo_with_noise(batch, &noise)
    }

    fn ascend(&mut self, grad: &VaeModel, lr: f64) -> Result<()> {
        let mut next = self.clone();
        for (p, g) in next.layers_mut().into_iter().zip(grad.layers()) {
            p.weights.scaled_add(lr, &g.weights);
            p.bias.scaled_add(lr, &g.bias);
        }
        if !next.layers().iter().all(|l| l.finite()) {
            return Err(Error::NonFiniteLoss("vae parameter update".into()));
        }
        *self = next;
        Ok(())
    }
}

const MAGIC: &[u8; 8] = b"SGEN-VAE";
const VERSION: u32 = 1;

impl VaeModel {
    /// `SGEN-VAE`, version, tensor count, `(rows, cols)` per tensor (biases
    /// as `len x 1`), then every tensor's f64 LE values in declaration order:
    /// encoder, mu head, logvar head, decoder, output; weights before bias.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::with_magic(MAGIC, VERSION);
        let layers = self.layers();
        w.u32(2 * layers.len() as u32);
        for l in layers {
            w.u32(l.weights.nrows() as u32);
            w.u32(l.weights.ncols() as u32);
            w.u32(l.bias.len() as u32);
            w.u32(1);
        }
        for l in layers {
            w.matrix(&l.weights);
            w.vector(&l.bias);
        }
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let tensors = r.u32()? as usize;
        check_dim("vae tensor table", 10, tensors)?;
        let mut shapes = Vec::with_capacity(tensors);
        for _ in 0..tensors {
            shapes.push((r.u32()? as usize, r.u32()? as usize));
        }
        let mut model = VaeModel::zeros(0, 0, 0);
        for (i, layer) in model.layers_mut().into_iter().enumerate() {
            let (rows, cols) = shapes[2 * i];
            let (len, one) = shapes[2 * i + 1];
            check_dim("vae bias column", 1, one)?;
            layer.weights = r.matrix(rows, cols)?;
            layer.bias = r.vector(len)?;
        }
        r.finish()?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&persist::read_file(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeTrainConfig {
    pub hidden_units: usize,
    pub latent_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        VaeTrainConfig {
            hidden_units: 512,
            latent_dim: 20,
            epochs: 100,
            learning_rate: 1e-3,
            batch_size: 20,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VaeFit {
    pub model: VaeModel,
    /// Size-weighted mean of the minibatch estimates seen during each epoch.
    pub history: Vec<ElboBreakdown>,
}

/// Minibatch stochastic gradient ascent on the one-sample ELBO estimator.
pub fn train_vae(data: &BinaryDataset, cfg: &VaeTrainConfig) -> Result<VaeFit> {
    if data.is_empty() {
        return Err(Error::InvalidCounts("cannot train a VAE on an empty dataset".into()));
    }
    if cfg.batch_size == 0 || cfg.hidden_units == 0 || cfg.latent_dim == 0 {
        return Err(Error::Config("vae sizes must be positive".into()));
    }
    let mut init_rng = rng::derived(cfg.seed, &["vae-init".into()]);
    let mut rng = rng::derived(cfg.seed, &["vae-train".into()]);
    let mut model = VaeModel::init(data.dim(), cfg.hidden_units, cfg.latent_dim, &mut init_rng);
    let x = data.to_matrix();
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut llh, mut kl) = (0.0, 0.0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = x.select(Axis(0), chunk);
            let noise = standard_normal(chunk.len(), cfg.latent_dim, &mut rng);
            let (stats, grad) = model.elbo_and_grad(&batch, &noise)?;
            model.ascend(&grad, cfg.learning_rate)?;
            llh += stats.llh * chunk.len() as f64;
            kl += stats.kl * chunk.len() as f64;
        }
        let n = data.len() as f64;
        let stats = ElboBreakdown::new(llh / n, kl / n);
        log::debug!(
            "vae epoch={epoch} elbo={:.3} llh={:.3} kl={:.3}",
            stats.elbo,
            stats.llh,
            stats.kl
        );
        history.push(stats);
    }
    Ok(VaeFit { model, history })
}
