//! Sample generation by repeatedly applying the latent round-trip kernel
//! `T(x'|x) = ∫ p(x'|h) p(h|x) dh`, starting from an observed image.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng;

use crate::data::{IMAGE_SIDE, PIXELS};
use crate::error::{check_dim, Error, Result};
use crate::math::{bernoulli, standard_normal};
use crate::persist::{self, Reader, Writer};
use crate::rbm::RbmModel;
use crate::rng;
use crate::vae::VaeModel;

/// A trained generator supplying the posterior and likelihood of the kernel.
#[derive(Debug, Clone, PartialEq)]
pub enum Generator {
    Rbm(RbmModel),
    /// The posterior is the encoder's `q(h|x)`.
    Vae(VaeModel),
}

impl Generator {
    pub fn visible_dim(&self) -> usize {
        match self {
            Generator::Rbm(m) => m.visible_units(),
            Generator::Vae(m) => m.visible_dim(),
        }
    }

    /// Draws `h' ~ p(h|x)` then returns the Bernoulli means of `p(x|h')`.
    pub fn step_means<R: Rng + ?Sized>(&self, x: ArrayView1<'_, f64>, rng: &mut R) -> Result<Array1<f64>> {
        match self {
            Generator::Rbm(m) => {
                let h = bernoulli(&m.hidden_given_visible(x)?, rng);
                m.visible_given_hidden(h.view())
            }
            Generator::Vae(m) => {
                let (mu, logvar) = m.encode(x)?;
                let eps = standard_normal(1, m.latent_dim(), rng).remove_axis(Axis(0));
                let h = mu + logvar.mapv(|lv| (0.5 * lv).exp()) * eps;
                m.decode(h.view())
            }
        }
    }

    /// One application of the kernel: every coordinate of `h'` and then of
    /// `x'` is sampled independently.
    pub fn transition<R: Rng + ?Sized>(&self, x: ArrayView1<'_, f64>, rng: &mut R) -> Result<Array1<f64>> {
        let means = self.step_means(x, rng)?;
        Ok(bernoulli(&means, rng))
    }

    /// Like [`Generator::generate_chain`] but also returns `E[x | h']` for each step.
    pub fn generate_chain_with_means<R: Rng + ?Sized>(
        &self,
        seed: ArrayView1<'_, u8>,
        length: usize,
        rng: &mut R,
    ) -> Result<(Array2<u8>, Array2<f64>)> {
        check_dim("chain seed", self.visible_dim(), seed.len())?;
        let dim = seed.len();
        let mut samples = Array2::zeros((length, dim));
        let mut means = Array2::zeros((length, dim));
        let mut x = seed.mapv(f64::from);
        for i in 0..length {
            let m = self.step_means(x.view(), rng)?;
            x = bernoulli(&m, rng);
            samples.row_mut(i).assign(&x.mapv(|v| v as u8));
            means.row_mut(i).assign(&m);
        }
        Ok((samples, means))
    }

    /// Runs `length` transitions from `seed`, keeping every state after the seed.
    pub fn generate_chain<R: Rng + ?Sized>(
        &self,
        seed: ArrayView1<'_, u8>,
        length: usize,
        rng: &mut R,
    ) -> Result<Array2<u8>> {
        Ok(self.generate_chain_with_means(seed, length, rng)?.0)
    }
}

impl Generator {
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Generator::Rbm(m) => m.to_bytes(),
            Generator::Vae(m) => m.to_bytes(),
        }
    }

    /// Dispatches on the file magic (`SGEN-RBM` or `SGEN-VAE`).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        match bytes.get(..8) {
            Some(b"SGEN-RBM") => Ok(Generator::Rbm(RbmModel::from_bytes(bytes)?)),
            Some(b"SGEN-VAE") => Ok(Generator::Vae(VaeModel::from_bytes(bytes)?)),
            _ => Err(Error::BadMagic {
                expected: "SGEN-RBM or SGEN-VAE".into(),
                found: String::from_utf8_lossy(&bytes[..bytes.len().min(8)]).into_owned(),
            }),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&persist::read_file(path)?)
    }
}

/// Generated samples descending from one labeled seed image.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleChain {
    /// Index of the seed within the labeled set it was drawn from.
    pub seed_index: usize,
    pub seed_label: u8,
    /// `length x 784`, entries 0/1, in generation order.
    pub samples: Array2<u8>,
}

impl SampleChain {
    pub fn len(&self) -> usize {
        self.samples.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.nrows() == 0
    }
}

/// Generates one chain per `(seed_index, image, label)`; the rng for chain
/// `k` of seed `i` is derived from `master_seed` along `["chain", i, k]`, so
/// chains do not depend on each other or on generation order.
pub fn generate_chains<'a>(
    generator: &Generator,
    seeds: impl IntoIterator<Item = (usize, ArrayView1<'a, u8>, u8)>,
    length: usize,
    chains_per_seed: usize,
    master_seed: u64,
) -> Result<Vec<SampleChain>> {
    let mut chains = Vec::new();
    for (seed_index, image, seed_label) in seeds {
        for k in 0..chains_per_seed {
            let mut r = chain_rng(master_seed, seed_index, k);
            chains.push(SampleChain {
                seed_index,
                seed_label,
                samples: generator.generate_chain(image, length, &mut r)?,
            });
        }
    }
    Ok(chains)
}

pub fn chain_rng(master_seed: u64, seed_index: usize, replica: usize) -> rng::SeedRng {
    rng::derived(master_seed, &["chain".into(), seed_index.into(), replica.into()])
}

const MAGIC: &[u8; 8] = b"SGEN-CHN";
const VERSION: u32 = 1;
const PACKED: usize = PIXELS / 8;

impl SampleChain {
    /// `SGEN-CHN`, version, seed_index u32, seed_label u8, N u32, then each
    /// sample as 98 bytes of bits packed LSB-first (pixel `i` is bit `i % 8`
    /// of byte `i / 8`).
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        check_dim("chain sample width", PIXELS, self.samples.ncols())?;
        let mut w = Writer::with_magic(MAGIC, VERSION);
        w.u32(self.seed_index as u32);
        w.u8(self.seed_label);
        w.u32(self.len() as u32);
        for row in self.samples.rows() {
            w.bytes(&persist::pack_bits(&row.to_vec()));
        }
        Ok(w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::open(bytes, MAGIC, VERSION)?;
        let seed_index = r.u32()? as usize;
        let seed_label = r.u8()?;
        let n = r.u32()? as usize;
        let expected = 21 + n * PACKED;
        if bytes.len() != expected {
            return Err(Error::TruncatedPayload {
                expected,
                found: bytes.len(),
            });
        }
        let mut data = Vec::with_capacity(n * PIXELS);
        for _ in 0..n {
            data.extend(persist::unpack_bits(r.bytes(PACKED)?, PIXELS));
        }
        r.finish()?;
        Ok(SampleChain {
            seed_index,
            seed_label,
            samples: Array2::from_shape_vec((n, PIXELS), data).expect("sized"),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        persist::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&persist::read_file(path)?)
    }
}

/// Tiles 28x28 cells row-major into a binary (P5) PGM, `ceil(sqrt(n))` cells
/// per row. Values are gray levels in `[0, 1]`; unused cells stay black.
pub fn grid_pgm(cells: &Array2<f64>) -> Result<Vec<u8>> {
    check_dim("grid cell width", PIXELS, cells.ncols())?;
    let n = cells.nrows();
    if n == 0 {
        return Err(Error::InvalidCounts("cannot export an empty grid".into()));
    }
    let cols = (1..=n).find(|c| c * c >= n).expect("n >= 1");
    let rows = n.div_ceil(cols);
    let (width, height) = (cols * IMAGE_SIDE, rows * IMAGE_SIDE);
    let mut pixels = vec![0u8; width * height];
    for (k, cell) in cells.rows().into_iter().enumerate() {
        let (gr, gc) = (k / cols, k % cols);
        for (i, &v) in cell.iter().enumerate() {
            let (r, c) = (gr * IMAGE_SIDE + i / IMAGE_SIDE, gc * IMAGE_SIDE + i % IMAGE_SIDE);
            pixels[r * width + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    Ok(out)
}

pub fn chain_grid_export(chain: &SampleChain, path: &Path) -> Result<()> {
    if chain.is_empty() {
        return Err(Error::InvalidCounts("cannot export an empty chain".into()));
    }
    persist::write_file(path, &grid_pgm(&chain.samples.mapv(f64::from))?)
}

/// Gray-level grid of Bernoulli means, e.g. from [`Generator::generate_chain_with_means`].
pub fn mean_grid_export(means: &Array2<f64>, path: &Path) -> Result<()> {
    persist::write_file(path, &grid_pgm(means)?)
}
