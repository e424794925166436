//! Scalar kernels shared by the models.

use ndarray::{Array2, ArrayBase, Data, Dimension, Zip};
use rand::Rng;

const P_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

/// Branch-stable logistic function, kept inside the open interval (0, 1).
pub fn logistic(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, P_MAX)
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn logistic_inplace<S, D>(a: &mut ArrayBase<S, D>)
where
    S: ndarray::DataMut<Elem = f64>,
    D: Dimension,
{
    a.mapv_inplace(logistic);
}

/// Independent Bernoulli draws, one per entry, returned as 0.0/1.0.
pub fn bernoulli<S, D, R>(probs: &ArrayBase<S, D>, rng: &mut R) -> ndarray::Array<f64, D>
where
    S: Data<Elem = f64>,
    D: Dimension,
    R: Rng + ?Sized,
{
    probs.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

pub fn standard_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(rand_distr::StandardNormal))
}

pub fn all_finite<S, D>(a: &ArrayBase<S, D>) -> bool
where
    S: Data<Elem = f64>,
    D: Dimension,
{
    a.iter().all(|v| v.is_finite())
}

/// `dst += scale * src`.
pub fn axpy<D: Dimension>(
    dst: &mut ndarray::Array<f64, D>,
    scale: f64,
    src: &ndarray::Array<f64, D>,
) {
    Zip::from(dst).and(src).for_each(|d, &s| *d += scale * s);
}
