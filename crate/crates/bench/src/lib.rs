//! Fixtures shared by the benchmarks.

use ndarray::{Array1, Array2};
use sgen_core::data::PIXELS;

/// Deterministic binary images with roughly MNIST-like density.
pub fn binary_images(rows: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, PIXELS), |(r, c)| {
        let v = (r as u64 * 2654435761 + c as u64 * 40503) % 97;
        f64::from(u8::from(v < 13))
    })
}

pub fn binary_image() -> Array1<u8> {
    binary_images(1).row(0).mapv(|v| v as u8)
}
