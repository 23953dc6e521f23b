//! Reverse-mode differentiation over dense `f64` arrays.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar walks the record in reverse and accumulates
//! gradients into the leaves created with [`Tape::leaf`].

mod adam;
mod ops;
mod tape;

pub use adam::Adam;
pub use ops::Conv2d;
pub use tape::{concat, Tape, Var};

/// Dynamic-rank dense array used for all values on the tape.
pub type Array = ndarray::ArrayD<f64>;

/// Central finite-difference gradient of a scalar function of one array.
pub fn numeric_gradient(f: impl Fn(&Array) -> f64, x: &Array, step: f64) -> Array {
    let mut g = Array::zeros(x.raw_dim());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = xp.as_slice_memory_order().unwrap()[i];
        xp.as_slice_memory_order_mut().unwrap()[i] = orig + step;
        let fp = f(&xp);
        xp.as_slice_memory_order_mut().unwrap()[i] = orig - step;
        let fm = f(&xp);
        xp.as_slice_memory_order_mut().unwrap()[i] = orig;
        g.as_slice_memory_order_mut().unwrap()[i] = (fp - fm) / (2.0 * step);
    }
    g
}

/// `max|a - n| / max(max|n|, floor)`: relative error of an analytic gradient `a`
/// against a numeric one `n`, with an absolute floor for near-zero gradients.
pub fn relative_error(analytic: &Array, numeric: &Array, floor: f64) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max);
    let scale = numeric.iter().map(|n| n.abs()).fold(0.0, f64::max).max(floor);
    diff / scale
}
