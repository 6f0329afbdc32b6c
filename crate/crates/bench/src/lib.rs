//! Shared fixtures for the benchmarks in `benches/`.

use nalgebra::{DMatrix, DVector};
use transdens::numerics::BandedSymMatrix;
use transdens::Cir;

/// The square-root process base case: `(model, x0, xT, T)`.
pub fn cir_base() -> (Cir, DVector<f64>, DVector<f64>, f64) {
    (Cir::new(1.0, 1.0, 0.5), DVector::from_element(1, 0.75), DVector::from_element(1, 1.500024), 1.0)
}

/// Tridiagonal-block SPD matrix like a bridge Hessian: `order` states of
/// dimension `dim`, bandwidth `2·dim − 1`.
pub fn bridge_like_hessian(order: usize, dim: usize) -> BandedSymMatrix {
    let n = order * dim;
    let bw = 2 * dim - 1;
    let dense = DMatrix::from_fn(n, n, |i, j| {
        let d = i.abs_diff(j);
        if d == 0 {
            2.0 + 0.1 * (i % 3) as f64
        } else if d == dim {
            -1.0 + 0.05 * ((i + j) % 2) as f64
        } else if d <= bw {
            0.01
        } else {
            0.0
        }
    });
    BandedSymMatrix::from_dense(&dense, bw)
}
