//! Symmetric banded matrices with a banded Cholesky factorization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Symmetric matrix with `bandwidth` sub-diagonals, storing only the lower band.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymMatrix {
    order: usize,
    bandwidth: usize,
    // row i holds entries (i, i - bandwidth) ..= (i, i); out-of-range slots stay zero
    bands: Vec<f64>,
}

impl BandedSymMatrix {
    pub fn zeros(order: usize, bandwidth: usize) -> Self {
        Self {
            order,
            bandwidth,
            bands: vec![0.0; order * (bandwidth + 1)],
        }
    }

    pub fn identity(order: usize) -> Self {
        let mut m = Self::zeros(order, 0);
        for i in 0..order {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Copies the band of a dense matrix (its lower triangle is read).
    pub fn from_dense(a: &DMatrix<f64>, bandwidth: usize) -> Self {
        let mut m = Self::zeros(a.nrows(), bandwidth);
        for i in 0..a.nrows() {
            for j in i.saturating_sub(bandwidth)..=i {
                m.set(i, j, a[(i, j)]);
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i >= self.order || i - j > self.bandwidth {
            None
        } else {
            Some(i * (self.bandwidth + 1) + (self.bandwidth - (i - j)))
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.bands[s])
    }

    /// Sets entries (i, j) and (j, i).
    ///
    /// # Panics
    /// If the entry lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let s = self
            .slot(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside band {}", self.bandwidth));
        self.bands[s] = v;
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.order, self.order, |i, j| self.get(i, j))
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.order);
        for i in 0..self.order {
            let lo = i.saturating_sub(self.bandwidth);
            let hi = (i + self.bandwidth).min(self.order.saturating_sub(1));
            y[i] = (lo..=hi).map(|j| self.get(i, j) * x[j]).sum();
        }
        y
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        let n = self.order;
        let kd = self.bandwidth;
        let mut l = Self::zeros(n, kd);
        for i in 0..n {
            for j in i.saturating_sub(kd)..=i {
                let k0 = i.saturating_sub(kd).max(j.saturating_sub(kd));
                let s = self.get(i, j) - (k0..j).map(|k| l.get(i, k) * l.get(j, k)).sum::<f64>();
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(Error::Indefinite { pivot: i });
                    }
                    l.set(i, i, s.sqrt());
                } else {
                    let v = s / l.get(j, j);
                    l.set(i, j, v);
                }
            }
        }
        Ok(BandedCholesky { l })
    }
}

/// Lower-triangular banded factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    // symmetric storage is reused; only (i, j) with j <= i is meaningful
    l: BandedSymMatrix,
}

impl BandedCholesky {
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.l.order).map(|i| self.l.get(i, i).ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.l.order;
        let kd = self.l.bandwidth;
        let mut y = b.clone();
        for i in 0..n {
            let s: f64 = (i.saturating_sub(kd)..i).map(|k| self.l.get(i, k) * y[k]).sum();
            y[i] = (y[i] - s) / self.l.get(i, i);
        }
        for i in (0..n).rev() {
            let hi = (i + kd).min(n.saturating_sub(1));
            let s: f64 = (i + 1..=hi).map(|k| self.l.get(k, i) * y[k]).sum();
            y[i] = (y[i] - s) / self.l.get(i, i);
        }
        y
    }
}

/// Log-determinant of a symmetric positive definite banded matrix.
pub fn banded_logdet(m: &BandedSymMatrix) -> Result<f64> {
    Ok(m.cholesky()?.logdet())
}
