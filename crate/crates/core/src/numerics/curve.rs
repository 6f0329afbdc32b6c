use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Values that can be linearly interpolated between two samples.
pub trait Interpolate: Clone {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self;
}

impl Interpolate for f64 {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        a + (b - a) * w
    }
}

impl Interpolate for DVector<f64> {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        a + (b - a) * w
    }
}

impl Interpolate for DMatrix<f64> {
    fn lerp(a: &Self, b: &Self, w: f64) -> Self {
        a + (b - a) * w
    }
}

/// Time-indexed samples on a strictly increasing grid, linearly interpolated
/// between samples and clamped outside the grid.
#[derive(Debug, Clone)]
pub struct CurveTable<T> {
    times: Vec<f64>,
    values: Vec<T>,
}

impl<T: Interpolate> CurveTable<T> {
    pub fn new(times: Vec<f64>, values: Vec<T>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid(format!(
                "curve needs matching non-empty times/values ({} vs {})",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("curve times must be strictly increasing"));
        }
        Ok(Self { times, values })
    }

    /// Builds a curve by sampling `f` on `times`.
    pub fn from_fn(times: Vec<f64>, f: impl FnMut(f64) -> T) -> Result<Self> {
        let values = times.iter().copied().map(f).collect();
        Self::new(times, values)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn first(&self) -> &T {
        &self.values[0]
    }

    pub fn last(&self) -> &T {
        &self.values[self.values.len() - 1]
    }

    pub fn eval(&self, t: f64) -> T {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.values[0].clone();
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1].clone();
        }
        // first index with times[i] > t
        let hi = self.times.partition_point(|&s| s <= t);
        let lo = hi - 1;
        let w = (t - self.times[lo]) / (self.times[hi] - self.times[lo]);
        if w == 0.0 {
            return self.values[lo].clone();
        }
        T::lerp(&self.values[lo], &self.values[hi], w)
    }

    pub fn map<U: Interpolate>(&self, f: impl FnMut(&T) -> U) -> CurveTable<U> {
        CurveTable {
            times: self.times.clone(),
            values: self.values.iter().map(f).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, &T)> {
        self.times.iter().copied().zip(self.values.iter())
    }
}

/// `steps + 1` equally spaced times covering `[t0, t1]`, with the endpoint exact.
pub fn uniform_grid(t0: f64, t1: f64, steps: usize) -> Vec<f64> {
    let h = (t1 - t0) / steps as f64;
    (0..=steps)
        .map(|i| if i == steps { t1 } else { t0 + h * i as f64 })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolates_linearly_and_clamps() {
        let c = CurveTable::new(vec![0.0, 1.0, 3.0], vec![0.0, 2.0, 6.0]).unwrap();
        assert_eq!(c.eval(0.5), 1.0);
        assert_eq!(c.eval(2.0), 4.0);
        assert_eq!(c.eval(1.0), 2.0);
        assert_eq!(c.eval(-1.0), 0.0);
        assert_eq!(c.eval(10.0), 6.0);
    }

    #[test]
    fn rejects_non_increasing_times() {
        assert!(CurveTable::new(vec![0.0, 0.0], vec![1.0, 2.0]).is_err());
        assert!(CurveTable::new(vec![0.0, 1.0], vec![1.0]).is_err());
        assert!(CurveTable::<f64>::new(vec![], vec![]).is_err());
    }

    #[test]
    fn grid_endpoint_is_exact() {
        let g = uniform_grid(0.0, 0.3, 7);
        assert_eq!(g.len(), 8);
        assert_eq!(*g.last().unwrap(), 0.3);
    }
}
