use super::curve::CurveTable;

/// Composite trapezoid rule over `(times, values)` samples.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

/// Trapezoid integral of a scalar curve over its full time span.
pub fn quad_trapezoid(curve: &CurveTable<f64>) -> f64 {
    trapezoid(curve.times(), curve.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::curve::uniform_grid;

    #[test]
    fn constant_and_linear_are_exact() {
        let c = CurveTable::from_fn(uniform_grid(0.0, 1.0, 7), |_| 1.0).unwrap();
        assert_eq!(quad_trapezoid(&c), 1.0);
        let t = vec![0.0, 0.1, 0.35, 0.8, 1.0];
        let c = CurveTable::from_fn(t, |t| t).unwrap();
        assert!((quad_trapezoid(&c) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn exponential() {
        let c = CurveTable::from_fn(uniform_grid(0.0, 3.0, 2999), |t| (2.0 * t).exp()).unwrap();
        let exact = 0.5 * (6f64.exp() - 1.0);
        assert!(((quad_trapezoid(&c) - exact) / exact).abs() < 1e-3);
    }

    #[test]
    fn single_sample_is_zero() {
        let c = CurveTable::new(vec![0.0], vec![5.0]).unwrap();
        assert_eq!(quad_trapezoid(&c), 0.0);
    }
}
