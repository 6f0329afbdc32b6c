//! Logarithm of the modified Bessel function of the first kind.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const SERIES_LIMIT: f64 = 2.0e5;

/// `ln I_ν(z)` for `ν > −1`, `z ≥ 0`.
///
/// The ascending series is summed in log space with a running rescale, so
/// arguments far beyond the overflow point of `I_ν` itself are fine. Beyond
/// `z = 2e5` the Hankel expansion takes over when `z ≫ ν²`; anything else
/// reports [`Error::BesselOverflow`].
pub fn ln_bessel_i(nu: f64, z: f64) -> Result<f64> {
    if !(nu > -1.0) || !(z >= 0.0) || !nu.is_finite() {
        return Err(Error::invalid(format!("ln_bessel_i needs nu > -1, z >= 0 (nu={nu}, z={z})")));
    }
    if z == 0.0 {
        return Ok(if nu == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if z <= SERIES_LIMIT {
        return Ok(series(nu, z));
    }
    if z > 50.0 * (nu * nu + 1.0) {
        return Ok(hankel(nu, z));
    }
    Err(Error::BesselOverflow { argument: z })
}

fn series(nu: f64, z: f64) -> f64 {
    let lz2 = (0.5 * z).ln();
    let mut lt = nu * lz2 - ln_gamma(nu + 1.0);
    let mut reference = lt;
    let mut sum = 1.0;
    let mut m = 0.0_f64;
    loop {
        lt += 2.0 * lz2 - (m + 1.0).ln() - (m + nu + 1.0).ln();
        m += 1.0;
        if lt > reference {
            sum = sum * (reference - lt).exp() + 1.0;
            reference = lt;
        } else {
            let rel = (lt - reference).exp();
            sum += rel;
            // past the peak, terms only shrink
            if rel < 1e-17 * sum {
                break;
            }
        }
    }
    reference + sum.ln()
}

fn hankel(nu: f64, z: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        let kf = k as f64;
        let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * z);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    z - 0.5 * (2.0 * std::f64::consts::PI * z).ln() + sum.ln()
}
