use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::models::{Cir, SdeModel};

/// A one-step discretization driven by a single Gaussian increment `b ~ N(0, hI)`
/// per step, with an invertible map between `b` and the next state.
pub trait Scheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn model(&self) -> &dyn SdeModel;

    fn dim(&self) -> usize {
        self.model().dim()
    }

    /// The increment `b` that takes the scheme from `x` to `y` in time `h`.
    fn increment(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<DVector<f64>>;

    /// `log|∂b/∂y|`, the change-of-variables factor of one step.
    fn log_jacobian(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<f64>;

    /// The state reached from `x` with increment `b`.
    fn forward(&self, x: &DVector<f64>, b: &DVector<f64>, h: f64) -> Result<DVector<f64>>;

    /// Log density of the next state `y` given `x`.
    fn step_logdensity(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<f64> {
        let b = self.increment(x, y, h)?;
        Ok(gaussian_log(&b, h) + self.log_jacobian(x, y, h)?)
    }
}

/// `log` of the `N(0, hI)` density at `b`.
pub(crate) fn gaussian_log(b: &DVector<f64>, h: f64) -> f64 {
    -0.5 * b.len() as f64 * (2.0 * PI * h).ln() - 0.5 * b.norm_squared() / h
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("time step must be positive (got {h})")))
    }
}

/// Increment of the implicit midpoint-type step
/// `y = x + ½(f(x) + f(y))h + ½(g(x) + g(y))b`, i.e.
/// `b = (g(x) + g(y))⁻¹(2y − 2x − (f(x) + f(y))h)`.
pub fn euler_increment(
    model: &(impl SdeModel + ?Sized),
    x: &DVector<f64>,
    y: &DVector<f64>,
    h: f64,
) -> Result<DVector<f64>> {
    check_step(h)?;
    let s = model.diffusion(x) + model.diffusion(y);
    let r = (y - x) * 2.0 - (model.drift(x) + model.drift(y)) * h;
    if s.nrows() == 1 {
        let d = s[(0, 0)];
        if d == 0.0 || !d.is_finite() {
            return Err(Error::singular("g(x) + g(y)"));
        }
        return Ok(r / d);
    }
    s.lu().solve(&r).ok_or_else(|| Error::singular("g(x) + g(y)"))
}

/// `I − (h/2)∇f(y) − Σ_k (b_k/2)∇g_k(y)`.
fn implicit_matrix(model: &(impl SdeModel + ?Sized), y: &DVector<f64>, b: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = y.len();
    let mut m = DMatrix::identity(n, n) - model.drift_jacobian(y) * (0.5 * h);
    for (k, dgk) in model.diffusion_jacobians(y).iter().enumerate() {
        m -= dgk * (0.5 * b[k]);
    }
    m
}

/// `log|∂b/∂y| = log|I − (h/2)∇f(y) − Σ(b_k/2)∇g_k(y)| − log|(g(x)+g(y))/2|`.
///
/// A non-positive leading determinant means the step is too coarse for the
/// implicit map to be invertible.
pub fn euler_log_jacobian(model: &(impl SdeModel + ?Sized), x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<f64> {
    let b = euler_increment(model, x, y, h)?;
    let det = implicit_matrix(model, y, &b, h).determinant();
    if !(det > 0.0) {
        return Err(Error::StepTooCoarse(format!("implicit step determinant {det:.3e} at h = {h}")));
    }
    let avg = ((model.diffusion(x) + model.diffusion(y)) * 0.5).determinant().abs();
    Ok(det.ln() - avg.ln())
}

/// Log short-time transition density of the implicit step.
pub fn euler_step_logdensity(model: &(impl SdeModel + ?Sized), x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<f64> {
    let b = euler_increment(model, x, y, h)?;
    Ok(gaussian_log(&b, h) + euler_log_jacobian(model, x, y, h)?)
}

/// The implicit step solved for `y` by Newton's method.
pub fn euler_forward(model: &(impl SdeModel + ?Sized), x: &DVector<f64>, b: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
    check_step(h)?;
    let gx = model.diffusion(x);
    let fx = model.drift(x);
    let mut y = x + &fx * h + &gx * b;
    for _ in 0..100 {
        let resid = &y - x - (&fx + model.drift(&y)) * (0.5 * h) - (&gx + model.diffusion(&y)) * b * 0.5;
        if resid.amax() <= 1e-15 * (1.0 + y.amax()) {
            return Ok(y);
        }
        let step = implicit_matrix(model, &y, b, h)
            .lu()
            .solve(&resid)
            .ok_or_else(|| Error::StepTooCoarse("singular implicit step".into()))?;
        y -= step;
        if y.iter().any(|v| !v.is_finite()) {
            break;
        }
    }
    Err(Error::StepTooCoarse(format!("implicit step did not converge at h = {h}")))
}

/// Implicit, Stratonovich-consistent Euler step for any model.
#[derive(Debug, Clone)]
pub struct EulerStratonovich<M> {
    pub model: M,
}

impl<M: SdeModel> EulerStratonovich<M> {
    pub fn new(model: M) -> Self {
        Self { model }
    }
}

impl<M: SdeModel> Scheme for EulerStratonovich<M> {
    fn name(&self) -> &'static str {
        "euler-stratonovich"
    }
    fn model(&self) -> &dyn SdeModel {
        &self.model
    }
    fn increment(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        euler_increment(&self.model, x, y, h)
    }
    fn log_jacobian(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<f64> {
        euler_log_jacobian(&self.model, x, y, h)
    }
    fn forward(&self, x: &DVector<f64>, b: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        euler_forward(&self.model, x, b, h)
    }
}

/// Half-step drift flow `ξ + (x − ξ)e^{−λh/2}`.
fn drift_half(p: &Cir, x: f64, h: f64) -> f64 {
    p.xi + (x - p.xi) * (-0.5 * p.lambda * h).exp()
}

/// Half-step drift flow run backward from `y`.
fn drift_half_inv(p: &Cir, y: f64, h: f64) -> f64 {
    p.xi + (y - p.xi) * (0.5 * p.lambda * h).exp()
}

fn strang_inner(p: &Cir, x: f64, y: f64, h: f64) -> Result<(f64, f64)> {
    check_step(h)?;
    let x1 = drift_half(p, x, h);
    let x2 = drift_half_inv(p, y, h);
    if !(x1 >= 0.0) || !(x2 > 0.0) {
        return Err(Error::invalid(format!(
            "Strang step leaves the positive half-line (X1 = {x1}, X2 = {x2})"
        )));
    }
    Ok((x1, x2))
}

/// Increment of the drift–noise–drift splitting of the square-root model:
/// `b = (2/γ)(√X⁽²⁾ − √X⁽¹⁾)` with the drift half-flows `X⁽¹⁾` from `x`
/// and `X⁽²⁾` back from `y`.
pub fn strang_increment_cir(params: &Cir, x: f64, y: f64, h: f64) -> Result<f64> {
    let (x1, x2) = strang_inner(params, x, y, h)?;
    Ok(2.0 / params.gamma * (x2.sqrt() - x1.sqrt()))
}

/// `log|db/dy| = λh/2 − log(γ√X⁽²⁾)`.
pub fn strang_log_jacobian_cir(params: &Cir, x: f64, y: f64, h: f64) -> Result<f64> {
    let (_, x2) = strang_inner(params, x, y, h)?;
    Ok(0.5 * params.lambda * h - (params.gamma * x2.sqrt()).ln())
}

pub fn strang_step_logdensity(params: &Cir, x: f64, y: f64, h: f64) -> Result<f64> {
    let b = strang_increment_cir(params, x, y, h)?;
    Ok(-0.5 * (2.0 * PI * h).ln() - 0.5 * b * b / h + strang_log_jacobian_cir(params, x, y, h)?)
}

/// One drift–noise–drift step. The noise flow of `γ√X ∘ dB` moves `√X` by
/// `γb/2`; the step is only invertible while that stays non-negative.
pub fn strang_forward_cir(params: &Cir, x: f64, b: f64, h: f64) -> Result<f64> {
    check_step(h)?;
    let x1 = drift_half(params, x, h);
    if !(x1 >= 0.0) {
        return Err(Error::invalid(format!("Strang drift half-step left the domain ({x1})")));
    }
    let root = x1.sqrt() + 0.5 * params.gamma * b;
    if root < 0.0 {
        return Err(Error::invalid("noise sub-step crosses zero".to_string()));
    }
    Ok(drift_half(params, root * root, h))
}

/// Strang splitting of the square-root model with exact sub-flows. The drift
/// flow targets the Stratonovich level `ξ` of [`Cir`], so the splitting is
/// consistent with the same SDE as the Euler scheme.
#[derive(Debug, Clone, Copy)]
pub struct StrangCir {
    pub params: Cir,
}

impl StrangCir {
    pub fn new(params: Cir) -> Self {
        Self { params }
    }
}

fn one(v: &DVector<f64>) -> Result<f64> {
    if v.len() == 1 {
        Ok(v[0])
    } else {
        Err(Error::invalid("the square-root model is scalar"))
    }
}

impl Scheme for StrangCir {
    fn name(&self) -> &'static str {
        "strang-cir"
    }
    fn model(&self) -> &dyn SdeModel {
        &self.params
    }
    fn increment(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, strang_increment_cir(&self.params, one(x)?, one(y)?, h)?))
    }
    fn log_jacobian(&self, x: &DVector<f64>, y: &DVector<f64>, h: f64) -> Result<f64> {
        strang_log_jacobian_cir(&self.params, one(x)?, one(y)?, h)
    }
    fn forward(&self, x: &DVector<f64>, b: &DVector<f64>, h: f64) -> Result<DVector<f64>> {
        Ok(DVector::from_element(1, strang_forward_cir(&self.params, one(x)?, one(b)?, h)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{Gbm, Linear};
    use nalgebra::DMatrix;
    use crate::numerics::trapezoid;

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn cir() -> Cir {
        Cir::new(1.0, 1.0, 0.5)
    }

    #[test]
    fn euler_increment_examples() {
        let bm = Linear::brownian(1);
        assert_eq!(euler_increment(&bm, &s(0.0), &s(1.0), 1.0).unwrap()[0], 1.0);
        let gbm = Gbm::new(0.7, 0.4);
        for h in [0.01, 0.3] {
            let b = euler_increment(&gbm, &s(1.0), &s(1.0), h).unwrap()[0];
            assert!((b + 0.7 * h / 0.4).abs() < 1e-15);
        }
        // hand evaluation: f = 1 − x, g = ½√x
        let (x, y, h): (f64, f64, f64) = (0.75, 0.8, 0.1);
        let want = (2.0 * y - 2.0 * x - ((1.0 - x) + (1.0 - y)) * h) / (0.5 * x.sqrt() + 0.5 * y.sqrt());
        let b = euler_increment(&cir(), &s(x), &s(y), h).unwrap()[0];
        assert!((b - want).abs() < 1e-15);
        assert!((b - 0.062_483_931_874_050_01).abs() < 1e-12, "{b}");
    }

    #[test]
    fn euler_brownian_logdensity_is_gaussian() {
        let bm = Linear::brownian(1);
        let (x, y, h) = (0.3, -0.4, 0.2);
        let want = -0.5 * (2.0 * PI * h).ln() - (y - x) * (y - x) / (2.0 * h);
        assert!((euler_step_logdensity(&bm, &s(x), &s(y), h).unwrap() - want).abs() < 1e-14);
        // additive noise: only |I − h/2 ∇f| remains
        let ou = Linear::ou(2.0, 0.0, 1.0);
        let lj = euler_log_jacobian(&ou, &s(x), &s(y), h).unwrap();
        assert!((lj - (1.0 + 0.5 * h * 2.0_f64).ln()).abs() < 1e-14);
    }

    fn normalization(f: impl Fn(f64) -> Result<f64>, lo: f64, hi: f64) -> f64 {
        let k = 40_000;
        let ys: Vec<f64> = (0..=k).map(|i| lo + (hi - lo) * i as f64 / k as f64).collect();
        let ps: Vec<f64> = ys.iter().map(|&y| f(y).map(f64::exp).unwrap_or(0.0)).collect();
        trapezoid(&ys, &ps)
    }

    #[test]
    fn step_densities_integrate_to_one() {
        let c = cir();
        let total = normalization(|y| euler_step_logdensity(&c, &s(1.0), &s(y), 0.01), 0.3, 1.8);
        assert!((total - 1.0).abs() < 2e-3, "{total}");
        let total = normalization(|y| strang_step_logdensity(&c, 0.75, y, 0.05), 1e-6, 3.0);
        assert!((total - 1.0).abs() < 2e-3, "{total}");
        let total = normalization(|y| strang_step_logdensity(&c, 0.75, y, 0.5), 1e-6, 6.0);
        assert!((total - 1.0).abs() < 2e-3, "{total}");
    }

    #[test]
    fn round_trips() {
        let c = cir();
        let euler = EulerStratonovich::new(c);
        let strang = StrangCir::new(c);
        for &(x, b, h) in &[(0.75, 0.2, 0.1), (1.3, -0.3, 0.05), (0.4, 0.05, 0.2), (2.0, 0.0, 0.0125)] {
            for sch in [&euler as &dyn Scheme, &strang] {
                let y = sch.forward(&s(x), &s(b), h).unwrap();
                let back = sch.increment(&s(x), &y, h).unwrap()[0];
                assert!((back - b).abs() < 1e-10, "{}: {back} vs {b}", sch.name());
            }
        }
        let m = Linear::example_2d();
        let e2 = EulerStratonovich::new(m);
        let x = DVector::from_vec(vec![0.3, -0.1]);
        let b = DVector::from_vec(vec![0.2, -0.15]);
        let y = e2.forward(&x, &b, 0.1).unwrap();
        assert!((e2.increment(&x, &y, 0.1).unwrap() - b).amax() < 1e-12);
    }

    #[test]
    fn strang_zero_noise_step() {
        let c = cir();
        let y = strang_forward_cir(&c, 0.75, 0.0, 0.1).unwrap();
        assert!(strang_increment_cir(&c, 0.75, y, 0.1).unwrap().abs() < 1e-15);
        // the drift flows compose to a full step
        assert!((y - (1.0 - 0.25 * (-0.1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn strang_without_drift_is_squared_gaussian() {
        let c = Cir::new(0.0, 5.0, 0.5);
        let (x, h) = (1.0_f64, 0.05);
        for y in [0.8, 1.0, 1.3] {
            let root: f64 = y;
            let d = |r: f64| {
                let z = 2.0 / c.gamma * (r - x.sqrt());
                (-0.5 * z * z / h).exp() / (2.0 * PI * h).sqrt() * 2.0 / c.gamma / (2.0 * root.sqrt())
            };
            let want = d(root.sqrt());
            let got = strang_step_logdensity(&c, x, y, h).unwrap().exp();
            assert!(((got - want) / want).abs() < 1e-13);
        }
    }

    #[test]
    fn strang_matches_euler_to_first_order() {
        // typical Brownian-sized steps y − x ∝ √h, where b itself is O(√h)
        let c = cir();
        let x = 0.75;
        let hs = [0.02, 0.01, 0.005, 0.0025];
        let diffs: Vec<f64> = hs
            .iter()
            .map(|&h: &f64| {
                let y = x + 0.3 * h.sqrt();
                let e = euler_increment(&c, &s(x), &s(y), h).unwrap()[0];
                (e - strang_increment_cir(&c, x, y, h).unwrap()).abs()
            })
            .collect();
        for (d, h) in diffs.iter().zip(hs) {
            assert!(*d <= 0.05 * h * h, "{d} at h = {h}");
        }
        for w in diffs.windows(2) {
            assert!(w[0] / w[1] > 3.0, "{}", w[0] / w[1]);
        }
    }

    #[test]
    fn coarse_step_is_rejected() {
        let c = cir();
        // unstable linear drift: |1 − h/2| vanishes at h = 2
        let m = Linear::new(DMatrix::from_element(1, 1, 1.0), s(0.0), DMatrix::from_element(1, 1, 1.0));
        assert!(euler_log_jacobian(&m, &s(0.1), &s(0.3), 1.0).is_ok());
        assert!(matches!(
            euler_log_jacobian(&m, &s(0.1), &s(0.3), 3.0),
            Err(Error::StepTooCoarse(_))
        ));
        assert!(strang_increment_cir(&c, 0.5, -2.0, 0.1).is_err());
    }
}
