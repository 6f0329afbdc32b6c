//! Config-driven studies: single density evaluations, the order-of-convergence
//! study for the discrete schemes, the accuracy-scaling study, the weak-noise
//! check and model validation.
//!
//! Every study returns a [`StudyReport`] whose rows share one fixed column
//! layout ([`Row`]); writing them out is left to the caller. Cells are
//! evaluated concurrently and returned in a fixed order, so the same config
//! always gives the same rows.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::continuous::{density_from_mpp, ContinuousOptions};
use crate::density::DensityEstimate;
use crate::discrete::{discrete_laplace_density, DiscreteOptions, EulerStratonovich, Scheme, StrangCir};
use crate::error::{Error, Result};
use crate::models::{
    cir_exact_density, gbm_exact_density, linear_exact_density, validate_derivatives, Cir, DerivativeCheck,
    DoubleWell, Gbm, Linear, SdeModel,
};
use crate::mpp::{integrate_mpp, solve_mpp, MppOptions, MppSolution};
use crate::numerics::ShootOptions;
use crate::weak_noise::{
    brute_force_density, laplace_density_delta, random_instance, weak_noise_density, GridSpec,
};

/// Version tag of the row layout; bump when columns change.
pub const CSV_VERSION: u32 = 1;

/// Column order of [`Row`].
pub const CSV_COLUMNS: [&str; 11] = [
    "study", "scheme", "model", "param_name", "param_value", "h", "p_hat", "p_exact", "abs_err", "rel_err",
    "diag_flags",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase", deny_unknown_fields)]
pub enum ModelSpec {
    Gbm { r: f64, sigma: f64 },
    Cir { lambda: f64, xi: f64, gamma: f64 },
    Ou { theta: f64, mu: f64, sigma: f64 },
    Doublewell { sigma: f64 },
    Linear2d,
    Brownian { dim: usize },
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Cir { lambda: 1.0, xi: 1.0, gamma: 0.5 }
    }
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Gbm { .. } => "gbm",
            ModelSpec::Cir { .. } => "cir",
            ModelSpec::Ou { .. } => "ou",
            ModelSpec::Doublewell { .. } => "doublewell",
            ModelSpec::Linear2d => "linear2d",
            ModelSpec::Brownian { .. } => "brownian",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelSpec::Linear2d => 2,
            ModelSpec::Brownian { dim } => *dim,
            _ => 1,
        }
    }

    pub fn build(&self) -> Box<dyn SdeModel> {
        match *self {
            ModelSpec::Gbm { r, sigma } => Box::new(Gbm::new(r, sigma)),
            ModelSpec::Cir { lambda, xi, gamma } => Box::new(Cir::new(lambda, xi, gamma)),
            ModelSpec::Ou { theta, mu, sigma } => Box::new(Linear::ou(theta, mu, sigma)),
            ModelSpec::Doublewell { sigma } => Box::new(DoubleWell::new(sigma)),
            ModelSpec::Linear2d => Box::new(Linear::example_2d()),
            ModelSpec::Brownian { dim } => Box::new(Linear::brownian(dim)),
        }
    }

    /// The same model with its noise intensity replaced.
    pub fn with_noise(&self, noise: f64) -> Result<ModelSpec> {
        Ok(match *self {
            ModelSpec::Gbm { r, .. } => ModelSpec::Gbm { r, sigma: noise },
            ModelSpec::Cir { lambda, xi, .. } => ModelSpec::Cir { lambda, xi, gamma: noise },
            ModelSpec::Ou { theta, mu, .. } => ModelSpec::Ou { theta, mu, sigma: noise },
            ModelSpec::Doublewell { .. } => ModelSpec::Doublewell { sigma: noise },
            _ => return Err(Error::invalid(format!("model '{}' has no scalar noise parameter", self.name()))),
        })
    }

    /// Closed-form transition density, where one exists.
    pub fn exact_density(&self, x0: &DVector<f64>, t: f64, xt: &DVector<f64>) -> Option<Result<f64>> {
        Some(match self {
            ModelSpec::Gbm { r, sigma } => gbm_exact_density(*r, *sigma, x0[0], t, xt[0]),
            ModelSpec::Cir { lambda, xi, gamma } => cir_exact_density(*lambda, *xi, *gamma, x0[0], t, xt[0]),
            ModelSpec::Ou { theta, mu, sigma } => {
                let m = Linear::ou(*theta, *mu, *sigma);
                linear_exact_density(&m.a, &m.c, &m.g, x0, t, xt)
            }
            ModelSpec::Linear2d | ModelSpec::Brownian { .. } => {
                let m = if let ModelSpec::Brownian { dim } = self { Linear::brownian(*dim) } else { Linear::example_2d() };
                linear_exact_density(&m.a, &m.c, &m.g, x0, t, xt)
            }
            ModelSpec::Doublewell { .. } => return None,
        })
    }

    fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::invalid(format!("{}: {name} must be positive, got {v}", self.name())))
            }
        };
        match *self {
            ModelSpec::Gbm { r, sigma } => {
                positive("sigma", sigma)?;
                if !r.is_finite() {
                    return Err(Error::invalid("gbm: r must be finite"));
                }
            }
            ModelSpec::Cir { lambda, xi, gamma } => {
                positive("lambda", lambda)?;
                positive("xi", xi)?;
                positive("gamma", gamma)?;
            }
            ModelSpec::Ou { theta, mu, sigma } => {
                positive("sigma", sigma)?;
                if !(theta.is_finite() && mu.is_finite()) {
                    return Err(Error::invalid("ou: theta and mu must be finite"));
                }
            }
            ModelSpec::Doublewell { sigma } => positive("sigma", sigma)?,
            ModelSpec::Linear2d => {}
            ModelSpec::Brownian { dim } => {
                if dim == 0 {
                    return Err(Error::invalid("brownian: dim must be at least 1"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeKind {
    EulerStratonovich,
    StrangCir,
}

impl SchemeKind {
    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::EulerStratonovich => "euler-stratonovich",
            SchemeKind::StrangCir => "strang-cir",
        }
    }

    pub fn build(&self, model: &ModelSpec) -> Result<Box<dyn Scheme>> {
        match (self, model) {
            (SchemeKind::EulerStratonovich, m) => Ok(Box::new(EulerStratonovich::new(m.build()))),
            (SchemeKind::StrangCir, ModelSpec::Cir { lambda, xi, gamma }) => {
                Ok(Box::new(StrangCir::new(Cir::new(*lambda, *xi, *gamma))))
            }
            (SchemeKind::StrangCir, m) => {
                Err(Error::invalid(format!("scheme 'strang-cir' needs model 'cir', got '{}'", m.name())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeakNoiseConfig {
    pub instances: usize,
    pub seed: u64,
    /// δ values for the Laplace-vs-limit order fit.
    pub deltas: Vec<f64>,
    /// Brute-force δ as a multiple of the smallest singular value of `HΣ^{1/2}`.
    pub brute_force_delta: f64,
    pub nonlinear: bool,
}

impl Default for WeakNoiseConfig {
    fn default() -> Self {
        Self {
            instances: 50,
            seed: 2024,
            deltas: vec![1e-2, 1e-3, 1e-4],
            brute_force_delta: 0.05,
            nonlinear: true,
        }
    }
}

/// Experiment description, read from JSON. Every field has a default; the
/// defaults are the CIR base case `λ = ξ = 1`, `γ = 0.5`, `x0 = 0.75`,
/// `T = 1`, `Λ₀ = −2.106`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub model: ModelSpec,
    pub x0: Vec<f64>,
    /// Terminal state. When present the path is found by shooting.
    pub xt: Option<Vec<f64>>,
    /// Initial co-state used when `xt` is absent: the terminal state is then
    /// wherever this co-state leads. Also the fixed co-state of the γ sweep.
    pub lambda0: Option<Vec<f64>>,
    /// Starting guess for the shooting.
    pub lambda0_guess: Option<Vec<f64>>,
    pub t: f64,
    pub steps_per_unit: usize,
    pub min_steps: usize,
    pub shoot_tol: f64,
    pub schemes: Vec<SchemeKind>,
    /// Discrete step sizes; each must divide `t`.
    pub h: Vec<f64>,
    pub gammas: Vec<f64>,
    pub horizons: Vec<f64>,
    pub weak_noise: WeakNoiseConfig,
    /// States at which `validate-model` probes the derivatives; `x0` and
    /// the terminal state when empty.
    pub validation_states: Vec<Vec<f64>>,
    pub output: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::default(),
            x0: vec![0.75],
            xt: None,
            lambda0: Some(vec![-2.106]),
            lambda0_guess: None,
            t: 1.0,
            steps_per_unit: 1000,
            min_steps: 200,
            shoot_tol: 1e-8,
            schemes: vec![SchemeKind::EulerStratonovich, SchemeKind::StrangCir],
            h: vec![0.2, 0.1, 0.05, 0.025, 0.0125],
            gammas: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5],
            horizons: vec![0.02, 0.05, 0.1, 0.2],
            weak_noise: WeakNoiseConfig::default(),
            validation_states: Vec::new(),
            output: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let n = self.model.dim();
        let check_dim = |name: &str, v: &[f64]| {
            if v.len() != n || v.iter().any(|x| !x.is_finite()) {
                Err(Error::invalid(format!("{name} must hold {n} finite values")))
            } else {
                Ok(())
            }
        };
        check_dim("x0", &self.x0)?;
        if let Some(v) = &self.xt {
            check_dim("xt", v)?;
        }
        if let Some(v) = &self.lambda0 {
            check_dim("lambda0", v)?;
        }
        if let Some(v) = &self.lambda0_guess {
            check_dim("lambda0_guess", v)?;
        }
        if self.xt.is_none() && self.lambda0.is_none() {
            return Err(Error::invalid("one of xt or lambda0 is required"));
        }
        if !(self.t > 0.0 && self.t.is_finite()) {
            return Err(Error::invalid("t must be positive"));
        }
        if self.steps_per_unit == 0 || self.min_steps == 0 {
            return Err(Error::invalid("steps_per_unit and min_steps must be positive"));
        }
        if !(self.shoot_tol > 0.0) {
            return Err(Error::invalid("shoot_tol must be positive"));
        }
        for s in &self.schemes {
            s.build(&self.model)?;
        }
        for &h in &self.h {
            steps_for(self.t, h)?;
        }
        if self.gammas.iter().chain(&self.horizons).any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::invalid("gammas and horizons must be positive"));
        }
        let wn = &self.weak_noise;
        if wn.deltas.iter().any(|d| !(*d > 0.0)) || !(wn.brute_force_delta > 0.0) {
            return Err(Error::invalid("weak_noise deltas must be positive"));
        }
        for s in &self.validation_states {
            check_dim("validation state", s)?;
        }
        Ok(())
    }

    /// [`validate`](Self::validate) plus the requirements of one study.
    pub fn validate_for(&self, study: Study) -> Result<()> {
        self.validate()?;
        match study {
            Study::Density | Study::ValidateModel => {}
            Study::Order => {
                if self.h.is_empty() || self.schemes.is_empty() {
                    return Err(Error::invalid("order study needs schemes and h values"));
                }
            }
            Study::Accuracy => {
                if self.lambda0.is_none() && !self.gammas.is_empty() {
                    return Err(Error::invalid("accuracy study needs lambda0 for the noise sweep"));
                }
                if self.model.exact_density(&self.x0(), self.t, &self.x0()).is_none() {
                    return Err(Error::invalid(format!("model '{}' has no closed-form density", self.model.name())));
                }
                if !self.horizons.is_empty() && self.model.dim() != 1 {
                    return Err(Error::invalid("the horizon sweep co-state rule is one-dimensional"));
                }
                for &g in &self.gammas {
                    self.model.with_noise(g)?;
                }
            }
            Study::WeakNoise => {
                if self.weak_noise.deltas.len() < 3 {
                    return Err(Error::invalid("weak-noise check needs at least 3 deltas"));
                }
            }
        }
        Ok(())
    }

    fn mpp_options(&self) -> MppOptions {
        MppOptions {
            steps_per_unit: self.steps_per_unit,
            min_steps: self.min_steps,
            shoot: ShootOptions { tol: self.shoot_tol, ..ShootOptions::default() },
            lambda0_guess: self.lambda0_guess.clone().map(DVector::from_vec),
            ..MppOptions::default()
        }
    }

    fn x0(&self) -> DVector<f64> {
        DVector::from_vec(self.x0.clone())
    }

    /// The most probable path of the base case: shot to `xt`, or integrated
    /// from `lambda0`.
    fn base_path(&self, model: &dyn SdeModel, t: f64) -> Result<MppSolution> {
        let opts = self.mpp_options();
        match (&self.xt, &self.lambda0) {
            (Some(xt), _) => {
                let mpp = solve_mpp(model, &self.x0(), &DVector::from_vec(xt.clone()), t, &opts)
                    .map_err(|e| e.in_stage("mpp"))?;
                if !mpp.converged {
                    return Err(Error::Shooting(format!("endpoint residual {:.3e}", mpp.endpoint_residual))
                        .in_stage("mpp"));
                }
                Ok(mpp)
            }
            (None, Some(l0)) => {
                integrate_mpp(model, &self.x0(), &DVector::from_vec(l0.clone()), t, &opts).map_err(|e| e.in_stage("mpp"))
            }
            (None, None) => Err(Error::invalid("one of xt or lambda0 is required")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Study {
    Density,
    Order,
    Accuracy,
    WeakNoise,
    ValidateModel,
}

/// Number of steps `t/h`, which must be a positive integer.
pub fn steps_for(t: f64, h: f64) -> Result<usize> {
    if !(h > 0.0 && h <= t * (1.0 + 1e-12)) {
        return Err(Error::invalid(format!("step h = {h} must lie in (0, t = {t}]")));
    }
    let n = (t / h).round();
    if ((t / h) - n).abs() > 1e-9 * n {
        return Err(Error::invalid(format!("step h = {h} does not divide t = {t}")));
    }
    Ok(n as usize)
}

/// One output line. Missing values (no closed form, failed cell) are `None`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Row {
    pub study: &'static str,
    pub scheme: String,
    pub model: &'static str,
    pub param_name: &'static str,
    pub param_value: f64,
    pub h: Option<f64>,
    pub p_hat: Option<f64>,
    pub p_exact: Option<f64>,
    pub abs_err: Option<f64>,
    pub rel_err: Option<f64>,
    /// `;`-separated diagnostics (`key=value` pairs and solver flags).
    pub diag_flags: String,
}

impl Row {
    fn compare(mut self, p_hat: f64, reference: Option<f64>) -> Self {
        self.p_hat = Some(p_hat);
        if let Some(r) = reference {
            self.abs_err = Some((p_hat - r).abs());
            self.rel_err = Some((p_hat - r).abs() / r.abs());
        }
        self
    }

    fn failed(mut self, err: &Error) -> Self {
        push_flag(&mut self.diag_flags, format!("failed={err}"));
        self
    }
}

fn push_flag(flags: &mut String, flag: impl AsRef<str>) {
    if !flags.is_empty() {
        flags.push(';');
    }
    flags.push_str(flag.as_ref());
}

fn point_flag(name: &str, v: &DVector<f64>) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("{name}={}", parts.join(" "))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Slope {
    pub label: String,
    /// `None` when fewer than three usable points remained.
    pub value: Option<f64>,
    pub points: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct StudyReport {
    pub rows: Vec<Row>,
    pub slopes: Vec<Slope>,
    /// Human-readable summary lines.
    pub notes: Vec<String>,
}

/// Least-squares slope of `log y` against `log x`. Points with a
/// non-positive or non-finite coordinate are dropped.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 3 {
        return Err(Error::invalid(format!("slope fit needs 3 positive points, got {}", logs.len())));
    }
    let k = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / k;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::invalid("slope fit needs distinct x values"));
    }
    Ok(sxy / sxx)
}

fn slope_of(label: String, points: &[(f64, f64)]) -> Slope {
    Slope {
        label,
        value: fit_loglog_slope(points).ok(),
        points: points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).count(),
    }
}

fn continuous_at(model: &dyn SdeModel, mpp: &MppSolution) -> Result<DensityEstimate> {
    density_from_mpp(model, mpp, &ContinuousOptions::default())
}

fn discrete_at(cfg: &ExperimentConfig, kind: SchemeKind, xt: &DVector<f64>, h: f64) -> Result<DensityEstimate> {
    let scheme = kind.build(&cfg.model)?;
    let steps = steps_for(cfg.t, h)?;
    discrete_laplace_density(scheme.as_ref(), &cfg.x0(), xt, cfg.t, steps, &DiscreteOptions::default())
}

fn base_row(study: &'static str, cfg: &ExperimentConfig, param_name: &'static str, param_value: f64) -> Row {
    Row {
        study,
        scheme: String::new(),
        model: cfg.model.name(),
        param_name,
        param_value,
        h: None,
        p_hat: None,
        p_exact: None,
        abs_err: None,
        rel_err: None,
        diag_flags: String::new(),
    }
}

/// Continuous density at the base case, then the discrete density for every
/// (scheme, h) in the config, all at the endpoint the path reached.
/// A failure of the continuous solve is an error.
pub fn run_density(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate_for(Study::Density)?;
    let model = cfg.model.build();
    let mpp = cfg.base_path(model.as_ref(), cfg.t)?;
    let xt = mpp.endpoint().clone();
    let cont = continuous_at(model.as_ref(), &mpp)?;
    let exact = cfg.model.exact_density(&cfg.x0(), cfg.t, &xt).transpose()?;

    let mut row = base_row("density", cfg, "T", cfg.t);
    row.scheme = "continuous".into();
    row.p_exact = exact;
    push_flag(&mut row.diag_flags, point_flag("x_t", &xt));
    push_flag(&mut row.diag_flags, point_flag("lambda0", &mpp.lambda0));
    for f in &cont.flags {
        push_flag(&mut row.diag_flags, f);
    }
    let mut report = StudyReport::default();
    report.rows.push(row.compare(cont.value, exact));
    report.notes.push(format!("x_T = {xt:?}", xt = xt.as_slice()));
    report.notes.push(format!("continuous p̂ = {:.6}", cont.value));
    if let Some(p) = exact {
        report.notes.push(format!("exact p    = {p:.6}"));
    }

    let cells: Vec<(SchemeKind, f64)> = cfg.schemes.iter().flat_map(|&s| sorted(&cfg.h).into_iter().map(move |h| (s, h))).collect();
    let results: Vec<_> = cells.par_iter().map(|&(s, h)| discrete_at(cfg, s, &xt, h)).collect();
    for ((s, h), res) in cells.into_iter().zip(results) {
        let mut row = base_row("density", cfg, "T", cfg.t);
        row.scheme = s.name().into();
        row.h = Some(h);
        row.p_exact = exact;
        match res {
            Ok(d) => {
                push_flag(&mut row.diag_flags, format!("iterations={}", d.discrete().map_or(0, |t| t.iterations)));
                report.notes.push(format!("{} h = {h}: p̂ = {:.6}", s.name(), d.value));
                report.rows.push(row.compare(d.value, exact));
            }
            Err(e) => {
                report.notes.push(format!("{} h = {h}: failed ({e})", s.name()));
                report.rows.push(row.failed(&e));
            }
        }
    }
    Ok(report)
}

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Discretization error `|p̂(·,h) − p̂(·,0)|` per scheme and step, plus the
/// Laplace error `|p − p̂(·,0)|` as a reference row (scheme `continuous`).
///
/// On scheme rows `abs_err`/`rel_err` are measured against the continuous
/// `p̂(·,0)`; on the reference row against the exact density.
pub fn run_order_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate_for(Study::Order)?;
    let model = cfg.model.build();
    let mpp = cfg.base_path(model.as_ref(), cfg.t)?;
    let xt = mpp.endpoint().clone();
    let p0 = continuous_at(model.as_ref(), &mpp)?.value;
    let exact = cfg.model.exact_density(&cfg.x0(), cfg.t, &xt).transpose()?;

    let mut report = StudyReport::default();
    let mut refrow = base_row("order", cfg, "T", cfg.t);
    refrow.scheme = "continuous".into();
    refrow.p_exact = exact;
    push_flag(&mut refrow.diag_flags, point_flag("x_t", &xt));
    push_flag(&mut refrow.diag_flags, "reference=exact");
    report.rows.push(refrow.compare(p0, exact));
    report.notes.push(format!("continuous p̂(·,0) = {p0:.6} at x_T = {:?}", xt.as_slice()));
    if let Some(p) = exact {
        report.notes.push(format!("Laplace error |p − p̂(·,0)| = {:.3e}", (p - p0).abs()));
    }

    let hs = sorted(&cfg.h);
    let cells: Vec<(SchemeKind, f64)> = cfg.schemes.iter().flat_map(|&s| hs.iter().map(move |&h| (s, h))).collect();
    let results: Vec<_> = cells.par_iter().map(|&(s, h)| discrete_at(cfg, s, &xt, h)).collect();
    let mut per_scheme: Vec<(SchemeKind, Vec<(f64, f64)>)> = cfg.schemes.iter().map(|&s| (s, Vec::new())).collect();
    for ((s, h), res) in cells.into_iter().zip(results) {
        let mut row = base_row("order", cfg, "h", h);
        row.scheme = s.name().into();
        row.h = Some(h);
        row.p_exact = exact;
        push_flag(&mut row.diag_flags, "reference=continuous");
        match res {
            Ok(d) => {
                let err = (d.value - p0).abs();
                per_scheme.iter_mut().find(|(k, _)| *k == s).unwrap().1.push((h, err));
                report.notes.push(format!("{} h = {h}: p̂ = {:.6}, |p̂(h) − p̂(0)| = {err:.3e}", s.name(), d.value));
                report.rows.push(row.compare(d.value, Some(p0)));
            }
            Err(e) => {
                report.notes.push(format!("{} h = {h}: failed ({e})", s.name()));
                report.rows.push(row.failed(&e));
            }
        }
    }
    for (s, pts) in per_scheme {
        report.slopes.push(slope_of(s.name().to_string(), &pts));
    }
    Ok(report)
}

/// Relative error of the continuous approximation as the noise intensity
/// varies at fixed `Λ₀` (config `lambda0`), and as the horizon varies with
/// `Λ₀ = −2e^{−T}` (one-dimensional models).
pub fn run_accuracy_study(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate_for(Study::Accuracy)?;
    let lambda0 = cfg.lambda0.clone().unwrap_or_default();
    let gammas = sorted(&cfg.gammas);
    let horizons = sorted(&cfg.horizons);

    enum Cell {
        Noise(f64),
        Horizon(f64),
    }
    let cells: Vec<Cell> =
        gammas.iter().map(|&g| Cell::Noise(g)).chain(horizons.iter().map(|&t| Cell::Horizon(t))).collect();
    let x0 = cfg.x0();
    let opts = cfg.mpp_options();
    let run = |cell: &Cell| -> Result<(DVector<f64>, f64, f64)> {
        let (spec, t, l0) = match *cell {
            Cell::Noise(g) => (cfg.model.with_noise(g)?, cfg.t, DVector::from_vec(lambda0.clone())),
            Cell::Horizon(t) => (cfg.model.clone(), t, DVector::from_element(1, -2.0 * (-t).exp())),
        };
        let model = spec.build();
        let mpp = integrate_mpp(model.as_ref(), &x0, &l0, t, &opts).map_err(|e| e.in_stage("mpp"))?;
        let xt = mpp.endpoint().clone();
        let p_hat = continuous_at(model.as_ref(), &mpp)?.value;
        let p = spec.exact_density(&x0, t, &xt).expect("checked above")?;
        Ok((xt, p_hat, p))
    };
    let results: Vec<_> = cells.par_iter().map(run).collect();

    let mut report = StudyReport::default();
    let mut noise_pts = Vec::new();
    let mut horizon_pts = Vec::new();
    for (cell, res) in cells.iter().zip(results) {
        let (name, value) = match *cell {
            Cell::Noise(g) => ("gamma", g),
            Cell::Horizon(t) => ("T", t),
        };
        let mut row = base_row("accuracy", cfg, name, value);
        row.scheme = "continuous".into();
        match res {
            Ok((xt, p_hat, p)) => {
                push_flag(&mut row.diag_flags, point_flag("x_t", &xt));
                row.p_exact = Some(p);
                let row = row.compare(p_hat, Some(p));
                let rel = row.rel_err.unwrap();
                match cell {
                    Cell::Noise(_) => noise_pts.push((value, rel)),
                    Cell::Horizon(_) => horizon_pts.push((value, rel)),
                }
                report.notes.push(format!("{name} = {value}: x_T = {:.6}, relative error {rel:.3e}", xt[0]));
                report.rows.push(row);
            }
            Err(e) => {
                report.notes.push(format!("{name} = {value}: failed ({e})"));
                report.rows.push(row.failed(&e));
            }
        }
    }
    if !gammas.is_empty() {
        report.slopes.push(slope_of("gamma".into(), &noise_pts));
    }
    if !horizons.is_empty() {
        report.slopes.push(slope_of("T".into(), &horizon_pts));
    }
    Ok(report)
}

/// Random pushforward instances: the Laplace density at each δ against the
/// weak-noise limit (with the fitted δ-order per instance), and a
/// brute-force quadrature of the mollified density.
pub fn run_weak_noise_check(cfg: &ExperimentConfig) -> Result<StudyReport> {
    cfg.validate_for(Study::WeakNoise)?;
    let wn = &cfg.weak_noise;
    let mut rng = ChaCha8Rng::seed_from_u64(wn.seed);
    let instances: Vec<_> = (0..wn.instances).map(|_| random_instance(&mut rng, wn.nonlinear)).collect();
    let deltas = sorted(&wn.deltas);
    let grid = GridSpec::default();
    let results: Vec<_> = instances
        .par_iter()
        .map(|inst| {
            let weak = weak_noise_density(inst)?;
            let laplace: Vec<f64> = deltas.iter().map(|&d| laplace_density_delta(inst, d)).collect();
            let bf_delta = wn.brute_force_delta * inst.singular_values().last().copied().unwrap_or(1.0);
            let bf = brute_force_density(inst, bf_delta, &grid);
            Ok::<_, Error>((weak, laplace, bf_delta, bf))
        })
        .collect();

    let mut report = StudyReport::default();
    let mut orders = Vec::new();
    let mut worst_bf: f64 = 0.0;
    for (k, (inst, res)) in instances.iter().zip(results).enumerate() {
        let tag = format!("instance={k};n={};m={}", inst.n, inst.m);
        let row = |scheme: &str, delta: f64| {
            let mut r = base_row("weak-noise", cfg, "delta", delta);
            r.model = "pushforward";
            r.scheme = scheme.into();
            r.diag_flags = tag.clone();
            r
        };
        let (weak, laplace, bf_delta, bf) = match res {
            Ok(v) => v,
            Err(e) => {
                report.rows.push(row("laplace", deltas[0]).failed(&e));
                continue;
            }
        };
        let mut gaps = Vec::new();
        for (&d, &l) in deltas.iter().zip(&laplace) {
            let mut r = row("laplace", d);
            r.p_exact = Some(weak);
            let r = r.compare(l, Some(weak));
            gaps.push((d, r.rel_err.unwrap()));
            report.rows.push(r);
        }
        let order = fit_loglog_slope(&gaps).ok();
        if let Some(o) = order {
            orders.push(o);
        }
        let mut r = row("brute-force", bf_delta);
        r.p_exact = Some(weak);
        match bf {
            Ok(v) => {
                let lap = laplace_density_delta(inst, bf_delta);
                let vs_laplace = ((v - lap) / lap).abs();
                push_flag(&mut r.diag_flags, format!("vs_laplace={vs_laplace:.3e}"));
                let r = r.compare(v, Some(weak));
                worst_bf = worst_bf.max(r.rel_err.unwrap()).max(vs_laplace);
                report.rows.push(r);
            }
            Err(e) => report.rows.push(r.failed(&e)),
        }
    }
    let min = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let max = orders.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    report.slopes.push(Slope { label: "delta-order-min".into(), value: orders.first().map(|_| min), points: orders.len() });
    report.slopes.push(Slope { label: "delta-order-max".into(), value: orders.first().map(|_| max), points: orders.len() });
    report.notes.push(format!("{} instances, fitted δ-order in [{min:.3}, {max:.3}]", orders.len()));
    report.notes.push(format!("worst brute-force relative discrepancy {worst_bf:.3e}"));
    Ok(report)
}

/// Finite-difference check of the model's analytic derivatives.
pub fn run_validate_model(cfg: &ExperimentConfig) -> Result<DerivativeCheck> {
    cfg.validate_for(Study::ValidateModel)?;
    let model = cfg.model.build();
    let mut states: Vec<DVector<f64>> = cfg.validation_states.iter().map(|s| DVector::from_vec(s.clone())).collect();
    if states.is_empty() {
        states.push(cfg.x0());
        if let Some(xt) = &cfg.xt {
            states.push(DVector::from_vec(xt.clone()));
        }
    }
    validate_derivatives(model.as_ref(), &states, 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn slope_examples() {
        let lin: Vec<_> = [0.1, 0.2, 0.4, 0.8].iter().map(|&x| (x, x)).collect();
        assert!((fit_loglog_slope(&lin).unwrap() - 1.0).abs() < 1e-12);
        let quad: Vec<_> = [0.1, 0.2, 0.4, 0.8].iter().map(|&x| (x, 3.0 * x * x)).collect();
        assert!((fit_loglog_slope(&quad).unwrap() - 2.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noisy: Vec<_> = (0..10)
            .map(|k| {
                let x = 0.01 * 1.5f64.powi(k);
                (x, x.powf(1.02) * (1.0 + rng.random_range(-0.02..0.02)))
            })
            .collect();
        assert!((fit_loglog_slope(&noisy).unwrap() - 1.02).abs() < 0.05);
        assert!(fit_loglog_slope(&[(1.0, 1.0), (2.0, -1.0), (3.0, 0.0)]).is_err());
    }

    #[test]
    fn config_defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn config_rejects_bad_input() {
        for bad in [
            r#"{"model": {"name": "heston"}}"#,
            r#"{"model": {"name": "cir", "lambda": 1, "xi": 1}}"#,
            r#"{"t": -1}"#,
            r#"{"h": [0.3]}"#,
            r#"{"h": [2.0]}"#,
            r#"{"x0": [1, 2]}"#,
            r#"{"model": {"name": "gbm", "r": 0, "sigma": 1}, "schemes": ["strang-cir"], "xt": [1]}"#,
            r#"{"lambda0": null}"#,
            r#"{"unknown_key": 1}"#,
        ] {
            assert!(ExperimentConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn steps_must_divide() {
        assert_eq!(steps_for(1.0, 0.0125).unwrap(), 80);
        assert_eq!(steps_for(1.0, 1.0).unwrap(), 1);
        assert!(steps_for(1.0, 0.3).is_err());
        assert!(steps_for(1.0, 0.0).is_err());
    }

    #[test]
    fn cir_density_report() {
        let cfg = ExperimentConfig { h: vec![0.05], ..Default::default() };
        let rep = run_density(&cfg).unwrap();
        let cont = &rep.rows[0];
        assert_eq!(cont.scheme, "continuous");
        assert!((cont.p_hat.unwrap() - 0.256).abs() < 0.002);
        assert!((cont.p_exact.unwrap() - 0.257).abs() < 0.001);
        assert_eq!(rep.rows.len(), 3);
        assert!(rep.rows.iter().all(|r| r.p_hat.is_some()));
    }

    #[test]
    fn gbm_and_brownian_density_reports() {
        let gbm = ExperimentConfig {
            model: ModelSpec::Gbm { r: 0.5, sigma: 0.3 },
            x0: vec![1.0],
            xt: Some(vec![1.4]),
            schemes: vec![SchemeKind::EulerStratonovich],
            h: vec![],
            ..Default::default()
        };
        let row = &run_density(&gbm).unwrap().rows[0];
        assert!(row.rel_err.unwrap() < 1e-4);

        let bm = ExperimentConfig {
            model: ModelSpec::Brownian { dim: 1 },
            x0: vec![0.0],
            xt: Some(vec![0.7]),
            schemes: vec![SchemeKind::EulerStratonovich],
            h: vec![1.0, 0.5, 0.25, 0.125, 0.0625],
            ..Default::default()
        };
        for row in run_density(&bm).unwrap().rows.iter().skip(1) {
            assert!(row.rel_err.unwrap() < 1e-10, "{row:?}");
        }
    }

    #[test]
    fn failed_cells_are_missing() {
        let cfg = ExperimentConfig {
            model: ModelSpec::Ou { theta: -1.0, mu: 0.0, sigma: 1.0 },
            x0: vec![0.0],
            xt: Some(vec![0.5]),
            t: 3.0,
            schemes: vec![SchemeKind::EulerStratonovich],
            h: vec![3.0, 1.0, 0.5, 0.25],
            ..Default::default()
        };
        let rep = run_order_study(&cfg).unwrap();
        let failed: Vec<_> = rep.rows.iter().filter(|r| r.diag_flags.contains("failed=")).collect();
        assert_eq!(failed.len(), 1);
        assert_eq!(failed[0].h, Some(3.0));
        assert!(failed[0].p_hat.is_none());
        assert_eq!(rep.slopes[0].points, 3);
    }

    #[test]
    fn reports_are_deterministic() {
        let cfg = ExperimentConfig { h: vec![0.1, 0.05], ..Default::default() };
        let a = run_order_study(&cfg).unwrap();
        let b = run_order_study(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
    }
}
