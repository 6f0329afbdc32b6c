//! Acceptance suite: one PASS/FAIL line per criterion, with its runtime
//! against the budget. Exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use transdens::continuous::{solve_lyapunov, solve_riccati, hamiltonian_second_derivs};
use transdens::discrete::{optimize_bridge, BridgeOptions};
use transdens::experiments::{run_accuracy_study, run_order_study, ExperimentConfig, StudyReport};
use transdens::models::{
    cir_exact_density, gbm_exact_density, linear_exact_density, pushforward_model, LogTransform,
};
use transdens::monte_carlo::{euler_maruyama_cells, MonteCarloSpec};
use transdens::mpp::integrate_mpp;
use transdens::weak_noise::{
    brute_force_density, laplace_density_delta, random_instance, weak_noise_density, GridSpec,
};
use transdens::{
    continuous_laplace_density, discrete_laplace_density, solve_mpp, Cir, ContinuousOptions, DiscreteOptions,
    DoubleWell, EulerStratonovich, Gbm, Linear, MppOptions, Scheme, SdeModel, StrangCir,
};

type Check = Result<String, String>;

/// (id, name, runtime budget in seconds, check)
type Criterion = (u32, &'static str, u64, fn() -> Check);

fn v(x: f64) -> DVector<f64> {
    DVector::from_element(1, x)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn gbm_exactness() -> Check {
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for r in [0.0, 0.5, 1.0] {
        for sigma in [0.3, 1.0] {
            for (x0, t, xt) in [(1.0, 1.0, 1.5), (1.0, 0.5, 0.8), (2.0, 2.0, 3.0)] {
                let est = continuous_laplace_density(&Gbm::new(r, sigma), &v(x0), &v(xt), t, &ContinuousOptions::default())
                    .map_err(|e| format!("r={r} σ={sigma} x0={x0} T={t} xT={xt}: {e}"))?;
                let exact = gbm_exact_density(r, sigma, x0, t, est.endpoint[0]).map_err(|e| e.to_string())?;
                let err = rel(est.value, exact);
                ensure(err <= 1e-4, || format!("r={r} σ={sigma} x0={x0} T={t} xT={xt}: rel err {err:.2e}"))?;
                worst = worst.max(err);
                cases += 1;
            }
        }
    }
    Ok(format!("{cases} cases, worst relative error {worst:.2e} (≤ 1e-4)"))
}

fn cir_anchor() -> Check {
    let cir = Cir::new(1.0, 1.0, 0.5);
    let opts = MppOptions::default();
    let shot = solve_mpp(&cir, &v(0.75), &v(1.500024), 1.0, &opts).map_err(|e| e.to_string())?;
    let l0 = shot.lambda0[0];
    ensure(shot.converged && (l0 + 2.106).abs() <= 0.005, || format!("Λ₀ = {l0}"))?;
    let from_l0 = integrate_mpp(&cir, &v(0.75), &v(-2.106), 1.0, &opts).map_err(|e| e.to_string())?;
    let end = from_l0.endpoint()[0];
    ensure((end - 1.500024).abs() <= 5e-4, || format!("endpoint from Λ₀ = −2.106 is {end}"))?;
    let est = continuous_laplace_density(&cir, &v(0.75), &v(1.500024), 1.0, &ContinuousOptions::default())
        .map_err(|e| e.to_string())?;
    let p = cir_exact_density(1.0, 1.0, 0.5, 0.75, 1.0, est.endpoint[0]).map_err(|e| e.to_string())?;
    let gap = (est.value - p).abs();
    ensure((est.value - 0.256).abs() <= 0.002, || format!("p̂ = {}", est.value))?;
    ensure((p - 0.257).abs() <= 0.001, || format!("p = {p}"))?;
    ensure((gap - 1e-3).abs() <= 5e-4, || format!("|p̂ − p| = {gap:.3e}"))?;
    Ok(format!("Λ₀ = {l0:.5}, x_T(−2.106) = {end:.6}, p̂ = {:.6}, p = {p:.6}, |p̂ − p| = {gap:.2e}", est.value))
}

fn slope(report: &StudyReport, label: &str) -> Result<f64, String> {
    report
        .slopes
        .iter()
        .find(|s| s.label == label)
        .and_then(|s| s.value)
        .ok_or_else(|| format!("no slope for {label}"))
}

fn order_study() -> Check {
    let cfg = ExperimentConfig::default();
    let rep = run_order_study(&cfg).map_err(|e| e.to_string())?;
    let euler = slope(&rep, "euler-stratonovich")?;
    let strang = slope(&rep, "strang-cir")?;
    ensure((euler - 1.0).abs() <= 0.15, || format!("Euler slope {euler:.3}"))?;
    ensure((strang - 2.0).abs() <= 0.2, || format!("Strang slope {strang:.3}"))?;
    let laplace = rep.rows.iter().find(|r| r.scheme == "continuous").and_then(|r| r.abs_err).ok_or("no reference row")?;
    let euler_005 = rep
        .rows
        .iter()
        .find(|r| r.scheme == "euler-stratonovich" && r.h == Some(0.05))
        .and_then(|r| r.abs_err)
        .ok_or("no Euler h = 0.05 row")?;
    ensure(euler_005 <= 2.0 * laplace, || format!("Euler error at h = 0.05 {euler_005:.3e} vs Laplace {laplace:.3e}"))?;
    Ok(format!(
        "slopes Euler {euler:.3}, Strang {strang:.3}; at h = 0.05 Euler error {euler_005:.2e} ≤ 2 × Laplace error {laplace:.2e}"
    ))
}

fn accuracy_scaling() -> Check {
    let cfg = ExperimentConfig::default();
    let rep = run_accuracy_study(&cfg).map_err(|e| e.to_string())?;
    for (name, values) in [("gamma", &cfg.gammas), ("T", &cfg.horizons)] {
        let (lo, hi) = values.iter().fold((f64::INFINITY, 0f64), |(a, b), &x| (a.min(x), b.max(x)));
        ensure(hi / lo >= 10.0 - 1e-9, || format!("{name} sweep spans less than a decade"))?;
    }
    ensure(rep.rows.iter().all(|r| r.rel_err.is_some()), || "a sweep cell failed".into())?;
    let g = slope(&rep, "gamma")?;
    let t = slope(&rep, "T")?;
    ensure((g - 2.0).abs() <= 0.3, || format!("γ slope {g:.3}"))?;
    ensure((t - 2.0).abs() <= 0.3, || format!("T slope {t:.3}"))?;
    let small = rep
        .rows
        .iter()
        .find(|r| r.param_name == "gamma" && r.param_value == 0.05)
        .and_then(|r| r.rel_err)
        .ok_or("no γ = 0.05 row")?;
    ensure(small < 1e-4, || format!("relative error at γ = 0.05 is {small:.2e}"))?;
    Ok(format!("slopes γ {g:.3}, T {t:.3}; relative error at γ = 0.05 {small:.2e}"))
}

fn double_well() -> Check {
    let dw = DoubleWell::new(1.0);
    let linearized = |t: f64| (2.0 * PI * 0.5 * ((2.0 * t).exp() - 1.0)).powf(-0.5);
    let mut worst: f64 = 0.0;
    let mut at3 = 0.0;
    for t in [0.5, 1.0, 2.0, 3.0] {
        let est = continuous_laplace_density(&dw, &v(0.0), &v(0.0), t, &ContinuousOptions::default())
            .map_err(|e| e.to_string())?;
        let err = (est.value - linearized(t)).abs();
        ensure(err <= 1e-6, || format!("t = {t}: p̂ = {} vs {}", est.value, linearized(t)))?;
        worst = worst.max(err);
        at3 = est.value;
    }
    let spec = MonteCarloSpec {
        x0: 0.0,
        horizon: 3.0,
        dt: 1e-3,
        paths: 1_000_000,
        seed: 17,
        centers: vec![0.0],
        cell_width: 0.05,
    };
    let cell = euler_maruyama_cells(|x| x - x * x * x, |_| 1.0, &spec).map_err(|e| e.to_string())?[0];
    let z = (cell.density - at3) / cell.std_err;
    ensure(z >= 3.0, || format!("Monte Carlo {:.4} ± {:.4} vs p̂ {at3:.4}", cell.density, cell.std_err))?;
    Ok(format!(
        "max |p̂ − linearized| {worst:.1e}; t = 3: p̂ = {at3:.4} below Monte Carlo {:.4} ± {:.4} by {z:.0} s.e.",
        cell.density, cell.std_err
    ))
}

fn coordinate_invariance() -> Check {
    let gbm = Gbm::new(0.5, 0.3);
    let logged = pushforward_model(gbm, LogTransform);
    let opts = ContinuousOptions::default();
    let mut worst: f64 = 0.0;
    for xt in [0.8, 1.4, 2.0] {
        let px = continuous_laplace_density(&gbm, &v(1.0), &v(xt), 1.0, &opts).map_err(|e| e.to_string())?;
        let pz = continuous_laplace_density(&logged, &v(0.0), &v(xt.ln()), 1.0, &opts).map_err(|e| e.to_string())?;
        let x_end = pz.endpoint[0].exp();
        let err = rel(pz.value / x_end, px.value);
        ensure(err <= 1e-4, || format!("xT = {xt}: p̂_z|∇η| = {} vs p̂_x = {}", pz.value / x_end, px.value))?;
        worst = worst.max(err);
    }
    Ok(format!("worst relative mismatch {worst:.2e} over 3 endpoints"))
}

fn linear_gaussian() -> Check {
    let cases: Vec<(&str, Linear, DVector<f64>, DVector<f64>)> = vec![
        ("OU", Linear::ou(1.2, 0.5, 0.7), v(0.1), v(0.9)),
        ("2-d", Linear::example_2d(), DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![0.3, -0.2])),
    ];
    let mut worst: f64 = 0.0;
    let mut worst_q: f64 = 0.0;
    for (name, m, x0, xt) in cases {
        let opts = ContinuousOptions::default();
        let est = continuous_laplace_density(&m, &x0, &xt, 1.0, &opts).map_err(|e| format!("{name}: {e}"))?;
        let end = DVector::from_vec(est.endpoint.clone());
        let exact = linear_exact_density(&m.a, &m.c, &m.g, &x0, 1.0, &end).map_err(|e| e.to_string())?;
        let err = rel(est.value, exact);
        ensure(err <= 1e-5, || format!("{name}: relative error {err:.2e}"))?;
        let mpp = solve_mpp(&m, &x0, &xt, 1.0, &opts.mpp).map_err(|e| e.to_string())?;
        let ric = solve_riccati(&m, &mpp, &DMatrix::zeros(m.dim(), m.dim())).map_err(|e| e.to_string())?;
        let qmax = ric.q.values().iter().map(|q| q.norm()).fold(0.0, f64::max);
        ensure(qmax <= 1e-8, || format!("{name}: |Q| reaches {qmax:.2e}"))?;
        worst = worst.max(err);
        worst_q = worst_q.max(qmax);
    }
    Ok(format!("worst relative error {worst:.2e}, max |Q| {worst_q:.1e}"))
}

fn brownian_discrete() -> Check {
    let mut worst: f64 = 0.0;
    for dim in [1, 2] {
        let bm = Linear::brownian(dim);
        let scheme = EulerStratonovich::new(bm.clone());
        let x0 = DVector::zeros(dim);
        let xt = DVector::from_fn(dim, |i, _| 0.7 - 0.9 * i as f64);
        let t = 1.3;
        let exact = linear_exact_density(&bm.a, &bm.c, &bm.g, &x0, t, &xt).map_err(|e| e.to_string())?;
        for n in [1, 2, 4, 8, 16] {
            let est = discrete_laplace_density(&scheme, &x0, &xt, t, n, &DiscreteOptions::default())
                .map_err(|e| format!("dim {dim}, N = {n}: {e}"))?;
            let err = rel(est.value, exact);
            ensure(err <= 1e-10, || format!("dim {dim}, N = {n}: relative error {err:.2e}"))?;
            worst = worst.max(err);
        }
    }
    Ok(format!("N ∈ {{1, 2, 4, 8, 16}}, dims 1 and 2: worst relative error {worst:.1e}"))
}

fn weak_noise() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let deltas = [1e-2, 1e-3, 1e-4];
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut worst_bf: f64 = 0.0;
    for k in 0..50 {
        let inst = random_instance(&mut rng, true);
        let weak = weak_noise_density(&inst).map_err(|e| e.to_string())?;
        let pts: Vec<(f64, f64)> = deltas.iter().map(|&d| (d, rel(laplace_density_delta(&inst, d), weak))).collect();
        let order = transdens::experiments::fit_loglog_slope(&pts).map_err(|e| e.to_string())?;
        ensure((order - 2.0).abs() <= 0.3, || format!("instance {k}: δ-order {order:.3}"))?;
        lo = lo.min(order);
        hi = hi.max(order);
        let delta = 0.05 * inst.singular_values().last().unwrap();
        let bf = brute_force_density(&inst, delta, &GridSpec::default()).map_err(|e| format!("instance {k}: {e}"))?;
        let lap = laplace_density_delta(&inst, delta);
        let err = rel(weak, bf).max(rel(lap, bf));
        ensure(err <= 0.01, || format!("instance {k} (n={}, m={}): brute force {bf} vs weak {weak}, Laplace {lap}", inst.n, inst.m))?;
        worst_bf = worst_bf.max(err);
    }
    Ok(format!("50 nonlinear instances: δ-order in [{lo:.3}, {hi:.3}], worst brute-force mismatch {:.2}%", 100.0 * worst_bf))
}

struct Case {
    name: &'static str,
    model: Box<dyn SdeModel>,
    schemes: Vec<Box<dyn Scheme>>,
    x0: DVector<f64>,
    xt: DVector<f64>,
    probes: Vec<(DVector<f64>, DVector<f64>)>,
}

fn builtin_cases() -> Vec<Case> {
    let two = |a: f64, b: f64| DVector::from_vec(vec![a, b]);
    let cir = Cir::new(1.0, 1.0, 0.5);
    vec![
        Case {
            name: "gbm",
            model: Box::new(Gbm::new(0.5, 0.3)),
            schemes: vec![Box::new(EulerStratonovich::new(Gbm::new(0.5, 0.3)))],
            x0: v(1.0),
            xt: v(1.4),
            probes: vec![(v(1.0), v(0.3)), (v(2.5), v(-0.4))],
        },
        Case {
            name: "cir",
            model: Box::new(cir),
            schemes: vec![Box::new(EulerStratonovich::new(cir)), Box::new(StrangCir::new(cir))],
            x0: v(0.75),
            xt: v(1.500024),
            probes: vec![(v(0.75), v(0.2)), (v(1.3), v(-0.3))],
        },
        Case {
            name: "ou",
            model: Box::new(Linear::ou(1.2, 0.5, 0.7)),
            schemes: vec![Box::new(EulerStratonovich::new(Linear::ou(1.2, 0.5, 0.7)))],
            x0: v(0.1),
            xt: v(0.9),
            probes: vec![(v(0.1), v(0.5)), (v(-1.0), v(-0.2))],
        },
        Case {
            name: "doublewell",
            model: Box::new(DoubleWell::new(1.0)),
            schemes: vec![Box::new(EulerStratonovich::new(DoubleWell::new(1.0)))],
            x0: v(0.0),
            xt: v(0.5),
            probes: vec![(v(0.0), v(0.3)), (v(1.2), v(-0.2))],
        },
        Case {
            name: "linear2d",
            model: Box::new(Linear::example_2d()),
            schemes: vec![Box::new(EulerStratonovich::new(Linear::example_2d()))],
            x0: two(0.0, 0.0),
            xt: two(0.3, -0.2),
            probes: vec![(two(0.0, 0.0), two(0.3, -0.1)), (two(1.0, -0.5), two(-0.2, 0.4))],
        },
        Case {
            name: "brownian",
            model: Box::new(Linear::brownian(2)),
            schemes: vec![Box::new(EulerStratonovich::new(Linear::brownian(2)))],
            x0: two(0.0, 0.0),
            xt: two(0.5, -0.3),
            probes: vec![(two(0.0, 0.0), two(0.3, -0.1))],
        },
    ]
}

fn property_suites() -> Check {
    let mut summary = Vec::new();
    for case in builtin_cases() {
        let name = case.name;
        let model = case.model.as_ref();
        // scheme round trips
        let mut worst_rt: f64 = 0.0;
        for scheme in &case.schemes {
            for (x, b) in &case.probes {
                for h in [0.0125, 0.05, 0.2] {
                    let y = scheme.forward(x, b, h).map_err(|e| format!("{name}/{}: {e}", scheme.name()))?;
                    let back = scheme.increment(x, &y, h).map_err(|e| e.to_string())?;
                    worst_rt = worst_rt.max((back - b).amax());
                }
            }
        }
        ensure(worst_rt <= 1e-8, || format!("{name}: round-trip error {worst_rt:.2e}"))?;

        // Hamiltonian conservation
        let mpp = solve_mpp(model, &case.x0, &case.xt, 1.0, &MppOptions::default()).map_err(|e| e.to_string())?;
        let h0 = mpp.initial_hamiltonian(model);
        let drift = mpp.hamiltonian_drift / (1.0 + h0.abs());
        ensure(mpp.converged && drift <= 1e-4, || format!("{name}: Hamiltonian drift {drift:.2e}"))?;

        // ψ stationarity at the optimal bridge
        let n = 20;
        for scheme in &case.schemes {
            let path = optimize_bridge(scheme.as_ref(), &case.x0, &mpp.endpoint().clone(), 1.0, n, &BridgeOptions::default())
                .map_err(|e| format!("{name}: {e}"))?;
            ensure(path.converged && path.grad_norm <= 1e-8 * n as f64, || {
                format!("{name}/{}: |∇ψ| = {:.2e}", scheme.name(), path.grad_norm)
            })?;
        }

        // Σ_t positive semidefinite, Riccati residual
        let dim = model.dim();
        let ric = solve_riccati(model, &mpp, &DMatrix::zeros(dim, dim)).map_err(|e| e.to_string())?;
        let lyap = solve_lyapunov(model, &mpp, &ric).map_err(|e| e.to_string())?;
        let min_eig = lyap
            .sigma
            .values()
            .iter()
            .map(|s| SymmetricEigen::new(s.clone()).eigenvalues.min())
            .fold(f64::INFINITY, f64::min);
        ensure(min_eig >= -1e-12, || format!("{name}: Σ_t eigenvalue {min_eig:.2e}"))?;

        let t = ric.q.times();
        let q = ric.q.values();
        let mut residual: f64 = 0.0;
        for i in 1..q.len() - 1 {
            let fd = (&q[i + 1] - &q[i - 1]) / (t[i + 1] - t[i - 1]);
            let (hxx, hxl, hll) = hamiltonian_second_derivs(model, &mpp.x_curve.values()[2 * i], &mpp.lambda_curve.values()[2 * i]);
            let rhs = -(hxx + &hxl * &q[i] + &q[i] * hxl.transpose() + &q[i] * hll * &q[i]);
            residual = residual.max((fd - &rhs).norm() / (1.0 + rhs.norm()));
        }
        ensure(residual <= 1e-3, || format!("{name}: Riccati residual {residual:.2e}"))?;
        summary.push(format!("{name} ok"));
    }
    Ok(format!(
        "round trips, Hamiltonian, ψ stationarity, Σ_t ⪰ 0, Riccati residual on {}",
        summary.len()
    ) + " builtin models")
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "GBM exactness", 5, gbm_exactness),
        (2, "CIR anchor", 5, cir_anchor),
        (3, "order study", 30, order_study),
        (4, "accuracy scaling", 60, accuracy_scaling),
        (5, "double well", 30, double_well),
        (6, "coordinate invariance", 5, coordinate_invariance),
        (7, "linear-Gaussian exactness", 5, linear_gaussian),
        (8, "Brownian discrete exactness", 1, brownian_discrete),
        (9, "weak-noise/Laplace equivalence", 30, weak_noise),
        (10, "property suites", 60, property_suites),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let within = elapsed <= Duration::from_secs(budget);
        let (status, detail) = match (&outcome, within) {
            (Ok(d), true) => ("PASS", d.clone()),
            (Ok(d), false) => ("FAIL", format!("{d}; over the runtime budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("[{status}] {id:>2} {name}: {detail} ({:.2} s / {budget} s)", elapsed.as_secs_f64());
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
