//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary
//! exits nonzero if any criterion fails.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::Arc;
use std::time::{Duration, Instant};

use fujita_core::blowup::{ap_monitor, integrate_nonlinear, mass_growth_monitor, Classification, Controls};
use fujita_core::group::{make_group, GroupKind, GroupModel, GroupSpec, VolumeProfile};
use fujita_core::harness::{
    certify_abstract, emit_report, run_sweep, AbstractProfile, AbstractVerdict, ExperimentConfig, Format,
};
use fujita_core::heat::{verify_kernel_bounds_with, HeatSemigroup};
use fujita_core::mild::{
    decay_envelope_check, epsilon_threshold, existence_condition_with, fixed_point_residual,
    picard_solve_with, sandwich_check, small_data_generator, ExistenceOptions, MildSolution,
    Nonlinearity, PicardOptions,
};
use fujita_core::GridField;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2?}, limit {limit_s} s", elapsed)
    })
}

fn model(kind: GroupKind, extent: Vec<f64>, points: Vec<usize>) -> Arc<GroupModel> {
    Arc::new(make_group(&GroupSpec::new(kind, extent, points)).expect("valid lattice"))
}

fn torus() -> Arc<GroupModel> {
    model(GroupKind::Torus, vec![2.0 * PI], vec![16])
}

fn line(extent: f64, points: usize) -> Arc<GroupModel> {
    model(GroupKind::Euclidean, vec![extent], vec![points])
}

/// First Heisenberg group box with `hz = 3h²`, so the integral-line shifts
/// of the stencil land on lattice points.
fn heisenberg(h: f64, n: usize) -> Arc<GroupModel> {
    let hz = 3.0 * h * h;
    model(
        GroupKind::Heisenberg1,
        vec![h * n as f64, h * n as f64, hz * n as f64],
        vec![n, n, n],
    )
}

fn gaussian(x: f64, t: f64) -> f64 {
    (4.0 * PI * t).powf(-0.5) * (-x * x / (4.0 * t)).exp()
}

fn ode_blowup_time() -> Outcome {
    let start = Instant::now();
    let sg = HeatSemigroup::for_model(&torus()).map_err(|e| e.to_string())?;
    let u0 = GridField::constant(sg.model(), 1.0);
    let nl = Nonlinearity::power(2.0, 1.0).map_err(|e| e.to_string())?;
    let r = integrate_nonlinear(&sg, &u0, &nl, &Controls::default()).map_err(|e| e.to_string())?;
    let oracle = 1f64.powf(1.0 - 2.0) / (2.0 - 1.0);
    let t_star = r.t_star.ok_or("no blow-up time")?;
    ensure(r.classification == Classification::Blowup, || format!("{:?}", r.classification))?;
    ensure((t_star / oracle - 1.0).abs() <= 0.02, || format!("T* = {t_star}"))?;
    within(start.elapsed(), 5.0, "integration")?;
    Ok(format!("T* = {t_star:.6} (oracle {oracle}) in {:.2?}", start.elapsed()))
}

fn semigroup_oracle() -> Outcome {
    let g = line(40.0, 512);
    let sg = HeatSemigroup::for_model(&g).map_err(|e| e.to_string())?;
    let start = Instant::now();
    let h01 = GridField::from_fn(&g, |c| gaussian(c[0], 0.1));
    let out = sg.apply(&h01, 0.4).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let exact = GridField::from_fn(&g, |c| gaussian(c[0], 0.5));
    let rel = out.sup_distance(&exact) / exact.sup_norm();
    let mass_drift = (out.integral() - h01.integral()).abs() / h01.integral();
    ensure(rel <= 1e-6, || format!("relative sup error {rel:e}"))?;
    ensure(mass_drift <= 1e-10, || format!("mass drift {mass_drift:e}"))?;
    within(elapsed, 1.0, "propagation")?;
    Ok(format!("sup error {rel:.2e}, mass drift {mass_drift:.2e}, {elapsed:.2?}"))
}

fn picard_invariants(sol: &MildSolution) -> Result<(f64, f64), String> {
    let scale = sol
        .snapshots
        .iter()
        .flat_map(|u| u.iter())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    ensure(sol.worst_decrease <= 1e-12 * scale, || {
        format!("iterates decreased by {:e}", sol.worst_decrease)
    })?;
    for (u, low) in sol.snapshots.iter().zip(&sol.lower) {
        ensure(u.iter().zip(low).all(|(a, b)| *a >= b - 1e-12 * scale), || {
            "solution fell below the linear flow".into()
        })?;
    }
    let fp = fixed_point_residual(sol);
    ensure(fp < sol.tol, || format!("extra application moved the solution by {fp:e}"))?;
    Ok((sol.worst_decrease, fp))
}

fn dichotomy() -> Outcome {
    let start = Instant::now();
    let g = line(256.0, 2048);
    let sg = HeatSemigroup::for_model(&g).map_err(|e| e.to_string())?;
    let h1 = small_data_generator(&sg, 1.0, 1.0).map_err(|e| e.to_string())?;
    let u0 = h1.scaled(0.5);

    let sub = Nonlinearity::power(2.0, 1.0).map_err(|e| e.to_string())?;
    let controls = Controls {
        dt0: 0.05,
        dt_max: Some(1.0),
        t_max: 200.0,
        ..Default::default()
    };
    let r = integrate_nonlinear(&sg, &u0, &sub, &controls).map_err(|e| e.to_string())?;
    ensure(r.classification == Classification::Blowup, || format!("p = 2: {:?}", r.classification))?;
    let t_star = r.t_star.ok_or("p = 2: no blow-up time")?;
    ensure(t_star < 200.0, || format!("p = 2: T* = {t_star}"))?;

    let sup = Nonlinearity::power(4.0, 1.0).map_err(|e| e.to_string())?;
    let profile = VolumeProfile::euclidean(1);
    let opts = ExistenceOptions::with_s_cut(100.0);
    let search = epsilon_threshold(&sg, &h1, &sup, Some(&profile), &opts, 1e-6).map_err(|e| e.to_string())?;
    ensure(search.threshold > 0.5, || format!("0.5·h₁ is not certified (ε* = {})", search.threshold))?;
    let eps = 0.5 * search.threshold;
    let data = h1.scaled(eps);
    let cert = existence_condition_with(&sg, &data, &sup, Some(&profile), &opts).map_err(|e| e.to_string())?;
    ensure(cert.is_satisfied(), || format!("certificate {:?}", cert.verdict))?;
    let sol = picard_solve_with(
        &sg,
        &data,
        &sup,
        &PicardOptions {
            horizon: 100.0,
            steps: 1000,
            tol: 1e-8,
            k_max: 200,
        },
    )
    .map_err(|e| e.to_string())?;
    picard_invariants(&sol)?;
    let sw = sandwich_check(&sol, &cert).map_err(|e| e.to_string())?;
    ensure(sw.passed, || format!("sandwich excess {:?}", (sw.lower_excess, sw.upper_excess)))?;
    let c = cert.constant_c.ok_or("no constant C")?;
    let env = decay_envelope_check(&sol, 1.0, eps * c).map_err(|e| e.to_string())?;
    ensure(env.passed, || format!("envelope ratio {}", env.max_ratio))?;
    within(start.elapsed(), 120.0, "dichotomy runs")?;
    Ok(format!(
        "p=2 T* = {t_star:.3}; p=4 ε = {eps:.4} (ε* = {:.4}), {} Picard iterations, envelope ratio {:.3}, {:.2?}",
        search.threshold,
        sol.iterations,
        env.max_ratio,
        start.elapsed()
    ))
}

fn ap_sharpness() -> Outcome {
    let sg = HeatSemigroup::for_model(&torus()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (p, c) in [(2.0, 1.0), (2.0, 2.0), (3.0, 1.0)] {
        let nl = Nonlinearity::power(p, 1.0).map_err(|e| e.to_string())?;
        let u0 = GridField::constant(sg.model(), c);
        let blow = integrate_nonlinear(&sg, &u0, &nl, &Controls::default()).map_err(|e| e.to_string())?;
        let t_star = blow.t_star.ok_or("no blow-up time")?;
        let times: Vec<f64> = (1..=40).map(|k| 0.05 * k as f64 * t_star).collect();
        let m = ap_monitor(&sg, &u0, &nl, &times).map_err(|e| e.to_string())?;
        let cross = m.crossing_time.ok_or("bound never reached")?;
        let rel = (cross / t_star - 1.0).abs();
        ensure(rel <= 0.02, || format!("p = {p}, u₀ = {c}: crossing {cross} vs T* {t_star}"))?;
        worst = worst.max(rel);
    }
    Ok(format!("worst relative gap between crossing and T*: {worst:.2e}"))
}

fn critical_mass_growth() -> Outcome {
    let g = line(256.0, 1024);
    let sg = HeatSemigroup::for_model(&g).map_err(|e| e.to_string())?;
    let s: Vec<f64> = (1..=100).map(|k| k as f64).collect();
    let r = mass_growth_monitor(&sg, 3.0, &s, 0.05).map_err(|e| e.to_string())?;
    let oracle = (4.0 * PI).recip() / 3f64.sqrt();
    let worst = r
        .products
        .iter()
        .map(|v| (v / oracle - 1.0).abs())
        .fold(0.0, f64::max);
    ensure(worst <= 0.05, || format!("worst deviation {worst}"))?;
    ensure(r.flatness <= 0.05, || format!("flatness {}", r.flatness))?;
    Ok(format!("max deviation from (4π)⁻¹3^(-1/2): {worst:.2e}"))
}

fn jensen_substochastic() -> Outcome {
    const FIELDS: usize = 10_000;
    let models = [
        ("torus", model(GroupKind::Torus, vec![2.0 * PI], vec![64]), 0.1),
        ("euclidean", line(32.0, 128), 0.25),
        ("heisenberg1", heisenberg(0.34, 12), 0.05),
    ];
    let mut summary = Vec::new();
    for (name, g, t) in models {
        let sg = HeatSemigroup::for_model(&g).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(20);
        let mut worst = f64::INFINITY;
        for k in 0..FIELDS {
            let p = 1.1 + 3.9 * rng.random::<f64>();
            let shape = 1.0 + 4.0 * rng.random::<f64>();
            let f: Vec<f64> = (0..g.len()).map(|_| rng.random::<f64>().powf(shape)).collect();
            let fp: Vec<f64> = f.iter().map(|v| v.powf(p)).collect();
            let lhs = sg.apply_values(&fp, t);
            let rhs = sg.apply_values(&f, t);
            for (a, b) in lhs.iter().zip(&rhs) {
                // the oracle power is taken on the clamped value
                let gap = a - b.max(0.0).powf(p);
                worst = worst.min(gap);
                if gap < -1e-12 {
                    return Err(format!("{name}: field {k}, p = {p}: gap {gap:e}"));
                }
            }
        }
        summary.push(format!("{name} {worst:.1e}"));
    }
    Ok(format!("{FIELDS} fields per model; worst gaps: {}", summary.join(", ")))
}

fn heisenberg_scaling() -> Outcome {
    let start = Instant::now();
    let g = heisenberg(0.34, 64);
    let sg = HeatSemigroup::for_model(&g).map_err(|e| e.to_string())?;
    let times = [0.5, 1.0, 2.0, 4.0];
    let curve = sg.kernel_curve(&times).map_err(|e| e.to_string())?;
    let slope = curve.log_slope();
    ensure((slope + 2.0).abs() <= 0.3, || format!("slope {slope}"))?;
    let radii: Vec<f64> = (0..=6).map(|k| 0.5 * k as f64).collect();
    let b = verify_kernel_bounds_with(&sg, &times, &radii, 2.0).map_err(|e| e.to_string())?;
    ensure(
        b.lower_prefactor > 0.0 && b.upper_prefactor > 0.0 && b.lower_rate > 0.0 && b.upper_rate > 0.0,
        || format!("nonpositive envelope constants {b:?}"),
    )?;
    ensure(b.passed, || format!("envelope ratio {} at slack {}", b.violation_ratio, b.slack))?;
    within(start.elapsed(), 300.0, "kernel scaling")?;
    Ok(format!(
        "slope {slope:.3}, rates ({:.3}, {:.3}), envelope ratio {:.3}, {:.2?}",
        b.lower_rate,
        b.upper_rate,
        b.violation_ratio,
        start.elapsed()
    ))
}

fn abstract_certifier() -> Outcome {
    let poly = AbstractProfile::Polynomial { a: 4.0, b: 4.0 };
    let crit = certify_abstract(poly, 1.5, 1.0, 1.0, 0.2, 1.0).map_err(|e| e.to_string())?;
    ensure(crit.verdict == AbstractVerdict::Divergent, || format!("p = 1.5: {:?}", crit.verdict))?;
    let mut worst: f64 = 0.0;
    for (eps, c) in [(0.1, 1.0), (0.37, 2.5), (1.0, 0.3)] {
        let r = certify_abstract(poly, 1.6, 1.0, 1.0, eps, c).map_err(|e| e.to_string())?;
        ensure(r.verdict == AbstractVerdict::FiniteBound, || "p = 1.6 not finite".into())?;
        // ∫₁^∞ s^{-1.2} ds = 5
        let oracle = 5.0 * f64::powf(eps, 0.6) * c;
        let err = (r.bound.ok_or("missing bound")? - oracle).abs() / oracle;
        ensure(err <= 1e-12, || format!("relative error {err:e}"))?;
        worst = worst.max(err);
    }
    let exp = certify_abstract(AbstractProfile::Exponential { d: 3.0 }, 2.0, 1.0, 1.0, 0.1, 1.0)
        .map_err(|e| e.to_string())?;
    ensure(exp.verdict == AbstractVerdict::FiniteBound, || "exponential d = 3 not finite".into())?;
    Ok(format!("critical case divergent, closed form matched to {worst:.1e}, exponential finite"))
}

fn picard_monotonicity() -> Outcome {
    let mut solves = 0;
    // small-time torus run with large data, where the iteration does real work
    let g = torus();
    let sg = HeatSemigroup::for_model(&g).map_err(|e| e.to_string())?;
    let u0 = GridField::from_fn(&g, |c| 1.0 + 0.5 * c[0].cos());
    let nl = Nonlinearity::power(2.0, 1.0).map_err(|e| e.to_string())?;
    let opts = PicardOptions {
        horizon: 0.3,
        steps: 300,
        tol: 1e-10,
        k_max: 200,
    };
    let sol = picard_solve_with(&sg, &u0, &nl, &opts).map_err(|e| e.to_string())?;
    let (dec, fp) = picard_invariants(&sol)?;
    solves += 1;
    // Gaussian data at p = 3 and p = 4 on the line
    let line = line(256.0, 2048);
    let sg = HeatSemigroup::for_model(&line).map_err(|e| e.to_string())?;
    let mut worst_fp = fp;
    for (p, eps) in [(3.0, 0.5), (4.0, 0.8)] {
        let nl = Nonlinearity::power(p, 1.0).map_err(|e| e.to_string())?;
        let u0 = small_data_generator(&sg, 1.0, eps).map_err(|e| e.to_string())?;
        let sol = picard_solve_with(
            &sg,
            &u0,
            &nl,
            &PicardOptions {
                horizon: 20.0,
                steps: 200,
                tol: 1e-9,
                k_max: 200,
            },
        )
        .map_err(|e| e.to_string())?;
        let (_, fp) = picard_invariants(&sol)?;
        worst_fp = worst_fp.max(fp);
        solves += 1;
    }
    Ok(format!(
        "{solves} converged solves, worst decrease {dec:.1e}, worst fixed-point residual {worst_fp:.2e}"
    ))
}

const SWEEP: &str = r#"
seed = 11

[group]
kind = "euclidean"
extent = [128.0]
points = [512]

[nonlinearity]
p = [2.0, 4.0]

[data]
family = "kernel"
epsilon = [0.25, 0.5]

[controls]
t_max = 30.0
dt0 = 0.05
dt_max = 0.5
picard_steps = 150
jensen_probes = 8
"#;

fn determinism() -> Outcome {
    let cfg = ExperimentConfig::parse(SWEEP, None).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (k, workers) in [0usize, 1, 0].into_iter().enumerate() {
        let table = fujita_core::par::with_workers(workers, || run_sweep(&cfg)).map_err(|e| e.to_string())?;
        for format in [Format::Json, Format::Csv] {
            let path = emit_report(&table, &dir.path().join(k.to_string()), "sweep", format)
                .map_err(|e| e.to_string())?;
            outputs.push((format, std::fs::read(path).map_err(|e| e.to_string())?));
        }
    }
    for (format, bytes) in &outputs[2..] {
        let first = &outputs.iter().find(|(f, _)| f == format).expect("first run").1;
        ensure(bytes == first, || format!("{format:?} output differs between runs"))?;
    }
    Ok(format!("{} reports byte-identical across 3 runs", outputs.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("ode-blowup-time", ode_blowup_time),
        ("semigroup-oracle", semigroup_oracle),
        ("fujita-dichotomy", dichotomy),
        ("ap-sharpness", ap_sharpness),
        ("critical-mass-growth", critical_mass_growth),
        ("jensen-substochastic", jensen_substochastic),
        ("heisenberg-kernel-scaling", heisenberg_scaling),
        ("abstract-certifier", abstract_certifier),
        ("picard-monotonicity", picard_monotonicity),
        ("sweep-determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let total = criteria.len();
    for (k, (name, f)) in criteria.into_iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|s| name.contains(s.as_str())) {
            continue;
        }
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("[{}/{total}] {name}: PASS ({detail})", k + 1),
            Err(reason) => {
                failed += 1;
                println!("[{}/{total}] {name}: FAIL ({reason})", k + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
