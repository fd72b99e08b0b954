use std::f64::consts::PI;
use std::sync::Arc;

use fujita_core::blowup::{
    ap_monitor, integrate_nonlinear, mass_growth_monitor, Classification, Controls, MassGrowth,
    MonitorVerdict,
};
use fujita_core::group::{make_group, GroupKind, GroupModel, GroupSpec, VolumeProfile};
use fujita_core::heat::{apply_semigroup, HeatSemigroup};
use fujita_core::mild::{existence_condition_with, small_data_generator, ExistenceOptions, Nonlinearity};
use fujita_core::{Error, GridField};

fn model(kind: GroupKind, extent: Vec<f64>, points: Vec<usize>) -> Arc<GroupModel> {
    Arc::new(make_group(&GroupSpec::new(kind, extent, points)).unwrap())
}

fn line(extent: f64, points: usize) -> HeatSemigroup {
    HeatSemigroup::for_model(&model(GroupKind::Euclidean, vec![extent], vec![points])).unwrap()
}

fn long_run() -> Controls {
    Controls {
        dt0: 0.1,
        dt_max: Some(1.0),
        t_max: 1000.0,
        ..Controls::default()
    }
}

fn classify(sg: &HeatSemigroup, p: f64, eps: f64) -> Classification {
    let u0 = small_data_generator(sg, 1.0, eps).unwrap();
    let nl = Nonlinearity::power(p, 1.0).unwrap();
    integrate_nonlinear(sg, &u0, &nl, &long_run()).unwrap().classification
}

#[test]
fn line_dichotomy_direction() {
    let sg = line(512.0, 2048);
    for p in [1.5, 2.0, 2.5] {
        assert_eq!(classify(&sg, p, 0.5), Classification::Blowup, "p = {p}");
    }
    for p in [4.0, 5.0] {
        assert_eq!(classify(&sg, p, 0.5), Classification::GlobalSoFar, "p = {p}");
    }
}

#[test]
fn blowup_time_is_stable_under_refinement() {
    let nl = Nonlinearity::power(2.0, 1.0).unwrap();
    let controls = Controls {
        dt0: 0.05,
        dt_max: Some(1.0),
        ..Controls::default()
    };
    let t_star = |points: usize| {
        let sg = line(256.0, points);
        let u0 = small_data_generator(&sg, 1.0, 0.5).unwrap();
        integrate_nonlinear(&sg, &u0, &nl, &controls).unwrap().t_star.unwrap()
    };
    let (coarse, fine) = (t_star(1024), t_star(2048));
    assert!((coarse / fine - 1.0).abs() < 0.05, "{coarse} vs {fine}");
}

#[test]
fn large_data_above_critical_blows_up_with_good_fit() {
    let sg = line(64.0, 512);
    let u0 = small_data_generator(&sg, 0.5, 5.0).unwrap();
    let nl = Nonlinearity::power(3.0, 1.0).unwrap();
    let r = integrate_nonlinear(&sg, &u0, &nl, &Controls::default()).unwrap();
    assert_eq!(r.classification, Classification::Blowup);
    let fit = r.fit.expect("fit");
    assert!(fit.t_star.is_finite() && fit.t_star > 0.0);
    assert!(fit.residual < 0.05, "residual {}", fit.residual);
    // Diffusion only lowers the peak, so the ODE at the peak blows up first.
    let sup0 = u0.sup_norm();
    let ode = 1.0 / (2.0 * sup0 * sup0);
    assert!(fit.t_star >= ode * 0.99, "{} vs ODE {ode}", fit.t_star);
}

#[test]
fn zero_reaction_follows_the_heat_flow() {
    let g = model(GroupKind::Torus, vec![2.0 * PI], vec![64]);
    let sg = HeatSemigroup::for_model(&g).unwrap();
    let u0 = GridField::from_fn(&g, |x| 1.0 + 0.5 * x[0].cos());
    let nl = Nonlinearity::zero(2.0, 1.0).unwrap();
    let controls = Controls {
        t_max: 2.0,
        ..Controls::default()
    };
    let r = integrate_nonlinear(&sg, &u0, &nl, &controls).unwrap();
    assert_eq!(r.classification, Classification::GlobalSoFar);
    let heat = apply_semigroup(&g, &u0, r.t_end).unwrap();
    let last = r.trace.last().unwrap();
    assert!((last.sup_norm - heat.sup_norm()).abs() < 1e-9, "{} vs {}", last.sup_norm, heat.sup_norm());
    assert!((last.mass - heat.mass()).abs() < 1e-9 * heat.mass());
}

#[test]
fn satisfied_certificate_keeps_the_monitor_below_a_p() {
    let sg = line(256.0, 2048);
    let nl = Nonlinearity::power(4.0, 1.0).unwrap();
    let u0 = small_data_generator(&sg, 1.0, 0.5).unwrap();
    let profile = VolumeProfile::euclidean(1);
    let cert = existence_condition_with(&sg, &u0, &nl, Some(&profile), &ExistenceOptions::default()).unwrap();
    assert!(cert.is_satisfied());
    let times: Vec<f64> = (0..40).map(|k| 0.01 * 1.25f64.powi(k)).collect();
    let m = ap_monitor(&sg, &u0, &nl, &times).unwrap();
    assert_eq!(m.verdict, MonitorVerdict::Consistent);
}

#[test]
fn mass_monitor_rejects_non_critical_exponents() {
    let sg = line(64.0, 512);
    let err = mass_growth_monitor(&sg, 2.0, &[1.0, 2.0, 4.0], 0.1).unwrap_err();
    assert!(matches!(err, Error::NotCriticalExponent { .. }), "{err:?}");
}

#[test]
fn critical_mass_is_flat_on_the_line() {
    let sg = line(512.0, 4096);
    let s: Vec<f64> = (1..=20).map(f64::from).collect();
    let r = mass_growth_monitor(&sg, 3.0, &s, 0.1).unwrap();
    assert_eq!(r.growth, MassGrowth::Logarithmic);
    let oracle = (1.0 / 3.0f64).sqrt() / (4.0 * PI);
    for &v in &r.products {
        assert!((v / oracle - 1.0).abs() < 1e-3, "{v} vs {oracle}");
    }
}

/// Critical `p = 3/2` on the first Heisenberg group. The box has to be wide
/// in the horizontal directions and long in the centre direction, or the
/// walls and the periodic centre bend the product upward; takes minutes.
#[test]
#[ignore]
fn critical_mass_is_flat_on_heisenberg() {
    let (h, n, nz) = (0.3, 128usize, 448usize);
    let hz = 3.0 * h * h;
    let g = model(
        GroupKind::Heisenberg1,
        vec![h * n as f64, h * n as f64, hz * nz as f64],
        vec![n, n, nz],
    );
    let sg = HeatSemigroup::for_model(&g).unwrap();
    let s: Vec<f64> = (2..=20).map(f64::from).collect();
    let r = mass_growth_monitor(&sg, 1.5, &s, 0.1).unwrap();
    assert!(r.flatness < 0.1, "flatness {} over {:?}", r.flatness, r.products);
}
