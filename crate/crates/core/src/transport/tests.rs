use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::DVector;
use proptest::prelude::*;

use super::*;
use crate::field::FnField;
use crate::malliavin::McSetup;
use crate::metricflow::{builtin, geodesic_and_transport, ConformalFlow, CurvatureBounds, FlowParams};
use crate::stats::mean;

fn flow(name: &str, params: &[(&str, f64)]) -> ConformalFlow {
    let p: FlowParams = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin(name, &p).unwrap()
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn setup(t: f64, steps: usize, n: usize) -> McSetup {
    McSetup::new(SimSpec::new(t, steps, 11), n)
}

fn disk_phi() -> Arc<dyn ScalarField> {
    Arc::new(
        FnField::new(|_, x: &DVector<f64>| 1.0 + 1.5 * (1.0 - (1.0 - x.norm()).exp()))
            .with_gradient(|_, x| x * (1.5 * (1.0 - x.norm()).exp() / x.norm()))
            .with_dt(|_, _| 0.0),
    )
}

#[test]
fn equal_starts_stay_together() {
    let f = flow("shrinking-sphere", &[]);
    let spec = SimSpec::new(0.5, 100, 3);
    let c = couple_paths(&f, &v(&[0.2, -0.1]), &v(&[0.2, -0.1]), &Beta::zero(2), &spec, 0).unwrap();
    assert!(c.rho.iter().all(|r| *r == 0.0));
    assert_eq!(c.x(100), c.y(100));
}

#[test]
fn flat_coupling_is_a_translation() {
    let f = flow("euclid", &[("d", 2.0)]);
    let spec = SimSpec::new(1.0, 200, 5);
    let c = couple_paths(&f, &v(&[0.0, 0.0]), &v(&[1.0, 0.5]), &Beta::zero(2), &spec, 2).unwrap();
    let r0 = 1.25f64.sqrt();
    for r in &c.rho {
        assert_relative_eq!(*r, r0, max_relative = 1e-12);
    }
}

#[test]
fn ou_distance_follows_the_euler_factor() {
    let f = flow("ou", &[("d", 2.0), ("lambda", 1.0)]);
    let spec = SimSpec::new(1.0, 100, 5);
    let c = couple_paths(&f, &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &Beta::zero(2), &spec, 0).unwrap();
    for (k, r) in c.rho.iter().enumerate() {
        assert_relative_eq!(*r, 0.99f64.powi(k as i32), max_relative = 1e-10);
    }
}

#[test]
fn ou_contraction_terminal_matches_exponential() {
    let f = flow("ou", &[("d", 2.0), ("lambda", 1.0)]);
    let b = f.analytic_bounds().unwrap();
    let r = check_contraction(&f, &v(&[0.0, 0.0]), &v(&[1.0, 0.0]), &b, 2.0, &setup(1.0, 1000, 20)).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.terminal_gap < 1e-3, "{}", r.terminal_gap);
    assert_relative_eq!(r.terminal.rhs, (-1.0f64).exp(), max_relative = 1e-10);
    // The uniform distance includes ρ_0 = 1 > e^{−1}.
    assert!(!r.uniform_as_printed.pass);
    assert_relative_eq!(r.uniform.lhs, 1.0, max_relative = 1e-12);
}

#[test]
fn conformal_euclid_saturates_contraction() {
    let f = flow("conformal-euclid", &[("d", 2.0), ("a0", 1.0), ("rate", 0.5)]);
    let b = f.analytic_bounds().unwrap();
    let r = check_contraction(&f, &v(&[0.0, 0.0]), &v(&[0.6, 0.8]), &b, 2.0, &setup(1.0, 200, 8)).unwrap();
    assert!(r.pass, "{r:?}");
    // ρ_t = a(t)|x − y| and e^{−∫K} = a(t)/a(0).
    assert_relative_eq!(r.terminal.lhs, 1.5, max_relative = 1e-6);
    assert_relative_eq!(r.terminal.rhs, 1.5, max_relative = 1e-6);
    assert!((r.per_time.lhs - 1.0).abs() < 1e-6);
}

#[test]
fn contraction_rejects_nonconvex_flows() {
    let f = flow("disk-exterior", &[]);
    let b = f.analytic_bounds().unwrap();
    let e = check_contraction(&f, &v(&[2.0, 0.0]), &v(&[0.0, 2.0]), &b, 2.0, &setup(0.1, 10, 4));
    assert!(matches!(e, Err(Error::Argument(_))));
}

#[test]
fn flat_talagrand_saturates() {
    let f = flow("euclid", &[("d", 2.0)]);
    let b = f.analytic_bounds().unwrap();
    let beta = v(&[0.3, -0.4]);
    let r = check_talagrand(&f, &v(&[0.0, 0.0]), &beta, &b, &setup(1.0, 100, 400)).unwrap();
    // X − Y = √2 β t on every path.
    assert_relative_eq!(r.squared.lhs, 2.0 * 0.25, max_relative = 1e-10);
    assert_relative_eq!(r.squared.rhs, 2.0 * 0.25, max_relative = 1e-8);
    assert!(r.pass, "{r:?}");
    assert_eq!(r.domination_violations, 0);
    assert_relative_eq!(r.entropy, 0.125, max_relative = 1e-12);
}

#[test]
fn ou_talagrand_has_room() {
    let f = flow("ou", &[("d", 1.0), ("lambda", 1.0)]);
    let b = f.analytic_bounds().unwrap();
    let beta = v(&[0.5]);
    let r = check_talagrand(&f, &v(&[0.3]), &beta, &b, &setup(1.0, 400, 400)).unwrap();
    let e = (-1.0f64).exp();
    let lhs = 2.0 * 0.25 * (1.0 - e).powi(2);
    let rhs = 2.0 * 0.25 * (1.0 - e * e) / 2.0;
    assert_relative_eq!(r.squared.lhs, lhs, max_relative = 5e-3);
    assert_relative_eq!(r.squared.rhs, rhs, max_relative = 1e-8);
    assert!(r.pass && r.squared.margin > 0.01, "{r:?}");
    assert!(r.entropy_identity_pass && r.normalization_pass);
}

#[test]
fn zero_tilt_gives_zero_sides() {
    let f = flow("ou", &[("d", 2.0), ("lambda", 1.0)]);
    let b = f.analytic_bounds().unwrap();
    let r = check_talagrand(&f, &v(&[0.1, 0.2]), &v(&[0.0, 0.0]), &b, &setup(0.5, 50, 10)).unwrap();
    assert_eq!(r.squared.lhs, 0.0);
    assert_eq!(r.squared.rhs, 0.0);
    assert!(r.pass);
}

#[test]
fn decay_constant_matches_closed_form() {
    let c = c_stk(&BoundFn::Const(1.0), 0.0, 1.0);
    assert_relative_eq!(c, (1.0 - (-2.0f64).exp()) / 2.0, max_relative = 1e-8);
    assert_relative_eq!(c_stk(&BoundFn::Const(0.0), 0.0, 2.0), 2.0, max_relative = 1e-12);
    // Negative K: the supremum is at t = T, ∫_0^T e^{2(T−u)} du.
    let c = c_stk(&BoundFn::Const(-0.5), 0.0, 1.0);
    assert_relative_eq!(c, 1f64.exp_m1(), max_relative = 1e-8);
    // Time-dependent K(t) = t: ∫_0^1 e^{−(1 − u²)} du.
    let ic = InequalityConstants::from_bound(&BoundFn::func(|t| t), 0.0, 1.0).unwrap();
    let exact = {
        let n = 200_000;
        let h = 1.0 / n as f64;
        (0..n).map(|i| (-(1.0 - ((i as f64 + 0.5) * h).powi(2))).exp() * h).sum::<f64>()
    };
    assert_relative_eq!(ic.c_k_terminal, exact, max_relative = 1e-8);
    assert_relative_eq!(ic.contraction, (-0.5f64).exp(), max_relative = 1e-12);
}

#[test]
fn inf_over_r_matches_stationary_point() {
    for g in [0.01f64, 0.1, 0.5, 2.0] {
        let r = (-1.0 + (1.0 + 0.5 / g).sqrt()) / 2.0;
        let exact = 4.0 * (1.0 + 1.0 / r) * 1.3 * (8.0 * (1.0 + r) * g).exp();
        let (c, r_opt) = inf_over_r(1.3, g);
        assert_relative_eq!(c, exact, max_relative = 1e-10);
        assert_relative_eq!(r_opt, r, max_relative = 1e-4);
    }
    assert_eq!(inf_over_r(2.0, 0.0), (8.0, f64::INFINITY));
}

#[test]
fn constant_psi_constants() {
    let f = flow("euclid", &[("d", 2.0)]);
    let region = ScanRegion::from_points("box", (0..25).map(|i| v(&[(i % 5) as f64, (i / 5) as f64])).collect(), vec![]);
    let bounds = RicciTimeBounds::scan(&f, &region, 1.5).unwrap();
    let one = psi_constants(&f, &FnField::constant(1.0), &region, &bounds, 1.5).unwrap();
    assert!(one.k_psi.iter().all(|s| s.value.abs() < 1e-9));
    assert_relative_eq!(one.c_t, 6.0, max_relative = 1e-10);
    assert_relative_eq!(one.contraction_factor, 2.0, max_relative = 1e-9);
    let c = psi_constants(&f, &FnField::constant(0.5), &region, &bounds, 1.5).unwrap();
    assert_relative_eq!(c.c_t, 4.0 * 0.25 * 1.5, max_relative = 1e-10);
    assert!(psi_constants(&f, &FnField::constant(0.0), &region, &bounds, 1.5).is_err());
}

#[test]
fn sine_psi_constants() {
    let f = flow("euclid", &[("d", 1.0)]);
    let region = ScanRegion::interval(-4.0, 4.0, 800);
    let psi = FnField::new(|_, x: &DVector<f64>| 1.0 + 0.1 * x[0].sin()).with_gradient(|_, x| v(&[0.1 * x[0].cos()]));
    let c = psi_constants(&f, &psi, &region, &RicciTimeBounds::constant(0.0, 0.0), 1.0).unwrap();
    assert_relative_eq!(c.sup_psi, 1.1, max_relative = 1e-4);
    assert_relative_eq!(c.sup_grad_psi, 0.1, max_relative = 1e-4);
    // d = 1, K = 0, Z = 0: K_ψ = 0 and the weighted integral is ‖ψ‖²T.
    assert_relative_eq!(c.weighted_integral, 1.21, max_relative = 1e-4);
    let (exact, _) = inf_over_r(1.21, 0.1);
    assert_relative_eq!(c.c_t, exact, max_relative = 1e-4);
}

#[test]
fn constant_psi_talagrand_is_time_changed() {
    let f = flow("euclid", &[("d", 1.0)]);
    let region = ScanRegion::interval(-3.0, 3.0, 10);
    let psi = FnField::constant(0.7);
    let beta = v(&[0.4]);
    let r = check_psi_transport(
        &f,
        &psi,
        &region,
        &RicciTimeBounds::constant(0.0, 0.0),
        &v(&[0.0]),
        &v(&[1.0]),
        &beta,
        &setup(1.0, 100, 50),
    )
    .unwrap();
    // X − Y = √2 ψ β t.
    assert_relative_eq!(r.w2_squared.mean, 2.0 * 0.49 * 0.16, max_relative = 1e-10);
    assert_relative_eq!(r.talagrand.rhs, 4.0 * 0.49 * 0.08, max_relative = 1e-10);
    assert!(r.pass, "{r:?}");
    assert_relative_eq!(r.contraction.lhs, 1.0, max_relative = 1e-12);
}

#[test]
fn sine_psi_transport_passes() {
    let f = flow("ou", &[("d", 1.0), ("lambda", 0.5)]);
    let region = ScanRegion::interval(-6.0, 6.0, 600);
    let psi = FnField::new(|_, x: &DVector<f64>| 1.0 + 0.1 * x[0].sin()).with_gradient(|_, x| v(&[0.1 * x[0].cos()]));
    let bounds = RicciTimeBounds::scan(&f, &region, 1.0).unwrap();
    let r = check_psi_transport(&f, &psi, &region, &bounds, &v(&[0.2]), &v(&[0.9]), &v(&[0.5]), &setup(1.0, 100, 200))
        .unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.talagrand.margin > 0.0 && r.contraction.margin > 0.0);
}

#[test]
fn coupled_y_has_the_unperturbed_law() {
    // Y_T ~ N(y e^{−λT}, (1 − e^{−2λT})/λ) whatever X does.
    let f = flow("ou", &[("d", 1.0), ("lambda", 1.0)]);
    let psi = FnField::constant(1.0);
    let c = Coupling::new(&f).with_psi(&psi);
    let spec = SimSpec::new(1.0, 200, 9);
    let ys: Vec<f64> = (0..2000)
        .map(|i| couple_with(&c, &v(&[-1.0]), &v(&[2.0]), &Beta::Constant(v(&[1.0])), &spec, i).unwrap().y(200)[0])
        .collect();
    let m = mean(&ys);
    let var = mean(&ys.iter().map(|y| (y - m).powi(2)).collect::<Vec<_>>());
    let exact_var = 1.0 - (-2.0f64).exp();
    assert!((m - 2.0 * (-1.0f64).exp()).abs() < 4.0 * (exact_var / 2000.0).sqrt());
    assert!((var - exact_var).abs() < 0.08);
}

#[test]
fn disk_factor_is_admissible() {
    let f = flow("disk-exterior", &[]);
    let region = ScanRegion::annulus(1.0, 6.0, 20, 32);
    let bounds = RicciTimeBounds::constant(0.0, 0.0);
    let c = conformal_constants(&f, disk_phi().as_ref(), &region, &bounds, 1.0).unwrap();
    assert!(c.admissible, "{c:?}");
    assert_relative_eq!(c.boundary_margin, 0.5, max_relative = 1e-6);
    assert_relative_eq!(c.inf_phi, 1.0, max_relative = 1e-12);
    assert!(c.sup_phi < 2.5 && c.sup_phi > 2.4);
    assert_relative_eq!(c.talagrand_constant, c.sup_phi.powi(2) * c.c_t, max_relative = 1e-12);

    let shifted = FnField::new(|_, x: &DVector<f64>| 1.5 + 1.5 * (1.0 - (1.0 - x.norm()).exp()));
    let c = conformal_constants(&f, &shifted, &region, &bounds, 1.0).unwrap();
    assert!(!c.admissible);
    let weak = FnField::new(|_, x: &DVector<f64>| 1.0 + 0.5 * (1.0 - (1.0 - x.norm()).exp()));
    let c = conformal_constants(&f, &weak, &region, &bounds, 1.0).unwrap();
    assert!(!c.admissible && c.boundary_margin < -0.4);
}

#[test]
fn disk_sandwich_holds() {
    let f = flow("disk-exterior", &[]);
    let phi = disk_phi();
    let tilde = f.rescaled(phi.clone());
    let pairs: Vec<_> = (0..100)
        .map(|i| {
            let a = 0.37 * i as f64;
            let b = a + 0.5 + 0.02 * i as f64;
            let (r1, r2) = (1.2 + 0.03 * i as f64, 1.5 + 0.02 * (100 - i) as f64);
            (v(&[r1 * a.cos(), r1 * a.sin()]), v(&[r2 * b.cos(), r2 * b.sin()]))
        })
        .collect();
    let r = metric_sandwich(&f, &tilde, 2.5, 0.0, &pairs).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.lower_gap > 0.0);
}

#[test]
fn disk_nonconvex_transport_passes() {
    let f = flow("disk-exterior", &[]);
    let region = ScanRegion::annulus(1.0, 6.0, 20, 32);
    let r = check_nonconvex_transport(
        &f,
        disk_phi(),
        &region,
        &RicciTimeBounds::constant(0.0, 0.0),
        &v(&[1.5, 0.0]),
        &v(&[0.0, -1.8]),
        &v(&[0.3, 0.2]),
        &setup(0.5, 50, 40),
    )
    .unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.sandwich.n_pairs > 0);
}

#[test]
fn inadmissible_factor_is_rejected() {
    let f = flow("disk-exterior", &[]);
    let weak: Arc<dyn ScalarField> = Arc::new(FnField::constant(1.0));
    let e = check_nonconvex_transport(
        &f,
        weak,
        &ScanRegion::annulus(1.0, 3.0, 4, 8),
        &RicciTimeBounds::constant(0.0, 0.0),
        &v(&[1.5, 0.0]),
        &v(&[0.0, 1.5]),
        &v(&[0.3, 0.2]),
        &setup(0.1, 10, 4),
    );
    assert!(matches!(e, Err(Error::Argument(_))));
}

#[test]
fn gaussian_shift_w2() {
    let law = TransitionLaw::Gaussian { mean: 0.3, var: 2.0 };
    let (w2, err) = quantile_w2(&law, &|y| (0.4 * y).exp()).unwrap();
    // The tilt shifts the mean by 0.4·2.
    assert_relative_eq!(w2, 0.64, max_relative = 1e-6);
    assert!(err < 1e-6);
    let (w2, _) = quantile_w2(&law, &|_| 1.0).unwrap();
    assert!(w2.abs() < 1e-14);
}

#[test]
fn marginal_laws_from_flows() {
    let l = TransitionLaw::for_flow(&flow("euclid", &[("d", 1.0)]), 0.5, 0.0, 2.0).unwrap();
    assert_eq!(l, TransitionLaw::Gaussian { mean: 0.5, var: 4.0 });
    let l = TransitionLaw::for_flow(&flow("ou", &[("d", 1.0), ("lambda", 1.0)]), 1.0, 0.0, 1.0).unwrap();
    match l {
        TransitionLaw::Gaussian { mean, var } => {
            assert_relative_eq!(mean, (-1.0f64).exp(), max_relative = 1e-14);
            assert_relative_eq!(var, 1.0 - (-2.0f64).exp(), max_relative = 1e-14);
        }
        _ => panic!(),
    }
    let l = TransitionLaw::for_flow(&flow("half-line", &[]), 0.2, 0.0, 1.0).unwrap();
    assert!(matches!(l, TransitionLaw::ReflectedGaussian { .. }));
    assert!(TransitionLaw::for_flow(&flow("euclid", &[("d", 2.0)]), 0.0, 0.0, 1.0).is_err());
    assert!(TransitionLaw::for_flow(&flow("conformal-euclid", &[("d", 1.0)]), 0.0, 0.0, 1.0).is_err());
}

fn exp_tilt(a: f64) -> FnField {
    FnField::new(move |_, x: &DVector<f64>| (a * x[0]).exp()).with_gradient(move |_, x| v(&[a * (a * x[0]).exp()]))
}

#[test]
fn gaussian_tilts_saturate_marginal_inequalities() {
    let a = 0.3;
    let flat = TransitionLaw::ou(0.0, 0.0, 1.0, false).unwrap();
    let r = check_marginal_transport(&flat, &BoundFn::Const(0.0), &exp_tilt(a), 0.0, 1.0).unwrap();
    assert_relative_eq!(r.w2_squared, 4.0 * a * a, max_relative = 1e-7);
    assert_relative_eq!(r.entropy, a * a, max_relative = 1e-7);
    assert_relative_eq!(r.fisher, a * a, max_relative = 1e-7);
    assert!(r.pass, "{r:?}");

    let lambda = 1.0;
    let ou = TransitionLaw::ou(0.5, lambda, 1.0, false).unwrap();
    let r = check_marginal_transport(&ou, &BoundFn::Const(lambda), &exp_tilt(a), 0.0, 1.0).unwrap();
    let var = 1.0 - (-2.0f64).exp();
    assert_relative_eq!(r.w2_squared, (a * var).powi(2), max_relative = 1e-7);
    assert_relative_eq!(r.entropy_form.rhs, (a * var).powi(2), max_relative = 1e-7);
    assert_relative_eq!(r.gradient_form.rhs, (a * var).powi(2), max_relative = 1e-7);
    assert!(r.pass, "{r:?}");
}

#[test]
fn trivial_tilt_has_zero_sides() {
    let law = TransitionLaw::ou(0.0, 1.0, 1.0, false).unwrap();
    let r = check_marginal_transport(&law, &BoundFn::Const(1.0), &FnField::constant(2.0), 0.0, 1.0).unwrap();
    assert!(r.w2_squared.abs() < 1e-14 && r.entropy.abs() < 1e-12 && r.fisher == 0.0);
    assert!(r.pass);
}

#[test]
fn half_line_marginal_inequalities_hold() {
    for lambda in [0.0, 1.0] {
        let law = TransitionLaw::ou(0.3, lambda, 1.0, true).unwrap();
        let r = check_marginal_transport(&law, &BoundFn::Const(lambda), &exp_tilt(-0.4), 0.0, 1.0).unwrap();
        assert!(r.pass && r.entropy_form.margin > 0.0, "{r:?}");
    }
}

#[test]
fn small_perturbation_lemma() {
    let law = TransitionLaw::ou(0.2, 1.0, 1.0, false).unwrap();
    let f = FnField::new(|_, x: &DVector<f64>| x[0].sin()).with_gradient(|_, x| v(&[x[0].cos()]));
    let r = lemma_reproduction(&law, &f, 1.0, 0.01).unwrap();
    assert!(r.pass, "{r:?}");
    assert!(r.variance > 0.0 && r.w2 > 0.0);
    assert!(lemma_reproduction(&law, &FnField::new(|_, x: &DVector<f64>| x[0].powi(3)), 6.0, 0.5).is_err());
}

#[test]
fn domination_bound_holds_on_ou() {
    let f = flow("ou", &[("d", 2.0), ("lambda", 0.7)]);
    let spec = SimSpec::new(1.0, 200, 4);
    let beta = v(&[0.5, 0.2]);
    let k = BoundFn::Const(0.7);
    for i in 0..10 {
        let c = couple_paths(&f, &v(&[0.3, 0.1]), &v(&[0.3, 0.1]), &Beta::Constant(beta.clone()), &spec, i).unwrap();
        let e = domination_excess(&c, &k, &vec![beta.norm(); 200]).unwrap();
        assert!(e <= 10.0 * spec.dt(), "{e}");
    }
}

#[test]
fn intrinsic_distance_is_used_for_disk() {
    let f = flow("disk-exterior", &[]);
    let (x, y) = (v(&[2.0, 0.0]), v(&[-2.0, 0.0]));
    let d = distance(&f, 0.0, &x, &y).unwrap();
    let exact = 2.0 * 3f64.sqrt() + std::f64::consts::PI - 2.0 * (0.5f64).acos();
    assert_relative_eq!(d, exact, max_relative = 1e-12);
    let _ = geodesic_and_transport(&f, 0.0, &v(&[2.0, 0.0]), &v(&[2.0, 1.0])).unwrap();
}

#[test]
fn workers_do_not_change_results() {
    let f = flow("ou", &[("d", 2.0), ("lambda", 1.0)]);
    let b = CurvatureBounds::constant(1.0, 0.0);
    let s1 = setup(0.5, 50, 16);
    let s4 = setup(0.5, 50, 16).with_exec(crate::exec::Executor::with_workers(4));
    let a = check_talagrand(&f, &v(&[0.0, 0.0]), &v(&[0.2, 0.1]), &b, &s1).unwrap();
    let c = check_talagrand(&f, &v(&[0.0, 0.0]), &v(&[0.2, 0.1]), &b, &s4).unwrap();
    assert_eq!(a.w2_squared, c.w2_squared);
    assert_eq!(a.entropy_estimate, c.entropy_estimate);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn flat_distance_is_invariant(x in -2.0..2.0f64, y in -2.0..2.0f64, seed in 0u64..100) {
        let f = flow("euclid", &[("d", 2.0)]);
        let spec = SimSpec::new(0.5, 20, seed);
        let (a, b) = (v(&[x, y]), v(&[y, -x + 0.1]));
        let c = couple_paths(&f, &a, &b, &Beta::zero(2), &spec, 0).unwrap();
        for r in &c.rho {
            prop_assert!((r - c.rho[0]).abs() <= 1e-10 * (1.0 + c.rho[0]));
        }
    }

    #[test]
    fn ou_distance_never_grows(x in -2.0..2.0f64, lambda in 0.0..2.0f64, seed in 0u64..100) {
        let f = flow("ou", &[("d", 2.0), ("lambda", lambda)]);
        let spec = SimSpec::new(0.5, 20, seed);
        let c = couple_paths(&f, &v(&[x, 0.0]), &v(&[0.0, 1.0]), &Beta::zero(2), &spec, 1).unwrap();
        for w in c.rho.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn decay_constant_is_monotone_in_k(k in -1.0..2.0f64, dk in 0.0..1.0f64) {
        prop_assert!(c_stk(&BoundFn::Const(k + dk), 0.0, 1.0) <= c_stk(&BoundFn::Const(k), 0.0, 1.0) + 1e-14);
    }
}
