use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::DVector;
use proptest::prelude::*;

use super::*;
use crate::field::FnField;
use crate::metricflow::{builtin, ConformalFlow, FlowParams};
use crate::multfunc::QOptions;
use crate::sdesim::{initial_frame, simulate_path, CMVector, SimSpec};

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn flow(name: &str, params: &[(&str, f64)]) -> ConformalFlow {
    let p: FlowParams = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin(name, &p).unwrap()
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn path(f: &dyn MetricFlow, x0: &[f64], spec: &SimSpec, i: u64) -> FramedPath {
    let x0 = v(x0);
    let u0 = initial_frame(f, 0.0, &x0).unwrap();
    simulate_path(f, &x0, &u0, spec, i).unwrap()
}

fn grad(f: &dyn MetricFlow, cf: &CylFunc, p: &FramedPath, src: QSource) -> DampedGradient {
    damped_gradient(f, cf, p, src, QOptions::default()).unwrap()
}

#[test]
fn constant_functional_has_zero_gradient() {
    let f = flow("shrinking-sphere", &[]);
    let spec = SimSpec::new(0.5, 50, 1);
    let p = path(&f, &[0.1, 0.2], &spec, 0);
    let c = CylFunc::constant(3.0, vec![0.2, 0.5], 2).unwrap();
    let g = grad(&f, &c, &p, QSource::Backward);
    assert!(g.dprime.iter().all(|d| d.amax() == 0.0));
    assert_eq!(g.h0_norm2, 0.0);
}

#[test]
fn flat_and_ou_linear_gradients() {
    let w = v(&[1.0, -0.5]);
    let spec = SimSpec::new(1.0, 40, 2);
    let e = flow("euclid", &[]);
    let p = path(&e, &[0.0, 0.0], &spec, 0);
    let cf = CylFunc::linear(1.0, w.clone()).unwrap();
    let g = grad(&e, &cf, &p, QSource::Backward);
    assert!(g.dprime.iter().all(|d| d == &w));
    assert_relative_eq!(g.h0_norm2, w.norm_squared(), epsilon = 1e-12);

    let lambda = 0.7;
    let ou = flow("ou", &[("lambda", lambda)]);
    let p = path(&ou, &[0.3, 0.0], &spec, 0);
    let g = grad(&ou, &cf, &p, QSource::Backward);
    for (k, d) in g.dprime.iter().enumerate() {
        let want = &w * (-lambda * (1.0 - p.time(k))).exp();
        assert!((d - want).amax() < 1e-12);
    }
    // Slots strictly before s_k do not contribute.
    let early = CylFunc::linear(0.5, w.clone()).unwrap();
    let g = grad(&ou, &early, &p, QSource::Backward);
    assert!(g.dprime[20..].iter().all(|d| d.amax() == 0.0));
    assert!(g.dprime[19].amax() > 0.0);
}

#[test]
fn q_sources_agree() {
    let spec = SimSpec::new(0.5, 60, 3);
    let f2 = CylFunc::parse("sin(p1_1) * p2_2 + p2_1^2", vec![0.25, 0.5], 2).unwrap();
    let sphere = flow("shrinking-sphere", &[]);
    let p = path(&sphere, &[0.2, -0.1], &spec, 0);
    let a = grad(&sphere, &f2, &p, QSource::Fresh);
    let b = grad(&sphere, &f2, &p, QSource::Backward);
    let c = grad(&sphere, &f2, &p, QSource::CachedInverse);
    for k in 0..spec.steps {
        assert!((&a.dprime[k] - &b.dprime[k]).amax() < 1e-12);
        assert!((&a.dprime[k] - &c.dprime[k]).amax() < 1e-9);
    }
    assert!((&a.initial - &b.initial).amax() < 1e-12);

    let hl = flow("half-line", &[]);
    let f1 = CylFunc::parse("cos(p1_1) + p2_1", vec![0.25, 0.5], 1).unwrap();
    let mut checked = 0;
    for i in 0..20 {
        let p = path(&hl, &[0.05], &spec, i);
        let a = grad(&hl, &f1, &p, QSource::Fresh);
        let b = grad(&hl, &f1, &p, QSource::Backward);
        for k in 0..spec.steps {
            assert!((&a.dprime[k] - &b.dprime[k]).amax() < 1e-12);
        }
        if p.hit.iter().any(|h| *h) {
            checked += 1;
            let r = damped_gradient(&hl, &f1, &p, QSource::CachedInverse, QOptions::default());
            assert!(matches!(r, Err(Error::Numeric(_))));
        }
    }
    assert!(checked > 0);
}

#[test]
fn off_grid_slot_is_rejected() {
    let e = flow("euclid", &[]);
    let p = path(&e, &[0.0, 0.0], &SimSpec::new(1.0, 10, 4), 0);
    let cf = CylFunc::linear(0.55, v(&[1.0, 0.0])).unwrap();
    assert!(matches!(damped_gradient(&e, &cf, &p, QSource::Backward, QOptions::default()), Err(Error::Argument(_))));
    assert!(CylFunc::new(vec![0.5, 0.5], 2, |_| 0.0).is_err());
}

#[test]
fn directional_derivative_examples() {
    let w = v(&[0.5, 2.0]);
    let vv = v(&[1.0, 1.0]);
    let spec = SimSpec::new(1.0, 200, 5);
    let h = CMVector::linear(&w, spec.steps);
    let cf = CylFunc::linear(1.0, vv.clone()).unwrap();
    let e = flow("euclid", &[]);
    let p = path(&e, &[0.0, 0.0], &spec, 0);
    let dh = directional_derivative(&e, &cf, &p, QSource::Backward, QOptions::default(), &h).unwrap();
    assert_relative_eq!(dh, vv.dot(&w), epsilon = 1e-12);

    let lambda = 1.5;
    let ou = flow("ou", &[("lambda", lambda)]);
    let p = path(&ou, &[0.0, 0.0], &spec, 0);
    let g = grad(&ou, &cf, &p, QSource::Backward);
    let riemann: f64 = (0..spec.steps).map(|k| (-lambda * (1.0 - p.time(k))).exp()).sum::<f64>() * spec.dt();
    assert_relative_eq!(g.pair(&h).unwrap(), riemann * vv.dot(&w), epsilon = 1e-12);
    let limit = (1.0 - (-lambda).exp()) / lambda * vv.dot(&w);
    assert!((g.pair(&h).unwrap() - limit).abs() < 2.0 * lambda * spec.dt() * limit.abs());
    assert_relative_eq!(g.pair(&h.scaled(-3.0)).unwrap(), -3.0 * g.pair(&h).unwrap(), epsilon = 1e-12);
    assert_eq!(g.pair(&CMVector::zero(2, spec.steps)).unwrap(), 0.0);
    assert!(g.pair(&CMVector::zero(2, 10)).is_err());
}

#[test]
fn fd_slot_gradients_match_analytic() {
    let cf = CylFunc::parse("exp(0.5*p1_1) * p2_2 - p1_2^2", vec![0.5, 1.0], 2).unwrap();
    let pts = vec![v(&[0.3, -0.4]), v(&[1.2, 0.7])];
    let g = cf.gradients(&pts);
    let analytic = [
        v(&[0.5 * (0.15f64).exp() * 0.7, 0.8]),
        v(&[0.0, (0.15f64).exp()]),
    ];
    for (a, b) in g.iter().zip(&analytic) {
        assert!((a - b).amax() < 1e-5);
    }
}

#[test]
fn gradient_is_linear_and_obeys_chain_rule() {
    let f = flow("disk-exterior", &[("lambda", 0.0)]);
    let spec = SimSpec::new(0.5, 50, 6);
    let a = CylFunc::parse("p1_1 * p2_2", vec![0.2, 0.5], 2).unwrap();
    let b = CylFunc::parse("cos(p2_1)", vec![0.2, 0.5], 2).unwrap();
    let combo = a.linear_combination(2.0, &b, -0.5).unwrap();
    let exp_a = a.compose(f64::exp, f64::exp);
    for i in 0..5 {
        let p = path(&f, &[1.1, 0.0], &spec, i);
        let (ga, gb, gc) = (
            grad(&f, &a, &p, QSource::Backward),
            grad(&f, &b, &p, QSource::Backward),
            grad(&f, &combo, &p, QSource::Backward),
        );
        let ge = grad(&f, &exp_a, &p, QSource::Backward);
        let fa = a.eval_path(&p).unwrap();
        for k in 0..spec.steps {
            let want = &ga.dprime[k] * 2.0 - &gb.dprime[k] * 0.5;
            assert!((&gc.dprime[k] - want).amax() < 1e-12);
            assert!((&ge.dprime[k] - &ga.dprime[k] * fa.exp()).amax() < 1e-10 * (1.0 + fa.exp()));
        }
    }
}

fn setup(t: f64, steps: usize, seed: u64, n: usize) -> McSetup {
    McSetup::new(SimSpec::new(t, steps, seed), n)
}

#[test]
fn ibp_three_way_flat_and_ou() {
    let vv = v(&[1.0, 0.5]);
    let w = v(&[0.3, -1.0]);
    let t = 1.0;
    let s = setup(t, 20, 7, 2000);
    let h = CMVector::linear(&w, 20);
    let cf = CylFunc::linear(t, vv.clone()).unwrap();
    let e = flow("euclid", &[]);
    let r = ibp_three_way(&e, &v(&[0.0, 0.0]), &cf, &h, &IbpOptions::default(), &s).unwrap();
    let exact = SQRT2 * t * vv.dot(&w);
    assert_relative_eq!(r.flow_fd.mean, exact, epsilon = 1e-10);
    assert_relative_eq!(r.damped.mean, exact, epsilon = 1e-10);
    assert!((r.girsanov.mean - exact).abs() <= 3.0 * r.girsanov.se);
    assert!(r.pass);

    let lambda = 1.0;
    let ou = flow("ou", &[("lambda", lambda)]);
    let r = ibp_three_way(&ou, &v(&[0.5, 0.5]), &cf, &h, &IbpOptions::default(), &s).unwrap();
    let exact = SQRT2 * vv.dot(&w) * (1.0 - (-lambda * t).exp()) / lambda;
    assert!((r.damped.mean - exact).abs() < 0.05 * exact.abs());
    assert!((r.flow_fd.mean - exact).abs() < 0.05 * exact.abs());
    assert!(r.pass, "{r:?}");

    let c = CylFunc::constant(2.0, vec![t], 2).unwrap();
    let r = ibp_three_way(&ou, &v(&[0.5, 0.5]), &c, &h, &IbpOptions::default(), &s).unwrap();
    assert_eq!(r.flow_fd.mean, 0.0);
    assert_eq!(r.damped.mean, 0.0);
    assert!(r.girsanov.mean.abs() <= 3.0 * r.girsanov.se);
}

#[test]
fn ibp_three_way_with_boundary() {
    let hl = flow("half-line", &[]);
    let mut s = setup(0.5, 50, 8, 3000);
    s.spec.detect_crossings = true;
    s.q.use_crossings = true;
    let h = CMVector::linear(&v(&[1.0]), 50);
    let cf = CylFunc::terminal(0.5, 1, Arc::new(FnField::new(|_, x| (x[0]).sin()))).unwrap();
    let r = ibp_three_way(&hl, &v(&[0.3]), &cf, &h, &IbpOptions::default(), &s).unwrap();
    assert!(r.pass, "{r:?}");
}

#[test]
fn bel_flat_ou_and_half_line() {
    let vv = v(&[1.0, -2.0]);
    let lin = FnField::new({
        let vv = vv.clone();
        move |_, x: &DVector<f64>| vv.dot(x)
    });
    let s = setup(1.0, 20, 9, 20_000);
    let e = flow("euclid", &[]);
    let r = bel_gradient(&e, &v(&[0.0, 0.0]), &lin, &xi_linear(20), &s).unwrap();
    for j in 0..2 {
        assert_relative_eq!(r.plain[j].mean, vv[j], epsilon = 1e-6);
        assert!((r.weighted[j].mean - vv[j]).abs() <= 3.0 * r.weighted[j].se);
    }
    assert!(r.agree);

    let lambda = 0.5;
    let ou = flow("ou", &[("lambda", lambda)]);
    let r = bel_gradient(&ou, &v(&[0.2, 0.1]), &lin, &xi_linear(20), &s).unwrap();
    for j in 0..2 {
        let want = vv[j] * (-lambda).exp();
        assert!((r.weighted[j].mean - want).abs() <= 3.0 * r.weighted[j].se + 0.01);
        assert!((r.plain[j].mean - want).abs() < 1e-9);
    }

    // Half-line: P_T cos(x) = e^{−T} cos(x) by the reflection principle.
    let hl = flow("half-line", &[]);
    let t = 0.5;
    let mut s = setup(t, 100, 10, 20_000);
    s.spec.detect_crossings = true;
    s.q.use_crossings = true;
    let cosf = FnField::new(|_, x: &DVector<f64>| x[0].cos()).with_gradient(|_, x| DVector::from_element(1, -x[0].sin()));
    let x0 = 0.4f64;
    let r = bel_gradient(&hl, &v(&[x0]), &cosf, &xi_linear(100), &s).unwrap();
    let want = -x0.sin() * (-t).exp();
    let bias = (s.spec.dt()).sqrt();
    assert!((r.plain[0].mean - want).abs() <= 3.0 * r.plain[0].se + bias * want.abs());
    assert!((r.weighted[0].mean - want).abs() <= 3.0 * r.weighted[0].se + bias * want.abs());

    let bad = vec![0.0; 21];
    assert!(matches!(bel_gradient(&e, &v(&[0.0, 0.0]), &lin, &bad, &s_small()), Err(Error::Argument(_))));
}

fn s_small() -> McSetup {
    setup(1.0, 20, 1, 10)
}

#[test]
fn gradient_formula_for_two_slot_ou() {
    let lambda = 0.8;
    let ou = flow("ou", &[("lambda", lambda)]);
    let (vv, w) = (v(&[1.0, 0.5]), v(&[-0.3, 1.0]));
    let (s1, t1) = (0.5, 1.0);
    let cf = {
        let (a, b, ga, gb) = (vv.clone(), w.clone(), vv.clone(), w.clone());
        CylFunc::new(vec![s1, t1], 2, move |p| a.dot(&p[0]) * b.dot(&p[1]))
            .unwrap()
            .with_gradient(move |p| vec![&ga * gb.dot(&p[1]), &gb * ga.dot(&p[0])])
    };
    let x0 = v(&[0.4, -0.2]);
    let s = setup(t1, 40, 11, 4000);
    let r = gradient_formula_check(&ou, &x0, &cf, 1e-3, &s).unwrap();
    // ∇ E[⟨v,X_s⟩⟨w,X_t⟩] = e^{−λs} v ⟨w, m_t⟩ + e^{−λt} w ⟨v, m_s⟩, m_r = e^{−λr} x0.
    let (es, et) = ((-lambda * s1).exp(), (-lambda * t1).exp());
    let want = &vv * (es * et * w.dot(&x0)) + &w * (et * es * vv.dot(&x0));
    for j in 0..2 {
        assert!((r.formula[j].mean - want[j]).abs() <= 3.0 * r.formula[j].se + 0.02 * want.norm());
    }
    assert!(r.pass, "{r:?}");

    let c = CylFunc::constant(1.0, vec![s1, t1], 2).unwrap();
    let r = gradient_formula_check(&ou, &x0, &c, 1e-3, &s).unwrap();
    assert!(r.pass && r.formula.iter().all(|x| x.mean == 0.0) && r.fd.iter().all(|x| x.mean == 0.0));
}

#[test]
fn clark_ocone_examples() {
    let vv = v(&[1.0, -1.0]);
    let cf = CylFunc::linear(1.0, vv.clone()).unwrap();
    let s = setup(1.0, 20, 12, 4000);
    let e = flow("euclid", &[]);
    let r = clark_ocone(&e, &v(&[0.0, 0.0]), &cf, Regression::default(), &s).unwrap();
    // Only the sample mean of F differs from its expectation.
    assert!(r.residual_ratio < 1e-3);
    for m in &r.integrand_mean {
        assert!((m[0] - SQRT2).abs() < 1e-10 && (m[1] + SQRT2).abs() < 1e-10);
    }

    let lambda = 1.0;
    let ou = flow("ou", &[("lambda", lambda)]);
    let fine = setup(1.0, 100, 12, 4000);
    let r = clark_ocone(&ou, &v(&[0.5, 0.0]), &cf, Regression::default(), &fine).unwrap();
    let var = (1.0 - (-2.0 * lambda).exp()) / lambda * vv.norm_squared();
    // Left Riemann sum of e^{−2λ(T−s)}: relative bias about λΔ.
    assert!((r.isometry - var).abs() < 2.0 * lambda * fine.spec.dt() * var, "{} vs {var}", r.isometry);
    assert!((r.var_f - var).abs() < 0.1 * var);
    assert!(r.residual_ratio < 0.05);

    let quad = CylFunc::parse("p1_1^2 + p1_2^2", vec![1.0], 2).unwrap();
    let r = clark_ocone(&e, &v(&[0.5, 0.0]), &quad, Regression::default(), &s).unwrap();
    assert!(r.residual_ratio < 0.05, "{}", r.residual_ratio);
    // E[2 X_T | F_s] = 2 X_s: slope 2√2 on each coordinate.
    let k = 10;
    let c = &r.coefficients[k];
    assert!(c.len() == 12);
}

#[test]
fn lsi_constant_flat_exponential_and_free_path() {
    let e = flow("euclid", &[("d", 1.0)]);
    let s = setup(1.0, 10, 13, 20_000);
    let c = CylFunc::constant(1.5, vec![1.0], 1).unwrap();
    let r = dirichlet_and_lsi(&e, &Start::Fixed(v(&[0.0])), &c, &s).unwrap();
    assert!(r.degenerate && r.pass && r.entropy.mean.abs() < 1e-12);

    // F = exp(bX_T/2): Ent/EF² = T b², E/EF² = T b²/2.
    let b = 0.8;
    let f = CylFunc::parse(&format!("exp({b}*p1_1/2)"), vec![1.0], 1).unwrap();
    let r = dirichlet_and_lsi(&e, &Start::Fixed(v(&[0.0])), &f, &s).unwrap();
    assert!((r.entropy.mean - b * b).abs() <= 3.0 * r.entropy.se);
    assert!((r.form.mean - b * b / 2.0).abs() < 1e-6);
    assert!(r.pass);

    // Free path, μ = N(0, s²): F = exp((aX_0 + bX_T)/2).
    let (a, var) = (0.5, 1.5);
    let g = CylFunc::parse(&format!("exp(({a}*p1_1 + {b}*p2_1)/2)"), vec![0.0, 1.0], 1).unwrap();
    let start = Start::Gaussian { mean: v(&[0.0]), var, lsi_constant: 2.0 * var };
    let r = dirichlet_and_lsi(&e, &start, &g, &s).unwrap();
    let ent = (a + b) * (a + b) * var / 2.0 + b * b;
    let form = b * b / 2.0 + (a + b) * (a + b) / 4.0;
    assert!((r.entropy.mean - ent).abs() <= 3.0 * r.entropy.se);
    assert!((r.form.mean - form).abs() < 1e-6);
    assert_eq!(r.constant, 3.0);
    assert!(r.pass);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn h0_norm_is_sum_of_squares(seed in 0u64..1000) {
        let f = flow("half-space", &[("lambda", 0.3)]);
        let spec = SimSpec::new(0.5, 25, seed);
        let p = path(&f, &[0.1, 0.05], &spec, 0);
        let cf = CylFunc::parse("p1_1 * p2_2 + p2_1", vec![0.2, 0.4], 2).unwrap();
        let g = grad(&f, &cf, &p, QSource::Backward);
        let direct: f64 = g.dprime.iter().map(|d| d.norm_squared()).sum::<f64>() * spec.dt();
        prop_assert!((g.h0_norm2 - direct).abs() <= 1e-12 * (1.0 + direct));
        prop_assert!(g.h0_norm2 >= 0.0);
        prop_assert!(g.dprime[20..].iter().all(|d| d.amax() == 0.0));
    }
}
