use std::sync::Arc;

use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use super::*;
use crate::rng::{gaussian_point, PathKey};

fn flow(name: &str, params: &[(&str, f64)]) -> ConformalFlow {
    let p: FlowParams = params.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    builtin(name, &p).unwrap()
}

fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

fn all_builtins() -> Vec<(ConformalFlow, DVector<f64>)> {
    vec![
        (flow("euclid", &[("d", 3.0)]), v(&[0.1, 0.2, 0.3])),
        (flow("ou", &[("lambda", 0.7)]), v(&[0.5, -1.0])),
        (flow("conformal-euclid", &[]), v(&[0.3, 0.3])),
        (flow("shrinking-sphere", &[]), v(&[0.2, -0.4])),
        (flow("half-space", &[]), v(&[0.0, 0.5])),
        (flow("half-line", &[]), v(&[0.5])),
        (flow("disk-exterior", &[]), v(&[1.5, 0.2])),
    ]
}

/// Random point near `center`.
fn sample(center: &DVector<f64>, i: u64, var: f64) -> DVector<f64> {
    gaussian_point(PathKey::new(77, i), center, var)
}

const SPHERE_FLOW: &str = r#"
name = "sphere-expr"
dim = 2
horizon = 1.5
metric = [["(1 - 0.5*t) * 4 / (1 + x1^2 + x2^2)^2", 0], [0, "(1 - 0.5*t) * 4 / (1 + x1^2 + x2^2)^2"]]
domain = "100 - x1^2 - x2^2"
"#;

#[test]
fn christoffel_vanishes_for_flat_and_spatially_constant_metrics() {
    let x = v(&[0.4, -2.0]);
    let e = christoffel(&flow("euclid", &[]), 0.3, &x).unwrap();
    assert!(e.is_zero());
    let c = christoffel(&flow("conformal-euclid", &[]), 0.7, &x).unwrap();
    assert!(c.is_zero());
}

#[test]
fn sphere_christoffel_matches_symbolic_fixture() {
    // Offline symbolic computation from g = 4/(1+|x|²)² I at x = (0.3, −0.7).
    let fixture = [
        ((0, 0, 0), -30.0 / 79.0),
        ((0, 0, 1), 70.0 / 79.0),
        ((0, 1, 1), 30.0 / 79.0),
        ((1, 0, 0), -70.0 / 79.0),
        ((1, 0, 1), -30.0 / 79.0),
        ((1, 1, 1), 70.0 / 79.0),
    ];
    let x = v(&[0.3, -0.7]);
    let analytic = christoffel(&flow("shrinking-sphere", &[]), 0.0, &x).unwrap();
    let expr = ExprFlow::from_toml(SPHERE_FLOW).unwrap();
    let numeric = christoffel(&expr, 0.0, &x).unwrap();
    for ((k, i, j), want) in fixture {
        assert_relative_eq!(analytic.get(k, i, j), want, epsilon = 1e-12);
        assert_relative_eq!(numeric.get(k, i, j), want, epsilon = 1e-6);
    }
}

fn metric_compatibility_defect(f: &dyn MetricFlow, t: f64, x: &DVector<f64>) -> f64 {
    let d = f.dim();
    let g = f.metric(t, x);
    let gam = f.christoffel(t, x);
    let h = 1e-5 * (1.0 + x.norm());
    let mut worst: f64 = 0.0;
    for i in 0..d {
        let mut y = x.clone();
        y[i] += h;
        let gp = f.metric(t, &y);
        y[i] -= 2.0 * h;
        let dg = (gp - f.metric(t, &y)) / (2.0 * h);
        for j in 0..d {
            for k in 0..d {
                let mut rhs = 0.0;
                for l in 0..d {
                    rhs += gam.get(l, i, j) * g[(l, k)] + gam.get(l, i, k) * g[(j, l)];
                }
                worst = worst.max((dg[(j, k)] - rhs).abs());
            }
        }
        for j in 0..d {
            for k in 0..d {
                assert_eq!(gam.get(k, i, j), gam.get(k, j, i));
            }
        }
    }
    worst
}

#[test]
fn levi_civita_consistency_on_random_samples() {
    let expr = ExprFlow::from_toml(SPHERE_FLOW).unwrap();
    for (f, center) in all_builtins() {
        for i in 0..100 {
            let x = sample(&center, i, 0.04);
            if !f.in_chart(&x) {
                continue;
            }
            let t = 0.01 * (i % 50) as f64;
            assert!(metric_compatibility_defect(&f, t, &x) < 1e-6, "{}", f.name());
        }
    }
    for i in 0..100 {
        let x = sample(&v(&[0.0, 0.0]), i, 0.5);
        assert!(metric_compatibility_defect(&expr, 0.2, &x) < 1e-6);
    }
}

#[test]
fn metric_dt_matches_finite_differences() {
    for (f, x) in all_builtins() {
        for t in [0.0, 0.4, 0.9] {
            let h = 1e-5;
            let fd = (f.metric(t + h, &x) - f.metric(t - h, &x)) / (2.0 * h);
            assert!((f.metric_dt(t, &x) - fd).amax() < 1e-6, "{}", f.name());
            assert!(f.metric(t, &x).symmetric_eigenvalues().min() > 0.0);
        }
    }
}

#[test]
fn ricci_zg_examples() {
    let x = v(&[0.3, 1.2]);
    let e = ricci_zg(&flow("euclid", &[]), 0.0, &x).unwrap();
    assert!(e.amax() < 1e-15);
    let ou = ricci_zg(&flow("ou", &[("lambda", 1.3)]), 0.0, &x).unwrap();
    assert!((ou - DMatrix::identity(2, 2) * 1.3).amax() < 1e-14);

    // Shrinking sphere: R = ((d−1)/r² − r′/r) g with r² = r0² − rate·t.
    let (r0, rate, t) = (1.2, 0.5, 0.8);
    let f = flow("shrinking-sphere", &[("r0", r0), ("rate", rate)]);
    let r2: f64 = r0 * r0 - rate * t;
    let r_prime_over_r = -0.5 * rate / r2;
    let want = f.metric(t, &x) * (1.0 / r2 - r_prime_over_r);
    let got = ricci_zg(&f, t, &x).unwrap();
    assert!((got - &want).amax() < 1e-12 * want.amax());
}

#[test]
fn finite_difference_ricci_matches_closed_form() {
    let expr = ExprFlow::from_toml(SPHERE_FLOW).unwrap();
    let f = flow("shrinking-sphere", &[("r0", 1.0), ("rate", 0.5)]);
    for x in [v(&[0.3, -0.7]), v(&[1.5, 0.2]), v(&[0.0, 0.0])] {
        let a = ricci_zg(&f, 0.4, &x).unwrap();
        let b = ricci_zg(&expr, 0.4, &x).unwrap();
        assert!((a - b).amax() < 1e-4);
    }
}

#[test]
fn domain_errors() {
    let f = flow("disk-exterior", &[]);
    assert!(matches!(christoffel(&f, 0.0, &v(&[0.0, 0.0])), Err(Error::Domain { .. })));
    let s = flow("shrinking-sphere", &[]);
    assert!(matches!(ricci_zg(&s, 0.0, &v(&[200.0, 0.0])), Err(Error::Domain { .. })));
    assert!(matches!(christoffel(&s, 0.0, &v(&[1.0])), Err(Error::Argument(_))));
}

#[test]
fn scan_bounds_examples() {
    let ou = flow("ou", &[("lambda", 1.0)]);
    let pts: Vec<_> = (0..20).map(|i| sample(&v(&[0.0, 0.0]), i, 1.0)).collect();
    let b = scan_bounds(&ou, &[0.0, 0.5, 1.0], &pts).unwrap();
    for t in [0.0, 0.3, 1.0] {
        assert_relative_eq!(b.k_at(t), 1.0, epsilon = 1e-12);
    }
    assert_eq!(b.provenance, Provenance::Scanned);

    let hs = flow("half-space", &[]);
    let pts: Vec<_> = (0..10).map(|i| sample(&v(&[0.0, 0.5]), i, 0.1)).collect();
    let b = scan_bounds(&hs, &[0.0, 1.0], &pts).unwrap();
    assert!(b.sigma_at(0.5).abs() < 1e-12);

    let disk = flow("disk-exterior", &[]);
    let pts: Vec<_> = (0..10).map(|i| sample(&v(&[1.5, 0.5]), i, 0.05)).collect();
    let b = scan_bounds(&disk, &[0.0], &pts).unwrap();
    assert_relative_eq!(b.sigma_at(0.0), -1.0, epsilon = 1e-12);

    assert!(matches!(scan_bounds(&ou, &[0.0], &[]), Err(Error::Argument(_))));
}

#[test]
fn finite_difference_second_fundamental_form_of_unit_circle() {
    let disk = flow("disk-exterior", &[]);
    // Same boundary, but every derivative by finite differences.
    let plain = ConformalFlow::spatially_constant("plain", 2, f64::INFINITY, |_| (0.0, 0.0))
        .with_boundary(Arc::new(crate::field::FnField::new(|_, x: &DVector<f64>| x.norm() - 1.0)));
    for theta in [0.0f64, 0.7, 2.5] {
        let x = v(&[theta.cos(), theta.sin()]);
        let analytic = disk.second_fundamental(0.0, &x);
        let numeric = plain.second_fundamental(0.0, &x);
        assert!((analytic - numeric).amax() < 1e-4);
        let n = inward_normal(&plain, 0.0, &x).unwrap();
        assert_relative_eq!(norm_g(&plain.metric(0.0, &x), &n), 1.0, epsilon = 1e-10);
    }
}

#[test]
fn scanned_bounds_are_lower_bounds_and_below_analytic() {
    let cases = [
        (flow("shrinking-sphere", &[("rate", 0.5)]), v(&[0.0, 0.0]), 1.0),
        (flow("ou", &[("lambda", 0.5)]), v(&[0.0, 0.0]), 1.0),
        (flow("conformal-euclid", &[]), v(&[0.0, 0.0]), 1.0),
    ];
    let grid: Vec<f64> = (0..=10).map(|i| 0.1 * i as f64).collect();
    for (f, c, var) in cases {
        let scan_pts: Vec<_> = (0..50).map(|i| sample(&c, i, var)).collect();
        let scanned = scan_bounds(&f, &grid, &scan_pts).unwrap();
        let analytic = f.analytic_bounds().unwrap();
        for &t in &grid {
            assert!(scanned.k_at(t) >= analytic.k_at(t) - 1e-6, "{} t={t}", f.name());
        }
        for i in 0..1000u64 {
            let x = sample(&c, 10_000 + i, var);
            let t = grid[(i % 11) as usize];
            let r = ricci_zg(&f, t, &x).unwrap();
            let dir = sample(&v(&[0.0, 0.0]), 50_000 + i, 1.0);
            let g = f.metric(t, &x);
            let q = (dir.transpose() * &r * &dir)[(0, 0)];
            let n2 = (dir.transpose() * &g * &dir)[(0, 0)];
            assert!(q >= (analytic.k_at(t) - 1e-6) * n2);
        }
    }
}

#[test]
fn geodesics_flat_and_scaled() {
    let x = v(&[0.1, 0.2]);
    let y = v(&[1.1, -0.8]);
    let e = geodesic_and_transport(&flow("euclid", &[]), 0.0, &x, &y).unwrap();
    assert_relative_eq!(e.distance, (&x - &y).norm(), epsilon = 1e-14);
    assert_eq!(e.transport, DMatrix::identity(2, 2));
    let c = flow("conformal-euclid", &[("a0", 1.0), ("rate", 0.5)]);
    let g = geodesic_and_transport(&c, 0.6, &x, &y).unwrap();
    assert_relative_eq!(g.distance, 1.3 * (&x - &y).norm(), epsilon = 1e-12);
}

fn to_sphere(x: &DVector<f64>) -> [f64; 3] {
    let q = 1.0 + x.norm_squared();
    [2.0 * x[0] / q, 2.0 * x[1] / q, (x.norm_squared() - 1.0) / q]
}

#[test]
fn sphere_geodesic_matches_great_circle() {
    let (r0, rate, t) = (1.0, 0.5, 0.6);
    let f = flow("shrinking-sphere", &[("r0", r0), ("rate", rate)]);
    let r = (r0 * r0 - rate * t).sqrt();
    for (x, y) in [(v(&[0.2, 0.1]), v(&[-0.5, 0.7])), (v(&[1.5, -0.3]), v(&[0.4, 0.9]))] {
        let geo = geodesic_and_transport(&f, t, &x, &y).unwrap();
        let (a, b) = (to_sphere(&x), to_sphere(&y));
        let cos = a.iter().zip(&b).map(|(p, q)| p * q).sum::<f64>().clamp(-1.0, 1.0);
        assert_relative_eq!(geo.distance, r * cos.acos(), epsilon = 1e-7);
        // Isometry of the displacement.
        let lhs = geo.transport.transpose() * f.metric(t, &y) * &geo.transport;
        assert!((lhs - f.metric(t, &x)).amax() < 1e-6);
        let back = geodesic_and_transport(&f, t, &y, &x).unwrap();
        assert_relative_eq!(back.distance, geo.distance, epsilon = 1e-7);
    }
}

#[test]
fn expression_flow_rejects_bad_definitions() {
    assert!(matches!(ExprFlow::from_toml("name = 1"), Err(Error::Definition(_))));
    let bad = r#"
name = "x"
dim = 2
metric = [["1", "0"], ["0", "y"]]
"#;
    assert!(matches!(ExprFlow::from_toml(bad), Err(Error::Definition(m)) if m.contains("metric[1][1]")));
    assert!(builtin("nope", &FlowParams::new()).is_err());
    let mut p = FlowParams::new();
    p.insert("bogus".into(), 1.0);
    assert!(builtin("ou", &p).is_err());
}

proptest! {
    #[test]
    fn conformal_transport_is_isometric(
        a in -1.0f64..1.0, b in -1.0f64..1.0, c in -1.0f64..1.0, d in -1.0f64..1.0
    ) {
        let f = flow("shrinking-sphere", &[]);
        let x = v(&[a, b]);
        let y = v(&[c, d]);
        let geo = geodesic_and_transport(&f, 0.2, &x, &y).unwrap();
        let lhs = geo.transport.transpose() * f.metric(0.2, &y) * &geo.transport;
        prop_assert!((lhs - f.metric(0.2, &x)).amax() < 1e-6);
    }

    #[test]
    fn ricci_zg_is_symmetric(a in -2.0f64..2.0, b in -2.0f64..2.0, t in 0.0f64..1.0) {
        let expr = ExprFlow::from_toml(SPHERE_FLOW).unwrap();
        let r = ricci_zg(&expr, t, &v(&[a, b])).unwrap();
        prop_assert!((&r - r.transpose()).amax() == 0.0);
    }
}
