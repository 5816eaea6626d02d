use decaylab_core::gevrey::{check_theta_conditions, mu_weight, ThetaProfile};
use decaylab_core::kernel::*;
use decaylab_core::Error;
use num_complex::Complex64;
use proptest::prelude::*;
use std::f64::consts::PI;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

type Ref = (usize, (f64, f64), (f64, f64));

// z^ν H^(2)_ν(z) e^{iz}, ν = (d-2)/2, evaluated with an arbitrary-precision
// Bessel library
const HANKEL_REF: [Ref; 9] = [
    (5, (5.0, -0.1), (-3.989422804014327, 0.8776730168831519)),
    (5, (0.7, -2.0), (-0.5585191925620057, 2.393653682408596)),
    (5, (12.5, 0.0), (-9.973557010035817, 0.7978845608028654)),
    (7, (5.0, -0.1), (-12.766152972845846, -17.30611612381415)),
    (7, (0.7, -2.0), (-3.90963434793404, 9.981535855643846)),
    (7, (12.5, 0.0), (-29.92067103010745, -122.27580894303911)),
    (9, (5.0, -0.1), (34.987237991205646, -112.45305211499505)),
    (9, (0.7, -2.0), (-28.21080441630691, 56.745549964299784)),
    (9, (12.5, 0.0), (1408.764927667559, -736.0485073406433)),
];

fn factorial(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// p_d from the closed finite sum for half-integer Hankel functions.
fn p_explicit(d: usize, z: Complex64) -> Complex64 {
    let n = (d - 3) / 2;
    let mut acc = c(0.0, 0.0);
    for m in 0..=n {
        let coef = factorial(n + m) / (factorial(m) * factorial(n - m));
        acc += c(0.0, -0.5).powu(m as u32) * z.powu((n - m) as u32) * coef;
    }
    acc * c(0.0, 1.0).powu(n as u32 + 1) * (2.0 / PI).sqrt()
}

#[test]
fn degrees_and_dimension_errors() {
    assert_eq!(hankel_half_poly(3).unwrap().degree(), 0);
    assert_eq!(hankel_half_poly(5).unwrap().degree(), 1);
    assert_eq!(hankel_half_poly(11).unwrap().degree(), 4);
    assert!(matches!(hankel_half_poly(4), Err(Error::Dimension(4))));
}

#[test]
fn p3_modulus() {
    let p = hankel_half_poly(3).unwrap();
    assert!((p.eval(c(5.0, -0.1)).norm() - (2.0 / PI).sqrt()).abs() < 1e-15);
}

#[test]
fn polynomial_matches_reference_hankel() {
    for (d, z, v) in HANKEL_REF {
        let p = hankel_half_poly(d).unwrap();
        let got = p.eval(c(z.0, z.1));
        let want = c(v.0, v.1);
        assert!((got - want).norm() <= 1e-12 * want.norm(), "d={d} z={z:?}: {got} vs {want}");
    }
}

#[test]
fn d3_kernel_is_classical_up_to_sign() {
    for &l in &[0.5, 1.0, 3.0] {
        for &r in &[0.1, 1.0, 7.5, 40.0] {
            let k = free_kernel_odd(3, c(l, 0.0), r).unwrap();
            assert!((k.norm() * 4.0 * PI * r - 1.0).abs() < 1e-13);
            let classical = (c(0.0, -l * r)).exp() / (4.0 * PI * r);
            // measured phase relative to e^{-iλr}/(4πr) is -1
            assert!((k / classical + 1.0).norm() < 1e-13);
        }
    }
}

#[test]
fn kernel_decays_off_axis() {
    let lam = c(2.0, -1.0);
    for &r in &[0.5, 2.0, 6.0] {
        let a = free_kernel_odd(3, lam, r).unwrap().norm();
        let b = free_kernel_odd(3, lam, 2.0 * r).unwrap().norm();
        assert!((b / a - (-r).exp() / 2.0).abs() < 1e-12);
    }
}

#[test]
fn d5_leading_singularity() {
    let rs: Vec<f64> = (0..=20).map(|i| 1e-3 * 100f64.powf(i as f64 / 20.0)).collect();
    let ys: Vec<f64> = rs.iter().map(|&r| free_kernel_odd(5, c(1.0, 0.0), r).unwrap().norm().ln()).collect();
    let xs: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    assert!((slope + 3.0).abs() < 0.01, "{slope}");
}

#[test]
fn kernel_errors() {
    assert!(matches!(free_kernel_odd(3, c(1.0, 0.0), 0.0), Err(Error::Singular(_))));
    assert!(matches!(free_kernel_odd(3, c(1.0, 0.5), 1.0), Err(Error::Domain(_))));
    assert!(matches!(free_kernel_odd(4, c(1.0, 0.0), 1.0), Err(Error::Dimension(4))));
}

#[test]
fn first_derivative_matches_difference() {
    for d in [3, 5, 7] {
        for &(l, r) in &[(0.7, 1.3), (2.0, 0.4), (0.0, 2.0)] {
            let h = 1e-5;
            let fd = (free_kernel_odd(d, c(l + h, 0.0), r).unwrap() - free_kernel_odd(d, c(l - h, 0.0), r).unwrap())
                / (2.0 * h);
            let k1 = free_kernel_odd_deriv(d, c(l, 0.0), r, 1).unwrap();
            assert!((fd - k1).norm() < 1e-7 * k1.norm().max(1.0), "d={d}");
            let fd2 = (free_kernel_odd_deriv(d, c(l + h, 0.0), r, 2).unwrap()
                - free_kernel_odd_deriv(d, c(l - h, 0.0), r, 2).unwrap())
                / (2.0 * h);
            let k3 = free_kernel_odd_deriv(d, c(l, 0.0), r, 3).unwrap();
            assert!((fd2 - k3).norm() < 1e-6 * k3.norm().max(1.0));
        }
    }
}

#[test]
fn derivative_bound_sweeps() {
    let ls: Vec<f64> = (0..=10).map(|i| -1.0 + 0.2 * i as f64).collect();
    let rs: Vec<f64> = (1..=60).map(|i| 0.01 * 1.15f64.powi(i)).collect();
    let r3 = kernel_deriv_bound_check(3, 12, &ls, &rs).unwrap();
    assert!(r3.ok);
    // |K₀| r = 1/(4π) against the sum r^{-1} + r^{-1}
    assert!((r3.constants[0] - 1.0 / (8.0 * PI)).abs() < 1e-12);
    let k2 = free_kernel_odd_deriv(3, c(0.0, 0.0), 1.0, 2).unwrap().norm();
    assert!(k2.is_finite() && k2 <= r3.constants[2] * 2.0 + 1e-15);
    let r5 = kernel_deriv_bound_check(5, 12, &ls, &rs).unwrap();
    assert!(r5.ok);
    assert!(r5.constants[1] <= 2.0 * r5.constants[0] && r5.constants[0] <= 2.0 * r5.constants[1]);
    assert!(matches!(kernel_deriv_bound_check(3, 2, &ls, &[0.0, 1.0]), Err(Error::Singular(_))));
}

#[test]
fn cosine_kernel_examples() {
    assert_eq!(cosine_kernel_even(2, 1.0, 0.0).unwrap(), -1.0);
    assert_eq!(cosine_kernel_even(2, 2.0, 0.0).unwrap(), -0.25);
    assert!((cosine_kernel_even(2, 1.0, 0.6).unwrap() + 1.953125).abs() < 1e-14);
    let r0 = cosine_kernel_even(2, 3.0, 0.0).unwrap();
    let r1 = cosine_kernel_even(2, 3.0, 1.2).unwrap();
    assert!((r1 / r0 - (1.0f64 - 0.16).powf(-1.5)).abs() < 1e-14);
    assert!(matches!(cosine_kernel_even(2, 1.0, 1.0), Err(Error::Domain(_))));
    assert!(matches!(cosine_kernel_even(3, 1.0, 0.2), Err(Error::Dimension(3))));
}

#[test]
fn calibration_recovers_two_dimensional_constant() {
    let p128 = calibrate_cd(2, 128).unwrap();
    let p256 = calibrate_cd(2, 256).unwrap();
    let classical = 1.0 / (2.0 * PI);
    assert!((p128.c_d / classical - 1.0).abs() < 0.1);
    assert!((p256.c_d / classical - 1.0).abs() < 1e-3);
    assert!(p256.residual < p128.residual);
    assert!(p256.residual < 1e-2);
    let (narrow, _) = calibrate_cd_window(2, 128, 0.3).unwrap();
    assert!((narrow / p128.c_d - 1.0).abs() < 0.01);
    assert!(p256.analytic_fit_residual(40).unwrap() < 1e-8);
    // W blows up toward the light cone
    let w: Vec<f64> = [0.9, 0.99, 0.999].iter().map(|&z| cosine_profile_w(2, z).unwrap().abs()).collect();
    assert!(w[0] < w[1] && w[1] < w[2] && w[2] > 1e4);
    assert!(matches!(calibrate_cd(2, 64), Err(Error::Resolution(_))));
}

#[test]
fn huygens_odd_even_contrast() {
    let box_len = |n: usize| 2.0 * PI * n as f64 / 64.0;
    let radial = |n: usize| n as f64 * PI / 32.0;
    let r = [256usize, 512, 1024].map(|n| huygens_residual(3, 0.2 * radial(n), n).unwrap());
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
    assert!(r[2] < 1e-3);
    let even = huygens_residual(2, 0.05 * box_len(128), 128).unwrap();
    assert!(even > 0.1, "{even}");
    let line = huygens_residual(1, 0.2 * box_len(512), 512).unwrap();
    assert!(line < 1e-3);
    assert!(matches!(huygens_residual(3, 0.3 * radial(256), 256), Err(Error::Domain(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn factorization_identity(d in prop_oneof![Just(3usize), Just(5), Just(7), Just(9)],
                              lr in 0.0f64..6.0, li in -3.0f64..=0.0, r in 0.05f64..5.0) {
        let lam = c(lr, li);
        let k = free_kernel_odd(d, lam, r).unwrap();
        let nu = (d as f64 - 2.0) / 2.0;
        let z = lam * r;
        let direct = c(0.0, 0.25) * (2.0 * PI).powf(-nu) * r.powf(-(d as f64 - 2.0))
            * p_explicit(d, z) * (c(0.0, -1.0) * z).exp();
        prop_assert!((k - direct).norm() <= 1e-9 * direct.norm());
    }

    #[test]
    fn cosine_kernel_even_and_scaling(t in 0.1f64..10.0, z in 0.0f64..0.95, a in 0.1f64..10.0) {
        let r = z * t;
        let v = cosine_kernel_even(2, t, r).unwrap();
        prop_assert_eq!(v, cosine_kernel_even(2, t, -r).unwrap());
        let scaled = cosine_kernel_even(2, a * t, a * r).unwrap();
        prop_assert!((scaled - v * a.powi(-2)).abs() <= 1e-12 * v.abs() * a.powi(-2));
        let v4 = cosine_kernel_even(4, t, r).unwrap();
        prop_assert!((cosine_kernel_even(4, a * t, a * r).unwrap() - v4 * a.powi(-4)).abs() <= 1e-12 * v4.abs() * a.powi(-4));
    }

    #[test]
    fn weight_product_bound(x in -60.0f64..60.0, y in -60.0f64..60.0) {
        let p = ThetaProfile::exp_power(0.5, 1.0, 1.0).unwrap();
        let rg: Vec<f64> = (0..=100).map(|i| i as f64).collect();
        let pairs: Vec<(f64, f64)> = (0..15).flat_map(|i| (0..15).map(move |j| (1.0 + 9.0 * i as f64, 1.0 + 9.0 * j as f64))).collect();
        let rep = check_theta_conditions(&p, &rg, &pairs).unwrap();
        let c2 = rep.best_c2.unwrap();
        let c1 = rep.pairs.iter().find(|q| q.c2 == c2).unwrap().c1.unwrap();
        let lhs = mu_weight(&p, x.abs()).unwrap() * mu_weight(&p, y.abs()).unwrap();
        let dist = (1.0 + (x - y).powi(2)).sqrt();
        let rhs = c1.sqrt() * p.theta(c2 * p.c * dist).unwrap().sqrt();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12));
    }
}
