use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use funnel_core::dynamics::{
    step, vinh_derivative, ClosedLoopModel, CoriolisTerms, Dubins, Dynamics, DynamicsError, EntryModel,
};
use funnel_core::poly::{eval_all, Scalar, Taylor};
use funnel_core::scenarios::msl_like_params;
use nalgebra::DMatrix;

/// Second transcription of Vinh's equations, written straight from the
/// textbook form with all eight disturbances active.
fn vinh(x: &[f64; 6], sigma: f64, w: &[f64; 8], p: &funnel_core::dynamics::EntryParams) -> [f64; 6] {
    let [r, _theta, phi, v, gamma, psi] = *x;
    let h = r - p.planet_radius;
    let rho = ((p.atmosphere.a0 + w[6]) + (p.atmosphere.a1 + w[7]) * (h - p.atmosphere.h0)).exp();
    let lift = 0.5 * rho * v * v * p.ref_area * p.cl / p.mass;
    let drag = 0.5 * rho * v * v * p.ref_area * p.cd / p.mass;
    let g = p.mu / (r * r);
    [
        v * gamma.sin() + w[0],
        v / r * gamma.cos() * psi.cos() / phi.cos() + w[1],
        v / r * gamma.cos() * psi.sin() + w[2],
        -drag - g * gamma.sin() + w[3],
        (lift * sigma.cos() - (g - v * v / r) * gamma.cos()) / v + w[4],
        -(lift * sigma.sin() + v * v / r * gamma.cos().powi(2) * psi.cos() * phi.tan()) / (v * gamma.cos()) + w[5],
    ]
}

fn all_active() -> funnel_core::dynamics::EntryParams {
    funnel_core::dynamics::EntryParams {
        disturbance_mask: [true; 8],
        ..msl_like_params()
    }
}

fn vacuum() -> funnel_core::dynamics::EntryParams {
    let mut p = msl_like_params();
    // exp(-1000) underflows to exactly zero.
    p.atmosphere.a0 = -1000.0;
    p.disturbance_mask = [false; 8];
    p
}

const MSL_STATE: [f64; 6] = [3_396_200.0 + 42_000.0, 0.13, -0.07, 4_870.0, -0.21, 0.35];

fn rel_close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter()
        .zip(b)
        .all(|(x, y)| (x - y).abs() <= tol * x.abs().max(y.abs()).max(f64::MIN_POSITIVE))
}

#[test]
fn vertical_ballistic_flight() {
    let p = vacuum();
    let radius = p.planet_radius;
    let v = 100.0;
    let d = vinh_derivative(&[radius, 0.0, 0.0, v, FRAC_PI_2, 0.0], 0.0, &[], &p).unwrap();
    let g = p.mu / (radius * radius);
    assert!((d[0] - v).abs() < 1e-12);
    assert!(d[1].abs() < 1e-12 && d[2].abs() < 1e-12);
    assert!((d[3] + g).abs() < 1e-12);
    assert!(d[4].is_finite() && d[4].abs() < 1e-12);
    assert_eq!(d[5], 0.0);
}

#[test]
fn circular_orbit_keeps_flight_path_angle() {
    let p = vacuum();
    let r = p.planet_radius + 200_000.0;
    let v = (p.mu / r).sqrt();
    let d = vinh_derivative(&[r, 0.0, 0.0, v, 0.0, 0.0], 0.0, &[], &p).unwrap();
    assert!(d[4].abs() < 1e-15, "γ̇ = {}", d[4]);
    assert!(d[3].abs() < 1e-15 && d[0].abs() < 1e-12);
}

#[test]
fn generic_state_matches_second_transcription() {
    let p = all_active();
    let cases: [([f64; 6], f64, [f64; 8]); 3] = [
        (MSL_STATE, 1.0, [0.0; 8]),
        (MSL_STATE, -0.4, [3.0, 1e-6, -2e-6, 0.5, 1e-4, -2e-4, 0.08, -1e-6]),
        (
            [3_396_200.0 + 11_000.0, -0.3, 0.4, 620.0, -0.5, -1.2],
            2.5,
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, -0.1, 2e-6],
        ),
    ];
    for (x, sigma, w) in cases {
        let got = vinh_derivative(&x, sigma, &w, &p).unwrap();
        let want = vinh(&x, sigma, &w, &p);
        assert!(rel_close(&got, &want, 1e-12), "{got:?} vs {want:?}");
    }
}

#[test]
fn singular_denominators_are_reported() {
    let p = msl_like_params();
    let w = [0.0, 0.0];
    let mut x = MSL_STATE;
    x[3] = 0.0;
    assert!(matches!(
        vinh_derivative(&x, 1.0, &w, &p),
        Err(DynamicsError::Domain { denominator: "V", .. })
    ));
    let mut x = MSL_STATE;
    x[2] = FRAC_PI_2;
    assert!(matches!(
        vinh_derivative(&x, 1.0, &w, &p),
        Err(DynamicsError::Domain {
            denominator: "cos(phi)",
            ..
        })
    ));
    let mut x = MSL_STATE;
    x[0] = -1.0;
    assert!(vinh_derivative(&x, 1.0, &w, &p).is_err());
}

struct Loud;

impl CoriolisTerms for Loud {
    fn eval(&self, _: &[f64], _: f64) -> (f64, f64) {
        (1e3, -1e3)
    }
    fn eval_taylor(&self, x: &[Taylor], _: f64) -> (Taylor, Taylor) {
        (x[0].lift(1e3), x[0].lift(-1e3))
    }
}

#[test]
fn stationary_planet_ignores_coriolis_hook() {
    let p = msl_like_params();
    let plain = EntryModel::new(p.clone()).unwrap();
    let hooked = EntryModel::with_coriolis(p.clone(), Arc::new(Loud)).unwrap();
    let w = [0.02, 1e-7];
    assert_eq!(
        plain.eval(&MSL_STATE, &[1.0], &w).unwrap(),
        hooked.eval(&MSL_STATE, &[1.0], &w).unwrap()
    );
    let spinning = EntryModel::with_coriolis(
        funnel_core::dynamics::EntryParams {
            omega_planet: 7.088e-5,
            ..p
        },
        Arc::new(Loud),
    )
    .unwrap();
    let d = spinning.eval(&MSL_STATE, &[1.0], &w).unwrap();
    let base = plain.eval(&MSL_STATE, &[1.0], &w).unwrap();
    assert!((d[4] - base[4] - 1e3).abs() < 1e-9 && (d[5] - base[5] + 1e3).abs() < 1e-9);
}

fn entry_closed_loop() -> ClosedLoopModel {
    let gain = DMatrix::from_row_slice(1, 6, &[1e-5, 0.0, 0.0, -2e-3, 3.0, 0.1]);
    ClosedLoopModel::new(
        Arc::new(EntryModel::new(all_active()).unwrap()),
        MSL_STATE.to_vec(),
        vec![1.0],
        gain,
    )
    .unwrap()
}

#[test]
fn closed_loop_deviation_is_a_two_point_difference() {
    let cl = entry_closed_loop();
    assert_eq!(cl.closed_loop_deviation(&[0.0; 6], &[0.0; 8]).unwrap(), vec![0.0; 6]);

    let p = all_active();
    let xbar = [0.0, 0.0, 0.0, 1e-3, 0.0, 0.0];
    let got = cl.closed_loop_deviation(&xbar, &[0.0; 8]).unwrap();
    let x: [f64; 6] = std::array::from_fn(|i| MSL_STATE[i] + xbar[i]);
    let sigma = 1.0 + (0..6).map(|j| cl.gain[(0, j)] * xbar[j]).sum::<f64>();
    let a = vinh(&x, sigma, &[0.0; 8], &p);
    let b = vinh(&MSL_STATE, 1.0, &[0.0; 8], &p);
    for i in 0..6 {
        // The difference cancels the leading digits, so compare against the
        // size of the terms being subtracted.
        let err = (got[i] - (a[i] - b[i])).abs();
        assert!(
            err <= 1e-12 * a[i].abs().max(b[i].abs()),
            "component {i}: {} vs {}",
            got[i],
            a[i] - b[i]
        );
    }
}

/// Per-variable scales that make a unit step comparable across `(x̄, w)`.
const SCALES: [f64; 14] = [
    1_000.0, 1e-4, 1e-4, 10.0, 1e-3, 1e-3, 1e-2, 1e-6, 1e-6, 1e-2, 1e-5, 1e-5, 0.1, 2e-6,
];

#[test]
fn expansion_jacobian_matches_finite_differences() {
    let cl = entry_closed_loop();
    let polys = cl.polynomialize(3).unwrap();
    let zero = vec![0.0; 14];
    assert!(eval_all(&polys, &zero).unwrap().iter().all(|v| *v == 0.0));
    let f = |z: &[f64]| cl.closed_loop_deviation(&z[..6], &z[6..]).unwrap();
    for (j, s) in SCALES.iter().enumerate() {
        let h = 1e-4 * s;
        let (mut a, mut b) = (zero.clone(), zero.clone());
        a[j] = h;
        b[j] = -h;
        let (fa, fb) = (f(&a), f(&b));
        let num: Vec<f64> = (0..6).map(|i| (fa[i] - fb[i]) / (2.0 * h)).collect();
        let col: Vec<f64> = polys
            .iter()
            .map(|p| p.derivative(j).unwrap().eval(&zero).unwrap())
            .collect();
        let norm = num.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let err = num.iter().zip(&col).fold(0.0f64, |m, (n, c)| m.max((n - c).abs()));
        assert!(
            err <= 1e-6 * norm.max(f64::MIN_POSITIVE),
            "column {j}: {col:?} vs {num:?}"
        );
    }
}

#[test]
fn cubic_expansion_error_is_fourth_order() {
    let cl = entry_closed_loop();
    let polys = cl.polynomialize(3).unwrap();
    let dir: Vec<f64> = SCALES
        .iter()
        .enumerate()
        .map(|(i, s)| s * if i % 3 == 0 { 0.8 } else { -0.6 })
        .collect();
    let error = |eps: f64| {
        let z: Vec<f64> = dir.iter().map(|d| d * eps).collect();
        let exact = cl.closed_loop_deviation(&z[..6], &z[6..]).unwrap();
        let approx = eval_all(&polys, &z).unwrap();
        exact
            .iter()
            .zip(&approx)
            .fold(0.0f64, |m, (e, a)| m.max((e - a).abs() / SCALES[0].max(1.0)))
    };
    let (coarse, fine) = (error(1.0), error(0.5));
    let ratio = coarse / fine;
    assert!(
        coarse > 0.0 && (12.0..=20.0).contains(&ratio),
        "errors {coarse:e} -> {fine:e}, ratio {ratio}"
    );
}

#[test]
fn dubins_turning_circle_has_closed_form() {
    let (v, omega) = (2.0, 0.5);
    let car = Dubins::new(v, [false; 3]).unwrap();
    let dt = 0.01;
    let mut x = vec![0.0; 3];
    for _ in 0..100 {
        x = step(&car, &x, &[omega], &[], dt).unwrap();
    }
    let t: f64 = 1.0;
    let want = [
        v / omega * (omega * t).sin(),
        v / omega * (1.0 - (omega * t).cos()),
        omega * t,
    ];
    for i in 0..3 {
        assert!((x[i] - want[i]).abs() < 1e-10, "{x:?} vs {want:?}");
    }
}

#[test]
fn sine_expands_to_its_series() {
    #[derive(Debug)]
    struct Pendulum;
    impl Dynamics for Pendulum {
        fn name(&self) -> &str {
            "pendulum"
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            0
        }
        fn disturbance_dim(&self) -> usize {
            0
        }
        fn eval(&self, x: &[f64], _: &[f64], _: &[f64]) -> Result<Vec<f64>, DynamicsError> {
            Ok(vec![x[0].sin()])
        }
        fn eval_taylor(&self, x: &[Taylor], _: &[Taylor], _: &[Taylor]) -> Result<Vec<Taylor>, DynamicsError> {
            Ok(vec![x[0].sin()])
        }
    }
    let cl = ClosedLoopModel::new(Arc::new(Pendulum), vec![0.0], vec![], DMatrix::zeros(0, 1)).unwrap();
    let p = &cl.polynomialize(3).unwrap()[0];
    for x in [0.3, -0.1, 0.05] {
        let want = x - x * x * x / 6.0;
        assert!((p.eval(&[x]).unwrap() - want).abs() < 1e-15);
    }
    assert_eq!(p.degree(), 3);
}
