//! Grid checks of the RDP accountant and both noise calibrations.

use fedsmp_core::privacy::{
    calibrate_sigma_accountant, calibrate_sigma_theorem1, compose, default_orders, epsilon, simplified_bound_applies,
    subsampled_gaussian_curve, theorem1_order, to_eps_delta, Accountant, RdpCurve, DEFAULT_SIGMA_BRACKET,
};

const DELTA: f64 = 1e-5;
const ROUNDS: [u64; 5] = [1, 10, 100, 500, 2000];
const QS: [f64; 5] = [0.001, 0.005, 0.01, 0.05, 0.2];
const SIGMAS: [f64; 5] = [0.6, 1.0, 2.0, 4.0, 10.0];

fn eps(sigma: f64, q: f64, t: u64) -> f64 {
    epsilon(sigma, q, t, DELTA).unwrap().0
}

#[test]
fn epsilon_monotone_over_grid() {
    for (ti, &t) in ROUNDS.iter().enumerate() {
        for (qi, &q) in QS.iter().enumerate() {
            for (si, &s) in SIGMAS.iter().enumerate() {
                let e = eps(s, q, t);
                assert!(e.is_finite() && e > 0.0);
                if ti > 0 {
                    assert!(e >= eps(s, q, ROUNDS[ti - 1]), "T at ({t},{q},{s})");
                }
                if qi > 0 {
                    assert!(e >= eps(s, QS[qi - 1], t), "q at ({t},{q},{s})");
                }
                if si > 0 {
                    assert!(e <= eps(SIGMAS[si - 1], q, t), "sigma at ({t},{q},{s})");
                }
            }
        }
    }
}

#[test]
fn dense_grid_oracle_for_plain_gaussian() {
    let orders: Vec<f64> = (0..200_000).map(|i| 1.0 + 1e-4 * (i + 1) as f64).collect();
    let rho = orders.iter().map(|a| a / 2.0).collect();
    let dense = to_eps_delta(&RdpCurve::new(orders, rho).unwrap(), DELTA).unwrap();
    let min_exact = {
        let a = 1.0 + (2.0 * (1e5f64).ln()).sqrt();
        a / 2.0 + (1e5f64).ln() / (a - 1.0)
    };
    assert!((dense.0 - min_exact).abs() < 1e-6);
    assert!((dense.0 - 5.30).abs() < 0.01);
}

#[test]
fn adding_orders_never_increases_epsilon() {
    let orders = default_orders();
    let full = subsampled_gaussian_curve(1.2, 0.02, &orders).unwrap();
    let few = subsampled_gaussian_curve(1.2, 0.02, &orders[..20]).unwrap();
    let e_full = to_eps_delta(&compose(&full, 300), DELTA).unwrap().0;
    let e_few = to_eps_delta(&compose(&few, 300), DELTA).unwrap().0;
    assert!(e_full <= e_few);
}

#[test]
fn compose_associative() {
    let c = subsampled_gaussian_curve(2.0, 0.1, &default_orders()).unwrap();
    assert_eq!(compose(&compose(&c, 4), 25).rho, compose(&c, 100).rho);
}

#[test]
fn theorem1_closed_form_self_consistent() {
    for &q in &QS {
        for &t in &ROUNDS {
            for &e in &[0.1, 0.5, 1.0, 4.0, 20.0] {
                let s = calibrate_sigma_theorem1(e, DELTA, q, t).unwrap();
                let lhs = e * e * s * s;
                let rhs = 7.0 * q * q * t as f64 * (e + 2.0 * (1.0 / DELTA).ln());
                assert!((lhs - rhs).abs() <= 1e-9 * rhs);
            }
        }
    }
    let s = calibrate_sigma_theorem1(1.0, DELTA, 0.01, 100).unwrap();
    assert!((calibrate_sigma_theorem1(1.0, DELTA, 0.02, 100).unwrap() / s - 2.0).abs() < 1e-12);
    assert!((calibrate_sigma_theorem1(1.0, DELTA, 0.01, 400).unwrap() / s - 2.0).abs() < 1e-12);
    assert!(calibrate_sigma_theorem1(2.0 * (1.0 / DELTA).ln(), DELTA, 0.01, 100).is_err());
}

/// Points where the closed form is admissible: `ε < 2 log(1/δ)` and the side
/// condition of the simplified subsampled bound holds at the closed form's
/// order and noise. That needs small `q` and large `σ`, hence long horizons.
fn theorem1_regime() -> Vec<(f64, u64, f64, f64)> {
    let ln_inv_delta = (1.0 / DELTA).ln();
    let mut points = Vec::new();
    for &q in &[1e-5, 1e-4, 1e-3] {
        for &e in &[0.5, 1.0, 2.0, 4.0] {
            for &s_target in &[2.0, 4.0, 8.0, 16.0] {
                let t = (s_target * s_target * e * e / (7.0 * q * q * (e + 2.0 * ln_inv_delta))).round() as u64;
                if t == 0 {
                    continue;
                }
                let s = calibrate_sigma_theorem1(e, DELTA, q, t).unwrap();
                if simplified_bound_applies(theorem1_order(e, DELTA), s, q) {
                    points.push((q, t, e, s));
                }
            }
        }
    }
    points
}

#[test]
fn accountant_is_tighter_than_closed_form_and_round_trips() {
    let points = theorem1_regime();
    assert!(points.len() >= 10, "only {} admissible points", points.len());
    for (q, t, e, s_closed) in points {
        let s_acc = calibrate_sigma_accountant(e, DELTA, q, t, DEFAULT_SIGMA_BRACKET).unwrap();
        assert!(s_acc <= s_closed, "q={q} T={t} eps={e}: {s_acc} > {s_closed}");
        let back = eps(s_acc, q, t);
        assert!(back <= e && back >= e * (1.0 - 1e-3), "q={q} T={t} eps={e}: {back}");
        // the closed-form noise meets the target under the accountant
        assert!(eps(s_closed, q, t) <= e * (1.0 + 1e-12));
    }
}

#[test]
fn doubling_rounds_increases_calibrated_sigma() {
    for &t in &[50u64, 100, 200] {
        let a = calibrate_sigma_accountant(1.0, DELTA, 0.01, t, DEFAULT_SIGMA_BRACKET).unwrap();
        let b = calibrate_sigma_accountant(1.0, DELTA, 0.01, 2 * t, DEFAULT_SIGMA_BRACKET).unwrap();
        assert!(b > a);
    }
}

#[test]
fn running_accountant_matches_offline_recomputation() {
    let mut acc = Accountant::new(1.3, 0.05, DELTA).unwrap();
    let mut last = 0.0;
    for t in 1..=50u64 {
        acc.step();
        let (e, _) = acc.epsilon();
        assert_eq!(e, epsilon(1.3, 0.05, t, DELTA).unwrap().0);
        assert!(e >= last);
        last = e;
    }
}
