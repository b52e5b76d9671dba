use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use splap_core::constitutive::{
    monotonicity_pairing, potential, quasi_distance_sq, tensor_f, tensor_s, GrowthParams, SmallMatrix,
};

fn mat(rows: usize, cols: usize, e: &[f64]) -> SmallMatrix {
    SmallMatrix::from_rows(rows, cols, &e[..rows * cols]).unwrap()
}

fn entries() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, 9)
}

fn shape() -> impl Strategy<Value = (usize, usize)> {
    (1..=3usize, 1..=3usize)
}

fn exponent() -> impl Strategy<Value = f64> {
    prop::sample::select(vec![1.1, 1.5, 2.0, 2.5, 4.0])
}

proptest! {
    #[test]
    fn pairing_is_nonnegative((r, c) in shape(), a in entries(), b in entries(), p in exponent(), kappa in 0.0..2.0f64) {
        let gp = GrowthParams::new(p, kappa).unwrap();
        let v = monotonicity_pairing(&mat(r, c, &a), &mat(r, c, &b), &gp).unwrap();
        prop_assert!(v >= 0.0);
    }

    #[test]
    fn tensor_s_is_homogeneous((r, c) in shape(), a in entries(), p in exponent(), t in 0.01..50.0f64) {
        let gp = GrowthParams::new(p, 0.0).unwrap();
        let xi = mat(r, c, &a);
        let lhs = tensor_s(&xi.scale(t), &gp).unwrap();
        let rhs = tensor_s(&xi, &gp).unwrap().scale(t.powf(p - 1.0));
        let err = lhs.sub(&rhs).unwrap().norm();
        prop_assert!(err <= 1e-12 * rhs.norm().max(f64::MIN_POSITIVE));
    }

    #[test]
    fn f_squared_equals_s_pairing((r, c) in shape(), a in entries(), p in exponent()) {
        let gp = GrowthParams::new(p, 0.0).unwrap();
        let xi = mat(r, c, &a);
        let f = tensor_f(&xi, &gp).unwrap();
        let lhs = f.dot(&f).unwrap();
        let rhs = tensor_s(&xi, &gp).unwrap().dot(&xi).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
    }

    #[test]
    fn potential_differentiates_to_the_flux_factor(t in 0.05..20.0f64, p in exponent(), kappa in 0.0..3.0f64) {
        let gp = GrowthParams::new(p, kappa).unwrap();
        let h = 1e-5 * t;
        let fd = (potential(t + h, &gp) - potential(t - h, &gp)) / (2.0 * h);
        let exact = (kappa + t).powf(p - 2.0) * t;
        prop_assert!((fd - exact).abs() <= 1e-6 * exact.abs());
    }

    #[test]
    fn distance_and_pairing_vanish_together((r, c) in shape(), a in entries(), p in exponent(), kappa in 0.0..2.0f64) {
        let gp = GrowthParams::new(p, kappa).unwrap();
        let xi = mat(r, c, &a);
        prop_assert_eq!(quasi_distance_sq(&xi, &xi, &gp).unwrap(), 0.0);
        prop_assert_eq!(monotonicity_pairing(&xi, &xi, &gp).unwrap(), 0.0);
    }
}

/// Range of `|F(ξ)−F(η)|² / (S(ξ)−S(η)):(ξ−η)` over random pairs.
fn ratio_range(p: f64, kappa: f64, rows: usize, cols: usize, seed: u64) -> (f64, f64) {
    let gp = GrowthParams::new(p, kappa).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for _ in 0..10_000 {
        let a: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-10.0..10.0)).collect();
        let b: Vec<f64> = (0..rows * cols).map(|_| rng.random_range(-10.0..10.0)).collect();
        let xi = mat(rows, cols, &a);
        let eta = mat(rows, cols, &b);
        let d = quasi_distance_sq(&xi, &eta, &gp).unwrap();
        let m = monotonicity_pairing(&xi, &eta, &gp).unwrap();
        assert!(m > 0.0 && d > 0.0, "p={p} kappa={kappa}: distinct pair gave d={d}, m={m}");
        lo = lo.min(d / m);
        hi = hi.max(d / m);
    }
    (lo, hi)
}

#[test]
fn distance_and_pairing_are_equivalent() {
    for p in [1.1, 1.5, 2.0, 2.5, 4.0] {
        // bounds depending on p alone
        let q: f64 = p - 1.0;
        let c = 0.5 * q.min(1.0 / q);
        let big_c = 2.0 * q.max(1.0 / q);
        for kappa in [0.0, 1.0] {
            for (rows, cols) in [(1, 2), (2, 2), (3, 3)] {
                let (lo, hi) = ratio_range(p, kappa, rows, cols, 7);
                assert!(lo >= c && hi <= big_c, "p={p} kappa={kappa} {rows}x{cols}: ratio in [{lo}, {hi}]");
            }
        }
    }
}

#[test]
fn p2_distance_is_euclidean() {
    let gp = GrowthParams::new(2.0, 0.0).unwrap();
    let xi = SmallMatrix::row2(1.0, 0.0).unwrap();
    let eta = SmallMatrix::row2(0.0, 1.0).unwrap();
    assert_eq!(quasi_distance_sq(&xi, &eta, &gp).unwrap(), 2.0);
    assert_eq!(monotonicity_pairing(&xi, &eta, &gp).unwrap(), 2.0);
}
