mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use ssc_core::linsolve::{expm, lqr_gain, solve_lyapunov, solve_sylvester, spectral_abscissa, Mat};

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn sylvester_matches_kronecker_solve(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=8);
        let nu = r.gen_range(1..=(64 / n).min(8));
        let a = uni(&mut r, n, n, 1.0);
        let b = uni(&mut r, nu, nu, 1.0) + Mat::identity(nu, nu) * r.gen_range(-2.0..2.0);
        prop_assume!(separation(&a, &b) > 0.05);
        let c = uni(&mut r, n, nu, 1.0);
        let x = solve_sylvester(&a, &b, &c).unwrap();
        let res = (&a * &x - &x * &b - &c).norm() / ((a.norm() + b.norm()) * x.norm() + c.norm());
        prop_assert!(res <= 1e-9, "residual {res:e}");
        let k = Mat::identity(nu, nu).kronecker(&a) - b.transpose().kronecker(&Mat::identity(n, n));
        let vx = k.lu().solve(&DVector::from_column_slice(c.as_slice())).unwrap();
        let xo = Mat::from_column_slice(n, nu, vx.as_slice());
        prop_assert!(rel_gap(&x, &xo) <= 1e-8);
    }

    #[test]
    fn expm_semigroup(seed in any::<u64>(), s in 0.0..1.0f64, t in 0.0..1.0f64) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=6);
        let m = hurwitz(&mut r, n, 0.1);
        let lhs = expm(&(&m * s)).unwrap() * expm(&(&m * t)).unwrap();
        let rhs = expm(&(&m * (s + t))).unwrap();
        prop_assert!((&lhs - &rhs).norm() <= 1e-8 * rhs.norm().max(1.0));
    }

    #[test]
    fn lqr_stabilizes_and_solves_riccati(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, m) = (r.gen_range(1..=5), r.gen_range(1..=3));
        let a = uni(&mut r, n, n, 1.0);
        let b = uni(&mut r, n, m, 1.0);
        let (q, rw) = (Mat::identity(n, n), Mat::identity(m, m));
        let sol = lqr_gain(&a, &b, &q, &rw).unwrap();
        prop_assert!(spectral_abscissa(&(&a + &b * &sol.k)).unwrap() < 0.0);
        let p = &sol.p;
        let care = a.transpose() * p + p * &a - p * &b * b.transpose() * p + &q;
        prop_assert!(care.norm() <= 1e-8 * (1.0 + p.norm() * (a.norm() + b.norm_squared() * p.norm())));
    }

    #[test]
    fn lyapunov_residual(seed in any::<u64>()) {
        let mut r = rng(seed);
        let n = r.gen_range(1..=6);
        let a = hurwitz(&mut r, n, 0.2);
        let w = uni(&mut r, n, n, 1.0);
        let q = &w * w.transpose() + Mat::identity(n, n);
        let p = solve_lyapunov(&a, &q).unwrap();
        let res = a.transpose() * &p + &p * &a + &q;
        prop_assert!(res.norm() <= 1e-9 * (1.0 + 2.0 * a.norm() * p.norm() + q.norm()));
        prop_assert!(p.clone().cholesky().is_some());
    }
}
