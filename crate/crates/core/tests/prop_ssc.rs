mod common;

use common::*;
use nalgebra::DVector;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ssc_core::linsolve::Mat;
use ssc_core::ssc::{
    column_rank_report, operator_matrix, row_rank_report, solve_operator_equation, ssc_dual,
    ssc_primal, Side,
};
use ssc_core::systems::{pbh, PbhMode, Plant};

/// Plant, driver `F` with spectrum away from eig(A), and half the time a
/// square plant with a zero placed at a real eigenvalue of `F`.
fn instance(r: &mut ChaCha8Rng, square: bool) -> (Plant, Mat) {
    let n = r.gen_range(2..=5);
    let m = r.gen_range(1..=2);
    let p = if square { m } else { r.gen_range(1..=3) };
    let nu = r.gen_range(1..=3);
    let mut plant = random_plant(r, n, m, p, 0.5);
    let lam0 = r.gen_range(-0.3..0.3);
    let mut fj = Mat::zeros(nu, nu);
    fj[(0, 0)] = lam0;
    if nu > 1 {
        let rest = neutral(r, nu - 1, 0.3);
        fj.view_mut((1, 1), (nu - 1, nu - 1)).copy_from(&rest);
    }
    let v = Mat::identity(nu, nu) + uni(r, nu, nu, 0.3);
    let f = &v * fj * v.clone().try_inverse().unwrap();
    if square && r.gen_bool(0.5) {
        let res = (&plant.a - Mat::identity(n, n) * lam0)
            .try_inverse()
            .unwrap();
        let low = if m == 1 {
            Mat::zeros(1, 1)
        } else {
            uni(r, m, 1, 1.0) * uni(r, 1, m, 1.0)
        };
        plant.d = low + &plant.c * res * &plant.b;
    }
    (plant, f)
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn operators_are_linear(seed in any::<u64>(), alpha in -3.0..3.0f64) {
        let mut r = rng(seed);
        let (plant, f) = instance(&mut r, false);
        let nu = f.nrows();
        let (h1, h2) = (uni(&mut r, plant.m(), nu, 1.0), uni(&mut r, plant.m(), nu, 1.0));
        let lhs = ssc_primal(&plant, &f, &(&h1 + &h2 * alpha)).unwrap().value;
        let rhs = ssc_primal(&plant, &f, &h1).unwrap().value + ssc_primal(&plant, &f, &h2).unwrap().value * alpha;
        prop_assert!(rel_gap(&lhs, &rhs) <= 1e-9);
        let (g1, g2) = (uni(&mut r, nu, plant.p(), 1.0), uni(&mut r, nu, plant.p(), 1.0));
        let lhs = ssc_dual(&plant, &f, &(&g1 + &g2 * alpha)).unwrap().value;
        let rhs = ssc_dual(&plant, &f, &g1).unwrap().value + ssc_dual(&plant, &f, &g2).unwrap().value * alpha;
        prop_assert!(rel_gap(&lhs, &rhs) <= 1e-9);
    }

    #[test]
    fn operator_matrix_acts_on_vectorizations(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (plant, f) = instance(&mut r, false);
        let nu = f.nrows();
        let h = uni(&mut r, plant.m(), nu, 1.0);
        let om = operator_matrix(&plant, &f, Side::Primal).unwrap();
        let v = &om.matrix * DVector::from_column_slice(h.as_slice());
        let val = ssc_primal(&plant, &f, &h).unwrap().value;
        prop_assert!((v - DVector::from_column_slice(val.as_slice())).amax() <= 1e-8 * val.amax().max(1.0));
        let g = uni(&mut r, nu, plant.p(), 1.0);
        let om = operator_matrix(&plant, &f, Side::Dual).unwrap();
        let v = &om.matrix * DVector::from_column_slice(g.as_slice());
        let val = ssc_dual(&plant, &f, &g).unwrap().value;
        prop_assert!((v - DVector::from_column_slice(val.as_slice())).amax() <= 1e-8 * val.amax().max(1.0));
    }

    #[test]
    fn batteries_are_consistent_and_transfer_holds(seed in any::<u64>(), square in any::<bool>()) {
        let mut r = rng(seed);
        let (plant, f) = instance(&mut r, square);
        let nu = f.nrows();
        let g = uni(&mut r, nu, plant.p(), 1.0);
        let h = uni(&mut r, plant.m(), nu, 1.0);
        let row = row_rank_report(&plant, &f, Some(&g)).unwrap();
        let col = column_rank_report(&plant, &f, Some(&h)).unwrap();
        prop_assert!(row.consistent && col.consistent);
        prop_assert_eq!(row.transfer_violations(), 0);
        prop_assert_eq!(col.transfer_violations(), 0);
        // direct transfer check: (F, G) controllable and full row rank ⇒ (F, C_d(G)) controllable
        if row.rosenbrock && pbh(&f, &g, PbhMode::Controllable).unwrap().holds {
            let cdg = ssc_dual(&plant, &f, &g).unwrap().value;
            prop_assert!(pbh(&f, &cdg, PbhMode::Controllable).unwrap().holds);
        }
        if col.rosenbrock && pbh(&f, &h, PbhMode::Observable).unwrap().holds {
            let cph = ssc_primal(&plant, &f, &h).unwrap().value;
            prop_assert!(pbh(&f, &cph, PbhMode::Observable).unwrap().holds);
        }
    }

    #[test]
    fn square_plant_operators_invert(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (plant, f) = instance(&mut r, true);
        let row = row_rank_report(&plant, &f, None).unwrap();
        let nu = f.nrows();
        for side in [Side::Primal, Side::Dual] {
            let om = operator_matrix(&plant, &f, side).unwrap();
            prop_assert_eq!(om.is_injective() && om.is_surjective(), row.rosenbrock);
            if row.rosenbrock {
                let target = match side {
                    Side::Primal => uni(&mut r, plant.p(), nu, 1.0),
                    Side::Dual => uni(&mut r, nu, plant.m(), 1.0),
                };
                let inv = solve_operator_equation(&plant, &f, side, &target).unwrap();
                let back = match side {
                    Side::Primal => ssc_primal(&plant, &f, &inv.argument).unwrap().value,
                    Side::Dual => ssc_dual(&plant, &f, &inv.argument).unwrap().value,
                };
                prop_assert!(rel_gap(&back, &target) <= 1e-7);
            }
        }
    }

    /// Transmission zeros survive state feedback and output injection:
    /// the Rosenbrock matrix is multiplied by unimodular factors.
    #[test]
    fn rank_verdict_invariant_under_feedback_and_injection(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (plant, f) = instance(&mut r, true);
        let (n, m, p) = (plant.n(), plant.m(), plant.p());
        let k = uni(&mut r, m, n, 1.0);
        let l = uni(&mut r, n, p, 1.0);
        let moved = Plant::new(
            &plant.a + &plant.b * &k + &l * &plant.c + &l * &plant.d * &k,
            &plant.b + &l * &plant.d,
            &plant.c + &plant.d * &k,
            plant.d.clone(),
        ).unwrap();
        prop_assume!(separation(&moved.a, &f) > 0.05);
        let before = row_rank_report(&plant, &f, None).unwrap().rosenbrock;
        let after = row_rank_report(&moved, &f, None).unwrap().rosenbrock;
        prop_assert_eq!(before, after);
    }
}
