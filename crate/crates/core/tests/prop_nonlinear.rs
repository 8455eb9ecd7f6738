mod common;

use std::sync::Arc;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use ssc_core::linsolve::Mat;
use ssc_core::nonlinear::{
    jacobian_consistency, solve_invariance_dual, solve_invariance_primal, vdp_example, CubicDamped,
    LinearField, QuadratureOptions, VanDerPol, VdpOutput, VdpParams, VectorField,
};
use ssc_core::sim::Vector;
use ssc_core::ssc::{ssc_dual, ssc_primal};

proptest! {
    #![proptest_config(config(8))]

    /// On linear fields the invariance integrals return `Πη` and `Mx`, and
    /// both maps vanish at the origin.
    #[test]
    fn linear_fields_give_sylvester_solutions(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (n, m, p) = (r.gen_range(1..=3), r.gen_range(1..=2), r.gen_range(1..=2));
        let nu = r.gen_range(1..=2);
        let plant = random_plant(&mut r, n, m, p, 0.5);
        let f = neutral(&mut r, nu, 0.3);
        let (h, g) = (uni(&mut r, m, nu, 1.0), uni(&mut r, nu, p, 1.0));
        let eta = Vector::from_fn(nu, |_, _| r.gen_range(-1.0..1.0));
        let x = Vector::from_fn(n, |_, _| r.gen_range(-1.0..1.0));
        let opts = QuadratureOptions::default();
        let pi = solve_invariance_primal(
            Arc::new(LinearField(f.clone())), Arc::new(LinearField(h.clone())),
            &plant.a, &plant.b, std::slice::from_ref(&eta), &opts,
        ).unwrap();
        let mu = solve_invariance_dual(
            Arc::new(LinearField(plant.a.clone())), Arc::new(LinearField(plant.c.clone())),
            &f, &g, std::slice::from_ref(&x), &opts,
        ).unwrap();
        let big_pi = ssc_primal(&plant, &f, &h).unwrap().sylvester;
        let big_m = ssc_dual(&plant, &f, &g).unwrap().sylvester;
        prop_assert!((pi.eval(&eta).unwrap() - &big_pi * &eta).norm() <= 1e-6 * (1.0 + eta.norm()));
        prop_assert!((mu.eval(&x).unwrap() - &big_m * &x).norm() <= 1e-6 * (1.0 + x.norm()));
        prop_assert!(pi.eval(&Vector::zeros(nu)).unwrap().amax() <= 1e-12);
        prop_assert!(mu.eval(&Vector::zeros(n)).unwrap().amax() <= 1e-12);
    }

    /// `x' = −x − x³` with `c(x) = x`, `F = 0`, `G = 1` has `μ(x) = −arctan x`.
    #[test]
    fn cubic_dual_matches_arctan(x in -3.0f64..3.0) {
        let pt = Vector::from_element(1, x);
        let mu = solve_invariance_dual(
            Arc::new(CubicDamped), Arc::new(LinearField(Mat::identity(1, 1))),
            &Mat::zeros(1, 1), &Mat::identity(1, 1),
            std::slice::from_ref(&pt), &QuadratureOptions::default(),
        ).unwrap();
        let got = mu.eval(&pt).unwrap()[0];
        prop_assert!((got + x.atan()).abs() <= 1e-4, "{got} vs {}", -x.atan());
    }
}

proptest! {
    #![proptest_config(config(64))]

    /// The polynomial manifold of the Van der Pol example solves its
    /// invariance equation for every admissible parameter choice.
    #[test]
    fn vdp_closed_form_is_invariant(
        mu in 0.2f64..5.0, a1 in 0.2f64..3.0, a3 in 0.2f64..3.0, a4 in 0.2f64..3.0,
        b3 in -2.0f64..2.0, seed in any::<u64>(),
    ) {
        let ex = vdp_example(VdpParams { mu, alpha1: a1, alpha3: a3, alpha4: a4, beta3: b3 }).unwrap();
        let mut r = rng(seed);
        let pts: Vec<Vector> = (0..16)
            .map(|_| Vector::from_vec(vec![r.gen_range(-2.5..2.5), r.gen_range(-4.0..4.0)]))
            .collect();
        let sol = ex.pi_solution(&pts).unwrap();
        let scale = pts.iter().map(|p| 1.0 + p.amax().powi(3)).fold(0.0, f64::max);
        prop_assert!(sol.residual.max <= 1e-10 * scale * (1.0 + mu), "{:e}", sol.residual.max);
        prop_assert_eq!(ex.pi(&Vector::zeros(2)).amax(), 0.0);
    }

    #[test]
    fn field_jacobians_match_differences(x0 in -2.0f64..2.0, x1 in -2.0f64..2.0, mu in 0.1f64..5.0) {
        let x = Vector::from_vec(vec![x0, x1]);
        let fields: [&dyn VectorField; 2] = [&VanDerPol { mu }, &VdpOutput];
        for f in fields {
            prop_assert!(jacobian_consistency(f, &x) <= 1e-6);
        }
        prop_assert!(jacobian_consistency(&CubicDamped, &Vector::from_element(1, x0)) <= 1e-6);
    }
}
