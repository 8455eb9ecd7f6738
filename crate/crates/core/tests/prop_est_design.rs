mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ssc_core::est_design::{design_estimator, EstMode, EstOptions, EstPathway, ObserverResult};
use ssc_core::linsolve::{expm, spectral_abscissa, Mat};
use ssc_core::sim::{simulate_lti, Vector};
use ssc_core::stab_design::{design_stabilizer, DesignOptions, StabPathway};
use ssc_core::systems::{block, compose_primal, Driver, Plant};

/// Square plant (possibly unstable), neutral `F`, a driver with one known
/// input, and random `H` / `L_η`.
fn instance(r: &mut ChaCha8Rng) -> (Plant, Driver, Mat) {
    let n = r.gen_range(2..=4);
    let m = r.gen_range(1..=2);
    let nu = r.gen_range(1..=3);
    let mut plant = random_plant(r, n, m, m, 0.5);
    if r.gen_bool(0.5) {
        plant.a = uni(r, n, n, 1.0);
    }
    let f = neutral(r, nu, 0.3);
    let drv = Driver::new(f, uni(r, nu, 1, 1.0), uni(r, m, nu, 1.0), uni(r, m, 1, 1.0)).unwrap();
    let l_eta = uni(r, nu, m, 1.0);
    (plant, drv, l_eta)
}

fn design(r: &mut ChaCha8Rng, p: EstPathway) -> Option<(Plant, Driver, ObserverResult)> {
    let (plant, drv, l_eta) = instance(r);
    let given = match p.mode() {
        EstMode::FixH => drv.h.clone(),
        EstMode::FixLeta => l_eta,
    };
    design_estimator(&plant, &drv, p, &given, &EstOptions::default())
        .ok()
        .map(|d| (plant, drv, d))
}

/// Coordinate change from `(x̃, η̃)` to the pathway's error coordinates.
fn transform(p: EstPathway, d: &ObserverResult, n: usize, nu: usize) -> Mat {
    let (i_n, i_nu) = (Mat::identity(n, n), Mat::identity(nu, nu));
    match p {
        // ξ̃ = x̃ − Π η̃
        EstPathway::B1a | EstPathway::B1b | EstPathway::B2a | EstPathway::B2b => {
            block(&[&[&i_n, &(-&d.sylvester)], &[&Mat::zeros(nu, n), &i_nu]])
        }
        // ζ̃ = η̃ − M x̃
        EstPathway::B3a | EstPathway::B3b => {
            block(&[&[&i_n, &Mat::zeros(n, nu)], &[&(-&d.sylvester), &i_nu]])
        }
    }
}

fn pathway() -> impl Strategy<Value = EstPathway> {
    proptest::sample::select(EstPathway::ALL.to_vec())
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn error_dynamics_match_pathway_coordinates(seed in any::<u64>(), p in pathway()) {
        let mut r = rng(seed);
        let got = design(&mut r, p);
        prop_assume!(got.is_some());
        let (plant, drv, d) = got.unwrap();
        let t = transform(p, &d, plant.n(), drv.nu());
        let lhs = &t * &d.error_matrix_original;
        let rhs = &d.error_matrix * &t;
        prop_assert!(rel_gap(&lhs, &rhs) <= 1e-8, "{p}: {:e}", rel_gap(&lhs, &rhs));
        prop_assert!(spectral_abscissa(&d.error_matrix_original).unwrap() < 0.0);
    }

    #[test]
    fn observer_error_is_block_triangular(seed in any::<u64>(), fix_injection in any::<bool>()) {
        let mut r = rng(seed);
        let p = if fix_injection { EstPathway::B1b } else { EstPathway::B1a };
        let got = design(&mut r, p);
        prop_assume!(got.is_some());
        let (plant, drv, d) = got.unwrap();
        prop_assert_eq!(d.error_matrix.view((0, plant.n()), (plant.n(), drv.nu())).amax(), 0.0);
    }

    /// A known input `v` enters plant and observer alike and drops out of
    /// the estimation error.
    #[test]
    fn estimation_error_ignores_known_input(seed in any::<u64>(), p in pathway()) {
        let mut r = rng(seed);
        let got = design(&mut r, p);
        prop_assume!(got.is_some());
        let (plant, drv, d) = got.unwrap();
        let used = Driver::new(drv.f.clone(), drv.g.clone(), d.h_used.clone(), drv.j.clone()).unwrap();
        let cas = compose_primal(&plant, &used).unwrap();
        let (a_o, b_v, b_y) = d.observer.state_space();
        let k = cas.a.nrows();
        let a = block(&[&[&cas.a, &Mat::zeros(k, k)], &[&(&b_y * &cas.c), &a_o]]);
        let b = block(&[&[&cas.b], &[&(&b_v + &b_y * &cas.d)]]);
        let c = block(&[&[&(-Mat::identity(k, k)), &Mat::identity(k, k)]]);
        let dd = Mat::zeros(k, 1);
        let s0 = Vector::from_fn(2 * k, |_, _| r.gen_range(-1.0..1.0));
        let v = Vector::from_element(1, r.gen_range(-2.0..2.0));
        let input = move |_t: f64| v.clone();
        let with_v = simulate_lti(&a, &b, &c, &dd, Some(&input), &s0, 5.0, 0.05).unwrap();
        let without = simulate_lti(&a, &b, &c, &dd, None, &s0, 5.0, 0.05).unwrap();
        for ((e1, e2), s) in with_v.outputs.iter().zip(&without.outputs).zip(&with_v.states) {
            prop_assert!((e1 - e2).amax() <= 1e-9 * (1.0 + s.amax()));
        }
    }

    /// The observer design on `(Σ, Σ′)` is the transpose of the forwarding
    /// stabilizer design on the transposed data.
    #[test]
    fn observer_is_dual_of_forwarding(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (plant, drv, _) = instance(&mut r);
        let est = design_estimator(&plant, &drv, EstPathway::B1a, &drv.h, &EstOptions::default());
        let stab = design_stabilizer(&plant.transpose(), &drv.f.transpose(), StabPathway::P3A1a, &drv.h.transpose(), &DesignOptions::default());
        prop_assert_eq!(est.is_ok(), stab.is_ok());
        if let (Ok(e), Ok(s)) = (est, stab) {
            prop_assert!(rel_gap(&e.error_matrix, &s.closed_loop.transpose()) <= 1e-8);
            prop_assert!(rel_gap(&e.l_eta, &s.k_eta.transpose()) <= 1e-8);
        }
    }

    #[test]
    fn estimation_error_decays(seed in any::<u64>(), p in pathway()) {
        let mut r = rng(seed);
        let got = design(&mut r, p);
        prop_assume!(got.is_some());
        let (_, _, d) = got.unwrap();
        let e = &d.error_matrix_original;
        let t_end = 20.0 / spectral_abscissa(e).unwrap().abs();
        let e0 = Vector::from_fn(e.nrows(), |_, _| r.gen_range(-1.0..1.0));
        let e_t = expm(&(e * t_end)).unwrap() * &e0;
        prop_assert!(e_t.norm() <= 1e-6 * e0.norm(), "{p}: {:e}", e_t.norm() / e0.norm());
    }
}
