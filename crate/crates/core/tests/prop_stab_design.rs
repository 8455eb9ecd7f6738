mod common;

use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ssc_core::linsolve::{spectral_abscissa, Mat};
use ssc_core::sim::{simulate_lti, Vector};
use ssc_core::ssc::row_rank_report;
use ssc_core::stab_design::{
    design_stabilizer, log_grid, CertificateKind, DesignOptions, DesignResult, StabMode,
    StabPathway,
};
use ssc_core::systems::{block, Plant};

/// Square plant (possibly unstable), neutral `F`, random `G` and `K_η`.
fn instance(r: &mut ChaCha8Rng) -> (Plant, Mat, Mat, Mat) {
    let n = r.gen_range(2..=4);
    let m = r.gen_range(1..=2);
    let nu = r.gen_range(1..=3);
    let mut plant = random_plant(r, n, m, m, 0.5);
    if r.gen_bool(0.5) {
        plant.a = uni(r, n, n, 1.0);
    }
    let f = neutral(r, nu, 0.3);
    (plant, f.clone(), uni(r, nu, m, 1.0), uni(r, m, nu, 1.0))
}

fn design(
    r: &mut ChaCha8Rng,
    p: StabPathway,
    opts: &DesignOptions,
) -> Option<(Plant, Mat, DesignResult)> {
    let (plant, f, g, k_eta) = instance(r);
    let given = match p.mode() {
        StabMode::FixG => g,
        StabMode::FixKeta => k_eta,
    };
    design_stabilizer(&plant, &f, p, &given, opts)
        .ok()
        .map(|d| (plant, f, d))
}

/// Coordinate change taking `(x, η)` to the pathway's coordinates.
fn transform(p: StabPathway, d: &DesignResult, n: usize, nu: usize) -> Mat {
    let (i_n, i_nu) = (Mat::identity(n, n), Mat::identity(nu, nu));
    match p {
        // ζ = η − M x
        StabPathway::P3A1a | StabPathway::P3A1b | StabPathway::P3A2a | StabPathway::P3A2b => {
            block(&[&[&i_n, &Mat::zeros(n, nu)], &[&(-&d.sylvester), &i_nu]])
        }
        // ξ = x − Π η
        StabPathway::P3A3a | StabPathway::P3A3b => {
            block(&[&[&i_n, &(-&d.sylvester)], &[&Mat::zeros(nu, n), &i_nu]])
        }
    }
}

fn pathway() -> impl Strategy<Value = StabPathway> {
    proptest::sample::select(StabPathway::ALL.to_vec())
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn forwarding_loop_is_block_triangular(seed in any::<u64>(), fix_gain in any::<bool>()) {
        let mut r = rng(seed);
        let p = if fix_gain { StabPathway::P3A1b } else { StabPathway::P3A1a };
        let got = design(&mut r, p, &DesignOptions::default());
        prop_assume!(got.is_some());
        let (plant, f, d) = got.unwrap();
        let (n, nu) = (plant.n(), f.nrows());
        prop_assert_eq!(d.closed_loop.view((n, 0), (nu, n)).amax(), 0.0);
        prop_assert!(spectral_abscissa(&d.closed_loop).unwrap() < 0.0);
    }

    /// The implemented feedback in `(x, η)` and the pathway's closed loop
    /// are the same system in different coordinates.
    #[test]
    fn implemented_loop_matches_pathway_coordinates(seed in any::<u64>(), p in pathway()) {
        let mut r = rng(seed);
        let got = design(&mut r, p, &DesignOptions::default());
        prop_assume!(got.is_some());
        let (plant, f, d) = got.unwrap();
        let t = transform(p, &d, plant.n(), f.nrows());
        let lhs = &t * &d.closed_loop_original;
        let rhs = &d.closed_loop * &t;
        prop_assert!(rel_gap(&lhs, &rhs) <= 1e-8, "{p}: {:e}", rel_gap(&lhs, &rhs));
    }

    /// Simulating `u = (K − K_η M) x + K_η η` in original coordinates
    /// reproduces the triangular system mapped back through `ζ = η − M x`.
    #[test]
    fn forwarding_trajectories_agree(seed in any::<u64>()) {
        let mut r = rng(seed);
        let got = design(&mut r, StabPathway::P3A1a, &DesignOptions::default());
        prop_assume!(got.is_some());
        let (plant, f, d) = got.unwrap();
        let (n, nu) = (plant.n(), f.nrows());
        let dim = n + nu;
        let s0 = Vector::from_fn(dim, |_, _| r.gen_range(-1.0..1.0));
        let t = transform(StabPathway::P3A1a, &d, n, nu);
        let none = |k: usize| (Mat::zeros(k, 0), Mat::zeros(0, k), Mat::zeros(0, 0));
        let (b0, c0, d0) = none(dim);
        let orig = simulate_lti(&d.closed_loop_original, &b0, &c0, &d0, None, &s0, 10.0, 0.1).unwrap();
        let tr = simulate_lti(&d.closed_loop, &b0, &c0, &d0, None, &(&t * &s0), 10.0, 0.1).unwrap();
        let t_inv = t.clone().try_inverse().unwrap();
        for (a, b) in orig.states.iter().zip(&tr.states) {
            prop_assert!((a - &t_inv * b).amax() <= 1e-6 * (1.0 + s0.amax()));
        }
    }

    /// Low-gain loops are block triangular at `ε = 0` with diagonal
    /// `(A + BK, F)`; the diagonal perturbation and the other off-diagonal
    /// block are `O(ε)`, so dividing them by `ε` gives nearly the same
    /// matrix at two gains. The coupling block that carries a fixed gain
    /// (`B K_η` for 3A2b, `G C̄` for 3A3a) stays `O(1)` and is masked.
    #[test]
    fn lowgain_perturbation_is_first_order(seed in any::<u64>(), p in pathway()) {
        prop_assume!(p.is_low_gain());
        let lo = DesignOptions { eps_grid: log_grid(1e-5, 1e-4, 6), ..Default::default() };
        let hi = DesignOptions { eps_grid: log_grid(1e-3, 1e-2, 6), ..Default::default() };
        let mut r1 = rng(seed);
        let mut r2 = rng(seed);
        let (a, b) = (design(&mut r1, p, &lo), design(&mut r2, p, &hi));
        prop_assume!(a.is_some() && b.is_some());
        let ((plant, f, da), (_, _, db)) = (a.unwrap(), b.unwrap());
        let (ea, eb) = (da.epsilon.unwrap(), db.epsilon.unwrap());
        prop_assume!(eb > 2.0 * ea);
        let (n, nu) = (plant.n(), f.nrows());
        let base = |d: &DesignResult| {
            let abar = &plant.a + &plant.b * &d.k;
            block(&[&[&abar, &Mat::zeros(n, nu)], &[&Mat::zeros(nu, n), &f]])
        };
        let masked = |d: &DesignResult| {
            let mut delta = &d.closed_loop - base(d);
            match p {
                StabPathway::P3A2b => delta.view_mut((0, n), (n, nu)).fill(0.0),
                StabPathway::P3A3a => delta.view_mut((n, 0), (nu, n)).fill(0.0),
                _ => {}
            }
            delta
        };
        let (sa, sb) = (masked(&da) / ea, masked(&db) / eb);
        prop_assert!(sa.norm() > 0.0);
        prop_assert!((&sa - &sb).norm() <= 0.5 * sa.norm(), "{p}: {} vs {}", sa.norm(), sb.norm());
    }

    #[test]
    fn certificate_matches_spectrum(seed in any::<u64>(), p in pathway()) {
        let mut r = rng(seed);
        let got = design(&mut r, p, &DesignOptions::default());
        prop_assume!(got.is_some());
        let (_, _, d) = got.unwrap();
        let c = &d.certificate;
        prop_assert!((c.abscissa - spectral_abscissa(&d.closed_loop).unwrap()).abs() <= 1e-9 * (1.0 + c.abscissa.abs()));
        prop_assert!(c.abscissa < 0.0);
        if c.kind == CertificateKind::LowGain {
            let (es, cm) = (c.epsilon_star.unwrap(), c.c_margin.unwrap());
            prop_assert!(cm > 0.0);
            for &(e, a) in c.sweep.iter().filter(|(e, _)| *e <= es) {
                prop_assert!(a <= -cm * e * (1.0 - 1e-9));
            }
        }
        prop_assert!(spectral_abscissa(&d.closed_loop_original).unwrap() < 0.0);
    }

    /// The rank condition checked by the pathways is unchanged by the
    /// preliminary feedback.
    #[test]
    fn rank_condition_survives_preliminary_feedback(seed in any::<u64>(), p in pathway()) {
        let mut r = rng(seed);
        let got = design(&mut r, p, &DesignOptions::default());
        prop_assume!(got.is_some());
        let (plant, f, d) = got.unwrap();
        let closed = plant.with_feedback(&d.k).unwrap();
        let before = row_rank_report(&plant, &f, None).unwrap().rosenbrock;
        let after = row_rank_report(&closed, &f, None).unwrap().rosenbrock;
        prop_assert_eq!(before, after);
    }
}
