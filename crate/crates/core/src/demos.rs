//! Four-tank demos: output regulation under a multi-tone inflow
//! disturbance and estimation of that disturbance from one level sensor.
//!
//! The plant is the linearized minimum-phase four-tank process of
//! Johansson (2000): levels `h1..h4` in cm, pump flows in cm³/s.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::est_design::{design_estimator, EstOptions, EstPathway, ObserverResult};
use crate::linsolve::{expm, spectral_abscissa, Mat};
use crate::sim::{simulate_lti, Trace};
use crate::ssc::ssc_dual;
use crate::stab_design::{
    design_stabilizer, modal_weight, preliminary_gain, DesignOptions, DesignResult, StabPathway,
};
use crate::sysfile::{Metadata, SystemFile, Tuning};
use crate::systems::{block, Driver, Plant};

pub const OMEGA1: f64 = 0.001;
pub const OMEGA2: f64 = 0.005;
/// Horizon over which the regulation demo is judged.
pub const REG_HORIZON: f64 = 3.0e4;

#[derive(Debug, Clone)]
pub struct FourTank {
    pub a: Mat,
    /// Pump inputs.
    pub b: Mat,
    /// Lower-tank level sensors.
    pub c: Mat,
    /// Inflow disturbance into the second upper tank (tank 4).
    pub e: Mat,
}

pub fn four_tank() -> FourTank {
    let area: [f64; 4] = [28.0, 32.0, 28.0, 32.0];
    let outlet = [0.071, 0.057, 0.071, 0.057];
    let h0: [f64; 4] = [12.4, 12.7, 1.8, 1.4];
    let (kc, g) = (0.5, 981.0_f64);
    let (k1, k2, g1, g2) = (3.33, 3.35, 0.7, 0.6);
    let t: Vec<f64> = (0..4)
        .map(|i| area[i] / outlet[i] * (2.0 * h0[i] / g).sqrt())
        .collect();
    let a = Mat::from_row_slice(
        4,
        4,
        &[
            -1.0 / t[0],
            0.0,
            area[2] / (area[0] * t[2]),
            0.0,
            0.0,
            -1.0 / t[1],
            0.0,
            area[3] / (area[1] * t[3]),
            0.0,
            0.0,
            -1.0 / t[2],
            0.0,
            0.0,
            0.0,
            0.0,
            -1.0 / t[3],
        ],
    );
    let b = Mat::from_row_slice(
        4,
        2,
        &[
            g1 * k1 / area[0],
            0.0,
            0.0,
            g2 * k2 / area[1],
            0.0,
            (1.0 - g2) * k2 / area[2],
            (1.0 - g1) * k1 / area[3],
            0.0,
        ],
    );
    let c = Mat::from_row_slice(2, 4, &[kc, 0.0, 0.0, 0.0, 0.0, kc, 0.0, 0.0]);
    let e = Mat::from_row_slice(4, 1, &[0.0, 0.0, 0.0, 1.0 / area[3]]);
    FourTank { a, b, c, e }
}

fn oscillator(w: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[0.0, 1.0, -w * w, 0.0])
}

/// `blkdiag(0, osc(ω₁), osc(ω₂))`.
pub fn disturbance_dynamics() -> Mat {
    let mut f = Mat::zeros(5, 5);
    f.view_mut((1, 1), (2, 2)).copy_from(&oscillator(OMEGA1));
    f.view_mut((3, 3), (2, 2)).copy_from(&oscillator(OMEGA2));
    f
}

/// `H = [2, ω₁, 0, ω₂, 0]`.
pub fn disturbance_output() -> Mat {
    Mat::from_row_slice(1, 5, &[2.0, OMEGA1, 0.0, OMEGA2, 0.0])
}

/// Initial state producing `d(t) = 20 + 20 sin(ω₁t) + 30 sin(ω₂t)`.
pub fn disturbance_initial() -> DVector<f64> {
    DVector::from_row_slice(&[10.0, 0.0, 20.0, 0.0, 30.0])
}

pub fn disturbance(t: f64) -> f64 {
    20.0 + 20.0 * (OMEGA1 * t).sin() + 30.0 * (OMEGA2 * t).sin()
}

/// Peak of `|d|` used to normalize estimation errors.
pub const DISTURBANCE_AMPLITUDE: f64 = 70.0;

/// Internal model `F ⊗ I₂`, `G = col(1,0,1,0,1) ⊗ I₂`.
pub fn internal_model() -> (Mat, Mat) {
    let i2 = Mat::identity(2, 2);
    let f = disturbance_dynamics().kronecker(&i2);
    let g = Mat::from_row_slice(5, 1, &[1.0, 0.0, 1.0, 0.0, 1.0]).kronecker(&i2);
    (f, g)
}

/// System file for the regulation demo, including the gain used by the
/// fixed-gain pathways and the plant LQR weights.
pub fn fourtank_reg_file() -> SystemFile {
    let ft = four_tank();
    let (f, g) = internal_model();
    let plant = Plant::strictly_proper(ft.a, ft.b, ft.c).expect("consistent demo data");
    let driver = Driver::new(f, g.clone(), Mat::zeros(2, 10), Mat::zeros(2, 2))
        .expect("consistent demo data");
    SystemFile {
        metadata: Metadata {
            name: "fourtank-reg".into(),
            notes:
                "linearized minimum-phase four-tank process with a post-processing internal model \
                    for constant and sinusoidal (0.001, 0.005 rad/s) disturbances"
                    .into(),
        },
        plant: Some(plant),
        driver: Some(driver),
        k_eta: Some(g.transpose()),
        l_eta: None,
        tuning: Tuning {
            q: Some(Mat::from_diagonal(&DVector::from_row_slice(&[
                3.0, 3.0, 1.0, 1.0,
            ]))),
            r: Some(Mat::identity(2, 2) * 0.1),
            q_eta: None,
            r_eta: None,
        },
    }
}

/// System file for the estimation demo: the disturbance drives the plant,
/// only the second lower-tank level is measured.
pub fn fourtank_est_file() -> SystemFile {
    let ft = four_tank();
    let c = ft.c.rows(1, 1).into_owned();
    let plant = Plant::strictly_proper(ft.a, ft.e, c).expect("consistent demo data");
    let h = disturbance_output();
    let driver = Driver::new(
        disturbance_dynamics(),
        Mat::zeros(5, 1),
        h.clone(),
        Mat::zeros(1, 1),
    )
    .expect("consistent demo data");
    SystemFile {
        metadata: Metadata {
            name: "fourtank-est".into(),
            notes: "four-tank process with the inflow disturbance as input and one level sensor"
                .into(),
        },
        plant: Some(plant),
        driver: Some(driver),
        k_eta: None,
        l_eta: Some(Mat::from_row_slice(5, 1, &[1.0, 0.0, 1.0, 0.0, 1.0])),
        tuning: Tuning {
            q: Some(Mat::from_diagonal(&DVector::from_row_slice(&[
                3.0, 3.0, 1.0, 1.0,
            ]))),
            r: Some(Mat::identity(1, 1)),
            q_eta: None,
            r_eta: None,
        },
    }
}

/// Driver-gain LQR input weight per stabilizer pathway (only the
/// forwarding pathways run an LQR on the driver).
pub fn reg_r_eta(p: StabPathway) -> f64 {
    match p {
        StabPathway::P3A1a => 1e2,
        StabPathway::P3A1b => 5e6,
        StabPathway::P3A2a => 1e4,
        StabPathway::P3A2b => 3e6,
        StabPathway::P3A3a => 1e6,
        StabPathway::P3A3b => 1e4,
    }
}

pub fn est_r_eta(p: EstPathway) -> f64 {
    match p {
        EstPathway::B1a | EstPathway::B1b => 1e2,
        _ => 1e5,
    }
}

/// Design options of the regulation demo. The plant gain uses
/// `Q = diag(3,3,1,1)`, `R = 0.1 I`; driver gains use `Q = I` and the
/// per-pathway `R` of [`reg_r_eta`], except 3A1a. There `(F, C_d(G))` has
/// a direction (integrator minus slow-oscillator velocity) that is
/// controllable only through `ω₁²`, and an identity-weighted LQR leaves a
/// pole near `-ω₁²`; 3A1a therefore weights the driver state with the
/// normalized modal Lyapunov matrix and `R = 100 I`.
pub fn reg_options(pathway: StabPathway) -> Result<DesignOptions> {
    let file = fourtank_reg_file();
    let plant = file.require_plant()?;
    let driver = file.require_driver()?;
    let mut opts = DesignOptions {
        q: file.tuning.q.clone(),
        r: file.tuning.r.clone(),
        q_eta: None,
        r_eta: Some(Mat::identity(2, 2) * reg_r_eta(pathway)),
        ..DesignOptions::default()
    };
    if pathway == StabPathway::P3A1a {
        let k = preliminary_gain(plant, &driver.f, &opts.q, &opts.r)?;
        let cdg = ssc_dual(&plant.with_feedback(&k)?, &driver.f, &driver.g)?.value;
        let w = modal_weight(&driver.f, &cdg)?;
        opts.q_eta = Some(&w / w.norm());
    }
    Ok(opts)
}

#[derive(Debug, Clone)]
pub struct RegulationRun {
    pub design: DesignResult,
    /// States `(x, η, w)`; outputs are the regulated errors.
    pub trace: Trace,
    pub peak: f64,
    pub final_norm: f64,
}

/// Closed-loop regulation under the multi-tone disturbance, simulated
/// exactly as one autonomous system with the disturbance generator.
pub fn run_fourtank_reg(
    pathway: StabPathway,
    eps_grid: Option<Vec<f64>>,
    horizon: f64,
    dt: f64,
) -> Result<RegulationRun> {
    let file = fourtank_reg_file();
    let plant = file.require_plant()?.clone();
    let driver = file.require_driver()?.clone();
    let given = match pathway.mode() {
        crate::stab_design::StabMode::FixG => driver.g.clone(),
        crate::stab_design::StabMode::FixKeta => {
            file.k_eta.clone().expect("demo file carries K_eta")
        }
    };
    let mut opts = reg_options(pathway)?;
    if let Some(g) = eps_grid {
        opts.eps_grid = g;
    }
    let design = design_stabilizer(&plant, &driver.f, pathway, &given, &opts)?;
    let ft = four_tank();
    let (n, nu) = (plant.n(), driver.nu());
    let s = disturbance_dynamics();
    let dist_in = &ft.e * disturbance_output();
    let z_eta_w = Mat::zeros(nu, 5);
    let z_w = Mat::zeros(5, n + nu);
    let top = block(&[&[&dist_in], &[&z_eta_w]]);
    let a_aug = block(&[&[&design.closed_loop_original, &top], &[&z_w, &s]]);
    let mut c_aug = Mat::zeros(2, n + nu + 5);
    c_aug
        .view_mut((0, 0), (2, n))
        .copy_from(&(&plant.c + &plant.d * &design.feedback_x));
    let mut x0 = DVector::zeros(n + nu + 5);
    x0.rows_mut(n + nu, 5).copy_from(&disturbance_initial());
    let trace = simulate_lti(
        &a_aug,
        &Mat::zeros(n + nu + 5, 0),
        &c_aug,
        &Mat::zeros(2, 0),
        None,
        &x0,
        horizon,
        dt,
    )?;
    let mut labels: Vec<String> = (1..=4).map(|i| format!("x{i}")).collect();
    labels.extend((1..=nu).map(|i| format!("eta{i}")));
    labels.extend((1..=5).map(|i| format!("w{i}")));
    let trace = trace.with_labels(labels, vec!["e1".into(), "e2".into()]);
    let peak = trace.outputs.iter().map(|y| y.norm()).fold(0.0, f64::max);
    let final_norm = trace.outputs.last().map_or(0.0, |y| y.norm());
    Ok(RegulationRun {
        design,
        trace,
        peak,
        final_norm,
    })
}

#[derive(Debug, Clone)]
pub struct EstimationRun {
    pub design: ObserverResult,
    /// States `(x, η, x̂, η̂)`; outputs `(d, d̂)`.
    pub trace: Trace,
    /// Largest `|d - d̂|` over the last fifth of the horizon.
    pub late_error: f64,
    /// Decay rate fitted to the simulated estimation error.
    pub simulated_rate: f64,
    /// Decay rate predicted by the error-dynamics spectrum.
    pub certified_rate: f64,
}

/// Observability matrix `[H; HF; ...; HF^{ν-1}]`.
fn observability(f: &Mat, h: &Mat) -> Mat {
    let nu = f.nrows();
    let mut rows = Vec::with_capacity(nu);
    let mut cur = h.clone();
    for _ in 0..nu {
        rows.push(cur.clone());
        cur = &cur * f;
    }
    let refs: Vec<[&Mat; 1]> = rows.iter().map(|r| [r]).collect();
    let nested: Vec<&[&Mat]> = refs.iter().map(|r| &r[..]).collect();
    block(&nested)
}

/// Disturbance estimation: the plant is driven by `d = H_used η` where the
/// driver initial state reproduces the multi-tone disturbance.
pub fn run_fourtank_est(
    pathway: EstPathway,
    eps_grid: Option<Vec<f64>>,
    horizon: f64,
    dt: f64,
) -> Result<EstimationRun> {
    let file = fourtank_est_file();
    let plant = file.require_plant()?.clone();
    let driver = file.require_driver()?.clone();
    let given = match pathway.mode() {
        crate::est_design::EstMode::FixH => driver.h.clone(),
        crate::est_design::EstMode::FixLeta => file.l_eta.clone().expect("demo file carries L_eta"),
    };
    let mut opts = EstOptions {
        q: file.tuning.q.clone(),
        r: file.tuning.r.clone(),
        q_eta: None,
        r_eta: Some(Mat::identity(1, 1) * est_r_eta(pathway)),
        ..EstOptions::default()
    };
    if let Some(g) = eps_grid {
        opts.eps_grid = g;
    }
    let design = design_estimator(&plant, &driver, pathway, &given, &opts)?;
    let h = design.h_used.clone();
    let f = &driver.f;
    let o_true = observability(f, &disturbance_output());
    let o_used = observability(f, &h);
    let eta0 = o_used
        .clone()
        .lu()
        .solve(&(&o_true * disturbance_initial()))
        .ok_or_else(|| Error::Numerical("designed H is not observable with F".into()))?;
    let (n, nu) = (plant.n(), driver.nu());
    let (a_o, _b_v, b_y) = design.observer.state_space();
    let bh = &plant.b * &h;
    let z_nu_n = Mat::zeros(nu, n);
    let truth = block(&[&[&plant.a, &bh], &[&z_nu_n, f]]);
    let c_truth = block(&[&[&plant.c, &(&plant.d * &h)]]);
    let inj = &b_y * &c_truth;
    let z = Mat::zeros(n + nu, n + nu);
    let a_aug = block(&[&[&truth, &z], &[&inj, &a_o]]);
    let mut c_aug = Mat::zeros(2, 2 * (n + nu));
    c_aug.view_mut((0, n), (1, nu)).copy_from(&h);
    c_aug.view_mut((1, 2 * n + nu), (1, nu)).copy_from(&h);
    let mut x0 = DVector::zeros(2 * (n + nu));
    x0.rows_mut(n, nu).copy_from(&eta0);
    let trace = simulate_lti(
        &a_aug,
        &Mat::zeros(2 * (n + nu), 0),
        &c_aug,
        &Mat::zeros(2, 0),
        None,
        &x0,
        horizon,
        dt,
    )?;
    let mut labels: Vec<String> = (1..=4).map(|i| format!("x{i}")).collect();
    labels.extend((1..=nu).map(|i| format!("eta{i}")));
    labels.extend((1..=4).map(|i| format!("xhat{i}")));
    labels.extend((1..=nu).map(|i| format!("etahat{i}")));
    let trace = trace.with_labels(labels, vec!["d".into(), "dhat".into()]);
    let start = trace.index_at(0.8 * horizon);
    let late_error = trace.outputs[start..]
        .iter()
        .map(|y| (y[0] - y[1]).abs())
        .fold(0.0, f64::max);
    let err = |i: usize| -> f64 {
        let s = &trace.states[i];
        (s.rows(n + nu, n + nu) - s.rows(0, n + nu)).norm()
    };
    let certified_rate = -spectral_abscissa(&design.error_matrix_original)?;
    let simulated_rate = fitted_rate(
        &trace.times,
        &(0..trace.len()).map(err).collect::<Vec<_>>(),
        certified_rate,
    );
    Ok(EstimationRun {
        design,
        trace,
        late_error,
        simulated_rate,
        certified_rate,
    })
}

/// Decay rate of a sampled error norm: log-linear least squares over the
/// window `[5/rate, 15/rate]` of the predicted rate, clipped to the data.
pub fn fitted_rate(times: &[f64], norms: &[f64], predicted: f64) -> f64 {
    let t_end = *times.last().unwrap_or(&0.0);
    let (t0, t1) = (
        (5.0 / predicted).min(0.5 * t_end),
        (15.0 / predicted).min(t_end),
    );
    let floor = norms.iter().copied().fold(0.0, f64::max) * 1e-12;
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(norms)
        .filter(|(t, e)| **t >= t0 && **t <= t1 && **e > floor)
        .map(|(t, e)| (*t, e.ln()))
        .collect();
    if pts.len() < 2 {
        return f64::NAN;
    }
    let k = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (mt, my) = (st / k, sy / k);
    let (num, den) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| {
        (a + (t - mt) * (y - my), b + (t - mt) * (t - mt))
    });
    -num / den
}

/// Propagator sanity used by the demos: `expm(S t) w₀` reproduces `d(t)`.
pub fn disturbance_from_generator(t: f64) -> Result<f64> {
    let w = expm(&(disturbance_dynamics() * t))? * disturbance_initial();
    Ok((disturbance_output() * w)[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generator_reproduces_disturbance() {
        for t in [0.0, 100.0, 1234.5, 2.0e4] {
            assert!((disturbance_from_generator(t).unwrap() - disturbance(t)).abs() < 1e-8);
        }
    }

    #[test]
    fn four_tank_is_stable_minimum_phase() {
        let ft = four_tank();
        assert!(spectral_abscissa(&ft.a).unwrap() < 0.0);
        // minimum phase for γ₁ + γ₂ > 1: the transmission zeros are stable
        let plant = Plant::strictly_proper(ft.a, ft.b, ft.c).unwrap();
        let t = plant.transfer(crate::linsolve::C64::new(0.0, 0.0)).unwrap();
        assert!(t.determinant().norm() > 1e-3);
    }

    #[test]
    fn demo_files_round_trip() {
        for f in [fourtank_reg_file(), fourtank_est_file()] {
            assert_eq!(SystemFile::from_json(&f.to_json()).unwrap(), f);
        }
    }
}
