//! Stabilizer design for the cascade plant → driver (`η' = F η + G y`):
//! forwarding designs and low-gain designs through `C_d` and `C_p`, plus the
//! low-gain stability certificate.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linsolve::{
    dual_lqr_gain, eigenvalues, is_hurwitz, lqr_gain, real_part, solve_lyapunov, spectral_abscissa,
    to_complex, CMat, Mat, BOUNDARY_BAND, C64,
};
use crate::moments::{jordan_structure, JordanStructure};
use crate::ssc::{invert_operator, rosenbrock_condition, Side, SscOperator};
use crate::systems::{block, pbh, PbhMode, Plant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StabPathway {
    #[serde(rename = "3A1a")]
    P3A1a,
    #[serde(rename = "3A1b")]
    P3A1b,
    #[serde(rename = "3A2a")]
    P3A2a,
    #[serde(rename = "3A2b")]
    P3A2b,
    #[serde(rename = "3A3a")]
    P3A3a,
    #[serde(rename = "3A3b")]
    P3A3b,
}

impl StabPathway {
    pub const ALL: [StabPathway; 6] = [
        StabPathway::P3A1a,
        StabPathway::P3A1b,
        StabPathway::P3A2a,
        StabPathway::P3A2b,
        StabPathway::P3A3a,
        StabPathway::P3A3b,
    ];

    pub fn mode(self) -> StabMode {
        match self {
            StabPathway::P3A1a | StabPathway::P3A2a | StabPathway::P3A3a => StabMode::FixG,
            _ => StabMode::FixKeta,
        }
    }

    pub fn is_low_gain(self) -> bool {
        !matches!(self, StabPathway::P3A1a | StabPathway::P3A1b)
    }
}

impl fmt::Display for StabPathway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StabPathway::P3A1a => "3A1a",
            StabPathway::P3A1b => "3A1b",
            StabPathway::P3A2a => "3A2a",
            StabPathway::P3A2b => "3A2b",
            StabPathway::P3A3a => "3A3a",
            StabPathway::P3A3b => "3A3b",
        };
        f.write_str(s)
    }
}

impl FromStr for StabPathway {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        StabPathway::ALL
            .into_iter()
            .find(|p| p.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown stabilization method '{s}' (expected 3a1a..3a3b)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StabMode {
    /// The driver input matrix `G` is given; the driver gain `K_η` is designed.
    FixG,
    /// The driver gain `K_η` is given; `G` is designed.
    FixKeta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CertificateKind {
    Hurwitz,
    LowGain,
}

#[derive(Debug, Clone, Serialize)]
pub struct StabilityCertificate {
    pub kind: CertificateKind,
    pub abscissa: f64,
    pub epsilon_star: Option<f64>,
    pub c_margin: Option<f64>,
    /// `(ε, abscissa(ε))` over the swept grid (low-gain only).
    pub sweep: Vec<(f64, f64)>,
}

impl StabilityCertificate {
    pub fn hurwitz(m: &Mat) -> Result<Self> {
        let abscissa = spectral_abscissa(m)?;
        if abscissa >= -BOUNDARY_BAND {
            return Err(Error::NotHurwitz { abscissa });
        }
        Ok(StabilityCertificate {
            kind: CertificateKind::Hurwitz,
            abscissa,
            epsilon_star: None,
            c_margin: None,
            sweep: Vec::new(),
        })
    }
}

/// Default low-gain sweep: 20 log-spaced points in `[1e-4, 1e-1]`.
pub fn default_eps_grid() -> Vec<f64> {
    log_grid(1e-4, 1e-1, 20)
}

pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

/// Fraction of the small-ε slope below which a grid point is taken to have
/// left the first-order regime.
pub const SLOPE_FLOOR: f64 = 0.5;

/// Longest grid prefix on which `abscissa(ε) ≤ -c ε`, where `c` is at least
/// `SLOPE_FLOOR` times the slope `-abscissa(ε₁)/ε₁` at the smallest grid
/// point; at least five grid points are required. `ε*` is the last point of
/// the prefix.
pub fn certify_low_gain(
    family: &dyn Fn(f64) -> Result<Mat>,
    eps_grid: &[f64],
) -> Result<StabilityCertificate> {
    if eps_grid.is_empty()
        || eps_grid.iter().any(|e| !(*e > 0.0 && e.is_finite()))
        || eps_grid.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::NoEpsilonFound(
            "grid must be positive and strictly increasing".into(),
        ));
    }
    let mut sweep: Vec<(f64, f64)> = Vec::with_capacity(eps_grid.len());
    let mut floor = None;
    let mut prefix = 0;
    for &eps in eps_grid {
        let a = spectral_abscissa(&family(eps)?)?;
        sweep.push((eps, a));
        let slope = -a / eps;
        let floor = *floor.get_or_insert(SLOPE_FLOOR * slope);
        if !(a < -BOUNDARY_BAND && slope >= floor && floor > 0.0) {
            break;
        }
        prefix += 1;
    }
    if prefix < 5 {
        return Err(Error::NoEpsilonFound(format!(
            "only {prefix} leading grid points satisfy abscissa(eps) <= -c eps (need 5); sweep {sweep:?}"
        )));
    }
    let certified = &sweep[..prefix];
    let c = certified
        .iter()
        .map(|(e, a)| -a / e)
        .fold(f64::INFINITY, f64::min);
    let (eps_star, a_star) = certified[prefix - 1];
    Ok(StabilityCertificate {
        kind: CertificateKind::LowGain,
        abscissa: a_star,
        epsilon_star: Some(eps_star),
        c_margin: Some(c),
        sweep,
    })
}

/// Lyapunov weights for `F` with spectrum in the closed left half-plane and
/// semisimple imaginary-axis eigenvalues. With `F V_k = V_k J_k` per
/// eigenvalue group, `P = Σ W_k D_k W_k*` (`W_k* ` the rows of `V⁻¹`)
/// satisfies `Fᵀ P + P F ⪯ 0` when `J_k* D_k + D_k J_k ⪯ 0`. On the
/// imaginary axis `D_k = d_k I`, with `d_k` picked per gain direction so
/// every axis group leaves the axis at unit first-order rate.
#[derive(Debug, Clone)]
pub(crate) struct NeutralLyapunov {
    jordan: Option<JordanStructure>,
    /// Fallback for Hurwitz `F` without a usable eigenbasis.
    lyap: Option<Mat>,
}

fn on_axis(lambda: C64) -> bool {
    lambda.re.abs() <= 10.0 * BOUNDARY_BAND
}

fn min_hermitian_eig(m: &CMat) -> f64 {
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    h.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

impl NeutralLyapunov {
    pub fn new(f: &Mat) -> Result<Self> {
        let spec = eigenvalues(f)?;
        if spec.abscissa > BOUNDARY_BAND {
            return Err(Error::FNotNeutrallyStable(format!(
                "spectral abscissa {:e}",
                spec.abscissa
            )));
        }
        match jordan_structure(f, None) {
            Ok(js) => {
                if let Some(b) = js
                    .blocks
                    .iter()
                    .find(|b| on_axis(b.lambda) && b.index() > 1)
                {
                    return Err(Error::FNotNeutrallyStable(format!(
                        "eigenvalue {} on the imaginary axis is defective",
                        b.lambda
                    )));
                }
                Ok(NeutralLyapunov {
                    jordan: Some(js),
                    lyap: None,
                })
            }
            Err(_) if spec.abscissa < -BOUNDARY_BAND => Ok(NeutralLyapunov {
                jordan: None,
                lyap: Some(solve_lyapunov(f, &Mat::identity(f.nrows(), f.nrows()))?),
            }),
            Err(e) => Err(Error::FNotNeutrallyStable(format!(
                "imaginary-axis eigenvalues must be semisimple ({e})"
            ))),
        }
    }

    /// Off-axis group weight `D_k` with `J_k* D_k + D_k J_k = -I`.
    fn stable_weight(b: &crate::moments::JordanBlock) -> Result<CMat> {
        let r = b.size();
        let j = CMat::identity(r, r) * b.lambda + &b.nilpotent;
        crate::linsolve::solve_sylvester_c(&j.adjoint(), &(-&j), &(-CMat::identity(r, r)))
    }

    /// `K₀` with `F + ε B̄ K₀` low-gain stable: `K₀ = -B̄ᵀ P`.
    pub fn input_gain(&self, bbar: &Mat) -> Result<Mat> {
        Ok(-(bbar.transpose() * self.input_weight(bbar)?))
    }

    /// The `P` used by [`NeutralLyapunov::input_gain`].
    pub fn input_weight(&self, bbar: &Mat) -> Result<Mat> {
        let js = match &self.jordan {
            None => return Ok(self.lyap.clone().expect("fallback weight")),
            Some(js) => js,
        };
        let bb = to_complex(&(bbar * bbar.transpose()));
        let mut p = CMat::zeros(js.nu, js.nu);
        for b in &js.blocks {
            let w = b.w_star.adjoint();
            let d = if on_axis(b.lambda) {
                let g = min_hermitian_eig(&(&b.w_star * &bb * &w));
                if !(g > 1e-14 * (w.norm().powi(2) * bb.norm()).max(f64::MIN_POSITIVE)) {
                    return Err(Error::NotStabilizable { witness: b.lambda });
                }
                CMat::identity(b.size(), b.size()) / C64::new(g, 0.0)
            } else {
                Self::stable_weight(b)?
            };
            p += &w * d * &b.w_star;
        }
        let p = real_part(&p);
        Ok((&p + p.transpose()) * 0.5)
    }

    /// `L₀` with `F + ε L₀ C̄` low-gain stable: `L₀ = -P⁻¹ C̄ᵀ`.
    pub fn output_gain(&self, cbar: &Mat) -> Result<Mat> {
        let js = match &self.jordan {
            None => {
                let p = self.lyap.as_ref().expect("fallback weight");
                return Ok(-(crate::linsolve::inverse(p)? * cbar.transpose()));
            }
            Some(js) => js,
        };
        let cc = to_complex(&(cbar.transpose() * cbar));
        let mut p_inv = CMat::zeros(js.nu, js.nu);
        for b in &js.blocks {
            let dinv = if on_axis(b.lambda) {
                let g = min_hermitian_eig(&(b.v.adjoint() * &cc * &b.v));
                if !(g > 1e-14 * (b.v.norm().powi(2) * cc.norm()).max(f64::MIN_POSITIVE)) {
                    return Err(Error::NotDetectable { witness: b.lambda });
                }
                CMat::identity(b.size(), b.size()) / C64::new(g, 0.0)
            } else {
                crate::linsolve::inverse_c(&Self::stable_weight(b)?)?
            };
            p_inv += &b.v * dinv * b.v.adjoint();
        }
        Ok(-(real_part(&p_inv) * cbar.transpose()))
    }
}

/// Positive definite `P` with `Fᵀ P + P F ⪯ 0` for which `-B̄ᵀ P` moves every
/// imaginary-axis eigenvalue of `F` left at unit first-order rate. Useful as
/// a state weight for badly scaled internal models.
pub fn modal_weight(f: &Mat, bbar: &Mat) -> Result<Mat> {
    NeutralLyapunov::new(f)?.input_weight(bbar)
}

#[derive(Debug, Clone)]
pub struct DesignOptions {
    /// LQR weights for the preliminary plant gain; `None` keeps `K = 0`
    /// when `A` is already Hurwitz and uses identity weights otherwise.
    pub q: Option<Mat>,
    pub r: Option<Mat>,
    /// LQR weights for forwarding-design driver gains (identity by default).
    pub q_eta: Option<Mat>,
    pub r_eta: Option<Mat>,
    pub eps_grid: Vec<f64>,
}

impl Default for DesignOptions {
    fn default() -> Self {
        DesignOptions {
            q: None,
            r: None,
            q_eta: None,
            r_eta: None,
            eps_grid: default_eps_grid(),
        }
    }
}

fn weight(w: &Option<Mat>, n: usize) -> Mat {
    w.clone().unwrap_or_else(|| Mat::identity(n, n))
}

/// Preliminary state feedback `K` with `A + B K` Hurwitz and spectrum
/// disjoint from `F`; retries LQR with `Q + δI` when the gap fails.
pub fn preliminary_gain(plant: &Plant, f: &Mat, q: &Option<Mat>, r: &Option<Mat>) -> Result<Mat> {
    let (n, m) = (plant.n(), plant.m());
    let ef = eigenvalues(f)?;
    if q.is_none() && r.is_none() && is_hurwitz(&plant.a)? {
        let ea = eigenvalues(&plant.a)?;
        if crate::linsolve::check_disjoint(&ea, &ef).is_ok() {
            return Ok(Mat::zeros(m, n));
        }
    }
    let q0 = weight(q, n);
    let r0 = weight(r, m);
    let mut last = None;
    for attempt in 0..=3 {
        let delta = if attempt == 0 {
            0.0
        } else {
            0.1 * attempt as f64 * (1.0 + q0.norm())
        };
        let qk = &q0 + Mat::identity(n, n) * delta;
        let k = lqr_gain(&plant.a, &plant.b, &qk, &r0)?.k;
        let ea = eigenvalues(&(&plant.a + &plant.b * &k))?;
        match crate::linsolve::check_disjoint(&ea, &ef) {
            Ok(_) => return Ok(k),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Debug, Clone, Serialize)]
pub struct DesignResult {
    pub pathway: StabPathway,
    /// Preliminary plant gain `K`.
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub k: Mat,
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub k_eta: Mat,
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub g_used: Mat,
    /// `M` (forwarding and `C_d` designs) or `Π` (`C_p` designs).
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub sylvester: Mat,
    pub epsilon: Option<f64>,
    /// Closed loop in the transformed coordinates of the pathway.
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub closed_loop: Mat,
    /// Closed loop in `(x, η)` under the implemented feedback.
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub closed_loop_original: Mat,
    /// Implemented feedback `u = feedback_x x + feedback_eta η`.
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub feedback_x: Mat,
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub feedback_eta: Mat,
    pub certificate: StabilityCertificate,
}

fn check_square(plant: &Plant) -> Result<()> {
    if plant.p() != plant.m() {
        return Err(Error::NotSquare {
            p: plant.p(),
            m: plant.m(),
        });
    }
    Ok(())
}

fn rank_ok(plant: &Plant, f: &Mat, row: bool, unstable_only: bool) -> Result<()> {
    match rosenbrock_condition(plant, f, row, unstable_only)? {
        None => Ok(()),
        Some((lambda, sigma)) => Err(Error::RankConditionFailed { lambda, sigma }),
    }
}

fn require(a: &Mat, b: &Mat, mode: PbhMode) -> Result<()> {
    let v = pbh(a, b, mode)?;
    if v.holds {
        return Ok(());
    }
    let witness = v.witness.unwrap_or_default();
    Err(match mode {
        PbhMode::Controllable | PbhMode::Stabilizable => Error::NotStabilizable { witness },
        PbhMode::Observable | PbhMode::Detectable => Error::NotDetectable { witness },
    })
}

/// `(x, η)` closed loop of `x' = A x + B u`, `η' = F η + G y` under
/// `u = Kx x + Kη η`.
fn original_loop(plant: &Plant, f: &Mat, g: &Mat, kx: &Mat, keta: &Mat) -> Mat {
    let top_l = &plant.a + &plant.b * kx;
    let top_r = &plant.b * keta;
    let bot_l = g * (&plant.c + &plant.d * kx);
    let bot_r = f + g * &plant.d * keta;
    block(&[&[&top_l, &top_r], &[&bot_l, &bot_r]])
}

struct Prelim {
    k: Mat,
    closed: Plant,
}

fn prelim(plant: &Plant, f: &Mat, opts: &DesignOptions) -> Result<Prelim> {
    if f.nrows() != f.ncols() {
        return Err(Error::NonSquare {
            what: "driver.F".into(),
            rows: f.nrows(),
            cols: f.ncols(),
        });
    }
    let k = preliminary_gain(plant, f, &opts.q, &opts.r)?;
    let closed = plant.with_feedback(&k)?;
    Ok(Prelim { k, closed })
}

/// Forwarding designs with a triangular closed loop in `(x, ζ)`,
/// `ζ = η - M x`. `given` is `G` (fix G) or `K_η` (fix K_η).
pub fn design_forwarding(
    plant: &Plant,
    f: &Mat,
    mode: StabMode,
    given: &Mat,
    opts: &DesignOptions,
) -> Result<DesignResult> {
    let nu = f.nrows();
    let pre = prelim(plant, f, opts)?;
    let cd = SscOperator::new(&pre.closed, f, Side::Dual)?;
    let (g, k_eta, pathway) = match mode {
        StabMode::FixG => {
            rank_ok(plant, f, true, true)?;
            let cdg = cd.apply(given)?;
            require(f, &cdg, PbhMode::Stabilizable)?;
            let k_eta = lqr_gain(
                f,
                &cdg,
                &weight(&opts.q_eta, nu),
                &weight(&opts.r_eta, plant.m()),
            )?
            .k;
            (given.clone(), k_eta, StabPathway::P3A1a)
        }
        StabMode::FixKeta => {
            check_square(plant)?;
            rank_ok(plant, f, true, false)?;
            require(f, given, PbhMode::Detectable)?;
            let l = dual_lqr_gain(
                f,
                given,
                &weight(&opts.q_eta, nu),
                &weight(&opts.r_eta, plant.m()),
            )?;
            let g = invert_operator(&cd, &l)?.argument;
            (g, given.clone(), StabPathway::P3A1b)
        }
    };
    let sol = cd.solve(&g)?;
    let mm = sol.sylvester;
    let cdg = sol.value;
    let zero = Mat::zeros(nu, plant.n());
    let bk = &plant.b * &k_eta;
    let fz = f + &cdg * &k_eta;
    let closed_loop = block(&[&[&pre.closed.a, &bk], &[&zero, &fz]]);
    let feedback_x = &pre.k - &k_eta * &mm;
    let closed_loop_original = original_loop(plant, f, &g, &feedback_x, &k_eta);
    let certificate = StabilityCertificate::hurwitz(&closed_loop)?;
    Ok(DesignResult {
        pathway,
        k: pre.k,
        k_eta: k_eta.clone(),
        g_used: g,
        sylvester: mm,
        epsilon: None,
        closed_loop,
        closed_loop_original,
        feedback_x,
        feedback_eta: k_eta,
        certificate,
    })
}

/// Low-gain designs through `C_d`; closed loop in `(x, ζ)` is the full
/// block matrix with `O(ε)` off-diagonal terms.
pub fn design_lowgain_cd(
    plant: &Plant,
    f: &Mat,
    mode: StabMode,
    given: &Mat,
    opts: &DesignOptions,
) -> Result<DesignResult> {
    let nl = NeutralLyapunov::new(f)?;
    let pre = prelim(plant, f, opts)?;
    let cd = SscOperator::new(&pre.closed, f, Side::Dual)?;
    // unit-ε gains: K_η(ε) = ε K₀ and G(ε) = ε G₀
    let (g0, k0, g_fixed, pathway) = match mode {
        StabMode::FixG => {
            rank_ok(plant, f, true, true)?;
            let cdg = cd.apply(given)?;
            require(f, &cdg, PbhMode::Stabilizable)?;
            (
                given.clone(),
                nl.input_gain(&cdg)?,
                true,
                StabPathway::P3A2a,
            )
        }
        StabMode::FixKeta => {
            check_square(plant)?;
            rank_ok(plant, f, true, false)?;
            require(f, given, PbhMode::Detectable)?;
            let l0 = nl.output_gain(given)?;
            let g0 = invert_operator(&cd, &l0)?.argument;
            (g0, given.clone(), false, StabPathway::P3A2b)
        }
    };
    let sol0 = cd.solve(&g0)?;
    let build = |eps: f64| -> (Mat, Mat, Mat, Mat) {
        let (g, k_eta, mm, cdg) = if g_fixed {
            (
                g0.clone(),
                &k0 * eps,
                sol0.sylvester.clone(),
                sol0.value.clone(),
            )
        } else {
            (
                &g0 * eps,
                k0.clone(),
                &sol0.sylvester * eps,
                &sol0.value * eps,
            )
        };
        let tl = &pre.closed.a + &plant.b * &k_eta * &mm;
        let tr = &plant.b * &k_eta;
        let bl = &cdg * &k_eta * &mm;
        let br = f + &cdg * &k_eta;
        (block(&[&[&tl, &tr], &[&bl, &br]]), g, k_eta, mm)
    };
    let certificate = certify_low_gain(&|eps| Ok(build(eps).0), &opts.eps_grid)?;
    let eps = certificate.epsilon_star.expect("low-gain certificate");
    let (closed_loop, g, k_eta, mm) = build(eps);
    let closed_loop_original = original_loop(plant, f, &g, &pre.k, &k_eta);
    Ok(DesignResult {
        pathway,
        k: pre.k.clone(),
        k_eta: k_eta.clone(),
        g_used: g,
        sylvester: mm,
        epsilon: Some(eps),
        closed_loop,
        closed_loop_original,
        feedback_x: pre.k,
        feedback_eta: k_eta,
        certificate,
    })
}

/// Low-gain designs through `C_p`; closed loop in `(ξ, η)`, `ξ = x - Π η`.
pub fn design_lowgain_cp(
    plant: &Plant,
    f: &Mat,
    mode: StabMode,
    given: &Mat,
    opts: &DesignOptions,
) -> Result<DesignResult> {
    let nl = NeutralLyapunov::new(f)?;
    let pre = prelim(plant, f, opts)?;
    let cp = SscOperator::new(&pre.closed, f, Side::Primal)?;
    let (g0, k0, g_fixed, pathway) = match mode {
        StabMode::FixG => {
            rank_ok(plant, f, true, false)?;
            require(f, given, PbhMode::Stabilizable)?;
            let z0 = nl.input_gain(given)?;
            let k0 = invert_operator(&cp, &z0)?.argument;
            (given.clone(), k0, true, StabPathway::P3A3a)
        }
        StabMode::FixKeta => {
            check_square(plant)?;
            rank_ok(plant, f, false, true)?;
            require(f, given, PbhMode::Detectable)?;
            let cpk = cp.apply(given)?;
            require(f, &cpk, PbhMode::Detectable)?;
            (
                nl.output_gain(&cpk)?,
                given.clone(),
                false,
                StabPathway::P3A3b,
            )
        }
    };
    let sol0 = cp.solve(&k0)?;
    let cbar = &pre.closed.c;
    let build = |eps: f64| -> (Mat, Mat, Mat, Mat) {
        let (g, k_eta, pi, cpk) = if g_fixed {
            (
                g0.clone(),
                &k0 * eps,
                &sol0.sylvester * eps,
                &sol0.value * eps,
            )
        } else {
            (
                &g0 * eps,
                k0.clone(),
                sol0.sylvester.clone(),
                sol0.value.clone(),
            )
        };
        let tl = &pre.closed.a - &pi * &g * cbar;
        let tr = -(&pi * &g * &cpk);
        let bl = &g * cbar;
        let br = f + &g * &cpk;
        (block(&[&[&tl, &tr], &[&bl, &br]]), g, k_eta, pi)
    };
    let certificate = certify_low_gain(&|eps| Ok(build(eps).0), &opts.eps_grid)?;
    let eps = certificate.epsilon_star.expect("low-gain certificate");
    let (closed_loop, g, k_eta, pi) = build(eps);
    let closed_loop_original = original_loop(plant, f, &g, &pre.k, &k_eta);
    Ok(DesignResult {
        pathway,
        k: pre.k.clone(),
        k_eta: k_eta.clone(),
        g_used: g,
        sylvester: pi,
        epsilon: Some(eps),
        closed_loop,
        closed_loop_original,
        feedback_x: pre.k,
        feedback_eta: k_eta,
        certificate,
    })
}

/// Dispatches a named pathway.
pub fn design_stabilizer(
    plant: &Plant,
    f: &Mat,
    pathway: StabPathway,
    given: &Mat,
    opts: &DesignOptions,
) -> Result<DesignResult> {
    let mode = pathway.mode();
    match pathway {
        StabPathway::P3A1a | StabPathway::P3A1b => design_forwarding(plant, f, mode, given, opts),
        StabPathway::P3A2a | StabPathway::P3A2b => design_lowgain_cd(plant, f, mode, given, opts),
        StabPathway::P3A3a | StabPathway::P3A3b => design_lowgain_cp(plant, f, mode, given, opts),
    }
}
