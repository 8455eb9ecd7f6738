//! Moment-matching reduced-order models built from the SSC operators:
//! right (`C_p`) and left (`C_d`) families, two-sided matching and the
//! structural observability/controllability certificates.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linsolve::{
    check_disjoint, eigenvalues, inverse, solve_sylvester, spectral_abscissa, to_complex,
    verdict_rank_c, CMat, Mat, BOUNDARY_BAND, C64,
};
use crate::sim::{simulate_lti, Vector};
use crate::ssc::{ssc_dual, ssc_primal};
use crate::sysfile::ser_mat;
use crate::systems::{block, distinct_eigenvalues, pbh, PbhMode, Plant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RomSide {
    Right,
    Left,
    TwoSided,
}

#[derive(Debug, Clone, Serialize)]
pub struct Interpolation {
    #[serde(serialize_with = "ser_mat")]
    pub f: Mat,
    /// `H` (right) or `G` (left).
    #[serde(serialize_with = "ser_mat")]
    pub direction: Mat,
    /// `C_p(H)` or `C_d(G)` of the full plant.
    #[serde(serialize_with = "ser_mat")]
    pub moment: Mat,
}

#[derive(Debug, Clone, Serialize)]
pub struct Rom {
    #[serde(serialize_with = "ser_mat")]
    pub a: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub b: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub c: Mat,
    #[serde(serialize_with = "ser_mat")]
    pub d: Mat,
    pub side: RomSide,
    pub right: Option<Interpolation>,
    pub left: Option<Interpolation>,
    /// Free parameter in the `Π̂ = I` (right) or `M̂ = −I` (left)
    /// coordinates: `B̂` or `Ĉ`.
    #[serde(serialize_with = "ser_mat")]
    pub parameter: Mat,
    /// Largest relative matching residual over the sides that are matched.
    pub match_residual: f64,
    pub right_residual: Option<f64>,
    pub left_residual: Option<f64>,
}

impl Rom {
    pub fn plant(&self) -> Result<Plant> {
        Plant::new(
            self.a.clone(),
            self.b.clone(),
            self.c.clone(),
            self.d.clone(),
        )
    }

    pub fn order(&self) -> usize {
        self.a.nrows()
    }
}

fn relative_gap(a: &Mat, b: &Mat) -> f64 {
    (a - b).norm() / (1.0 + b.norm())
}

/// Relative `‖Ĉ_p(H) − C_p(H)‖`, recomputed through the ROM's own Sylvester equation.
pub fn right_residual(rom: &Plant, f: &Mat, h: &Mat, target: &Mat) -> Result<f64> {
    Ok(relative_gap(&ssc_primal(rom, f, h)?.value, target))
}

/// Relative `‖Ĉ_d(G) − C_d(G)‖`, recomputed through the ROM's own Sylvester equation.
pub fn left_residual(rom: &Plant, f: &Mat, g: &Mat, target: &Mat) -> Result<f64> {
    Ok(relative_gap(&ssc_dual(rom, f, g)?.value, target))
}

/// Real block-diagonal matrix whose eigenvalues mirror `eig(f)` into the
/// open left half plane and shift them left by `shift`. Repeated
/// eigenvalues are spread apart so that the result is non-derogatory.
pub fn mirrored_targets(f: &Mat, shift: f64) -> Result<Mat> {
    let nu = f.nrows();
    let mut out = Mat::zeros(nu, nu);
    let mut at = 0;
    let tol = 1e-9 * (1.0 + f.norm());
    for (lambda, mult) in distinct_eigenvalues(f)? {
        if lambda.im < -tol {
            continue;
        }
        for r in 0..mult {
            let re = -lambda.re.abs() - shift - 0.25 * r as f64;
            if lambda.im.abs() <= tol {
                out[(at, at)] = re;
                at += 1;
            } else {
                let w = lambda.im;
                out.view_mut((at, at), (2, 2))
                    .copy_from(&Mat::from_row_slice(2, 2, &[re, w, -w, re]));
                at += 2;
            }
        }
    }
    if at != nu {
        return Err(Error::Numerical(
            "could not pair the eigenvalues of F into real blocks".into(),
        ));
    }
    Ok(out)
}

/// Gain `K` with `eig(a − b K) = eig(target)`, from `a X − X Λ = b Ĝ`,
/// `K = Ĝ X⁻¹` for a fixed sequence of auxiliary `Ĝ`.
pub fn place_by_sylvester(a: &Mat, b: &Mat, target: &Mat) -> Result<Mat> {
    let (n, m) = (a.nrows(), b.ncols());
    let mut last = Error::Numerical("pole placement failed".into());
    for attempt in 0..6 {
        let g = Mat::from_fn(m, n, |i, j| {
            (1.3 + 0.7 * i as f64 + 1.9 * j as f64 + 0.37 * attempt as f64).sin()
                + if i == j % m.max(1) { 1.0 } else { 0.0 }
        });
        let x = match solve_sylvester(a, target, &(b * &g)) {
            Ok(x) => x,
            Err(e) => {
                last = e;
                continue;
            }
        };
        let sv = x.clone().svd(false, false).singular_values;
        let cond = sv.max() / sv.min().max(f64::MIN_POSITIVE);
        if cond > 1e10 {
            last = Error::Numerical(format!(
                "pole placement basis is ill-conditioned (condition {cond:e})"
            ));
            continue;
        }
        let k = &g * inverse(&x)?;
        return Ok(k);
    }
    Err(last)
}

/// `mirrored_targets` with the smallest shift in 1, 2, 4, ... that keeps
/// the targets away from `eig(f)`.
fn default_target(f: &Mat) -> Result<Mat> {
    let ef = eigenvalues(f)?;
    let mut shift = 1.0;
    for _ in 0..8 {
        let t = mirrored_targets(f, shift)?;
        if check_disjoint(&eigenvalues(&t)?, &ef).is_ok() {
            return Ok(t);
        }
        shift *= 2.0;
    }
    Err(Error::Numerical(
        "no admissible target spectrum for the default reduced model".into(),
    ))
}

/// Default right-family `B̂`: places `eig(F − B̂H)` at mirrored, shifted copies of `eig(F)`.
pub fn default_b_hat(f: &Mat, h: &Mat) -> Result<Mat> {
    let target = default_target(f)?;
    Ok(place_by_sylvester(&f.transpose(), &h.transpose(), &target.transpose())?.transpose())
}

/// Default left-family `Ĉ`: places `eig(F − GĈ)` likewise.
pub fn default_c_hat(f: &Mat, g: &Mat) -> Result<Mat> {
    let target = default_target(f)?;
    place_by_sylvester(f, g, &target)
}

fn check_gap(a_hat: &Mat, f: &Mat) -> Result<()> {
    check_disjoint(&eigenvalues(a_hat)?, &eigenvalues(f)?).map(|_| ())
}

fn invertible(m: &Mat) -> Result<Mat> {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    let smin = sv.min();
    if m.nrows() > 0 && smin <= 1e-12 * smax.max(f64::MIN_POSITIVE) {
        return Err(Error::SingularCoordinates { sigma: smin });
    }
    inverse(m)
}

fn check_dims(plant: &Plant, f: &Mat, what: &str, rows: usize, cols: usize, m: &Mat) -> Result<()> {
    if f.nrows() != f.ncols() {
        return Err(Error::NonSquare {
            what: "interpolation F".into(),
            rows: f.nrows(),
            cols: f.ncols(),
        });
    }
    if m.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch(format!(
            "{what} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    let _ = plant;
    Ok(())
}

/// Right family: `Â = Π̂FΠ̂⁻¹ − B̂HΠ̂⁻¹`, `Ĉ = (C_p(H) − D̂H)Π̂⁻¹`.
/// `Π̂ = I` by default, giving `Â = F − B̂H`.
pub fn rom_right(
    plant: &Plant,
    f: &Mat,
    h: &Mat,
    b_hat: Option<&Mat>,
    d_hat: Option<&Mat>,
    pi_hat: Option<&Mat>,
) -> Result<Rom> {
    let nu = f.nrows();
    check_dims(plant, f, "H", plant.m(), nu, h)?;
    let v = pbh(f, h, PbhMode::Observable)?;
    if !v.holds {
        return Err(Error::NotDetectable {
            witness: v.witness.unwrap_or_default(),
        });
    }
    let moment = ssc_primal(plant, f, h)?.value;
    let b_hat = match b_hat {
        Some(b) => b.clone(),
        None => default_b_hat(f, h)?,
    };
    let d_hat = d_hat
        .cloned()
        .unwrap_or_else(|| Mat::zeros(plant.p(), plant.m()));
    check_dims(plant, f, "B_hat", nu, plant.m(), &b_hat)?;
    check_dims(plant, f, "D_hat", plant.p(), plant.m(), &d_hat)?;
    let (a_hat, c_hat, parameter) = match pi_hat {
        None => (f - &b_hat * h, &moment - &d_hat * h, b_hat.clone()),
        Some(pi) => {
            check_dims(plant, f, "Pi_hat", nu, nu, pi)?;
            let pinv = invertible(pi)?;
            (
                pi * f * &pinv - &b_hat * h * &pinv,
                (&moment - &d_hat * h) * &pinv,
                &pinv * &b_hat,
            )
        }
    };
    check_gap(&a_hat, f)?;
    let rom = Plant::new(a_hat.clone(), b_hat.clone(), c_hat.clone(), d_hat.clone())?;
    let res = right_residual(&rom, f, h, &moment)?;
    Ok(Rom {
        a: a_hat,
        b: b_hat,
        c: c_hat,
        d: d_hat,
        side: RomSide::Right,
        right: Some(Interpolation {
            f: f.clone(),
            direction: h.clone(),
            moment,
        }),
        left: None,
        parameter,
        match_residual: res,
        right_residual: Some(res),
        left_residual: None,
    })
}

/// Left family: `Â = M̂⁻¹FM̂ + M̂⁻¹GĈ`, `B̂ = −M̂⁻¹(C_d(G) − GD̂)`.
/// Without `M̂` the family `Â = F − GĈ`, `B̂ = C_d(G) − GD̂` (`M̂ = −I`) is used.
pub fn rom_left(
    plant: &Plant,
    f: &Mat,
    g: &Mat,
    c_hat: Option<&Mat>,
    d_hat: Option<&Mat>,
    m_hat: Option<&Mat>,
) -> Result<Rom> {
    let nu = f.nrows();
    check_dims(plant, f, "G", nu, plant.p(), g)?;
    let v = pbh(f, g, PbhMode::Controllable)?;
    if !v.holds {
        return Err(Error::NotStabilizable {
            witness: v.witness.unwrap_or_default(),
        });
    }
    let moment = ssc_dual(plant, f, g)?.value;
    let c_hat = match c_hat {
        Some(c) => c.clone(),
        None => default_c_hat(f, g)?,
    };
    let d_hat = d_hat
        .cloned()
        .unwrap_or_else(|| Mat::zeros(plant.p(), plant.m()));
    check_dims(plant, f, "C_hat", plant.p(), nu, &c_hat)?;
    check_dims(plant, f, "D_hat", plant.p(), plant.m(), &d_hat)?;
    let (a_hat, b_hat, parameter) = match m_hat {
        None => (f - g * &c_hat, &moment - g * &d_hat, c_hat.clone()),
        Some(mh) => {
            check_dims(plant, f, "M_hat", nu, nu, mh)?;
            let minv = invertible(mh)?;
            (
                &minv * f * mh + &minv * g * &c_hat,
                -(&minv * (&moment - g * &d_hat)),
                -(&c_hat * &minv),
            )
        }
    };
    check_gap(&a_hat, f)?;
    let rom = Plant::new(a_hat.clone(), b_hat.clone(), c_hat.clone(), d_hat.clone())?;
    let res = left_residual(&rom, f, g, &moment)?;
    Ok(Rom {
        a: a_hat,
        b: b_hat,
        c: c_hat,
        d: d_hat,
        side: RomSide::Left,
        right: None,
        left: Some(Interpolation {
            f: f.clone(),
            direction: g.clone(),
            moment,
        }),
        parameter,
        match_residual: res,
        right_residual: None,
        left_residual: Some(res),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoSidedForm {
    /// Right family with `B̂ = (MΠ)⁻¹MB`.
    RightFamily,
    /// Left family with `Ĉ = −CΠ(MΠ)⁻¹`; the sign follows from `M̂ = −I`.
    LeftFamily,
}

/// Matches `(F_H, H)` and `(F_G, G)` at once. Both residuals are only
/// zero when `D̂ = D`, which is the default.
pub fn rom_two_sided(
    plant: &Plant,
    f_h: &Mat,
    h: &Mat,
    f_g: &Mat,
    g: &Mat,
    d_hat: Option<&Mat>,
    form: TwoSidedForm,
) -> Result<Rom> {
    let nu = f_h.nrows();
    check_dims(plant, f_h, "H", plant.m(), nu, h)?;
    check_dims(plant, f_g, "G", f_g.nrows(), plant.p(), g)?;
    if f_g.nrows() != nu {
        return Err(Error::ShapeMismatch(format!(
            "left and right data must have the same order ({} vs {nu})",
            f_g.nrows()
        )));
    }
    check_disjoint(&eigenvalues(f_h)?, &eigenvalues(f_g)?)?;
    let right = ssc_primal(plant, f_h, h)?;
    let left = ssc_dual(plant, f_g, g)?;
    let cross = &left.sylvester * &right.sylvester;
    let sv = cross.clone().svd(false, false).singular_values;
    let (smin, smax) = (sv.min(), sv.max());
    let scale = left.sylvester.norm() * right.sylvester.norm();
    if smin <= 1e-10 * scale.max(smax).max(f64::MIN_POSITIVE) {
        return Err(Error::SingularCrossGramian { sigma: smin });
    }
    let cinv = inverse(&cross)?;
    let d_hat = d_hat.cloned().unwrap_or_else(|| plant.d.clone());
    check_dims(plant, f_h, "D_hat", plant.p(), plant.m(), &d_hat)?;
    let (a_hat, b_hat, c_hat, f_used, parameter) = match form {
        TwoSidedForm::RightFamily => {
            let b_hat = &cinv * &left.sylvester * &plant.b;
            (
                f_h - &b_hat * h,
                b_hat.clone(),
                &right.value - &d_hat * h,
                f_h,
                b_hat,
            )
        }
        TwoSidedForm::LeftFamily => {
            let c_hat = -(&plant.c * &right.sylvester * &cinv);
            (
                f_g - g * &c_hat,
                &left.value - g * &d_hat,
                c_hat.clone(),
                f_g,
                c_hat,
            )
        }
    };
    check_gap(&a_hat, f_used)?;
    let rom = Plant::new(a_hat.clone(), b_hat.clone(), c_hat.clone(), d_hat.clone())?;
    let rr = right_residual(&rom, f_h, h, &right.value)?;
    let lr = left_residual(&rom, f_g, g, &left.value)?;
    Ok(Rom {
        a: a_hat,
        b: b_hat,
        c: c_hat,
        d: d_hat,
        side: RomSide::TwoSided,
        right: Some(Interpolation {
            f: f_h.clone(),
            direction: h.clone(),
            moment: right.value,
        }),
        left: Some(Interpolation {
            f: f_g.clone(),
            direction: g.clone(),
            moment: left.value,
        }),
        parameter,
        match_residual: rr.max(lr),
        right_residual: Some(rr),
        left_residual: Some(lr),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EigenCheck {
    pub re: f64,
    pub im: f64,
    pub full_rank: bool,
    /// Trailing singular value relative to the largest.
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StructuralCertificate {
    pub side: RomSide,
    pub per_eigenvalue: Vec<EigenCheck>,
    /// Rank condition at every eigenvalue of `Â`.
    pub condition_holds: bool,
    /// Direct PBH verdict on `(Â, Ĉ)` (right) or `(Â, B̂)` (left).
    pub pbh_holds: bool,
}

impl StructuralCertificate {
    /// The condition is sufficient only: a true condition with a failing
    /// PBH verdict would be a bug.
    pub fn is_sound(&self) -> bool {
        !self.condition_holds || self.pbh_holds
    }
}

/// Rank of `[[F − λI, B̂], [C_p(H), D̂]]` (right, column rank) or
/// `[[F − λI, C_d(G)], [Ĉ, D̂]]` (left, row rank) at each `λ ∈ eig(Â)`,
/// with the free parameter taken in the `Π̂ = I` / `M̂ = −I` coordinates.
pub fn rom_structural_check(rom: &Rom, side: RomSide) -> Result<StructuralCertificate> {
    let (interp, right) = match side {
        RomSide::Right | RomSide::TwoSided => (rom.right.as_ref(), true),
        RomSide::Left => (rom.left.as_ref(), false),
    };
    let interp = interp.ok_or_else(|| {
        Error::ShapeMismatch("reduced model has no interpolation data for this side".into())
    })?;
    let nu = interp.f.nrows();
    let param = match (rom.side, right) {
        (RomSide::TwoSided, true) if rom.parameter.shape() != (nu, rom.d.ncols()) => {
            return Err(Error::ShapeMismatch(
                "two-sided left-family models are checked on the left side".into(),
            ));
        }
        (RomSide::TwoSided, false) if rom.parameter.shape() != (rom.d.nrows(), nu) => {
            return Err(Error::ShapeMismatch(
                "two-sided right-family models are checked on the right side".into(),
            ));
        }
        _ => &rom.parameter,
    };
    let top_right = if right { param } else { &interp.moment };
    let bottom_left = if right { &interp.moment } else { param };
    let mut per = Vec::new();
    let mut ok = true;
    for (lambda, _) in distinct_eigenvalues(&rom.a)? {
        let fl = to_complex(&interp.f) - CMat::identity(nu, nu) * lambda;
        let m = block(&[&[&Mat::zeros(nu, nu), top_right], &[bottom_left, &rom.d]]);
        let mut mc = to_complex(&m);
        mc.view_mut((0, 0), (nu, nu)).copy_from(&fl);
        let info = verdict_rank_c(&mc);
        let need = if right { mc.ncols() } else { mc.nrows() };
        let full = info.rank == need;
        let smax = info.singular_values.first().copied().unwrap_or(0.0);
        let smin = if need <= info.singular_values.len() {
            info.singular_values[need - 1]
        } else {
            0.0
        };
        per.push(EigenCheck {
            re: lambda.re,
            im: lambda.im,
            full_rank: full,
            sigma: if smax > 0.0 { smin / smax } else { 0.0 },
        });
        ok &= full;
    }
    let pbh_holds = if right {
        pbh(&rom.a, &rom.c, PbhMode::Observable)?.holds
    } else {
        pbh(&rom.a, &rom.b, PbhMode::Controllable)?.holds
    };
    Ok(StructuralCertificate {
        side,
        per_eigenvalue: per,
        condition_holds: ok,
        pbh_holds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SteadyStateReport {
    pub start: f64,
    pub end: f64,
    /// Largest output (right) or driver-state (left) gap over the window,
    /// relative to the largest reference value.
    pub max_gap: f64,
}

/// Time constant used for the transient cutoff and comparison window.
fn slowest_time_constant(a: &Mat, a_hat: &Mat) -> Result<Option<f64>> {
    let (x, y) = (spectral_abscissa(a)?, spectral_abscissa(a_hat)?);
    if x >= -BOUNDARY_BAND || y >= -BOUNDARY_BAND {
        return Ok(None);
    }
    Ok(Some(1.0 / x.max(y).abs()))
}

/// Compares the full and reduced cascades after the transient: `Σ′ → Σ`
/// outputs for right data, the `Σ → Σ′` driver state after an input
/// impulse for left data. Returns `None` unless both `A` and `Â` are Hurwitz.
/// The comparison starts after 25 time constants and lasts 5.
pub fn steady_state_check(
    plant: &Plant,
    rom: &Rom,
    eta0: Option<&Vector>,
) -> Result<Option<SteadyStateReport>> {
    let Some(tau) = slowest_time_constant(&plant.a, &rom.a)? else {
        return Ok(None);
    };
    let start = 25.0 * tau;
    let end = 30.0 * tau;
    if let Some(r) = &rom.right {
        let nu = r.f.nrows();
        let eta0 = eta0
            .cloned()
            .unwrap_or_else(|| Vector::from_element(nu, 1.0));
        let run = |p: &Plant| -> Result<Vec<Vector>> {
            let n = p.n();
            let a = block(&[&[&r.f, &Mat::zeros(nu, n)], &[&(&p.b * &r.direction), &p.a]]);
            let c = block(&[&[&(&p.d * &r.direction), &p.c]]);
            let mut s0 = Vector::zeros(nu + n);
            s0.rows_mut(0, nu).copy_from(&eta0);
            window(&a, &c, &s0, start, end)
        };
        let full = run(plant)?;
        let red = run(&rom.plant()?)?;
        return Ok(Some(SteadyStateReport {
            start,
            end,
            max_gap: gap(&full, &red),
        }));
    }
    let l = rom
        .left
        .as_ref()
        .ok_or_else(|| Error::ShapeMismatch("reduced model has no interpolation data".into()))?;
    let nu = l.f.nrows();
    let m = plant.m();
    let mut worst: f64 = 0.0;
    for j in 0..m {
        let run = |p: &Plant| -> Result<Vec<Vector>> {
            let n = p.n();
            let a = block(&[&[&p.a, &Mat::zeros(n, nu)], &[&(&l.direction * &p.c), &l.f]]);
            let c = block(&[&[&Mat::zeros(nu, n), &Mat::identity(nu, nu)]]);
            let mut s0 = Vector::zeros(n + nu);
            s0.rows_mut(0, n).copy_from(&p.b.column(j));
            s0.rows_mut(n, nu)
                .copy_from(&(&l.direction * p.d.column(j)));
            window(&a, &c, &s0, start, end)
        };
        let full = run(plant)?;
        let red = run(&rom.plant()?)?;
        worst = worst.max(gap(&full, &red));
    }
    Ok(Some(SteadyStateReport {
        start,
        end,
        max_gap: worst,
    }))
}

fn window(a: &Mat, c: &Mat, s0: &Vector, start: f64, end: f64) -> Result<Vec<Vector>> {
    let dt = (end - start) / 200.0;
    let phi = crate::linsolve::expm(&(a * start))?;
    let s_start = phi * s0;
    let tr = simulate_lti(
        a,
        &Mat::zeros(a.nrows(), 0),
        c,
        &Mat::zeros(c.nrows(), 0),
        None,
        &s_start,
        end - start,
        dt,
    )?;
    Ok(tr.outputs)
}

fn gap(full: &[Vector], red: &[Vector]) -> f64 {
    let scale = full
        .iter()
        .map(|y| y.amax())
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    full.iter()
        .zip(red)
        .map(|(y, z)| (y - z).amax())
        .fold(0.0, f64::max)
        / scale
}

/// Transfer-matrix gap `max_k |G(s_k) − Ĝ(s_k)|` over the given points.
pub fn transfer_gap(plant: &Plant, rom: &Rom, points: &[C64]) -> Result<f64> {
    let r = rom.plant()?;
    let mut worst: f64 = 0.0;
    for &s in points {
        let g = plant.transfer(s)?;
        let gh = r.transfer(s)?;
        worst = worst.max((g - gh).norm() / (1.0 + plant.transfer(s)?.norm()));
    }
    Ok(worst)
}
