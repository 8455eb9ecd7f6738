//! Moments of a transfer matrix and the moment-based expansion of the
//! cascade operators over the Jordan structure of the driver matrix `F`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linsolve::{
    condition_number_c, eigenvalues, ensure_square, gap_tolerance, inverse_c, max_imag, real_part,
    to_complex, trailing_right_vectors, CMat, Mat, C64,
};
use crate::ssc::{ssc_dual, ssc_primal};
use crate::systems::{grouping_tolerance, Plant};

/// Eigenvector bases with a condition number above this are rejected.
pub const MAX_EIGENBASIS_CONDITION: f64 = 1e10;

/// `C (s₀I - A)^{-1} B + D` for `k = 0`, `C (s₀I - A)^{-(k+1)} B` otherwise.
pub fn moment_matrix(plant: &Plant, s0: C64, k: usize) -> Result<CMat> {
    let spec = eigenvalues(&plant.a)?;
    let tol = gap_tolerance(spec.radius(), s0.norm());
    if spec.values.iter().any(|z| (z - s0).norm() <= tol) {
        return Err(Error::PoleAtPoint { point: s0 });
    }
    let n = plant.n();
    let lu = (CMat::identity(n, n) * s0 - to_complex(&plant.a)).lu();
    let mut x = to_complex(&plant.b);
    for _ in 0..=k {
        x = lu.solve(&x).ok_or(Error::PoleAtPoint { point: s0 })?;
    }
    let mut out = to_complex(&plant.c) * x;
    if k == 0 {
        out += to_complex(&plant.d);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct JordanBlock {
    pub lambda: C64,
    /// Right basis `V_k` (ν × m_k).
    pub v: CMat,
    /// Rows of `V^{-1}` belonging to this block (m_k × ν).
    pub w_star: CMat,
    /// `N_k` with `F V_k = V_k (λ_k I + N_k)`.
    pub nilpotent: CMat,
}

impl JordanBlock {
    pub fn size(&self) -> usize {
        self.v.ncols()
    }

    /// Smallest `q` with `N_k^q = 0`.
    pub fn index(&self) -> usize {
        let m = self.size();
        let mut power = CMat::identity(m, m);
        for q in 0..=m {
            if power.norm() == 0.0
                || (q > 0 && power.norm() <= 1e-14 * (1.0 + self.nilpotent.norm()))
            {
                return q;
            }
            power = &power * &self.nilpotent;
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct JordanStructure {
    pub nu: usize,
    pub blocks: Vec<JordanBlock>,
}

impl JordanStructure {
    /// `X_{k,j} = V_k N_k^j W_k*`.
    pub fn x(&self, k: usize, j: usize) -> CMat {
        let b = &self.blocks[k];
        let mut n_pow = CMat::identity(b.size(), b.size());
        for _ in 0..j {
            n_pow = &n_pow * &b.nilpotent;
        }
        &b.v * n_pow * &b.w_star
    }

    /// `‖Σ_k X_{k,0} - I‖`.
    pub fn resolution_residual(&self) -> f64 {
        let mut acc = CMat::zeros(self.nu, self.nu);
        for k in 0..self.blocks.len() {
            acc += self.x(k, 0);
        }
        (acc - CMat::identity(self.nu, self.nu)).norm()
    }

    pub fn is_semisimple(&self) -> bool {
        self.blocks.iter().all(|b| b.index() <= 1)
    }
}

/// User-declared block: eigenvalue, chain basis and nilpotent part.
#[derive(Debug, Clone)]
pub struct DeclaredBlock {
    pub lambda: C64,
    pub v: CMat,
    pub nilpotent: CMat,
}

impl DeclaredBlock {
    /// A single canonical Jordan chain `v_1, ..., v_m` with
    /// `(F - λI) v_1 = 0`, `(F - λI) v_{i+1} = v_i`.
    pub fn chain(lambda: C64, v: CMat) -> Self {
        let m = v.ncols();
        let mut n = CMat::zeros(m, m);
        for i in 0..m.saturating_sub(1) {
            n[(i, i + 1)] = C64::new(1.0, 0.0);
        }
        DeclaredBlock {
            lambda,
            v,
            nilpotent: n,
        }
    }
}

fn assemble(nu: usize, parts: Vec<(C64, CMat, CMat)>) -> Result<JordanStructure> {
    let total: usize = parts.iter().map(|p| p.1.ncols()).sum();
    if total != nu {
        return Err(Error::ShapeMismatch(format!(
            "Jordan blocks cover {total} of {nu} dimensions"
        )));
    }
    let mut v = CMat::zeros(nu, nu);
    let mut c0 = 0;
    for (_, vk, _) in &parts {
        v.view_mut((0, c0), (nu, vk.ncols())).copy_from(vk);
        c0 += vk.ncols();
    }
    let cond = condition_number_c(&v);
    if !(cond <= MAX_EIGENBASIS_CONDITION) {
        return Err(Error::IllConditioned { cond });
    }
    let vinv = inverse_c(&v)?;
    let mut blocks = Vec::with_capacity(parts.len());
    let mut r0 = 0;
    for (lambda, vk, nk) in parts {
        let mk = vk.ncols();
        let w_star = vinv.rows(r0, mk).into_owned();
        r0 += mk;
        blocks.push(JordanBlock {
            lambda,
            v: vk,
            w_star,
            nilpotent: nk,
        });
    }
    Ok(JordanStructure { nu, blocks })
}

/// Jordan structure of `F`. Without a declaration `F` must be numerically
/// diagonalizable; eigenvalues closer than the grouping tolerance form one
/// block.
pub fn jordan_structure(f: &Mat, declared: Option<&[DeclaredBlock]>) -> Result<JordanStructure> {
    let nu = ensure_square(f.nrows(), f.ncols(), "F")?;
    let fc = to_complex(f);
    if let Some(decl) = declared {
        let scale = 1e-8 * (1.0 + f.norm());
        let mut parts = Vec::new();
        for b in decl {
            let mk = b.v.ncols();
            if b.v.nrows() != nu || b.nilpotent.shape() != (mk, mk) {
                return Err(Error::ShapeMismatch(
                    "declared block has inconsistent shape".into(),
                ));
            }
            let lhs = &fc * &b.v;
            let rhs = &b.v * (CMat::identity(mk, mk) * b.lambda + &b.nilpotent);
            if (lhs - rhs).norm() > scale * (1.0 + b.v.norm()) {
                return Err(Error::Numerical(format!(
                    "declared chain at {} does not satisfy F V = V (λI + N)",
                    b.lambda
                )));
            }
            parts.push((b.lambda, b.v.clone(), b.nilpotent.clone()));
        }
        return assemble(nu, parts);
    }
    let spec = eigenvalues(f)?;
    let gtol = grouping_tolerance(&spec);
    let null_tol = 1e-6 * (1.0 + spec.radius());
    let mut parts = Vec::new();
    for (lambda, mult) in spec.clusters(gtol) {
        let shifted = &fc - CMat::identity(nu, nu) * lambda;
        let sv = nalgebra::SVD::new(shifted.clone(), false, false).singular_values;
        let mut sv: Vec<f64> = sv.iter().copied().collect();
        sv.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        if sv[mult - 1] > null_tol {
            return Err(Error::DefectiveUndeclared { lambda });
        }
        let vk = trailing_right_vectors(&shifted, mult);
        parts.push((lambda, vk, CMat::zeros(mult, mult)));
    }
    assemble(nu, parts)
}

fn strip_real(value: CMat) -> Result<Mat> {
    let scale = value.norm().max(1.0);
    let im = max_imag(&value);
    if im > 1e-9 * scale {
        return Err(Error::Numerical(format!(
            "moment expansion left imaginary residue {im:e}"
        )));
    }
    Ok(real_part(&value))
}

/// `Σ_k Σ_j (-1)^j M_j(λ_k) H X_{k,j}`.
pub fn cp_from_moments(plant: &Plant, js: &JordanStructure, h: &Mat) -> Result<Mat> {
    if h.shape() != (plant.m(), js.nu) {
        return Err(Error::ShapeMismatch(format!(
            "H must be {}x{}",
            plant.m(),
            js.nu
        )));
    }
    let hc = to_complex(h);
    let mut acc = CMat::zeros(plant.p(), js.nu);
    for (k, block) in js.blocks.iter().enumerate() {
        for j in 0..block.index().max(1) {
            let mj = moment_matrix(plant, block.lambda, j).map_err(|e| overlap(e, block.lambda))?;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += (mj * &hc * js.x(k, j)) * C64::new(sign, 0.0);
        }
    }
    strip_real(acc)
}

/// `Σ_k Σ_j (-1)^j X_{k,j} G M_j(λ_k)`.
pub fn cd_from_moments(plant: &Plant, js: &JordanStructure, g: &Mat) -> Result<Mat> {
    if g.shape() != (js.nu, plant.p()) {
        return Err(Error::ShapeMismatch(format!(
            "G must be {}x{}",
            js.nu,
            plant.p()
        )));
    }
    let gc = to_complex(g);
    let mut acc = CMat::zeros(js.nu, plant.m());
    for (k, block) in js.blocks.iter().enumerate() {
        for j in 0..block.index().max(1) {
            let mj = moment_matrix(plant, block.lambda, j).map_err(|e| overlap(e, block.lambda))?;
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            acc += (js.x(k, j) * &gc * mj) * C64::new(sign, 0.0);
        }
    }
    strip_real(acc)
}

fn overlap(e: Error, lambda: C64) -> Error {
    match e {
        Error::PoleAtPoint { point } => Error::SpectraOverlap {
            a: point,
            b: lambda,
            tol: 0.0,
        },
        other => other,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SymmetryReport {
    /// Every `X_{k,j}` commutes with `G M_j(λ_k) H`.
    pub commutation: bool,
    /// `G C_p(H) = C_d(G) H`.
    pub identity: bool,
    pub identity_residual: f64,
    /// `F = Fᵀ`, `G = [g … g]`, `H = Gᵀ`.
    pub transpose_applicable: bool,
    /// `G C_p(H) = (C_d(G) H)ᵀ`.
    pub transpose_identity: bool,
    pub transpose_residual: f64,
}

pub fn symmetry_check(
    plant: &Plant,
    js: &JordanStructure,
    g: &Mat,
    h: &Mat,
) -> Result<SymmetryReport> {
    let f = {
        let mut acc = CMat::zeros(js.nu, js.nu);
        for (k, b) in js.blocks.iter().enumerate() {
            acc += js.x(k, 0) * b.lambda;
            if b.index() > 1 {
                acc += js.x(k, 1);
            }
        }
        real_part(&acc)
    };
    let cp = ssc_primal(plant, &f, h)?.value;
    let cd = ssc_dual(plant, &f, g)?.value;
    let (gc, hc) = (to_complex(g), to_complex(h));
    let mut commutation = true;
    for (k, b) in js.blocks.iter().enumerate() {
        for j in 0..b.index().max(1) {
            let x = js.x(k, j);
            let y = &gc * moment_matrix(plant, b.lambda, j)? * &hc;
            let scale = 1e-9 * (1.0 + x.norm() * y.norm());
            if (&x * &y - &y * &x).norm() > scale {
                commutation = false;
            }
        }
    }
    let lhs = g * &cp;
    let rhs = &cd * h;
    let scale = 1.0 + lhs.norm() + rhs.norm();
    let identity_residual = (&lhs - &rhs).norm() / scale;
    let transpose_residual = (&lhs - rhs.transpose()).norm() / scale;
    let symmetric = (&f - f.transpose()).norm() <= 1e-12 * (1.0 + f.norm());
    let equal_columns =
        (1..g.ncols()).all(|c| (g.column(c) - g.column(0)).norm() <= 1e-14 * (1.0 + g.norm()));
    let transpose_applicable = symmetric
        && equal_columns
        && h.shape() == (g.ncols(), g.nrows())
        && (h - g.transpose()).norm() == 0.0;
    Ok(SymmetryReport {
        commutation,
        identity: identity_residual <= 1e-8,
        identity_residual,
        transpose_applicable,
        transpose_identity: transpose_residual <= 1e-8,
        transpose_residual,
    })
}
