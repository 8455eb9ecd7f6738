//! Steady-state cascade operators: the Sylvester-equation maps `H ↦ C_p(H)`
//! and `G ↦ C_d(G)`, their vectorized matrices, and structural reports
//! linking their injectivity/surjectivity to Rosenbrock rank conditions.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linsolve::{
    ensure_square, left_null_vector, min_norm_solve, numerical_rank, numerical_rank_c, to_complex,
    verdict_rank, verdict_rank_c, CMat, Mat, SylvesterSolver, BOUNDARY_BAND, C64, VERDICT_RTOL,
};
use crate::systems::{distinct_eigenvalues, pbh, rosenbrock, PbhMode, Plant};

#[derive(Debug, Clone)]
pub struct SscSolution {
    /// `Π` (primal) or `M` (dual).
    pub sylvester: Mat,
    /// `C_p(H)` or `C_d(G)`.
    pub value: Mat,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub enum Side {
    Primal,
    Dual,
}

/// The linear map `C_p` or `C_d` for a fixed plant and driver matrix `F`,
/// with the Schur forms cached.
#[derive(Debug, Clone)]
pub struct SscOperator {
    plant: Plant,
    f: Mat,
    side: Side,
    solver: SylvesterSolver,
}

impl SscOperator {
    pub fn new(plant: &Plant, f: &Mat, side: Side) -> Result<Self> {
        ensure_square(f.nrows(), f.ncols(), "driver.F")?;
        let solver = match side {
            // A Π - Π F = -B H
            Side::Primal => SylvesterSolver::from_real(&plant.a, f)?,
            // F M - M A = -G C
            Side::Dual => SylvesterSolver::from_real(f, &plant.a)?,
        };
        Ok(SscOperator {
            plant: plant.clone(),
            f: f.clone(),
            side,
            solver,
        })
    }

    pub fn side(&self) -> Side {
        self.side
    }

    pub fn nu(&self) -> usize {
        self.f.nrows()
    }

    /// Shape of the argument (`H` or `G`).
    pub fn domain_shape(&self) -> (usize, usize) {
        match self.side {
            Side::Primal => (self.plant.m(), self.nu()),
            Side::Dual => (self.nu(), self.plant.p()),
        }
    }

    /// Shape of the value (`C_p(H)` or `C_d(G)`).
    pub fn codomain_shape(&self) -> (usize, usize) {
        match self.side {
            Side::Primal => (self.plant.p(), self.nu()),
            Side::Dual => (self.nu(), self.plant.m()),
        }
    }

    pub fn solve(&self, x: &Mat) -> Result<SscSolution> {
        if x.shape() != self.domain_shape() {
            let (r, c) = self.domain_shape();
            return Err(Error::ShapeMismatch(format!(
                "operator argument is {}x{}, expected {r}x{c}",
                x.nrows(),
                x.ncols()
            )));
        }
        let p = &self.plant;
        match self.side {
            Side::Primal => {
                let bh = &p.b * x;
                let pi = self.solver.solve(&(-&bh))?;
                let value = &p.c * &pi + &p.d * x;
                let r = &pi * &self.f - &p.a * &pi - &bh;
                let scale =
                    (pi.norm() * (self.f.norm() + p.a.norm()) + bh.norm()).max(f64::MIN_POSITIVE);
                Ok(SscSolution {
                    sylvester: pi,
                    value,
                    residual: r.norm() / scale,
                })
            }
            Side::Dual => {
                let gc = x * &p.c;
                let mm = self.solver.solve(&(-&gc))?;
                let value = -(&mm * &p.b) + x * &p.d;
                let r = &mm * &p.a - &self.f * &mm - &gc;
                let scale =
                    (mm.norm() * (self.f.norm() + p.a.norm()) + gc.norm()).max(f64::MIN_POSITIVE);
                Ok(SscSolution {
                    sylvester: mm,
                    value,
                    residual: r.norm() / scale,
                })
            }
        }
    }

    pub fn apply(&self, x: &Mat) -> Result<Mat> {
        Ok(self.solve(x)?.value)
    }

    /// Matrix of the operator acting on column-major vectorizations.
    pub fn matrix(&self) -> Result<OperatorMatrix> {
        let (dr, dc) = self.domain_shape();
        let (cr, cc) = self.codomain_shape();
        let mut m = Mat::zeros(cr * cc, dr * dc);
        // squared size of the two summands, so a value that cancels to
        // zero (a zero of the plant on eig(F)) is not ranked against itself
        let mut scale2 = 0.0;
        let p = &self.plant;
        for k in 0..dr * dc {
            let mut e = Mat::zeros(dr, dc);
            e[(k % dr, k / dr)] = 1.0;
            let sol = self.solve(&e)?;
            let parts = match self.side {
                Side::Primal => (&p.c * &sol.sylvester).norm() + (&p.d * &e).norm(),
                Side::Dual => (&sol.sylvester * &p.b).norm() + (&e * &p.d).norm(),
            };
            scale2 += parts * parts;
            m.column_mut(k).copy_from_slice(sol.value.as_slice());
        }
        let info = numerical_rank(
            &m,
            Some(VERDICT_RTOL * scale2.sqrt().max(f64::MIN_POSITIVE)),
        );
        Ok(OperatorMatrix {
            matrix: m,
            singular_values: info.singular_values,
            rank: info.rank,
            domain: (dr, dc),
            codomain: (cr, cc),
        })
    }
}

#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    pub matrix: Mat,
    pub singular_values: Vec<f64>,
    pub rank: usize,
    pub domain: (usize, usize),
    pub codomain: (usize, usize),
}

impl OperatorMatrix {
    pub fn from_matrix(matrix: Mat, domain: (usize, usize), codomain: (usize, usize)) -> Self {
        let info = verdict_rank(&matrix);
        OperatorMatrix {
            matrix,
            singular_values: info.singular_values,
            rank: info.rank,
            domain,
            codomain,
        }
    }

    pub fn is_injective(&self) -> bool {
        self.rank == self.domain.0 * self.domain.1
    }

    pub fn is_surjective(&self) -> bool {
        self.rank == self.codomain.0 * self.codomain.1
    }
}

pub fn ssc_primal(plant: &Plant, f: &Mat, h: &Mat) -> Result<SscSolution> {
    SscOperator::new(plant, f, Side::Primal)?.solve(h)
}

pub fn ssc_dual(plant: &Plant, f: &Mat, g: &Mat) -> Result<SscSolution> {
    SscOperator::new(plant, f, Side::Dual)?.solve(g)
}

pub fn operator_matrix(plant: &Plant, f: &Mat, side: Side) -> Result<OperatorMatrix> {
    SscOperator::new(plant, f, side)?.matrix()
}

#[derive(Debug, Clone)]
pub struct OperatorInverse {
    pub argument: Mat,
    pub residual: f64,
}

/// Minimum-norm `X` with `C_p(X) = target` (or `C_d`).
pub fn solve_operator_equation(
    plant: &Plant,
    f: &Mat,
    side: Side,
    target: &Mat,
) -> Result<OperatorInverse> {
    let op = SscOperator::new(plant, f, side)?;
    invert_operator(&op, target)
}

pub fn invert_operator(op: &SscOperator, target: &Mat) -> Result<OperatorInverse> {
    if target.shape() != op.codomain_shape() {
        let (r, c) = op.codomain_shape();
        return Err(Error::ShapeMismatch(format!(
            "operator target is {}x{}, expected {r}x{c}",
            target.nrows(),
            target.ncols()
        )));
    }
    let om = op.matrix()?;
    let rhs = Mat::from_column_slice(target.len(), 1, target.as_slice());
    let sol = min_norm_solve(&om.matrix, &rhs, VERDICT_RTOL)?;
    let (dr, dc) = op.domain_shape();
    let argument = Mat::from_column_slice(dr, dc, sol.as_slice());
    let residual = (op.apply(&argument)? - target).norm();
    let tnorm = target.norm();
    if residual > 1e-6 * tnorm.max(f64::MIN_POSITIVE) && residual > 0.0 {
        return Err(Error::Unsolvable {
            residual,
            target: tnorm,
        });
    }
    Ok(OperatorInverse { argument, residual })
}

/// Linear map `(Π, Ψ) ↦ (ΠF - AΠ - BΨ, -CΠ - DΨ)` on stacked vectorizations.
pub fn francis_matrix(plant: &Plant, f: &Mat) -> Mat {
    let (n, m, p, nu) = (plant.n(), plant.m(), plant.p(), f.nrows());
    let i_nu = Mat::identity(nu, nu);
    let i_n = Mat::identity(n, n);
    let mut out = Mat::zeros((n + p) * nu, (n + m) * nu);
    let top_left = f.transpose().kronecker(&i_n) - i_nu.kronecker(&plant.a);
    out.view_mut((0, 0), (n * nu, n * nu)).copy_from(&top_left);
    out.view_mut((0, n * nu), (n * nu, m * nu))
        .copy_from(&(-i_nu.kronecker(&plant.b)));
    out.view_mut((n * nu, 0), (p * nu, n * nu))
        .copy_from(&(-i_nu.kronecker(&plant.c)));
    out.view_mut((n * nu, n * nu), (p * nu, m * nu))
        .copy_from(&(-i_nu.kronecker(&plant.d)));
    out
}

/// Linear map `(M, G) ↦ (MA - FM - GC, MB - GD)` on stacked vectorizations.
pub fn dual_francis_matrix(plant: &Plant, f: &Mat) -> Mat {
    let (n, m, p, nu) = (plant.n(), plant.m(), plant.p(), f.nrows());
    let i_nu = Mat::identity(nu, nu);
    let i_n = Mat::identity(n, n);
    let mut out = Mat::zeros((n + m) * nu, (n + p) * nu);
    // vec(M A) = (Aᵀ ⊗ I) vec M, vec(F M) = (I ⊗ F) vec M, vec(G C) = (Cᵀ ⊗ I) vec G
    let top_left = plant.a.transpose().kronecker(&i_nu) - i_n.kronecker(f);
    out.view_mut((0, 0), (n * nu, n * nu)).copy_from(&top_left);
    out.view_mut((0, n * nu), (n * nu, p * nu))
        .copy_from(&(-plant.c.transpose().kronecker(&i_nu)));
    out.view_mut((n * nu, 0), (m * nu, n * nu))
        .copy_from(&plant.b.transpose().kronecker(&i_nu));
    out.view_mut((n * nu, n * nu), (m * nu, p * nu))
        .copy_from(&(-plant.d.transpose().kronecker(&i_nu)));
    out
}

#[derive(Debug, Clone)]
pub struct FrancisSolution {
    pub pi: Mat,
    pub psi: Mat,
    pub residual: f64,
}

/// Solves `Π F = A Π + B Ψ + P`, `0 = C Π + D Ψ + Q` (minimum norm when
/// not unique).
pub fn solve_francis(plant: &Plant, f: &Mat, p_rhs: &Mat, q_rhs: &Mat) -> Result<FrancisSolution> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let nu = ensure_square(f.nrows(), f.ncols(), "driver.F")?;
    if p_rhs.shape() != (n, nu) || q_rhs.shape() != (p, nu) {
        return Err(Error::ShapeMismatch(format!(
            "Francis right-hand sides must be {n}x{nu} and {p}x{nu}"
        )));
    }
    let ea = crate::linsolve::eigenvalues(&plant.a)?;
    let ef = crate::linsolve::eigenvalues(f)?;
    crate::linsolve::check_disjoint(&ea, &ef)?;
    let mat = francis_matrix(plant, f);
    let mut rhs = Mat::zeros((n + p) * nu, 1);
    rhs.view_mut((0, 0), (n * nu, 1))
        .copy_from_slice(p_rhs.as_slice());
    rhs.view_mut((n * nu, 0), (p * nu, 1))
        .copy_from_slice(q_rhs.as_slice());
    let sol = min_norm_solve(&mat, &rhs, VERDICT_RTOL)?;
    let pi = Mat::from_column_slice(n, nu, &sol.as_slice()[..n * nu]);
    let psi = Mat::from_column_slice(m, nu, &sol.as_slice()[n * nu..]);
    let r1 = &pi * f - &plant.a * &pi - &plant.b * &psi - p_rhs;
    let r2 = &plant.c * &pi + &plant.d * &psi + q_rhs;
    let residual = (r1.norm_squared() + r2.norm_squared()).sqrt();
    let target = rhs.norm();
    if residual > 1e-6 * target.max(f64::MIN_POSITIVE) && residual > 1e-12 {
        return Err(Error::Unsolvable { residual, target });
    }
    Ok(FrancisSolution { pi, psi, residual })
}

#[derive(Debug, Clone)]
pub struct DualFrancisSolution {
    pub m: Mat,
    pub g: Mat,
    pub residual: f64,
}

/// Solves `M A = F M + G C + P̄`, `0 = -M B + G D + Q̄` (minimum norm when
/// not unique).
pub fn solve_dual_francis(
    plant: &Plant,
    f: &Mat,
    p_bar: &Mat,
    q_bar: &Mat,
) -> Result<DualFrancisSolution> {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let nu = ensure_square(f.nrows(), f.ncols(), "driver.F")?;
    if p_bar.shape() != (nu, n) || q_bar.shape() != (nu, m) {
        return Err(Error::ShapeMismatch(format!(
            "dual Francis right-hand sides must be {nu}x{n} and {nu}x{m}"
        )));
    }
    let ea = crate::linsolve::eigenvalues(&plant.a)?;
    let ef = crate::linsolve::eigenvalues(f)?;
    crate::linsolve::check_disjoint(&ea, &ef)?;
    let mat = dual_francis_matrix(plant, f);
    let mut rhs = Mat::zeros((n + m) * nu, 1);
    rhs.view_mut((0, 0), (n * nu, 1))
        .copy_from_slice(p_bar.as_slice());
    rhs.view_mut((n * nu, 0), (m * nu, 1))
        .copy_from_slice(q_bar.as_slice());
    let sol = min_norm_solve(&mat, &rhs, VERDICT_RTOL)?;
    let mm = Mat::from_column_slice(nu, n, &sol.as_slice()[..n * nu]);
    let g = Mat::from_column_slice(nu, p, &sol.as_slice()[n * nu..]);
    let r1 = &mm * &plant.a - f * &mm - &g * &plant.c - p_bar;
    let r2 = -(&mm * &plant.b) + &g * &plant.d + q_bar;
    let residual = (r1.norm_squared() + r2.norm_squared()).sqrt();
    let target = rhs.norm();
    if residual > 1e-6 * target.max(f64::MIN_POSITIVE) && residual > 1e-12 {
        return Err(Error::Unsolvable { residual, target });
    }
    Ok(DualFrancisSolution { m: mm, g, residual })
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub lambda: (f64, f64),
    /// Null direction of the Rosenbrock matrix (left for row rank, right for column rank).
    pub vector: Vec<(f64, f64)>,
    pub sigma: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Implication {
    pub hypothesis: bool,
    pub conclusion: bool,
}

impl Implication {
    pub fn violated(&self) -> bool {
        self.hypothesis && !self.conclusion
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    /// Rosenbrock rank at every eigenvalue of `F`.
    pub rosenbrock: bool,
    /// Francis equations: solvable for every right-hand side (row case) or uniquely solvable (column case).
    pub francis: bool,
    /// Dual Francis equations: uniquely solvable (row case) or solvable for every right-hand side (column case).
    pub dual_francis: bool,
    /// `C_p` surjective (row case) or injective (column case).
    pub cp: bool,
    /// `C_d` injective (row case) or surjective (column case).
    pub cd: bool,
    pub consistent: bool,
    /// Controllability (row case) or observability (column case) transfer.
    pub transfer_strong: Option<Implication>,
    /// Stabilizability (row case) or detectability (column case) transfer.
    pub transfer_weak: Option<Implication>,
    /// Whether the eigenspace condition that makes the strong transfer reversible holds.
    pub converse_applicable: Option<bool>,
    pub converse: Option<Implication>,
    pub witness: Option<Witness>,
    /// Relative trailing Rosenbrock singular value at each eigenvalue of `F`.
    pub margins: Vec<((f64, f64), f64)>,
}

impl TestReport {
    pub fn verdicts(&self) -> [bool; 5] {
        [
            self.rosenbrock,
            self.francis,
            self.dual_francis,
            self.cp,
            self.cd,
        ]
    }

    pub fn transfer_violations(&self) -> usize {
        [&self.transfer_strong, &self.transfer_weak, &self.converse]
            .iter()
            .filter(|t| t.as_ref().is_some_and(|t| t.violated()))
            .count()
    }
}

fn pair(z: C64) -> (f64, f64) {
    (z.re, z.im)
}

struct RankScan {
    full_all: bool,
    full_unstable: bool,
    witness: Option<Witness>,
    margins: Vec<((f64, f64), f64)>,
}

fn scan_rosenbrock(plant: &Plant, f: &Mat, row: bool) -> Result<RankScan> {
    let target = if row {
        plant.n() + plant.p()
    } else {
        plant.n() + plant.m()
    };
    let mut scan = RankScan {
        full_all: true,
        full_unstable: true,
        witness: None,
        margins: Vec::new(),
    };
    let mut worst = f64::INFINITY;
    let data_scale = plant.a.norm() + plant.b.norm() + plant.c.norm() + plant.d.norm();
    for (lambda, _) in distinct_eigenvalues(f)? {
        let r = rosenbrock(plant, lambda);
        let r = if row { r } else { r.adjoint() };
        let smax = numerical_rank_c(&r, None)
            .singular_values
            .first()
            .copied()
            .unwrap_or(0.0);
        let info = numerical_rank_c(&r, Some(VERDICT_RTOL * smax.max(data_scale)));
        let tail = if info.singular_values.len() >= target {
            info.singular_values[target - 1]
        } else {
            0.0
        };
        let rel = if smax > 0.0 { tail / smax } else { 0.0 };
        scan.margins.push((pair(lambda), rel));
        if info.rank < target {
            scan.full_all = false;
            if lambda.re >= -BOUNDARY_BAND {
                scan.full_unstable = false;
            }
            if rel < worst {
                worst = rel;
                let w = left_null_vector(&r);
                let w: Vec<(f64, f64)> = if row {
                    w.iter().map(|z| pair(*z)).collect()
                } else {
                    w.iter().map(|z| pair(z.conj())).collect()
                };
                scan.witness = Some(Witness {
                    lambda: pair(lambda),
                    vector: w,
                    sigma: tail,
                });
            }
        }
    }
    Ok(scan)
}

/// `rank(Xᵀ N) = k` for `N` a basis of `ker(λI - Fᵀ)` at every eigenvalue,
/// with `X` of shape `ν × k` (`G` in the row case, `Hᵀ` in the column case).
fn eigenspace_spans(f_t: &Mat, x: &Mat) -> Result<bool> {
    let nu = f_t.nrows();
    let k = x.ncols();
    for (lambda, _) in distinct_eigenvalues(f_t)? {
        let shifted = CMat::identity(nu, nu) * lambda - to_complex(f_t);
        let info = verdict_rank_c(&shifted);
        let dim = nu - info.rank;
        let basis = crate::linsolve::trailing_right_vectors(&shifted, dim);
        let img = to_complex(&x.transpose()) * basis;
        if verdict_rank_c(&img).rank < k {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Full-row-rank battery: Rosenbrock rank, Francis solvability, dual
/// Francis uniqueness, surjectivity of `C_p`, injectivity of `C_d`, and,
/// when `G` is supplied, the controllability and stabilizability transfer
/// from `(F, G)` to `(F, C_d(G))`.
pub fn row_rank_report(plant: &Plant, f: &Mat, g: Option<&Mat>) -> Result<TestReport> {
    let (n, p, nu) = (plant.n(), plant.p(), f.nrows());
    let scan = scan_rosenbrock(plant, f, true)?;
    let francis = verdict_rank(&francis_matrix(plant, f)).rank == (n + p) * nu;
    let dual_francis = verdict_rank(&dual_francis_matrix(plant, f)).rank == (n + p) * nu;
    let cp = operator_matrix(plant, f, Side::Primal)?.is_surjective();
    let cd_op = SscOperator::new(plant, f, Side::Dual)?;
    let cd = cd_op.matrix()?.is_injective();
    let rosenbrock = scan.full_all;
    let consistent = [francis, dual_francis, cp, cd]
        .iter()
        .all(|&v| v == rosenbrock);
    let (mut strong, mut weak, mut conv_app, mut conv) = (None, None, None, None);
    if let Some(g) = g {
        let cdg = cd_op.apply(g)?;
        let fg_ctrb = pbh(f, g, PbhMode::Controllable)?.holds;
        let fg_stab = pbh(f, g, PbhMode::Stabilizable)?.holds;
        let out_ctrb = pbh(f, &cdg, PbhMode::Controllable)?.holds;
        let out_stab = pbh(f, &cdg, PbhMode::Stabilizable)?.holds;
        strong = Some(Implication {
            hypothesis: fg_ctrb && rosenbrock,
            conclusion: out_ctrb,
        });
        weak = Some(Implication {
            hypothesis: fg_stab && scan.full_unstable,
            conclusion: out_stab,
        });
        let applicable = eigenspace_spans(&f.transpose(), g)?;
        conv_app = Some(applicable);
        if applicable {
            conv = Some(Implication {
                hypothesis: out_ctrb,
                conclusion: fg_ctrb && rosenbrock,
            });
        }
    }
    Ok(TestReport {
        rosenbrock,
        francis,
        dual_francis,
        cp,
        cd,
        consistent,
        transfer_strong: strong,
        transfer_weak: weak,
        converse_applicable: conv_app,
        converse: conv,
        witness: scan.witness,
        margins: scan.margins,
    })
}

/// Full-column-rank battery, the dual of [`row_rank_report`]; `H` enables the
/// observability and detectability transfer from `(F, H)` to `(F, C_p(H))`.
pub fn column_rank_report(plant: &Plant, f: &Mat, h: Option<&Mat>) -> Result<TestReport> {
    let (n, m, nu) = (plant.n(), plant.m(), f.nrows());
    let scan = scan_rosenbrock(plant, f, false)?;
    let francis = verdict_rank(&francis_matrix(plant, f)).rank == (n + m) * nu;
    let dual_francis = verdict_rank(&dual_francis_matrix(plant, f)).rank == (n + m) * nu;
    let cp_op = SscOperator::new(plant, f, Side::Primal)?;
    let cp = cp_op.matrix()?.is_injective();
    let cd = operator_matrix(plant, f, Side::Dual)?.is_surjective();
    let rosenbrock = scan.full_all;
    let consistent = [francis, dual_francis, cp, cd]
        .iter()
        .all(|&v| v == rosenbrock);
    let (mut strong, mut weak, mut conv_app, mut conv) = (None, None, None, None);
    if let Some(h) = h {
        let cph = cp_op.apply(h)?;
        let fh_obsv = pbh(f, h, PbhMode::Observable)?.holds;
        let fh_det = pbh(f, h, PbhMode::Detectable)?.holds;
        let out_obsv = pbh(f, &cph, PbhMode::Observable)?.holds;
        let out_det = pbh(f, &cph, PbhMode::Detectable)?.holds;
        strong = Some(Implication {
            hypothesis: fh_obsv && rosenbrock,
            conclusion: out_obsv,
        });
        weak = Some(Implication {
            hypothesis: fh_det && scan.full_unstable,
            conclusion: out_det,
        });
        let applicable = eigenspace_spans(f, &h.transpose())?;
        conv_app = Some(applicable);
        if applicable {
            conv = Some(Implication {
                hypothesis: out_obsv,
                conclusion: fh_obsv && rosenbrock,
            });
        }
    }
    Ok(TestReport {
        rosenbrock,
        francis,
        dual_francis,
        cp,
        cd,
        consistent,
        transfer_strong: strong,
        transfer_weak: weak,
        converse_applicable: conv_app,
        converse: conv,
        witness: scan.witness,
        margins: scan.margins,
    })
}

/// Rank of the Rosenbrock matrix is full (row or column as requested) at
/// each eigenvalue of `F` in the closed right half-plane; returns the
/// offending eigenvalue otherwise.
pub fn rosenbrock_condition(
    plant: &Plant,
    f: &Mat,
    row: bool,
    unstable_only: bool,
) -> Result<Option<(C64, f64)>> {
    let scan = scan_rosenbrock(plant, f, row)?;
    let ok = if unstable_only {
        scan.full_unstable
    } else {
        scan.full_all
    };
    if ok {
        return Ok(None);
    }
    Ok(scan
        .witness
        .map(|w| (C64::new(w.lambda.0, w.lambda.1), w.sigma)))
}

#[derive(Debug, Clone, Serialize)]
pub struct HautusReport {
    pub row_full: bool,
    pub column_full: bool,
    pub hp_surjective: bool,
    pub hp_injective: bool,
    pub hd_surjective: bool,
    pub hd_injective: bool,
    pub consistent: bool,
}

fn poly_matrix(f: &Mat, coeffs: &[f64]) -> Mat {
    let nu = f.nrows();
    let mut acc = Mat::zeros(nu, nu);
    for &c in coeffs.iter().rev() {
        acc = &acc * f + Mat::identity(nu, nu) * c;
    }
    acc
}

fn poly_scalar(z: C64, coeffs: &[f64]) -> C64 {
    coeffs
        .iter()
        .rev()
        .fold(C64::new(0.0, 0.0), |acc, &c| acc * z + c)
}

/// Checks the generalized Hautus operators `X ↦ Σ R_i X q_i(F)` and
/// `Y ↦ Σ q_i(F) Y R_i` against the rank of `R(λ) = Σ R_i q_i(λ)` on the
/// spectrum of `F`. Polynomial coefficients are in ascending powers.
pub fn hautus_check(f: &Mat, r_list: &[Mat], q_list: &[Vec<f64>]) -> Result<HautusReport> {
    let nu = ensure_square(f.nrows(), f.ncols(), "F")?;
    if r_list.is_empty() || r_list.len() != q_list.len() {
        return Err(Error::ShapeMismatch(
            "need one polynomial per coefficient matrix".into(),
        ));
    }
    let (rows, cols) = r_list[0].shape();
    if r_list.iter().any(|r| r.shape() != (rows, cols)) {
        return Err(Error::ShapeMismatch(
            "coefficient matrices differ in shape".into(),
        ));
    }
    let mut hp = Mat::zeros(rows * nu, cols * nu);
    let mut hd = Mat::zeros(nu * cols, nu * rows);
    // bounds |R(λ)| and the operator entries; a self-relative threshold
    // would call a vanishing R(λ) full rank
    let mut scale = 0.0;
    for (r, q) in r_list.iter().zip(q_list) {
        let qf = poly_matrix(f, q);
        scale += r.norm() * qf.norm();
        hp += qf.transpose().kronecker(r);
        hd += r.transpose().kronecker(&qf);
    }
    let tol = VERDICT_RTOL * scale.max(f64::MIN_POSITIVE);
    let mut row_full = true;
    let mut column_full = true;
    for (lambda, _) in distinct_eigenvalues(f)? {
        let mut rl = CMat::zeros(rows, cols);
        for (r, q) in r_list.iter().zip(q_list) {
            rl += to_complex(r) * poly_scalar(lambda, q);
        }
        let rank = numerical_rank_c(&rl, Some(tol)).rank;
        row_full &= rank == rows;
        column_full &= rank == cols;
    }
    let hp_rank = numerical_rank(&hp, Some(tol)).rank;
    let hd_rank = numerical_rank(&hd, Some(tol)).rank;
    let hp_surjective = hp_rank == rows * nu;
    let hp_injective = hp_rank == cols * nu;
    let hd_surjective = hd_rank == cols * nu;
    let hd_injective = hd_rank == rows * nu;
    let consistent = hp_surjective == row_full
        && hp_injective == column_full
        && hd_surjective == column_full
        && hd_injective == row_full;
    Ok(HautusReport {
        row_full,
        column_full,
        hp_surjective,
        hp_injective,
        hd_surjective,
        hd_injective,
        consistent,
    })
}
