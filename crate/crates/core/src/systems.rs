//! Plant and driver data, cascade compositions, Rosenbrock matrices and
//! Popov–Belevitch–Hautus tests.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linsolve::{
    cluster_values, eigenvalues, ensure_finite, ensure_square, left_null_vector, numerical_rank_c,
    to_complex, CMat, Mat, Spectrum, BOUNDARY_BAND, C64, VERDICT_RTOL,
};

/// Tolerance for treating two computed eigenvalues as the same point.
pub fn grouping_tolerance(spec: &Spectrum) -> f64 {
    1e-7 * (1.0 + spec.radius())
}

/// Distinct eigenvalues of `a`, with numerically repeated ones merged.
pub fn distinct_eigenvalues(a: &Mat) -> Result<Vec<(C64, usize)>> {
    let spec = eigenvalues(a)?;
    let tol = grouping_tolerance(&spec);
    Ok(cluster_values(&spec.values, tol))
}

fn check_shape(m: &Mat, rows: usize, cols: usize, path: &str) -> Result<()> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(Error::ShapeMismatch(format!(
            "{path} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    ensure_finite(m, path)
}

/// Linear plant `x' = A x + B u`, `y = C x + D u`.
#[derive(Debug, Clone, PartialEq)]
pub struct Plant {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
}

impl Plant {
    pub fn new(a: Mat, b: Mat, c: Mat, d: Mat) -> Result<Self> {
        let n = a.nrows();
        check_shape(&a, n, n, "plant.A")?;
        let m = b.ncols();
        check_shape(&b, n, m, "plant.B")?;
        let p = c.nrows();
        check_shape(&c, p, n, "plant.C")?;
        check_shape(&d, p, m, "plant.D")?;
        Ok(Plant { a, b, c, d })
    }

    pub fn strictly_proper(a: Mat, b: Mat, c: Mat) -> Result<Self> {
        let d = Mat::zeros(c.nrows(), b.ncols());
        Plant::new(a, b, c, d)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn p(&self) -> usize {
        self.c.nrows()
    }

    /// `C (sI - A)^{-1} B + D`.
    pub fn transfer(&self, s: C64) -> Result<CMat> {
        let n = self.n();
        let shifted = CMat::identity(n, n) * s - to_complex(&self.a);
        let lu = shifted.lu();
        let x = lu
            .solve(&to_complex(&self.b))
            .ok_or(Error::PoleAtPoint { point: s })?;
        Ok(to_complex(&self.c) * x + to_complex(&self.d))
    }

    /// `(Aᵀ, Cᵀ, Bᵀ, Dᵀ)`.
    pub fn transpose(&self) -> Plant {
        Plant {
            a: self.a.transpose(),
            b: self.c.transpose(),
            c: self.b.transpose(),
            d: self.d.transpose(),
        }
    }

    /// Plant under the state feedback `u = K x + u'`.
    pub fn with_feedback(&self, k: &Mat) -> Result<Plant> {
        check_shape(k, self.m(), self.n(), "feedback gain")?;
        Plant::new(
            &self.a + &self.b * k,
            self.b.clone(),
            &self.c + &self.d * k,
            self.d.clone(),
        )
    }

    /// Plant under the output injection `x' = ... + L y`.
    pub fn with_injection(&self, l: &Mat) -> Result<Plant> {
        check_shape(l, self.n(), self.p(), "injection gain")?;
        Plant::new(
            &self.a + l * &self.c,
            &self.b + l * &self.d,
            self.c.clone(),
            self.d.clone(),
        )
    }
}

/// Driver `eta' = F eta + G v`, `z = H eta + J v`.
#[derive(Debug, Clone, PartialEq)]
pub struct Driver {
    pub f: Mat,
    pub g: Mat,
    pub h: Mat,
    pub j: Mat,
}

impl Driver {
    pub fn new(f: Mat, g: Mat, h: Mat, j: Mat) -> Result<Self> {
        let nu = f.nrows();
        check_shape(&f, nu, nu, "driver.F")?;
        check_shape(&g, nu, g.ncols(), "driver.G")?;
        check_shape(&h, h.nrows(), nu, "driver.H")?;
        check_shape(&j, h.nrows(), g.ncols(), "driver.J")?;
        Ok(Driver { f, g, h, j })
    }

    pub fn nu(&self) -> usize {
        self.f.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum Orientation {
    /// Driver feeds the plant input.
    Primal,
    /// Plant output feeds the driver.
    Dual,
}

#[derive(Debug, Clone)]
pub struct Cascade {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub n: usize,
    pub nu: usize,
    pub orientation: Orientation,
}

impl Cascade {
    pub fn plant(&self) -> Plant {
        Plant {
            a: self.a.clone(),
            b: self.b.clone(),
            c: self.c.clone(),
            d: self.d.clone(),
        }
    }
}

fn stack(blocks: &[&[&Mat]]) -> Mat {
    let rows: usize = blocks.iter().map(|r| r[0].nrows()).sum();
    let cols: usize = blocks[0].iter().map(|m| m.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut r0 = 0;
    for row in blocks {
        let mut c0 = 0;
        for m in row.iter() {
            out.view_mut((r0, c0), m.shape()).copy_from(m);
            c0 += m.ncols();
        }
        r0 += row[0].nrows();
    }
    out
}

/// Block matrix assembly helper, rows of equally tall blocks.
pub fn block(blocks: &[&[&Mat]]) -> Mat {
    stack(blocks)
}

/// Driver output feeds the plant input: `u = z`.
pub fn compose_primal(plant: &Plant, driver: &Driver) -> Result<Cascade> {
    if driver.h.nrows() != plant.m() {
        return Err(Error::ShapeMismatch(format!(
            "driver.H has {} rows but the plant has {} inputs",
            driver.h.nrows(),
            plant.m()
        )));
    }
    let (n, nu) = (plant.n(), driver.nu());
    let z_nu_n = Mat::zeros(nu, n);
    let bh = &plant.b * &driver.h;
    let a = stack(&[&[&plant.a, &bh], &[&z_nu_n, &driver.f]]);
    let bj = &plant.b * &driver.j;
    let b = stack(&[&[&bj], &[&driver.g]]);
    let dh = &plant.d * &driver.h;
    let c = stack(&[&[&plant.c, &dh]]);
    let d = &plant.d * &driver.j;
    Ok(Cascade {
        a,
        b,
        c,
        d,
        n,
        nu,
        orientation: Orientation::Primal,
    })
}

/// Plant output feeds the driver input: `v = y`.
pub fn compose_dual(plant: &Plant, driver: &Driver) -> Result<Cascade> {
    if driver.g.ncols() != plant.p() {
        return Err(Error::ShapeMismatch(format!(
            "driver.G has {} columns but the plant has {} outputs",
            driver.g.ncols(),
            plant.p()
        )));
    }
    let (n, nu) = (plant.n(), driver.nu());
    let z_n_nu = Mat::zeros(n, nu);
    let gc = &driver.g * &plant.c;
    let a = stack(&[&[&plant.a, &z_n_nu], &[&gc, &driver.f]]);
    let gd = &driver.g * &plant.d;
    let b = stack(&[&[&plant.b], &[&gd]]);
    let jc = &driver.j * &plant.c;
    let c = stack(&[&[&jc, &driver.h]]);
    let d = &driver.j * &plant.d;
    Ok(Cascade {
        a,
        b,
        c,
        d,
        n,
        nu,
        orientation: Orientation::Dual,
    })
}

/// `[[A - λI, B], [C, D]]`.
pub fn rosenbrock(plant: &Plant, lambda: C64) -> CMat {
    let (n, m, p) = (plant.n(), plant.m(), plant.p());
    let mut r = CMat::zeros(n + p, n + m);
    let shifted = to_complex(&plant.a) - CMat::identity(n, n) * lambda;
    r.view_mut((0, 0), (n, n)).copy_from(&shifted);
    r.view_mut((0, n), (n, m)).copy_from(&to_complex(&plant.b));
    r.view_mut((n, 0), (p, n)).copy_from(&to_complex(&plant.c));
    r.view_mut((n, n), (p, m)).copy_from(&to_complex(&plant.d));
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum PbhMode {
    Controllable,
    Observable,
    Stabilizable,
    Detectable,
}

#[derive(Debug, Clone)]
pub struct PbhVerdict {
    pub holds: bool,
    /// Failing eigenvalue with the smallest trailing singular value.
    pub witness: Option<C64>,
    /// Left (controllability) or right (observability) null direction at the witness.
    pub witness_vector: Option<Vec<C64>>,
    /// Each tested eigenvalue with its relative trailing singular value.
    pub tested: Vec<(C64, f64)>,
}

/// PBH test. `other` is `B` for the controllability modes and `C` for the
/// observability modes. Eigenvalues inside the boundary band count as
/// unstable.
pub fn pbh(a: &Mat, other: &Mat, mode: PbhMode) -> Result<PbhVerdict> {
    let n = ensure_square(a.nrows(), a.ncols(), "PBH state matrix")?;
    let (row_test, restrict) = match mode {
        PbhMode::Controllable => (true, false),
        PbhMode::Stabilizable => (true, true),
        PbhMode::Observable => (false, false),
        PbhMode::Detectable => (false, true),
    };
    if row_test && other.nrows() != n {
        return Err(Error::ShapeMismatch(format!(
            "input matrix must have {n} rows"
        )));
    }
    if !row_test && other.ncols() != n {
        return Err(Error::ShapeMismatch(format!(
            "output matrix must have {n} columns"
        )));
    }
    let mut tested = Vec::new();
    let mut failing: Option<(C64, f64, Vec<C64>)> = None;
    // floor at the data scale so a vanishing `other` is not ranked against itself
    let data_scale = a.norm() + other.norm();
    for (lambda, _) in distinct_eigenvalues(a)? {
        if restrict && lambda.re < -BOUNDARY_BAND {
            continue;
        }
        let shifted = to_complex(a) - CMat::identity(n, n) * lambda;
        let test = if row_test {
            let mut t = CMat::zeros(n, n + other.ncols());
            t.view_mut((0, 0), (n, n)).copy_from(&shifted);
            t.view_mut((0, n), other.shape())
                .copy_from(&to_complex(other));
            t
        } else {
            let mut t = CMat::zeros(n + other.nrows(), n);
            t.view_mut((0, 0), (n, n)).copy_from(&shifted);
            t.view_mut((n, 0), other.shape())
                .copy_from(&to_complex(other));
            t.adjoint()
        };
        let info = numerical_rank_c(&test, None);
        let smax = info.singular_values.first().copied().unwrap_or(0.0);
        let info = numerical_rank_c(&test, Some(VERDICT_RTOL * smax.max(data_scale)));
        let rel = if smax > 0.0 {
            info.singular_values.get(n - 1).copied().unwrap_or(0.0) / smax
        } else {
            0.0
        };
        tested.push((lambda, rel));
        if info.rank < n && failing.as_ref().map_or(true, |f| rel < f.1) {
            let mut w = left_null_vector(&test);
            if !row_test {
                w.iter_mut().for_each(|z| *z = z.conj());
            }
            failing = Some((lambda, rel, w));
        }
    }
    Ok(match failing {
        Some((lambda, _, w)) => PbhVerdict {
            holds: false,
            witness: Some(lambda),
            witness_vector: Some(w),
            tested,
        },
        None => PbhVerdict {
            holds: true,
            witness: None,
            witness_vector: None,
            tested,
        },
    })
}

/// `[B, AB, ..., A^{n-1}B]`, used as a reference in tests.
pub fn controllability_matrix(a: &Mat, b: &Mat) -> Mat {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = Mat::zeros(n, n * m);
    let mut blk = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&blk);
        blk = a * blk;
    }
    out
}

pub fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}
