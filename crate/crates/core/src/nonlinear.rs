//! Nonlinear cascades: invariance-integral solvers, the nonlinear SSC maps,
//! a Van der Pol disturbance example and a global observer for it.

use std::sync::Arc;

use nalgebra::{SymmetricEigen, SVD};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linsolve::{expm, inverse, solve_lyapunov, spectral_abscissa, Mat, BOUNDARY_BAND};
use crate::sim::{simulate_nl, Trace, Vector};
use crate::systems::Plant;

/// Map `x ↦ v(x)` with a Jacobian. `jacobian` defaults to central differences.
pub trait VectorField: Send + Sync {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn eval(&self, x: &Vector) -> Vector;
    fn jacobian(&self, x: &Vector) -> Mat {
        fd_jacobian(&|y: &Vector| self.eval(y), x, 1e-6)
    }
}

pub type Field = Arc<dyn VectorField>;
pub type NlMap = Arc<dyn Fn(&Vector) -> Result<Vector> + Send + Sync>;

pub fn fd_jacobian(f: &dyn Fn(&Vector) -> Vector, x: &Vector, step: f64) -> Mat {
    let f0 = f(x);
    let mut j = Mat::zeros(f0.len(), x.len());
    for i in 0..x.len() {
        let h = step * (1.0 + x[i].abs());
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += h;
        xm[i] -= h;
        j.set_column(i, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    j
}

/// Relative gap between the field's Jacobian and a finite-difference one.
pub fn jacobian_consistency(field: &dyn VectorField, x: &Vector) -> f64 {
    let analytic = field.jacobian(x);
    let fd = fd_jacobian(&|y: &Vector| field.eval(y), x, 1e-6);
    (&analytic - &fd).norm() / (1.0 + fd.norm())
}

#[derive(Debug, Clone)]
pub struct LinearField(pub Mat);

impl VectorField for LinearField {
    fn input_dim(&self) -> usize {
        self.0.ncols()
    }
    fn output_dim(&self) -> usize {
        self.0.nrows()
    }
    fn eval(&self, x: &Vector) -> Vector {
        &self.0 * x
    }
    fn jacobian(&self, _x: &Vector) -> Mat {
        self.0.clone()
    }
}

/// `η' = (η₂, μ(1 − η₁²)η₂ − η₁)`.
#[derive(Debug, Clone, Copy)]
pub struct VanDerPol {
    pub mu: f64,
}

impl VectorField for VanDerPol {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[1], self.mu * (1.0 - x[0] * x[0]) * x[1] - x[0]])
    }
    fn jacobian(&self, x: &Vector) -> Mat {
        Mat::from_row_slice(
            2,
            2,
            &[
                0.0,
                1.0,
                -1.0 - 2.0 * self.mu * x[0] * x[1],
                self.mu * (1.0 - x[0] * x[0]),
            ],
        )
    }
}

/// `h(η) = (η₁ + η₁³, η₂)`.
#[derive(Debug, Clone, Copy)]
pub struct VdpOutput;

impl VectorField for VdpOutput {
    fn input_dim(&self) -> usize {
        2
    }
    fn output_dim(&self) -> usize {
        2
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_vec(vec![x[0] + x[0].powi(3), x[1]])
    }
    fn jacobian(&self, x: &Vector) -> Mat {
        Mat::from_row_slice(2, 2, &[1.0 + 3.0 * x[0] * x[0], 0.0, 0.0, 1.0])
    }
}

/// Scalar `x' = −x − x³`.
#[derive(Debug, Clone, Copy)]
pub struct CubicDamped;

impl VectorField for CubicDamped {
    fn input_dim(&self) -> usize {
        1
    }
    fn output_dim(&self) -> usize {
        1
    }
    fn eval(&self, x: &Vector) -> Vector {
        Vector::from_element(1, -x[0] - x[0].powi(3))
    }
    fn jacobian(&self, x: &Vector) -> Mat {
        Mat::from_element(1, 1, -1.0 - 3.0 * x[0] * x[0])
    }
}

/// Field given by a closure; the Jacobian falls back to finite differences.
pub struct FnField {
    pub input: usize,
    pub output: usize,
    pub f: Box<dyn Fn(&Vector) -> Vector + Send + Sync>,
}

impl VectorField for FnField {
    fn input_dim(&self) -> usize {
        self.input
    }
    fn output_dim(&self) -> usize {
        self.output
    }
    fn eval(&self, x: &Vector) -> Vector {
        (self.f)(x)
    }
}

pub const FIELD_NAMES: &[&str] = &[
    "van-der-pol",
    "van-der-pol-output",
    "cubic-damped",
    "identity-1",
    "identity-2",
];

/// Built-in fields by name. `van-der-pol` uses μ = 3.
pub fn named_field(name: &str) -> Result<Field> {
    Ok(match name {
        "van-der-pol" => Arc::new(VanDerPol { mu: 3.0 }),
        "van-der-pol-output" => Arc::new(VdpOutput),
        "cubic-damped" => Arc::new(CubicDamped),
        "identity-1" => Arc::new(LinearField(Mat::identity(1, 1))),
        "identity-2" => Arc::new(LinearField(Mat::identity(2, 2))),
        _ => {
            return Err(Error::Parse {
                path: "field".into(),
                message: format!(
                    "unknown vector field '{name}' (known: {})",
                    FIELD_NAMES.join(", ")
                ),
            })
        }
    })
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ResidualStats {
    pub max: f64,
    pub mean: f64,
}

/// Solution `π` (or `μ`) of an invariance equation: sampled values plus an
/// evaluator usable at arbitrary points.
#[derive(Clone)]
pub struct InvarianceSolution {
    pub samples: Vec<(Vector, Vector)>,
    pub residual: ResidualStats,
    map: NlMap,
    jac: Option<Arc<dyn Fn(&Vector) -> Mat + Send + Sync>>,
}

impl std::fmt::Debug for InvarianceSolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("InvarianceSolution")
            .field("samples", &self.samples.len())
            .field("residual", &self.residual)
            .field("closed_form_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl InvarianceSolution {
    pub fn closed_form(
        map: impl Fn(&Vector) -> Vector + Send + Sync + 'static,
        jac: impl Fn(&Vector) -> Mat + Send + Sync + 'static,
    ) -> Self {
        InvarianceSolution {
            samples: Vec::new(),
            residual: ResidualStats {
                max: 0.0,
                mean: 0.0,
            },
            map: Arc::new(move |x: &Vector| Ok(map(x))),
            jac: Some(Arc::new(jac)),
        }
    }

    pub fn eval(&self, x: &Vector) -> Result<Vector> {
        (self.map)(x)
    }

    /// Closed-form Jacobian when available, otherwise central differences
    /// with step 1e-4.
    pub fn jacobian(&self, x: &Vector) -> Result<Mat> {
        if let Some(j) = &self.jac {
            return Ok(j(x));
        }
        let step = 1e-4;
        let mut cols = Vec::with_capacity(x.len());
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            cols.push((self.eval(&xp)? - self.eval(&xm)?) / (2.0 * step));
        }
        let rows = cols.first().map_or(0, |c| c.len());
        let mut j = Mat::zeros(rows, x.len());
        for (i, c) in cols.iter().enumerate() {
            j.set_column(i, c);
        }
        Ok(j)
    }

    /// Evaluates the solution at `points` and records the residual of
    /// `(∂π/∂η) f − A π − B h` (or its dual) there.
    fn validated(
        mut self,
        points: &[Vector],
        lhs: &dyn Fn(&Vector) -> Vector,
        rhs: &dyn Fn(&Vector, &Vector) -> Vector,
    ) -> Result<Self> {
        let mut worst: f64 = 0.0;
        let mut sum = 0.0;
        self.samples.clear();
        for p in points {
            let v = self.eval(p)?;
            let r = self.jacobian(p)? * lhs(p) - rhs(p, &v);
            let rn = r.norm();
            worst = worst.max(rn);
            sum += rn;
            self.samples.push((p.clone(), v));
        }
        let mean = if points.is_empty() {
            0.0
        } else {
            sum / points.len() as f64
        };
        self.residual = ResidualStats { max: worst, mean };
        Ok(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct QuadratureOptions {
    pub step: f64,
    /// Target for the neglected tail of the integral.
    pub truncation: f64,
    /// Trajectories leaving this ball are reported as escaping.
    pub escape_radius: f64,
    pub max_horizon: f64,
    /// Residual tolerance; `None` skips the check.
    pub residual_tol: Option<f64>,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            step: 1e-2,
            truncation: 1e-8,
            escape_radius: 1e6,
            max_horizon: 1e3,
            residual_tol: Some(1e-4),
        }
    }
}

fn rk4(f: &dyn VectorField, x: &Vector, h: f64) -> Vector {
    let k1 = f.eval(x);
    let k2 = f.eval(&(x + &k1 * (h / 2.0)));
    let k3 = f.eval(&(x + &k2 * (h / 2.0)));
    let k4 = f.eval(&(x + &k3 * h));
    x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)
}

fn simpson_weight(k: usize, n: usize) -> f64 {
    if k == 0 || k == n {
        1.0
    } else if k % 2 == 1 {
        4.0
    } else {
        2.0
    }
}

fn check_field_dims(field: &dyn VectorField, dim: usize, what: &str) -> Result<()> {
    if field.input_dim() != dim {
        return Err(Error::ShapeMismatch(format!(
            "{what} takes {} states, expected {dim}",
            field.input_dim()
        )));
    }
    Ok(())
}

/// `π(η) = ∫₀^T e^{Aτ} B h(η̄(−τ, η)) dτ` by backward RK4 and composite Simpson.
fn primal_quadrature(
    f: &dyn VectorField,
    h: &dyn VectorField,
    b: &Mat,
    step_exp: &Mat,
    n: usize,
    step: f64,
    radius: f64,
    eta: &Vector,
) -> Result<Vector> {
    let mut y = eta.clone();
    let mut w = Mat::identity(b.nrows(), b.nrows());
    let mut acc = Vector::zeros(b.nrows());
    for k in 0..=n {
        if !y.iter().all(|v| v.is_finite()) || y.norm() > radius {
            return Err(Error::TrajectoryEscape {
                t: -(k as f64) * step,
            });
        }
        acc += (&w * (b * h.eval(&y))) * simpson_weight(k, n);
        if k < n {
            y = rk4(f, &y, -step);
            w = &w * step_exp;
        }
    }
    Ok(acc * (step / 3.0))
}

/// Solves `(∂π/∂η) f = A π + B h` with `π(0) = 0` pointwise through the
/// backward-trajectory integral. Requires `A` Hurwitz.
pub fn solve_invariance_primal(
    f: Field,
    h: Field,
    a: &Mat,
    b: &Mat,
    points: &[Vector],
    opts: &QuadratureOptions,
) -> Result<InvarianceSolution> {
    let nu = f.input_dim();
    check_field_dims(f.as_ref(), nu, "f")?;
    check_field_dims(h.as_ref(), nu, "h")?;
    if f.output_dim() != nu
        || a.nrows() != a.ncols()
        || b.nrows() != a.nrows()
        || b.ncols() != h.output_dim()
    {
        return Err(Error::ShapeMismatch(
            "invariance data (f, h, A, B) have inconsistent dimensions".into(),
        ));
    }
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= -BOUNDARY_BAND {
        return Err(Error::NotHurwitz { abscissa });
    }
    let step = opts.step;
    let mut horizon = (1.0 / opts.truncation).ln() / -abscissa;
    while expm(&(a * horizon))?.norm() > opts.truncation {
        horizon *= 1.25;
        if horizon > opts.max_horizon {
            return Err(Error::NotConvergent {
                horizon: opts.max_horizon,
            });
        }
    }
    let mut n = (horizon / step).ceil() as usize;
    n += n % 2;
    let step_exp = expm(&(a * step))?;
    let radius = opts.escape_radius;
    let (fq, hq, bq) = (f.clone(), h.clone(), b.clone());
    let map: NlMap = Arc::new(move |eta: &Vector| {
        if eta.len() != nu {
            return Err(Error::ShapeMismatch(format!(
                "point has {} entries, expected {nu}",
                eta.len()
            )));
        }
        primal_quadrature(
            fq.as_ref(),
            hq.as_ref(),
            &bq,
            &step_exp,
            n,
            step,
            radius,
            eta,
        )
    });
    let sol = InvarianceSolution {
        samples: Vec::new(),
        residual: ResidualStats {
            max: 0.0,
            mean: 0.0,
        },
        map,
        jac: None,
    };
    let (a2, b2) = (a.clone(), b.clone());
    let sol = sol.validated(
        points,
        &|p: &Vector| f.eval(p),
        &|p: &Vector, v: &Vector| &a2 * v + &b2 * h.eval(p),
    )?;
    check_residual(&sol, opts)?;
    Ok(sol)
}

fn check_residual(sol: &InvarianceSolution, opts: &QuadratureOptions) -> Result<()> {
    if let Some(tol) = opts.residual_tol {
        if sol.residual.max > tol {
            return Err(Error::ResidualTooLarge {
                residual: sol.residual.max,
                tol,
            });
        }
    }
    Ok(())
}

fn dual_quadrature(
    a: &dyn VectorField,
    c: &dyn VectorField,
    g: &Mat,
    step_exp: &Mat,
    opts: &QuadratureOptions,
    x: &Vector,
) -> Result<Vector> {
    let step = opts.step;
    let nu = g.nrows();
    let mut y = x.clone();
    let mut w = Mat::identity(nu, nu);
    let mut acc = Vector::zeros(nu);
    // Simpson panels of two steps each: f0 + 4 f1 + f2.
    let mut left = &w * (g * c.eval(&y));
    let mut t = 0.0;
    loop {
        if left.norm() <= opts.truncation * 1e-3 && y.norm() <= opts.truncation {
            break;
        }
        if t > opts.max_horizon {
            return Err(Error::NotConvergent {
                horizon: opts.max_horizon,
            });
        }
        y = rk4(a, &y, step);
        w = &w * step_exp;
        let mid = &w * (g * c.eval(&y));
        y = rk4(a, &y, step);
        w = &w * step_exp;
        let right = &w * (g * c.eval(&y));
        if !y.iter().all(|v| v.is_finite()) || y.norm() > opts.escape_radius {
            return Err(Error::TrajectoryEscape { t });
        }
        acc += (&left + mid * 4.0 + &right) * (step / 3.0);
        left = right;
        t += 2.0 * step;
    }
    Ok(-acc)
}

/// Solves `(∂μ/∂x) a − F μ = G c` with `μ(0) = 0` pointwise through
/// `μ(x) = −∫₀^∞ e^{−Fs} G c(x̄(s, x)) ds` along forward trajectories.
pub fn solve_invariance_dual(
    a: Field,
    c: Field,
    f: &Mat,
    g: &Mat,
    points: &[Vector],
    opts: &QuadratureOptions,
) -> Result<InvarianceSolution> {
    let n = a.input_dim();
    check_field_dims(c.as_ref(), n, "c")?;
    if a.output_dim() != n
        || f.nrows() != f.ncols()
        || g.nrows() != f.nrows()
        || g.ncols() != c.output_dim()
    {
        return Err(Error::ShapeMismatch(
            "invariance data (a, c, F, G) have inconsistent dimensions".into(),
        ));
    }
    let step_exp = expm(&(f * -opts.step))?;
    let (aq, cq, gq, o) = (a.clone(), c.clone(), g.clone(), *opts);
    let map: NlMap = Arc::new(move |x: &Vector| {
        if x.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "point has {} entries, expected {n}",
                x.len()
            )));
        }
        dual_quadrature(aq.as_ref(), cq.as_ref(), &gq, &step_exp, &o, x)
    });
    let sol = InvarianceSolution {
        samples: Vec::new(),
        residual: ResidualStats {
            max: 0.0,
            mean: 0.0,
        },
        map,
        jac: None,
    };
    let (f2, g2) = (f.clone(), g.clone());
    let sol = sol.validated(
        points,
        &|p: &Vector| a.eval(p),
        &|p: &Vector, v: &Vector| &f2 * v + &g2 * c.eval(p),
    )?;
    check_residual(&sol, opts)?;
    Ok(sol)
}

/// `c_p(h)(η) = C π(η) + D h(η)`.
pub fn nonlinear_cp(pi: &InvarianceSolution, c: &Mat, d: &Mat, h: Field) -> Result<NlMap> {
    if d.nrows() != c.nrows() || d.ncols() != h.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "D is {}x{}, expected {}x{}",
            d.nrows(),
            d.ncols(),
            c.nrows(),
            h.output_dim()
        )));
    }
    let (pi, c, d) = (pi.clone(), c.clone(), d.clone());
    Ok(Arc::new(move |eta: &Vector| {
        Ok(&c * pi.eval(eta)? + &d * h.eval(eta))
    }))
}

pub type MatField = Arc<dyn Fn(&Vector) -> Mat + Send + Sync>;

/// `c_d(G)(x) = −(∂μ/∂x)(x) b(x) + G d(x)`, a `ν×m` matrix at each `x`.
pub fn nonlinear_cd(
    mu: &InvarianceSolution,
    g: &Mat,
    b: MatField,
    d: MatField,
) -> Arc<dyn Fn(&Vector) -> Result<Mat> + Send + Sync> {
    let (mu, g) = (mu.clone(), g.clone());
    Arc::new(move |x: &Vector| Ok(-(mu.jacobian(x)? * b(x)) + &g * d(x)))
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct VdpParams {
    pub mu: f64,
    pub alpha1: f64,
    pub alpha3: f64,
    pub alpha4: f64,
    pub beta3: f64,
}

impl Default for VdpParams {
    fn default() -> Self {
        VdpParams {
            mu: 3.0,
            alpha1: 1.0,
            alpha3: 1.0,
            alpha4: 1.0,
            beta3: 1.0,
        }
    }
}

/// Linear plant driven by a Van der Pol disturbance with a polynomial
/// invariant manifold. `α₂ = α₁`.
#[derive(Debug, Clone, Serialize)]
pub struct VdpExample {
    pub params: VdpParams,
    pub alpha_bar: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub c1: f64,
    pub c2: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub beta2: f64,
    pub beta4: f64,
    /// `c_p(h)(η) = k η₁`.
    pub k: f64,
    #[serde(skip)]
    pub plant: Plant,
}

pub fn vdp_example(params: VdpParams) -> Result<VdpExample> {
    let VdpParams {
        mu,
        alpha1,
        alpha3,
        alpha4,
        beta3,
    } = params;
    if !(mu > 0.0 && alpha1 > 0.0 && alpha3 > 0.0 && alpha4 > 0.0) {
        return Err(Error::Numerical(
            "Van der Pol example needs mu, alpha1, alpha3, alpha4 > 0".into(),
        ));
    }
    let alpha2 = alpha1;
    let alpha_bar = alpha1 * alpha4 + alpha2 * alpha3;
    let a1 = beta3 * alpha2 / alpha_bar;
    let a2 = beta3 * alpha1 / alpha_bar;
    let b1 = 3.0 * a1 / mu;
    let b2 = 3.0 * a2 / mu;
    let c1 = (alpha4 * b1 + alpha2 * (b1 + beta3)) / alpha_bar;
    let c2 = (-alpha3 * b1 + alpha1 * (b1 + beta3)) / alpha_bar;
    let kappa1 = b2;
    let kappa2 = -b1;
    let beta2 = c1 + (mu + alpha1) * b1 - alpha2 * b2;
    let beta4 = c2 + (mu + alpha4) * b2 + alpha3 * b1;
    let k = 9.0 * beta3 * beta3 / (mu * mu * alpha1 * (alpha3 + alpha4).powi(2));
    let plant = Plant::strictly_proper(
        Mat::from_row_slice(2, 2, &[-alpha1, alpha2, -alpha3, -alpha4]),
        Mat::from_row_slice(2, 2, &[0.0, beta2, beta3, beta4]),
        Mat::from_row_slice(1, 2, &[kappa1, kappa2]),
    )?;
    Ok(VdpExample {
        params,
        alpha_bar,
        a1,
        a2,
        b1,
        b2,
        c1,
        c2,
        kappa1,
        kappa2,
        beta2,
        beta4,
        k,
        plant,
    })
}

impl VdpExample {
    pub fn field(&self) -> Field {
        Arc::new(VanDerPol { mu: self.params.mu })
    }

    pub fn output(&self) -> Field {
        Arc::new(VdpOutput)
    }

    pub fn pi(&self, eta: &Vector) -> Vector {
        let c = eta[0].powi(3);
        Vector::from_vec(vec![
            self.a1 * c + self.b1 * eta[1] + self.c1 * eta[0],
            self.a2 * c + self.b2 * eta[1] + self.c2 * eta[0],
        ])
    }

    pub fn pi_jacobian(&self, eta: &Vector) -> Mat {
        let s = 3.0 * eta[0] * eta[0];
        Mat::from_row_slice(
            2,
            2,
            &[
                self.a1 * s + self.c1,
                self.b1,
                self.a2 * s + self.c2,
                self.b2,
            ],
        )
    }

    /// Closed-form `π` with its invariance residual measured at `points`.
    pub fn pi_solution(&self, points: &[Vector]) -> Result<InvarianceSolution> {
        let (me, mj) = (self.clone(), self.clone());
        let sol = InvarianceSolution::closed_form(move |x| me.pi(x), move |x| mj.pi_jacobian(x));
        let (f, h, a, b) = (
            self.field(),
            self.output(),
            self.plant.a.clone(),
            self.plant.b.clone(),
        );
        sol.validated(
            points,
            &|p: &Vector| f.eval(p),
            &|p: &Vector, v: &Vector| &a * v + &b * h.eval(p),
        )
    }

    /// Design data used for the example: `L = [1 0]`, `R = 1/k`,
    /// `P = [[1, −q], [−q, 1]]`, `ϱ = κ`.
    pub fn observer_inputs(&self, q: f64, kappa: f64) -> NlObserverInputs {
        NlObserverInputs {
            l: Mat::from_row_slice(1, 2, &[1.0, 0.0]),
            r: Mat::from_element(1, 1, 1.0 / self.k),
            p: Mat::from_row_slice(2, 2, &[1.0, -q, -q, 1.0]),
            rho: kappa,
            eps_margin: 5e-3,
            kappa,
        }
    }
}

/// Compact region `1.2 ≤ |η₁| ≤ 2.2, |η₂| ≤ 2` on which the one-sided
/// Lipschitz condition is certified for the example.
pub fn vdp_certification_grid(n: usize) -> Vec<Vector> {
    let n = n.max(2);
    let mut pts = Vec::new();
    for i in 0..n {
        let r = 1.2 + 1.0 * i as f64 / (n - 1) as f64;
        for j in 0..n {
            let e2 = -2.0 + 4.0 * j as f64 / (n - 1) as f64;
            pts.push(Vector::from_vec(vec![r, e2]));
            pts.push(Vector::from_vec(vec![-r, e2]));
        }
    }
    pts
}

#[derive(Debug, Clone, Serialize)]
pub struct NlObserverInputs {
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub l: Mat,
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub r: Mat,
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub p: Mat,
    pub rho: f64,
    pub eps_margin: f64,
    pub kappa: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NlObserverDesign {
    pub inputs: NlObserverInputs,
    /// `K_η = κ P⁻¹ Lᵀ R`.
    #[serde(serialize_with = "crate::sysfile::ser_mat")]
    pub k_eta: Mat,
    /// Smallest `λ_min(R ∂ψ/∂s + (∂ψ/∂s)ᵀ R) − 2` over the grid.
    pub o1_margin: f64,
    /// Largest `λ_max(P ∂f/∂η + (∂f/∂η)ᵀ P − 2ϱ LᵀL + 2ε I)` over the grid.
    pub o2_worst: f64,
    pub o2_worst_point: Vec<f64>,
    pub grid_points: usize,
    #[serde(skip)]
    pub pi: Option<InvarianceSolution>,
}

fn min_eig_sym(m: &Mat) -> f64 {
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

fn max_eig_sym(m: &Mat) -> f64 {
    -min_eig_sym(&-m)
}

/// Checks the factorization and monotonicity of `c_p(h)` and the
/// one-sided Lipschitz bound of `f` on `grid`, then forms `K_η`.
pub fn design_nl_observer(
    plant: &Plant,
    f: &dyn VectorField,
    pi: &InvarianceSolution,
    inputs: &NlObserverInputs,
    grid: &[Vector],
) -> Result<NlObserverDesign> {
    let nu = f.input_dim();
    let p_out = plant.p();
    let NlObserverInputs {
        l,
        r,
        p,
        rho,
        eps_margin,
        kappa,
    } = inputs;
    if plant.d.iter().any(|&v| v != 0.0) {
        return Err(Error::ShapeMismatch(
            "nonlinear observer requires D = 0".into(),
        ));
    }
    if l.shape() != (p_out, nu) || r.shape() != (p_out, p_out) || p.shape() != (nu, nu) {
        return Err(Error::ShapeMismatch(format!(
            "observer data must be L {p_out}x{nu}, R {p_out}x{p_out}, P {nu}x{nu}"
        )));
    }
    let abscissa = spectral_abscissa(&plant.a)?;
    if abscissa >= -BOUNDARY_BAND {
        return Err(Error::NotHurwitz { abscissa });
    }
    if kappa < rho {
        return Err(Error::GainTooSmall {
            kappa: *kappa,
            rho: *rho,
        });
    }
    if min_eig_sym(p) <= 0.0 || (p - p.transpose()).norm() > 1e-12 * p.norm() {
        return Err(Error::Numerical(
            "P must be symmetric positive definite".into(),
        ));
    }
    if min_eig_sym(r) <= 0.0 {
        return Err(Error::O1Violated("R is not positive definite".into()));
    }
    let svd = SVD::new(l.clone(), true, true);
    let sv_max = svd.singular_values.max();
    if svd
        .singular_values
        .iter()
        .any(|&s| s <= 1e-12 * sv_max.max(1.0))
    {
        return Err(Error::O1Violated("L does not have full row rank".into()));
    }
    let l_pinv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    let null_proj = Mat::identity(nu, nu) - &l_pinv * l;

    let mut o1_margin = f64::INFINITY;
    let mut o2_worst = f64::NEG_INFINITY;
    let mut o2_point = Vec::new();
    for eta in grid {
        let jc = &plant.c * pi.jacobian(eta)?;
        let leak = (&jc * &null_proj).norm();
        if leak > 1e-4 * (1.0 + jc.norm()) {
            return Err(Error::O1Violated(format!(
                "c_p(h) depends on directions outside the row space of L at {:?}",
                eta.as_slice()
            )));
        }
        let jpsi = &jc * &l_pinv;
        let margin = min_eig_sym(&(r * &jpsi + jpsi.transpose() * r)) - 2.0;
        o1_margin = o1_margin.min(margin);
        if margin < -1e-8 {
            return Err(Error::O1Violated(format!(
                "monotonicity margin {margin:e} at {:?}",
                eta.as_slice()
            )));
        }
        let jf = f.jacobian(eta);
        let s = p * &jf + jf.transpose() * p - l.transpose() * l * (2.0 * rho)
            + Mat::identity(nu, nu) * (2.0 * eps_margin);
        let worst = max_eig_sym(&s);
        if worst > o2_worst {
            o2_worst = worst;
            o2_point = eta.as_slice().to_vec();
        }
    }
    if o2_worst > 0.0 {
        return Err(Error::O2Violated {
            point: o2_point,
            max_eig: o2_worst,
        });
    }
    let k_eta = inverse(p)? * l.transpose() * r * *kappa;
    Ok(NlObserverDesign {
        inputs: inputs.clone(),
        k_eta,
        o1_margin,
        o2_worst,
        o2_worst_point: o2_point,
        grid_points: grid.len(),
        pi: Some(pi.clone()),
    })
}

#[derive(Debug, Clone)]
pub struct NlObserverRun {
    /// States `(x, η, x̂, η̂)`; outputs `(|x̃|, |η̃|, |x̃| + |η̃|, V)`.
    pub trace: Trace,
    pub initial_error: f64,
    pub final_error: f64,
}

/// Simulates the cascade with `ū = 0` together with the observer
/// `x̂' = A x̂ + B h(η̂) − w_x`, `η̂' = f(η̂) − w_η`,
/// `w_η = K_η (ŷ − y)`, `w_x = (∂π/∂η)(η̂) w_η`.
///
/// `V = η̃ᵀPη̃ + c ξ̃ᵀP_A ξ̃` with `A ᵀP_A + P_A A = −I`, `ξ̃ = x̃ − (π(η̂) − π(η))`
/// and `c = 2κ²|LᵀR|²|C|²/ε`.
pub fn simulate_nl_observer(
    plant: &Plant,
    f: Field,
    h: Field,
    design: &NlObserverDesign,
    x0: &Vector,
    eta0: &Vector,
    xhat0: &Vector,
    etahat0: &Vector,
    horizon: f64,
    dt: f64,
) -> Result<NlObserverRun> {
    let n = plant.n();
    let nu = f.input_dim();
    if x0.len() != n || xhat0.len() != n || eta0.len() != nu || etahat0.len() != nu {
        return Err(Error::ShapeMismatch(
            "initial conditions have the wrong dimensions".into(),
        ));
    }
    let pi = design
        .pi
        .clone()
        .ok_or_else(|| Error::Numerical("observer design carries no invariance solution".into()))?;
    let (a, b, c) = (plant.a.clone(), plant.b.clone(), plant.c.clone());
    let k = design.k_eta.clone();
    let pi_f = pi.clone();
    let (ff, hf) = (f.clone(), h.clone());
    let field = move |_t: f64, s: &Vector| -> Vector {
        let x = s.rows(0, n).into_owned();
        let eta = s.rows(n, nu).into_owned();
        let xh = s.rows(n + nu, n).into_owned();
        let eh = s.rows(2 * n + nu, nu).into_owned();
        let w_eta = &k * (&c * (&xh - &x));
        let jac = pi_f
            .jacobian(&eh)
            .unwrap_or_else(|_| Mat::from_element(n, nu, f64::NAN));
        let w_x = &jac * &w_eta;
        let mut out = Vector::zeros(s.len());
        out.rows_mut(0, n)
            .copy_from(&(&a * &x + &b * hf.eval(&eta)));
        out.rows_mut(n, nu).copy_from(&ff.eval(&eta));
        out.rows_mut(n + nu, n)
            .copy_from(&(&a * &xh + &b * hf.eval(&eh) - w_x));
        out.rows_mut(2 * n + nu, nu)
            .copy_from(&(ff.eval(&eh) - w_eta));
        out
    };
    let pa = solve_lyapunov(&plant.a, &Mat::identity(n, n))?;
    let inp = &design.inputs;
    let lr = (inp.l.transpose() * &inp.r).norm();
    let weight = 2.0 * inp.kappa * inp.kappa * lr * lr * plant.c.norm().powi(2)
        / inp.eps_margin.max(f64::MIN_POSITIVE);
    let p_eta = inp.p.clone();
    let pi_o = pi.clone();
    let output = move |_t: f64, s: &Vector| -> Vector {
        let x = s.rows(0, n).into_owned();
        let eta = s.rows(n, nu).into_owned();
        let xh = s.rows(n + nu, n).into_owned();
        let eh = s.rows(2 * n + nu, nu).into_owned();
        let ex = &xh - &x;
        let ee = &eh - &eta;
        let xi = match (pi_o.eval(&eh), pi_o.eval(&eta)) {
            (Ok(p1), Ok(p0)) => &ex - (p1 - p0),
            _ => Vector::from_element(n, f64::NAN),
        };
        let v = ee.dot(&(&p_eta * &ee)) + weight * xi.dot(&(&pa * &xi));
        Vector::from_vec(vec![ex.norm(), ee.norm(), ex.norm() + ee.norm(), v])
    };
    let mut s0 = Vector::zeros(2 * (n + nu));
    s0.rows_mut(0, n).copy_from(x0);
    s0.rows_mut(n, nu).copy_from(eta0);
    s0.rows_mut(n + nu, n).copy_from(xhat0);
    s0.rows_mut(2 * n + nu, nu).copy_from(etahat0);
    let mut labels: Vec<String> = (0..n).map(|i| format!("x{i}")).collect();
    labels.extend((0..nu).map(|i| format!("eta{i}")));
    labels.extend((0..n).map(|i| format!("xhat{i}")));
    labels.extend((0..nu).map(|i| format!("etahat{i}")));
    let trace = simulate_nl(field, Some(output), &s0, horizon, dt)?.with_labels(
        labels,
        vec![
            "err_x".into(),
            "err_eta".into(),
            "err_total".into(),
            "lyapunov".into(),
        ],
    );
    let initial_error = trace.outputs[0][2];
    let final_error = trace.outputs.last().map_or(f64::NAN, |y| y[2]);
    Ok(NlObserverRun {
        trace,
        initial_error,
        final_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linsolve::solve_sylvester;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    #[test]
    fn example_constants() {
        let ex = vdp_example(VdpParams::default()).unwrap();
        assert_eq!(ex.alpha_bar, 2.0);
        for (got, want) in [
            (ex.a1, 0.5),
            (ex.a2, 0.5),
            (ex.b1, 0.5),
            (ex.b2, 0.5),
            (ex.kappa1, 0.5),
            (ex.kappa2, -0.5),
            (ex.k, 0.25),
        ] {
            assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        }
        assert!(spectral_abscissa(&ex.plant.a).unwrap() < 0.0);
    }

    #[test]
    fn closed_form_cp_is_linear_in_eta1() {
        let ex = vdp_example(VdpParams::default()).unwrap();
        for eta in [v(&[0.3, -1.0]), v(&[1.7, 0.4]), v(&[-2.0, 2.0])] {
            let y = &ex.plant.c * ex.pi(&eta);
            assert!((y[0] - ex.k * eta[0]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_forcing_gives_zero_manifold() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0]);
        let zero = Arc::new(FnField {
            input: 2,
            output: 2,
            f: Box::new(|_x: &Vector| Vector::zeros(2)),
        });
        let sol = solve_invariance_primal(
            Arc::new(VanDerPol { mu: 3.0 }),
            zero,
            &a,
            &Mat::identity(2, 2),
            &[v(&[0.5, 0.5])],
            &QuadratureOptions::default(),
        )
        .unwrap();
        assert_eq!(sol.samples[0].1.norm(), 0.0);
    }

    #[test]
    fn linear_primal_matches_sylvester() {
        let a = Mat::from_row_slice(2, 2, &[-2.0, 1.0, 0.0, -1.0]);
        let b = Mat::from_row_slice(2, 1, &[0.0, 1.0]);
        let f = Mat::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let h = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let pi = solve_sylvester(&a, &f, &(-(&b * &h))).unwrap();
        let pts = [v(&[1.0, 0.0]), v(&[0.3, -0.8])];
        let sol = solve_invariance_primal(
            Arc::new(LinearField(f)),
            Arc::new(LinearField(h)),
            &a,
            &b,
            &pts,
            &QuadratureOptions::default(),
        )
        .unwrap();
        for (p, val) in &sol.samples {
            assert!((val - &pi * p).norm() < 1e-6);
        }
    }

    #[test]
    fn cubic_dual_is_minus_arctan() {
        let pts: Vec<Vector> = [-1.5, -0.4, 0.2, 1.0, 2.0]
            .iter()
            .map(|&x| v(&[x]))
            .collect();
        let sol = solve_invariance_dual(
            Arc::new(CubicDamped),
            Arc::new(LinearField(Mat::identity(1, 1))),
            &Mat::zeros(1, 1),
            &Mat::identity(1, 1),
            &pts,
            &QuadratureOptions::default(),
        )
        .unwrap();
        for (p, val) in &sol.samples {
            assert!(
                (val[0] + p[0].atan()).abs() < 1e-6,
                "{} vs {}",
                val[0],
                -p[0].atan()
            );
        }
    }

    #[test]
    fn not_hurwitz_rejected() {
        let err = solve_invariance_primal(
            Arc::new(VanDerPol { mu: 1.0 }),
            Arc::new(VdpOutput),
            &Mat::identity(2, 2),
            &Mat::identity(2, 2),
            &[],
            &QuadratureOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NotHurwitz { .. }));
    }

    #[test]
    fn escape_is_reported() {
        // Backward orbits outside the limit cycle grow without bound.
        let a = Mat::from_row_slice(2, 2, &[-1.0, 1.0, -1.0, -1.0]);
        let opts = QuadratureOptions {
            escape_radius: 1e3,
            ..Default::default()
        };
        let err = solve_invariance_primal(
            Arc::new(VanDerPol { mu: 3.0 }),
            Arc::new(VdpOutput),
            &a,
            &Mat::identity(2, 2),
            &[v(&[3.0, 3.0])],
            &opts,
        )
        .unwrap_err();
        assert!(matches!(err, Error::TrajectoryEscape { .. }), "{err:?}");
    }

    #[test]
    fn analytic_jacobians_match_differences() {
        for x in [v(&[0.3, -1.2]), v(&[2.0, 0.5])] {
            assert!(jacobian_consistency(&VanDerPol { mu: 3.0 }, &x) < 1e-6);
            assert!(jacobian_consistency(&VdpOutput, &x) < 1e-6);
        }
        assert!(jacobian_consistency(&CubicDamped, &v(&[0.7])) < 1e-6);
    }

    #[test]
    fn example_design_certifies_on_region() {
        let ex = vdp_example(VdpParams::default()).unwrap();
        let pi = ex.pi_solution(&[]).unwrap();
        let d = design_nl_observer(
            &ex.plant,
            &VanDerPol { mu: 3.0 },
            &pi,
            &ex.observer_inputs(0.01, 100.0),
            &vdp_certification_grid(21),
        )
        .unwrap();
        assert!(d.o2_worst <= 0.0);
        assert!(d.o1_margin > -1e-8);
        assert!((d.k_eta[(0, 0)] - 100.0 * 4.0 / (1.0 - 1e-4)).abs() < 1e-9);
    }

    #[test]
    fn origin_violates_o2() {
        let ex = vdp_example(VdpParams::default()).unwrap();
        let pi = ex.pi_solution(&[]).unwrap();
        let err = design_nl_observer(
            &ex.plant,
            &VanDerPol { mu: 3.0 },
            &pi,
            &ex.observer_inputs(0.01, 100.0),
            &[v(&[0.0, 0.0])],
        )
        .unwrap_err();
        assert!(matches!(err, Error::O2Violated { .. }));
    }

    #[test]
    fn small_kappa_rejected() {
        let ex = vdp_example(VdpParams::default()).unwrap();
        let pi = ex.pi_solution(&[]).unwrap();
        let mut inp = ex.observer_inputs(0.01, 100.0);
        inp.kappa = 50.0;
        let err =
            design_nl_observer(&ex.plant, &VanDerPol { mu: 3.0 }, &pi, &inp, &[]).unwrap_err();
        assert!(matches!(err, Error::GainTooSmall { .. }));
    }
}
