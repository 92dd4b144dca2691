//! Differential-phase estimators built on conic fits of the `(z_A, z_B)`
//! scatter: algebraic fits under the trace and ellipse-specific constraints,
//! an orthogonal-distance fit and the known-contrast one-parameter fit.

use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{acos, atan2, cos, sin, sqrt};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix5, Matrix6, SymmetricEigen, Vector3, Vector5, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{cubic_real_roots, least_squares};

/// Tolerance beyond which an out-of-range arccos argument is flagged.
pub const CLAMP_TOL: f64 = 1e-9;

/// Estimator tags shared by fit results and campaign reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Trace,
    EllipseSpecific,
    Geometric,
    OneParameter,
    Fringe,
}

impl Method {
    pub const ELLIPSE_FITS: [Method; 4] = [Method::Trace, Method::EllipseSpecific, Method::Geometric, Method::OneParameter];

    pub fn name(self) -> &'static str {
        match self {
            Method::Trace => "trace",
            Method::EllipseSpecific => "ellipse_specific",
            Method::Geometric => "geometric",
            Method::OneParameter => "one_parameter",
            Method::Fringe => "fringe",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [Method::Trace, Method::EllipseSpecific, Method::Geometric, Method::OneParameter, Method::Fringe]
            .into_iter()
            .find(|m| m.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConicConstraint {
    Trace,
    EllipseSpecific,
    Unconstrained,
}

/// `a x^2 + b x y + c y^2 + d x + e y + f = 0` with `x = z_A`, `y = z_B`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConicCoefficients {
    pub v: [f64; 6],
    pub constraint: ConicConstraint,
}

impl ConicCoefficients {
    pub fn new(v: [f64; 6], constraint: ConicConstraint) -> Self {
        Self { v, constraint }
    }

    /// `b^2 - 4ac`; negative for ellipses.
    pub fn discriminant(&self) -> f64 {
        self.v[1] * self.v[1] - 4.0 * self.v[0] * self.v[2]
    }

    pub fn is_ellipse(&self) -> bool {
        self.discriminant() < 0.0
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let v = &self.v;
        v[0] * x * x + v[1] * x * y + v[2] * y * y + v[3] * x + v[4] * y + v[5]
    }

    /// Conic of the average ellipse with contrasts `ca`, `cb` and phase `dphi`.
    pub fn average_ellipse(ca: f64, cb: f64, dphi: f64) -> Self {
        let s = sin(dphi);
        Self::new(
            [1.0 / (ca * ca), -2.0 * cos(dphi) / (ca * cb), 1.0 / (cb * cb), 0.0, 0.0, -s * s],
            ConicConstraint::Unconstrained,
        )
    }
}

/// Design matrix with rows `(x^2, xy, y^2, x, y, 1)` and scatter `D^T D`.
#[derive(Debug, Clone)]
pub struct ScatterMatrices {
    pub design: DMatrix<f64>,
    pub scatter: Matrix6<f64>,
}

impl ScatterMatrices {
    pub fn new(points: &[[f64; 2]]) -> Self {
        let design = DMatrix::from_fn(points.len(), 6, |j, k| {
            let [x, y] = points[j];
            [x * x, x * y, y * y, x, y, 1.0][k]
        });
        let g = design.transpose() * &design;
        let scatter = Matrix6::from_fn(|i, k| g[(i, k)]);
        Self { design, scatter }
    }

    /// Algebraic objective `v^T S v`.
    pub fn objective(&self, v: &[f64; 6]) -> f64 {
        let v = Vector6::from_column_slice(v);
        (v.transpose() * self.scatter * v)[(0, 0)]
    }
}

/// Result of a differential-phase estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseEstimate {
    pub dphi_est: f64,
    pub method: Method,
    pub converged: bool,
    /// Set when an arccos argument was clamped back into `[-1, 1]`.
    pub clamped: bool,
    pub iterations: usize,
    pub residual: f64,
}

fn check_points(points: &[[f64; 2]], min: usize) -> Result<()> {
    if points.len() < min {
        return Err(invalid(alloc::format!("at least {min} points are required")));
    }
    if points.iter().any(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(invalid("points must be finite"));
    }
    Ok(())
}

/// `arccos(x)` with clamping of rounding excursions; the flag reports
/// excursions beyond [`CLAMP_TOL`].
pub fn clamped_acos(x: f64) -> (f64, bool) {
    let flag = x.abs() > 1.0 + CLAMP_TOL;
    (acos(x.clamp(-1.0, 1.0)), flag)
}

/// Algebraic fit under `a + c = 1`.
///
/// Substituting `c = 1 - a` turns the constrained minimum of `v^T S v` into an
/// ordinary least-squares problem, solved by QR on the design matrix.
pub fn fit_trace(points: &[[f64; 2]]) -> Result<ConicCoefficients> {
    check_points(points, 6)?;
    let n = points.len();
    let x = DMatrix::from_fn(n, 5, |j, k| {
        let [za, zb] = points[j];
        [za * za - zb * zb, za * zb, za, zb, 1.0][k]
    });
    let rhs = DVector::from_fn(n, |j, _| -points[j][1] * points[j][1]);
    let s = least_squares(x, rhs).map_err(|_| Error::Numerical("degenerate data for the trace fit".into()))?;
    let fit = ConicCoefficients::new([s[0], s[1], 1.0 - s[0], s[2], s[3], s[4]], ConicConstraint::Trace);
    if !fit.is_ellipse() {
        return Err(Error::FitRejected(alloc::format!(
            "trace fit is not an ellipse (b^2 - 4ac = {:.3e})",
            fit.discriminant()
        )));
    }
    Ok(fit)
}

/// Algebraic fit under `b^2 - 4ac = -1`.
///
/// The linear coefficients are eliminated by projecting the quadratic design
/// columns onto the orthogonal complement of `(x, y, 1)`, leaving the 3x3
/// pencil `M a = lambda C a` with `M` symmetric positive semi-definite. It is
/// solved through the eigen-decomposition of `M`, which also covers the
/// singular (noiseless) case.
pub fn fit_ellipse_specific(points: &[[f64; 2]]) -> Result<ConicCoefficients> {
    check_points(points, 6)?;
    let n = points.len();
    let d1 = DMatrix::from_fn(n, 3, |j, k| {
        let [x, y] = points[j];
        [x * x, x * y, y * y][k]
    });
    let d2 = DMatrix::from_fn(n, 3, |j, k| {
        let [x, y] = points[j];
        [x, y, 1.0][k]
    });
    // Columns of `proj` give the linear part as `-proj * a`.
    let mut proj = Matrix3::zeros();
    for k in 0..3 {
        let col = least_squares(d2.clone(), d1.column(k).into_owned())
            .map_err(|_| Error::Numerical("collinear data for the ellipse-specific fit".into()))?;
        proj.set_column(k, &Vector3::new(col[0], col[1], col[2]));
    }
    let resid = &d1 - &d2 * DMatrix::from_fn(3, 3, |i, k| proj[(i, k)]);
    let m_dyn = d1.transpose() * resid;
    let m = Matrix3::from_fn(|i, k| 0.5 * (m_dyn[(i, k)] + m_dyn[(k, i)]));

    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l));
    if top <= 0.0 {
        return Err(Error::Numerical("degenerate data for the ellipse-specific fit".into()));
    }
    let floor = top * 1e-15;
    let w = eig.eigenvectors * Matrix3::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / sqrt(l.max(floor))));
    let c1 = Matrix3::new(0.0, 0.0, 2.0, 0.0, -1.0, 0.0, 2.0, 0.0, 0.0);
    let k = w.transpose() * c1 * w;
    let ke = SymmetricEigen::new(0.5 * (k + k.transpose()));
    let (imax, mu) = ke.eigenvalues.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &l)| {
        if l > acc.1 {
            (i, l)
        } else {
            acc
        }
    });
    if !(mu > 0.0) {
        return Err(Error::Numerical("no positive eigenvalue in the ellipse-specific fit".into()));
    }
    let mut a = w * ke.eigenvectors.column(imax);
    let q = 4.0 * a[0] * a[2] - a[1] * a[1];
    if !(q > 0.0) {
        return Err(Error::Numerical("ellipse-specific eigenvector violates the constraint".into()));
    }
    a /= sqrt(q);
    if a[0] < 0.0 {
        a = -a;
    }
    let lin = -(proj * a);
    Ok(ConicCoefficients::new([a[0], a[1], a[2], lin[0], lin[1], lin[2]], ConicConstraint::EllipseSpecific))
}

/// Differential phase `arccos(-b / (2 sqrt(ac)))` of a fitted conic.
pub fn phase_from_conic(conic: &ConicCoefficients, method: Method) -> Result<PhaseEstimate> {
    let [a, b, c, ..] = conic.v;
    if !(a > 0.0 && c > 0.0) {
        return Err(Error::InvalidInput("phase extraction needs a > 0 and c > 0".into()));
    }
    let (dphi_est, clamped) = clamped_acos(-b / (2.0 * sqrt(a * c)));
    Ok(PhaseEstimate { dphi_est, method, converged: true, clamped, iterations: 0, residual: 0.0 })
}

/// Centre, semi-axes and tilt of an ellipse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EllipseParams {
    pub x0: f64,
    pub y0: f64,
    pub a: f64,
    pub b: f64,
    pub theta: f64,
}

impl EllipseParams {
    pub fn from_conic(conic: &ConicCoefficients) -> Result<Self> {
        let [a, b, c, d, e, f] = conic.v;
        if !conic.is_ellipse() {
            return Err(Error::InvalidInput("conic is not an ellipse".into()));
        }
        let det = 4.0 * a * c - b * b;
        let x0 = (b * e - 2.0 * c * d) / det;
        let y0 = (b * d - 2.0 * a * e) / det;
        let f0 = f + 0.5 * (d * x0 + e * y0);
        let eig = SymmetricEigen::new(Matrix2::new(a, 0.5 * b, 0.5 * b, c));
        let (l1, l2) = (eig.eigenvalues[0], eig.eigenvalues[1]);
        let (ra, rb) = (-f0 / l1, -f0 / l2);
        if !(ra > 0.0 && rb > 0.0) {
            return Err(Error::InvalidInput("conic describes an empty ellipse".into()));
        }
        let v = eig.eigenvectors.column(0);
        Ok(Self { x0, y0, a: sqrt(ra), b: sqrt(rb), theta: atan2(v[1], v[0]) })
    }

    /// Conic normalised to `b^2 - 4ac = -1`.
    pub fn to_conic(&self) -> ConicCoefficients {
        let (s, c) = (sin(self.theta), cos(self.theta));
        let (ia, ib) = (1.0 / (self.a * self.a), 1.0 / (self.b * self.b));
        let qa = c * c * ia + s * s * ib;
        let qb = 2.0 * c * s * (ia - ib);
        let qc = s * s * ia + c * c * ib;
        let (x0, y0) = (self.x0, self.y0);
        let v = [
            qa,
            qb,
            qc,
            -2.0 * qa * x0 - qb * y0,
            -qb * x0 - 2.0 * qc * y0,
            qa * x0 * x0 + qb * x0 * y0 + qc * y0 * y0 - 1.0,
        ];
        let scale = 1.0 / sqrt(4.0 * qa * qc - qb * qb);
        ConicCoefficients::new(v.map(|x| x * scale), ConicConstraint::Unconstrained)
    }

    fn to_local(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = (sin(self.theta), cos(self.theta));
        let (dx, dy) = (x - self.x0, y - self.y0);
        (c * dx + s * dy, -s * dx + c * dy)
    }

    /// Closest point on the ellipse in local coordinates, the signed distance
    /// (positive outside) and the outward unit normal in local coordinates.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        let (u, v) = self.to_local(x, y);
        let (fu, fv) = closest_point(self.a, self.b, u, v)
            .filter(|(p, q)| p.is_finite() && q.is_finite())
            .unwrap_or_else(|| closest_point_dense(self.a, self.b, u, v));
        let (nu, nv) = (fu / (self.a * self.a), fv / (self.b * self.b));
        let nn = sqrt(nu * nu + nv * nv);
        let (nu, nv) = (nu / nn, nv / nn);
        let signed = (u - fu) * nu + (v - fv) * nv;
        Projection { foot: (fu, fv), normal: (nu, nv), signed_distance: signed }
    }

    /// Sum of squared orthogonal distances.
    pub fn geometric_objective(&self, points: &[[f64; 2]]) -> f64 {
        points.iter().map(|p| self.project(p[0], p[1]).signed_distance.powi(2)).sum()
    }

    fn to_vector(self) -> Vector5<f64> {
        Vector5::new(self.x0, self.y0, self.a, self.b, self.theta)
    }

    fn from_vector(p: &Vector5<f64>) -> Self {
        Self { x0: p[0], y0: p[1], a: p[2], b: p[3], theta: p[4] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub foot: (f64, f64),
    pub normal: (f64, f64),
    pub signed_distance: f64,
}

fn robust_hypot(a: f64, b: f64) -> f64 {
    libm::hypot(a, b)
}

/// Bisection for the root of the orthogonality condition in the first
/// quadrant, parametrised as in Eberly's robust point-ellipse distance.
fn eberly_root(r0: f64, z0: f64, z1: f64, mut g: f64) -> f64 {
    let n0 = r0 * z0;
    let mut s0 = z1 - 1.0;
    let mut s1 = if g < 0.0 { 0.0 } else { robust_hypot(n0, z1) - 1.0 };
    let mut s = 0.0;
    for _ in 0..1100 {
        s = 0.5 * (s0 + s1);
        if s == s0 || s == s1 {
            break;
        }
        let (q0, q1) = (n0 / (s + r0), z1 / (s + 1.0));
        g = q0 * q0 + q1 * q1 - 1.0;
        if g > 0.0 {
            s0 = s;
        } else if g < 0.0 {
            s1 = s;
        } else {
            break;
        }
    }
    s
}

/// Closest point on the axis-aligned ellipse `(u/a)^2 + (v/b)^2 = 1`.
fn closest_point(a: f64, b: f64, u: f64, v: f64) -> Option<(f64, f64)> {
    if !(a > 0.0 && b > 0.0) {
        return None;
    }
    // Reduce to the first quadrant with the major axis first.
    let swap = b > a;
    let (e0, e1, y0, y1) = if swap { (b, a, v.abs(), u.abs()) } else { (a, b, u.abs(), v.abs()) };
    let (x0, x1) = if y1 > 0.0 {
        if y0 > 0.0 {
            let (z0, z1) = (y0 / e0, y1 / e1);
            let g = z0 * z0 + z1 * z1 - 1.0;
            if g != 0.0 {
                let r0 = (e0 / e1) * (e0 / e1);
                let sbar = eberly_root(r0, z0, z1, g);
                (r0 * y0 / (sbar + r0), y1 / (sbar + 1.0))
            } else {
                (y0, y1)
            }
        } else {
            (0.0, e1)
        }
    } else {
        let numer = e0 * y0;
        let denom = e0 * e0 - e1 * e1;
        if numer < denom {
            let xd = numer / denom;
            (e0 * xd, e1 * sqrt((1.0 - xd * xd).max(0.0)))
        } else {
            (e0, 0.0)
        }
    };
    let (fu, fv) = if swap { (x1, x0) } else { (x0, x1) };
    Some((fu.copysign(u), fv.copysign(v)))
}

/// Fallback projection: dense scan of the parametric angle plus golden refinement.
fn closest_point_dense(a: f64, b: f64, u: f64, v: f64) -> (f64, f64) {
    let dist = |t: f64| {
        let (p, q) = (a * cos(t) - u, b * sin(t) - v);
        p * p + q * q
    };
    let m = 4096;
    let step = 2.0 * PI / m as f64;
    let best = (0..m).map(|k| k as f64 * step).fold((0.0, f64::INFINITY), |acc, t| {
        let d = dist(t);
        if d < acc.1 {
            (t, d)
        } else {
            acc
        }
    });
    let t = crate::spin::golden_min(dist, best.0 - step, best.0 + step, 1e-15);
    (a * cos(t), b * sin(t))
}

/// Options of the orthogonal-distance fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
}

impl Default for GeometricOptions {
    fn default() -> Self {
        Self { max_iterations: 200, rel_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometricFit {
    pub conic: ConicCoefficients,
    pub params: EllipseParams,
    pub initial_objective: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn normal_equations(params: &EllipseParams, points: &[[f64; 2]]) -> (Matrix5<f64>, Vector5<f64>, f64) {
    let (s, c) = (sin(params.theta), cos(params.theta));
    let mut jtj = Matrix5::zeros();
    let mut jtr = Vector5::zeros();
    let mut obj = 0.0;
    for p in points {
        let pr = params.project(p[0], p[1]);
        let (fu, fv) = pr.foot;
        let (nu, nv) = pr.normal;
        // Global outward normal.
        let (gx, gy) = (c * nu - s * nv, s * nu + c * nv);
        let (ct, st) = (fu / params.a, fv / params.b);
        // d foot / d theta = R'(theta) (fu, fv).
        let (dtx, dty) = (-s * fu - c * fv, c * fu - s * fv);
        let row = Vector5::new(-gx, -gy, -ct * nu, -st * nv, -(gx * dtx + gy * dty));
        let r = pr.signed_distance;
        jtj += row * row.transpose();
        jtr += row * r;
        obj += r * r;
    }
    (jtj, jtr, obj)
}

/// Orthogonal-distance fit over centre, semi-axes and tilt by damped
/// Gauss-Newton (Levenberg-Marquardt) steps. Only improving steps are taken,
/// so the final objective never exceeds that of `init`.
pub fn fit_geometric(points: &[[f64; 2]], init: &ConicCoefficients) -> Result<GeometricFit> {
    fit_geometric_with(points, init, &GeometricOptions::default())
}

pub fn fit_geometric_with(points: &[[f64; 2]], init: &ConicCoefficients, opts: &GeometricOptions) -> Result<GeometricFit> {
    check_points(points, 5)?;
    let mut params = EllipseParams::from_conic(init)?;
    let (mut jtj, mut jtr, mut obj) = normal_equations(&params, points);
    let initial_objective = obj;
    let floor = 1e-30 * points.len() as f64;
    let mut lambda = 1e-3;
    let mut converged = obj <= floor;
    let mut iterations = 0;
    while !converged && iterations < opts.max_iterations {
        iterations += 1;
        let mut improved = false;
        for _ in 0..30 {
            let mut a = jtj;
            for i in 0..5 {
                a[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(step) = a.cholesky().map(|ch| ch.solve(&(-jtr))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = EllipseParams::from_vector(&(params.to_vector() + step));
            if !(trial.a > 0.0 && trial.b > 0.0) {
                lambda *= 10.0;
                continue;
            }
            let (tj, tr, tobj) = normal_equations(&trial, points);
            if tobj < obj {
                let rel = (obj - tobj) / obj;
                params = trial;
                jtj = tj;
                jtr = tr;
                obj = tobj;
                lambda = (lambda * 0.3).max(1e-12);
                improved = true;
                if rel < opts.rel_tol || obj <= floor {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // No descent direction left at working precision.
            converged = true;
        }
    }
    let conic = if iterations == 0 { *init } else { params.to_conic() };
    Ok(GeometricFit { conic, params, initial_objective, objective: obj, iterations, converged })
}

/// Geometric initialisation: the trace fit when it yields an ellipse, else
/// the ellipse-specific fit.
pub fn geometric_init(points: &[[f64; 2]]) -> Result<ConicCoefficients> {
    match fit_trace(points) {
        Ok(c) => Ok(c),
        Err(_) => fit_ellipse_specific(points),
    }
}

/// `g_0 ... g_3` at one point; the cubic `sum_l G_l h^l = 0` is the stationarity
/// condition of the known-contrast average-ellipse objective.
pub fn g_terms(za: f64, zb: f64, ca: f64, cb: f64) -> [f64; 4] {
    let (ca2, cb2) = (ca * ca, cb * cb);
    let w = za * zb;
    let u = cb2 * za * za + ca2 * zb * zb - ca2 * cb2;
    [u * w, -ca * cb * (u + 2.0 * w * w), 3.0 * ca2 * cb2 * w, -ca2 * cb2 * ca * cb]
}

/// `G_l = (1/N) sum_j g_l(z_A,j, z_B,j)`.
pub fn g_averages(points: &[[f64; 2]], ca: f64, cb: f64) -> [f64; 4] {
    let mut s = [0.0; 4];
    for p in points {
        let g = g_terms(p[0], p[1], ca, cb);
        for (acc, x) in s.iter_mut().zip(g) {
            *acc += x;
        }
    }
    let inv = 1.0 / points.len() as f64;
    s.map(|x| x * inv)
}

/// Real roots of `c0 + c1 h + c2 h^2 + c3 h^3`.
pub fn solve_cubic_real(c0: f64, c1: f64, c2: f64, c3: f64) -> Result<Vec<f64>> {
    if c0 == 0.0 && c1 == 0.0 && c2 == 0.0 && c3 == 0.0 {
        return Err(invalid("all cubic coefficients are zero"));
    }
    Ok(cubic_real_roots(c3, c2, c1, c0))
}

/// Root of the one-parameter cubic, chosen among those in `[-1, 1]` by the
/// lowest objective; the objective is `-(G0 h + G1 h^2/2 + G2 h^3/3 + G3 h^4/4)`
/// up to a positive factor and an additive constant.
pub fn select_root(g: &[f64; 4]) -> Result<(f64, bool)> {
    let roots = solve_cubic_real(g[0], g[1], g[2], g[3])?;
    let q = |h: f64| -(h * (g[0] + h * (g[1] / 2.0 + h * (g[2] / 3.0 + h * g[3] / 4.0))));
    let mut best: Option<(f64, f64, bool)> = None;
    for &r in &roots {
        if !r.is_finite() || r.abs() > 1.0 + CLAMP_TOL {
            continue;
        }
        let flagged = r.abs() > 1.0;
        let h = r.clamp(-1.0, 1.0);
        let val = q(h);
        if best.map_or(true, |(_, v, _)| val < v) {
            best = Some((h, val, flagged));
        }
    }
    match best {
        Some((h, _, flagged)) => Ok((h, flagged)),
        None => {
            let nearest = roots
                .iter()
                .copied()
                .filter(|r| r.is_finite())
                .fold(f64::NAN, |acc, r| if acc.is_nan() || (r.abs() - 1.0) < (acc.abs() - 1.0) { r } else { acc });
            Err(Error::NoRootInRange { nearest })
        }
    }
}

/// `arccos` of the selected cubic root.
pub fn phase_from_g(g: &[f64; 4]) -> Result<(f64, bool)> {
    let (h, flagged) = select_root(g)?;
    Ok((acos(h), flagged))
}

/// Known-contrast fit of the average ellipse with the phase as sole parameter.
pub fn fit_one_parameter(points: &[[f64; 2]], contrast_a: f64, contrast_b: f64) -> Result<PhaseEstimate> {
    check_points(points, 1)?;
    if !(contrast_a > 0.0 && contrast_a <= 1.0 && contrast_b > 0.0 && contrast_b <= 1.0) {
        return Err(invalid("contrasts must lie in (0, 1]"));
    }
    let g = g_averages(points, contrast_a, contrast_b);
    let (dphi_est, clamped) = phase_from_g(&g)?;
    let h = cos(dphi_est);
    let residual = g[0] + h * (g[1] + h * (g[2] + h * g[3]));
    Ok(PhaseEstimate { dphi_est, method: Method::OneParameter, converged: true, clamped, iterations: 0, residual })
}

/// Knowledge the estimators may need beyond the points themselves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitContext {
    pub contrast_a: f64,
    pub contrast_b: f64,
}

/// Runs one ellipse estimator on a sample.
pub fn estimate(points: &[[f64; 2]], method: Method, ctx: &FitContext) -> Result<PhaseEstimate> {
    match method {
        Method::Trace => phase_from_conic(&fit_trace(points)?, method),
        Method::EllipseSpecific => phase_from_conic(&fit_ellipse_specific(points)?, method),
        Method::Geometric => {
            let init = geometric_init(points)?;
            let fit = fit_geometric(points, &init)?;
            let mut est = phase_from_conic(&fit.conic, method)?;
            est.converged = fit.converged;
            est.iterations = fit.iterations;
            est.residual = fit.objective;
            Ok(est)
        }
        Method::OneParameter => fit_one_parameter(points, ctx.contrast_a, ctx.contrast_b),
        Method::Fringe => Err(invalid("the fringe fit needs a phase record")),
    }
}

/// `n` points of the average ellipse at evenly spaced common phases.
pub fn ellipse_points(ca: f64, cb: f64, dphi: f64, n: usize) -> Vec<[f64; 2]> {
    (0..n)
        .map(|j| {
            let phi = 2.0 * PI * (j as f64 + 0.37) / n as f64;
            [-ca * sin(phi + dphi / 2.0), -cb * sin(phi - dphi / 2.0)]
        })
        .collect()
}
