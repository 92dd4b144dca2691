//! Small dense and banded linear-algebra helpers.

use alloc::vec;
use alloc::vec::Vec;
use libm::sqrt;
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Eigenvector of the symmetric tridiagonal matrix with zero diagonal and the
/// given off-diagonal, for an eigenvalue that is known to high accuracy.
///
/// Inverse iteration with a pivoted banded LU; the returned vector has unit
/// Euclidean norm.
pub fn tridiagonal_eigenvector(off: &[f64], lambda: f64) -> Vec<f64> {
    let m = off.len() + 1;
    if m == 1 {
        return vec![1.0];
    }
    let scale = off.iter().fold(1.0f64, |acc, &e| acc.max(2.0 * e.abs())).max(lambda.abs());
    let tiny = f64::EPSILON * scale;

    let mut ud = vec![0.0; m];
    let mut ue1 = vec![0.0; m];
    let mut ue2 = vec![0.0; m];
    let mut mult = vec![0.0; m];
    let mut swap = vec![false; m];

    let diag = -lambda;
    let mut cur_d = diag;
    let mut cur_e1 = off[0];
    let mut cur_e2 = 0.0;
    for i in 0..m - 1 {
        let sub = off[i];
        let next_d = diag;
        let next_e = if i + 1 < m - 1 { off[i + 1] } else { 0.0 };
        if cur_d.abs() >= sub.abs() {
            let l = if cur_d == 0.0 { 0.0 } else { sub / cur_d };
            ud[i] = cur_d;
            ue1[i] = cur_e1;
            ue2[i] = cur_e2;
            mult[i] = l;
            cur_d = next_d - l * cur_e1;
            cur_e1 = next_e - l * cur_e2;
        } else {
            let l = cur_d / sub;
            ud[i] = sub;
            ue1[i] = next_d;
            ue2[i] = next_e;
            mult[i] = l;
            swap[i] = true;
            cur_d = cur_e1 - l * next_d;
            cur_e1 = cur_e2 - l * next_e;
        }
        cur_e2 = 0.0;
    }
    ud[m - 1] = cur_d;
    for d in ud.iter_mut() {
        if d.abs() < tiny {
            *d = if *d < 0.0 { -tiny } else { tiny };
        }
    }

    // Deterministic start vector without the reflection symmetry of the
    // collective-spin problem.
    let mut x: Vec<f64> = (0..m)
        .map(|i| {
            let h = (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
            0.5 + (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
        })
        .collect();
    normalize(&mut x);
    for _ in 0..3 {
        for i in 0..m - 1 {
            if swap[i] {
                x.swap(i, i + 1);
            }
            x[i + 1] -= mult[i] * x[i];
        }
        x[m - 1] /= ud[m - 1];
        if m >= 2 {
            x[m - 2] = (x[m - 2] - ue1[m - 2] * x[m - 1]) / ud[m - 2];
        }
        for i in (0..m.saturating_sub(2)).rev() {
            x[i] = (x[i] - ue1[i] * x[i + 1] - ue2[i] * x[i + 2]) / ud[i];
        }
        normalize(&mut x);
    }
    x
}

fn normalize(x: &mut [f64]) {
    let big = x.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    if big == 0.0 {
        return;
    }
    let s: f64 = x.iter().map(|v| (v / big) * (v / big)).sum();
    let inv = 1.0 / (big * sqrt(s));
    for v in x.iter_mut() {
        *v *= inv;
    }
}

/// Least-squares solution of a tall system by Householder QR.
pub fn least_squares(design: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    let p = design.ncols();
    if design.nrows() < p {
        return Err(Error::InvalidInput("underdetermined least-squares system".into()));
    }
    let qr = design.qr();
    let mut qtb = rhs;
    qr.q_tr_mul(&mut qtb);
    let r = qr.r();
    let diag_max = (0..p).fold(0.0f64, |a, i| a.max(r[(i, i)].abs()));
    if (0..p).any(|i| r[(i, i)].abs() <= 1e-13 * diag_max) || diag_max == 0.0 {
        return Err(Error::Numerical("rank-deficient design matrix".into()));
    }
    let top = qtb.rows(0, p).into_owned();
    r.solve_upper_triangular(&top)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))
}

/// Real roots of `a x^2 + b x + c` (or of the linear polynomial when `a == 0`).
pub fn quadratic_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { Vec::new() } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Vec::new();
    }
    let sgn = if b < 0.0 { -1.0 } else { 1.0 };
    let q = -0.5 * (b + sgn * sqrt(disc));
    if q == 0.0 {
        return vec![0.0, 0.0];
    }
    let (r1, r2) = (q / a, c / q);
    if r1 <= r2 {
        vec![r1, r2]
    } else {
        vec![r2, r1]
    }
}

/// Real roots of a cubic `c3 x^3 + c2 x^2 + c1 x + c0`, polished by Newton steps.
pub fn cubic_real_roots(c3: f64, c2: f64, c1: f64, c0: f64) -> Vec<f64> {
    if c3 == 0.0 || c3.abs() < 1e-14 * (c2.abs() + c1.abs() + c0.abs()) {
        return quadratic_roots(c2, c1, c0);
    }
    let a = c2 / c3;
    let b = c1 / c3;
    let c = c0 / c3;
    let q = (a * a - 3.0 * b) / 9.0;
    let r = (2.0 * a * a * a - 9.0 * a * b + 27.0 * c) / 54.0;
    let mut roots = Vec::with_capacity(3);
    if r * r < q * q * q {
        let theta = libm::acos((r / sqrt(q * q * q)).clamp(-1.0, 1.0));
        let s = -2.0 * sqrt(q);
        for k in 0..3 {
            roots.push(s * libm::cos((theta + 2.0 * core::f64::consts::PI * k as f64) / 3.0) - a / 3.0);
        }
    } else {
        let big_a = -r.signum() * libm::cbrt(r.abs() + sqrt(r * r - q * q * q));
        let big_b = if big_a == 0.0 { 0.0 } else { q / big_a };
        roots.push(big_a + big_b - a / 3.0);
    }
    for x in roots.iter_mut() {
        for _ in 0..3 {
            let f = ((*x + a) * *x + b) * *x + c;
            let df = (3.0 * *x + 2.0 * a) * *x + b;
            if df == 0.0 {
                break;
            }
            let step = f / df;
            if !step.is_finite() {
                break;
            }
            *x -= step;
        }
    }
    roots.sort_by(|p, q| p.partial_cmp(q).unwrap_or(core::cmp::Ordering::Equal));
    roots
}
