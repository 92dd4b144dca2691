//! Fringe fitting with a classical record of the common phase.

use alloc::vec::Vec;

use libm::{asin, atan2, cos, sin, sqrt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_form::SqueezingProfile;
use crate::error::{invalid, Error, Result};
use crate::linalg::least_squares;
use crate::sampling::EllipseSample;

/// Tolerance on `|zbar| <= C` before a fringe point counts as out of range.
pub const FRINGE_TOL: f64 = 1e-9;

/// `arcsin(-zbar / C)`.
pub fn invert_fringe_point(zbar: f64, contrast: f64) -> Result<f64> {
    if !(contrast > 0.0) {
        return Err(invalid("contrast must be positive"));
    }
    if zbar.abs() > contrast + FRINGE_TOL {
        return Err(Error::InvalidInput(alloc::format!("|zbar| = {} exceeds the contrast {contrast}", zbar.abs())));
    }
    Ok(asin((-zbar / contrast).clamp(-1.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FringeContrast {
    Known { value: f64 },
    Free,
}

/// Model knowledge for one interferometer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FringeModel {
    pub contrast: FringeContrast,
    /// Projection-noise profile used for inverse-variance weights; `None`
    /// gives the unweighted fit.
    pub noise: Option<SqueezingProfile>,
}

impl FringeModel {
    /// Known closed-form contrast with projection-noise weights.
    pub fn from_profile(profile: &SqueezingProfile) -> Self {
        Self { contrast: FringeContrast::Known { value: profile.contrast }, noise: Some(*profile) }
    }

    pub fn unweighted(contrast: FringeContrast) -> Self {
        Self { contrast, noise: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingleFringeFit {
    pub offset: f64,
    pub contrast: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeFitResult {
    pub a: SingleFringeFit,
    pub b: SingleFringeFit,
    pub dphi_est: f64,
}

const REWEIGHT_ROUNDS: usize = 3;

fn weights(model: &FringeModel, phases: &[f64], offset: f64) -> Vec<f64> {
    match &model.noise {
        None => alloc::vec![1.0; phases.len()],
        Some(p) => {
            let n = p.n_atoms as f64;
            let floor = 1.0 / (n * n);
            phases.iter().map(|&ph| 1.0 / p.variance(ph + offset).max(floor)).collect()
        }
    }
}

/// Weighted least squares of `z = -p sin(phi) - q cos(phi)`.
fn linear_fit(z: &[f64], phases: &[f64], w: &[f64]) -> Result<(f64, f64)> {
    let n = z.len();
    let x = DMatrix::from_fn(n, 2, |j, k| {
        let s = sqrt(w[j]);
        if k == 0 {
            -s * sin(phases[j])
        } else {
            -s * cos(phases[j])
        }
    });
    let y = DVector::from_fn(n, |j, _| sqrt(w[j]) * z[j]);
    let sol = least_squares(x, y).map_err(|_| Error::Numerical("degenerate phase record".into()))?;
    Ok((sol[0], sol[1]))
}

/// Minimises `sum w (z + C sin(phi + o))^2` over `o` by Newton steps from `o0`.
fn known_contrast_offset(z: &[f64], phases: &[f64], w: &[f64], c: f64, o0: f64) -> f64 {
    let (mut a, mut b, mut sss, mut scc, mut ssc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&zj, &ph), &wj) in z.iter().zip(phases).zip(w) {
        let (s, co) = (sin(ph), cos(ph));
        a += wj * zj * s;
        b += wj * zj * co;
        sss += wj * s * s;
        scc += wj * co * co;
        ssc += wj * s * co;
    }
    let obj = |o: f64| {
        let (so, cs) = (sin(o), cos(o));
        2.0 * c * (a * cs + b * so) + c * c * (sss * cs * cs + scc * so * so + 2.0 * ssc * so * cs)
    };
    let mut o = o0;
    for _ in 0..50 {
        let (s1, c1, s2, c2) = (sin(o), cos(o), sin(2.0 * o), cos(2.0 * o));
        let d1 = 2.0 * c * (-a * s1 + b * c1) + c * c * ((scc - sss) * s2 + 2.0 * ssc * c2);
        let d2 = 2.0 * c * (-a * c1 - b * s1) + c * c * (2.0 * (scc - sss) * c2 - 4.0 * ssc * s2);
        if !(d2 > 0.0) {
            break;
        }
        let step = d1 / d2;
        let next = o - step;
        // Near the minimum objective changes drop below rounding, so the
        // descent guard only applies to large steps.
        if step.abs() > 1e-6 && obj(next) > obj(o) {
            break;
        }
        o = next;
        if step.abs() < 1e-15 {
            break;
        }
    }
    o
}

/// Fits `z_j = -C sin(phi_j + offset)` for one interferometer.
pub fn fit_single_fringe(z: &[f64], phases: &[f64], model: &FringeModel) -> Result<SingleFringeFit> {
    if z.len() != phases.len() || z.len() < 2 {
        return Err(invalid("a fringe fit needs at least two points with phases"));
    }
    let mut w = alloc::vec![1.0; z.len()];
    let mut offset = 0.0;
    let mut contrast = 0.0;
    let rounds = if model.noise.is_some() { REWEIGHT_ROUNDS } else { 1 };
    for round in 0..rounds {
        if round > 0 {
            w = weights(model, phases, offset);
        }
        let (p, q) = linear_fit(z, phases, &w)?;
        offset = atan2(q, p);
        contrast = libm::hypot(p, q);
        if let FringeContrast::Known { value } = model.contrast {
            offset = known_contrast_offset(z, phases, &w, value, offset);
            contrast = value;
        }
    }
    let residual = z
        .iter()
        .zip(phases)
        .map(|(&zj, &ph)| {
            let r = zj + contrast * sin(ph + offset);
            r * r
        })
        .sum();
    Ok(SingleFringeFit { offset, contrast, residual })
}

/// Per-interferometer fringe fits and their difference `offset_A - offset_B`.
pub fn fringe_fit(sample: &EllipseSample, model_a: &FringeModel, model_b: &FringeModel) -> Result<FringeFitResult> {
    let phases = sample.phase_record.as_ref().ok_or_else(|| invalid("the fringe fit needs a phase record"))?;
    if phases.len() != sample.points.len() {
        return Err(invalid("phase record length differs from point count"));
    }
    let (first, rest) = phases.split_first().ok_or_else(|| invalid("empty sample"))?;
    if rest.iter().all(|p| p == first) {
        return Err(Error::Numerical("degenerate phase record: all values equal".into()));
    }
    let za: Vec<f64> = sample.points.iter().map(|p| p[0]).collect();
    let zb: Vec<f64> = sample.points.iter().map(|p| p[1]).collect();
    let a = fit_single_fringe(&za, phases, model_a)?;
    let b = fit_single_fringe(&zb, phases, model_b)?;
    let mut d = a.offset - b.offset;
    // Report the difference on (-pi, pi].
    let two_pi = 2.0 * core::f64::consts::PI;
    d -= two_pi * libm::round(d / two_pi);
    Ok(FringeFitResult { a, b, dphi_est: d })
}
