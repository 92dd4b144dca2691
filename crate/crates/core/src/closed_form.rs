//! Closed-form contrast, variances, squeezing strengths, sensitivities and
//! one-parameter-fit moments.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI, SQRT_2};

use libm::{cbrt, cos, exp, expm1, log1p, pow, sin, sqrt, tan};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::sampling::{refine_until_converged, QuadratureOptions};
use crate::spin::{self, PreparedProbe, ProbeSpec};

/// `ln cos(x)` without cancellation for small `x`.
fn ln_cos(x: f64) -> f64 {
    let s = sin(0.5 * x);
    log1p(-2.0 * s * s)
}

/// `cos^p(x)`, exact for `x = 0`.
fn cos_pow(x: f64, p: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        pow(cos(x), p)
    }
}

/// Fringe contrast `cos^{N-1}(tau)`.
pub fn contrast(n_atoms: usize, tau: f64) -> f64 {
    cos_pow(tau, n_atoms as f64 - 1.0)
}

/// `(K1, K2) = (1 - cos^{N-2}(2 tau), 4 sin(tau) cos^{N-2}(tau))`.
pub fn k_coefficients(n_atoms: usize, tau: f64) -> (f64, f64) {
    let p = n_atoms as f64 - 2.0;
    let k1 = if tau == 0.0 { 0.0 } else { -expm1(p * ln_cos(2.0 * tau)) };
    let k2 = 4.0 * sin(tau) * cos_pow(tau, p);
    (k1, k2)
}

/// Closed-form description of a twisted probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SqueezingProfile {
    pub n_atoms: usize,
    pub tau: f64,
    pub contrast: f64,
    pub var_mid_fringe: f64,
    pub var_quadrature: f64,
    pub k1: f64,
    pub k2: f64,
    pub nu: f64,
}

impl SqueezingProfile {
    /// `sigma_z^2(phi) = cos^2(phi) var_mid + sin^2(phi) var_quad`.
    pub fn variance(&self, phi: f64) -> f64 {
        let (s, c) = (sin(phi), cos(phi));
        c * c * self.var_mid_fringe + s * s * self.var_quadrature
    }

    pub fn mean(&self, phi: f64) -> f64 {
        -self.contrast * sin(phi)
    }
}

fn variance_extrema(n_atoms: usize, tau: f64) -> (f64, f64, f64, f64) {
    let n = n_atoms as f64;
    let (k1, k2) = k_coefficients(n_atoms, tau);
    let r = sqrt(k1 * k1 + k2 * k2);
    // K1 - sqrt(K1^2 + K2^2) written without cancellation.
    let diff = if r == 0.0 { 0.0 } else { -k2 * k2 / (k1 + r) };
    let var_mid = 1.0 / n + (n - 1.0) / (4.0 * n) * diff;
    let one_minus_c2 = if tau == 0.0 { 0.0 } else { -expm1(2.0 * (n - 1.0) * ln_cos(tau)) };
    let var_quad = one_minus_c2 - (n - 1.0) * k1 / (2.0 * n);
    (var_mid, var_quad, k1, k2)
}

/// Contrast, variance extrema, `K1`, `K2` and the resolved `nu`.
pub fn profile(n_atoms: usize, tau: f64) -> Result<SqueezingProfile> {
    if n_atoms < 2 {
        return Err(invalid("profile requires N >= 2"));
    }
    ensure_finite("tau", tau)?;
    if tau < 0.0 {
        return Err(invalid("tau must be non-negative"));
    }
    let (var_mid, var_quad, k1, k2) = variance_extrema(n_atoms, tau);
    let nu = if tau == 0.0 { 0.0 } else { spin::optimal_nu(n_atoms, tau)? };
    Ok(SqueezingProfile {
        n_atoms,
        tau,
        contrast: contrast(n_atoms, tau),
        var_mid_fringe: var_mid,
        var_quadrature: var_quad,
        k1,
        k2,
        nu,
    })
}

/// `3^{1/6} N^{-2/3}`.
pub fn tau_ref(n_atoms: usize) -> Result<f64> {
    if n_atoms < 2 {
        return Err(invalid("tau_ref requires N >= 2"));
    }
    Ok(pow(3.0, 1.0 / 6.0) * pow(n_atoms as f64, -2.0 / 3.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TauStarMethod {
    Formula,
    #[default]
    ExactBalance,
}

/// Squeezing strength equalizing the two variance extrema.
pub fn tau_star(n_atoms: usize, method: TauStarMethod) -> Result<f64> {
    if n_atoms < 2 {
        return Err(invalid("tau_star requires N >= 2"));
    }
    let formula = pow(2.0 / pow(n_atoms as f64, 5.0), 1.0 / 6.0);
    if method == TauStarMethod::Formula {
        return Ok(formula);
    }
    let f = |t: f64| {
        let (a, b, _, _) = variance_extrema(n_atoms, t);
        a - b
    };
    let mut lo = 1e-6 * formula;
    let mut hi = 2.0 * formula;
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo > 0.0 && fhi < 0.0) {
        return Err(Error::Bracketing(alloc::format!(
            "variance balance not bracketed in ({lo}, {hi}] for N = {n_atoms}"
        )));
    }
    while hi - lo > 1e-12 * hi.max(1e-300) && hi - lo > 1e-300 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Differential standard quantum limit `sqrt(2 / (shots N))`.
pub fn sql(n_atoms: usize, shots: usize) -> f64 {
    SQRT_2 / sqrt(shots as f64 * n_atoms as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SensitivityRegime {
    TauRefMidFringe,
    TauStarMidFringe,
}

/// Asymptotic per-shot sensitivity of the two squeezing regimes.
pub fn sensitivity_closed_form(n_atoms: usize, regime: SensitivityRegime) -> f64 {
    let n = n_atoms as f64;
    match regime {
        SensitivityRegime::TauRefMidFringe => cbrt(3.0) * pow(n, -5.0 / 6.0),
        SensitivityRegime::TauStarMidFringe => cbrt(2.0) * pow(n, -2.0 / 3.0),
    }
}

/// Single-interferometer error propagation `sigma_z(phi) / (sqrt(shots) C |cos phi|)`.
pub fn error_propagation_sensitivity(profile: &SqueezingProfile, phi: f64, shots: usize) -> Result<f64> {
    let slope = profile.contrast * cos(phi).abs();
    if slope < 1e-12 {
        return Err(Error::Numerical(alloc::format!("vanishing fringe slope at phi = {phi}")));
    }
    Ok(sqrt(profile.variance(phi)) / (sqrt(shots as f64) * slope))
}

/// Left-hand side of the average-ellipse equation at `(za, zb)`.
pub fn average_ellipse_residual(za: f64, zb: f64, contrast_a: f64, contrast_b: f64, dphi: f64) -> f64 {
    let (xa, xb) = (za / contrast_a, zb / contrast_b);
    let s = sin(dphi);
    xa * xa - 2.0 * cos(dphi) * xa * xb + xb * xb - s * s
}

/// Form of the `Sigma_1` term entering `<g_0>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sigma1Form {
    /// `(C_{3tau} + 3 C_tau)/4`, which reproduces the coherent-state limit
    /// `<g_0> = (1/4 + 3/(4N)) h`.
    Consistent,
    /// `(C_{3tau} + 3 C_tau)/4 + 3 C_tau / N`.
    Printed,
}

/// Large-`N` means `<g_0> ... <g_3>` for two probes of equal `tau`.
pub fn g_means_closed_form(n_atoms: usize, tau: f64, dphi: f64) -> Result<[f64; 4]> {
    g_means_closed_form_with(n_atoms, tau, dphi, Sigma1Form::Consistent)
}

pub fn g_means_closed_form_with(n_atoms: usize, tau: f64, dphi: f64, form: Sigma1Form) -> Result<[f64; 4]> {
    if n_atoms < 50 {
        return Err(invalid("large-N closed forms require N >= 50"));
    }
    ensure_finite("dphi", dphi)?;
    let prof = profile(n_atoms, tau)?;
    let n = n_atoms as f64;
    let h = cos(dphi);
    let c = prof.contrast;
    let c2 = c * c;
    let c4 = c2 * c2;
    let (s0, s1) = (prof.var_mid_fringe, prof.var_quadrature);
    let d = s0 - s1;
    let c_2t = contrast(n_atoms, 2.0 * tau);
    let c_3t = contrast(n_atoms, 3.0 * tau);
    let mut sigma1 = (c_3t + 3.0 * c) / 4.0;
    if form == Sigma1Form::Printed {
        sigma1 += 3.0 * c / n;
    }
    let (sn, cn) = (sin(prof.nu), cos(prof.nu));
    let st = sin(tau);
    let sigma2 = -3.0 * (cn * cn * st * st * c + sn * sn * (c_3t - c) / 4.0 - sn * cn * sin(2.0 * tau) * c_2t);
    let g3 = -c2 * c4;
    let g2 = 1.5 * c4 * c2 * h;
    let g1 = -(c4 / 4.0 + c2 / 2.0 * (5.0 * s0 + 3.0 * s1) + d * d / 4.0 - 2.0 * s0 * s1
        + (c4 / 2.0 - c2 * d + d * d / 2.0) * h * h)
        * c2;
    let g0 = c2 * c * (-c2 * c / 2.0 + 3.0 * c / (4.0 * n) + (3.0 * sigma1 + sigma2) / 4.0) * h;
    Ok([g0, g1, g2, g3])
}

/// Means of `g_l` for coherent probes in the `N -> infinity` limit.
pub fn g_means_infinite(dphi: f64) -> [f64; 4] {
    let h = cos(dphi);
    [h / 4.0, -(0.25 + 0.5 * h * h), 1.5 * h, -1.0]
}

fn cexp(z: Complex64) -> Complex64 {
    let r = exp(z.re);
    Complex64::new(r * cos(z.im), r * sin(z.im))
}

/// Normally ordered generating function on the coherent state.
pub fn generating_function(n_atoms: usize, alpha: Complex64, beta: Complex64, gamma: Complex64) -> Complex64 {
    let one = Complex64::new(1.0, 0.0);
    let base = (cexp(beta * 0.5) + cexp(-beta * 0.5) * (alpha + one) * (gamma + one)) * 0.5;
    base.powu(n_atoms as u32)
}

/// Squeezing regime of the analytic bias formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasRegime {
    Coherent,
    /// `H_0 = h0_coefficient * sigma_z^2(tau*)`, `H_2 = 0`.
    TauStar { h0_coefficient: f64 },
}

impl BiasRegime {
    pub const DEFAULT_H0_COEFFICIENT: f64 = -1.75;

    pub fn tau_star_default() -> Self {
        BiasRegime::TauStar { h0_coefficient: Self::DEFAULT_H0_COEFFICIENT }
    }
}

/// `-4 cot(dphi) (H_0 + H_2 h^2) / (1 + 2 h^2)`.
pub fn bias_approximation(n_atoms: usize, regime: BiasRegime, dphi: f64) -> Result<f64> {
    ensure_finite("dphi", dphi)?;
    if !(dphi > 1e-3 && dphi < PI - 1e-3) {
        return Err(invalid("dphi must lie in (1e-3, pi - 1e-3)"));
    }
    let n = n_atoms as f64;
    let (h0, h2) = match regime {
        BiasRegime::Coherent => (-7.0 / (4.0 * n), 1.0 / n),
        BiasRegime::TauStar { h0_coefficient } => {
            let ts = tau_star(n_atoms, TauStarMethod::Formula)?;
            (h0_coefficient * variance_extrema(n_atoms, ts).0, 0.0)
        }
    };
    let h = cos(dphi);
    let cot = if (dphi - FRAC_PI_2).abs() < 1e-15 { 0.0 } else { 1.0 / tan(dphi) };
    Ok(-4.0 * cot * (h0 + h2 * h * h) / (1.0 + 2.0 * h * h))
}

/// Highest power of a single imbalance appearing in products `g_j g_l`.
const G_MAX_POWER: usize = 6;

/// Terms `(coefficient, p, q)` of `g_l` as a polynomial in `z_A^p z_B^q`.
fn g_polynomials(ca: f64, cb: f64) -> [Vec<(f64, usize, usize)>; 4] {
    let (ca2, cb2) = (ca * ca, cb * cb);
    let k = ca * cb;
    [
        vec![(cb2, 3, 1), (ca2, 1, 3), (-ca2 * cb2, 1, 1)],
        vec![(-k * cb2, 2, 0), (-k * ca2, 0, 2), (k * ca2 * cb2, 0, 0), (-2.0 * k, 2, 2)],
        vec![(3.0 * ca2 * cb2, 1, 1)],
        vec![(-ca2 * cb2 * k, 0, 0)],
    ]
}

/// First and second moments of `g_0 ... g_3` under the joint distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GCoefficientMoments {
    pub g_means: [f64; 4],
    pub g_cov: [[f64; 4]; 4],
    /// Number of points per ellipse; `Cov(G_j, G_l) = g_cov / sample_size`.
    pub sample_size: usize,
    pub contrast_a: f64,
    pub contrast_b: f64,
    pub quadrature_nodes: usize,
}

impl GCoefficientMoments {
    pub fn with_sample_size(mut self, shots: usize) -> Self {
        self.sample_size = shots;
        self
    }

    /// `Cov(G_j, G_l)` for the configured sample size.
    pub fn g_average_cov(&self) -> [[f64; 4]; 4] {
        let s = 1.0 / self.sample_size as f64;
        self.g_cov.map(|row| row.map(|x| x * s))
    }
}

/// `(1/K) sum_j m_A,p(phi_j + dphi/2) m_B,q(phi_j - dphi/2)` for `p, q <= 6`,
/// flattened; `m_p` are the raw moments of `z` at each node.
fn node_moment_sum(a: &PreparedProbe, b: &PreparedProbe, dphi: f64, nodes: usize, offset: f64) -> Result<Vec<f64>> {
    let d = G_MAX_POWER + 1;
    let raw = |probe: &PreparedProbe, shift: f64| -> Result<Vec<f64>> {
        let n = probe.n_atoms();
        let t = probe.table(offset + shift, nodes)?;
        let mut m = vec![0.0; nodes * d];
        for j in 0..nodes {
            let row = t.row(j);
            let out = &mut m[j * d..(j + 1) * d];
            for (i, &p) in row.iter().enumerate() {
                let z = spin::z_value(n, i);
                let mut zp = 1.0;
                for o in out.iter_mut() {
                    *o += p * zp;
                    zp *= z;
                }
            }
        }
        Ok(m)
    };
    let ma = raw(a, 0.5 * dphi)?;
    let mb = raw(b, -0.5 * dphi)?;
    let mut c = vec![0.0; d * d];
    crate::sampling::accumulate_outer(1.0, &ma, d, &mb, d, nodes, &mut c);
    Ok(c)
}

/// Moments of the one-parameter cubic coefficients by exact summation over
/// the outcome grid and trapezoid quadrature over the common phase. The
/// contrasts entering `g_l` are the closed-form `cos^{N-1} tau` values.
pub fn g_moments_numeric(spec_a: &ProbeSpec, spec_b: &ProbeSpec, dphi: f64) -> Result<GCoefficientMoments> {
    let a = PreparedProbe::new(spec_a)?;
    let b = PreparedProbe::new(spec_b)?;
    g_moments_prepared(&a, &b, dphi)
}

pub fn g_moments_prepared(a: &PreparedProbe, b: &PreparedProbe, dphi: f64) -> Result<GCoefficientMoments> {
    ensure_finite("dphi", dphi)?;
    let d = G_MAX_POWER + 1;
    let opts = QuadratureOptions::default();
    let (m, nodes) = refine_until_converged(
        &opts,
        |k, off| node_moment_sum(a, b, dphi, k, off),
        |x, y| {
            let scale = x.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            x.iter().zip(y).fold(0.0f64, |s, (p, q)| s.max((p - q).abs())) / scale
        },
    )?;
    let ca = contrast(a.n_atoms(), a.spec().tau);
    let cb = contrast(b.n_atoms(), b.spec().tau);
    let polys = g_polynomials(ca, cb);
    // Normalise away the rounding-level deficit of the summed distributions.
    let norm = m[0];
    let expect = |terms: &[(f64, usize, usize)]| terms.iter().map(|&(c, p, q)| c * m[p * d + q]).sum::<f64>() / norm;
    let mut g_means: [f64; 4] = core::array::from_fn(|l| expect(&polys[l]));
    g_means[3] = polys[3][0].0;
    let mut g_cov = [[0.0; 4]; 4];
    for j in 0..4 {
        for l in j..4 {
            let mut prod = Vec::with_capacity(polys[j].len() * polys[l].len());
            for &(c1, p1, q1) in &polys[j] {
                for &(c2, p2, q2) in &polys[l] {
                    prod.push((c1 * c2, p1 + p2, q1 + q2));
                }
            }
            let v = if j == 3 || l == 3 { 0.0 } else { expect(&prod) - g_means[j] * g_means[l] };
            g_cov[j][l] = v;
            g_cov[l][j] = v;
        }
    }
    Ok(GCoefficientMoments { g_means, g_cov, sample_size: 1, contrast_a: ca, contrast_b: cb, quadrature_nodes: nodes })
}
