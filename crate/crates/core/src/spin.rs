//! Collective-spin states in the Dicke basis and their outcome distributions.
//!
//! Basis index `n` counts atoms in the second mode, so `m = N/2 - n` and the
//! normalized imbalance is `z = 2m/N`. Outcome distributions are indexed by
//! `i = N - n` so that `z_i = -1 + 2i/N` is ascending.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, FRAC_PI_4, LN_2, PI};

use libm::{atan2, cos, exp, lgamma, log, sin, sqrt};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::closed_form;
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::linalg::tridiagonal_eigenvector;

/// Largest atom number accepted in exact mode.
pub const EXACT_MODE_CAP: usize = 2000;

/// Tolerance on state normalization.
pub const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ProbeMode {
    #[default]
    Exact,
    Gaussian,
}

/// Choice of the final rotation that aligns the squeezed quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum NuChoice {
    #[default]
    Auto,
    Fixed(f64),
}

/// Atom number, one-axis-twisting strength and preparation options of a probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub n_atoms: usize,
    pub tau: f64,
    #[serde(default)]
    pub nu: NuChoice,
    #[serde(default)]
    pub mode: ProbeMode,
}

impl ProbeSpec {
    pub fn coherent(n_atoms: usize) -> Self {
        Self { n_atoms, tau: 0.0, nu: NuChoice::Auto, mode: ProbeMode::Exact }
    }

    pub fn squeezed(n_atoms: usize, tau: f64) -> Self {
        Self { n_atoms, tau, nu: NuChoice::Auto, mode: ProbeMode::Exact }
    }

    pub fn with_mode(mut self, mode: ProbeMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_atoms < 2 {
            return Err(invalid("atom number must be at least 2"));
        }
        ensure_finite("tau", self.tau)?;
        if self.tau < 0.0 {
            return Err(invalid("tau must be non-negative"));
        }
        if let NuChoice::Fixed(nu) = self.nu {
            ensure_finite("nu", nu)?;
        }
        if self.mode == ProbeMode::Exact && self.n_atoms > EXACT_MODE_CAP {
            return Err(Error::TooManyAtoms { n: self.n_atoms, cap: EXACT_MODE_CAP });
        }
        Ok(())
    }

    pub fn is_coherent(&self) -> bool {
        self.tau == 0.0
    }
}

fn ln_binomial_table(n: usize) -> Vec<f64> {
    let lg_n = lgamma(n as f64 + 1.0);
    (0..=n).map(|k| lg_n - lgamma(k as f64 + 1.0) - lgamma((n - k) as f64 + 1.0)).collect()
}

#[inline]
fn m_of(n_atoms: usize, n: usize) -> f64 {
    n_atoms as f64 / 2.0 - n as f64
}

/// Pure state of `N` two-level atoms in the symmetric subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct CollectiveSpinState {
    amps: Vec<Complex64>,
}

impl CollectiveSpinState {
    /// Builds a state from Dicke amplitudes, rejecting unnormalized input.
    pub fn from_amplitudes(amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() < 2 {
            return Err(invalid("a state needs at least two amplitudes"));
        }
        let s = Self { amps };
        let norm = s.norm_sqr();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::NotNormalized { norm, tol: NORM_TOL });
        }
        Ok(s)
    }

    /// Eigenstate of `Jx` with eigenvalue `N/2`.
    pub fn coherent(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(invalid("atom number must be positive"));
        }
        let lb = ln_binomial_table(n_atoms);
        let half = 0.5 * n_atoms as f64 * LN_2;
        let mut amps: Vec<Complex64> =
            lb.iter().map(|&l| Complex64::new(exp(0.5 * l - half), 0.0)).collect();
        let s: f64 = amps.iter().map(|a| a.norm_sqr()).sum();
        let inv = 1.0 / sqrt(s);
        for a in amps.iter_mut() {
            *a *= inv;
        }
        Ok(Self { amps })
    }

    pub fn n_atoms(&self) -> usize {
        self.amps.len() - 1
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Applies `exp(-i tau Jz^2)`.
    pub fn apply_oat(&mut self, tau: f64) {
        let n = self.n_atoms();
        for (k, a) in self.amps.iter_mut().enumerate() {
            let m = m_of(n, k);
            *a *= cis(-tau * m * m);
        }
    }

    /// Applies `exp(-i angle J_axis)` using a freshly built kernel.
    pub fn apply_rotation(&mut self, axis: Axis, angle: f64) -> Result<()> {
        let kernel = RotationKernel::new(self.n_atoms())?;
        self.rotate(&kernel, axis, angle)
    }

    /// Applies `exp(-i angle J_axis)` with a prebuilt kernel.
    pub fn rotate(&mut self, kernel: &RotationKernel, axis: Axis, angle: f64) -> Result<()> {
        if kernel.n_atoms != self.n_atoms() {
            return Err(invalid("kernel atom number does not match state"));
        }
        let n = self.n_atoms();
        match axis {
            Axis::Z => {
                for (k, a) in self.amps.iter_mut().enumerate() {
                    *a *= cis(-angle * m_of(n, k));
                }
            }
            Axis::X => self.amps = kernel.rotate_x(&self.amps, angle),
            Axis::Y => {
                for (a, z) in self.amps.iter_mut().zip(&kernel.rz) {
                    *a *= z.conj();
                }
                self.amps = kernel.rotate_x(&self.amps, angle);
                for (a, z) in self.amps.iter_mut().zip(&kernel.rz) {
                    *a *= z;
                }
            }
        }
        Ok(())
    }

    /// `Jz psi`.
    pub fn apply_jz(&self) -> Vec<Complex64> {
        let n = self.n_atoms();
        self.amps.iter().enumerate().map(|(k, a)| a * m_of(n, k)).collect()
    }

    /// `Jy psi`, using `<n-1|Jy|n> = -i sqrt((N-n+1) n)/2`.
    pub fn apply_jy(&self) -> Vec<Complex64> {
        let n = self.n_atoms();
        let mut out = vec![Complex64::new(0.0, 0.0); n + 1];
        for k in 1..=n {
            let e = 0.5 * sqrt(((n - k + 1) * k) as f64);
            out[k - 1] += Complex64::new(0.0, -e) * self.amps[k];
            out[k] += Complex64::new(0.0, e) * self.amps[k - 1];
        }
        out
    }

    /// `Jx psi`.
    pub fn apply_jx(&self) -> Vec<Complex64> {
        let n = self.n_atoms();
        let mut out = vec![Complex64::new(0.0, 0.0); n + 1];
        for k in 1..=n {
            let e = 0.5 * sqrt(((n - k + 1) * k) as f64);
            out[k - 1] += self.amps[k] * e;
            out[k] += self.amps[k - 1] * e;
        }
        out
    }

    /// Outcome probabilities of a direct `Jz` measurement, ascending in `z`.
    pub fn z_distribution(&self) -> Vec<f64> {
        self.amps.iter().rev().map(|a| a.norm_sqr()).collect()
    }
}

#[inline]
pub(crate) fn cis(theta: f64) -> Complex64 {
    Complex64::new(cos(theta), sin(theta))
}

fn inner(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Eigendecomposition of `Jx` in the Dicke basis.
///
/// The spectrum is exactly `N/2 - k`; the eigenvectors come from inverse
/// iteration on the tridiagonal matrix.
#[derive(Debug, Clone)]
pub struct RotationKernel {
    n_atoms: usize,
    /// Row-major `V[n][k]`.
    vecs: Vec<f64>,
    eig: Vec<f64>,
    /// Diagonal of `exp(-i pi/2 Jz)`.
    rz: Vec<Complex64>,
}

impl RotationKernel {
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(invalid("atom number must be positive"));
        }
        if n_atoms > EXACT_MODE_CAP {
            return Err(Error::TooManyAtoms { n: n_atoms, cap: EXACT_MODE_CAP });
        }
        let d = n_atoms + 1;
        let off: Vec<f64> = (1..=n_atoms).map(|k| 0.5 * sqrt(((n_atoms - k + 1) * k) as f64)).collect();
        let eig: Vec<f64> = (0..d).map(|k| m_of(n_atoms, k)).collect();
        let mut vecs = vec![0.0; d * d];
        for (k, &lam) in eig.iter().enumerate() {
            let v = tridiagonal_eigenvector(&off, lam);
            for (row, x) in v.into_iter().enumerate() {
                vecs[row * d + k] = x;
            }
        }
        let rz = (0..d).map(|k| cis(-FRAC_PI_2 * m_of(n_atoms, k))).collect();
        Ok(Self { n_atoms, vecs, eig, rz })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eig
    }

    /// Eigenvector matrix entry `V[n][k]`.
    pub fn vector_entry(&self, n: usize, k: usize) -> f64 {
        self.vecs[n * (self.n_atoms + 1) + k]
    }

    /// `V^T psi`.
    pub fn to_eigenbasis(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let d = self.n_atoms + 1;
        let mut re = vec![0.0; d];
        let mut im = vec![0.0; d];
        for (row, p) in psi.iter().enumerate() {
            let v = &self.vecs[row * d..(row + 1) * d];
            for k in 0..d {
                re[k] += v[k] * p.re;
                im[k] += v[k] * p.im;
            }
        }
        re.into_iter().zip(im).map(|(r, i)| Complex64::new(r, i)).collect()
    }

    /// `V w`.
    pub fn from_eigenbasis(&self, w: &[Complex64]) -> Vec<Complex64> {
        let d = self.n_atoms + 1;
        let (wr, wi): (Vec<f64>, Vec<f64>) = w.iter().map(|c| (c.re, c.im)).unzip();
        (0..d)
            .map(|row| {
                let v = &self.vecs[row * d..(row + 1) * d];
                let mut r = 0.0;
                let mut i = 0.0;
                for k in 0..d {
                    r += v[k] * wr[k];
                    i += v[k] * wi[k];
                }
                Complex64::new(r, i)
            })
            .collect()
    }

    pub fn rotate_x(&self, psi: &[Complex64], angle: f64) -> Vec<Complex64> {
        let mut c = self.to_eigenbasis(psi);
        for (ck, &lam) in c.iter_mut().zip(&self.eig) {
            *ck *= cis(-angle * lam);
        }
        self.from_eigenbasis(&c)
    }
}

/// Second moments of the twisted state entering the choice of `nu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwistMoments {
    /// `<Jz^2>`
    pub zz: f64,
    /// `<Jy^2>`
    pub yy: f64,
    /// `Re <Jz psi, Jy psi>`
    pub zy: f64,
}

impl TwistMoments {
    pub fn of(state: &CollectiveSpinState) -> Self {
        let jz = state.apply_jz();
        let jy = state.apply_jy();
        Self {
            zz: inner(&jz, &jz).re,
            yy: inner(&jy, &jy).re,
            zy: inner(&jz, &jy).re,
        }
    }

    /// `<(cos nu Jz + sin nu Jy)^2>`, the `Jz` variance after `exp(-i nu Jx)`.
    pub fn variance_at(&self, nu: f64) -> f64 {
        let (s, c) = (sin(nu), cos(nu));
        self.zz * c * c + self.yy * s * s + 2.0 * self.zy * s * c
    }
}

fn wrap_half_turn(nu: f64) -> f64 {
    let mut x = nu % PI;
    if x > FRAC_PI_2 {
        x -= PI;
    } else if x <= -FRAC_PI_2 {
        x += PI;
    }
    x
}

/// Rotation angle minimizing the `Jz` variance of the twisted coherent state.
///
/// The closed-form candidates `atan2(K2, K1)/2` and their quarter-turn
/// offsets are scored against the exact moments, together with the exact
/// stationary point, and the best one is polished by golden-section search.
pub fn optimal_nu(n_atoms: usize, tau: f64) -> Result<f64> {
    let mut st = CollectiveSpinState::coherent(n_atoms)?;
    st.apply_oat(tau);
    let mom = TwistMoments::of(&st);
    let (k1, k2) = closed_form::k_coefficients(n_atoms, tau);
    let base = 0.5 * atan2(k2, k1);
    let exact = 0.5 * (atan2(mom.zy, 0.5 * (mom.zz - mom.yy)) + PI);
    let mut best = exact;
    let mut best_v = mom.variance_at(exact);
    for cand in [base, base + FRAC_PI_2, -base, -base + FRAC_PI_2] {
        let v = mom.variance_at(cand);
        if v < best_v {
            best = cand;
            best_v = v;
        }
    }
    let f = |x: f64| mom.variance_at(x);
    let refined = golden_min(f, best - 0.05, best + 0.05, 1e-13);
    if f(refined) < best_v {
        best = refined;
    }
    Ok(wrap_half_turn(best))
}

pub(crate) fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let g = 0.5 * (sqrt(5.0) - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < tol {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Resolves the `nu` used for a spec.
pub fn resolve_nu(spec: &ProbeSpec) -> Result<f64> {
    match spec.nu {
        NuChoice::Fixed(nu) => Ok(nu),
        NuChoice::Auto if spec.tau == 0.0 => Ok(0.0),
        NuChoice::Auto => optimal_nu(spec.n_atoms, spec.tau),
    }
}

/// Coherent state twisted by `tau` and rotated by `nu` about its mean spin.
pub fn make_squeezed(spec: &ProbeSpec) -> Result<CollectiveSpinState> {
    let kernel = RotationKernel::new(spec.n_atoms)?;
    make_squeezed_with(spec, &kernel)
}

pub fn make_squeezed_with(spec: &ProbeSpec, kernel: &RotationKernel) -> Result<CollectiveSpinState> {
    spec.validate()?;
    let nu = resolve_nu(spec)?;
    let mut st = CollectiveSpinState::coherent(spec.n_atoms)?;
    st.apply_oat(spec.tau);
    st.rotate(kernel, Axis::X, nu)?;
    Ok(st)
}

/// Outcome distribution of the imbalance at a given interferometer phase.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeDistribution {
    pub n_atoms: usize,
    pub phase: f64,
    /// Probabilities ascending in `z`.
    pub probabilities: Vec<f64>,
}

impl OutcomeDistribution {
    pub fn z(&self, i: usize) -> f64 {
        z_value(self.n_atoms, i)
    }

    pub fn mean(&self) -> f64 {
        self.probabilities.iter().enumerate().map(|(i, p)| p * self.z(i)).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.probabilities
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let d = self.z(i) - mu;
                p * d * d
            })
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }
}

/// `z_i = -1 + 2i/N`.
#[inline]
pub fn z_value(n_atoms: usize, i: usize) -> f64 {
    (2.0 * i as f64 - n_atoms as f64) / n_atoms as f64
}

/// Exact or Gaussian outcome model of one probe, ready for repeated evaluation.
#[derive(Debug, Clone)]
pub struct PreparedProbe {
    spec: ProbeSpec,
    nu: f64,
    kind: ProbeKind,
}

#[derive(Debug, Clone)]
enum ProbeKind {
    Binomial { ln_binom: Vec<f64>, ln_binom_minus: Vec<f64> },
    Kernel { kernel: Arc<RotationKernel>, coeffs: Vec<Complex64> },
    Gaussian { contrast: f64, var_mid: f64, var_quad: f64 },
}

impl PreparedProbe {
    pub fn new(spec: &ProbeSpec) -> Result<Self> {
        spec.validate()?;
        if spec.mode == ProbeMode::Exact && !spec.is_coherent() {
            let kernel = Arc::new(RotationKernel::new(spec.n_atoms)?);
            return Self::with_kernel(spec, kernel);
        }
        Self::build(spec, None)
    }

    /// Reuses a kernel shared between probes with the same atom number.
    pub fn with_kernel(spec: &ProbeSpec, kernel: Arc<RotationKernel>) -> Result<Self> {
        spec.validate()?;
        Self::build(spec, Some(kernel))
    }

    /// Forces the kernel path even for an untwisted probe.
    pub fn new_dense(spec: &ProbeSpec) -> Result<Self> {
        spec.validate()?;
        if spec.mode != ProbeMode::Exact {
            return Err(Error::RequiresExactMode("dense evaluation".into()));
        }
        let kernel = Arc::new(RotationKernel::new(spec.n_atoms)?);
        let nu = resolve_nu(spec)?;
        Ok(Self::kernel_probe(spec, nu, kernel))
    }

    fn build(spec: &ProbeSpec, kernel: Option<Arc<RotationKernel>>) -> Result<Self> {
        let n = spec.n_atoms;
        match spec.mode {
            ProbeMode::Gaussian => {
                let prof = closed_form::profile(n, spec.tau)?;
                Ok(Self {
                    spec: *spec,
                    nu: prof.nu,
                    kind: ProbeKind::Gaussian {
                        contrast: prof.contrast,
                        var_mid: prof.var_mid_fringe,
                        var_quad: prof.var_quadrature,
                    },
                })
            }
            ProbeMode::Exact if spec.is_coherent() => Ok(Self {
                spec: *spec,
                nu: 0.0,
                kind: ProbeKind::Binomial {
                    ln_binom: ln_binomial_table(n),
                    ln_binom_minus: ln_binomial_table(n - 1),
                },
            }),
            ProbeMode::Exact => {
                let kernel = match kernel {
                    Some(k) if k.n_atoms == n => k,
                    Some(_) => return Err(invalid("kernel atom number does not match probe")),
                    None => Arc::new(RotationKernel::new(n)?),
                };
                let nu = resolve_nu(spec)?;
                Ok(Self::kernel_probe(spec, nu, kernel))
            }
        }
    }

    fn kernel_probe(spec: &ProbeSpec, nu: f64, kernel: Arc<RotationKernel>) -> Self {
        let mut st = CollectiveSpinState::coherent(spec.n_atoms).expect("positive atom number");
        st.apply_oat(spec.tau);
        st.rotate(&kernel, Axis::X, nu).expect("matching kernel");
        let tilted: Vec<Complex64> = st.amps.iter().zip(&kernel.rz).map(|(a, z)| a * z.conj()).collect();
        let coeffs = kernel.to_eigenbasis(&tilted);
        Self { spec: *spec, nu, kind: ProbeKind::Kernel { kernel, coeffs } }
    }

    pub fn spec(&self) -> &ProbeSpec {
        &self.spec
    }

    pub fn n_atoms(&self) -> usize {
        self.spec.n_atoms
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn is_exact(&self) -> bool {
        !matches!(self.kind, ProbeKind::Gaussian { .. })
    }

    /// Fills `out` (length `N+1`) with `P(z_i | phi)`.
    pub fn probabilities_into(&self, phi: f64, out: &mut [f64]) {
        let n = self.spec.n_atoms;
        debug_assert_eq!(out.len(), n + 1);
        match &self.kind {
            ProbeKind::Binomial { ln_binom, .. } => binomial_into(ln_binom, phi, out),
            ProbeKind::Kernel { kernel, coeffs } => {
                let y = evolve(kernel, coeffs, phi);
                for (k, yk) in y.iter().enumerate() {
                    out[n - k] = yk.norm_sqr();
                }
            }
            ProbeKind::Gaussian { contrast, var_mid, var_quad } => {
                let (s, c) = (sin(phi), cos(phi));
                let mean = -contrast * s;
                let var = c * c * var_mid + s * s * var_quad;
                gaussian_into(n, mean, var, out);
            }
        }
    }

    /// Fills `p` and `dp` with `P(z_i | phi)` and its phase derivative.
    pub fn derivative_into(&self, phi: f64, p: &mut [f64], dp: &mut [f64]) -> Result<()> {
        let n = self.spec.n_atoms;
        match &self.kind {
            ProbeKind::Binomial { ln_binom, ln_binom_minus } => {
                binomial_into(ln_binom, phi, p);
                let mut pm = vec![0.0; n];
                binomial_into(ln_binom_minus, phi, &mut pm);
                let dq = -0.5 * cos(phi);
                for i in 0..=n {
                    let lo = if i > 0 { pm[i - 1] } else { 0.0 };
                    let hi = if i < n { pm[i] } else { 0.0 };
                    dp[i] = dq * n as f64 * (lo - hi);
                }
                Ok(())
            }
            ProbeKind::Kernel { kernel, coeffs } => {
                let w: Vec<Complex64> = coeffs.iter().zip(&kernel.eig).map(|(c, &l)| c * cis(-phi * l)).collect();
                let dw: Vec<Complex64> =
                    w.iter().zip(&kernel.eig).map(|(c, &l)| c * Complex64::new(0.0, -l)).collect();
                let y = kernel.from_eigenbasis(&w);
                let dy = kernel.from_eigenbasis(&dw);
                for k in 0..=n {
                    p[n - k] = y[k].norm_sqr();
                    dp[n - k] = 2.0 * (y[k].conj() * dy[k]).re;
                }
                Ok(())
            }
            ProbeKind::Gaussian { .. } => Err(Error::RequiresExactMode("phase derivative".into())),
        }
    }

    pub fn distribution(&self, phi: f64) -> OutcomeDistribution {
        let mut probabilities = vec![0.0; self.spec.n_atoms + 1];
        self.probabilities_into(phi, &mut probabilities);
        OutcomeDistribution { n_atoms: self.spec.n_atoms, phase: phi, probabilities }
    }

    /// Tabulates the distribution on `nodes` uniform phases `2 pi j / nodes + offset`.
    pub fn table(&self, offset: f64, nodes: usize) -> Result<PhaseTable> {
        self.build_table(offset, nodes, false)
    }

    /// As [`PreparedProbe::table`], also storing the phase derivative.
    pub fn table_with_derivative(&self, offset: f64, nodes: usize) -> Result<PhaseTable> {
        self.build_table(offset, nodes, true)
    }

    /// Node-by-node evaluation, used as a reference for the accelerated path.
    pub fn table_dense(&self, offset: f64, nodes: usize, with_derivative: bool) -> Result<PhaseTable> {
        check_nodes(nodes)?;
        let d = self.spec.n_atoms + 1;
        let mut probs = vec![0.0; nodes * d];
        let mut deriv = if with_derivative { Some(vec![0.0; nodes * d]) } else { None };
        for j in 0..nodes {
            let phi = node_phase(j, nodes, offset);
            let row = &mut probs[j * d..(j + 1) * d];
            match deriv.as_mut() {
                Some(dv) => self.derivative_into(phi, row, &mut dv[j * d..(j + 1) * d])?,
                None => self.probabilities_into(phi, row),
            }
        }
        Ok(PhaseTable { n_atoms: self.spec.n_atoms, nodes, offset, probs, deriv })
    }

    fn build_table(&self, offset: f64, nodes: usize, with_derivative: bool) -> Result<PhaseTable> {
        check_nodes(nodes)?;
        if with_derivative && !self.is_exact() {
            return Err(Error::RequiresExactMode("phase derivative".into()));
        }
        #[cfg(feature = "std")]
        if let ProbeKind::Kernel { kernel, coeffs } = &self.kind {
            if nodes > self.spec.n_atoms {
                return Ok(fft_table(kernel, coeffs, offset, nodes, with_derivative));
            }
        }
        self.table_dense(offset, nodes, with_derivative)
    }
}

fn check_nodes(nodes: usize) -> Result<()> {
    if nodes < 2 {
        return Err(invalid("at least two phase nodes are required"));
    }
    Ok(())
}

#[inline]
pub fn node_phase(j: usize, nodes: usize, offset: f64) -> f64 {
    2.0 * PI * j as f64 / nodes as f64 + offset
}

fn evolve(kernel: &RotationKernel, coeffs: &[Complex64], phi: f64) -> Vec<Complex64> {
    let w: Vec<Complex64> = coeffs.iter().zip(&kernel.eig).map(|(c, &l)| c * cis(-phi * l)).collect();
    kernel.from_eigenbasis(&w)
}

/// Binomial law of the coherent probe: `i ~ Bin(N, q)` with `q = (1 - sin phi)/2`.
fn binomial_into(ln_binom: &[f64], phi: f64, out: &mut [f64]) {
    let n = ln_binom.len() - 1;
    let half = FRAC_PI_4 - 0.5 * phi;
    let (s, c) = (sin(half), cos(half));
    let q = s * s;
    let r = c * c;
    if q == 0.0 || r == 0.0 {
        out.iter_mut().for_each(|x| *x = 0.0);
        out[if q == 0.0 { 0 } else { n }] = 1.0;
        return;
    }
    let (lq, lr) = (log(q), log(r));
    for (i, (o, &lb)) in out.iter_mut().zip(ln_binom).enumerate() {
        *o = exp(lb + i as f64 * lq + (n - i) as f64 * lr);
    }
}

fn gaussian_into(n_atoms: usize, mean: f64, var: f64, out: &mut [f64]) {
    let step = 2.0 / n_atoms as f64;
    if !(var > 1e-12 * step * step) {
        out.iter_mut().for_each(|x| *x = 0.0);
        let i = libm::round((mean + 1.0) / step).clamp(0.0, n_atoms as f64) as usize;
        out[i] = 1.0;
        return;
    }
    let inv = -0.5 / var;
    let mut total = 0.0;
    for (i, o) in out.iter_mut().enumerate() {
        let d = z_value(n_atoms, i) - mean;
        *o = exp(inv * d * d);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

#[cfg(feature = "std")]
fn fft_table(
    kernel: &RotationKernel,
    coeffs: &[Complex64],
    offset: f64,
    nodes: usize,
    with_derivative: bool,
) -> PhaseTable {
    use rustfft::FftPlanner;

    let n = kernel.n_atoms;
    let d = n + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_inverse(nodes);
    let shifted: Vec<Complex64> = coeffs.iter().zip(&kernel.eig).map(|(c, &l)| c * cis(-offset * l)).collect();
    let mut probs = vec![0.0; nodes * d];
    let mut deriv = if with_derivative { Some(vec![0.0; nodes * d]) } else { None };
    let mut buf = vec![Complex64::new(0.0, 0.0); nodes];
    let mut dbuf = vec![Complex64::new(0.0, 0.0); nodes];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for row in 0..d {
        buf.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
        let v = &kernel.vecs[row * d..(row + 1) * d];
        for k in 0..d {
            buf[k] = shifted[k] * v[k];
        }
        if with_derivative {
            dbuf.iter_mut().for_each(|x| *x = Complex64::new(0.0, 0.0));
            for k in 0..d {
                dbuf[k] = buf[k] * Complex64::new(0.0, k as f64);
            }
            fft.process_with_scratch(&mut dbuf, &mut scratch);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        let out = n - row;
        for j in 0..nodes {
            probs[j * d + out] = buf[j].norm_sqr();
        }
        if let Some(dv) = deriv.as_mut() {
            for j in 0..nodes {
                dv[j * d + out] = 2.0 * (buf[j].conj() * dbuf[j]).re;
            }
        }
    }
    PhaseTable { n_atoms: n, nodes, offset, probs, deriv }
}

/// Outcome distributions tabulated on a uniform phase grid.
#[derive(Debug, Clone)]
pub struct PhaseTable {
    pub n_atoms: usize,
    pub nodes: usize,
    pub offset: f64,
    /// Node-major: `probs[j * (N+1) + i]`.
    pub probs: Vec<f64>,
    pub deriv: Option<Vec<f64>>,
}

impl PhaseTable {
    pub fn row(&self, j: usize) -> &[f64] {
        let d = self.n_atoms + 1;
        &self.probs[j * d..(j + 1) * d]
    }

    pub fn phase(&self, j: usize) -> f64 {
        node_phase(j, self.nodes, self.offset)
    }
}
