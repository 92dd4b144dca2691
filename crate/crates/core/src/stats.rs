//! Fisher information, Cramer-Rao bound, scaling fits, analytic
//! one-parameter statistics and Monte Carlo campaigns.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use libm::{log10, sqrt};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::closed_form::{self, GCoefficientMoments};
use crate::conic::{self, FitContext, Method, PhaseEstimate};
use crate::error::{ensure_finite, invalid, Error, Result};
use crate::hybrid::{self, FringeContrast, FringeModel};
use crate::linalg::least_squares;
use crate::sampling::{
    accumulate_outer, joint_sum, refine_until_converged, NoiseModel, PairSampler, QuadratureOptions,
    DEFAULT_TABLE_NODES,
};
use crate::spin::{NuChoice, ProbeMode, ProbeSpec, PreparedProbe};

/// Cells with joint probability below this are left out of the Fisher sum.
pub const FISHER_CELL_FLOOR: f64 = 1e-300;
/// Step of the finite-difference verification of the Fisher derivative.
pub const FISHER_FD_STEP: f64 = 1e-4;
/// Largest relative disagreement tolerated by the verification.
pub const FISHER_FD_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    pub information: f64,
    /// Total probability of the cells left out of the sum.
    pub skipped_mass: f64,
    pub nodes: usize,
    /// Relative difference to the Richardson finite-difference value, when checked.
    pub fd_residual: Option<f64>,
}

fn fisher_sum(p: &[f64], dp: &[f64]) -> (f64, f64) {
    let mut f = 0.0;
    let mut skipped = 0.0;
    for (&pi, &di) in p.iter().zip(dp) {
        if pi < FISHER_CELL_FLOOR {
            skipped += pi.max(0.0);
        } else {
            f += di * di / pi;
        }
    }
    (f, skipped)
}

fn fisher_node_sum(a: &PreparedProbe, b: &PreparedProbe, dphi: f64, nodes: usize, offset: f64) -> Result<Vec<f64>> {
    let (da, db) = (a.n_atoms() + 1, b.n_atoms() + 1);
    let ta = a.table_with_derivative(offset + 0.5 * dphi, nodes)?;
    let tb = b.table_with_derivative(offset - 0.5 * dphi, nodes)?;
    let (Some(dta), Some(dtb)) = (ta.deriv.as_ref(), tb.deriv.as_ref()) else {
        return Err(Error::Numerical("phase table lacks derivatives".into()));
    };
    let cells = da * db;
    let mut out = vec![0.0; 2 * cells];
    let (p, dp) = out.split_at_mut(cells);
    accumulate_outer(1.0, &ta.probs, da, &tb.probs, db, nodes, p);
    // d/d(dphi) with phi_A = phi + dphi/2 and phi_B = phi - dphi/2.
    accumulate_outer(0.5, dta, da, &tb.probs, db, nodes, dp);
    accumulate_outer(-0.5, &ta.probs, da, dtb, db, nodes, dp);
    Ok(out)
}

/// Classical Fisher information of the joint outcome distribution with
/// respect to the differential phase.
pub fn fisher_information(a: &PreparedProbe, b: &PreparedProbe, dphi: f64) -> Result<FisherResult> {
    ensure_finite("dphi", dphi)?;
    if !a.is_exact() || !b.is_exact() {
        return Err(Error::RequiresExactMode("the Fisher information".into()));
    }
    let cells = (a.n_atoms() + 1) * (b.n_atoms() + 1);
    let opts = QuadratureOptions::default();
    // F vanishes at dphi = 0, so changes are measured against a floor far
    // below the O(N) plateau rather than against F alone.
    let floor = 1e-3 * 0.5 * (a.n_atoms() + b.n_atoms()) as f64;
    let (avg, nodes) = refine_until_converged(
        &opts,
        |m, off| fisher_node_sum(a, b, dphi, m, off),
        |x, y| {
            let (fx, _) = fisher_sum(&x[..cells], &x[cells..]);
            let (fy, _) = fisher_sum(&y[..cells], &y[cells..]);
            (fx - fy).abs() / fy.abs().max(floor)
        },
    )?;
    let (information, skipped_mass) = fisher_sum(&avg[..cells], &avg[cells..]);
    Ok(FisherResult { information, skipped_mass, nodes, fd_residual: None })
}

/// As [`fisher_information`], verified against a Richardson-extrapolated
/// central difference of the joint distribution.
pub fn fisher_information_checked(a: &PreparedProbe, b: &PreparedProbe, dphi: f64) -> Result<FisherResult> {
    let mut res = fisher_information(a, b, dphi)?;
    let h = FISHER_FD_STEP;
    let m = res.nodes;
    let grid = |d: f64| -> Result<Vec<f64>> {
        let s = joint_sum(a, b, d, m, 0.0)?;
        Ok(s.into_iter().map(|x| x / m as f64).collect())
    };
    let p0 = grid(dphi)?;
    let (p1, m1) = (grid(dphi + h)?, grid(dphi - h)?);
    let (p2, m2) = (grid(dphi + 2.0 * h)?, grid(dphi - 2.0 * h)?);
    let dp: Vec<f64> = (0..p0.len())
        .map(|i| (8.0 * (p1[i] - m1[i]) - (p2[i] - m2[i])) / (12.0 * h))
        .collect();
    let (f_fd, _) = fisher_sum(&p0, &dp);
    let rel = (f_fd - res.information).abs() / res.information;
    res.fd_residual = Some(rel);
    if rel > FISHER_FD_TOL {
        return Err(Error::Numerical(alloc::format!(
            "Fisher derivative disagrees with finite differences (relative {rel:.3e})"
        )));
    }
    Ok(res)
}

/// `(shots F)^{-1/2}`.
pub fn cramer_rao_bound(fisher: f64, shots: usize) -> Result<f64> {
    if !(fisher > 0.0) || !fisher.is_finite() {
        return Err(invalid("Fisher information must be positive"));
    }
    if shots == 0 {
        return Err(invalid("shots must be positive"));
    }
    Ok(1.0 / sqrt(shots as f64 * fisher))
}

/// `log10(y) = alpha - beta log10(N)` fitted over `range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub alpha: f64,
    pub beta: f64,
    pub fit_range: [f64; 2],
    /// Root-mean-square residual in `log10(y)`.
    pub residual: f64,
    pub points_used: usize,
    /// In-range points dropped because `y <= 0` or not finite.
    pub rejected: usize,
}

pub fn power_law_fit(points: &[(f64, f64)], range: [f64; 2]) -> Result<ScalingFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut rejected = 0;
    for &(n, y) in points {
        if !(n >= range[0] && n <= range[1]) {
            continue;
        }
        if y > 0.0 && y.is_finite() && n > 0.0 {
            xs.push(log10(n));
            ys.push(log10(y));
        } else {
            rejected += 1;
        }
    }
    if xs.len() < 3 {
        return Err(invalid("a power-law fit needs at least 3 valid points in range"));
    }
    let k = xs.len();
    let design = DMatrix::from_fn(k, 2, |j, c| if c == 0 { 1.0 } else { -xs[j] });
    let sol = least_squares(design, DVector::from_vec(ys.clone()))?;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - (sol[0] - sol[1] * x)).powi(2)).sum();
    Ok(ScalingFit {
        alpha: sol[0],
        beta: sol[1],
        fit_range: range,
        residual: sqrt(ss / k as f64),
        points_used: k,
        rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneParamStats {
    pub mean_estimate: f64,
    pub variance: f64,
    pub gradient: [f64; 4],
}

/// `d f / d G_l` of `f = arccos(root(G))` by central differences with steps
/// scaled to each coefficient.
pub fn one_param_gradient(g: &[f64; 4]) -> Result<[f64; 4]> {
    let mut grad = [0.0; 4];
    for l in 0..4 {
        let step = 1e-5 * g[l].abs().max(1e-3);
        let (mut up, mut dn) = (*g, *g);
        up[l] += step;
        dn[l] -= step;
        let (fu, _) = conic::phase_from_g(&up)?;
        let (fd, _) = conic::phase_from_g(&dn)?;
        grad[l] = (fu - fd) / (2.0 * step);
    }
    Ok(grad)
}

/// Large-sample mean and variance of the one-parameter estimator by error
/// propagation through the cubic root.
pub fn one_param_analytic_stats(moments: &GCoefficientMoments, shots: usize) -> Result<OneParamStats> {
    if shots < 100 {
        return Err(invalid("the large-sample expansion needs at least 100 points per ellipse"));
    }
    let g = &moments.g_means;
    let (mean_estimate, _) = conic::phase_from_g(g)?;
    let grad = one_param_gradient(g)?;
    let mut var = 0.0;
    for j in 0..4 {
        for l in 0..4 {
            var += grad[j] * moments.g_cov[j][l] * grad[l];
        }
    }
    Ok(OneParamStats { mean_estimate, variance: var / shots as f64, gradient: grad })
}

/// How the fringe fit treats contrast and weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FringeSettings {
    pub known_contrast: bool,
    pub weighted: bool,
}

impl Default for FringeSettings {
    fn default() -> Self {
        Self { known_contrast: true, weighted: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignSpec {
    pub probe_a: ProbeSpec,
    pub probe_b: ProbeSpec,
    pub dphi: f64,
    pub noise: NoiseModel,
    pub shots: usize,
    pub ellipses: usize,
    pub methods: Vec<Method>,
    pub seed: u64,
    pub table_nodes: usize,
    #[serde(default)]
    pub fringe: FringeSettings,
}

impl CampaignSpec {
    pub fn new(probe_a: ProbeSpec, probe_b: ProbeSpec, dphi: f64, shots: usize, ellipses: usize, seed: u64) -> Self {
        Self {
            probe_a,
            probe_b,
            dphi,
            noise: NoiseModel::uniform(),
            shots,
            ellipses,
            methods: vec![Method::Trace],
            seed,
            table_nodes: DEFAULT_TABLE_NODES,
            fringe: FringeSettings::default(),
        }
    }

    pub fn with_methods(mut self, methods: &[Method]) -> Self {
        self.methods = methods.to_vec();
        self
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.probe_a.validate()?;
        self.probe_b.validate()?;
        ensure_finite("dphi", self.dphi)?;
        if self.ellipses < 2 {
            return Err(invalid("a campaign needs at least 2 ellipses"));
        }
        if self.methods.is_empty() {
            return Err(invalid("no estimator requested"));
        }
        if self.methods.contains(&Method::Fringe) && !self.noise.record_phase {
            return Err(invalid("the fringe method needs a recorded phase"));
        }
        self.noise.validate(self.shots)
    }

    /// FNV-1a digest of every field that influences the results.
    pub fn digest(&self) -> String {
        let mut h = FnvHasher::default();
        for p in [&self.probe_a, &self.probe_b] {
            h.write_u64(p.n_atoms as u64);
            h.write_u64(p.tau.to_bits());
            match p.nu {
                NuChoice::Auto => h.write_u8(0),
                NuChoice::Fixed(v) => {
                    h.write_u8(1);
                    h.write_u64(v.to_bits());
                }
            }
            h.write_u8(matches!(p.mode, ProbeMode::Gaussian) as u8);
        }
        h.write_u64(self.dphi.to_bits());
        match &self.noise.kind {
            crate::sampling::NoiseKind::UniformFull => h.write_u8(0),
            crate::sampling::NoiseKind::Fixed { phi } => {
                h.write_u8(1);
                h.write_u64(phi.to_bits());
            }
            crate::sampling::NoiseKind::Recorded { phases } => {
                h.write_u8(2);
                phases.iter().for_each(|p| h.write_u64(p.to_bits()));
            }
        }
        h.write_u64(self.noise.correlation_error_sigma.to_bits());
        h.write_u8(self.noise.record_phase as u8);
        for x in [self.shots, self.ellipses, self.table_nodes] {
            h.write_u64(x as u64);
        }
        self.methods.iter().for_each(|m| h.write(m.name().as_bytes()));
        h.write_u64(self.seed);
        h.write_u8(self.fringe.known_contrast as u8);
        h.write_u8(self.fringe.weighted as u8);
        alloc::format!("{:016x}", h.finish())
    }
}

/// Result of one estimator on one ellipse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum MethodOutcome {
    Accepted { estimate: PhaseEstimate },
    Rejected { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseOutcome {
    pub index: u64,
    pub outcomes: Vec<(Method, MethodOutcome)>,
}

impl EllipseOutcome {
    pub fn estimate(&self, method: Method) -> Option<f64> {
        self.outcomes.iter().find(|(m, _)| *m == method).and_then(|(_, o)| match o {
            MethodOutcome::Accepted { estimate } => Some(estimate.dphi_est),
            MethodOutcome::Rejected { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub accepted: usize,
    pub rejected: usize,
    pub clamped: usize,
    pub failed: bool,
    pub first_rejection: Option<String>,
    pub mean: Option<f64>,
    pub bias: Option<f64>,
    pub std_dev: Option<f64>,
    /// `std_dev / sqrt(accepted)`.
    pub bias_error: Option<f64>,
    /// `sqrt(shots) std_dev`.
    pub sigma_eff: Option<f64>,
    /// `SQL / std_dev`.
    pub gain: Option<f64>,
}

impl MethodReport {
    /// Standard error of `sigma_eff` for normally distributed estimates.
    pub fn sigma_eff_error(&self) -> Option<f64> {
        Some(self.sigma_eff? / sqrt(2.0 * (self.accepted.max(2) - 1) as f64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub digest: String,
    pub n_atoms_a: usize,
    pub n_atoms_b: usize,
    pub tau_a: f64,
    pub tau_b: f64,
    pub dphi: f64,
    pub shots: usize,
    pub ellipses: usize,
    pub seed: u64,
    pub sql: f64,
    pub crb: Option<f64>,
    pub methods: Vec<MethodReport>,
}

impl CampaignReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

/// Immutable, shareable state of a campaign: prepared probes, sampler tables
/// and model knowledge for the estimators.
pub struct CampaignPlan {
    spec: CampaignSpec,
    probe_a: PreparedProbe,
    probe_b: PreparedProbe,
    sampler: PairSampler,
    ctx: FitContext,
    fringe_a: FringeModel,
    fringe_b: FringeModel,
}

fn fringe_model(spec: &ProbeSpec, settings: &FringeSettings) -> Result<FringeModel> {
    let prof = closed_form::profile(spec.n_atoms, spec.tau)?;
    let contrast = if settings.known_contrast {
        FringeContrast::Known { value: prof.contrast }
    } else {
        FringeContrast::Free
    };
    Ok(FringeModel { contrast, noise: settings.weighted.then_some(prof) })
}

impl CampaignPlan {
    pub fn new(spec: CampaignSpec) -> Result<Self> {
        spec.validate()?;
        let a = PreparedProbe::new(&spec.probe_a)?;
        let b = if spec.probe_b == spec.probe_a { a.clone() } else { PreparedProbe::new(&spec.probe_b)? };
        Self::with_probes(spec, a, b)
    }

    /// Reuses prepared probes, which must match `spec`.
    pub fn with_probes(spec: CampaignSpec, probe_a: PreparedProbe, probe_b: PreparedProbe) -> Result<Self> {
        spec.validate()?;
        if probe_a.spec() != &spec.probe_a || probe_b.spec() != &spec.probe_b {
            return Err(invalid("prepared probes do not match the campaign spec"));
        }
        let sampler = PairSampler::new(&probe_a, &probe_b, spec.dphi, spec.table_nodes)?;
        let ctx = FitContext {
            contrast_a: closed_form::contrast(spec.probe_a.n_atoms, spec.probe_a.tau),
            contrast_b: closed_form::contrast(spec.probe_b.n_atoms, spec.probe_b.tau),
        };
        let fringe_a = fringe_model(&spec.probe_a, &spec.fringe)?;
        let fringe_b = fringe_model(&spec.probe_b, &spec.fringe)?;
        Ok(Self { spec, probe_a, probe_b, sampler, ctx, fringe_a, fringe_b })
    }

    pub fn spec(&self) -> &CampaignSpec {
        &self.spec
    }

    pub fn probes(&self) -> (&PreparedProbe, &PreparedProbe) {
        (&self.probe_a, &self.probe_b)
    }

    pub fn sampler(&self) -> &PairSampler {
        &self.sampler
    }

    pub fn sample(&self, index: u64) -> Result<crate::sampling::EllipseSample> {
        self.sampler.sample_ellipse(&self.spec.noise, self.spec.shots, self.spec.seed, index)
    }

    /// Samples ellipse `index` and applies every requested estimator.
    pub fn evaluate(&self, index: u64) -> Result<EllipseOutcome> {
        let sample = self.sample(index)?;
        let outcomes = self
            .spec
            .methods
            .iter()
            .map(|&m| {
                let r = match m {
                    Method::Fringe => hybrid::fringe_fit(&sample, &self.fringe_a, &self.fringe_b).map(|f| PhaseEstimate {
                        dphi_est: f.dphi_est,
                        method: Method::Fringe,
                        converged: true,
                        clamped: false,
                        iterations: 0,
                        residual: f.a.residual + f.b.residual,
                    }),
                    _ => conic::estimate(&sample.points, m, &self.ctx),
                };
                let o = match r {
                    Ok(estimate) if estimate.dphi_est.is_finite() => MethodOutcome::Accepted { estimate },
                    Ok(_) => MethodOutcome::Rejected { reason: "non-finite estimate".to_string() },
                    Err(e) => MethodOutcome::Rejected { reason: e.to_string() },
                };
                (m, o)
            })
            .collect();
        Ok(EllipseOutcome { index, outcomes })
    }

    /// Fixed-order reduction of per-ellipse outcomes.
    pub fn aggregate(&self, outcomes: &[EllipseOutcome]) -> CampaignReport {
        let mut ordered: Vec<&EllipseOutcome> = outcomes.iter().collect();
        ordered.sort_by_key(|o| o.index);
        let spec = &self.spec;
        let sql = closed_form::sql(spec.probe_a.n_atoms, spec.shots);
        let methods = spec
            .methods
            .iter()
            .map(|&m| {
                let mut values = Vec::with_capacity(ordered.len());
                let (mut rejected, mut clamped) = (0, 0);
                let mut first_rejection = None;
                for o in &ordered {
                    match o.outcomes.iter().find(|(k, _)| *k == m).map(|(_, r)| r) {
                        Some(MethodOutcome::Accepted { estimate }) => {
                            values.push(estimate.dphi_est);
                            clamped += estimate.clamped as usize;
                        }
                        Some(MethodOutcome::Rejected { reason }) => {
                            rejected += 1;
                            first_rejection.get_or_insert_with(|| reason.clone());
                        }
                        None => rejected += 1,
                    }
                }
                summarize(m, &values, rejected, clamped, first_rejection, spec, sql)
            })
            .collect();
        CampaignReport {
            digest: spec.digest(),
            n_atoms_a: spec.probe_a.n_atoms,
            n_atoms_b: spec.probe_b.n_atoms,
            tau_a: spec.probe_a.tau,
            tau_b: spec.probe_b.tau,
            dphi: spec.dphi,
            shots: spec.shots,
            ellipses: spec.ellipses,
            seed: spec.seed,
            sql,
            crb: None,
            methods,
        }
    }
}

fn summarize(
    method: Method,
    values: &[f64],
    rejected: usize,
    clamped: usize,
    first_rejection: Option<String>,
    spec: &CampaignSpec,
    sql: f64,
) -> MethodReport {
    let k = values.len();
    let mut r = MethodReport {
        method,
        accepted: k,
        rejected,
        clamped,
        failed: k == 0,
        first_rejection,
        mean: None,
        bias: None,
        std_dev: None,
        bias_error: None,
        sigma_eff: None,
        gain: None,
    };
    if k == 0 {
        return r;
    }
    let mean = values.iter().sum::<f64>() / k as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / k as f64;
    let sd = sqrt(var);
    r.mean = Some(mean);
    r.bias = Some(mean - spec.dphi);
    r.std_dev = Some(sd);
    r.bias_error = Some(sd / sqrt(k as f64));
    r.sigma_eff = Some(sqrt(spec.shots as f64) * sd);
    r.gain = (sd > 0.0).then(|| sql / sd);
    r
}

/// Report together with the per-ellipse outcomes it summarises.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignRun {
    pub report: CampaignReport,
    pub outcomes: Vec<EllipseOutcome>,
}

/// Sequential campaign; parallel drivers map [`CampaignPlan::evaluate`] over
/// the ellipse indices and call [`CampaignPlan::aggregate`].
pub fn run_campaign(spec: CampaignSpec) -> Result<CampaignRun> {
    let plan = CampaignPlan::new(spec)?;
    let outcomes = (0..plan.spec.ellipses as u64).map(|i| plan.evaluate(i)).collect::<Result<Vec<_>>>()?;
    let report = plan.aggregate(&outcomes);
    Ok(CampaignRun { report, outcomes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::PI;

    #[test]
    fn crb_examples() {
        assert_eq!(cramer_rao_bound(4.0, 1).unwrap(), 0.5);
        let a = cramer_rao_bound(3.0, 10).unwrap();
        let b = cramer_rao_bound(3.0, 40).unwrap();
        assert!((a / b - 2.0).abs() < 1e-15);
        assert!(cramer_rao_bound(0.0, 10).is_err());
        assert!(cramer_rao_bound(-1.0, 10).is_err());
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<(f64, f64)> = [100.0, 200.0, 300.0, 500.0, 700.0, 1000.0]
            .iter()
            .map(|&n: &f64| (n, 7.0 * libm::pow(n, -2.0 / 3.0)))
            .collect();
        let f = power_law_fit(&pts, [100.0, 1000.0]).unwrap();
        assert!((f.beta - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.alpha - log10(7.0)).abs() < 1e-12);
        let f2 = power_law_fit(&[(300.0, 1.0), (400.0, -1.0), (500.0, 0.5), (700.0, 0.2), (900.0, 0.1)], [300.0, 1000.0])
            .unwrap();
        assert_eq!(f2.rejected, 1);
        assert!(power_law_fit(&pts[..2], [0.0, 1e9]).is_err());
    }

    #[test]
    fn gradient_at_infinite_means() {
        for d in [0.3, PI / 4.0, 1.2, 2.2] {
            let g = closed_form::g_means_infinite(d);
            let grad = one_param_gradient(&g).unwrap();
            let h = libm::cos(d);
            for (l, gl) in grad.iter().enumerate() {
                let want = -4.0 / sqrt(1.0 - h * h) / (1.0 + 2.0 * h * h) * libm::pow(h, l as f64);
                assert!((gl - want).abs() < 1e-6, "d={d} l={l}: {gl} vs {want}");
            }
        }
    }

    #[test]
    fn infinite_means_are_unbiased() {
        let d = 0.9;
        let m = GCoefficientMoments {
            g_means: closed_form::g_means_infinite(d),
            g_cov: [[0.0; 4]; 4],
            sample_size: 1,
            contrast_a: 1.0,
            contrast_b: 1.0,
            quadrature_nodes: 0,
        };
        let s = one_param_analytic_stats(&m, 1000).unwrap();
        assert!((s.mean_estimate - d).abs() < 1e-12);
        assert!(one_param_analytic_stats(&m, 50).is_err());
    }

    #[test]
    fn fisher_is_positive_and_checked() {
        let a = PreparedProbe::new(&ProbeSpec::squeezed(30, 0.05)).unwrap();
        let f = fisher_information_checked(&a, &a, 0.7).unwrap();
        assert!(f.information > 0.0);
        assert!(f.fd_residual.unwrap() < FISHER_FD_TOL);
        let g = PreparedProbe::new(&ProbeSpec::squeezed(30, 0.05).with_mode(ProbeMode::Gaussian)).unwrap();
        assert!(matches!(fisher_information(&g, &g, 0.7), Err(Error::RequiresExactMode(_))));
    }

    #[test]
    fn fisher_matches_brute_force_small_n() {
        // Direct evaluation of sum (dP)^2 / P with the joint grid built from
        // freshly evaluated distributions on a fine midpoint grid.
        let a = PreparedProbe::new(&ProbeSpec::squeezed(4, 0.3)).unwrap();
        let dphi = 0.8;
        let m = 4000;
        let h = 1e-5;
        let grid = |d: f64| {
            let mut g = [[0.0; 5]; 5];
            for j in 0..m {
                let phi = 2.0 * PI * (j as f64 + 0.5) / m as f64;
                let pa = a.distribution(phi + d / 2.0).probabilities;
                let pb = a.distribution(phi - d / 2.0).probabilities;
                for x in 0..5 {
                    for y in 0..5 {
                        g[x][y] += pa[x] * pb[y] / m as f64;
                    }
                }
            }
            g
        };
        let (p, up, dn) = (grid(dphi), grid(dphi + h), grid(dphi - h));
        let mut want = 0.0;
        for x in 0..5 {
            for y in 0..5 {
                let d = (up[x][y] - dn[x][y]) / (2.0 * h);
                want += d * d / p[x][y];
            }
        }
        let f = fisher_information(&a, &a, dphi).unwrap().information;
        assert!((f - want).abs() / want < 1e-7, "{f} vs {want}");
    }

    #[test]
    fn campaign_is_deterministic_and_ordered() {
        let spec = CampaignSpec::new(ProbeSpec::coherent(60), ProbeSpec::coherent(60), 1.0, 50, 6, 42)
            .with_methods(&[Method::Trace, Method::OneParameter]);
        let a = run_campaign(spec.clone()).unwrap();
        let b = run_campaign(spec.clone()).unwrap();
        assert_eq!(a, b);
        let plan = CampaignPlan::new(spec).unwrap();
        let mut rev: Vec<EllipseOutcome> = (0..6).rev().map(|i| plan.evaluate(i).unwrap()).collect();
        assert_eq!(plan.aggregate(&rev), a.report);
        rev.truncate(3);
        assert_eq!(plan.aggregate(&rev).methods[0].accepted, 3);
        let r = a.report.method(Method::Trace).unwrap();
        assert_eq!(r.bias_error.unwrap(), r.std_dev.unwrap() / sqrt(r.accepted as f64));
        assert_eq!(r.sigma_eff.unwrap(), sqrt(50.0) * r.std_dev.unwrap());
    }

    #[test]
    fn fringe_requires_phase_record() {
        let spec = CampaignSpec::new(ProbeSpec::coherent(60), ProbeSpec::coherent(60), 0.0, 50, 4, 1)
            .with_methods(&[Method::Fringe]);
        assert!(CampaignPlan::new(spec.clone()).is_err());
        let ok = spec.with_noise(NoiseModel::recording(0.0));
        let run = run_campaign(ok).unwrap();
        assert_eq!(run.report.methods[0].accepted, 4);
    }

    #[test]
    fn digest_tracks_inputs() {
        let s = CampaignSpec::new(ProbeSpec::coherent(60), ProbeSpec::coherent(60), 1.0, 50, 6, 42);
        let mut t = s.clone();
        assert_eq!(s.digest(), t.digest());
        t.seed = 43;
        assert_ne!(s.digest(), t.digest());
    }
}
