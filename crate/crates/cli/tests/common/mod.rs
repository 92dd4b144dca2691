//! Invariant checks shared by the property suite and the acceptance gate.
//!
//! Every check returns `Ok(detail)` or `Err(reason)`. Randomised checks run a
//! proptest runner with a fixed RNG so failures reproduce.

#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, FRAC_PI_8, PI};

use diffsense::compare::{run_campaign_parallel, run_plan, ProbeCache};
use diffsense_core::closed_form::{
    bias_approximation, g_means_closed_form, g_moments_prepared, g_means_infinite, profile, tau_star, BiasRegime, TauStarMethod,
};
use diffsense_core::conic::{
    ellipse_points, estimate, fit_geometric, fit_trace, geometric_init, phase_from_g, FitContext, Method,
    ScatterMatrices,
};
use diffsense_core::hybrid::{fit_single_fringe, FringeContrast, FringeModel};
use diffsense_core::sampling::{joint_distribution, NoiseModel, PairSampler};
use diffsense_core::spin::{Axis, CollectiveSpinState, PreparedProbe, ProbeMode, ProbeSpec};
use diffsense_core::stats::{
    fisher_information, power_law_fit, CampaignReport, CampaignSpec, MethodReport,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRng, TestRunner};

pub type Check = fn() -> Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    let config = Config { cases, failure_persistence: None, ..Config::default() };
    let rng = TestRng::deterministic_rng(config.rng_algorithm);
    TestRunner::new_with_rng(config, rng)
}

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<String, String> {
    runner(cases).run(&strategy, test).map_err(|e| e.to_string())?;
    Ok(format!("{cases} cases"))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn core_err(e: diffsense_core::Error) -> String {
    e.to_string()
}

pub fn exact_tau_star(n: usize) -> f64 {
    tau_star(n, TauStarMethod::ExactBalance).unwrap()
}

pub fn formula_tau_star(n: usize) -> f64 {
    tau_star(n, TauStarMethod::Formula).unwrap()
}

/// Two identical probes at `tau`, trace fit.
pub fn symmetric_campaign(n: usize, tau: f64, dphi: f64, shots: usize, ellipses: usize, seed: u64) -> CampaignReport {
    let p = ProbeSpec::squeezed(n, tau);
    run_campaign_parallel(CampaignSpec::new(p, p, dphi, shots, ellipses, seed)).expect("campaign runs").report
}

pub fn trace_report(r: &CampaignReport) -> &MethodReport {
    r.method(Method::Trace).expect("trace requested")
}

/// Standard error of a sample variance of normally distributed values.
pub fn variance_error(var: f64, count: usize) -> f64 {
    var * (2.0 / (count as f64 - 1.0)).sqrt()
}

/// Chi-square quantile by the Wilson-Hilferty approximation.
pub fn chi_square_quantile(dof: f64, z: f64) -> f64 {
    let a = 2.0 / (9.0 * dof);
    dof * (1.0 - a + z * a.sqrt()).powi(3)
}

pub fn unitarity() -> Result<String, String> {
    let strategy = (2usize..120, 0.0..0.3f64, prop::collection::vec((0usize..3, -PI..PI), 1..5));
    run(48, strategy, |(n, tau, rotations)| {
        let mut s = CollectiveSpinState::coherent(n).unwrap();
        s.apply_oat(tau);
        for (axis, angle) in rotations {
            s.apply_rotation([Axis::X, Axis::Y, Axis::Z][axis], angle).unwrap();
            s.apply_oat(0.5 * tau);
        }
        prop_assert!((s.norm_sqr() - 1.0).abs() < 1e-10, "norm^2 = {}", s.norm_sqr());
        Ok(())
    })
}

pub fn parity_and_normalization() -> Result<String, String> {
    run(48, (2usize..150, 0.0..3.0f64, -PI..PI), |(n, t, phi)| {
        let tau = t * exact_tau_star(n.max(4));
        let p = PreparedProbe::new(&ProbeSpec::squeezed(n, tau)).unwrap();
        let d = p.distribution(phi);
        let e = p.distribution(phi + PI);
        prop_assert!((d.total() - 1.0).abs() < 1e-12, "total {}", d.total());
        for i in 0..=n {
            let diff = (d.probabilities[i] - e.probabilities[n - i]).abs();
            prop_assert!(diff < 1e-14, "P(z|phi+pi) != P(-z|phi) at i = {i}: {diff:e}");
        }
        Ok(())
    })
}

pub fn fringe_and_variance_laws() -> Result<String, String> {
    run(32, (2usize..200, 0.0..3.0f64, -PI..PI), |(n, t, phi)| {
        let tau = t * exact_tau_star(n.max(4));
        let p = PreparedProbe::new(&ProbeSpec::squeezed(n, tau)).unwrap();
        let prof = profile(n, tau).unwrap();
        let d = p.distribution(phi);
        let dm = (d.mean() - prof.mean(phi)).abs();
        prop_assert!(dm <= 1e-9 * prof.contrast, "mean off by {dm:e}");
        let v = prof.variance(phi);
        let dv = (d.variance() - v).abs();
        prop_assert!(dv <= 1e-8 * v.max(1.0 / (n * n) as f64), "variance off by {dv:e} (closed form {v:e})");
        Ok(())
    })
}

pub fn gaussian_mode_converges() -> Result<String, String> {
    // Fixed tau N^{5/6}, mid-fringe: the total-variation distance to the
    // exact distribution must shrink as N grows. Away from mid-fringe the
    // exact distribution is skewed and the distance levels off near 0.04.
    let mut tvs = Vec::new();
    for n in [100usize, 200, 500] {
        let spec = ProbeSpec::squeezed(n, formula_tau_star(n));
        let exact = PreparedProbe::new(&spec).map_err(core_err)?;
        let gauss = PreparedProbe::new(&spec.with_mode(ProbeMode::Gaussian)).map_err(core_err)?;
        let (a, b) = (exact.distribution(0.0), gauss.distribution(0.0));
        tvs.push(0.5 * a.probabilities.iter().zip(&b.probabilities).map(|(x, y)| (x - y).abs()).sum::<f64>());
    }
    ensure(tvs.windows(2).all(|w| w[1] < w[0]), || format!("TV not decreasing: {tvs:?}"))?;
    Ok(format!("TV at N = 100, 200, 500: {:.2e}, {:.2e}, {:.2e}", tvs[0], tvs[1], tvs[2]))
}

pub fn tau_star_balance() -> Result<String, String> {
    run(64, 4usize..2000, |n| {
        let t = exact_tau_star(n);
        let p = profile(n, t).unwrap();
        let d = (p.var_mid_fringe - p.var_quadrature).abs();
        prop_assert!(d < 1e-10, "N = {n}: |var_mid - var_quad| = {d:e}");
        Ok(())
    })
}

pub fn cubic_root_consistency() -> Result<String, String> {
    run(256, 0.01..(PI - 0.01), |dphi| {
        let g = g_means_infinite(dphi);
        let (est, _) = phase_from_g(&g).unwrap();
        let h = est.cos();
        let residual = g[0] + h * (g[1] + h * (g[2] + h * g[3]));
        prop_assert!(residual.abs() < 1e-12, "cubic residual {residual:e}");
        prop_assert!((est - dphi).abs() < 1e-7, "root {est} for dphi {dphi}");
        Ok(())
    })
}

pub fn closed_form_g_means() -> Result<String, String> {
    let n = 200;
    let mut worst: f64 = 0.0;
    for tau in [0.0, exact_tau_star(n)] {
        let p = PreparedProbe::new(&ProbeSpec::squeezed(n, tau)).map_err(core_err)?;
        for dphi in [FRAC_PI_8, FRAC_PI_4, 1.0] {
            let numeric = g_moments_prepared(&p, &p, dphi).map_err(core_err)?.g_means;
            let closed = g_means_closed_form(n, tau, dphi).map_err(core_err)?;
            for l in 0..4 {
                worst = worst.max(((numeric[l] - closed[l]) / numeric[l]).abs());
            }
        }
    }
    ensure(worst < 0.01, || format!("closed-form G off by {:.3}%", 100.0 * worst))?;
    Ok(format!("max relative deviation {:.2e}", worst))
}

pub fn bias_decays_as_inverse_n() -> Result<String, String> {
    let pts: Vec<(f64, f64)> = [100usize, 200, 500, 1000, 2000]
        .iter()
        .map(|&n| (n as f64, bias_approximation(n, BiasRegime::Coherent, FRAC_PI_4).unwrap().abs()))
        .collect();
    let fit = power_law_fit(&pts, [100.0, 2000.0]).map_err(core_err)?;
    ensure((fit.beta - 1.0).abs() <= 0.05, || format!("exponent {}", fit.beta))?;
    Ok(format!("exponent {:.4}", fit.beta))
}

pub fn joint_grid_symmetry() -> Result<String, String> {
    run(24, (2usize..40, 2usize..40, 0.0..2.0f64, -PI..PI), |(na, nb, t, dphi)| {
        let a = PreparedProbe::new(&ProbeSpec::squeezed(na, t * exact_tau_star(na.max(4)))).unwrap();
        let b = PreparedProbe::new(&ProbeSpec::squeezed(nb, t * exact_tau_star(nb.max(4)))).unwrap();
        let g = joint_distribution(&a, &b, dphi).unwrap();
        prop_assert!((g.total() - 1.0).abs() < 1e-12, "total {}", g.total());
        for ia in 0..=na {
            for ib in 0..=nb {
                let d = (g.get(ia, ib) - g.get(na - ia, nb - ib)).abs();
                prop_assert!(d < 1e-10, "asymmetry {d:e} at ({ia}, {ib})");
            }
        }
        Ok(())
    })
}

pub fn sampler_goodness_of_fit() -> Result<String, String> {
    let n = 30;
    let dphi = 0.7;
    let shots = 1_000_000;
    let p = PreparedProbe::new(&ProbeSpec::squeezed(n, exact_tau_star(n))).map_err(core_err)?;
    let grid = joint_distribution(&p, &p, dphi).map_err(core_err)?;
    let sampler = PairSampler::new(&p, &p, dphi, 4096).map_err(core_err)?;
    let sample = sampler.sample_ellipse(&NoiseModel::uniform(), shots, 2024, 0).map_err(core_err)?;
    let idx = |z: f64| ((z + 1.0) * n as f64 / 2.0).round() as usize;
    let mut counts = vec![0u64; (n + 1) * (n + 1)];
    for q in &sample.points {
        counts[idx(q[0]) * (n + 1) + idx(q[1])] += 1;
    }
    // Cells with fewer than 5 expected counts are pooled into one bin.
    let (mut chi2, mut cells) = (0.0, 0usize);
    let (mut pooled_obs, mut pooled_exp) = (0.0, 0.0);
    for (c, &pr) in counts.iter().zip(&grid.grid) {
        let e = pr * shots as f64;
        if e < 5.0 {
            pooled_obs += *c as f64;
            pooled_exp += e;
        } else {
            chi2 += (*c as f64 - e).powi(2) / e;
            cells += 1;
        }
    }
    if pooled_exp >= 5.0 {
        chi2 += (pooled_obs - pooled_exp).powi(2) / pooled_exp;
        cells += 1;
    }
    let dof = (cells - 1) as f64;
    let critical = chi_square_quantile(dof, 3.0902);
    ensure(chi2 < critical, || format!("chi2 = {chi2:.1} over {dof} dof exceeds {critical:.1}"))?;
    Ok(format!("chi2 = {chi2:.1}, {dof} dof, 0.1% critical value {critical:.1}"))
}

pub fn sampling_determinism() -> Result<String, String> {
    let p = PreparedProbe::new(&ProbeSpec::squeezed(30, 0.05)).map_err(core_err)?;
    let sampler = PairSampler::new(&p, &p, 0.4, 1024).map_err(core_err)?;
    let noise = NoiseModel::recording(0.1);
    run(64, (any::<u64>(), any::<u64>(), 5usize..200), |(seed, stream, shots)| {
        let x = sampler.sample_ellipse(&noise, shots, seed, stream).unwrap();
        let y = sampler.sample_ellipse(&noise, shots, seed, stream).unwrap();
        prop_assert_eq!(&x, &y);
        Ok(())
    })?;
    let spec = CampaignSpec::new(ProbeSpec::squeezed(40, 0.03), ProbeSpec::coherent(40), 0.9, 60, 16, 77)
        .with_methods(&[Method::Trace, Method::OneParameter]);
    let seq = diffsense_core::stats::run_campaign(spec.clone()).map_err(core_err)?;
    for threads in [1, 3] {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().map_err(|e| e.to_string())?;
        let par = pool.install(|| run_campaign_parallel(spec.clone())).map_err(core_err)?;
        ensure(par == seq, || format!("{threads}-thread campaign differs from the sequential one"))?;
    }
    Ok("repeat sampling and 1/3-thread campaigns are bit-identical".into())
}

fn noisy_ellipse(ca: f64, cb: f64, dphi: f64, noise: &[(f64, f64)]) -> Vec<[f64; 2]> {
    ellipse_points(ca, cb, dphi, noise.len())
        .into_iter()
        .zip(noise)
        .map(|(p, (ea, eb))| [p[0] + ea, p[1] + eb])
        .collect()
}

fn ellipse_strategy() -> impl Strategy<Value = (f64, f64, Vec<(f64, f64)>)> {
    (0.6..0.95f64, 0.3..2.8f64, prop::collection::vec((-0.03..0.03f64, -0.03..0.03f64), 40..80))
}

fn estimates(points: &[[f64; 2]], ctx: &FitContext) -> Vec<Option<f64>> {
    Method::ELLIPSE_FITS.iter().map(|&m| estimate(points, m, ctx).ok().map(|e| e.dphi_est)).collect()
}

fn same_estimates(x: &[Option<f64>], y: &[Option<f64>], what: &str) -> Result<(), TestCaseError> {
    for (m, (a, b)) in Method::ELLIPSE_FITS.iter().zip(x.iter().zip(y)) {
        match (a, b) {
            (Some(a), Some(b)) => {
                let tol = if *m == Method::Geometric { 1e-8 } else { 1e-9 };
                prop_assert!((a - b).abs() < tol, "{} changes under {what}: {a} vs {b}", m.name());
            }
            (None, None) => {}
            _ => return Err(TestCaseError::fail(format!("{} accepts only one of the {what} pair", m.name()))),
        }
    }
    Ok(())
}

pub fn fit_equivariances() -> Result<String, String> {
    run(48, (ellipse_strategy(), any::<u64>()), |((c, dphi, noise), perm_seed)| {
        let pts = noisy_ellipse(c, c, dphi, &noise);
        let ctx = FitContext { contrast_a: c, contrast_b: c };
        let base = estimates(&pts, &ctx);
        let swapped: Vec<[f64; 2]> = pts.iter().map(|p| [p[1], p[0]]).collect();
        same_estimates(&base, &estimates(&swapped, &ctx), "swap")?;
        let flipped: Vec<[f64; 2]> = pts.iter().map(|p| [-p[0], -p[1]]).collect();
        same_estimates(&base, &estimates(&flipped, &ctx), "sign flip")?;
        let mut permuted = pts.clone();
        let mut state = perm_seed | 1;
        for i in (1..permuted.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            permuted.swap(i, (state % (i as u64 + 1)) as usize);
        }
        same_estimates(&base, &estimates(&permuted, &ctx), "permutation")?;
        Ok(())
    })
}

pub fn unequal_contrast_swap() -> Result<String, String> {
    run(48, (0.5..0.95f64, 0.5..0.95f64, 0.3..2.8f64), |(ca, cb, dphi)| {
        let pts = ellipse_points(ca, cb, dphi, 60);
        let swapped: Vec<[f64; 2]> = pts.iter().map(|p| [p[1], p[0]]).collect();
        let x = estimate(&pts, Method::OneParameter, &FitContext { contrast_a: ca, contrast_b: cb }).unwrap();
        let y = estimate(&swapped, Method::OneParameter, &FitContext { contrast_a: cb, contrast_b: ca }).unwrap();
        prop_assert!((x.dphi_est - y.dphi_est).abs() < 1e-12);
        Ok(())
    })
}

pub fn trace_fit_optimality() -> Result<String, String> {
    let strategy = (ellipse_strategy(), prop::collection::vec(prop::array::uniform6(-2.0..2.0f64), 1000));
    run(16, strategy, |((c, dphi, noise), candidates)| {
        let pts = noisy_ellipse(c, c, dphi, &noise);
        let fit = fit_trace(&pts).unwrap();
        let s = ScatterMatrices::new(&pts);
        let best = s.objective(&fit.v);
        prop_assert!((fit.v[0] + fit.v[2] - 1.0).abs() < 1e-12);
        for mut v in candidates {
            // Project onto a + c = 1.
            let shift = 0.5 * (1.0 - v[0] - v[2]);
            v[0] += shift;
            v[2] += shift;
            let o = s.objective(&v);
            prop_assert!(o >= best * (1.0 - 1e-9) - 1e-15, "v^T S v = {o:e} below the fit {best:e}");
        }
        Ok(())
    })
}

pub fn geometric_dominance() -> Result<String, String> {
    run(48, ellipse_strategy(), |(c, dphi, noise)| {
        let pts = noisy_ellipse(c, c, dphi, &noise);
        let init = geometric_init(&pts).unwrap();
        let fit = fit_geometric(&pts, &init).unwrap();
        prop_assert!(fit.objective <= fit.initial_objective, "{} > {}", fit.objective, fit.initial_objective);
        Ok(())
    })
}

pub fn noiseless_recovery() -> Result<String, String> {
    let mut worst: f64 = 0.0;
    for dphi in [PI / 16.0, FRAC_PI_8, FRAC_PI_4, 3.0 * FRAC_PI_8, FRAC_PI_2] {
        for c in [1.0, 0.9, 0.61] {
            let pts = ellipse_points(c, c, dphi, 100);
            let ctx = FitContext { contrast_a: c, contrast_b: c };
            for m in Method::ELLIPSE_FITS {
                let e = estimate(&pts, m, &ctx).map_err(|e| format!("{} at dphi = {dphi}, C = {c}: {e}", m.name()))?;
                worst = worst.max((e.dphi_est - dphi).abs());
            }
        }
    }
    ensure(worst < 1e-7, || format!("max error {worst:e}"))?;
    Ok(format!("max |error| {worst:.2e} over 5 phases, 3 contrasts, 4 methods"))
}

fn wrap(x: f64) -> f64 {
    x - 2.0 * PI * (x / (2.0 * PI)).round()
}

pub fn fringe_noiseless_free_contrast() -> Result<String, String> {
    run(64, (0.3..1.0f64, -PI..PI, prop::collection::vec(-PI..PI, 3..40)), |(c, offset, phases)| {
        prop_assume!(phases.iter().any(|p| (p - phases[0]).abs() > 0.1));
        let z: Vec<f64> = phases.iter().map(|&ph| -c * (ph + offset).sin()).collect();
        let fit = fit_single_fringe(&z, &phases, &FringeModel::unweighted(FringeContrast::Free)).unwrap();
        prop_assert!((fit.contrast - c).abs() < 1e-10, "contrast {} vs {c}", fit.contrast);
        prop_assert!(wrap(fit.offset - offset).abs() < 1e-10, "offset {} vs {offset}", fit.offset);
        Ok(())
    })
}

pub fn fringe_common_shift() -> Result<String, String> {
    let strategy = (0.5..1.0f64, -PI..PI, -PI..PI, prop::collection::vec((-PI..PI, -0.05..0.05f64, -0.05..0.05f64), 20..60));
    run(64, strategy, |(c, dphi, shift, shots)| {
        let za: Vec<f64> = shots.iter().map(|(ph, e, _)| -c * (ph + dphi / 2.0).sin() + e).collect();
        let zb: Vec<f64> = shots.iter().map(|(ph, _, e)| -c * (ph - dphi / 2.0).sin() + e).collect();
        let phases: Vec<f64> = shots.iter().map(|s| s.0).collect();
        let moved: Vec<f64> = phases.iter().map(|p| p + shift).collect();
        for model in [FringeModel::unweighted(FringeContrast::Free), FringeModel::unweighted(FringeContrast::Known { value: c })] {
            let d0 = fit_single_fringe(&za, &phases, &model).unwrap().offset - fit_single_fringe(&zb, &phases, &model).unwrap().offset;
            let d1 = fit_single_fringe(&za, &moved, &model).unwrap().offset - fit_single_fringe(&zb, &moved, &model).unwrap().offset;
            prop_assert!(wrap(d0 - d1).abs() < 1e-9, "difference moved from {d0} to {d1}");
        }
        Ok(())
    })
}

pub fn unbiased_at_tau_star() -> Result<String, String> {
    let mut lines = Vec::new();
    let mut ok = true;
    for n in [300usize, 500] {
        for dphi in [PI / 16.0, FRAC_PI_8] {
            let r = symmetric_campaign(n, exact_tau_star(n), dphi, 1000, 1000, 101);
            let t = trace_report(&r);
            let (b, se) = (t.bias.unwrap(), t.bias_error.unwrap());
            ok &= b.abs() <= 3.0 * se;
            lines.push(format!("N={n} dphi={dphi:.4} bias={b:+.1e}+-{se:.1e} ({:.1} SE)", b / se));
        }
    }
    let detail = lines.join("; ");
    ensure(ok, || format!("bias beyond 3 SE: {detail}"))?;
    Ok(detail)
}

fn sigma(r: &CampaignReport) -> (f64, f64) {
    let t = trace_report(r);
    (t.sigma_eff.unwrap(), t.sigma_eff_error().unwrap())
}

pub fn probe_ordering() -> Result<String, String> {
    let n = 500;
    let ts = exact_tau_star(n);
    let run_pair = |ta: f64, tb: f64| {
        let spec = CampaignSpec::new(ProbeSpec::squeezed(n, ta), ProbeSpec::squeezed(n, tb), FRAC_PI_4, 1000, 1000, 202);
        sigma(&run_campaign_parallel(spec).expect("campaign runs").report)
    };
    let two = run_pair(ts, ts);
    let one = run_pair(ts, 0.0);
    let coh = run_pair(0.0, 0.0);
    for ((lo, hi), what) in [((two, one), "two-squeezed vs one-squeezed"), ((one, coh), "one-squeezed vs coherent")] {
        let gap = hi.0 - lo.0;
        let se = (lo.1 * lo.1 + hi.1 * hi.1).sqrt();
        ensure(gap >= 3.0 * se, || format!("{what}: gap {gap:.4} below 3 SE ({se:.4})"))?;
    }
    Ok(format!("sigma_eff two/one/none = {:.4} / {:.4} / {:.4}", two.0, one.0, coh.0))
}

pub fn single_squeezed_ceiling() -> Result<String, String> {
    let mut lines = Vec::new();
    for n in [100usize, 300, 500] {
        let spec = CampaignSpec::new(ProbeSpec::squeezed(n, exact_tau_star(n)), ProbeSpec::coherent(n), FRAC_PI_4, 1000, 1000, 303);
        let r = run_campaign_parallel(spec).map_err(core_err)?.report;
        let t = trace_report(&r);
        let gain = t.gain.unwrap();
        let rel = 1.0 / (2.0 * (t.accepted as f64 - 1.0)).sqrt();
        ensure(gain <= std::f64::consts::SQRT_2 * (1.0 + 3.0 * rel), || format!("N = {n}: gain {gain:.3} above sqrt 2"))?;
        lines.push(format!("N={n} gain={gain:.3}"));
    }
    Ok(lines.join("; "))
}

pub fn crb_consistency() -> Result<String, String> {
    let n = 500;
    let dphi = PI / 16.0;
    let spec = ProbeSpec::squeezed(n, exact_tau_star(n));
    let cache = ProbeCache::default();
    let p = cache.prepare(&spec).map_err(core_err)?;
    let f = fisher_information(&p, &p, dphi).map_err(core_err)?.information;
    let r = run_plan(&cache.plan(CampaignSpec::new(spec, spec, dphi, 1000, 1000, 404)).map_err(core_err)?).map_err(core_err)?.report;
    let (s, se) = sigma(&r);
    let sigma_f = 1.0 / f.sqrt();
    ensure(s >= sigma_f - 3.0 * se, || format!("sigma_eff {s:.4} below the bound {sigma_f:.4}"))?;
    Ok(format!("sigma_eff {s:.4} +- {se:.4} >= sigma_F {sigma_f:.4}"))
}

pub fn shots_scaling() -> Result<String, String> {
    let n = 100;
    let mut stds = Vec::new();
    let mut biases = Vec::new();
    for shots in [100usize, 300, 1000, 3000] {
        let r = symmetric_campaign(n, 0.0, FRAC_PI_4, shots, 400, 505);
        let t = trace_report(&r);
        stds.push((shots as f64, t.std_dev.unwrap()));
        biases.push((t.bias.unwrap(), t.bias_error.unwrap()));
    }
    let fit = power_law_fit(&stds, [100.0, 3000.0]).map_err(core_err)?;
    ensure((fit.beta - 0.5).abs() <= 0.05, || format!("std-dev exponent {:.3}", fit.beta))?;
    let (b1, b2) = (biases[2], biases[3]);
    let se = (b1.1 * b1.1 + b2.1 * b2.1).sqrt();
    ensure((b1.0 - b2.0).abs() <= 3.0 * se, || format!("bias drifts from {:.2e} to {:.2e}", b1.0, b2.0))?;
    Ok(format!("std-dev exponent {:.3}; bias {:.2e} -> {:.2e}", fit.beta, b1.0, b2.0))
}

pub fn correlation_error_degrades() -> Result<String, String> {
    let n = 200;
    let probe = ProbeSpec::squeezed(n, exact_tau_star(n));
    let cache = ProbeCache::default();
    let mut values: Vec<(f64, f64, f64)> = Vec::new();
    for s in [0.0, 0.05, 0.2, 0.5] {
        let spec = CampaignSpec::new(probe, probe, 0.0, 1000, 1000, 606)
            .with_methods(&[Method::Fringe])
            .with_noise(NoiseModel::recording(s));
        let r = run_plan(&cache.plan(spec).map_err(core_err)?).map_err(core_err)?.report;
        let m = r.method(Method::Fringe).unwrap();
        values.push((s, m.sigma_eff.unwrap(), m.sigma_eff_error().unwrap()));
    }
    for w in values.windows(2) {
        let ((s0, a, ea), (s1, b, eb)) = (w[0], w[1]);
        let se = (ea * ea + eb * eb).sqrt();
        ensure(b >= a - 2.0 * se, || format!("sigma_eff falls from {a:.4} at {s0} to {b:.4} at {s1}"))?;
    }
    let first = values[0].1;
    let last = values[values.len() - 1].1;
    ensure(last > first, || "no degradation at sigma_corr = 0.5".into())?;
    Ok(values.iter().map(|(s, v, _)| format!("{s}: {v:.4}")).collect::<Vec<_>>().join(", "))
}

/// Checks whose target is missed at the resolution of the test. They still
/// run and report their failure; see the acceptance gate.
pub const KNOWN_DEVIATIONS: &[&str] = &["unbiased at tau*"];

/// Every invariant, cheap ones first.
pub fn all_checks() -> Vec<(&'static str, Check)> {
    vec![
        ("unitarity", unitarity as Check),
        ("parity and normalization", parity_and_normalization),
        ("fringe and variance laws", fringe_and_variance_laws),
        ("gaussian mode converges", gaussian_mode_converges),
        ("tau* balance", tau_star_balance),
        ("cubic root consistency", cubic_root_consistency),
        ("closed-form G means", closed_form_g_means),
        ("bias decays as 1/N", bias_decays_as_inverse_n),
        ("joint grid symmetry", joint_grid_symmetry),
        ("sampler goodness of fit", sampler_goodness_of_fit),
        ("sampling determinism", sampling_determinism),
        ("fit equivariances", fit_equivariances),
        ("unequal-contrast swap", unequal_contrast_swap),
        ("trace-fit optimality", trace_fit_optimality),
        ("geometric dominance", geometric_dominance),
        ("noiseless recovery", noiseless_recovery),
        ("fringe free-contrast recovery", fringe_noiseless_free_contrast),
        ("fringe common shift", fringe_common_shift),
        ("unbiased at tau*", unbiased_at_tau_star),
        ("probe ordering", probe_ordering),
        ("single-squeezed ceiling", single_squeezed_ceiling),
        ("CRB consistency", crb_consistency),
        ("shots scaling", shots_scaling),
        ("correlation error degrades", correlation_error_degrades),
    ]
}
