//! Ellipse fitting against fringe fitting with a recorded common phase.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use diffsense_core::conic::Method;
use diffsense_core::sampling::NoiseModel;
use diffsense_core::spin::{PreparedProbe, ProbeMode, ProbeSpec, RotationKernel};
use diffsense_core::stats::{fisher_information, CampaignPlan, CampaignReport, CampaignRun, CampaignSpec, FringeSettings};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Rotation kernels shared by every probe with the same atom number.
#[derive(Default)]
pub struct ProbeCache {
    kernels: Mutex<HashMap<usize, Arc<RotationKernel>>>,
}

impl ProbeCache {
    pub fn prepare(&self, spec: &ProbeSpec) -> diffsense_core::Result<PreparedProbe> {
        if spec.mode != ProbeMode::Exact || spec.is_coherent() {
            return PreparedProbe::new(spec);
        }
        spec.validate()?;
        let kernel = {
            let mut map = self.kernels.lock().expect("kernel cache poisoned");
            match map.get(&spec.n_atoms) {
                Some(k) => k.clone(),
                None => {
                    let k = Arc::new(RotationKernel::new(spec.n_atoms)?);
                    map.insert(spec.n_atoms, k.clone());
                    k
                }
            }
        };
        PreparedProbe::with_kernel(spec, kernel)
    }

    pub fn plan(&self, spec: CampaignSpec) -> diffsense_core::Result<CampaignPlan> {
        let a = self.prepare(&spec.probe_a)?;
        let b = if spec.probe_b == spec.probe_a { a.clone() } else { self.prepare(&spec.probe_b)? };
        CampaignPlan::with_probes(spec, a, b)
    }
}

/// Evaluates the ellipses of a plan on the rayon pool; the report does not
/// depend on the schedule.
pub fn run_plan(plan: &CampaignPlan) -> diffsense_core::Result<CampaignRun> {
    let outcomes = (0..plan.spec().ellipses as u64)
        .into_par_iter()
        .map(|i| plan.evaluate(i))
        .collect::<diffsense_core::Result<Vec<_>>>()?;
    Ok(CampaignRun { report: plan.aggregate(&outcomes), outcomes })
}

pub fn run_campaign_parallel(spec: CampaignSpec) -> diffsense_core::Result<CampaignRun> {
    run_plan(&CampaignPlan::new(spec)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridOptions {
    pub ellipse_dphi: f64,
    pub ellipse_methods: Vec<Method>,
    pub correlation_error_sigma: f64,
    pub table_nodes: usize,
    pub fringe: FringeSettings,
    pub mode: ProbeMode,
    /// Phase at which the Fisher information of the unrecorded joint
    /// distribution is evaluated; `None` skips it.
    pub crb_dphi: Option<f64>,
}

impl Default for HybridOptions {
    fn default() -> Self {
        Self {
            ellipse_dphi: 1.0,
            ellipse_methods: vec![Method::Trace],
            correlation_error_sigma: 0.0,
            table_nodes: diffsense_core::sampling::DEFAULT_TABLE_NODES,
            fringe: FringeSettings::default(),
            mode: ProbeMode::Exact,
            crb_dphi: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedReport {
    pub n_atoms: usize,
    pub tau: f64,
    pub shots: usize,
    /// Ellipse fits at `ellipse_dphi` without phase record.
    pub ellipse: CampaignReport,
    /// Fringe fit at `dphi = 0` with the recorded phase.
    pub fringe: CampaignReport,
    /// `F^{-1/2}` of the unrecorded joint distribution.
    pub sigma_f: Option<f64>,
}

impl PairedReport {
    /// Fringe `sigma_eff` over the ellipse `sigma_eff` of the first method.
    pub fn ratio(&self) -> Option<f64> {
        let e = self.ellipse.methods.first()?.sigma_eff?;
        let f = self.fringe.method(Method::Fringe)?.sigma_eff?;
        Some(f / e)
    }
}

/// Both arms share the seed, probe preparation and atom number.
pub fn compare_methods(
    n_atoms: usize,
    tau: f64,
    shots: usize,
    ellipses: usize,
    seed: u64,
    opts: &HybridOptions,
    cache: &ProbeCache,
) -> diffsense_core::Result<PairedReport> {
    let probe = ProbeSpec::squeezed(n_atoms, tau).with_mode(opts.mode);
    let mut ellipse = CampaignSpec::new(probe, probe, opts.ellipse_dphi, shots, ellipses, seed).with_methods(&opts.ellipse_methods);
    ellipse.table_nodes = opts.table_nodes;
    let mut fringe = CampaignSpec::new(probe, probe, 0.0, shots, ellipses, seed)
        .with_methods(&[Method::Fringe])
        .with_noise(NoiseModel::recording(opts.correlation_error_sigma));
    fringe.table_nodes = opts.table_nodes;
    fringe.fringe = opts.fringe;
    let e = run_plan(&cache.plan(ellipse)?)?;
    let f = run_plan(&cache.plan(fringe)?)?;
    let sigma_f = match opts.crb_dphi {
        Some(d) => {
            let p = cache.prepare(&probe)?;
            Some(1.0 / fisher_information(&p, &p, d)?.information.sqrt())
        }
        None => None,
    };
    Ok(PairedReport { n_atoms, tau, shots, ellipse: e.report, fringe: f.report, sigma_f })
}
