//! Execution of a validated config: grid evaluation, tables and manifest.

use std::path::{Path, PathBuf};
use std::time::Instant;

use diffsense_core::closed_form::{self, tau_ref, tau_star, TauStarMethod};
use diffsense_core::conic::{self, FitContext, Method};
use diffsense_core::hybrid::{fringe_fit, FringeContrast, FringeModel};
use diffsense_core::sampling::{EllipseSample, NoiseModel, PairSampler};
use diffsense_core::spin::ProbeSpec;
use diffsense_core::stats::{cramer_rao_bound, fisher_information, power_law_fit, CampaignReport, CampaignSpec, MethodReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::compare::{compare_methods, run_plan, HybridOptions, PairedReport, ProbeCache};
use crate::config::{Experiment, GridPoint, ResolvedConfig, RunConfig};
use crate::io::{self, Cell, Table};

pub const TOOL: &str = "diffsense";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub experiment: &'static str,
    pub seed: u64,
    pub config: RunConfig,
    pub applied_defaults: Vec<String>,
    pub points: Vec<GridPoint>,
    pub outputs: Vec<String>,
    pub rows: usize,
    pub failures: usize,
    pub workers: usize,
    pub elapsed_seconds: f64,
}

#[derive(Debug)]
pub struct RunSummary {
    pub manifest: Manifest,
    pub tables: Vec<(String, Table)>,
}

impl RunSummary {
    pub fn failures(&self) -> usize {
        self.manifest.failures
    }

    pub fn table(&self, name: &str) -> Option<&Table> {
        self.tables.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

const CAMPAIGN_COLUMNS: [&str; 24] = [
    "experiment",
    "point",
    "n_atoms",
    "tau_a",
    "tau_b",
    "dphi",
    "shots",
    "ellipses",
    "seed",
    "method",
    "status",
    "accepted",
    "rejected",
    "clamped",
    "mean",
    "bias",
    "bias_error",
    "std_dev",
    "sigma_eff",
    "sigma_eff_error",
    "gain",
    "sql",
    "crb",
    "error",
];

/// One campaign row per method; `Err` becomes a tagged failure row.
fn campaign_rows(t: &mut Table, e: Experiment, p: &GridPoint, ellipses: usize, seed: u64, r: &Result<CampaignReport, String>) -> usize {
    let lead = |dphi: f64, shots: usize| -> Vec<Cell> {
        vec![
            e.name().into(),
            p.index.into(),
            p.n_atoms.into(),
            p.tau_a.into(),
            p.tau_b.into(),
            dphi.into(),
            shots.into(),
            ellipses.into(),
            seed.into(),
        ]
    };
    match r {
        Ok(rep) => {
            let mut failed = 0;
            for m in &rep.methods {
                let mut row = lead(rep.dphi, rep.shots);
                row.push(m.method.name().into());
                row.push(if m.failed { "failed" } else { "ok" }.into());
                row.extend(method_cells(m));
                row.push(rep.sql.into());
                row.push(rep.crb.into());
                row.push(m.first_rejection.clone().filter(|_| m.failed).map_or(Cell::Empty, Cell::Text));
                failed += m.failed as usize;
                t.push(row);
            }
            failed
        }
        Err(msg) => {
            let mut row = lead(p.dphi, p.shots);
            row.push(Cell::Empty);
            row.push("failed".into());
            row.extend(std::iter::repeat_n(Cell::Empty, 12));
            row.push(msg.clone().into());
            t.push(row);
            1
        }
    }
}

fn method_cells(m: &MethodReport) -> Vec<Cell> {
    vec![
        m.accepted.into(),
        m.rejected.into(),
        m.clamped.into(),
        m.mean.into(),
        m.bias.into(),
        m.bias_error.into(),
        m.std_dev.into(),
        m.sigma_eff.into(),
        m.sigma_eff_error().into(),
        m.gain.into(),
    ]
}

fn probe_specs(p: &GridPoint) -> (ProbeSpec, ProbeSpec) {
    (
        ProbeSpec::squeezed(p.n_atoms, p.tau_a).with_mode(p.mode),
        ProbeSpec::squeezed(p.n_atoms, p.tau_b).with_mode(p.mode),
    )
}

/// Campaign spec of one grid point.
pub fn campaign_spec(p: &GridPoint, c: &RunConfig) -> CampaignSpec {
    let (a, b) = probe_specs(p);
    let methods = c.methods.clone().unwrap_or_else(|| vec![Method::Trace]);
    let mut spec = CampaignSpec::new(a, b, p.dphi, p.shots, c.ellipses.unwrap_or(2), c.seed.unwrap_or(0)).with_methods(&methods);
    spec.table_nodes = c.table_nodes.unwrap_or(spec.table_nodes);
    spec.fringe = c.fringe.unwrap_or_default();
    let sigma = c.correlation_error_sigma.unwrap_or(0.0);
    if methods.contains(&Method::Fringe) || sigma > 0.0 {
        spec.noise = NoiseModel::recording(sigma);
    }
    spec
}

fn campaign_point(p: &GridPoint, c: &RunConfig, cache: &ProbeCache, raw: Option<&Path>) -> Result<CampaignReport, String> {
    let spec = campaign_spec(p, c);
    let plan = cache.plan(spec).map_err(|e| e.to_string())?;
    let mut report = run_plan(&plan).map_err(|e| e.to_string())?.report;
    if c.crb == Some(true) {
        let (a, b) = plan.probes();
        report.crb = Some(
            fisher_information(a, b, p.dphi)
                .and_then(|f| cramer_rao_bound(f.information, p.shots))
                .map_err(|e| format!("CRB: {e}"))?,
        );
    }
    if let Some(dir) = raw {
        for i in 0..plan.spec().ellipses as u64 {
            let s = plan.sample(i).map_err(|e| e.to_string())?;
            write_sample_files(dir, p.index, i, &s).map_err(|e| e.to_string())?;
        }
    }
    Ok(report)
}

fn write_sample_files(dir: &Path, point: usize, ellipse: u64, s: &EllipseSample) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let stem = dir.join(format!("p{point}_e{ellipse}"));
    io::write_sample_csv(s, std::io::BufWriter::new(std::fs::File::create(stem.with_extension("csv"))?))?;
    std::fs::write(stem.with_extension("json"), io::sample_to_json(s))?;
    Ok(stem.with_extension("csv"))
}

const SCALING_COLUMNS: [&str; 15] = [
    "method",
    "quantity",
    "variable",
    "tau_grid_value",
    "dphi",
    "fixed_n_atoms",
    "fixed_shots",
    "range_min",
    "range_max",
    "alpha",
    "beta",
    "points_used",
    "residual",
    "status",
    "error",
];

/// A series `(x, y)` of one quantity along the scanned variable.
struct Series {
    method: Method,
    quantity: &'static str,
    tau_index: usize,
    tau_value: f64,
    dphi: f64,
    fixed_n: Option<usize>,
    fixed_shots: Option<usize>,
    points: Vec<(f64, f64)>,
}

fn scaling_rows(t: &mut Table, variable: &str, range: [f64; 2], series: &[Series]) -> usize {
    let mut failed = 0;
    for s in series {
        let mut row: Vec<Cell> = vec![
            s.method.name().into(),
            s.quantity.into(),
            variable.into(),
            s.tau_value.into(),
            s.dphi.into(),
            s.fixed_n.map_or(Cell::Empty, Cell::from),
            s.fixed_shots.map_or(Cell::Empty, Cell::from),
            range[0].into(),
            range[1].into(),
        ];
        match power_law_fit(&s.points, range) {
            Ok(f) => {
                row.extend([f.alpha.into(), f.beta.into(), f.points_used.into(), f.residual.into(), "ok".into(), Cell::Empty]);
            }
            Err(e) => {
                failed += 1;
                row.extend([Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty, "failed".into(), e.to_string().into()]);
            }
        }
        t.push(row);
    }
    failed
}

/// Groups campaign results along N or shots and fits power laws.
fn scan_series(e: Experiment, c: &RunConfig, results: &[(GridPoint, Result<CampaignReport, String>)]) -> Vec<Series> {
    let tau_values = &c.tau.as_ref().expect("validated").values;
    let mut out: Vec<Series> = Vec::new();
    for (p, r) in results {
        let Ok(rep) = r else { continue };
        let (x, fixed_n, fixed_shots) = match e {
            Experiment::ScanN => (p.n_atoms as f64, None, Some(p.shots)),
            _ => (p.shots as f64, Some(p.n_atoms), None),
        };
        for m in &rep.methods {
            let quantities = [
                ("std_dev", m.std_dev),
                ("abs_bias", m.bias.map(f64::abs)),
                ("sigma_eff", m.sigma_eff),
                ("gain", m.gain),
            ];
            for (q, y) in quantities {
                let Some(y) = y else { continue };
                let key = (m.method, q, p.tau_index, p.dphi.to_bits(), fixed_n, fixed_shots);
                let pos = out.iter().position(|s| (s.method, s.quantity, s.tau_index, s.dphi.to_bits(), s.fixed_n, s.fixed_shots) == key);
                let idx = pos.unwrap_or_else(|| {
                    out.push(Series {
                        method: m.method,
                        quantity: q,
                        tau_index: p.tau_index,
                        tau_value: tau_values[p.tau_index],
                        dphi: p.dphi,
                        fixed_n,
                        fixed_shots,
                        points: Vec::new(),
                    });
                    out.len() - 1
                });
                out[idx].points.push((x, y));
            }
        }
    }
    out
}

const FISHER_COLUMNS: [&str; 15] = [
    "point",
    "n_atoms",
    "tau_a",
    "tau_b",
    "dphi",
    "shots",
    "status",
    "information",
    "sigma_f",
    "crb",
    "skipped_mass",
    "nodes",
    "fd_residual",
    "error",
    "seed",
];

fn fisher_row(p: &GridPoint, seed: u64, cache: &ProbeCache) -> Vec<Cell> {
    let (sa, sb) = probe_specs(p);
    let r = cache.prepare(&sa).and_then(|a| {
        let b = if sb == sa { a.clone() } else { cache.prepare(&sb)? };
        fisher_information(&a, &b, p.dphi)
    });
    let mut row: Vec<Cell> = vec![p.index.into(), p.n_atoms.into(), p.tau_a.into(), p.tau_b.into(), p.dphi.into(), p.shots.into()];
    match r {
        Ok(f) => {
            let crb = cramer_rao_bound(f.information, p.shots).ok();
            let sigma_f = (f.information > 0.0).then(|| 1.0 / f.information.sqrt());
            row.extend([
                "ok".into(),
                f.information.into(),
                sigma_f.into(),
                crb.into(),
                f.skipped_mass.into(),
                f.nodes.into(),
                f.fd_residual.into(),
                Cell::Empty,
            ]);
        }
        Err(e) => {
            row.push("failed".into());
            row.extend(std::iter::repeat_n(Cell::Empty, 6));
            row.push(e.to_string().into());
        }
    }
    row.push(seed.into());
    row
}

const PROBE_COLUMNS: [&str; 17] = [
    "point",
    "n_atoms",
    "tau",
    "phi",
    "mode",
    "status",
    "contrast",
    "nu",
    "mean_sim",
    "var_sim",
    "mean_closed",
    "var_closed",
    "var_mid_fringe",
    "var_quadrature",
    "tau_ref",
    "tau_star",
    "error",
];

fn probe_rows(p: &GridPoint, cache: &ProbeCache) -> Vec<Vec<Cell>> {
    let taus: Vec<f64> = if p.tau_a == p.tau_b { vec![p.tau_a] } else { vec![p.tau_a, p.tau_b] };
    taus.into_iter()
        .map(|tau| {
            let mut row: Vec<Cell> = vec![
                p.index.into(),
                p.n_atoms.into(),
                tau.into(),
                p.dphi.into(),
                format!("{:?}", p.mode).to_lowercase().into(),
            ];
            let spec = ProbeSpec::squeezed(p.n_atoms, tau).with_mode(p.mode);
            let r = cache.prepare(&spec).and_then(|probe| {
                let prof = closed_form::profile(p.n_atoms, tau)?;
                let d = probe.distribution(p.dphi);
                Ok((prof, probe.nu(), d.mean(), d.variance()))
            });
            match r {
                Ok((prof, nu, mean, var)) => {
                    row.extend([
                        "ok".into(),
                        prof.contrast.into(),
                        nu.into(),
                        mean.into(),
                        var.into(),
                        prof.mean(p.dphi).into(),
                        prof.variance(p.dphi).into(),
                        prof.var_mid_fringe.into(),
                        prof.var_quadrature.into(),
                        tau_ref(p.n_atoms).ok().into(),
                        tau_star(p.n_atoms, TauStarMethod::default()).ok().into(),
                        Cell::Empty,
                    ]);
                }
                Err(e) => {
                    row.push("failed".into());
                    row.extend(std::iter::repeat_n(Cell::Empty, 10));
                    row.push(e.to_string().into());
                }
            }
            row
        })
        .collect()
}

const FIT_COLUMNS: [&str; 12] =
    ["point", "ellipse", "method", "status", "dphi_true", "dphi_est", "error_rad", "converged", "clamped", "iterations", "residual", "error"];

fn fit_rows(point: usize, ellipse: u64, s: &EllipseSample, methods: &[Method], ctx: &FitContext, fringe: (FringeModel, FringeModel)) -> Vec<Vec<Cell>> {
    methods
        .iter()
        .map(|&m| {
            let r = match m {
                Method::Fringe => fringe_fit(s, &fringe.0, &fringe.1).map(|f| (f.dphi_est, true, false, 0, f.a.residual + f.b.residual)),
                _ => conic::estimate(&s.points, m, ctx).map(|e| (e.dphi_est, e.converged, e.clamped, e.iterations, e.residual)),
            };
            let mut row: Vec<Cell> = vec![point.into(), ellipse.into(), m.name().into()];
            match r {
                Ok((d, conv, clamp, it, res)) => row.extend([
                    "ok".into(),
                    s.true_dphi.into(),
                    d.into(),
                    (d - s.true_dphi).into(),
                    conv.into(),
                    clamp.into(),
                    it.into(),
                    res.into(),
                    Cell::Empty,
                ]),
                Err(e) => {
                    row.extend(["failed".into(), s.true_dphi.into()]);
                    row.extend(std::iter::repeat_n(Cell::Empty, 6));
                    row.push(e.to_string().into());
                }
            }
            row
        })
        .collect()
}

fn fringe_models(n_a: usize, tau_a: f64, n_b: usize, tau_b: f64, c: &RunConfig) -> Result<(FringeModel, FringeModel), String> {
    let settings = c.fringe.unwrap_or_default();
    let make = |n, tau| -> Result<FringeModel, String> {
        let prof = closed_form::profile(n, tau).map_err(|e| e.to_string())?;
        let contrast = if settings.known_contrast { FringeContrast::Known { value: prof.contrast } } else { FringeContrast::Free };
        Ok(FringeModel { contrast, noise: settings.weighted.then_some(prof) })
    };
    Ok((make(n_a, tau_a)?, make(n_b, tau_b)?))
}

const COMPARISON_COLUMNS: [&str; 12] = [
    "point",
    "n_atoms",
    "tau",
    "shots",
    "ellipse_method",
    "ellipse_dphi",
    "ellipse_sigma_eff",
    "fringe_sigma_eff",
    "ratio",
    "sigma_f",
    "fringe_over_sigma_f",
    "status",
];

fn progress(i: usize, n: usize, what: &str) {
    eprintln!("[{}/{}] {}", i + 1, n, what);
}

/// Runs every grid point and writes the tables and the manifest into `out`.
pub fn execute(resolved: &ResolvedConfig, out: &Path) -> Result<RunSummary, String> {
    let t0 = Instant::now();
    let c = &resolved.config;
    let e = c.experiment;
    let seed = resolved.seed();
    let ellipses = resolved.ellipses();
    let points = &resolved.points;
    let cache = ProbeCache::default();
    std::fs::create_dir_all(out).map_err(|err| format!("cannot create {}: {err}", out.display()))?;
    let raw_dir = out.join("samples");
    let mut tables: Vec<(String, Table)> = Vec::new();
    let mut failures = 0;
    let mut json_reports: Option<serde_json::Value> = None;

    match e {
        _ if e.is_campaign() => {
            let mut t = Table::new(&CAMPAIGN_COLUMNS);
            let mut results = Vec::with_capacity(points.len());
            for p in points {
                progress(p.index, points.len(), &format!("N={} tau_a={} dphi={} shots={}", p.n_atoms, p.tau_a, p.dphi, p.shots));
                let raw = c.output.raw_samples.then_some(raw_dir.as_path());
                let r = campaign_point(p, c, &cache, raw);
                failures += campaign_rows(&mut t, e, p, ellipses, seed, &r);
                results.push((*p, r));
            }
            let reports: Vec<_> = results.iter().map(|(p, r)| (p.index, r.as_ref().ok())).collect();
            json_reports = Some(serde_json::to_value(&reports).map_err(|e| e.to_string())?);
            tables.push(("results.csv".into(), t));
            if matches!(e, Experiment::ScanN | Experiment::ScanShots) {
                let variable = if e == Experiment::ScanN { "n_atoms" } else { "shots" };
                let mut s = Table::new(&SCALING_COLUMNS);
                failures += scaling_rows(&mut s, variable, c.fit_range.expect("validated"), &scan_series(e, c, &results));
                tables.push(("scaling.csv".into(), s));
            }
        }
        Experiment::Fisher => {
            let mut t = Table::new(&FISHER_COLUMNS);
            let rows: Vec<Vec<Cell>> = points.par_iter().map(|p| fisher_row(p, seed, &cache)).collect();
            for r in rows {
                failures += (r[6] == Cell::Text("failed".into())) as usize;
                t.push(r);
            }
            tables.push(("results.csv".into(), t));
        }
        Experiment::ProbeTable => {
            let mut t = Table::new(&PROBE_COLUMNS);
            let rows: Vec<Vec<Vec<Cell>>> = points.par_iter().map(|p| probe_rows(p, &cache)).collect();
            for r in rows.into_iter().flatten() {
                failures += (r[5] == Cell::Text("failed".into())) as usize;
                t.push(r);
            }
            tables.push(("results.csv".into(), t));
        }
        Experiment::Sample => {
            let mut t = Table::new(&["point", "ellipse", "status", "n_points", "mean_z_a", "mean_z_b", "file", "error"]);
            for p in points {
                progress(p.index, points.len(), &format!("sampling N={} dphi={}", p.n_atoms, p.dphi));
                let spec = campaign_spec(p, c);
                let r = cache.plan(spec).map_err(|e| e.to_string());
                for i in 0..ellipses as u64 {
                    let row: Vec<Cell> = match r.as_ref().map_err(Clone::clone).and_then(|plan| plan.sample(i).map_err(|e| e.to_string())) {
                        Ok(s) => {
                            let path = write_sample_files(&raw_dir, p.index, i, &s).map_err(|e| e.to_string())?;
                            let k = s.len() as f64;
                            let rel = path.strip_prefix(out).unwrap_or(&path).display().to_string();
                            vec![
                                p.index.into(),
                                i.into(),
                                "ok".into(),
                                s.len().into(),
                                (s.points.iter().map(|q| q[0]).sum::<f64>() / k).into(),
                                (s.points.iter().map(|q| q[1]).sum::<f64>() / k).into(),
                                rel.into(),
                                Cell::Empty,
                            ]
                        }
                        Err(msg) => {
                            failures += 1;
                            vec![p.index.into(), i.into(), "failed".into(), Cell::Empty, Cell::Empty, Cell::Empty, Cell::Empty, msg.into()]
                        }
                    };
                    t.push(row);
                }
            }
            tables.push(("results.csv".into(), t));
        }
        Experiment::Fit => {
            let mut t = Table::new(&FIT_COLUMNS);
            let methods = resolved.methods();
            if let Some(input) = &c.input {
                let s = io::read_sample_file(input)?;
                s.validate().map_err(|e| e.to_string())?;
                // Contrasts follow the first tau value of the config.
                let tau = c.tau.as_ref().and_then(|g| g.resolve(s.n_atoms_a).ok()).and_then(|v| v.first().copied()).unwrap_or(0.0);
                let ctx = FitContext {
                    contrast_a: closed_form::contrast(s.n_atoms_a, tau),
                    contrast_b: closed_form::contrast(s.n_atoms_b, tau),
                };
                let fm = fringe_models(s.n_atoms_a, tau, s.n_atoms_b, tau, c)?;
                for r in fit_rows(0, s.stream, &s, methods, &ctx, fm) {
                    failures += (r[3] == Cell::Text("failed".into())) as usize;
                    t.push(r);
                }
            } else {
                for p in points {
                    let spec = campaign_spec(p, c);
                    let ctx = FitContext {
                        contrast_a: closed_form::contrast(p.n_atoms, p.tau_a),
                        contrast_b: closed_form::contrast(p.n_atoms, p.tau_b),
                    };
                    let fm = fringe_models(p.n_atoms, p.tau_a, p.n_atoms, p.tau_b, c)?;
                    let (sa, sb) = probe_specs(p);
                    let sampler = cache
                        .prepare(&sa)
                        .and_then(|a| {
                            let b = cache.prepare(&sb)?;
                            PairSampler::new(&a, &b, p.dphi, spec.table_nodes)
                        })
                        .map_err(|e| e.to_string());
                    for i in 0..ellipses as u64 {
                        match sampler.as_ref().map_err(Clone::clone).and_then(|smp| smp.sample_ellipse(&spec.noise, p.shots, seed, i).map_err(|e| e.to_string())) {
                            Ok(s) => {
                                for r in fit_rows(p.index, i, &s, methods, &ctx, fm) {
                                    failures += (r[3] == Cell::Text("failed".into())) as usize;
                                    t.push(r);
                                }
                            }
                            Err(msg) => {
                                failures += 1;
                                let mut row: Vec<Cell> = vec![p.index.into(), i.into(), Cell::Empty, "failed".into(), p.dphi.into()];
                                row.extend(std::iter::repeat_n(Cell::Empty, 6));
                                row.push(msg.into());
                                t.push(row);
                            }
                        }
                    }
                }
            }
            tables.push(("results.csv".into(), t));
        }
        Experiment::HybridCompare => {
            let opts = HybridOptions {
                ellipse_dphi: c.ellipse_dphi.expect("validated"),
                ellipse_methods: resolved.methods().to_vec(),
                correlation_error_sigma: c.correlation_error_sigma.unwrap_or(0.0),
                table_nodes: c.table_nodes.expect("validated"),
                fringe: c.fringe.unwrap_or_default(),
                mode: points.first().map(|p| p.mode).unwrap_or_default(),
                crb_dphi: if c.crb == Some(true) { c.crb_dphi } else { None },
            };
            let mut t = Table::new(&CAMPAIGN_COLUMNS);
            let mut cmp = Table::new(&COMPARISON_COLUMNS);
            let mut paired: Vec<(GridPoint, Result<PairedReport, String>)> = Vec::new();
            for p in points {
                progress(p.index, points.len(), &format!("hybrid N={} tau={}", p.n_atoms, p.tau_a));
                let opts = HybridOptions { mode: p.mode, ..opts.clone() };
                let r = compare_methods(p.n_atoms, p.tau_a, p.shots, ellipses, seed, &opts, &cache).map_err(|e| e.to_string());
                match &r {
                    Ok(pr) => {
                        failures += campaign_rows(&mut t, e, p, ellipses, seed, &Ok(pr.ellipse.clone()));
                        failures += campaign_rows(&mut t, e, p, ellipses, seed, &Ok(pr.fringe.clone()));
                        let es = pr.ellipse.methods.first().and_then(|m| m.sigma_eff);
                        let fs = pr.fringe.method(Method::Fringe).and_then(|m| m.sigma_eff);
                        cmp.push(vec![
                            p.index.into(),
                            p.n_atoms.into(),
                            p.tau_a.into(),
                            p.shots.into(),
                            pr.ellipse.methods.first().map_or("", |m| m.method.name()).into(),
                            opts.ellipse_dphi.into(),
                            es.into(),
                            fs.into(),
                            pr.ratio().into(),
                            pr.sigma_f.into(),
                            fs.zip(pr.sigma_f).map(|(f, s)| f / s).into(),
                            "ok".into(),
                        ]);
                    }
                    Err(msg) => {
                        failures += campaign_rows(&mut t, e, p, ellipses, seed, &Err(msg.clone()));
                        let mut row: Vec<Cell> = vec![p.index.into(), p.n_atoms.into(), p.tau_a.into(), p.shots.into()];
                        row.extend(std::iter::repeat_n(Cell::Empty, 7));
                        row.push("failed".into());
                        cmp.push(row);
                    }
                }
                paired.push((*p, r));
            }
            let tau_values = &c.tau.as_ref().expect("validated").values;
            let mut series = Vec::new();
            for (ti, tv) in tau_values.iter().enumerate() {
                for (tag, pick) in [("ellipse", 0usize), ("fringe", 1)] {
                    let pts: Vec<(f64, f64)> = paired
                        .iter()
                        .filter(|(p, _)| p.tau_index == ti)
                        .filter_map(|(p, r)| {
                            let pr = r.as_ref().ok()?;
                            let rep = if pick == 0 { &pr.ellipse } else { &pr.fringe };
                            Some((p.n_atoms as f64, rep.methods.first()?.gain?))
                        })
                        .collect();
                    let method = if tag == "fringe" { Method::Fringe } else { opts.ellipse_methods[0] };
                    series.push(Series {
                        method,
                        quantity: "gain",
                        tau_index: ti,
                        tau_value: *tv,
                        dphi: if tag == "fringe" { 0.0 } else { opts.ellipse_dphi },
                        fixed_n: None,
                        fixed_shots: points.first().map(|p| p.shots),
                        points: pts,
                    });
                }
            }
            let mut s = Table::new(&SCALING_COLUMNS);
            if c.n_atoms.len() >= 3 {
                failures += scaling_rows(&mut s, "n_atoms", c.fit_range.expect("validated"), &series);
            }
            json_reports = Some(serde_json::to_value(paired.iter().map(|(p, r)| (p.index, r.as_ref().ok())).collect::<Vec<_>>()).map_err(|e| e.to_string())?);
            tables.push(("results.csv".into(), t));
            tables.push(("comparison.csv".into(), cmp));
            tables.push(("scaling.csv".into(), s));
        }
        _ => unreachable!("campaign kinds handled above"),
    }

    let mut outputs = Vec::new();
    for (name, t) in &tables {
        t.write_file(&out.join(name)).map_err(|e| format!("cannot write {name}: {e}"))?;
        outputs.push(name.clone());
    }
    if let Some(v) = json_reports {
        io::write_json(&out.join("reports.json"), &v).map_err(|e| e.to_string())?;
        outputs.push("reports.json".into());
    }
    if raw_dir.exists() {
        outputs.push("samples/".into());
    }
    let manifest = Manifest {
        tool: TOOL,
        version: VERSION,
        experiment: e.name(),
        seed,
        config: c.clone(),
        applied_defaults: resolved.applied_defaults.clone(),
        points: points.clone(),
        outputs,
        rows: tables.iter().map(|(_, t)| t.rows.len()).sum(),
        failures,
        workers: rayon::current_num_threads(),
        elapsed_seconds: t0.elapsed().as_secs_f64(),
    };
    io::write_json(&out.join("manifest.json"), &manifest).map_err(|e| e.to_string())?;
    Ok(RunSummary { manifest, tables })
}
