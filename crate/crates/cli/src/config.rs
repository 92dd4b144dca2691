//! Declarative run configuration and its validation.
//!
//! Configs are TOML. Every optional field is filled during validation and
//! each filled default is reported, so the normalised config written into a
//! run manifest re-validates to itself.

use std::path::{Path, PathBuf};

use diffsense_core::closed_form::{tau_ref, tau_star, TauStarMethod};
use diffsense_core::conic::Method;
use diffsense_core::spin::{ProbeMode, EXACT_MODE_CAP};
use diffsense_core::stats::FringeSettings;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    ProbeTable,
    Sample,
    Fit,
    Campaign,
    ScanTau,
    ScanDphi,
    #[serde(rename = "scan-N")]
    ScanN,
    ScanShots,
    Fisher,
    HybridCompare,
}

impl Experiment {
    pub const ALL: [Experiment; 10] = [
        Experiment::ProbeTable,
        Experiment::Sample,
        Experiment::Fit,
        Experiment::Campaign,
        Experiment::ScanTau,
        Experiment::ScanDphi,
        Experiment::ScanN,
        Experiment::ScanShots,
        Experiment::Fisher,
        Experiment::HybridCompare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::ProbeTable => "probe-table",
            Experiment::Sample => "sample",
            Experiment::Fit => "fit",
            Experiment::Campaign => "campaign",
            Experiment::ScanTau => "scan-tau",
            Experiment::ScanDphi => "scan-dphi",
            Experiment::ScanN => "scan-N",
            Experiment::ScanShots => "scan-shots",
            Experiment::Fisher => "fisher",
            Experiment::HybridCompare => "hybrid-compare",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|e| e.name() == s)
    }

    /// Experiments that run Monte Carlo campaigns over a grid.
    pub fn is_campaign(self) -> bool {
        matches!(
            self,
            Experiment::Campaign | Experiment::ScanTau | Experiment::ScanDphi | Experiment::ScanN | Experiment::ScanShots
        )
    }
}

/// How the numbers in a [`TauGrid`] are read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TauUnit {
    /// Radians of one-axis twisting.
    #[default]
    Absolute,
    /// Multiples of `tau_ref(N)`.
    TauRef,
    /// Multiples of `tau*(N)`.
    TauStar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TauGrid {
    #[serde(default)]
    pub unit: TauUnit,
    pub values: Vec<f64>,
    #[serde(default)]
    pub star_method: TauStarMethod,
}

impl TauGrid {
    pub fn absolute(values: Vec<f64>) -> Self {
        Self { unit: TauUnit::Absolute, values, star_method: TauStarMethod::default() }
    }

    /// Absolute squeezing strengths for `N` atoms.
    pub fn resolve(&self, n_atoms: usize) -> Result<Vec<f64>, String> {
        let scale = match self.unit {
            TauUnit::Absolute => 1.0,
            TauUnit::TauRef => tau_ref(n_atoms).map_err(|e| e.to_string())?,
            TauUnit::TauStar => tau_star(n_atoms, self.star_method).map_err(|e| e.to_string())?,
        };
        Ok(self.values.iter().map(|v| v * scale).collect())
    }
}

/// Which of the two probes carries the twisting strength.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Squeezed {
    #[default]
    Both,
    /// Probe A squeezed, probe B coherent.
    AOnly,
    /// Both coherent regardless of the tau grid.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ModeChoice {
    /// Exact for `N <= 2000`, Gaussian above.
    #[default]
    Auto,
    Exact,
    Gaussian,
}

impl ModeChoice {
    pub fn for_atoms(self, n_atoms: usize) -> ProbeMode {
        match self {
            ModeChoice::Exact => ProbeMode::Exact,
            ModeChoice::Gaussian => ProbeMode::Gaussian,
            ModeChoice::Auto if n_atoms <= EXACT_MODE_CAP => ProbeMode::Exact,
            ModeChoice::Auto => ProbeMode::Gaussian,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    /// Also write every sampled ellipse as CSV and JSON.
    #[serde(default)]
    pub raw_samples: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub n_atoms: Vec<usize>,
    #[serde(default)]
    pub tau: Option<TauGrid>,
    #[serde(default)]
    pub squeezed: Option<Squeezed>,
    #[serde(default)]
    pub mode: Option<ModeChoice>,
    /// Differential phases; the interferometer phase for `probe-table`.
    #[serde(default)]
    pub dphi: Option<Vec<f64>>,
    #[serde(default)]
    pub shots: Option<Vec<usize>>,
    #[serde(default)]
    pub ellipses: Option<usize>,
    /// Ellipse count restored by `--paper-scale`.
    #[serde(default)]
    pub paper_ellipses: Option<usize>,
    #[serde(default)]
    pub methods: Option<Vec<Method>>,
    #[serde(default)]
    pub table_nodes: Option<usize>,
    #[serde(default)]
    pub correlation_error_sigma: Option<f64>,
    #[serde(default)]
    pub fringe: Option<FringeSettings>,
    /// Ellipse-arm phase of `hybrid-compare`.
    #[serde(default)]
    pub ellipse_dphi: Option<f64>,
    /// Phase at which the Fisher bound of `hybrid-compare` is evaluated.
    #[serde(default)]
    pub crb_dphi: Option<f64>,
    /// Compute the Fisher bound for every campaign point.
    #[serde(default)]
    pub crb: Option<bool>,
    #[serde(default)]
    pub fit_range: Option<[f64; 2]>,
    /// Sample file (CSV or JSON) for `fit`; sampled from the grid otherwise.
    #[serde(default)]
    pub input: Option<PathBuf>,
    #[serde(default)]
    pub output: OutputConfig,
}

pub const DEFAULT_ELLIPSES: usize = 200;
pub const DEFAULT_PAPER_ELLIPSES: usize = 1000;
pub const DEFAULT_SHOTS: usize = 1000;
pub const DEFAULT_DPHI: f64 = 1.0;

/// One point of the experiment grid with every parameter resolved.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub index: usize,
    /// Position of the tau value in the configured grid.
    pub tau_index: usize,
    pub n_atoms: usize,
    pub tau_a: f64,
    pub tau_b: f64,
    pub dphi: f64,
    pub shots: usize,
    pub mode: ProbeMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub applied_defaults: Vec<String>,
    pub points: Vec<GridPoint>,
}

impl ResolvedConfig {
    pub fn seed(&self) -> u64 {
        self.config.seed.expect("validated config has a seed")
    }

    pub fn ellipses(&self) -> usize {
        self.config.ellipses.expect("validated")
    }

    pub fn methods(&self) -> &[Method] {
        self.config.methods.as_deref().expect("validated")
    }
}

fn fill<T: Clone + std::fmt::Debug>(slot: &mut Option<T>, value: T, name: &str, applied: &mut Vec<String>) {
    if slot.is_none() {
        applied.push(format!("{name} = {value:?}"));
        *slot = Some(value);
    }
}

/// Fills defaults, checks every field and expands the grid.
pub fn validate_config(mut c: RunConfig) -> Result<ResolvedConfig, Vec<String>> {
    let mut errors = Vec::new();
    let mut applied = Vec::new();
    let e = c.experiment;

    if c.seed.is_none() {
        errors.push("seed is mandatory".to_string());
    }
    if c.n_atoms.is_empty() && !(e == Experiment::Fit && c.input.is_some()) {
        errors.push("n_atoms must list at least one atom number".to_string());
    }
    if c.n_atoms.iter().any(|&n| n < 2) {
        errors.push("every atom number must be at least 2".to_string());
    }

    fill(&mut c.tau, TauGrid::absolute(vec![0.0]), "tau", &mut applied);
    fill(&mut c.squeezed, Squeezed::Both, "squeezed", &mut applied);
    fill(&mut c.mode, ModeChoice::Auto, "mode", &mut applied);
    fill(&mut c.dphi, vec![DEFAULT_DPHI], "dphi", &mut applied);
    fill(&mut c.shots, vec![DEFAULT_SHOTS], "shots", &mut applied);
    fill(&mut c.ellipses, DEFAULT_ELLIPSES, "ellipses", &mut applied);
    fill(&mut c.paper_ellipses, DEFAULT_PAPER_ELLIPSES, "paper_ellipses", &mut applied);
    let default_methods = match e {
        Experiment::Fit => Method::ELLIPSE_FITS.to_vec(),
        _ => vec![Method::Trace],
    };
    fill(&mut c.methods, default_methods, "methods", &mut applied);
    fill(&mut c.table_nodes, diffsense_core::sampling::DEFAULT_TABLE_NODES, "table_nodes", &mut applied);
    fill(&mut c.correlation_error_sigma, 0.0, "correlation_error_sigma", &mut applied);
    fill(&mut c.fringe, FringeSettings::default(), "fringe", &mut applied);
    if e == Experiment::HybridCompare {
        fill(&mut c.ellipse_dphi, DEFAULT_DPHI, "ellipse_dphi", &mut applied);
        fill(&mut c.crb_dphi, std::f64::consts::PI / 16.0, "crb_dphi", &mut applied);
    }
    fill(&mut c.crb, false, "crb", &mut applied);
    let default_range = match e {
        Experiment::ScanN => Some([300.0, 1000.0]),
        Experiment::ScanShots => {
            let s = c.shots.as_deref().unwrap_or(&[]);
            let lo = s.iter().copied().filter(|&x| x >= 100).min().or(s.iter().copied().min());
            lo.map(|lo| [lo as f64, s.iter().copied().max().unwrap_or(lo) as f64])
        }
        Experiment::HybridCompare => {
            let lo = c.n_atoms.iter().copied().min().unwrap_or(2);
            let hi = c.n_atoms.iter().copied().max().unwrap_or(2);
            Some([lo as f64, hi as f64])
        }
        _ => None,
    };
    if let Some(r) = default_range {
        fill(&mut c.fit_range, r, "fit_range", &mut applied);
    }

    let tau = c.tau.clone().unwrap();
    if tau.values.is_empty() {
        errors.push("tau.values must not be empty".to_string());
    }
    if tau.values.iter().any(|t| !t.is_finite() || *t < 0.0) {
        errors.push("tau values must be finite and non-negative".to_string());
    }
    let dphi = c.dphi.clone().unwrap();
    if dphi.is_empty() || dphi.iter().any(|d| !d.is_finite()) {
        errors.push("dphi must be a non-empty list of finite radians".to_string());
    }
    let shots = c.shots.clone().unwrap();
    if shots.is_empty() || shots.iter().any(|&s| s < diffsense_core::sampling::MIN_SHOTS) {
        errors.push("shots must be a non-empty list of counts >= 5".to_string());
    }
    if c.ellipses.unwrap() < 2 {
        errors.push("ellipses must be at least 2".to_string());
    }
    if c.paper_ellipses.unwrap() < 2 {
        errors.push("paper_ellipses must be at least 2".to_string());
    }
    if c.methods.as_ref().unwrap().is_empty() {
        errors.push("methods must not be empty".to_string());
    }
    if e == Experiment::HybridCompare && c.methods.as_ref().unwrap().contains(&Method::Fringe) {
        errors.push("hybrid-compare adds the fringe arm itself; list only ellipse methods".to_string());
    }
    let nodes = c.table_nodes.unwrap();
    if !nodes.is_power_of_two() || nodes < 256 {
        errors.push(format!("table_nodes must be a power of two >= 256, got {nodes}"));
    }
    let sigma = c.correlation_error_sigma.unwrap();
    if !sigma.is_finite() || sigma < 0.0 {
        errors.push("correlation_error_sigma must be finite and non-negative".to_string());
    }
    for (name, v) in [("ellipse_dphi", c.ellipse_dphi), ("crb_dphi", c.crb_dphi)] {
        if v.is_some_and(|v| !v.is_finite()) {
            errors.push(format!("{name} must be finite"));
        }
    }
    if let Some([lo, hi]) = c.fit_range {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            errors.push("fit_range must be [min, max] with min < max".to_string());
        }
    }
    let mode = c.mode.unwrap();
    for &n in &c.n_atoms {
        if mode == ModeChoice::Exact && n > EXACT_MODE_CAP {
            errors.push(format!("exact mode supports at most {EXACT_MODE_CAP} atoms, got {n}"));
        }
        let exact_needed = e == Experiment::Fisher || c.crb == Some(true);
        if exact_needed && mode.for_atoms(n) == ProbeMode::Gaussian {
            errors.push(format!(
                "the Fisher information needs exact mode (the Gaussian approximation has no exact outcome probabilities), but N = {n} resolves to gaussian"
            ));
        }
    }
    if e == Experiment::Fit {
        if let Some(p) = &c.input {
            if !p.exists() {
                errors.push(format!("input file {} does not exist", p.display()));
            }
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }
    let points = expand_grid(&c).map_err(|e| vec![e])?;
    Ok(ResolvedConfig { config: c, applied_defaults: applied, points })
}

fn expand_grid(c: &RunConfig) -> Result<Vec<GridPoint>, String> {
    let tau = c.tau.as_ref().unwrap();
    let squeezed = c.squeezed.unwrap();
    let mode = c.mode.unwrap();
    let dphis: Vec<f64> = if c.experiment == Experiment::HybridCompare {
        vec![c.ellipse_dphi.unwrap()]
    } else {
        c.dphi.clone().unwrap()
    };
    let mut points = Vec::new();
    for &n in &c.n_atoms {
        for (tau_index, t) in tau.resolve(n)?.into_iter().enumerate() {
            let (tau_a, tau_b) = match squeezed {
                Squeezed::Both => (t, t),
                Squeezed::AOnly => (t, 0.0),
                Squeezed::None => (0.0, 0.0),
            };
            for &dphi in &dphis {
                for &shots in c.shots.as_ref().unwrap() {
                    points.push(GridPoint { index: points.len(), tau_index, n_atoms: n, tau_a, tau_b, dphi, shots, mode: mode.for_atoms(n) });
                }
            }
        }
    }
    Ok(points)
}

/// Reads a TOML config, or a JSON manifest / config for re-execution.
pub fn load_config(path: &Path) -> Result<RunConfig, Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| vec![format!("cannot read {}: {e}", path.display())])?;
    if path.extension().is_some_and(|x| x == "json") {
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| vec![format!("invalid JSON: {e}")])?;
        let v = v.get("config").cloned().unwrap_or(v);
        serde_json::from_value(v).map_err(|e| vec![format!("invalid config: {e}")])
    } else {
        parse_toml(&text)
    }
}

pub fn parse_toml(text: &str) -> Result<RunConfig, Vec<String>> {
    toml::from_str(text).map_err(|e| vec![format!("invalid config: {e}")])
}
