//! Common-mode noise, the joint outcome distribution and reproducible
//! Monte Carlo generation of correlated ellipse samples.
//!
//! Shot `s` of ellipse `e` under master seed `k` reads the 16-word block at
//! word offset `16 s` of ChaCha8 stream `e` keyed by `seed_from_u64(k)`. The
//! block is consumed as eight `u64` draws: phase node, outcome A, outcome B,
//! two uniforms for the readout error, three reserved.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use libm::{cos, log, round, sqrt};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, invalid, Error, Result};
use crate::spin::{node_phase, z_value, PhaseTable, PreparedProbe};

pub const DEFAULT_TABLE_NODES: usize = 4096;
pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;
pub const MIN_SHOTS: usize = 5;
const WORDS_PER_SHOT: u128 = 16;

/// Distribution of the common-mode phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    UniformFull,
    Fixed { phi: f64 },
    Recorded { phases: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    /// Width of the normal error added to the recorded phase readout.
    #[serde(default)]
    pub correlation_error_sigma: f64,
    /// Whether samples carry a per-shot phase readout.
    #[serde(default)]
    pub record_phase: bool,
}

impl NoiseModel {
    pub fn uniform() -> Self {
        Self { kind: NoiseKind::UniformFull, correlation_error_sigma: 0.0, record_phase: false }
    }

    pub fn recording(sigma: f64) -> Self {
        Self { kind: NoiseKind::UniformFull, correlation_error_sigma: sigma, record_phase: true }
    }

    pub fn validate(&self, shots: usize) -> Result<()> {
        ensure_finite("correlation_error_sigma", self.correlation_error_sigma)?;
        if self.correlation_error_sigma < 0.0 {
            return Err(invalid("correlation_error_sigma must be non-negative"));
        }
        match &self.kind {
            NoiseKind::UniformFull => Ok(()),
            NoiseKind::Fixed { phi } => ensure_finite("fixed phase", *phi),
            NoiseKind::Recorded { phases } => {
                if phases.len() < shots {
                    return Err(invalid(alloc::format!(
                        "phase record holds {} values, {shots} shots requested",
                        phases.len()
                    )));
                }
                phases.iter().try_for_each(|&p| ensure_finite("recorded phase", p))
            }
        }
    }
}

/// One experiment: correlated outcome pairs and their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EllipseSample {
    pub n_atoms_a: usize,
    pub n_atoms_b: usize,
    pub true_dphi: f64,
    pub seed: u64,
    pub stream: u64,
    pub points: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase_record: Option<Vec<f64>>,
}

impl EllipseSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Checks that every coordinate sits on its outcome grid.
    pub fn validate(&self) -> Result<()> {
        if self.points.len() < MIN_SHOTS {
            return Err(invalid("an ellipse sample needs at least 5 points"));
        }
        for p in &self.points {
            for (z, n) in [(p[0], self.n_atoms_a), (p[1], self.n_atoms_b)] {
                let i = (z + 1.0) * n as f64 / 2.0;
                if !(i >= -1e-9 && i <= n as f64 + 1e-9) || (i - round(i)).abs() > 1e-9 {
                    return Err(invalid(alloc::format!("value {z} is off the outcome grid of N = {n}")));
                }
            }
        }
        if let Some(rec) = &self.phase_record {
            if rec.len() != self.points.len() {
                return Err(invalid("phase record length differs from point count"));
            }
        }
        Ok(())
    }
}

/// Per-shot random words.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ShotWords(pub [u64; 8]);

/// Counter-based stream of shot blocks for one ellipse.
pub struct ShotStream {
    rng: ChaCha8Rng,
}

impl ShotStream {
    pub fn new(seed: u64, stream: u64, first_shot: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        rng.set_word_pos(WORDS_PER_SHOT * first_shot as u128);
        Self { rng }
    }

    pub fn next_shot(&mut self) -> ShotWords {
        let mut w = [0u64; 8];
        for x in w.iter_mut() {
            *x = self.rng.next_u64();
        }
        ShotWords(w)
    }
}

/// Uniform double in `[0, 1)` from the top 53 bits.
#[inline]
pub fn unit_f64(u: u64) -> f64 {
    (u >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal variate by Box-Muller from two words.
#[inline]
pub fn standard_normal(u1: u64, u2: u64) -> f64 {
    let a = 1.0 - unit_f64(u1);
    let b = unit_f64(u2);
    sqrt(-2.0 * log(a)) * cos(2.0 * PI * b)
}

/// Wraps a phase into `[0, 2 pi)`.
pub fn wrap_phase(phi: f64) -> f64 {
    let t = phi % (2.0 * PI);
    if t < 0.0 {
        t + 2.0 * PI
    } else {
        t
    }
}

/// Inverse-CDF tables of both probes on a uniform grid of common phases.
#[derive(Debug, Clone)]
pub struct PairSampler {
    n_a: usize,
    n_b: usize,
    nodes: usize,
    node_bits: u32,
    dphi: f64,
    cdf_a: Vec<f64>,
    cdf_b: Vec<f64>,
}

/// Bytes held by the two cumulative tables.
pub fn table_bytes(n_a: usize, n_b: usize, nodes: usize) -> usize {
    nodes.saturating_mul(n_a + n_b + 2).saturating_mul(core::mem::size_of::<f64>())
}

fn cumulate(table: PhaseTable) -> Vec<f64> {
    let d = table.n_atoms + 1;
    let mut c = table.probs;
    for row in c.chunks_exact_mut(d) {
        let mut acc = 0.0;
        for x in row.iter_mut() {
            acc += x.max(0.0);
            *x = acc;
        }
        let inv = 1.0 / acc;
        for x in row.iter_mut() {
            *x *= inv;
        }
        row[d - 1] = 1.0;
    }
    c
}

impl PairSampler {
    /// Tabulates `P_A(.|phi + dphi/2)` and `P_B(.|phi - dphi/2)` on `nodes` phases.
    pub fn new(probe_a: &PreparedProbe, probe_b: &PreparedProbe, dphi: f64, nodes: usize) -> Result<Self> {
        Self::with_budget(probe_a, probe_b, dphi, nodes, DEFAULT_MEMORY_BUDGET)
    }

    pub fn with_budget(
        probe_a: &PreparedProbe,
        probe_b: &PreparedProbe,
        dphi: f64,
        nodes: usize,
        budget: usize,
    ) -> Result<Self> {
        ensure_finite("dphi", dphi)?;
        if nodes < 256 || !nodes.is_power_of_two() {
            return Err(invalid("the phase grid size must be a power of two >= 256"));
        }
        let (n_a, n_b) = (probe_a.n_atoms(), probe_b.n_atoms());
        let need = table_bytes(n_a, n_b, nodes);
        if need > budget {
            return Err(invalid(alloc::format!(
                "sampler tables need {need} bytes, budget is {budget}"
            )));
        }
        let cdf_a = cumulate(probe_a.table(0.5 * dphi, nodes)?);
        let cdf_b = cumulate(probe_b.table(-0.5 * dphi, nodes)?);
        Ok(Self { n_a, n_b, nodes, node_bits: nodes.trailing_zeros(), dphi, cdf_a, cdf_b })
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }

    pub fn dphi(&self) -> f64 {
        self.dphi
    }

    /// Cumulative row of probe A (`which = 0`) or B at node `j`.
    pub fn cdf_row(&self, which: usize, j: usize) -> &[f64] {
        if which == 0 {
            &self.cdf_a[j * (self.n_a + 1)..(j + 1) * (self.n_a + 1)]
        } else {
            &self.cdf_b[j * (self.n_b + 1)..(j + 1) * (self.n_b + 1)]
        }
    }

    #[inline]
    fn draw(cdf: &[f64], u: u64) -> usize {
        let x = unit_f64(u);
        cdf.partition_point(|&c| c <= x).min(cdf.len() - 1)
    }

    /// Nearest grid node of a common phase.
    pub fn nearest_node(&self, phi: f64) -> usize {
        let k = self.nodes as f64;
        (round(wrap_phase(phi) * k / (2.0 * PI)) as usize) % self.nodes
    }

    /// One shot: outcome indices and the true common phase used.
    pub fn shot(&self, noise: &NoiseModel, shot: usize, w: &ShotWords) -> (usize, usize, f64) {
        let (node, phi) = match &noise.kind {
            NoiseKind::UniformFull => {
                let j = (w.0[0] >> (64 - self.node_bits)) as usize;
                (j, node_phase(j, self.nodes, 0.0))
            }
            NoiseKind::Fixed { phi } => (self.nearest_node(*phi), *phi),
            NoiseKind::Recorded { phases } => (self.nearest_node(phases[shot]), phases[shot]),
        };
        let ia = Self::draw(self.cdf_row(0, node), w.0[1]);
        let ib = Self::draw(self.cdf_row(1, node), w.0[2]);
        (ia, ib, phi)
    }

    /// Draws `shots` correlated pairs from stream `stream` of `seed`.
    pub fn sample_ellipse(&self, noise: &NoiseModel, shots: usize, seed: u64, stream: u64) -> Result<EllipseSample> {
        if shots < MIN_SHOTS {
            return Err(invalid("at least 5 shots are required"));
        }
        noise.validate(shots)?;
        let mut rng = ShotStream::new(seed, stream, 0);
        let mut points = Vec::with_capacity(shots);
        let mut record = if noise.record_phase { Some(Vec::with_capacity(shots)) } else { None };
        for s in 0..shots {
            let w = rng.next_shot();
            let (ia, ib, phi) = self.shot(noise, s, &w);
            points.push([z_value(self.n_a, ia), z_value(self.n_b, ib)]);
            if let Some(rec) = record.as_mut() {
                let err = if noise.correlation_error_sigma > 0.0 {
                    noise.correlation_error_sigma * standard_normal(w.0[3], w.0[4])
                } else {
                    0.0
                };
                rec.push(phi + err);
            }
        }
        Ok(EllipseSample {
            n_atoms_a: self.n_a,
            n_atoms_b: self.n_b,
            true_dphi: self.dphi,
            seed,
            stream,
            points,
            phase_record: record,
        })
    }
}

/// Slow verification path: one shot with exact distributions at the exact phase.
pub fn sample_shot_exact(
    probe_a: &PreparedProbe,
    probe_b: &PreparedProbe,
    dphi: f64,
    noise: &NoiseModel,
    shot: usize,
    w: &ShotWords,
) -> (f64, f64, f64) {
    let phi = match &noise.kind {
        NoiseKind::UniformFull => 2.0 * PI * unit_f64(w.0[0]),
        NoiseKind::Fixed { phi } => *phi,
        NoiseKind::Recorded { phases } => phases[shot],
    };
    let pick = |probe: &PreparedProbe, ph: f64, u: u64| {
        let d = probe.distribution(ph);
        let mut acc = 0.0;
        let x = unit_f64(u);
        let mut idx = d.probabilities.len() - 1;
        for (i, p) in d.probabilities.iter().enumerate() {
            acc += p;
            if acc > x {
                idx = i;
                break;
            }
        }
        z_value(probe.n_atoms(), idx)
    };
    (pick(probe_a, phi + 0.5 * dphi, w.0[1]), pick(probe_b, phi - 0.5 * dphi, w.0[2]), phi)
}

/// `C (+)= alpha * sum_j A_j (x) B_j` for node-major tables.
pub(crate) fn accumulate_outer(alpha: f64, a: &[f64], da: usize, b: &[f64], db: usize, nodes: usize, c: &mut [f64]) {
    debug_assert_eq!(a.len(), nodes * da);
    debug_assert_eq!(b.len(), nodes * db);
    debug_assert_eq!(c.len(), da * db);
    // SAFETY: the strides describe in-bounds views of `a` (da x nodes, column j
    // contiguous), `b` (nodes x db, row-major) and `c` (da x db, row-major), as
    // checked by the length assertions above.
    unsafe {
        matrixmultiply::dgemm(
            da,
            nodes,
            db,
            alpha,
            a.as_ptr(),
            1,
            da as isize,
            b.as_ptr(),
            db as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            db as isize,
            1,
        );
    }
}

/// Options of the periodic trapezoid quadrature over the common phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    pub initial_nodes: usize,
    pub max_nodes: usize,
    pub rel_tol: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { initial_nodes: 256, max_nodes: 1 << 16, rel_tol: 1e-8 }
    }
}

/// `P(z_A, z_B | dphi)` on the full outcome grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointDistributionGrid {
    pub dphi: f64,
    pub n_atoms_a: usize,
    pub n_atoms_b: usize,
    /// Row-major `grid[i_a * (N_B + 1) + i_b]`.
    pub grid: Vec<f64>,
    pub nodes: usize,
}

impl JointDistributionGrid {
    pub fn get(&self, ia: usize, ib: usize) -> f64 {
        self.grid[ia * (self.n_atoms_b + 1) + ib]
    }

    pub fn total(&self) -> f64 {
        self.grid.iter().sum()
    }

    /// `E[z_A^p z_B^q]`.
    pub fn moment(&self, p: i32, q: i32) -> f64 {
        let db = self.n_atoms_b + 1;
        let mut s = 0.0;
        for ia in 0..=self.n_atoms_a {
            let za = libm::pow(z_value(self.n_atoms_a, ia), p as f64);
            let row = &self.grid[ia * db..(ia + 1) * db];
            for (ib, &v) in row.iter().enumerate() {
                s += v * za * libm::pow(z_value(self.n_atoms_b, ib), q as f64);
            }
        }
        s
    }
}

/// Periodic-trapezoid sum over nodes `2 pi j / nodes + offset`.
pub(crate) fn joint_sum(probe_a: &PreparedProbe, probe_b: &PreparedProbe, dphi: f64, nodes: usize, offset: f64) -> Result<Vec<f64>> {
    let (da, db) = (probe_a.n_atoms() + 1, probe_b.n_atoms() + 1);
    let ta = probe_a.table(offset + 0.5 * dphi, nodes)?;
    let tb = probe_b.table(offset - 0.5 * dphi, nodes)?;
    let mut c = vec![0.0; da * db];
    accumulate_outer(1.0, &ta.probs, da, &tb.probs, db, nodes, &mut c);
    Ok(c)
}

/// Refines a node-sum by doubling: the odd nodes of a `2M` grid form an
/// `M`-node grid shifted by half a spacing.
pub(crate) fn refine_until_converged<F, M>(
    opts: &QuadratureOptions,
    mut sum_at: F,
    mut change: M,
) -> Result<(Vec<f64>, usize)>
where
    F: FnMut(usize, f64) -> Result<Vec<f64>>,
    M: FnMut(&[f64], &[f64]) -> f64,
{
    let mut nodes = opts.initial_nodes;
    let mut sum = sum_at(nodes, 0.0)?;
    let mut avg: Vec<f64> = sum.iter().map(|x| x / nodes as f64).collect();
    while nodes < opts.max_nodes {
        let odd = sum_at(nodes, PI / nodes as f64)?;
        for (s, o) in sum.iter_mut().zip(&odd) {
            *s += o;
        }
        nodes *= 2;
        let next: Vec<f64> = sum.iter().map(|x| x / nodes as f64).collect();
        let delta = change(&avg, &next);
        avg = next;
        if delta < opts.rel_tol {
            return Ok((avg, nodes));
        }
    }
    Err(Error::Numerical(alloc::format!(
        "phase quadrature did not converge within {} nodes",
        opts.max_nodes
    )))
}

/// Joint outcome distribution under uniform common-mode noise.
pub fn joint_distribution(probe_a: &PreparedProbe, probe_b: &PreparedProbe, dphi: f64) -> Result<JointDistributionGrid> {
    joint_distribution_with(probe_a, probe_b, dphi, &QuadratureOptions::default())
}

pub fn joint_distribution_with(
    probe_a: &PreparedProbe,
    probe_b: &PreparedProbe,
    dphi: f64,
    opts: &QuadratureOptions,
) -> Result<JointDistributionGrid> {
    ensure_finite("dphi", dphi)?;
    let (grid, nodes) = refine_until_converged(
        opts,
        |m, off| joint_sum(probe_a, probe_b, dphi, m, off),
        |a, b| a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>(),
    )?;
    let total: f64 = grid.iter().sum();
    let grid = grid.into_iter().map(|x| x / total).collect();
    Ok(JointDistributionGrid {
        dphi,
        n_atoms_a: probe_a.n_atoms(),
        n_atoms_b: probe_b.n_atoms(),
        grid,
        nodes,
    })
}
