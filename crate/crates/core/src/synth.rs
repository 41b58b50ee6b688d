//! Synthetic angular density-perturbation matrices `δn_1D(θ_j, t_k)` for
//! sets of ramp schedules, with atom-number drift and seeded noise.

use std::f64::consts::PI;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{self, Dopri5, SolveStats};
use crate::model::{AtomSeries, ModelParams, PhononState, RampProfile};

/// Temporal phase of the presets. Puts the earliest contraction
/// (`t_i = 27 ms`) at `φ_peak ≈ 1.3π` with the contraction parameters.
pub const PRESET_PHI_0: f64 = 0.72;
/// Azimuthal offset of the presets.
pub const PRESET_DTHETA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Expansion,
    Contraction,
    ConstantR,
}

impl TraceKind {
    pub fn of(profile: &RampProfile) -> Self {
        if profile.r_end > profile.r_start {
            TraceKind::Expansion
        } else if profile.r_end < profile.r_start {
            TraceKind::Contraction
        } else {
            TraceKind::ConstantR
        }
    }
}

/// Everything needed to synthesise one trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSpec {
    pub id: String,
    pub profile: RampProfile,
    pub t_samples: Vec<f64>,
    pub theta_bins: usize,
    #[serde(rename = "N_series")]
    pub n_series: AtomSeries,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl TraceSpec {
    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        self.n_series.validate()?;
        if self.theta_bins < 8 {
            return Err(Error::invalid(format!(
                "trace {}: theta_bins must be >= 8",
                self.id
            )));
        }
        if self.t_samples.is_empty()
            || self.t_samples[0] < 0.0
            || self.t_samples.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(Error::invalid(format!(
                "trace {}: t_samples must be non-negative and strictly increasing",
                self.id
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("trace {}: negative noise", self.id)));
        }
        Ok(())
    }

    pub fn kind(&self) -> TraceKind {
        TraceKind::of(&self.profile)
    }
}

/// Row-major matrix: one row per time sample, one column per θ bin.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    pub n_t: usize,
    pub n_theta: usize,
    pub values: Vec<f64>,
}

impl DensityMatrix {
    pub fn zeros(n_t: usize, n_theta: usize) -> Self {
        Self {
            n_t,
            n_theta,
            values: vec![0.0; n_t * n_theta],
        }
    }

    pub fn get(&self, k: usize, j: usize) -> f64 {
        self.values[k * self.n_theta + j]
    }

    /// Angular profile at time sample `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_theta..(k + 1) * self.n_theta]
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub spec: TraceSpec,
    pub kind: TraceKind,
    pub matrix: DensityMatrix,
}

/// Metadata shared by all traces of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    #[serde(rename = "R_i_ref")]
    pub r_i_ref: f64,
    #[serde(rename = "R_f_ref")]
    pub r_f_ref: f64,
    #[serde(rename = "N_ref")]
    pub n_ref: f64,
    #[serde(default = "one")]
    pub m: u32,
    /// Parameters the data were generated with, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<ModelParams>,
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    pub traces: Vec<Trace>,
}

impl Dataset {
    pub fn n_cells(&self) -> usize {
        self.traces.iter().map(|t| t.matrix.values.len()).sum()
    }

    /// The dataset must not mix expansions with contractions.
    pub fn ramp_kind(&self) -> Option<TraceKind> {
        let mut kind = None;
        for t in &self.traces {
            if t.kind != TraceKind::ConstantR {
                match kind {
                    None => kind = Some(t.kind),
                    Some(k) if k != t.kind => return None,
                    _ => {}
                }
            }
        }
        kind.or(Some(TraceKind::ConstantR))
    }
}

/// Uniform angles `θ_j = 2πj / bins`.
pub fn theta_grid(bins: usize) -> Vec<f64> {
    (0..bins).map(|j| 2.0 * PI * j as f64 / bins as f64).collect()
}

/// Density perturbation of a trace for unit amplitude, at phases 0 and π/2.
///
/// By linearity the model trace is
/// `dn_i (cos φ_0 · cos_part + sin φ_0 · sin_part)`, with the atom-number
/// factor `N(t)/N_ref` already applied to both parts.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceBasis {
    pub cos_part: Vec<f64>,
    pub sin_part: Vec<f64>,
}

impl TraceBasis {
    pub fn compute(
        params: &ModelParams,
        profile: &RampProfile,
        atoms: &AtomSeries,
        t_samples: &[f64],
    ) -> Result<Self> {
        let n0 = atoms.at(0.0);
        let a = PhononState::from_density(params, profile, n0, 1.0, 0.0, 0.0)?;
        let b = PhononState::from_density(params, profile, n0, 1.0, PI / 2.0, 0.0)?;
        let n = t_samples.len();
        let mut cos_part = vec![0.0; n];
        let mut sin_part = vec![0.0; n];
        let mut stats = SolveStats::default();
        integrator::propagate(
            &Dopri5::default(),
            params,
            profile,
            atoms,
            0.0,
            [a.phi, a.dphi_dt, b.phi, b.dphi_dt],
            t_samples[n - 1],
            t_samples,
            |k, t, y| {
                let radius = profile.radius(t);
                let scale = atoms.at(t) / params.n_ref;
                cos_part[k] = scale * params.density_from_phase(radius, y[1]);
                sin_part[k] = scale * params.density_from_phase(radius, y[3]);
            },
            &mut stats,
        )?;
        if cos_part.iter().chain(&sin_part).any(|v| !v.is_finite()) {
            return Err(Error::StiffFailure { t: t_samples[n - 1] });
        }
        Ok(Self { cos_part, sin_part })
    }

    /// `δn(t_k)` for amplitude `dn_i` and phase `phi_0`.
    pub fn envelope(&self, dn_i: f64, phi_0: f64) -> Vec<f64> {
        let (s, c) = phi_0.sin_cos();
        self.cos_part
            .iter()
            .zip(&self.sin_part)
            .map(|(u, v)| dn_i * (c * u + s * v))
            .collect()
    }
}

/// Fills `δn(t_k) sin(mθ_j + δθ)` into a matrix.
pub fn outer_product(dn: &[f64], theta_bins: usize, m: u32, dtheta: f64) -> DensityMatrix {
    let angular: Vec<f64> = theta_grid(theta_bins)
        .into_iter()
        .map(|th| (f64::from(m) * th + dtheta).sin())
        .collect();
    let mut out = DensityMatrix::zeros(dn.len(), theta_bins);
    for (k, &d) in dn.iter().enumerate() {
        for (j, &a) in angular.iter().enumerate() {
            out.values[k * theta_bins + j] = d * a;
        }
    }
    out
}

/// Noise-free matrix for one trace.
pub fn forward_trace(params: &ModelParams, spec: &TraceSpec) -> Result<DensityMatrix> {
    params.validate()?;
    spec.validate()?;
    let basis = TraceBasis::compute(params, &spec.profile, &spec.n_series, &spec.t_samples)?;
    let dn = basis.envelope(params.dn_i, params.phi_0);
    Ok(outer_product(&dn, spec.theta_bins, params.m, params.dtheta))
}

/// Standard normal deviate for one cell, from a ChaCha stream addressed by
/// `(seed, trace, cell)`.
fn cell_normal(rng: &mut ChaCha8Rng, cell: u64) -> f64 {
    rng.set_word_pos(u128::from(cell) * 4);
    let unit = |x: u64| ((x >> 11) as f64 + 1.0) * (1.0 / (1u64 << 53) as f64);
    let u1 = unit(rng.next_u64());
    let u2 = unit(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Adds independent Gaussian noise to every cell. Deterministic in
/// `(seed, trace_index, k, j)`; `sigma = 0` returns the input unchanged.
pub fn add_noise(
    matrix: &DensityMatrix,
    sigma: f64,
    seed: u64,
    trace_index: usize,
) -> DensityMatrix {
    let mut out = matrix.clone();
    if sigma == 0.0 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trace_index as u64);
    for (cell, v) in out.values.iter_mut().enumerate() {
        *v += sigma * cell_normal(&mut rng, cell as u64);
    }
    out
}

/// Synthesises every trace (with its own noise level and seed).
pub fn build_dataset(params: &ModelParams, specs: &[TraceSpec]) -> Result<Dataset> {
    if specs.is_empty() {
        return Err(Error::invalid("no traces to build"));
    }
    let mut seen = std::collections::HashSet::new();
    for spec in specs {
        if !seen.insert(spec.id.as_str()) {
            return Err(Error::DuplicateTrace(spec.id.clone()));
        }
    }
    let traces = specs
        .iter()
        .enumerate()
        .map(|(i, spec)| {
            let clean = forward_trace(params, spec)?;
            Ok(Trace {
                spec: spec.clone(),
                kind: spec.kind(),
                matrix: add_noise(&clean, spec.noise_sigma, spec.seed, i),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        meta: DatasetMeta {
            r_i_ref: params.r_i_ref,
            r_f_ref: params.r_f_ref,
            n_ref: params.n_ref,
            m: params.m,
            truth: Some(params.clone()),
        },
        traces,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    PaperContraction,
    PaperExpansion,
}

impl Preset {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "paper-contraction" => Ok(Preset::PaperContraction),
            "paper-expansion" => Ok(Preset::PaperExpansion),
            other => Err(Error::invalid(format!("unknown preset `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::PaperContraction => "paper-contraction",
            Preset::PaperExpansion => "paper-expansion",
        }
    }

    pub fn params(&self) -> ModelParams {
        let mut p = match self {
            Preset::PaperContraction => ModelParams::table_contraction(),
            Preset::PaperExpansion => ModelParams::table_expansion(),
        };
        p.phi_0 = PRESET_PHI_0;
        p.dtheta = PRESET_DTHETA;
        p
    }

    /// `(first, last)` 10%-point times of the ramped traces and their count.
    pub fn ramp_schedule(&self) -> (f64, f64, usize) {
        match self {
            Preset::PaperContraction => (27.0, 70.0, 17),
            Preset::PaperExpansion => (6.5, 23.0, 11),
        }
    }
}

/// Knobs of the preset datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PresetOptions {
    /// Noise standard deviation as a fraction of `dn_i`.
    pub noise_fraction: f64,
    /// Fractional atom loss across a ramp.
    pub atom_drop: f64,
    /// Linear drift of the atom number across the dataset (±).
    pub atom_drift: f64,
    pub theta_bins: usize,
    pub time_samples: usize,
    pub t_max: f64,
    pub rise_10_90: f64,
    pub constant_traces: usize,
    pub seed: u64,
}

impl Default for PresetOptions {
    fn default() -> Self {
        Self {
            noise_fraction: 0.05,
            atom_drop: 0.10,
            atom_drift: 0.05,
            theta_bins: 64,
            time_samples: 45,
            t_max: 150.0,
            rise_10_90: 3.6,
            constant_traces: 7,
            seed: 0,
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Trace specs of a preset: the ramped traces followed by the
/// constant-radius rings.
pub fn preset_specs(preset: Preset, params: &ModelParams, opts: &PresetOptions) -> Result<Vec<TraceSpec>> {
    let (t_first, t_last, n_ramps) = preset.ramp_schedule();
    let t_samples = linspace(0.0, opts.t_max, opts.time_samples);
    let (r_start, r_end) = (params.r_i_ref, params.r_f_ref);
    let prefix = match preset {
        Preset::PaperContraction => "contraction",
        Preset::PaperExpansion => "expansion",
    };

    let mut profiles = Vec::new();
    for (i, t_i) in linspace(t_first, t_last, n_ramps).into_iter().enumerate() {
        profiles.push((
            format!("{prefix}-{i:02}"),
            RampProfile::from_start_time(r_start, r_end, t_i, opts.rise_10_90)?,
        ));
    }
    let (r_lo, r_hi) = (r_start.min(r_end), r_start.max(r_end));
    for (i, r) in linspace(r_lo, r_hi, opts.constant_traces).into_iter().enumerate() {
        profiles.push((format!("constant-{i:02}"), RampProfile::constant(r)));
    }

    let total = profiles.len();
    profiles
        .into_iter()
        .enumerate()
        .map(|(i, (id, profile))| {
            let drift = if total > 1 {
                1.0 - opts.atom_drift + 2.0 * opts.atom_drift * i as f64 / (total - 1) as f64
            } else {
                1.0
            };
            let values = t_samples
                .iter()
                .map(|&t| {
                    let progress = if profile.is_constant() {
                        0.0
                    } else {
                        (profile.radius(t) - profile.r_start) / (profile.r_end - profile.r_start)
                    };
                    params.n_ref * drift * (1.0 - opts.atom_drop * progress)
                })
                .collect();
            let spec = TraceSpec {
                id,
                profile,
                t_samples: t_samples.clone(),
                theta_bins: opts.theta_bins,
                n_series: AtomSeries::new(t_samples.clone(), values)?,
                noise_sigma: opts.noise_fraction * params.dn_i,
                seed: opts.seed,
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

/// Builds a preset dataset with the preset's own parameters.
pub fn preset_dataset(preset: Preset, opts: &PresetOptions) -> Result<Dataset> {
    let params = preset.params();
    let specs = preset_specs(preset, &params, opts)?;
    build_dataset(&params, &specs)
}
