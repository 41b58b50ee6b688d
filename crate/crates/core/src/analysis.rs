//! Amplitude ratios `A_f/A_i` against the phonon phase at the peak Hubble
//! rate, and the reference curves they are compared with.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::slice::signed_amplitude;
use crate::integrator::{accumulated_phase, integrate_with, Dopri5};
use crate::model::{AtomSeries, ModelParams, PhononState, RampProfile};
use crate::synth::Trace;

/// Samples per post-ramp fit window used when the model is evaluated directly.
const WINDOW_SAMPLES: usize = 81;
/// Post-ramp periods covered by the default fit window.
const WINDOW_PERIODS: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSweepPoint {
    pub phi_peak: f64,
    pub ratio: f64,
    pub ratio_sigma: f64,
    pub t_i: f64,
}

/// Decaying sinusoid fitted after a ramp, reported at `t_peak`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AmplitudeFit {
    pub amplitude: f64,
    pub sigma: f64,
    /// Phase at `t_peak` of `cos(ω_d (t - t_peak) + ψ)`.
    pub phase: f64,
    pub samples: usize,
}

/// Ramp shape shared by the traces of a sweep; only `t_i` varies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampTemplate {
    #[serde(rename = "R_start")]
    pub r_start: f64,
    #[serde(rename = "R_end")]
    pub r_end: f64,
    pub rise_10_90: f64,
}

impl RampTemplate {
    pub fn contraction() -> Self {
        Self {
            r_start: 38.4,
            r_end: 11.9,
            rise_10_90: 3.6,
        }
    }

    pub fn expansion() -> Self {
        Self {
            r_start: 11.9,
            r_end: 38.4,
            rise_10_90: 3.6,
        }
    }

    pub fn at(&self, t_i: f64) -> Result<RampProfile> {
        RampProfile::from_start_time(self.r_start, self.r_end, t_i, self.rise_10_90)
    }
}

/// Post-ramp frequency, damped frequency and damping rate.
fn final_rates(params: &ModelParams, profile: &RampProfile, atoms: f64) -> Result<(f64, f64, f64)> {
    let omega = params.omega(profile.r_end, atoms);
    let gamma = params.gamma(profile.r_end, atoms)?;
    let wd2 = omega * omega - gamma * gamma;
    if wd2 <= 0.0 {
        return Err(Error::OverdampedUnsupported(omega / (2.0 * gamma)));
    }
    Ok((omega, wd2.sqrt(), gamma))
}

/// Default fit window: from 99% ramp completion over four post-ramp periods.
pub fn default_window(params: &ModelParams, profile: &RampProfile, atoms: &AtomSeries) -> (f64, f64) {
    let start = profile.completion_time(0.99);
    let omega = params.omega(profile.r_end, atoms.at(start));
    (start, start + WINDOW_PERIODS * 2.0 * PI / omega)
}

/// Fits `A e^{-γ_f (t - t_peak)} cos(ω_d (t - t_peak) + ψ)` to the signed
/// series `(times, dn)` inside `window`, with `γ_f` and `ω_d` taken from
/// `params` at the final radius.
pub fn final_amplitude(
    times: &[f64],
    dn: &[f64],
    params: &ModelParams,
    profile: &RampProfile,
    atoms: &AtomSeries,
    window: (f64, f64),
) -> Result<AmplitudeFit> {
    if window.0 < profile.completion_time(0.99) {
        return Err(Error::invalid(
            "fit window must start after 99% ramp completion",
        ));
    }
    let t_peak = profile.peak_time()?;
    let (_, wd, gamma) = final_rates(params, profile, atoms.at(window.0))?;
    let rows: Vec<(f64, f64, f64)> = times
        .iter()
        .zip(dn)
        .filter(|(&t, _)| t >= window.0 && t <= window.1)
        .map(|(&t, &y)| {
            let s = t - t_peak;
            let e = (-gamma * s).exp();
            let (sn, cs) = (wd * s).sin_cos();
            (e * cs, -e * sn, y)
        })
        .collect();
    if rows.len() < 5 {
        return Err(Error::InsufficientData {
            found: rows.len(),
            needed: 5,
        });
    }
    let (mut cc, mut cs, mut ss, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(c, s, y) in &rows {
        cc += c * c;
        cs += c * s;
        ss += s * s;
        yc += y * c;
        ys += y * s;
    }
    let det = cc * ss - cs * cs;
    let a = (yc * ss - ys * cs) / det;
    let b = (ys * cc - yc * cs) / det;
    let rss: f64 = rows
        .iter()
        .map(|&(c, s, y)| (y - a * c - b * s).powi(2))
        .sum();
    let s2 = rss / (rows.len() - 2) as f64;
    let (vaa, vbb, vab) = (s2 * ss / det, s2 * cc / det, -s2 * cs / det);
    let amplitude = a.hypot(b);
    let sigma = if amplitude > 0.0 {
        ((a * a * vaa + b * b * vbb + 2.0 * a * b * vab) / (amplitude * amplitude))
            .max(0.0)
            .sqrt()
    } else {
        vaa.max(vbb).max(0.0).sqrt()
    };
    Ok(AmplitudeFit {
        amplitude,
        sigma,
        phase: b.atan2(a),
        samples: rows.len(),
    })
}

/// [`final_amplitude`] on the slice amplitudes of a measured trace, signed
/// along `sin(mθ + δθ)` with the offset from `params`.
pub fn final_amplitude_of_trace(
    trace: &Trace,
    params: &ModelParams,
    window: Option<(f64, f64)>,
) -> Result<AmplitudeFit> {
    let profile = &trace.spec.profile;
    let atoms = &trace.spec.n_series;
    let dn: Vec<f64> = trace
        .matrix
        .slices()
        .map(|s| signed_amplitude(s, params.m, params.dtheta))
        .collect();
    let window = window.unwrap_or_else(|| default_window(params, profile, atoms));
    final_amplitude(&trace.spec.t_samples, &dn, params, profile, atoms, window)
}

/// Pre-ramp envelope `dn_i N(0)/N_ref e^{-γ_i t_peak}`, i.e. the amplitude
/// at `t_peak` had there been no ramp.
pub fn initial_amplitude(params: &ModelParams, profile: &RampProfile, atoms: &AtomSeries) -> Result<f64> {
    let n0 = atoms.at(0.0);
    let gamma = params.gamma(profile.r_start, n0)?;
    let t_peak = profile.peak_time()?;
    Ok(params.dn_i * n0 / params.n_ref * (-gamma * t_peak).exp())
}

/// Integrates one noiseless trace and reads off `φ_peak` and `A_f/A_i`.
pub fn sweep_point(params: &ModelParams, profile: &RampProfile, atoms: f64) -> Result<PhaseSweepPoint> {
    let series = AtomSeries::constant(atoms);
    let window = default_window(params, profile, &series);
    sweep_point_in(params, profile, atoms, window)
}

fn sweep_point_in(
    params: &ModelParams,
    profile: &RampProfile,
    atoms: f64,
    window: (f64, f64),
) -> Result<PhaseSweepPoint> {
    let series = AtomSeries::constant(atoms);
    let t_peak = profile.peak_time()?;
    let phi_peak = accumulated_phase(params, profile, &series, t_peak);
    let amplitude = params.dn_i * atoms / params.n_ref;
    let init = PhononState::from_density(params, profile, atoms, amplitude, params.phi_0, 0.0)?;
    let grid: Vec<f64> = (0..WINDOW_SAMPLES)
        .map(|k| window.0 + (window.1 - window.0) * k as f64 / (WINDOW_SAMPLES - 1) as f64)
        .collect();
    let traj = integrate_with(&Dopri5::default(), params, profile, &series, init, &grid)?;
    let fit = final_amplitude(&traj.times, &traj.dn, params, profile, &series, window)?;
    let a_i = initial_amplitude(params, profile, &series)?;
    Ok(PhaseSweepPoint {
        phi_peak,
        ratio: fit.amplitude / a_i,
        ratio_sigma: fit.sigma / a_i,
        t_i: profile.t_i(),
    })
}

/// Sweep over ramp start times with fixed `φ_0`.
pub fn phase_sweep(
    params: &ModelParams,
    template: &RampTemplate,
    atoms: f64,
    t_i_list: &[f64],
) -> Result<Vec<PhaseSweepPoint>> {
    if t_i_list.is_empty() {
        return Err(Error::invalid("empty sweep"));
    }
    t_i_list
        .iter()
        .map(|&t_i| sweep_point(params, &template.at(t_i)?, atoms))
        .collect()
}

/// Ramp start time at which the accumulated phase at `t_peak` equals
/// `phi_peak` (secant iteration; the phase grows monotonically with `t_i`).
pub fn start_time_for_phase(
    params: &ModelParams,
    template: &RampTemplate,
    atoms: f64,
    phi_peak: f64,
) -> Result<f64> {
    let series = AtomSeries::constant(atoms);
    let g = |t_i: f64| -> Result<f64> {
        let profile = template.at(t_i)?;
        Ok(accumulated_phase(params, &profile, &series, profile.peak_time()?) - phi_peak)
    };
    let omega_i = params.omega(template.r_start, atoms);
    let mut a = ((phi_peak - params.phi_0) / omega_i - template.rise_10_90).max(0.0);
    let mut b = a + 1.0;
    let (mut ga, mut gb) = (g(a)?, g(b)?);
    for _ in 0..60 {
        if gb.abs() < 1e-11 {
            break;
        }
        let next = b - gb * (b - a) / (gb - ga);
        if !next.is_finite() {
            break;
        }
        (a, ga) = (b, gb);
        b = next.max(0.0);
        gb = g(b)?;
    }
    if gb.abs() > 1e-8 {
        return Err(Error::invalid(format!(
            "phase {phi_peak} is not reachable with a non-negative start time"
        )));
    }
    Ok(b)
}

/// Sweep over target phases, each reached by choosing `t_i` with fixed `φ_0`.
pub fn phase_sweep_phi(
    params: &ModelParams,
    template: &RampTemplate,
    atoms: f64,
    phi_grid: &[f64],
) -> Result<Vec<PhaseSweepPoint>> {
    if phi_grid.is_empty() {
        return Err(Error::invalid("empty sweep"));
    }
    phi_grid
        .iter()
        .map(|&phi| {
            let t_i = start_time_for_phase(params, template, atoms, phi)?;
            sweep_point(params, &template.at(t_i)?, atoms)
        })
        .collect()
}

/// Sweep over target phases on one fixed ramp, dialling `φ_0` instead.
pub fn phase_sweep_dial(
    params: &ModelParams,
    profile: &RampProfile,
    atoms: f64,
    phi_grid: &[f64],
) -> Result<Vec<PhaseSweepPoint>> {
    if phi_grid.is_empty() {
        return Err(Error::invalid("empty sweep"));
    }
    let series = AtomSeries::constant(atoms);
    let base = accumulated_phase(params, profile, &series, profile.peak_time()?) - params.phi_0;
    phi_grid
        .iter()
        .map(|&phi| {
            let mut p = params.clone();
            p.phi_0 = phi - base;
            sweep_point(&p, profile, atoms)
        })
        .collect()
}

/// `(R_f/R_i)^{(α-2)/4}`, the slow-ramp amplitude ratio when `γ_H = α`.
pub fn adiabatic_scaling(alpha: f64, r_start: f64, r_end: f64) -> f64 {
    (r_end / r_start).powf((alpha - 2.0) / 4.0)
}

/// Undamped copy of `params` with `γ_H = α`, and a ramp spanning at least
/// 100 periods of the slower of the two end frequencies.
fn adiabatic_setup(
    params: &ModelParams,
    r_start: f64,
    r_end: f64,
    atoms: f64,
) -> Result<(ModelParams, RampProfile, (f64, f64))> {
    let mut p = params.clone();
    p.undamped = true;
    p.gamma_h = p.alpha;
    let slowest = p.omega(r_start, atoms).min(p.omega(r_end, atoms));
    let rise = 100.0 * 2.0 * PI / slowest;
    let profile = RampProfile::new(r_start, r_end, 2.0 * rise, rise)?;
    let start = profile.t_mid + 2.0 * rise;
    let window = (
        start,
        start + WINDOW_PERIODS * 2.0 * PI / p.omega(r_end, atoms),
    );
    Ok((p, profile, window))
}

/// Amplitude ratio across a ramp stretched to at least 100 oscillation
/// periods, without damping and with `γ_H = α`.
pub fn adiabatic_reference(params: &ModelParams, r_start: f64, r_end: f64, atoms: f64) -> Result<f64> {
    let (p, profile, window) = adiabatic_setup(params, r_start, r_end, atoms)?;
    Ok(sweep_point_in(&p, &profile, atoms, window)?.ratio)
}

/// [`adiabatic_reference`] at each target phase, reached by dialling `φ_0`.
pub fn adiabatic_sweep(
    params: &ModelParams,
    r_start: f64,
    r_end: f64,
    atoms: f64,
    phi_grid: &[f64],
) -> Result<Vec<f64>> {
    let (p, profile, window) = adiabatic_setup(params, r_start, r_end, atoms)?;
    let series = AtomSeries::constant(atoms);
    let base = accumulated_phase(&p, &profile, &series, profile.peak_time()?) - p.phi_0;
    phi_grid
        .iter()
        .map(|&phi| {
            let mut q = p.clone();
            q.phi_0 = phi - base;
            Ok(sweep_point_in(&q, &profile, atoms, window)?.ratio)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    #[serde(rename = "gamma_H")]
    pub gamma_h: f64,
    pub points: Vec<PhaseSweepPoint>,
}

impl GainCurve {
    pub fn mean(&self) -> f64 {
        self.points.iter().map(|p| p.ratio).sum::<f64>() / self.points.len() as f64
    }

    /// `(max - min) / mean` of the ratio.
    pub fn peak_to_trough(&self) -> f64 {
        let (lo, hi) = self
            .points
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                (lo.min(p.ratio), hi.max(p.ratio))
            });
        (hi - lo) / self.mean()
    }
}

/// Uniform grid of `n` phases over `[π, 3π]`.
pub fn default_phase_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![2.0 * PI];
    }
    (0..n)
        .map(|k| PI + 2.0 * PI * k as f64 / (n - 1) as f64)
        .collect()
}

/// One `t_i` sweep over `phi_grid` per value of `γ_H`.
pub fn gain_curve_family(
    params: &ModelParams,
    template: &RampTemplate,
    atoms: f64,
    gamma_h_list: &[f64],
    phi_grid: &[f64],
) -> Result<Vec<GainCurve>> {
    if gamma_h_list.is_empty() {
        return Err(Error::invalid("no gamma_H values"));
    }
    gamma_h_list
        .iter()
        .map(|&gamma_h| {
            let mut p = params.clone();
            p.gamma_h = gamma_h;
            Ok(GainCurve {
                gamma_h,
                points: phase_sweep_phi(&p, template, atoms, phi_grid)?,
            })
        })
        .collect()
}

/// Writes `phi_peak/pi ratio sigma t_i` rows.
pub fn write_sweep_table<W: Write>(points: &[PhaseSweepPoint], mut out: W) -> std::io::Result<()> {
    writeln!(out, "# phi_peak/pi ratio sigma t_i")?;
    for p in points {
        writeln!(
            out,
            "{:.9e} {:.9e} {:.9e} {:.9e}",
            p.phi_peak / PI,
            p.ratio,
            p.ratio_sigma,
            p.t_i
        )?;
    }
    Ok(())
}
