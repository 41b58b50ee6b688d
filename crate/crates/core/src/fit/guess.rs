//! Moment-style starting point for the global fit.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::fit::global::base_params;
use crate::fit::params::{circular_mean, Globals, ParamVector};
use crate::fit::slice::{signed_amplitude, slice_fit_mode};
use crate::synth::{Dataset, Trace};

/// Damped sinusoid `e^{-γt} A cos(ω t + φ)` fitted to one signed series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingFit {
    pub radius: f64,
    pub omega_d: f64,
    pub quality: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub rss: f64,
}

const QUALITY_GRID: [f64; 9] = [0.8, 1.2, 2.0, 3.0, 4.5, 7.0, 10.0, 15.0, 25.0];

/// Linear part of the damped-sinusoid fit for fixed `(ω_d, Q)`.
fn damped_lsq(t: &[f64], y: &[f64], omega_d: f64, quality: f64) -> (f64, f64, f64) {
    let omega = omega_d / (1.0 - 1.0 / (4.0 * quality * quality)).max(1e-6).sqrt();
    let gamma = omega / (2.0 * quality);
    let (mut cc, mut cs, mut ss, mut yc, mut ys) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in t.iter().zip(y) {
        let e = (-gamma * t).exp();
        let (s, c) = (omega_d * t).sin_cos();
        let (c, s) = (e * c, e * s);
        cc += c * c;
        cs += c * s;
        ss += s * s;
        yc += y * c;
        ys += y * s;
    }
    let det = cc * ss - cs * cs;
    if det.abs() < 1e-300 {
        return (0.0, 0.0, f64::INFINITY);
    }
    let a = (yc * ss - ys * cs) / det;
    let b = (ys * cc - yc * cs) / det;
    let rss = t
        .iter()
        .zip(y)
        .map(|(&t, &y)| {
            let (s, c) = (omega_d * t).sin_cos();
            let r = y - (-gamma * t).exp() * (a * c + b * s);
            r * r
        })
        .sum();
    (a, b, rss)
}

/// Grid search over `(ω_d, Q)` followed by a golden-section refinement
/// of `ω_d`.
pub fn fit_damped_sinusoid(t: &[f64], y: &[f64]) -> Result<RingFit> {
    if t.len() < 6 {
        return Err(Error::InsufficientData {
            found: t.len(),
            needed: 6,
        });
    }
    let span = t[t.len() - 1] - t[0];
    let dt_min = t.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    let (lo, hi) = ((PI / span).max(1e-6), PI / dt_min);
    let steps = 600;
    let mut best = (f64::INFINITY, lo, QUALITY_GRID[0]);
    for i in 0..=steps {
        let w = lo * (hi / lo).powf(i as f64 / steps as f64);
        for q in QUALITY_GRID {
            let (_, _, rss) = damped_lsq(t, y, w, q);
            if rss < best.0 {
                best = (rss, w, q);
            }
        }
    }
    let (_, w0, q) = best;
    let ratio = (hi / lo).powf(1.0 / steps as f64);
    let (mut a, mut b) = (w0 / ratio, w0 * ratio);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |w: f64| damped_lsq(t, y, w, q).2;
    for _ in 0..60 {
        let (c, d) = (b - g * (b - a), a + g * (b - a));
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let omega_d = 0.5 * (a + b);
    let (ca, cb, rss) = damped_lsq(t, y, omega_d, q);
    Ok(RingFit {
        radius: f64::NAN,
        omega_d,
        quality: q,
        amplitude: ca.hypot(cb),
        phase: (-cb).atan2(ca),
        rss,
    })
}

/// Axis (mod π) of the slice coefficients `(a_k, b_k)` of a trace.
fn offset_axis(trace: &Trace, m: u32) -> Result<(f64, f64)> {
    let (mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0);
    for slice in trace.matrix.slices() {
        let f = slice_fit_mode(slice, m)?;
        let (a, b) = (f.amplitude * f.offset.cos(), f.amplitude * f.offset.sin());
        saa += a * a;
        sbb += b * b;
        sab += a * b;
    }
    Ok((2.0 * sab, saa - sbb))
}

fn ring_fit(trace: &Trace, m: u32, dtheta: f64) -> Result<RingFit> {
    let t_end = if trace.spec.profile.is_constant() {
        f64::INFINITY
    } else {
        trace.spec.profile.t_i()
    };
    let (t, y): (Vec<f64>, Vec<f64>) = trace
        .spec
        .t_samples
        .iter()
        .zip(trace.matrix.slices())
        .filter(|(&t, _)| t < t_end)
        .map(|(&t, s)| (t, signed_amplitude(s, m, dtheta)))
        .unzip();
    let mut fit = fit_damped_sinusoid(&t, &y)?;
    fit.radius = trace.spec.profile.r_start;
    Ok(fit)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Least-squares line `y = p + q x`.
fn line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (my - slope * mx, slope)
}

/// Starting point from the constant-radius traces: sound speed and `α`
/// from a log-log regression of `ω R` against `R`, `Q` from the envelope
/// decay, `δn_i` and `φ_0` from the fitted amplitude and phase, `δθ` from
/// the principal axis of the slice fits. `γ_H` starts at `α`. Falls back to
/// the pre-ramp part of ramped traces when no constant ring is present.
pub fn initial_guess(dataset: &Dataset) -> Result<ParamVector> {
    let base = base_params(dataset);
    let m = base.m;
    let n = dataset.traces.len();
    if n == 0 {
        return Err(Error::invalid("dataset has no traces"));
    }
    let (mut sy, mut sx) = (0.0, 0.0);
    let mut axes = Vec::with_capacity(n);
    for trace in &dataset.traces {
        let (y, x) = offset_axis(trace, m)?;
        sy += y;
        sx += x;
        axes.push(0.5 * y.atan2(x));
    }
    let shared_dtheta = 0.5 * sy.atan2(sx);

    let constant: Vec<&Trace> = dataset
        .traces
        .iter()
        .filter(|t| t.spec.profile.is_constant())
        .collect();
    let sources: Vec<&Trace> = if constant.is_empty() {
        dataset.traces.iter().collect()
    } else {
        constant
    };
    let rings: Vec<(RingFit, f64)> = sources
        .iter()
        .filter_map(|t| {
            ring_fit(t, m, shared_dtheta)
                .ok()
                .map(|f| (f, t.spec.n_series.at(0.0) / base.n_ref))
        })
        .filter(|(f, _)| f.amplitude > 0.0 && f.omega_d.is_finite())
        .collect();
    if rings.is_empty() {
        return Err(Error::InsufficientData {
            found: 0,
            needed: 1,
        });
    }

    // c = ω R / m at each ring radius.
    let log_r: Vec<f64> = rings.iter().map(|(f, _)| f.radius.ln()).collect();
    let log_c: Vec<f64> = rings
        .iter()
        .map(|(f, _)| {
            let omega = f.omega_d / (1.0 - 1.0 / (4.0 * f.quality * f.quality)).max(1e-6).sqrt();
            (omega * f.radius / f64::from(m)).ln()
        })
        .collect();
    let distinct = log_r.iter().any(|r| (r - log_r[0]).abs() > 1e-9);
    let (alpha, c_theta_i) = if distinct {
        let (p, q) = line(&log_r, &log_c);
        let alpha = (-2.0 * q).clamp(0.25, 1.4);
        (alpha, (p + q * base.r_i_ref.ln()).exp())
    } else {
        let alpha: f64 = 0.5;
        let c = log_c[0].exp() * (rings[0].0.radius / base.r_i_ref).powf(alpha / 2.0);
        (alpha, c)
    };

    let radii: Vec<f64> = rings.iter().map(|(f, _)| f.radius).collect();
    let quality: Vec<f64> = rings.iter().map(|(f, _)| f.quality).collect();
    let (q_i, q_f) = if distinct {
        let (p, q) = line(&radii, &quality);
        (p + q * base.r_i_ref, p + q * base.r_f_ref)
    } else {
        (quality[0], quality[0])
    };

    let dn_i = median(rings.iter().map(|(f, s)| f.amplitude / s).collect());
    let phi_0 = circular_mean(&rings.iter().map(|(f, _)| f.phase).collect::<Vec<_>>());

    let mut pv = ParamVector {
        globals: Globals {
            gamma_h: alpha,
            alpha,
            q_i: q_i.clamp(0.8, 40.0),
            q_f: q_f.clamp(0.8, 40.0),
            c_theta_i,
            dn_i,
        },
        phi_0: vec![phi_0; n],
        dtheta: axes,
        n_scale: dataset.traces.iter().map(|t| t.spec.n_series.mean()).collect(),
    };
    // Keep every per-trace offset on the same branch as the shared one.
    for d in &mut pv.dtheta {
        if (*d - shared_dtheta).cos() < 0.0 {
            *d += PI;
        }
    }
    Ok(pv)
}
