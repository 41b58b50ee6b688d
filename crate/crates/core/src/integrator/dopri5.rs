//! Dormand–Prince 5(4) explicit Runge–Kutta pair with the continuous
//! extension of Hairer, Nørsett & Wanner (`dopri5.f`), specialised to
//! fixed-size states.

use crate::error::{Error, Result};

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Step-size policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepControl {
    Adaptive { rtol: f64, atol: f64 },
    /// Constant step (the last step is shortened to land on the endpoint).
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub control: StepControl,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Self::adaptive(super::RTOL, super::ATOL)
    }
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct SolveStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for (coef, k) in terms {
        let c = h * coef;
        for i in 0..N {
            out[i] += c * k[i];
        }
    }
    out
}

impl Dopri5 {
    pub fn adaptive(rtol: f64, atol: f64) -> Self {
        Self {
            control: StepControl::Adaptive { rtol, atol },
            max_steps: 50_000_000,
        }
    }

    pub fn fixed(h: f64) -> Self {
        Self {
            control: StepControl::Fixed(h.abs()),
            max_steps: usize::MAX,
        }
    }

    /// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
    ///
    /// `samples` must be ordered in the direction of integration and lie in
    /// `[t0, t1]`; `sink(i, t, y)` receives the dense-output state at each.
    /// Returns the state at `t1`.
    pub fn solve<const N: usize, F, S>(
        &self,
        mut f: F,
        t0: f64,
        y0: [f64; N],
        t1: f64,
        samples: &[f64],
        mut sink: S,
        stats: &mut SolveStats,
    ) -> Result<[f64; N]>
    where
        F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
        S: FnMut(usize, f64, &[f64; N]),
    {
        let dir = if t1 >= t0 { 1.0 } else { -1.0 };
        let mut next = 0;
        while next < samples.len() && (samples[next] - t0) * dir <= 0.0 {
            sink(next, samples[next], &y0);
            next += 1;
        }
        if t1 == t0 {
            return Ok(y0);
        }

        let mut t = t0;
        let mut y = y0;
        let mut k1 = f(t, &y)?;
        stats.evaluations += 1;

        let mut h = match self.control {
            StepControl::Fixed(h) => h * dir,
            StepControl::Adaptive { rtol, atol } => {
                self.initial_step(&mut f, t0, &y0, &k1, t1, rtol, atol, stats)? * dir
            }
        };
        let mut last_rejected = false;
        let mut steps = 0usize;

        while (t1 - t) * dir > 0.0 {
            steps += 1;
            if steps > self.max_steps {
                return Err(Error::StiffFailure { t });
            }
            let last = (t + h - t1) * dir >= 0.0;
            if last {
                h = t1 - t;
            }

            let y2 = axpy(&y, h, &[(A21, &k1)]);
            let k2 = f(t + C2 * h, &y2)?;
            let y3 = axpy(&y, h, &[(A31, &k1), (A32, &k2)]);
            let k3 = f(t + C3 * h, &y3)?;
            let y4 = axpy(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
            let k4 = f(t + C4 * h, &y4)?;
            let y5 = axpy(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
            let k5 = f(t + C5 * h, &y5)?;
            let y6 = axpy(
                &y,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            );
            let t_new = if last { t1 } else { t + h };
            let k6 = f(t + h, &y6)?;
            let y_new = axpy(
                &y,
                h,
                &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
            );
            let k7 = f(t_new, &y_new)?;
            stats.evaluations += 6;

            let factor = match self.control {
                StepControl::Fixed(_) => None,
                StepControl::Adaptive { rtol, atol } => {
                    let mut sum = 0.0;
                    for i in 0..N {
                        let e = h
                            * (E1 * k1[i]
                                + E3 * k3[i]
                                + E4 * k4[i]
                                + E5 * k5[i]
                                + E6 * k6[i]
                                + E7 * k7[i]);
                        let sk = atol + rtol * y[i].abs().max(y_new[i].abs());
                        sum += (e / sk) * (e / sk);
                    }
                    let err = (sum / N as f64).sqrt();
                    if !err.is_finite() {
                        return Err(Error::StiffFailure { t });
                    }
                    let fac = if err == 0.0 {
                        5.0
                    } else {
                        (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                    };
                    if err > 1.0 {
                        stats.rejected += 1;
                        last_rejected = true;
                        h *= fac.min(1.0);
                        if h.abs() < 1e-13 * t.abs().max(1.0) {
                            return Err(Error::StiffFailure { t });
                        }
                        continue;
                    }
                    Some(fac)
                }
            };
            stats.accepted += 1;

            if next < samples.len() && (samples[next] - t_new) * dir <= 0.0 {
                let mut dense = [[0.0; N]; 5];
                for i in 0..N {
                    let ydiff = y_new[i] - y[i];
                    let bspl = h * k1[i] - ydiff;
                    dense[0][i] = y[i];
                    dense[1][i] = ydiff;
                    dense[2][i] = bspl;
                    dense[3][i] = ydiff - h * k7[i] - bspl;
                    dense[4][i] = h
                        * (D1 * k1[i]
                            + D3 * k3[i]
                            + D4 * k4[i]
                            + D5 * k5[i]
                            + D6 * k6[i]
                            + D7 * k7[i]);
                }
                while next < samples.len() && (samples[next] - t_new) * dir <= 0.0 {
                    let s = samples[next];
                    if s == t_new {
                        sink(next, s, &y_new);
                    } else {
                        let theta = (s - t) / h;
                        let theta1 = 1.0 - theta;
                        let mut out = [0.0; N];
                        for i in 0..N {
                            out[i] = dense[0][i]
                                + theta
                                    * (dense[1][i]
                                        + theta1
                                            * (dense[2][i]
                                                + theta * (dense[3][i] + theta1 * dense[4][i])));
                        }
                        sink(next, s, &out);
                    }
                    next += 1;
                }
            }

            t = t_new;
            y = y_new;
            k1 = k7;
            if let Some(fac) = factor {
                h *= if last_rejected { fac.min(1.0) } else { fac };
                last_rejected = false;
            }
        }
        Ok(y)
    }

    #[allow(clippy::too_many_arguments)]
    fn initial_step<const N: usize, F>(
        &self,
        f: &mut F,
        t0: f64,
        y0: &[f64; N],
        f0: &[f64; N],
        t1: f64,
        rtol: f64,
        atol: f64,
        stats: &mut SolveStats,
    ) -> Result<f64>
    where
        F: FnMut(f64, &[f64; N]) -> Result<[f64; N]>,
    {
        let dir = (t1 - t0).signum();
        let norm = |v: &[f64; N]| {
            let mut s = 0.0;
            for i in 0..N {
                let sk = atol + rtol * y0[i].abs();
                s += (v[i] / sk) * (v[i] / sk);
            }
            (s / N as f64).sqrt()
        };
        let d0 = norm(y0);
        let d1 = norm(f0);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 {
            1e-6
        } else {
            0.01 * d0 / d1
        };
        let span = (t1 - t0).abs();
        let h0 = h0.min(span);
        let y1 = axpy(y0, h0 * dir, &[(1.0, f0)]);
        let f1 = f(t0 + h0 * dir, &y1)?;
        stats.evaluations += 1;
        let mut diff = [0.0; N];
        for i in 0..N {
            diff[i] = f1[i] - f0[i];
        }
        let d2 = norm(&diff) / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(0.2)
        };
        Ok((100.0 * h0).min(h1).min(span))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn harmonic(_t: f64, y: &[f64; 2]) -> Result<[f64; 2]> {
        Ok([y[1], -y[0]])
    }

    #[test]
    fn harmonic_oscillator_dense_output() {
        let solver = Dopri5::default();
        let samples: Vec<f64> = (0..=200).map(|i| i as f64 * 0.1).collect();
        let mut out = vec![[0.0; 2]; samples.len()];
        let mut stats = SolveStats::default();
        let end = solver
            .solve(harmonic, 0.0, [1.0, 0.0], 20.0, &samples, |i, _, y| out[i] = *y, &mut stats)
            .unwrap();
        for (t, y) in samples.iter().zip(&out) {
            assert!((y[0] - t.cos()).abs() < 1e-9, "t = {t}");
            assert!((y[1] + t.sin()).abs() < 1e-9, "t = {t}");
        }
        assert_relative_eq!(end[0], 20f64.cos(), epsilon = 1e-9);
        assert!(stats.rejected < stats.accepted);
    }

    #[test]
    fn backward_integration() {
        let solver = Dopri5::default();
        let mut stats = SolveStats::default();
        let y = solver
            .solve(harmonic, 5.0, [5f64.cos(), -5f64.sin()], 0.0, &[], |_, _, _| {}, &mut stats)
            .unwrap();
        assert!((y[0] - 1.0).abs() < 1e-9);
        assert!(y[1].abs() < 1e-9);
    }

    #[test]
    fn zero_state_stays_zero() {
        let solver = Dopri5::default();
        let mut stats = SolveStats::default();
        let y = solver
            .solve(harmonic, 0.0, [0.0, 0.0], 50.0, &[], |_, _, _| {}, &mut stats)
            .unwrap();
        assert_eq!(y, [0.0, 0.0]);
    }

    #[test]
    fn blowup_is_reported() {
        let solver = Dopri5::default();
        let mut stats = SolveStats::default();
        let res = solver.solve(
            |_t, y: &[f64; 1]| Ok([y[0] * y[0]]),
            0.0,
            [1.0],
            2.0,
            &[],
            |_, _, _| {},
            &mut stats,
        );
        assert!(matches!(res, Err(Error::StiffFailure { .. })));
    }
}
