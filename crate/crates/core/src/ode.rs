//! Dormand–Prince 5(4) with embedded error control for complex state vectors.
//!
//! Steps are clipped so that every requested output time is hit exactly; the
//! caller receives the state at each output time through a callback.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Error-control settings for the adaptive integrator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    /// Smallest step accepted before the integration is abandoned (ps).
    pub h_min: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            rtol: 1e-8,
            atol: 1e-10,
            h_min: 1e-10,
            max_steps: 2_000_000,
        }
    }
}

impl Tolerances {
    pub fn tight() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            ..Self::default()
        }
    }

    /// Both tolerances divided by `factor`.
    pub fn refined(self, factor: f64) -> Self {
        Self {
            rtol: self.rtol / factor,
            atol: self.atol / factor,
            ..self
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

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

// 5th-order weights minus embedded 4th-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
const BETA: f64 = 0.04;

fn combine(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for i in 0..out.len() {
        let mut acc = C64::new(0.0, 0.0);
        for (w, k) in terms {
            acc += k[i] * *w;
        }
        out[i] = y[i] + acc * h;
    }
}

/// Integrates `dy/dt = f(t, y)` across the strictly increasing `t_out` grid.
///
/// `t_out[0]` is the initial time; `observe(i, t_out[i], y)` is called for
/// every grid point, starting with the initial state.
pub fn integrate<F, O>(
    mut f: F,
    t_out: &[f64],
    y0: Vec<C64>,
    tol: &Tolerances,
    mut observe: O,
) -> Result<Stats>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    O: FnMut(usize, f64, &[C64]),
{
    if t_out.is_empty() {
        return Ok(Stats::default());
    }
    if t_out.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter {
            name: "t_out".into(),
            reason: "output times must be strictly increasing".into(),
        });
    }
    let n = y0.len();
    let mut stats = Stats::default();
    let mut y = y0;
    let mut t = t_out[0];
    observe(0, t, &y);
    if t_out.len() == 1 {
        return Ok(stats);
    }

    let zeros = || vec![C64::new(0.0, 0.0); n];
    let (mut k1, mut k2, mut k3, mut k4, mut k5, mut k6, mut k7) =
        (zeros(), zeros(), zeros(), zeros(), zeros(), zeros(), zeros());
    let mut stage = zeros();
    let mut y_new = zeros();

    f(t, &y, &mut k1);
    stats.rhs_evals += 1;

    let span = t_out[t_out.len() - 1] - t;
    let mut h = initial_step(&mut f, t, &y, &k1, tol, span, &mut stats);
    let mut err_old: f64 = 1e-4;
    let mut next = 1;

    while next < t_out.len() {
        let target = t_out[next];
        if stats.accepted + stats.rejected >= tol.max_steps {
            return Err(Error::Integration {
                t_last: t,
                reason: format!("exceeded {} steps", tol.max_steps),
            });
        }
        let remaining = target - t;
        let clipped = h >= remaining;
        let step = if clipped { remaining } else { h };
        if step < tol.h_min && !clipped {
            return Err(Error::Integration {
                t_last: t,
                reason: format!("step size {step:e} ps below minimum {:e}", tol.h_min),
            });
        }

        combine(&mut stage, &y, step, &[(A21, &k1)]);
        f(t + C2 * step, &stage, &mut k2);
        combine(&mut stage, &y, step, &[(A31, &k1), (A32, &k2)]);
        f(t + C3 * step, &stage, &mut k3);
        combine(&mut stage, &y, step, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        f(t + C4 * step, &stage, &mut k4);
        combine(
            &mut stage,
            &y,
            step,
            &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)],
        );
        f(t + C5 * step, &stage, &mut k5);
        combine(
            &mut stage,
            &y,
            step,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        f(t + step, &stage, &mut k6);
        combine(
            &mut y_new,
            &y,
            step,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let t_new = if clipped { target } else { t + step };
        f(t_new, &y_new, &mut k7);
        stats.rhs_evals += 6;

        let mut acc = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7)
                * step;
            let scale = tol.atol + tol.rtol * y[i].norm().max(y_new[i].norm());
            acc += (e.norm() / scale).powi(2);
        }
        let err = (acc / n as f64).sqrt();
        if !err.is_finite() {
            return Err(Error::Integration {
                t_last: t,
                reason: "non-finite error estimate".into(),
            });
        }

        if err <= 1.0 {
            stats.accepted += 1;
            std::mem::swap(&mut y, &mut y_new);
            std::mem::swap(&mut k1, &mut k7);
            t = t_new;
            let fac = if err == 0.0 {
                FAC_MAX
            } else {
                (SAFETY * err.powf(-0.2 + 0.75 * BETA) * err_old.powf(BETA)).clamp(FAC_MIN, FAC_MAX)
            };
            err_old = err.max(1e-4);
            // A clipped step says nothing about the natural step size.
            if !clipped || step >= h {
                h = step * fac;
            }
            if clipped {
                observe(next, t, &y);
                next += 1;
            }
        } else {
            stats.rejected += 1;
            h = step * (SAFETY * err.powf(-0.2)).clamp(FAC_MIN, 1.0);
        }
    }
    Ok(stats)
}

fn initial_step<F>(
    f: &mut F,
    t: f64,
    y: &[C64],
    f0: &[C64],
    tol: &Tolerances,
    span: f64,
    stats: &mut Stats,
) -> f64
where
    F: FnMut(f64, &[C64], &mut [C64]),
{
    let n = y.len() as f64;
    let scale = |v: &C64| tol.atol + tol.rtol * v.norm();
    let d0 = (y.iter().map(|v| (v.norm() / scale(v)).powi(2)).sum::<f64>() / n).sqrt();
    let d1 = (f0
        .iter()
        .zip(y)
        .map(|(k, v)| (k.norm() / scale(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    let y1: Vec<C64> = y.iter().zip(f0).map(|(v, k)| v + k * h0).collect();
    let mut f1 = vec![C64::new(0.0, 0.0); y.len()];
    f(t + h0, &y1, &mut f1);
    stats.rhs_evals += 1;
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(y)
        .map(|((a, b), v)| ((a - b).norm() / scale(v)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(span)
}
