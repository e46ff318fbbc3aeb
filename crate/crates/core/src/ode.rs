//! Adaptive Dormand-Prince 5(4) integrator over complex state vectors with a
//! real independent variable.
//!
//! Step control uses the max-norm of the embedded error estimate scaled by
//! `atol + rtol * |y|` per component.

use crate::error::{Error, Result};
use crate::linalg::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h0: Option<f64>,
    pub max_steps: usize,
    /// Relative step floor; below it the integration reports step collapse.
    pub h_min_rel: f64,
}

impl Default for OdeOptions {
    fn default() -> Self {
        OdeOptions {
            rtol: 1e-10,
            atol: 1e-13,
            h0: None,
            max_steps: 2_000_000,
            h_min_rel: 1e-14,
        }
    }
}

impl OdeOptions {
    pub fn with_tol(rtol: f64) -> Self {
        OdeOptions {
            rtol,
            atol: rtol * 1e-3,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, serde::Serialize)]
pub struct OdeStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl OdeStats {
    pub fn absorb(&mut self, o: &OdeStats) {
        self.accepted += o.accepted;
        self.rejected += o.rejected;
        self.evaluations += o.evaluations;
    }
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

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn axpy(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for i in 0..out.len() {
        let mut acc = C64::new(0.0, 0.0);
        for (a, k) in terms {
            if *a != 0.0 {
                acc += k[i] * *a;
            }
        }
        out[i] = y[i] + acc * h;
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// `on_step` sees every accepted step `(t, y)`.
pub fn integrate<F, S>(
    mut f: F,
    t0: f64,
    t1: f64,
    y0: &[C64],
    opts: &OdeOptions,
    mut on_step: S,
) -> Result<(Vec<C64>, OdeStats)>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    S: FnMut(f64, &[C64]),
{
    let n = y0.len();
    let mut stats = OdeStats::default();
    let mut y = y0.to_vec();
    if t1 == t0 || n == 0 {
        return Ok((y, stats));
    }
    let dir = (t1 - t0).signum();
    let span = (t1 - t0).abs();

    let mut k1 = vec![C64::new(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut k5 = k1.clone();
    let mut k6 = k1.clone();
    let mut k7 = k1.clone();
    let mut tmp = k1.clone();
    let mut ynew = k1.clone();

    let mut t = t0;
    f(t, &y, &mut k1);
    stats.evaluations += 1;

    let scale = |a: &[C64], b: &[C64], i: usize| opts.atol + opts.rtol * a[i].norm().max(b[i].norm());

    let mut h = match opts.h0 {
        Some(h) => h.abs().min(span),
        None => {
            // Hairer's starting-step heuristic
            let d0 = (0..n).map(|i| y[i].norm() / scale(&y, &y, i)).fold(0.0, f64::max);
            let d1 = (0..n).map(|i| k1[i].norm() / scale(&y, &y, i)).fold(0.0, f64::max);
            let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span.max(1e-300) } else { 0.01 * d0 / d1 };
            let h0 = h0.min(span);
            axpy(&mut tmp, &y, dir * h0, &[(1.0, &k1)]);
            f(t + dir * h0, &tmp, &mut k2);
            stats.evaluations += 1;
            let d2 = (0..n)
                .map(|i| (k2[i] - k1[i]).norm() / scale(&y, &y, i))
                .fold(0.0, f64::max)
                / h0;
            let h1 = if d1.max(d2) <= 1e-15 {
                (h0 * 1e-3).max(1e-6 * span)
            } else {
                (0.01 / d1.max(d2)).powf(0.2)
            };
            (100.0 * h0).min(h1).min(span)
        }
    };

    let h_min = opts.h_min_rel * span.max(t0.abs()).max(t1.abs()).max(1e-300);
    let mut err_prev: f64 = 1e-4;
    let mut last_rejected = false;

    loop {
        let remaining = (t1 - t) * dir;
        if remaining <= 0.0 {
            break;
        }
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("step budget {} exhausted", opts.max_steps),
            });
        }
        let mut last = false;
        if h >= remaining {
            h = remaining;
            last = true;
        }
        if h < h_min {
            return Err(Error::Integration {
                t,
                reason: format!("step size collapsed to {h:e}"),
            });
        }
        let hs = dir * h;

        axpy(&mut tmp, &y, hs, &[(A21, &k1)]);
        f(t + C2 * hs, &tmp, &mut k2);
        axpy(&mut tmp, &y, hs, &[(A31, &k1), (A32, &k2)]);
        f(t + C3 * hs, &tmp, &mut k3);
        axpy(&mut tmp, &y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        f(t + C4 * hs, &tmp, &mut k4);
        axpy(&mut tmp, &y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        f(t + C5 * hs, &tmp, &mut k5);
        axpy(&mut tmp, &y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        f(t + hs, &tmp, &mut k6);
        axpy(&mut ynew, &y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let tn = if last { t1 } else { t + hs };
        f(tn, &ynew, &mut k7);
        stats.evaluations += 6;

        let mut err: f64 = 0.0;
        for i in 0..n {
            let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
            err = err.max(e.norm() / scale(&y, &ynew, i));
        }
        if !err.is_finite() {
            stats.rejected += 1;
            h *= 0.25;
            last_rejected = true;
            continue;
        }

        if err <= 1.0 {
            // PI controller (Gustafsson)
            let fac = if err == 0.0 {
                5.0
            } else {
                0.9 * err.powf(-0.7 / 5.0) * err_prev.powf(0.4 / 5.0)
            };
            let fac = if last_rejected { fac.min(1.0) } else { fac };
            err_prev = err.max(1e-4);
            t = tn;
            std::mem::swap(&mut y, &mut ynew);
            std::mem::swap(&mut k1, &mut k7);
            stats.accepted += 1;
            last_rejected = false;
            on_step(t, &y);
            if last {
                break;
            }
            h *= fac.clamp(0.2, 5.0);
        } else {
            stats.rejected += 1;
            last_rejected = true;
            h *= (0.9 * err.powf(-0.2)).clamp(0.1, 0.9);
        }
    }
    Ok((y, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::c;

    #[test]
    fn exponential_decay_and_rotation() {
        let lam = c(-0.5, 2.0);
        let opts = OdeOptions::with_tol(1e-12);
        let (y, st) = integrate(
            |_, y, dy| dy[0] = lam * y[0],
            0.0,
            3.0,
            &[c(1.0, 0.0)],
            &opts,
            |_, _| {},
        )
        .unwrap();
        let exact = (lam * 3.0).exp();
        assert!((y[0] - exact).norm() < 1e-11, "{:?} vs {:?}", y[0], exact);
        assert!(st.accepted > 10);
    }

    #[test]
    fn backward_direction() {
        let opts = OdeOptions::with_tol(1e-12);
        let (y, _) = integrate(|t, _, dy| dy[0] = c(t * t, 0.0), 2.0, 0.0, &[c(0.0, 0.0)], &opts, |_, _| {}).unwrap();
        assert!((y[0] - c(-8.0 / 3.0, 0.0)).norm() < 1e-12);
    }
}
