//! Explicit Runge–Kutta integrators over complex state vectors.
//!
//! [`Dopri5`] is the adaptive Dormand–Prince 5(4) pair with its free
//! fourth-order dense output; [`rk4_fixed`] is a fixed-step classic RK4 used
//! for reproducibility cross-checks.

use crate::error::{Error, Result};
use crate::qops::{C64, ZERO};

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

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5 {
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5 {
    fn default() -> Self {
        Dopri5 {
            rtol: 1e-11,
            atol: 1e-11,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Stats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

fn axpy_into(out: &mut [C64], y: &[C64], h: f64, terms: &[(f64, &[C64])]) {
    for i in 0..out.len() {
        let mut s = ZERO;
        for (c, k) in terms {
            if *c != 0.0 {
                s += k[i] * *c;
            }
        }
        out[i] = y[i] + s * h;
    }
}

impl Dopri5 {
    /// Integrates dy/dt = f(t, y) from `t_out[0]`, calling `sink(i, y(t_out[i]))`
    /// for every output time. `stops` are times the step must land on exactly
    /// (discontinuities of f).
    pub fn integrate<F, S>(&self, mut f: F, y0: &[C64], t_out: &[f64], stops: &[f64], mut sink: S) -> Result<Stats>
    where
        F: FnMut(f64, &[C64], &mut [C64]),
        S: FnMut(usize, &[C64]),
    {
        let n = y0.len();
        let mut stats = Stats::default();
        if t_out.is_empty() {
            return Ok(stats);
        }
        if t_out.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument("output times must be strictly increasing".into()));
        }
        let t0 = t_out[0];
        let t_end = *t_out.last().unwrap();
        let mut stops: Vec<f64> = stops.iter().cloned().filter(|&s| s > t0 && s < t_end).collect();
        stops.push(t_end);
        stops.sort_by(f64::total_cmp);
        stops.dedup();

        let mut y = y0.to_vec();
        sink(0, &y);
        let mut next_out = 1;
        if next_out == t_out.len() {
            return Ok(stats);
        }

        let mut k: Vec<Vec<C64>> = vec![vec![ZERO; n]; 7];
        let mut ytmp = vec![ZERO; n];
        let mut ynew = vec![ZERO; n];
        let mut dense = vec![vec![ZERO; n]; 5];
        let mut yout = vec![ZERO; n];

        f(t0, &y, &mut k[0]);
        stats.evaluations += 1;
        let mut h = self.initial_step(&mut f, t0, &y, &k[0], t_end - t0, &mut stats);
        let mut t = t0;
        let mut stop_idx = 0;
        let mut fresh_k1 = true;

        while next_out < t_out.len() {
            if stats.accepted + stats.rejected >= self.max_steps {
                return Err(Error::TooManySteps {
                    steps: self.max_steps,
                    t,
                });
            }
            let stop = stops[stop_idx];
            let mut hit_stop = false;
            if t + h >= stop - 1e-15 * stop.abs().max(1e-30) {
                h = stop - t;
                hit_stop = true;
            }
            if h <= 1e-14 * t.abs().max(1e-12) || !h.is_finite() {
                return Err(Error::StepUnderflow { t });
            }
            if !fresh_k1 {
                f(t, &y, &mut k[0]);
                stats.evaluations += 1;
                fresh_k1 = true;
            }

            {
                let (k1, rest) = k.split_at_mut(1);
                let k1 = &k1[0];
                axpy_into(&mut ytmp, &y, h, &[(A21, k1)]);
                f(t + C2 * h, &ytmp, &mut rest[0]);
                let (k2, rest) = rest.split_at_mut(1);
                let k2 = &k2[0];
                axpy_into(&mut ytmp, &y, h, &[(A31, k1), (A32, k2)]);
                f(t + C3 * h, &ytmp, &mut rest[0]);
                let (k3, rest) = rest.split_at_mut(1);
                let k3 = &k3[0];
                axpy_into(&mut ytmp, &y, h, &[(A41, k1), (A42, k2), (A43, k3)]);
                f(t + C4 * h, &ytmp, &mut rest[0]);
                let (k4, rest) = rest.split_at_mut(1);
                let k4 = &k4[0];
                axpy_into(&mut ytmp, &y, h, &[(A51, k1), (A52, k2), (A53, k3), (A54, k4)]);
                f(t + C5 * h, &ytmp, &mut rest[0]);
                let (k5, rest) = rest.split_at_mut(1);
                let k5 = &k5[0];
                axpy_into(
                    &mut ytmp,
                    &y,
                    h,
                    &[(A61, k1), (A62, k2), (A63, k3), (A64, k4), (A65, k5)],
                );
                f(t + h, &ytmp, &mut rest[0]);
                let (k6, rest) = rest.split_at_mut(1);
                let k6 = &k6[0];
                axpy_into(
                    &mut ynew,
                    &y,
                    h,
                    &[(A71, k1), (A73, k3), (A74, k4), (A75, k5), (A76, k6)],
                );
                f(t + h, &ynew, &mut rest[0]);
            }
            stats.evaluations += 6;

            let mut err = 0.0f64;
            for i in 0..n {
                let e = (k[0][i] * E1 + k[2][i] * E3 + k[3][i] * E4 + k[4][i] * E5 + k[5][i] * E6
                    + k[6][i] * E7)
                    * h;
                let sc = self.atol + self.rtol * y[i].norm().max(ynew[i].norm());
                err = err.max(e.norm() / sc);
            }
            if !err.is_finite() {
                stats.rejected += 1;
                h *= 0.1;
                continue;
            }

            if err <= 1.0 {
                stats.accepted += 1;
                let t_new = t + h;
                while next_out < t_out.len() && t_out[next_out] <= t_new * (1.0 + 1e-14) {
                    let to = t_out[next_out];
                    if (to - t_new).abs() <= 1e-14 * t_new.abs().max(1e-30) {
                        sink(next_out, &ynew);
                    } else {
                        for i in 0..n {
                            let dy = ynew[i] - y[i];
                            dense[0][i] = y[i];
                            dense[1][i] = dy;
                            dense[2][i] = k[0][i] * h - dy;
                            dense[3][i] = dy - k[6][i] * h - dense[2][i];
                            dense[4][i] = (k[0][i] * D1 + k[2][i] * D3 + k[3][i] * D4 + k[4][i] * D5
                                + k[5][i] * D6
                                + k[6][i] * D7)
                                * h;
                        }
                        let th = (to - t) / h;
                        let th1 = 1.0 - th;
                        for i in 0..n {
                            yout[i] = dense[0][i]
                                + (dense[1][i]
                                    + (dense[2][i] + (dense[3][i] + dense[4][i] * th1) * th) * th1)
                                    * th;
                        }
                        sink(next_out, &yout);
                    }
                    next_out += 1;
                }
                std::mem::swap(&mut y, &mut ynew);
                let (first, last) = k.split_at_mut(6);
                std::mem::swap(&mut first[0], &mut last[0]);
                t = t_new;
                if hit_stop {
                    t = stop;
                    stop_idx = (stop_idx + 1).min(stops.len() - 1);
                    fresh_k1 = false;
                }
                let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
                h = (h * fac).min(self.h_max);
            } else {
                stats.rejected += 1;
                let fac = (0.9 * err.powf(-0.2)).clamp(0.1, 1.0);
                h *= fac;
            }
        }
        Ok(stats)
    }

    fn initial_step<F>(&self, f: &mut F, t0: f64, y: &[C64], f0: &[C64], span: f64, stats: &mut Stats) -> f64
    where
        F: FnMut(f64, &[C64], &mut [C64]),
    {
        let sc: Vec<f64> = y.iter().map(|v| self.atol + self.rtol * v.norm()).collect();
        let rms = |v: &[C64]| -> f64 {
            (v.iter().zip(&sc).map(|(x, s)| (x.norm() / s).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
        };
        let d0 = rms(y);
        let d1 = rms(f0);
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 * span } else { 0.01 * d0 / d1 };
        h0 = h0.min(span).min(self.h_max);
        let y1: Vec<C64> = y.iter().zip(f0).map(|(a, b)| a + b * h0).collect();
        let mut f1 = vec![ZERO; y.len()];
        f(t0 + h0, &y1, &mut f1);
        stats.evaluations += 1;
        let diff: Vec<C64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
        let d2 = rms(&diff) / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (1e-6f64).max(h0 * 1e-3)
        } else {
            (0.01 / d1.max(d2)).powf(0.2)
        };
        (100.0 * h0).min(h1).min(span).min(self.h_max)
    }
}

/// Classic fixed-step RK4; steps of at most `dt`, landing on every output time.
pub fn rk4_fixed<F, S>(mut f: F, y0: &[C64], t_out: &[f64], dt: f64, mut sink: S) -> Result<usize>
where
    F: FnMut(f64, &[C64], &mut [C64]),
    S: FnMut(usize, &[C64]),
{
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    if t_out.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("output times must be strictly increasing".into()));
    }
    let n = y0.len();
    let mut y = y0.to_vec();
    let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
        (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
    let mut steps = 0;
    if t_out.is_empty() {
        return Ok(0);
    }
    sink(0, &y);
    for i in 1..t_out.len() {
        let (ta, tb) = (t_out[i - 1], t_out[i]);
        let m = ((tb - ta) / dt).ceil().max(1.0) as usize;
        let h = (tb - ta) / m as f64;
        for s in 0..m {
            let t = ta + s as f64 * h;
            f(t, &y, &mut k1);
            axpy_into(&mut tmp, &y, 0.5 * h, &[(1.0, &k1)]);
            f(t + 0.5 * h, &tmp, &mut k2);
            axpy_into(&mut tmp, &y, 0.5 * h, &[(1.0, &k2)]);
            f(t + 0.5 * h, &tmp, &mut k3);
            axpy_into(&mut tmp, &y, h, &[(1.0, &k3)]);
            f(t + h, &tmp, &mut k4);
            for j in 0..n {
                y[j] += (k1[j] + (k2[j] + k3[j]) * 2.0 + k4[j]) * (h / 6.0);
            }
            steps += 1;
        }
        sink(i, &y);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotate(w: f64) -> impl FnMut(f64, &[C64], &mut [C64]) {
        move |_t, y, dy| dy[0] = C64::new(0.0, -w) * y[0]
    }

    #[test]
    fn dense_output_matches_exact() {
        let w = 3.0;
        let ts: Vec<f64> = (0..200).map(|i| i as f64 * 0.037).collect();
        let mut worst: f64 = 0.0;
        Dopri5::default()
            .integrate(rotate(w), &[C64::new(1.0, 0.0)], &ts, &[], |i, y| {
                let exact = C64::from_polar(1.0, -w * ts[i]);
                worst = worst.max((y[0] - exact).norm());
            })
            .unwrap();
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn time_dependent_rhs() {
        // dy/dt = cos(t) y  ->  y = exp(sin t)
        let ts: Vec<f64> = (0..50).map(|i| i as f64 * 0.2).collect();
        let mut worst: f64 = 0.0;
        Dopri5::default()
            .integrate(
                |t, y, dy| dy[0] = y[0] * t.cos(),
                &[C64::new(1.0, 0.0)],
                &ts,
                &[3.3],
                |i, y| worst = worst.max((y[0].re - ts[i].sin().exp()).abs()),
            )
            .unwrap();
        assert!(worst < 1e-8, "{worst}");
    }

    #[test]
    fn rk4_agrees_with_adaptive() {
        let ts = [0.0, 0.5, 1.0, 2.0];
        let mut a = vec![];
        let mut b = vec![];
        Dopri5::default()
            .integrate(rotate(2.0), &[C64::new(1.0, 0.0)], &ts, &[], |_, y| a.push(y[0]))
            .unwrap();
        rk4_fixed(rotate(2.0), &[C64::new(1.0, 0.0)], &ts, 1e-3, |_, y| b.push(y[0])).unwrap();
        for ((x, y), t) in a.iter().zip(&b).zip(ts) {
            let exact = C64::from_polar(1.0, -2.0 * t);
            assert!((x - exact).norm() < 1e-8);
            assert!((y - exact).norm() < 1e-10);
        }
    }

    #[test]
    fn rejects_unsorted_grid() {
        let r = Dopri5::default().integrate(rotate(1.0), &[C64::new(1.0, 0.0)], &[0.0, 1.0, 0.5], &[], |_, _| {});
        assert!(r.is_err());
    }

    #[test]
    fn reports_underflow() {
        // blow-up at t = 1
        let r = Dopri5::default().integrate(
            |t, _y, dy| dy[0] = C64::new(1.0 / (1.0 - t).powi(3), 0.0),
            &[C64::new(0.0, 0.0)],
            &[0.0, 2.0],
            &[],
            |_, _| {},
        );
        match r {
            Err(Error::StepUnderflow { t }) => assert!((t - 1.0).abs() < 1e-2),
            other => panic!("{other:?}"),
        }
    }
}
