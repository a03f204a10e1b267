//! Cryoscope synthesis and analysis, and flux pre-distortion filters.
//!
//! Waveforms are sample vectors at a fixed rate f_s and are treated as
//! zero-order held. The cryoscope phase grid τ_k = k/f_s therefore holds one
//! more point than the flux waveform it describes.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::device::FluxMap;
use crate::error::{Error, Result};
use crate::optim::nelder_mead;
pub use crate::optim::{cma_es_minimize, CmaResult};

pub const DEFAULT_SAVGOL_WINDOW: usize = 9;
pub const DEFAULT_SAVGOL_ORDER: usize = 2;
pub const DEFAULT_FIR_TAPS: usize = 7;

/// a₀ y[n] = Σ b_i x[n−i] − Σ_{j≥1} a_j y[n−j].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterCoefficients {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Hz
    pub sample_rate: f64,
}

impl FilterCoefficients {
    pub fn identity(sample_rate: f64) -> Self {
        FilterCoefficients {
            a: vec![1.0],
            b: vec![1.0],
            sample_rate,
        }
    }

    pub fn fir(b: Vec<f64>, sample_rate: f64) -> Self {
        FilterCoefficients {
            a: vec![1.0],
            b,
            sample_rate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() || self.b.is_empty() {
            return Err(Error::InvalidArgument("filter needs at least one a and one b tap".into()));
        }
        if self.a[0] == 0.0 {
            return Err(Error::InvalidArgument("a₀ must be non-zero".into()));
        }
        if self.a.iter().chain(&self.b).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("filter taps must be finite".into()));
        }
        if !(self.sample_rate > 0.0) {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        apply_filter(x, self)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("filter serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: FilterCoefficients = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        f.validate()?;
        Ok(f)
    }
}

/// Direct-form evaluation from zero initial conditions.
pub fn apply_filter(x: &[f64], coeffs: &FilterCoefficients) -> Result<Vec<f64>> {
    coeffs.validate()?;
    if x.is_empty() {
        return Err(Error::InvalidArgument("empty waveform".into()));
    }
    let (a, b) = (&coeffs.a, &coeffs.b);
    let mut y = vec![0.0; x.len()];
    for n in 0..x.len() {
        let mut acc = 0.0;
        for (i, bi) in b.iter().enumerate().take(n + 1) {
            acc += bi * x[n - i];
        }
        for (j, aj) in a.iter().enumerate().skip(1).take(n) {
            acc -= aj * y[n - j];
        }
        y[n] = acc / a[0];
    }
    Ok(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ringing {
    pub amplitude: f64,
    /// Hz
    pub frequency: f64,
    /// s
    pub decay: f64,
}

/// Step response s(t) = 1 + A e^{−t/τ} (+ c e^{−t/τ_r} sin 2πf t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistortionModel {
    pub amplitude: f64,
    pub tau: f64,
    #[serde(default)]
    pub ringing: Option<Ringing>,
}

impl DistortionModel {
    pub fn exponential(amplitude: f64, tau: f64) -> Self {
        DistortionModel {
            amplitude,
            tau,
            ringing: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidArgument("τ must be positive".into()));
        }
        if !(self.amplitude.abs() < 1.0) {
            return Err(Error::InvalidArgument(format!("|A| = {} must be below 1", self.amplitude.abs())));
        }
        if let Some(r) = &self.ringing {
            if !(r.decay > 0.0) || !r.frequency.is_finite() || !r.amplitude.is_finite() {
                return Err(Error::InvalidArgument("ringing needs finite parameters and decay > 0".into()));
            }
        }
        Ok(())
    }

    /// Digital filters whose outputs sum to the distorted waveform; their
    /// step responses sample s(t) at t = n/f_s.
    pub fn filters(&self, sample_rate: f64) -> Result<Vec<FilterCoefficients>> {
        self.validate()?;
        let a = self.amplitude;
        let r = (-1.0 / (sample_rate * self.tau)).exp();
        let mut out = vec![FilterCoefficients {
            a: vec![1.0, -r],
            b: vec![1.0 + a, -(r + a)],
            sample_rate,
        }];
        if let Some(ring) = &self.ringing {
            let rho = (-1.0 / (sample_rate * ring.decay)).exp();
            let th = TAU * ring.frequency / sample_rate;
            let c = ring.amplitude * rho * th.sin();
            out.push(FilterCoefficients {
                a: vec![1.0, -2.0 * rho * th.cos(), rho * rho],
                b: vec![0.0, c, -c],
                sample_rate,
            });
        }
        Ok(out)
    }

    pub fn apply(&self, x: &[f64], sample_rate: f64) -> Result<Vec<f64>> {
        let mut y = vec![0.0; x.len()];
        for f in self.filters(sample_rate)? {
            for (acc, v) in y.iter_mut().zip(apply_filter(x, &f)?) {
                *acc += v;
            }
        }
        Ok(y)
    }
}

/// One-pole IIR that undoes the exponential part of [`DistortionModel`].
pub fn iir_invert_exponential(amplitude: f64, tau: f64, sample_rate: f64) -> Result<FilterCoefficients> {
    DistortionModel::exponential(amplitude, tau).validate()?;
    if !(sample_rate > 0.0) || !sample_rate.is_finite() {
        return Err(Error::InvalidArgument("sample rate must be positive".into()));
    }
    let alpha = 1.0 - (-1.0 / (sample_rate * tau * (1.0 + amplitude))).exp();
    let k = amplitude / ((1.0 + amplitude) * (1.0 - alpha));
    Ok(FilterCoefficients {
        a: vec![1.0, alpha - 1.0],
        b: vec![1.0 - k + k * alpha, -(1.0 - k) * (1.0 - alpha)],
        sample_rate,
    })
}

/// Least-squares polynomial derivative with asymmetric windows at the ends.
pub fn savgol_derivative(y: &[f64], window: usize, order: usize, dt: f64) -> Result<Vec<f64>> {
    savgol_at(y, window, order, dt, 0.0)
}

/// Same as [`savgol_derivative`] but evaluated `shift` samples after each point.
fn savgol_at(y: &[f64], window: usize, order: usize, dt: f64, shift: f64) -> Result<Vec<f64>> {
    if window.is_multiple_of(2) || window < order + 2 {
        return Err(Error::InvalidArgument(format!(
            "window {window} must be odd and at least order + 2 = {}",
            order + 2
        )));
    }
    if y.len() < window {
        return Err(Error::InvalidArgument(format!("{} samples are fewer than the window {window}", y.len())));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument("dt must be positive".into()));
    }
    let half = window / 2;
    let scale = half.max(1) as f64;
    // pseudo-inverse rows are the same for every window; only the evaluation point moves
    let v = DMatrix::from_fn(window, order + 1, |r, c| ((r as f64 - half as f64) / scale).powi(c as i32));
    let pinv = (v.transpose() * &v)
        .try_inverse()
        .ok_or_else(|| Error::Singularity("Savitzky–Golay normal matrix".into()))?
        * v.transpose();
    let mut out = Vec::with_capacity(y.len());
    for k in 0..y.len() {
        let c = k.clamp(half, y.len() - 1 - half);
        let seg = DVector::from_iterator(window, y[c - half..=c + half].iter().cloned());
        let coef = &pinv * seg;
        let x = (k as f64 + shift - c as f64) / scale;
        let d: f64 = (1..=order).map(|p| p as f64 * coef[p] * x.powi(p as i32 - 1)).sum();
        out.push(d / (scale * dt));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CryoscopeTrace {
    /// pulse lengths τ_k = k/f_s (s)
    pub durations: Vec<f64>,
    /// accumulated phase φ(τ) (rad)
    pub phase: Vec<f64>,
    pub sigma_x: Vec<f64>,
    pub sigma_y: Vec<f64>,
    /// nominal pulse amplitude (Φ₀)
    pub amplitude: f64,
}

impl CryoscopeTrace {
    pub fn sample_rate(&self) -> f64 {
        1.0 / (self.durations[1] - self.durations[0])
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("tau,phase,sigma_x,sigma_y\n");
        for k in 0..self.durations.len() {
            s.push_str(&format!(
                "{:.6e},{:.10},{:.10},{:.10}\n",
                self.durations[k], self.phase[k], self.sigma_x[k], self.sigma_y[k]
            ));
        }
        s
    }
}

fn check_branch(map: &FluxMap, flux: &[f64]) -> Result<()> {
    if flux.iter().any(|f| map.bias + f < 0.0 || !f.is_finite()) {
        return Err(Error::NonMonotoneMap);
    }
    Ok(())
}

/// Phase accumulated by a qubit whose flux follows `waveform` after the
/// line distortion (none when `model` is absent).
pub fn cryoscope_synthesize_waveform(
    model: Option<&DistortionModel>,
    waveform: &[f64],
    sample_rate: f64,
    map: &FluxMap,
    amplitude: f64,
) -> Result<CryoscopeTrace> {
    if waveform.is_empty() || !(sample_rate > 0.0) {
        return Err(Error::InvalidArgument("need a non-empty waveform and positive sample rate".into()));
    }
    let flux = match model {
        Some(m) => m.apply(waveform, sample_rate)?,
        None => waveform.to_vec(),
    };
    check_branch(map, &flux)?;
    let dt = 1.0 / sample_rate;
    let mut phase = Vec::with_capacity(flux.len() + 1);
    phase.push(0.0);
    let mut acc = 0.0;
    for f in &flux {
        acc += map.detuning(*f) * dt;
        phase.push(acc);
    }
    Ok(CryoscopeTrace {
        durations: (0..phase.len()).map(|k| k as f64 * dt).collect(),
        sigma_x: phase.iter().map(|p| p.cos()).collect(),
        sigma_y: phase.iter().map(|p| p.sin()).collect(),
        phase,
        amplitude,
    })
}

/// Square pulse of `samples` points.
pub fn cryoscope_synthesize(
    model: Option<&DistortionModel>,
    amplitude: f64,
    samples: usize,
    sample_rate: f64,
    map: &FluxMap,
) -> Result<CryoscopeTrace> {
    cryoscope_synthesize_waveform(model, &vec![amplitude; samples], sample_rate, map, amplitude)
}

/// Largest-magnitude non-zero bin of the DFT of z, as a signed frequency
/// in Hz. Ties go to the lower |f|.
fn dominant_frequency(z: &[Complex64], sample_rate: f64) -> Result<f64> {
    let n = z.len();
    if n < 2 {
        return Err(Error::NoDominantFrequency);
    }
    let mut buf = z.to_vec();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let signed = |k: usize| if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
    let total: f64 = buf.iter().map(|c| c.norm()).sum();
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in buf.iter().enumerate().skip(1) {
        let m = c.norm();
        best = match best {
            None => Some((k, m)),
            Some((bk, bm)) => {
                if m > bm * (1.0 + 1e-12) || ((m - bm).abs() <= bm * 1e-12 && signed(k).abs() < signed(bk).abs()) {
                    Some((k, m))
                } else {
                    Some((bk, bm))
                }
            }
        };
    }
    match best {
        Some((k, m)) if m > 1e-9 * total => Ok(signed(k) * sample_rate / n as f64),
        _ => Err(Error::NoDominantFrequency),
    }
}

/// Recovers the on-chip flux waveform: demodulation at the dominant
/// frequency, phase unwrapping, Savitzky–Golay derivative and map inversion.
/// Sample n of the output describes the interval [τ_n, τ_{n+1}).
pub fn cryoscope_analyze(trace: &CryoscopeTrace, map: &FluxMap, window: usize, order: usize) -> Result<Vec<f64>> {
    let m = trace.durations.len();
    if m < 3 || trace.sigma_x.len() != m || trace.sigma_y.len() != m {
        return Err(Error::InvalidArgument("trace needs matching quadratures and ≥ 3 points".into()));
    }
    if trace.durations.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("duration grid must increase".into()));
    }
    let fs = trace.sample_rate();
    let dt = 1.0 / fs;
    let z: Vec<Complex64> = trace.sigma_x.iter().zip(&trace.sigma_y).map(|(x, y)| Complex64::new(*x, *y)).collect();
    let f_dom = dominant_frequency(&z, fs)?;
    let w_dom = TAU * f_dom;
    let mut resid = Vec::with_capacity(m);
    let mut acc = 0.0;
    let mut prev = Complex64::new(1.0, 0.0);
    for (k, zk) in z.iter().enumerate() {
        let d = zk * Complex64::from_polar(1.0, -w_dom * trace.durations[k]);
        if k == 0 {
            acc = d.arg();
        } else {
            acc += (d * prev.conj()).arg();
        }
        prev = d;
        resid.push(acc);
    }
    let deriv = savgol_at(&resid, window, order, dt, 0.5)?;
    deriv[..m - 1]
        .iter()
        .map(|d| map.flux_for_detuning(d + w_dom))
        .collect()
}

/// rms(a − b) / rms(b) over the samples [skip, len − skip).
pub fn relative_rms(a: &[f64], b: &[f64], skip: usize) -> f64 {
    let n = a.len().min(b.len());
    let r = skip..n.saturating_sub(skip);
    let err: f64 = r.clone().map(|i| (a[i] - b[i]).powi(2)).sum();
    let norm: f64 = r.map(|i| b[i] * b[i]).sum();
    (err / norm).sqrt()
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().min(b.len()) as f64
}

/// Fits s_n = 1 + A e^{−n/(f_s τ)} to a normalized step response.
pub fn fit_exponential_step(step: &[f64], sample_rate: f64) -> Result<(f64, f64)> {
    if step.len() < 4 {
        return Err(Error::FitFailed("step response too short".into()));
    }
    let dt = 1.0 / sample_rate;
    let cost = |p: &[f64]| -> f64 {
        let tau = p[1].exp();
        step.iter()
            .enumerate()
            .map(|(n, s)| (s - 1.0 - p[0] * (-(n as f64) * dt / tau).exp()).powi(2))
            .sum()
    };
    let a0 = step[0] - 1.0;
    let mut start = [a0, (0.25 * step.len() as f64 * dt).ln()];
    let mut best = f64::INFINITY;
    for frac in [0.02, 0.05, 0.1, 0.25, 0.5, 1.0] {
        let p = [a0, (frac * step.len() as f64 * dt).ln()];
        let c = cost(&p);
        if c < best {
            best = c;
            start = p;
        }
    }
    let res = nelder_mead(cost, &start, 0.1, 1e-14, 20_000);
    if !res.x.iter().all(|v| v.is_finite()) {
        return Err(Error::FitFailed("exponential fit diverged".into()));
    }
    Ok((res.x[0], res.x[1].exp()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFit {
    pub coeffs: FilterCoefficients,
    pub mse_initial: f64,
    pub mse_final: f64,
    pub evaluations: usize,
    pub converged: bool,
}

/// FIR taps (b₀ = 1 − Σ b_{i>0}) minimizing the MSE between the filtered
/// response and `target`.
pub fn fir_optimize(
    measured: &[f64],
    target: &[f64],
    n_taps: usize,
    sample_rate: f64,
    seed: u64,
    budget: usize,
) -> Result<FirFit> {
    if measured.len() != target.len() || measured.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: target.len(),
            got: measured.len(),
        });
    }
    if n_taps < 2 {
        return Err(Error::InvalidArgument("need at least 2 taps".into()));
    }
    let taps = |x: &[f64]| -> Vec<f64> {
        let mut b = Vec::with_capacity(n_taps);
        b.push(1.0 - x.iter().sum::<f64>());
        b.extend_from_slice(x);
        b
    };
    let filtered = |b: &[f64]| -> Vec<f64> {
        (0..measured.len())
            .map(|n| b.iter().enumerate().take(n + 1).map(|(i, bi)| bi * measured[n - i]).sum())
            .collect()
    };
    let objective = |x: &[f64]| mse(&filtered(&taps(x)), target);
    let x0 = vec![0.0; n_taps - 1];
    let mse_initial = objective(&x0);
    let res = cma_es_minimize(objective, &x0, 0.05, budget, seed);
    Ok(FirFit {
        coeffs: FilterCoefficients::fir(taps(&res.x), sample_rate),
        mse_initial,
        mse_final: res.f,
        evaluations: res.evaluations,
        converged: res.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredistortionOptions {
    pub sample_rate: f64,
    /// square-pulse amplitude used for the calibration cryoscope (Φ₀)
    pub amplitude: f64,
    pub samples: usize,
    pub savgol_window: usize,
    pub savgol_order: usize,
    pub fir_taps: usize,
    pub seed: u64,
    pub budget: usize,
}

impl Default for PredistortionOptions {
    fn default() -> Self {
        PredistortionOptions {
            sample_rate: 1e9,
            amplitude: 0.05,
            samples: 400,
            savgol_window: DEFAULT_SAVGOL_WINDOW,
            savgol_order: DEFAULT_SAVGOL_ORDER,
            fir_taps: DEFAULT_FIR_TAPS,
            seed: 0,
            budget: 6000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredistortionDesign {
    pub fitted_amplitude: f64,
    pub fitted_tau: f64,
    pub iir: FilterCoefficients,
    pub fir: FirFit,
    /// step response recovered from the calibration cryoscope
    pub measured_step: Vec<f64>,
}

impl PredistortionDesign {
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.fir.coeffs.apply(&self.iir.apply(x)?)
    }
}

/// Calibration cryoscope → exponential fit → IIR inverse → FIR cleanup of
/// what remains.
pub fn design_predistortion(model: &DistortionModel, map: &FluxMap, opts: &PredistortionOptions) -> Result<PredistortionDesign> {
    let trace = cryoscope_synthesize(Some(model), opts.amplitude, opts.samples, opts.sample_rate, map)?;
    let flux = cryoscope_analyze(&trace, map, opts.savgol_window, opts.savgol_order)?;
    let step: Vec<f64> = flux.iter().map(|f| f / opts.amplitude).collect();
    let (a, tau) = fit_exponential_step(&step, opts.sample_rate)?;
    let iir = iir_invert_exponential(a.clamp(-0.99, 0.99), tau, opts.sample_rate)?;
    let corrected = iir.apply(&step)?;
    let fir = fir_optimize(&corrected, &vec![1.0; corrected.len()], opts.fir_taps, opts.sample_rate, opts.seed, opts.budget)?;
    Ok(PredistortionDesign {
        fitted_amplitude: a,
        fitted_tau: tau,
        iir,
        fir,
        measured_step: step,
    })
}
