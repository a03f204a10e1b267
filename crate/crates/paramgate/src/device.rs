//! Device parameters, drive description and closed-form coupling formulas.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{bessel_j0, bessel_j1, bessel_j1_inverse, J1_ARGMAX};
use crate::units::{ghz, khz, mhz, us};

/// Ratio h/|Δ| above which the dispersive approximation is flagged.
pub const DISPERSIVE_WARN_RATIO: f64 = 0.15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitParams {
    /// rad/s
    pub freq: f64,
    /// rad/s, negative for transmons
    pub anharm: f64,
    /// qubit-bus coupling h, rad/s
    pub bus_coupling: f64,
    /// s
    pub t1: f64,
    /// s
    pub t2echo: f64,
}

impl QubitParams {
    /// Pure dephasing time from 1/Tφ = 1/T2echo − 1/(2 T1); infinite when the
    /// echo time is T1-limited.
    pub fn tphi(&self) -> f64 {
        let rate = 1.0 / self.t2echo - 0.5 / self.t1;
        if rate <= 0.0 {
            f64::INFINITY
        } else {
            1.0 / rate
        }
    }
}

/// Qubit 0 is the common (driven) qubit; the rest are computational qubits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    pub qubits: Vec<QubitParams>,
    /// rad/s
    pub bus_freq: f64,
    /// static ZZ between the common qubit and qubit j+1, rad/s
    pub zz: Vec<f64>,
    /// √A_Φ of the common qubit, in Φ₀
    pub flux_noise_amp: f64,
    /// ∂ω/∂Φ of the common qubit at its operating point, rad/s per Φ₀
    pub flux_slope: Option<f64>,
}

impl DeviceParams {
    pub fn n_qubits(&self) -> usize {
        self.qubits.len()
    }

    /// Checks hard invariants; returns soft warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        if self.qubits.len() < 2 {
            return Err(Error::InvalidArgument(
                "device needs a common qubit and at least one computational qubit".into(),
            ));
        }
        if self.zz.len() != self.qubits.len() - 1 {
            return Err(Error::InvalidArgument(format!(
                "expected {} ZZ strengths, got {}",
                self.qubits.len() - 1,
                self.zz.len()
            )));
        }
        if self.flux_noise_amp < 0.0 {
            return Err(Error::InvalidArgument("flux noise amplitude must be ≥ 0".into()));
        }
        let mut warnings = Vec::new();
        for (j, q) in self.qubits.iter().enumerate() {
            if !(q.t1 > 0.0 && q.t2echo > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "qubit {j}: coherence times must be positive"
                )));
            }
            if q.t2echo > 2.0 * q.t1 * 1.05 {
                warnings.push(format!("qubit {j}: T2echo exceeds 2·T1"));
            }
            let delta = q.freq - self.bus_freq;
            if delta == 0.0 {
                return Err(Error::Singularity(format!("qubit {j} is resonant with the bus")));
            }
            let ratio = (q.bus_coupling / delta).abs();
            if ratio >= DISPERSIVE_WARN_RATIO {
                warnings.push(format!(
                    "qubit {j}: h/|Δ| = {ratio:.3} breaks the dispersive condition"
                ));
            }
        }
        Ok(warnings)
    }

    /// Δ_j = ω_j − ω_0.
    pub fn detuning(&self, j: usize) -> f64 {
        self.qubits[j].freq - self.qubits[0].freq
    }

    /// Bus-mediated exchange coupling between the common qubit and qubit j.
    pub fn exchange_coupling(&self, j: usize) -> Result<f64> {
        let q0 = &self.qubits[0];
        let qj = &self.qubits[j];
        bus_mediated_coupling(
            q0.bus_coupling,
            qj.bus_coupling,
            q0.freq - self.bus_freq,
            qj.freq - self.bus_freq,
        )
    }

    /// Keeps the common qubit plus the listed computational qubits, in order.
    pub fn subset(&self, computational: &[usize]) -> Result<DeviceParams> {
        let mut qubits = vec![self.qubits[0].clone()];
        let mut zz = Vec::new();
        for &j in computational {
            if j == 0 || j >= self.qubits.len() {
                return Err(Error::InvalidSelection(format!(
                    "qubit {j} is not a computational qubit"
                )));
            }
            qubits.push(self.qubits[j].clone());
            zz.push(self.zz[j - 1]);
        }
        Ok(DeviceParams {
            qubits,
            zz,
            ..self.clone()
        })
    }

    pub fn t1s(&self) -> Vec<f64> {
        self.qubits.iter().map(|q| q.t1).collect()
    }

    pub fn tphis(&self) -> Vec<f64> {
        self.qubits.iter().map(|q| q.tphi()).collect()
    }
}

/// Four-transmon ring used throughout the examples (common qubit at its
/// operating point, below the flux sweet spot).
pub fn ring_device() -> DeviceParams {
    let f = [5.0408, 5.0992, 5.2056, 5.2347];
    let h = [17.3, 22.8, 18.2, 15.2];
    let a = [-209.8, -209.3, -210.2, -204.3];
    let t1 = [30.4, 31.7, 38.5, 33.2];
    let t2 = [17.3, 44.1, 40.3, 16.6];
    let qubits = (0..4)
        .map(|i| QubitParams {
            freq: ghz(f[i]),
            anharm: mhz(a[i]),
            bus_coupling: mhz(h[i]),
            t1: us(t1[i]),
            t2echo: us(t2[i]),
        })
        .collect();
    let map = FluxMap::from_operating_point(ghz(5.1941), ghz(5.0408));
    DeviceParams {
        qubits,
        bus_freq: ghz(5.5208),
        zz: vec![khz(26.2), khz(30.1), khz(28.0)],
        flux_noise_amp: 2.45e-6,
        flux_slope: Some(map.slope(0.0)),
    }
}

/// Idealized six-transmon layout for the 2–6 qubit projection
/// (`n_total` qubits including the common one).
pub fn projection_device(n_total: usize) -> Result<DeviceParams> {
    let f = [5.0, 5.25, 5.18, 5.10, 5.06, 5.03];
    if !(2..=f.len()).contains(&n_total) {
        return Err(Error::InvalidArgument(format!(
            "projection device supports 2..=6 qubits, got {n_total}"
        )));
    }
    let qubits = f[..n_total]
        .iter()
        .map(|&fr| QubitParams {
            freq: ghz(fr),
            anharm: mhz(-200.0),
            bus_coupling: mhz(28.0),
            t1: us(60.0),
            t2echo: us(60.0),
        })
        .collect();
    let ring = ring_device();
    Ok(DeviceParams {
        qubits,
        bus_freq: ghz(5.40),
        zz: vec![khz(25.0); n_total - 1],
        flux_noise_amp: ring.flux_noise_amp,
        flux_slope: ring.flux_slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tone {
    /// computational qubit index the tone is resonant with
    pub target: usize,
    /// peak frequency modulation Ω, rad/s
    pub amplitude: f64,
    /// ν, rad/s
    pub frequency: f64,
    /// φ, rad
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    pub tones: Vec<Tone>,
    /// s
    pub duration: f64,
    /// cosine ramp length at each end, s
    pub ramp: f64,
}

impl DriveConfig {
    pub fn validate(&self) -> Result<()> {
        for (i, t) in self.tones.iter().enumerate() {
            if self.tones[..i].iter().any(|u| u.target == t.target) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate tone target {}",
                    t.target
                )));
            }
            if !(t.amplitude >= 0.0) || !t.frequency.is_finite() || !t.phase.is_finite() {
                return Err(Error::InvalidArgument(format!("tone {i}: invalid parameters")));
            }
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidArgument("drive duration must be positive".into()));
        }
        if !(self.ramp >= 0.0) || 2.0 * self.ramp > self.duration {
            return Err(Error::InvalidArgument("ramp must fit twice in the duration".into()));
        }
        Ok(())
    }

    pub fn epsilons(&self) -> Vec<f64> {
        self.tones
            .iter()
            .map(|t| if t.frequency == 0.0 { 0.0 } else { t.amplitude / t.frequency.abs() })
            .collect()
    }

    /// Square envelope with cosine ramps; zero outside [0, duration].
    pub fn envelope(&self, t: f64) -> f64 {
        if t < 0.0 || t > self.duration {
            return 0.0;
        }
        if self.ramp <= 0.0 {
            return 1.0;
        }
        let edge = t.min(self.duration - t);
        if edge >= self.ramp {
            1.0
        } else {
            0.5 * (1.0 - (PI * edge / self.ramp).cos())
        }
    }

    /// Frequency excursion of the common qubit, rad/s.
    pub fn signal(&self, t: f64) -> f64 {
        let env = self.envelope(t);
        if env == 0.0 {
            return 0.0;
        }
        env * self
            .tones
            .iter()
            .map(|k| k.amplitude * (k.frequency * t + k.phase).sin())
            .sum::<f64>()
    }

    /// Drive with ν_j = |Δ_j| and Ω_j = ε_j ν_j.
    pub fn from_epsilons(
        device: &DeviceParams,
        targets: &[usize],
        eps: &[f64],
        duration: f64,
        ramp: f64,
    ) -> DriveConfig {
        let tones = targets
            .iter()
            .zip(eps)
            .map(|(&j, &e)| {
                let nu = device.detuning(j).abs();
                Tone {
                    target: j,
                    amplitude: e * nu,
                    frequency: nu,
                    phase: 0.0,
                }
            })
            .collect();
        DriveConfig {
            tones,
            duration,
            ramp,
        }
    }

    /// Duration with the ramps counted at half weight.
    pub fn effective_duration(&self) -> f64 {
        self.duration - self.ramp
    }
}

/// Second-order bus-mediated exchange: g = (h0 hj / 2)(1/Δ0b + 1/Δjb).
pub fn bus_mediated_coupling(h0: f64, hj: f64, d0b: f64, djb: f64) -> Result<f64> {
    if d0b == 0.0 || djb == 0.0 {
        return Err(Error::Singularity("qubit resonant with the bus".into()));
    }
    Ok(0.5 * h0 * hj * (1.0 / d0b + 1.0 / djb))
}

/// g_eff = g_j J₁(ε_j) Π_{k≠j} J₀(ε_k).
pub fn effective_coupling(g: f64, epsilons: &[f64], j: usize) -> f64 {
    let others: f64 = epsilons
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != j)
        .map(|(_, &e)| bessel_j0(e))
        .product();
    g * bessel_j1(epsilons[j]) * others
}

/// Dispersive shift of a transmon coupled to a resonator,
/// χ = h² α / (Δ (Δ + α)) with α < 0 and Δ = ω_q − ω_b.
pub fn dispersive_shift(h: f64, alpha: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 || delta + alpha == 0.0 {
        return Err(Error::Singularity("dispersive shift pole".into()));
    }
    Ok(h * h * alpha / (delta * (delta + alpha)))
}

/// Inverse of [`dispersive_shift`]: recovers |h|.
pub fn coupling_from_dispersive_shift(chi: f64, alpha: f64, delta: f64) -> Result<f64> {
    if delta == 0.0 || delta + alpha == 0.0 || alpha == 0.0 {
        return Err(Error::Singularity("coupling is not recoverable".into()));
    }
    let h2 = chi * delta * (delta + alpha) / alpha;
    if h2 < 0.0 {
        return Err(Error::InvalidArgument("shift has the wrong sign for these parameters".into()));
    }
    Ok(h2.sqrt())
}

fn couplings_for(device: &DeviceParams, targets: &[usize]) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::InvalidSelection("no target qubits".into()));
    }
    targets
        .iter()
        .map(|&j| {
            if j == 0 || j >= device.n_qubits() {
                Err(Error::InvalidSelection(format!("qubit {j} is not a computational qubit")))
            } else {
                device.exchange_coupling(j).map(f64::abs)
            }
        })
        .collect()
}

// Monotone fixed point ε_j ← J₁⁻¹(g / (|g_j| Π J₀(ε_k))). Starting below any
// solution, the iterates increase towards the smallest one, so leaving the
// rising branch proves the target infeasible.
fn solve_equal(gs: &[f64], g_target: f64, fixed: Option<f64>) -> Option<Vec<f64>> {
    let n = gs.len();
    let mut eps = vec![0.0; n];
    if let Some(e0) = fixed {
        eps[0] = e0;
    }
    for _ in 0..20_000 {
        let target = match fixed {
            Some(_) => effective_coupling(gs[0], &eps, 0),
            None => g_target,
        };
        let mut next = eps.clone();
        let start = usize::from(fixed.is_some());
        for j in start..n {
            let others: f64 = (0..n).filter(|&k| k != j).map(|k| bessel_j0(eps[k])).product();
            if others <= 0.0 {
                return None;
            }
            next[j] = bessel_j1_inverse(target / (gs[j] * others))?;
        }
        let change = next
            .iter()
            .zip(&eps)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        eps = next;
        if change < 1e-15 {
            break;
        }
    }
    Some(eps)
}

/// Largest common |g_eff| reachable with every ε_j on the rising J₁ branch.
pub fn feasible_max_coupling(device: &DeviceParams, targets: &[usize]) -> Result<f64> {
    let gs = couplings_for(device, targets)?;
    let mut lo = 0.0;
    let mut hi = gs.iter().cloned().fold(f64::INFINITY, f64::min) * bessel_j1(J1_ARGMAX);
    if solve_equal(&gs, hi, None).is_some() {
        return Ok(hi);
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if solve_equal(&gs, mid, None).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// Drive depths ε_j (one tone per target, ν_j = |Δ_j|) giving every target
/// the same |g_eff| = g_target.
pub fn calibrate_amplitudes(device: &DeviceParams, targets: &[usize], g_target: f64) -> Result<Vec<f64>> {
    if !(g_target >= 0.0) {
        return Err(Error::InvalidArgument("target coupling must be ≥ 0".into()));
    }
    let gs = couplings_for(device, targets)?;
    solve_equal(&gs, g_target, None).ok_or_else(|| Error::Infeasible {
        requested: g_target,
        feasible_max: feasible_max_coupling(device, targets).unwrap_or(0.0),
    })
}

/// Keeps ε of the first target fixed and solves the others so that all
/// targets share its |g_eff|. Returns (ε vector, common |g_eff|).
pub fn equalize_amplitudes(device: &DeviceParams, targets: &[usize], eps_first: f64) -> Result<(Vec<f64>, f64)> {
    let gs = couplings_for(device, targets)?;
    if !(0.0..=J1_ARGMAX).contains(&eps_first) {
        return Err(Error::InvalidArgument(format!(
            "first-tone depth {eps_first} outside [0, {J1_ARGMAX}]"
        )));
    }
    let eps = solve_equal(&gs, 0.0, Some(eps_first)).ok_or_else(|| Error::Infeasible {
        requested: gs[0] * bessel_j1(eps_first),
        feasible_max: feasible_max_coupling(device, targets).unwrap_or(0.0),
    })?;
    let g = effective_coupling(gs[0], &eps, 0).abs();
    Ok((eps, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateKind {
    /// equal sharing, g_eff t = (n + 1/4)π
    Entangler,
    /// full exchange, g_eff t = (n + 1/2)π
    Iswap,
}

pub fn gate_time(g_eff: f64, n: u32, kind: GateKind) -> Result<f64> {
    if !(g_eff > 0.0) {
        return Err(Error::InvalidArgument("g_eff must be positive".into()));
    }
    let phase = match kind {
        GateKind::Entangler => n as f64 + 0.25,
        GateKind::Iswap => n as f64 + 0.5,
    };
    Ok(phase * PI / g_eff)
}

/// Rotation angle √n·g·t at which a single excitation on the common qubit is
/// shared equally with `n` computational qubits.
pub fn w_angle(n: usize) -> f64 {
    (1.0 / ((n + 1) as f64).sqrt()).acos()
}

/// First equal-sharing time for a star of `n` computational qubits, all with |g_eff|.
pub fn w_state_time(g_eff: f64, n: usize) -> Result<f64> {
    if !(g_eff > 0.0) || n == 0 {
        return Err(Error::InvalidArgument("need g_eff > 0 and n ≥ 1".into()));
    }
    Ok(w_angle(n) / ((n as f64).sqrt() * g_eff))
}

/// Common |g_eff| for which the W condition is met after `duration`.
pub fn w_coupling_for_time(duration: f64, n: usize) -> f64 {
    w_angle(n) / ((n as f64).sqrt() * duration)
}

/// Quadratic flux dependence of a tunable transmon around its sweet spot,
/// ω(Φ) = ω_ss (1 − (π²/4)(Φ_b + Φ)²) with a static bias Φ_b.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FluxMap {
    /// rad/s
    pub sweet_spot: f64,
    /// Φ₀
    pub bias: f64,
}

impl FluxMap {
    pub fn from_operating_point(sweet_spot: f64, operating: f64) -> FluxMap {
        let x = (1.0 - operating / sweet_spot).max(0.0);
        FluxMap {
            sweet_spot,
            bias: (4.0 * x / (PI * PI)).sqrt(),
        }
    }

    fn curvature(&self) -> f64 {
        self.sweet_spot * PI * PI / 4.0
    }

    pub fn frequency(&self, flux: f64) -> f64 {
        let p = self.bias + flux;
        self.sweet_spot - self.curvature() * p * p
    }

    /// ω(Φ_b + Φ) − ω(Φ_b)
    pub fn detuning(&self, flux: f64) -> f64 {
        self.frequency(flux) - self.frequency(0.0)
    }

    /// ∂ω/∂Φ at bias + flux (magnitude).
    pub fn slope(&self, flux: f64) -> f64 {
        (2.0 * self.curvature() * (self.bias + flux)).abs()
    }

    /// Inverse of [`Self::detuning`] on the branch Φ_b + Φ ≥ 0.
    pub fn flux_for_detuning(&self, detuning: f64) -> Result<f64> {
        let p2 = self.bias * self.bias - detuning / self.curvature();
        if p2 < -1e-15 {
            return Err(Error::NonMonotoneMap);
        }
        Ok(p2.max(0.0).sqrt() - self.bias)
    }
}
