//! Noise channels and error budgets: Kraus-operator fidelities, closed-form
//! decoherence infidelity, 1/f flux noise and channel-toggled budgets.

use std::f64::consts::LN_2;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, DriveConfig};
use crate::dynamics::{
    self, aligned_fidelity, evolve_with, ideal_w_state, sqrt_iswap, EvolveOptions, HamiltonianSpec,
    Integrator, SampledWaveform,
};
use crate::error::{Error, Result};
use crate::linalg::hermitian_eigen;
use crate::qops::{embed_matrix, max_abs, CMat, CVec, LevelScheme, QuantumState, C64, ONE, ZERO};
use crate::tomography::z_rotated_fidelity;

pub const DEFAULT_F_LOW: f64 = 1e-4;
pub const DEFAULT_F_HIGH: f64 = 1e9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoherence {
    /// per qubit, s (infinite disables the channel)
    pub t1: Vec<f64>,
    /// pure dephasing time per qubit, s
    pub tphi: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FluxMode {
    #[default]
    QuasiStatic,
    Trace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluxNoise {
    /// √A_Φ, Φ₀
    pub amplitude: f64,
    /// |∂ω/∂Φ| of the common qubit, rad/s per Φ₀
    pub slope: f64,
    /// Hz
    pub f_low: f64,
    /// Hz, trace mode only
    pub f_high: f64,
    pub mode: FluxMode,
}

/// Exactly the listed channels act; an absent channel is off.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub decoherence: Option<Decoherence>,
    /// ξ between the common qubit and each computational qubit, rad/s
    pub zz: Option<Vec<f64>>,
    pub flux: Option<FluxNoise>,
}

impl NoiseModel {
    /// T1/Tφ channels from the device, nothing else.
    pub fn decoherence_only(device: &DeviceParams) -> Self {
        NoiseModel {
            decoherence: Some(Decoherence {
                t1: device.t1s(),
                tphi: device.tphis(),
            }),
            ..Default::default()
        }
    }

    /// Every channel the device describes; flux noise needs a known slope.
    pub fn from_device(device: &DeviceParams) -> Self {
        let flux = match device.flux_slope {
            Some(slope) if device.flux_noise_amp > 0.0 => Some(FluxNoise {
                amplitude: device.flux_noise_amp,
                slope,
                f_low: DEFAULT_F_LOW,
                f_high: DEFAULT_F_HIGH,
                mode: FluxMode::QuasiStatic,
            }),
            _ => None,
        };
        NoiseModel {
            zz: Some(device.zz.clone()),
            flux,
            ..Self::decoherence_only(device)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.decoherence {
            if d.t1.len() != d.tphi.len() {
                return Err(Error::DimensionMismatch {
                    expected: d.t1.len(),
                    got: d.tphi.len(),
                });
            }
            if d.t1.iter().chain(&d.tphi).any(|&t| !(t > 0.0)) {
                return Err(Error::InvalidArgument("coherence times must be positive".into()));
            }
        }
        if let Some(f) = &self.flux {
            if !(f.f_low > 0.0) || !(f.f_high > f.f_low) || !(f.amplitude >= 0.0) {
                return Err(Error::InvalidArgument(
                    "flux noise needs 0 < f_low < f_high and a non-negative amplitude".into(),
                ));
            }
        }
        Ok(())
    }

    /// Keeps the channels of the first `n` qubits.
    pub fn restricted(&self, n: usize) -> Result<Self> {
        self.validate()?;
        let decoherence = match &self.decoherence {
            Some(d) if d.t1.len() < n => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: d.t1.len(),
                })
            }
            Some(d) => Some(Decoherence {
                t1: d.t1[..n].to_vec(),
                tphi: d.tphi[..n].to_vec(),
            }),
            None => None,
        };
        let zz = match &self.zz {
            Some(z) if z.len() + 1 < n => {
                return Err(Error::DimensionMismatch {
                    expected: n - 1,
                    got: z.len(),
                })
            }
            Some(z) => Some(z[..n - 1].to_vec()),
            None => None,
        };
        Ok(NoiseModel {
            decoherence,
            zz,
            flux: self.flux.clone(),
        })
    }
}

/// Average fidelity (d + Σ|Tr E_k|²)/(d(d+1)) of a trace-preserving channel.
pub fn kraus_average_fidelity(kraus: &[CMat]) -> Result<f64> {
    let d = kraus
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty Kraus list".into()))?
        .nrows();
    let mut sum = CMat::zeros(d, d);
    for k in kraus {
        if k.nrows() != d || k.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: k.nrows(),
            });
        }
        sum += k.adjoint() * k;
    }
    let dev = max_abs(&(sum - CMat::identity(d, d)));
    if dev > 1e-8 {
        return Err(Error::Incomplete(dev));
    }
    let df = d as f64;
    let tr: f64 = kraus.iter().map(|k| k.trace().norm_sqr()).sum();
    Ok((df + tr) / (df * (df + 1.0)))
}

/// Same formula with Σ Tr(E_k†E_k) in place of d, so trace-decreasing
/// (leaky) channels are scored as well.
pub fn kraus_average_fidelity_general(kraus: &[CMat]) -> f64 {
    let Some(d) = kraus.first().map(|k| k.nrows() as f64) else {
        return 0.0;
    };
    let (mut a, mut b) = (0.0, 0.0);
    for k in kraus {
        a += (k.adjoint() * k).trace().re;
        b += k.trace().norm_sqr();
    }
    (a + b) / (d * (d + 1.0))
}

/// Single-qubit amplitude damping followed by phase damping.
pub fn damping_kraus(p1: f64, pphi: f64) -> Result<Vec<CMat>> {
    if !(0.0..=1.0).contains(&p1) || !(0.0..=1.0).contains(&pphi) {
        return Err(Error::InvalidArgument(format!(
            "probabilities must lie in [0, 1], got p1={p1}, pphi={pphi}"
        )));
    }
    let r = |x: f64| C64::new(x, 0.0);
    let a0 = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, r((1.0 - p1).sqrt())]);
    let a1 = CMat::from_row_slice(2, 2, &[ZERO, r(p1.sqrt()), ZERO, ZERO]);
    let z0 = CMat::identity(2, 2) * r((1.0 - pphi).sqrt());
    let z1 = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE]) * r(pphi.sqrt());
    let mut out = Vec::with_capacity(4);
    for p in [&z0, &z1] {
        for a in [&a0, &a1] {
            out.push(p * a);
        }
    }
    Ok(out)
}

/// Lifts a single-qubit channel onto `qubit` of an `n`-qubit register.
pub fn embed_channel(kraus: &[CMat], qubit: usize, n: usize) -> Result<Vec<CMat>> {
    let scheme = LevelScheme::uniform(n, 2)?;
    kraus.iter().map(|k| embed_matrix(k, qubit, &scheme)).collect()
}

/// Prefactor α = d/(2(d+1)), d = 2ⁿ, tabulated for 2–4 qubits.
pub fn decoherence_prefactor(n_qubits: usize) -> Result<f64> {
    match n_qubits {
        2 => Ok(2.0 / 5.0),
        3 => Ok(4.0 / 9.0),
        4 => Ok(8.0 / 17.0),
        _ => Err(Error::InvalidArgument(format!(
            "no tabulated prefactor for {n_qubits} qubits; compose damping_kraus channels and use kraus_average_fidelity"
        ))),
    }
}

/// ε = α t Σ_q (1/T1 + 1/Tφ) over the first `n_qubits` entries.
pub fn analytic_decoherence_infidelity(n_qubits: usize, t_gate: f64, t1: &[f64], tphi: &[f64]) -> Result<f64> {
    let alpha = decoherence_prefactor(n_qubits)?;
    if !(t_gate >= 0.0) {
        return Err(Error::InvalidArgument("gate time must be ≥ 0".into()));
    }
    if t1.len() < n_qubits || tphi.len() < n_qubits {
        return Err(Error::DimensionMismatch {
            expected: n_qubits,
            got: t1.len().min(tphi.len()),
        });
    }
    let rate: f64 = (0..n_qubits).map(|q| 1.0 / t1[q] + 1.0 / tphi[q]).sum();
    Ok(alpha * t_gate * rate)
}

/// Eigen-decomposes a Choi matrix indexed (input·d + output) into Kraus
/// operators, K[i, a] = √λ v[a·d + i].
pub fn choi_to_kraus(choi: &CMat, d: usize) -> Vec<CMat> {
    let h = (choi + choi.adjoint()) * C64::new(0.5, 0.0);
    let (vals, vecs) = hermitian_eigen(&h);
    let top = vals.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for (k, &lam) in vals.iter().enumerate() {
        if lam <= 1e-14 * top.max(1e-300) {
            continue;
        }
        let s = lam.sqrt();
        out.push(CMat::from_fn(d, d, |i, a| vecs[(a * d + i, k)] * s));
    }
    out
}

/// σ = √A_Φ · √ln(1/(t f_low)): rms quasi-static flux over one gate.
pub fn quasi_static_sigma(sqrt_a_phi: f64, t_gate: f64, f_low: f64) -> Result<f64> {
    if !(f_low > 0.0) || !(t_gate > 0.0) || 1.0 / t_gate <= f_low {
        return Err(Error::InvalidArgument(format!(
            "need 1/t_gate > f_low > 0 (t_gate={t_gate}, f_low={f_low})"
        )));
    }
    Ok(sqrt_a_phi * (1.0 / (t_gate * f_low)).ln().sqrt())
}

/// Random flux waveform with one-sided PSD A_Φ/f.
///
/// In-band bins [1/T, f_high] are shaped in the Fourier domain; the power in
/// [f_low, 1/T) that a trace of length T cannot resolve is added as a
/// quasi-static offset. Output is linear in `sqrt_a_phi`.
pub fn flux_trace(sqrt_a_phi: f64, duration: f64, dt: f64, f_low: f64, f_high: f64, seed: u64) -> Result<SampledWaveform> {
    if !(dt > 0.0) || !(duration > 0.0) {
        return Err(Error::InvalidArgument("duration and dt must be positive".into()));
    }
    if dt > 0.5 / f_high * (1.0 + 1e-12) {
        return Err(Error::Nyquist { dt, f_high });
    }
    let n = (duration / dt).ceil() as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let span = n as f64 * dt;
    let mut spec = vec![ZERO; n];
    for (k, bin) in spec.iter_mut().enumerate().take(n.div_ceil(2)).skip(1) {
        let f = k as f64 / span;
        if f < f_low || f > f_high {
            continue;
        }
        let var = n as f64 / (2.0 * dt * f);
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        *bin = C64::new(re, im) * (0.5 * var).sqrt();
    }
    for k in 1..n.div_ceil(2) {
        spec[n - k] = spec[k].conj();
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    let dc = if f_low < 1.0 / span {
        let z: f64 = StandardNormal.sample(&mut rng);
        (1.0 / (span * f_low)).ln().sqrt() * z
    } else {
        0.0
    };
    let values = spec
        .iter()
        .map(|c| sqrt_a_phi * (c.re / n as f64 + dc))
        .collect();
    Ok(SampledWaveform {
        t0: 0.0,
        dt,
        values,
    })
}

/// Γφ^E = √ln2 · |∂ω/∂Φ| · √A_Φ.
pub fn echo_dephasing_rate(sqrt_a_phi: f64, freq_slope: f64) -> f64 {
    LN_2.sqrt() * freq_slope.abs() * sqrt_a_phi
}

pub fn echo_to_flux_amplitude(gamma_phi_echo: f64, freq_slope: f64) -> Result<f64> {
    if freq_slope == 0.0 {
        return Err(Error::Singularity(
            "zero flux slope: flux noise is not extractable at the sweet spot".into(),
        ));
    }
    Ok(gamma_phi_echo / (LN_2.sqrt() * freq_slope.abs()))
}

/// Independent per-realization seed (SplitMix64 over master and index).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// W state over every device qubit, prepared from |1 0…0⟩
    WState,
    /// two qubits, mean over the computational basis inputs against √iSWAP|b⟩
    BasisAverage,
    /// two qubits, Kraus average fidelity against √iSWAP
    Gate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BudgetMethod {
    State,
    Gate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub method: BudgetMethod,
    pub total_fidelity: f64,
    /// every channel off
    pub ideal_fidelity: f64,
    pub eps_decoh: f64,
    pub eps_zz: f64,
    pub eps_flux: f64,
    pub eps_flux_stderr: f64,
    pub mc_realizations: usize,
    pub fidelity_convention: String,
}

impl ErrorBudget {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("budget serializes")
    }
}

/// Aligned text table in the column order F_sim, ε_decoh, ε_ZZ, ε_flux.
pub fn format_budget_table(rows: &[(String, ErrorBudget)]) -> String {
    let w = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0).max(8);
    let mut s = format!(
        "{:<w$}  {:>9}  {:>9}  {:>10}  {:>10}\n",
        "scenario", "F_sim", "eps_decoh", "eps_ZZ", "eps_flux"
    );
    for (label, b) in rows {
        s.push_str(&format!(
            "{:<w$}  {:>8.2}%  {:>8.3}%  {:>10.2e}  {:>10.2e}\n",
            label,
            100.0 * b.total_fidelity,
            100.0 * b.eps_decoh,
            b.eps_zz,
            b.eps_flux
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetOptions {
    pub mc_realizations: usize,
    pub seed: u64,
    pub integrator: Integrator,
}

impl Default for BudgetOptions {
    fn default() -> Self {
        BudgetOptions {
            mc_realizations: 1000,
            seed: 0,
            integrator: Integrator::default(),
        }
    }
}

// Scores one noise configuration; `angles` freezes the virtual-Z alignment.
struct Scorer<'a> {
    device: &'a DeviceParams,
    drive: &'a DriveConfig,
    scenario: Scenario,
    integrator: Integrator,
    scheme: LevelScheme,
    inputs: Vec<QuantumState>,
    targets: Vec<CVec>,
}

impl<'a> Scorer<'a> {
    fn new(device: &'a DeviceParams, drive: &'a DriveConfig, scenario: Scenario, integrator: Integrator) -> Result<Self> {
        let nq = device.n_qubits();
        if scenario != Scenario::WState && nq != 2 {
            return Err(Error::InvalidArgument(format!(
                "{scenario:?} budgets need a two-qubit device, got {nq} qubits"
            )));
        }
        let (scheme, inputs, targets) = match scenario {
            Scenario::WState => {
                let scheme = LevelScheme::with_cap(vec![3; nq], Some(1))?;
                let mut lv = vec![0; nq];
                lv[0] = 1;
                let init = QuantumState::basis(&lv, &scheme)?;
                let target = ideal_w_state(&scheme)?.as_ket().unwrap().clone();
                (scheme, vec![init], vec![target])
            }
            Scenario::BasisAverage => {
                let scheme = LevelScheme::with_cap(vec![3, 3], Some(2))?;
                let u = sqrt_iswap();
                let comp: Vec<usize> = [[0, 0], [0, 1], [1, 0], [1, 1]]
                    .iter()
                    .map(|lv| scheme.index_of(lv).unwrap())
                    .collect();
                let mut inputs = Vec::new();
                let mut targets = Vec::new();
                for (b, lv) in [[0, 0], [0, 1], [1, 0], [1, 1]].iter().enumerate() {
                    inputs.push(QuantumState::basis(lv, &scheme)?);
                    let mut t = CVec::zeros(scheme.dim());
                    for (i, &ci) in comp.iter().enumerate() {
                        t[ci] = u[(i, b)];
                    }
                    targets.push(t);
                }
                (scheme, inputs, targets)
            }
            Scenario::Gate => (LevelScheme::uniform(2, 2)?, vec![], vec![]),
        };
        Ok(Scorer {
            device,
            drive,
            scenario,
            integrator,
            scheme,
            inputs,
            targets,
        })
    }

    fn finals(&self, noise: &NoiseModel, seed: u64) -> Result<Vec<QuantumState>> {
        let spec = HamiltonianSpec::new(self.device.clone(), self.drive.clone(), self.scheme.clone());
        let opts = EvolveOptions {
            integrator: self.integrator,
            store_states: true,
        };
        self.inputs
            .iter()
            .map(|init| {
                let tr = evolve_with(&spec, init, &[0.0, self.drive.duration], Some(noise), Some(seed), &opts)?;
                Ok(tr.states.unwrap().pop().unwrap())
            })
            .collect()
    }

    /// Best-aligned fidelity and the alignment used.
    fn best(&self, noise: &NoiseModel, seed: u64) -> Result<(f64, Vec<Vec<f64>>)> {
        if self.scenario == Scenario::Gate {
            let k = dynamics::process_kraus(self.device, self.drive, Some(noise), Some(seed), self.integrator)?;
            let (z, f) = dynamics::best_gate_angles(&k);
            return Ok((f, vec![z.to_vec()]));
        }
        let mut total = 0.0;
        let mut angles = Vec::new();
        for (st, t) in self.finals(noise, seed)?.iter().zip(&self.targets) {
            let target = QuantumState::ket_unchecked(t.clone(), self.scheme.clone())?;
            let (f, a) = aligned_fidelity(st, &target)?;
            total += f;
            angles.push(a);
        }
        Ok((total / self.targets.len() as f64, angles))
    }

    fn frozen(&self, noise: &NoiseModel, seed: u64, angles: &[Vec<f64>]) -> Result<f64> {
        if self.scenario == Scenario::Gate {
            let k = dynamics::process_kraus(self.device, self.drive, Some(noise), Some(seed), self.integrator)?;
            return Ok(dynamics::gate_score(&k, &angles[0]));
        }
        let finals = self.finals(noise, seed)?;
        let mut total = 0.0;
        for ((st, t), a) in finals.iter().zip(&self.targets).zip(angles) {
            total += z_rotated_fidelity(st, t, a)?;
        }
        Ok(total / self.targets.len() as f64)
    }
}

/// Per-channel budget by toggling: ε_decoh and ε_ZZ are fidelity gains when
/// the channel is removed from the deterministic master-equation run; ε_flux
/// is the Monte-Carlo mean fidelity loss of closed evolution under Gaussian
/// quasi-static offsets, scored with the flux-free alignment. The total is
/// F(decoherence + ZZ) − ε_flux. Channels absent from `noise` contribute 0.
pub fn error_budget(
    device: &DeviceParams,
    drive: &DriveConfig,
    scenario: Scenario,
    noise: &NoiseModel,
    opts: &BudgetOptions,
) -> Result<ErrorBudget> {
    device.validate()?;
    let noise = noise.restricted(device.n_qubits())?;
    let scorer = Scorer::new(device, drive, scenario, opts.integrator)?;
    let seed = opts.seed;

    let off = NoiseModel::default();
    let zz_only = NoiseModel {
        zz: noise.zz.clone(),
        ..Default::default()
    };
    let dec_only = NoiseModel {
        decoherence: noise.decoherence.clone(),
        ..Default::default()
    };
    let dec_zz = NoiseModel {
        flux: None,
        ..noise.clone()
    };

    let (f_ideal, _) = scorer.best(&off, seed)?;
    let (f_zz, zz_angles) = scorer.best(&zz_only, seed)?;
    let (f_dec, _) = scorer.best(&dec_only, seed)?;
    let (f_dec_zz, _) = scorer.best(&dec_zz, seed)?;

    let (eps_flux, eps_flux_stderr, mc) = match &noise.flux {
        Some(flux) if opts.mc_realizations > 0 => {
            let flux = FluxNoise {
                mode: FluxMode::QuasiStatic,
                ..flux.clone()
            };
            let with_flux = NoiseModel {
                flux: Some(flux),
                ..zz_only.clone()
            };
            let base = scorer.frozen(&zz_only, seed, &zz_angles)?;
            let losses: Vec<f64> = (0..opts.mc_realizations)
                .into_par_iter()
                .map(|i| {
                    let s = derive_seed(seed, i as u64);
                    scorer.frozen(&with_flux, s, &zz_angles).map(|f| base - f)
                })
                .collect::<Result<_>>()?;
            let m = losses.len() as f64;
            let mean = losses.iter().sum::<f64>() / m;
            let var = if losses.len() > 1 {
                losses.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            (mean, (var / m).sqrt(), losses.len())
        }
        _ => (0.0, 0.0, 0),
    };

    let method = match scenario {
        Scenario::Gate => BudgetMethod::Gate,
        _ => BudgetMethod::State,
    };
    Ok(ErrorBudget {
        method,
        total_fidelity: f_dec_zz - eps_flux,
        ideal_fidelity: f_ideal,
        eps_decoh: f_zz - f_dec_zz,
        eps_zz: f_dec - f_dec_zz,
        eps_flux,
        eps_flux_stderr,
        mc_realizations: mc,
        fidelity_convention: "amplitude".into(),
    })
}
