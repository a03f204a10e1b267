//! Two-qubit cross-entropy benchmarking of the √iSWAP entangler.
//!
//! A cycle is a random single-qubit gate on each qubit followed by the
//! two-qubit gate. Ideal probabilities always come from the exact √iSWAP.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, DriveConfig};
use crate::dynamics::{best_gate_angles, correct_kraus, process_kraus_at, sqrt_iswap, Integrator};
use crate::noise::NoiseModel;
use crate::error::{Error, Result};
use crate::noise::derive_seed;
use crate::qops::{kron, pauli_x, pauli_y, CMat, C64, ONE, ZERO};

/// Floor applied to ideal probabilities before taking logarithms.
pub const P_FLOOR: f64 = 1e-12;

fn rz(theta: f64) -> CMat {
    CMat::from_diagonal(&nalgebra::DVector::from_vec(vec![
        C64::from_polar(1.0, -0.5 * theta),
        C64::from_polar(1.0, 0.5 * theta),
    ]))
}

/// exp(−iθ/2 (cos φ X + sin φ Y)).
pub fn xy_rotation(theta: f64, phi: f64) -> CMat {
    let axis = pauli_x() * C64::new(phi.cos(), 0.0) + pauli_y() * C64::new(phi.sin(), 0.0);
    CMat::identity(2, 2) * C64::new((0.5 * theta).cos(), 0.0) - axis * C64::new(0.0, (0.5 * theta).sin())
}

/// The 64 gates Rz(mπ/8)·R_xy(π/2, nπ/8); gate (n, m) sits at index 8n + m.
#[derive(Debug, Clone, PartialEq)]
pub struct XebGateSet {
    pub gates: Vec<CMat>,
}

impl XebGateSet {
    pub fn gate(&self, n: usize, m: usize) -> &CMat {
        &self.gates[8 * n + m]
    }
}

pub fn build_gate_set() -> XebGateSet {
    let step = PI / 8.0;
    let mut gates = Vec::with_capacity(64);
    for n in 0..8 {
        for m in 0..8 {
            gates.push(rz(m as f64 * step) * xy_rotation(FRAC_PI_2, n as f64 * step));
        }
    }
    XebGateSet { gates }
}

fn cross_entropy(p: &[f64], q: &[f64]) -> f64 {
    -p.iter().zip(q).map(|(a, b)| a * b.log2()).sum::<f64>()
}

fn floored(p_th: &[f64]) -> Result<(Vec<f64>, bool)> {
    if p_th.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidArgument("probabilities must be finite and non-negative".into()));
    }
    let hit = p_th.iter().any(|&x| x < P_FLOOR);
    let v: Vec<f64> = p_th.iter().map(|&x| x.max(P_FLOOR)).collect();
    let s: f64 = v.iter().sum();
    Ok((v.iter().map(|x| x / s).collect(), hit))
}

/// F = (H(u, p_th) − H(p_exp, p_th)) / (H(u, p_th) − H(p_th, p_th)).
///
/// Zero ideal probabilities are floored at [`P_FLOOR`] and renormalized; a
/// uniform p_th leaves the estimator undefined.
pub fn xeb_fidelity(p_exp: &[f64], p_th: &[f64]) -> Result<f64> {
    if p_exp.len() != p_th.len() || p_th.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: p_th.len(),
            got: p_exp.len(),
        });
    }
    let (q, hit) = floored(p_th)?;
    if hit {
        log::debug!("ideal distribution floored at {P_FLOOR}");
    }
    let s: f64 = p_exp.iter().sum();
    if !(s > 0.0) {
        return Err(Error::InvalidArgument("experimental distribution is empty".into()));
    }
    let pe: Vec<f64> = p_exp.iter().map(|x| x / s).collect();
    let u = vec![1.0 / q.len() as f64; q.len()];
    let hu = cross_entropy(&u, &q);
    let den = hu - cross_entropy(&q, &q);
    if den.abs() < 1e-12 {
        return Err(Error::DegenerateDistribution);
    }
    Ok((hu - cross_entropy(&pe, &q)) / den)
}

/// Drive phase for cycle k, keeping the exchange sideband phase fixed:
/// φ_k = φ₀ + k Δ t_cycle, reduced to [0, 2π).
pub fn advanced_phase(phi0: f64, detuning: f64, cycle: usize, t_cycle: f64) -> f64 {
    (phi0 + cycle as f64 * detuning * t_cycle).rem_euclid(TAU)
}

/// Drive for a gate starting at absolute time `t_start`, with every tone's
/// phase advanced by Δ_j t_start.
pub fn advanced_drive(device: &DeviceParams, drive: &DriveConfig, t_start: f64) -> DriveConfig {
    let mut d = drive.clone();
    for tone in &mut d.tones {
        tone.phase = (tone.phase + device.detuning(tone.target) * t_start).rem_euclid(TAU);
    }
    d
}

/// Kraus operators of the device gate played in cycle `cycle` (start time
/// cycle·t_cycle, advanced phases) with its own fitted Z corrections, and
/// the corrected gate fidelity.
pub fn device_cycle_channel(
    device: &DeviceParams,
    drive: &DriveConfig,
    cycle: usize,
    t_cycle: f64,
    noise: Option<&NoiseModel>,
    seed: Option<u64>,
    integrator: Integrator,
) -> Result<(Vec<CMat>, f64)> {
    let t_start = cycle as f64 * t_cycle;
    let d = advanced_drive(device, drive, t_start);
    let ks = process_kraus_at(device, &d, t_start, noise, seed, integrator)?;
    // the drive frame leaves a φ-dependent phase on the common qubit, so
    // virtual Z angles are refitted for every cycle
    let (z, f) = best_gate_angles(&ks);
    Ok((correct_kraus(&ks, &z), f))
}

/// Per-cycle channels of the simulated device gate for sequences up to
/// `max_depth`.
pub fn device_xeb_channel(
    device: &DeviceParams,
    drive: &DriveConfig,
    t_cycle: f64,
    max_depth: usize,
    noise: Option<&NoiseModel>,
    seed: Option<u64>,
    integrator: Integrator,
) -> Result<XebChannel> {
    let cycles: Vec<Vec<CMat>> = (0..max_depth)
        .into_par_iter()
        .map(|k| device_cycle_channel(device, drive, k, t_cycle, noise, seed, integrator).map(|r| r.0))
        .collect::<Result<_>>()?;
    Ok(XebChannel::Cycles(cycles))
}

/// What the benchmarked two-qubit gate does.
#[derive(Debug, Clone, PartialEq)]
pub enum XebChannel {
    Ideal,
    /// ideal gate followed by global depolarizing of strength p per cycle
    Depolarizing(f64),
    /// Kraus operators of the implemented gate on |q0 q1⟩ (may leak)
    Kraus(Vec<CMat>),
    /// one Kraus set per cycle index, covering the deepest sequence
    Cycles(Vec<Vec<CMat>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XebOptions {
    pub depths: Vec<usize>,
    pub sequences: usize,
    /// sampled bitstrings per sequence; exact probabilities when absent
    pub shots: Option<u64>,
    pub seed: u64,
    /// single-qubit cycles only (two-qubit gate and its error omitted)
    pub reference: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XebRecord {
    pub depth: usize,
    pub seq_index: usize,
    pub p_th: Vec<f64>,
    pub p_exp: Vec<f64>,
    /// absent when the ideal distribution is uniform
    pub fidelity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub amplitude: f64,
    pub base: f64,
    pub base_stderr: f64,
    /// covariance of (amplitude, base)
    pub covariance: [[f64; 2]; 2],
    /// false when non-positive points forced a linear-space fit
    pub log_space: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct XebRun {
    pub depths: Vec<usize>,
    pub records: Vec<XebRecord>,
    /// per depth: Σ(H(u,th) − H(exp,th)) / Σ(H(u,th) − H(th,th)) over
    /// sequences; NaN when every ideal distribution at that depth is uniform
    pub mean_fidelity: Vec<f64>,
    pub fit: Option<DecayFit>,
}

impl XebRun {
    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "depths": self.depths,
            "mean_fidelity": self.mean_fidelity,
            "fit": self.fit,
        })
        .to_string()
    }

    /// CSV with columns depth, seq_index, F.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("depth,seq_index,F\n");
        for r in &self.records {
            match r.fidelity {
                Some(f) => s.push_str(&format!("{},{},{:.10}\n", r.depth, r.seq_index, f)),
                None => s.push_str(&format!("{},{},\n", r.depth, r.seq_index)),
            }
        }
        s
    }
}

fn apply_kraus(ks: &[CMat], rho: &CMat) -> CMat {
    ks.iter().fold(CMat::zeros(4, 4), |acc, k| acc + k * rho * k.adjoint())
}

fn sequence_probs(gates: &XebGateSet, choices: &[(usize, usize)], channel: &XebChannel, reference: bool) -> (Vec<f64>, Vec<f64>) {
    let u2 = sqrt_iswap();
    let mut psi = nalgebra::DVector::from_vec(vec![ONE, ZERO, ZERO, ZERO]);
    let mut rho = &psi * psi.adjoint();
    for (k, &(a, b)) in choices.iter().enumerate() {
        let local = kron(&gates.gates[a], &gates.gates[b]);
        psi = &local * psi;
        rho = &local * rho * local.adjoint();
        if reference {
            continue;
        }
        psi = &u2 * psi;
        rho = match channel {
            XebChannel::Ideal => &u2 * rho * u2.adjoint(),
            XebChannel::Depolarizing(p) => {
                let tr = rho.trace().re;
                let g = &u2 * rho * u2.adjoint();
                g * C64::new(1.0 - p, 0.0) + CMat::identity(4, 4) * C64::new(0.25 * p * tr, 0.0)
            }
            XebChannel::Kraus(ks) => apply_kraus(ks, &rho),
            XebChannel::Cycles(cs) => apply_kraus(&cs[k], &rho),
        };
    }
    let p_th: Vec<f64> = psi.iter().map(|z| z.norm_sqr()).collect();
    let tr = rho.trace().re;
    let p_exp: Vec<f64> = (0..4).map(|i| (rho[(i, i)].re / tr).max(0.0)).collect();
    (p_th, p_exp)
}

fn sample(p: &[f64], shots: u64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut left = shots;
    let mut mass = 1.0;
    let mut out = vec![0.0; p.len()];
    for (k, &pk) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if k + 1 == p.len() || mass <= pk {
            out[k] = left as f64;
            break;
        }
        let c = Binomial::new(left, (pk / mass).clamp(0.0, 1.0)).unwrap().sample(rng);
        out[k] = c as f64;
        left -= c;
        mass -= pk;
    }
    out.iter().map(|c| c / shots as f64).collect()
}

pub fn run_xeb(channel: &XebChannel, opts: &XebOptions) -> Result<XebRun> {
    if opts.depths.is_empty() || opts.depths[0] == 0 || opts.depths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("depths must be ≥ 1 and strictly increasing".into()));
    }
    if opts.sequences == 0 {
        return Err(Error::InvalidArgument("need at least one sequence per depth".into()));
    }
    if let XebChannel::Depolarizing(p) = channel {
        if !(0.0..=1.0).contains(p) {
            return Err(Error::InvalidArgument(format!("depolarizing strength {p} outside [0, 1]")));
        }
    }
    if let XebChannel::Cycles(cs) = channel {
        let deepest = *opts.depths.last().unwrap();
        if cs.len() < deepest {
            return Err(Error::DimensionMismatch {
                expected: deepest,
                got: cs.len(),
            });
        }
    }
    let gates = build_gate_set();
    let jobs: Vec<(usize, usize, usize)> = opts
        .depths
        .iter()
        .enumerate()
        .flat_map(|(di, &d)| (0..opts.sequences).map(move |s| (di, d, s)))
        .collect();
    let records: Vec<XebRecord> = jobs
        .par_iter()
        .map(|&(di, depth, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, (di * opts.sequences + s) as u64));
            let choices: Vec<(usize, usize)> = (0..depth).map(|_| (rng.random_range(0..64), rng.random_range(0..64))).collect();
            let (p_th, exact) = sequence_probs(&gates, &choices, channel, opts.reference);
            let p_exp = match opts.shots {
                Some(n) => sample(&exact, n, &mut rng),
                None => exact,
            };
            let fidelity = match xeb_fidelity(&p_exp, &p_th) {
                Ok(f) => Some(f),
                Err(Error::DegenerateDistribution) => None,
                Err(e) => return Err(e),
            };
            Ok(XebRecord {
                depth,
                seq_index: s,
                p_th,
                p_exp,
                fidelity,
            })
        })
        .collect::<Result<_>>()?;

    let mut mean_fidelity = Vec::with_capacity(opts.depths.len());
    for &d in &opts.depths {
        let (mut num, mut den) = (0.0, 0.0);
        for r in records.iter().filter(|r| r.depth == d) {
            let (q, _) = floored(&r.p_th)?;
            let u = vec![0.25; 4];
            let hu = cross_entropy(&u, &q);
            num += hu - cross_entropy(&r.p_exp, &q);
            den += hu - cross_entropy(&q, &q);
        }
        if den.abs() < 1e-12 {
            log::warn!("every ideal distribution at depth {d} is uniform; XEB undefined there");
            mean_fidelity.push(f64::NAN);
        } else {
            mean_fidelity.push(num / den);
        }
    }
    let (fd, ff): (Vec<usize>, Vec<f64>) = opts
        .depths
        .iter()
        .zip(&mean_fidelity)
        .filter(|(_, f)| f.is_finite())
        .map(|(d, f)| (*d, *f))
        .unzip();
    let fit = if fd.len() >= 3 { Some(fit_decay(&fd, &ff)?) } else { None };
    Ok(XebRun {
        depths: opts.depths.clone(),
        records,
        mean_fidelity,
        fit,
    })
}

/// Fits F(m) = A pᵐ. Log-space linear least squares when every point is
/// positive, otherwise Gauss–Newton in linear space.
pub fn fit_decay(depths: &[usize], fids: &[f64]) -> Result<DecayFit> {
    let n = depths.len();
    if n < 3 || fids.len() != n {
        return Err(Error::InvalidArgument("decay fit needs at least 3 (depth, F) pairs".into()));
    }
    let x: Vec<f64> = depths.iter().map(|&d| d as f64).collect();
    if fids.iter().all(|&f| f > 0.0) {
        let y: Vec<f64> = fids.iter().map(|f| f.ln()).collect();
        let xm = x.iter().sum::<f64>() / n as f64;
        let ym = y.iter().sum::<f64>() / n as f64;
        let sxx: f64 = x.iter().map(|v| (v - xm).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::FitFailed("depths must not all be equal".into()));
        }
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - xm) * (b - ym)).sum();
        let slope = sxy / sxx;
        let icpt = ym - slope * xm;
        let ssr: f64 = x.iter().zip(&y).map(|(a, b)| (b - icpt - slope * a).powi(2)).sum();
        let s2 = ssr / (n - 2) as f64;
        let var_slope = s2 / sxx;
        let var_icpt = s2 * (1.0 / n as f64 + xm * xm / sxx);
        let cov_ls = -s2 * xm / sxx;
        let (a, p) = (icpt.exp(), slope.exp());
        // delta method into (A, p)
        return Ok(DecayFit {
            amplitude: a,
            base: p,
            base_stderr: p * var_slope.sqrt(),
            covariance: [[a * a * var_icpt, a * p * cov_ls], [a * p * cov_ls, p * p * var_slope]],
            log_space: true,
        });
    }
    let (mut a, mut p) = (fids[0].abs().max(1e-3), 0.9);
    let mut lambda = 1e-3;
    let resid = |a: f64, p: f64| -> f64 { x.iter().zip(fids).map(|(m, f)| (f - a * p.powf(*m)).powi(2)).sum() };
    let mut cost = resid(a, p);
    let mut jtj = [[0.0; 2]; 2];
    for _ in 0..500 {
        let mut g = [0.0; 2];
        jtj = [[0.0; 2]; 2];
        for (m, f) in x.iter().zip(fids) {
            let pm = p.powf(*m);
            let j = [pm, a * m * p.powf(m - 1.0)];
            let r = f - a * pm;
            for u in 0..2 {
                g[u] += j[u] * r;
                for v in 0..2 {
                    jtj[u][v] += j[u] * j[v];
                }
            }
        }
        let m00 = jtj[0][0] * (1.0 + lambda);
        let m11 = jtj[1][1] * (1.0 + lambda);
        let det = m00 * m11 - jtj[0][1] * jtj[1][0];
        if det.abs() < 1e-300 {
            break;
        }
        let da = (m11 * g[0] - jtj[0][1] * g[1]) / det;
        let dp = (m00 * g[1] - jtj[1][0] * g[0]) / det;
        let (na, np) = (a + da, (p + dp).clamp(1e-9, 1.0));
        let nc = resid(na, np);
        if nc < cost {
            let done = (cost - nc) < 1e-16 * cost.max(1e-300);
            a = na;
            p = np;
            cost = nc;
            lambda *= 0.3;
            if done {
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e12 {
                break;
            }
        }
    }
    let s2 = cost / (n - 2) as f64;
    let det = jtj[0][0] * jtj[1][1] - jtj[0][1] * jtj[1][0];
    let cov = if det.abs() > 1e-300 {
        [
            [s2 * jtj[1][1] / det, -s2 * jtj[0][1] / det],
            [-s2 * jtj[1][0] / det, s2 * jtj[0][0] / det],
        ]
    } else {
        [[f64::NAN; 2]; 2]
    };
    Ok(DecayFit {
        amplitude: a,
        base: p,
        base_stderr: cov[1][1].max(0.0).sqrt(),
        covariance: cov,
        log_space: false,
    })
}
