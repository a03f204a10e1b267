//! Pauli-basis state tomography: simulated counts, diluted RρR maximum-likelihood
//! reconstruction, fidelities and virtual-Z alignment.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{hermitian_eigen, psd_sqrt, rank};
use crate::noise::derive_seed;
use crate::optim::maximize_angles;
use crate::qops::{check_density, kron_all, project_to_qubits, CMat, CVec, LevelScheme, QuantumState, StateData, C64};

/// Leaked probability above which simulated data carry a warning.
pub const LEAKAGE_WARN: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Pauli {
    X,
    Y,
    Z,
}

impl fmt::Display for Pauli {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Pauli::X => "X",
            Pauli::Y => "Y",
            Pauli::Z => "Z",
        };
        f.write_str(c)
    }
}

impl Pauli {
    /// Pre-measurement rotation mapping the +1 eigenstate to |0⟩:
    /// R_y(−π/2) for X, R_x(π/2) for Y, identity for Z.
    pub fn rotation(self) -> CMat {
        let h = C64::new(FRAC_1_SQRT_2, 0.0);
        let ih = C64::new(0.0, FRAC_1_SQRT_2);
        match self {
            Pauli::X => CMat::from_row_slice(2, 2, &[h, h, -h, h]),
            Pauli::Y => CMat::from_row_slice(2, 2, &[h, -ih, -ih, h]),
            Pauli::Z => CMat::identity(2, 2),
        }
    }
}

/// All 3ⁿ local Pauli settings, qubit 0 slowest.
pub fn full_settings(n: usize) -> Vec<Vec<Pauli>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out
            .into_iter()
            .flat_map(|s: Vec<Pauli>| {
                [Pauli::X, Pauli::Y, Pauli::Z].into_iter().map(move |p| {
                    let mut t = s.clone();
                    t.push(p);
                    t
                })
            })
            .collect();
    }
    out
}

fn setting_unitary(setting: &[Pauli]) -> CMat {
    kron_all(&setting.iter().map(|p| p.rotation()).collect::<Vec<_>>())
}

/// Counts per setting; outcome index is the measured bitstring with qubit 0
/// as the most significant bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyDataset {
    pub n_qubits: usize,
    pub settings: Vec<Vec<Pauli>>,
    pub shots: u64,
    pub counts: Vec<Vec<u64>>,
    /// probability outside the qubit subspace before projection
    pub leakage: f64,
    pub warnings: Vec<String>,
}

impl TomographyDataset {
    pub fn validate(&self) -> Result<()> {
        let d = 1usize << self.n_qubits;
        if self.settings.len() != self.counts.len() {
            return Err(Error::InvalidArgument("one count histogram per setting required".into()));
        }
        for (i, (s, c)) in self.settings.iter().zip(&self.counts).enumerate() {
            if s.len() != self.n_qubits || c.len() != d {
                return Err(Error::InvalidArgument(format!("setting {i} has the wrong shape")));
            }
            if c.iter().sum::<u64>() != self.shots {
                return Err(Error::InvalidArgument(format!("setting {i}: counts do not sum to shots")));
            }
            if self.settings[..i].contains(s) {
                return Err(Error::InvalidArgument(format!("setting {i} is repeated")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dataset serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let d: TomographyDataset = serde_json::from_str(s).map_err(|e| Error::InvalidArgument(e.to_string()))?;
        d.validate()?;
        Ok(d)
    }

    pub fn frequencies(&self) -> Vec<Vec<f64>> {
        self.counts
            .iter()
            .map(|c| c.iter().map(|&k| k as f64 / self.shots as f64).collect())
            .collect()
    }
}

/// Born probabilities of every outcome of every setting.
pub fn ideal_probabilities(rho: &CMat, settings: &[Vec<Pauli>]) -> Vec<Vec<f64>> {
    settings
        .iter()
        .map(|s| {
            let u = setting_unitary(s);
            let r = &u * rho * u.adjoint();
            (0..r.nrows()).map(|i| r[(i, i)].re.max(0.0)).collect()
        })
        .collect()
}

/// Samples `shots` outcomes per setting. Higher levels are projected out and
/// the remainder renormalized; the leaked probability is recorded.
pub fn simulate_measurements(state: &QuantumState, settings: &[Vec<Pauli>], shots: u64, seed: u64) -> Result<TomographyDataset> {
    let (q, leakage) = project_to_qubits(state)?;
    let n = q.scheme.n_modes();
    if settings.iter().any(|s| s.len() != n) {
        return Err(Error::InvalidArgument(format!("settings must name {n} qubits")));
    }
    let rho = q.density_matrix();
    let probs = ideal_probabilities(&rho, settings);
    let counts: Vec<Vec<u64>> = probs
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
            let total: f64 = p.iter().sum();
            let mut left = shots;
            let mut mass = 1.0;
            let mut out = vec![0u64; p.len()];
            for (k, &pk) in p.iter().enumerate() {
                if left == 0 {
                    break;
                }
                let pk = pk / total;
                if k + 1 == p.len() || mass <= pk {
                    out[k] = left;
                    break;
                }
                let c = Binomial::new(left, (pk / mass).clamp(0.0, 1.0)).unwrap().sample(&mut rng);
                out[k] = c;
                left -= c;
                mass -= pk;
            }
            out
        })
        .collect();
    let mut warnings = Vec::new();
    if leakage > LEAKAGE_WARN {
        warnings.push(format!("leakage {leakage:.4} exceeds {LEAKAGE_WARN}"));
    }
    Ok(TomographyDataset {
        n_qubits: n,
        settings: settings.to_vec(),
        shots,
        counts,
        leakage,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct ReconstructionResult {
    pub rho: QuantumState,
    pub log_likelihood: f64,
    /// log-likelihood after every accepted iteration (starts with I/d)
    pub history: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

pub fn mle_reconstruct(data: &TomographyDataset, max_iter: usize, tol: f64) -> Result<ReconstructionResult> {
    data.validate()?;
    mle_from_frequencies(data.n_qubits, &data.settings, &data.frequencies(), data.shots as f64, max_iter, tol)
}

/// Diluted RρR iteration on per-setting outcome frequencies. Each step uses
/// (I + εR)ρ(I + εR), starting from the undiluted map and halving ε whenever
/// the likelihood would drop, so accepted iterates never lose likelihood.
pub fn mle_from_frequencies(
    n_qubits: usize,
    settings: &[Vec<Pauli>],
    freqs: &[Vec<f64>],
    weight: f64,
    max_iter: usize,
    tol: f64,
) -> Result<ReconstructionResult> {
    let d = 1usize << n_qubits;
    // w_{s,o} = U_s† |o⟩, so p_{s,o} = w† ρ w
    let vecs: Vec<Vec<CVec>> = settings
        .iter()
        .map(|s| {
            let ud = setting_unitary(s).adjoint();
            (0..d).map(|o| ud.column(o).into_owned()).collect()
        })
        .collect();
    let mut frame = CMat::zeros(settings.len() * d, d * d);
    for (s, ws) in vecs.iter().enumerate() {
        for (o, w) in ws.iter().enumerate() {
            for i in 0..d {
                for j in 0..d {
                    frame[(s * d + o, i * d + j)] = w[i] * w[j].conj();
                }
            }
        }
    }
    let r = rank(&frame, 1e-9);
    if r < d * d {
        return Err(Error::NotInformationallyComplete { rank: r, needed: d * d });
    }
    let n_set = settings.len() as f64;

    let probs = |rho: &CMat| -> Vec<Vec<f64>> {
        vecs.iter()
            .map(|ws| ws.iter().map(|w| w.dotc(&(rho * w)).re.max(1e-300)).collect())
            .collect()
    };
    let loglik = |p: &[Vec<f64>]| -> f64 {
        let mut l = 0.0;
        for (ps, fs) in p.iter().zip(freqs) {
            for (&pk, &fk) in ps.iter().zip(fs) {
                if fk > 0.0 {
                    l += weight * fk * pk.ln();
                }
            }
        }
        l
    };

    let mut rho = CMat::identity(d, d) / C64::new(d as f64, 0.0);
    let mut p = probs(&rho);
    let mut l = loglik(&p);
    let mut history = vec![l];
    let mut eps = f64::INFINITY;
    let mut converged = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let mut rop = CMat::zeros(d, d);
        for ((ws, ps), fs) in vecs.iter().zip(&p).zip(freqs) {
            for ((w, &pk), &fk) in ws.iter().zip(ps).zip(fs) {
                if fk > 0.0 {
                    rop += w * w.adjoint() * C64::new(fk / (pk * n_set), 0.0);
                }
            }
        }
        let mut accepted = false;
        loop {
            let step = if eps.is_infinite() {
                rop.clone()
            } else {
                CMat::identity(d, d) + &rop * C64::new(eps, 0.0)
            };
            let mut cand = &step * &rho * step.adjoint();
            cand = (&cand + cand.adjoint()) * C64::new(0.5, 0.0);
            let tr = cand.trace().re;
            cand /= C64::new(tr, 0.0);
            let pc = probs(&cand);
            let lc = loglik(&pc);
            if lc >= l {
                let gain = lc - l;
                rho = cand;
                p = pc;
                l = lc;
                history.push(l);
                accepted = true;
                if gain < tol {
                    converged = true;
                }
                break;
            }
            eps = if eps.is_infinite() { 1.0 } else { 0.5 * eps };
            if eps < 1e-12 {
                break;
            }
        }
        if !accepted {
            converged = true;
            break;
        }
        if converged {
            break;
        }
    }
    let scheme = LevelScheme::uniform(n_qubits, 2)?;
    Ok(ReconstructionResult {
        rho: QuantumState {
            data: StateData::Density(rho),
            scheme,
        },
        log_likelihood: l,
        history,
        iterations: it,
        converged,
    })
}

/// Uhlmann amplitude fidelity Tr√(√ρ σ √ρ) of two density matrices.
pub fn fidelity_matrices(rho: &CMat, sigma: &CMat) -> Result<f64> {
    if rho.shape() != sigma.shape() {
        return Err(Error::DimensionMismatch {
            expected: rho.nrows(),
            got: sigma.nrows(),
        });
    }
    check_density(rho)?;
    check_density(sigma)?;
    let s = psd_sqrt(rho);
    let m = &s * sigma * &s;
    let m = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let f: f64 = hermitian_eigen(&m).0.iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok(f.clamp(0.0, 1.0))
}

/// Amplitude convention: F = Tr√(√ρ σ √ρ).
pub fn state_fidelity(rho: &QuantumState, sigma: &QuantumState) -> Result<f64> {
    if rho.scheme != sigma.scheme {
        return Err(Error::SchemeMismatch);
    }
    if let (Some(a), Some(b)) = (rho.as_ket(), sigma.as_ket()) {
        return Ok(a.dotc(b).norm().min(1.0));
    }
    if let Some(b) = sigma.as_ket() {
        check_density(&rho.density_matrix())?;
        return Ok(pure_fidelity(&rho.density_matrix(), b));
    }
    if let Some(a) = rho.as_ket() {
        check_density(&sigma.density_matrix())?;
        return Ok(pure_fidelity(&sigma.density_matrix(), a));
    }
    fidelity_matrices(&rho.density_matrix(), &sigma.density_matrix())
}

/// Squared convention, (Tr√(√ρ σ √ρ))².
pub fn state_fidelity_squared(rho: &QuantumState, sigma: &QuantumState) -> Result<f64> {
    state_fidelity(rho, sigma).map(|f| f * f)
}

/// √⟨ψ|ρ|ψ⟩.
pub fn pure_fidelity(rho: &CMat, psi: &CVec) -> f64 {
    psi.dotc(&(rho * psi)).re.clamp(0.0, 1.0).sqrt()
}

fn z_phases(scheme: &LevelScheme, angles: &[f64]) -> Vec<C64> {
    (0..scheme.dim())
        .map(|i| {
            let ph: f64 = scheme.levels(i).iter().zip(angles).map(|(&l, &a)| l as f64 * a).sum();
            C64::from_polar(1.0, ph)
        })
        .collect()
}

/// Applies Z(θ) = exp(i Σ_j θ_j n_j).
pub fn apply_virtual_z(state: &QuantumState, angles: &[f64]) -> Result<QuantumState> {
    if angles.len() != state.scheme.n_modes() {
        return Err(Error::DimensionMismatch {
            expected: state.scheme.n_modes(),
            got: angles.len(),
        });
    }
    let ph = z_phases(&state.scheme, angles);
    let data = match &state.data {
        StateData::Ket(v) => StateData::Ket(CVec::from_fn(v.len(), |i, _| ph[i] * v[i])),
        StateData::Density(m) => StateData::Density(CMat::from_fn(m.nrows(), m.ncols(), |i, j| ph[i] * m[(i, j)] * ph[j].conj())),
    };
    Ok(QuantumState {
        data,
        scheme: state.scheme.clone(),
    })
}

/// Amplitude fidelity of Z(θ) ρ Z(θ)† against the pure target `psi`.
pub fn z_rotated_fidelity(state: &QuantumState, psi: &CVec, angles: &[f64]) -> Result<f64> {
    let rotated = apply_virtual_z(state, angles)?;
    Ok(match &rotated.data {
        StateData::Ket(v) => psi.dotc(v).norm().min(1.0),
        StateData::Density(m) => pure_fidelity(m, psi),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AngleSearch {
    /// coarse grid points per angle
    pub grid: usize,
    pub tol: f64,
}

impl Default for AngleSearch {
    fn default() -> Self {
        AngleSearch { grid: 16, tol: 1e-13 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AngleResult {
    pub fidelity: f64,
    pub angles: Vec<f64>,
    /// the objective did not depend on the angles
    pub flat: bool,
}

/// Virtual-Z angles maximizing the amplitude fidelity against a pure target.
pub fn optimize_angles(state: &QuantumState, psi: &CVec, search: &AngleSearch) -> Result<AngleResult> {
    let n = state.scheme.n_modes();
    if psi.len() != state.dim() {
        return Err(Error::DimensionMismatch {
            expected: state.dim(),
            got: psi.len(),
        });
    }
    // ⟨ψ|ZρZ†|ψ⟩ = Σ_ab c_ab e^{i(φ_b − φ_a)}, with c_ab = ψ_a* ρ_ab ψ_b
    let rho = state.density_matrix();
    let support: Vec<usize> = (0..psi.len()).filter(|&i| psi[i].norm() > 0.0).collect();
    let mut terms: Vec<(C64, Vec<f64>)> = Vec::new();
    for &a in &support {
        for &b in &support {
            let c = psi[a].conj() * rho[(a, b)] * psi[b];
            if c.norm() > 0.0 {
                let la = state.scheme.levels(a);
                let lb = state.scheme.levels(b);
                let dl: Vec<f64> = la.iter().zip(lb).map(|(&x, &y)| x as f64 - y as f64).collect();
                terms.push((c, dl));
            }
        }
    }
    let score = |th: &[f64]| -> f64 {
        terms
            .iter()
            .map(|(c, dl)| {
                let ph: f64 = dl.iter().zip(th).map(|(d, t)| d * t).sum();
                (c * C64::from_polar(1.0, ph)).re
            })
            .sum::<f64>()
            .clamp(0.0, 1.0)
    };
    let flat = terms.iter().all(|(c, dl)| dl.iter().all(|&x| x == 0.0) || c.norm() < 1e-14);
    if flat {
        return Ok(AngleResult {
            fidelity: score(&vec![0.0; n]).sqrt(),
            angles: vec![0.0; n],
            flat: true,
        });
    }
    let (angles, best) = maximize_angles(&score, n, search.grid, search.tol);
    Ok(AngleResult {
        fidelity: best.max(0.0).sqrt(),
        angles,
        flat: false,
    })
}

/// Aligns ρ to `target` with per-qubit virtual Z rotations; returns the
/// rotated state and the angles.
pub fn virtual_z_correction(rho: &QuantumState, target: &QuantumState) -> Result<(QuantumState, Vec<f64>)> {
    if rho.scheme != target.scheme {
        return Err(Error::SchemeMismatch);
    }
    let angles = match target.as_ket() {
        Some(psi) => optimize_angles(rho, psi, &AngleSearch::default())?.angles,
        None => {
            let sigma = target.density_matrix();
            let score = |th: &[f64]| {
                apply_virtual_z(rho, th)
                    .and_then(|r| fidelity_matrices(&r.density_matrix(), &sigma))
                    .unwrap_or(0.0)
            };
            maximize_angles(&score, rho.scheme.n_modes(), 12, 1e-12).0
        }
    };
    Ok((apply_virtual_z(rho, &angles)?.to_density(), angles))
}

fn basis_label(i: usize, n: usize) -> String {
    let bits: String = (0..n).map(|q| if (i >> (n - 1 - q)) & 1 == 1 { '1' } else { '0' }).collect();
    format!("|{bits}>")
}

/// Real and imaginary parts as two CSV tables, basis states in lexicographic
/// order (|00…0⟩ first).
pub fn density_csv(rho: &CMat, n_qubits: usize) -> (String, String) {
    let d = rho.nrows();
    let labels: Vec<String> = (0..d).map(|i| basis_label(i, n_qubits)).collect();
    let table = |part: &dyn Fn(C64) -> f64| {
        let mut s = String::from("basis");
        for l in &labels {
            s.push(',');
            s.push_str(l);
        }
        s.push('\n');
        for (i, l) in labels.iter().enumerate() {
            s.push_str(l);
            for j in 0..d {
                s.push_str(&format!(",{:.10}", part(rho[(i, j)])));
            }
            s.push('\n');
        }
        s
    };
    (table(&|z| z.re), table(&|z| z.im))
}

/// (|0…0⟩ + |1…1⟩)/√2 on `n` qubits.
pub fn ghz_state(n: usize) -> Result<QuantumState> {
    let scheme = LevelScheme::uniform(n, 2)?;
    let mut v = CVec::zeros(scheme.dim());
    v[0] = C64::new(FRAC_1_SQRT_2, 0.0);
    v[scheme.dim() - 1] = C64::new(FRAC_1_SQRT_2, 0.0);
    QuantumState::ket(v, scheme)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qops::ZERO;

    fn expval(data: &TomographyDataset, setting: &[Pauli]) -> f64 {
        let i = data.settings.iter().position(|s| s == setting).unwrap();
        let n = data.n_qubits;
        data.counts[i]
            .iter()
            .enumerate()
            .map(|(o, &c)| {
                let parity = (0..n).map(|q| (o >> q) & 1).sum::<usize>() % 2;
                let sign = if parity == 0 { 1.0 } else { -1.0 };
                sign * c as f64 / data.shots as f64
            })
            .sum()
    }

    #[test]
    fn ground_state_z_basis() {
        let s = QuantumState::basis(&[0], &LevelScheme::uniform(1, 2).unwrap()).unwrap();
        let d = simulate_measurements(&s, &[vec![Pauli::Z]], 1000, 1).unwrap();
        assert_eq!(d.counts[0], vec![1000, 0]);
    }

    #[test]
    fn plus_state_statistics() {
        let scheme = LevelScheme::uniform(1, 2).unwrap();
        let v = CVec::from_vec(vec![C64::new(FRAC_1_SQRT_2, 0.0); 2]);
        let s = QuantumState::ket(v, scheme).unwrap();
        let d = simulate_measurements(&s, &[vec![Pauli::X], vec![Pauli::Z]], 10_000, 5).unwrap();
        assert_eq!(d.counts[0], vec![10_000, 0]);
        assert!((d.counts[1][0] as f64 - 5000.0).abs() < 4.0 * 50.0);
    }

    #[test]
    fn y_eigenstate_maps_to_zero() {
        let scheme = LevelScheme::uniform(1, 2).unwrap();
        let v = CVec::from_vec(vec![C64::new(FRAC_1_SQRT_2, 0.0), C64::new(0.0, FRAC_1_SQRT_2)]);
        let s = QuantumState::ket(v, scheme).unwrap();
        let d = simulate_measurements(&s, &[vec![Pauli::Y]], 100, 0).unwrap();
        assert_eq!(d.counts[0], vec![100, 0]);
    }

    #[test]
    fn bell_correlators() {
        let bell = ghz_state(2).unwrap();
        let d = simulate_measurements(&bell, &full_settings(2), 10_000, 11).unwrap();
        let sigma = 4.0 / 100.0;
        assert!((expval(&d, &[Pauli::X, Pauli::X]) - 1.0).abs() < 1e-12);
        assert!((expval(&d, &[Pauli::Z, Pauli::Z]) - 1.0).abs() < 1e-12);
        assert!(expval(&d, &[Pauli::X, Pauli::Z]).abs() < sigma);
    }

    #[test]
    fn exact_probabilities_reconstruct_random_state() {
        let scheme = LevelScheme::uniform(2, 2).unwrap();
        let raw = [(0.3, -0.2), (0.5, 0.4), (-0.1, 0.6), (0.2, 0.1)];
        let mut v = CVec::from_iterator(4, raw.iter().map(|&(a, b)| C64::new(a, b)));
        v /= C64::new(v.norm(), 0.0);
        let s = QuantumState::ket(v.clone(), scheme).unwrap();
        let settings = full_settings(2);
        let p = ideal_probabilities(&s.density_matrix(), &settings);
        let r = mle_from_frequencies(2, &settings, &p, 1e4, 20_000, 1e-13).unwrap();
        let f = pure_fidelity(&r.rho.density_matrix(), &v);
        assert!(f >= 0.9999, "{f}");
        assert!(r.history.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn mixed_data_gives_identity() {
        let scheme = LevelScheme::uniform(2, 2).unwrap();
        let mixed = QuantumState::density(CMat::identity(4, 4) / C64::new(4.0, 0.0), scheme).unwrap();
        let d = simulate_measurements(&mixed, &full_settings(2), 10_000, 2).unwrap();
        let r = mle_reconstruct(&d, 2000, 1e-10).unwrap();
        let m = r.rho.density_matrix();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j { 0.25 } else { 0.0 };
                assert!((m[(i, j)] - C64::new(want, 0.0)).norm() < 2e-2);
            }
        }
    }

    #[test]
    fn under_determined_settings_rejected() {
        let bell = ghz_state(2).unwrap();
        let d = simulate_measurements(&bell, &[vec![Pauli::Z, Pauli::Z]], 100, 0).unwrap();
        assert!(matches!(mle_reconstruct(&d, 10, 1e-9), Err(Error::NotInformationallyComplete { .. })));
    }

    #[test]
    fn dataset_json_round_trip() {
        let bell = ghz_state(2).unwrap();
        let d = simulate_measurements(&bell, &full_settings(2), 50, 0).unwrap();
        let back = TomographyDataset::from_json(&d.to_json()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn fidelity_conventions() {
        let bell = ghz_state(2).unwrap();
        assert!((state_fidelity(&bell.to_density(), &bell.to_density()).unwrap() - 1.0).abs() < 1e-7);
        let scheme = LevelScheme::uniform(1, 2).unwrap();
        let z0 = QuantumState::basis(&[0], &scheme).unwrap();
        let z1 = QuantumState::basis(&[1], &scheme).unwrap();
        assert!(state_fidelity(&z0.to_density(), &z1.to_density()).unwrap() < 1e-7);
        // pure σ reduces to √⟨ψ|ρ|ψ⟩
        let rho = CMat::from_row_slice(2, 2, &[C64::new(0.7, 0.0), C64::new(0.1, 0.2), C64::new(0.1, -0.2), C64::new(0.3, 0.0)]);
        let psi = CVec::from_vec(vec![C64::new(0.6, 0.0), C64::new(0.0, 0.8)]);
        let f = fidelity_matrices(&rho, &(&psi * psi.adjoint())).unwrap();
        assert!((f - pure_fidelity(&rho, &psi)).abs() < 1e-7);
        let sq = state_fidelity_squared(&z0.to_density(), &z0.to_density()).unwrap();
        assert!((sq - 1.0).abs() < 1e-7);
    }

    #[test]
    fn virtual_z_recovers_phase() {
        let scheme = LevelScheme::uniform(2, 2).unwrap();
        let h = FRAC_1_SQRT_2;
        let bell = ghz_state(2).unwrap();
        let shifted = CVec::from_vec(vec![C64::new(h, 0.0), ZERO, ZERO, C64::from_polar(h, 1.1)]);
        let s = QuantumState::ket(shifted, scheme).unwrap().to_density();
        let (aligned, _) = virtual_z_correction(&s, &bell).unwrap();
        let f = pure_fidelity(&aligned.density_matrix(), bell.as_ket().unwrap());
        assert!(f >= 0.9999);
        for i in 0..4 {
            assert!((aligned.density_matrix()[(i, i)] - s.density_matrix()[(i, i)]).norm() < 1e-12);
        }
    }

    #[test]
    fn aligned_state_keeps_zero_angles() {
        let bell = ghz_state(2).unwrap();
        let r = optimize_angles(&bell, bell.as_ket().unwrap(), &AngleSearch::default()).unwrap();
        assert!((r.fidelity - 1.0).abs() < 1e-6);
        let back = apply_virtual_z(&bell, &r.angles).unwrap();
        assert!((state_fidelity(&back, &bell).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn diagonal_state_is_flat() {
        let scheme = LevelScheme::uniform(2, 2).unwrap();
        let rho = CMat::from_diagonal(&CVec::from_vec(vec![C64::new(0.5, 0.0), ZERO, ZERO, C64::new(0.5, 0.0)]));
        let s = QuantumState::density(rho, scheme).unwrap();
        let bell = ghz_state(2).unwrap();
        let r = optimize_angles(&s, bell.as_ket().unwrap(), &AngleSearch::default()).unwrap();
        assert!(r.flat);
        assert!((r.fidelity - FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn csv_ordering() {
        let bell = ghz_state(2).unwrap();
        let (re, im) = density_csv(&bell.density_matrix(), 2);
        let first = re.lines().next().unwrap();
        assert_eq!(first, "basis,|00>,|01>,|10>,|11>");
        assert!(re.lines().nth(1).unwrap().starts_with("|00>,0.5000000000"));
        assert_eq!(im.lines().count(), 5);
    }
}
