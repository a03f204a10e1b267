//! Truncated bosonic operators and state containers.
//!
//! Basis states are ordered lexicographically with mode 0 as the most
//! significant digit, so `|00…0⟩` comes first. A scheme may optionally cap the
//! total number of excitations; the operators are then the projections of the
//! full tensor-product operators onto the retained subspace.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

#[derive(Debug)]
struct SchemeInner {
    dims: Vec<usize>,
    max_excitations: Option<usize>,
    basis: Vec<Vec<usize>>,
    // full mixed-radix index -> position in `basis`
    lookup: Vec<usize>,
}

/// Per-mode truncation levels, with an optional cap on total excitations.
#[derive(Debug, Clone)]
pub struct LevelScheme(Arc<SchemeInner>);

impl PartialEq for LevelScheme {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.dims == other.0.dims
                && self.effective_cap() == other.effective_cap())
    }
}

impl Eq for LevelScheme {}

#[derive(Serialize, Deserialize)]
struct SchemeRecord {
    dims: Vec<usize>,
    #[serde(default)]
    max_excitations: Option<usize>,
}

impl Serialize for LevelScheme {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        SchemeRecord {
            dims: self.0.dims.clone(),
            max_excitations: self.0.max_excitations,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LevelScheme {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = SchemeRecord::deserialize(d)?;
        LevelScheme::with_cap(rec.dims, rec.max_excitations).map_err(serde::de::Error::custom)
    }
}

impl LevelScheme {
    pub fn new(dims: Vec<usize>) -> Result<Self> {
        Self::with_cap(dims, None)
    }

    /// `n` modes with `d` levels each.
    pub fn uniform(n: usize, d: usize) -> Result<Self> {
        Self::new(vec![d; n])
    }

    pub fn with_cap(dims: Vec<usize>, max_excitations: Option<usize>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSelection("scheme needs at least one mode".into()));
        }
        if let Some(&d) = dims.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidTruncation(d));
        }
        let full: usize = dims.iter().product();
        let mut basis = Vec::new();
        let mut lookup = vec![usize::MAX; full];
        let mut levels = vec![0usize; dims.len()];
        for (idx, slot) in lookup.iter_mut().enumerate() {
            let mut rem = idx;
            for m in (0..dims.len()).rev() {
                levels[m] = rem % dims[m];
                rem /= dims[m];
            }
            let exc: usize = levels.iter().sum();
            if max_excitations.is_none_or(|cap| exc <= cap) {
                *slot = basis.len();
                basis.push(levels.clone());
            }
        }
        Ok(LevelScheme(Arc::new(SchemeInner {
            dims,
            max_excitations,
            basis,
            lookup,
        })))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0.dims
    }

    pub fn n_modes(&self) -> usize {
        self.0.dims.len()
    }

    pub fn dim(&self) -> usize {
        self.0.basis.len()
    }

    pub fn max_excitations(&self) -> Option<usize> {
        self.0.max_excitations
    }

    /// Cap that actually removes states, if any.
    fn effective_cap(&self) -> Option<usize> {
        let top: usize = self.0.dims.iter().map(|d| d - 1).sum();
        self.0.max_excitations.filter(|&c| c < top)
    }

    pub fn is_truncated(&self) -> bool {
        self.effective_cap().is_some()
    }

    /// Occupation numbers of basis state `i`.
    pub fn levels(&self, i: usize) -> &[usize] {
        &self.0.basis[i]
    }

    pub fn index_of(&self, levels: &[usize]) -> Option<usize> {
        if levels.len() != self.n_modes() {
            return None;
        }
        let mut full = 0;
        for (l, d) in levels.iter().zip(&self.0.dims) {
            if l >= d {
                return None;
            }
            full = full * d + l;
        }
        match self.0.lookup[full] {
            usize::MAX => None,
            p => Some(p),
        }
    }
}

/// Dense operator on the space described by `scheme`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub data: CMat,
    pub scheme: LevelScheme,
}

impl OperatorMatrix {
    pub fn new(data: CMat, scheme: LevelScheme) -> Result<Self> {
        let d = scheme.dim();
        if data.nrows() != d || data.ncols() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: data.nrows().max(data.ncols()),
            });
        }
        Ok(OperatorMatrix { data, scheme })
    }

    pub fn identity(scheme: &LevelScheme) -> Self {
        let d = scheme.dim();
        OperatorMatrix {
            data: CMat::identity(d, d),
            scheme: scheme.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn dagger(&self) -> Self {
        OperatorMatrix {
            data: self.data.adjoint(),
            scheme: self.scheme.clone(),
        }
    }

    pub fn mul(&self, other: &OperatorMatrix) -> Result<Self> {
        if self.scheme != other.scheme {
            return Err(Error::SchemeMismatch);
        }
        Ok(OperatorMatrix {
            data: &self.data * &other.data,
            scheme: self.scheme.clone(),
        })
    }

    pub fn commutator(&self, other: &OperatorMatrix) -> Result<Self> {
        if self.scheme != other.scheme {
            return Err(Error::SchemeMismatch);
        }
        Ok(OperatorMatrix {
            data: &self.data * &other.data - &other.data * &self.data,
            scheme: self.scheme.clone(),
        })
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        max_abs(&(&self.data - self.data.adjoint())) <= tol
    }
}

/// Annihilation and creation operators for a single `d`-level mode.
pub fn ladder_ops(d: usize) -> Result<(OperatorMatrix, OperatorMatrix)> {
    let scheme = LevelScheme::new(vec![d])?;
    let mut a = CMat::zeros(d, d);
    for m in 0..d - 1 {
        a[(m, m + 1)] = C64::new(((m + 1) as f64).sqrt(), 0.0);
    }
    let adag = a.adjoint();
    Ok((
        OperatorMatrix {
            data: a,
            scheme: scheme.clone(),
        },
        OperatorMatrix { data: adag, scheme },
    ))
}

/// Places a single-mode operator at `mode`, identity elsewhere.
pub fn embed(op: &OperatorMatrix, mode: usize, scheme: &LevelScheme) -> Result<OperatorMatrix> {
    let data = embed_matrix(&op.data, mode, scheme)?;
    Ok(OperatorMatrix {
        data,
        scheme: scheme.clone(),
    })
}

pub fn embed_matrix(op: &CMat, mode: usize, scheme: &LevelScheme) -> Result<CMat> {
    if mode >= scheme.n_modes() {
        return Err(Error::ModeOutOfRange {
            mode,
            modes: scheme.n_modes(),
        });
    }
    let d = scheme.dims()[mode];
    if op.nrows() != d || op.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: op.nrows(),
        });
    }
    let dim = scheme.dim();
    let mut out = CMat::zeros(dim, dim);
    let mut levels = vec![0; scheme.n_modes()];
    for j in 0..dim {
        levels.copy_from_slice(scheme.levels(j));
        let src = levels[mode];
        for l in 0..d {
            let v = op[(l, src)];
            if v == ZERO {
                continue;
            }
            levels[mode] = l;
            if let Some(i) = scheme.index_of(&levels) {
                out[(i, j)] += v;
            }
        }
    }
    Ok(out)
}

/// Annihilation operator of `mode` on the full space.
pub fn annihilation(mode: usize, scheme: &LevelScheme) -> Result<CMat> {
    let d = *scheme.dims().get(mode).ok_or(Error::ModeOutOfRange {
        mode,
        modes: scheme.n_modes(),
    })?;
    let (a, _) = ladder_ops(d)?;
    embed_matrix(&a.data, mode, scheme)
}

/// a_lower a_raise† built directly on the (possibly capped) basis, so that
/// no intermediate state outside the cap is needed.
pub fn exchange_op(lower: usize, raise: usize, scheme: &LevelScheme) -> Result<CMat> {
    let modes = scheme.n_modes();
    for m in [lower, raise] {
        if m >= modes {
            return Err(Error::ModeOutOfRange { mode: m, modes });
        }
    }
    if lower == raise {
        return Err(Error::InvalidSelection("exchange needs two distinct modes".into()));
    }
    let dim = scheme.dim();
    let mut out = CMat::zeros(dim, dim);
    let mut levels = vec![0; modes];
    for j in 0..dim {
        levels.copy_from_slice(scheme.levels(j));
        let (l, r) = (levels[lower], levels[raise]);
        if l == 0 {
            continue;
        }
        levels[lower] = l - 1;
        levels[raise] = r + 1;
        if let Some(i) = scheme.index_of(&levels) {
            out[(i, j)] = C64::new((l as f64 * (r + 1) as f64).sqrt(), 0.0);
        }
    }
    Ok(out)
}

/// Number operator of `mode`, as its diagonal.
pub fn number_diag(mode: usize, scheme: &LevelScheme) -> Vec<f64> {
    (0..scheme.dim())
        .map(|i| scheme.levels(i)[mode] as f64)
        .collect()
}

pub fn number_op(mode: usize, scheme: &LevelScheme) -> Result<OperatorMatrix> {
    if mode >= scheme.n_modes() {
        return Err(Error::ModeOutOfRange {
            mode,
            modes: scheme.n_modes(),
        });
    }
    let diag = number_diag(mode, scheme);
    let data = CMat::from_diagonal(&CVec::from_iterator(
        diag.len(),
        diag.iter().map(|&x| C64::new(x, 0.0)),
    ));
    Ok(OperatorMatrix {
        data,
        scheme: scheme.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum StateData {
    Ket(CVec),
    Density(CMat),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    pub data: StateData,
    pub scheme: LevelScheme,
}

const KET_TOL: f64 = 1e-9;
const HERM_TOL: f64 = 1e-9;
const TRACE_TOL: f64 = 1e-9;
const PSD_TOL: f64 = -1e-8;

impl QuantumState {
    pub fn ket(v: CVec, scheme: LevelScheme) -> Result<Self> {
        let s = Self::ket_unchecked(v, scheme)?;
        s.validate()?;
        Ok(s)
    }

    pub fn ket_unchecked(v: CVec, scheme: LevelScheme) -> Result<Self> {
        if v.len() != scheme.dim() {
            return Err(Error::DimensionMismatch {
                expected: scheme.dim(),
                got: v.len(),
            });
        }
        Ok(QuantumState {
            data: StateData::Ket(v),
            scheme,
        })
    }

    pub fn density(m: CMat, scheme: LevelScheme) -> Result<Self> {
        let s = Self::density_unchecked(m, scheme)?;
        s.validate()?;
        Ok(s)
    }

    pub fn density_unchecked(m: CMat, scheme: LevelScheme) -> Result<Self> {
        if m.nrows() != scheme.dim() || m.ncols() != scheme.dim() {
            return Err(Error::DimensionMismatch {
                expected: scheme.dim(),
                got: m.nrows(),
            });
        }
        Ok(QuantumState {
            data: StateData::Density(m),
            scheme,
        })
    }

    /// Fock product state with the given occupation per mode.
    pub fn basis(levels: &[usize], scheme: &LevelScheme) -> Result<Self> {
        let i = scheme.index_of(levels).ok_or_else(|| {
            Error::InvalidState(format!("levels {levels:?} not in the truncated space"))
        })?;
        let mut v = CVec::zeros(scheme.dim());
        v[i] = ONE;
        Ok(QuantumState {
            data: StateData::Ket(v),
            scheme: scheme.clone(),
        })
    }

    pub fn dim(&self) -> usize {
        self.scheme.dim()
    }

    pub fn is_ket(&self) -> bool {
        matches!(self.data, StateData::Ket(_))
    }

    pub fn as_ket(&self) -> Option<&CVec> {
        match &self.data {
            StateData::Ket(v) => Some(v),
            StateData::Density(_) => None,
        }
    }

    pub fn density_matrix(&self) -> CMat {
        match &self.data {
            StateData::Ket(v) => v * v.adjoint(),
            StateData::Density(m) => m.clone(),
        }
    }

    pub fn to_density(&self) -> QuantumState {
        QuantumState {
            data: StateData::Density(self.density_matrix()),
            scheme: self.scheme.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            StateData::Ket(v) => {
                let n = v.norm();
                if (n - 1.0).abs() > KET_TOL {
                    return Err(Error::InvalidState(format!("ket norm {n}")));
                }
            }
            StateData::Density(m) => check_density(m)?,
        }
        Ok(())
    }
}

pub fn check_density(m: &CMat) -> Result<()> {
    let herm = max_abs(&(m - m.adjoint()));
    if herm > HERM_TOL {
        return Err(Error::InvalidState(format!("not Hermitian ({herm:.2e})")));
    }
    let tr = m.trace();
    if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
        return Err(Error::InvalidState(format!("trace {tr}")));
    }
    let min = crate::linalg::hermitian_eigen(m).0.iter().cloned().fold(f64::INFINITY, f64::min);
    if min < PSD_TOL {
        return Err(Error::InvalidState(format!("negative eigenvalue {min:.2e}")));
    }
    Ok(())
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// ⟨ψ|op|ψ⟩ for kets, Tr(ρ op) for densities.
pub fn expectation(state: &QuantumState, op: &OperatorMatrix) -> Result<C64> {
    if state.scheme != op.scheme {
        return Err(Error::SchemeMismatch);
    }
    Ok(match &state.data {
        StateData::Ket(v) => v.dotc(&(&op.data * v)),
        StateData::Density(m) => (m * &op.data).trace(),
    })
}

/// Reduced density matrix over `keep` (in ascending mode order).
pub fn partial_trace(state: &QuantumState, keep: &[usize]) -> Result<QuantumState> {
    let scheme = &state.scheme;
    let n = scheme.n_modes();
    if keep.is_empty() {
        return Err(Error::InvalidSelection("keep set is empty".into()));
    }
    let mut keep = keep.to_vec();
    keep.sort_unstable();
    keep.dedup();
    if let Some(&m) = keep.iter().find(|&&m| m >= n) {
        return Err(Error::ModeOutOfRange { mode: m, modes: n });
    }
    let kept_dims: Vec<usize> = keep.iter().map(|&m| scheme.dims()[m]).collect();
    let out_scheme = LevelScheme::new(kept_dims.clone())?;
    let traced: Vec<usize> = (0..n).filter(|m| !keep.contains(m)).collect();

    // split every basis state into (kept index, traced key)
    let split: Vec<(usize, Vec<usize>)> = (0..scheme.dim())
        .map(|i| {
            let lv = scheme.levels(i);
            let mut k = 0;
            for (&m, &d) in keep.iter().zip(&kept_dims) {
                k = k * d + lv[m];
            }
            (k, traced.iter().map(|&m| lv[m]).collect())
        })
        .collect();
    let mut groups: std::collections::BTreeMap<&[usize], Vec<usize>> = Default::default();
    for (i, (_, key)) in split.iter().enumerate() {
        groups.entry(key.as_slice()).or_default().push(i);
    }

    let kd = out_scheme.dim();
    let mut out = CMat::zeros(kd, kd);
    match &state.data {
        StateData::Ket(v) => {
            for members in groups.values() {
                for &i in members {
                    for &j in members {
                        out[(split[i].0, split[j].0)] += v[i] * v[j].conj();
                    }
                }
            }
        }
        StateData::Density(m) => {
            for members in groups.values() {
                for &i in members {
                    for &j in members {
                        out[(split[i].0, split[j].0)] += m[(i, j)];
                    }
                }
            }
        }
    }
    Ok(QuantumState {
        data: StateData::Density(out),
        scheme: out_scheme,
    })
}

/// Restricts a state to the two lowest levels of every mode and renormalizes.
/// Returns the projected density and the discarded (leaked) probability.
pub fn project_to_qubits(state: &QuantumState) -> Result<(QuantumState, f64)> {
    let scheme = &state.scheme;
    let n = scheme.n_modes();
    let qs = LevelScheme::uniform(n, 2)?;
    let rho = state.density_matrix();
    let idx: Vec<Option<usize>> = (0..qs.dim())
        .map(|q| scheme.index_of(qs.levels(q)))
        .collect();
    let mut out = CMat::zeros(qs.dim(), qs.dim());
    for (a, ia) in idx.iter().enumerate() {
        for (b, ib) in idx.iter().enumerate() {
            if let (Some(i), Some(j)) = (ia, ib) {
                out[(a, b)] = rho[(*i, *j)];
            }
        }
    }
    let p = out.trace().re;
    let total = rho.trace().re;
    if p <= 0.0 {
        return Err(Error::InvalidState("no weight in the qubit subspace".into()));
    }
    out /= C64::new(p, 0.0);
    Ok((
        QuantumState {
            data: StateData::Density(out),
            scheme: qs,
        },
        (total - p).max(0.0),
    ))
}

/// Sparse operator stored as (row, col, value) triplets.
#[derive(Debug, Clone, Default)]
pub struct SparseOp {
    pub dim: usize,
    pub entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    pub fn from_dense(m: &CMat) -> Self {
        let mut entries = Vec::new();
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v.norm() > 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        SparseOp {
            dim: m.nrows(),
            entries,
        }
    }

    pub fn adjoint(&self) -> Self {
        SparseOp {
            dim: self.dim,
            entries: self.entries.iter().map(|&(i, j, v)| (j, i, v.conj())).collect(),
        }
    }

    /// y += c · A x
    pub fn mul_vec_add(&self, c: C64, x: &[C64], y: &mut [C64]) {
        for &(i, j, v) in &self.entries {
            y[i] += c * v * x[j];
        }
    }

    /// out += c · A ρ (row-major dim × dim buffers)
    pub fn left_mul_add(&self, c: C64, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for &(i, a, v) in &self.entries {
            let cv = c * v;
            let src = &rho[a * d..(a + 1) * d];
            let dst = &mut out[i * d..(i + 1) * d];
            for (o, s) in dst.iter_mut().zip(src) {
                *o += cv * s;
            }
        }
    }

    /// out += c · ρ A (row-major)
    pub fn right_mul_add(&self, c: C64, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for &(a, k, v) in &self.entries {
            let cv = c * v;
            for r in 0..d {
                out[r * d + k] += cv * rho[r * d + a];
            }
        }
    }

    /// out += A ρ A† (row-major)
    pub fn sandwich_add(&self, rho: &[C64], out: &mut [C64]) {
        let d = self.dim;
        for &(i, a, v1) in &self.entries {
            for &(k, b, v2) in &self.entries {
                out[i * d + k] += v1 * rho[a * d + b] * v2.conj();
            }
        }
    }
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

pub fn kron_all(ms: &[CMat]) -> CMat {
    ms.iter()
        .skip(1)
        .fold(ms[0].clone(), |acc, m| acc.kronecker(m))
}

pub fn pauli_x() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn pauli_y() -> CMat {
    CMat::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn pauli_z() -> CMat {
    CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Row-major flattening used by the integrator buffers.
pub fn to_row_major(m: &CMat) -> Vec<C64> {
    let d = m.nrows();
    let mut v = vec![ZERO; d * m.ncols()];
    for i in 0..d {
        for j in 0..m.ncols() {
            v[i * m.ncols() + j] = m[(i, j)];
        }
    }
    v
}

pub fn from_row_major(v: &[C64], d: usize) -> CMat {
    CMat::from_row_slice(d, d, v)
}
