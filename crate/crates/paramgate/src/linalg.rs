//! Small dense linear-algebra helpers on complex matrices.

use nalgebra::SymmetricEigen;

use crate::qops::{CMat, C64};

/// Eigenvalues (ascending) and eigenvectors (columns) of a Hermitian matrix.
pub fn hermitian_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    // symmetrize to suppress round-off asymmetry
    let h = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(m.nrows(), m.ncols(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// Applies `f` to the spectrum of a Hermitian matrix.
pub fn hermitian_fn(m: &CMat, f: impl Fn(f64) -> C64) -> CMat {
    let (vals, vecs) = hermitian_eigen(m);
    let mut scaled = vecs.clone();
    for (c, &v) in vals.iter().enumerate() {
        let fv = f(v);
        for r in 0..scaled.nrows() {
            scaled[(r, c)] *= fv;
        }
    }
    scaled * vecs.adjoint()
}

/// Principal square root of a positive semidefinite matrix (negative round-off clipped).
pub fn psd_sqrt(m: &CMat) -> CMat {
    hermitian_fn(m, |x| C64::new(x.max(0.0).sqrt(), 0.0))
}

/// exp(-i H t) for Hermitian `h`.
pub fn unitary_from_hamiltonian(h: &CMat, t: f64) -> CMat {
    hermitian_fn(h, |e| C64::from_polar(1.0, -e * t))
}

pub fn rank(m: &CMat, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > tol * top.max(1e-300)).count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qops::{max_abs, pauli_x};

    #[test]
    fn sqrt_squares_back() {
        let a = CMat::from_fn(3, 3, |i, j| C64::new((i * j) as f64 + 1.0, i as f64 - j as f64));
        let p = &a * a.adjoint();
        let s = psd_sqrt(&p);
        assert!(max_abs(&(&s * &s - &p)) < 1e-10);
    }

    #[test]
    fn pauli_rotation() {
        let u = unitary_from_hamiltonian(&pauli_x(), std::f64::consts::FRAC_PI_2);
        // exp(-i π/2 X) = -i X
        assert!(max_abs(&(u - pauli_x() * C64::new(0.0, -1.0))) < 1e-12);
    }
}
