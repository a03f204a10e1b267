//! Bessel functions of the first kind, orders 0 and 1.

use std::f64::consts::PI;

/// Argument of the first maximum of J₁.
pub const J1_ARGMAX: f64 = 1.841_183_781_340_659_3;

const SERIES_LIMIT: f64 = 12.5;

fn series(n: u32, x: f64) -> f64 {
    let h = 0.5 * x;
    let mut term = h.powi(n as i32);
    for k in 1..=n {
        term /= k as f64;
    }
    let mut sum = term;
    let q = -h * h;
    for k in 1..200 {
        term *= q / (k as f64 * (k + n) as f64);
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

// Hankel asymptotic expansion, summed until the terms stop shrinking.
fn asymptotic(n: u32, x: f64) -> f64 {
    let mu = 4.0 * (n * n) as f64;
    let z = 8.0 * x;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut term = 1.0;
    let mut last = f64::INFINITY;
    for k in 1..60 {
        let kk = (2 * k - 1) as f64;
        term *= (mu - kk * kk) / (k as f64 * z);
        if term.abs() >= last {
            break;
        }
        last = term.abs();
        match k % 4 {
            1 => q += term,
            2 => p -= term,
            3 => q -= term,
            _ => p += term,
        }
    }
    let chi = x - (0.5 * n as f64 + 0.25) * PI;
    (2.0 / (PI * x)).sqrt() * (p * chi.cos() - q * chi.sin())
}

pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax < SERIES_LIMIT {
        series(0, ax)
    } else {
        asymptotic(0, ax)
    }
}

pub fn bessel_j1(x: f64) -> f64 {
    let ax = x.abs();
    let v = if ax < SERIES_LIMIT {
        series(1, ax)
    } else {
        asymptotic(1, ax)
    };
    if x < 0.0 {
        -v
    } else {
        v
    }
}

/// Inverse of J₁ on its rising branch [0, J1_ARGMAX]. `None` above the maximum.
pub fn bessel_j1_inverse(y: f64) -> Option<f64> {
    let ymax = bessel_j1(J1_ARGMAX);
    if !(0.0..=ymax * (1.0 + 1e-14)).contains(&y) {
        return None;
    }
    if y == 0.0 {
        return Some(0.0);
    }
    if y >= ymax {
        return Some(J1_ARGMAX);
    }
    let (mut lo, mut hi) = (0.0, J1_ARGMAX);
    let mut x = 2.0 * y;
    for _ in 0..200 {
        let f = bessel_j1(x) - y;
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let d = if x > 0.0 { bessel_j0(x) - bessel_j1(x) / x } else { 0.5 };
        let mut nx = x - f / d;
        if !(nx > lo && nx < hi) || d.abs() < 1e-12 {
            nx = 0.5 * (lo + hi);
        }
        if (nx - x).abs() < 1e-15 * (1.0 + x) {
            return Some(nx);
        }
        x = nx;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        // values from standard tables (Abramowitz & Stegun)
        let cases = [
            (0.0, 1.0, 0.0),
            (0.5, 0.938_469_807_240_813, 0.242_268_457_674_874),
            (1.0, 0.765_197_686_557_966_6, 0.440_050_585_744_933_5),
            (2.0, 0.223_890_779_141_235_7, 0.576_724_807_756_873_4),
            (5.0, -0.177_596_771_314_338_3, -0.327_579_137_591_465_2),
            (10.0, -0.245_935_764_451_348_3, 0.043_472_746_168_861_44),
            (20.0, 0.167_024_664_340_583_1, 0.066_833_124_175_850_04),
        ];
        for (x, j0, j1) in cases {
            assert!((bessel_j0(x) - j0).abs() < 1e-12, "J0({x})");
            assert!((bessel_j1(x) - j1).abs() < 1e-12, "J1({x})");
        }
    }

    #[test]
    fn continuity_at_switch() {
        let a = series(0, SERIES_LIMIT);
        let b = asymptotic(0, SERIES_LIMIT);
        assert!((a - b).abs() < 1e-12);
        let a = series(1, SERIES_LIMIT);
        let b = asymptotic(1, SERIES_LIMIT);
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn j1_peak() {
        assert!((bessel_j1(J1_ARGMAX) - 0.581_865_224_281_596_4).abs() < 1e-14);
        // derivative J0 - J1/x vanishes at the peak
        assert!((bessel_j0(J1_ARGMAX) - bessel_j1(J1_ARGMAX) / J1_ARGMAX).abs() < 1e-13);
    }

    #[test]
    fn j0_first_zero() {
        assert!(bessel_j0(2.404_825_557_695_773).abs() < 1e-14);
    }

    #[test]
    fn inverse_round_trip() {
        for &x in &[1e-4, 0.3, 0.8, 1.2, 1.8] {
            let y = bessel_j1(x);
            let back = bessel_j1_inverse(y).unwrap();
            assert!((back - x).abs() < 1e-10, "{x} -> {back}");
        }
        assert!(bessel_j1_inverse(0.6).is_none());
        assert_eq!(bessel_j1_inverse(0.0), Some(0.0));
    }
}
