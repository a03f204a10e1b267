//! Small derivative-free optimizers: golden-section line search, Nelder–Mead,
//! periodic angle maximization and CMA-ES.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Minimizes a unimodal `f` on [lo, hi]; returns (argmin, min).
pub fn golden_section<F: FnMut(f64) -> f64>(mut f: F, lo: f64, hi: f64, tol: f64) -> (f64, f64) {
    let (mut a, mut b) = (lo.min(hi), lo.max(hi));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol.max(1e-15 * (a.abs() + b.abs())) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Nelder–Mead with standard coefficients. Stops when both the simplex
/// diameter and the spread of values fall below `tol`.
pub fn nelder_mead<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    step: f64,
    tol: f64,
    max_iter: usize,
) -> SimplexResult {
    let n = x0.len();
    if n == 0 {
        let v = f(x0);
        return SimplexResult {
            x: vec![],
            f: v,
            iterations: 0,
            converged: true,
        };
    }
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut it = 0;
    let mut converged = false;
    while it < max_iter {
        it += 1;
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();

        let spread = vals[n] - vals[0];
        let diam = pts[1..]
            .iter()
            .map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if spread.abs() <= tol && diam <= tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, x) in centroid.iter_mut().zip(p) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (w - c))
                .collect()
        };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let x = along(-0.5);
                let v = f(&x);
                (x, v)
            } else {
                let x = along(0.5);
                let v = f(&x);
                (x, v)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                let best = pts[0].clone();
                for i in 1..=n {
                    for k in 0..n {
                        pts[i][k] = best[k] + 0.5 * (pts[i][k] - best[k]);
                    }
                    vals[i] = f(&pts[i]);
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b])).unwrap();
    SimplexResult {
        x: pts[best].clone(),
        f: vals[best],
        iterations: it,
        converged,
    }
}

fn wrap(a: f64) -> f64 {
    let r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r + 2.0 * PI
    } else {
        r
    }
}

/// Maximizes a 2π-periodic `score` over `n` angles: coordinate sweeps (grid
/// scan + golden refinement) followed by a simplex polish. Angles are
/// returned wrapped to (−π, π].
pub fn maximize_angles<F: Fn(&[f64]) -> f64>(score: &F, n: usize, grid: usize, tol: f64) -> (Vec<f64>, f64) {
    let mut x = vec![0.0; n];
    let mut best = score(&x);
    if n == 0 {
        return (x, best);
    }
    let grid = grid.max(3);
    let h = 2.0 * PI / grid as f64;
    for _sweep in 0..20 {
        let before = best;
        for k in 0..n {
            let mut probe = x.clone();
            let mut arg = x[k];
            for g in 0..grid {
                probe[k] = -PI + g as f64 * h;
                let v = score(&probe);
                if v > best {
                    best = v;
                    arg = probe[k];
                }
            }
            let (a, _) = golden_section(
                |t| {
                    let mut p = x.clone();
                    p[k] = t;
                    -score(&p)
                },
                arg - h,
                arg + h,
                1e-3 * tol.max(1e-12).sqrt(),
            );
            let mut p = x.clone();
            p[k] = a;
            let v = score(&p);
            x[k] = if v > best { a } else { arg };
            best = best.max(v);
        }
        if best - before <= tol {
            break;
        }
    }
    let res = nelder_mead(|p| -score(p), &x, 0.05, tol.max(1e-14), 2000 * n);
    if -res.f > best {
        x = res.x;
        best = -res.f;
    }
    (x.into_iter().map(wrap).collect(), best)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaResult {
    pub x: Vec<f64>,
    pub f: f64,
    /// best value after each generation
    pub history: Vec<f64>,
    pub evaluations: usize,
    pub converged: bool,
}

/// (μ/μ_w, λ)-CMA-ES with λ = 4 + ⌊3 ln n⌋. Population members are
/// evaluated in parallel; results depend only on `seed`.
pub fn cma_es_minimize<F>(f: F, x0: &[f64], sigma0: f64, budget: usize, seed: u64) -> CmaResult
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let n = x0.len();
    let f0 = f(x0);
    if n == 0 || sigma0 <= 0.0 || budget <= 1 {
        return CmaResult {
            x: x0.to_vec(),
            f: f0,
            history: vec![f0],
            evaluations: 1,
            converged: sigma0 <= 0.0 || n == 0,
        };
    }
    let nf = n as f64;
    let lambda = 4 + (3.0 * nf.ln()).floor() as usize;
    let mu = lambda / 2;
    let raw: Vec<f64> = (1..=mu)
        .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
        .collect();
    let wsum: f64 = raw.iter().sum();
    let w: Vec<f64> = raw.iter().map(|x| x / wsum).collect();
    let mueff = 1.0 / w.iter().map(|x| x * x).sum::<f64>();
    let cs = (mueff + 2.0) / (nf + mueff + 5.0);
    let ds = 1.0 + 2.0 * (((mueff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + cs;
    let cc = (4.0 + mueff / nf) / (nf + 4.0 + 2.0 * mueff / nf);
    let c1 = 2.0 / ((nf + 1.3).powi(2) + mueff);
    let cmu = (1.0 - c1).min(2.0 * (mueff - 2.0 + 1.0 / mueff) / ((nf + 2.0).powi(2) + mueff));
    let chin = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mean = DVector::from_column_slice(x0);
    let mut sigma = sigma0;
    let mut c = DMatrix::<f64>::identity(n, n);
    let mut b = DMatrix::<f64>::identity(n, n);
    let mut dvec = DVector::from_element(n, 1.0);
    let mut ps = DVector::zeros(n);
    let mut pc = DVector::zeros(n);
    let mut best_x = x0.to_vec();
    let mut best_f = f0;
    let mut history = Vec::new();
    let mut evals = 1;
    let mut gen = 0usize;
    let mut converged = false;
    let mut recent: Vec<f64> = Vec::new();

    while evals + lambda <= budget {
        gen += 1;
        let zs: Vec<DVector<f64>> = (0..lambda)
            .map(|_| DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng)))
            .collect();
        let ys: Vec<DVector<f64>> = zs
            .iter()
            .map(|z| &b * DVector::from_fn(n, |i, _| dvec[i] * z[i]))
            .collect();
        let xs: Vec<Vec<f64>> = ys
            .iter()
            .map(|y| (&mean + y * sigma).iter().cloned().collect())
            .collect();
        let fs: Vec<f64> = xs.par_iter().map(|x| f(x)).collect();
        evals += lambda;
        let mut order: Vec<usize> = (0..lambda).collect();
        order.sort_by(|&a, &b| fs[a].total_cmp(&fs[b]));
        if fs[order[0]] < best_f {
            best_f = fs[order[0]];
            best_x = xs[order[0]].clone();
        }
        history.push(best_f);

        let old = mean.clone();
        let mut yw = DVector::zeros(n);
        for (i, &k) in order[..mu].iter().enumerate() {
            yw += &ys[k] * w[i];
        }
        mean = &old + &yw * sigma;

        // C^{-1/2} y_w = B D^{-1} Bᵀ y_w
        let bt_y = b.transpose() * &yw;
        let inv = &b * DVector::from_fn(n, |i, _| bt_y[i] / dvec[i]);
        ps = &ps * (1.0 - cs) + inv * (cs * (2.0 - cs) * mueff).sqrt();
        let ps_norm = ps.norm();
        let hsig = ps_norm / (1.0 - (1.0 - cs).powi(2 * gen as i32)).sqrt() / chin < 1.4 + 2.0 / (nf + 1.0);
        let hs = if hsig { 1.0 } else { 0.0 };
        pc = &pc * (1.0 - cc) + &yw * (hs * (cc * (2.0 - cc) * mueff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (i, &k) in order[..mu].iter().enumerate() {
            rank_mu += &ys[k] * ys[k].transpose() * w[i];
        }
        let delta_h = (1.0 - hs) * cc * (2.0 - cc);
        c = &c * (1.0 - c1 - cmu + c1 * delta_h) + &pc * pc.transpose() * c1 + rank_mu * cmu;
        c = (&c + c.transpose()) * 0.5;
        sigma *= ((cs / ds) * (ps_norm / chin - 1.0)).exp();

        let eig = SymmetricEigen::new(c.clone());
        b = eig.eigenvectors;
        dvec = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());

        recent.push(fs[order[0]]);
        if recent.len() > 10 + (30.0 * nf / lambda as f64).ceil() as usize {
            recent.remove(0);
        }
        let spread = recent.iter().cloned().fold(f64::MIN, f64::max) - recent.iter().cloned().fold(f64::MAX, f64::min);
        let xscale = sigma * dvec.max();
        if xscale < 1e-12 * (1.0 + mean.amax()) || (recent.len() > 10 && spread < 1e-300_f64.max(1e-16 * best_f.abs())) {
            converged = true;
            break;
        }
        if !sigma.is_finite() || sigma > 1e300 {
            break;
        }
    }
    CmaResult {
        x: best_x,
        f: best_f,
        history,
        evaluations: evals,
        converged,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_finds_parabola_minimum() {
        let (x, v) = golden_section(|x| (x - 0.3).powi(2) - 1.0, -2.0, 2.0, 1e-10);
        assert!((x - 0.3).abs() < 1e-8);
        assert!((v + 1.0).abs() < 1e-14);
    }

    #[test]
    fn nelder_mead_quadratic() {
        let r = nelder_mead(|p| (p[0] - 1.0).powi(2) + 3.0 * (p[1] + 2.0).powi(2), &[0.0, 0.0], 0.5, 1e-12, 5000);
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn angles_of_a_trig_polynomial() {
        let score = |a: &[f64]| (a[0] - 1.0).cos() + 0.5 * (a[1] + 2.5).cos() + 0.1 * (a[0] - a[1]).cos();
        let (x, v) = maximize_angles(&score, 2, 16, 1e-12);
        assert!((v - score(&x)).abs() < 1e-12);
        // gradient vanishes at the returned point
        let e = 1e-6;
        for k in 0..2 {
            let mut p = x.clone();
            p[k] += e;
            let mut m = x.clone();
            m[k] -= e;
            assert!(((score(&p) - score(&m)) / (2.0 * e)).abs() < 1e-5);
        }
    }

    #[test]
    fn cma_sphere_7d() {
        let r = cma_es_minimize(|x| x.iter().map(|v| v * v).sum(), &[1.0; 7], 0.5, 5000, 1);
        assert!(r.f < 1e-10, "{}", r.f);
        assert!(r.evaluations <= 5000);
    }

    #[test]
    fn cma_rosenbrock_2d() {
        let rosen = |x: &[f64]| 100.0 * (x[1] - x[0] * x[0]).powi(2) + (1.0 - x[0]).powi(2);
        let r = cma_es_minimize(rosen, &[-1.0, 1.0], 0.5, 20_000, 3);
        assert!(r.f < 1e-6, "{}", r.f);
    }

    #[test]
    fn cma_is_deterministic() {
        let f = |x: &[f64]| (x[0] - 0.2).powi(2) + (x[1] * 3.0).sin().powi(2);
        let a = cma_es_minimize(f, &[1.0, 1.0], 0.3, 600, 9);
        let b = cma_es_minimize(f, &[1.0, 1.0], 0.3, 600, 9);
        assert_eq!(a, b);
    }

    #[test]
    fn cma_zero_sigma_returns_start() {
        let r = cma_es_minimize(|x| x[0] * x[0], &[0.0], 0.0, 100, 0);
        assert_eq!(r.x, vec![0.0]);
    }
}
