use paramgate::device::ring_device;
use paramgate::dynamics::{best_gate_angles, process_kraus_at, sqrt_iswap_drive, Integrator};
use paramgate::noise::NoiseModel;
use paramgate::qops::max_abs;
use paramgate::xeb::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn opts(depths: Vec<usize>, sequences: usize, shots: Option<u64>, seed: u64) -> XebOptions {
    XebOptions {
        depths,
        sequences,
        shots,
        seed,
        reference: false,
    }
}

#[test]
fn depolarizing_base_recovered() {
    let p = 0.03;
    let run = run_xeb(&XebChannel::Depolarizing(p), &opts(vec![1, 2, 4, 8, 16], 50, None, 9)).unwrap();
    let fit = run.fit.unwrap();
    assert!((fit.base / (1.0 - p) - 1.0).abs() < 0.05, "{fit:?}");
    for (m, f) in run.depths.iter().zip(&run.mean_fidelity) {
        assert!((f - (1.0 - p).powi(*m as i32)).abs() < 1e-9);
    }
}

#[test]
fn sampled_estimator_tracks_exact() {
    let ch = XebChannel::Depolarizing(0.02);
    let exact = run_xeb(&ch, &opts(vec![1, 2, 4, 8], 20, None, 21)).unwrap();
    let sampled = run_xeb(&ch, &opts(vec![1, 2, 4, 8], 20, Some(100_000), 21)).unwrap();
    for (a, b) in exact.mean_fidelity.iter().zip(&sampled.mean_fidelity) {
        assert!((a - b).abs() <= 0.02, "{a} vs {b}");
    }
    for r in &sampled.records {
        assert!((r.p_exp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((r.p_th.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn runs_are_seeded() {
    let ch = XebChannel::Depolarizing(0.05);
    let a = run_xeb(&ch, &opts(vec![1, 3, 5], 8, Some(1000), 2)).unwrap();
    let b = run_xeb(&ch, &opts(vec![1, 3, 5], 8, Some(1000), 2)).unwrap();
    assert_eq!(a, b);
    assert!(a.to_csv().starts_with("depth,seq_index,F\n"));
    assert_eq!(a.to_csv().lines().count(), 1 + 24);
}

#[test]
fn reference_cycles_are_ideal() {
    let mut o = opts(vec![1, 2, 4, 8], 10, None, 3);
    o.reference = true;
    let run = run_xeb(&XebChannel::Depolarizing(0.1), &o).unwrap();
    // one π/2 pulse per qubit always lands on the equator
    assert!(run.mean_fidelity[0].is_nan());
    for f in &run.mean_fidelity[1..] {
        assert!((f - 1.0).abs() < 1e-9);
    }
    assert!((run.fit.unwrap().base - 1.0).abs() < 1e-9);
}

#[test]
fn bad_depths_rejected() {
    assert!(run_xeb(&XebChannel::Ideal, &opts(vec![0, 1], 2, None, 0)).is_err());
    assert!(run_xeb(&XebChannel::Ideal, &opts(vec![2, 2], 2, None, 0)).is_err());
}

#[test]
fn noisy_fit_within_three_sigma() {
    let depths = [1usize, 2, 4, 6, 8, 12, 16, 24];
    let noise = Normal::new(0.0, 0.01).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let f: Vec<f64> = depths.iter().map(|&m| 0.97f64.powi(m as i32) + noise.sample(&mut rng)).collect();
    let fit = fit_decay(&depths, &f).unwrap();
    assert!(fit.log_space);
    assert!((fit.base - 0.97).abs() < 3.0 * fit.base_stderr, "{fit:?}");
}

#[test]
fn advanced_cycles_keep_gate_quality() {
    let dev = ring_device().subset(&[1]).unwrap();
    let drive = sqrt_iswap_drive(&dev, 320e-9, 2e-9).unwrap();
    let t_cycle = 350e-9;
    let t = 3.0 * t_cycle;
    let adv = advanced_drive(&dev, &drive, t);
    let want = advanced_phase(drive.tones[0].phase, dev.detuning(1), 3, t_cycle);
    assert!((adv.tones[0].phase - want).abs() < 1e-9);

    let (_, f0) = device_cycle_channel(&dev, &drive, 0, t_cycle, None, None, Integrator::default()).unwrap();
    let (k3, f3) = device_cycle_channel(&dev, &drive, 3, t_cycle, None, None, Integrator::default()).unwrap();
    assert!(f0 > 0.999 && (f3 - f0).abs() < 1e-3, "{f0} {f3}");
    assert_eq!(k3.len(), 1);

    // without the advance the start time shows up as a Z conjugation of q1
    let u0 = process_kraus_at(&dev, &drive, 0.0, None, None, Integrator::default()).unwrap();
    let stale = process_kraus_at(&dev, &drive, t, None, None, Integrator::default()).unwrap();
    let (z0, _) = best_gate_angles(&u0);
    let (zs, _) = best_gate_angles(&stale);
    assert!((z0[0] - zs[0]).abs() < 1e-6);
    let wrap = |x: f64| (x + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    assert!(wrap((zs[1] - z0[1]) + (zs[2] - z0[2])).abs() < 1e-6);
    assert!(max_abs(&(&u0[0] - &stale[0])) > 1e-2);
}

#[test]
fn noisy_device_decays() {
    let dev = ring_device().subset(&[1]).unwrap();
    let drive = sqrt_iswap_drive(&dev, 320e-9, 2e-9).unwrap();
    let noise = NoiseModel::decoherence_only(&dev);
    let depths = vec![1, 2, 4, 8, 12];
    let ch = device_xeb_channel(&dev, &drive, 350e-9, 12, Some(&noise), None, Integrator::default()).unwrap();
    let run = run_xeb(&ch, &opts(depths, 15, None, 5)).unwrap();
    let fit = run.fit.clone().unwrap();
    assert!(fit.base < 1.0 && fit.base > 0.9, "{fit:?}");
    assert!(run.mean_fidelity.windows(2).all(|w| w[1] < w[0]), "{:?}", run.mean_fidelity);
}
