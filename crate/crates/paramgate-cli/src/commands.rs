//! Scenario execution. Every command is a pure function of (config, seed)
//! returning the files it would write and a JSON summary record.

use std::f64::consts::TAU;
use std::fmt;
use std::path::Path;

use paramgate::device::{effective_coupling, equalize_amplitudes, w_state_time, DeviceParams, DriveConfig};
use paramgate::dynamics::{
    aligned_fidelity, evolve_with, ideal_w_state, linspace, w_peak, EvolveOptions, HamiltonianSpec, Integrator,
};
use paramgate::noise::{error_budget, format_budget_table, BudgetOptions, NoiseModel, Scenario};
use paramgate::pulseshape::{
    cryoscope_analyze, cryoscope_synthesize, cryoscope_synthesize_waveform, design_predistortion,
    fit_exponential_step, relative_rms, PredistortionOptions,
};
use paramgate::qops::{project_to_qubits, LevelScheme, QuantumState};
use paramgate::tomography::{density_csv, full_settings, mle_reconstruct, simulate_measurements, state_fidelity, virtual_z_correction};
use paramgate::units::{ns, to_mhz};
use paramgate::xeb::{device_xeb_channel, run_xeb, XebChannel, XebOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ScenarioConfig, XebChannelKind};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Exchange,
    Budget,
    Tomography,
    Xeb,
    Cryoscope,
    Predistort,
    Project,
}

impl Command {
    pub const ALL: [Command; 7] = [
        Command::Exchange,
        Command::Budget,
        Command::Tomography,
        Command::Xeb,
        Command::Cryoscope,
        Command::Predistort,
        Command::Project,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Exchange => "exchange",
            Command::Budget => "budget",
            Command::Tomography => "tomography",
            Command::Xeb => "xeb",
            Command::Cryoscope => "cryoscope",
            Command::Predistort => "predistort",
            Command::Project => "project",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub command: Command,
    /// (file name, contents)
    pub files: Vec<(String, String)>,
    pub summary: Value,
}

impl RunOutput {
    pub fn summary_name(&self) -> String {
        format!("{}_summary.json", self.command)
    }

    pub fn summary_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Write {
            path: dir.display().to_string(),
            source: e,
        })?;
        let summary = (self.summary_name(), self.summary_text());
        for (name, body) in self.files.iter().chain(std::iter::once(&summary)) {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| CliError::Write {
                path: path.display().to_string(),
                source: e,
            })?;
        }
        Ok(())
    }
}

fn missing(command: Command) -> CliError {
    CliError::Config {
        path: format!("run.{command}"),
        message: "section is required for this command".into(),
    }
}

pub fn execute(command: Command, cfg: &ScenarioConfig, seed: u64) -> Result<RunOutput> {
    let (files, mut summary) = match command {
        Command::Exchange => exchange(cfg, seed)?,
        Command::Budget => budget(cfg, seed)?,
        Command::Tomography => tomography(cfg, seed)?,
        Command::Xeb => xeb(cfg, seed)?,
        Command::Cryoscope => cryoscope(cfg)?,
        Command::Predistort => predistort(cfg, seed)?,
        Command::Project => project(cfg, seed)?,
    };
    if let Value::Object(map) = &mut summary {
        map.insert("command".into(), json!(command.name()));
        map.insert("label".into(), json!(cfg.label));
        map.insert("seed".into(), json!(seed));
    }
    Ok(RunOutput {
        command,
        files,
        summary,
    })
}

type Produced = (Vec<(String, String)>, Value);

fn tones_json(drive: &DriveConfig, targets: &[usize]) -> Value {
    Value::Array(
        drive
            .tones
            .iter()
            .zip(targets)
            .map(|(t, &q)| {
                json!({
                    "target": q,
                    "amplitude_MHz": to_mhz(t.amplitude),
                    "freq_MHz": to_mhz(t.frequency),
                    "phase_rad": t.phase,
                })
            })
            .collect(),
    )
}

fn scenario(cfg: &ScenarioConfig) -> Result<(DeviceParams, DriveConfig, Vec<usize>)> {
    let full = cfg.device()?.to_params();
    let section = cfg.drive()?;
    let (dev, drive) = section.build(&full)?;
    Ok((dev, drive, section.targets()))
}

fn noise_for(cfg: &ScenarioConfig, dev: &DeviceParams) -> Option<NoiseModel> {
    cfg.noise.any().then(|| cfg.noise.model(dev))
}

fn single_excitation(n: usize, levels: usize) -> Result<(LevelScheme, QuantumState)> {
    let scheme = LevelScheme::with_cap(vec![levels; n], Some(1))?;
    let mut lv = vec![0; n];
    lv[0] = 1;
    let init = QuantumState::basis(&lv, &scheme)?;
    Ok((scheme, init))
}

/// First downward crossing of `pops[..][0]` through `level`, linearly interpolated.
pub fn first_crossing(times: &[f64], pops: &[Vec<f64>], level: f64) -> Option<f64> {
    pops.windows(2).zip(times.windows(2)).find_map(|(p, t)| {
        let (a, b) = (p[0][0] - level, p[1][0] - level);
        (a > 0.0 && b <= 0.0).then(|| t[0] + (t[1] - t[0]) * a / (a - b))
    })
}

fn exchange(cfg: &ScenarioConfig, seed: u64) -> Result<Produced> {
    let run = cfg.run.exchange.as_ref().ok_or_else(|| missing(Command::Exchange))?;
    let (dev, drive, targets) = scenario(cfg)?;
    let n = dev.n_qubits();
    let (scheme, init) = single_excitation(n, run.levels)?;
    let noise = noise_for(cfg, &dev);
    let spec = HamiltonianSpec::new(dev.clone(), drive.clone(), scheme);
    let grid = linspace(ns(run.t_end_ns), run.samples);
    let tr = evolve_with(&spec, &init, &grid, noise.as_ref(), Some(seed), &EvolveOptions::default())?;
    let sharing = first_crossing(&tr.times, &tr.populations, 1.0 / n as f64);
    let eps = drive.epsilons();
    let g_eff: Vec<f64> = (0..drive.tones.len())
        .map(|j| to_mhz(effective_coupling(dev.exchange_coupling(j + 1).unwrap_or(0.0), &eps, j).abs()))
        .collect();
    let summary = json!({
        "n_qubits": n,
        "equal_sharing_ns": sharing.map(|t| t * 1e9),
        "final_populations": tr.populations.last(),
        "g_eff_MHz": g_eff,
        "tones": tones_json(&drive, &targets),
        "drive_duration_ns": drive.duration * 1e9,
    });
    Ok((vec![(run.output.clone(), tr.to_csv())], summary))
}

fn budget(cfg: &ScenarioConfig, seed: u64) -> Result<Produced> {
    let run = cfg.run.budget.as_ref().ok_or_else(|| missing(Command::Budget))?;
    let (dev, drive, targets) = scenario(cfg)?;
    let noise = cfg.noise.model(&dev);
    let opts = BudgetOptions {
        mc_realizations: run.mc_realizations,
        seed,
        integrator: Integrator::default(),
    };
    let b = error_budget(&dev, &drive, run.scenario, &noise, &opts)?;
    let label = cfg.label.clone().unwrap_or_else(|| "scenario".into());
    let table = format_budget_table(&[(label, b.clone())]);
    let mut summary = serde_json::to_value(&b).expect("budget serializes");
    if let Value::Object(m) = &mut summary {
        m.insert("scenario".into(), json!(run.scenario));
        m.insert("tones".into(), tones_json(&drive, &targets));
    }
    let files = vec![
        (format!("{}.json", run.output), b.to_json() + "\n"),
        (format!("{}.txt", run.output), table),
    ];
    Ok((files, summary))
}

fn tomography(cfg: &ScenarioConfig, seed: u64) -> Result<Produced> {
    let run = cfg.run.tomography.as_ref().ok_or_else(|| missing(Command::Tomography))?;
    let (dev, drive, targets) = scenario(cfg)?;
    let n = dev.n_qubits();
    let (scheme, init) = single_excitation(n, 3)?;
    let noise = noise_for(cfg, &dev);
    let spec = HamiltonianSpec::new(dev, drive.clone(), scheme);
    let opts = EvolveOptions {
        store_states: true,
        ..Default::default()
    };
    let tr = evolve_with(&spec, &init, &[0.0, drive.duration], noise.as_ref(), Some(seed), &opts)?;
    let fin = tr.states.unwrap().pop().unwrap();
    let (qubits, leakage) = project_to_qubits(&fin)?;
    let target = ideal_w_state(&LevelScheme::uniform(n, 2)?)?;
    let (direct, _) = aligned_fidelity(&qubits, &target)?;

    let data = simulate_measurements(&qubits, &full_settings(n), run.shots, seed)?;
    let rec = mle_reconstruct(&data, run.max_iter, run.tol)?;
    let (aligned, angles) = virtual_z_correction(&rec.rho, &target)?;
    let fidelity = state_fidelity(&aligned, &target)?;
    let (re, im) = density_csv(&aligned.density_matrix(), n);
    let summary = json!({
        "n_qubits": n,
        "fidelity": fidelity,
        "fidelity_direct": direct,
        "virtual_z_rad": angles,
        "log_likelihood": rec.log_likelihood,
        "iterations": rec.iterations,
        "converged": rec.converged,
        "likelihood_monotone": rec.history.windows(2).all(|w| w[1] >= w[0] - 1e-12),
        "leakage": leakage,
        "shots_per_setting": run.shots,
        "tones": tones_json(&drive, &targets),
    });
    let files = vec![
        (format!("{}_dataset.json", run.output), data.to_json() + "\n"),
        (format!("{}_rho_re.csv", run.output), re),
        (format!("{}_rho_im.csv", run.output), im),
    ];
    Ok((files, summary))
}

fn xeb(cfg: &ScenarioConfig, seed: u64) -> Result<Produced> {
    let run = cfg.run.xeb.as_ref().ok_or_else(|| missing(Command::Xeb))?;
    let mut extra = json!({});
    let channel = match run.channel {
        XebChannelKind::Ideal => XebChannel::Ideal,
        XebChannelKind::Depolarizing => XebChannel::Depolarizing(run.p.unwrap_or(0.0)),
        XebChannelKind::Device => {
            let (dev, drive, targets) = scenario(cfg)?;
            let t_cycle = ns(run.t_cycle_ns.unwrap_or(cfg.drive()?.duration_ns + 30.0));
            let depth = run.depths.iter().copied().max().unwrap_or(1);
            let noise = noise_for(cfg, &dev);
            extra = json!({"t_cycle_ns": t_cycle * 1e9, "tones": tones_json(&drive, &targets)});
            device_xeb_channel(&dev, &drive, t_cycle, depth, noise.as_ref(), Some(seed), Integrator::default())?
        }
    };
    let opts = XebOptions {
        depths: run.depths.clone(),
        sequences: run.sequences,
        shots: run.shots,
        seed,
        reference: run.reference,
    };
    let res = run_xeb(&channel, &opts)?;
    let summary = json!({
        "channel": run.channel,
        "p": run.p,
        "depths": res.depths,
        "mean_fidelity": res.mean_fidelity,
        "fit": res.fit,
        "sequences": run.sequences,
        "shots": run.shots,
        "reference": run.reference,
        "device": extra,
    });
    Ok((vec![(format!("{}.csv", run.output), res.to_csv())], summary))
}

fn cryoscope(cfg: &ScenarioConfig) -> Result<Produced> {
    let run = cfg.run.cryoscope.as_ref().ok_or_else(|| missing(Command::Cryoscope))?;
    let map = cfg.device()?.flux_map().expect("validated");
    let fs = run.sample_rate_ghz * 1e9;
    let model = run.distortion.model();
    let trace = cryoscope_synthesize(Some(&model), run.amplitude, run.samples, fs, &map)?;
    let flux = cryoscope_analyze(&trace, &map, run.savgol_window, run.savgol_order)?;
    let step: Vec<f64> = flux.iter().map(|f| f / run.amplitude).collect();
    let (a, tau) = fit_exponential_step(&step, fs)?;
    let mut csv = String::from("sample,time_ns,flux_Phi0,step\n");
    for (k, (f, s)) in flux.iter().zip(&step).enumerate() {
        csv.push_str(&format!("{k},{:.6},{f:.12e},{s:.10}\n", k as f64 / fs * 1e9));
    }
    let summary = json!({
        "fitted_amplitude": a,
        "fitted_tau_ns": tau * 1e9,
        "model_amplitude": model.amplitude,
        "model_tau_ns": model.tau * 1e9,
        "samples": run.samples,
    });
    let files = vec![
        (format!("{}_trace.csv", run.output), trace.to_csv()),
        (format!("{}_flux.csv", run.output), csv),
    ];
    Ok((files, summary))
}

fn predistort(cfg: &ScenarioConfig, seed: u64) -> Result<Produced> {
    let run = cfg.run.predistort.as_ref().ok_or_else(|| missing(Command::Predistort))?;
    let map = cfg.device()?.flux_map().expect("validated");
    let fs = run.sample_rate_ghz * 1e9;
    let model = run.distortion.model();
    let samples = run
        .samples
        .unwrap_or_else(|| (4.0 * model.tau * fs).ceil() as usize + 100);
    let opts = PredistortionOptions {
        sample_rate: fs,
        amplitude: run.amplitude,
        samples,
        savgol_window: run.savgol_window,
        savgol_order: run.savgol_order,
        fir_taps: run.fir_taps,
        seed,
        budget: run.budget,
    };
    let design = design_predistortion(&model, &map, &opts)?;
    let target: Vec<f64> = (0..run.target_samples)
        .map(|k| run.target_amplitude * (TAU * run.target_freq_mhz * 1e6 * k as f64 / fs).sin())
        .collect();
    let pre = design.apply(&target)?;
    let verify = |wave: &[f64]| -> Result<Vec<f64>> {
        let tr = cryoscope_synthesize_waveform(Some(&model), wave, fs, &map, run.target_amplitude)?;
        Ok(cryoscope_analyze(&tr, &map, run.verify_window, run.verify_order)?)
    };
    let corrected = verify(&pre)?;
    let raw = verify(&target)?;
    let skip = run.verify_window / 2;
    let mut csv = String::from("sample,time_ns,target,corrected,uncorrected\n");
    for k in 0..target.len() {
        csv.push_str(&format!(
            "{k},{:.6},{:.12e},{:.12e},{:.12e}\n",
            k as f64 / fs * 1e9,
            target[k],
            corrected[k],
            raw[k]
        ));
    }
    let filters = json!({"iir": design.iir, "fir": design.fir.coeffs});
    let summary = json!({
        "fitted_amplitude": design.fitted_amplitude,
        "fitted_tau_ns": design.fitted_tau * 1e9,
        "fir_mse_initial": design.fir.mse_initial,
        "fir_mse_final": design.fir.mse_final,
        "fir_converged": design.fir.converged,
        "calibration_samples": samples,
        "rms_corrected": relative_rms(&corrected, &target, skip),
        "rms_uncorrected": relative_rms(&raw, &target, skip),
    });
    let files = vec![
        (
            format!("{}_filters.json", run.output),
            serde_json::to_string_pretty(&filters).expect("filters serialize") + "\n",
        ),
        (format!("{}_roundtrip.csv", run.output), csv),
    ];
    Ok((files, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionPoint {
    pub n_qubits: usize,
    pub time_ns: f64,
    /// budget total: F(decoherence + ZZ) − ε_flux
    pub fidelity: f64,
    pub eps_decoh: f64,
    pub eps_zz: f64,
    pub eps_flux: f64,
    pub eps_flux_stderr: f64,
    pub mc_realizations: usize,
    #[serde(rename = "g_eff_MHz")]
    pub g_eff_mhz: f64,
    #[serde(rename = "amplitudes_MHz")]
    pub amplitudes_mhz: Vec<f64>,
    /// "equalized", or "ratios" when equal coupling is out of reach
    pub amplitude_source: &'static str,
    #[serde(skip)]
    pub scan: Vec<(f64, f64)>,
}

/// One Fig. S6-style point: the first amplitude fixed, the rest equalized,
/// gate length at the fidelity maximum near the Bessel-predicted W time.
/// When no equal-coupling solution exists and `ratios` is given, the
/// amplitudes are Ω₁·ratios instead (ν = |Δ| either way).
pub fn projection_point(
    cfg: &ScenarioConfig,
    n_total: usize,
    first_amplitude_mhz: f64,
    ratios: Option<&[f64]>,
    seed: u64,
) -> Result<ProjectionPoint> {
    let run = cfg.run.project.as_ref().ok_or_else(|| missing(Command::Project))?;
    let full = cfg.device()?.to_params();
    let comps: Vec<usize> = (1..n_total).collect();
    let dev = full.subset(&comps)?;
    let n = comps.len();
    let ramp = ns(run.ramp_ns);
    let eps1 = paramgate::units::mhz(first_amplitude_mhz) / dev.detuning(1).abs();
    let (eps, g, source) = match (equalize_amplitudes(&dev, &comps, eps1), ratios) {
        (Ok((eps, g)), _) => (eps, g, "equalized"),
        (Err(paramgate::Error::Infeasible { .. }), Some(r)) => {
            let eps: Vec<f64> = comps
                .iter()
                .zip(r)
                .map(|(&j, &x)| eps1 * x * dev.detuning(1).abs() / dev.detuning(j).abs())
                .collect();
            // rms coupling sets the common-qubit oscillation rate
            let g2: f64 = (0..n)
                .map(|j| effective_coupling(dev.exchange_coupling(j + 1).unwrap_or(0.0), &eps, j).powi(2))
                .sum();
            (eps, (g2 / n as f64).sqrt(), "ratios")
        }
        (Err(e), _) => return Err(e.into()),
    };
    let t_w = w_state_time(g, n)? + ramp;
    let template = DriveConfig::from_epsilons(&dev, &comps, &eps, t_w, ramp);
    let noise = cfg.noise.model(&dev);
    let scan_noise = NoiseModel {
        flux: None,
        ..noise.clone()
    };
    let peak = w_peak(
        &dev,
        &template,
        run.window[0] * t_w,
        run.window[1] * t_w,
        run.scan_points,
        Some(&scan_noise),
        Some(seed),
        Integrator::default(),
    )?;
    let opts = BudgetOptions {
        mc_realizations: run.mc_realizations,
        seed,
        integrator: Integrator::default(),
    };
    let b = error_budget(&dev, &peak.drive, Scenario::WState, &noise, &opts)?;
    Ok(ProjectionPoint {
        n_qubits: n_total,
        time_ns: peak.time * 1e9,
        fidelity: b.total_fidelity,
        eps_decoh: b.eps_decoh,
        eps_zz: b.eps_zz,
        eps_flux: b.eps_flux,
        eps_flux_stderr: b.eps_flux_stderr,
        mc_realizations: b.mc_realizations,
        g_eff_mhz: to_mhz(g),
        amplitudes_mhz: template.tones.iter().map(|t| to_mhz(t.amplitude)).collect(),
        amplitude_source: source,
        scan: peak.scan,
    })
}

fn project(cfg: &ScenarioConfig, seed: u64) -> Result<Produced> {
    let run = cfg.run.project.as_ref().ok_or_else(|| missing(Command::Project))?;
    let points: Vec<ProjectionPoint> = run
        .sizes
        .par_iter()
        .zip(&run.first_amplitude_mhz)
        .enumerate()
        .map(|(i, (&n, &a))| projection_point(cfg, n, a, run.ratios.get(i).map(Vec::as_slice), seed))
        .collect::<Result<_>>()?;
    let mut table = String::from("n_qubits,time_ns,fidelity,eps_decoh,eps_zz,eps_flux,eps_flux_stderr\n");
    let mut scan = String::from("n_qubits,duration_ns,fidelity\n");
    for p in &points {
        table.push_str(&format!(
            "{},{:.4},{:.8},{:.6e},{:.6e},{:.6e},{:.3e}\n",
            p.n_qubits, p.time_ns, p.fidelity, p.eps_decoh, p.eps_zz, p.eps_flux, p.eps_flux_stderr
        ));
        for (t, f) in &p.scan {
            scan.push_str(&format!("{},{:.4},{:.8}\n", p.n_qubits, t * 1e9, f));
        }
    }
    let summary = json!({ "points": points });
    let files = vec![
        (format!("{}.csv", run.output), table),
        (format!("{}_scan.csv", run.output), scan),
    ];
    Ok((files, summary))
}
