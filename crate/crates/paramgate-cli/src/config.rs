//! Scenario files: TOML with unit-suffixed keys, converted to SI library types.

use std::path::Path;

use paramgate::device::{
    calibrate_amplitudes, equalize_amplitudes, w_coupling_for_time, DeviceParams, DriveConfig, FluxMap, QubitParams, Tone,
};
use paramgate::noise::{Decoherence, FluxMode, FluxNoise, NoiseModel, Scenario};
use paramgate::pulseshape::{DistortionModel, Ringing};
use paramgate::units::{ghz, khz, mhz, ns, us};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

const BUNDLED: &[(&str, &str)] = &[
    ("fig3_2q", include_str!("../configs/fig3_2q.toml")),
    ("fig3_4q", include_str!("../configs/fig3_4q.toml")),
    ("table1_row1", include_str!("../configs/table1_row1.toml")),
    ("table1_row2", include_str!("../configs/table1_row2.toml")),
    ("table1_row3", include_str!("../configs/table1_row3.toml")),
    ("table1_row4", include_str!("../configs/table1_row4.toml")),
    ("table1_row5", include_str!("../configs/table1_row5.toml")),
    ("table1_row6", include_str!("../configs/table1_row6.toml")),
    ("figS6", include_str!("../configs/figS6.toml")),
    ("channels_off", include_str!("../configs/channels_off.toml")),
    ("tomography_w2", include_str!("../configs/tomography_w2.toml")),
    ("tomography_w3", include_str!("../configs/tomography_w3.toml")),
    ("xeb_ideal", include_str!("../configs/xeb_ideal.toml")),
    ("xeb_device", include_str!("../configs/xeb_device.toml")),
    ("cryoscope", include_str!("../configs/cryoscope.toml")),
    ("predistort", include_str!("../configs/predistort.toml")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub device: Option<DeviceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drive: Option<DriveSection>,
    #[serde(default)]
    pub noise: NoiseSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceSection {
    #[serde(rename = "bus_freq_GHz")]
    pub bus_freq_ghz: f64,
    /// √A_Φ of the common qubit
    #[serde(rename = "flux_noise_uPhi0")]
    pub flux_noise_uphi0: f64,
    /// flux sweet spot of the common qubit; sets the flux map and its slope
    #[serde(rename = "sweet_spot_GHz", default, skip_serializing_if = "Option::is_none")]
    pub sweet_spot_ghz: Option<f64>,
    /// |∂f/∂Φ| at the operating point, overrides the sweet-spot slope
    #[serde(rename = "flux_slope_MHz_per_Phi0", default, skip_serializing_if = "Option::is_none")]
    pub flux_slope_mhz_per_phi0: Option<f64>,
    /// qubit 0 is the common qubit
    pub qubit: Vec<QubitSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(rename = "freq_GHz")]
    pub freq_ghz: f64,
    #[serde(rename = "anharm_MHz")]
    pub anharm_mhz: f64,
    #[serde(rename = "qb_bus_coupling_MHz")]
    pub qb_bus_coupling_mhz: f64,
    #[serde(rename = "T1_us")]
    pub t1_us: f64,
    #[serde(rename = "T2echo_us")]
    pub t2echo_us: f64,
    /// static ZZ with the common qubit (ignored for qubit 0)
    #[serde(rename = "zz_kHz", default)]
    pub zz_khz: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Calibration {
    /// tones used as written
    #[default]
    None,
    /// all amplitudes set for equal sharing at `gate_ns`, ν = |Δ|
    WState,
    /// first amplitude kept, the others set to equal |g_eff|, ν = |Δ|
    Equalize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriveSection {
    #[serde(rename = "duration_ns")]
    pub duration_ns: f64,
    #[serde(rename = "ramp_ns", default = "default_ramp")]
    pub ramp_ns: f64,
    #[serde(default)]
    pub calibration: Calibration,
    /// equal-sharing time targeted by `w_state` calibration; defaults to the duration
    #[serde(rename = "gate_ns", default, skip_serializing_if = "Option::is_none")]
    pub gate_ns: Option<f64>,
    pub tone: Vec<ToneSection>,
}

fn default_ramp() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToneSection {
    /// device index of the partner qubit
    pub target: usize,
    /// Ω/2π
    #[serde(rename = "amplitude_MHz")]
    pub amplitude_mhz: f64,
    /// ν/2π
    #[serde(rename = "freq_MHz")]
    pub freq_mhz: f64,
    #[serde(rename = "phase_rad", default)]
    pub phase_rad: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    #[serde(default = "yes")]
    pub decoherence: bool,
    #[serde(default = "yes")]
    pub zz: bool,
    #[serde(default = "yes")]
    pub flux: bool,
    #[serde(default)]
    pub flux_mode: FluxMode,
    #[serde(rename = "f_low_Hz", default = "default_f_low")]
    pub f_low_hz: f64,
    #[serde(rename = "f_high_Hz", default = "default_f_high")]
    pub f_high_hz: f64,
}

fn yes() -> bool {
    true
}

fn default_f_low() -> f64 {
    paramgate::noise::DEFAULT_F_LOW
}

fn default_f_high() -> f64 {
    paramgate::noise::DEFAULT_F_HIGH
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            decoherence: true,
            zz: true,
            flux: true,
            flux_mode: FluxMode::QuasiStatic,
            f_low_hz: default_f_low(),
            f_high_hz: default_f_high(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exchange: Option<ExchangeRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<BudgetRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tomography: Option<TomographyRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xeb: Option<XebRunConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cryoscope: Option<CryoscopeRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predistort: Option<PredistortRun>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub project: Option<ProjectRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeRun {
    #[serde(rename = "t_end_ns")]
    pub t_end_ns: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_exchange_out")]
    pub output: String,
}

fn default_samples() -> usize {
    401
}

fn default_levels() -> usize {
    3
}

fn default_exchange_out() -> String {
    "exchange.csv".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetRun {
    pub scenario: Scenario,
    #[serde(default = "default_mc")]
    pub mc_realizations: usize,
    #[serde(default = "default_budget_out")]
    pub output: String,
}

fn default_mc() -> usize {
    1000
}

fn default_budget_out() -> String {
    "budget".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographyRun {
    #[serde(default = "default_shots")]
    pub shots: u64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_tomo_out")]
    pub output: String,
}

fn default_shots() -> u64 {
    10_000
}

fn default_max_iter() -> usize {
    1000
}

fn default_tol() -> f64 {
    1e-10
}

fn default_tomo_out() -> String {
    "tomography".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XebChannelKind {
    Ideal,
    Depolarizing,
    /// the configured drive simulated on a two-qubit device
    Device,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct XebRunConfig {
    pub channel: XebChannelKind,
    /// per-cycle depolarizing strength for the `depolarizing` channel
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    pub depths: Vec<usize>,
    pub sequences: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    /// cycle period for the `device` channel; defaults to the drive duration plus 30 ns
    #[serde(rename = "t_cycle_ns", default, skip_serializing_if = "Option::is_none")]
    pub t_cycle_ns: Option<f64>,
    #[serde(default)]
    pub reference: bool,
    #[serde(default = "default_xeb_out")]
    pub output: String,
}

fn default_xeb_out() -> String {
    "xeb".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistortionSection {
    pub amplitude: f64,
    #[serde(rename = "tau_ns")]
    pub tau_ns: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ringing_amplitude: Option<f64>,
    #[serde(rename = "ringing_freq_MHz", default, skip_serializing_if = "Option::is_none")]
    pub ringing_freq_mhz: Option<f64>,
    #[serde(rename = "ringing_decay_ns", default, skip_serializing_if = "Option::is_none")]
    pub ringing_decay_ns: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CryoscopeRun {
    pub distortion: DistortionSection,
    /// square-pulse amplitude, Φ₀
    pub amplitude: f64,
    pub samples: usize,
    #[serde(rename = "sample_rate_GHz", default = "default_fs")]
    pub sample_rate_ghz: f64,
    #[serde(default = "default_window")]
    pub savgol_window: usize,
    #[serde(default = "default_order")]
    pub savgol_order: usize,
    #[serde(default = "default_cryo_out")]
    pub output: String,
}

fn default_fs() -> f64 {
    1.0
}

fn default_window() -> usize {
    paramgate::pulseshape::DEFAULT_SAVGOL_WINDOW
}

fn default_order() -> usize {
    paramgate::pulseshape::DEFAULT_SAVGOL_ORDER
}

fn default_cryo_out() -> String {
    "cryoscope".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredistortRun {
    pub distortion: DistortionSection,
    /// calibration square-pulse amplitude, Φ₀
    #[serde(default = "default_cal_amp")]
    pub amplitude: f64,
    /// calibration trace length; defaults to four time constants plus 100 samples
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(rename = "sample_rate_GHz", default = "default_fs")]
    pub sample_rate_ghz: f64,
    #[serde(default = "default_window")]
    pub savgol_window: usize,
    #[serde(default = "default_order")]
    pub savgol_order: usize,
    #[serde(default = "default_taps")]
    pub fir_taps: usize,
    #[serde(default = "default_budget")]
    pub budget: usize,
    /// verification tone
    #[serde(rename = "target_freq_MHz", default = "default_target_freq")]
    pub target_freq_mhz: f64,
    #[serde(default = "default_target_amp")]
    pub target_amplitude: f64,
    #[serde(default = "default_target_samples")]
    pub target_samples: usize,
    /// Savitzky-Golay settings for the verification tone
    #[serde(default = "default_window")]
    pub verify_window: usize,
    #[serde(default = "default_verify_order")]
    pub verify_order: usize,
    #[serde(default = "default_predistort_out")]
    pub output: String,
}

fn default_cal_amp() -> f64 {
    0.05
}

fn default_taps() -> usize {
    paramgate::pulseshape::DEFAULT_FIR_TAPS
}

fn default_budget() -> usize {
    6000
}

fn default_target_freq() -> f64 {
    50.0
}

fn default_target_amp() -> f64 {
    0.03
}

fn default_target_samples() -> usize {
    300
}

fn default_verify_order() -> usize {
    6
}

fn default_predistort_out() -> String {
    "predistort".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectRun {
    /// total qubit counts (common qubit included)
    pub sizes: Vec<usize>,
    /// Ω₁/2π of the first tone for each size
    #[serde(rename = "first_amplitude_MHz")]
    pub first_amplitude_mhz: Vec<f64>,
    /// nominal amplitude ratios Ω_j/Ω₁ per size, used only where equal
    /// coupling is infeasible
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratios: Vec<Vec<f64>>,
    /// scan window as fractions of the Bessel-predicted equal-sharing time
    #[serde(default = "default_window_frac")]
    pub window: [f64; 2],
    #[serde(default = "default_scan_points")]
    pub scan_points: usize,
    #[serde(rename = "ramp_ns", default = "default_ramp")]
    pub ramp_ns: f64,
    #[serde(default = "default_project_mc")]
    pub mc_realizations: usize,
    #[serde(default = "default_project_out")]
    pub output: String,
}

fn default_window_frac() -> [f64; 2] {
    [0.8, 1.2]
}

fn default_scan_points() -> usize {
    81
}

fn default_project_mc() -> usize {
    100
}

fn default_project_out() -> String {
    "project".into()
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> CliError {
    CliError::Config {
        path: path.into(),
        message: message.into(),
    }
}

fn positive(path: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be positive and finite, got {v}")))
    }
}

fn finite(path: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(invalid(path, format!("must be finite, got {v}")))
    }
}

impl ScenarioConfig {
    /// Parses and validates; `origin` only labels error messages.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let de = toml::de::Deserializer::parse(text).map_err(|e| invalid(origin, e.to_string()))?;
        let cfg: ScenarioConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            invalid(
                if path == "." { origin.to_string() } else { format!("{origin}: {path}") },
                e.into_inner().message().trim().to_string(),
            )
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file, or a bundled scenario by name (optionally `bundled:NAME`).
    pub fn load(spec: &str) -> Result<Self> {
        let name = spec.strip_prefix("bundled:").unwrap_or(spec);
        let path = Path::new(spec);
        if !path.exists() || spec.starts_with("bundled:") {
            if let Some(text) = bundled(name) {
                return Self::parse(text, name);
            }
        }
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Read {
            path: spec.to_string(),
            source: e,
        })?;
        Self::parse(&text, spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(d) = &self.device {
            d.validate()?;
        }
        if let Some(d) = &self.drive {
            let n = self.device.as_ref().map(|d| d.qubit.len());
            d.validate(n)?;
        }
        if !(self.noise.f_low_hz > 0.0 && self.noise.f_high_hz > self.noise.f_low_hz) {
            return Err(invalid("noise", "need 0 < f_low_Hz < f_high_Hz"));
        }
        self.run.validate(self)
    }

    pub fn device(&self) -> Result<&DeviceSection> {
        self.device.as_ref().ok_or_else(|| invalid("device", "section is required"))
    }

    pub fn drive(&self) -> Result<&DriveSection> {
        self.drive.as_ref().ok_or_else(|| invalid("drive", "section is required"))
    }
}

impl DeviceSection {
    fn validate(&self) -> Result<()> {
        positive("device.bus_freq_GHz", self.bus_freq_ghz)?;
        if !(self.flux_noise_uphi0 >= 0.0) {
            return Err(invalid("device.flux_noise_uPhi0", "must be non-negative"));
        }
        if let Some(s) = self.sweet_spot_ghz {
            positive("device.sweet_spot_GHz", s)?;
            if let Some(q0) = self.qubit.first() {
                if q0.freq_ghz > s {
                    return Err(invalid("device.sweet_spot_GHz", "must not lie below qubit 0"));
                }
            }
        }
        if let Some(s) = self.flux_slope_mhz_per_phi0 {
            finite("device.flux_slope_MHz_per_Phi0", s)?;
        }
        if self.qubit.len() < 2 {
            return Err(invalid("device.qubit", "need the common qubit and at least one partner"));
        }
        for (i, q) in self.qubit.iter().enumerate() {
            let p = |f: &str| format!("device.qubit[{i}].{f}");
            positive(&p("freq_GHz"), q.freq_ghz)?;
            finite(&p("anharm_MHz"), q.anharm_mhz)?;
            finite(&p("qb_bus_coupling_MHz"), q.qb_bus_coupling_mhz)?;
            positive(&p("T1_us"), q.t1_us)?;
            positive(&p("T2echo_us"), q.t2echo_us)?;
            if q.t2echo_us > 2.0 * q.t1_us {
                return Err(invalid(p("T2echo_us"), "must not exceed 2·T1_us"));
            }
            finite(&p("zz_kHz"), q.zz_khz)?;
        }
        Ok(())
    }

    pub fn flux_map(&self) -> Option<FluxMap> {
        self.sweet_spot_ghz
            .map(|s| FluxMap::from_operating_point(ghz(s), ghz(self.qubit[0].freq_ghz)))
    }

    pub fn to_params(&self) -> DeviceParams {
        let qubits = self
            .qubit
            .iter()
            .map(|q| QubitParams {
                freq: ghz(q.freq_ghz),
                anharm: mhz(q.anharm_mhz),
                bus_coupling: mhz(q.qb_bus_coupling_mhz),
                t1: us(q.t1_us),
                t2echo: us(q.t2echo_us),
            })
            .collect();
        let flux_slope = match (self.flux_slope_mhz_per_phi0, self.flux_map()) {
            (Some(s), _) => Some(mhz(s)),
            (None, Some(m)) => Some(m.slope(0.0)),
            _ => None,
        };
        DeviceParams {
            qubits,
            bus_freq: ghz(self.bus_freq_ghz),
            zz: self.qubit[1..].iter().map(|q| khz(q.zz_khz)).collect(),
            flux_noise_amp: self.flux_noise_uphi0 * 1e-6,
            flux_slope,
        }
    }
}

impl DriveSection {
    fn validate(&self, n_qubits: Option<usize>) -> Result<()> {
        positive("drive.duration_ns", self.duration_ns)?;
        if !(self.ramp_ns >= 0.0) || 2.0 * self.ramp_ns > self.duration_ns {
            return Err(invalid("drive.ramp_ns", "must be non-negative and fit twice in duration_ns"));
        }
        if let Some(g) = self.gate_ns {
            positive("drive.gate_ns", g)?;
            if g <= self.ramp_ns {
                return Err(invalid("drive.gate_ns", "must exceed ramp_ns"));
            }
        }
        if self.tone.is_empty() {
            return Err(invalid("drive.tone", "need at least one tone"));
        }
        for (i, t) in self.tone.iter().enumerate() {
            let p = |f: &str| format!("drive.tone[{i}].{f}");
            if t.target == 0 || n_qubits.is_some_and(|n| t.target >= n) {
                return Err(invalid(p("target"), format!("{} is not a partner qubit", t.target)));
            }
            if self.tone[..i].iter().any(|u| u.target == t.target) {
                return Err(invalid(p("target"), format!("qubit {} is driven twice", t.target)));
            }
            if !(t.amplitude_mhz >= 0.0) || !t.amplitude_mhz.is_finite() {
                return Err(invalid(p("amplitude_MHz"), "must be non-negative and finite"));
            }
            finite(&p("freq_MHz"), t.freq_mhz)?;
            finite(&p("phase_rad"), t.phase_rad)?;
        }
        Ok(())
    }

    /// Device indices of the driven partners, in tone order.
    pub fn targets(&self) -> Vec<usize> {
        self.tone.iter().map(|t| t.target).collect()
    }

    /// Restricts `device` to the common qubit plus the driven partners and
    /// builds the (possibly calibrated) drive on the restricted device.
    pub fn build(&self, device: &DeviceParams) -> Result<(DeviceParams, DriveConfig)> {
        let dev = device.subset(&self.targets())?;
        let local: Vec<usize> = (1..=self.tone.len()).collect();
        let duration = ns(self.duration_ns);
        let ramp = ns(self.ramp_ns);
        let eps = match self.calibration {
            Calibration::None => None,
            Calibration::WState => {
                let gate = ns(self.gate_ns.unwrap_or(self.duration_ns));
                let g = w_coupling_for_time(gate - ramp, local.len());
                Some(calibrate_amplitudes(&dev, &local, g)?)
            }
            Calibration::Equalize => {
                let first = mhz(self.tone[0].amplitude_mhz) / dev.detuning(1).abs();
                Some(equalize_amplitudes(&dev, &local, first)?.0)
            }
        };
        let tones = match eps {
            None => self
                .tone
                .iter()
                .zip(&local)
                .map(|(t, &j)| Tone {
                    target: j,
                    amplitude: mhz(t.amplitude_mhz),
                    frequency: mhz(t.freq_mhz),
                    phase: t.phase_rad,
                })
                .collect(),
            Some(eps) => {
                let mut d = DriveConfig::from_epsilons(&dev, &local, &eps, duration, ramp);
                for (tone, t) in d.tones.iter_mut().zip(&self.tone) {
                    tone.phase = t.phase_rad;
                }
                d.tones
            }
        };
        let drive = DriveConfig {
            tones,
            duration,
            ramp,
        };
        drive.validate()?;
        Ok((dev, drive))
    }
}

impl NoiseSection {
    /// Enabled channels for `device`; flux noise needs a known slope.
    pub fn model(&self, device: &DeviceParams) -> NoiseModel {
        let flux = match device.flux_slope {
            Some(slope) if self.flux && device.flux_noise_amp > 0.0 => Some(FluxNoise {
                amplitude: device.flux_noise_amp,
                slope,
                f_low: self.f_low_hz,
                f_high: self.f_high_hz,
                mode: self.flux_mode,
            }),
            _ => None,
        };
        NoiseModel {
            decoherence: self.decoherence.then(|| Decoherence {
                t1: device.t1s(),
                tphi: device.tphis(),
            }),
            zz: self.zz.then(|| device.zz.clone()),
            flux,
        }
    }

    pub fn any(&self) -> bool {
        self.decoherence || self.zz || self.flux
    }
}

impl DistortionSection {
    fn validate(&self, path: &str) -> Result<()> {
        if !(self.amplitude > -1.0) || !self.amplitude.is_finite() {
            return Err(invalid(format!("{path}.amplitude"), "must be finite and > -1"));
        }
        positive(&format!("{path}.tau_ns"), self.tau_ns)?;
        let parts = [
            self.ringing_amplitude.is_some(),
            self.ringing_freq_mhz.is_some(),
            self.ringing_decay_ns.is_some(),
        ];
        if parts.iter().any(|&p| p) && !parts.iter().all(|&p| p) {
            return Err(invalid(
                path,
                "ringing_amplitude, ringing_freq_MHz and ringing_decay_ns go together",
            ));
        }
        if let Some(d) = self.ringing_decay_ns {
            positive(&format!("{path}.ringing_decay_ns"), d)?;
        }
        Ok(())
    }

    pub fn model(&self) -> DistortionModel {
        DistortionModel {
            amplitude: self.amplitude,
            tau: ns(self.tau_ns),
            ringing: self.ringing_amplitude.map(|a| Ringing {
                amplitude: a,
                frequency: self.ringing_freq_mhz.unwrap_or(0.0) * 1e6,
                decay: ns(self.ringing_decay_ns.unwrap_or(1.0)),
            }),
        }
    }
}

fn need_device_and_drive(cfg: &ScenarioConfig, command: &str) -> Result<()> {
    cfg.device()
        .map_err(|_| invalid("device", format!("section is required by run.{command}")))?;
    cfg.drive()
        .map_err(|_| invalid("drive", format!("section is required by run.{command}")))?;
    Ok(())
}

impl RunSection {
    fn validate(&self, cfg: &ScenarioConfig) -> Result<()> {
        if let Some(r) = &self.exchange {
            need_device_and_drive(cfg, "exchange")?;
            positive("run.exchange.t_end_ns", r.t_end_ns)?;
            if r.samples < 2 {
                return Err(invalid("run.exchange.samples", "need at least 2"));
            }
            if r.levels < 2 {
                return Err(invalid("run.exchange.levels", "need at least 2"));
            }
        }
        if let Some(r) = &self.budget {
            need_device_and_drive(cfg, "budget")?;
            let partners = cfg.drive()?.tone.len();
            if r.scenario != Scenario::WState && partners != 1 {
                return Err(invalid("run.budget.scenario", "two-qubit scenarios take exactly one tone"));
            }
        }
        if let Some(r) = &self.tomography {
            need_device_and_drive(cfg, "tomography")?;
            if r.shots == 0 {
                return Err(invalid("run.tomography.shots", "must be positive"));
            }
            positive("run.tomography.tol", r.tol)?;
        }
        if let Some(r) = &self.xeb {
            let p = |f: &str| format!("run.xeb.{f}");
            if r.depths.is_empty() || r.depths.contains(&0) {
                return Err(invalid(p("depths"), "need positive depths"));
            }
            if r.sequences == 0 {
                return Err(invalid(p("sequences"), "must be positive"));
            }
            match r.channel {
                XebChannelKind::Depolarizing => match r.p {
                    Some(x) if (0.0..=1.0).contains(&x) => {}
                    _ => return Err(invalid(p("p"), "depolarizing channel needs 0 ≤ p ≤ 1")),
                },
                XebChannelKind::Device => {
                    need_device_and_drive(cfg, "xeb")?;
                    if cfg.drive()?.tone.len() != 1 {
                        return Err(invalid("drive.tone", "device XEB drives exactly one partner"));
                    }
                    if let Some(t) = r.t_cycle_ns {
                        if t < cfg.drive()?.duration_ns {
                            return Err(invalid(p("t_cycle_ns"), "must cover the drive duration"));
                        }
                    }
                }
                XebChannelKind::Ideal => {}
            }
        }
        if let Some(r) = &self.cryoscope {
            r.distortion.validate("run.cryoscope.distortion")?;
            positive("run.cryoscope.sample_rate_GHz", r.sample_rate_ghz)?;
            if cfg.device.as_ref().and_then(|d| d.sweet_spot_ghz).is_none() {
                return Err(invalid("device.sweet_spot_GHz", "required by run.cryoscope"));
            }
            if r.samples < r.savgol_window + 2 {
                return Err(invalid("run.cryoscope.samples", "shorter than the filter window"));
            }
        }
        if let Some(r) = &self.predistort {
            r.distortion.validate("run.predistort.distortion")?;
            positive("run.predistort.sample_rate_GHz", r.sample_rate_ghz)?;
            positive("run.predistort.amplitude", r.amplitude)?;
            if cfg.device.as_ref().and_then(|d| d.sweet_spot_ghz).is_none() {
                return Err(invalid("device.sweet_spot_GHz", "required by run.predistort"));
            }
            if r.fir_taps < 2 {
                return Err(invalid("run.predistort.fir_taps", "need at least 2"));
            }
        }
        if let Some(r) = &self.project {
            let d = cfg
                .device
                .as_ref()
                .ok_or_else(|| invalid("device", "section is required by run.project"))?;
            if r.sizes.len() != r.first_amplitude_mhz.len() {
                return Err(invalid(
                    "run.project.first_amplitude_MHz",
                    format!("need one amplitude per size ({} sizes)", r.sizes.len()),
                ));
            }
            for (i, &n) in r.sizes.iter().enumerate() {
                if n < 2 || n > d.qubit.len() {
                    return Err(invalid(
                        format!("run.project.sizes[{i}]"),
                        format!("{n} is outside 2..={}", d.qubit.len()),
                    ));
                }
            }
            if !r.ratios.is_empty() && r.ratios.len() != r.sizes.len() {
                return Err(invalid("run.project.ratios", "need one ratio list per size"));
            }
            for (i, (row, &n)) in r.ratios.iter().zip(&r.sizes).enumerate() {
                if row.len() != n - 1 {
                    return Err(invalid(format!("run.project.ratios[{i}]"), format!("need {} entries", n - 1)));
                }
                for (k, &x) in row.iter().enumerate() {
                    positive(&format!("run.project.ratios[{i}][{k}]"), x)?;
                }
            }
            for (i, &a) in r.first_amplitude_mhz.iter().enumerate() {
                positive(&format!("run.project.first_amplitude_MHz[{i}]"), a)?;
            }
            if !(r.window[0] > 0.0 && r.window[1] > r.window[0]) {
                return Err(invalid("run.project.window", "need 0 < lo < hi"));
            }
            if !(r.ramp_ns >= 0.0) {
                return Err(invalid("run.project.ramp_ns", "must be non-negative"));
            }
            if r.scan_points < 3 {
                return Err(invalid("run.project.scan_points", "need at least 3"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn err_path(text: &str) -> String {
        match ScenarioConfig::parse(text, "t") {
            Err(CliError::Config { path, .. }) => path,
            other => panic!("expected a config error, got {other:?}"),
        }
    }

    #[test]
    fn every_bundled_config_parses() {
        for name in bundled_names() {
            let cfg = ScenarioConfig::load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            let again = ScenarioConfig::parse(&cfg.to_toml(), name).unwrap();
            assert_eq!(cfg, again, "{name}");
        }
    }

    #[test]
    fn unknown_keys_rejected_with_path() {
        let mut text = bundled("table1_row1").unwrap().to_string();
        text = text.replace("T1_us = 31.7", "T1_us = 31.7\nT3_us = 1.0");
        let p = err_path(&text);
        assert!(p.contains("device.qubit[1]"), "{p}");
    }

    #[test]
    fn bad_values_report_field() {
        let text = bundled("table1_row1").unwrap().replace("T1_us = 31.7", "T1_us = -31.7");
        assert_eq!(err_path(&text), "device.qubit[1].T1_us");
        let text = bundled("table1_row1").unwrap().replace("target = 1", "target = 7");
        assert_eq!(err_path(&text), "drive.tone[0].target");
    }

    #[test]
    fn wrong_type_reports_field() {
        let text = bundled("table1_row1").unwrap().replace("duration_ns = 320.0", "duration_ns = \"long\"");
        assert_eq!(err_path(&text), "t: drive.duration_ns");
    }

    #[test]
    fn calibrated_drive_hits_gate_time() {
        let cfg = ScenarioConfig::load("table1_row1").unwrap();
        let dev = cfg.device().unwrap().to_params();
        let (sub, drive) = cfg.drive().unwrap().build(&dev).unwrap();
        assert_eq!(sub.n_qubits(), 2);
        let g = paramgate::device::effective_coupling(sub.exchange_coupling(1).unwrap(), &drive.epsilons(), 0).abs();
        let t = paramgate::device::w_state_time(g, 1).unwrap() + drive.ramp;
        assert!((t - 320e-9).abs() < 1e-12, "{t}");
        assert!((drive.tones[0].frequency - sub.detuning(1).abs()).abs() < 1.0);
    }

    #[test]
    fn ring_slope_from_sweet_spot() {
        let cfg = ScenarioConfig::load("table1_row1").unwrap();
        let dev = cfg.device().unwrap().to_params();
        let ring = paramgate::device::ring_device();
        assert!((dev.flux_slope.unwrap() - ring.flux_slope.unwrap()).abs() < 1e-6 * ring.flux_slope.unwrap().abs());
        assert_eq!(dev.qubits, ring.qubits);
    }

    #[test]
    fn channels_can_be_switched_off() {
        let cfg = ScenarioConfig::load("channels_off").unwrap();
        let dev = cfg.device().unwrap().to_params();
        assert_eq!(cfg.noise.model(&dev), NoiseModel::default());
    }
}
