//! Experiment configuration. File units are MHz (frequencies divided by 2π), ns, μm, μK and nm;
//! everything is converted to SI once, when the library parameters are built.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use rydpump::floquet::{IntegratorSettings, SweepSpacing};
use rydpump::lindblad::DissipationMode;
use rydpump::protocol::Engine;
use rydpump::stabilizer::{PumpScheme, StabilizerKind};
use rydpump::system::{
    make_geometry, matched_spacing, BeamGeometry, GeometryKind, KickForm, LevelScheme, PhysicalParams, PulseParams,
    QubitState, System, VdwRange, C6_RB, GAMMA_P_RB,
};

use crate::CliError;

/// MHz (÷2π) to rad/s.
fn mhz(v: f64) -> f64 {
    2.0 * PI * (v * 1e6)
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub system: SystemSection,
    pub physical: PhysicalSection,
    pub spectrum: SpectrumSection,
    pub liouvillian: LiouvillianSection,
    pub protocol: ProtocolSection,
    pub noise: NoiseSection,
    pub tolerance: ToleranceSection,
    pub output: OutputSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemSection {
    pub geometry: GeometryKind,
    /// Atom count for `spectrum`; protocol commands size the register from their target.
    pub atoms: usize,
    /// Δ/Ω. Unset means 15.7 for `bell` and `noise`, 50 elsewhere.
    pub detuning_ratio: Option<f64>,
    pub rabi_mhz: f64,
    pub width: f64,
    pub kicks: usize,
    /// Unset means the matched spacing (C6/Δ)^(1/6).
    pub spacing_um: Option<f64>,
    pub levels: LevelScheme,
    pub kick_form: KickForm,
    pub vdw_range: VdwRange,
}

impl Default for SystemSection {
    fn default() -> Self {
        SystemSection {
            geometry: GeometryKind::Zigzag,
            atoms: 2,
            detuning_ratio: None,
            rabi_mhz: 5.0,
            width: 0.6,
            kicks: 100,
            spacing_um: None,
            levels: LevelScheme::Qutrit,
            kick_form: KickForm::Cosine,
            vdw_range: VdwRange::All,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicalSection {
    /// MHz μm^6; unset means the ⁸⁷Rb value.
    pub c6_mhz_um6: Option<f64>,
    /// Lifetime of |p> (ns); unset means 26.2 ns.
    pub p_lifetime_ns: Option<f64>,
    /// Rydberg decay rate γr/2π (MHz).
    pub rydberg_decay_mhz: f64,
    /// Ωp in units of γp.
    pub pump_rabi_ratio: f64,
    pub temperature_uk: f64,
    pub position_sigma_nm: [f64; 3],
    pub wavelength_red_nm: f64,
    pub wavelength_blue_nm: f64,
    pub beams: BeamGeometry,
}

impl Default for PhysicalSection {
    fn default() -> Self {
        PhysicalSection {
            c6_mhz_um6: None,
            p_lifetime_ns: None,
            rydberg_decay_mhz: 0.0,
            pump_rabi_ratio: 10.0,
            temperature_uk: 5.0,
            position_sigma_nm: [22.0, 25.0, 60.0],
            wavelength_red_nm: 780.0,
            wavelength_blue_nm: 480.0,
            beams: BeamGeometry::CounterPropagating,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Explicit Δ/Ω grid; overrides `start`/`stop`/`points`.
    pub ratios: Option<Vec<f64>>,
    pub start: f64,
    pub stop: f64,
    pub points: usize,
    pub spacing: SweepSpacing,
    /// One qubit label per atom from `0 1 + -`; every atom is driven on its label.
    pub probe: Option<String>,
    /// Hybridization needed to report a crossing.
    pub threshold: f64,
}

impl Default for SpectrumSection {
    fn default() -> Self {
        SpectrumSection {
            ratios: None,
            start: 14.0,
            stop: 16.0,
            points: 21,
            spacing: SweepSpacing::Matched,
            probe: None,
            threshold: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LiouvillianSection {
    /// Ωp/γp values.
    pub ratios: Vec<f64>,
    /// Length of the convergence traces (ns).
    pub duration_ns: f64,
    pub sample_every: usize,
}

impl Default for LiouvillianSection {
    fn default() -> Self {
        LiouvillianSection {
            ratios: vec![0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0],
            duration_ns: 6.0 * 26.2,
            sample_every: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DissipationKind {
    Reset,
    Lindblad,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSection {
    /// Unset means exact for `bell` and `noise`, effective elsewhere.
    pub engine: Option<Engine>,
    pub dissipation: DissipationKind,
    /// Lindblad-stage length (ns); unset means 12/γp.
    pub dissipation_ns: Option<f64>,
    /// Unset means 8 for `bell` and `noise`, 30 for `cluster`, 60 for `graph` and `purify`.
    pub cycles: Option<usize>,
    pub target_fidelity: f64,
    /// Target state; each command has its own default and accepted kinds.
    pub state: Option<StabilizerKind>,
    pub scheme: Option<PumpScheme>,
    pub sizes: Vec<usize>,
    pub max_cycles: usize,
    /// Number of evenly spaced β values in [0, 2π).
    pub betas: usize,
}

impl Default for ProtocolSection {
    fn default() -> Self {
        ProtocolSection {
            engine: None,
            dissipation: DissipationKind::Reset,
            dissipation_ns: None,
            cycles: None,
            target_fidelity: 0.99,
            state: None,
            scheme: None,
            sizes: (3..=8).collect(),
            max_cycles: 400,
            betas: 16,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    pub samples: usize,
    pub doppler: bool,
    pub position: bool,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection { samples: 101, doppler: true, position: true }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceSection {
    pub integrator: f64,
    pub initial_steps: usize,
    pub max_steps: usize,
}

impl Default for ToleranceSection {
    fn default() -> Self {
        let s = IntegratorSettings::default();
        ToleranceSection { integrator: s.tolerance, initial_steps: s.initial_steps, max_steps: s.max_steps }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "out".into() }
    }
}

fn positive(name: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::Validation(format!("{name} must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// SHA-256 of the canonical serialization after command-line overrides; the output
    /// location is not part of the experiment and is left out.
    pub fn hash(&self) -> String {
        let mut identity = self.clone();
        identity.output = OutputSection::default();
        let canonical = toml::to_string(&identity).expect("config serializes");
        Sha256::digest(canonical.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn gamma_p(&self) -> Result<f64, CliError> {
        match self.physical.p_lifetime_ns {
            None => Ok(GAMMA_P_RB),
            Some(ns) => Ok(1.0 / (positive("p_lifetime_ns", ns)? / 1e9)),
        }
    }

    pub fn physical(&self) -> Result<PhysicalParams, CliError> {
        let p = &self.physical;
        let gamma_p = self.gamma_p()?;
        let physical = PhysicalParams {
            c6: p.c6_mhz_um6.map_or(C6_RB, mhz),
            gamma_p,
            gamma_r: mhz(p.rydberg_decay_mhz),
            pump_rabi: p.pump_rabi_ratio * gamma_p,
            temperature: p.temperature_uk / 1e6,
            position_sigma: p.position_sigma_nm.map(|s| s / 1e9),
            wavelength_red: p.wavelength_red_nm / 1e9,
            wavelength_blue: p.wavelength_blue_nm / 1e9,
            beams: p.beams,
            ..PhysicalParams::default()
        };
        physical.validate()?;
        Ok(physical)
    }

    pub fn pulse(&self, default_ratio: f64) -> Result<PulseParams, CliError> {
        let s = &self.system;
        let rabi = mhz(positive("rabi_mhz", s.rabi_mhz)?);
        let ratio = s.detuning_ratio.unwrap_or(default_ratio);
        Ok(PulseParams::new(rabi, s.width, ratio * rabi, s.kicks)?)
    }

    /// The array for `kind` with `n` atoms; the level scheme follows the dissipation mode.
    pub fn system(&self, kind: GeometryKind, n: usize, default_ratio: f64) -> Result<System, CliError> {
        let pulse = self.pulse(default_ratio)?;
        let physical = self.physical()?;
        let spacing = match self.system.spacing_um {
            Some(r) => positive("spacing_um", r)?,
            None => matched_spacing(physical.c6, pulse.detuning),
        };
        let mut system = System::new(make_geometry(kind, n, spacing)?, pulse, physical);
        system.levels = self.system.levels;
        system.kick_form = self.system.kick_form;
        system.vdw_range = self.system.vdw_range;
        Ok(system)
    }

    pub fn dissipation(&self) -> Result<DissipationMode, CliError> {
        Ok(match self.protocol.dissipation {
            DissipationKind::Reset => DissipationMode::Reset,
            DissipationKind::Lindblad => match self.protocol.dissipation_ns {
                None => DissipationMode::standard_lindblad(self.gamma_p()?),
                Some(ns) => DissipationMode::Lindblad { duration: positive("dissipation_ns", ns)? / 1e9 },
            },
        })
    }

    pub fn integrator(&self) -> Result<IntegratorSettings, CliError> {
        let t = &self.tolerance;
        if t.initial_steps == 0 || t.max_steps < t.initial_steps {
            return Err(CliError::Validation("need 0 < initial_steps <= max_steps".into()));
        }
        Ok(IntegratorSettings {
            tolerance: positive("tolerance.integrator", t.integrator)?,
            initial_steps: t.initial_steps,
            max_steps: t.max_steps,
            ..IntegratorSettings::default()
        })
    }

    pub fn target_fidelity(&self) -> Result<f64, CliError> {
        let f = self.protocol.target_fidelity;
        if (0.0..1.0).contains(&f) {
            Ok(f)
        } else {
            Err(CliError::Validation(format!("target_fidelity {f} outside [0, 1)")))
        }
    }

    pub fn ratio_grid(&self) -> Result<Vec<f64>, CliError> {
        let s = &self.spectrum;
        let grid: Vec<f64> = match &s.ratios {
            Some(r) => r.clone(),
            None if s.points == 1 => vec![s.start],
            None => (0..s.points)
                .map(|k| s.start + (s.stop - s.start) * k as f64 / (s.points - 1) as f64)
                .collect(),
        };
        if grid.is_empty() {
            return Err(CliError::Validation("spectrum grid is empty".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|r| !r.is_finite()) {
            return Err(CliError::Validation("spectrum grid must be finite and strictly increasing".into()));
        }
        Ok(grid)
    }

    /// Probe labels for `n` atoms; defaults to all `1`.
    pub fn probe(&self, n: usize) -> Result<Vec<QubitState>, CliError> {
        let Some(label) = &self.spectrum.probe else {
            return Ok(vec![QubitState::One; n]);
        };
        let states: Vec<QubitState> = label
            .chars()
            .map(|ch| match ch {
                '0' => Ok(QubitState::Zero),
                '1' => Ok(QubitState::One),
                '+' => Ok(QubitState::Plus),
                '-' => Ok(QubitState::Minus),
                other => Err(CliError::Validation(format!("probe label {other:?}"))),
            })
            .collect::<Result<_, _>>()?;
        if states.len() != n {
            return Err(CliError::Validation(format!("probe {label:?} has {} labels for {n} atoms", states.len())));
        }
        Ok(states)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<ExperimentConfig>("seed = 1\n[system]\natomz = 3\n").is_err());
        assert!(toml::from_str::<ExperimentConfig>("bogus = 1\n").is_err());
    }

    #[test]
    fn defaults_reproduce_library_parameters() {
        let cfg = ExperimentConfig::default();
        let sys = cfg.system(GeometryKind::Zigzag, 2, 15.7).unwrap();
        let lib = System::standard(GeometryKind::Zigzag, 2, 15.7).unwrap();
        assert_eq!(sys.pulse, lib.pulse);
        assert_eq!(sys.physical.c6, lib.physical.c6);
        assert_eq!(sys.physical.gamma_p, lib.physical.gamma_p);
        assert_eq!(sys.physical.temperature, lib.physical.temperature);
        assert_eq!(sys.physical.position_sigma, lib.physical.position_sigma);
        assert!((sys.geometry.spacing() - lib.geometry.spacing()).abs() < 1e-12);
    }

    #[test]
    fn state_and_units_parse() {
        let cfg: ExperimentConfig = toml::from_str(
            "[protocol]\nstate = { kind = \"chain\", n = 4 }\ndissipation = \"lindblad\"\ndissipation_ns = 300\n\
             [physical]\np_lifetime_ns = 20\n",
        )
        .unwrap();
        assert_eq!(cfg.protocol.state, Some(StabilizerKind::Chain(4)));
        assert_eq!(cfg.dissipation().unwrap(), DissipationMode::Lindblad { duration: 300e-9 });
        assert!((cfg.gamma_p().unwrap() - 5e7).abs() < 1e-3);
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.output.dir = "elsewhere".into();
        assert_eq!(a.hash(), b.hash());
        b.seed = 9;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }

    #[test]
    fn empty_grid_is_invalid() {
        let mut cfg = ExperimentConfig::default();
        cfg.spectrum.points = 0;
        assert!(matches!(cfg.ratio_grid(), Err(CliError::Validation(_))));
        cfg.spectrum.ratios = Some(vec![15.0, 14.0]);
        assert!(cfg.ratio_grid().is_err());
    }
}
