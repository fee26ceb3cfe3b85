//! Atom arrays, pulse sequences and the two Hamiltonians of one drive period.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{c, CMat, ONE, ZERO};

pub const LEVEL_0: usize = 0;
pub const LEVEL_1: usize = 1;
pub const LEVEL_R: usize = 2;
pub const LEVEL_P: usize = 3;

/// C6/(2π) = 1542.6 GHz μm^6, in rad/s μm^6.
pub const C6_RB: f64 = 2.0 * PI * 1542.6e9;
/// Intermediate-state decay rate 1/(26.2 ns).
pub const GAMMA_P_RB: f64 = 1.0 / 26.2e-9;
/// Rydberg decay rate with γr/(2π) = 0.313 kHz.
pub const GAMMA_R_RB: f64 = 2.0 * PI * 0.313e3;
pub const MASS_RB87: f64 = 1.443e-25;
pub const BOLTZMANN: f64 = 1.380649e-23;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SystemError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("time {t:.4e} s outside the kicked-pulse window [0, {t_b:.4e}] s")]
    OutsidePulse { t: f64, t_b: f64 },
    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),
    #[error("atoms {0} and {1} are {2:.3} μm apart, below the 0.5 μm guard")]
    AtomsTooClose(usize, usize, f64),
    #[error("drive covers {0} atoms but the system has {1}")]
    DriveSize(usize, usize),
    #[error("atom {0} is driven by two simultaneous pumps")]
    OverlappingDrives(usize),
}

/// Local levels kept per atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LevelScheme {
    /// `|0>, |1>, |r>`
    Qutrit,
    /// `|0>, |1>, |r>, |p>`
    WithIntermediate,
}

impl LevelScheme {
    pub fn dim(self) -> usize {
        match self {
            LevelScheme::Qutrit => 3,
            LevelScheme::WithIntermediate => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KickForm {
    /// `Ω_b(t) cos(Δt)` coupling with the Stark shift compensated by a second tone.
    Cosine,
    /// `Ω_b(t)/2 · e^{iΔt}` coupling.
    SingleSideband,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VdwRange {
    All,
    NearestNeighbor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BeamGeometry {
    CounterPropagating,
    CoPropagating,
}

/// Resonant pulse `a` followed by a Gaussian kicked pulse `b`, repeated 𝒩 times per pump.
#[derive(Clone, Debug, PartialEq)]
pub struct PulseParams {
    /// Peak Rabi frequency Ω (rad/s).
    pub rabi: f64,
    /// Gaussian width parameter α.
    pub width: f64,
    /// Kick detuning Δ (rad/s).
    pub detuning: f64,
    /// Kicks per pump 𝒩.
    pub kicks: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PulseTimings {
    /// Resonant pulse length t_a.
    pub resonant: f64,
    /// Kicked pulse centre t_f.
    pub center: f64,
    /// Kicked pulse length t_b = 4 t_f.
    pub kicked: f64,
    /// Period T = t_a + t_b.
    pub period: f64,
    /// Whole coherent stage 𝒩T.
    pub coherent: f64,
}

impl PulseParams {
    pub fn new(rabi: f64, width: f64, detuning: f64, kicks: usize) -> Result<Self, SystemError> {
        if !(rabi > 0.0 && rabi.is_finite()) {
            return Err(SystemError::InvalidParameter(format!("Rabi frequency {rabi}")));
        }
        if !(width > 0.0 && width.is_finite()) {
            return Err(SystemError::InvalidParameter(format!("pulse width {width}")));
        }
        if !detuning.is_finite() {
            return Err(SystemError::InvalidParameter(format!("detuning {detuning}")));
        }
        if kicks == 0 {
            return Err(SystemError::InvalidParameter("kick count must be >= 1".into()));
        }
        Ok(PulseParams { rabi, width, detuning, kicks })
    }

    /// Ω/(2π) = 5 MHz, α = 0.6, 𝒩 = 100 at the given Δ/Ω.
    pub fn standard(detuning_ratio: f64) -> Self {
        let rabi = 2.0 * PI * 5e6;
        PulseParams { rabi, width: 0.6, detuning: detuning_ratio * rabi, kicks: 100 }
    }

    pub fn detuning_ratio(&self) -> f64 {
        self.detuning / self.rabi
    }

    pub fn with_detuning_ratio(&self, ratio: f64) -> Self {
        PulseParams { detuning: ratio * self.rabi, ..self.clone() }
    }

    pub fn timings(&self) -> PulseTimings {
        pulse_timings(self)
    }

    /// Gaussian envelope Ω_b(t) = Ω exp[−(t−2t_f)²/(√2 α t_f)²].
    pub fn kick_envelope(&self, t: f64) -> f64 {
        let tf = self.timings().center;
        let w = 2f64.sqrt() * self.width * tf;
        self.rabi * (-((t - 2.0 * tf) / w).powi(2)).exp()
    }

    /// Ω_eff = Ω t_a / T.
    pub fn effective_rabi(&self) -> f64 {
        let tm = self.timings();
        self.rabi * tm.resonant / tm.period
    }
}

pub fn pulse_timings(p: &PulseParams) -> PulseTimings {
    let resonant = PI / (p.kicks as f64 * p.rabi);
    let center = (PI / 2.0).sqrt() / (p.width * p.rabi * libm::erf(2f64.sqrt() / p.width));
    let kicked = 4.0 * center;
    let period = resonant + kicked;
    PulseTimings { resonant, center, kicked, period, coherent: p.kicks as f64 * period }
}

/// Decay rates, dissipation drive and thermal parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalParams {
    /// rad/s μm^6
    pub c6: f64,
    pub gamma_p: f64,
    pub gamma_r: f64,
    /// Ωp coupling |r> to |p> during the dissipation stage.
    pub pump_rabi: f64,
    /// K
    pub temperature: f64,
    /// Position standard deviations (m) along x, y, z.
    pub position_sigma: [f64; 3],
    /// m
    pub wavelength_red: f64,
    /// m
    pub wavelength_blue: f64,
    /// kg
    pub mass: f64,
    pub beams: BeamGeometry,
}

impl Default for PhysicalParams {
    fn default() -> Self {
        PhysicalParams {
            c6: C6_RB,
            gamma_p: GAMMA_P_RB,
            gamma_r: 0.0,
            pump_rabi: 10.0 * GAMMA_P_RB,
            temperature: 5e-6,
            position_sigma: [22e-9, 25e-9, 60e-9],
            wavelength_red: 780e-9,
            wavelength_blue: 480e-9,
            mass: MASS_RB87,
            beams: BeamGeometry::CounterPropagating,
        }
    }
}

impl PhysicalParams {
    pub fn validate(&self) -> Result<(), SystemError> {
        let rates = [
            ("C6", self.c6),
            ("gamma_p", self.gamma_p),
            ("gamma_r", self.gamma_r),
            ("pump_rabi", self.pump_rabi),
            ("temperature", self.temperature),
            ("mass", self.mass),
        ];
        for (name, v) in rates {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(SystemError::InvalidParameter(format!("{name} = {v}")));
            }
        }
        if self.position_sigma.iter().any(|s| !(*s >= 0.0)) {
            return Err(SystemError::InvalidParameter("negative position sigma".into()));
        }
        if !(self.wavelength_red > 0.0 && self.wavelength_blue > 0.0) {
            return Err(SystemError::InvalidParameter("wavelengths must be positive".into()));
        }
        Ok(())
    }

    /// Two-photon wavevector along the beam axis (1/m).
    pub fn effective_wavevector(&self) -> f64 {
        let kr = 2.0 * PI / self.wavelength_red;
        let kb = 2.0 * PI / self.wavelength_blue;
        match self.beams {
            BeamGeometry::CounterPropagating => (kb - kr).abs(),
            BeamGeometry::CoPropagating => kb + kr,
        }
    }

    /// Per-axis thermal velocity spread √(k_B T / m).
    pub fn velocity_sigma(&self) -> f64 {
        (BOLTZMANN * self.temperature / self.mass).sqrt()
    }
}

/// Spacing at which the pair interaction cancels the detuning, C6/R^6 = Δ.
pub fn matched_spacing(c6: f64, detuning: f64) -> f64 {
    (c6 / detuning.abs()).powf(1.0 / 6.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryKind {
    Zigzag,
    Tshape,
    Triangular,
    Square,
}

/// Atom positions in μm.
#[derive(Clone, Debug, PartialEq)]
pub struct Geometry {
    positions: Vec<[f64; 3]>,
    spacing: f64,
}

impl Geometry {
    pub fn new(positions: Vec<[f64; 3]>, spacing: f64) -> Result<Self, SystemError> {
        let g = Geometry { positions, spacing };
        for i in 0..g.n_atoms() {
            for j in (i + 1)..g.n_atoms() {
                let d = g.distance(i, j);
                if !(d > 0.0) {
                    return Err(SystemError::AtomsTooClose(i, j, d));
                }
            }
        }
        Ok(g)
    }

    pub fn n_atoms(&self) -> usize {
        self.positions.len()
    }

    pub fn positions(&self) -> &[[f64; 3]] {
        &self.positions
    }

    /// Nominal nearest-neighbour spacing R (μm).
    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = (self.positions[i], self.positions[j]);
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    }

    /// Pairs whose separation equals the nominal spacing.
    pub fn nearest_neighbors(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n_atoms() {
            for j in (i + 1)..self.n_atoms() {
                if (self.distance(i, j) - self.spacing).abs() < 1e-6 * self.spacing {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// Copy with all coordinates scaled so the nominal spacing becomes `spacing`.
    pub fn rescaled(&self, spacing: f64) -> Result<Geometry, SystemError> {
        let f = spacing / self.spacing;
        let positions = self.positions.iter().map(|p| [p[0] * f, p[1] * f, p[2] * f]).collect();
        Geometry::new(positions, spacing)
    }

    /// Copy with every atom displaced by `offsets` (μm), rejecting pairs closer than 0.5 μm.
    pub fn displaced(&self, offsets: &[[f64; 3]]) -> Result<Geometry, SystemError> {
        let positions: Vec<[f64; 3]> = self
            .positions
            .iter()
            .zip(offsets)
            .map(|(p, o)| [p[0] + o[0], p[1] + o[1], p[2] + o[2]])
            .collect();
        let g = Geometry { positions, spacing: self.spacing };
        for i in 0..g.n_atoms() {
            for j in (i + 1)..g.n_atoms() {
                let d = g.distance(i, j);
                if d < 0.5 {
                    return Err(SystemError::AtomsTooClose(i, j, d));
                }
            }
        }
        Ok(g)
    }
}

/// Standard layouts with nearest-neighbour spacing `r` (μm).
///
/// Zig-zag: atoms `i`, `i+1` and `i`, `i+2` are all at distance `r`.
/// T-shape: atom 1 in the middle, atoms 2-4 around it.
/// Triangular and square: the six-atom 2D lattices, numbered so that
/// the bonds 1-2, 2-3, 2-5, 4-5, 5-6 are nearest neighbours.
pub fn make_geometry(kind: GeometryKind, n: usize, r: f64) -> Result<Geometry, SystemError> {
    if n == 0 {
        return Err(SystemError::InvalidParameter("need at least one atom".into()));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(SystemError::InvalidParameter(format!("spacing {r}")));
    }
    let h = r * 3f64.sqrt() / 2.0;
    let positions: Vec<[f64; 3]> = match kind {
        GeometryKind::Zigzag => (0..n)
            .map(|i| [i as f64 * r / 2.0, (i % 2) as f64 * h, 0.0])
            .collect(),
        GeometryKind::Tshape => {
            if n != 4 {
                return Err(SystemError::UnsupportedGeometry(format!("tshape needs 4 atoms, got {n}")));
            }
            vec![[0.0, 0.0, 0.0], [-r, 0.0, 0.0], [r, 0.0, 0.0], [0.0, -r, 0.0]]
        }
        GeometryKind::Triangular => {
            if n != 6 {
                return Err(SystemError::UnsupportedGeometry(format!("triangular needs 6 atoms, got {n}")));
            }
            vec![
                [0.0, 0.0, 0.0],
                [r / 2.0, h, 0.0],
                [r, 0.0, 0.0],
                [r / 2.0, 3.0 * h, 0.0],
                [r, 2.0 * h, 0.0],
                [1.5 * r, 3.0 * h, 0.0],
            ]
        }
        GeometryKind::Square => {
            if n != 6 {
                return Err(SystemError::UnsupportedGeometry(format!("square needs 6 atoms, got {n}")));
            }
            vec![
                [0.0, 0.0, 0.0],
                [r, 0.0, 0.0],
                [2.0 * r, 0.0, 0.0],
                [0.0, r, 0.0],
                [r, r, 0.0],
                [2.0 * r, r, 0.0],
            ]
        }
    };
    Geometry::new(positions, r)
}

/// How one atom takes part in a pump: its coupled ground state |G> and which pulses reach it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomDrive {
    /// Amplitudes of |G> over `|0>, |1>`.
    pub ground: [C64; 2],
    pub resonant: bool,
    pub kicked: bool,
}

impl AtomDrive {
    pub fn new(ground: [C64; 2], resonant: bool, kicked: bool) -> Result<Self, SystemError> {
        let n2 = ground[0].norm_sqr() + ground[1].norm_sqr();
        if (n2 - 1.0).abs() > 1e-12 {
            return Err(SystemError::InvalidParameter(format!("|G> has norm^2 {n2}")));
        }
        if !resonant && !kicked {
            return Err(SystemError::InvalidParameter("atom drive addresses no pulse".into()));
        }
        Ok(AtomDrive { ground, resonant, kicked })
    }

    pub fn both(ground: QubitState) -> Self {
        AtomDrive { ground: ground.amps(), resonant: true, kicked: true }
    }

    pub fn resonant_only(ground: QubitState) -> Self {
        AtomDrive { ground: ground.amps(), resonant: true, kicked: false }
    }

    pub fn kicked_only(ground: QubitState) -> Self {
        AtomDrive { ground: ground.amps(), resonant: false, kicked: true }
    }

    /// |G⊥>, the orthogonal complement of |G> in the qubit plane.
    pub fn complement(&self) -> [C64; 2] {
        [-self.ground[1].conj(), self.ground[0].conj()]
    }
}

/// The four named qubit states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum QubitState {
    Zero,
    One,
    Plus,
    Minus,
}

impl QubitState {
    pub fn amps(self) -> [C64; 2] {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            QubitState::Zero => [ONE, ZERO],
            QubitState::One => [ZERO, ONE],
            QubitState::Plus => [c(s, 0.0), c(s, 0.0)],
            QubitState::Minus => [c(s, 0.0), c(-s, 0.0)],
        }
    }
}

/// Per-atom drive assignment; `None` marks an idle atom.
#[derive(Clone, Debug, PartialEq)]
pub struct DriveSpec {
    atoms: Vec<Option<AtomDrive>>,
}

impl DriveSpec {
    pub fn new(atoms: Vec<Option<AtomDrive>>) -> Self {
        DriveSpec { atoms }
    }

    pub fn idle(n: usize) -> Self {
        DriveSpec { atoms: vec![None; n] }
    }

    /// Builder form: drive atom `index` (0-based).
    pub fn with(mut self, index: usize, drive: AtomDrive) -> Self {
        self.atoms[index] = Some(drive);
        self
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn atom(&self, i: usize) -> Option<&AtomDrive> {
        self.atoms[i].as_ref()
    }

    pub fn atoms(&self) -> &[Option<AtomDrive>] {
        &self.atoms
    }

    /// Indices of atoms taking part in the drive.
    pub fn support(&self) -> Vec<usize> {
        (0..self.atoms.len()).filter(|&i| self.atoms[i].is_some()).collect()
    }

    pub fn is_idle(&self) -> bool {
        self.atoms.iter().all(Option::is_none)
    }

    /// Union of two drives on disjoint atoms.
    pub fn merged(&self, other: &DriveSpec) -> Result<DriveSpec, SystemError> {
        if self.n_atoms() != other.n_atoms() {
            return Err(SystemError::DriveSize(other.n_atoms(), self.n_atoms()));
        }
        let mut atoms = self.atoms.clone();
        for (i, d) in other.atoms.iter().enumerate() {
            if let Some(d) = d {
                if atoms[i].is_some() {
                    return Err(SystemError::OverlappingDrives(i));
                }
                atoms[i] = Some(*d);
            }
        }
        Ok(DriveSpec { atoms })
    }
}

/// A complete description of the array under drive.
#[derive(Clone, Debug, PartialEq)]
pub struct System {
    pub geometry: Geometry,
    pub pulse: PulseParams,
    pub physical: PhysicalParams,
    pub levels: LevelScheme,
    pub kick_form: KickForm,
    pub vdw_range: VdwRange,
    /// Static shift of each atom's |r> level (rad/s), e.g. from Doppler motion.
    pub rydberg_shift: Vec<f64>,
}

impl System {
    pub fn new(geometry: Geometry, pulse: PulseParams, physical: PhysicalParams) -> Self {
        let n = geometry.n_atoms();
        System {
            geometry,
            pulse,
            physical,
            levels: LevelScheme::Qutrit,
            kick_form: KickForm::Cosine,
            vdw_range: VdwRange::All,
            rydberg_shift: vec![0.0; n],
        }
    }

    /// Standard parameters at Δ/Ω = `detuning_ratio`, with the spacing matched to Δ.
    pub fn standard(kind: GeometryKind, n: usize, detuning_ratio: f64) -> Result<Self, SystemError> {
        let pulse = PulseParams::standard(detuning_ratio);
        let physical = PhysicalParams::default();
        let r = matched_spacing(physical.c6, pulse.detuning);
        Ok(System::new(make_geometry(kind, n, r)?, pulse, physical))
    }

    pub fn n_atoms(&self) -> usize {
        self.geometry.n_atoms()
    }

    pub fn local_dim(&self) -> usize {
        self.levels.dim()
    }

    pub fn dim(&self) -> usize {
        self.local_dim().pow(self.n_atoms() as u32)
    }

    /// Pair interaction U_ij = −C6 / R_ij^6 (rad/s).
    pub fn interaction(&self, i: usize, j: usize) -> f64 {
        if self.vdw_range == VdwRange::NearestNeighbor {
            let nominal = self.geometry.spacing();
            let d = self.geometry.distance(i, j);
            if d > nominal * 1.5 {
                return 0.0;
            }
        }
        -self.physical.c6 / self.geometry.distance(i, j).powi(6)
    }

    /// Diagonal energies from the |r> shifts and the pair interactions, for a list of
    /// per-atom local levels.
    pub fn diagonal_energy(&self, levels: &[usize]) -> f64 {
        let mut e = 0.0;
        for (i, &li) in levels.iter().enumerate() {
            if li != LEVEL_R {
                continue;
            }
            e += self.rydberg_shift[i];
            for (j, &lj) in levels.iter().enumerate().skip(i + 1) {
                if lj == LEVEL_R {
                    e += self.interaction(i, j);
                }
            }
        }
        e
    }

    fn check_drive(&self, drive: &DriveSpec) -> Result<(), SystemError> {
        if drive.n_atoms() != self.n_atoms() {
            return Err(SystemError::DriveSize(drive.n_atoms(), self.n_atoms()));
        }
        Ok(())
    }
}

/// Local levels of basis index `idx` with `n` atoms of dimension `d`, atom 1 first.
pub fn digits(mut idx: usize, n: usize, d: usize) -> Vec<usize> {
    let mut out = vec![0; n];
    for k in (0..n).rev() {
        out[k] = idx % d;
        idx /= d;
    }
    out
}

pub fn index_of(levels: &[usize], d: usize) -> usize {
    levels.iter().fold(0, |acc, &l| acc * d + l)
}

fn diagonal_part(system: &System) -> CMat {
    let (n, d) = (system.n_atoms(), system.local_dim());
    let dim = system.dim();
    let mut h = CMat::zeros((dim, dim));
    for idx in 0..dim {
        h[[idx, idx]] = c(system.diagonal_energy(&digits(idx, n, d)), 0.0);
    }
    h
}

/// Adds `coef |r_i><G_i| + h.c.` for every atom selected by `pick`.
fn add_coupling<F>(h: &mut CMat, system: &System, drive: &DriveSpec, coef: C64, pick: F)
where
    F: Fn(&AtomDrive) -> bool,
{
    let (n, d) = (system.n_atoms(), system.local_dim());
    for idx in 0..system.dim() {
        let lv = digits(idx, n, d);
        for (i, ad) in drive.atoms().iter().enumerate() {
            let Some(ad) = ad else { continue };
            if !pick(ad) || lv[i] > LEVEL_1 {
                continue;
            }
            let mut up = lv.clone();
            up[i] = LEVEL_R;
            let target = index_of(&up, d);
            let amp = coef * ad.ground[lv[i]].conj();
            h[[target, idx]] += amp;
            h[[idx, target]] += amp.conj();
        }
    }
}

/// Resonant-pulse Hamiltonian `Σ (Ω/2)|r_i><G_i| + h.c.` plus interactions.
pub fn build_ha(system: &System, drive: &DriveSpec) -> Result<CMat, SystemError> {
    system.check_drive(drive)?;
    let mut h = diagonal_part(system);
    add_coupling(&mut h, system, drive, c(system.pulse.rabi / 2.0, 0.0), |a| a.resonant);
    Ok(h)
}

/// Coefficient of `|r><G|` in the kicked pulse at local time `t`.
pub fn kick_coefficient(system: &System, t: f64) -> C64 {
    let env = system.pulse.kick_envelope(t);
    let phase = system.pulse.detuning * t;
    match system.kick_form {
        KickForm::Cosine => c(env * phase.cos(), 0.0),
        KickForm::SingleSideband => C64::from_polar(env / 2.0, phase),
    }
}

/// Kicked-pulse Hamiltonian at local time `t ∈ [0, t_b]`.
pub fn build_hb(system: &System, drive: &DriveSpec, t: f64) -> Result<CMat, SystemError> {
    system.check_drive(drive)?;
    let t_b = system.pulse.timings().kicked;
    if !(0.0..=t_b).contains(&t) {
        return Err(SystemError::OutsidePulse { t, t_b });
    }
    let mut h = diagonal_part(system);
    add_coupling(&mut h, system, drive, kick_coefficient(system, t), |a| a.kicked);
    Ok(h)
}

/// Single-atom basis change whose columns are `|G⊥>, |G>, |r>, (|p>)`.
pub fn local_frame(drive: Option<&AtomDrive>, d: usize) -> CMat {
    let mut v = CMat::eye(d);
    if let Some(ad) = drive {
        let perp = ad.complement();
        v[[0, 0]] = perp[0];
        v[[1, 0]] = perp[1];
        v[[0, 1]] = ad.ground[0];
        v[[1, 1]] = ad.ground[1];
    }
    v
}

/// Array of per-atom local frames for a drive.
pub fn frames(system: &System, drive: &DriveSpec) -> Vec<CMat> {
    (0..system.n_atoms())
        .map(|i| local_frame(drive.atom(i), system.local_dim()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{hermiticity_error, max_abs};
    use approx::assert_relative_eq;

    fn two_atoms(ratio: f64) -> System {
        System::standard(GeometryKind::Zigzag, 2, ratio).unwrap()
    }

    #[test]
    fn timings_match_closed_form() {
        let p = PulseParams::standard(15.7);
        let tm = p.timings();
        assert_relative_eq!(tm.resonant, 1.0e-9, max_relative = 1e-12);
        assert!((tm.center - 66.55e-9).abs() < 0.1e-9);
        assert!((tm.kicked - 266.2e-9).abs() < 0.2e-9);
        assert_relative_eq!(tm.period, tm.resonant + tm.kicked);
        assert!((p.effective_rabi() / p.rabi - 3.74e-3).abs() < 0.01e-3);
    }

    #[test]
    fn envelope_edges_and_area() {
        let p = PulseParams::standard(15.7);
        let tm = p.timings();
        assert_relative_eq!(p.kick_envelope(2.0 * tm.center), p.rabi);
        assert_relative_eq!(p.kick_envelope(0.0), p.rabi * (-2.0 / 0.36f64).exp(), max_relative = 1e-12);
        // trapezoid quadrature of the pulse area
        let n = 20000;
        let h = tm.kicked / n as f64;
        let mut area = 0.5 * (p.kick_envelope(0.0) + p.kick_envelope(tm.kicked));
        for k in 1..n {
            area += p.kick_envelope(k as f64 * h);
        }
        area *= h;
        assert!((area / PI - 1.0).abs() < 2e-3);
    }

    #[test]
    fn matched_spacing_values() {
        let r = matched_spacing(C6_RB, 50.0 * 2.0 * PI * 5e6);
        assert!((r - 4.28).abs() < 0.005);
        let r = matched_spacing(C6_RB, 15.7 * 2.0 * PI * 5e6);
        assert!((r - 5.1947).abs() < 1e-3);
    }

    #[test]
    fn single_atom_ha_elements() {
        let p = PulseParams::standard(50.0);
        let g = make_geometry(GeometryKind::Zigzag, 1, 4.0).unwrap();
        let sys = System::new(g, p.clone(), PhysicalParams::default());
        let drive = DriveSpec::idle(1).with(0, AtomDrive::both(QubitState::One));
        let h = build_ha(&sys, &drive).unwrap();
        for ((i, j), z) in h.indexed_iter() {
            let expected = if (i, j) == (2, 1) || (i, j) == (1, 2) { p.rabi / 2.0 } else { 0.0 };
            assert_relative_eq!(z.norm(), expected);
        }
    }

    #[test]
    fn rr_entry_equals_minus_detuning() {
        let sys = two_atoms(15.7);
        let drive = DriveSpec::idle(2);
        let h = build_ha(&sys, &drive).unwrap();
        let rr = index_of(&[LEVEL_R, LEVEL_R], 3);
        assert_relative_eq!(h[[rr, rr]].re, -sys.pulse.detuning, max_relative = 1e-12);
        assert_relative_eq!(h[[rr, rr]].re, -C6_RB / sys.geometry.distance(0, 1).powi(6));
        // only the doubly excited configuration carries energy
        let nonzero = (0..9).filter(|&k| h[[k, k]].norm() > 0.0).count();
        assert_eq!(nonzero, 1);
    }

    #[test]
    fn hamiltonians_are_hermitian() {
        let mut sys = System::standard(GeometryKind::Zigzag, 3, 15.7).unwrap();
        sys.rydberg_shift = vec![1e5, -2e5, 3e4];
        let drive = DriveSpec::idle(3)
            .with(0, AtomDrive::both(QubitState::One))
            .with(1, AtomDrive::both(QubitState::Minus))
            .with(2, AtomDrive::kicked_only(QubitState::Zero));
        assert!(hermiticity_error(&build_ha(&sys, &drive).unwrap()) < 1e-9);
        for k in 0..7 {
            let t = k as f64 * sys.pulse.timings().kicked / 6.0;
            assert!(hermiticity_error(&build_hb(&sys, &drive, t).unwrap()) < 1e-9);
        }
        sys.kick_form = KickForm::SingleSideband;
        assert!(hermiticity_error(&build_hb(&sys, &drive, 1e-8).unwrap()) < 1e-9);
    }

    #[test]
    fn hb_rejects_out_of_window() {
        let sys = two_atoms(15.7);
        let drive = DriveSpec::idle(2);
        assert!(build_hb(&sys, &drive, -1e-12).is_err());
        assert!(build_hb(&sys, &drive, 1e-6).is_err());
    }

    #[test]
    fn hb_peak_coupling() {
        let sys = two_atoms(15.7);
        let drive = DriveSpec::idle(2).with(0, AtomDrive::kicked_only(QubitState::One));
        let tf = sys.pulse.timings().center;
        let h = build_hb(&sys, &drive, 2.0 * tf).unwrap();
        let src = index_of(&[LEVEL_1, LEVEL_0], 3);
        let dst = index_of(&[LEVEL_R, LEVEL_0], 3);
        let expected = sys.pulse.rabi * (sys.pulse.detuning * 2.0 * tf).cos();
        assert_relative_eq!(h[[dst, src]].re, expected, max_relative = 1e-12);
    }

    #[test]
    fn geometries() {
        let z = make_geometry(GeometryKind::Zigzag, 2, 5.0).unwrap();
        assert_relative_eq!(z.distance(0, 1), 5.0);
        let z = make_geometry(GeometryKind::Zigzag, 5, 5.0).unwrap();
        for i in 0..4 {
            assert_relative_eq!(z.distance(i, i + 1), 5.0, max_relative = 1e-12);
        }
        for i in 0..3 {
            assert_relative_eq!(z.distance(i, i + 2), 5.0, max_relative = 1e-12);
        }
        let t = make_geometry(GeometryKind::Tshape, 4, 5.0).unwrap();
        for j in 1..4 {
            assert_relative_eq!(t.distance(0, j), 5.0);
        }
        let bonds = vec![(0, 1), (1, 2), (1, 4), (3, 4), (4, 5)];
        for kind in [GeometryKind::Triangular, GeometryKind::Square] {
            let g = make_geometry(kind, 6, 5.0).unwrap();
            for &(i, j) in &bonds {
                assert_relative_eq!(g.distance(i, j), 5.0, max_relative = 1e-12);
            }
        }
        assert!(make_geometry(GeometryKind::Tshape, 3, 5.0).is_err());
    }

    #[test]
    fn idle_drive_has_no_coupling() {
        let sys = two_atoms(50.0);
        let h = build_ha(&sys, &DriveSpec::idle(2)).unwrap();
        let off: f64 = h.indexed_iter().filter(|((i, j), _)| i != j).map(|(_, z)| z.norm()).sum();
        assert_eq!(off, 0.0);
        assert!(max_abs(&h) > 0.0);
    }

    #[test]
    fn frames_are_unitary() {
        let ad = AtomDrive::both(QubitState::Minus);
        let v = local_frame(Some(&ad), 4);
        assert!(crate::linalg::unitarity_error(&v) < 1e-15);
    }
}
