//! One-period propagators, Floquet Hamiltonians, quasienergy sweeps and Zeno generators.
//!
//! The drive only couples `|G_i>` with `|r_i>` on each driven atom, so in the
//! per-atom frame `{|G⊥>, |G>, |r>, |p>}` the Hamiltonian splits into small
//! blocks that are integrated separately and reassembled.

use std::collections::BTreeMap;

use ndarray as nd;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{
    self, c, commutator, dagger, kron_all, mat_pow, matexp_unchecked, max_abs, CMat, Ket,
    LinalgError, ZERO,
};
use crate::system::{
    self, digits, index_of, DriveSpec, System, SystemError, LEVEL_1, LEVEL_R,
};

pub mod effective;
pub mod sweep;

pub use effective::{compare_with_zeno, EffectivePump, PumpCoupling, PumpError, PumpTemplate, ZenoComparison};
pub use sweep::{
    detect_avoided_crossings, locate_avoided_crossings, quasienergy_sweep, Crossing,
    QuasienergySpectrum, SweepSpacing,
};

#[derive(Debug, Error)]
pub enum FloquetError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error("time integration not converged: {steps} steps changed the result by {delta:.3e}")]
    NotConverged { steps: usize, delta: f64 },
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
    #[error(transparent)]
    Pump(#[from] PumpError),
}

pub type Result<T> = std::result::Result<T, FloquetError>;

/// One step rule for the time-ordered exponential.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stepper {
    /// Piecewise constant Hamiltonian sampled at each step's midpoint (second order).
    Midpoint,
    /// Two-point Gauss-Legendre Magnus expansion (fourth order).
    Magnus4,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IntegratorSettings {
    pub stepper: Stepper,
    pub initial_steps: usize,
    /// Largest entry change allowed between `n` and `2n` steps.
    pub tolerance: f64,
    pub max_steps: usize,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        IntegratorSettings {
            stepper: Stepper::Magnus4,
            initial_steps: 512,
            tolerance: 1e-7,
            max_steps: 1 << 21,
        }
    }
}

/// Ordered product of `steps` short-time propagators of `h(t)` over `[0, duration]`.
pub fn propagate_pulse<F>(h: F, duration: f64, steps: usize, stepper: Stepper) -> CMat
where
    F: Fn(f64) -> CMat,
{
    propagate_segments(&h, duration, steps, stepper, 1).pop().unwrap()
}

/// Like [`propagate_pulse`], but returns the propagators of `segments` equal
/// sub-intervals (in time order). `steps` must be a multiple of `segments`.
pub fn propagate_segments<F>(
    h: &F,
    duration: f64,
    steps: usize,
    stepper: Stepper,
    segments: usize,
) -> Vec<CMat>
where
    F: Fn(f64) -> CMat,
{
    assert!(steps >= 1 && segments >= 1 && steps.is_multiple_of(segments));
    let dim = h(0.0).nrows();
    let dt = duration / steps as f64;
    let per_segment = steps / segments;
    let g1 = 0.5 - 3f64.sqrt() / 6.0;
    let g2 = 0.5 + 3f64.sqrt() / 6.0;
    let comm_coef = c(0.0, -3f64.sqrt() / 12.0 * dt * dt);
    let mut out = Vec::with_capacity(segments);
    let mut u = linalg::eye(dim);
    for k in 0..steps {
        let t0 = k as f64 * dt;
        let step = match stepper {
            Stepper::Midpoint => matexp_unchecked(&h(t0 + 0.5 * dt), dt),
            Stepper::Magnus4 => {
                let h1 = h(t0 + g1 * dt);
                let h2 = h(t0 + g2 * dt);
                let gen = (&h1 + &h2) * c(0.5 * dt, 0.0) + commutator(&h2, &h1) * comm_coef;
                matexp_unchecked(&gen, 1.0)
            }
        };
        u = step.dot(&u);
        if (k + 1) % per_segment == 0 {
            out.push(std::mem::replace(&mut u, linalg::eye(dim)));
        }
    }
    out
}

/// Result of step doubling.
#[derive(Clone, Debug)]
pub struct Certified {
    pub unitary: CMat,
    pub steps: usize,
    pub delta: f64,
}

/// Doubles the step count until two successive results differ by less than the tolerance.
pub fn propagate_pulse_certified<F>(
    h: F,
    duration: f64,
    settings: &IntegratorSettings,
) -> Result<Certified>
where
    F: Fn(f64) -> CMat,
{
    let mut steps = settings.initial_steps.max(1);
    let mut prev = propagate_pulse(&h, duration, steps, settings.stepper);
    loop {
        steps *= 2;
        let next = propagate_pulse(&h, duration, steps, settings.stepper);
        let delta = max_abs(&(&next - &prev));
        if delta < settings.tolerance {
            return Ok(Certified { unitary: next, steps, delta });
        }
        if steps * 2 > settings.max_steps {
            return Err(FloquetError::NotConverged { steps, delta });
        }
        prev = next;
    }
}

/// A connected set of basis states in the drive frame.
#[derive(Clone, Debug)]
struct Block {
    indices: Vec<usize>,
    diagonal: Vec<f64>,
    /// `(Ω/2) Σ |r><G| + h.c.` over resonantly driven atoms.
    resonant: CMat,
    /// `Σ |r><G|` over kicked atoms.
    kick: CMat,
}

impl Block {
    fn dim(&self) -> usize {
        self.indices.len()
    }

    fn is_static(&self) -> bool {
        self.kick.iter().all(|z| *z == ZERO)
    }

    fn diag_matrix(&self) -> CMat {
        CMat::from_diag(&self.diagonal.iter().map(|&e| c(e, 0.0)).collect::<nd::Array1<C64>>())
    }

    fn resonant_hamiltonian(&self) -> CMat {
        self.diag_matrix() + &self.resonant
    }

    fn kicked_hamiltonian(&self, system: &System, t: f64) -> CMat {
        let s = system::kick_coefficient(system, t);
        let up = &self.kick * s;
        let down = dagger(&self.kick) * s.conj();
        self.diag_matrix() + up + down
    }
}

const ONE_C: C64 = C64 { re: 1.0, im: 0.0 };

/// Block structure of a driven system in the per-atom drive frame.
#[derive(Clone, Debug)]
pub struct DriveBlocks {
    dim: usize,
    frame: CMat,
    blocks: Vec<Block>,
}

impl DriveBlocks {
    pub fn new(system: &System, drive: &DriveSpec) -> Result<Self> {
        let n = system.n_atoms();
        if drive.n_atoms() != n {
            return Err(SystemError::DriveSize(drive.n_atoms(), n).into());
        }
        let d = system.local_dim();
        let dim = system.dim();
        let frame = kron_all(system::frames(system, drive).iter());
        let mut groups: BTreeMap<Vec<usize>, Vec<usize>> = BTreeMap::new();
        for idx in 0..dim {
            let lv = digits(idx, n, d);
            let key: Vec<usize> = lv
                .iter()
                .enumerate()
                .map(|(i, &l)| match drive.atom(i) {
                    Some(_) if l == LEVEL_1 || l == LEVEL_R => usize::MAX,
                    _ => l,
                })
                .collect();
            groups.entry(key).or_default().push(idx);
        }
        let half_rabi = c(system.pulse.rabi / 2.0, 0.0);
        let blocks = groups
            .into_values()
            .map(|indices| {
                let m = indices.len();
                let pos: BTreeMap<usize, usize> =
                    indices.iter().enumerate().map(|(k, &i)| (i, k)).collect();
                let mut resonant = CMat::zeros((m, m));
                let mut kick = CMat::zeros((m, m));
                let mut diagonal = Vec::with_capacity(m);
                for (col, &idx) in indices.iter().enumerate() {
                    let lv = digits(idx, n, d);
                    diagonal.push(system.diagonal_energy(&lv));
                    for i in 0..n {
                        let Some(ad) = drive.atom(i) else { continue };
                        if lv[i] != LEVEL_1 {
                            continue;
                        }
                        let mut up = lv.clone();
                        up[i] = LEVEL_R;
                        let row = pos[&index_of(&up, d)];
                        if ad.resonant {
                            resonant[[row, col]] += half_rabi;
                            resonant[[col, row]] += half_rabi;
                        }
                        if ad.kicked {
                            kick[[row, col]] += ONE_C;
                        }
                    }
                }
                Block { indices, diagonal, resonant, kick }
            })
            .collect();
        Ok(DriveBlocks { dim, frame, blocks })
    }

    /// Largest block dimension.
    pub fn max_block(&self) -> usize {
        self.blocks.iter().map(Block::dim).max().unwrap_or(0)
    }

    pub fn n_blocks(&self) -> usize {
        self.blocks.len()
    }

    fn assemble(&self, parts: &[CMat]) -> CMat {
        let mut rot = CMat::zeros((self.dim, self.dim));
        for (b, m) in self.blocks.iter().zip(parts) {
            for (r, &i) in b.indices.iter().enumerate() {
                for (k, &j) in b.indices.iter().enumerate() {
                    rot[[i, j]] = m[[r, k]];
                }
            }
        }
        self.frame.dot(&rot).dot(&dagger(&self.frame))
    }
}

/// Propagators of one drive period in the computational basis.
#[derive(Clone, Debug)]
pub struct PeriodPropagators {
    pub resonant: CMat,
    pub kicked: CMat,
    /// Largest accepted step count over all blocks.
    pub steps: usize,
    /// Largest step-doubling change over all blocks.
    pub delta: f64,
}

impl PeriodPropagators {
    /// `U_b U_a`.
    pub fn period(&self) -> CMat {
        self.kicked.dot(&self.resonant)
    }
}

struct BlockPropagators {
    resonant: Vec<CMat>,
    kicked: Vec<CMat>,
    steps: usize,
    delta: f64,
}

fn block_propagators(
    system: &System,
    blocks: &DriveBlocks,
    settings: &IntegratorSettings,
) -> Result<BlockPropagators> {
    let tm = system.pulse.timings();
    let mut resonant = Vec::with_capacity(blocks.blocks.len());
    let mut kicked = Vec::with_capacity(blocks.blocks.len());
    let (mut steps, mut delta) = (0usize, 0.0f64);
    for b in &blocks.blocks {
        resonant.push(matexp_unchecked(&b.resonant_hamiltonian(), tm.resonant));
        if b.is_static() {
            kicked.push(matexp_unchecked(&b.diag_matrix(), tm.kicked));
        } else {
            let cert = propagate_pulse_certified(|t| b.kicked_hamiltonian(system, t), tm.kicked, settings)?;
            steps = steps.max(cert.steps);
            delta = delta.max(cert.delta);
            kicked.push(cert.unitary);
        }
    }
    Ok(BlockPropagators { resonant, kicked, steps, delta })
}

pub fn period_propagators(
    system: &System,
    drive: &DriveSpec,
    settings: &IntegratorSettings,
) -> Result<PeriodPropagators> {
    let blocks = DriveBlocks::new(system, drive)?;
    let bp = block_propagators(system, &blocks, settings)?;
    Ok(PeriodPropagators {
        resonant: blocks.assemble(&bp.resonant),
        kicked: blocks.assemble(&bp.kicked),
        steps: bp.steps,
        delta: bp.delta,
    })
}

/// Propagator of the full coherent stage, `(U_b U_a)^𝒩`.
pub fn slot_unitary(system: &System, drive: &DriveSpec, settings: &IntegratorSettings) -> Result<CMat> {
    let blocks = DriveBlocks::new(system, drive)?;
    let bp = block_propagators(system, &blocks, settings)?;
    let parts: Vec<CMat> = bp
        .kicked
        .iter()
        .zip(&bp.resonant)
        .map(|(ub, ua)| mat_pow(&ub.dot(ua), system.pulse.kicks as u64))
        .collect();
    Ok(blocks.assemble(&parts))
}

/// Kicked-pulse propagator split into `segments` consecutive pieces, plus the resonant pulse.
pub fn kicked_segments(
    system: &System,
    drive: &DriveSpec,
    settings: &IntegratorSettings,
    segments: usize,
) -> Result<(CMat, Vec<CMat>)> {
    let blocks = DriveBlocks::new(system, drive)?;
    let bp = block_propagators(system, &blocks, settings)?;
    let tm = system.pulse.timings();
    let steps = bp.steps.max(settings.initial_steps).max(segments);
    let steps = steps.div_ceil(segments) * segments;
    let per_block: Vec<Vec<CMat>> = blocks
        .blocks
        .iter()
        .map(|b| {
            if b.is_static() {
                vec![matexp_unchecked(&b.diag_matrix(), tm.kicked / segments as f64); segments]
            } else {
                propagate_segments(
                    &|t| b.kicked_hamiltonian(system, t),
                    tm.kicked,
                    steps,
                    settings.stepper,
                    segments,
                )
            }
        })
        .collect();
    let pieces = (0..segments)
        .map(|s| {
            let parts: Vec<CMat> = per_block.iter().map(|v| v[s].clone()).collect();
            blocks.assemble(&parts)
        })
        .collect();
    Ok((blocks.assemble(&bp.resonant), pieces))
}

/// `H_F` with `exp(−i H_F T) = U_b U_a`.
pub fn floquet_hamiltonian(system: &System, drive: &DriveSpec, settings: &IntegratorSettings) -> Result<CMat> {
    let props = period_propagators(system, drive, settings)?;
    Ok(linalg::matlog_unitary(&props.period(), system.pulse.timings().period)?)
}

/// `Σ_μ P_μ H_a P_μ` over the spectral projectors of `U_b`, merging eigenphases within `tol`.
pub fn zeno_effective_hamiltonian(ha: &CMat, ub: &CMat, tol: f64) -> Result<CMat> {
    if ha.dim() != ub.dim() {
        return Err(LinalgError::DimMismatch(ha.nrows(), ub.nrows()).into());
    }
    let projectors = linalg::phase_projectors(ub, tol)?;
    let mut hz = CMat::zeros(ha.dim());
    for p in &projectors {
        hz = hz + p.dot(ha).dot(p);
    }
    Ok(linalg::hermitize(&hz))
}

pub const ZENO_PHASE_TOL: f64 = 1e-6;

/// Zeno generator of a drive weighted by the resonant duty cycle t_a/T.
pub fn zeno_pump_hamiltonian(system: &System, drive: &DriveSpec, settings: &IntegratorSettings) -> Result<CMat> {
    let props = period_propagators(system, drive, settings)?;
    let ha = system::build_ha(system, drive)?;
    let tm = system.pulse.timings();
    let hz = zeno_effective_hamiltonian(&ha, &props.kicked, ZENO_PHASE_TOL)?;
    Ok(hz * c(tm.resonant / tm.period, 0.0))
}

/// Quasienergies and eigenvectors of one period at a given system.
pub fn period_quasienergies(
    system: &System,
    drive: &DriveSpec,
    settings: &IntegratorSettings,
) -> Result<(nd::Array1<f64>, CMat)> {
    let props = period_propagators(system, drive, settings)?;
    Ok(linalg::quasienergies(&props.period(), system.pulse.timings().period)?)
}

/// Evaluates `f` over a list of inputs on the rayon pool, keeping input order.
pub(crate) fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Probe ket on the full level space: each atom in the given qubit amplitudes.
pub fn product_probe(system: &System, qubits: &[[C64; 2]]) -> Ket {
    let d = system.local_dim();
    let locals: Vec<Ket> = qubits
        .iter()
        .map(|q| {
            let mut v = nd::Array1::<C64>::zeros(d);
            v[0] = q[0];
            v[1] = q[1];
            Ket::normalized(v).expect("qubit amplitudes must be nonzero")
        })
        .collect();
    Ket::tensor_all(locals.iter())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;
    use crate::linalg::{eye, unitarity_error, I};
    use crate::system::{AtomDrive, GeometryKind, QubitState};

    fn sx() -> CMat {
        nd::arr2(&[[ZERO, ONE_C], [ONE_C, ZERO]])
    }

    #[test]
    fn zero_envelope_gives_identity() {
        let u = propagate_pulse(|_| CMat::zeros((3, 3)), 1e-7, 64, Stepper::Magnus4);
        assert!(max_abs(&(u - eye(3))) < 1e-15);
    }

    #[test]
    fn square_pi_pulse_both_steppers() {
        let omega = 2.0 * PI * 5e6;
        let h = |_t: f64| sx() * c(omega / 2.0, 0.0);
        for stepper in [Stepper::Midpoint, Stepper::Magnus4] {
            let u = propagate_pulse(h, PI / omega, 100, stepper);
            assert!(max_abs(&(u - sx() * (-I))) < 1e-12);
        }
    }

    fn chirp(t: f64) -> CMat {
        let omega = 2.0 * PI * 5e6;
        let env = omega * (-((t - 1e-7) / 4e-8).powi(2)).exp();
        let s = env * (30.0 * omega * t).cos();
        nd::arr2(&[[ZERO, c(s, 0.0)], [c(s, 0.0), c(-20.0 * omega, 0.0)]])
    }

    #[test]
    fn midpoint_error_is_second_order() {
        let dur = 2e-7;
        let reference = propagate_pulse(chirp, dur, 1 << 14, Stepper::Magnus4);
        let e1 = max_abs(&(propagate_pulse(chirp, dur, 4096, Stepper::Midpoint) - &reference));
        let e2 = max_abs(&(propagate_pulse(chirp, dur, 8192, Stepper::Midpoint) - &reference));
        let ratio = e1 / e2;
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn magnus_error_is_fourth_order() {
        let dur = 2e-7;
        let reference = propagate_pulse(chirp, dur, 1 << 14, Stepper::Magnus4);
        let e1 = max_abs(&(propagate_pulse(chirp, dur, 512, Stepper::Magnus4) - &reference));
        let e2 = max_abs(&(propagate_pulse(chirp, dur, 1024, Stepper::Magnus4) - &reference));
        let ratio = e1 / e2;
        assert!((ratio - 16.0).abs() < 2.0, "ratio {ratio}");
    }

    #[test]
    fn segments_multiply_to_whole() {
        let dur = 2e-7;
        let whole = propagate_pulse(chirp, dur, 1024, Stepper::Magnus4);
        let segs = propagate_segments(&chirp, dur, 1024, Stepper::Magnus4, 8);
        let prod = segs.iter().fold(eye(2), |acc, s| s.dot(&acc));
        assert!(max_abs(&(prod - whole)) < 1e-13);
    }

    fn pair(ratio: f64, ground: QubitState) -> (System, DriveSpec) {
        let sys = System::standard(GeometryKind::Zigzag, 2, ratio).unwrap();
        let drive = DriveSpec::idle(2)
            .with(0, AtomDrive::both(ground))
            .with(1, AtomDrive::both(ground));
        (sys, drive)
    }

    #[test]
    fn blocks_reproduce_direct_integration() {
        let (sys, drive) = pair(15.7, QubitState::Minus);
        let settings = IntegratorSettings::default();
        let props = period_propagators(&sys, &drive, &settings).unwrap();
        let tb = sys.pulse.timings().kicked;
        let direct = propagate_pulse(
            |t| system::build_hb(&sys, &drive, t.min(tb)).unwrap(),
            tb,
            props.steps,
            Stepper::Magnus4,
        );
        assert!(max_abs(&(direct - &props.kicked)) < 1e-9);
        let ua = linalg::matexp(&system::build_ha(&sys, &drive).unwrap(), sys.pulse.timings().resonant).unwrap();
        assert!(max_abs(&(ua - &props.resonant)) < 1e-12);
        let det = linalg::eig_general(&props.period()).unwrap().0.iter().fold(ONE_C, |a, z| a * z);
        assert!((det.norm() - 1.0).abs() < 1e-9);
        assert!(unitarity_error(&props.period()) < 1e-9);
    }

    #[test]
    fn floquet_hamiltonian_reproduces_period() {
        let (sys, drive) = pair(14.9, QubitState::One);
        let settings = IntegratorSettings::default();
        let hf = floquet_hamiltonian(&sys, &drive, &settings).unwrap();
        let up = period_propagators(&sys, &drive, &settings).unwrap().period();
        let back = linalg::matexp(&hf, sys.pulse.timings().period).unwrap();
        assert!(max_abs(&(back - up)) < 1e-8);
    }

    #[test]
    fn idle_atom_has_zero_floquet_block() {
        let sys = System::standard(GeometryKind::Zigzag, 1, 50.0).unwrap();
        let hf = floquet_hamiltonian(&sys, &DriveSpec::idle(1), &IntegratorSettings::default()).unwrap();
        assert!(max_abs(&hf) < 1e-6);
    }

    #[test]
    fn single_atom_quasienergy_matches_effective_rabi() {
        let sys = System::standard(GeometryKind::Zigzag, 1, 50.0).unwrap();
        let drive = DriveSpec::idle(1).with(0, AtomDrive::both(QubitState::One));
        let (eps, vecs) = period_quasienergies(&sys, &drive, &IntegratorSettings::default()).unwrap();
        let probe = product_probe(&sys, &[QubitState::One.amps()]);
        let k = (0..eps.len())
            .max_by(|&a, &b| {
                let oa = probe.inner_with_col(&vecs, a);
                let ob = probe.inner_with_col(&vecs, b);
                oa.total_cmp(&ob)
            })
            .unwrap();
        let omega_eff = sys.pulse.effective_rabi();
        assert!((eps[k].abs() / (omega_eff / 2.0) - 1.0).abs() < 0.1, "{}", eps[k] / omega_eff);
        // the two branches are ±|ε_G| with equal-weight G/r superpositions
        let driven: Vec<f64> = (0..eps.len()).filter(|&j| probe.inner_with_col(&vecs, j) > 0.25).map(|j| eps[j]).collect();
        assert_eq!(driven.len(), 2);
        assert!((driven[0] + driven[1]).abs() < 1e-3 * driven[0].abs());
    }

    #[test]
    fn zeno_identity_kick_returns_ha() {
        let (sys, drive) = pair(50.0, QubitState::One);
        let ha = system::build_ha(&sys, &drive).unwrap();
        let hz = zeno_effective_hamiltonian(&ha, &eye(9), 1e-6).unwrap();
        assert!(max_abs(&(hz - ha)) < 1e-6);
    }

    #[test]
    fn zeno_single_atom_effective_coupling() {
        let sys = System::standard(GeometryKind::Zigzag, 1, 50.0).unwrap();
        let drive = DriveSpec::idle(1).with(0, AtomDrive::both(QubitState::One));
        let hz = zeno_pump_hamiltonian(&sys, &drive, &IntegratorSettings::default()).unwrap();
        let el = hz[[2, 1]].norm();
        let expected = sys.pulse.effective_rabi() / 2.0;
        assert!((el / expected - 1.0).abs() < 0.05);
    }

    #[test]
    fn zeno_blocks_double_drive() {
        let (sys, drive) = pair(50.0, QubitState::One);
        let hz = zeno_pump_hamiltonian(&sys, &drive, &IntegratorSettings::default()).unwrap();
        // {|GG>, |w>, |rr>} with |w> = (|Gr> + |rG>)/√2
        let d = 3;
        let gg = index_of(&[1, 1], d);
        let gr = index_of(&[1, 2], d);
        let rg = index_of(&[2, 1], d);
        let w = (hz[[gr, gg]] + hz[[rg, gg]]) / c(2f64.sqrt(), 0.0);
        assert!(w.norm() < 0.05 * sys.pulse.effective_rabi());
    }

    impl Ket {
        fn inner_with_col(&self, v: &CMat, k: usize) -> f64 {
            self.amps()
                .iter()
                .zip(v.column(k).iter())
                .map(|(a, b)| a.conj() * b)
                .sum::<C64>()
                .norm_sqr()
        }
    }
}
