//! Pump and dissipate cycles, convergence times, scaling fits and purification runs.

use std::time::Instant;

use ndarray as nd;
use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ChannelError, LocalChannel};
use crate::floquet::effective::template_drive;
use crate::floquet::{self, FloquetError, IntegratorSettings, PumpError};
use crate::linalg::{self, c, dagger, hermitize, kron, trace, CMat, DensityMatrix, Ket, LinalgError};
use crate::lindblad::{
    self, build_liouvillian, kraus_from_superoperator, DissipationMode, DissipationStage, Hamiltonian,
    LindbladError, LindbladModel,
};
use crate::stabilizer::{
    self, pump_plan, qubit_block, PumpPlan, PumpScheme, StabilizerError, StabilizerKind,
};
use crate::system::{
    index_of, DriveSpec, LevelScheme, PhysicalParams, PulseParams, System, SystemError,
};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("slot {slot}: pumps overlap on atom {atom}")]
    Overlap { slot: usize, atom: usize },
    #[error("slot {slot} names plan entry {entry}, plan has {len}")]
    BadEntry { slot: usize, entry: usize, len: usize },
    #[error("register has {got} atoms, target needs {expected}")]
    Size { got: usize, expected: usize },
    #[error("initial state has dimension {got}, expected {qubit} or {full}")]
    InitialDim { got: usize, qubit: usize, full: usize },
    #[error("target fidelity {0} outside [0, 1)")]
    Target(f64),
    #[error("{0}")]
    Invalid(String),
    #[error("channel not trace preserving: defect {0:.3e}")]
    NotTracePreserving(f64),
    #[error(transparent)]
    Floquet(#[from] FloquetError),
    #[error(transparent)]
    Lindblad(#[from] LindbladError),
    #[error(transparent)]
    Stabilizer(#[from] StabilizerError),
    #[error(transparent)]
    Pump(#[from] PumpError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    System(#[from] SystemError),
}

pub type Result<T> = std::result::Result<T, ProtocolError>;

/// How the coherent stage of each slot is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// 𝒩 alternating resonant/kicked periods on the full level space.
    Exact,
    /// `exp(−i H_eff 𝒩T)` on qubit configurations plus one Rydberg excitation.
    Effective,
}

/// Ordered cycle plan: each slot pumps a set of plan entries at once.
#[derive(Clone, Debug)]
pub struct Schedule {
    pub kind: StabilizerKind,
    pub plan: PumpPlan,
    pub slots: Vec<Vec<usize>>,
    pub engine: Engine,
    pub cycles: usize,
    pub dissipation: DissipationMode,
}

impl Schedule {
    pub fn new(
        kind: StabilizerKind,
        plan: PumpPlan,
        slots: Vec<Vec<usize>>,
        engine: Engine,
        cycles: usize,
        dissipation: DissipationMode,
    ) -> Result<Self> {
        let n = kind.n_qubits();
        if plan.stabilizers.n_qubits() != n {
            return Err(ProtocolError::Size { got: plan.stabilizers.n_qubits(), expected: n });
        }
        for (s, slot) in slots.iter().enumerate() {
            let mut used = vec![false; n];
            for &e in slot {
                let Some(&(g, _)) = plan.entries.get(e) else {
                    return Err(ProtocolError::BadEntry { slot: s, entry: e, len: plan.entries.len() });
                };
                for atom in plan.stabilizers.generators()[g].support() {
                    if used[atom] {
                        return Err(ProtocolError::Overlap { slot: s, atom });
                    }
                    used[atom] = true;
                }
            }
        }
        Ok(Schedule { kind, plan, slots, engine, cycles, dissipation })
    }

    /// One slot per plan entry, in plan order.
    pub fn sequential(
        kind: StabilizerKind,
        scheme: PumpScheme,
        engine: Engine,
        cycles: usize,
        dissipation: DissipationMode,
    ) -> Result<Self> {
        let plan = pump_plan(kind, scheme)?;
        let slots = (0..plan.entries.len()).map(|e| vec![e]).collect();
        Schedule::new(kind, plan, slots, engine, cycles, dissipation)
    }

    /// `{ZZ}` then `{XX}` each cycle.
    pub fn bell(engine: Engine, cycles: usize, dissipation: DissipationMode) -> Result<Self> {
        let plan = pump_plan(StabilizerKind::Bell, PumpScheme::Realistic)?;
        Schedule::new(StabilizerKind::Bell, plan, vec![vec![1], vec![0]], engine, cycles, dissipation)
    }

    pub fn n_qubits(&self) -> usize {
        self.kind.n_qubits()
    }

    pub fn target(&self) -> Ket {
        self.kind.target()
    }

    /// Physical duration of one slot: 𝒩T plus the dissipation time.
    pub fn slot_duration(&self, pulse: &PulseParams) -> f64 {
        pulse.timings().coherent + self.dissipation.duration()
    }

    pub fn cycle_duration(&self, pulse: &PulseParams) -> f64 {
        self.slots.len() as f64 * self.slot_duration(pulse)
    }

    fn slot_atoms(&self, slot: usize) -> Vec<usize> {
        let mut atoms: Vec<usize> = self.slots[slot]
            .iter()
            .flat_map(|&e| self.plan.stabilizers.generators()[self.plan.entries[e].0].support())
            .collect();
        atoms.sort_unstable();
        atoms
    }

    fn slot_drive(&self, slot: usize) -> Result<DriveSpec> {
        let mut drive = DriveSpec::idle(self.n_qubits());
        for &e in &self.slots[slot] {
            let (g, template) = self.plan.entries[e];
            let d = template_drive(&self.plan.stabilizers.generators()[g], template)?;
            drive = drive.merged(&d)?;
        }
        Ok(drive)
    }
}

/// The five-step grouping of chain generators (0-based generator indices).
///
/// Bulk generator `S_k` goes to step `(k − 2) mod 5`, `S_1` to the fifth step and
/// `S_N` to the step holding `S_{N−5}`, or to a step of its own when `N < 6`.
pub fn parallel_steps(n: usize) -> Result<Vec<Vec<usize>>> {
    if n < 3 {
        return Err(ProtocolError::Invalid(format!("parallel schedule needs n >= 3, got {n}")));
    }
    let mut steps: Vec<Vec<usize>> = vec![Vec::new(); 5];
    for k in 2..n {
        steps[(k - 2) % 5].push(k - 1);
    }
    steps[4].push(0);
    let mut extra = None;
    if n >= 6 {
        let partner = n - 5 - 1;
        let step = steps.iter().position(|s| s.contains(&partner)).expect("placed");
        steps[step].push(n - 1);
    } else {
        extra = Some(vec![n - 1]);
    }
    let mut out: Vec<Vec<usize>> = steps.into_iter().filter(|s| !s.is_empty()).collect();
    out.extend(extra);
    for s in &mut out {
        s.sort_unstable();
    }
    Ok(out)
}

/// Five-step parallel schedule for the chain of `n` atoms (realistic pumps).
pub fn parallel_schedule(n: usize, engine: Engine, cycles: usize, dissipation: DissipationMode) -> Result<Schedule> {
    let kind = StabilizerKind::Chain(n);
    let plan = pump_plan(kind, PumpScheme::Realistic)?;
    let slots = parallel_steps(n)?
        .into_iter()
        .map(|gens| gens.into_iter().flat_map(|g| plan.entries_for(g)).collect())
        .collect();
    Schedule::new(kind, plan, slots, engine, cycles, dissipation)
}

/// State after a cycle; cycle 0 is the input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleResult {
    pub cycle: usize,
    /// `<ψ|ρ_qq|ψ>` on the (unnormalized) qubit block.
    pub fidelity: f64,
    /// `Tr[ρ S_i]` on the renormalized qubit block.
    pub stabilizers: Vec<f64>,
    /// Population outside the qubit space.
    pub leaked: f64,
    /// `Tr[ρ_qq²]` of the renormalized qubit block.
    pub purity: f64,
    /// Physical protocol time (s).
    pub time: f64,
    /// Compute time spent so far (s); not part of any table.
    #[serde(skip)]
    pub wall_time: f64,
}

impl CycleResult {
    pub fn mean_stabilizer(&self) -> f64 {
        self.stabilizers.iter().sum::<f64>() / self.stabilizers.len().max(1) as f64
    }
}

/// Options beyond the schedule itself.
#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Stop once the fidelity reaches this value.
    pub stop_at: Option<f64>,
    pub integrator: IntegratorSettings,
}

enum SlotOp {
    /// Full-space slot propagator followed by the dissipation stage on `atoms`.
    Exact { unitary: CMat, atoms: Vec<usize> },
    /// Per-period propagator interleaved with Rydberg decay (Strang split).
    ExactDecay { period: CMat, half_decay: Vec<CMat>, kicks: usize, atoms: Vec<usize> },
    /// Qubit-space channels, one per pump in the slot.
    Effective(Vec<LocalChannel>),
}

struct Prepared {
    n: usize,
    local_dim: usize,
    ops: Vec<SlotOp>,
    dissipation: Option<DissipationStage>,
}

fn exact_system(system: &System, dissipation: DissipationMode) -> System {
    let mut s = system.clone();
    s.levels = match dissipation {
        DissipationMode::Reset => s.levels,
        DissipationMode::Lindblad { .. } => LevelScheme::WithIntermediate,
    };
    s
}

/// Kraus operators of pure Rydberg decay `L_kr = √(γr/2)|k><r|` over `duration`.
fn decay_kraus(d: usize, gamma_r: f64, duration: f64) -> Result<Vec<CMat>> {
    let collapses = lindblad::rydberg_decay_collapses(d, gamma_r)?;
    let model = LindbladModel::new(Hamiltonian::Static(CMat::zeros((d, d))), collapses)?;
    let s = linalg::expm(&(build_liouvillian(&model)? * c(duration, 0.0)))?;
    Ok(kraus_from_superoperator(&s, d)?)
}

fn prepare(system: &System, schedule: &Schedule, settings: &IntegratorSettings) -> Result<Prepared> {
    let n = schedule.n_qubits();
    if system.n_atoms() != n {
        return Err(ProtocolError::Size { got: system.n_atoms(), expected: n });
    }
    let pulse = &system.pulse;
    match schedule.engine {
        Engine::Exact => {
            let sys = exact_system(system, schedule.dissipation);
            let d = sys.local_dim();
            let stage = DissipationStage::new(schedule.dissipation, &sys.physical, d)?;
            let gamma_r = sys.physical.gamma_r;
            let ops = (0..schedule.slots.len())
                .map(|s| {
                    let drive = schedule.slot_drive(s)?;
                    let atoms = schedule.slot_atoms(s);
                    if gamma_r > 0.0 {
                        let props = floquet::period_propagators(&sys, &drive, settings)?;
                        let half = decay_kraus(d, gamma_r, pulse.timings().period / 2.0)?;
                        Ok(SlotOp::ExactDecay { period: props.period(), half_decay: half, kicks: pulse.kicks, atoms })
                    } else {
                        Ok(SlotOp::Exact { unitary: floquet::slot_unitary(&sys, &drive, settings)?, atoms })
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Prepared { n, local_dim: d, ops, dissipation: Some(stage) })
        }
        Engine::Effective => {
            let transfer = effective_transfer(&system.physical, schedule.dissipation);
            let rabi = pulse.effective_rabi();
            let duration = pulse.timings().coherent;
            let ops = schedule
                .slots
                .iter()
                .map(|slot| {
                    slot.iter()
                        .map(|&e| {
                            let pump = schedule.plan.pump(e, rabi)?;
                            let local = pump.transfer_channel(duration, transfer)?;
                            let sites: Vec<usize> = pump.support().to_vec();
                            Ok(LocalChannel::new(sites, 2, local.kraus().to_vec())?)
                        })
                        .collect::<Result<Vec<_>>>()
                        .map(SlotOp::Effective)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(Prepared { n, local_dim: 2, ops, dissipation: None })
        }
    }
}

/// Embeds a qubit density matrix into the level space with local dimension `d`.
pub fn embed_qubit_state(rho: &CMat, n: usize, d: usize) -> CMat {
    if d == 2 {
        return rho.clone();
    }
    let idx: Vec<usize> = (0..1usize << n)
        .map(|x| index_of(&(0..n).map(|i| (x >> (n - 1 - i)) & 1).collect::<Vec<_>>(), d))
        .collect();
    let full = d.pow(n as u32);
    let mut out = CMat::zeros((full, full));
    for (i, &a) in idx.iter().enumerate() {
        for (j, &b) in idx.iter().enumerate() {
            out[[a, b]] = rho[[i, j]];
        }
    }
    out
}

fn record(
    rho: &CMat,
    prep: &Prepared,
    schedule: &Schedule,
    target: &Ket,
    cycle: usize,
    time: f64,
    start: &Instant,
) -> Result<CycleResult> {
    let (block, _) = qubit_block(rho, prep.n, prep.local_dim);
    let kept = if prep.local_dim == 2 { trace(rho).re } else { trace(rho).re - qubit_block(rho, prep.n, prep.local_dim).1 };
    let block = if prep.local_dim == 2 && kept > 0.0 { &block / c(kept, 0.0) } else { block };
    let leaked = (1.0 - kept).max(0.0);
    let fidelity = (target.expectation(&block).re * kept).clamp(0.0, 1.0);
    let purity = block.dot(&block).diag().iter().map(|z| z.re).sum::<f64>();
    let stabilizers = stabilizer::stabilizer_expectations(&DensityMatrix::from_trusted(block), &schedule.plan.stabilizers)?;
    Ok(CycleResult { cycle, fidelity, stabilizers, leaked, purity, time, wall_time: start.elapsed().as_secs_f64() })
}

fn apply_slot(rho: CMat, op: &SlotOp, prep: &Prepared) -> Result<CMat> {
    let (n, d) = (prep.n, prep.local_dim);
    let out = match op {
        SlotOp::Exact { unitary, atoms } => {
            let r = unitary.dot(&rho).dot(&dagger(unitary));
            prep.dissipation.as_ref().expect("exact engine").apply(&r, n, atoms)?
        }
        SlotOp::ExactDecay { period, half_decay, kicks, atoms } => {
            let decay: Vec<LocalChannel> = (0..n)
                .map(|a| LocalChannel::new(vec![a], d, half_decay.clone()))
                .collect::<std::result::Result<_, _>>()?;
            let pd = dagger(period);
            let mut r = rho;
            for _ in 0..*kicks {
                for ch in &decay {
                    r = ch.apply(&r, n)?;
                }
                r = period.dot(&r).dot(&pd);
                for ch in &decay {
                    r = ch.apply(&r, n)?;
                }
            }
            prep.dissipation.as_ref().expect("exact engine").apply(&r, n, atoms)?
        }
        SlotOp::Effective(channels) => {
            let mut r = rho;
            for ch in channels {
                r = ch.apply(&r, n)?;
            }
            r
        }
    };
    Ok(hermitize(&out))
}

/// Runs the schedule; `rho0` may be a qubit state or a full level-space state and
/// defaults to the maximally mixed qubit state.
pub fn run_protocol_with(
    system: &System,
    schedule: &Schedule,
    rho0: Option<&DensityMatrix>,
    options: &RunOptions,
) -> Result<Vec<CycleResult>> {
    let start = Instant::now();
    let prep = prepare(system, schedule, &options.integrator)?;
    let (n, d) = (prep.n, prep.local_dim);
    let qdim = 1usize << n;
    let full = d.pow(n as u32);
    let mut rho = match rho0 {
        None => embed_qubit_state(DensityMatrix::maximally_mixed(qdim).matrix(), n, d),
        Some(r) if r.dim() == qdim => embed_qubit_state(r.matrix(), n, d),
        Some(r) if r.dim() == full => r.matrix().clone(),
        Some(r) => return Err(ProtocolError::InitialDim { got: r.dim(), qubit: qdim, full }),
    };
    let target = schedule.target();
    let slot_time = schedule.slot_duration(&system.pulse);
    let mut time = 0.0;
    let mut out = vec![record(&rho, &prep, schedule, &target, 0, time, &start)?];
    for cycle in 1..=schedule.cycles {
        if options.stop_at.is_some_and(|f| out.last().expect("nonempty").fidelity >= f) {
            break;
        }
        for op in &prep.ops {
            rho = apply_slot(rho, op, &prep)?;
            time += slot_time;
        }
        out.push(record(&rho, &prep, schedule, &target, cycle, time, &start)?);
    }
    Ok(out)
}

pub fn run_protocol(system: &System, schedule: &Schedule, rho0: Option<&DensityMatrix>) -> Result<Vec<CycleResult>> {
    run_protocol_with(system, schedule, rho0, &RunOptions::default())
}

/// First protocol time at which the fidelity reaches the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Convergence {
    Reached { time: f64, cycles: f64 },
    /// Not reached within the cycle budget.
    Censored { time: f64, best: f64 },
}

impl Convergence {
    pub fn time(&self) -> Option<f64> {
        match self {
            Convergence::Reached { time, .. } => Some(*time),
            Convergence::Censored { .. } => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, Convergence::Censored { .. })
    }
}

/// Linear interpolation between the bracketing cycles of a trace.
pub fn convergence_from_trace(trace: &[CycleResult], target: f64) -> Result<Convergence> {
    if !(0.0..1.0).contains(&target) {
        return Err(ProtocolError::Target(target));
    }
    let first = trace.first().ok_or_else(|| ProtocolError::Invalid("empty trace".into()))?;
    if first.fidelity >= target {
        return Ok(Convergence::Reached { time: first.time, cycles: first.cycle as f64 });
    }
    for w in trace.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.fidelity >= target {
            let f = (target - a.fidelity) / (b.fidelity - a.fidelity);
            return Ok(Convergence::Reached {
                time: a.time + f * (b.time - a.time),
                cycles: a.cycle as f64 + f * (b.cycle - a.cycle) as f64,
            });
        }
    }
    let last = trace.last().expect("nonempty");
    let best = trace.iter().map(|r| r.fidelity).fold(0.0, f64::max);
    Ok(Convergence::Censored { time: last.time, best })
}

/// Runs until the target fidelity (or the cycle budget) and interpolates the crossing time.
pub fn convergence_time(system: &System, schedule: &Schedule, target: f64) -> Result<Convergence> {
    if !(0.0..1.0).contains(&target) {
        return Err(ProtocolError::Target(target));
    }
    let opts = RunOptions { stop_at: Some(target), ..RunOptions::default() };
    convergence_from_trace(&run_protocol_with(system, schedule, None, &opts)?, target)
}

/// Least-squares polynomial fit `y ≈ Σ c_k x^k` with its coefficient of determination.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyFit {
    /// Highest power first.
    pub coefficients: Vec<f64>,
    pub r_squared: f64,
}

pub fn polyfit(x: &[f64], y: &[f64], degree: usize) -> Result<PolyFit> {
    use ndarray_linalg::LeastSquaresSvd;
    if x.len() != y.len() || x.len() <= degree {
        return Err(ProtocolError::Invalid(format!("{} points cannot fit degree {degree}", x.len())));
    }
    let a = nd::Array2::from_shape_fn((x.len(), degree + 1), |(i, k)| x[i].powi((degree - k) as i32));
    let b = nd::Array1::from(y.to_vec());
    let sol = a.least_squares(&b).map_err(|e| LinalgError::Lapack(e.to_string()))?;
    let coefficients = sol.solution.to_vec();
    let fit = a.dot(&sol.solution);
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let ss_res: f64 = y.iter().zip(fit.iter()).map(|(v, f)| (v - f).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(PolyFit { coefficients, r_squared })
}

/// Convergence times (ms) versus chain length with quadratic and linear fits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub sizes: Vec<usize>,
    pub times_ms: Vec<f64>,
    /// `(a₁, b₁, c₁)` of `a₁N² + b₁N + c₁`.
    pub quadratic: PolyFit,
    /// `(b₂, c₂)` of `b₂N + c₂`.
    pub linear: PolyFit,
    pub censored: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleShape {
    Sequential,
    Parallel,
}

/// Scaling study on chains; censored sizes are reported and left out of the fits.
pub fn scaling_study(
    base: &System,
    sizes: &[usize],
    shape: ScheduleShape,
    engine: Engine,
    dissipation: DissipationMode,
    target: f64,
    max_cycles: usize,
) -> Result<ScalingFit> {
    let results: Vec<Result<Convergence>> = sizes
        .par_iter()
        .map(|&n| {
            let schedule = match shape {
                ScheduleShape::Sequential => {
                    Schedule::sequential(StabilizerKind::Chain(n), PumpScheme::Realistic, engine, max_cycles, dissipation)?
                }
                ScheduleShape::Parallel => parallel_schedule(n, engine, max_cycles, dissipation)?,
            };
            let system = chain_system(base, n)?;
            convergence_time(&system, &schedule, target)
        })
        .collect();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut censored = Vec::new();
    for (&n, r) in sizes.iter().zip(results) {
        match r? {
            Convergence::Reached { time, .. } => {
                xs.push(n as f64);
                ys.push(time * 1e3);
            }
            Convergence::Censored { .. } => censored.push(n),
        }
    }
    let quadratic = polyfit(&xs, &ys, 2)?;
    let linear = polyfit(&xs, &ys, 1)?;
    Ok(ScalingFit {
        sizes: xs.iter().map(|&x| x as usize).collect(),
        times_ms: ys,
        quadratic,
        linear,
        censored,
    })
}

/// `base` with its geometry replaced by a zig-zag chain of `n` atoms at the same spacing.
pub fn chain_system(base: &System, n: usize) -> Result<System> {
    let geometry = crate::system::make_geometry(crate::system::GeometryKind::Zigzag, n, base.geometry.spacing())?;
    let mut s = System::new(geometry, base.pulse.clone(), base.physical.clone());
    s.levels = base.levels;
    s.kick_form = base.kick_form;
    s.vdw_range = base.vdw_range;
    Ok(s)
}

/// `cos β |+0+> + sin β |−1−>`.
pub fn purification_input(beta: f64) -> Ket {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let plus = Ket::from_real(&[s, s]).expect("normalized");
    let minus = Ket::from_real(&[s, -s]).expect("normalized");
    let zero = Ket::basis(2, 0);
    let one = Ket::basis(2, 1);
    let a = plus.tensor(&zero).tensor(&plus);
    let b = minus.tensor(&one).tensor(&minus);
    let v = a.amps() * c(beta.cos(), 0.0) + b.amps() * c(beta.sin(), 0.0);
    Ket::normalized(v).expect("nonzero")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PurificationRun {
    pub beta: f64,
    pub fidelity: Vec<f64>,
    pub purity: Vec<f64>,
}

impl PurificationRun {
    /// First cycle with fidelity ≥ `target`.
    pub fn cycles_to(&self, target: f64) -> Option<usize> {
        self.fidelity.iter().position(|&f| f >= target)
    }
}

/// Three-qubit chain protocol (effective engine, reset dissipation) from each `|C₃ᵖ(β)>`.
pub fn purification_sweep(system: &System, betas: &[f64], cycles: usize) -> Result<Vec<PurificationRun>> {
    if let Some(b) = betas.iter().find(|b| !(0.0..2.0 * std::f64::consts::PI).contains(*b)) {
        return Err(ProtocolError::Invalid(format!("beta {b} outside [0, 2π)")));
    }
    let schedule = Schedule::sequential(
        StabilizerKind::Chain(3),
        PumpScheme::Realistic,
        Engine::Effective,
        cycles,
        DissipationMode::Reset,
    )?;
    betas
        .par_iter()
        .map(|&beta| {
            let rho0 = DensityMatrix::from_ket(&purification_input(beta));
            let tr = run_protocol(system, &schedule, Some(&rho0))?;
            Ok(PurificationRun {
                beta,
                fidelity: tr.iter().map(|r| r.fidelity).collect(),
                purity: tr.iter().map(|r| r.purity).collect(),
            })
        })
        .collect()
}

/// Two exact-engine runs that differ only by the Rydberg decay channels.
#[derive(Clone, Debug)]
pub struct DecayComparison {
    pub with_decay: Vec<CycleResult>,
    pub without_decay: Vec<CycleResult>,
}

impl DecayComparison {
    pub fn final_difference(&self) -> f64 {
        let a = self.with_decay.last().map_or(0.0, |r| r.fidelity);
        let b = self.without_decay.last().map_or(0.0, |r| r.fidelity);
        (a - b).abs()
    }
}

pub fn rydberg_decay_comparison(system: &System, schedule: &Schedule, gamma_r: f64) -> Result<DecayComparison> {
    if schedule.engine != Engine::Exact {
        return Err(ProtocolError::Invalid("Rydberg decay needs the exact engine".into()));
    }
    let mut with = system.clone();
    with.physical.gamma_r = gamma_r;
    let mut without = system.clone();
    without.physical.gamma_r = 0.0;
    let (a, b) = rayon::join(|| run_protocol(&with, schedule, None), || run_protocol(&without, schedule, None));
    Ok(DecayComparison { with_decay: a?, without_decay: b? })
}

/// Spectral summary of a one-cycle channel.
#[derive(Clone, Debug)]
pub struct ChannelGap {
    /// `min |Re ln μ| / duration` over non-steady eigenvalues (1/s).
    pub gap: f64,
    /// Eigenvalues with |μ − 1| < 1e-9.
    pub unit_count: usize,
    /// Trace-normalized eigenmatrix of the eigenvalue closest to 1.
    pub steady: CMat,
    pub eigenvalues: Vec<C64>,
}

/// Gap of the composed channel `channels[last] ∘ … ∘ channels[0]` on `n` qubits.
pub fn cycle_channel_gap(channels: &[LocalChannel], n: usize, duration: f64) -> Result<ChannelGap> {
    let d = 1usize << n;
    let mut s = linalg::eye(d * d);
    for ch in channels {
        let defect = ch.trace_defect();
        if defect > 1e-8 {
            return Err(ProtocolError::NotTracePreserving(defect));
        }
        s = ch.superoperator(n)?.dot(&s);
    }
    superoperator_gap(&s, d, duration)
}

pub fn superoperator_gap(s: &CMat, d: usize, duration: f64) -> Result<ChannelGap> {
    let (vals, vecs) = linalg::eig_general(s)?;
    let steady_idx = (0..vals.len())
        .min_by(|&a, &b| (vals[a] - 1.0).norm().total_cmp(&(vals[b] - 1.0).norm()))
        .expect("nonempty");
    let unit_count = vals.iter().filter(|z| (*z - 1.0).norm() < 1e-9).count();
    let gap = (0..vals.len())
        .filter(|&k| k != steady_idx)
        .map(|k| -vals[k].norm().ln() / duration)
        .fold(f64::INFINITY, f64::min)
        .max(0.0);
    let v = vecs.column(steady_idx).to_owned();
    let m = CMat::from_shape_fn((d, d), |(i, j)| v[i + j * d]);
    let m = hermitize(&(&m / trace(&m)));
    Ok(ChannelGap { gap, unit_count, steady: m, eigenvalues: vals.to_vec() })
}

/// One-cycle channels of the three-qubit chain with the `S₂` pump reduced to its first
/// `m` kets of the ladder `|0−0>, |1+0>, |0+1>, |1−1>` (π-pulse transfer, reset).
pub fn s2_ladder_channels(pulse: &PulseParams, m: usize) -> Result<Vec<LocalChannel>> {
    if !(1..=4).contains(&m) {
        return Err(ProtocolError::Invalid(format!("ladder has 1..=4 kets, got {m}")));
    }
    let plan = pump_plan(StabilizerKind::Chain(3), PumpScheme::Complete)?;
    let rabi = pulse.effective_rabi();
    let duration = pulse.timings().coherent;
    let bulk = plan.pump(1, rabi)?;
    let complete = plan.pump(2, rabi)?;
    let mut couplings = vec![bulk.couplings()[1].clone(), bulk.couplings()[0].clone(), bulk.couplings()[2].clone()];
    couplings.push(complete.couplings()[0].clone());
    couplings.truncate(m);
    let s2 = floquet::EffectivePump::new(bulk.support().to_vec(), couplings, rabi)?;
    let first = plan.pump(0, rabi)?;
    let last = plan.pump(3, rabi)?;
    Ok(vec![
        first.transfer_channel(duration, 1.0)?,
        s2.transfer_channel(duration, 1.0)?,
        last.transfer_channel(duration, 1.0)?,
    ])
}

/// Dark-state check: largest fidelity loss of the target over one application of each slot.
pub fn dark_state_defect(system: &System, schedule: &Schedule) -> Result<f64> {
    let prep = prepare(system, schedule, &IntegratorSettings::default())?;
    let target = schedule.target();
    let rho_q = DensityMatrix::from_ket(&target);
    let mut worst = 0.0f64;
    for op in &prep.ops {
        let rho = embed_qubit_state(rho_q.matrix(), prep.n, prep.local_dim);
        let out = apply_slot(rho, op, &prep)?;
        let (block, leaked) = qubit_block(&out, prep.n, prep.local_dim);
        worst = worst.max(1.0 - target.expectation(&block).re * (1.0 - leaked));
    }
    Ok(worst)
}

/// The superoperator of a full exact-engine cycle; small registers only.
pub fn exact_cycle_superoperator(system: &System, schedule: &Schedule) -> Result<CMat> {
    if schedule.engine != Engine::Exact || system.physical.gamma_r > 0.0 {
        return Err(ProtocolError::Invalid("needs the exact engine without Rydberg decay".into()));
    }
    let prep = prepare(system, schedule, &IntegratorSettings::default())?;
    let dim = prep.local_dim.pow(prep.n as u32);
    let mut s = linalg::eye(dim * dim);
    let stage = prep.dissipation.as_ref().expect("exact engine");
    for op in &prep.ops {
        let SlotOp::Exact { unitary, atoms } = op else { unreachable!("no decay") };
        let u = kron(&unitary.mapv(|z| z.conj()), unitary);
        s = stage.superoperator(prep.n, atoms)?.dot(&u).dot(&s);
    }
    Ok(s)
}

/// Fraction of a Rydberg excitation returned to `|0>` by one dissipation stage.
pub fn effective_transfer(physical: &PhysicalParams, mode: DissipationMode) -> f64 {
    match mode {
        DissipationMode::Reset => 1.0,
        DissipationMode::Lindblad { duration } => {
            lindblad::ground_population(physical.pump_rabi, physical.gamma_p, duration)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::GeometryKind;

    fn bell_system(ratio: f64) -> System {
        System::standard(GeometryKind::Zigzag, 2, ratio).unwrap()
    }

    #[test]
    fn parallel_steps_follow_the_five_step_rule() {
        let s = parallel_steps(8).unwrap();
        assert_eq!(s, vec![vec![1, 6], vec![2, 7], vec![3], vec![4], vec![0, 5]]);
        assert_eq!(parallel_steps(3).unwrap(), vec![vec![1], vec![0], vec![2]]);
        assert_eq!(parallel_steps(6).unwrap(), vec![vec![1], vec![2], vec![3], vec![4], vec![0, 5]]);
        assert!(parallel_steps(2).is_err());
        for n in 3..=12 {
            let sch = parallel_schedule(n, Engine::Effective, 1, DissipationMode::Reset).unwrap();
            let total: usize = sch.slots.iter().map(Vec::len).sum();
            assert_eq!(total, n);
        }
    }

    #[test]
    fn overlapping_slot_rejected() {
        let plan = pump_plan(StabilizerKind::Chain(3), PumpScheme::Realistic).unwrap();
        let err = Schedule::new(StabilizerKind::Chain(3), plan, vec![vec![0, 1]], Engine::Effective, 1, DissipationMode::Reset);
        assert!(matches!(err, Err(ProtocolError::Overlap { .. })));
    }

    #[test]
    fn target_is_dark() {
        let sys = System::standard(GeometryKind::Zigzag, 3, 50.0).unwrap();
        let sch = Schedule::sequential(StabilizerKind::Chain(3), PumpScheme::Realistic, Engine::Effective, 3, DissipationMode::Reset).unwrap();
        assert!(dark_state_defect(&sys, &sch).unwrap() < 1e-9);
        let rho0 = DensityMatrix::from_ket(&sch.target());
        for r in run_protocol(&sys, &sch, Some(&rho0)).unwrap() {
            assert!(r.fidelity > 1.0 - 1e-6);
        }
    }

    #[test]
    fn effective_bell_converges_monotonically() {
        let sys = bell_system(50.0);
        let sch = Schedule::bell(Engine::Effective, 8, DissipationMode::Reset).unwrap();
        let tr = run_protocol(&sys, &sch, None).unwrap();
        assert!((tr[0].fidelity - 0.25).abs() < 1e-12);
        for w in tr.windows(2) {
            assert!(w[1].fidelity >= w[0].fidelity - 1e-6);
            assert!(w[1].leaked < 1e-9);
        }
        // error halves every cycle: 1 − 0.75·2^{−8}
        assert!((tr.last().unwrap().fidelity - (1.0 - 0.75 / 256.0)).abs() < 1e-9);
    }

    #[test]
    fn exact_bell_matches_effective_at_large_detuning() {
        let sys = bell_system(50.0);
        let exact = run_protocol(&sys, &Schedule::bell(Engine::Exact, 8, DissipationMode::Reset).unwrap(), None).unwrap();
        let eff = run_protocol(&sys, &Schedule::bell(Engine::Effective, 8, DissipationMode::Reset).unwrap(), None).unwrap();
        let (a, b) = (exact.last().unwrap().fidelity, eff.last().unwrap().fidelity);
        assert!((a - b).abs() < 0.01, "{a} vs {b}");
        assert!(exact.iter().all(|r| r.leaked < 1e-9));
    }

    #[test]
    fn convergence_interpolates() {
        let mk = |cycle: usize, f: f64| CycleResult {
            cycle,
            fidelity: f,
            stabilizers: vec![],
            leaked: 0.0,
            purity: 1.0,
            time: cycle as f64,
            wall_time: 0.0,
        };
        let tr = vec![mk(0, 0.2), mk(1, 0.6), mk(2, 1.0)];
        assert_eq!(convergence_from_trace(&tr, 0.0).unwrap(), Convergence::Reached { time: 0.0, cycles: 0.0 });
        let Convergence::Reached { time, .. } = convergence_from_trace(&tr, 0.8).unwrap() else { panic!() };
        assert!((time - 1.5).abs() < 1e-12);
        let short = vec![mk(0, 0.2), mk(1, 0.6)];
        assert!(convergence_from_trace(&short, 0.9).unwrap().is_censored());
        assert!(convergence_from_trace(&tr, 1.0).is_err());
    }

    #[test]
    fn polyfit_recovers_quadratic() {
        let x: Vec<f64> = (3..=8).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.2 * v * v - 0.3 * v + 0.5).collect();
        let f = polyfit(&x, &y, 2).unwrap();
        assert!((f.coefficients[0] - 0.2).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn purification_input_at_quarter_turn_is_target() {
        let k = purification_input(std::f64::consts::FRAC_PI_4);
        assert!((k.overlap(&stabilizer::cluster_state(3)) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_channel_has_zero_gap() {
        let ch = LocalChannel::new(vec![0], 2, vec![linalg::eye(2)]).unwrap();
        let g = cycle_channel_gap(&[ch], 1, 1.0).unwrap();
        assert_eq!(g.unit_count, 4);
        assert_eq!(g.gap, 0.0);
    }

    #[test]
    fn zero_decay_comparison_is_identical() {
        let sys = bell_system(15.7);
        let sch = Schedule::bell(Engine::Exact, 2, DissipationMode::Reset).unwrap();
        let cmp = rydberg_decay_comparison(&sys, &sch, 0.0).unwrap();
        assert_eq!(cmp.final_difference(), 0.0);
    }
}
