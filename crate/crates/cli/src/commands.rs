use std::f64::consts::PI;
use std::path::Path;

use serde_json::{json, Value};

use rydpump::floquet::sweep::predicted_crossings;
use rydpump::floquet::{locate_avoided_crossings, product_probe, quasienergy_sweep};
use rydpump::linalg::{DensityMatrix, Ket};
use rydpump::lindblad::{
    closed_form_eigenvalues, convergence_trace, damping_regime, default_step, eigenvalue_mismatch,
    ground_population, liouvillian_spectrum, three_level_model, ER,
};
use rydpump::noise::{ensemble_average, sample_seed, NoiseSources};
use rydpump::protocol::{
    convergence_from_trace, purification_sweep, run_protocol_with, scaling_study, Convergence, CycleResult,
    Engine, RunOptions, Schedule, ScheduleShape, ScalingFit,
};
use rydpump::stabilizer::{kernel_basis, pump_plan, pump_rank, PumpScheme, PumpSet, StabilizerKind};
use rydpump::system::{AtomDrive, DriveSpec, GeometryKind};

use crate::config::ExperimentConfig;
use crate::output::{num, Bundle};
use crate::CliError;

/// How a successful command ended.
pub enum Status {
    Done,
    /// Outputs were written but a target was not reached within the budget.
    Censored(String),
}

const BELL_RATIO: f64 = 15.7;
const PROTOCOL_RATIO: f64 = 50.0;

fn bundle(cfg: &ExperimentConfig, command: &str) -> Result<Bundle, CliError> {
    Bundle::new(Path::new(&cfg.output.dir), command, cfg.hash(), cfg.seed)
}

fn emit(bundle: Bundle, summary: Value) -> Result<(), CliError> {
    let doc = bundle.finish(summary)?;
    println!("{}", serde_json::to_string(&doc)?);
    Ok(())
}

pub fn spectrum(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    let grid = cfg.ratio_grid()?;
    let settings = cfg.integrator()?;
    let n = cfg.system.atoms;
    if n == 0 {
        return Err(CliError::Validation("spectrum needs at least one atom".into()));
    }
    let base = cfg.system(cfg.system.geometry, n, grid[0])?;
    let labels = cfg.probe(n)?;
    let drive = labels.iter().enumerate().fold(DriveSpec::idle(n), |d, (i, &s)| d.with(i, AtomDrive::both(s)));
    let amps: Vec<_> = labels.iter().map(|s| s.amps()).collect();
    let probe = product_probe(&base, &amps);
    let spacing = cfg.spectrum.spacing;
    let spec = quasienergy_sweep(&base, &drive, &grid, std::slice::from_ref(&probe), spacing, &settings)?;
    let crossings = if grid.len() >= 3 {
        locate_avoided_crossings(&base, &drive, &grid, &probe, spacing, cfg.spectrum.threshold, &settings)?
    } else {
        Vec::new()
    };
    let omega = base.pulse.rabi;
    let mut out = bundle(cfg, "spectrum")?;
    let mut rows = Vec::new();
    for (p, &ratio) in grid.iter().enumerate() {
        let dominant = spec.dominant_branch(p, 0);
        for k in 0..spec.n_branches() {
            rows.push(vec![
                num(ratio),
                k.to_string(),
                num(spec.quasienergies[p][k] / omega),
                num(spec.overlaps[p][0][k]),
                (k == dominant).to_string(),
            ]);
        }
    }
    out.table("spectrum", &["detuning_ratio", "branch", "quasienergy_over_rabi", "probe_overlap", "dominant"], &rows)?;
    let rows: Vec<Vec<String>> = crossings
        .iter()
        .map(|c| vec![num(c.ratio), num(c.gap / omega), num(c.hybridization)])
        .collect();
    out.table("crossings", &["detuning_ratio", "gap_over_rabi", "hybridization"], &rows)?;
    let eps: Vec<f64> = (0..grid.len()).map(|p| spec.quasienergies[p][spec.dominant_branch(p, 0)].abs()).collect();
    let mean = eps.iter().sum::<f64>() / eps.len() as f64;
    let spread = if mean > 0.0 { eps.iter().map(|e| (e - mean).abs()).fold(0.0, f64::max) / mean } else { 0.0 };
    let predicted = predicted_crossings(&base, grid[0], grid[grid.len() - 1]);
    emit(
        out,
        json!({
            "atoms": n,
            "points": grid.len(),
            "branches": spec.n_branches(),
            "crossings": crossings.iter().map(|c| c.ratio).collect::<Vec<_>>(),
            "predicted_crossings": predicted,
            "probe_quasienergy_spread": spread,
        }),
    )?;
    Ok(Status::Done)
}

pub fn liouvillian(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    let section = &cfg.liouvillian;
    if section.ratios.is_empty() {
        return Err(CliError::Validation("liouvillian ratio grid is empty".into()));
    }
    if let Some(r) = section.ratios.iter().find(|r| !(**r > 0.0 && r.is_finite())) {
        return Err(CliError::Validation(format!("Ωp/γp = {r} must be positive")));
    }
    if !(section.duration_ns > 0.0) || section.sample_every == 0 {
        return Err(CliError::Validation("need duration_ns > 0 and sample_every >= 1".into()));
    }
    let gamma = cfg.gamma_p()?;
    let rr = DensityMatrix::from_ket(&Ket::basis(3, ER));
    let t_end = section.duration_ns * 1e-9;
    let mut gaps = Vec::new();
    let mut eig_rows = Vec::new();
    let mut trace_rows = Vec::new();
    let mut lep = Vec::new();
    let mut worst_mismatch = 0.0f64;
    for &ratio in &section.ratios {
        let m = three_level_model(ratio * gamma, gamma)?;
        let spec = liouvillian_spectrum(&m, Some(&rr))?;
        let closed = closed_form_eigenvalues(ratio * gamma, gamma);
        let mismatch = eigenvalue_mismatch(&spec.eigenvalues, &closed, gamma, 1e-6);
        worst_mismatch = worst_mismatch.max(mismatch);
        let closed_gap = closed.iter().map(|l| -l.re).filter(|&g| g > 1e-9 * gamma).fold(f64::INFINITY, f64::min);
        if spec.defective {
            lep.push(ratio);
        }
        gaps.push(vec![
            num(ratio),
            format!("{:?}", damping_regime(ratio * gamma, gamma)).to_lowercase(),
            num(spec.gap / gamma),
            num(closed_gap / gamma),
            spec.restricted_gap.map_or(String::new(), |g| num(g / gamma)),
            spec.defective.to_string(),
            num(mismatch),
        ]);
        for (source, values) in [("numeric", spec.eigenvalues.as_slice()), ("closed_form", closed.as_slice())] {
            for (k, l) in values.iter().enumerate() {
                eig_rows.push(vec![num(ratio), source.into(), k.to_string(), num(l.re / gamma), num(l.im / gamma)]);
            }
        }
        let dt = default_step(&m, None);
        let steps = (t_end / dt).ceil().max(1.0);
        for (t, d) in convergence_trace(&m, &rr, t_end, t_end / steps, section.sample_every)? {
            trace_rows.push(vec![
                num(ratio),
                num(t * 1e9),
                num(d),
                num(2f64.sqrt() * (-gamma * t / 2.0).exp()),
                num(ground_population(ratio * gamma, gamma, t)),
            ]);
        }
    }
    let mut out = bundle(cfg, "liouvillian")?;
    out.table(
        "liouvillian_gaps",
        &["pump_ratio", "regime", "gap_over_gamma", "closed_gap_over_gamma", "restricted_gap_over_gamma", "defective", "eigenvalue_mismatch"],
        &gaps,
    )?;
    out.table("liouvillian_eigenvalues", &["pump_ratio", "source", "index", "re_over_gamma", "im_over_gamma"], &eig_rows)?;
    out.table(
        "liouvillian_traces",
        &["pump_ratio", "time_ns", "distance_to_steady", "strong_drive_envelope", "closed_form_ground_population"],
        &trace_rows,
    )?;
    emit(out, json!({ "ratios": section.ratios, "exceptional_points": lep, "max_eigenvalue_mismatch": worst_mismatch }))?;
    Ok(Status::Done)
}

fn trace_rows(trace: &[CycleResult]) -> Vec<Vec<String>> {
    trace
        .iter()
        .map(|r| {
            let mut row = vec![r.cycle.to_string(), num(r.time * 1e6), num(r.fidelity), num(r.leaked), num(r.purity)];
            row.extend(r.stabilizers.iter().map(|&s| num(s)));
            row
        })
        .collect()
}

fn trace_header(n_stabilizers: usize) -> Vec<String> {
    let mut h: Vec<String> = ["cycle", "time_us", "fidelity", "leaked", "purity"].map(String::from).to_vec();
    h.extend((1..=n_stabilizers).map(|i| format!("stabilizer_{i}")));
    h
}

fn convergence_status(c: &Convergence, what: &str) -> Status {
    match c {
        Convergence::Reached { .. } => Status::Done,
        Convergence::Censored { best, .. } => Status::Censored(format!("{what}: best fidelity {best}")),
    }
}

/// Per-command fallbacks for settings the config leaves unset.
struct TraceDefaults {
    scheme: PumpScheme,
    engine: Engine,
    cycles: usize,
    ratio: f64,
}

/// Runs one schedule from the maximally mixed state and writes the per-cycle trace.
fn trace_command(
    cfg: &ExperimentConfig,
    command: &str,
    kind: StabilizerKind,
    geometry: GeometryKind,
    defaults: TraceDefaults,
) -> Result<Status, CliError> {
    let target = cfg.target_fidelity()?;
    let engine = cfg.protocol.engine.unwrap_or(defaults.engine);
    let cycles = cfg.protocol.cycles.unwrap_or(defaults.cycles);
    let dissipation = cfg.dissipation()?;
    let schedule = if kind == StabilizerKind::Bell {
        Schedule::bell(engine, cycles, dissipation)?
    } else {
        Schedule::sequential(kind, cfg.protocol.scheme.unwrap_or(defaults.scheme), engine, cycles, dissipation)?
    };
    let system = cfg.system(geometry, kind.n_qubits(), defaults.ratio)?;
    let opts = RunOptions { stop_at: None, integrator: cfg.integrator()? };
    let trace = run_protocol_with(&system, &schedule, None, &opts)?;
    let convergence = convergence_from_trace(&trace, target)?;
    let last = trace.last().expect("cycle 0 is always recorded");
    let mut out = bundle(cfg, command)?;
    let header = trace_header(last.stabilizers.len());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    out.table(command, &header, &trace_rows(&trace))?;
    emit(
        out,
        json!({
            "target": kind,
            "engine": engine,
            "dissipation": dissipation,
            "cycles": cycles,
            "final_fidelity": last.fidelity,
            "final_stabilizers": last.stabilizers,
            "final_purity": last.purity,
            "convergence": convergence,
        }),
    )?;
    Ok(convergence_status(&convergence, command))
}

fn state_or(cfg: &ExperimentConfig, default: StabilizerKind) -> StabilizerKind {
    cfg.protocol.state.unwrap_or(default)
}

pub fn bell(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    if state_or(cfg, StabilizerKind::Bell) != StabilizerKind::Bell {
        return Err(CliError::Validation("`protocol bell` pumps the Bell target only".into()));
    }
    let geometry = cfg.system.geometry;
    let defaults = TraceDefaults { scheme: PumpScheme::Realistic, engine: Engine::Exact, cycles: 8, ratio: BELL_RATIO };
    trace_command(cfg, "bell", StabilizerKind::Bell, geometry, defaults)
}

pub fn cluster(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    let kind = state_or(cfg, StabilizerKind::Chain(6));
    if !matches!(kind, StabilizerKind::Chain(_)) {
        return Err(CliError::Validation(format!("`protocol cluster` needs a chain target, got {kind:?}")));
    }
    let geometry = cfg.system.geometry;
    let defaults =
        TraceDefaults { scheme: PumpScheme::Realistic, engine: Engine::Effective, cycles: 30, ratio: PROTOCOL_RATIO };
    trace_command(cfg, "cluster", kind, geometry, defaults)
}

pub fn graph(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    let kind = state_or(cfg, StabilizerKind::Tshape);
    let geometry = match kind {
        StabilizerKind::Tshape => GeometryKind::Tshape,
        StabilizerKind::SixQubit2d => GeometryKind::Square,
        _ => return Err(CliError::Validation(format!("`protocol graph` needs tshape or six_qubit2d, got {kind:?}"))),
    };
    let defaults =
        TraceDefaults { scheme: PumpScheme::FourBody, engine: Engine::Effective, cycles: 60, ratio: PROTOCOL_RATIO };
    trace_command(cfg, "graph", kind, geometry, defaults)
}

pub fn purify(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    if cfg.protocol.engine == Some(Engine::Exact) || cfg.dissipation()? != rydpump::lindblad::DissipationMode::Reset {
        return Err(CliError::Validation("`protocol purify` runs the effective engine with reset only".into()));
    }
    if cfg.protocol.betas == 0 {
        return Err(CliError::Validation("need at least one β".into()));
    }
    let target = cfg.target_fidelity()?;
    let cycles = cfg.protocol.cycles.unwrap_or(60);
    let system = cfg.system(cfg.system.geometry, 3, PROTOCOL_RATIO)?;
    let n = cfg.protocol.betas;
    let betas: Vec<f64> = (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect();
    let runs = purification_sweep(&system, &betas, cycles)?;
    let mut rows = Vec::new();
    for r in &runs {
        for (c, (f, p)) in r.fidelity.iter().zip(&r.purity).enumerate() {
            rows.push(vec![num(r.beta), c.to_string(), num(*f), num(*p)]);
        }
    }
    let reached: Vec<Option<usize>> = runs.iter().map(|r| r.cycles_to(target)).collect();
    let mut out = bundle(cfg, "purify")?;
    out.table("purify", &["beta", "cycle", "fidelity", "purity"], &rows)?;
    let summary_rows: Vec<Vec<String>> = runs
        .iter()
        .zip(&reached)
        .map(|(r, c)| vec![num(r.beta), c.map_or(String::new(), |c| c.to_string())])
        .collect();
    out.table("purify_cycles", &["beta", "cycles_to_target"], &summary_rows)?;
    emit(out, json!({ "cycles": cycles, "target_fidelity": target, "betas": betas, "cycles_to_target": reached }))?;
    let missed = reached.iter().filter(|c| c.is_none()).count();
    Ok(if missed == 0 { Status::Done } else { Status::Censored(format!("{missed} of {n} inputs below target")) })
}

fn fit_rows(shape: &str, fit: &ScalingFit) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (model, f) in [("quadratic", &fit.quadratic), ("linear", &fit.linear)] {
        let deg = f.coefficients.len() - 1;
        for (k, c) in f.coefficients.iter().enumerate() {
            rows.push(vec![shape.into(), model.into(), (deg - k).to_string(), num(*c), num(f.r_squared)]);
        }
    }
    rows
}

pub fn scaling(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    let sizes = &cfg.protocol.sizes;
    if sizes.len() < 3 {
        return Err(CliError::Validation("scaling needs at least three chain lengths".into()));
    }
    let target = cfg.target_fidelity()?;
    let engine = cfg.protocol.engine.unwrap_or(Engine::Effective);
    let dissipation = cfg.dissipation()?;
    let base = cfg.system(GeometryKind::Zigzag, 3, PROTOCOL_RATIO)?;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    let mut summary = serde_json::Map::new();
    let mut censored = 0;
    for (label, shape) in [("sequential", ScheduleShape::Sequential), ("parallel", ScheduleShape::Parallel)] {
        let fit = scaling_study(&base, sizes, shape, engine, dissipation, target, cfg.protocol.max_cycles)?;
        for (&n, &t) in fit.sizes.iter().zip(&fit.times_ms) {
            rows.push(vec![label.into(), n.to_string(), num(t), "false".into()]);
        }
        for &n in &fit.censored {
            rows.push(vec![label.into(), n.to_string(), String::new(), "true".into()]);
        }
        fits.extend(fit_rows(label, &fit));
        censored += fit.censored.len();
        summary.insert(label.into(), serde_json::to_value(&fit)?);
    }
    let mut out = bundle(cfg, "scaling")?;
    out.table("scaling", &["schedule", "atoms", "time_ms", "censored"], &rows)?;
    out.table("scaling_fits", &["schedule", "model", "power", "coefficient_ms", "r_squared"], &fits)?;
    emit(out, Value::Object(summary))?;
    Ok(if censored == 0 { Status::Done } else { Status::Censored(format!("{censored} chain lengths censored")) })
}

/// Rank and dark space of the pump set; a kernel other than the target alone fails the certificate.
pub fn kernel_check(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    let kind = state_or(cfg, StabilizerKind::Chain(4));
    let scheme = cfg.protocol.scheme.unwrap_or(match kind {
        StabilizerKind::Tshape | StabilizerKind::SixQubit2d => PumpScheme::FourBody,
        _ => PumpScheme::Realistic,
    });
    let set = match kind {
        StabilizerKind::Bell => PumpSet::bell(),
        _ => PumpSet::from_plan(&pump_plan(kind, scheme)?)?,
    };
    let rank = pump_rank(&set)?;
    let basis = kernel_basis(&set)?;
    let target = kind.target();
    let overlap = basis.iter().map(|k| k.overlap(&target)).sum::<f64>();
    let unique = basis.len() == 1 && overlap > 1.0 - 1e-10;
    let mut out = bundle(cfg, "kernel-check")?;
    out.table(
        "kernel",
        &["qubits", "pump_kets", "rank", "kernel_dim", "target_overlap", "unique"],
        &[vec![
            kind.n_qubits().to_string(),
            set.kets().len().to_string(),
            rank.to_string(),
            basis.len().to_string(),
            num(overlap),
            unique.to_string(),
        ]],
    )?;
    emit(out, json!({ "target": kind, "rank": rank, "kernel_dim": basis.len(), "target_overlap": overlap, "unique": unique }))?;
    if unique {
        Ok(Status::Done)
    } else {
        Err(CliError::Certificate(format!("dark space has dimension {} (target overlap {overlap})", basis.len())))
    }
}

pub fn noise(cfg: &ExperimentConfig) -> Result<Status, CliError> {
    if state_or(cfg, StabilizerKind::Bell) != StabilizerKind::Bell {
        return Err(CliError::Validation("`protocol noise` averages the Bell protocol only".into()));
    }
    let target = cfg.target_fidelity()?;
    let engine = cfg.protocol.engine.unwrap_or(Engine::Exact);
    let cycles = cfg.protocol.cycles.unwrap_or(8);
    let schedule = Schedule::bell(engine, cycles, cfg.dissipation()?)?;
    let system = cfg.system(cfg.system.geometry, 2, BELL_RATIO)?;
    let sources = NoiseSources { doppler: cfg.noise.doppler, position: cfg.noise.position };
    let ens = ensemble_average(&system, &schedule, cfg.noise.samples, cfg.seed, sources)?;
    let cycle_time = schedule.cycle_duration(&system.pulse);
    let rows: Vec<Vec<String>> = ens
        .mean
        .iter()
        .zip(&ens.std_error)
        .enumerate()
        .map(|(c, (m, s))| vec![c.to_string(), num(c as f64 * cycle_time * 1e6), num(*m), num(*s)])
        .collect();
    let mut out = bundle(cfg, "noise")?;
    out.table("noise", &["cycle", "time_us", "mean_fidelity", "std_error"], &rows)?;
    if ens.failures == 0 {
        let samples: Vec<Vec<String>> = ens
            .finals
            .iter()
            .enumerate()
            .map(|(k, f)| vec![k.to_string(), sample_seed(cfg.seed, k as u64).to_string(), num(*f)])
            .collect();
        out.table("noise_samples", &["sample", "seed", "final_fidelity"], &samples)?;
    }
    let reached = ens.mean.iter().position(|&m| m >= target);
    emit(
        out,
        json!({
            "samples": ens.samples,
            "failures": ens.failures,
            "final_mean_fidelity": ens.final_mean(),
            "final_std_error": ens.final_std_error(),
            "cycles_to_target": reached,
        }),
    )?;
    Ok(match reached {
        Some(_) => Status::Done,
        None => Status::Censored(format!("mean fidelity {} below {target}", ens.final_mean())),
    })
}
