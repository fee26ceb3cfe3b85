//! Liouvillians, master-equation integration and the engineered-dissipation stage.
//!
//! Superoperators act on column-stacked density matrices:
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{apply_superoperator, ChannelError, LocalChannel};
use crate::linalg::{
    self, c, dagger, eye, hermitize, kron, trace, CMat, CVec, DensityMatrix, LinalgError, ZERO,
};
use crate::system::{PhysicalParams, LEVEL_0, LEVEL_1, LEVEL_P, LEVEL_R};

#[derive(Debug, Error)]
pub enum LindbladError {
    #[error("time-dependent Hamiltonian has no Liouvillian; integrate instead")]
    TimeDependent,
    #[error("collapse rate {0} is negative")]
    NegativeRate(f64),
    #[error("invalid step: {0}")]
    InvalidStep(String),
    #[error("trace drifted by {drift:.3e} at t = {t:.3e} s")]
    TraceDrift { drift: f64, t: f64 },
    #[error("steady state is not unique ({0} null modes)")]
    DegenerateSteadyState(usize),
    #[error("dimension {got} does not match {expected}")]
    Dim { got: usize, expected: usize },
    #[error("level scheme lacks |{0}>")]
    MissingLevel(&'static str),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
}

pub type Result<T> = std::result::Result<T, LindbladError>;

/// Collapse operator `√rate · op`.
#[derive(Clone, Debug)]
pub struct Collapse {
    pub op: CMat,
    pub rate: f64,
}

impl Collapse {
    pub fn new(op: CMat, rate: f64) -> Result<Self> {
        if !(rate >= 0.0) {
            return Err(LindbladError::NegativeRate(rate));
        }
        Ok(Collapse { op, rate })
    }

    fn scaled(&self) -> CMat {
        &self.op * c(self.rate.sqrt(), 0.0)
    }
}

pub type DrivenHamiltonian = Arc<dyn Fn(f64) -> CMat + Send + Sync>;

#[derive(Clone)]
pub enum Hamiltonian {
    Static(CMat),
    Driven { dim: usize, h: DrivenHamiltonian },
}

impl Hamiltonian {
    pub fn dim(&self) -> usize {
        match self {
            Hamiltonian::Static(h) => h.nrows(),
            Hamiltonian::Driven { dim, .. } => *dim,
        }
    }

    pub fn at(&self, t: f64) -> CMat {
        match self {
            Hamiltonian::Static(h) => h.clone(),
            Hamiltonian::Driven { h, .. } => h(t),
        }
    }
}

impl std::fmt::Debug for Hamiltonian {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Hamiltonian::Static(h) => write!(f, "Static({}x{})", h.nrows(), h.ncols()),
            Hamiltonian::Driven { dim, .. } => write!(f, "Driven({dim})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LindbladModel {
    pub hamiltonian: Hamiltonian,
    pub collapses: Vec<Collapse>,
}

impl LindbladModel {
    pub fn new(hamiltonian: Hamiltonian, collapses: Vec<Collapse>) -> Result<Self> {
        let d = hamiltonian.dim();
        for cl in &collapses {
            if cl.op.dim() != (d, d) {
                return Err(LindbladError::Dim { got: cl.op.nrows(), expected: d });
            }
        }
        Ok(LindbladModel { hamiltonian, collapses })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn max_rate(&self) -> f64 {
        let h = self.hamiltonian.at(0.0);
        let hmax = h.iter().map(|z| z.norm()).fold(0.0, f64::max);
        self.collapses.iter().map(|cl| cl.rate).fold(hmax, f64::max)
    }

    /// `dρ/dt` at time `t`.
    pub fn rhs(&self, t: f64, rho: &CMat) -> CMat {
        let h = self.hamiltonian.at(t);
        let mut out = (h.dot(rho) - rho.dot(&h)) * c(0.0, -1.0);
        for cl in &self.collapses {
            let l = cl.scaled();
            let ld = dagger(&l);
            let ldl = ld.dot(&l);
            out = out + l.dot(rho).dot(&ld) - (ldl.dot(rho) + rho.dot(&ldl)) * c(0.5, 0.0);
        }
        out
    }
}

/// Column-stacked Liouvillian of a time-independent model.
pub fn build_liouvillian(m: &LindbladModel) -> Result<CMat> {
    let Hamiltonian::Static(h) = &m.hamiltonian else {
        return Err(LindbladError::TimeDependent);
    };
    let d = h.nrows();
    let id = eye(d);
    let mut l = (kron(&id, h) - kron(&h.t().to_owned(), &id)) * c(0.0, -1.0);
    for cl in &m.collapses {
        let op = cl.scaled();
        let ldl = dagger(&op).dot(&op);
        l = l + kron(&op.mapv(|z| z.conj()), &op)
            - (kron(&id, &ldl) + kron(&ldl.t().to_owned(), &id)) * c(0.5, 0.0);
    }
    Ok(l)
}

/// Column-stacked vector of a matrix.
pub fn vectorize(rho: &CMat) -> CVec {
    let d = rho.nrows();
    (0..d * d).map(|k| rho[[k % d, k / d]]).collect()
}

pub fn unvectorize(v: &CVec, d: usize) -> CMat {
    CMat::from_shape_fn((d, d), |(i, j)| v[i + j * d])
}

#[derive(Clone, Debug)]
pub struct LiouvillianSpectrum {
    /// Sorted by |Re λ| ascending.
    pub eigenvalues: Vec<C64>,
    /// Right eigenmatrices, matching `eigenvalues`.
    pub eigenmatrices: Vec<CMat>,
    /// Smallest nonzero |Re λ|.
    pub gap: f64,
    /// Smallest nonzero |Re λ| among modes excited by the initial state, if one was given.
    pub restricted_gap: Option<f64>,
    /// Eigenvalues of the modes excited by the initial state.
    pub excited_modes: Option<Vec<C64>>,
    /// The eigenvector matrix is numerically singular (exceptional point).
    pub defective: bool,
    pub condition: f64,
}

impl LiouvillianSpectrum {
    /// Zero threshold `1e-8 · max|λ|`.
    pub fn zero_tol(&self) -> f64 {
        1e-8 * self.eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    pub fn null_count(&self) -> usize {
        let tol = self.zero_tol();
        self.eigenvalues.iter().filter(|z| z.norm() < tol).count()
    }

    /// Trace-normalized Hermitian null eigenmatrix.
    pub fn steady_state(&self) -> Result<DensityMatrix> {
        let n = self.null_count();
        if n != 1 {
            return Err(LindbladError::DegenerateSteadyState(n));
        }
        let m = hermitize(&self.eigenmatrices[0]);
        let tr = trace(&m);
        Ok(DensityMatrix::from_trusted(&m / tr))
    }
}

/// Numerical spectrum; with `initial`, also the gap over the modes it excites.
///
/// The excited modes are found as the spectrum of the Liouvillian on the Krylov
/// space `span{ρ0, Lρ0, L²ρ0, …}`, which is exactly the sum of the (generalized)
/// eigenspaces with nonzero left-eigenvector overlap and stays well defined at
/// exceptional points where the eigenvector matrix is singular.
pub fn liouvillian_spectrum(m: &LindbladModel, initial: Option<&DensityMatrix>) -> Result<LiouvillianSpectrum> {
    let l = build_liouvillian(m)?;
    let d = m.dim();
    let (vals, vecs) = linalg::eig_general(&l)?;
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].re.abs().total_cmp(&vals[b].re.abs()).then(vals[a].im.total_cmp(&vals[b].im)));
    let eigenvalues: Vec<C64> = order.iter().map(|&k| vals[k]).collect();
    let eigenmatrices: Vec<CMat> = order.iter().map(|&k| unvectorize(&vecs.column(k).to_owned(), d)).collect();
    let scale = eigenvalues.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let tol = 1e-8 * scale;
    let gap = eigenvalues
        .iter()
        .filter(|z| z.norm() >= tol)
        .map(|z| z.re.abs())
        .fold(f64::INFINITY, f64::min);
    let condition = condition_number(&vecs);
    let defective = !(condition < 1e8);
    let (restricted_gap, excited_modes) = match initial {
        Some(rho0) => {
            if rho0.dim() != d {
                return Err(LindbladError::Dim { got: rho0.dim(), expected: d });
            }
            let modes = krylov_modes(&l, &vectorize(rho0.matrix()), 1e-10)?;
            let g = modes
                .iter()
                .filter(|z| z.norm() >= tol)
                .map(|z| z.re.abs())
                .fold(f64::INFINITY, f64::min);
            (Some(g), Some(modes))
        }
        None => (None, None),
    };
    Ok(LiouvillianSpectrum { eigenvalues, eigenmatrices, gap, restricted_gap, excited_modes, defective, condition })
}

fn condition_number(m: &CMat) -> f64 {
    use ndarray_linalg::SVD;
    match m.svd(false, false) {
        Ok((_, s, _)) => {
            let max = s.iter().cloned().fold(0.0, f64::max);
            let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
            if min > 0.0 {
                max / min
            } else {
                f64::INFINITY
            }
        }
        Err(_) => f64::INFINITY,
    }
}

/// Eigenvalues of `L` restricted to the Krylov space of `v` (Arnoldi with full
/// reorthogonalization; stops when the new direction is below `tol` relative).
fn krylov_modes(l: &CMat, v: &CVec, tol: f64) -> Result<Vec<C64>> {
    let n = v.len();
    let norm = |x: &CVec| x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let mut basis: Vec<CVec> = vec![v / c(norm(v), 0.0)];
    let lnorm = l.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    while basis.len() < n {
        let mut w = l.dot(basis.last().expect("nonempty"));
        for _ in 0..2 {
            for b in &basis {
                let proj: C64 = b.iter().zip(w.iter()).map(|(x, y)| x.conj() * y).sum();
                w = w - b * proj;
            }
        }
        let wn = norm(&w);
        if wn <= tol * lnorm {
            break;
        }
        basis.push(w / c(wn, 0.0));
    }
    let k = basis.len();
    let q = CMat::from_shape_fn((n, k), |(i, j)| basis[j][i]);
    let hk = dagger(&q).dot(l).dot(&q);
    Ok(linalg::eig_general(&hk)?.0.to_vec())
}

/// States sampled along a trajectory.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

pub const TRACE_DRIFT_TOL: f64 = 1e-8;

/// Fixed-step RK4 from `rho0` to `t_end`, Hermitizing every step; samples every
/// `sample_every` steps plus the final state.
pub fn integrate_master_eq(
    m: &LindbladModel,
    rho0: &DensityMatrix,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<Trajectory> {
    if !(dt > 0.0) || !(t_end >= 0.0) || sample_every == 0 {
        return Err(LindbladError::InvalidStep(format!("dt {dt}, t_end {t_end}")));
    }
    if rho0.dim() != m.dim() {
        return Err(LindbladError::Dim { got: rho0.dim(), expected: m.dim() });
    }
    let steps = (t_end / dt).round().max(1.0) as usize;
    let h = t_end / steps as f64;
    let mut rho = rho0.matrix().clone();
    let tr0 = trace(&rho).re;
    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    for k in 0..steps {
        let t = k as f64 * h;
        let k1 = m.rhs(t, &rho);
        let k2 = m.rhs(t + h / 2.0, &(&rho + &(&k1 * c(h / 2.0, 0.0))));
        let k3 = m.rhs(t + h / 2.0, &(&rho + &(&k2 * c(h / 2.0, 0.0))));
        let k4 = m.rhs(t + h, &(&rho + &(&k3 * c(h, 0.0))));
        rho = rho + (k1 + (k2 + k3) * c(2.0, 0.0) + k4) * c(h / 6.0, 0.0);
        rho = hermitize(&rho);
        let drift = (trace(&rho).re - tr0).abs();
        if drift > TRACE_DRIFT_TOL {
            return Err(LindbladError::TraceDrift { drift, t: t + h });
        }
        if (k + 1) % sample_every == 0 || k + 1 == steps {
            times.push(t + h);
            states.push(DensityMatrix::from_trusted(rho.clone()));
        }
    }
    Ok(Trajectory { times, states })
}

/// Default RK4 step `min(1/(50·max rate), drive_period/200)`.
pub fn default_step(m: &LindbladModel, drive_period: Option<f64>) -> f64 {
    let a = 1.0 / (50.0 * m.max_rate().max(f64::MIN_POSITIVE));
    drive_period.map_or(a, |p| a.min(p / 200.0))
}

/// `(t, ‖ρ(t) − ρ_ss‖)` along an RK4 trajectory.
pub fn convergence_trace(
    m: &LindbladModel,
    rho0: &DensityMatrix,
    t_end: f64,
    dt: f64,
    sample_every: usize,
) -> Result<Vec<(f64, f64)>> {
    let ss = liouvillian_spectrum(m, None)?.steady_state()?;
    let traj = integrate_master_eq(m, rho0, t_end, dt, sample_every)?;
    traj.times
        .iter()
        .zip(&traj.states)
        .map(|(&t, s)| Ok((t, linalg::hs_distance(s, &ss)?)))
        .collect()
}

// ---- three-level engineered dissipation: |0>, |r>, |p> ----

pub const E0: usize = 0;
pub const ER: usize = 1;
pub const EP: usize = 2;

/// `H = (Ωp/2)(|p><r| + h.c.)`, `L = √γp |0><p|`, on `{|0>, |r>, |p>}`.
pub fn three_level_model(pump_rabi: f64, gamma_p: f64) -> Result<LindbladModel> {
    let mut h = CMat::zeros((3, 3));
    h[[EP, ER]] = c(pump_rabi / 2.0, 0.0);
    h[[ER, EP]] = c(pump_rabi / 2.0, 0.0);
    let mut l = CMat::zeros((3, 3));
    l[[E0, EP]] = c(1.0, 0.0);
    LindbladModel::new(Hamiltonian::Static(h), vec![Collapse::new(l, gamma_p)?])
}

/// `κ = √(γp² − 4Ωp²)` (imaginary in the underdamped regime).
pub fn kappa(pump_rabi: f64, gamma_p: f64) -> C64 {
    c(gamma_p * gamma_p - 4.0 * pump_rabi * pump_rabi, 0.0).sqrt()
}

/// The nine closed-form eigenvalues, grouped as
/// `0, −(γ−κ)/4 ×2, −(γ+κ)/4 ×2, −(γ−κ)/2, −γ/2 ×2, −(γ+κ)/2`.
pub fn closed_form_eigenvalues(pump_rabi: f64, gamma_p: f64) -> [C64; 9] {
    let k = kappa(pump_rabi, gamma_p);
    let g = c(gamma_p, 0.0);
    let q1 = -(g - k) / 4.0;
    let q2 = -(g + k) / 4.0;
    [ZERO, q1, q1, q2, q2, -(g - k) / 2.0, -g / 2.0, -g / 2.0, -(g + k) / 2.0]
}

/// Largest mismatch between numerical and closed-form eigenvalues, relative to γp.
///
/// Values within `merge` (relative) of each other are compared as cluster means.
/// At the exceptional point the eigenvalues sit in Jordan blocks, where each
/// computed eigenvalue carries an error of order ε^(1/k) while the cluster mean
/// (a trace over the invariant subspace) stays accurate to roundoff.
pub fn eigenvalue_mismatch(numeric: &[C64], closed: &[C64], scale: f64, merge: f64) -> f64 {
    let clusters = cluster(closed, merge * scale);
    let mut used = vec![false; numeric.len()];
    let mut worst = 0.0f64;
    for cl in clusters {
        let center = cl.iter().sum::<C64>() / cl.len() as f64;
        // nearest unused numerical values
        let mut cand: Vec<usize> = (0..numeric.len()).filter(|&i| !used[i]).collect();
        cand.sort_by(|&a, &b| (numeric[a] - center).norm().total_cmp(&(numeric[b] - center).norm()));
        let pick = &cand[..cl.len().min(cand.len())];
        for &i in pick {
            used[i] = true;
        }
        let mean = pick.iter().map(|&i| numeric[i]).sum::<C64>() / pick.len().max(1) as f64;
        worst = worst.max((mean - center).norm() / scale);
    }
    worst
}

fn cluster(values: &[C64], tol: f64) -> Vec<Vec<C64>> {
    let mut out: Vec<Vec<C64>> = Vec::new();
    for &v in values {
        match out.iter_mut().find(|cl| (cl[0] - v).norm() <= tol) {
            Some(cl) => cl.push(v),
            None => out.push(vec![v]),
        }
    }
    out
}

/// Damping regime of the three-level model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DampingRegime {
    Overdamped,
    Critical,
    Underdamped,
}

pub fn damping_regime(pump_rabi: f64, gamma_p: f64) -> DampingRegime {
    let x = 2.0 * pump_rabi / gamma_p;
    if (x - 1.0).abs() < 1e-12 {
        DampingRegime::Critical
    } else if x < 1.0 {
        DampingRegime::Overdamped
    } else {
        DampingRegime::Underdamped
    }
}

/// Remaining `(ρ_rr, ρ_pp)` from `ρ(0) = |r><r|`.
pub fn rydberg_populations(pump_rabi: f64, gamma_p: f64, t: f64) -> (f64, f64) {
    let env = (-gamma_p * t / 2.0).exp();
    match damping_regime(pump_rabi, gamma_p) {
        DampingRegime::Critical => {
            let x = gamma_p * t / 4.0;
            (env * (1.0 + x).powi(2), env * x * x)
        }
        DampingRegime::Overdamped => {
            let k = (gamma_p * gamma_p - 4.0 * pump_rabi * pump_rabi).sqrt();
            let x = k * t / 4.0;
            let br = x.cosh() + gamma_p / k * x.sinh();
            let bp = 2.0 * pump_rabi / k * x.sinh();
            (env * br * br, env * bp * bp)
        }
        DampingRegime::Underdamped => {
            let w = (4.0 * pump_rabi * pump_rabi - gamma_p * gamma_p).sqrt();
            let x = w * t / 4.0;
            let br = x.cos() + gamma_p / w * x.sin();
            let bp = 2.0 * pump_rabi / w * x.sin();
            (env * br * br, env * bp * bp)
        }
    }
}

/// Exact `ρ_00(t)` from `ρ(0) = |r><r|` in every regime.
pub fn ground_population(pump_rabi: f64, gamma_p: f64, t: f64) -> f64 {
    let (r, p) = rydberg_populations(pump_rabi, gamma_p, t);
    1.0 - r - p
}

/// Critical damping: `1 − exp[−γt/2 + ln(1 + γt/2 + γ²t²/8)]`.
pub fn ground_population_critical(gamma_p: f64, t: f64) -> f64 {
    let x = gamma_p * t;
    1.0 - (-x / 2.0 + (1.0 + x / 2.0 + x * x / 8.0).ln()).exp()
}

/// Adiabatic estimate `1 − exp(−Ωp² t / γp)` for `Ωp ≪ γp`.
pub fn ground_population_adiabatic(pump_rabi: f64, gamma_p: f64, t: f64) -> f64 {
    1.0 - (-pump_rabi * pump_rabi * t / gamma_p).exp()
}

// ---- dissipation stage on the atom register ----

/// How the Rydberg population is returned to the qubit space after each pump.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum DissipationMode {
    /// Instantaneous `|r>, |p> → |0>` on every atom.
    Reset,
    /// Ωp/γp (and optional γr) dynamics for `duration` seconds.
    Lindblad { duration: f64 },
}

/// Nominal duration assigned to an instantaneous reset when converting cycles to time.
pub const RESET_NOMINAL_DURATION: f64 = 0.2e-6;

impl DissipationMode {
    /// `12/γp` with the given decay rate.
    pub fn standard_lindblad(gamma_p: f64) -> Self {
        DissipationMode::Lindblad { duration: 12.0 / gamma_p }
    }

    pub fn duration(&self) -> f64 {
        match self {
            DissipationMode::Reset => RESET_NOMINAL_DURATION,
            DissipationMode::Lindblad { duration } => *duration,
        }
    }
}

/// Per-atom reset on local dimension `d` (3 or 4): Kraus `{P_q, |0><r|, |0><p|}`.
pub fn reset_kraus(d: usize) -> Result<Vec<CMat>> {
    if d < 3 {
        return Err(LindbladError::MissingLevel("r"));
    }
    let mut pq = CMat::zeros((d, d));
    pq[[LEVEL_0, LEVEL_0]] = c(1.0, 0.0);
    pq[[LEVEL_1, LEVEL_1]] = c(1.0, 0.0);
    let mut out = vec![pq];
    for lvl in LEVEL_R..d {
        let mut k = CMat::zeros((d, d));
        k[[LEVEL_0, lvl]] = c(1.0, 0.0);
        out.push(k);
    }
    Ok(out)
}

/// Single-atom Liouvillian on `{|0>, |1>, |r>, |p>}` during the dissipation stage:
/// `H = (Ωp/2)(|p><r| + h.c.)`, `L_0p = √γp |0><p|`, and `L_kr = √(γr/2) |k><r|` when γr > 0.
pub fn atom_dissipation_model(physical: &PhysicalParams) -> Result<LindbladModel> {
    let d = 4;
    let mut h = CMat::zeros((d, d));
    h[[LEVEL_P, LEVEL_R]] = c(physical.pump_rabi / 2.0, 0.0);
    h[[LEVEL_R, LEVEL_P]] = c(physical.pump_rabi / 2.0, 0.0);
    let mut collapses = vec![Collapse::new(single(d, LEVEL_0, LEVEL_P), physical.gamma_p)?];
    if physical.gamma_r > 0.0 {
        collapses.push(Collapse::new(single(d, LEVEL_0, LEVEL_R), physical.gamma_r / 2.0)?);
        collapses.push(Collapse::new(single(d, LEVEL_1, LEVEL_R), physical.gamma_r / 2.0)?);
    }
    LindbladModel::new(Hamiltonian::Static(h), collapses)
}

/// Rydberg decay alone, `L_kr = √(γr/2) |k><r|` on local dimension `d`.
pub fn rydberg_decay_collapses(d: usize, gamma_r: f64) -> Result<Vec<Collapse>> {
    if gamma_r <= 0.0 {
        return Ok(Vec::new());
    }
    Ok(vec![
        Collapse::new(single(d, LEVEL_0, LEVEL_R), gamma_r / 2.0)?,
        Collapse::new(single(d, LEVEL_1, LEVEL_R), gamma_r / 2.0)?,
    ])
}

fn single(d: usize, to: usize, from: usize) -> CMat {
    let mut m = CMat::zeros((d, d));
    m[[to, from]] = c(1.0, 0.0);
    m
}

/// Kraus operators of a column-stacked superoperator via its Choi matrix.
pub fn kraus_from_superoperator(s: &CMat, d: usize) -> Result<Vec<CMat>> {
    // Choi C[(i,k),(j,l)] = <i j| S(|k><l|)> with S acting on vec(|k><l|) = e_{k + l d}
    let mut choi = CMat::zeros((d * d, d * d));
    for k in 0..d {
        for l in 0..d {
            let col = s.column(k + l * d);
            for i in 0..d {
                for j in 0..d {
                    choi[[i * d + k, j * d + l]] = col[i + j * d];
                }
            }
        }
    }
    let (vals, vecs) = linalg::eig_herm(&hermitize(&choi))?;
    let max = vals.iter().cloned().fold(0.0, f64::max);
    let mut out = Vec::new();
    for (n, &v) in vals.iter().enumerate() {
        if v <= 1e-14 * max {
            continue;
        }
        let amp = v.sqrt();
        out.push(CMat::from_shape_fn((d, d), |(i, k)| vecs[[i * d + k, n]] * amp));
    }
    Ok(out)
}

/// The dissipation stage as one local channel per atom.
#[derive(Clone, Debug)]
pub struct DissipationStage {
    local_dim: usize,
    kraus: Vec<CMat>,
}

impl DissipationStage {
    pub fn new(mode: DissipationMode, physical: &PhysicalParams, local_dim: usize) -> Result<Self> {
        let kraus = match mode {
            DissipationMode::Reset => reset_kraus(local_dim)?,
            DissipationMode::Lindblad { duration } => {
                if local_dim < 4 {
                    return Err(LindbladError::MissingLevel("p"));
                }
                let l = build_liouvillian(&atom_dissipation_model(physical)?)?;
                let s = linalg::expm(&(l * c(duration, 0.0)))?;
                kraus_from_superoperator(&s, 4)?
            }
        };
        Ok(DissipationStage { local_dim, kraus })
    }

    pub fn kraus(&self) -> &[CMat] {
        &self.kraus
    }

    /// Applies the per-atom channel to each atom in `atoms`.
    pub fn apply(&self, rho: &CMat, n_atoms: usize, atoms: &[usize]) -> Result<CMat> {
        let mut out = rho.clone();
        for &a in atoms {
            let ch = LocalChannel::new(vec![a], self.local_dim, self.kraus.clone())?;
            out = ch.apply(&out, n_atoms)?;
        }
        Ok(out)
    }

    /// Column-stacked superoperator on the whole register (small registers only).
    pub fn superoperator(&self, n_atoms: usize, atoms: &[usize]) -> Result<CMat> {
        let d = self.local_dim.pow(n_atoms as u32);
        let mut s = eye(d * d);
        for &a in atoms {
            let ch = LocalChannel::new(vec![a], self.local_dim, self.kraus.clone())?;
            s = ch.superoperator(n_atoms)?.dot(&s);
        }
        Ok(s)
    }
}

/// One dissipation stage applied to every atom of a register.
pub fn dissipation_stage(
    rho: &DensityMatrix,
    mode: DissipationMode,
    physical: &PhysicalParams,
    local_dim: usize,
    n_atoms: usize,
) -> Result<DensityMatrix> {
    let stage = DissipationStage::new(mode, physical, local_dim)?;
    let atoms: Vec<usize> = (0..n_atoms).collect();
    Ok(DensityMatrix::from_trusted(hermitize(&stage.apply(rho.matrix(), n_atoms, &atoms)?)))
}

/// `exp(L t) ρ` via the superoperator exponential.
pub fn evolve_exact(m: &LindbladModel, rho: &CMat, t: f64) -> Result<CMat> {
    let l = build_liouvillian(m)?;
    let s = linalg::expm(&(l * c(t, 0.0)))?;
    Ok(apply_superoperator(&s, rho))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{max_abs, Ket};

    const G: f64 = crate::system::GAMMA_P_RB;

    fn rr() -> DensityMatrix {
        DensityMatrix::from_ket(&Ket::basis(3, ER))
    }

    #[test]
    fn empty_model_is_zero() {
        let m = LindbladModel::new(Hamiltonian::Static(CMat::zeros((3, 3))), vec![]).unwrap();
        assert!(max_abs(&build_liouvillian(&m).unwrap()) == 0.0);
    }

    #[test]
    fn liouvillian_matches_rhs() {
        let m = three_level_model(0.7 * G, G).unwrap();
        let l = build_liouvillian(&m).unwrap();
        let rho = DensityMatrix::from_ket(&Ket::from_real(&[0.6, 0.64, 0.48]).unwrap());
        let a = unvectorize(&l.dot(&vectorize(rho.matrix())), 3);
        let b = m.rhs(0.0, rho.matrix());
        assert!(max_abs(&(a - b)) < 1e-6 * G);
    }

    #[test]
    fn nine_eigenvalues() {
        for ratio in [0.1, 0.2, 0.5, 1.0, 5.0, 10.0, 50.0] {
            let m = three_level_model(ratio * G, G).unwrap();
            let spec = liouvillian_spectrum(&m, None).unwrap();
            let closed = closed_form_eigenvalues(ratio * G, G);
            let err = eigenvalue_mismatch(&spec.eigenvalues, &closed, G, 1e-6);
            assert!(err < 1e-9, "ratio {ratio}: {err:e}");
            assert_eq!(spec.null_count(), 1);
            assert!(spec.eigenvalues.iter().all(|z| z.re <= spec.zero_tol()));
        }
    }

    #[test]
    fn steady_state_is_ground() {
        let m = three_level_model(10.0 * G, G).unwrap();
        let ss = liouvillian_spectrum(&m, None).unwrap().steady_state().unwrap();
        assert!((ss.matrix()[[E0, E0]].re - 1.0).abs() < 1e-10);
    }

    #[test]
    fn restricted_gaps() {
        for (ratio, expected) in [(0.2, (1.0 - 0.84f64.sqrt()) / 2.0), (0.5, 0.5), (10.0, 0.5)] {
            let m = three_level_model(ratio * G, G).unwrap();
            let spec = liouvillian_spectrum(&m, Some(&rr())).unwrap();
            let g = spec.restricted_gap.unwrap() / G;
            // Jordan blocks at ratio 0.5 limit the accuracy to ~√ε
            assert!((g - expected).abs() < 1e-4, "ratio {ratio}: {g}");
            assert!(spec.gap <= spec.restricted_gap.unwrap() + 1e-9 * G);
        }
        let lep = liouvillian_spectrum(&three_level_model(0.5 * G, G).unwrap(), None).unwrap();
        assert!(lep.defective);
    }

    #[test]
    fn rk4_follows_closed_forms() {
        for ratio in [0.1, 0.5, 50.0] {
            let m = three_level_model(ratio * G, G).unwrap();
            let dt = default_step(&m, None);
            let traj = integrate_master_eq(&m, &rr(), 8.0 / G, dt, 50).unwrap();
            for (t, s) in traj.times.iter().zip(&traj.states) {
                let exact = ground_population(ratio * G, G, *t);
                assert!((s.matrix()[[E0, E0]].re - exact).abs() < 1e-6, "ratio {ratio} t {t}");
            }
        }
        let t = 3.0 / G;
        assert!((ground_population(0.5 * G, G, t) - ground_population_critical(G, t)).abs() < 1e-14);
    }

    #[test]
    fn reset_kraus_is_trace_preserving() {
        for d in [3, 4] {
            let k = reset_kraus(d).unwrap();
            let sum = k.iter().fold(CMat::zeros((d, d)), |acc, m| acc + dagger(m).dot(m));
            assert!(max_abs(&(sum - eye(d))) < 1e-15);
        }
    }

    #[test]
    fn lindblad_stage_matches_reset_at_long_times() {
        let phys = PhysicalParams::default();
        let stage = DissipationStage::new(DissipationMode::standard_lindblad(phys.gamma_p), &phys, 4).unwrap();
        let sum = stage.kraus().iter().fold(CMat::zeros((4, 4)), |acc, m| acc + dagger(m).dot(m));
        assert!(max_abs(&(sum - eye(4))) < 1e-10);
        let rho = DensityMatrix::from_ket(&Ket::basis(16, crate::system::index_of(&[LEVEL_R, LEVEL_0], 4)));
        let out = dissipation_stage(&rho, DissipationMode::Reset, &phys, 4, 2).unwrap();
        assert!((out.matrix()[[0, 0]].re - 1.0).abs() < 1e-15);
        // residual Rydberg population ~ e^{-6} after 12/γp
        let out = stage.apply(rho.matrix(), 2, &[0, 1]).unwrap();
        let expected = ground_population(phys.pump_rabi, phys.gamma_p, 12.0 / phys.gamma_p);
        assert!((out[[0, 0]].re - expected).abs() < 1e-8);
    }
}
