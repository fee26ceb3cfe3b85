//! Frozen thermal noise: Doppler detunings and position offsets, and ensemble averages.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::protocol::{run_protocol, ProtocolError, Schedule};
use crate::system::{PhysicalParams, System, SystemError};

/// One static noise realisation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSample {
    pub seed: u64,
    /// Two-photon Doppler detuning per atom (rad/s).
    pub doppler: Vec<f64>,
    /// Position offset per atom (m).
    pub offsets: Vec<[f64; 3]>,
}

impl NoiseSample {
    pub fn zero(n_atoms: usize) -> Self {
        NoiseSample { seed: 0, doppler: vec![0.0; n_atoms], offsets: vec![[0.0; 3]; n_atoms] }
    }

    pub fn is_zero(&self) -> bool {
        self.doppler.iter().all(|&d| d == 0.0) && self.offsets.iter().flatten().all(|&x| x == 0.0)
    }
}

/// Which noise sources are switched on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSources {
    pub doppler: bool,
    pub position: bool,
}

impl Default for NoiseSources {
    fn default() -> Self {
        NoiseSources { doppler: true, position: true }
    }
}

/// Per-sample seed derived from the master seed (stream `index` of a ChaCha8 generator).
pub fn sample_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

/// Maxwell-Boltzmann velocities (only the beam-axis component enters δ) and Gaussian offsets.
pub fn sample_noise(params: &PhysicalParams, n_atoms: usize, seed: u64, sources: NoiseSources) -> Result<NoiseSample, SystemError> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v_sigma = params.velocity_sigma();
    let k_eff = params.effective_wavevector();
    let mut doppler = Vec::with_capacity(n_atoms);
    let mut offsets = Vec::with_capacity(n_atoms);
    for _ in 0..n_atoms {
        // vx, vy are drawn to keep the stream layout fixed
        let v: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal) * v_sigma);
        let o: [f64; 3] = std::array::from_fn(|k| rng.sample::<f64, _>(StandardNormal) * params.position_sigma[k]);
        doppler.push(if sources.doppler { k_eff * v[2] } else { 0.0 });
        offsets.push(if sources.position { o } else { [0.0; 3] });
    }
    Ok(NoiseSample { seed, doppler, offsets })
}

/// Shifts each `|r_i>` by δ_i and moves the atoms; interactions follow the new distances.
pub fn apply_noise(system: &System, sample: &NoiseSample) -> Result<System, SystemError> {
    let n = system.n_atoms();
    if sample.doppler.len() != n || sample.offsets.len() != n {
        return Err(SystemError::InvalidParameter(format!("noise sample for {} atoms, system has {n}", sample.doppler.len())));
    }
    let mut out = system.clone();
    if sample.offsets.iter().flatten().any(|&x| x != 0.0) {
        let um: Vec<[f64; 3]> = sample.offsets.iter().map(|o| o.map(|x| x * 1e6)).collect();
        out.geometry = system.geometry.displaced(&um)?;
    }
    for (shift, d) in out.rydberg_shift.iter_mut().zip(&sample.doppler) {
        *shift += d;
    }
    Ok(out)
}

/// Mean fidelity per cycle over noise samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
    pub samples: usize,
    pub failures: usize,
    /// Final-cycle fidelity of each successful sample, in seed order.
    pub finals: Vec<f64>,
}

impl EnsembleResult {
    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_std_error(&self) -> f64 {
        self.std_error.last().copied().unwrap_or(0.0)
    }
}

/// Runs the schedule for `n_samples` noise realisations; the reduction is in seed order,
/// so the result does not depend on the worker count.
pub fn ensemble_average(
    system: &System,
    schedule: &Schedule,
    n_samples: usize,
    master_seed: u64,
    sources: NoiseSources,
) -> Result<EnsembleResult, ProtocolError> {
    if n_samples == 0 {
        return Err(ProtocolError::Invalid("need at least one noise sample".into()));
    }
    let n = system.n_atoms();
    let traces: Vec<Result<Vec<f64>, ProtocolError>> = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| {
            let sample = sample_noise(&system.physical, n, sample_seed(master_seed, k), sources)?;
            let noisy = apply_noise(system, &sample)?;
            Ok(run_protocol(&noisy, schedule, None)?.iter().map(|r| r.fidelity).collect())
        })
        .collect();
    let mut ok: Vec<Vec<f64>> = Vec::with_capacity(n_samples);
    let mut failures = 0;
    let mut first_err = None;
    for t in traces {
        match t {
            Ok(v) => ok.push(v),
            Err(e) => {
                failures += 1;
                first_err.get_or_insert(e);
            }
        }
    }
    if ok.is_empty() {
        return Err(first_err.expect("some sample failed"));
    }
    let len = ok[0].len();
    let m = ok.len() as f64;
    let mut mean = vec![0.0; len];
    let mut std_error = vec![0.0; len];
    for c in 0..len {
        let mu = ok.iter().map(|t| t[c]).sum::<f64>() / m;
        let var = if ok.len() > 1 { ok.iter().map(|t| (t[c] - mu).powi(2)).sum::<f64>() / (m - 1.0) } else { 0.0 };
        mean[c] = mu;
        std_error[c] = (var / m).sqrt();
    }
    let finals = ok.iter().map(|t| t[len - 1]).collect();
    Ok(EnsembleResult { mean, std_error, samples: ok.len(), failures, finals })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lindblad::DissipationMode;
    use crate::protocol::Engine;
    use crate::system::GeometryKind;

    #[test]
    fn zero_temperature_gives_zero_sample() {
        let p = PhysicalParams { temperature: 0.0, position_sigma: [0.0; 3], ..PhysicalParams::default() };
        let s = sample_noise(&p, 3, 11, NoiseSources::default()).unwrap();
        assert!(s.is_zero());
    }

    #[test]
    fn thermal_scales() {
        let p = PhysicalParams::default();
        assert!((p.velocity_sigma() - 0.02187).abs() < 5e-5);
        let doppler = p.effective_wavevector() * p.velocity_sigma() / (2.0 * std::f64::consts::PI);
        assert!((doppler - 17.5e3).abs() < 0.2e3, "{doppler}");
        let n = 4000;
        let s = sample_noise(&p, n, 5, NoiseSources::default()).unwrap();
        let var = s.doppler.iter().map(|d| d * d).sum::<f64>() / n as f64;
        let rel = var.sqrt() / (p.effective_wavevector() * p.velocity_sigma());
        assert!((rel - 1.0).abs() < 0.05);
    }

    #[test]
    fn seeds_reproduce() {
        let p = PhysicalParams::default();
        let a = sample_noise(&p, 2, sample_seed(7, 3), NoiseSources::default()).unwrap();
        let b = sample_noise(&p, 2, sample_seed(7, 3), NoiseSources::default()).unwrap();
        assert_eq!(a, b);
        assert_ne!(sample_seed(7, 3), sample_seed(7, 4));
    }

    #[test]
    fn z_offset_rescales_interaction() {
        let sys = System::standard(GeometryKind::Zigzag, 2, 15.7).unwrap();
        let mut pair = sys.clone();
        pair.geometry = crate::system::Geometry::new(vec![[0.0, 0.0, 0.0], [0.0, 0.0, 5.195]], 5.195).unwrap();
        let mut s = NoiseSample::zero(2);
        s.offsets[1][2] = 60e-9;
        let noisy = apply_noise(&pair, &s).unwrap();
        let ratio = noisy.interaction(0, 1) / pair.interaction(0, 1);
        assert!((ratio - (5.195f64 / 5.255).powi(6)).abs() < 1e-12);
        assert!((ratio - 0.931).abs() < 0.003);
        let mut d = NoiseSample::zero(2);
        d.doppler = vec![1e5, -2e5];
        let noisy = apply_noise(&pair, &d).unwrap();
        assert_eq!(noisy.interaction(0, 1), pair.interaction(0, 1));
        assert_eq!(noisy.rydberg_shift, vec![1e5, -2e5]);
        assert_eq!(apply_noise(&pair, &NoiseSample::zero(2)).unwrap(), pair);
    }

    #[test]
    fn collision_rejected() {
        let sys = System::standard(GeometryKind::Zigzag, 2, 15.7).unwrap();
        let mut s = NoiseSample::zero(2);
        let p = sys.geometry.positions();
        s.offsets[1] = std::array::from_fn(|k| (p[0][k] - p[1][k]) * 1e-6);
        assert!(apply_noise(&sys, &s).is_err());
    }

    #[test]
    fn noiseless_ensemble_equals_deterministic_run() {
        let mut sys = System::standard(GeometryKind::Zigzag, 2, 15.7).unwrap();
        sys.physical.temperature = 0.0;
        sys.physical.position_sigma = [0.0; 3];
        let sch = Schedule::bell(Engine::Exact, 2, DissipationMode::Reset).unwrap();
        let ens = ensemble_average(&sys, &sch, 1, 3, NoiseSources::default()).unwrap();
        let det: Vec<f64> = run_protocol(&sys, &sch, None).unwrap().iter().map(|r| r.fidelity).collect();
        assert_eq!(ens.mean, det);
        assert_eq!(ens.failures, 0);
    }
}
