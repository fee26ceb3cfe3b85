//! Quasienergy sweeps over Δ/Ω with branch tracking and avoided-crossing search.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use super::{par_map, period_quasienergies, FloquetError, IntegratorSettings, Result};
use crate::linalg::{CMat, Ket};
use crate::system::{matched_spacing, DriveSpec, System};

/// How the atom spacing follows the detuning during a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepSpacing {
    /// Rescale positions so that −C6/R⁶ = −Δ at every point.
    Matched,
    /// Keep the geometry of the base system.
    Fixed,
}

/// Tracked quasienergy branches and probe overlaps along a sweep.
#[derive(Clone, Debug, Serialize)]
pub struct QuasienergySpectrum {
    pub ratios: Vec<f64>,
    /// Drive period T at each point (s).
    pub periods: Vec<f64>,
    /// `[point][branch]`, rad/s, in (−π/T, π/T].
    pub quasienergies: Vec<Vec<f64>>,
    /// `[point][probe][branch]`.
    pub overlaps: Vec<Vec<Vec<f64>>>,
}

impl QuasienergySpectrum {
    pub fn n_branches(&self) -> usize {
        self.quasienergies.first().map_or(0, Vec::len)
    }

    /// Branch with the largest overlap with `probe` at point `p`.
    pub fn dominant_branch(&self, p: usize, probe: usize) -> usize {
        let ov = &self.overlaps[p][probe];
        (0..ov.len()).max_by(|&a, &b| ov[a].total_cmp(&ov[b])).unwrap_or(0)
    }

    /// Circular distance from the dominant branch of `probe` to the nearest other branch.
    pub fn separation(&self, p: usize, probe: usize) -> f64 {
        let b = self.dominant_branch(p, probe);
        nearest_other(&self.quasienergies[p], b, self.periods[p])
    }

    /// `1 − max_k |<probe|ε_k>|²`.
    pub fn hybridization(&self, p: usize, probe: usize) -> f64 {
        let ov = &self.overlaps[p][probe];
        1.0 - ov.iter().cloned().fold(0.0, f64::max)
    }
}

fn nearest_other(eps: &[f64], b: usize, period: f64) -> f64 {
    let w = 2.0 * PI / period;
    eps.iter()
        .enumerate()
        .filter(|&(j, _)| j != b)
        .map(|(_, &e)| {
            let d = (e - eps[b]).rem_euclid(w);
            d.min(w - d)
        })
        .fold(f64::INFINITY, f64::min)
}

/// The system at Δ/Ω = `ratio`.
pub fn system_at(base: &System, ratio: f64, spacing: SweepSpacing) -> Result<System> {
    let mut sys = base.clone();
    sys.pulse = base.pulse.with_detuning_ratio(ratio);
    if spacing == SweepSpacing::Matched {
        let r = matched_spacing(sys.physical.c6, sys.pulse.detuning);
        sys.geometry = base.geometry.rescaled(r)?;
    }
    Ok(sys)
}

struct Point {
    period: f64,
    eps: Vec<f64>,
    vecs: CMat,
    overlaps: Vec<Vec<f64>>,
}

fn evaluate(
    base: &System,
    drive: &DriveSpec,
    ratio: f64,
    spacing: SweepSpacing,
    probes: &[Ket],
    settings: &IntegratorSettings,
) -> Result<Point> {
    let sys = system_at(base, ratio, spacing)?;
    let (eps, vecs) = period_quasienergies(&sys, drive, settings)?;
    let overlaps = probes
        .iter()
        .map(|p| (0..eps.len()).map(|k| column_overlap(p, &vecs, k)).collect())
        .collect();
    Ok(Point { period: sys.pulse.timings().period, eps: eps.to_vec(), vecs, overlaps })
}

fn column_overlap(p: &Ket, vecs: &CMat, k: usize) -> f64 {
    p.amps()
        .iter()
        .zip(vecs.column(k).iter())
        .map(|(a, b)| a.conj() * b)
        .sum::<C64>()
        .norm_sqr()
}

/// Greedy maximal-overlap assignment of `next` columns to `prev` columns.
fn match_branches(prev: &CMat, next: &CMat) -> Vec<usize> {
    let n = prev.ncols();
    let mut scores = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let o: C64 = prev.column(i).iter().zip(next.column(j).iter()).map(|(a, b)| a.conj() * b).sum();
            scores.push((o.norm_sqr(), i, j));
        }
    }
    scores.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assign = vec![usize::MAX; n];
    let mut used = vec![false; n];
    for (_, i, j) in scores {
        if assign[i] == usize::MAX && !used[j] {
            assign[i] = j;
            used[j] = true;
        }
    }
    assign
}

/// Quasienergies and probe overlaps over a sorted grid of Δ/Ω, with branches
/// carried from point to point by maximal eigenvector overlap.
pub fn quasienergy_sweep(
    base: &System,
    drive: &DriveSpec,
    ratios: &[f64],
    probes: &[Ket],
    spacing: SweepSpacing,
    settings: &IntegratorSettings,
) -> Result<QuasienergySpectrum> {
    if ratios.is_empty() {
        return Err(FloquetError::InvalidSweep("empty grid".into()));
    }
    if ratios.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(FloquetError::InvalidSweep("grid must be strictly increasing".into()));
    }
    if let Some(p) = probes.iter().find(|p| p.dim() != base.dim()) {
        return Err(FloquetError::InvalidSweep(format!("probe dimension {} vs {}", p.dim(), base.dim())));
    }
    let points: Vec<Point> = par_map(ratios, |&r| evaluate(base, drive, r, spacing, probes, settings))
        .into_iter()
        .collect::<Result<_>>()?;
    let mut spectrum = QuasienergySpectrum {
        ratios: ratios.to_vec(),
        periods: Vec::with_capacity(points.len()),
        quasienergies: Vec::with_capacity(points.len()),
        overlaps: Vec::with_capacity(points.len()),
    };
    let mut prev: Option<CMat> = None;
    for pt in points {
        let order: Vec<usize> = match &prev {
            Some(p) => match_branches(p, &pt.vecs),
            None => (0..pt.eps.len()).collect(),
        };
        let vecs = CMat::from_shape_fn(pt.vecs.dim(), |(r, k)| pt.vecs[[r, order[k]]]);
        spectrum.periods.push(pt.period);
        spectrum.quasienergies.push(order.iter().map(|&k| pt.eps[k]).collect());
        spectrum
            .overlaps
            .push(pt.overlaps.iter().map(|ov| order.iter().map(|&k| ov[k]).collect()).collect());
        prev = Some(vecs);
    }
    Ok(spectrum)
}

/// An avoided crossing seen by one probe.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Crossing {
    pub ratio: f64,
    /// Separation of the probe branch from its nearest neighbour (rad/s).
    pub gap: f64,
    /// `1 − max overlap` of the probe at the crossing.
    pub hybridization: f64,
}

/// Interior grid points where the probe hybridization has a local maximum above `threshold`.
///
/// The probe branch repels its partner at an avoided crossing, so the nearest-branch
/// separation is not a reliable marker once many folded branches are present; the
/// probe's spread over eigenvectors is.
pub fn detect_avoided_crossings(spec: &QuasienergySpectrum, probe: usize, threshold: f64) -> Vec<Crossing> {
    let n = spec.ratios.len();
    let hyb: Vec<f64> = (0..n).map(|p| spec.hybridization(p, probe)).collect();
    local_maxima(&hyb)
        .into_iter()
        .filter(|&p| hyb[p] > threshold)
        .map(|p| Crossing { ratio: spec.ratios[p], gap: spec.separation(p, probe), hybridization: hyb[p] })
        .collect()
}

fn local_maxima(v: &[f64]) -> Vec<usize> {
    if v.len() < 3 {
        return Vec::new();
    }
    (1..v.len() - 1).filter(|&p| v[p] > v[p - 1] && v[p] >= v[p + 1]).collect()
}

/// Coarse-grid crossing search refined by golden-section maximization of the probe
/// hybridization between the neighbouring grid points.
///
/// Every coarse local maximum standing above twice the median hybridization is
/// refined, since narrow crossings can fall between grid points; a crossing is
/// reported when the refined hybridization exceeds `threshold`.
pub fn locate_avoided_crossings(
    base: &System,
    drive: &DriveSpec,
    ratios: &[f64],
    probe: &Ket,
    spacing: SweepSpacing,
    threshold: f64,
    settings: &IntegratorSettings,
) -> Result<Vec<Crossing>> {
    let spec = quasienergy_sweep(base, drive, ratios, std::slice::from_ref(probe), spacing, settings)?;
    let n = ratios.len();
    let hyb: Vec<f64> = (0..n).map(|p| spec.hybridization(p, 0)).collect();
    let mut sorted = hyb.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted.get(n / 2).copied().unwrap_or(0.0);
    let candidates: Vec<usize> = local_maxima(&hyb).into_iter().filter(|&p| hyb[p] > 2.0 * median).collect();
    let probe_at = |r: f64| -> Result<(f64, f64)> {
        let pt = evaluate(base, drive, r, spacing, std::slice::from_ref(probe), settings)?;
        let ov = &pt.overlaps[0];
        let b = (0..ov.len()).max_by(|&a, &b| ov[a].total_cmp(&ov[b])).unwrap_or(0);
        Ok((nearest_other(&pt.eps, b, pt.period), 1.0 - ov[b]))
    };
    let refined: Vec<Result<Option<Crossing>>> = par_map(&candidates, |&p| {
        let (mut a, mut b) = (ratios[p - 1], ratios[p + 1]);
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = b - g * (b - a);
        let mut x2 = a + g * (b - a);
        let mut f1 = probe_at(x1)?;
        let mut f2 = probe_at(x2)?;
        let mut best = (ratios[p], (spec.separation(p, 0), hyb[p]));
        while b - a > 1e-6 {
            for cand in [(x1, f1), (x2, f2)] {
                if cand.1 .1 > best.1 .1 {
                    best = cand;
                }
            }
            if f1.1 > f2.1 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - g * (b - a);
                f1 = probe_at(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + g * (b - a);
                f2 = probe_at(x2)?;
            }
        }
        let (ratio, (gap, hybridization)) = best;
        Ok((hybridization > threshold).then_some(Crossing { ratio, gap, hybridization }))
    });
    let mut out = Vec::new();
    for r in refined {
        out.extend(r?);
    }
    Ok(out)
}

/// Δ/Ω values with Δ·t_b = (2m+1)π inside `[lo, hi]`.
pub fn predicted_crossings(base: &System, lo: f64, hi: f64) -> Vec<f64> {
    let omega = base.pulse.rabi;
    let tb = base.pulse.timings().kicked;
    let step = 2.0 * PI / (omega * tb);
    let first = ((lo * omega * tb / PI - 1.0) / 2.0).ceil() as i64;
    (first..)
        .map(|m| (2 * m + 1) as f64 * PI / (omega * tb))
        .take_while(|&r| r <= hi)
        .filter(|&r| r >= lo - step * 1e-12)
        .collect()
}
