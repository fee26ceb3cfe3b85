//! Pauli strings, stabilizer groups, graph states and pump sets.

use std::fmt;
use std::str::FromStr;

use ndarray as nd;
use ndarray_linalg::SVD;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floquet::effective::{effective_pump_hamiltonian, EffectivePump, PumpError, PumpTemplate};
use crate::linalg::{c, kron_all, trace, CMat, CVec, DensityMatrix, Ket, LinalgError, ONE, ZERO};

#[derive(Debug, Error)]
pub enum StabilizerError {
    #[error("cannot parse Pauli string {0:?}")]
    Parse(String),
    #[error("generators {0} and {1} anticommute")]
    Anticommuting(usize, usize),
    #[error("generators are not independent (rank {rank} of {count})")]
    Dependent { rank: usize, count: usize },
    #[error("generator lengths differ")]
    Length,
    #[error("unsupported combination: {0}")]
    Unsupported(String),
    #[error("dimension {got} does not match {expected}")]
    Dim { got: usize, expected: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Pump(#[from] PumpError),
}

pub type Result<T> = std::result::Result<T, StabilizerError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn matrix(self) -> CMat {
        match self {
            Pauli::I => nd::arr2(&[[ONE, ZERO], [ZERO, ONE]]),
            Pauli::X => nd::arr2(&[[ZERO, ONE], [ONE, ZERO]]),
            Pauli::Y => nd::arr2(&[[ZERO, c(0.0, -1.0)], [c(0.0, 1.0), ZERO]]),
            Pauli::Z => nd::arr2(&[[ONE, ZERO], [ZERO, -ONE]]),
        }
    }

    /// Symplectic bits (x, z).
    fn xz(self) -> (bool, bool) {
        match self {
            Pauli::I => (false, false),
            Pauli::X => (true, false),
            Pauli::Y => (true, true),
            Pauli::Z => (false, true),
        }
    }

    fn from_xz(x: bool, z: bool) -> Pauli {
        match (x, z) {
            (false, false) => Pauli::I,
            (true, false) => Pauli::X,
            (true, true) => Pauli::Y,
            (false, true) => Pauli::Z,
        }
    }

    fn letter(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Signed tensor product of single-qubit Paulis; qubit 1 is leftmost.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PauliString {
    letters: Vec<Pauli>,
    sign: i8,
}

impl PauliString {
    pub fn new(letters: Vec<Pauli>, sign: i8) -> Self {
        PauliString { letters, sign: if sign < 0 { -1 } else { 1 } }
    }

    /// Identity on `n` qubits with the given letters placed at `(position, letter)`.
    pub fn from_sites(n: usize, sites: &[(usize, Pauli)]) -> Self {
        let mut letters = vec![Pauli::I; n];
        for &(i, p) in sites {
            letters[i] = p;
        }
        PauliString::new(letters, 1)
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn letters(&self) -> &[Pauli] {
        &self.letters
    }

    pub fn sign(&self) -> i8 {
        self.sign
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.letters[i] != Pauli::I).collect()
    }

    pub fn commutes_with(&self, other: &PauliString) -> bool {
        let anti = self
            .letters
            .iter()
            .zip(&other.letters)
            .filter(|(a, b)| **a != Pauli::I && **b != Pauli::I && a != b)
            .count();
        anti % 2 == 0
    }

    /// Product `self · other` for commuting strings (the result is again Hermitian).
    pub fn product(&self, other: &PauliString) -> PauliString {
        // phase i^k accumulated letter by letter
        let mut k = 0i32;
        let letters = self
            .letters
            .iter()
            .zip(&other.letters)
            .map(|(&a, &b)| {
                k += match (a, b) {
                    (Pauli::X, Pauli::Y) | (Pauli::Y, Pauli::Z) | (Pauli::Z, Pauli::X) => 1,
                    (Pauli::Y, Pauli::X) | (Pauli::Z, Pauli::Y) | (Pauli::X, Pauli::Z) => -1,
                    _ => 0,
                };
                let (ax, az) = a.xz();
                let (bx, bz) = b.xz();
                Pauli::from_xz(ax ^ bx, az ^ bz)
            })
            .collect();
        debug_assert!(k.rem_euclid(2) == 0, "product of anticommuting strings");
        let phase_sign = if k.rem_euclid(4) == 2 { -1 } else { 1 };
        PauliString::new(letters, self.sign * other.sign * phase_sign)
    }

    /// Letters at the given positions, keeping the sign.
    pub fn restricted(&self, sites: &[usize]) -> PauliString {
        PauliString::new(sites.iter().map(|&i| self.letters[i]).collect(), self.sign)
    }

    pub fn matrix(&self) -> CMat {
        let m = kron_all(self.letters.iter().map(|p| p.matrix()).collect::<Vec<_>>().iter());
        m * c(self.sign as f64, 0.0)
    }

    /// `S|ψ>` without building the matrix.
    pub fn apply(&self, psi: &CVec) -> CVec {
        let n = self.len();
        let mut out = CVec::zeros(psi.len());
        let (mut xmask, mut zmask, mut ys) = (0usize, 0usize, 0u32);
        for (i, p) in self.letters.iter().enumerate() {
            let bit = 1 << (n - 1 - i);
            let (x, z) = p.xz();
            if x {
                xmask |= bit;
            }
            if z {
                zmask |= bit;
            }
            if *p == Pauli::Y {
                ys += 1;
            }
        }
        // Y = i X Z
        let base = C64::new(0.0, 1.0).powu(ys) * self.sign as f64;
        for (b, &a) in psi.iter().enumerate() {
            let parity = (b & zmask).count_ones() % 2;
            let s = if parity == 1 { -base } else { base };
            out[b ^ xmask] += s * a;
        }
        out
    }

    /// `Tr[ρ S]` on a qubit density matrix.
    pub fn expectation(&self, rho: &CMat) -> f64 {
        trace(&self.matrix().dot(rho)).re
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.sign < 0 {
            write!(f, "-")?;
        }
        for p in &self.letters {
            write!(f, "{}", p.letter())?;
        }
        Ok(())
    }
}

impl FromStr for PauliString {
    type Err = StabilizerError;

    fn from_str(s: &str) -> Result<Self> {
        let (sign, body) = match s.strip_prefix('-') {
            Some(rest) => (-1, rest),
            None => (1, s.strip_prefix('+').unwrap_or(s)),
        };
        let letters = body
            .chars()
            .map(|ch| match ch {
                'I' => Ok(Pauli::I),
                'X' => Ok(Pauli::X),
                'Y' => Ok(Pauli::Y),
                'Z' => Ok(Pauli::Z),
                _ => Err(StabilizerError::Parse(s.to_string())),
            })
            .collect::<Result<Vec<_>>>()?;
        if letters.is_empty() {
            return Err(StabilizerError::Parse(s.to_string()));
        }
        Ok(PauliString::new(letters, sign))
    }
}

/// Commuting, independent generators.
#[derive(Clone, Debug, PartialEq)]
pub struct StabilizerSet {
    generators: Vec<PauliString>,
}

impl StabilizerSet {
    pub fn new(generators: Vec<PauliString>) -> Result<Self> {
        let n = generators.first().map_or(0, PauliString::len);
        if generators.iter().any(|g| g.len() != n) {
            return Err(StabilizerError::Length);
        }
        for i in 0..generators.len() {
            for j in i + 1..generators.len() {
                if !generators[i].commutes_with(&generators[j]) {
                    return Err(StabilizerError::Anticommuting(i, j));
                }
            }
        }
        let rank = gf2_rank(&generators);
        if rank != generators.len() {
            return Err(StabilizerError::Dependent { rank, count: generators.len() });
        }
        Ok(StabilizerSet { generators })
    }

    pub fn generators(&self) -> &[PauliString] {
        &self.generators
    }

    pub fn n_qubits(&self) -> usize {
        self.generators.first().map_or(0, PauliString::len)
    }

    /// All `2^k` products of generators.
    pub fn group(&self) -> Vec<PauliString> {
        let n = self.n_qubits();
        let mut elems = vec![PauliString::new(vec![Pauli::I; n], 1)];
        for g in &self.generators {
            let more: Vec<PauliString> = elems.iter().map(|e| e.product(g)).collect();
            elems.extend(more);
        }
        elems
    }

    /// `(1/|G|) Σ_g g`, the projector onto the stabilized subspace.
    pub fn group_projector(&self) -> CMat {
        let group = self.group();
        let d = 1 << self.n_qubits();
        let sum = group.iter().fold(CMat::zeros((d, d)), |acc, g| acc + g.matrix());
        sum / c(group.len() as f64, 0.0)
    }
}

fn gf2_rank(gens: &[PauliString]) -> usize {
    let mut rows: Vec<Vec<bool>> = gens
        .iter()
        .map(|g| {
            let mut r: Vec<bool> = g.letters.iter().map(|p| p.xz().0).collect();
            r.extend(g.letters.iter().map(|p| p.xz().1));
            r
        })
        .collect();
    let cols = rows.first().map_or(0, Vec::len);
    let mut rank = 0;
    for col in 0..cols {
        let Some(piv) = (rank..rows.len()).find(|&r| rows[r][col]) else { continue };
        rows.swap(rank, piv);
        for r in 0..rows.len() {
            if r != rank && rows[r][col] {
                let pivot = rows[rank].clone();
                for (a, b) in rows[r].iter_mut().zip(pivot) {
                    *a ^= b;
                }
            }
        }
        rank += 1;
    }
    rank
}

/// Linear cluster state `2^{−n/2} Σ_x (−1)^{Σ x_i x_{i+1}} |x>`.
pub fn cluster_state(n: usize) -> Ket {
    let edges: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
    graph_state(n, &edges)
}

/// CZ on every edge applied to `|+>^n` (0-based vertices).
pub fn graph_state(n: usize, edges: &[(usize, usize)]) -> Ket {
    let dim = 1usize << n;
    let amp = (dim as f64).sqrt().recip();
    let v: CVec = (0..dim)
        .map(|x| {
            let bit = |i: usize| (x >> (n - 1 - i)) & 1;
            let parity: usize = edges.iter().map(|&(a, b)| bit(a) & bit(b)).sum();
            c(if parity % 2 == 1 { -amp } else { amp }, 0.0)
        })
        .collect();
    Ket::normalized(v).expect("nonzero")
}

/// Generators `X_v Π_{u∈N(v)} Z_u` of a graph state.
pub fn graph_stabilizers(n: usize, edges: &[(usize, usize)]) -> Result<StabilizerSet> {
    let gens = (0..n)
        .map(|v| {
            let mut sites = vec![(v, Pauli::X)];
            for &(a, b) in edges {
                if a == v {
                    sites.push((b, Pauli::Z));
                } else if b == v {
                    sites.push((a, Pauli::Z));
                }
            }
            PauliString::from_sites(n, &sites)
        })
        .collect();
    StabilizerSet::new(gens)
}

/// Targets with known generators and graphs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "n")]
pub enum StabilizerKind {
    Chain(usize),
    Tshape,
    SixQubit2d,
    /// `{XX, ZZ}`, stabilizing `|Φ+>`.
    Bell,
}

impl StabilizerKind {
    pub fn n_qubits(self) -> usize {
        match self {
            StabilizerKind::Chain(n) => n,
            StabilizerKind::Tshape => 4,
            StabilizerKind::SixQubit2d => 6,
            StabilizerKind::Bell => 2,
        }
    }

    /// Graph edges (0-based); `None` for the Bell target.
    pub fn edges(self) -> Option<Vec<(usize, usize)>> {
        match self {
            StabilizerKind::Chain(n) => Some((1..n).map(|i| (i - 1, i)).collect()),
            StabilizerKind::Tshape => Some(vec![(0, 1), (0, 2), (0, 3)]),
            StabilizerKind::SixQubit2d => Some(vec![(0, 1), (1, 2), (1, 4), (3, 4), (4, 5)]),
            StabilizerKind::Bell => None,
        }
    }

    /// The state all generators stabilize.
    pub fn target(self) -> Ket {
        match self.edges() {
            Some(edges) => graph_state(self.n_qubits(), &edges),
            None => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                Ket::from_real(&[s, 0.0, 0.0, s]).expect("normalized")
            }
        }
    }
}

pub fn stabilizer_set(kind: StabilizerKind) -> Result<StabilizerSet> {
    match kind {
        StabilizerKind::Chain(n) if n < 2 => Err(StabilizerError::Unsupported(format!("chain of {n}"))),
        StabilizerKind::Bell => StabilizerSet::new(vec!["XX".parse()?, "ZZ".parse()?]),
        _ => graph_stabilizers(kind.n_qubits(), &kind.edges().expect("graph target")),
    }
}

/// How generators are pumped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PumpScheme {
    /// Boundary and bulk templates only.
    Realistic,
    /// Realistic plus `|1 − 1>` on every bulk generator.
    Complete,
    /// Two-body templates plus four-body kets.
    FourBody,
}

/// Which template pumps which generator.
#[derive(Clone, Debug, PartialEq)]
pub struct PumpPlan {
    pub stabilizers: StabilizerSet,
    pub entries: Vec<(usize, PumpTemplate)>,
}

impl PumpPlan {
    /// Pump of one plan entry with effective Rabi frequency `rabi`.
    pub fn pump(&self, entry: usize, rabi: f64) -> Result<EffectivePump> {
        let (g, template) = self.entries[entry];
        Ok(effective_pump_hamiltonian(&self.stabilizers.generators()[g], template, rabi)?)
    }

    /// Entries pumping generator `g`.
    pub fn entries_for(&self, g: usize) -> Vec<usize> {
        (0..self.entries.len()).filter(|&e| self.entries[e].0 == g).collect()
    }
}

fn template_for(g: &PauliString) -> Option<PumpTemplate> {
    let shape: Vec<Pauli> = g.support().iter().map(|&i| g.letters()[i]).collect();
    match shape.as_slice() {
        [Pauli::X, Pauli::Z] => Some(PumpTemplate::BoundaryFirst),
        [Pauli::Z, Pauli::X] => Some(PumpTemplate::BoundaryLast),
        [Pauli::Z, Pauli::X, Pauli::Z] => Some(PumpTemplate::Bulk),
        [_, _] => Some(PumpTemplate::Pair),
        s if s.len() >= 4 && s.iter().filter(|&&p| p == Pauli::X).count() == 1 => Some(PumpTemplate::FourBody),
        _ => None,
    }
}

/// The plan for a target and scheme.
///
/// On the six-qubit 2D target the first four-body generator also needs the
/// complement ket `|1 + 1 1>`; without it the dark space is two dimensional.
pub fn pump_plan(kind: StabilizerKind, scheme: PumpScheme) -> Result<PumpPlan> {
    let stabilizers = stabilizer_set(kind)?;
    let mut entries = Vec::new();
    for (i, g) in stabilizers.generators().iter().enumerate() {
        let t = template_for(g)
            .ok_or_else(|| StabilizerError::Unsupported(format!("no template for {g}")))?;
        if t == PumpTemplate::FourBody && scheme != PumpScheme::FourBody {
            return Err(StabilizerError::Unsupported(format!("{g} needs the four_body scheme")));
        }
        entries.push((i, t));
        if t == PumpTemplate::Bulk && scheme == PumpScheme::Complete {
            entries.push((i, PumpTemplate::BulkCompleteII));
        }
    }
    if kind == StabilizerKind::SixQubit2d {
        let first = entries
            .iter()
            .position(|e| e.1 == PumpTemplate::FourBody)
            .expect("2D target has four-body generators");
        entries.insert(first + 1, (entries[first].0, PumpTemplate::FourBodyComplement));
    }
    Ok(PumpPlan { stabilizers, entries })
}

/// Pumped kets on the whole register.
#[derive(Clone, Debug)]
pub struct PumpSet {
    n_qubits: usize,
    kets: Vec<Ket>,
}

impl PumpSet {
    pub fn new(n_qubits: usize, kets: Vec<Ket>) -> Result<Self> {
        for k in &kets {
            if k.dim() != 1 << n_qubits {
                return Err(StabilizerError::Dim { got: k.dim(), expected: 1 << n_qubits });
            }
        }
        Ok(PumpSet { n_qubits, kets })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn kets(&self) -> &[Ket] {
        &self.kets
    }

    /// `{|10>, |01>, |−+>, |+−>}`.
    pub fn bell() -> Self {
        let plan = PumpPlan {
            stabilizers: stabilizer_set(StabilizerKind::Bell).expect("bell set"),
            entries: vec![(0, PumpTemplate::Pair), (1, PumpTemplate::Pair)],
        };
        PumpSet::from_plan(&plan).expect("bell plan")
    }

    /// `{|−0>, |0−>}`, whose dark space is two dimensional.
    pub fn failing_pair() -> Self {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = Ket::from_real(&[s, 0.0, -s, 0.0]).expect("normalized");
        let b = Ket::from_real(&[s, -s, 0.0, 0.0]).expect("normalized");
        PumpSet { n_qubits: 2, kets: vec![a, b] }
    }

    /// Every pumped ket of a plan, tensored with all basis states of the idle qubits.
    pub fn from_plan(plan: &PumpPlan) -> Result<Self> {
        let n = plan.stabilizers.n_qubits();
        let mut kets = Vec::new();
        for e in 0..plan.entries.len() {
            let pump = plan.pump(e, 1.0)?;
            for local in pump.pumped_kets() {
                kets.extend(spread(&local, pump.support(), n));
            }
        }
        Ok(PumpSet { n_qubits: n, kets })
    }

    /// `Σ_j |j><j|`.
    pub fn pump_operator(&self) -> CMat {
        let d = 1 << self.n_qubits;
        self.kets.iter().fold(CMat::zeros((d, d)), |acc, k| acc + k.projector())
    }
}

/// `local` on `support`, times each computational basis state of the other qubits.
pub fn spread(local: &Ket, support: &[usize], n: usize) -> Vec<Ket> {
    let rest: Vec<usize> = (0..n).filter(|i| !support.contains(i)).collect();
    let a = support.len();
    (0..1usize << rest.len())
        .map(|r| {
            let mut v = CVec::zeros(1 << n);
            for (l, &amp) in local.amps().iter().enumerate() {
                let mut idx = 0usize;
                for (pos, &q) in support.iter().enumerate() {
                    idx |= ((l >> (a - 1 - pos)) & 1) << (n - 1 - q);
                }
                for (pos, &q) in rest.iter().enumerate() {
                    idx |= ((r >> (rest.len() - 1 - pos)) & 1) << (n - 1 - q);
                }
                v[idx] = amp;
            }
            Ket::new(v).expect("normalized")
        })
        .collect()
}

/// Rank of the pump operator via singular values above `1e-10 · max`.
pub fn pump_rank(p: &PumpSet) -> Result<usize> {
    if p.kets.is_empty() {
        return Ok(0);
    }
    let d = 1 << p.n_qubits;
    let m = CMat::from_shape_fn((p.kets.len(), d), |(i, j)| p.kets[i].amps()[j]);
    let (_, sv, _) = m.svd(false, false).map_err(|e| LinalgError::Lapack(e.to_string()))?;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    Ok(sv.iter().filter(|&&s| s > 1e-10 * max).count())
}

/// `2^n − rank`.
pub fn kernel_dimension(p: &PumpSet) -> Result<usize> {
    Ok((1 << p.n_qubits) - pump_rank(p)?)
}

/// Orthonormal basis of the dark space (right singular vectors of the ket matrix with zero weight).
pub fn kernel_basis(p: &PumpSet) -> Result<Vec<Ket>> {
    let d = 1 << p.n_qubits;
    if p.kets.is_empty() {
        return Ok((0..d).map(|i| Ket::basis(d, i)).collect());
    }
    let rows = p.kets.len().max(d);
    let mut m = CMat::zeros((rows, d));
    for (i, k) in p.kets.iter().enumerate() {
        m.row_mut(i).assign(&k.amps().mapv(|z| z.conj()));
    }
    let (_, sv, vt) = m.svd(false, true).map_err(|e| LinalgError::Lapack(e.to_string()))?;
    let vt = vt.expect("requested");
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| s > 1e-10 * max).count();
    Ok((rank..d)
        .map(|i| Ket::normalized(vt.row(i).mapv(|z| z.conj())).expect("unit row"))
        .collect())
}

/// Qubit block of a multi-level density matrix, renormalized, and the population outside it.
pub fn qubit_block(rho: &CMat, n: usize, local_dim: usize) -> (CMat, f64) {
    if local_dim == 2 {
        return (rho.clone(), 0.0);
    }
    let idx: Vec<usize> = (0..1usize << n)
        .map(|x| {
            let lv: Vec<usize> = (0..n).map(|i| (x >> (n - 1 - i)) & 1).collect();
            crate::system::index_of(&lv, local_dim)
        })
        .collect();
    let block = CMat::from_shape_fn((idx.len(), idx.len()), |(i, j)| rho[[idx[i], idx[j]]]);
    let p = trace(&block).re;
    let leaked = (trace(rho).re - p).max(0.0);
    let block = if p > 0.0 { block / c(p, 0.0) } else { block };
    (block, leaked)
}

/// `Tr[ρ S_i]` per generator on a qubit density matrix.
pub fn stabilizer_expectations(rho: &DensityMatrix, s: &StabilizerSet) -> Result<Vec<f64>> {
    let d = 1 << s.n_qubits();
    if rho.dim() != d {
        return Err(StabilizerError::Dim { got: rho.dim(), expected: d });
    }
    Ok(s.generators().iter().map(|g| g.expectation(rho.matrix())).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    fn ps(s: &str) -> PauliString {
        s.parse().unwrap()
    }

    #[test]
    fn parse_display_roundtrip() {
        for s in ["XZ", "-ZXZ", "IYXZ"] {
            assert_eq!(ps(s).to_string(), s);
        }
        assert!("XQ".parse::<PauliString>().is_err());
        assert!("".parse::<PauliString>().is_err());
    }

    #[test]
    fn products_track_signs() {
        assert_eq!(ps("XX").product(&ps("ZZ")), ps("-YY"));
        assert_eq!(ps("XZ").product(&ps("XZ")), ps("II"));
        let m = ps("XX").matrix().dot(&ps("ZZ").matrix());
        assert!(max_abs(&(m - ps("-YY").matrix())) < 1e-15);
    }

    #[test]
    fn apply_matches_matrix() {
        let psi = cluster_state(3);
        for s in ["XZI", "ZXZ", "YIZ", "-XYZ"] {
            let a = ps(s).apply(psi.amps());
            let b = ps(s).matrix().dot(psi.amps());
            assert!((a - b).iter().all(|z| z.norm() < 1e-14), "{s}");
        }
    }

    #[test]
    fn cluster_two_and_three() {
        let c2 = cluster_state(2);
        let expected = [0.5, 0.5, 0.5, -0.5];
        for (a, e) in c2.amps().iter().zip(expected) {
            assert!((a.re - e).abs() < 1e-15 && a.im == 0.0);
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let plus = [s, s];
        let minus = [s, -s];
        // (|+0+> + |−1−>)/√2
        let v: Vec<f64> = (0..8usize)
            .map(|x| {
                let (a, b, cc) = (x >> 2 & 1, x >> 1 & 1, x & 1);
                let t1 = if b == 0 { plus[a] * plus[cc] } else { 0.0 };
                let t2 = if b == 1 { minus[a] * minus[cc] } else { 0.0 };
                (t1 + t2) * s
            })
            .collect();
        let k = Ket::from_real(&v).unwrap();
        assert!((k.overlap(&cluster_state(3)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn generator_sets() {
        let chain = stabilizer_set(StabilizerKind::Chain(3)).unwrap();
        let names: Vec<String> = chain.generators().iter().map(|g| g.to_string()).collect();
        assert_eq!(names, ["XZI", "ZXZ", "IZX"]);
        let t = stabilizer_set(StabilizerKind::Tshape).unwrap();
        let names: Vec<String> = t.generators().iter().map(|g| g.to_string()).collect();
        assert_eq!(names, ["XZZZ", "ZXII", "ZIXI", "ZIIX"]);
        let six = stabilizer_set(StabilizerKind::SixQubit2d).unwrap();
        let names: Vec<String> = six.generators().iter().map(|g| g.to_string()).collect();
        assert_eq!(names, ["XZIIII", "ZXZIZI", "IZXIII", "IIIXZI", "IZIZXZ", "IIIIZX"]);
    }

    #[test]
    fn targets_are_stabilized_and_unique() {
        for kind in [
            StabilizerKind::Bell,
            StabilizerKind::Chain(2),
            StabilizerKind::Chain(5),
            StabilizerKind::Tshape,
            StabilizerKind::SixQubit2d,
        ] {
            let set = stabilizer_set(kind).unwrap();
            let target = kind.target();
            for g in set.generators() {
                assert!((target.expectation(&g.matrix()).re - 1.0).abs() < 1e-12);
            }
            let proj = set.group_projector();
            assert!((trace(&proj).re - 1.0).abs() < 1e-12);
            assert!(max_abs(&(proj - target.projector())) < 1e-12);
            assert_eq!(set.group().len(), 1 << kind.n_qubits());
        }
    }

    #[test]
    fn dependent_or_anticommuting_rejected() {
        assert!(StabilizerSet::new(vec![ps("XX"), ps("ZI")]).is_err());
        assert!(StabilizerSet::new(vec![ps("XX"), ps("ZZ"), ps("YY")]).is_err());
    }

    #[test]
    fn kernel_certificates() {
        let bell = PumpSet::bell();
        assert_eq!(pump_rank(&bell).unwrap(), 3);
        let k = kernel_basis(&bell).unwrap();
        assert_eq!(k.len(), 1);
        assert!((k[0].overlap(&StabilizerKind::Bell.target()) - 1.0).abs() < 1e-10);
        assert_eq!(kernel_dimension(&PumpSet::failing_pair()).unwrap(), 2);
        assert_eq!(kernel_dimension(&PumpSet::new(3, vec![]).unwrap()).unwrap(), 8);
        for n in 2..=6 {
            for scheme in [PumpScheme::Realistic, PumpScheme::Complete] {
                let plan = pump_plan(StabilizerKind::Chain(n), scheme).unwrap();
                let set = PumpSet::from_plan(&plan).unwrap();
                assert_eq!(kernel_dimension(&set).unwrap(), 1, "n={n}");
                let target = cluster_state(n);
                for k in set.kets() {
                    assert!(k.overlap(&target) < 1e-12);
                }
            }
        }
        for kind in [StabilizerKind::Tshape, StabilizerKind::SixQubit2d] {
            let set = PumpSet::from_plan(&pump_plan(kind, PumpScheme::FourBody).unwrap()).unwrap();
            let k = kernel_basis(&set).unwrap();
            assert_eq!(k.len(), 1);
            assert!((k[0].overlap(&kind.target()) - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn realistic_bulk_omits_one_minus_one() {
        let plan = pump_plan(StabilizerKind::Chain(3), PumpScheme::Realistic).unwrap();
        let bulk = plan.entries_for(1);
        assert_eq!(bulk.len(), 1);
        assert_eq!(plan.pump(bulk[0], 1.0).unwrap().pumped_kets().len(), 3);
        let complete = pump_plan(StabilizerKind::Chain(3), PumpScheme::Complete).unwrap();
        assert_eq!(complete.entries_for(1).len(), 2);
    }

    #[test]
    fn expectations_on_simple_states() {
        let set = stabilizer_set(StabilizerKind::Chain(3)).unwrap();
        let mixed = DensityMatrix::maximally_mixed(8);
        for e in stabilizer_expectations(&mixed, &set).unwrap() {
            assert!(e.abs() < 1e-15);
        }
        // |+0+>: X1 and X3 see |+>, Z2 sees |0>, while X2 flips the middle qubit
        let v: Vec<f64> = (0..8).map(|x| if x & 2 == 0 { 0.5 } else { 0.0 }).collect();
        let rho = DensityMatrix::from_ket(&Ket::from_real(&v).unwrap());
        let e = stabilizer_expectations(&rho, &set).unwrap();
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15 && (e[2] - 1.0).abs() < 1e-15);
    }
}
