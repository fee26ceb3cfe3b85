//! Dense complex linear algebra shared by the rest of the crate.
//!
//! Multi-atom operators put atom 1 in the leftmost Kronecker factor. Local
//! levels are ordered `|0>, |1>, |r>, |p>`.

use std::f64::consts::PI;

use ndarray as nd;
use nd::ShapeBuilder;
use ndarray_linalg::{Eig, Eigh, Inverse, UPLO};
use num_complex::Complex64 as C64;
use thiserror::Error;

pub type CMat = nd::Array2<C64>;
pub type CVec = nd::Array1<C64>;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };
pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix is not square ({0}x{1})")]
    NotSquare(usize, usize),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not unitary (max deviation {0:.3e})")]
    NotUnitary(f64),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("ket is not normalized (norm^2 = {0})")]
    NotNormalized(f64),
    #[error("invalid density matrix: {0}")]
    InvalidDensity(String),
    #[error("LAPACK failure: {0}")]
    Lapack(String),
}

pub type Result<T> = std::result::Result<T, LinalgError>;

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn eye(d: usize) -> CMat {
    CMat::eye(d)
}

pub fn dagger(a: &CMat) -> CMat {
    a.t().mapv(|z| z.conj())
}

fn check_square(a: &CMat) -> Result<usize> {
    let (r, c) = a.dim();
    if r != c {
        return Err(LinalgError::NotSquare(r, c));
    }
    Ok(r)
}

fn check_finite(a: &CMat) -> Result<()> {
    if a.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = CMat::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x == ZERO {
            continue;
        }
        out.slice_mut(nd::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
            .zip_mut_with(b, |o, &y| *o = x * y);
    }
    out
}

/// Kronecker product of a sequence, leftmost factor first. Empty input gives the 1x1 identity.
pub fn kron_all<'a, It>(factors: It) -> CMat
where
    It: IntoIterator<Item = &'a CMat>,
{
    factors.into_iter().fold(eye(1), |acc, f| kron(&acc, f))
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a.dot(b) - b.dot(a)
}

pub fn trace(a: &CMat) -> C64 {
    a.diag().sum()
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0, |m, z| m.max(z.norm()))
}

pub fn hs_norm(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn hermiticity_error(a: &CMat) -> f64 {
    let mut err: f64 = 0.0;
    for ((i, j), z) in a.indexed_iter() {
        err = err.max((z - a[[j, i]].conj()).norm());
    }
    err
}

pub fn unitarity_error(u: &CMat) -> f64 {
    let d = u.nrows();
    max_abs(&(dagger(u).dot(u) - eye(d)))
}

pub fn hermitize(a: &CMat) -> CMat {
    (a + &dagger(a)) * c(0.5, 0.0)
}

fn require_hermitian(a: &CMat, tol: f64) -> Result<()> {
    let err = hermiticity_error(a);
    if err > tol * max_abs(a).max(1.0) {
        return Err(LinalgError::NotHermitian(err));
    }
    Ok(())
}

fn eigh_raw(a: &CMat) -> Result<(nd::Array1<f64>, CMat)> {
    let n = a.nrows();
    if n == 1 {
        return Ok((nd::arr1(&[a[[0, 0]].re]), eye(1)));
    }
    // The row-major path of the LAPACK wrapper returns conjugated eigenvectors,
    // so hand it a column-major copy.
    let mut f = CMat::zeros(a.dim().f());
    f.assign(a);
    f.eigh(UPLO::Lower)
        .map_err(|e| LinalgError::Lapack(e.to_string()))
}

/// Eigendecomposition of a Hermitian matrix; eigenvalues ascending, eigenvectors as columns.
pub fn eig_herm(m: &CMat) -> Result<(nd::Array1<f64>, CMat)> {
    check_square(m)?;
    check_finite(m)?;
    require_hermitian(m, 1e-10)?;
    eigh_raw(&hermitize(m))
}

/// Eigendecomposition of a general square matrix, sorted by descending real part.
/// Eigenvectors are the right eigenvectors as columns; for defective input the
/// returned vectors need not span the space.
pub fn eig_general(m: &CMat) -> Result<(CVec, CMat)> {
    check_square(m)?;
    check_finite(m)?;
    let (w, v) = m.eig().map_err(|e| LinalgError::Lapack(e.to_string()))?;
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&i, &j| w[j].re.total_cmp(&w[i].re).then(w[j].im.total_cmp(&w[i].im)));
    let ws = order.iter().map(|&k| w[k]).collect::<CVec>();
    let mut vs = CMat::zeros(v.dim());
    for (col, &k) in order.iter().enumerate() {
        vs.column_mut(col).assign(&v.column(k));
    }
    Ok((ws, vs))
}

/// `exp(-i h t)` for Hermitian `h`.
pub fn matexp(h: &CMat, t: f64) -> Result<CMat> {
    check_square(h)?;
    check_finite(h)?;
    require_hermitian(h, 1e-10)?;
    Ok(matexp_unchecked(h, t))
}

/// Same as [`matexp`] without validation; the Hermitian part of `h` is used.
pub(crate) fn matexp_unchecked(h: &CMat, t: f64) -> CMat {
    let n = h.nrows();
    match n {
        0 => CMat::zeros((0, 0)),
        1 => nd::arr2(&[[(-I * h[[0, 0]].re * t).exp()]]),
        2 => expm_herm2(h, t),
        _ => {
            let (w, v) = eigh_raw(&hermitize(h)).expect("Hermitian eigensolver failed");
            let phases = w.mapv(|x| (-I * x * t).exp());
            let scaled = &v * &phases.view().insert_axis(nd::Axis(0));
            scaled.dot(&dagger(&v))
        }
    }
}

/// Closed form for 2x2 Hermitian blocks: `exp(-i t (a0 + a·σ))`.
fn expm_herm2(h: &CMat, t: f64) -> CMat {
    let h00 = h[[0, 0]].re;
    let h11 = h[[1, 1]].re;
    let off = (h[[0, 1]] + h[[1, 0]].conj()) * 0.5;
    let a0 = 0.5 * (h00 + h11);
    let az = 0.5 * (h00 - h11);
    let ax = off.re;
    let ay = -off.im;
    let r = (ax * ax + ay * ay + az * az).sqrt();
    let glob = (-I * a0 * t).exp();
    let (cs, sn) = ((r * t).cos(), (r * t).sin());
    let k = if r > 0.0 { sn / r } else { t };
    let m = nd::arr2(&[
        [c(cs, -k * az), -I * k * c(ax, -ay)],
        [-I * k * c(ax, ay), c(cs, k * az)],
    ]);
    m * glob
}

fn one_norm(a: &CMat) -> f64 {
    a.columns()
        .into_iter()
        .map(|col| col.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// General matrix exponential `exp(a)` by scaling and squaring with a degree-13 Padé approximant.
pub fn expm(a: &CMat) -> Result<CMat> {
    let n = check_square(a)?;
    check_finite(a)?;
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA13: f64 = 5.371920351148152;
    let norm = one_norm(a);
    let s = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = a * c(0.5f64.powi(s), 0.0);
    let id = eye(n);
    let a2 = a.dot(&a);
    let a4 = a2.dot(&a2);
    let a6 = a4.dot(&a2);
    let cr = |x: f64| c(x, 0.0);
    let u_inner = &a6 * cr(B[13]) + &a4 * cr(B[11]) + &a2 * cr(B[9]);
    let u_tail = &a6 * cr(B[7]) + &a4 * cr(B[5]) + &a2 * cr(B[3]) + &id * cr(B[1]);
    let u = a.dot(&(a6.dot(&u_inner) + u_tail));
    let v_inner = &a6 * cr(B[12]) + &a4 * cr(B[10]) + &a2 * cr(B[8]);
    let v = a6.dot(&v_inner) + &a6 * cr(B[6]) + &a4 * cr(B[4]) + &a2 * cr(B[2]) + &id * cr(B[0]);
    let q_inv = (&v - &u)
        .inv()
        .map_err(|e| LinalgError::Lapack(e.to_string()))?;
    let mut r = q_inv.dot(&(&v + &u));
    for _ in 0..s {
        r = r.dot(&r);
    }
    Ok(r)
}

/// `a^n` by repeated squaring.
pub fn mat_pow(a: &CMat, mut n: u64) -> CMat {
    let mut result = eye(a.nrows());
    let mut base = a.clone();
    while n > 0 {
        if n & 1 == 1 {
            result = result.dot(&base);
        }
        n >>= 1;
        if n > 0 {
            base = base.dot(&base);
        }
    }
    result
}

/// Eigen-decomposition of a unitary with an orthonormal eigenbasis.
#[derive(Clone, Debug)]
pub struct UnitaryEigen {
    /// Eigenphases θ with eigenvalue `exp(iθ)`, folded into `[-π, π)`.
    pub phases: nd::Array1<f64>,
    pub vectors: CMat,
}

const COS_CLUSTER_TOL: f64 = 1e-6;

/// Diagonalizes a unitary through its commuting Hermitian parts
/// `A = (U+U†)/2` and `B = (U−U†)/2i`, which keeps the eigenbasis orthonormal
/// even for degenerate eigenphases.
pub fn unitary_eigen(u: &CMat) -> Result<UnitaryEigen> {
    let n = check_square(u)?;
    check_finite(u)?;
    let err = unitarity_error(u);
    if err > 1e-8 {
        return Err(LinalgError::NotUnitary(err));
    }
    let ud = dagger(u);
    let a = hermitize(&((u + &ud) * c(0.5, 0.0)));
    let b = hermitize(&((u - &ud) * c(0.0, -0.5)));
    let (wa, va) = eigh_raw(&a)?;
    let mut vectors = CMat::zeros((n, n));
    let mut phases = nd::Array1::<f64>::zeros(n);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && wa[j] - wa[j - 1] < COS_CLUSTER_TOL {
            j += 1;
        }
        let sub = va.slice(nd::s![.., i..j]).to_owned();
        let block = if j - i == 1 {
            sub
        } else {
            let bsub = dagger(&sub).dot(&b).dot(&sub);
            let (_, vb) = eigh_raw(&hermitize(&bsub))?;
            sub.dot(&vb)
        };
        for k in 0..(j - i) {
            let v = block.column(k);
            let av = a.dot(&v);
            let bv = b.dot(&v);
            let ca: C64 = v.iter().zip(av.iter()).map(|(x, y)| x.conj() * y).sum();
            let cb: C64 = v.iter().zip(bv.iter()).map(|(x, y)| x.conj() * y).sum();
            let mut th = cb.re.atan2(ca.re);
            if th >= PI {
                th -= 2.0 * PI;
            }
            phases[i + k] = th;
            vectors.column_mut(i + k).assign(&v);
        }
        i = j;
    }
    Ok(UnitaryEigen { phases, vectors })
}

/// Quasienergies `ε = −θ/period` in `(−π/period, π/period]` with eigenvectors as columns.
pub fn quasienergies(u: &CMat, period: f64) -> Result<(nd::Array1<f64>, CMat)> {
    let eig = unitary_eigen(u)?;
    let eps = eig.phases.mapv(|th| -th / period);
    Ok((eps, eig.vectors))
}

/// Hermitian `H_F` with `exp(-i H_F period) = u`, quasienergies folded into `(−π/period, π/period]`.
pub fn matlog_unitary(u: &CMat, period: f64) -> Result<CMat> {
    let (eps, v) = quasienergies(u, period)?;
    let scaled = &v * &eps.mapv(|e| c(e, 0.0)).view().insert_axis(nd::Axis(0));
    Ok(hermitize(&scaled.dot(&dagger(&v))))
}

/// Spectral projectors of a unitary; eigenphases closer than `tol` (circularly) share a projector.
pub fn phase_projectors(u: &CMat, tol: f64) -> Result<Vec<CMat>> {
    let eig = unitary_eigen(u)?;
    let n = eig.phases.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.phases[i].total_cmp(&eig.phases[j]));
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &k in &order {
        match groups.last_mut() {
            Some(g) if eig.phases[k] - eig.phases[*g.last().unwrap()] < tol => g.push(k),
            _ => groups.push(vec![k]),
        }
    }
    if groups.len() > 1 {
        let first = eig.phases[groups[0][0]];
        let last = eig.phases[*groups.last().unwrap().last().unwrap()];
        if first + 2.0 * PI - last < tol {
            let tail = groups.pop().unwrap();
            groups[0].extend(tail);
        }
    }
    Ok(groups
        .into_iter()
        .map(|g| {
            let mut p = CMat::zeros((n, n));
            for k in g {
                let v = eig.vectors.column(k);
                for i in 0..n {
                    for j in 0..n {
                        p[[i, j]] += v[i] * v[j].conj();
                    }
                }
            }
            p
        })
        .collect())
}

/// Hilbert-Schmidt distance between two equal-size matrices.
pub fn hs_distance_mat(a: &CMat, b: &CMat) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(LinalgError::DimMismatch(a.nrows(), b.nrows()));
    }
    Ok(hs_norm(&(a - b)))
}

pub fn hs_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    hs_distance_mat(a.matrix(), b.matrix())
}

/// A state vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket(CVec);

impl Ket {
    /// Wraps amplitudes that must already be normalized within 1e-12.
    pub fn new(amps: CVec) -> Result<Self> {
        let n2: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if !n2.is_finite() {
            return Err(LinalgError::NonFinite);
        }
        if (n2 - 1.0).abs() > 1e-12 {
            return Err(LinalgError::NotNormalized(n2));
        }
        Ok(Ket(amps))
    }

    /// Rescales nonzero amplitudes to unit norm.
    pub fn normalized(amps: CVec) -> Result<Self> {
        let n2: f64 = amps.iter().map(|z| z.norm_sqr()).sum();
        if !n2.is_finite() || n2 == 0.0 {
            return Err(LinalgError::NotNormalized(n2));
        }
        Ok(Ket(amps / c(n2.sqrt(), 0.0)))
    }

    pub fn from_real(amps: &[f64]) -> Result<Self> {
        Self::normalized(amps.iter().map(|&x| c(x, 0.0)).collect())
    }

    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = CVec::zeros(dim);
        v[index] = ONE;
        Ket(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn amps(&self) -> &CVec {
        &self.0
    }

    /// `<self|other>`.
    pub fn inner(&self, other: &Ket) -> C64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a.conj() * b).sum()
    }

    /// `|<self|other>|^2`.
    pub fn overlap(&self, other: &Ket) -> f64 {
        self.inner(other).norm_sqr()
    }

    pub fn tensor(&self, other: &Ket) -> Ket {
        let mut v = CVec::zeros(self.dim() * other.dim());
        for (i, a) in self.0.iter().enumerate() {
            for (j, b) in other.0.iter().enumerate() {
                v[i * other.dim() + j] = a * b;
            }
        }
        Ket(v)
    }

    pub fn tensor_all<'a, It: IntoIterator<Item = &'a Ket>>(kets: It) -> Ket {
        kets.into_iter()
            .fold(Ket(nd::arr1(&[ONE])), |acc, k| acc.tensor(k))
    }

    pub fn projector(&self) -> CMat {
        let col = self.0.view().insert_axis(nd::Axis(1));
        let row = self.0.mapv(|z| z.conj()).insert_axis(nd::Axis(0));
        col.dot(&row)
    }

    /// `<self|m|self>`.
    pub fn expectation(&self, m: &CMat) -> C64 {
        self.inner_with(&m.dot(&self.0))
    }

    fn inner_with(&self, v: &CVec) -> C64 {
        self.0.iter().zip(v.iter()).map(|(a, b)| a.conj() * b).sum()
    }
}

/// A density matrix: Hermitian, unit trace, positive semidefinite (within tolerance).
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix(CMat);

impl DensityMatrix {
    pub fn new(m: CMat) -> Result<Self> {
        let d = check_square(&m)?;
        check_finite(&m)?;
        let herr = hermiticity_error(&m);
        if herr > 1e-10 {
            return Err(LinalgError::InvalidDensity(format!(
                "Hermiticity deviation {herr:.3e}"
            )));
        }
        let tr = trace(&m).re;
        if (tr - 1.0).abs() > 1e-9 {
            return Err(LinalgError::InvalidDensity(format!("trace {tr}")));
        }
        if d > 0 {
            let (w, _) = eigh_raw(&hermitize(&m))?;
            if w[0] < -1e-8 {
                return Err(LinalgError::InvalidDensity(format!(
                    "negative eigenvalue {:.3e}",
                    w[0]
                )));
            }
        }
        Ok(DensityMatrix(m))
    }

    /// Wraps a matrix produced by a trusted channel; only Hermiticity is enforced.
    pub fn from_trusted(m: CMat) -> Self {
        DensityMatrix(hermitize(&m))
    }

    pub fn from_ket(k: &Ket) -> Self {
        DensityMatrix(k.projector())
    }

    pub fn maximally_mixed(d: usize) -> Self {
        DensityMatrix(eye(d) * c(1.0 / d as f64, 0.0))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn trace(&self) -> f64 {
        trace(&self.0).re
    }

    pub fn purity(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `<psi|rho|psi>`, which equals `Tr[rho |psi><psi|]`.
    pub fn fidelity_pure(&self, psi: &Ket) -> Result<f64> {
        if psi.dim() != self.dim() {
            return Err(LinalgError::DimMismatch(psi.dim(), self.dim()));
        }
        Ok(psi.expectation(&self.0).re)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (w, _) = eigh_raw(&self.0)?;
        Ok(w[0])
    }
}
