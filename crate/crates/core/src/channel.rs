//! Kraus maps acting on a subset of sites of a register.

use thiserror::Error;

use crate::linalg::{dagger, eye, kron, max_abs, CMat, ZERO};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("Kraus operator is {got}x{got}, expected {expected}x{expected}")]
    KrausShape { got: usize, expected: usize },
    #[error("site {0} out of range or repeated")]
    BadSite(usize),
    #[error("channel is not trace preserving (defect {0:.3e})")]
    NotTracePreserving(f64),
}

/// A CP map given by Kraus operators on `sites`, each site of dimension `local_dim`.
#[derive(Clone, Debug)]
pub struct LocalChannel {
    sites: Vec<usize>,
    local_dim: usize,
    kraus: Vec<CMat>,
}

impl LocalChannel {
    pub fn new(sites: Vec<usize>, local_dim: usize, kraus: Vec<CMat>) -> Result<Self, ChannelError> {
        let expected = local_dim.pow(sites.len() as u32);
        for k in &kraus {
            if k.nrows() != expected || k.ncols() != expected {
                return Err(ChannelError::KrausShape { got: k.nrows(), expected });
            }
        }
        let mut sorted = sites.clone();
        sorted.sort_unstable();
        if let Some(w) = sorted.windows(2).find(|w| w[0] == w[1]) {
            return Err(ChannelError::BadSite(w[0]));
        }
        Ok(LocalChannel { sites, local_dim, kraus })
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn kraus(&self) -> &[CMat] {
        &self.kraus
    }

    /// `max |Σ K†K − I|`; zero for trace-preserving maps.
    pub fn trace_defect(&self) -> f64 {
        let d = self.local_dim.pow(self.sites.len() as u32);
        let sum = self
            .kraus
            .iter()
            .fold(CMat::zeros((d, d)), |acc, k| acc + dagger(k).dot(k));
        max_abs(&(sum - eye(d)))
    }

    fn layout(&self, n_sites: usize) -> Result<Layout, ChannelError> {
        for &s in &self.sites {
            if s >= n_sites {
                return Err(ChannelError::BadSite(s));
            }
        }
        Ok(Layout::new(&self.sites, n_sites, self.local_dim))
    }

    /// `Σ K ρ K†` on a register of `n_sites` sites.
    pub fn apply(&self, rho: &CMat, n_sites: usize) -> Result<CMat, ChannelError> {
        let lay = self.layout(n_sites)?;
        let dim = lay.full;
        let m = lay.sub;
        let src = rho.as_standard_layout();
        let src = src.as_slice().expect("contiguous");
        let mut out = vec![ZERO; dim * dim];
        let mut tmp = vec![ZERO; dim * dim];
        for k in &self.kraus {
            let ks = k.as_standard_layout();
            let ks = ks.as_slice().expect("contiguous");
            // tmp = K ρ
            for i in 0..dim {
                let (si, ei) = (lay.sub_of[i], lay.rest_of[i]);
                let row = &mut tmp[i * dim..(i + 1) * dim];
                row.fill(ZERO);
                for sp in 0..m {
                    let kv = ks[si * m + sp];
                    if kv == ZERO {
                        continue;
                    }
                    let r = lay.join(sp, ei);
                    let src_row = &src[r * dim..(r + 1) * dim];
                    for (o, s) in row.iter_mut().zip(src_row) {
                        *o += kv * s;
                    }
                }
            }
            // out += tmp K†
            for j in 0..dim {
                let (sj, ej) = (lay.sub_of[j], lay.rest_of[j]);
                for sp in 0..m {
                    let kv = ks[sj * m + sp].conj();
                    if kv == ZERO {
                        continue;
                    }
                    let col = lay.join(sp, ej);
                    for i in 0..dim {
                        out[i * dim + j] += tmp[i * dim + col] * kv;
                    }
                }
            }
        }
        Ok(CMat::from_shape_vec((dim, dim), out).expect("shape"))
    }

    /// Kraus operator `k` extended by identities to the whole register.
    pub fn embed(&self, k: &CMat, n_sites: usize) -> Result<CMat, ChannelError> {
        let lay = self.layout(n_sites)?;
        let mut full = CMat::zeros((lay.full, lay.full));
        for i in 0..lay.full {
            for sp in 0..lay.sub {
                let v = k[[lay.sub_of[i], sp]];
                if v != ZERO {
                    full[[i, lay.join(sp, lay.rest_of[i])]] = v;
                }
            }
        }
        Ok(full)
    }

    /// Column-stacked superoperator `Σ conj(K) ⊗ K` on the whole register.
    pub fn superoperator(&self, n_sites: usize) -> Result<CMat, ChannelError> {
        let d = self.local_dim.pow(n_sites as u32);
        let mut s = CMat::zeros((d * d, d * d));
        for k in &self.kraus {
            let full = self.embed(k, n_sites)?;
            s = s + kron(&full.mapv(|z| z.conj()), &full);
        }
        Ok(s)
    }
}

/// Index bookkeeping that splits a register index into (selected sites, rest).
struct Layout {
    full: usize,
    sub: usize,
    sub_of: Vec<usize>,
    rest_of: Vec<usize>,
    /// full index of (sub, rest)
    table: Vec<usize>,
}

impl Layout {
    fn new(sites: &[usize], n: usize, d: usize) -> Self {
        let full = d.pow(n as u32);
        let sub = d.pow(sites.len() as u32);
        let rest_n = n - sites.len();
        let mut sub_of = vec![0; full];
        let mut rest_of = vec![0; full];
        let mut table = vec![0; full];
        for idx in 0..full {
            let lv = crate::system::digits(idx, n, d);
            let s = sites.iter().fold(0, |acc, &q| acc * d + lv[q]);
            let r = (0..n)
                .filter(|q| !sites.contains(q))
                .fold(0, |acc, q| acc * d + lv[q]);
            sub_of[idx] = s;
            rest_of[idx] = r;
            table[s * d.pow(rest_n as u32) + r] = idx;
        }
        Layout { full, sub, sub_of, rest_of, table }
    }

    fn join(&self, s: usize, r: usize) -> usize {
        self.table[s * (self.full / self.sub) + r]
    }
}

/// Applies a column-stacked superoperator to a density matrix.
pub fn apply_superoperator(s: &CMat, rho: &CMat) -> CMat {
    let d = rho.nrows();
    let mut v = vec![ZERO; d * d];
    for j in 0..d {
        for i in 0..d {
            v[i + j * d] = rho[[i, j]];
        }
    }
    let v = ndarray::Array1::from(v);
    let w = s.dot(&v);
    let mut out = CMat::zeros((d, d));
    for j in 0..d {
        for i in 0..d {
            out[[i, j]] = w[i + j * d];
        }
    }
    out
}

/// Column-stacked superoperator of `ρ ↦ U ρ U†`.
pub fn unitary_superoperator(u: &CMat) -> CMat {
    kron(&u.mapv(|z| z.conj()), u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, matexp, ONE};
    use ndarray as nd;

    fn random_state(d: usize, seed: u64) -> CMat {
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let a = CMat::from_shape_fn((d, d), |_| c(next(), next()));
        let rho = a.dot(&dagger(&a));
        let tr = crate::linalg::trace(&rho);
        rho / tr
    }

    #[test]
    fn local_apply_matches_embedded_operator() {
        let h = nd::arr2(&[
            [c(0.3, 0.0), c(0.1, 0.2), ZERO, c(0.0, 0.4)],
            [c(0.1, -0.2), c(-0.1, 0.0), c(0.5, 0.0), ZERO],
            [ZERO, c(0.5, 0.0), c(0.2, 0.0), c(0.3, 0.0)],
            [c(0.0, -0.4), ZERO, c(0.3, 0.0), c(0.0, 0.0)],
        ]);
        let u = matexp(&h, 1.3).unwrap();
        let ch = LocalChannel::new(vec![2, 0], 2, vec![u.clone()]).unwrap();
        let rho = random_state(8, 7);
        let out = ch.apply(&rho, 3).unwrap();
        let full = ch.embed(&u, 3).unwrap();
        let expected = full.dot(&rho).dot(&dagger(&full));
        assert!(max_abs(&(out - &expected)) < 1e-13);
        let s = ch.superoperator(3).unwrap();
        assert!(max_abs(&(apply_superoperator(&s, &rho) - expected)) < 1e-13);
    }

    #[test]
    fn reset_like_channel_is_trace_preserving() {
        let p = nd::arr2(&[[ONE, ZERO], [ZERO, ZERO]]);
        let lower = nd::arr2(&[[ZERO, ONE], [ZERO, ZERO]]);
        let ch = LocalChannel::new(vec![1], 2, vec![p, lower]).unwrap();
        assert!(ch.trace_defect() < 1e-15);
        let rho = random_state(4, 3);
        let out = ch.apply(&rho, 2).unwrap();
        assert!((crate::linalg::trace(&out).re - 1.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_shapes_and_sites() {
        assert!(LocalChannel::new(vec![0], 2, vec![eye(4)]).is_err());
        assert!(LocalChannel::new(vec![0, 0], 2, vec![eye(4)]).is_err());
        let ch = LocalChannel::new(vec![3], 2, vec![eye(2)]).unwrap();
        assert!(ch.apply(&eye(4), 2).is_err());
    }
}
