//! Dense operators with explicit support annotations.
//!
//! A [`DenseOperator`] is a complex matrix together with the ordered list of
//! lattice sites it acts on and the ambient lattice size. Rows and columns
//! are indexed big-endian over the sorted support: the first (smallest) site
//! carries the most significant digit.

use crate::linalg::{self, CMat};
use ndarray::Array2;
use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("support must be strictly increasing site indices, got {0:?}")]
    UnsortedSupport(Vec<usize>),
    #[error("support site {site} out of range for {ambient} ambient sites")]
    SupportOutOfRange { site: usize, ambient: usize },
    #[error("matrix dimension {dim} does not equal d^|support| = {expected}")]
    DimensionMismatch { dim: usize, expected: usize },
    #[error("target support does not contain the operator support")]
    NotASuperset,
    #[error("operators act on different supports")]
    SupportMismatch,
    #[error("keep-set is not a subset of the support")]
    BadKeepSet,
}

#[derive(Debug, Clone)]
pub struct DenseOperator {
    matrix: CMat,
    support: Vec<usize>,
    local_dim: usize,
    ambient_sites: usize,
}

impl DenseOperator {
    pub fn new(
        matrix: CMat,
        support: Vec<usize>,
        local_dim: usize,
        ambient_sites: usize,
    ) -> Result<Self, OperatorError> {
        if !support.windows(2).all(|w| w[0] < w[1]) {
            return Err(OperatorError::UnsortedSupport(support));
        }
        if let Some(&site) = support.iter().find(|&&s| s >= ambient_sites) {
            return Err(OperatorError::SupportOutOfRange { site, ambient: ambient_sites });
        }
        let expected = local_dim.pow(support.len() as u32);
        if matrix.nrows() != expected || matrix.ncols() != expected {
            return Err(OperatorError::DimensionMismatch { dim: matrix.nrows(), expected });
        }
        Ok(Self { matrix, support, local_dim, ambient_sites })
    }

    /// Identity on the whole lattice, stored as a 1x1 matrix with empty support.
    pub fn identity(local_dim: usize, ambient_sites: usize) -> Self {
        Self {
            matrix: Array2::from_elem((1, 1), C64::new(1.0, 0.0)),
            support: Vec::new(),
            local_dim,
            ambient_sites,
        }
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMat {
        self.matrix
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn ambient_sites(&self) -> usize {
        self.ambient_sites
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        linalg::hermiticity_defect(&self.matrix) <= tol
    }

    pub fn op_norm(&self) -> f64 {
        linalg::op_norm(&self.matrix)
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix)
    }

    pub fn dagger(&self) -> Self {
        Self {
            matrix: linalg::dagger(&self.matrix),
            support: self.support.clone(),
            local_dim: self.local_dim,
            ambient_sites: self.ambient_sites,
        }
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self {
            matrix: self.matrix.mapv(|z| z * factor),
            support: self.support.clone(),
            local_dim: self.local_dim,
            ambient_sites: self.ambient_sites,
        }
    }

    /// Embed into a larger support (identity on the new sites).
    pub fn embedded(&self, target: &[usize]) -> Result<Self, OperatorError> {
        if !target.windows(2).all(|w| w[0] < w[1]) {
            return Err(OperatorError::UnsortedSupport(target.to_vec()));
        }
        if target == self.support.as_slice() {
            return Ok(self.clone());
        }
        let mut pos_in_target = Vec::with_capacity(self.support.len());
        for &s in &self.support {
            match target.binary_search(&s) {
                Ok(p) => pos_in_target.push(p),
                Err(_) => return Err(OperatorError::NotASuperset),
            }
        }
        let d = self.local_dim;
        let t = target.len();
        let n = self.support.len();
        let rest_positions: Vec<usize> =
            (0..t).filter(|p| !pos_in_target.contains(p)).collect();
        let dim_sup = d.pow(n as u32);
        let dim_rest = d.pow(rest_positions.len() as u32);
        let dim_out = d.pow(t as u32);
        // target-index weight of digit at target position p (big-endian)
        let weight = |p: usize| d.pow((t - 1 - p) as u32);

        // base index contributed by the support digits of a support-space index
        let sup_base: Vec<usize> = (0..dim_sup)
            .map(|mut i| {
                let mut base = 0;
                for p in (0..n).rev() {
                    base += (i % d) * weight(pos_in_target[p]);
                    i /= d;
                }
                base
            })
            .collect();
        let rest_base: Vec<usize> = (0..dim_rest)
            .map(|mut i| {
                let mut base = 0;
                for p in (0..rest_positions.len()).rev() {
                    base += (i % d) * weight(rest_positions[p]);
                    i /= d;
                }
                base
            })
            .collect();

        let mut out = CMat::zeros((dim_out, dim_out));
        for is in 0..dim_sup {
            for js in 0..dim_sup {
                let v = self.matrix[(is, js)];
                if v.re == 0.0 && v.im == 0.0 {
                    continue;
                }
                for &rb in &rest_base {
                    out[(sup_base[is] + rb, sup_base[js] + rb)] = v;
                }
            }
        }
        Self::new(out, target.to_vec(), d, self.ambient_sites)
    }

    /// Embed into the full lattice space.
    pub fn embedded_full(&self) -> Result<Self, OperatorError> {
        let all: Vec<usize> = (0..self.ambient_sites).collect();
        self.embedded(&all)
    }

    /// Partial trace keeping `keep` (a subset of the support), tracing out
    /// the remaining support sites.
    pub fn partial_trace(&self, keep: &[usize]) -> Result<Self, OperatorError> {
        if !keep.windows(2).all(|w| w[0] < w[1]) {
            return Err(OperatorError::UnsortedSupport(keep.to_vec()));
        }
        let mut keep_pos = Vec::with_capacity(keep.len());
        for &s in keep {
            match self.support.binary_search(&s) {
                Ok(p) => keep_pos.push(p),
                Err(_) => return Err(OperatorError::BadKeepSet),
            }
        }
        let d = self.local_dim;
        let n = self.support.len();
        let trace_pos: Vec<usize> = (0..n).filter(|p| !keep_pos.contains(p)).collect();
        let dim_keep = d.pow(keep_pos.len() as u32);
        let dim_trace = d.pow(trace_pos.len() as u32);
        let src_weight = |p: usize| d.pow((n - 1 - p) as u32);

        let keep_base: Vec<usize> = (0..dim_keep)
            .map(|mut i| {
                let mut base = 0;
                for p in (0..keep_pos.len()).rev() {
                    base += (i % d) * src_weight(keep_pos[p]);
                    i /= d;
                }
                base
            })
            .collect();
        let trace_base: Vec<usize> = (0..dim_trace)
            .map(|mut i| {
                let mut base = 0;
                for p in (0..trace_pos.len()).rev() {
                    base += (i % d) * src_weight(trace_pos[p]);
                    i /= d;
                }
                base
            })
            .collect();

        let mut out = CMat::zeros((dim_keep, dim_keep));
        for ik in 0..dim_keep {
            for jk in 0..dim_keep {
                let mut acc = C64::new(0.0, 0.0);
                for &tb in &trace_base {
                    acc += self.matrix[(keep_base[ik] + tb, keep_base[jk] + tb)];
                }
                out[(ik, jk)] = acc;
            }
        }
        Self::new(out, keep.to_vec(), d, self.ambient_sites)
    }

    /// Product of two operators embedded on the union of their supports.
    pub fn compose(&self, other: &Self) -> Result<Self, OperatorError> {
        let union = union_sorted(&self.support, &other.support);
        let a = self.embedded(&union)?;
        let b = other.embedded(&union)?;
        Self::new(a.matrix.dot(&b.matrix), union, self.local_dim, self.ambient_sites)
    }

    /// Sum of two operators embedded on the union of their supports.
    pub fn add(&self, other: &Self) -> Result<Self, OperatorError> {
        let union = union_sorted(&self.support, &other.support);
        let a = self.embedded(&union)?;
        let b = other.embedded(&union)?;
        Self::new(&a.matrix + &b.matrix, union, self.local_dim, self.ambient_sites)
    }

    /// Entrywise check that the full-space embedding acts as the identity
    /// outside `claimed`: the partial trace onto `claimed` reproduces the
    /// operator up to `tol` after embedding, i.e. the operator's true support
    /// is contained in `claimed`.
    pub fn support_within(&self, claimed: &[usize], tol: f64) -> Result<bool, OperatorError> {
        let union = union_sorted(&self.support, claimed);
        let big = self.embedded(&union)?;
        let reduced = big.partial_trace(claimed)?;
        let scale = self.local_dim.pow((union.len() - claimed.len()) as u32) as f64;
        let back = reduced.scaled(C64::new(1.0 / scale, 0.0)).embedded(&union)?;
        let defect = (&big.matrix - &back.matrix)
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        Ok(defect <= tol)
    }
}

pub fn union_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let mut out: Vec<usize> = a.iter().chain(b.iter()).cloned().collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// Kronecker product in the big-endian convention (`a` on the more
/// significant digits).
pub fn kron(a: &CMat, b: &CMat) -> CMat {
    let (ar, ac) = (a.nrows(), a.ncols());
    let (br, bc) = (b.nrows(), b.ncols());
    let mut out = CMat::zeros((ar * br, ac * bc));
    for ((i, j), &av) in a.indexed_iter() {
        if av.re == 0.0 && av.im == 0.0 {
            continue;
        }
        for ((k, l), &bv) in b.indexed_iter() {
            out[(i * br + k, j * bc + l)] = av * bv;
        }
    }
    out
}

pub fn pauli_x() -> CMat {
    ndarray::array![
        [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    ]
}

pub fn pauli_y() -> CMat {
    ndarray::array![
        [C64::new(0.0, 0.0), C64::new(0.0, -1.0)],
        [C64::new(0.0, 1.0), C64::new(0.0, 0.0)]
    ]
}

pub fn pauli_z() -> CMat {
    ndarray::array![
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(-1.0, 0.0)]
    ]
}

pub fn identity2() -> CMat {
    CMat::eye(2)
}
