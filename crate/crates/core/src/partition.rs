//! Partition-function algorithms: the 1D iterative `log Z` built from
//! belief-propagation windows, the cluster-series front end, and the 1D
//! product-of-local-operators approximation to `e^{-βH}`.
//!
//! The 1D algorithm walks the chain term by term. With `H_i` the sum of the
//! first `i` terms, `Z_i = Z_{i-1} Tr[ρ_i A_i]` where `A_i = O_{h_i}† O_{h_i}`
//! and `ρ_i` is the normalized Gibbs state of `H_i`; truncating `O` to
//! radius `l*` and `ρ_i` to a window of `2l*` sites ending at the right
//! endpoint of `supp h_i` makes every factor a dense computation of size
//! `d^{O(l*)}`.

use crate::cluster::{self, ClusterBudget, ClusterError, SeriesResult};
use crate::lattice::{Hamiltonian, Region};
use crate::linalg::{self, CMat};
use crate::locality::{self, LocalityError, QbpIntegrator};
use crate::operator::{union_sorted, DenseOperator, OperatorError};
use crate::oracle::{self, OracleError};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("model is not a chain: hyperedge {edge:?} is neither a site nor a contiguous pair")]
    NotAChain { edge: Vec<usize> },
    #[error("window of {sites} sites exceeds the dense cap {cap}; reduce l*")]
    WindowOverCap { sites: usize, cap: usize },
    #[error("l* must be >= 1")]
    BadWindow,
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Locality(#[from] LocalityError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// Configuration of one 1D run. `l_star` wins over `epsilon`; when only
/// `epsilon` is given the window radius follows
/// `l* = ceil(a + b log(N/ε))` with the (model-dependent, self-auditing)
/// defaults `a = 2`, `b = 1`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OneDRunConfig {
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_star: Option<usize>,
    #[serde(default = "default_schedule_a")]
    pub schedule_a: f64,
    #[serde(default = "default_schedule_b")]
    pub schedule_b: f64,
}

fn default_schedule_a() -> f64 {
    2.0
}
fn default_schedule_b() -> f64 {
    1.0
}

impl OneDRunConfig {
    pub fn new(beta: f64) -> Self {
        Self {
            beta,
            epsilon: None,
            l_star: None,
            schedule_a: default_schedule_a(),
            schedule_b: default_schedule_b(),
        }
    }

    pub fn with_l_star(mut self, l: usize) -> Self {
        self.l_star = Some(l);
        self
    }

    pub fn with_epsilon(mut self, eps: f64) -> Self {
        self.epsilon = Some(eps);
        self
    }

    fn resolve_l_star(&self, n: usize) -> Result<usize, PartitionError> {
        if let Some(l) = self.l_star {
            if l == 0 {
                return Err(PartitionError::BadWindow);
            }
            return Ok(l);
        }
        let eps = self.epsilon.unwrap_or(1e-3);
        let l = (self.schedule_a + self.schedule_b * (n as f64 / eps).ln()).ceil();
        Ok((l.max(1.0)) as usize)
    }
}

/// Chain detection: every hyperedge must be a single site or a contiguous
/// pair. Returns the term order for the left-to-right sweep.
pub fn chain_term_order(ham: &Hamiltonian) -> Result<Vec<usize>, PartitionError> {
    for t in ham.terms() {
        let ok = match t.support.as_slice() {
            [_] => true,
            [a, b] => *b == *a + 1,
            _ => false,
        };
        if !ok {
            return Err(PartitionError::NotAChain { edge: t.support.clone() });
        }
    }
    let mut order: Vec<usize> = (0..ham.terms().len()).collect();
    order.sort_by_key(|&i| {
        let s = &ham.terms()[i].support;
        (*s.last().unwrap(), s[0])
    });
    Ok(order)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepFactor {
    pub term: usize,
    pub factor: f64,
    pub quadrature_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OneDResult {
    pub log_z_prime: f64,
    pub l_star: usize,
    pub steps: Vec<StepFactor>,
    /// sum of the per-step Richardson deltas of the QBP integrations
    pub quadrature_error_total: f64,
    /// dense-oracle comparison, when the full chain fits under the cap
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_log_z: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub abs_error: Option<f64>,
}

/// The 1D iterative `log Z` algorithm.
pub fn logz_1d(ham: &Hamiltonian, config: &OneDRunConfig) -> Result<OneDResult, PartitionError> {
    logz_1d_inner(ham, config, true)
}

/// Same as [`logz_1d`] but never computes the dense-oracle comparison.
pub fn logz_1d_uncertified(
    ham: &Hamiltonian,
    config: &OneDRunConfig,
) -> Result<OneDResult, PartitionError> {
    logz_1d_inner(ham, config, false)
}

fn logz_1d_inner(
    ham: &Hamiltonian,
    config: &OneDRunConfig,
    compare: bool,
) -> Result<OneDResult, PartitionError> {
    let order = chain_term_order(ham)?;
    let n = ham.num_sites();
    let d = ham.local_dim();
    let l_star = config.resolve_l_star(n)?;
    let beta = config.beta;
    let cap = crate::dense_cap();
    let integ = QbpIntegrator::default();

    let mut log_z = n as f64 * (d as f64).ln();
    let mut steps = Vec::with_capacity(order.len());
    let mut quad_total = 0.0;
    for (pos, &term) in order.iter().enumerate() {
        let support = &ham.terms()[term].support;
        let right = *support.last().unwrap();
        let win_lo = (right + 1).saturating_sub(2 * l_star);
        let window = Region::new((win_lo..=right).collect());
        if d.pow(window.len() as u32) > cap {
            return Err(PartitionError::WindowOverCap { sites: window.len(), cap });
        }
        // previous terms (in sweep order) fully inside the window
        let previous: Vec<usize> = order[..pos]
            .iter()
            .cloned()
            .filter(|&j| ham.terms()[j].support.iter().all(|v| window.contains(*v)))
            .collect();
        // QBP generator: previous terms within distance l* of supp h_i,
        // restricted to the window
        let a_region = Region::new(support.clone());
        let near = ham.terms_within_distance(&a_region, l_star);
        let gen_terms: Vec<usize> =
            previous.iter().cloned().filter(|j| near.contains(j)).collect();

        let mut gen_region = support.clone();
        for &j in &gen_terms {
            gen_region = union_sorted(&gen_region, &ham.terms()[j].support);
        }
        let gen_dim = d.pow(gen_region.len() as u32);
        let mut h_loc = CMat::zeros((gen_dim, gen_dim));
        for &j in &gen_terms {
            h_loc += &ham.term_operator(j).embedded(&gen_region)?.into_matrix();
        }
        let a_mat = ham.term_operator(term).embedded(&gen_region)?.into_matrix();
        let (o_mat, o_delta) = locality::qbp_operator_matrices(&h_loc, &a_mat, beta, &integ)?;
        quad_total += o_delta;
        let o_op = DenseOperator::new(o_mat, gen_region, d, n)?;
        let a_i = o_op.dagger().compose(&o_op)?;

        // window Gibbs state of the previous terms
        let win_dim = d.pow(window.len() as u32);
        let mut h_win = CMat::zeros((win_dim, win_dim));
        for &j in &previous {
            h_win += &ham.term_operator(j).embedded(window.vertices())?.into_matrix();
        }
        let (wv, uv) = linalg::eigh(&h_win)?;
        let scaled: Vec<f64> = wv.iter().map(|e| -beta * e).collect();
        let log_zw = linalg::logsumexp(&scaled);
        let weights: Vec<f64> = wv.iter().map(|e| (-beta * e - log_zw).exp()).collect();
        let a_win = a_i.embedded(window.vertices())?.into_matrix();
        // Tr[ρ_w A] = Σ_l w_l <u_l|A|u_l>
        let au = a_win.dot(&uv);
        let mut factor = 0.0;
        for l in 0..win_dim {
            let mut diag = C64::new(0.0, 0.0);
            for r in 0..win_dim {
                diag += uv[(r, l)].conj() * au[(r, l)];
            }
            factor += weights[l] * diag.re;
        }
        log_z += factor.ln();
        steps.push(StepFactor { term, factor, quadrature_error: o_delta });
    }

    let (oracle_log_z, abs_error) = if compare && d.pow(n as u32) <= cap {
        let h = ham.assemble_full();
        let w = linalg::eigvalsh(&h)?;
        let scaled: Vec<f64> = w.iter().map(|e| -beta * e).collect();
        let oracle = linalg::logsumexp(&scaled);
        (Some(oracle), Some((log_z - oracle).abs()))
    } else {
        (None, None)
    };

    Ok(OneDResult {
        log_z_prime: log_z,
        l_star,
        steps,
        quadrature_error_total: quad_total,
        oracle_log_z,
        abs_error,
    })
}

/// Cluster-series front end: the smallest order whose truncation bound meets
/// `epsilon`, then the series itself.
pub fn logz_cluster(
    ham: &Hamiltonian,
    beta: f64,
    epsilon: f64,
    budget: ClusterBudget,
) -> Result<SeriesResult, PartitionError> {
    let bstar = cluster::beta_star(ham);
    if beta >= bstar || beta < 0.0 {
        return Err(PartitionError::Cluster(ClusterError::BetaOutOfRange {
            beta,
            beta_star: bstar,
        }));
    }
    let n = ham.num_sites() as f64;
    let r = if bstar.is_finite() { beta / bstar } else { 0.0 };
    let m = if r == 0.0 {
        0
    } else {
        // smallest M with N r^{M+1}/(1-r) <= ε
        let target = epsilon * (1.0 - r) / n;
        ((target.ln() / r.ln()).ceil() as i64 - 1).max(0) as usize
    };
    Ok(cluster::log_partition_series(ham, beta, m.min(cluster::MAX_ORDER), budget)?)
}

/// Ordered product of localized operators reproducing `e^{-βH}` on a chain.
#[derive(Debug, Clone)]
pub struct FactorizedThermal {
    /// factors `Ψ_j^l` in sweep order; the full product (index 0 applied as
    /// the leftmost matrix factor) reconstructs `e^{-βH}`
    pub factors: Vec<DenseOperator>,
    pub l: usize,
    /// measured `‖e^{-βH} - Π Ψ_j^l‖₁ / Z`
    pub trace_error: f64,
}

/// 1D thermal factorization `e^{-βH} = Ψ_1 Ψ_2 ... Ψ_{|E|}` with
/// `Ψ_j = e^{βH_j} e^{-β(H_j + h_j)}` localized to the terms within
/// distance `l` of `supp h_j`.
pub fn factorize_1d_thermal(
    ham: &Hamiltonian,
    beta: f64,
    l: usize,
) -> Result<FactorizedThermal, PartitionError> {
    if l == 0 {
        return Err(PartitionError::BadWindow);
    }
    let order = chain_term_order(ham)?;
    let n = ham.num_sites();
    let d = ham.local_dim();
    let cap = crate::dense_cap();
    let mut factors: Vec<DenseOperator> = Vec::with_capacity(order.len());
    for (pos, &term) in order.iter().enumerate() {
        let a_region = Region::new(ham.terms()[term].support.clone());
        let near = ham.terms_within_distance(&a_region, l);
        let gen_terms: Vec<usize> =
            order[..pos].iter().cloned().filter(|j| near.contains(j)).collect();
        let mut region = ham.terms()[term].support.clone();
        for &j in &gen_terms {
            region = union_sorted(&region, &ham.terms()[j].support);
        }
        let dim = d.pow(region.len() as u32);
        if dim > cap {
            return Err(PartitionError::WindowOverCap { sites: region.len(), cap });
        }
        let mut h_j = CMat::zeros((dim, dim));
        for &j in &gen_terms {
            h_j += &ham.term_operator(j).embedded(&region)?.into_matrix();
        }
        let h_next = &h_j + &ham.term_operator(term).embedded(&region)?.into_matrix();
        // Ψ_j = e^{βH_j^l} e^{-β(H_j^l + h_j)}, shift-stable
        let w = linalg::eigvalsh(&h_j)?;
        let shift = if w.is_empty() { 0.0 } else { 0.5 * (w[0] + w[w.len() - 1]) };
        let shifted_j = &h_j - &(CMat::eye(dim) * C64::new(shift, 0.0));
        let shifted_next = &h_next - &(CMat::eye(dim) * C64::new(shift, 0.0));
        let psi = linalg::expm_hermitian(&shifted_j, beta)?
            .dot(&linalg::expm_hermitian(&shifted_next, -beta)?);
        factors.push(DenseOperator::new(psi, region, d, n)?);
    }
    // measured error against the dense exponential
    let full_dim = d.pow(n as u32);
    let trace_error = if full_dim <= cap {
        let h = ham.assemble_full();
        let exact = linalg::expm_hermitian(&h, -beta)?;
        let mut prod = CMat::eye(full_dim);
        for f in &factors {
            prod = prod.dot(f.embedded_full()?.matrix());
        }
        let z = oracle::log_trace_exp(&h.mapv(|v| v * C64::new(-beta, 0.0)))?.exp();
        linalg::trace_norm(&(&exact - &prod)) / z
    } else {
        f64::NAN
    };
    Ok(FactorizedThermal { factors, l, trace_error })
}
