//! High-temperature connected-cluster expansion.
//!
//! `log Z` is expanded as `Σ_m (β^m/m!) K_m`, with each `K_m` assembled from
//! connected clusters: multisets of hyperedges whose distinct-edge
//! sub-hypergraph is connected. A cluster `W` with multiplicities `μ_i`
//! contributes the `λ^μ` monomial coefficient of `log Tr[e^{-β Σ λ_i h_i}]`
//! (the cluster derivative with the `1/∏ μ_i!` Taylor normalization folded
//! in), computed exactly on the restricted support of `W`. Disconnected
//! clusters contribute nothing; the module computes their value anyway when
//! asked, so the nullity is testable rather than assumed.
//!
//! Convergence is certified inside `β < β* = (2e²h𝔡(𝔡+1))^{-1}` with the
//! truncation bound `N (β/β*)^{M+1} / (1 - β/β*)` (the bound's prefactor is
//! taken as 1 and the per-order moment bound is reported as a diagnostic
//! instead of assumed).

use crate::lattice::{Hamiltonian, Lattice, LatticeError};
use crate::linalg::{self, CMat};
use crate::operator::DenseOperator;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// Hard cap on cluster order; the polynomial bookkeeping above this is
/// pointless at desk scale.
pub const MAX_ORDER: usize = 16;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("beta {beta} is not below the convergence radius beta* = {beta_star}")]
    BetaOutOfRange { beta: f64, beta_star: f64 },
    #[error("cluster order {m} exceeds the cap {cap}")]
    OrderCap { m: usize, cap: usize },
    #[error("enumeration budget exceeded: {count} clusters > cap {cap}")]
    BudgetExceeded { count: u64, cap: u64 },
    #[error("models with more than 64 hyperedges are not supported (got {0})")]
    TooManyEdges(usize),
    #[error("cluster is empty")]
    EmptyCluster,
    #[error("edge index {edge} out of range ({num_edges} edges)")]
    EdgeOutOfRange { edge: usize, num_edges: usize },
    #[error("correlator order bound needs two distinct edges")]
    SameEdge,
    #[error("edges are not connected through the hypergraph")]
    Disconnected,
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
}

/// A multiset of hyperedge indices with multiplicities `μ_i >= 1`, sorted by
/// edge index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cluster {
    edges: Vec<(usize, u32)>,
}

impl Cluster {
    pub fn new(mut edges: Vec<(usize, u32)>) -> Result<Self, ClusterError> {
        edges.retain(|&(_, m)| m > 0);
        edges.sort_unstable();
        if edges.is_empty() {
            return Err(ClusterError::EmptyCluster);
        }
        // merge duplicates
        let mut merged: Vec<(usize, u32)> = Vec::with_capacity(edges.len());
        for (e, m) in edges {
            match merged.last_mut() {
                Some((le, lm)) if *le == e => *lm += m,
                _ => merged.push((e, m)),
            }
        }
        Ok(Self { edges: merged })
    }

    pub fn edges(&self) -> &[(usize, u32)] {
        &self.edges
    }

    /// `|W| = Σ μ_i`.
    pub fn size(&self) -> usize {
        self.edges.iter().map(|&(_, m)| m as usize).sum()
    }

    pub fn contains_edge(&self, e: usize) -> bool {
        self.edges.iter().any(|&(f, _)| f == e)
    }

    pub fn multiplicity(&self, e: usize) -> u32 {
        self.edges.iter().find(|&&(f, _)| f == e).map(|&(_, m)| m).unwrap_or(0)
    }

    /// Connectivity of the distinct-edge sub-hypergraph.
    pub fn is_connected(&self, lattice: &Lattice) -> bool {
        connected_components(&self.edges.iter().map(|&(e, _)| e).collect::<Vec<_>>(), lattice)
            .len()
            <= 1
    }
}

fn connected_components(distinct: &[usize], lattice: &Lattice) -> Vec<Vec<usize>> {
    let mut remaining: Vec<usize> = distinct.to_vec();
    let mut components = Vec::new();
    while let Some(seed) = remaining.pop() {
        let mut comp = vec![seed];
        let mut frontier = vec![seed];
        while let Some(e) = frontier.pop() {
            let adj = &lattice.edge_adjacency()[e];
            let mut i = 0;
            while i < remaining.len() {
                if adj.contains(&remaining[i]) {
                    let f = remaining.swap_remove(i);
                    comp.push(f);
                    frontier.push(f);
                } else {
                    i += 1;
                }
            }
        }
        comp.sort_unstable();
        components.push(comp);
    }
    components
}

/// Convergence radius `β* = (2e²h𝔡(𝔡+1))^{-1}` in the geometric-ratio
/// convention. Degenerate lattices with `𝔡 = 0` are treated as `𝔡 = 1` so
/// single-edge multisets are still counted.
pub fn beta_star(ham: &Hamiltonian) -> f64 {
    let h = ham.max_term_norm();
    let d = ham.adjacency_degree().max(1) as f64;
    let denom = 2.0 * std::f64::consts::E.powi(2) * h * d * (d + 1.0);
    if denom > 0.0 {
        1.0 / denom
    } else {
        f64::INFINITY
    }
}

/// Enumeration limits; the hard cap aborts with a diagnostic instead of
/// exhausting memory.
#[derive(Debug, Clone, Copy)]
pub struct ClusterBudget {
    pub max_clusters: u64,
}

impl Default for ClusterBudget {
    fn default() -> Self {
        Self { max_clusters: 20_000_000 }
    }
}

/// All connected hyperedge sets of size `<= max_size`, as bitmasks, each
/// produced exactly once (ESU-style growth restricted to indices above the
/// seed).
fn connected_edge_sets(lattice: &Lattice, max_size: usize) -> Result<Vec<u64>, ClusterError> {
    let num_edges = lattice.num_edges();
    if num_edges > 64 {
        return Err(ClusterError::TooManyEdges(num_edges));
    }
    let adj_masks: Vec<u64> = (0..num_edges)
        .map(|e| lattice.edge_adjacency()[e].iter().fold(0u64, |m, &f| m | (1u64 << f)))
        .collect();
    let mut out = Vec::new();
    #[allow(clippy::too_many_arguments)]
    fn extend(
        sub: u64,
        size: usize,
        ext: u64,
        nbhd: u64,
        allowed: u64,
        adj: &[u64],
        max_size: usize,
        out: &mut Vec<u64>,
    ) {
        out.push(sub);
        if size == max_size {
            return;
        }
        let mut candidates = ext;
        let mut processed = 0u64;
        while candidates != 0 {
            let w = candidates & candidates.wrapping_neg();
            candidates ^= w;
            processed |= w;
            let wi = w.trailing_zeros() as usize;
            let fresh = adj[wi] & allowed & !(nbhd | sub | w);
            extend(
                sub | w,
                size + 1,
                (ext & !processed) | fresh,
                nbhd | adj[wi] | w,
                allowed,
                adj,
                max_size,
                out,
            );
        }
    }
    for seed in 0..num_edges {
        let seed_bit = 1u64 << seed;
        let allowed = !(seed_bit - 1); // edges >= seed
        let ext = adj_masks[seed] & allowed & !seed_bit;
        extend(
            seed_bit,
            1,
            ext,
            adj_masks[seed] | seed_bit,
            allowed,
            &adj_masks,
            max_size,
            &mut out,
        );
    }
    Ok(out)
}

fn compositions(total: usize, parts: usize) -> Vec<Vec<u32>> {
    // all (μ_1..μ_parts) >= 1 with Σ μ = total, lexicographic
    let mut out = Vec::new();
    if parts == 0 || total < parts {
        return out;
    }
    let mut current = vec![1u32; parts];
    fn rec(current: &mut Vec<u32>, idx: usize, remaining: usize, out: &mut Vec<Vec<u32>>) {
        if idx == current.len() - 1 {
            current[idx] = remaining as u32;
            out.push(current.clone());
            return;
        }
        let tail = current.len() - idx - 1;
        for m in 1..=(remaining - tail) {
            current[idx] = m as u32;
            rec(current, idx + 1, remaining - m, out);
        }
    }
    rec(&mut current, 0, total, &mut out);
    out
}

/// Every connected cluster of size `<= m_max`, streamed in canonical order
/// (lexicographic on the sorted `(edge, μ)` list) to `visit`.
pub fn visit_connected_clusters(
    ham: &Hamiltonian,
    m_max: usize,
    budget: ClusterBudget,
    mut visit: impl FnMut(&Cluster),
) -> Result<u64, ClusterError> {
    if m_max > MAX_ORDER {
        return Err(ClusterError::OrderCap { m: m_max, cap: MAX_ORDER });
    }
    let sets = connected_edge_sets(ham.lattice(), m_max)?;
    let mut count: u64 = 0;
    for &mask in &sets {
        let s = mask.count_ones() as usize;
        for m in s..=m_max {
            count += binomial(m - 1, s - 1);
        }
    }
    if count > budget.max_clusters {
        return Err(ClusterError::BudgetExceeded { count, cap: budget.max_clusters });
    }
    let mut clusters: Vec<Cluster> = Vec::with_capacity(count as usize);
    for &mask in &sets {
        let edges: Vec<usize> = (0..64).filter(|&b| mask & (1u64 << b) != 0).collect();
        for m in edges.len()..=m_max {
            for comp in compositions(m, edges.len()) {
                let cluster =
                    Cluster::new(edges.iter().cloned().zip(comp.iter().cloned()).collect())
                        .expect("nonempty by construction");
                clusters.push(cluster);
            }
        }
    }
    clusters.sort();
    for c in &clusters {
        visit(c);
    }
    Ok(count)
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// Collect variant of [`visit_connected_clusters`].
pub fn enumerate_connected_clusters(
    ham: &Hamiltonian,
    m_max: usize,
    budget: ClusterBudget,
) -> Result<Vec<Cluster>, ClusterError> {
    let mut out = Vec::new();
    visit_connected_clusters(ham, m_max, budget, |c| out.push(c.clone()))?;
    Ok(out)
}

type Multiset = Vec<(u32, u32)>;

/// Shared trace-moment and cluster-weight engine for one Hamiltonian.
///
/// `moment(α)` is the normalized trace `Tr[M_α]/d^{|supp α|}` of
/// `M_α = Σ_{sequences with content α} h_{w_1} ... h_{w_n}`; matrices are
/// memoized for connected-support multisets only, and disconnected ones
/// factorize through their components with a multinomial interleaving count.
pub struct ClusterEngine<'a> {
    ham: &'a Hamiltonian,
    moments: HashMap<Multiset, f64>,
    matrices: HashMap<Multiset, (Vec<usize>, CMat)>,
}

impl<'a> ClusterEngine<'a> {
    pub fn new(ham: &'a Hamiltonian) -> Self {
        Self { ham, moments: HashMap::new(), matrices: HashMap::new() }
    }

    fn support_of(&self, key: &[(u32, u32)]) -> Vec<usize> {
        let mut s: Vec<usize> = key
            .iter()
            .flat_map(|&(e, _)| self.ham.terms()[e as usize].support.iter().cloned())
            .collect();
        s.sort_unstable();
        s.dedup();
        s
    }

    fn term_embedded(&self, edge: usize, target: &[usize]) -> CMat {
        self.ham
            .term_operator(edge)
            .embedded(target)
            .expect("term support is inside the target by construction")
            .into_matrix()
    }

    /// `M_α` on `supp(α)`, via `M_α = Σ_i h_i · M_{α - e_i}`.
    fn matrix(&mut self, key: &Multiset) -> (Vec<usize>, CMat) {
        if key.is_empty() {
            return (Vec::new(), CMat::eye(1));
        }
        if let Some(hit) = self.matrices.get(key) {
            return hit.clone();
        }
        let distinct: Vec<usize> = key.iter().map(|&(e, _)| e as usize).collect();
        let comps = connected_components(&distinct, self.ham.lattice());
        let result = if comps.len() > 1 {
            // interleavings of independent components: multinomial count
            // times the commuting product of component matrices
            let support = self.support_of(key);
            let dim = self.ham.local_dim().pow(support.len() as u32);
            let mut prod = CMat::eye(dim);
            let mut multinomial = factorial(key.iter().map(|&(_, m)| m as usize).sum());
            for comp in &comps {
                let sub: Multiset = key
                    .iter()
                    .filter(|&&(e, _)| comp.contains(&(e as usize)))
                    .cloned()
                    .collect();
                multinomial /= factorial(sub.iter().map(|&(_, m)| m as usize).sum());
                let (sub_support, sub_m) = self.matrix(&sub);
                let emb = DenseOperator::new(
                    sub_m,
                    sub_support,
                    self.ham.local_dim(),
                    self.ham.num_sites(),
                )
                .expect("component matrix is well-formed")
                .embedded(&support)
                .expect("component support inside union")
                .into_matrix();
                prod = prod.dot(&emb);
            }
            (support, prod * num_complex::Complex64::new(multinomial, 0.0))
        } else {
            let support = self.support_of(key);
            let dim = self.ham.local_dim().pow(support.len() as u32);
            let mut acc = CMat::zeros((dim, dim));
            for idx in 0..key.len() {
                let (e, m) = key[idx];
                let mut reduced = key.clone();
                if m == 1 {
                    reduced.remove(idx);
                } else {
                    reduced[idx] = (e, m - 1);
                }
                let (sub_support, sub_m) = self.matrix(&reduced);
                let emb = DenseOperator::new(
                    sub_m,
                    sub_support,
                    self.ham.local_dim(),
                    self.ham.num_sites(),
                )
                .expect("reduced matrix is well-formed")
                .embedded(&support)
                .expect("reduced support inside union")
                .into_matrix();
                let h_e = self.term_embedded(e as usize, &support);
                acc += &h_e.dot(&emb);
            }
            (support, acc)
        };
        if comps.len() <= 1 {
            self.matrices.insert(key.clone(), result.clone());
        }
        result
    }

    /// Normalized trace moment `S_α`.
    pub fn moment(&mut self, key: &Multiset) -> f64 {
        if key.is_empty() {
            return 1.0;
        }
        if let Some(&hit) = self.moments.get(key) {
            return hit;
        }
        let distinct: Vec<usize> = key.iter().map(|&(e, _)| e as usize).collect();
        let comps = connected_components(&distinct, self.ham.lattice());
        let value = if comps.len() > 1 {
            let mut multinomial = factorial(key.iter().map(|&(_, m)| m as usize).sum());
            let mut prod = 1.0;
            for comp in &comps {
                let sub: Multiset = key
                    .iter()
                    .filter(|&&(e, _)| comp.contains(&(e as usize)))
                    .cloned()
                    .collect();
                multinomial /= factorial(sub.iter().map(|&(_, m)| m as usize).sum());
                prod *= self.moment(&sub);
            }
            multinomial * prod
        } else {
            let (support, m) = self.matrix(key);
            let dim = self.ham.local_dim().pow(support.len() as u32) as f64;
            linalg::trace(&m).re / dim
        };
        self.moments.insert(key.clone(), value);
        value
    }

    /// The cluster's contribution at inverse temperature `beta`: the `λ^μ`
    /// monomial coefficient of `log Tr[e^{-β H(λ)}]`, with the `1/∏ μ_i!`
    /// normalization included. Scales exactly as `β^{|W|}`.
    pub fn cluster_weight(&mut self, beta: f64, cluster: &Cluster) -> Result<f64, ClusterError> {
        let m_total = cluster.size();
        if m_total > MAX_ORDER {
            return Err(ClusterError::OrderCap { m: m_total, cap: MAX_ORDER });
        }
        for &(e, _) in cluster.edges() {
            if e >= self.ham.terms().len() {
                return Err(ClusterError::EdgeOutOfRange {
                    edge: e,
                    num_edges: self.ham.terms().len(),
                });
            }
        }
        if beta == 0.0 {
            return Ok(0.0);
        }
        let mu: Vec<u32> = cluster.edges().iter().map(|&(_, m)| m).collect();
        let edges: Vec<u32> = cluster.edges().iter().map(|&(e, _)| e as u32).collect();
        let radix: Vec<usize> = mu.iter().map(|&m| m as usize + 1).collect();
        let total: usize = radix.iter().product();
        // f[idx]: monomial coefficients of the normalized trace, indexed by
        // the mixed-radix encoding of α <= μ
        let mut f = vec![0.0f64; total];
        let mut g = vec![0.0f64; total];
        f[0] = 1.0;
        for idx in 1..total {
            let alpha = decode(idx, &radix);
            let n: usize = alpha.iter().map(|&a| a as usize).sum();
            let key: Multiset = edges
                .iter()
                .zip(&alpha)
                .filter(|&(_, &a)| a > 0)
                .map(|(&e, &a)| (e, a))
                .collect();
            let s = self.moment(&key);
            f[idx] = (-beta).powi(n as i32) / factorial(n) * s;
        }
        // log composition: for the first coordinate i with α_i >= 1,
        //   g_α = f_α - (1/α_i) Σ_{γ<=α, γ_i>=1, γ≠α} γ_i g_γ f_{α-γ}
        for idx in 1..total {
            let alpha = decode(idx, &radix);
            let i = alpha.iter().position(|&a| a > 0).expect("nonzero");
            let mut acc = 0.0;
            for gamma_idx in 1..idx {
                let gamma = decode(gamma_idx, &radix);
                if gamma[i] == 0 || gamma.iter().zip(&alpha).any(|(&gk, &ak)| gk > ak) {
                    continue;
                }
                let diff: Vec<u32> =
                    alpha.iter().zip(&gamma).map(|(&ak, &gk)| ak - gk).collect();
                let diff_idx = encode(&diff, &radix);
                acc += gamma[i] as f64 * g[gamma_idx] * f[diff_idx];
            }
            g[idx] = f[idx] - acc / alpha[i] as f64;
        }
        Ok(g[total - 1])
    }
}

fn decode(mut idx: usize, radix: &[usize]) -> Vec<u32> {
    let mut out = vec![0u32; radix.len()];
    for (i, &r) in radix.iter().enumerate().rev() {
        out[i] = (idx % r) as u32;
        idx /= r;
    }
    out
}

fn encode(alpha: &[u32], radix: &[usize]) -> usize {
    let mut idx = 0usize;
    for (a, r) in alpha.iter().zip(radix) {
        idx = idx * r + *a as usize;
    }
    idx
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// The cluster derivative of `log Tr e^{-βH(λ)}` for one cluster, in the
/// module's Taylor normalization. Disconnected clusters are evaluated
/// honestly (the result should vanish; that is a theorem, not a shortcut).
pub fn cluster_derivative(
    ham: &Hamiltonian,
    beta: f64,
    cluster: &Cluster,
) -> Result<f64, ClusterError> {
    ClusterEngine::new(ham).cluster_weight(beta, cluster)
}

/// Truncated cluster series for `log Z` with its convergence certificate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeriesResult {
    pub beta: f64,
    pub beta_star: f64,
    #[serde(rename = "M")]
    pub m_max: usize,
    /// `K_0 .. K_M`; `K_0 = N log d`
    #[serde(rename = "K")]
    pub coefficients: Vec<f64>,
    #[serde(rename = "logZ")]
    pub log_z_estimate: f64,
    #[serde(rename = "bound")]
    pub error_bound: f64,
    /// per-order diagnostic `|K_m| <= N m! / β*^m` (reported, not assumed)
    pub moment_bound_ok: Vec<bool>,
    pub cluster_counts: Vec<u64>,
}

/// `log Z` by the truncated cluster expansion at order `M`.
pub fn log_partition_series(
    ham: &Hamiltonian,
    beta: f64,
    m_max: usize,
    budget: ClusterBudget,
) -> Result<SeriesResult, ClusterError> {
    let bstar = beta_star(ham);
    if beta >= bstar || beta < 0.0 {
        return Err(ClusterError::BetaOutOfRange { beta, beta_star: bstar });
    }
    let n = ham.num_sites() as f64;
    let log_d = (ham.local_dim() as f64).ln();
    let mut coefficients = vec![0.0f64; m_max + 1];
    coefficients[0] = n * log_d;
    let mut cluster_counts = vec![0u64; m_max + 1];
    // K_m is β-independent; extract it at a well-conditioned reference β
    let beta_ref = if bstar.is_finite() {
        0.5 * bstar
    } else {
        1.0f64.min(ham.max_term_norm().max(1e-3).recip())
    };
    let mut engine = ClusterEngine::new(ham);
    if m_max >= 1 {
        let mut clusters: Vec<Cluster> = Vec::new();
        visit_connected_clusters(ham, m_max, budget, |c| clusters.push(c.clone()))?;
        // canonical-order final summation keeps K_m deterministic
        for c in &clusters {
            let w = engine.cluster_weight(beta_ref, c)?;
            let m = c.size();
            cluster_counts[m] += 1;
            coefficients[m] += w * factorial(m) / beta_ref.powi(m as i32);
        }
    }
    let log_z_estimate: f64 = coefficients
        .iter()
        .enumerate()
        .map(|(m, k)| beta.powi(m as i32) * k / factorial(m))
        .sum();
    let r = if bstar.is_finite() { beta / bstar } else { 0.0 };
    let error_bound = if r > 0.0 { n * r.powi(m_max as i32 + 1) / (1.0 - r) } else { 0.0 };
    let moment_bound_ok = coefficients
        .iter()
        .enumerate()
        .map(|(m, k)| {
            if m == 0 || !bstar.is_finite() {
                true
            } else {
                k.abs() <= n * factorial(m) / bstar.powi(m as i32) + 1e-9
            }
        })
        .collect();
    Ok(SeriesResult {
        beta,
        beta_star: bstar,
        m_max,
        coefficients,
        log_z_estimate,
        error_bound,
        moment_bound_ok,
        cluster_counts,
    })
}

/// Cluster estimate of `<h_i>_β` with its tail bound, via clusters forced to
/// contain an auxiliary copy of term `i` exactly once.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalExpectation {
    pub value: f64,
    pub error_bound: f64,
    pub m_max: usize,
    pub beta_star_augmented: f64,
}

pub fn local_expectation_series(
    ham: &Hamiltonian,
    beta: f64,
    term_index: usize,
    m_max: usize,
    budget: ClusterBudget,
) -> Result<LocalExpectation, ClusterError> {
    if term_index >= ham.terms().len() {
        return Err(ClusterError::EdgeOutOfRange {
            edge: term_index,
            num_edges: ham.terms().len(),
        });
    }
    // augmented model: one extra hyperedge duplicating the observable term
    let lattice = ham.lattice();
    let mut edges: Vec<Vec<usize>> = lattice.hyperedges().to_vec();
    edges.push(ham.terms()[term_index].support.clone());
    let mut mats: Vec<CMat> = ham.terms().iter().map(|t| t.matrix.clone()).collect();
    mats.push(ham.terms()[term_index].matrix.clone());
    let aug = Hamiltonian::new(
        Lattice::new(lattice.num_vertices(), lattice.local_dim(), edges)?,
        mats,
    )?;
    let aux = aug.terms().len() - 1;
    let bstar = beta_star(&aug);
    if beta >= bstar || beta < 0.0 {
        return Err(ClusterError::BetaOutOfRange { beta, beta_star: bstar });
    }
    if beta == 0.0 {
        // <h_i> at infinite temperature is the normalized trace
        let t = &ham.terms()[term_index];
        let dim = ham.local_dim().pow(t.support.len() as u32) as f64;
        return Ok(LocalExpectation {
            value: linalg::trace(&t.matrix).re / dim,
            error_bound: 0.0,
            m_max,
            beta_star_augmented: bstar,
        });
    }
    let mut engine = ClusterEngine::new(&aug);
    let mut aux_clusters: Vec<Cluster> = Vec::new();
    visit_connected_clusters(&aug, m_max + 1, budget, |c| {
        if c.multiplicity(aux) == 1 {
            aux_clusters.push(c.clone());
        }
    })?;
    let mut sum = 0.0;
    for c in &aux_clusters {
        sum += engine.cluster_weight(beta, c)?;
    }
    let value = -sum / beta;
    let r = beta / bstar;
    let n = aug.num_sites() as f64;
    let error_bound = n * r.powi(m_max as i32 + 2) / ((1.0 - r) * beta);
    Ok(LocalExpectation { value, error_bound, m_max, beta_star_augmented: bstar })
}

/// The order at which clusters first connect two hyperedges: the smallest
/// connected cluster containing both, which controls the leading power of
/// the connected two-point correlator.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelatorOrder {
    pub order: usize,
    /// every smaller cluster containing both edges was verified disconnected
    pub verified: bool,
}

pub fn correlator_order_bound(
    ham: &Hamiltonian,
    edge_i: usize,
    edge_j: usize,
) -> Result<CorrelatorOrder, ClusterError> {
    let num_edges = ham.terms().len();
    for e in [edge_i, edge_j] {
        if e >= num_edges {
            return Err(ClusterError::EdgeOutOfRange { edge: e, num_edges });
        }
    }
    if edge_i == edge_j {
        return Err(ClusterError::SameEdge);
    }
    let graph_dist = ham
        .lattice()
        .edge_graph_distance(edge_i, edge_j)
        .ok_or(ClusterError::Disconnected)?;
    let order = graph_dist + 1;
    // no connected cluster of size < order may contain both edges
    let mut verified = true;
    if order >= 2 {
        visit_connected_clusters(ham, order - 1, ClusterBudget::default(), |c| {
            if c.contains_edge(edge_i) && c.contains_edge(edge_j) {
                verified = false;
            }
        })?;
    }
    Ok(CorrelatorOrder { order, verified })
}
