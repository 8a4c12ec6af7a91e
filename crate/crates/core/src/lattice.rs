//! Interaction hypergraph, local terms, and lattice geometry.
//!
//! The lattice is a hypergraph `Λ = {V, E}`: `N` sites of local dimension
//! `d`, with hyperedges of size at most `k`. A Hamiltonian binds one
//! Hermitian matrix to each hyperedge, in the big-endian ordering of the
//! sorted support (see [`crate::operator`]).
//!
//! Distances are measured in the hyperedge-overlap metric: `dist(A, B)` is
//! the smallest number of hyperedges in a chain `e_1, ..., e_n` with
//! `e_1 ∩ A ≠ ∅`, `e_n ∩ B ≠ ∅` and consecutive edges overlapping. On a
//! nearest-neighbour chain this reduces to `dist({i},{j}) = |i - j|`.

use crate::linalg::{self, CMat};
use crate::operator::{self, DenseOperator};
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

pub const HERMITICITY_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("hyperedge {index} is empty")]
    EmptyEdge { index: usize },
    #[error("vertex index {vertex} out of range (N = {n})")]
    VertexOutOfRange { vertex: usize, n: usize },
    #[error("hyperedge {index} has repeated vertices")]
    RepeatedVertex { index: usize },
    #[error("local dimension must be >= 2, got {0}")]
    BadLocalDim(usize),
    #[error("term {index} is not Hermitian (defect {defect:.3e} > {tol:.0e})")]
    NonHermitianTerm { index: usize, defect: f64, tol: f64 },
    #[error("term {index}: matrix dimension {dim}, expected {expected}")]
    TermDimension { index: usize, dim: usize, expected: usize },
    #[error("regions must be disjoint but overlap at vertex {vertex}")]
    RegionsOverlap { vertex: usize },
    #[error("region is empty")]
    EmptyRegion,
    #[error("regions are not connected through the hypergraph")]
    Disconnected,
    #[error("unknown model parameter: {0}")]
    BadModelParameter(String),
    #[error(transparent)]
    Operator(#[from] operator::OperatorError),
}

/// Sorted, duplicate-free set of vertex indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Region(Vec<usize>);

impl Region {
    pub fn new(mut vertices: Vec<usize>) -> Self {
        vertices.sort_unstable();
        vertices.dedup();
        Region(vertices)
    }

    pub fn vertices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, v: usize) -> bool {
        self.0.binary_search(&v).is_ok()
    }

    pub fn complement(&self, n: usize) -> Region {
        Region((0..n).filter(|v| !self.contains(*v)).collect())
    }

    pub fn union(&self, other: &Region) -> Region {
        Region::new(self.0.iter().chain(other.0.iter()).cloned().collect())
    }

    pub fn intersects(&self, other: &Region) -> bool {
        self.0.iter().any(|&v| other.contains(v))
    }
}

impl From<std::ops::Range<usize>> for Region {
    fn from(r: std::ops::Range<usize>) -> Self {
        Region(r.collect())
    }
}

/// The interaction hypergraph.
#[derive(Debug, Clone)]
pub struct Lattice {
    num_vertices: usize,
    local_dim: usize,
    hyperedges: Vec<Vec<usize>>,
    max_edge_size: usize,
    /// max number of hyperedges adjacent to any single hyperedge
    /// (sharing a vertex, self excluded)
    adjacency_degree: usize,
    edge_adjacency: Vec<Vec<usize>>,
    incident_edges: Vec<Vec<usize>>,
}

impl Lattice {
    pub fn new(
        num_vertices: usize,
        local_dim: usize,
        hyperedges: Vec<Vec<usize>>,
    ) -> Result<Self, LatticeError> {
        if local_dim < 2 {
            return Err(LatticeError::BadLocalDim(local_dim));
        }
        let mut edges = Vec::with_capacity(hyperedges.len());
        for (index, e) in hyperedges.into_iter().enumerate() {
            if e.is_empty() {
                return Err(LatticeError::EmptyEdge { index });
            }
            let mut s = e;
            s.sort_unstable();
            if s.windows(2).any(|w| w[0] == w[1]) {
                return Err(LatticeError::RepeatedVertex { index });
            }
            if let Some(&v) = s.iter().find(|&&v| v >= num_vertices) {
                return Err(LatticeError::VertexOutOfRange { vertex: v, n: num_vertices });
            }
            edges.push(s);
        }
        let max_edge_size = edges.iter().map(Vec::len).max().unwrap_or(0);
        let mut incident_edges = vec![Vec::new(); num_vertices];
        for (i, e) in edges.iter().enumerate() {
            for &v in e {
                incident_edges[v].push(i);
            }
        }
        let mut edge_adjacency = vec![Vec::new(); edges.len()];
        for (i, e) in edges.iter().enumerate() {
            let mut adj: Vec<usize> =
                e.iter().flat_map(|&v| incident_edges[v].iter().cloned()).collect();
            adj.sort_unstable();
            adj.dedup();
            adj.retain(|&j| j != i);
            edge_adjacency[i] = adj;
        }
        let adjacency_degree = edge_adjacency.iter().map(Vec::len).max().unwrap_or(0);
        Ok(Self {
            num_vertices,
            local_dim,
            hyperedges: edges,
            max_edge_size,
            adjacency_degree,
            edge_adjacency,
            incident_edges,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    pub fn hyperedges(&self) -> &[Vec<usize>] {
        &self.hyperedges
    }

    pub fn num_edges(&self) -> usize {
        self.hyperedges.len()
    }

    /// `k`: the maximum hyperedge size.
    pub fn max_edge_size(&self) -> usize {
        self.max_edge_size
    }

    /// `𝔡`: the maximum number of hyperedges adjacent to any hyperedge.
    /// An edge is not counted as adjacent to itself.
    pub fn adjacency_degree(&self) -> usize {
        self.adjacency_degree
    }

    pub fn edge_adjacency(&self) -> &[Vec<usize>] {
        &self.edge_adjacency
    }

    pub fn incident_edges(&self, v: usize) -> &[usize] {
        &self.incident_edges[v]
    }

    /// BFS distance in the edge-overlap graph; `None` when disconnected.
    pub fn edge_graph_distance(&self, i: usize, j: usize) -> Option<usize> {
        if i == j {
            return Some(0);
        }
        let mut dist = vec![usize::MAX; self.hyperedges.len()];
        let mut queue = VecDeque::new();
        dist[i] = 0;
        queue.push_back(i);
        while let Some(e) = queue.pop_front() {
            for &f in &self.edge_adjacency[e] {
                if dist[f] == usize::MAX {
                    dist[f] = dist[e] + 1;
                    if f == j {
                        return Some(dist[f]);
                    }
                    queue.push_back(f);
                }
            }
        }
        None
    }

    /// For every vertex, the minimum number of hyperedges in a chain from
    /// `from` to that vertex (0 inside `from`, `None` if unreachable).
    pub fn vertex_distances_from(&self, from: &Region) -> Vec<Option<usize>> {
        let mut vdist: Vec<Option<usize>> = vec![None; self.num_vertices];
        for &v in from.vertices() {
            vdist[v] = Some(0);
        }
        let mut edist: Vec<Option<usize>> = vec![None; self.hyperedges.len()];
        let mut queue = VecDeque::new();
        for &v in from.vertices() {
            for &e in &self.incident_edges[v] {
                if edist[e].is_none() {
                    edist[e] = Some(1);
                    queue.push_back(e);
                }
            }
        }
        while let Some(e) = queue.pop_front() {
            let de = edist[e].unwrap();
            for &v in &self.hyperedges[e] {
                if vdist[v].is_none() || vdist[v].unwrap() > de {
                    vdist[v] = Some(de.min(vdist[v].unwrap_or(usize::MAX)));
                }
            }
            for &f in &self.edge_adjacency[e] {
                if edist[f].is_none() {
                    edist[f] = Some(de + 1);
                    queue.push_back(f);
                }
            }
        }
        vdist
    }
}

/// One Hermitian interaction term bound to a hyperedge.
#[derive(Debug, Clone)]
pub struct LocalTerm {
    pub edge_index: usize,
    pub support: Vec<usize>,
    pub matrix: CMat,
    pub norm: f64,
}

/// A local Hamiltonian: lattice plus terms, with the derived parameters
/// `h = max_i ||h_i||`, `J = max_x Σ_{i: x ∈ supp h_i} ||h_i||`, `k`, `𝔡`.
#[derive(Debug, Clone)]
pub struct Hamiltonian {
    lattice: Lattice,
    terms: Vec<LocalTerm>,
    max_term_norm: f64,
    vertex_strength: f64,
}

impl Hamiltonian {
    pub fn new(lattice: Lattice, term_matrices: Vec<CMat>) -> Result<Self, LatticeError> {
        if term_matrices.len() != lattice.num_edges() {
            return Err(LatticeError::BadModelParameter(format!(
                "{} matrices for {} hyperedges",
                term_matrices.len(),
                lattice.num_edges()
            )));
        }
        let mut terms = Vec::with_capacity(term_matrices.len());
        for (index, matrix) in term_matrices.into_iter().enumerate() {
            let support = lattice.hyperedges()[index].clone();
            let expected = lattice.local_dim().pow(support.len() as u32);
            if matrix.nrows() != expected || matrix.ncols() != expected {
                return Err(LatticeError::TermDimension {
                    index,
                    dim: matrix.nrows(),
                    expected,
                });
            }
            let defect = linalg::hermiticity_defect(&matrix);
            if defect > HERMITICITY_TOL {
                return Err(LatticeError::NonHermitianTerm {
                    index,
                    defect,
                    tol: HERMITICITY_TOL,
                });
            }
            // norm by dense decomposition: supports are tiny
            let norm = linalg::op_norm(&matrix);
            terms.push(LocalTerm { edge_index: index, support, matrix, norm });
        }
        let (max_term_norm, vertex_strength) = derived_strengths(&lattice, &terms);
        Ok(Self { lattice, terms, max_term_norm, vertex_strength })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn terms(&self) -> &[LocalTerm] {
        &self.terms
    }

    pub fn num_sites(&self) -> usize {
        self.lattice.num_vertices()
    }

    pub fn local_dim(&self) -> usize {
        self.lattice.local_dim()
    }

    pub fn full_dim(&self) -> usize {
        self.local_dim().pow(self.num_sites() as u32)
    }

    /// `h`: largest term operator norm.
    pub fn max_term_norm(&self) -> f64 {
        self.max_term_norm
    }

    /// `J`: largest per-vertex summed term norm.
    pub fn vertex_strength(&self) -> f64 {
        self.vertex_strength
    }

    pub fn max_edge_size(&self) -> usize {
        self.lattice.max_edge_size()
    }

    pub fn adjacency_degree(&self) -> usize {
        self.lattice.adjacency_degree()
    }

    /// Recompute `(h, J)` from scratch; used by the idempotence invariant.
    pub fn recompute_strengths(&self) -> (f64, f64) {
        derived_strengths(&self.lattice, &self.terms)
    }

    pub fn term_operator(&self, index: usize) -> DenseOperator {
        DenseOperator::new(
            self.terms[index].matrix.clone(),
            self.terms[index].support.clone(),
            self.local_dim(),
            self.num_sites(),
        )
        .expect("term is valid by construction")
    }

    /// Assemble the dense matrix of the full Hamiltonian.
    pub fn assemble_full(&self) -> CMat {
        self.assemble_terms((0..self.terms.len()).collect::<Vec<_>>().as_slice())
    }

    /// Assemble the dense full-space matrix of a subset of terms.
    pub fn assemble_terms(&self, indices: &[usize]) -> CMat {
        let dim = self.full_dim();
        let mut out = CMat::zeros((dim, dim));
        let all: Vec<usize> = (0..self.num_sites()).collect();
        for &i in indices {
            let emb = self.term_operator(i).embedded(&all).expect("embedding");
            out += emb.matrix();
        }
        out
    }

    /// Hyperedge-overlap distance between two disjoint regions.
    pub fn distance(&self, a: &Region, b: &Region) -> Result<usize, LatticeError> {
        if a.is_empty() || b.is_empty() {
            return Err(LatticeError::EmptyRegion);
        }
        if let Some(&v) = a.vertices().iter().find(|&&v| b.contains(v)) {
            return Err(LatticeError::RegionsOverlap { vertex: v });
        }
        let dists = self.lattice.vertex_distances_from(a);
        b.vertices()
            .iter()
            .filter_map(|&v| dists[v])
            .min()
            .ok_or(LatticeError::Disconnected)
    }

    /// `∂A`: vertices of `A` touched by a hyperedge that also touches the
    /// complement.
    pub fn boundary(&self, a: &Region) -> Region {
        let mut out = Vec::new();
        for &v in a.vertices() {
            let crossing = self.lattice.incident_edges(v).iter().any(|&e| {
                self.lattice.hyperedges()[e].iter().any(|&w| !a.contains(w))
            });
            if crossing {
                out.push(v);
            }
        }
        Region::new(out)
    }

    /// Terms with support intersecting both regions, and the operator norm
    /// of their sum computed on the joint support.
    pub fn interaction_between(
        &self,
        a: &Region,
        b: &Region,
    ) -> Result<(Vec<usize>, f64), LatticeError> {
        if let Some(&v) = a.vertices().iter().find(|&&v| b.contains(v)) {
            return Err(LatticeError::RegionsOverlap { vertex: v });
        }
        let crossing: Vec<usize> = (0..self.terms.len())
            .filter(|&i| {
                let s = &self.terms[i].support;
                s.iter().any(|&v| a.contains(v)) && s.iter().any(|&v| b.contains(v))
            })
            .collect();
        if crossing.is_empty() {
            return Ok((crossing, 0.0));
        }
        let mut joint: Vec<usize> =
            crossing.iter().flat_map(|&i| self.terms[i].support.iter().cloned()).collect();
        joint.sort_unstable();
        joint.dedup();
        let mut sum = CMat::zeros((
            self.local_dim().pow(joint.len() as u32),
            self.local_dim().pow(joint.len() as u32),
        ));
        for &i in &crossing {
            sum += self.term_operator(i).embedded(&joint)?.matrix();
        }
        Ok((crossing, linalg::op_norm(&sum)))
    }

    /// Indices of terms whose support lies inside `region`.
    pub fn terms_supported_in(&self, region: &Region) -> Vec<usize> {
        (0..self.terms.len())
            .filter(|&i| self.terms[i].support.iter().all(|&v| region.contains(v)))
            .collect()
    }

    /// Indices of terms within hyperedge-overlap distance `l` of `from`
    /// (distance 0 means the supports overlap).
    pub fn terms_within_distance(&self, from: &Region, l: usize) -> Vec<usize> {
        let dists = self.lattice.vertex_distances_from(from);
        (0..self.terms.len())
            .filter(|&i| {
                self.terms[i]
                    .support
                    .iter()
                    .filter_map(|&v| dists[v])
                    .min()
                    .is_some_and(|d| d <= l)
            })
            .collect()
    }

    /// Restriction to `region`, re-indexed to sites `0..|region|`, keeping
    /// only the terms fully supported inside. Returns the sub-Hamiltonian
    /// and the map from new site index to original vertex.
    pub fn sub_hamiltonian(&self, region: &Region) -> Result<(Hamiltonian, Vec<usize>), LatticeError> {
        let site_map: Vec<usize> = region.vertices().to_vec();
        let inverse: std::collections::HashMap<usize, usize> =
            site_map.iter().enumerate().map(|(new, &old)| (old, new)).collect();
        let term_ids = self.terms_supported_in(region);
        let mut edges = Vec::with_capacity(term_ids.len());
        let mut mats = Vec::with_capacity(term_ids.len());
        for &i in &term_ids {
            edges.push(self.terms[i].support.iter().map(|v| inverse[v]).collect());
            mats.push(self.terms[i].matrix.clone());
        }
        let lattice = Lattice::new(site_map.len(), self.local_dim(), edges)?;
        Ok((Hamiltonian::new(lattice, mats)?, site_map))
    }

    /// Max pairwise commutator norm over all term pairs with overlapping
    /// support; zero for a commuting model.
    pub fn max_pairwise_commutator(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.terms.len() {
            for j in (i + 1)..self.terms.len() {
                let si = &self.terms[i].support;
                let sj = &self.terms[j].support;
                if !si.iter().any(|v| sj.contains(v)) {
                    continue;
                }
                let a = self.term_operator(i);
                let b = self.term_operator(j);
                let ab = a.compose(&b).expect("compose");
                let ba = b.compose(&a).expect("compose");
                worst = worst.max(linalg::op_norm(&(ab.matrix() - ba.matrix())));
            }
        }
        worst
    }
}

fn derived_strengths(lattice: &Lattice, terms: &[LocalTerm]) -> (f64, f64) {
    let h = terms.iter().map(|t| t.norm).fold(0.0f64, f64::max);
    let mut per_vertex = vec![0.0f64; lattice.num_vertices()];
    for t in terms {
        for &v in &t.support {
            per_vertex[v] += t.norm;
        }
    }
    let j = per_vertex.into_iter().fold(0.0f64, f64::max);
    (h, j)
}

// ---------------------------------------------------------------------------
// Model specifications
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Open,
    Periodic,
}

/// JSON-facing model description.
///
/// ```json
/// {"model": "tfim_chain", "N": 10, "J": 1.0, "Delta": 0.5, "boundary": "open"}
/// {"model": "custom", "d": 2, "terms": [{"support": [0,1], "matrix_re": [[...]], "matrix_im": [[...]]}]}
/// ```
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", deny_unknown_fields)]
pub enum ModelSpec {
    /// `Σ_j (J σ^X_j σ^X_{j+1} + Δ σ^Z_j)` with the boundary field folded
    /// into the last bond (open chains); `J = 0` degenerates to independent
    /// single-site fields.
    #[serde(rename = "tfim_chain")]
    TfimChain {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "J")]
        j: f64,
        #[serde(rename = "Delta")]
        delta: f64,
        #[serde(default)]
        boundary: Boundary,
    },
    /// `J Σ_j (σ^X σ^X + σ^Y σ^Y + σ^Z σ^Z)` on a chain.
    #[serde(rename = "heisenberg_chain")]
    HeisenbergChain {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "J")]
        j: f64,
        #[serde(default)]
        boundary: Boundary,
    },
    /// Transverse-field Ising on an `Lx × Ly` open grid; fields are their own
    /// single-site hyperedges.
    #[serde(rename = "tfim_grid")]
    TfimGrid {
        #[serde(rename = "Lx")]
        lx: usize,
        #[serde(rename = "Ly")]
        ly: usize,
        #[serde(rename = "J")]
        j: f64,
        #[serde(rename = "Delta")]
        delta: f64,
    },
    /// `Σ_j (J σ^Z_j σ^Z_{j+1} + g σ^Z_j)`, all terms diagonal and commuting.
    #[serde(rename = "classical_ising")]
    ClassicalIsing {
        #[serde(rename = "N")]
        n: usize,
        #[serde(rename = "J")]
        j: f64,
        #[serde(default, rename = "g")]
        g: f64,
        #[serde(default)]
        boundary: Boundary,
    },
    #[serde(rename = "custom")]
    Custom {
        d: usize,
        #[serde(rename = "N", default, skip_serializing_if = "Option::is_none")]
        n: Option<usize>,
        terms: Vec<CustomTerm>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CustomTerm {
    pub support: Vec<usize>,
    /// Row-major real part, dimension `d^|support|`.
    pub matrix_re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix_im: Option<Vec<Vec<f64>>>,
}

/// Build a Hamiltonian from a model description.
pub fn build_model(spec: &ModelSpec) -> Result<Hamiltonian, LatticeError> {
    match spec {
        ModelSpec::TfimChain { n, j, delta, boundary } => {
            chain_with_folded_field(*n, *boundary, *j, operator::pauli_x(), *delta)
        }
        ModelSpec::ClassicalIsing { n, j, g, boundary } => {
            chain_with_folded_field(*n, *boundary, *j, operator::pauli_z(), *g)
        }
        ModelSpec::HeisenbergChain { n, j, boundary } => {
            let n = *n;
            let bond = {
                let xx = operator::kron(&operator::pauli_x(), &operator::pauli_x());
                let yy = operator::kron(&operator::pauli_y(), &operator::pauli_y());
                let zz = operator::kron(&operator::pauli_z(), &operator::pauli_z());
                (xx + yy + zz).mapv(|z| z * C64::new(*j, 0.0))
            };
            let mut edges = Vec::new();
            let mut mats = Vec::new();
            let bonds = chain_bonds(n, *boundary);
            for (a, b) in bonds {
                edges.push(vec![a, b]);
                mats.push(bond.clone());
            }
            Hamiltonian::new(Lattice::new(n, 2, edges)?, mats)
        }
        ModelSpec::TfimGrid { lx, ly, j, delta } => {
            let (lx, ly) = (*lx, *ly);
            let n = lx * ly;
            let idx = |r: usize, c: usize| r * lx + c;
            let mut edges = Vec::new();
            let mut mats = Vec::new();
            let xx = operator::kron(&operator::pauli_x(), &operator::pauli_x())
                .mapv(|z| z * C64::new(*j, 0.0));
            if *j != 0.0 {
                for r in 0..ly {
                    for c in 0..lx {
                        if c + 1 < lx {
                            edges.push(vec![idx(r, c), idx(r, c + 1)]);
                            mats.push(xx.clone());
                        }
                        if r + 1 < ly {
                            edges.push(vec![idx(r, c), idx(r + 1, c)]);
                            mats.push(xx.clone());
                        }
                    }
                }
            }
            if *delta != 0.0 {
                for v in 0..n {
                    edges.push(vec![v]);
                    mats.push(operator::pauli_z().mapv(|z| z * C64::new(*delta, 0.0)));
                }
            }
            Hamiltonian::new(Lattice::new(n, 2, edges)?, mats)
        }
        ModelSpec::Custom { d, n, terms } => {
            let inferred_n = terms
                .iter()
                .flat_map(|t| t.support.iter().cloned())
                .max()
                .map(|m| m + 1)
                .unwrap_or(0);
            let n = n.unwrap_or(inferred_n).max(inferred_n);
            let mut edges = Vec::new();
            let mut mats = Vec::new();
            for t in terms {
                edges.push(t.support.clone());
                let dim = d.pow(t.support.len() as u32);
                let mut m = CMat::zeros((dim, dim));
                if t.matrix_re.len() != dim
                    || t.matrix_re.iter().any(|row| row.len() != dim)
                {
                    return Err(LatticeError::BadModelParameter(format!(
                        "custom term matrix is not {dim}x{dim}"
                    )));
                }
                if let Some(im) = &t.matrix_im {
                    if im.len() != dim || im.iter().any(|row| row.len() != dim) {
                        return Err(LatticeError::BadModelParameter(format!(
                            "custom term imaginary part is not {dim}x{dim}"
                        )));
                    }
                }
                for r in 0..dim {
                    for c in 0..dim {
                        let re = t.matrix_re[r][c];
                        let im = t.matrix_im.as_ref().map(|m| m[r][c]).unwrap_or(0.0);
                        m[(r, c)] = C64::new(re, im);
                    }
                }
                mats.push(m);
            }
            Hamiltonian::new(Lattice::new(n, *d, edges)?, mats)
        }
    }
}

fn chain_bonds(n: usize, boundary: Boundary) -> Vec<(usize, usize)> {
    let mut bonds: Vec<(usize, usize)> = (0..n.saturating_sub(1)).map(|i| (i, i + 1)).collect();
    if boundary == Boundary::Periodic && n > 2 {
        bonds.push((0, n - 1));
    }
    bonds
}

/// Shared construction for tfim_chain / classical_ising: bond operator
/// `J P ⊗ P` plus the field `g σ^Z` folded onto the bond's left site, with
/// the right-boundary field folded into the last open bond.
fn chain_with_folded_field(
    n: usize,
    boundary: Boundary,
    j: f64,
    bond_pauli: CMat,
    field: f64,
) -> Result<Hamiltonian, LatticeError> {
    let z = operator::pauli_z();
    let id = operator::identity2();
    if j == 0.0 {
        // non-interacting: single-site field edges only
        let mut edges = Vec::new();
        let mut mats = Vec::new();
        if field != 0.0 {
            for v in 0..n {
                edges.push(vec![v]);
                mats.push(z.mapv(|zz| zz * C64::new(field, 0.0)));
            }
        }
        return Hamiltonian::new(Lattice::new(n, 2, edges)?, mats);
    }
    let bond = operator::kron(&bond_pauli, &bond_pauli).mapv(|zz| zz * C64::new(j, 0.0));
    let z_left = operator::kron(&z, &id);
    let z_right = operator::kron(&id, &z);
    let bonds = chain_bonds(n, boundary);
    let mut edges = Vec::new();
    let mut mats = Vec::new();
    for (i, (a, b)) in bonds.iter().enumerate() {
        let mut m = bond.clone();
        if field != 0.0 {
            match boundary {
                Boundary::Periodic => {
                    // fold each site's field into the one bond whose sorted
                    // support has it in a designated slot: bond (i, i+1)
                    // carries site i; the wrap bond (0, n-1) carries n-1
                    if i == bonds.len() - 1 && n > 2 {
                        m = m + z_right.mapv(|zz| zz * C64::new(field, 0.0));
                    } else {
                        m = m + z_left.mapv(|zz| zz * C64::new(field, 0.0));
                    }
                }
                Boundary::Open => {
                    m = m + z_left.mapv(|zz| zz * C64::new(field, 0.0));
                    if i == bonds.len() - 1 {
                        m = m + z_right.mapv(|zz| zz * C64::new(field, 0.0));
                    }
                }
            }
        }
        edges.push(vec![*a, *b]);
        mats.push(m);
    }
    Hamiltonian::new(Lattice::new(n, 2, edges)?, mats)
}

/// Random 2-local open chain with per-term operator norm at most `h_max`,
/// emitted as a `custom` spec so it serializes like any other model.
pub fn random_two_local_chain(n: usize, h_max: f64, rng: &mut impl Rng) -> ModelSpec {
    let mut terms = Vec::new();
    for i in 0..n.saturating_sub(1) {
        let mut m = CMat::zeros((4, 4));
        for r in 0..4 {
            for c in 0..4 {
                m[(r, c)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        let m = linalg::hermitize(&m);
        let norm = linalg::op_norm(&m);
        let scale = if norm > 0.0 { rng.gen_range(0.3..1.0) * h_max / norm } else { 0.0 };
        let m = m.mapv(|z| z * C64::new(scale, 0.0));
        terms.push(CustomTerm {
            support: vec![i, i + 1],
            matrix_re: (0..4).map(|r| (0..4).map(|c| m[(r, c)].re).collect()).collect(),
            matrix_im: Some((0..4).map(|r| (0..4).map(|c| m[(r, c)].im).collect()).collect()),
        });
    }
    ModelSpec::Custom { d: 2, n: Some(n), terms }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn tfim(n: usize, j: f64, delta: f64) -> Hamiltonian {
        build_model(&ModelSpec::TfimChain { n, j, delta, boundary: Boundary::Open }).unwrap()
    }

    #[test]
    fn tfim_zero_field_has_bonds_only() {
        let ham = tfim(3, 1.0, 0.0);
        assert_eq!(ham.terms().len(), 2);
        assert_eq!(ham.max_edge_size(), 2);
        assert_abs_diff_eq!(ham.max_term_norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn tfim_zero_coupling_is_free_fields() {
        let ham = tfim(2, 0.0, 1.0);
        // H = σ^Z ⊗ I + I ⊗ σ^Z, eigenvalues {-2, 0, 0, 2}
        let h = ham.assemble_full();
        let w = linalg::eigvalsh(&h).unwrap();
        let expect = [-2.0, 0.0, 0.0, 2.0];
        for (a, b) in w.iter().zip(expect.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn chain_distances_count_edges() {
        let ham = tfim(6, 1.0, 0.5);
        let d01 = ham.distance(&Region::new(vec![0]), &Region::new(vec![1])).unwrap();
        assert_eq!(d01, 1);
        let d05 = ham.distance(&Region::new(vec![0]), &Region::new(vec![5])).unwrap();
        assert_eq!(d05, 5);
        for i in 0..6 {
            for j in 0..6 {
                if i != j {
                    let d = ham
                        .distance(&Region::new(vec![i]), &Region::new(vec![j]))
                        .unwrap();
                    assert_eq!(d, i.abs_diff(j));
                }
            }
        }
    }

    #[test]
    fn grid_corner_distance() {
        let ham =
            build_model(&ModelSpec::TfimGrid { lx: 3, ly: 3, j: 1.0, delta: 0.0 }).unwrap();
        let d = ham.distance(&Region::new(vec![0]), &Region::new(vec![8])).unwrap();
        assert_eq!(d, 4);
    }

    #[test]
    fn overlap_flagged() {
        let ham = tfim(4, 1.0, 0.0);
        let e = ham.distance(&Region::new(vec![0, 1]), &Region::new(vec![1, 2]));
        assert!(matches!(e, Err(LatticeError::RegionsOverlap { vertex: 1 })));
    }

    #[test]
    fn boundary_examples() {
        let ham = tfim(5, 1.0, 0.5);
        let b = ham.boundary(&Region::new(vec![0, 1, 2]));
        assert_eq!(b.vertices(), &[2]);
        let all = ham.boundary(&Region::from(0..5));
        assert!(all.is_empty());
        // grid: left column's boundary is the column itself
        let grid =
            build_model(&ModelSpec::TfimGrid { lx: 3, ly: 3, j: 1.0, delta: 0.0 }).unwrap();
        let left = Region::new(vec![0, 3, 6]);
        assert_eq!(grid.boundary(&left).vertices(), &[0, 3, 6]);
    }

    #[test]
    fn interaction_norm_single_bond() {
        let ham = tfim(4, 1.0, 0.0);
        let (terms, norm) =
            ham.interaction_between(&Region::new(vec![0, 1]), &Region::new(vec![2, 3])).unwrap();
        assert_eq!(terms.len(), 1);
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);
        // non-interacting model
        let free = tfim(4, 0.0, 1.0);
        let (terms, norm) =
            free.interaction_between(&Region::new(vec![0, 1]), &Region::new(vec![2, 3])).unwrap();
        assert!(terms.is_empty());
        assert_eq!(norm, 0.0);
        // 2D cut crossing count equals cut size
        let grid =
            build_model(&ModelSpec::TfimGrid { lx: 3, ly: 3, j: 1.0, delta: 0.5 }).unwrap();
        let (terms, _) = grid
            .interaction_between(&Region::new(vec![0, 3, 6]), &Region::new(vec![1, 2, 4, 5, 7, 8]))
            .unwrap();
        assert_eq!(terms.len(), 3);
    }

    #[test]
    fn derived_parameters_recompute_idempotently() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let spec = random_two_local_chain(8, 1.0, &mut rng);
        let ham = build_model(&spec).unwrap();
        assert!(ham.max_term_norm() <= 1.0 + 1e-12);
        assert_eq!(ham.max_edge_size(), 2);
        let (h1, j1) = ham.recompute_strengths();
        let (h2, j2) = ham.recompute_strengths();
        assert_eq!(h1.to_bits(), h2.to_bits());
        assert_eq!(j1.to_bits(), j2.to_bits());
        assert_eq!(h1.to_bits(), ham.max_term_norm().to_bits());
        assert_eq!(j1.to_bits(), ham.vertex_strength().to_bits());
    }

    #[test]
    fn non_hermitian_custom_rejected() {
        let spec = ModelSpec::Custom {
            d: 2,
            n: Some(2),
            terms: vec![CustomTerm {
                support: vec![0],
                matrix_re: vec![vec![0.0, 1.0], vec![0.0, 0.0]],
                matrix_im: None,
            }],
        };
        assert!(matches!(build_model(&spec), Err(LatticeError::NonHermitianTerm { .. })));
    }

    #[test]
    fn vertex_out_of_range_rejected() {
        let spec = ModelSpec::Custom {
            d: 2,
            n: Some(2),
            terms: vec![CustomTerm {
                support: vec![5],
                matrix_re: vec![vec![1.0, 0.0], vec![0.0, -1.0]],
                matrix_im: None,
            }],
        };
        // N is silently grown to cover the support, so this builds with N=6;
        // an explicit undersized lattice is rejected instead.
        assert!(build_model(&spec).is_ok());
        assert!(Lattice::new(2, 2, vec![vec![5]]).is_err());
    }

    #[test]
    fn model_spec_json_round_trip() {
        let json = r#"{"model": "tfim_chain", "N": 10, "J": 1.0, "Delta": 0.5, "boundary": "open"}"#;
        let spec: ModelSpec = serde_json::from_str(json).unwrap();
        let ham = build_model(&spec).unwrap();
        assert_eq!(ham.num_sites(), 10);
        assert_eq!(ham.terms().len(), 9);
        let unknown = r#"{"model": "bogus", "N": 3}"#;
        assert!(serde_json::from_str::<ModelSpec>(unknown).is_err());
    }

    #[test]
    fn tfim_cut_norm_equals_j() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..4 {
            let j: f64 = rng.gen_range(-2.0..2.0);
            if j == 0.0 {
                continue;
            }
            let ham = tfim(6, j, 0.7);
            let cut = rng.gen_range(1..5usize);
            let a = Region::new((0..cut).collect());
            let b = a.complement(6);
            let (_, norm) = ham.interaction_between(&a, &b).unwrap();
            // crossing term is J σσ + field parts on its own sites; the spec
            // invariant concerns the pure-bond cut, so test at zero field too
            let pure = tfim(6, j, 0.0);
            let (_, pure_norm) = pure.interaction_between(&a, &b).unwrap();
            assert_abs_diff_eq!(pure_norm, j.abs(), epsilon = 1e-12);
            assert!(norm >= pure_norm - 1e-12);
        }
    }
}
