//! Dense exact-diagonalization backend.
//!
//! Every thermal quantity the rest of the crate certifies — `log Z`,
//! marginals, entropies, mutual information, CMI, correlators, measurement
//! distributions — is computed here directly from one eigendecomposition of
//! the full Hamiltonian. All exponentials go through the spectrum with a
//! max-eigenvalue shift, so large `β` cannot overflow.

use crate::lattice::{Hamiltonian, LatticeError, Region};
use crate::linalg::{self, CMat};
use crate::operator::{union_sorted, DenseOperator, OperatorError};
use ndarray::Array1;
use num_complex::Complex64 as C64;
use rand::Rng;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("Hilbert dimension {dim} exceeds the dense cap {cap} (set GIBBSKIT_DENSE_CAP to raise)")]
    DimensionOverCap { dim: usize, cap: usize },
    #[error("inverse temperature must be >= 0, got {0}")]
    NegativeBeta(f64),
    #[error("operand is not a state: {0}")]
    NotAState(String),
    #[error("observable is not Hermitian (defect {0:.3e})")]
    NonHermitianObservable(f64),
    #[error("operator supports overlap at site {0}")]
    OverlappingSupports(usize),
    #[error("energy bisection failed: {0}")]
    BisectionFailed(String),
    #[error("spectral file is malformed: {0}")]
    BadSpectralFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Linalg(#[from] linalg::LinalgError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Eigenvalues (ascending) and eigenvectors of a Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpectralData {
    pub eigenvalues: Array1<f64>,
    pub eigenvectors: CMat,
    num_sites: usize,
    local_dim: usize,
}

impl SpectralData {
    pub fn compute(ham: &Hamiltonian) -> Result<Self, OracleError> {
        let dim = ham.full_dim();
        let cap = crate::dense_cap();
        if dim > cap {
            return Err(OracleError::DimensionOverCap { dim, cap });
        }
        let h = ham.assemble_full();
        let (w, u) = linalg::eigh(&h)?;
        Ok(Self {
            eigenvalues: w,
            eigenvectors: u,
            num_sites: ham.num_sites(),
            local_dim: ham.local_dim(),
        })
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn local_dim(&self) -> usize {
        self.local_dim
    }

    /// `‖H - U diag(E) U†‖ / ‖H‖` and `max |U†U - I|`, for the invariants.
    pub fn verify(&self, h: &CMat) -> (f64, f64) {
        let re = linalg::recompose(&self.eigenvalues, &self.eigenvectors);
        let hnorm = linalg::op_norm(h).max(f64::MIN_POSITIVE);
        let recon = linalg::op_norm(&(&re - h)) / hnorm;
        let utu = linalg::dagger(&self.eigenvectors).dot(&self.eigenvectors);
        let unit = (&utu - &CMat::eye(self.dim()))
            .iter()
            .map(|z| z.norm())
            .fold(0.0f64, f64::max);
        (recon, unit)
    }

    /// Binary dump: little-endian u64 header `(N, d, dim)`, then `dim`
    /// eigenvalue doubles, then row-major eigenvectors as `(re, im)` pairs.
    pub fn dump(&self, mut w: impl Write) -> Result<(), OracleError> {
        let dim = self.dim();
        w.write_all(&(self.num_sites as u64).to_le_bytes())?;
        w.write_all(&(self.local_dim as u64).to_le_bytes())?;
        w.write_all(&(dim as u64).to_le_bytes())?;
        for v in self.eigenvalues.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in self.eigenvectors.iter() {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(mut r: impl Read) -> Result<Self, OracleError> {
        let mut b8 = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> Result<u64, OracleError> {
            r.read_exact(&mut b8)?;
            Ok(u64::from_le_bytes(b8))
        };
        let num_sites = read_u64(&mut r)? as usize;
        let local_dim = read_u64(&mut r)? as usize;
        let dim = read_u64(&mut r)? as usize;
        if local_dim.checked_pow(num_sites as u32) != Some(dim) {
            return Err(OracleError::BadSpectralFile(format!(
                "header dim {dim} != {local_dim}^{num_sites}"
            )));
        }
        let mut buf = [0u8; 8];
        let mut eigenvalues = Array1::zeros(dim);
        for i in 0..dim {
            r.read_exact(&mut buf)?;
            eigenvalues[i] = f64::from_le_bytes(buf);
        }
        let mut eigenvectors = CMat::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                r.read_exact(&mut buf)?;
                let re = f64::from_le_bytes(buf);
                r.read_exact(&mut buf)?;
                let im = f64::from_le_bytes(buf);
                eigenvectors[(i, j)] = C64::new(re, im);
            }
        }
        Ok(Self { eigenvalues, eigenvectors, num_sites, local_dim })
    }
}

/// A Gibbs state `ρ_β = e^{-βH}/Z` held spectrally.
///
/// The dense matrix is materialized lazily; marginals, entropies and
/// measurement statistics mostly work from the populations directly.
#[derive(Debug, Clone)]
pub struct GibbsState {
    beta: f64,
    log_z: f64,
    /// normalized populations `e^{-βE_l}/Z`, aligned with the spectrum
    weights: Array1<f64>,
    spectral: Arc<SpectralData>,
    rho_cache: Arc<OnceLock<CMat>>,
}

/// `ρ_β` and `log Z` of `ham` at inverse temperature `beta`.
pub fn gibbs(ham: &Hamiltonian, beta: f64) -> Result<GibbsState, OracleError> {
    GibbsState::from_spectral(Arc::new(SpectralData::compute(ham)?), beta)
}

impl GibbsState {
    pub fn from_spectral(spectral: Arc<SpectralData>, beta: f64) -> Result<Self, OracleError> {
        if beta < 0.0 {
            return Err(OracleError::NegativeBeta(beta));
        }
        let scaled: Vec<f64> = spectral.eigenvalues.iter().map(|e| -beta * e).collect();
        let log_z = linalg::logsumexp(&scaled);
        let weights = Array1::from_iter(scaled.iter().map(|x| (x - log_z).exp()));
        Ok(Self { beta, log_z, weights, spectral, rho_cache: Arc::new(OnceLock::new()) })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn spectral(&self) -> &SpectralData {
        &self.spectral
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn num_sites(&self) -> usize {
        self.spectral.num_sites()
    }

    pub fn local_dim(&self) -> usize {
        self.spectral.local_dim()
    }

    pub fn energy(&self) -> f64 {
        self.weights.iter().zip(self.spectral.eigenvalues.iter()).map(|(w, e)| w * e).sum()
    }

    /// The dense density matrix (built on first use).
    pub fn rho(&self) -> &CMat {
        self.rho_cache
            .get_or_init(|| linalg::recompose(&self.weights, &self.spectral.eigenvectors))
    }

    pub fn rho_operator(&self) -> DenseOperator {
        let support: Vec<usize> = (0..self.num_sites()).collect();
        DenseOperator::new(self.rho().clone(), support, self.local_dim(), self.num_sites())
            .expect("rho is square of the right dimension")
    }

    /// `ρ^A = Tr_{\A}[ρ]`.
    pub fn marginal(&self, region: &Region) -> Result<DenseOperator, OracleError> {
        if region.is_empty() {
            return Err(OracleError::NotAState("marginal on empty region".into()));
        }
        Ok(self.rho_operator().partial_trace(region.vertices())?)
    }

    /// `Tr[ρ O]`, evaluated on the marginal of `O`'s support.
    pub fn expectation(&self, op: &DenseOperator) -> Result<f64, OracleError> {
        let region = Region::new(op.support().to_vec());
        let marg = if region.len() == self.num_sites() {
            self.rho_operator()
        } else {
            self.marginal(&region)?
        };
        let prod = marg.matrix().dot(op.matrix());
        Ok(linalg::trace(&prod).re)
    }
}

/// Von Neumann entropy `S(ρ) = -Tr ρ log ρ` in nats.
///
/// Requires a PSD, unit-trace operand (tolerance 1e-8); eigenvalues below
/// 1e-14 contribute `0 log 0 = 0`.
pub fn entropy(op: &DenseOperator) -> Result<f64, OracleError> {
    let w = state_eigenvalues(op)?;
    Ok(-w.iter().filter(|&&p| p > 1e-14).map(|&p| p * p.ln()).sum::<f64>())
}

fn state_eigenvalues(op: &DenseOperator) -> Result<Array1<f64>, OracleError> {
    let w = linalg::eigvalsh(op.matrix())?;
    let tr: f64 = w.sum();
    if (tr - 1.0).abs() > 1e-8 {
        return Err(OracleError::NotAState(format!("trace = {tr}")));
    }
    if let Some(&min) = w.first() {
        if min < -1e-8 {
            return Err(OracleError::NotAState(format!("negative eigenvalue {min}")));
        }
    }
    Ok(w)
}

/// Umegaki relative entropy `D(ρ‖σ)`; `+∞` when `supp ρ ⊄ supp σ`.
pub fn relative_entropy(rho: &DenseOperator, sigma: &DenseOperator) -> Result<f64, OracleError> {
    if rho.support() != sigma.support() {
        return Err(OracleError::NotAState("relative entropy needs matching supports".into()));
    }
    let _ = state_eigenvalues(rho)?;
    let (ws, us) = linalg::eigh(sigma.matrix())?;
    state_eigenvalues(sigma)?;
    // weight of ρ on σ's null space, and Tr[ρ log σ] on the rest
    let mut null_weight = 0.0;
    let mut tr_rho_log_sigma = 0.0;
    let rho_u = rho.matrix().dot(&us);
    for (l, &s) in ws.iter().enumerate() {
        let mut expect = 0.0;
        for i in 0..rho.dim() {
            expect += (us[(i, l)].conj() * rho_u[(i, l)]).re;
        }
        if s < 1e-14 {
            null_weight += expect.max(0.0);
        } else {
            tr_rho_log_sigma += expect * s.ln();
        }
    }
    if null_weight > 1e-12 {
        return Ok(f64::INFINITY);
    }
    let s_rho = entropy(rho)?;
    Ok(-s_rho - tr_rho_log_sigma)
}

/// `I(A:B) = S(ρ^A) + S(ρ^B) - S(ρ^{AB})` for disjoint regions.
pub fn mutual_information(
    state: &GibbsState,
    a: &Region,
    b: &Region,
) -> Result<f64, OracleError> {
    if let Some(&v) = a.vertices().iter().find(|&&v| b.contains(v)) {
        return Err(OracleError::OverlappingSupports(v));
    }
    let ab = a.union(b);
    let s_a = entropy(&state.marginal(a)?)?;
    let s_b = entropy(&state.marginal(b)?)?;
    let s_ab = entropy(&state.marginal(&ab)?)?;
    Ok(s_a + s_b - s_ab)
}

/// `I(A:C|B) = S(ρ^{AB}) + S(ρ^{BC}) - S(ρ^{ABC}) - S(ρ^B)`.
pub fn conditional_mutual_information(
    state: &GibbsState,
    a: &Region,
    b: &Region,
    c: &Region,
) -> Result<f64, OracleError> {
    for (x, y) in [(a, b), (b, c), (a, c)] {
        if let Some(&v) = x.vertices().iter().find(|&&v| y.contains(v)) {
            return Err(OracleError::OverlappingSupports(v));
        }
    }
    let s_ab = entropy(&state.marginal(&a.union(b))?)?;
    let s_bc = entropy(&state.marginal(&b.union(c))?)?;
    let s_abc = entropy(&state.marginal(&a.union(b).union(c))?)?;
    let s_b = entropy(&state.marginal(b)?)?;
    Ok(s_ab + s_bc - s_abc - s_b)
}

/// Schatten-1 distance `‖a - b‖₁` on the union of supports.
pub fn trace_norm_distance(a: &DenseOperator, b: &DenseOperator) -> Result<f64, OracleError> {
    let union = union_sorted(a.support(), b.support());
    let ae = a.embedded(&union)?;
    let be = b.embedded(&union)?;
    Ok(linalg::trace_norm(&(ae.matrix() - be.matrix())))
}

/// Connected correlator `|Tr[ρ M_C ⊗ M_D] - Tr[ρ M_C] Tr[ρ M_D]|` for
/// operators with disjoint supports.
pub fn connected_correlator(
    state: &GibbsState,
    m_c: &DenseOperator,
    m_d: &DenseOperator,
) -> Result<f64, OracleError> {
    if let Some(&v) = m_c.support().iter().find(|&&v| m_d.support().contains(&v)) {
        return Err(OracleError::OverlappingSupports(v));
    }
    let joint = m_c.compose(m_d)?;
    let e_joint = state.expectation(&joint)?;
    let e_c = state.expectation(m_c)?;
    let e_d = state.expectation(m_d)?;
    Ok((e_joint - e_c * e_d).abs())
}

/// Outcome distribution of a projective measurement of `A` on `ρ_β`.
#[derive(Debug, Clone)]
pub struct MeasurementDistribution {
    /// distinct outcomes, ascending (degeneracies merged at 1e-9)
    pub outcomes: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub mean: f64,
    pub variance: f64,
}

pub const OUTCOME_MERGE_TOL: f64 = 1e-9;

impl MeasurementDistribution {
    fn from_raw(mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut outcomes: Vec<f64> = Vec::new();
        let mut probabilities: Vec<f64> = Vec::new();
        for (x, p) in pairs {
            match outcomes.last() {
                Some(&last) if x - last <= OUTCOME_MERGE_TOL => {
                    *probabilities.last_mut().unwrap() += p;
                }
                _ => {
                    outcomes.push(x);
                    probabilities.push(p);
                }
            }
        }
        let total: f64 = probabilities.iter().sum();
        for p in &mut probabilities {
            *p /= total;
        }
        let mean: f64 = outcomes.iter().zip(&probabilities).map(|(x, p)| x * p).sum();
        let variance: f64 =
            outcomes.iter().zip(&probabilities).map(|(x, p)| p * (x - mean).powi(2)).sum();
        Self { outcomes, probabilities, mean, variance }
    }

    /// `P(|x - center| > delta)`.
    pub fn tail_probability(&self, center: f64, delta: f64) -> f64 {
        self.outcomes
            .iter()
            .zip(&self.probabilities)
            .filter(|(x, _)| (*x - center).abs() > delta)
            .map(|(_, p)| p)
            .sum()
    }

    /// `P(X <= x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.outcomes
            .iter()
            .zip(&self.probabilities)
            .take_while(|(o, _)| **o <= x)
            .map(|(_, p)| p)
            .sum()
    }

    /// `E[(X - center)^m]` summed directly over the support.
    pub fn centered_moment(&self, center: f64, m: u32) -> f64 {
        self.outcomes
            .iter()
            .zip(&self.probabilities)
            .map(|(x, p)| p * (x - center).powi(m as i32))
            .sum()
    }
}

/// Distribution of outcomes when measuring Hermitian `a` in `state`.
///
/// Probabilities come from the marginal on `a`'s support; a full-support
/// diagonal observable short-circuits through the eigenvector amplitudes so
/// the dense `ρ` never has to be built.
pub fn measurement_distribution(
    state: &GibbsState,
    a: &DenseOperator,
) -> Result<MeasurementDistribution, OracleError> {
    let defect = linalg::hermiticity_defect(a.matrix());
    if defect > 1e-10 {
        return Err(OracleError::NonHermitianObservable(defect));
    }
    let full_support = a.support().len() == state.num_sites();
    if full_support {
        if let Some(diag) = exact_diagonal_entries(a.matrix()) {
            // p_b = Σ_l w_l |U_{bl}|² without forming ρ
            let u = &state.spectral().eigenvectors;
            let w = state.weights();
            let dim = a.dim();
            let mut pairs = Vec::with_capacity(dim);
            for b_idx in 0..dim {
                let mut p = 0.0;
                for l in 0..dim {
                    p += w[l] * u[(b_idx, l)].norm_sqr();
                }
                pairs.push((diag[b_idx], p));
            }
            return Ok(MeasurementDistribution::from_raw(pairs));
        }
    }
    let region = Region::new(a.support().to_vec());
    let marg = if full_support { state.rho_operator() } else { state.marginal(&region)? };
    let (vals, vecs) = linalg::eigh(a.matrix())?;
    // p_j = <v_j| ρ^supp |v_j>
    let rho_v = marg.matrix().dot(&vecs);
    let mut pairs = Vec::with_capacity(vals.len());
    for j in 0..vals.len() {
        let mut p = 0.0;
        for i in 0..vals.len() {
            p += (vecs[(i, j)].conj() * rho_v[(i, j)]).re;
        }
        pairs.push((vals[j], p.max(0.0)));
    }
    Ok(MeasurementDistribution::from_raw(pairs))
}

fn exact_diagonal_entries(m: &CMat) -> Option<Vec<f64>> {
    for ((i, j), v) in m.indexed_iter() {
        if i != j && (v.re != 0.0 || v.im != 0.0) {
            return None;
        }
    }
    Some(m.diag().iter().map(|z| z.re).collect())
}

/// One trial of the maximum-entropy check: a state `ρ ≠ ρ_β` with matched
/// energy, for which `S(ρ_β) - S(ρ) = D(ρ‖ρ_β) > 0` must hold.
#[derive(Debug, Clone)]
pub struct MaxEntropyTrial {
    pub energy_mismatch: f64,
    pub entropy_gap: f64,
    pub relative_entropy: f64,
    pub identity_defect: f64,
}

/// Runs `trials` maximum-entropy trials. Each builds a convex mix of two
/// eigenstate-dressed states straddling the target energy, bisected until
/// the energies match to 1e-9, and evaluates both sides of
/// `S(ρ_β) - S(ρ) = D(ρ‖ρ_β)` independently.
pub fn max_entropy_check(
    state: &GibbsState,
    trials: usize,
    rng: &mut impl Rng,
) -> Result<Vec<MaxEntropyTrial>, OracleError> {
    let dim = state.spectral().dim();
    let evals = &state.spectral().eigenvalues;
    let target = state.energy();
    let mix = 0.2; // dressing weight on the maximally mixed state
    let uniform = evals.sum() / dim as f64;
    let dressed_energy = |e: f64| (1.0 - mix) * e + mix * uniform;
    let lows: Vec<usize> =
        (0..dim).filter(|&l| dressed_energy(evals[l]) < target - 1e-12).collect();
    let highs: Vec<usize> =
        (0..dim).filter(|&l| dressed_energy(evals[l]) > target + 1e-12).collect();
    if lows.is_empty() || highs.is_empty() {
        return Err(OracleError::BisectionFailed(
            "spectrum does not straddle the target energy".into(),
        ));
    }
    let rho_beta = state.rho_operator();
    let s_beta = entropy(&rho_beta)?;
    let support: Vec<usize> = (0..state.num_sites()).collect();
    let mut out = Vec::with_capacity(trials);
    for _ in 0..trials {
        let lo = lows[rng.gen_range(0..lows.len())];
        let hi = highs[rng.gen_range(0..highs.len())];
        let e_lo = dressed_energy(evals[lo]);
        let e_hi = dressed_energy(evals[hi]);
        // convex mix p·(dressed lo) + (1-p)·(dressed hi); energy is linear
        // in p, but bisect anyway per the stated procedure
        let energy_at = |p: f64| p * e_lo + (1.0 - p) * e_hi;
        let (mut a, mut b) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if energy_at(mid) > target {
                a = mid;
            } else {
                b = mid;
            }
            if (energy_at(0.5 * (a + b)) - target).abs() < 1e-9 {
                break;
            }
        }
        let p = 0.5 * (a + b);
        let mismatch = (energy_at(p) - target).abs();
        if mismatch > 1e-9 {
            return Err(OracleError::BisectionFailed(format!(
                "energy mismatch {mismatch:.3e} after bisection"
            )));
        }
        let u = &state.spectral().eigenvectors;
        let mut rho = CMat::eye(dim) * C64::new(mix / dim as f64, 0.0);
        for (idx, weight) in [(lo, p * (1.0 - mix)), (hi, (1.0 - p) * (1.0 - mix))] {
            let col = u.column(idx);
            for i in 0..dim {
                for j in 0..dim {
                    rho[(i, j)] += col[i] * col[j].conj() * C64::new(weight, 0.0);
                }
            }
        }
        let rho_op =
            DenseOperator::new(rho, support.clone(), state.local_dim(), state.num_sites())?;
        let s_rho = entropy(&rho_op)?;
        let d = relative_entropy(&rho_op, &rho_beta)?;
        out.push(MaxEntropyTrial {
            energy_mismatch: mismatch,
            entropy_gap: s_beta - s_rho,
            relative_entropy: d,
            identity_defect: ((s_beta - s_rho) - d).abs(),
        });
    }
    Ok(out)
}

/// Both sides of `|log Tr e^{H₁+H₂} - log Tr e^{H₁}| ≤ ‖H₂‖`.
pub fn mineq1_check(h1: &CMat, h2: &CMat) -> Result<(f64, f64), OracleError> {
    let lhs = (log_trace_exp(&(h1 + h2))? - log_trace_exp(h1)?).abs();
    Ok((lhs, linalg::op_norm(h2)))
}

pub fn log_trace_exp(h: &CMat) -> Result<f64, OracleError> {
    let w = linalg::eigvalsh(h)?;
    Ok(linalg::logsumexp(w.as_slice().expect("contiguous")))
}

/// Both sides of the positive-operator stability bound: the left side is
/// `|log Tr[C e^{H₁+H₂}] - log Tr[C e^{H₁}]|` and the right side is the
/// double integral `∫₀¹ dt ∫_{-1/2}^{1/2} ds ‖e^{-sM_t} H₂ e^{sM_t}‖` with
/// `M_t = H₁ + t H₂`, evaluated by Gauss-Legendre quadrature.
pub fn mineq2_check(
    h1: &CMat,
    h2: &CMat,
    c: &CMat,
    quad_points: usize,
) -> Result<(f64, f64), OracleError> {
    let lhs = (log_trace_positive_exp(c, &(h1 + h2))? - log_trace_positive_exp(c, h1)?).abs();
    let (t_nodes, t_weights) = linalg::gauss_legendre(quad_points, 0.0, 1.0);
    let (s_nodes, s_weights) = linalg::gauss_legendre(quad_points, -0.5, 0.5);
    let mut rhs = 0.0;
    for (t, wt) in t_nodes.iter().zip(&t_weights) {
        let m_t = h1 + &h2.mapv(|z| z * C64::new(*t, 0.0));
        let (w, u) = linalg::eigh(&m_t)?;
        let h2_eig = linalg::dagger(&u).dot(h2).dot(&u);
        for (s, ws) in s_nodes.iter().zip(&s_weights) {
            // ‖e^{-sM} H₂ e^{sM}‖ = ‖H₂ ∘ e^{-s(E_i - E_j)}‖ in M's eigenbasis
            let mut scaled = h2_eig.clone();
            for i in 0..w.len() {
                for j in 0..w.len() {
                    let f = (-s * (w[i] - w[j])).exp();
                    scaled[(i, j)] *= C64::new(f, 0.0);
                }
            }
            rhs += wt * ws * linalg::op_norm(&scaled);
        }
    }
    Ok((lhs, rhs))
}

/// `log Tr[C e^{H}]` for PSD `C`, shift-stable.
pub fn log_trace_positive_exp(c: &CMat, h: &CMat) -> Result<f64, OracleError> {
    let (w, u) = linalg::eigh(h)?;
    let c_eig = linalg::dagger(&u).dot(c).dot(&u);
    let shift = w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in 0..w.len() {
        sum += c_eig[(l, l)].re.max(0.0) * (w[l] - shift).exp();
    }
    Ok(sum.ln() + shift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_model, Boundary, ModelSpec};
    use crate::operator::{pauli_x, pauli_z};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tfim(n: usize, j: f64, delta: f64) -> Hamiltonian {
        build_model(&ModelSpec::TfimChain { n, j, delta, boundary: Boundary::Open }).unwrap()
    }

    #[test]
    fn beta_zero_is_maximally_mixed() {
        let ham = tfim(4, 1.0, 0.7);
        let state = gibbs(&ham, 0.0).unwrap();
        assert_abs_diff_eq!(state.log_z(), 4.0 * 2.0f64.ln(), epsilon = 1e-12);
        let rho = state.rho();
        for ((i, j), v) in rho.indexed_iter() {
            let expect = if i == j { 1.0 / 16.0 } else { 0.0 };
            assert_abs_diff_eq!(v.re, expect, epsilon = 1e-12);
            assert_abs_diff_eq!(v.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_site_closed_form() {
        // H = Δ σ^Z => log Z = log(2 cosh βΔ)
        let ham = tfim(1, 0.0, 0.9);
        for beta in [0.0, 0.3, 2.0, 10.0] {
            let state = gibbs(&ham, beta).unwrap();
            assert_abs_diff_eq!(
                state.log_z(),
                (2.0 * (beta * 0.9f64).cosh()).ln(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn log_z_matches_scaling_squaring() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let spec = crate::lattice::random_two_local_chain(8, 1.0, &mut rng);
        let ham = build_model(&spec).unwrap();
        let beta = 0.8;
        let state = gibbs(&ham, beta).unwrap();
        let h = ham.assemble_full();
        let exp = linalg::expm(&h.mapv(|z| z * C64::new(-beta, 0.0)));
        let direct = linalg::trace(&exp).re.ln();
        assert!(
            (state.log_z() - direct).abs() / direct.abs() < 1e-9,
            "logsumexp {} vs expm {}",
            state.log_z(),
            direct
        );
    }

    #[test]
    fn marginal_of_product_state_is_single_site_gibbs() {
        let ham = tfim(4, 0.0, 1.0);
        let beta = 0.6;
        let state = gibbs(&ham, beta).unwrap();
        let marg = state.marginal(&Region::new(vec![2])).unwrap();
        let z1 = 2.0 * beta.cosh();
        assert_abs_diff_eq!(marg.matrix()[(0, 0)].re, (-beta).exp() / z1, epsilon = 1e-10);
        assert_abs_diff_eq!(marg.matrix()[(1, 1)].re, beta.exp() / z1, epsilon = 1e-10);
        // marginal over all sites is ρ itself
        let all = state.marginal(&Region::from(0..4)).unwrap();
        let diff = all.matrix() - state.rho();
        assert!(linalg::op_norm(&diff) < 1e-12);
    }

    #[test]
    fn marginal_matches_brute_force_contraction() {
        let ham = tfim(6, 1.0, 0.5);
        let state = gibbs(&ham, 0.7).unwrap();
        let marg = state.marginal(&Region::new(vec![2, 3])).unwrap();
        // brute force: direct index contraction over the complement basis
        let rho = state.rho();
        let d = 2usize;
        let keep = [2usize, 3];
        let n = 6;
        let mut brute = CMat::zeros((4, 4));
        let digits = |mut idx: usize| {
            let mut v = vec![0usize; n];
            for p in (0..n).rev() {
                v[p] = idx % d;
                idx /= d;
            }
            v
        };
        for i in 0..64 {
            for j in 0..64 {
                let di = digits(i);
                let dj = digits(j);
                if (0..n).filter(|p| !keep.contains(p)).all(|p| di[p] == dj[p]) {
                    let r = di[2] * 2 + di[3];
                    let c = dj[2] * 2 + dj[3];
                    brute[(r, c)] += rho[(i, j)];
                }
            }
        }
        let diff = marg.matrix() - &brute;
        assert!(linalg::op_norm(&diff) < 1e-12);
    }

    #[test]
    fn entropy_of_maximally_mixed() {
        let dim = 8;
        let op = DenseOperator::new(
            CMat::eye(dim) * C64::new(1.0 / dim as f64, 0.0),
            vec![0, 1, 2],
            2,
            3,
        )
        .unwrap();
        assert_abs_diff_eq!(entropy(&op).unwrap(), (dim as f64).ln(), epsilon = 1e-12);
    }

    #[test]
    fn relative_entropy_self_zero_and_pinsker_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ham = tfim(3, 1.0, 0.4);
        let state = gibbs(&ham, 0.9).unwrap();
        let rho = state.rho_operator();
        assert_abs_diff_eq!(relative_entropy(&rho, &rho).unwrap(), 0.0, epsilon = 1e-10);
        for _ in 0..5 {
            let other = gibbs(&ham, rng.gen_range(0.0..2.0)).unwrap().rho_operator();
            let d = relative_entropy(&rho, &other).unwrap();
            let t = trace_norm_distance(&rho, &other).unwrap();
            assert!(d + 1e-12 >= 0.5 * t * t, "Pinsker violated: D={d}, t={t}");
        }
    }

    #[test]
    fn mutual_information_zero_at_beta_zero() {
        let ham = tfim(4, 1.0, 0.5);
        let state = gibbs(&ham, 0.0).unwrap();
        let i = mutual_information(&state, &Region::new(vec![0, 1]), &Region::new(vec![2, 3]))
            .unwrap();
        assert_abs_diff_eq!(i, 0.0, epsilon = 1e-10);
    }

    #[test]
    fn strong_subadditivity_on_small_instances() {
        let ham = tfim(5, 1.0, 0.7);
        for beta in [0.2, 1.0] {
            let state = gibbs(&ham, beta).unwrap();
            let a = Region::new(vec![0]);
            let b = Region::new(vec![1, 2]);
            let c = Region::new(vec![3, 4]);
            let mi = mutual_information(&state, &a, &b).unwrap();
            let cmi = conditional_mutual_information(&state, &a, &b, &c).unwrap();
            assert!(mi >= -1e-9);
            assert!(cmi >= -1e-9);
        }
    }

    #[test]
    fn free_energy_identity() {
        let ham = tfim(5, 1.0, 0.3);
        let beta = 1.3;
        let state = gibbs(&ham, beta).unwrap();
        // F(ρ_β) = <H> - S/β = -log Z / β
        let f = state.energy() - entropy(&state.rho_operator()).unwrap() / beta;
        assert_abs_diff_eq!(f, -state.log_z() / beta, epsilon = 1e-9);
    }

    #[test]
    fn correlators_vanish_at_beta_zero_and_for_identity() {
        let ham = tfim(5, 1.0, 0.5);
        let state = gibbs(&ham, 0.0).unwrap();
        let mc = DenseOperator::new(pauli_z(), vec![0], 2, 5).unwrap();
        let md = DenseOperator::new(pauli_z(), vec![4], 2, 5).unwrap();
        assert_abs_diff_eq!(
            connected_correlator(&state, &mc, &md).unwrap(),
            0.0,
            epsilon = 1e-12
        );
        let warm = gibbs(&ham, 0.8).unwrap();
        let ident = DenseOperator::new(CMat::eye(2), vec![0], 2, 5).unwrap();
        assert_abs_diff_eq!(
            connected_correlator(&warm, &ident, &md).unwrap(),
            0.0,
            epsilon = 1e-10
        );
        // overlapping supports rejected
        let overlap = DenseOperator::new(pauli_x(), vec![4], 2, 5).unwrap();
        assert!(connected_correlator(&warm, &md, &overlap).is_err());
    }

    fn magnetization_operator(n: usize) -> DenseOperator {
        let mut total = DenseOperator::new(
            CMat::from_elem((1, 1), C64::new(0.0, 0.0)),
            vec![],
            2,
            n,
        )
        .unwrap();
        for site in 0..n {
            let z = DenseOperator::new(pauli_z(), vec![site], 2, n).unwrap();
            total = total.add(&z).unwrap();
        }
        total
    }

    #[test]
    fn measurement_distribution_examples() {
        // σ^Z on one site at β = 0: outcomes ±1 with probability 1/2
        let ham = tfim(3, 1.0, 0.5);
        let state = gibbs(&ham, 0.0).unwrap();
        let a = DenseOperator::new(pauli_z(), vec![1], 2, 3).unwrap();
        let dist = measurement_distribution(&state, &a).unwrap();
        assert_eq!(dist.outcomes.len(), 2);
        assert_abs_diff_eq!(dist.probabilities[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(dist.probabilities[1], 0.5, epsilon = 1e-10);
        // measuring H itself gives the Gibbs weights
        let warm = gibbs(&ham, 0.9).unwrap();
        let h_op = DenseOperator::new(ham.assemble_full(), vec![0, 1, 2], 2, 3).unwrap();
        let hdist = measurement_distribution(&warm, &h_op).unwrap();
        let evals = &warm.spectral().eigenvalues;
        let expect_ground: f64 = warm
            .weights()
            .iter()
            .zip(evals.iter())
            .filter(|(_, e)| (**e - evals[0]).abs() <= OUTCOME_MERGE_TOL)
            .map(|(w, _)| w)
            .sum();
        assert_abs_diff_eq!(hdist.probabilities[0], expect_ground, epsilon = 1e-8);
        // moments of the magnetization match direct traces of A^m
        let mag = magnetization_operator(3);
        let mdist = measurement_distribution(&warm, &mag).unwrap();
        for m in 1..=6u32 {
            let direct = {
                let full = mag.embedded_full().unwrap().into_matrix();
                let mut pow = CMat::eye(8);
                for _ in 0..m {
                    pow = pow.dot(&full);
                }
                linalg::trace(&warm.rho().dot(&pow)).re
            };
            let from_dist = mdist.centered_moment(0.0, m);
            assert_abs_diff_eq!(direct, from_dist, epsilon = 1e-8);
        }
        // non-Hermitian observable rejected
        let bad = DenseOperator::new(
            ndarray::array![
                [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
                [C64::new(0.0, 0.0), C64::new(0.0, 0.0)]
            ],
            vec![0],
            2,
            3,
        )
        .unwrap();
        assert!(measurement_distribution(&warm, &bad).is_err());
    }

    #[test]
    fn max_entropy_trials_hold() {
        let ham = tfim(4, 1.0, 0.8);
        let state = gibbs(&ham, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = max_entropy_check(&state, 5, &mut rng).unwrap();
        for t in &trials {
            assert!(t.energy_mismatch <= 1e-9);
            assert!(t.relative_entropy > 0.0, "D must be strictly positive");
            assert!(t.identity_defect < 1e-8, "identity defect {}", t.identity_defect);
        }
    }

    #[test]
    fn mineq1_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let n = 16;
            let mut a = CMat::zeros((n, n));
            let mut b = CMat::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    b[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            let h1 = linalg::hermitize(&a);
            let h2 = linalg::hermitize(&b);
            let (lhs, bound) = mineq1_check(&h1, &h2).unwrap();
            assert!(lhs <= bound + 1e-10, "lhs {lhs} > bound {bound}");
        }
    }

    #[test]
    fn mineq2_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..5 {
            let n = 8;
            let mut a = CMat::zeros((n, n));
            let mut b = CMat::zeros((n, n));
            let mut c = CMat::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    a[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    b[(i, j)] = C64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
                    c[(i, j)] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                }
            }
            let h1 = linalg::hermitize(&a);
            let h2 = linalg::hermitize(&b);
            let cpsd = {
                let ch = linalg::hermitize(&c);
                ch.dot(&ch) + CMat::eye(n) * C64::new(1e-6, 0.0)
            };
            let (lhs, rhs) = mineq2_check(&h1, &h2, &cpsd, 12).unwrap();
            assert!(lhs <= rhs + 1e-8, "lhs {lhs} > rhs {rhs}");
        }
    }

    #[test]
    fn spectral_dump_load_round_trip() {
        let ham = tfim(3, 1.0, 0.2);
        let spectral = SpectralData::compute(&ham).unwrap();
        let mut buf = Vec::new();
        spectral.dump(&mut buf).unwrap();
        let loaded = SpectralData::load(buf.as_slice()).unwrap();
        assert_eq!(loaded.dim(), spectral.dim());
        for (a, b) in loaded.eigenvalues.iter().zip(spectral.eigenvalues.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let (recon, unit) = spectral.verify(&ham.assemble_full());
        assert!(recon < 1e-10);
        assert!(unit < 1e-12);
    }

    #[test]
    fn dense_cap_enforced() {
        std::env::set_var("GIBBSKIT_DENSE_CAP", "8");
        let ham = tfim(4, 1.0, 0.0);
        let err = gibbs(&ham, 1.0);
        std::env::remove_var("GIBBSKIT_DENSE_CAP");
        assert!(matches!(err, Err(OracleError::DimensionOverCap { .. })));
        assert!(gibbs(&ham, -0.5).is_err());
    }
}
