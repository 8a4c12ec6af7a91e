//! Partition functions and thermal-state structure of local lattice
//! Hamiltonians at desk scale.
//!
//! The crate is organized around a dense exact-diagonalization oracle
//! ([`oracle`]) that computes every thermal quantity directly, and a set of
//! structure-aware algorithms that are checked against it:
//!
//! - [`cluster`]: high-temperature connected-cluster expansion of `log Z`,
//!   local expectation values, and correlator order bounds;
//! - [`locality`]: nested commutators, Euclidean-evolved operators, the
//!   transfer operator `E_A` and its localized approximations, and quantum
//!   belief propagation (`O_A`) with norm/locality certificates;
//! - [`partition`]: the 1D polynomial-time `log Z` algorithm and the 1D
//!   product-of-local-operators thermal factorization;
//! - [`stats`]: concentration bounds, the moment lemma, Berry-Esseen
//!   Gaussianity, and equivalence of ensembles;
//! - [`checks`]: certified structural inequalities (area law, correlation
//!   and CMI decay, local indistinguishability, Hamiltonian of mean force,
//!   commuting-model exactness).
//!
//! Everything is dense and double-precision. The Hilbert-space dimension is
//! capped (default `2^14`, override with `GIBBSKIT_DENSE_CAP`); the point is
//! exactness at small `N`, not scale.

// Link the BLAS/LAPACK provider (libopenblas) into every final artifact.
extern crate blas_src;

pub mod checks;
pub mod cluster;
pub mod lattice;
pub mod linalg;
pub mod locality;
pub mod operator;
pub mod oracle;
pub mod partition;
pub mod stats;

pub use lattice::{Hamiltonian, Lattice, LocalTerm, ModelSpec, Region};
pub use operator::DenseOperator;
pub use oracle::{GibbsState, MeasurementDistribution, SpectralData};


/// Dense dimension cap: dense paths refuse Hilbert spaces larger than this.
///
/// Defaults to `2^14`; override with the `GIBBSKIT_DENSE_CAP` environment
/// variable.
pub fn dense_cap() -> usize {
    match std::env::var("GIBBSKIT_DENSE_CAP") {
        Ok(s) => s.parse().unwrap_or(1 << 14),
        Err(_) => 1 << 14,
    }
}
