//! Asymptotic theory of the spiked covariance model and a Monte Carlo
//! harness that checks it.
//!
//! The data model is `X = [X₁; X₂]`, an `(m + p) × n` matrix whose first `m`
//! rows carry signal with covariance `Σ = PΛPᵀ` and whose last `p` rows are
//! iid unit-variance noise. Spikes `ℓ > 1 + √γ` (with `γ = p/n`) produce
//! outlier eigenvalues of `S = n⁻¹XXᵀ`; the modules below predict their
//! location, fluctuations and eigenvector behaviour and then measure them.
//!
//! ```
//! use spikecov::spike_theory::{spike_forward, cosine_limit};
//!
//! let rho = spike_forward(3.0, 1.0).unwrap();
//! assert!((rho - 4.5).abs() < 1e-15);
//! assert!((cosine_limit(3.0, 1.0) - 0.5).abs() < 1e-15);
//! ```

#[cfg(test)]
#[macro_use]
mod test_macros;

pub mod cumulants;
pub mod error;
pub mod linalg;
pub mod mc_harness;
pub mod model_gen;
pub mod mp_law;
pub mod perturbation;
pub mod rng;
mod serde_matrix;
pub mod spectra;
pub mod spike_theory;
pub mod stats;

pub use error::{Error, Result};

/// Library version embedded in reports and CSV headers.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/marchenko_pastur.md")]
    mod marchenko_pastur {}
    #[doc = include_str!("../../../book/src/spike_map.md")]
    mod spike_map {}
    #[doc = include_str!("../../../book/src/cumulants.md")]
    mod cumulants {}
    #[doc = include_str!("../../../book/src/schur_complement.md")]
    mod schur_complement {}
    #[doc = include_str!("../../../book/src/perturbation.md")]
    mod perturbation {}
    #[doc = include_str!("../../../book/src/monte_carlo.md")]
    mod monte_carlo {}
}
