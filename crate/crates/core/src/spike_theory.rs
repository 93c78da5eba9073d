//! Closed-form asymptotics for a supercritical spike `ℓ > 1 + √γ`.
//!
//! The spike map `ρ(ℓ, γ) = ℓ + γℓ/(ℓ−1)` gives the almost-sure limit of
//! the corresponding sample eigenvalue. Its derivative `ρ̇`, the resolvent
//! constants `θ, ω, c(ρ)` and the Slutsky factor `1 + c(ρ)ℓ` feed the
//! eigenvalue variance
//!
//! ```text
//! σ² = 2ℓ²ρ̇ + ρ̇²·[𝒫ᵛ, κ]
//! ```
//!
//! the cosine limit `ℓρ̇/ρ`, and the eigenvector fluctuation covariance
//! `𝒟ᵥ Σ̃ᵥ 𝒟ᵥ`.
//!
//! Functions here accept `γ ≥ 0`; `γ = 0` is the classical fixed-dimension
//! limit in which every correction factor reduces to one.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::cumulants::CumulantTensor;
use crate::error::{Error, Result};
use crate::mp_law::{self, MpParams, Weight};
use crate::serde_matrix;

/// Values of `ρ` closer than this to `b_γ` are rejected by [`spike_backward`].
pub const EDGE_GUARD: f64 = 1e-9;

/// `1 + √γ`, the smallest population spike that produces an outlier.
pub fn phase_transition(gamma: f64) -> f64 {
    1.0 + gamma.sqrt()
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma.is_finite() && gamma >= 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("gamma must be finite and non-negative, got {gamma}")))
    }
}

/// Whether `ell` lies strictly above the phase transition.
pub fn is_supercritical(ell: f64, gamma: f64) -> bool {
    require_supercritical(ell, gamma).is_ok()
}

fn require_supercritical(ell: f64, gamma: f64) -> Result<()> {
    check_gamma(gamma)?;
    if !(ell.is_finite() && ell > 0.0) {
        return Err(Error::Domain(format!("spike must be positive and finite, got {ell}")));
    }
    let edge = phase_transition(gamma);
    if (ell - edge).abs() <= 4.0 * f64::EPSILON * edge {
        return Err(Error::CriticalSpike { ell, edge });
    }
    if ell < edge {
        return Err(Error::SubcriticalSpike { ell, edge });
    }
    Ok(())
}

/// `ρ(ℓ, γ) = ℓ + γℓ/(ℓ − 1)`.
pub fn spike_forward(ell: f64, gamma: f64) -> Result<f64> {
    require_supercritical(ell, gamma)?;
    Ok(ell + gamma * ell / (ell - 1.0))
}

/// Inverse of [`spike_forward`]: the root of `ℓ² − (ρ + 1 − γ)ℓ + ρ = 0`
/// above the phase transition.
pub fn spike_backward(rho: f64, gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let edge = (1.0 + gamma.sqrt()).powi(2);
    if !rho.is_finite() || rho - edge < EDGE_GUARD {
        return Err(Error::Domain(format!(
            "rho = {rho} is not above the bulk edge {edge} (guard {EDGE_GUARD:e})"
        )));
    }
    let lin = rho + 1.0 - gamma;
    let disc = (lin * lin - 4.0 * rho).max(0.0);
    Ok(0.5 * (lin + disc.sqrt()))
}

/// `ρ̇ = ∂ρ/∂ℓ = 1 − γ/(ℓ − 1)²`.
pub fn spike_derivative(ell: f64, gamma: f64) -> Result<f64> {
    require_supercritical(ell, gamma)?;
    Ok(1.0 - gamma / (ell - 1.0).powi(2))
}

/// Limits of the normalized traces of `B_n(ρ)` and related integrals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolventConstants {
    /// `lim n⁻¹ tr B_n²(ρ) = ∫ρ²(ρ − x)⁻² 𝖥_γ(dx)`
    pub theta: f64,
    /// `plim n⁻¹ Σᵢ b_ii² = (ρ/ℓ)²`
    pub omega: f64,
    /// `c(ρ) = ∫x(ρ − x)⁻² 𝖥_γ(dx)`
    pub c_rho: f64,
    /// `1 + c(ρ)ℓ`
    pub slutsky: f64,
}

/// Closed forms for `θ`, `ω`, `c(ρ)` and `1 + c(ρ)ℓ`.
pub fn theta_omega_c(ell: f64, gamma: f64) -> Result<ResolventConstants> {
    require_supercritical(ell, gamma)?;
    let lm1 = ell - 1.0;
    let lm1_sq = lm1 * lm1;
    let constants = ResolventConstants {
        theta: (lm1 + gamma).powi(2) / (lm1_sq - gamma),
        omega: (lm1 + gamma).powi(2) / lm1_sq,
        c_rho: gamma / (lm1_sq - gamma),
        slutsky: (1.0 + gamma / lm1) / (1.0 - gamma / lm1_sq),
    };
    #[cfg(debug_assertions)]
    if gamma > 0.0 && ell - phase_transition(gamma) > 1e-3 {
        let via_law = resolvent_constants_from_law(ell, gamma)?;
        debug_assert!((via_law.theta - constants.theta).abs() <= 1e-8 * constants.theta);
        debug_assert!((via_law.c_rho - constants.c_rho).abs() <= 1e-8 * (1.0 + constants.c_rho));
    }
    Ok(constants)
}

/// The same constants assembled from the companion Stieltjes transform
/// `𝗆` and its derivative at `ρ(ℓ, γ)`; independent of the closed forms in
/// [`theta_omega_c`]. Requires `γ > 0`.
pub fn resolvent_constants_from_law(ell: f64, gamma: f64) -> Result<ResolventConstants> {
    let rho = spike_forward(ell, gamma)?;
    let params = MpParams::new(gamma)?;
    let inv = mp_law::resolvent_moment(rho, 1, Weight::One, &params)?;
    let inv_sq = mp_law::resolvent_moment(rho, 2, Weight::One, &params)?;
    let c_rho = mp_law::resolvent_moment(rho, 2, Weight::X, &params)?;
    // b_ii → ρ∫(ρ − x)⁻¹ = −ρ𝗆(ρ)
    let b_diag = rho * inv;
    Ok(ResolventConstants {
        theta: rho * rho * inv_sq,
        omega: b_diag * b_diag,
        c_rho,
        slutsky: ell * rho * inv_sq,
    })
}

/// Eigenvalue CLT variance `σ² = 2ℓ²ρ̇ + ρ̇²·[𝒫ᵛ, κ]`.
///
/// `quartic_contraction` is `[𝒫ᵛ, κ]`, the fourth cumulant of `pᵥᵀξ`; it is
/// zero for Gaussian signals.
pub fn eigenvalue_sigma2(ell: f64, gamma: f64, quartic_contraction: f64) -> Result<f64> {
    let rho_dot = spike_derivative(ell, gamma)?;
    let sigma2 = 2.0 * ell * ell * rho_dot + rho_dot * rho_dot * quartic_contraction;
    if !(sigma2.is_finite() && sigma2 > 0.0) {
        return Err(Error::InvalidCumulant(sigma2));
    }
    Ok(sigma2)
}

/// Almost-sure limit of `⟨𝔲ᵥ, 𝔭ᵥ⟩²`; zero at or below the phase transition.
pub fn cosine_limit(ell: f64, gamma: f64) -> f64 {
    if !is_supercritical(ell, gamma) {
        return 0.0;
    }
    let lm1 = ell - 1.0;
    (1.0 - gamma / (lm1 * lm1)) / (1.0 + gamma / lm1)
}

/// Population spikes `ℓ₁ > … > ℓ_m` together with the aspect ratio.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpikeSpectrum {
    ells: Vec<f64>,
    gamma: f64,
    m0: usize,
}

impl SpikeSpectrum {
    pub fn new(ells: Vec<f64>, gamma: f64) -> Result<Self> {
        check_gamma(gamma)?;
        if ells.is_empty() {
            return Err(Error::Domain("spike list is empty".into()));
        }
        if let Some(bad) = ells.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Domain(format!("spikes must be positive and finite, got {bad}")));
        }
        for w in ells.windows(2) {
            if w[0] == w[1] {
                return Err(Error::DegenerateSpectrum(ells.clone()));
            }
            if w[0] < w[1] {
                return Err(Error::Domain(format!("spikes must be strictly decreasing, got {ells:?}")));
            }
        }
        let m0 = ells.iter().take_while(|&&l| is_supercritical(l, gamma)).count();
        Ok(Self { ells, gamma, m0 })
    }

    pub fn ells(&self) -> &[f64] {
        &self.ells
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Number of supercritical spikes; indices `0..m0` are supercritical.
    pub fn m0(&self) -> usize {
        self.m0
    }

    pub fn m(&self) -> usize {
        self.ells.len()
    }

    fn require_supercritical_index(&self, nu: usize) -> Result<f64> {
        let ell = *self.ells.get(nu).ok_or(Error::IndexOutOfRange { index: nu, len: self.m() })?;
        require_supercritical(ell, self.gamma)?;
        Ok(ell)
    }
}

/// Asymptotic covariance `𝒟ᵥ Σ̃ᵥ 𝒟ᵥ` of `√n(Pᵀaᵥ − eᵥ)` for spike `nu`
/// (0-based).
///
/// `contractions[(μ, μ′)]` must hold `[𝒫^{μμ′νν}, κ]`; only entries with
/// `μ, μ′ ≠ ν` are read. Row and column `nu` of the result are zero.
pub fn eigenvector_covariance(
    spectrum: &SpikeSpectrum,
    nu: usize,
    contractions: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let m = spectrum.m();
    let ell_nu = spectrum.require_supercritical_index(nu)?;
    if contractions.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!(
            "contraction matrix is {:?}, expected ({m}, {m})",
            contractions.shape()
        )));
    }
    let scale = contractions.amax().max(1.0);
    if (contractions - contractions.transpose()).amax() > 1e-10 * scale {
        return Err(Error::Domain("contraction matrix must be symmetric".into()));
    }
    let rho_dot = spike_derivative(ell_nu, spectrum.gamma)?;
    let ells = spectrum.ells();
    let d: Vec<f64> = ells
        .iter()
        .enumerate()
        .map(|(mu, &l)| if mu == nu { 0.0 } else { 1.0 / (ell_nu - l) })
        .collect();
    Ok(DMatrix::from_fn(m, m, |mu, mu_p| {
        if mu == nu || mu_p == nu {
            return 0.0;
        }
        let gauss = if mu == mu_p { ell_nu * ells[mu] / rho_dot } else { 0.0 };
        d[mu] * d[mu_p] * (gauss + contractions[(mu, mu_p)])
    }))
}

/// Where the fourth-cumulant contractions come from.
#[derive(Debug, Clone, Copy)]
pub enum CumulantSource<'a> {
    /// `κ ≡ 0`
    Gaussian,
    /// A cumulant tensor together with the population eigenvectors (columns
    /// of `axes`).
    Tensor { kappa: &'a CumulantTensor, axes: &'a DMatrix<f64> },
}

impl CumulantSource<'_> {
    /// `[𝒫ᵛ, κ]`
    pub fn quartic(&self, nu: usize) -> Result<f64> {
        match self {
            CumulantSource::Gaussian => Ok(0.0),
            CumulantSource::Tensor { kappa, axes } => kappa.contract(axes, nu, nu, nu, nu),
        }
    }

    /// The `m × m` matrix of `[𝒫^{μμ′νν}, κ]`.
    pub fn contraction_matrix(&self, m: usize, nu: usize) -> Result<DMatrix<f64>> {
        match self {
            CumulantSource::Gaussian => Ok(DMatrix::zeros(m, m)),
            CumulantSource::Tensor { kappa, axes } => kappa.contraction_matrix(axes, nu),
        }
    }
}

/// Every closed-form prediction for one supercritical spike.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryPrediction {
    /// 0-based spike index.
    pub nu: usize,
    pub ell: f64,
    /// Aspect ratio the prediction was evaluated at (usually `γn = p/n`).
    pub gamma: f64,
    pub rho: f64,
    pub rho_dot: f64,
    pub sigma2: f64,
    /// `σ²` with the cumulant term dropped.
    pub sigma2_gaussian: f64,
    pub cos2_limit: f64,
    pub theta: f64,
    pub omega: f64,
    pub c_rho: f64,
    pub slutsky: f64,
    #[serde(serialize_with = "serde_matrix::serialize")]
    pub evec_cov: DMatrix<f64>,
}

/// Bundle every prediction for spike `nu`, evaluated at `gamma_used`.
pub fn predict(
    spectrum: &SpikeSpectrum,
    nu: usize,
    gamma_used: f64,
    source: CumulantSource<'_>,
) -> Result<TheoryPrediction> {
    let at = SpikeSpectrum::new(spectrum.ells.clone(), gamma_used)?;
    let ell = at.require_supercritical_index(nu)?;
    let rho = spike_forward(ell, gamma_used)?;
    let rho_dot = spike_derivative(ell, gamma_used)?;
    let consts = theta_omega_c(ell, gamma_used)?;
    let sigma2 = eigenvalue_sigma2(ell, gamma_used, source.quartic(nu)?)?;
    let sigma2_gaussian = eigenvalue_sigma2(ell, gamma_used, 0.0)?;
    let contractions = source.contraction_matrix(at.m(), nu)?;
    let evec_cov = eigenvector_covariance(&at, nu, &contractions)?;
    Ok(TheoryPrediction {
        nu,
        ell,
        gamma: gamma_used,
        rho,
        rho_dot,
        sigma2,
        sigma2_gaussian,
        cos2_limit: cosine_limit(ell, gamma_used),
        theta: consts.theta,
        omega: consts.omega,
        c_rho: consts.c_rho,
        slutsky: consts.slutsky,
        evec_cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn forward_examples() {
        assert_close!(spike_forward(3.0, 1.0).unwrap(), 4.5, 1e-15);
        assert_close!(spike_forward(4.0, 0.5).unwrap(), 14.0 / 3.0, 1e-14);
        assert_close!(spike_forward(2.5, 0.0).unwrap(), 2.5, 0.0);
    }

    #[test]
    fn forward_rejects_boundary_and_below() {
        for gamma in [0.25, 0.5, 1.0, 2.0] {
            let edge = phase_transition(gamma);
            assert!(matches!(spike_forward(edge, gamma), Err(Error::CriticalSpike { .. })));
            assert!(matches!(spike_forward(edge - 0.1, gamma), Err(Error::SubcriticalSpike { .. })));
            // the map tends to b_γ at the boundary
            let near = spike_forward(edge + 1e-7, gamma).unwrap();
            assert_close!(near, (1.0 + gamma.sqrt()).powi(2), 1e-6);
        }
    }

    #[test]
    fn backward_examples() {
        assert_close!(spike_backward(4.5, 1.0).unwrap(), 3.0, 1e-14);
        assert_close!(spike_backward(14.0 / 3.0, 0.5).unwrap(), 4.0, 1e-13);
        let b = (1.0 + 0.5f64.sqrt()).powi(2);
        assert!(spike_backward(b + 1e-12, 0.5).is_err());
        assert!(spike_backward(b - 1.0, 0.5).is_err());
    }

    #[test]
    fn derivative_examples() {
        assert_close!(spike_derivative(3.0, 1.0).unwrap(), 0.75, 1e-15);
        assert_close!(spike_derivative(4.0, 0.5).unwrap(), 17.0 / 18.0, 1e-15);
        assert_eq!(spike_derivative(1.5, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn resolvent_constant_examples() {
        let c = theta_omega_c(3.0, 1.0).unwrap();
        assert_close!(c.theta, 3.0, 1e-14);
        assert_close!(c.omega, 2.25, 1e-14);
        assert_close!(c.c_rho, 1.0 / 3.0, 1e-15);
        assert_close!(c.slutsky, 2.0, 1e-14);

        let c = theta_omega_c(4.0, 0.5).unwrap();
        assert_close!(c.theta, 12.25 / 8.5, 1e-14);
        assert_close!(c.omega, 12.25 / 9.0, 1e-14);
        assert_close!(c.c_rho, 0.5 / 8.5, 1e-15);
        assert_close!(c.slutsky, (1.0 + 0.5 / 3.0) / (1.0 - 0.5 / 9.0), 1e-14);
        assert_close!(c.omega, c.theta * spike_derivative(4.0, 0.5).unwrap(), 1e-14);

        let c = theta_omega_c(2.0, 0.0).unwrap();
        assert_eq!((c.theta, c.omega, c.c_rho, c.slutsky), (1.0, 1.0, 0.0, 1.0));
    }

    #[test]
    fn sigma2_examples() {
        assert_close!(eigenvalue_sigma2(3.0, 1.0, 0.0).unwrap(), 13.5, 1e-13);
        let rd = 17.0 / 18.0;
        let expected = 2.0 * 16.0 * rd + rd * rd * -32.0;
        assert_close!(eigenvalue_sigma2(4.0, 0.5, -32.0).unwrap(), expected, 1e-12);
        assert_close!(expected, 1.679, 1e-3);
        assert_close!(eigenvalue_sigma2(5.0, 0.0, 0.0).unwrap(), 50.0, 1e-12);
        assert!(matches!(eigenvalue_sigma2(4.0, 0.5, -40.0), Err(Error::InvalidCumulant(_))));
    }

    #[test]
    fn cosine_examples() {
        assert_close!(cosine_limit(3.0, 1.0), 0.5, 1e-15);
        assert_close!(cosine_limit(4.0, 0.5), (1.0 - 0.5 / 9.0) / (1.0 + 0.5 / 3.0), 1e-15);
        assert_eq!(cosine_limit(1.5, 1.0), 0.0);
        assert_eq!(cosine_limit(2.0, 1.0), 0.0);
        assert_eq!(cosine_limit(3.0, 0.0), 1.0);
    }

    #[test]
    fn spectrum_validation() {
        let s = SpikeSpectrum::new(vec![4.0, 2.5, 1.2], 0.5).unwrap();
        assert_eq!(s.m0(), 2);
        assert!(matches!(SpikeSpectrum::new(vec![3.0, 3.0], 0.5), Err(Error::DegenerateSpectrum(_))));
        assert!(SpikeSpectrum::new(vec![2.0, 3.0], 0.5).is_err());
        assert!(SpikeSpectrum::new(vec![], 0.5).is_err());
        assert!(SpikeSpectrum::new(vec![3.0, -1.0], 0.5).is_err());
    }

    #[test]
    fn evec_cov_gaussian_two_spikes() {
        let s = SpikeSpectrum::new(vec![4.0, 2.5], 0.5).unwrap();
        let cov = eigenvector_covariance(&s, 0, &DMatrix::zeros(2, 2)).unwrap();
        assert_close!(cov[(1, 1)], (18.0 / 17.0) * 10.0 / 2.25, 1e-12);
        assert_close!(cov[(1, 1)], 4.7059, 1e-4);
        assert_eq!(cov[(0, 0)], 0.0);
        assert_eq!(cov[(0, 1)], 0.0);
        assert_eq!(cov[(1, 0)], 0.0);
    }

    #[test]
    fn evec_cov_scale_mixture_term() {
        let s = SpikeSpectrum::new(vec![4.0, 2.5], 0.5).unwrap();
        let mut c = DMatrix::zeros(2, 2);
        c[(1, 1)] = 2.5;
        let cov = eigenvector_covariance(&s, 0, &c).unwrap();
        assert_close!(cov[(1, 1)], (18.0 / 17.0) * 10.0 / 2.25 + 2.5 / 2.25, 1e-12);
        assert_close!(cov[(1, 1)], 5.8170, 1e-4);
    }

    #[test]
    fn evec_cov_classical_limit() {
        let ells = vec![6.0, 4.0, 3.0, 1.5];
        let s = SpikeSpectrum::new(ells.clone(), 0.0).unwrap();
        let cov = eigenvector_covariance(&s, 1, &DMatrix::zeros(4, 4)).unwrap();
        for mu in 0..4 {
            let expected = if mu == 1 { 0.0 } else { ells[1] * ells[mu] / (ells[1] - ells[mu]).powi(2) };
            assert_close!(cov[(mu, mu)], expected, 1e-12);
        }
    }

    #[test]
    fn evec_cov_errors() {
        let s = SpikeSpectrum::new(vec![4.0, 1.2], 0.5).unwrap();
        assert!(eigenvector_covariance(&s, 1, &DMatrix::zeros(2, 2)).is_err());
        assert!(eigenvector_covariance(&s, 0, &DMatrix::zeros(3, 3)).is_err());
        let asym = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert!(eigenvector_covariance(&s, 0, &asym).is_err());
    }

    #[test]
    fn predict_single_gaussian_spike() {
        let s = SpikeSpectrum::new(vec![3.0], 1.0).unwrap();
        let p = predict(&s, 0, 1.0, CumulantSource::Gaussian).unwrap();
        assert_close!(p.rho, 4.5, 1e-15);
        assert_close!(p.sigma2, 13.5, 1e-13);
        assert_close!(p.cos2_limit, 0.5, 1e-15);
        assert_eq!(p.evec_cov.shape(), (1, 1));
        assert_eq!(p.evec_cov[(0, 0)], 0.0);
    }

    #[test]
    fn predict_centering_shift_is_order_root_n() {
        let s = SpikeSpectrum::new(vec![4.0, 2.5], 0.5).unwrap();
        let n = 1600.0f64;
        let gamma_n = 0.5 + 1.0 / n.sqrt();
        let at_limit = predict(&s, 0, 0.5, CumulantSource::Gaussian).unwrap();
        let at_n = predict(&s, 0, gamma_n, CumulantSource::Gaussian).unwrap();
        // ρ is linear in γ: √n(ρ(ℓ, γn) − ρ(ℓ, γ)) = aℓ/(ℓ−1) with a = 1.
        assert_close!(n.sqrt() * (at_n.rho - at_limit.rho), 4.0 / 3.0, 1e-10);
    }

    #[test]
    fn law_route_matches_closed_forms() {
        for (ell, gamma) in [(3.0, 1.0), (4.0, 0.5), (6.0, 2.0), (2.5, 0.25)] {
            let closed = theta_omega_c(ell, gamma).unwrap();
            let law = resolvent_constants_from_law(ell, gamma).unwrap();
            assert_close!(law.theta, closed.theta, 1e-10 * closed.theta);
            assert_close!(law.omega, closed.omega, 1e-10 * closed.omega);
            assert_close!(law.c_rho, closed.c_rho, 1e-10);
            assert_close!(law.slutsky, closed.slutsky, 1e-10 * closed.slutsky);
        }
    }

    proptest! {
        #[test]
        fn round_trip(gamma in 0.01f64..4.0, excess in 1e-3f64..20.0) {
            let ell = phase_transition(gamma) + excess;
            let rho = spike_forward(ell, gamma).unwrap();
            prop_assert!(rho > (1.0 + gamma.sqrt()).powi(2));
            let back = spike_backward(rho, gamma).unwrap();
            prop_assert!((back - ell).abs() <= 1e-12 * ell.max(1.0) / excess.min(1.0).sqrt());
        }

        #[test]
        fn identities(gamma in 0.0f64..4.0, excess in 1e-2f64..20.0) {
            let ell = phase_transition(gamma) + excess;
            let rho = spike_forward(ell, gamma).unwrap();
            let rd = spike_derivative(ell, gamma).unwrap();
            let c = theta_omega_c(ell, gamma).unwrap();
            prop_assert!(rd > 0.0 && rd <= 1.0);
            prop_assert!((c.omega - c.theta * rd).abs() <= 1e-12 * c.omega);
            prop_assert!((c.omega - (rho / ell).powi(2)).abs() <= 1e-12 * c.omega);
            prop_assert!((c.slutsky * ell * rd - rho).abs() <= 1e-12 * rho);
            prop_assert!((cosine_limit(ell, gamma) * rho - ell * rd).abs() <= 1e-12 * rho);
        }
    }
}
