//! Marchenko–Pastur law, its companion law, and the real-axis resolvent
//! integrals used by the spike theory.
//!
//! Two laws appear throughout:
//!
//! * `F_γ`, the limiting spectral distribution of the `p × p` noise covariance
//!   `n⁻¹X₂X₂ᵀ`. It has density `√((b−x)(x−a)) / (2πγx)` on `[a, b]` with
//!   `a = (1−√γ)²`, `b = (1+√γ)²`, plus an atom of mass `1 − 1/γ` at zero
//!   when `γ > 1`.
//! * the companion law `𝖥_γ = (1−γ)δ₀ + γF_γ`, the limit of the `n × n`
//!   matrix `n⁻¹X₂ᵀX₂`. Its atom at zero has mass `1 − γ` when `γ < 1` and
//!   vanishes otherwise.
//!
//! The Stieltjes transform `𝗆(z) = ∫(x − z)⁻¹ 𝖥_γ(dx)` is only evaluated for
//! real `z` strictly to the right of the bulk, where it is the root of
//! `z𝗆² + (z + 1 − γ)𝗆 + 1 = 0` lying in `(−1/(1+√γ), 0)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation points closer than this to the upper edge are rejected.
pub const EDGE_GUARD: f64 = 1e-9;

/// A point mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub location: f64,
    pub mass: f64,
}

/// Aspect-ratio parameter of the Marchenko–Pastur law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpParams {
    gamma: f64,
}

impl MpParams {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::Domain(format!("gamma must be positive and finite, got {gamma}")));
        }
        Ok(Self { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `(1 − √γ)²`
    pub fn lower_edge(&self) -> f64 {
        (1.0 - self.gamma.sqrt()).powi(2)
    }

    /// `(1 + √γ)²`
    pub fn upper_edge(&self) -> f64 {
        (1.0 + self.gamma.sqrt()).powi(2)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.lower_edge(), self.upper_edge())
    }

    /// Density of the continuous part of `F_γ`.
    pub fn density(&self, x: f64) -> f64 {
        let (a, b) = self.support();
        if x <= a || x >= b || x <= 0.0 {
            return 0.0;
        }
        ((b - x) * (x - a)).sqrt() / (2.0 * PI * self.gamma * x)
    }

    /// Atom of `F_γ` at zero; mass `1 − 1/γ` for `γ > 1`, zero otherwise.
    pub fn atom(&self) -> Atom {
        Atom { location: 0.0, mass: (1.0 - 1.0 / self.gamma).max(0.0) }
    }

    /// Total mass carried by the continuous part of `F_γ`.
    pub fn continuous_mass(&self) -> f64 {
        1.0 - self.atom().mass
    }

    /// Density of the continuous part of the companion law `𝖥_γ`.
    pub fn companion_density(&self, x: f64) -> f64 {
        self.gamma * self.density(x)
    }

    /// Atom of `𝖥_γ` at zero; mass `1 − γ` for `γ < 1`, zero otherwise.
    pub fn companion_atom(&self) -> Atom {
        Atom { location: 0.0, mass: (1.0 - self.gamma).max(0.0) }
    }

    fn check_resolvent_point(&self, z: f64) -> Result<()> {
        let b = self.upper_edge();
        if !z.is_finite() || z - b < EDGE_GUARD {
            return Err(Error::Domain(format!(
                "resolvent evaluated at z = {z}, which is not above the upper edge {b} (guard {EDGE_GUARD:e})"
            )));
        }
        Ok(())
    }
}

/// Support `(a_γ, b_γ)` of the continuous part of the MP law.
pub fn mp_support(params: &MpParams) -> (f64, f64) {
    params.support()
}

/// Continuous MP density; zero outside the support. Atoms are reported by
/// [`MpParams::atom`], never folded in here.
pub fn mp_density(x: f64, params: &MpParams) -> f64 {
    params.density(x)
}

/// Stieltjes transform `𝗆(z; γ)` of the companion law for real `z > b_γ`.
pub fn companion_stieltjes(z: f64, params: &MpParams) -> Result<f64> {
    params.check_resolvent_point(z)?;
    let gamma = params.gamma;
    let lin = z + 1.0 - gamma;
    let disc = lin * lin - 4.0 * z;
    if disc < 0.0 {
        return Err(Error::Domain(format!("negative discriminant {disc} at z = {z}")));
    }
    // (−lin + √disc)/(2z), rewritten through the product of roots 1/z to
    // avoid cancellation; lin > 0 on the admissible region.
    let m = -2.0 / (lin + disc.sqrt());
    let floor = -1.0 / (1.0 + gamma.sqrt());
    if !(m < 0.0 && m > floor - 1e-12) {
        return Err(Error::Domain(format!("root {m} outside branch interval ({floor}, 0)")));
    }
    Ok(m)
}

/// `𝗆′(z) = ∫(z − x)⁻² 𝖥_γ(dx)`, by implicit differentiation of the MP
/// equation.
pub fn companion_stieltjes_deriv(z: f64, params: &MpParams) -> Result<f64> {
    let m = companion_stieltjes(z, params)?;
    let denom = 2.0 * z * m + z + 1.0 - params.gamma;
    Ok(-(m * m + m) / denom)
}

/// Weight applied inside a resolvent moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    /// `w(x) = 1`
    One,
    /// `w(x) = x`
    X,
}

/// `∫ w(x) (z − x)⁻ᵏ 𝖥_γ(dx)` for `k ∈ {1, 2}`.
pub fn resolvent_moment(z: f64, k: u32, weight: Weight, params: &MpParams) -> Result<f64> {
    if !(1..=2).contains(&k) {
        return Err(Error::Domain(format!("resolvent moment order k = {k} not supported (k ∈ {{1, 2}})")));
    }
    let m = companion_stieltjes(z, params)?;
    let value = match (weight, k) {
        (Weight::One, 1) => -m,
        (Weight::One, _) => companion_stieltjes_deriv(z, params)?,
        // x/(z−x) = z/(z−x) − 1
        (Weight::X, 1) => -z * m - 1.0,
        // x/(z−x)² = z/(z−x)² − 1/(z−x)
        (Weight::X, _) => z * companion_stieltjes_deriv(z, params)? + m,
    };
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_edges() {
        let s = mp_support(&MpParams::new(1.0).unwrap());
        assert_eq!(s, (0.0, 4.0));
        let s = mp_support(&MpParams::new(0.25).unwrap());
        assert_close!(s.0, 0.25, 1e-15);
        assert_close!(s.1, 2.25, 1e-15);
        let s = mp_support(&MpParams::new(4.0).unwrap());
        assert_close!(s.0, 1.0, 1e-15);
        assert_close!(s.1, 9.0, 1e-15);
    }

    #[test]
    fn rejects_bad_gamma() {
        assert!(MpParams::new(0.0).is_err());
        assert!(MpParams::new(-1.0).is_err());
        assert!(MpParams::new(f64::NAN).is_err());
    }

    #[test]
    fn density_values() {
        let p = MpParams::new(1.0).unwrap();
        assert_eq!(mp_density(-0.5, &p), 0.0);
        assert_eq!(mp_density(4.5, &p), 0.0);
        assert_close!(mp_density(2.0, &p), 1.0 / (2.0 * PI), 1e-15);
    }

    #[test]
    fn atoms() {
        let p = MpParams::new(4.0).unwrap();
        assert_close!(p.atom().mass, 0.75, 1e-15);
        assert_eq!(p.companion_atom().mass, 0.0);
        let p = MpParams::new(0.25).unwrap();
        assert_eq!(p.atom().mass, 0.0);
        assert_close!(p.companion_atom().mass, 0.75, 1e-15);
    }

    #[test]
    fn stieltjes_hand_solved_root() {
        // 4.5m² + 4.5m + 1 = 0 has roots −1/3 and −2/3.
        let p = MpParams::new(1.0).unwrap();
        assert_close!(companion_stieltjes(4.5, &p).unwrap(), -1.0 / 3.0, 1e-15);
    }

    #[test]
    fn stieltjes_near_edge_and_far_tail() {
        for gamma in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let p = MpParams::new(gamma).unwrap();
            let m = companion_stieltjes(p.upper_edge() + 1e-8, &p).unwrap();
            assert_close!(m, -1.0 / (1.0 + gamma.sqrt()), 1e-3);
        }
        let p = MpParams::new(0.5).unwrap();
        let m = companion_stieltjes(1e6, &p).unwrap();
        assert_close!(m * 1e6, -1.0, 1e-5);
    }

    #[test]
    fn stieltjes_rejects_bulk() {
        let p = MpParams::new(0.5).unwrap();
        let b = p.upper_edge();
        assert!(companion_stieltjes(b, &p).is_err());
        assert!(companion_stieltjes(b + 1e-10, &p).is_err());
        assert!(companion_stieltjes(1.0, &p).is_err());
        assert!(companion_stieltjes_deriv(b, &p).is_err());
    }

    #[test]
    fn derivative_matches_spike_identity() {
        // m'(ρ) = 1/(ℓ² ρ̇) with ℓ = 3, γ = 1, ρ = 4.5, ρ̇ = 0.75.
        let p = MpParams::new(1.0).unwrap();
        assert_close!(companion_stieltjes_deriv(4.5, &p).unwrap(), 1.0 / 6.75, 1e-14);
        let far = companion_stieltjes_deriv(1e5, &p).unwrap();
        assert!(far > 0.0);
        assert_close!(far * 1e10, 1.0, 1e-4);
    }

    #[test]
    fn resolvent_moments() {
        let p = MpParams::new(1.0).unwrap();
        // ∫(ρ − x)⁻¹ = 1/ℓ at ρ = ρ(3, 1) = 4.5
        assert_close!(resolvent_moment(4.5, 1, Weight::One, &p).unwrap(), 1.0 / 3.0, 1e-14);
        // c(ρ) = γ/((ℓ−1)² − γ) = 1/3
        assert_close!(resolvent_moment(4.5, 2, Weight::X, &p).unwrap(), 1.0 / 3.0, 1e-14);
        let z = 1e7;
        let tail = resolvent_moment(z, 1, Weight::X, &p).unwrap();
        assert_close!(tail * z, 1.0, 1e-5);
        assert!(resolvent_moment(4.5, 3, Weight::One, &p).is_err());
        assert!(resolvent_moment(4.5, 0, Weight::X, &p).is_err());
    }

    #[test]
    fn mp_equation_residual_and_monotonicity() {
        for gamma in [0.1, 0.5, 1.0, 3.0] {
            let p = MpParams::new(gamma).unwrap();
            let b = p.upper_edge();
            let mut prev = f64::NEG_INFINITY;
            for i in 0..200 {
                let z = b + 1e-6 + 0.05 * i as f64 * (1.0 + i as f64);
                let m = companion_stieltjes(z, &p).unwrap();
                let resid = z * m * m + (z + 1.0 - gamma) * m + 1.0;
                assert!(resid.abs() <= 1e-12, "residual {resid} at z = {z}");
                assert!(m > -1.0 / (1.0 + gamma.sqrt()) && m < 0.0);
                assert!(m > prev);
                prev = m;
            }
        }
    }
}
