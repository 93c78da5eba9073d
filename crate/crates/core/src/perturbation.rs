//! First-order eigenvector perturbation for symmetric matrices.
//!
//! With eigenvalues of `A` sorted descending, `p_r(A)` the unit eigenvector
//! of the simple eigenvalue `λ_r` and `P_s` the remaining eigenprojections,
//! the reduced resolvent is `H_r(A) = Σ_{s≠r}(λ_s − λ_r)⁻¹P_s`. If
//! `‖B‖ < δ_r(A)/3`, where `δ_r` is the gap from `λ_r` to the rest of the
//! spectrum, then
//!
//! ```text
//! p_r(A + B) = p_r(A) − H_r(A)B p_r(A) + R_r,   ‖R_r‖ ≤ 10 δ_r⁻² ‖B‖²
//! ```
//!
//! with `p_r(A + B)` signed so that `p_r(A)ᵀp_r(A + B) ≥ 0`. Indices here
//! are 0-based.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen_desc;
use crate::rng::stream;
use crate::serde_matrix;
use crate::stats::median;

/// Eigenvalues within this multiple of `‖A‖` are treated as equal.
pub const COINCIDENCE_TOL: f64 = 1e-10;

/// Constant in the remainder bound.
pub const BOUND_CONSTANT: f64 = 10.0;

/// Smallest accepted median of `‖R_r(B)‖/‖R_r(B/2)‖`; exact quadratic
/// order gives 4.
pub const MIN_HALVING_RATIO: f64 = 3.5;

fn check_square(a: &DMatrix<f64>, name: &str) -> Result<()> {
    if !a.is_square() || a.nrows() == 0 {
        return Err(Error::DimensionMismatch(format!("{name} must be square and non-empty, got {:?}", a.shape())));
    }
    Ok(())
}

struct Spectral {
    values: Vec<f64>,
    vectors: DMatrix<f64>,
    norm: f64,
}

impl Spectral {
    fn of(a: &DMatrix<f64>) -> Self {
        let (values, vectors) = symmetric_eigen_desc(&((a + a.transpose()) * 0.5));
        let norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        Self { values, vectors, norm }
    }

    /// `δ_r = min_{s≠r} |λ_s − λ_r|`; infinite for a 1 × 1 matrix.
    fn gap(&self, r: usize) -> f64 {
        self.values
            .iter()
            .enumerate()
            .filter(|&(s, _)| s != r)
            .map(|(_, v)| (v - self.values[r]).abs())
            .fold(f64::INFINITY, f64::min)
    }

    fn require_simple(&self, r: usize) -> Result<f64> {
        let len = self.values.len();
        if r >= len {
            return Err(Error::IndexOutOfRange { index: r, len });
        }
        let gap = self.gap(r);
        if gap <= COINCIDENCE_TOL * self.norm.max(f64::MIN_POSITIVE) {
            return Err(Error::DegenerateEigenvalue { index: r, gap });
        }
        Ok(gap)
    }

    fn reduced_resolvent(&self, r: usize) -> DMatrix<f64> {
        let d = self.values.len();
        let tol = COINCIDENCE_TOL * self.norm;
        let lambda_r = self.values[r];
        let mut h = DMatrix::zeros(d, d);
        let others: Vec<usize> = (0..d).filter(|&s| s != r).collect();
        let mut i = 0;
        while i < others.len() {
            // eigenvalues are sorted, so coincident ones are adjacent
            let mut group = vec![others[i]];
            while i + 1 < others.len() && (self.values[others[i]] - self.values[others[i + 1]]).abs() <= tol {
                i += 1;
                group.push(others[i]);
            }
            let lambda = group.iter().map(|&s| self.values[s]).sum::<f64>() / group.len() as f64;
            let coef = 1.0 / (lambda - lambda_r);
            for &s in &group {
                let v = self.vectors.column(s);
                h.ger(coef, &v, &v, 1.0);
            }
            i += 1;
        }
        h
    }
}

/// `H_r(A) = Σ_{s≠r}(λ_s − λ_r)⁻¹P_s(A)`.
pub fn reduced_resolvent(a: &DMatrix<f64>, r: usize) -> Result<DMatrix<f64>> {
    check_square(a, "A")?;
    let spec = Spectral::of(a);
    spec.require_simple(r)?;
    Ok(spec.reduced_resolvent(r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationResult {
    pub r: usize,
    /// `p_r(A) − H_r(A)B p_r(A)`
    #[serde(serialize_with = "serde_matrix::serialize_vector")]
    pub first_order_vec: DVector<f64>,
    /// `p_r(A + B)`, sign-aligned with `p_r(A)`.
    #[serde(serialize_with = "serde_matrix::serialize_vector")]
    pub exact_vec: DVector<f64>,
    /// `‖p_r(A + B) − first_order_vec‖`
    pub remainder_norm: f64,
    /// `10·δ_r(A)⁻²·‖B‖²`
    pub bound: f64,
    pub delta_r: f64,
    pub b_norm: f64,
    /// `‖B‖ < δ_r(A)/3`
    pub applicable: bool,
}

impl PerturbationResult {
    /// `‖R_r‖·δ_r²/‖B‖²`, the constant the bound claims is at most 10.
    pub fn constant(&self) -> f64 {
        self.remainder_norm * self.delta_r * self.delta_r / (self.b_norm * self.b_norm)
    }

    pub fn violates_bound(&self) -> bool {
        self.applicable && self.remainder_norm > self.bound
    }
}

/// Compare the first-order eigenvector update with the exact eigenvector
/// of `A + B`.
pub fn first_order_eigvec(a: &DMatrix<f64>, b: &DMatrix<f64>, r: usize) -> Result<PerturbationResult> {
    check_square(a, "A")?;
    if b.shape() != a.shape() {
        return Err(Error::DimensionMismatch(format!("A is {:?} but B is {:?}", a.shape(), b.shape())));
    }
    let sa = Spectral::of(a);
    let delta_r = sa.require_simple(r)?;
    let h = sa.reduced_resolvent(r);
    let p_r = sa.vectors.column(r).into_owned();
    let first_order_vec = &p_r - &h * (b * &p_r);

    let sab = Spectral::of(&(a + b));
    let mut exact_vec = sab.vectors.column(r).into_owned();
    if p_r.dot(&exact_vec) < 0.0 {
        exact_vec.neg_mut();
    }
    let b_norm = Spectral::of(b).norm;
    Ok(PerturbationResult {
        r,
        remainder_norm: (&exact_vec - &first_order_vec).norm(),
        first_order_vec,
        exact_vec,
        bound: BOUND_CONSTANT * b_norm * b_norm / (delta_r * delta_r),
        delta_r,
        b_norm,
        applicable: b_norm < delta_r / 3.0,
    })
}

/// Random-trial check of the remainder bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzConfig {
    pub trials: usize,
    /// Matrix dimensions, cycled over trials.
    pub dims: Vec<usize>,
    /// `‖B‖/δ_r`
    pub gap_ratio: f64,
    pub seed: u64,
}

impl Default for FuzzConfig {
    fn default() -> Self {
        Self { trials: 10_000, dims: (2..=8).collect(), gap_ratio: 0.25, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FuzzReport {
    pub config: FuzzConfig,
    pub applicable: usize,
    pub violations: usize,
    /// Largest `‖R_r‖·δ_r²/‖B‖²` seen among applicable trials.
    pub max_constant: f64,
    /// Median of `‖R_r(B)‖/‖R_r(B/2)‖` over applicable trials.
    pub median_halving_ratio: f64,
}

impl FuzzReport {
    /// No bound violations and quadratic decay under `B → B/2`. Vacuous when
    /// no trial is applicable.
    pub fn pass(&self) -> bool {
        self.applicable == 0 || (self.violations == 0 && self.median_halving_ratio >= MIN_HALVING_RATIO)
    }
}

fn random_symmetric<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut *rng));
    (&g + g.transpose()) * 0.5
}

fn random_orthogonal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut *rng)).qr().q()
}

/// One fuzz case: `(A, B, r)` with `‖B‖ = gap_ratio·δ_r(A)`.
pub fn fuzz_case(dim: usize, gap_ratio: f64, seed: u64, trial: u64) -> (DMatrix<f64>, DMatrix<f64>, usize) {
    let mut rng = stream(seed, trial, "perturbation");
    // spectrum with spacings in [0.05, 1) so every eigenvalue is simple
    let mut level = rng.random_range(-2.0..2.0);
    let mut vals = Vec::with_capacity(dim);
    for _ in 0..dim {
        vals.push(level);
        level -= rng.random_range(0.05..1.0);
    }
    let q = random_orthogonal(dim, &mut rng);
    let a = &q * DMatrix::from_diagonal(&DVector::from_vec(vals.clone())) * q.transpose();
    let r = rng.random_range(0..dim);
    let delta = (0..dim).filter(|&s| s != r).map(|s| (vals[s] - vals[r]).abs()).fold(f64::INFINITY, f64::min);
    let mut b = random_symmetric(dim, &mut rng);
    if dim > 1 {
        let b_norm = Spectral::of(&b).norm;
        b *= gap_ratio * delta / b_norm;
    } else {
        b *= gap_ratio;
    }
    (a, b, r)
}

/// Run the fuzz harness.
pub fn fuzz(config: &FuzzConfig) -> Result<FuzzReport> {
    if config.dims.is_empty() || config.dims.iter().any(|&d| d < 2) {
        return Err(Error::Config(format!("fuzz dims must be non-empty and at least 2, got {:?}", config.dims)));
    }
    if !(config.gap_ratio.is_finite() && config.gap_ratio > 0.0) {
        return Err(Error::Config(format!("gap ratio must be positive, got {}", config.gap_ratio)));
    }
    let mut applicable = 0;
    let mut violations = 0;
    let mut max_constant = 0.0f64;
    let mut ratios = Vec::with_capacity(config.trials);
    for trial in 0..config.trials {
        let dim = config.dims[trial % config.dims.len()];
        let (a, b, r) = fuzz_case(dim, config.gap_ratio, config.seed, trial as u64);
        let full = first_order_eigvec(&a, &b, r)?;
        let half = first_order_eigvec(&a, &(&b * 0.5), r)?;
        if full.applicable {
            applicable += 1;
            violations += usize::from(full.violates_bound());
            max_constant = max_constant.max(full.constant());
            let ratio = full.remainder_norm / half.remainder_norm;
            if ratio.is_finite() {
                ratios.push(ratio);
            }
        }
    }
    Ok(FuzzReport {
        config: config.clone(),
        applicable,
        violations,
        max_constant,
        median_halving_ratio: median(&ratios),
    })
}
