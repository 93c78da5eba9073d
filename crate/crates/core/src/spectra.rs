//! Sample eigenstructure of one dataset and the Schur-complement view of it.
//!
//! Partition `S = n⁻¹XXᵀ` into the signal block `S₁₁` (`m × m`), the noise
//! block `S₂₂` (`p × p`) and the cross block `S₂₁`. For `t` above the
//! noise spectrum,
//!
//! ```text
//! K(t) = S₁₁ + S₁₂(tI − S₂₂)⁻¹S₂₁ = n⁻¹X₁·t(tI − C)⁻¹·X₁ᵀ
//! Q(t) = S₁₂(tI − S₂₂)⁻²S₂₁     = n⁻¹X₁·C(tI − C)⁻²·X₁ᵀ
//! ```
//!
//! with `C = n⁻¹X₂ᵀX₂`. An outlier `ℓ̂` solves `det(K(ℓ̂) − ℓ̂I) = 0`, and
//! the signal part `u` of its eigenvector satisfies
//! `aᵀ(I + Q(ℓ̂))a = ‖u‖⁻²` with `a = u/‖u‖`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen_desc, top_eigenpairs, CrossProduct, LanczosOptions, SymmetricOperator};
use crate::model_gen::{Dataset, PopulationAxes};

/// Relative separation required between `t` and the top noise eigenvalue.
pub const RESOLVENT_GUARD: f64 = 1e-8;

/// Residual bound, relative to `‖S‖`, for accepting a computed eigenpair.
pub const EIGEN_RESIDUAL_TOL: f64 = 1e-8;

/// Which matrix the top eigenpairs were extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenRoute {
    /// `S` itself, `(m + p) × (m + p)`.
    Direct,
    /// The companion Gram matrix `n⁻¹XᵀX`, `n × n`.
    Gram,
}

/// Top-`m` sample eigenpairs and their signal/noise split.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSpectrum {
    /// `ℓ̂₁ ≥ … ≥ ℓ̂_m`
    pub ell_hats: Vec<f64>,
    /// Signal blocks `u_ν` of the unit sample eigenvectors, sign-fixed so
    /// that `p_νᵀu_ν ≥ 0`.
    pub u_vecs: Vec<DVector<f64>>,
    /// `‖v_ν‖²` for the noise blocks.
    pub v_norm2s: Vec<f64>,
    /// `a_ν = u_ν/‖u_ν‖`
    pub a_vecs: Vec<DVector<f64>>,
    /// `⟨𝔲_ν, 𝔭_ν⟩² = (p_νᵀu_ν)²`
    pub cosines2: Vec<f64>,
    /// Largest eigenvalue of `S₂₂`; `None` when `p = 0` or not computed.
    pub mu1: Option<f64>,
    pub gamma_n: f64,
    /// `‖S𝔲_ν − ℓ̂_ν𝔲_ν‖`
    pub residuals: Vec<f64>,
    pub route: EigenRoute,
}

impl SampleSpectrum {
    pub fn u_norm2(&self, nu: usize) -> f64 {
        self.u_vecs[nu].norm_squared()
    }
}

/// How [`decompose_with`] obtains `μ₁`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseTop {
    Compute,
    Known(f64),
    Skip,
}

fn noise_top_options() -> LanczosOptions {
    LanczosOptions { tol: 1e-10, ..LanczosOptions::default() }
}

/// Largest eigenvalue of `S₂₂ = n⁻¹X₂X₂ᵀ` (equivalently of `C`).
pub fn noise_top(data: &Dataset) -> Option<f64> {
    if data.p() == 0 {
        return None;
    }
    let scale = 1.0 / data.n() as f64;
    let x2 = data.x2();
    let top = if data.p() <= data.n() {
        top_eigenpairs(&CrossProduct::outer(x2, scale), 1, &noise_top_options())
    } else {
        top_eigenpairs(&CrossProduct::inner(x2, scale), 1, &noise_top_options())
    };
    Some(top.values[0])
}

/// Top-`m` eigenstructure of `S`, with `μ₁` computed.
pub fn decompose(data: &Dataset, axes: &PopulationAxes) -> Result<SampleSpectrum> {
    decompose_with(data, axes, NoiseTop::Compute)
}

pub fn decompose_with(data: &Dataset, axes: &PopulationAxes, noise: NoiseTop) -> Result<SampleSpectrum> {
    let (m, p, n) = (data.m(), data.p(), data.n());
    if axes.p.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!("axes are {:?} for m = {m}", axes.p.shape())));
    }
    if m > n {
        return Err(Error::TooFewSamples { n, min: m });
    }
    let x = data.x().as_view();
    let scale = 1.0 / n as f64;
    let opts = LanczosOptions::default();
    let s_op = CrossProduct::outer(x, scale);

    let (route, values, mut vectors) = if m + p <= n {
        let top = top_eigenpairs(&s_op, m, &opts);
        (EigenRoute::Direct, top.values, top.vectors)
    } else {
        let top = top_eigenpairs(&CrossProduct::inner(x, scale), m, &opts);
        let mut u = data.x() * &top.vectors;
        for mut c in u.column_iter_mut() {
            let norm = c.norm();
            c /= norm;
        }
        (EigenRoute::Gram, top.values, u)
    };

    let s_norm = values[0].abs();
    let mut residuals = Vec::with_capacity(m);
    let mut y = DVector::zeros(m + p);
    for (nu, &ell) in values.iter().enumerate() {
        let v = vectors.column(nu).into_owned();
        s_op.apply(&v, &mut y);
        let r = (&y - &v * ell).norm();
        if !(r <= EIGEN_RESIDUAL_TOL * s_norm) {
            return Err(Error::EigenSolver {
                replicate: data.replicate(),
                message: format!("eigenpair {nu} residual {r:e} exceeds {EIGEN_RESIDUAL_TOL:e}·‖S‖ = {:e}", EIGEN_RESIDUAL_TOL * s_norm),
            });
        }
        residuals.push(r);
    }

    let mut u_vecs = Vec::with_capacity(m);
    let mut a_vecs = Vec::with_capacity(m);
    let mut v_norm2s = Vec::with_capacity(m);
    let mut cosines2 = Vec::with_capacity(m);
    for nu in 0..m {
        let mut col = vectors.column_mut(nu);
        let proj = axes.p.column(nu).dot(&col.rows(0, m));
        if proj < 0.0 {
            col.neg_mut();
        }
        let u = col.rows(0, m).into_owned();
        let v_norm2 = col.rows(m, p).norm_squared();
        let u_norm = u.norm();
        a_vecs.push(if u_norm > 0.0 { &u / u_norm } else { u.clone() });
        cosines2.push(proj * proj);
        v_norm2s.push(v_norm2);
        u_vecs.push(u);
    }

    let mu1 = match noise {
        NoiseTop::Compute => noise_top(data),
        NoiseTop::Known(v) => Some(v),
        NoiseTop::Skip => None,
    };
    Ok(SampleSpectrum {
        ell_hats: values,
        u_vecs,
        v_norm2s,
        a_vecs,
        cosines2,
        mu1,
        gamma_n: data.gamma_n(),
        residuals,
        route,
    })
}

/// Which side of the Woodbury identity evaluates the resolvent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ResolventRoute {
    /// The smaller of the two.
    #[default]
    Auto,
    /// `(tI − S₂₂)⁻¹`, `p × p`.
    Noise,
    /// `(tI − C)⁻¹`, `n × n`.
    Gram,
}

enum Blocks {
    Empty,
    Noise { s21: DMatrix<f64>, s22: DMatrix<f64> },
    Gram { x1t: DMatrix<f64>, x2: DMatrix<f64>, c: DMatrix<f64> },
}

/// `K(t)`, `Q(t)` and `tr Bₙ(t)` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct SchurEval {
    pub t: f64,
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// Precomputed blocks of `S` for repeated resolvent evaluations on one
/// dataset.
pub struct SchurContext {
    n: usize,
    p: usize,
    s11: DMatrix<f64>,
    blocks: Blocks,
    mu1: Option<f64>,
}

impl SchurContext {
    /// Builds the blocks and computes `μ₁`.
    pub fn new(data: &Dataset, route: ResolventRoute) -> Self {
        let mut ctx = Self::build(data, route);
        ctx.mu1 = match &ctx.blocks {
            Blocks::Empty => None,
            Blocks::Noise { s22, .. } => Some(top_eigenpairs(s22, 1, &noise_top_options()).values[0]),
            Blocks::Gram { c, .. } => Some(top_eigenpairs(c, 1, &noise_top_options()).values[0]),
        };
        ctx
    }

    /// Builds the blocks, taking `μ₁` from the caller.
    pub fn with_mu1(data: &Dataset, route: ResolventRoute, mu1: Option<f64>) -> Self {
        let mut ctx = Self::build(data, route);
        ctx.mu1 = if data.p() == 0 { None } else { mu1 };
        ctx
    }

    fn build(data: &Dataset, route: ResolventRoute) -> Self {
        let (p, n) = (data.p(), data.n());
        let nf = n as f64;
        let x1 = data.x1();
        let s11 = x1 * x1.transpose() / nf;
        let use_noise = match route {
            ResolventRoute::Auto => p <= n,
            ResolventRoute::Noise => true,
            ResolventRoute::Gram => false,
        };
        let blocks = if p == 0 {
            Blocks::Empty
        } else if use_noise {
            let x2 = data.x2();
            Blocks::Noise { s21: x2 * x1.transpose() / nf, s22: x2 * x2.transpose() / nf }
        } else {
            let x2 = data.x2().into_owned();
            let c = x2.transpose() * &x2 / nf;
            Blocks::Gram { x1t: x1.transpose(), x2, c }
        };
        Self { n, p, s11, blocks, mu1: None }
    }

    pub fn mu1(&self) -> Option<f64> {
        self.mu1
    }

    fn factor(&self, t: f64, a: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
        let mu1 = self.mu1.unwrap_or(f64::NAN);
        if let Some(mu1) = self.mu1 {
            if !(t - mu1 > RESOLVENT_GUARD * t.abs()) {
                return Err(Error::ResolventDomain { t, mu1 });
            }
        }
        let shifted = DMatrix::from_diagonal_element(a.nrows(), a.ncols(), t) - a;
        Cholesky::new(shifted).ok_or(Error::ResolventDomain { t, mu1 })
    }

    /// `K(t)` and `Q(t)` from a single factorization of the shifted noise
    /// block.
    pub fn evaluate(&self, t: f64) -> Result<SchurEval> {
        let m = self.s11.nrows();
        match &self.blocks {
            Blocks::Empty => Ok(SchurEval { t, k: self.s11.clone(), q: DMatrix::zeros(m, m) }),
            Blocks::Noise { s21, s22 } => {
                let chol = self.factor(t, s22)?;
                let w = chol.l_dirty().solve_lower_triangular(s21).expect("nonsingular factor");
                let z = chol.solve(s21);
                Ok(SchurEval { t, k: &self.s11 + w.transpose() * &w, q: z.transpose() * &z })
            }
            Blocks::Gram { x1t, x2, c } => {
                let nf = self.n as f64;
                let chol = self.factor(t, c)?;
                let w = chol.l_dirty().solve_lower_triangular(x1t).expect("nonsingular factor");
                let z = chol.solve(x1t);
                let xz = x2 * z;
                Ok(SchurEval { t, k: w.transpose() * &w * (t / nf), q: xz.transpose() * xz / (nf * nf) })
            }
        }
    }

    /// `tr Bₙ(t) = tr t(tI − C)⁻¹`.
    pub fn trace_b(&self, t: f64) -> Result<f64> {
        let nf = self.n as f64;
        let inv_trace = |chol: Cholesky<f64, Dyn>, d: usize| {
            let linv = chol.l_dirty().solve_lower_triangular(&DMatrix::identity(d, d)).expect("nonsingular factor");
            linv.norm_squared()
        };
        match &self.blocks {
            Blocks::Empty => Ok(nf),
            Blocks::Noise { s22, .. } => {
                let tr = inv_trace(self.factor(t, s22)?, self.p);
                Ok(t * tr + nf - self.p as f64)
            }
            Blocks::Gram { c, .. } => Ok(t * inv_trace(self.factor(t, c)?, self.n)),
        }
    }
}

/// `K(t) = S₁₁ + S₁₂(tI − S₂₂)⁻¹S₂₁`.
pub fn schur_k(data: &Dataset, t: f64) -> Result<DMatrix<f64>> {
    Ok(SchurContext::new(data, ResolventRoute::Auto).evaluate(t)?.k)
}

/// `Q(t) = S₁₂(tI − S₂₂)⁻²S₂₁`.
pub fn q_matrix(data: &Dataset, t: f64) -> Result<DMatrix<f64>> {
    Ok(SchurContext::new(data, ResolventRoute::Auto).evaluate(t)?.q)
}

/// Exact-algebra diagnostics for one outlier.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub nu: usize,
    /// `|det(K(ℓ̂) − ℓ̂I)| / ‖K(ℓ̂)‖ᵐ`
    pub det_rel: f64,
    /// `|aᵀ(I + Q(ℓ̂))a − ‖u‖⁻²| / ‖u‖⁻²`
    pub q_rel: f64,
}

/// Evaluate both identities at `ℓ̂_ν` for each index in `nus`.
pub fn identity_checks(ctx: &SchurContext, spectrum: &SampleSpectrum, nus: &[usize]) -> Result<Vec<IdentityCheck>> {
    nus.iter()
        .map(|&nu| {
            let len = spectrum.ell_hats.len();
            if nu >= len {
                return Err(Error::IndexOutOfRange { index: nu, len });
            }
            let t = spectrum.ell_hats[nu];
            let eval = ctx.evaluate(t)?;
            let m = eval.k.nrows();
            let (kvals, _) = symmetric_eigen_desc(&eval.k);
            let k_norm = kvals.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            let shifted = &eval.k - DMatrix::from_diagonal_element(m, m, t);
            let det = shifted.lu().determinant();
            let a = &spectrum.a_vecs[nu];
            let lhs = a.norm_squared() + a.dot(&(&eval.q * a));
            let rhs = 1.0 / spectrum.u_norm2(nu);
            Ok(IdentityCheck { nu, det_rel: det.abs() / k_norm.powi(m as i32), q_rel: (lhs - rhs).abs() / rhs })
        })
        .collect()
}

/// Weight matrix `Bₙ` of a quadratic form `n⁻¹X₁BₙX₁ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub enum QuadForm {
    Identity,
    /// `Bₙ(t) = t(tI − C)⁻¹`
    Resolvent(f64),
    /// An explicit `n × n` matrix.
    Custom(DMatrix<f64>),
    /// `Bₙ = √n·eeᵀ` with `e = n^{−1/2}·𝟏`; violates the operator-norm
    /// bound the bilinear CLT needs.
    Onatski,
}

/// `n⁻¹X₁BₙX₁ᵀ − n⁻¹(tr Bₙ)Σ`.
pub fn quadform_residual(data: &Dataset, sigma: &DMatrix<f64>, form: &QuadForm) -> Result<DMatrix<f64>> {
    quadform_residual_in(&SchurContext::new(data, ResolventRoute::Auto), data, sigma, form)
}

/// [`quadform_residual`] reusing a prepared context.
pub fn quadform_residual_in(ctx: &SchurContext, data: &Dataset, sigma: &DMatrix<f64>, form: &QuadForm) -> Result<DMatrix<f64>> {
    let (m, n) = (data.m(), data.n());
    if sigma.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!("sigma is {:?} for m = {m}", sigma.shape())));
    }
    let nf = n as f64;
    let x1 = data.x1();
    let (form_value, trace) = match form {
        QuadForm::Identity => (&ctx.s11 * 1.0, nf),
        QuadForm::Resolvent(t) => (ctx.evaluate(*t)?.k, ctx.trace_b(*t)?),
        QuadForm::Custom(b) => {
            if b.shape() != (n, n) {
                return Err(Error::DimensionMismatch(format!("B is {:?}, expected ({n}, {n})", b.shape())));
            }
            (x1 * b * x1.transpose() / nf, b.trace())
        }
        QuadForm::Onatski => {
            let root_n = nf.sqrt();
            let xe = x1.column_sum() / root_n;
            (&xe * xe.transpose() * (root_n / nf), root_n)
        }
    };
    Ok(form_value - sigma * (trace / nf))
}
