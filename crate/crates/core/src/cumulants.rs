//! Fourth-order cumulant tensors of the signal vector and their
//! contractions against population eigenvectors.
//!
//! For a centered vector `ξ` with covariance `σ`,
//!
//! ```text
//! κ_{jklm} = 𝔼[ξ_j ξ_k ξ_l ξ_m] − σ_{jk}σ_{lm} − σ_{jl}σ_{km} − σ_{jm}σ_{kl}
//! ```
//!
//! Contractions use the `p_{μ,i}` notation for the `i`-th component of the
//! `μ`-th population eigenvector, i.e. `axes[(i, μ)]`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model_gen::SignalDistribution;

/// Dense, fully symmetric `m × m × m × m` array.
#[derive(Debug, Clone, PartialEq)]
pub struct CumulantTensor {
    m: usize,
    data: Vec<f64>,
}

impl CumulantTensor {
    pub fn zeros(m: usize) -> Self {
        Self { m, data: vec![0.0; m.pow(4)] }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    fn offset(&self, i: usize, j: usize, k: usize, l: usize) -> usize {
        ((i * self.m + j) * self.m + k) * self.m + l
    }

    pub fn get(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.data[self.offset(i, j, k, l)]
    }

    /// Set an entry and all of its permutations.
    fn set_symmetric(&mut self, idx: [usize; 4], value: f64) {
        for perm in PERMUTATIONS {
            let o = self.offset(idx[perm[0]], idx[perm[1]], idx[perm[2]], idx[perm[3]]);
            self.data[o] = value;
        }
    }

    /// Largest deviation between an entry and any permutation of it.
    pub fn symmetry_defect(&self) -> f64 {
        let m = self.m;
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in 0..m {
                for k in 0..m {
                    for l in 0..m {
                        let idx = [i, j, k, l];
                        let v = self.get(i, j, k, l);
                        for perm in PERMUTATIONS {
                            let w = self.get(idx[perm[0]], idx[perm[1]], idx[perm[2]], idx[perm[3]]);
                            worst = worst.max((v - w).abs());
                        }
                    }
                }
            }
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |a, &v| a.max(v.abs()))
    }

    fn check_axes(&self, axes: &DMatrix<f64>) -> Result<()> {
        if axes.shape() != (self.m, self.m) {
            return Err(Error::DimensionMismatch(format!(
                "axes are {:?} but the tensor has m = {}",
                axes.shape(),
                self.m
            )));
        }
        Ok(())
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.m {
            return Err(Error::IndexOutOfRange { index, len: self.m });
        }
        Ok(())
    }

    /// `Σ_{ijkl} a_i b_j c_k d_l κ_{ijkl}`
    pub fn contract_vectors(&self, a: &[f64], b: &[f64], c: &[f64], d: &[f64]) -> f64 {
        let m = self.m;
        let mut total = 0.0;
        for i in 0..m {
            for j in 0..m {
                let ab = a[i] * b[j];
                if ab == 0.0 {
                    continue;
                }
                for k in 0..m {
                    let abc = ab * c[k];
                    if abc == 0.0 {
                        continue;
                    }
                    let base = self.offset(i, j, k, 0);
                    let row = &self.data[base..base + m];
                    total += abc * row.iter().zip(d).map(|(x, y)| x * y).sum::<f64>();
                }
            }
        }
        total
    }

    /// `[𝒫^{μμ′νν′}, κ]`; the case `μ = μ′ = ν = ν′` is `[𝒫ᵛ, κ]`.
    pub fn contract(&self, axes: &DMatrix<f64>, mu: usize, mu_p: usize, nu: usize, nu_p: usize) -> Result<f64> {
        self.check_axes(axes)?;
        for idx in [mu, mu_p, nu, nu_p] {
            self.check_index(idx)?;
        }
        let col = |c: usize| axes.column(c).iter().copied().collect::<Vec<_>>();
        Ok(self.contract_vectors(&col(mu), &col(mu_p), &col(nu), &col(nu_p)))
    }

    /// `Kᵛ_{jj′} = Σ_{k,k′} p_{ν,k} p_{ν,k′} κ_{jj′kk′}`
    pub fn k_matrix(&self, axes: &DMatrix<f64>, nu: usize) -> Result<DMatrix<f64>> {
        self.check_axes(axes)?;
        self.check_index(nu)?;
        let m = self.m;
        let p_nu = axes.column(nu);
        Ok(DMatrix::from_fn(m, m, |j, jp| {
            let mut s = 0.0;
            for k in 0..m {
                for kp in 0..m {
                    s += p_nu[k] * p_nu[kp] * self.get(j, jp, k, kp);
                }
            }
            s
        }))
    }

    /// The `m × m` matrix of `[𝒫^{μμ′νν}, κ] = p_μᵀ Kᵛ p_μ′`.
    pub fn contraction_matrix(&self, axes: &DMatrix<f64>, nu: usize) -> Result<DMatrix<f64>> {
        let k = self.k_matrix(axes, nu)?;
        Ok(axes.transpose() * k * axes)
    }
}

const PERMUTATIONS: [[usize; 4]; 24] = [
    [0, 1, 2, 3], [0, 1, 3, 2], [0, 2, 1, 3], [0, 2, 3, 1], [0, 3, 1, 2], [0, 3, 2, 1],
    [1, 0, 2, 3], [1, 0, 3, 2], [1, 2, 0, 3], [1, 2, 3, 0], [1, 3, 0, 2], [1, 3, 2, 0],
    [2, 0, 1, 3], [2, 0, 3, 1], [2, 1, 0, 3], [2, 1, 3, 0], [2, 3, 0, 1], [2, 3, 1, 0],
    [3, 0, 1, 2], [3, 0, 2, 1], [3, 1, 0, 2], [3, 1, 2, 0], [3, 2, 0, 1], [3, 2, 1, 0],
];

/// Index tuples `i ≤ j ≤ k ≤ l`.
fn sorted_tuples(m: usize) -> impl Iterator<Item = [usize; 4]> {
    (0..m).flat_map(move |i| {
        (i..m).flat_map(move |j| (j..m).flat_map(move |k| (k..m).map(move |l| [i, j, k, l])))
    })
}

/// `σ_{ij}σ_{kl} + σ_{ik}σ_{jl} + σ_{il}σ_{jk}`
fn pair_products(sigma: &DMatrix<f64>, [i, j, k, l]: [usize; 4]) -> f64 {
    sigma[(i, j)] * sigma[(k, l)] + sigma[(i, k)] * sigma[(j, l)] + sigma[(i, l)] * sigma[(j, k)]
}

/// Exact cumulant tensor of `ξ` for the supported signal laws, given the
/// population eigenvectors `axes` (columns) and eigenvalues `ells`.
pub fn exact_tensor(dist: &SignalDistribution, axes: &DMatrix<f64>, ells: &[f64]) -> Result<CumulantTensor> {
    let m = ells.len();
    if axes.shape() != (m, m) {
        return Err(Error::DimensionMismatch(format!("axes are {:?} for {m} spikes", axes.shape())));
    }
    let mut t = CumulantTensor::zeros(m);
    match *dist {
        SignalDistribution::Gaussian => {}
        SignalDistribution::IidFactors { factor } => {
            let k4 = factor.kappa4();
            for idx in sorted_tuples(m) {
                let v: f64 = (0..m)
                    .map(|a| ells[a] * ells[a] * idx.iter().map(|&r| axes[(r, a)]).product::<f64>())
                    .sum();
                t.set_symmetric(idx, k4 * v);
            }
        }
        SignalDistribution::ScaleMixture { ew4 } => {
            let sigma = axes * DMatrix::from_diagonal(&DVector::from_column_slice(ells)) * axes.transpose();
            for idx in sorted_tuples(m) {
                t.set_symmetric(idx, (ew4 - 1.0) * pair_products(&sigma, idx));
            }
        }
    }
    Ok(t)
}

/// Plug-in estimator from an `N × m` sample (rows are observations).
/// Columns are centered by their sample means first.
pub fn empirical_tensor(samples: &DMatrix<f64>) -> Result<CumulantTensor> {
    let (n, m) = samples.shape();
    if n < 4 {
        return Err(Error::TooFewSamples { n, min: 4 });
    }
    let mut x = samples.clone();
    for mut c in x.column_iter_mut() {
        let mean = c.mean();
        c.add_scalar_mut(-mean);
    }
    let nf = n as f64;
    let sigma = x.transpose() * &x / nf;
    let mut t = CumulantTensor::zeros(m);
    let cols: Vec<_> = (0..m).map(|j| x.column(j)).collect();
    for idx in sorted_tuples(m) {
        let [i, j, k, l] = idx;
        let moment = (0..n).map(|r| cols[i][r] * cols[j][r] * cols[k][r] * cols[l][r]).sum::<f64>() / nf;
        t.set_symmetric(idx, moment - pair_products(&sigma, idx));
    }
    Ok(t)
}

/// Second- and fourth-order moments of a pair `(x, y) ∈ ℝᴸ × ℝᴸ` that
/// govern bilinear-form fluctuations.
///
/// `J = Γˣˣ∘Γʸʸ + Γˣʸ∘Γʸˣ` and `K` is the partial cumulant matrix
/// `K_{ℓℓ′} = 𝔼[x_ℓ y_ℓ x_ℓ′ y_ℓ′] − 𝔼[x_ℓ y_ℓ]𝔼[x_ℓ′ y_ℓ′]
/// − 𝔼[x_ℓ y_ℓ′]𝔼[x_ℓ′ y_ℓ] − 𝔼[x_ℓ x_ℓ′]𝔼[y_ℓ y_ℓ′]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearMoments {
    pub gamma_xx: DMatrix<f64>,
    pub gamma_xy: DMatrix<f64>,
    pub gamma_yx: DMatrix<f64>,
    pub gamma_yy: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl BilinearMoments {
    /// From the covariance blocks and the mixed fourth moments
    /// `m4[(ℓ, ℓ′)] = 𝔼[x_ℓ y_ℓ x_ℓ′ y_ℓ′]`.
    pub fn from_moments(
        gamma_xx: DMatrix<f64>,
        gamma_xy: DMatrix<f64>,
        gamma_yx: DMatrix<f64>,
        gamma_yy: DMatrix<f64>,
        m4: &DMatrix<f64>,
    ) -> Result<Self> {
        let l = gamma_xx.nrows();
        for (name, g) in [("xx", &gamma_xx), ("xy", &gamma_xy), ("yx", &gamma_yx), ("yy", &gamma_yy), ("m4", m4)] {
            if g.shape() != (l, l) {
                return Err(Error::DimensionMismatch(format!("block {name} is {:?}, expected ({l}, {l})", g.shape())));
            }
        }
        let j = gamma_xx.component_mul(&gamma_yy) + gamma_xy.component_mul(&gamma_yx);
        let k = DMatrix::from_fn(l, l, |a, b| {
            m4[(a, b)] - gamma_xy[(a, a)] * gamma_xy[(b, b)] - gamma_xy[(a, b)] * gamma_xy[(b, a)] - gamma_xx[(a, b)] * gamma_yy[(a, b)]
        });
        Ok(Self { gamma_xx, gamma_xy, gamma_yx, gamma_yy, j, k })
    }

    /// Plug-in moments from paired `N × L` samples (rows are observations,
    /// assumed centered).
    pub fn from_samples(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::DimensionMismatch(format!("x is {:?}, y is {:?}", x.shape(), y.shape())));
        }
        let n = x.nrows();
        if n < 4 {
            return Err(Error::TooFewSamples { n, min: 4 });
        }
        let nf = n as f64;
        let xy = x.component_mul(y);
        let m4 = xy.transpose() * &xy / nf;
        Self::from_moments(
            x.transpose() * x / nf,
            x.transpose() * y / nf,
            y.transpose() * x / nf,
            y.transpose() * y / nf,
            &m4,
        )
    }

    /// Moments of the entry pairs `(x, y) = (ξ_j, ξ_k)` for `(j, k) ∈ pairs`,
    /// which drive the covariance of sample covariance entries.
    pub fn for_signal_pairs(sigma: &DMatrix<f64>, kappa: &CumulantTensor, pairs: &[(usize, usize)]) -> Result<Self> {
        let m = kappa.m();
        if sigma.shape() != (m, m) {
            return Err(Error::DimensionMismatch(format!("sigma is {:?}, tensor has m = {m}", sigma.shape())));
        }
        if let Some(&(a, b)) = pairs.iter().find(|(a, b)| *a >= m || *b >= m) {
            return Err(Error::IndexOutOfRange { index: a.max(b), len: m });
        }
        let l = pairs.len();
        let blk = |f: &dyn Fn(usize, usize) -> f64| DMatrix::from_fn(l, l, |r, s| f(r, s));
        let (jx, ky): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let gamma_xx = blk(&|r, s| sigma[(jx[r], jx[s])]);
        let gamma_xy = blk(&|r, s| sigma[(jx[r], ky[s])]);
        let gamma_yx = blk(&|r, s| sigma[(ky[r], jx[s])]);
        let gamma_yy = blk(&|r, s| sigma[(ky[r], ky[s])]);
        let m4 = blk(&|r, s| {
            let idx = [jx[r], ky[r], jx[s], ky[s]];
            kappa.get(idx[0], idx[1], idx[2], idx[3]) + pair_products(sigma, idx)
        });
        Self::from_moments(gamma_xx, gamma_xy, gamma_yx, gamma_yy, &m4)
    }

    /// `D = θJ + ωK`
    pub fn d_matrix(&self, theta: f64, omega: f64) -> DMatrix<f64> {
        &self.j * theta + &self.k * omega
    }
}
