//! Symmetric eigensolvers used by the spectral layer.
//!
//! [`top_eigenpairs`] runs Lanczos with full reorthogonalization against a
//! matrix-free operator and stops once every requested Ritz pair has an
//! estimated residual below `tol·|θ₁|`. Small problems, Lanczos breakdown
//! and non-convergence fall back to a dense symmetric eigensolve.

use nalgebra::{DMatrix, DMatrixView, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A real symmetric linear operator.
pub trait SymmetricOperator {
    fn dim(&self) -> usize;
    /// `y ← A x`
    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>);
}

impl SymmetricOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &DVector<f64>, y: &mut DVector<f64>) {
        y.gemv(1.0, self, x, 0.0);
    }
}

/// `scale·X Xᵀ` (or `scale·XᵀX` when `transpose`), applied without forming
/// the product.
pub struct CrossProduct<'a> {
    x: DMatrixView<'a, f64>,
    scale: f64,
    transpose: bool,
}

impl<'a> CrossProduct<'a> {
    /// `scale·XXᵀ`, of dimension `x.nrows()`.
    pub fn outer(x: DMatrixView<'a, f64>, scale: f64) -> Self {
        Self { x, scale, transpose: false }
    }

    /// `scale·XᵀX`, of dimension `x.ncols()`.
    pub fn inner(x: DMatrixView<'a, f64>, scale: f64) -> Self {
        Self { x, scale, transpose: true }
    }
}

impl SymmetricOperator for CrossProduct<'_> {
    fn dim(&self) -> usize {
        if self.transpose {
            self.x.ncols()
        } else {
            self.x.nrows()
        }
    }

    fn apply(&self, v: &DVector<f64>, y: &mut DVector<f64>) {
        if self.transpose {
            let mut t = DVector::zeros(self.x.nrows());
            t.gemv(1.0, &self.x, v, 0.0);
            y.gemv_tr(self.scale, &self.x, &t, 0.0);
        } else {
            let mut t = DVector::zeros(self.x.ncols());
            t.gemv_tr(1.0, &self.x, v, 0.0);
            y.gemv(self.scale, &self.x, &t, 0.0);
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LanczosOptions {
    /// Relative residual target, measured against the largest Ritz value.
    pub tol: f64,
    pub max_iter: usize,
    /// Problems of at most this dimension are solved densely.
    pub dense_cutoff: usize,
    pub seed: u64,
}

impl Default for LanczosOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 600, dense_cutoff: 48, seed: 0x5eed }
    }
}

/// Leading eigenpairs in descending order.
#[derive(Debug, Clone)]
pub struct TopEigen {
    pub values: Vec<f64>,
    /// Unit eigenvectors as columns.
    pub vectors: DMatrix<f64>,
    /// `‖A v − θ v‖` evaluated explicitly for each returned pair.
    pub residuals: Vec<f64>,
}

/// Full symmetric eigendecomposition with eigenvalues sorted descending.
pub fn symmetric_eigen_desc(a: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn materialize<A: SymmetricOperator + ?Sized>(op: &A) -> DMatrix<f64> {
    let d = op.dim();
    let mut a = DMatrix::zeros(d, d);
    let mut e = DVector::zeros(d);
    let mut y = DVector::zeros(d);
    for j in 0..d {
        e[j] = 1.0;
        op.apply(&e, &mut y);
        a.set_column(j, &y);
        e[j] = 0.0;
    }
    // symmetrize away rounding asymmetry of the matrix-free product
    (&a + a.transpose()) * 0.5
}

fn finish<A: SymmetricOperator + ?Sized>(op: &A, values: Vec<f64>, vectors: DMatrix<f64>) -> TopEigen {
    let mut y = DVector::zeros(op.dim());
    let residuals = values
        .iter()
        .enumerate()
        .map(|(i, &theta)| {
            let v = vectors.column(i).into_owned();
            op.apply(&v, &mut y);
            (&y - &v * theta).norm()
        })
        .collect();
    TopEigen { values, vectors, residuals }
}

fn dense_top<A: SymmetricOperator + ?Sized>(op: &A, k: usize) -> TopEigen {
    let (values, vectors) = symmetric_eigen_desc(&materialize(op));
    finish(op, values[..k].to_vec(), vectors.columns(0, k).into_owned())
}

/// The `k` largest eigenpairs of `op`.
pub fn top_eigenpairs<A: SymmetricOperator + ?Sized>(op: &A, k: usize, opts: &LanczosOptions) -> TopEigen {
    let d = op.dim();
    assert!(k >= 1 && k <= d, "requested {k} eigenpairs of a {d}-dimensional operator");
    if d <= opts.dense_cutoff || 2 * k >= d {
        return dense_top(op, k);
    }
    let max_iter = opts.max_iter.min(d);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut q = DVector::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
    q /= q.norm();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(max_iter);
    let mut alpha: Vec<f64> = Vec::with_capacity(max_iter);
    let mut beta: Vec<f64> = Vec::with_capacity(max_iter);
    let mut w = DVector::zeros(d);

    for j in 0..max_iter {
        op.apply(&q, &mut w);
        let a = q.dot(&w);
        w.axpy(-a, &q, 1.0);
        if let Some(prev) = basis.last() {
            w.axpy(-beta[j - 1], prev, 1.0);
        }
        basis.push(q.clone());
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        alpha.push(a);
        let b = w.norm();
        beta.push(b);

        let steps = j + 1;
        let a_scale = alpha.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let exhausted = b <= 1e-13 * a_scale;
        if steps >= k && (steps % 4 == 0 || steps == max_iter || exhausted) {
            let t = DMatrix::from_fn(steps, steps, |r, c| {
                if r == c {
                    alpha[r]
                } else if r + 1 == c {
                    beta[r]
                } else if c + 1 == r {
                    beta[c]
                } else {
                    0.0
                }
            });
            let (theta, y) = symmetric_eigen_desc(&t);
            let scale = theta[0].abs().max(f64::MIN_POSITIVE);
            let converged = (0..k).all(|i| b * y[(steps - 1, i)].abs() <= opts.tol * scale);
            if converged || exhausted {
                let qm = DMatrix::from_columns(&basis);
                let mut vectors = qm * y.columns(0, k);
                for mut c in vectors.column_iter_mut() {
                    let norm = c.norm();
                    c /= norm;
                }
                return finish(op, theta[..k].to_vec(), vectors);
            }
        }
        if exhausted {
            break;
        }
        q = &w / b;
    }
    dense_top(op, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spiked_diag(d: usize) -> DMatrix<f64> {
        // distinct eigenvalues with a rotated basis
        let vals = DVector::from_fn(d, |i, _| if i < 3 { 10.0 - 2.0 * i as f64 } else { 1.0 + i as f64 / d as f64 });
        let g = DMatrix::from_fn(d, d, |i, j| ((i * 31 + j * 17) % 13) as f64 - 6.0 + if i == j { 20.0 } else { 0.0 });
        let q = g.qr().q();
        &q * DMatrix::from_diagonal(&vals) * q.transpose()
    }

    #[test]
    fn lanczos_matches_dense() {
        let a = spiked_diag(200);
        let top = top_eigenpairs(&a, 3, &LanczosOptions::default());
        let (vals, _) = symmetric_eigen_desc(&a);
        for i in 0..3 {
            assert_close!(top.values[i], vals[i], 1e-10);
            assert!(top.residuals[i] <= 1e-10 * vals[0], "residual {}", top.residuals[i]);
        }
        let gram = top.vectors.transpose() * &top.vectors;
        assert!((gram - DMatrix::identity(3, 3)).amax() <= 1e-10);
    }

    #[test]
    fn dense_path_for_small_problems() {
        let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, 5.0]);
        let top = top_eigenpairs(&a, 2, &LanczosOptions::default());
        assert_close!(top.values[0], 5.0, 1e-12);
        assert_close!(top.values[1], 3.0, 1e-12);
    }

    #[test]
    fn cross_product_operator() {
        let x = DMatrix::from_fn(5, 80, |i, j| (((i + 1) * (j + 3)) % 7) as f64 - 3.0);
        let outer = CrossProduct::outer(x.as_view(), 0.5);
        let inner = CrossProduct::inner(x.as_view(), 0.5);
        let dense_outer = &x * x.transpose() * 0.5;
        assert!((materialize(&outer) - &dense_outer).amax() <= 1e-12);
        let v = DVector::from_fn(80, |i, _| (i as f64).sin());
        let mut y = DVector::zeros(80);
        inner.apply(&v, &mut y);
        let expected = x.transpose() * (&x * &v) * 0.5;
        assert!((y - expected).amax() <= 1e-10);
        // nonzero spectra of XXᵀ and XᵀX coincide
        let a = top_eigenpairs(&outer, 2, &LanczosOptions::default());
        let b = top_eigenpairs(&inner, 2, &LanczosOptions::default());
        assert_close!(a.values[0], b.values[0], 1e-9 * a.values[0]);
        assert_close!(a.values[1], b.values[1], 1e-9 * a.values[0]);
    }

    #[test]
    fn invariant_subspace_breakdown() {
        // rank-2 operator: Krylov space exhausts after two steps
        let u = DVector::from_fn(100, |i, _| if i == 0 { 1.0 } else { 0.0 });
        let v = DVector::from_fn(100, |i, _| if i == 1 { 1.0 } else { 0.0 });
        let a = &u * u.transpose() * 3.0 + &v * v.transpose();
        let top = top_eigenpairs(&a, 2, &LanczosOptions::default());
        assert_close!(top.values[0], 3.0, 1e-12);
        assert_close!(top.values[1], 1.0, 1e-12);
    }
}
