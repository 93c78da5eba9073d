//! Seeded generation of spiked-model datasets `X = [X₁; X₂]`.
//!
//! Signal columns are `ξ = w·PΛ^{1/2}z` where `z` has iid standardized
//! entries and `w` is a scale factor (identically one except for the scale
//! mixture). Noise entries are iid with mean zero and unit variance.

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream;

/// A standardized scalar law (mean 0, variance 1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitLaw {
    Gaussian,
    Rademacher,
    /// Uniform on `[−√3, √3]`.
    UniformPmSqrt3,
}

impl UnitLaw {
    /// `𝔼z⁴`
    pub fn fourth_moment(self) -> f64 {
        match self {
            UnitLaw::Gaussian => 3.0,
            UnitLaw::Rademacher => 1.0,
            UnitLaw::UniformPmSqrt3 => 1.8,
        }
    }

    /// `𝔼z⁴ − 3`
    pub fn kappa4(self) -> f64 {
        self.fourth_moment() - 3.0
    }

    pub fn sample<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            UnitLaw::Gaussian => StandardNormal.sample(rng),
            UnitLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            UnitLaw::UniformPmSqrt3 => {
                let s = 3f64.sqrt();
                rng.random_range(-s..=s)
            }
        }
    }
}

/// Law of the signal vector `ξ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalDistribution {
    /// `ξ ~ N(0, Σ)`
    Gaussian,
    /// `ξ = PΛ^{1/2}z` with iid `z` drawn from `factor`.
    IidFactors { factor: UnitLaw },
    /// `ξ = w·PΛ^{1/2}z`, `z` Gaussian, `w² ∈ {1 − h, 1 + h}` equiprobable
    /// with `h = √(ew4 − 1)`, so `𝔼w² = 1` and `𝔼w⁴ = ew4`.
    ScaleMixture { ew4: f64 },
}

impl SignalDistribution {
    pub fn factor_law(&self) -> UnitLaw {
        match self {
            SignalDistribution::IidFactors { factor } => *factor,
            _ => UnitLaw::Gaussian,
        }
    }

    fn validate(&self) -> Result<()> {
        if let SignalDistribution::ScaleMixture { ew4 } = *self {
            if !(1.0..2.0).contains(&ew4) {
                return Err(Error::InvalidSpec(format!(
                    "scale mixture needs 1 <= ew4 < 2 for a two-point w² law, got {ew4}"
                )));
            }
        }
        Ok(())
    }
}

/// Population eigenvector basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rotation {
    Identity,
    /// Haar-distributed orthogonal matrix drawn from its own seed.
    RandomOrthogonal { seed: u64 },
}

/// Full description of the data model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpikedModelSpec {
    pub m: usize,
    pub p: usize,
    pub n: usize,
    pub ells: Vec<f64>,
    #[serde(default = "default_rotation")]
    pub rotation: Rotation,
    #[serde(default = "default_signal")]
    pub signal_dist: SignalDistribution,
    #[serde(default = "default_noise")]
    pub noise_dist: UnitLaw,
    #[serde(default)]
    pub seed: u64,
}

fn default_rotation() -> Rotation {
    Rotation::Identity
}

fn default_signal() -> SignalDistribution {
    SignalDistribution::Gaussian
}

fn default_noise() -> UnitLaw {
    UnitLaw::Gaussian
}

impl SpikedModelSpec {
    /// Gaussian signal and noise, identity rotation.
    pub fn gaussian(p: usize, n: usize, ells: Vec<f64>, seed: u64) -> Self {
        Self {
            m: ells.len(),
            p,
            n,
            ells,
            rotation: Rotation::Identity,
            signal_dist: SignalDistribution::Gaussian,
            noise_dist: UnitLaw::Gaussian,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(Error::InvalidSpec("m must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidSpec(format!("n must be at least 2, got {}", self.n)));
        }
        if self.ells.len() != self.m {
            return Err(Error::InvalidSpec(format!(
                "ells has {} entries but m = {}",
                self.ells.len(),
                self.m
            )));
        }
        if let Some(bad) = self.ells.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidSpec(format!("spikes must be positive and finite, got {bad}")));
        }
        if self.ells.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::InvalidSpec(format!("ells must be strictly decreasing, got {:?}", self.ells)));
        }
        self.signal_dist.validate()
    }

    /// `γn = p/n`
    pub fn gamma_n(&self) -> f64 {
        self.p as f64 / self.n as f64
    }
}

/// Population eigenvectors (columns of `p`) and eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationAxes {
    pub p: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

impl PopulationAxes {
    /// `Σ = PΛPᵀ`
    pub fn sigma(&self) -> DMatrix<f64> {
        &self.p * DMatrix::from_diagonal(&self.lambda) * self.p.transpose()
    }

    /// `PΛ^{1/2}`
    fn loading(&self) -> DMatrix<f64> {
        &self.p * DMatrix::from_diagonal(&self.lambda.map(f64::sqrt))
    }
}

/// The exact `P` and `Λ` used by [`generate`].
pub fn population_axes(spec: &SpikedModelSpec) -> Result<PopulationAxes> {
    spec.validate()?;
    let m = spec.m;
    let p = match spec.rotation {
        Rotation::Identity => DMatrix::identity(m, m),
        Rotation::RandomOrthogonal { seed } => {
            let mut rng = stream(seed, 0, "rotation");
            let g = DMatrix::from_fn(m, m, |_, _| StandardNormal.sample(&mut rng));
            let qr = g.qr();
            let (mut q, r) = qr.unpack();
            for j in 0..m {
                if r[(j, j)] < 0.0 {
                    q.column_mut(j).neg_mut();
                }
            }
            q
        }
    };
    Ok(PopulationAxes { p, lambda: DVector::from_vec(spec.ells.clone()) })
}

/// One replicate of the model, stored as the stacked `(m + p) × n` matrix.
#[derive(Debug, Clone)]
pub struct Dataset {
    x: DMatrix<f64>,
    m: usize,
    replicate: u64,
}

impl Dataset {
    /// Wrap an existing stacked matrix whose first `m` rows are the signal.
    pub fn from_matrix(x: DMatrix<f64>, m: usize, replicate: u64) -> Result<Self> {
        if m == 0 || m > x.nrows() {
            return Err(Error::DimensionMismatch(format!("m = {m} for a matrix with {} rows", x.nrows())));
        }
        Ok(Self { x, m, replicate })
    }

    /// The stacked matrix `[X₁; X₂]`.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn x1(&self) -> DMatrixView<'_, f64> {
        self.x.rows(0, self.m)
    }

    pub fn x2(&self) -> DMatrixView<'_, f64> {
        self.x.rows(self.m, self.p())
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.x.nrows() - self.m
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    pub fn gamma_n(&self) -> f64 {
        self.p() as f64 / self.n() as f64
    }

    pub fn replicate(&self) -> u64 {
        self.replicate
    }
}

/// Draw replicate `replicate` of `spec`. Bit-identical for equal inputs.
pub fn generate(spec: &SpikedModelSpec, replicate: u64) -> Result<Dataset> {
    let axes = population_axes(spec)?;
    generate_with_axes(spec, &axes, replicate)
}

/// [`generate`] with precomputed axes, for loops over many replicates.
pub fn generate_with_axes(spec: &SpikedModelSpec, axes: &PopulationAxes, replicate: u64) -> Result<Dataset> {
    spec.validate()?;
    let (m, p, n) = (spec.m, spec.p, spec.n);
    if axes.p.shape() != (m, m) || axes.lambda.len() != m {
        return Err(Error::DimensionMismatch("population axes do not match the spec".into()));
    }
    let mut x = DMatrix::zeros(m + p, n);

    let factor = spec.signal_dist.factor_law();
    let mut rng = stream(spec.seed, replicate, "signal");
    let mut z = DMatrix::zeros(m, n);
    for j in 0..n {
        for i in 0..m {
            z[(i, j)] = factor.sample(&mut rng);
        }
    }
    if let SignalDistribution::ScaleMixture { ew4 } = spec.signal_dist {
        let h = (ew4 - 1.0).sqrt();
        let (lo, hi) = ((1.0 - h).sqrt(), (1.0 + h).sqrt());
        let mut rng = stream(spec.seed, replicate, "scale");
        for j in 0..n {
            let w = if rng.random::<bool>() { hi } else { lo };
            z.column_mut(j).scale_mut(w);
        }
    }
    x.rows_mut(0, m).copy_from(&(axes.loading() * z));

    let noise = spec.noise_dist;
    let mut rng = stream(spec.seed, replicate, "noise");
    for j in 0..n {
        for i in 0..p {
            x[(m + i, j)] = noise.sample(&mut rng);
        }
    }
    Ok(Dataset { x, m, replicate })
}
