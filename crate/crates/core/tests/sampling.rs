//! Generated data against the moments and cumulants it is meant to have.

use nalgebra::DMatrix;
use spikecov::cumulants::{empirical_tensor, exact_tensor};
use spikecov::model_gen::{generate, population_axes, Rotation, SignalDistribution, SpikedModelSpec, UnitLaw};
use spikecov::stats::{covariance, mean, variance};

const N: usize = 1_000_000;

fn signal_samples(spec: &SpikedModelSpec) -> DMatrix<f64> {
    generate(spec, 0).unwrap().x1().transpose()
}

#[test]
fn noise_fourth_moments() {
    for (law, m4) in [(UnitLaw::Gaussian, 3.0), (UnitLaw::Rademacher, 1.0), (UnitLaw::UniformPmSqrt3, 1.8)] {
        let spec = SpikedModelSpec { noise_dist: law, ..SpikedModelSpec::gaussian(1, N, vec![1.0], 11) };
        let data = generate(&spec, 0).unwrap();
        let eta: Vec<f64> = data.x2().iter().copied().collect();
        let second = mean(&eta.iter().map(|x| x * x).collect::<Vec<_>>());
        let fourth = mean(&eta.iter().map(|x| x.powi(4)).collect::<Vec<_>>());
        // Var(η⁴) ≤ 𝔼η⁸ = 105 for the Gaussian
        let tol = 6.0 * 105f64.sqrt() / (N as f64).sqrt();
        assert!(mean(&eta).abs() < 6.0 / (N as f64).sqrt(), "{law:?} mean");
        assert!((second - 1.0).abs() < 6.0 * 2f64.sqrt() / (N as f64).sqrt(), "{law:?} variance {second}");
        assert!((fourth - m4).abs() < tol, "{law:?} fourth moment {fourth} vs {m4}");
    }
}

#[test]
fn signal_covariance_and_cumulants() {
    let cases = [
        SignalDistribution::Gaussian,
        SignalDistribution::IidFactors { factor: UnitLaw::Rademacher },
        SignalDistribution::IidFactors { factor: UnitLaw::UniformPmSqrt3 },
        SignalDistribution::ScaleMixture { ew4: 1.25 },
    ];
    for dist in cases {
        let spec = SpikedModelSpec {
            signal_dist: dist.clone(),
            rotation: Rotation::RandomOrthogonal { seed: 3 },
            ..SpikedModelSpec::gaussian(0, N, vec![3.0, 1.5], 17)
        };
        let axes = population_axes(&spec).unwrap();
        let xi = signal_samples(&spec);
        let sigma = axes.sigma();
        let cov = covariance(&xi);
        // entry variance is at most 2·ℓ₁²·(1 + κ/2) ≤ 3ℓ₁² for these laws
        let cov_tol = 6.0 * (3.0 * 9.0 / N as f64).sqrt();
        assert!((&cov - &sigma).amax() < cov_tol, "{dist:?}: covariance error {}", (&cov - &sigma).amax());

        let exact = exact_tensor(&dist, &axes.p, &spec.ells).unwrap();
        let empirical = empirical_tensor(&xi).unwrap();
        let mut max_z = 0.0f64;
        for i in 0..2 {
            for j in i..2 {
                for k in j..2 {
                    for l in k..2 {
                        let prod: Vec<f64> = xi.row_iter().map(|r| r[i] * r[j] * r[k] * r[l]).collect();
                        let se = (variance(&prod) / N as f64).sqrt();
                        let z = (exact.get(i, j, k, l) - empirical.get(i, j, k, l)).abs() / se;
                        max_z = max_z.max(z);
                    }
                }
            }
        }
        assert!(max_z < 6.0, "{dist:?}: tensor error {max_z} standard errors");
    }
}

#[test]
fn column_blocks_agree() {
    let spec = SpikedModelSpec::gaussian(3, 200_000, vec![4.0, 2.5], 23);
    let data = generate(&spec, 5).unwrap();
    let x = data.x();
    let half = x.ncols() / 2;
    let first = x.columns(0, half) * x.columns(0, half).transpose() / half as f64;
    let second = x.columns(half, half) * x.columns(half, half).transpose() / half as f64;
    // difference of two independent estimates of entries bounded by 2ℓ₁²
    let tol = 6.0 * (2.0 * 2.0 * 16.0 / half as f64).sqrt();
    assert!((&first - &second).amax() < tol, "{}", (&first - &second).amax());
    // signal and noise rows uncorrelated
    assert!(first.view((0, 2), (2, 3)).amax() < tol);
}

#[test]
fn desk_scale_signal_covariance() {
    let spec = SpikedModelSpec::gaussian(400, 800, vec![4.0, 2.5], 29);
    let data = generate(&spec, 0).unwrap();
    let s11 = data.x1() * data.x1().transpose() / 800.0;
    for (i, ell) in [4.0f64, 2.5].iter().enumerate() {
        let tol = 10.0 * (2.0 * ell * ell / 800.0).sqrt();
        assert!((s11[(i, i)] - ell).abs() < tol);
    }
    assert!(s11[(0, 1)].abs() < 10.0 * (4.0 * 2.5 / 800.0f64).sqrt());
}
