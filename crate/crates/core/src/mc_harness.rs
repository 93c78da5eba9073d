//! Monte Carlo experiments that set each closed-form prediction against
//! simulation.
//!
//! An [`ExperimentConfig`] fixes a model, a replicate count and a list of
//! [`Target`]s. Every replicate is generated once and shared by all targets;
//! replicates run in parallel and are reduced in replicate order, so the
//! numbers in the report do not depend on the worker count.
//!
//! Spike indices in targets and reports are 1-based.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cumulants::{exact_tensor, BilinearMoments, CumulantTensor};
use crate::error::{Error, Result};
use crate::model_gen::{generate_with_axes, population_axes, PopulationAxes, SpikedModelSpec};
use crate::spectra::{
    decompose_with, identity_checks, noise_top, quadform_residual_in, NoiseTop, QuadForm, ResolventRoute, SampleSpectrum,
    SchurContext, RESOLVENT_GUARD,
};
use crate::spike_theory::{is_supercritical, predict, spike_forward, theta_omega_c, CumulantSource, SpikeSpectrum, TheoryPrediction};
use crate::stats::{covariance, ks_normal, mean, variance};

/// Smallest replicate count accepted for any CLT target.
pub const MIN_CLT_REPS: usize = 100;

/// Weight matrix of a quadratic-form target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum QuadFormSpec {
    Identity,
    /// `Bₙ(t)` at `t = ρ(ℓ, γn)`.
    Resolvent { ell: f64 },
    /// `Bₙ = √n·eeᵀ`; the target passes when normality fails.
    OnatskiCounterexample,
}

/// One quantity to measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Target {
    /// `√n(ℓ̂_ν − ρ(ℓ_ν, γn))/σ(ℓ_ν, γn) → N(0, 1)`
    EvalClt { nu: usize },
    /// `√n(Pᵀa_ν − e_ν) → N(0, 𝒟Σ̃𝒟)`
    EvecClt { nu: usize },
    /// `⟨𝔲_ν, 𝔭_ν⟩² → cosine_limit(ℓ_ν, γn)`
    Cosine { nu: usize },
    /// `n^{−1/2}[X₁BₙX₁ᵀ − (tr Bₙ)Σ] → N(0, θJ + ωK)`
    Quadform { b: QuadFormSpec },
    /// Mean of `√n(ℓ̂_ν − ρ(ℓ_ν, γ))` with `γ = gamma_limit ≠ γn`.
    CenteringShift { nu: usize, gamma_limit: f64 },
}

impl Target {
    pub fn label(&self) -> String {
        match self {
            Target::EvalClt { nu } => format!("eval_clt[nu={nu}]"),
            Target::EvecClt { nu } => format!("evec_clt[nu={nu}]"),
            Target::Cosine { nu } => format!("cosine[nu={nu}]"),
            Target::Quadform { b } => match b {
                QuadFormSpec::Identity => "quadform[identity]".into(),
                QuadFormSpec::Resolvent { ell } => format!("quadform[resolvent(ell={ell})]"),
                QuadFormSpec::OnatskiCounterexample => "quadform[onatski_counterexample]".into(),
            },
            Target::CenteringShift { nu, gamma_limit } => format!("centering_shift[nu={nu},gamma={gamma_limit}]"),
        }
    }

    fn nu(&self) -> Option<usize> {
        match *self {
            Target::EvalClt { nu } | Target::EvecClt { nu } | Target::Cosine { nu } | Target::CenteringShift { nu, .. } => Some(nu),
            Target::Quadform { .. } => None,
        }
    }

    fn is_clt(&self) -> bool {
        !matches!(self, Target::Cosine { .. })
    }

    fn needs_spectrum(&self) -> bool {
        self.nu().is_some()
    }
}

/// Pass/fail bounds. A `null` in the JSON config disables the check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// `|mean(T)|` for the studentized eigenvalue statistic.
    pub eval_mean_abs: Option<f64>,
    pub eval_var_min: Option<f64>,
    pub eval_var_max: Option<f64>,
    /// KS distance of `T` to `N(0, 1)`.
    pub eval_ks_max: Option<f64>,
    /// Relative error of `Var(√n(ℓ̂ − ρn))` against `σ²`.
    pub eval_raw_var_rel: Option<f64>,
    /// Upper bound on `Var(√n(ℓ̂ − ρn))` as a fraction of the Gaussian `σ²`.
    pub eval_gaussian_var_frac_max: Option<f64>,
    /// Relative error of each `Var(√n p_μᵀa_ν)`, `μ ≠ ν`.
    pub evec_var_rel: Option<f64>,
    /// Relative Frobenius error of the off-`ν` covariance block.
    pub evec_frob_rel: Option<f64>,
    /// `|z|` of each off-`ν` component mean.
    pub evec_mean_z_max: Option<f64>,
    /// `|mean cos² − limit|` for supercritical spikes.
    pub cosine_abs: Option<f64>,
    /// Upper bound on mean `cos²` for subcritical spikes.
    pub cosine_subcritical_max: Option<f64>,
    /// Relative error of each quadratic-form entry variance.
    pub quadform_var_rel: Option<f64>,
    /// KS distance of each entry to its limiting normal law.
    pub quadform_ks_max: Option<f64>,
    /// Lower bound on the KS distance for the counterexample form.
    pub counterexample_ks_min: Option<f64>,
    /// Relative error of the mean shift against `√n(ρ(ℓ, γn) − ρ(ℓ, γ))`.
    pub centering_shift_rel: Option<f64>,
    /// `|mean|` of the studentized statistic recentred at `γn`.
    pub centering_mean_abs: Option<f64>,
    /// Bound on both exact Schur identities.
    pub identity_tol: Option<f64>,
    /// Largest fraction of replicates a section may exclude.
    pub max_exclusion_rate: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            eval_mean_abs: Some(0.1),
            eval_var_min: Some(0.8),
            eval_var_max: Some(1.2),
            eval_ks_max: Some(0.08),
            eval_raw_var_rel: Some(0.25),
            eval_gaussian_var_frac_max: None,
            evec_var_rel: Some(0.25),
            evec_frob_rel: Some(0.25),
            evec_mean_z_max: Some(4.0),
            cosine_abs: Some(0.03),
            cosine_subcritical_max: Some(0.05),
            quadform_var_rel: Some(0.15),
            quadform_ks_max: None,
            counterexample_ks_min: Some(0.05),
            centering_shift_rel: Some(0.30),
            centering_mean_abs: Some(0.1),
            identity_tol: Some(1e-8),
            max_exclusion_rate: Some(0.01),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: SpikedModelSpec,
    pub reps: usize,
    pub targets: Vec<Target>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Worker threads; all available cores when absent.
    #[serde(default)]
    pub workers: Option<usize>,
    /// Evaluate the exact Schur identities on every replicate.
    #[serde(default = "default_true")]
    pub check_identities: bool,
}

impl ExperimentConfig {
    pub fn new(model: SpikedModelSpec, reps: usize, targets: Vec<Target>) -> Self {
        Self { model, reps, targets, tolerances: Tolerances::default(), workers: None, check_identities: true }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| Error::Config(e.to_string()))?;
        let (m, gamma_n) = (self.model.m, self.model.gamma_n());
        if self.reps == 0 {
            return Err(Error::Config("reps must be positive".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        if self.targets.is_empty() {
            return Err(Error::Config("no targets configured".into()));
        }
        let mut labels = BTreeSet::new();
        for t in &self.targets {
            let label = t.label();
            if !labels.insert(label.clone()) {
                return Err(Error::Config(format!("duplicate target {label}")));
            }
            if t.is_clt() && self.reps < MIN_CLT_REPS {
                return Err(Error::Config(format!("{label} needs reps >= {MIN_CLT_REPS}, got {}", self.reps)));
            }
            if let Some(nu) = t.nu() {
                if nu == 0 || nu > m {
                    return Err(Error::Config(format!("{label}: nu must be in 1..={m}")));
                }
                let ell = self.model.ells[nu - 1];
                let needs_outlier = !matches!(t, Target::Cosine { .. });
                if needs_outlier && !is_supercritical(ell, gamma_n) {
                    return Err(Error::Config(format!(
                        "{label}: spike {ell} is not supercritical at gamma_n = {gamma_n}"
                    )));
                }
            }
            match *t {
                Target::EvecClt { .. } if m < 2 => {
                    return Err(Error::Config(format!("{label}: eigenvector CLT needs m >= 2")));
                }
                Target::Quadform { b: QuadFormSpec::Resolvent { ell } } => {
                    if self.model.p == 0 {
                        return Err(Error::Config(format!("{label}: resolvent form needs p > 0")));
                    }
                    if !is_supercritical(ell, gamma_n) {
                        return Err(Error::Config(format!("{label}: ell = {ell} is not supercritical")));
                    }
                }
                Target::CenteringShift { gamma_limit, .. } if !(gamma_limit.is_finite() && gamma_limit >= 0.0) => {
                    return Err(Error::Config(format!("{label}: gamma_limit must be non-negative")));
                }
                _ => {}
            }
        }
        Ok(())
    }
}

/// One bounded quantity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub pass: bool,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, min: Option<f64>, max: Option<f64>) -> Self {
        let pass = value.is_finite() && min.is_none_or(|lo| value >= lo) && max.is_none_or(|hi| value <= hi);
        Self { name: name.into(), value, min, max, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SectionReport {
    pub label: String,
    pub target: Option<Target>,
    pub replicates_used: usize,
    pub excluded: usize,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub pass: bool,
}

impl SectionReport {
    fn new(label: String, target: Option<Target>, used: usize, excluded: usize) -> Self {
        Self { label, target, replicates_used: used, excluded, metrics: BTreeMap::new(), checks: Vec::new(), pass: true }
    }

    fn metric(&mut self, name: impl Into<String>, value: f64) {
        self.metrics.insert(name.into(), value);
    }

    fn check(&mut self, name: impl Into<String>, value: f64, min: Option<f64>, max: Option<f64>) {
        if min.is_some() || max.is_some() {
            let c = Check::new(name, value, min, max);
            self.pass &= c.pass;
            self.checks.push(c);
        }
    }

    fn check_exclusions(&mut self, tol: &Tolerances) {
        let total = self.replicates_used + self.excluded;
        let rate = if total == 0 { 0.0 } else { self.excluded as f64 / total as f64 };
        self.metric("exclusion_rate", rate);
        self.check("exclusion_rate", rate, None, tol.max_exclusion_rate);
        if self.replicates_used == 0 {
            self.pass = false;
        }
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.metrics.get(metric).copied()
    }
}

/// Merged sections with the overall verdict.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub sections: Vec<SectionReport>,
    pub pass: bool,
}

/// Merge sections, rejecting duplicate labels. Overall pass requires every
/// section to pass; an empty merge passes.
pub fn aggregate(sections: Vec<SectionReport>) -> Result<Aggregate> {
    let mut seen = BTreeSet::new();
    for s in &sections {
        if !seen.insert(s.label.as_str()) {
            return Err(Error::Config(format!("duplicate section label {}", s.label)));
        }
    }
    let pass = sections.iter().all(|s| s.pass);
    Ok(Aggregate { sections, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Runtime {
    pub seconds: f64,
    pub workers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McReport {
    pub version: String,
    pub config: ExperimentConfig,
    /// Command-line overrides applied on top of the config file.
    pub overrides: BTreeMap<String, String>,
    pub sections: Vec<SectionReport>,
    pub pass: bool,
    pub runtime: Runtime,
}

impl McReport {
    pub fn section(&self, label: &str) -> Option<&SectionReport> {
        self.sections.iter().find(|s| s.label == label)
    }
}

/// One per-replicate statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateRow {
    pub replicate: u64,
    pub target: String,
    pub statistic: String,
    pub value: f64,
}

/// Per-replicate sample eigenstructure summary for spike `nu` (1-based).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub replicate: u64,
    pub nu: usize,
    pub ell_hat: f64,
    pub cos2: f64,
    pub u_norm2: f64,
    pub mu1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct McRun {
    pub report: McReport,
    pub rows: Vec<ReplicateRow>,
    pub spectra: Vec<SpectrumRow>,
}

/// Label of the exact-identity diagnostic section.
pub const IDENTITY_SECTION: &str = "schur_identities";

enum Sample {
    Excluded,
    Values(Vec<f64>),
}

struct Outcome {
    replicate: u64,
    samples: Vec<Sample>,
    identities: Vec<(f64, f64)>,
    spectra: Vec<SpectrumRow>,
}

struct Prepared<'a> {
    config: &'a ExperimentConfig,
    axes: PopulationAxes,
    sigma: DMatrix<f64>,
    kappa: CumulantTensor,
    theory: BTreeMap<usize, TheoryPrediction>,
    identity_nus: Vec<usize>,
    pairs: Vec<(usize, usize)>,
}

impl<'a> Prepared<'a> {
    fn new(config: &'a ExperimentConfig) -> Result<Self> {
        let spec = &config.model;
        let axes = population_axes(spec)?;
        let kappa = exact_tensor(&spec.signal_dist, &axes.p, &spec.ells)?;
        let gamma_n = spec.gamma_n();
        let spectrum = SpikeSpectrum::new(spec.ells.clone(), gamma_n)?;
        let source = CumulantSource::Tensor { kappa: &kappa, axes: &axes.p };
        let mut theory = BTreeMap::new();
        for nu in 0..spectrum.m0() {
            theory.insert(nu, predict(&spectrum, nu, gamma_n, source)?);
        }
        let identity_nus = if config.check_identities && config.targets.iter().any(Target::needs_spectrum) {
            (0..spectrum.m0()).collect()
        } else {
            Vec::new()
        };
        let pairs = (0..spec.m).flat_map(|j| (j..spec.m).map(move |k| (j, k))).collect();
        let sigma = axes.sigma();
        Ok(Self { config, axes, sigma, kappa, theory, identity_nus, pairs })
    }

    fn needs_spectrum(&self) -> bool {
        self.config.targets.iter().any(Target::needs_spectrum)
    }

    fn needs_context(&self) -> bool {
        !self.identity_nus.is_empty()
            || self.config.targets.iter().any(|t| matches!(t, Target::Quadform { b: QuadFormSpec::Resolvent { .. } }))
    }

    fn run_replicate(&self, r: u64) -> Result<Outcome> {
        let spec = &self.config.model;
        let data = generate_with_axes(spec, &self.axes, r)?;
        let root_n = (spec.n as f64).sqrt();
        let gamma_n = spec.gamma_n();

        let spectrum: Option<SampleSpectrum> = if self.needs_spectrum() {
            Some(decompose_with(&data, &self.axes, NoiseTop::Compute)?)
        } else {
            None
        };
        let mu1 = match &spectrum {
            Some(sp) => sp.mu1,
            None if self.needs_context() => noise_top(&data),
            None => None,
        };
        let guard_ok = |t: f64| mu1.is_none_or(|mu| t - mu > RESOLVENT_GUARD * t.abs());
        let context = self.needs_context().then(|| SchurContext::with_mu1(&data, ResolventRoute::Auto, mu1));

        let mut samples = Vec::with_capacity(self.config.targets.len());
        for target in &self.config.targets {
            let sample = match *target {
                Target::EvalClt { nu } => {
                    let sp = spectrum.as_ref().expect("spectrum computed");
                    let (ell_hat, th) = (sp.ell_hats[nu - 1], &self.theory[&(nu - 1)]);
                    if guard_ok(ell_hat) {
                        let raw = root_n * (ell_hat - th.rho);
                        Sample::Values(vec![raw / th.sigma2.sqrt(), raw])
                    } else {
                        Sample::Excluded
                    }
                }
                Target::EvecClt { nu } => {
                    let sp = spectrum.as_ref().expect("spectrum computed");
                    if guard_ok(sp.ell_hats[nu - 1]) {
                        let mut y = self.axes.p.transpose() * &sp.a_vecs[nu - 1];
                        y[nu - 1] -= 1.0;
                        Sample::Values((y * root_n).iter().copied().collect())
                    } else {
                        Sample::Excluded
                    }
                }
                Target::Cosine { nu } => {
                    let sp = spectrum.as_ref().expect("spectrum computed");
                    Sample::Values(vec![sp.cosines2[nu - 1]])
                }
                Target::Quadform { b } => {
                    let form = match b {
                        QuadFormSpec::Identity => QuadForm::Identity,
                        QuadFormSpec::Resolvent { ell } => QuadForm::Resolvent(spike_forward(ell, gamma_n)?),
                        QuadFormSpec::OnatskiCounterexample => QuadForm::Onatski,
                    };
                    let owned;
                    let ctx = match &context {
                        Some(c) => c,
                        None => {
                            owned = SchurContext::with_mu1(&data, ResolventRoute::Auto, mu1);
                            &owned
                        }
                    };
                    match quadform_residual_in(ctx, &data, &self.sigma, &form) {
                        Ok(res) => Sample::Values(self.pairs.iter().map(|&(j, k)| root_n * res[(j, k)]).collect()),
                        Err(Error::ResolventDomain { .. }) => Sample::Excluded,
                        Err(e) => return Err(e),
                    }
                }
                Target::CenteringShift { nu, gamma_limit } => {
                    let sp = spectrum.as_ref().expect("spectrum computed");
                    let ell_hat = sp.ell_hats[nu - 1];
                    let ell = spec.ells[nu - 1];
                    if guard_ok(ell_hat) && is_supercritical(ell, gamma_limit) {
                        let th = &self.theory[&(nu - 1)];
                        let shift = root_n * (ell_hat - spike_forward(ell, gamma_limit)?);
                        let t_stat = root_n * (ell_hat - th.rho) / th.sigma2.sqrt();
                        Sample::Values(vec![shift, t_stat])
                    } else {
                        Sample::Excluded
                    }
                }
            };
            samples.push(sample);
        }

        let mut identities = Vec::new();
        if let (Some(ctx), Some(sp)) = (&context, &spectrum) {
            let nus: Vec<usize> = self.identity_nus.iter().copied().filter(|&nu| guard_ok(sp.ell_hats[nu])).collect();
            for c in identity_checks(ctx, sp, &nus)? {
                identities.push((c.det_rel, c.q_rel));
            }
        }

        let spectra = spectrum
            .map(|sp| {
                (0..spec.m)
                    .map(|nu| SpectrumRow {
                        replicate: r,
                        nu: nu + 1,
                        ell_hat: sp.ell_hats[nu],
                        cos2: sp.cosines2[nu],
                        u_norm2: sp.u_norm2(nu),
                        mu1: sp.mu1,
                    })
                    .collect()
            })
            .unwrap_or_default();
        Ok(Outcome { replicate: r, samples, identities, spectra })
    }
}

fn statistic_names(target: &Target, m: usize, pairs: &[(usize, usize)]) -> Vec<String> {
    match target {
        Target::EvalClt { .. } => vec!["t_stat".into(), "raw".into()],
        Target::EvecClt { .. } => (1..=m).map(|mu| format!("y_{mu}")).collect(),
        Target::Cosine { .. } => vec!["cos2".into()],
        Target::Quadform { .. } => pairs.iter().map(|(j, k)| format!("r_{}{}", j + 1, k + 1)).collect(),
        Target::CenteringShift { .. } => vec!["shift".into(), "t_stat".into()],
    }
}

fn rel_err(value: f64, reference: f64) -> f64 {
    (value - reference).abs() / reference.abs()
}

fn column(values: &[Vec<f64>], i: usize) -> Vec<f64> {
    values.iter().map(|v| v[i]).collect()
}

impl Prepared<'_> {
    fn section(&self, target: &Target, values: &[Vec<f64>], excluded: usize) -> Result<SectionReport> {
        let tol = &self.config.tolerances;
        let spec = &self.config.model;
        let gamma_n = spec.gamma_n();
        let mut s = SectionReport::new(target.label(), Some(*target), values.len(), excluded);
        s.check_exclusions(tol);
        if values.len() < 2 {
            return Ok(s);
        }
        let rf = values.len() as f64;
        match *target {
            Target::EvalClt { nu } => {
                let th = &self.theory[&(nu - 1)];
                let (t, raw) = (column(values, 0), column(values, 1));
                let (mu, var, ks) = (mean(&t), variance(&t), ks_normal(&t, 1.0));
                let raw_var = variance(&raw);
                s.metric("gamma_n", th.gamma);
                s.metric("theory_rho", th.rho);
                s.metric("theory_sigma2", th.sigma2);
                s.metric("theory_sigma2_gaussian", th.sigma2_gaussian);
                s.metric("mean", mu);
                s.metric("variance", var);
                s.metric("ks", ks);
                s.metric("raw_variance", raw_var);
                s.metric("raw_variance_rel_err", rel_err(raw_var, th.sigma2));
                s.check("abs_mean", mu.abs(), None, tol.eval_mean_abs);
                s.check("variance", var, tol.eval_var_min, tol.eval_var_max);
                s.check("ks", ks, None, tol.eval_ks_max);
                s.check("raw_variance_rel_err", rel_err(raw_var, th.sigma2), None, tol.eval_raw_var_rel);
                s.check(
                    "raw_variance_over_gaussian",
                    raw_var / th.sigma2_gaussian,
                    None,
                    tol.eval_gaussian_var_frac_max,
                );
            }
            Target::EvecClt { nu } => {
                let th = &self.theory[&(nu - 1)];
                let m = spec.m;
                let y = DMatrix::from_fn(values.len(), m, |r, c| values[r][c]);
                let cov = covariance(&y);
                let others: Vec<usize> = (0..m).filter(|&mu| mu != nu - 1).collect();
                let mut diff2 = 0.0;
                let mut ref2 = 0.0;
                for &a in &others {
                    for &b in &others {
                        diff2 += (cov[(a, b)] - th.evec_cov[(a, b)]).powi(2);
                        ref2 += th.evec_cov[(a, b)].powi(2);
                    }
                }
                let frob = (diff2 / ref2).sqrt();
                s.metric("frobenius_rel_err", frob);
                s.check("frobenius_rel_err", frob, None, tol.evec_frob_rel);
                s.metric(format!("mean_{nu}"), mean(&column(values, nu - 1)));
                for &mu in &others {
                    let (var, theory) = (cov[(mu, mu)], th.evec_cov[(mu, mu)]);
                    let col = column(values, mu);
                    let z = mean(&col) / (variance(&col) / rf).sqrt();
                    let k = mu + 1;
                    s.metric(format!("var_{k}"), var);
                    s.metric(format!("theory_var_{k}"), theory);
                    s.metric(format!("var_{k}_rel_err"), rel_err(var, theory));
                    s.metric(format!("mean_z_{k}"), z);
                    s.check(format!("var_{k}_rel_err"), rel_err(var, theory), None, tol.evec_var_rel);
                    s.check(format!("abs_mean_z_{k}"), z.abs(), None, tol.evec_mean_z_max);
                }
            }
            Target::Cosine { nu } => {
                let ell = spec.ells[nu - 1];
                let c = column(values, 0);
                let mu = mean(&c);
                let limit = crate::spike_theory::cosine_limit(ell, gamma_n);
                s.metric("mean", mu);
                s.metric("theory", limit);
                s.metric("std_err", (variance(&c) / rf).sqrt());
                if is_supercritical(ell, gamma_n) {
                    s.check("abs_err", (mu - limit).abs(), None, tol.cosine_abs);
                } else {
                    s.check("subcritical_mean", mu, None, tol.cosine_subcritical_max);
                }
            }
            Target::Quadform { b } => {
                let (theta, omega) = match b {
                    QuadFormSpec::Identity => (1.0, 1.0),
                    QuadFormSpec::Resolvent { ell } => {
                        let c = theta_omega_c(ell, gamma_n)?;
                        (c.theta, c.omega)
                    }
                    // n⁻¹Σ b_ii² = 1/n
                    QuadFormSpec::OnatskiCounterexample => (1.0, 0.0),
                };
                s.metric("theta", theta);
                s.metric("omega", omega);
                let moments = BilinearMoments::for_signal_pairs(&self.sigma, &self.kappa, &self.pairs)?;
                let d = moments.d_matrix(theta, omega);
                let mat = DMatrix::from_fn(values.len(), self.pairs.len(), |r, c| values[r][c]);
                let cov = covariance(&mat);
                for (i, &(j, k)) in self.pairs.iter().enumerate() {
                    let name = format!("{}{}", j + 1, k + 1);
                    let col = column(values, i);
                    let (var, theory) = (cov[(i, i)], d[(i, i)]);
                    let ks = ks_normal(&col, theory);
                    s.metric(format!("var_{name}"), var);
                    s.metric(format!("theory_var_{name}"), theory);
                    s.metric(format!("mean_{name}"), mean(&col));
                    s.metric(format!("ks_{name}"), ks);
                    if matches!(b, QuadFormSpec::OnatskiCounterexample) {
                        s.check(format!("ks_{name}_counterexample"), ks, tol.counterexample_ks_min, None);
                    } else {
                        s.metric(format!("var_{name}_rel_err"), rel_err(var, theory));
                        s.check(format!("var_{name}_rel_err"), rel_err(var, theory), None, tol.quadform_var_rel);
                        s.check(format!("ks_{name}"), ks, None, tol.quadform_ks_max);
                    }
                }
            }
            Target::CenteringShift { nu, gamma_limit } => {
                let ell = spec.ells[nu - 1];
                let root_n = (spec.n as f64).sqrt();
                let predicted = root_n * (spike_forward(ell, gamma_n)? - spike_forward(ell, gamma_limit)?);
                let (shift, t) = (column(values, 0), column(values, 1));
                let shift_mean = mean(&shift);
                let t_mean = mean(&t);
                s.metric("a", root_n * (gamma_n - gamma_limit));
                s.metric("shift_mean", shift_mean);
                s.metric("shift_std_err", (variance(&shift) / rf).sqrt());
                s.metric("predicted_shift", predicted);
                s.metric("shift_rel_err", rel_err(shift_mean, predicted));
                s.metric("studentized_mean", t_mean);
                s.check("shift_rel_err", rel_err(shift_mean, predicted), None, tol.centering_shift_rel);
                s.check("abs_studentized_mean", t_mean.abs(), None, tol.centering_mean_abs);
            }
        }
        Ok(s)
    }

    fn identity_section(&self, outcomes: &[Outcome]) -> SectionReport {
        let tol = self.config.tolerances.identity_tol;
        let all: Vec<(f64, f64)> = outcomes.iter().flat_map(|o| o.identities.iter().copied()).collect();
        let expected = outcomes.len() * self.identity_nus.len();
        let mut s = SectionReport::new(IDENTITY_SECTION.into(), None, all.len(), expected - all.len());
        let max_det = all.iter().fold(0.0f64, |a, c| a.max(c.0));
        let max_q = all.iter().fold(0.0f64, |a, c| a.max(c.1));
        let violations = tol.map_or(0, |t| all.iter().filter(|c| !(c.0 <= t && c.1 <= t)).count());
        s.metric("evaluations", all.len() as f64);
        s.metric("max_det_rel", max_det);
        s.metric("max_q_rel", max_q);
        s.metric("violations", violations as f64);
        s.check("max_det_rel", max_det, None, tol);
        s.check("max_q_rel", max_q, None, tol);
        s.check("violations", violations as f64, None, Some(0.0));
        s.check_exclusions(&self.config.tolerances);
        s
    }
}

fn pool(workers: Option<usize>) -> Result<(rayon::ThreadPool, usize)> {
    let workers = workers.unwrap_or_else(rayon::current_num_threads);
    if workers == 0 {
        return Err(Error::Config("workers must be positive".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
    Ok((pool, workers))
}

/// Generate and decompose `reps` replicates of `spec`, returning one row per
/// spike and replicate in replicate order.
pub fn simulate(spec: &SpikedModelSpec, reps: usize, workers: Option<usize>) -> Result<Vec<SpectrumRow>> {
    spec.validate()?;
    let axes = population_axes(spec)?;
    let (pool, _) = pool(workers)?;
    let per_rep: Vec<Vec<SpectrumRow>> = pool.install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| {
                let data = generate_with_axes(spec, &axes, r)?;
                let sp = decompose_with(&data, &axes, NoiseTop::Compute)?;
                Ok((0..spec.m)
                    .map(|nu| SpectrumRow {
                        replicate: r,
                        nu: nu + 1,
                        ell_hat: sp.ell_hats[nu],
                        cos2: sp.cosines2[nu],
                        u_norm2: sp.u_norm2(nu),
                        mu1: sp.mu1,
                    })
                    .collect())
            })
            .collect::<Result<_>>()
    })?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Run every target of `config`.
pub fn run(config: &ExperimentConfig) -> Result<McRun> {
    run_with_overrides(config, BTreeMap::new())
}

/// [`run`], recording command-line overrides in the report.
pub fn run_with_overrides(config: &ExperimentConfig, overrides: BTreeMap<String, String>) -> Result<McRun> {
    config.validate()?;
    let start = Instant::now();
    let prepared = Prepared::new(config)?;
    let (pool, workers) = pool(config.workers)?;
    let outcomes: Vec<Outcome> =
        pool.install(|| (0..config.reps as u64).into_par_iter().map(|r| prepared.run_replicate(r)).collect::<Result<_>>())?;

    let mut rows = Vec::new();
    let mut sections = Vec::with_capacity(config.targets.len() + 1);
    for (i, target) in config.targets.iter().enumerate() {
        let label = target.label();
        let names = statistic_names(target, config.model.m, &prepared.pairs);
        let mut values = Vec::with_capacity(outcomes.len());
        let mut excluded = 0;
        for o in &outcomes {
            match &o.samples[i] {
                Sample::Values(v) => {
                    for (name, &value) in names.iter().zip(v) {
                        rows.push(ReplicateRow { replicate: o.replicate, target: label.clone(), statistic: name.clone(), value });
                    }
                    values.push(v.clone());
                }
                Sample::Excluded => {
                    excluded += 1;
                    rows.push(ReplicateRow { replicate: o.replicate, target: label.clone(), statistic: "excluded".into(), value: 1.0 });
                }
            }
        }
        sections.push(prepared.section(target, &values, excluded)?);
    }
    if !prepared.identity_nus.is_empty() {
        sections.push(prepared.identity_section(&outcomes));
    }
    let merged = aggregate(sections)?;
    let spectra = outcomes.into_iter().flat_map(|o| o.spectra).collect();
    let report = McReport {
        version: crate::VERSION.into(),
        config: config.clone(),
        overrides,
        sections: merged.sections,
        pass: merged.pass,
        runtime: Runtime { seconds: start.elapsed().as_secs_f64(), workers },
    };
    Ok(McRun { report, rows, spectra })
}

/// Replicate rows as `(replicate, statistic) → value` for one target.
pub fn replicate_values(rows: &[ReplicateRow], target: &str, statistic: &str) -> Vec<f64> {
    rows.iter().filter(|r| r.target == target && r.statistic == statistic).map(|r| r.value).collect()
}

/// Convenience for the quadform theory: `θJ + ωK` at the model's pairs.
pub fn quadform_theory(spec: &SpikedModelSpec, theta: f64, omega: f64) -> Result<DMatrix<f64>> {
    let axes = population_axes(spec)?;
    let kappa = exact_tensor(&spec.signal_dist, &axes.p, &spec.ells)?;
    let pairs: Vec<(usize, usize)> = (0..spec.m).flat_map(|j| (j..spec.m).map(move |k| (j, k))).collect();
    Ok(BilinearMoments::for_signal_pairs(&axes.sigma(), &kappa, &pairs)?.d_matrix(theta, omega))
}
