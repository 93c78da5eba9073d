//! Acceptance suite: one pass/fail line per criterion. Exits non-zero if any
//! criterion fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use spikecov::mc_harness::{self, ExperimentConfig, McReport, QuadFormSpec, SectionReport, Target, Tolerances, IDENTITY_SECTION};
use spikecov::model_gen::{SignalDistribution, SpikedModelSpec, UnitLaw};
use spikecov::perturbation::{fuzz, FuzzConfig, MIN_HALVING_RATIO};
use spikecov::spike_theory::{
    cosine_limit, phase_transition, spike_backward, spike_derivative, spike_forward, theta_omega_c,
};

use common::companion_integral;

const SEED: u64 = 20_240_611;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

fn no_checks() -> Tolerances {
    Tolerances {
        eval_mean_abs: None,
        eval_var_min: None,
        eval_var_max: None,
        eval_ks_max: None,
        eval_raw_var_rel: None,
        eval_gaussian_var_frac_max: None,
        evec_var_rel: None,
        evec_frob_rel: None,
        evec_mean_z_max: None,
        cosine_abs: None,
        cosine_subcritical_max: None,
        quadform_var_rel: None,
        quadform_ks_max: None,
        counterexample_ks_min: None,
        centering_shift_rel: None,
        centering_mean_abs: None,
        identity_tol: Some(1e-8),
        max_exclusion_rate: Some(0.01),
    }
}

fn run(name: &str, model: SpikedModelSpec, reps: usize, targets: Vec<Target>, tolerances: Tolerances) -> McReport {
    let mut config = ExperimentConfig::new(model, reps, targets);
    config.tolerances = tolerances;
    let report = mc_harness::run(&config).expect("experiment runs").report;
    println!("  ran {name}: {reps} replicates in {:.1}s", report.runtime.seconds);
    report
}

fn section<'a>(report: &'a McReport, label: &str) -> &'a SectionReport {
    report.section(label).unwrap_or_else(|| panic!("missing section {label}"))
}

fn metric(s: &SectionReport, name: &str) -> f64 {
    s.get(name).unwrap_or_else(|| panic!("missing metric {name} in {}", s.label))
}

fn failed_checks(s: &SectionReport) -> String {
    let failed: Vec<String> = s.checks.iter().filter(|c| !c.pass).map(|c| format!("{}={:.4}", c.name, c.value)).collect();
    if failed.is_empty() {
        String::new()
    } else {
        format!(" failed[{}]", failed.join(", "))
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1() -> Verdict {
    let mut worst_identity = 0.0f64;
    let mut worst_quadrature = 0.0f64;
    let mut cases = 0;
    for &ell in &[2.5, 3.0, 4.0, 6.0] {
        for &gamma in &[0.25, 0.5, 1.0, 2.0] {
            if ell <= phase_transition(gamma) {
                continue;
            }
            cases += 1;
            let rho = spike_forward(ell, gamma).unwrap();
            let rho_dot = spike_derivative(ell, gamma).unwrap();
            let c = theta_omega_c(ell, gamma).unwrap();
            let cos2 = cosine_limit(ell, gamma);
            for (lhs, rhs) in [
                (c.omega, c.theta * rho_dot),
                (c.slutsky * ell * rho_dot, rho),
                (cos2 * rho, ell * rho_dot),
                (spike_backward(rho, gamma).unwrap(), ell),
            ] {
                worst_identity = worst_identity.max(rel(lhs, rhs));
            }
            let inv = companion_integral(gamma, &|x| 1.0 / (rho - x));
            let inv_sq = companion_integral(gamma, &|x| (rho - x).powi(-2));
            let x_inv_sq = companion_integral(gamma, &|x| x / (rho - x).powi(2));
            for (closed, quad) in [
                (c.theta, rho * rho * inv_sq),
                (c.omega, (rho * inv).powi(2)),
                (c.c_rho, x_inv_sq),
                (c.slutsky, ell * rho * inv_sq),
                (1.0 / ell, inv),
            ] {
                worst_quadrature = worst_quadrature.max(rel(closed, quad));
            }
        }
    }
    Verdict::new(
        cases == 16 && worst_identity <= 1e-12 && worst_quadrature <= 1e-6,
        format!("{cases} grid points, max identity rel err {worst_identity:.2e} (tol 1e-12), max quadrature rel err {worst_quadrature:.2e} (tol 1e-6)"),
    )
}

fn criterion_2(gauss: &McReport) -> Verdict {
    let s = section(gauss, "eval_clt[nu=1]");
    Verdict::new(
        s.pass,
        format!(
            "mean {:+.4} (|.|<=0.1), variance {:.4} (in [0.8, 1.2]), KS {:.4} (<=0.08), excluded {}/{}{}",
            metric(s, "mean"),
            metric(s, "variance"),
            metric(s, "ks"),
            s.excluded,
            s.excluded + s.replicates_used,
            failed_checks(s)
        ),
    )
}

fn criterion_3(rademacher: &McReport) -> Verdict {
    let s = section(rademacher, "eval_clt[nu=1]");
    let (var, theory, gauss) = (metric(s, "raw_variance"), metric(s, "theory_sigma2"), metric(s, "theory_sigma2_gaussian"));
    let theory_ok = (theory - 1.679).abs() < 5e-4 && (gauss - 30.22).abs() < 5e-3;
    Verdict::new(
        s.pass && theory_ok,
        format!(
            "raw variance {var:.4} vs sigma2 {theory:.4} (rel err {:.3} <= 0.25), {:.2}% of Gaussian {gauss:.2} (< 10%){}",
            rel(var, theory),
            100.0 * var / gauss,
            failed_checks(s)
        ),
    )
}

fn criterion_4(sup: &McReport, sub: &McReport) -> Verdict {
    let a = section(sup, "cosine[nu=1]");
    let b = section(sub, "cosine[nu=1]");
    let theory_ok = (metric(a, "theory") - 0.8095).abs() < 5e-5;
    Verdict::new(
        a.pass && b.pass && theory_ok,
        format!(
            "supercritical mean {:.4} vs {:.4} (+-0.03); subcritical mean {:.4} (<=0.05){}{}",
            metric(a, "mean"),
            metric(a, "theory"),
            metric(b, "mean"),
            failed_checks(a),
            failed_checks(b)
        ),
    )
}

fn criterion_5(gauss: &McReport, mixture: &McReport) -> Verdict {
    let g = section(gauss, "evec_clt[nu=1]");
    let m = section(mixture, "evec_clt[nu=1]");
    let (vg, tg) = (metric(g, "var_2"), metric(g, "theory_var_2"));
    let (vm, tm) = (metric(m, "var_2"), metric(m, "theory_var_2"));
    let theory_ok = (tg - 4.7059).abs() < 5e-4 && (tm - 5.8170).abs() < 5e-4;
    let direction = (vm - vg).signum() == (tm - tg).signum();
    let within = rel(vg, tg) <= 0.25 && rel(vm, tm) <= 0.25;
    Verdict::new(
        within && direction && theory_ok,
        format!(
            "Gaussian var {vg:.4} vs {tg:.4} (rel {:.3}), scale mixture var {vm:.4} vs {tm:.4} (rel {:.3}), tol 0.25, direction {}",
            rel(vg, tg),
            rel(vm, tm),
            if direction { "ok" } else { "wrong" }
        ),
    )
}

fn criterion_6(gauss: &McReport, uniform: &McReport) -> Verdict {
    let g = section(gauss, "quadform[identity]");
    let o = section(gauss, "quadform[onatski_counterexample]");
    let u = section(uniform, "quadform[identity]");
    let theory_ok = metric(g, "theory_var_11") == 2.0 && (metric(u, "theory_var_11") - 0.8).abs() < 1e-12;
    Verdict::new(
        g.pass && u.pass && o.pass && theory_ok,
        format!(
            "Gaussian var {:.4} (->2, rel {:.3}), uniform var {:.4} (->0.8, rel {:.3}), tol 0.15; counterexample KS {:.4} (> 0.05, expected failure){}{}{}",
            metric(g, "var_11"),
            metric(g, "var_11_rel_err"),
            metric(u, "var_11"),
            metric(u, "var_11_rel_err"),
            metric(o, "ks_11"),
            failed_checks(g),
            failed_checks(u),
            failed_checks(o)
        ),
    )
}

fn criterion_7(reports: &[(&str, &McReport, usize)]) -> Verdict {
    let mut pass = true;
    let mut evaluations = 0.0;
    let mut violations = 0.0;
    let mut max_det = 0.0f64;
    let mut max_q = 0.0f64;
    for &(name, report, expected) in reports {
        let Some(s) = report.section(IDENTITY_SECTION) else {
            println!("    {name}: identity section missing");
            pass = false;
            continue;
        };
        evaluations += metric(s, "evaluations");
        violations += metric(s, "violations");
        max_det = max_det.max(metric(s, "max_det_rel"));
        max_q = max_q.max(metric(s, "max_q_rel"));
        // every replicate must be checked for every supercritical spike
        pass &= s.pass && metric(s, "evaluations") as usize == expected;
    }
    Verdict::new(
        pass && violations == 0.0,
        format!("{evaluations} evaluations, {violations} violations, max det rel {max_det:.2e}, max Q rel {max_q:.2e} (tol 1e-8)"),
    )
}

fn criterion_8() -> Verdict {
    let report = fuzz(&FuzzConfig { trials: 10_000, dims: (2..=8).collect(), gap_ratio: 0.25, seed: SEED }).expect("fuzz runs");
    Verdict::new(
        report.pass(),
        format!(
            "{} trials, {} applicable, {} violations, max constant {:.3}, median halving ratio {:.3} (>= {MIN_HALVING_RATIO})",
            report.config.trials, report.applicable, report.violations, report.max_constant, report.median_halving_ratio
        ),
    )
}

fn criterion_9(centering: &McReport) -> Verdict {
    let s = section(centering, "centering_shift[nu=1,gamma=0.5]");
    let predicted = 4.0 / 3.0;
    let shift_ok = rel(metric(s, "predicted_shift"), predicted) < 1e-12;
    Verdict::new(
        s.pass && shift_ok,
        format!(
            "shift mean {:.4} vs a*l/(l-1) = {:.4} (rel {:.3} <= 0.30), studentized mean at gamma_n {:+.4} (|.|<=0.1){}",
            metric(s, "shift_mean"),
            predicted,
            metric(s, "shift_rel_err"),
            metric(s, "studentized_mean"),
            failed_checks(s)
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();

    let base = SpikedModelSpec::gaussian(400, 800, vec![4.0, 2.5], SEED);
    let gauss = run(
        "gaussian",
        base.clone(),
        500,
        vec![Target::EvalClt { nu: 1 }, Target::EvecClt { nu: 1 }],
        Tolerances {
            eval_mean_abs: Some(0.1),
            eval_var_min: Some(0.8),
            eval_var_max: Some(1.2),
            eval_ks_max: Some(0.08),
            evec_var_rel: Some(0.25),
            ..no_checks()
        },
    );
    let rademacher = run(
        "rademacher",
        SpikedModelSpec { signal_dist: SignalDistribution::IidFactors { factor: UnitLaw::Rademacher }, ..base.clone() },
        500,
        vec![Target::EvalClt { nu: 1 }],
        Tolerances { eval_raw_var_rel: Some(0.25), eval_gaussian_var_frac_max: Some(0.1), ..no_checks() },
    );
    let mixture = run(
        "scale mixture",
        SpikedModelSpec { signal_dist: SignalDistribution::ScaleMixture { ew4: 1.25 }, ..base.clone() },
        500,
        vec![Target::EvecClt { nu: 1 }],
        Tolerances { evec_var_rel: Some(0.25), ..no_checks() },
    );
    let cosine_sup = run("cosine supercritical", base.clone(), 200, vec![Target::Cosine { nu: 1 }], Tolerances { cosine_abs: Some(0.03), ..no_checks() });
    let cosine_sub = run(
        "cosine subcritical",
        SpikedModelSpec::gaussian(800, 800, vec![1.5], SEED),
        200,
        vec![Target::Cosine { nu: 1 }],
        Tolerances { cosine_subcritical_max: Some(0.05), ..no_checks() },
    );
    let quad_gauss = run(
        "quadform gaussian",
        SpikedModelSpec::gaussian(0, 500, vec![1.0], SEED),
        2000,
        vec![Target::Quadform { b: QuadFormSpec::Identity }, Target::Quadform { b: QuadFormSpec::OnatskiCounterexample }],
        Tolerances { quadform_var_rel: Some(0.15), counterexample_ks_min: Some(0.05), ..no_checks() },
    );
    let quad_uniform = run(
        "quadform uniform",
        SpikedModelSpec {
            signal_dist: SignalDistribution::IidFactors { factor: UnitLaw::UniformPmSqrt3 },
            ..SpikedModelSpec::gaussian(0, 500, vec![1.0], SEED)
        },
        2000,
        vec![Target::Quadform { b: QuadFormSpec::Identity }],
        Tolerances { quadform_var_rel: Some(0.15), ..no_checks() },
    );
    // γn = 0.5 + 1/√1600
    let centering = run(
        "centering",
        SpikedModelSpec::gaussian(840, 1600, vec![4.0], SEED),
        1000,
        vec![Target::CenteringShift { nu: 1, gamma_limit: 0.5 }],
        Tolerances { centering_shift_rel: Some(0.30), centering_mean_abs: Some(0.1), ..no_checks() },
    );

    let verdicts = [
        criterion_1(),
        criterion_2(&gauss),
        criterion_3(&rademacher),
        criterion_4(&cosine_sup, &cosine_sub),
        criterion_5(&gauss, &mixture),
        criterion_6(&quad_gauss, &quad_uniform),
        criterion_7(&[
            ("gaussian", &gauss, 500 * 2),
            ("rademacher", &rademacher, 500 * 2),
            ("scale mixture", &mixture, 500 * 2),
            ("cosine", &cosine_sup, 200 * 2),
        ]),
        criterion_8(),
        criterion_9(&centering),
    ];
    let mut all = true;
    for (i, v) in verdicts.iter().enumerate() {
        all &= v.pass;
        println!("criterion {} {}: {}", i + 1, if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    println!("acceptance {} in {:.1}s", if all { "PASS" } else { "FAIL" }, start.elapsed().as_secs_f64());
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
