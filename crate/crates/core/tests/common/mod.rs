//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

/// Adaptive Simpson quadrature of `f` over `[a, b]` to relative tolerance
/// `rel_tol`, measured against a 256-panel estimate of `∫|f|`.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, h: f64) -> f64 {
        h / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, m - a);
        let right = simpson(fm, frm, fb, b - m);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let panels = 256;
    let h = (b - a) / panels as f64;
    let scale: f64 = (0..panels)
        .map(|i| {
            let x = a + i as f64 * h;
            simpson(f(x).abs(), f(x + 0.5 * h).abs(), f(x + h).abs(), h)
        })
        .sum();
    let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, 40)
}

/// `∫ g d𝖥_γ` for the companion law `(1−γ)₊δ₀ + γF_γ`, with the bulk
/// integrated under `x = a + 2h·sin²(φ/2)` so the square-root edges become
/// smooth.
pub fn companion_integral(gamma: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    let (lo, hi) = ((1.0 - gamma.sqrt()).powi(2), (1.0 + gamma.sqrt()).powi(2));
    let h = 0.5 * (hi - lo);
    // γ·√((b−x)(x−a))/(2πγx) dx = h² sin²φ / (2πx) dφ
    let bulk = adaptive_simpson(
        &|phi: f64| {
            let (s, c) = (0.5 * phi).sin_cos();
            let x = lo + 2.0 * h * s * s;
            let weight = if lo > 0.0 { 4.0 * h * h * s * s * c * c / (2.0 * PI * x) } else { h * c * c / PI };
            weight * g(x)
        },
        0.0,
        PI,
        1e-11,
    );
    bulk + (1.0 - gamma).max(0.0) * g(0.0)
}

/// Moment `∫ xᵏ dF_γ` of the Marchenko–Pastur law itself.
pub fn mp_moment(gamma: f64, k: i32) -> f64 {
    let atom_free = companion_integral(gamma, &|x| if x == 0.0 { 0.0 } else { x.powi(k) });
    atom_free / gamma
}
