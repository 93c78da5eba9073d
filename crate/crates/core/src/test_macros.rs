macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b, tol): (f64, f64, f64) = ($a, $b, $tol);
        assert!((a - b).abs() <= tol, "{} = {a} vs {} = {b} (tol {tol:e})", stringify!($a), stringify!($b));
    }};
}
