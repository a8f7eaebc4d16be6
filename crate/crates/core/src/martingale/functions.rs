use std::f64::consts::E;

/// `log^{(a)}`: linear below `e^a`, `(log x)^a` above; continuous at `e^a`.
pub fn log_a(a: f64, x: f64) -> f64 {
    debug_assert!(a >= 1.0 && x >= 0.0);
    let knee = a.exp();
    if x < knee {
        (a / E).powf(a) * x
    } else {
        x.ln().powf(a)
    }
}

/// Inverse-type companion of `log^{(1)}`: `x` above `e`, `exp(x/e)` below.
pub fn exp_1(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x >= E {
        x
    } else {
        (x / E).exp()
    }
}

/// `log₊ x = max(log x, 0)`.
pub fn log_plus(x: f64) -> f64 {
    if x > 1.0 {
        x.ln()
    } else {
        0.0
    }
}
