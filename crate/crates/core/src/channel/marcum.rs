//! First-order Marcum Q function.
//!
//! Uses the Poisson-mixture form
//!
//! `Q1(a, b) = sum_k Pois(k; a^2/2) * P[Pois(b^2/2) <= k]`,
//!
//! whose terms are all non-negative, so the partial sums never cancel. Both
//! Poisson pmfs are evaluated in the log domain, which keeps the series usable
//! when `exp(-b^2/2)` alone would underflow.

/// Poisson mass beyond the mean plus this many standard deviations (plus a
/// fixed margin) is below 1e-30 and dropped.
const TAIL_SIGMAS: f64 = 14.0;
const TAIL_MARGIN: f64 = 40.0;

fn window(mean: f64) -> (usize, usize) {
    let spread = TAIL_SIGMAS * mean.sqrt() + TAIL_MARGIN;
    (
        (mean - spread).max(0.0).floor() as usize,
        (mean + spread).ceil() as usize,
    )
}

/// `ln(n!)`; exact summation below 32, Stirling series above.
fn ln_factorial(n: usize) -> f64 {
    if n < 32 {
        return (2..=n).map(|k| (k as f64).ln()).sum();
    }
    let x = n as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    (x - 0.5) * x.ln() - x
        + 0.5 * std::f64::consts::TAU.ln()
        + inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)))
}

pub fn marcum_q1(a: f64, b: f64) -> f64 {
    assert!(a >= 0.0 && b >= 0.0, "Marcum Q1 needs a, b >= 0 (got {a}, {b})");
    if b == 0.0 {
        return 1.0;
    }
    let x = 0.5 * a * a;
    let y = 0.5 * b * b;
    if x == 0.0 {
        return (-y).exp();
    }
    let (x_lo, x_hi) = window(x);
    let (y_lo, y_hi) = window(y);
    // The mixture weight lives on [x_lo, x_hi] and the Poisson(y) cdf is
    // negligible below y_lo and saturated above y_hi.
    if x_hi < y_lo {
        return 0.0;
    }
    if x_lo > y_hi {
        return 1.0;
    }
    let (ln_x, ln_y) = (x.ln(), y.ln());
    let first = x_lo.min(y_lo);
    let last = x_hi.max(y_hi);
    // Rounding in the running log-factorial biases every term alike; dividing
    // by the computed masses cancels it.
    let mut ln_fact = ln_factorial(first);
    let (mut mass_x, mut mass_y) = (0.0, 0.0);
    let mut weighted = 0.0;
    for k in first..=last {
        if k > first {
            ln_fact += (k as f64).ln();
        }
        let kf = k as f64;
        if k >= y_lo {
            mass_y += (-y + kf * ln_y - ln_fact).exp();
        }
        if k >= x_lo && k <= x_hi {
            let w = (-x + kf * ln_x - ln_fact).exp();
            mass_x += w;
            // Unnormalized cdf; rescaled by the final mass_y below.
            weighted += w * mass_y;
        }
    }
    ((weighted / mass_y) / mass_x).clamp(0.0, 1.0)
}
