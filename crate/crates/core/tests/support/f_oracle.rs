// SPDX-License-Identifier: MIT OR Apache-2.0

//! Independent F-distribution critical values by adaptive quadrature of the
//! density, for checking the incomplete-beta inversion.

use statrs::function::gamma::ln_gamma;

fn ln_density(t: f64, d1: f64, d2: f64) -> f64 {
    let ln_b = ln_gamma(d1 / 2.0) + ln_gamma(d2 / 2.0) - ln_gamma((d1 + d2) / 2.0);
    0.5 * d1 * (d1 / d2).ln() + (0.5 * d1 - 1.0) * t.ln() - 0.5 * (d1 + d2) * (d1 * t / d2).ln_1p() - ln_b
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    adaptive(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + adaptive(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// `P(F > f)`, integrating the density over `[f, ∞)` after mapping it onto
/// `u ∈ [0, 1)` with `t = f + u / (1 − u)`.
pub fn upper_tail_by_integration(f: f64, d1: f64, d2: f64) -> f64 {
    let g = |u: f64| {
        if u >= 1.0 {
            return 0.0;
        }
        let w = 1.0 - u;
        let t = f + u / w;
        ln_density(t, d1, d2).exp() / (w * w)
    };
    // split so each piece is smooth enough for the recursion
    let cuts = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99, 1.0];
    cuts.windows(2)
        .map(|w| {
            let (a, b) = (w[0], w[1]);
            let (fa, fm, fb) = (g(a), g(0.5 * (a + b)), g(b));
            adaptive(&g, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), 1e-14, 50)
        })
        .sum()
}

pub fn f_quantile_by_integration(alpha: f64, d1: f64, d2: f64) -> f64 {
    let mut hi = 1.0;
    while upper_tail_by_integration(hi, d1, d2) > alpha {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    while hi - lo > 1e-12 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if upper_tail_by_integration(mid, d1, d2) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
