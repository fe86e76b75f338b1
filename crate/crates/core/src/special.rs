//! Regularized incomplete gamma function.

/// Lower regularized incomplete gamma `P(a, x) = γ(a, x) / Γ(a)`.
///
/// Series expansion for `x < a + 1`, Lentz continued fraction for the
/// upper tail otherwise. `x = +∞` gives 1. Requires `a > 0`, `x >= 0`.
pub fn gamma_p(a: f64, x: f64) -> f64 {
    debug_assert!(a > 0.0);
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let p = if x < a + 1.0 {
        series(a, x)
    } else {
        1.0 - continued_fraction(a, x)
    };
    p.clamp(0.0, 1.0)
}

const EPS: f64 = 1e-15;
const MAX_ITER: usize = 10_000;
const TINY: f64 = 1e-300;

fn log_prefactor(a: f64, x: f64) -> f64 {
    a * libm::log(x) - x - libm::lgamma(a)
}

fn series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if libm::fabs(term) < libm::fabs(sum) * EPS {
            break;
        }
    }
    sum * libm::exp(log_prefactor(a, x))
}

// Upper regularized Q(a, x).
fn continued_fraction(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if libm::fabs(d) < TINY {
            d = TINY;
        }
        c = b + an / c;
        if libm::fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if libm::fabs(del - 1.0) < EPS {
            break;
        }
    }
    libm::exp(log_prefactor(a, x)) * h
}
