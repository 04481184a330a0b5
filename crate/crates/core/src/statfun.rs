//! Special functions for the local tests: chi-square and F distribution
//! functions and the standard normal quantile.
//!
//! Everything is built on the regularized incomplete gamma and beta
//! functions. Quantiles are found by safeguarded Newton iteration inside a
//! bracket that is bisected whenever a Newton step leaves it.

use crate::error::{Error, Result};

const QUANTILE_MAX_ITER: usize = 200;
const EPS: f64 = 1e-16;
const TINY: f64 = 1e-300;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Natural log of the gamma function for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    if x >= 10.0 {
        return (x - 0.5) * x.ln() - x + LN_SQRT_2PI + stirling_error(x);
    }
    let x = x - 1.0;
    let mut acc = LANCZOS[0];
    for (i, c) in LANCZOS.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + LANCZOS_G + 0.5;
    LN_SQRT_2PI + (x + 0.5) * t.ln() - t + acc.ln()
}

/// `ln Γ(a) - [(a - 1/2) ln a - a + ln √(2π)]`, accurate for `a >= 10`.
fn stirling_error(a: f64) -> f64 {
    const B: [f64; 8] = [
        1.0 / 12.0,
        -1.0 / 360.0,
        1.0 / 1260.0,
        -1.0 / 1680.0,
        1.0 / 1188.0,
        -691.0 / 360_360.0,
        1.0 / 156.0,
        -3617.0 / 122_400.0,
    ];
    let inv = 1.0 / a;
    let inv2 = inv * inv;
    let mut term = inv;
    let mut sum = 0.0;
    for b in B {
        sum += b * term;
        term *= inv2;
    }
    sum
}

/// `x^a e^{-x} / Γ(a)`, computed without cancellation for large `a`.
fn gamma_prefix(a: f64, x: f64) -> f64 {
    if x == 0.0 {
        return 0.0;
    }
    if a >= 10.0 {
        let d = (x - a) / a;
        // a ln(x/a) - (x - a) = -a (d - ln(1 + d))
        let core = -a * (d - d.ln_1p());
        (core + 0.5 * (a / (2.0 * std::f64::consts::PI)).ln() - stirling_error(a)).exp()
    } else {
        (a * x.ln() - x - ln_gamma(a)).exp()
    }
}

fn series_cap(shape: f64) -> usize {
    500 + (50.0 * shape.sqrt()) as usize
}

/// Regularized incomplete gamma functions `(P(a, x), Q(a, x))`.
pub fn reg_gamma(a: f64, x: f64) -> Result<(f64, f64)> {
    if !(a > 0.0) || !a.is_finite() {
        return Err(Error::domain("reg_gamma", format!("shape must be positive, got {a}")));
    }
    if !(x >= 0.0) {
        return Err(Error::domain("reg_gamma", format!("x must be nonnegative, got {x}")));
    }
    if x == 0.0 {
        return Ok((0.0, 1.0));
    }
    if x.is_infinite() {
        return Ok((1.0, 0.0));
    }
    let prefix = gamma_prefix(a, x);
    let cap = series_cap(a.max(x));
    if x < a + 1.0 {
        let mut denom = a;
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut converged = false;
        for _ in 0..cap {
            denom += 1.0;
            term *= x / denom;
            sum += term;
            if term.abs() < sum.abs() * EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                routine: "reg_gamma series",
                iterations: cap,
            });
        }
        let p = (sum * prefix).min(1.0);
        Ok((p, 1.0 - p))
    } else {
        // modified Lentz on the continued fraction for Q
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / TINY;
        let mut d = 1.0 / b;
        let mut h = d;
        let mut converged = false;
        for i in 1..=cap {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < TINY {
                d = TINY;
            }
            c = b + an / c;
            if c.abs() < TINY {
                c = TINY;
            }
            d = 1.0 / d;
            let delta = d * c;
            h *= delta;
            if (delta - 1.0).abs() < EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::NoConvergence {
                routine: "reg_gamma continued fraction",
                iterations: cap,
            });
        }
        let q = (prefix * h).min(1.0);
        Ok((1.0 - q, q))
    }
}

/// Regularized incomplete beta `I_x(a, b)` given both `x` and `y = 1 - x`
/// so callers can pass an accurately computed complement.
fn reg_beta_split(a: f64, b: f64, x: f64, y: f64) -> Result<f64> {
    if x <= 0.0 {
        return Ok(0.0);
    }
    if y <= 0.0 {
        return Ok(1.0);
    }
    if x > (a + 1.0) / (a + b + 2.0) {
        return Ok(1.0 - reg_beta_split(b, a, y, x)?);
    }
    let ln_front = a * x.ln() + b * y.ln() - (ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b));
    let front = ln_front.exp() / a;

    let cap = series_cap(a.max(b));
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=cap {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < EPS {
            return Ok((front * h).clamp(0.0, 1.0));
        }
    }
    Err(Error::NoConvergence {
        routine: "reg_beta continued fraction",
        iterations: cap,
    })
}

/// Regularized incomplete beta `I_x(a, b)`.
pub fn reg_beta(a: f64, b: f64, x: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::domain("reg_beta", "shape parameters must be positive"));
    }
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::domain("reg_beta", format!("x must be in [0, 1], got {x}")));
    }
    reg_beta_split(a, b, x, 1.0 - x)
}

pub fn chi2_cdf(x: f64, df: usize) -> Result<f64> {
    check_df("chi2_cdf", df)?;
    if !(x >= 0.0) {
        return Err(Error::domain("chi2_cdf", format!("x must be nonnegative, got {x}")));
    }
    Ok(reg_gamma(df as f64 / 2.0, x / 2.0)?.0)
}

pub fn chi2_sf(x: f64, df: usize) -> Result<f64> {
    check_df("chi2_sf", df)?;
    if !(x >= 0.0) {
        return Err(Error::domain("chi2_sf", format!("x must be nonnegative, got {x}")));
    }
    Ok(reg_gamma(df as f64 / 2.0, x / 2.0)?.1)
}

fn chi2_pdf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    let y = x / 2.0;
    0.5 * gamma_prefix(df as f64 / 2.0, y) / y
}

fn check_df(routine: &'static str, df: usize) -> Result<()> {
    if df == 0 {
        Err(Error::domain(routine, "degrees of freedom must be positive"))
    } else {
        Ok(())
    }
}

fn check_prob(routine: &'static str, prob: f64) -> Result<()> {
    if prob > 0.0 && prob < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(routine, format!("probability must be in (0, 1), got {prob}")))
    }
}

/// The `prob`-quantile of the chi-square distribution with `df` degrees of freedom.
pub fn chi2_quantile(prob: f64, df: usize) -> Result<f64> {
    check_prob("chi2_quantile", prob)?;
    check_df("chi2_quantile", df)?;
    let k = df as f64;
    let upper = prob > 0.5;
    let target = if upper { 1.0 - prob } else { prob };
    // Increasing in x in both branches.
    let objective = |x: f64| -> Result<f64> {
        let (p, q) = reg_gamma(k / 2.0, x / 2.0)?;
        Ok(if upper { target - q } else { p - target })
    };

    // Wilson-Hilferty start
    let z = std_normal_quantile(prob)?;
    let h = 2.0 / (9.0 * k);
    let mut x = k * (1.0 - h + z * h.sqrt()).powi(3);
    if !(x > 0.0) {
        x = k * 0.5;
    }

    let mut lo = 0.0;
    let mut hi = x.max(1.0);
    let mut expand = 0;
    while objective(hi)? < 0.0 {
        lo = hi;
        hi *= 2.0;
        expand += 1;
        if expand > 1100 {
            return Err(Error::NoConvergence {
                routine: "chi2_quantile bracket",
                iterations: expand,
            });
        }
    }
    x = x.clamp(lo, hi);

    for _ in 0..QUANTILE_MAX_ITER {
        let f = objective(x)?;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        let slope = chi2_pdf(x, df);
        let mut next = if slope > 0.0 { x - f / slope } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let step = (next - x).abs();
        x = next;
        if step <= 1e-14 * x.max(1.0) || hi - lo <= 1e-14 * hi.max(1.0) {
            return Ok(x);
        }
    }
    Err(Error::NoConvergence {
        routine: "chi2_quantile",
        iterations: QUANTILE_MAX_ITER,
    })
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    // Q(1/2, x^2) never leaves its domain here
    reg_gamma(0.5, x * x).map(|(_, q)| q).unwrap_or(0.0)
}

/// Standard normal distribution function.
pub fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Inverse of the standard normal distribution function.
pub fn std_normal_quantile(prob: f64) -> Result<f64> {
    check_prob("std_normal_quantile", prob)?;
    if prob == 0.5 {
        return Ok(0.0);
    }
    if prob > 0.5 {
        return Ok(-std_normal_quantile(1.0 - prob)?);
    }
    let mut x = acklam(prob);
    // Halley refinement against the lower tail, which is accurate for x < 0.
    for _ in 0..3 {
        let e = std_normal_cdf(x) - prob;
        let u = e * (2.0 * std::f64::consts::PI).sqrt() * (0.5 * x * x).exp();
        x -= u / (1.0 + 0.5 * x * u);
    }
    Ok(x)
}

/// Acklam's rational approximation, relative error about 1e-9.
fn acklam(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.024_25;
    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    }
}

fn check_f_args(routine: &'static str, x: f64, d1: usize, d2: usize) -> Result<()> {
    if d1 == 0 || d2 == 0 {
        return Err(Error::domain(routine, "degrees of freedom must be positive"));
    }
    if !(x >= 0.0) {
        return Err(Error::domain(routine, format!("x must be nonnegative, got {x}")));
    }
    Ok(())
}

/// `P(F_{d1,d2} <= x)`.
pub fn f_cdf(x: f64, d1: usize, d2: usize) -> Result<f64> {
    check_f_args("f_cdf", x, d1, d2)?;
    if x.is_infinite() {
        return Ok(1.0);
    }
    let (a, b) = (d1 as f64, d2 as f64);
    let denom = a * x + b;
    reg_beta_split(a / 2.0, b / 2.0, a * x / denom, b / denom)
}

/// `P(F_{d1,d2} > x)`, evaluated on the mirrored beta so small tails keep
/// their relative accuracy.
pub fn f_sf(x: f64, d1: usize, d2: usize) -> Result<f64> {
    check_f_args("f_sf", x, d1, d2)?;
    if x.is_infinite() {
        return Ok(0.0);
    }
    let (a, b) = (d1 as f64, d2 as f64);
    let denom = a * x + b;
    reg_beta_split(b / 2.0, a / 2.0, b / denom, a * x / denom)
}
