//! Bessel functions J0, Y0 and the outgoing Hankel function H0^(1).
//!
//! Arguments are complex with a small non-negative imaginary part (the
//! damped-kernel oracle feeds slightly rotated arguments); accuracy is
//! 1e-10 relative on the real axis and 1e-8 inside the wedge
//! |arg x| <= 0.2 that the oracle actually uses.

use num_complex::Complex64;
use thiserror::Error;

/// Euler-Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Switchover between the ascending series and the Hankel asymptotic
/// expansion. Below this the series loses at most ~6 digits to
/// cancellation (absolute error ~3e-11); above it the divergent
/// asymptotic series bottoms out near e^{-2x} ~ 1e-11.
const SERIES_CUTOFF: f64 = 14.0;

#[derive(Debug, Error, PartialEq)]
pub enum SpecFunError {
    #[error("H0^(1) has a logarithmic singularity at the origin")]
    OriginSingularity,
    #[error("argument outside supported wedge |arg x| < pi/2 (got arg = {0})")]
    OutsideWedge(f64),
}

/// J0 for real argument.
pub fn bessel_j0(x: f64) -> f64 {
    let z = Complex64::new(x.abs(), 0.0);
    if x.abs() <= SERIES_CUTOFF {
        j0_series(z).re
    } else {
        hankel0_asymptotic(z).re
    }
}

/// Y0 for real positive argument.
pub fn bessel_y0(x: f64) -> f64 {
    assert!(x > 0.0, "Y0 requires x > 0");
    let z = Complex64::new(x, 0.0);
    if x <= SERIES_CUTOFF {
        y0_series(z).re
    } else {
        hankel0_asymptotic(z).im
    }
}

/// Outgoing Hankel function H0^(1)(x) = J0(x) + i Y0(x).
///
/// Requires x != 0 and |arg x| < pi/2.
pub fn hankel0(x: Complex64) -> Result<Complex64, SpecFunError> {
    if x.norm() == 0.0 {
        return Err(SpecFunError::OriginSingularity);
    }
    let arg = x.arg();
    if arg.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(SpecFunError::OutsideWedge(arg));
    }
    if x.norm() <= SERIES_CUTOFF {
        let j0 = j0_series(x);
        let y0 = y0_series(x);
        Ok(j0 + Complex64::i() * y0)
    } else {
        Ok(hankel0_asymptotic(x))
    }
}

/// Convenience wrapper for real positive arguments on the hot paths.
/// Panics on x <= 0, which every caller guards by construction.
pub fn hankel0_real(x: f64) -> Complex64 {
    assert!(x > 0.0, "hankel0_real requires x > 0");
    if x <= SERIES_CUTOFF {
        let z = Complex64::new(x, 0.0);
        let j0 = j0_series(z);
        let y0 = y0_series(z);
        Complex64::new(j0.re - y0.im, j0.im + y0.re)
    } else {
        hankel0_asymptotic(Complex64::new(x, 0.0))
    }
}

/// Ascending series for J0: sum_m (-1)^m (x/2)^{2m} / (m!)^2.
fn j0_series(x: Complex64) -> Complex64 {
    let q = -(x * x) * 0.25;
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = term;
    for m in 1..80 {
        term *= q / ((m * m) as f64);
        sum += term;
        if term.norm_sqr() < 1e-64 * sum.norm_sqr() {
            break;
        }
    }
    sum
}

/// Ascending series for Y0:
/// (2/pi)[(ln(x/2)+gamma) J0(x) + sum_m (-1)^{m+1} H_m (x/2)^{2m}/(m!)^2].
fn y0_series(x: Complex64) -> Complex64 {
    let q = -(x * x) * 0.25;
    let mut term = Complex64::new(1.0, 0.0);
    let mut harmonic = 0.0;
    let mut sum = Complex64::new(0.0, 0.0);
    for m in 1..80 {
        term *= q / ((m * m) as f64);
        harmonic += 1.0 / m as f64;
        // (-1)^{m+1} H_m (x/2)^{2m}/(m!)^2 = -H_m * term
        sum -= harmonic * term;
        if term.norm_sqr() < 1e-64 {
            break;
        }
    }
    let j0 = j0_series(x);
    std::f64::consts::FRAC_2_PI * (((x * 0.5).ln() + EULER_GAMMA) * j0 + sum)
}

/// Hankel asymptotic expansion,
/// H0^(1)(x) ~ sqrt(2/(pi x)) e^{i(x - pi/4)} sum_k (-i)^k a_k / x^k,
/// a_k = ((2k-1)!!)^2 / (k! 8^k). Terms are added until they stop
/// decreasing or drop below 1e-17 relative.
fn hankel0_asymptotic(x: Complex64) -> Complex64 {
    let mut sum = Complex64::new(1.0, 0.0);
    let mut coeff = Complex64::new(1.0, 0.0);
    let mut last_norm = f64::INFINITY;
    for k in 1u32..60 {
        let m = k as f64;
        // a_k / a_{k-1} = (2k-1)^2 / (8k); extra factor -i/x per order
        coeff *= -Complex64::i() * ((2.0 * m - 1.0) * (2.0 * m - 1.0) / (8.0 * m)) / x;
        let n = coeff.norm();
        if n >= last_norm {
            break;
        }
        sum += coeff;
        last_norm = n;
        if n < 1e-17 {
            break;
        }
    }
    let phase = Complex64::i() * (x - std::f64::consts::FRAC_PI_4);
    (Complex64::new(std::f64::consts::FRAC_2_PI, 0.0) / x).sqrt() * phase.exp() * sum
}
