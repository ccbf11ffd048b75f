//! Polylogarithms Li_s(e^{i theta}) of half-integer order and the real
//! zeta values feeding them.
//!
//! The kernel tail acceleration needs Li_s on the unit circle for
//! s = 1/2, 3/2, 5/2, 7/2. These are evaluated through the Lerch-type
//! expansion
//!
//!   Li_s(e^mu) = Gamma(1-s) (-mu)^{s-1} + sum_j zeta(s-j) mu^j / j!
//!
//! with mu = i theta, valid for |theta| < 2 pi; theta is wrapped into
//! (-pi, pi] first (Li_s(e^{i theta}) is 2 pi periodic), so the series
//! contracts at least like (1/2)^j.

use num_complex::Complex64;
use std::sync::OnceLock;

/// B_2, B_4, ..., B_24.
const BERNOULLI: [f64; 12] = [
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
];

/// Gamma at positive half-integers: Gamma(m + 1/2).
fn gamma_half(m: u32) -> f64 {
    let mut g = std::f64::consts::PI.sqrt();
    for i in 1..=m {
        g *= i as f64 - 0.5;
    }
    g
}

/// Riemann zeta for real s != 1 by Euler-Maclaurin (s >= 0.5) or the
/// functional equation (s < 0.5).
pub fn zeta(s: f64) -> f64 {
    assert!(s != 1.0, "zeta pole at s = 1");
    if s < 0.5 {
        // zeta(s) = 2 (2pi)^{s-1} sin(pi s / 2) Gamma(1-s) zeta(1-s)
        let one_minus = 1.0 - s;
        // only half-integer arguments reach this branch in this crate,
        // but keep it general via Lanczos-free recursion when possible
        let gamma = if (one_minus * 2.0).fract() == 0.0 && one_minus > 0.0 {
            let m = (one_minus - 0.5).round();
            if m >= 0.0 && (one_minus - 0.5 - m).abs() < 1e-12 {
                gamma_half(m as u32)
            } else {
                gamma_integerish(one_minus)
            }
        } else {
            gamma_integerish(one_minus)
        };
        return 2.0
            * (2.0 * std::f64::consts::PI).powf(s - 1.0)
            * (std::f64::consts::FRAC_PI_2 * s).sin()
            * gamma
            * zeta(one_minus);
    }
    // Euler-Maclaurin with M terms and Bernoulli corrections.
    let m = 24usize;
    let mf = m as f64;
    let mut sum = 0.0;
    for n in 1..m {
        sum += (n as f64).powf(-s);
    }
    sum += 0.5 * mf.powf(-s);
    sum += mf.powf(1.0 - s) / (s - 1.0);
    // sum_j B_2j/(2j)! * s(s+1)...(s+2j-2) * M^{-s-2j+1}
    let mut poch = s; // rising factorial s (s+1) ... (s + 2j - 2)
    let mut fact = 2.0; // (2j)!
    let mut mpow = mf.powf(-s - 1.0);
    for (j, b) in BERNOULLI.iter().enumerate() {
        sum += b / fact * poch * mpow;
        let jj = 2 * (j + 1) as u32;
        poch *= (s + jj as f64 - 1.0) * (s + jj as f64);
        fact *= ((jj + 1) * (jj + 2)) as f64;
        mpow /= mf * mf;
    }
    sum
}

/// Gamma for positive non-half-integer arguments via Stirling with
/// recursion; only used off the half-integer lattice.
fn gamma_integerish(x: f64) -> f64 {
    assert!(x > 0.0);
    let mut x = x;
    let mut shift = 1.0;
    while x < 12.0 {
        shift *= x;
        x += 1.0;
    }
    // Stirling series
    let series = 1.0 + 1.0 / (12.0 * x) + 1.0 / (288.0 * x * x) - 139.0 / (51840.0 * x * x * x)
        - 571.0 / (2488320.0 * x * x * x * x);
    let g = (2.0 * std::f64::consts::PI / x).sqrt() * (x / std::f64::consts::E).powf(x) * series;
    g / shift
}

/// Cached zeta tables zeta(s - j), j = 0..MAX_TERMS, for the four
/// half-integer orders indexed by (2s-1)/2 = 0..3.
const MAX_TERMS: usize = 120;

fn zeta_table(order: usize) -> &'static [f64] {
    static TABLES: OnceLock<Vec<Vec<f64>>> = OnceLock::new();
    &TABLES.get_or_init(|| {
        (0..4)
            .map(|r| {
                let s = r as f64 + 0.5;
                (0..MAX_TERMS).map(|j| zeta(s - j as f64)).collect()
            })
            .collect()
    })[order]
}

/// Gamma(1 - s) for s = r + 1/2: sqrt(pi), -2 sqrt(pi), 4/3 sqrt(pi), ...
pub fn gamma_one_minus(order: usize) -> f64 {
    // Gamma(1/2 - r) = Gamma(1/2) / prod_{i=1..r} (1/2 - i)
    let mut g = std::f64::consts::PI.sqrt();
    for i in 1..=order {
        g /= 0.5 - i as f64;
    }
    g
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut t = theta % two_pi;
    if t > std::f64::consts::PI {
        t -= two_pi;
    } else if t <= -std::f64::consts::PI {
        t += two_pi;
    }
    t
}

/// Li_{r + 1/2}(e^{i theta}) for r in 0..4. `theta` may be any real
/// value away from multiples of 2 pi; the branch point there is the
/// caller's singular case.
pub fn polylog_half(order: usize, theta: f64) -> Complex64 {
    assert!(order < 4);
    let t = wrap_angle(theta);
    debug_assert!(t != 0.0, "polylog branch point at theta = 0 mod 2 pi");
    let s = order as f64 + 0.5;
    // Gamma(1-s) (-i t)^{s-1}
    let branch = Complex64::from_polar(
        t.abs().powf(s - 1.0),
        -t.signum() * std::f64::consts::FRAC_PI_2 * (s - 1.0),
    ) * gamma_one_minus(order);
    branch + polylog_half_regular(order, t)
}

/// The analytic part of the expansion, sum_j zeta(s-j) (i theta)^j / j!.
/// At theta = 0 this is the finite limit Li_s - (branch term), which the
/// factorization needs for the local expansion at the kernel singularity.
pub fn polylog_half_regular(order: usize, theta: f64) -> Complex64 {
    let t = wrap_angle(theta);
    let table = zeta_table(order);
    let mu = Complex64::new(0.0, t);
    let mut term = Complex64::new(1.0, 0.0);
    let mut sum = Complex64::new(table[0], 0.0);
    for (j, &z) in table.iter().enumerate().skip(1) {
        term *= mu / j as f64;
        let contrib = z * term;
        sum += contrib;
        if contrib.norm_sqr() < 1e-68 && j > 8 {
            break;
        }
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    // Frozen from mpmath (dps=30).
    #[test]
    fn zeta_reference_values() {
        assert_relative_eq!(zeta(0.5), -1.4603545088095868, max_relative = 1e-13);
        assert_relative_eq!(zeta(1.5), 2.6123753486854883, max_relative = 1e-13);
        assert_relative_eq!(zeta(3.5), 1.1267338673170566, max_relative = 1e-13);
        assert_relative_eq!(zeta(-0.5), -0.20788622497735457, max_relative = 1e-12);
        assert_relative_eq!(zeta(-2.5), 0.0085169287778503305, max_relative = 1e-12);
        assert_relative_eq!(zeta(-9.5), -0.0066721722964666408, max_relative = 1e-11);
    }

    #[test]
    fn polylog_reference_values() {
        // (order index, theta, re, im) frozen from mpmath polylog.
        let cases = [
            (0, 1.0, -0.19410893509218205, 1.0439821028491615),
            (0, -0.3, 0.82902190898638553, -2.2258238257609834),
            (0, 3.0, -0.60370734667240341, 0.053861673414814715),
            (1, 2.5, -0.68627982980255125, 0.38278527053217371),
            (2, 0.7, 0.72032710743295793, 0.86186756934571489),
            (3, -2.0, -0.4561502698503341, -0.84196618992296696),
        ];
        for (order, theta, re, im) in cases {
            let v = polylog_half(order, theta);
            assert_relative_eq!(v.re, re, max_relative = 1e-12, epsilon = 1e-13);
            assert_relative_eq!(v.im, im, max_relative = 1e-12, epsilon = 1e-13);
        }
    }

    #[test]
    fn conjugate_symmetry() {
        for order in 0..4 {
            for &t in &[0.2, 1.3, 2.9] {
                let a = polylog_half(order, t);
                let b = polylog_half(order, -t);
                assert!((a - b.conj()).norm() < 1e-13 * a.norm().max(1.0));
            }
        }
    }

    #[test]
    fn periodicity() {
        for order in 0..4 {
            let a = polylog_half(order, 1.1);
            let b = polylog_half(order, 1.1 + 2.0 * std::f64::consts::PI);
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn regular_part_limit_is_zeta() {
        for order in 0..4 {
            let s = order as f64 + 0.5;
            assert_relative_eq!(polylog_half_regular(order, 0.0).re, zeta(s), max_relative = 1e-13);
        }
    }

    #[test]
    fn matches_damped_direct_sum() {
        // Abel-summed direct series at r = 1 - 1e-6 agrees with the
        // expansion for the absolutely convergent order s = 7/2.
        let theta: f64 = 1.9;
        let r: f64 = 1.0 - 1e-6;
        let mut sum = Complex64::new(0.0, 0.0);
        for l in 1..2_000_000u64 {
            let lf = l as f64;
            sum += Complex64::from_polar(r.powf(lf) * lf.powf(-3.5), theta * lf);
        }
        let v = polylog_half(3, theta);
        assert!((sum - v).norm() < 1e-6, "diff {}", (sum - v).norm());
    }
}
