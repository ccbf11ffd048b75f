//! The discrete Wiener-Hopf kernel K(z), its multiplicative split
//! K = K+ K- with K-(z) = K+(1/z), and the Taylor coefficients
//! lambda_n of 1/K+ at z = 0.
//!
//! K(z) = H0(ka) + sum_{l>=1} (z^l + z^{-l}) H0(ks l) converges too
//! slowly on the unit circle to sum directly. Evaluation here uses
//! Kummer acceleration: the first `l0` terms are summed with the exact
//! Hankel function minus its four-term large-argument asymptotic, and
//! the full asymptotic tail is resummed in closed form through
//! half-integer polylogarithms Li_{r+1/2}(e^{i(ks +- psi)}).
//!
//! The same polylogarithm expansion gives the exact local behaviour of
//! K at its branch points z = e^{+-iks}. The factorization divides out
//! closed-form prototype factors carrying that behaviour (an inverse
//! square root plus two matched cusp corrections), leaving a remainder
//! whose log-Fourier coefficients decay fast enough for spectral
//! accuracy on a modest grid.

pub mod polylog;

use num_complex::Complex64;
use rustfft::FftPlanner;
use thiserror::Error;

use crate::specfun::{hankel0, hankel0_real, SpecFunError};
use polylog::{polylog_half, polylog_half_regular, wrap_angle};

/// Angular distance below which evaluation at a branch point is refused.
pub const SINGULARITY_TOL: f64 = 1e-12;

/// Hankel asymptotic coefficients a_r = ((2r-1)!!)^2 / (r! 8^r).
const ASYM: [f64; 4] = [1.0, 0.125, 9.0 / 128.0, 75.0 / 1024.0];

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("z is within {0:e} of a kernel branch point e^{{+-iks}}")]
    AtSingularity(f64),
    #[error("kernel evaluation requires |z| = 1 (got |z| = {0})")]
    NotOnUnitCircle(f64),
    #[error("damped-oracle tail bound not met: needs more than {0} terms")]
    TailBoundNotMet(usize),
    #[error("oracle damping must be positive")]
    NonPositiveDamping,
    #[error("ln K winds {0} times around the contour; kernel zero or branch crossing")]
    NonZeroWinding(i64),
    #[error("branch points e^{{iks}} and e^{{-iks}} coincide (ks multiple of pi)")]
    DegenerateBranchPoints,
    #[error("contour refinement hit the size cap without K0 stabilising (last change {0:e})")]
    GridNotConverged(f64),
    #[error("lambda extraction radius {rho} amplifies roundoff by {amplification:e} at order {order}")]
    PrecisionLoss { rho: f64, order: usize, amplification: f64 },
    #[error(transparent)]
    SpecFun(#[from] SpecFunError),
}

/// Four-term Hankel asymptotic, the part subtracted from each direct
/// term and resummed through polylogarithms.
fn hankel0_asym4(x: f64) -> Complex64 {
    let inv = 1.0 / x;
    let series = Complex64::new(
        1.0 - ASYM[2] * inv * inv,
        (ASYM[3] * inv * inv - ASYM[1]) * inv,
    );
    Complex64::from_polar(
        (2.0 / (std::f64::consts::PI * x)).sqrt(),
        x - std::f64::consts::FRAC_PI_4,
    ) * series
}

/// One array's kernel parameters plus the precomputed direct-term table.
#[derive(Debug, Clone)]
pub struct Kernel {
    pub k: f64,
    pub s: f64,
    pub a: f64,
    /// H0(ks l) - asym4(ks l) for l = 1..=l0.
    diff_table: Vec<Complex64>,
    /// Tail prefactors c_r = sqrt(2/(pi ks)) e^{-i pi/4} i^r a_r (ks)^{-r}.
    tail_coeff: [Complex64; 4],
    /// H0(ka).
    h0ka: Complex64,
}

impl Kernel {
    pub fn new(k: f64, s: f64, a: f64) -> Self {
        assert!(k > 0.0 && s > 0.0 && a > 0.0);
        let ks = k * s;
        // Size the direct part so the first neglected asymptotic order
        // (a_4 ~ 0.11 (ks l)^-4) stays below ~1e-9 summed over the tail.
        // number of exact leading terms before the asymptotic tail
        let l0 = 200usize.max((228.0 * ks.powf(-9.0 / 7.0)).ceil() as usize);
        let prefactor =
            Complex64::from_polar((2.0 / (std::f64::consts::PI * ks)).sqrt(), -std::f64::consts::FRAC_PI_4);
        let mut tail_coeff = [Complex64::new(0.0, 0.0); 4];
        let mut rot = Complex64::new(1.0, 0.0);
        for r in 0..4 {
            tail_coeff[r] = prefactor * rot * ASYM[r] / ks.powi(r as i32);
            rot *= -Complex64::i();
        }
        let diff_table = (1..=l0)
            .map(|l| {
                let x = ks * l as f64;
                hankel0_real(x) - hankel0_asym4(x)
            })
            .collect();
        Kernel {
            k,
            s,
            a,
            diff_table,
            tail_coeff,
            h0ka: hankel0_real(k * a),
        }
    }

    /// Wrapped angular distance from psi to the nearest branch point.
    pub fn singular_distance(&self, psi: f64) -> f64 {
        let ks = self.k * self.s;
        wrap_angle(psi - ks).abs().min(wrap_angle(psi + ks).abs())
    }

    /// K at z = e^{i psi} by Kummer acceleration.
    pub fn eval_psi(&self, psi: f64) -> Result<Complex64, KernelError> {
        let d = self.singular_distance(psi);
        if d < SINGULARITY_TOL {
            return Err(KernelError::AtSingularity(d));
        }
        let ks = self.k * self.s;
        let mut sum = self.h0ka;
        for (i, diff) in self.diff_table.iter().enumerate() {
            let l = (i + 1) as f64;
            sum += 2.0 * (l * psi).cos() * diff;
        }
        let theta_a = ks + psi;
        let theta_b = ks - psi;
        for r in 0..4 {
            sum += self.tail_coeff[r] * (polylog_half(r, theta_a) + polylog_half(r, theta_b));
        }
        Ok(sum)
    }

    /// K(z) for z on the unit circle.
    pub fn eval(&self, z: Complex64) -> Result<Complex64, KernelError> {
        let r = z.norm();
        if (r - 1.0).abs() > 1e-6 {
            return Err(KernelError::NotOnUnitCircle(r));
        }
        self.eval_psi(z.arg())
    }

    /// Direct damped partial sum of the defining series with k -> k + i eps.
    ///
    /// Refuses eps <= 0 (the undamped series is only conditionally
    /// convergent) and term counts that do not meet the tail bound
    /// sum_{l>L} 2 l^{-1/2} e^{-eps s l} sqrt(2/(pi k s)) < tol.
    pub fn oracle_damped(
        &self,
        z: Complex64,
        eps: f64,
        terms: usize,
        tol: f64,
    ) -> Result<Complex64, KernelError> {
        if eps <= 0.0 {
            return Err(KernelError::NonPositiveDamping);
        }
        if self.tail_bound(eps, terms) > tol {
            return Err(KernelError::TailBoundNotMet(terms));
        }
        let psi = z.arg();
        let kc = Complex64::new(self.k, eps);
        let mut sum = hankel0(kc * self.a)?;
        for l in 1..=terms {
            let lf = l as f64;
            sum += 2.0 * (lf * psi).cos() * hankel0(kc * self.s * lf)?;
        }
        Ok(sum)
    }

    fn tail_bound(&self, eps: f64, terms: usize) -> f64 {
        let es = eps * self.s;
        let l = terms as f64;
        (2.0 / es) * (2.0 / (std::f64::consts::PI * self.k * self.s * l)).sqrt() * (-es * l).exp()
    }

    /// Smallest power-of-two-ish term count meeting the tail bound.
    pub fn required_terms(&self, eps: f64, tol: f64) -> Result<usize, KernelError> {
        if eps <= 0.0 {
            return Err(KernelError::NonPositiveDamping);
        }
        let mut terms = 1024usize;
        while self.tail_bound(eps, terms) > tol {
            terms *= 2;
            if terms > 100_000_000 {
                return Err(KernelError::TailBoundNotMet(terms));
            }
        }
        Ok(terms)
    }

    /// Ground-truth value of K(z): damped sums at six damping levels
    /// extrapolated polynomially to eps = 0.
    ///
    /// The base damping shrinks with the distance to the nearest branch
    /// point, where the eps-derivatives of K blow up.
    pub fn oracle_extrapolated(&self, z: Complex64, tol: f64) -> Result<Complex64, KernelError> {
        let psi = z.arg();
        let d = self.singular_distance(psi);
        if d < SINGULARITY_TOL {
            return Err(KernelError::AtSingularity(d));
        }
        let delta = (1e-3 * self.k).min(7.7e-3 * d / self.s);
        let nodes = 6;
        let terms = self.required_terms(delta, 0.1 * tol)?;
        let mut eps_v = Vec::with_capacity(nodes);
        let mut val_v = Vec::with_capacity(nodes);
        for i in 0..nodes {
            let eps = delta * (i + 1) as f64;
            eps_v.push(eps);
            val_v.push(self.oracle_damped(z, eps, terms, tol)?);
        }
        // Neville extrapolation to eps = 0.
        let mut tableau = val_v;
        for level in 1..nodes {
            for i in 0..(nodes - level) {
                let (x0, x1) = (eps_v[i], eps_v[i + level]);
                tableau[i] = (tableau[i] * x1 - tableau[i + 1] * x0) / (x1 - x0);
            }
        }
        Ok(tableau[0])
    }
}

/// Factorization products for one array kernel.
#[derive(Debug, Clone)]
pub struct KernelData {
    pub kernel: Kernel,
    /// Unit-circle sample count actually used (after refinement).
    pub contour_size: usize,
    /// Symmetric log-Fourier coefficients c_n of ln K, n = 0..=M/2:
    /// ln K(z) = c_0 + sum_{n>=1} c_n (z^n + z^{-n}).
    pub log_fourier: Vec<Complex64>,
    /// K0 = K+(0) = exp(c_0 / 2).
    pub k0: Complex64,
    /// Taylor coefficients of 1/K+ at 0, n = 0..=N.
    pub lambda: Vec<Complex64>,
    /// Annulus of shared analyticity; collapses to the unit circle in
    /// the lossless limit taken here.
    pub annulus: (f64, f64),
    /// e^{iks}.
    branch: Complex64,
    /// Matched cusp strengths of the prototype factors.
    b1: Complex64,
    b2: Complex64,
    /// Log-Fourier coefficients of the smooth remainder ln R.
    c_reg: Vec<Complex64>,
}

/// Splits K into K+ K- and extracts the lambda coefficients.
///
/// `m` is the initial unit-circle sample count (rounded up to a power of
/// two, at least 4096); it is doubled until K0 moves by less than 1e-9.
pub fn factorize(k: f64, s: f64, a: f64, m: usize, n_lambda: usize) -> Result<KernelData, KernelError> {
    let kernel = Kernel::new(k, s, a);
    let ks = k * s;
    if wrap_angle(2.0 * ks).abs() < 1e-9 {
        return Err(KernelError::DegenerateBranchPoints);
    }

    // Local expansion of K at the branch point psi = ks in powers of
    // w = (i theta)^{1/2}: K = alpha w^{-1} (1 + c1 w + c2 w^2 + c3 w^3 + ...).
    let alpha: Vec<Complex64> = (0..4)
        .map(|r| kernel.tail_coeff[r] * polylog::gamma_one_minus(r))
        .collect();
    let p0 = regular_part_at_branch(&kernel);
    let p1 = regular_part_slope(&kernel, &alpha)?;
    let c1 = p0 / alpha[0];
    let c2 = alpha[1] / alpha[0];
    let c3 = -Complex64::i() * p1 / alpha[0];
    let b1 = c1;
    let b2 = c3 - c1 * c2 + c1 * c1 * c1 / 3.0 + b1 / 4.0;
    let branch = Complex64::from_polar(1.0, ks);

    let mut msize = m.max(4096).next_power_of_two();
    let mut prev_k0: Option<Complex64> = None;
    let mut last_change = f64::INFINITY;
    while msize <= (1 << 18) {
        let c_reg = remainder_fourier(&kernel, branch, b1, b2, msize)?;
        let c0_total = c_reg[0] + 2.0 * (b1 + b2);
        let k0 = (c0_total / 2.0).exp();
        if let Some(p) = prev_k0 {
            last_change = (k0 - p).norm() / k0.norm();
            if last_change < 1e-9 {
                return Ok(assemble(kernel, branch, b1, b2, c_reg, msize, n_lambda)?);
            }
        }
        prev_k0 = Some(k0);
        msize *= 2;
    }
    Err(KernelError::GridNotConverged(last_change))
}

/// Finite value of K minus its half-power singular terms at psi = ks.
fn regular_part_at_branch(kernel: &Kernel) -> Complex64 {
    let ks = kernel.k * kernel.s;
    let mut sum = kernel.h0ka;
    for (i, diff) in kernel.diff_table.iter().enumerate() {
        let l = (i + 1) as f64;
        sum += 2.0 * (l * ks).cos() * diff;
    }
    for r in 0..4 {
        // Li at theta_a = 2ks is regular; Li at theta_b = 0 contributes
        // only its zeta-series limit once the branch term is removed.
        sum += kernel.tail_coeff[r] * (polylog_half(r, 2.0 * ks) + polylog_half_regular(r, 0.0));
    }
    sum
}

/// d/dtheta of the regular part, by fourth-order central differences of
/// K(ks + theta) minus the known singular terms. Only feeds the third
/// cusp correction, whose tolerance is loose.
fn regular_part_slope(kernel: &Kernel, alpha: &[Complex64]) -> Result<Complex64, KernelError> {
    let ks = kernel.k * kernel.s;
    let d2 = wrap_angle(2.0 * ks).abs();
    let h = 0.02f64.min(0.1 * d2);
    let reg = |theta: f64| -> Result<Complex64, KernelError> {
        let mut v = kernel.eval_psi(ks + theta)?;
        let w2 = Complex64::new(0.0, theta);
        for (r, &al) in alpha.iter().enumerate() {
            v -= al * w2.powf(r as f64 - 0.5);
        }
        Ok(v)
    };
    let f1 = reg(h)?;
    let fm1 = reg(-h)?;
    let f2 = reg(2.0 * h)?;
    let fm2 = reg(-2.0 * h)?;
    Ok((8.0 * (f1 - fm1) - (f2 - fm2)) / (12.0 * h))
}

/// Log-Fourier analysis of the smooth remainder R = K / G on an offset
/// unit-circle grid, with winding check and symmetrization.
fn remainder_fourier(
    kernel: &Kernel,
    branch: Complex64,
    b1: Complex64,
    b2: Complex64,
    msize: usize,
) -> Result<Vec<Complex64>, KernelError> {
    let mut ln_r: Vec<Complex64> = Vec::with_capacity(msize);
    for mi in 0..msize {
        let psi = 2.0 * std::f64::consts::PI * (mi as f64 + 0.5) / msize as f64;
        let z = Complex64::from_polar(1.0, psi);
        let kval = kernel.eval_psi(psi)?;
        let wp = Complex64::new(1.0, 0.0) - z * branch; // vanishes at e^{-iks}
        let wm = Complex64::new(1.0, 0.0) - branch / z; // vanishes at e^{+iks}
        let ln_g = -0.5 * (wp.ln() + wm.ln())
            + b1 * (wp.sqrt() + wm.sqrt())
            + b2 * (wp.powf(1.5) + wm.powf(1.5));
        // ln R with the phase left to a separate unwrapping pass
        let r = kval * (-ln_g).exp();
        ln_r.push(r);
    }
    // Sequential phase unwrapping; total winding must vanish.
    let mut phases = Vec::with_capacity(msize);
    let mut prev = ln_r[0].arg();
    phases.push(prev);
    for v in ln_r.iter().skip(1) {
        let mut p = v.arg();
        while p - prev > std::f64::consts::PI {
            p -= 2.0 * std::f64::consts::PI;
        }
        while p - prev < -std::f64::consts::PI {
            p += 2.0 * std::f64::consts::PI;
        }
        phases.push(p);
        prev = p;
    }
    let closure = {
        let mut p = ln_r[0].arg();
        while p - prev > std::f64::consts::PI {
            p -= 2.0 * std::f64::consts::PI;
        }
        while p - prev < -std::f64::consts::PI {
            p += 2.0 * std::f64::consts::PI;
        }
        p - phases[0]
    };
    let winding = (closure / (2.0 * std::f64::consts::PI)).round() as i64;
    if winding != 0 {
        return Err(KernelError::NonZeroWinding(winding));
    }

    let mut buf: Vec<Complex64> = ln_r
        .iter()
        .zip(&phases)
        .map(|(v, &p)| Complex64::new(v.norm().ln(), p))
        .collect();
    FftPlanner::new().plan_fft_forward(msize).process(&mut buf);
    // Offset-grid twiddle, 1/M scaling, and z <-> 1/z symmetrization.
    let scale = 1.0 / msize as f64;
    let mut c = Vec::with_capacity(msize / 2 + 1);
    for n in 0..=(msize / 2) {
        let tw = Complex64::from_polar(1.0, -std::f64::consts::PI * n as f64 / msize as f64);
        let pos = buf[n] * tw * scale;
        let neg = if n == 0 {
            pos
        } else {
            buf[msize - n] * tw.conj() * scale
        };
        c.push((pos + neg) / 2.0);
    }
    Ok(c)
}

fn assemble(
    kernel: Kernel,
    branch: Complex64,
    b1: Complex64,
    b2: Complex64,
    c_reg: Vec<Complex64>,
    msize: usize,
    n_lambda: usize,
) -> Result<KernelData, KernelError> {
    let c0_total = c_reg[0] + 2.0 * (b1 + b2);
    let k0 = (c0_total / 2.0).exp();

    // Total c_n = smooth part + closed-form prototype series:
    //   -(1/2) ln(1-w) -> e^{inks}/(2n),
    //   b1 (1-w)^{1/2} and b2 (1-w)^{3/2} -> binomial coefficients.
    let half = c_reg.len() - 1;
    let mut log_fourier = Vec::with_capacity(half + 1);
    log_fourier.push(c0_total);
    let mut g = 1.0; // coeff of w^n in (1-w)^{1/2}
    let mut hcf = 1.0; // coeff of w^n in (1-w)^{3/2}
    let mut branch_pow = Complex64::new(1.0, 0.0);
    for n in 1..=half {
        let nf = n as f64;
        g *= (nf - 1.5) / nf;
        hcf *= (nf - 2.5) / nf;
        branch_pow *= branch;
        log_fourier.push(c_reg[n] + branch_pow * (1.0 / (2.0 * nf) + b1 * g + b2 * hcf));
    }

    // lambda via exp of the negated log series: 1/K+ = exp(-c0/2 - sum c_n z^n).
    let order = n_lambda.min(half);
    let mut lambda = vec![Complex64::new(0.0, 0.0); order + 1];
    lambda[0] = (-c0_total / 2.0).exp();
    for n in 1..=order {
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 1..=n {
            acc += j as f64 * (-log_fourier[j]) * lambda[n - j];
        }
        lambda[n] = acc / n as f64;
    }

    let kd = KernelData {
        kernel,
        contour_size: msize,
        log_fourier,
        k0,
        lambda,
        annulus: (1.0, 1.0),
        branch,
        b1,
        b2,
        c_reg,
    };
    kd.lambda_consistency_check(order)?;
    Ok(kd)
}

impl KernelData {
    /// K+(z) for |z| <= 1 (closed-form prototype times smooth remainder).
    pub fn kplus_eval(&self, z: Complex64) -> Result<Complex64, KernelError> {
        let r = z.norm();
        if r > 1.0 + 1e-12 {
            return Err(KernelError::NotOnUnitCircle(r));
        }
        let w = Complex64::new(1.0, 0.0) - z * self.branch;
        // Horner over the smooth series
        let mut acc = Complex64::new(0.0, 0.0);
        for n in (1..self.c_reg.len()).rev() {
            acc = (acc + self.c_reg[n]) * z;
        }
        let ln_plus = -0.5 * w.ln() + self.b1 * w.sqrt() + self.b2 * w.powf(1.5)
            + self.c_reg[0] / 2.0
            + acc;
        Ok(ln_plus.exp())
    }

    /// K-(z) = K+(1/z) for |z| >= 1.
    pub fn kminus_eval(&self, z: Complex64) -> Result<Complex64, KernelError> {
        self.kplus_eval(z.finv())
    }

    /// Lambda coefficients 0..=n, recomputed if a higher order is asked
    /// for than was cached at factorization time.
    pub fn lambda_coeffs(&self, n: usize) -> Result<Vec<Complex64>, KernelError> {
        if n < self.lambda.len() {
            return Ok(self.lambda[..=n].to_vec());
        }
        if n >= self.log_fourier.len() {
            return Err(KernelError::PrecisionLoss {
                rho: 1.0,
                order: n,
                amplification: f64::INFINITY,
            });
        }
        let mut lambda = vec![Complex64::new(0.0, 0.0); n + 1];
        lambda[0] = Complex64::new(1.0, 0.0) / self.k0;
        for m in 1..=n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 1..=m {
                acc += j as f64 * (-self.log_fourier[j]) * lambda[m - j];
            }
            lambda[m] = acc / m as f64;
        }
        Ok(lambda)
    }

    /// Two-radius contour extraction of lambda as an independent route;
    /// errors out if the radii disagree or the amplification explodes.
    fn lambda_consistency_check(&self, order: usize) -> Result<(), KernelError> {
        let check_order = order.min(120);
        for rho in [0.95f64, 0.90] {
            let amplification = rho.powi(-(check_order as i32));
            if amplification > 1e12 {
                return Err(KernelError::PrecisionLoss {
                    rho,
                    order: check_order,
                    amplification,
                });
            }
            let ext = self.lambda_by_radius(rho, check_order)?;
            for n in 0..=check_order {
                let diff = (ext[n] - self.lambda[n]).norm();
                let scale = self.lambda[n].norm().max(1e-6);
                if diff > 1e-7 * scale {
                    return Err(KernelError::PrecisionLoss {
                        rho,
                        order: n,
                        amplification: diff / scale,
                    });
                }
            }
        }
        Ok(())
    }

    /// FFT extraction of the Taylor coefficients of 1/K+ on |z| = rho.
    pub fn lambda_by_radius(&self, rho: f64, order: usize) -> Result<Vec<Complex64>, KernelError> {
        let m = 4096usize.max((4 * (order + 1)).next_power_of_two());
        let mut buf: Vec<Complex64> = (0..m)
            .map(|i| {
                let z = Complex64::from_polar(rho, 2.0 * std::f64::consts::PI * i as f64 / m as f64);
                self.kplus_eval(z).map(|v| v.finv())
            })
            .collect::<Result<_, _>>()?;
        FftPlanner::new().plan_fft_forward(m).process(&mut buf);
        Ok((0..=order)
            .map(|n| buf[n] / m as f64 * rho.powi(-(n as i32)))
            .collect())
    }

    /// Taylor coefficients of K+ itself (for the convolution identity).
    pub fn kplus_taylor(&self, n: usize) -> Vec<Complex64> {
        let n = n.min(self.log_fourier.len() - 1);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); n + 1];
        coeffs[0] = self.k0;
        for m in 1..=n {
            let mut acc = Complex64::new(0.0, 0.0);
            for j in 1..=m {
                acc += j as f64 * self.log_fourier[j] * coeffs[m - j];
            }
            coeffs[m] = acc / m as f64;
        }
        coeffs
    }

    /// Delimited-text dump of (c_n, lambda_n, K0) for regression baselines.
    pub fn dump_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        let _ = writeln!(out, "# K0 {:.16e} {:.16e}", self.k0.re, self.k0.im);
        let _ = writeln!(out, "# n c_re c_im lambda_re lambda_im");
        let rows = self.log_fourier.len().max(self.lambda.len());
        for n in 0..rows.min(4096) {
            let c = self.log_fourier.get(n).copied().unwrap_or_default();
            let l = self.lambda.get(n).copied().unwrap_or_default();
            let _ = writeln!(
                out,
                "{} {:.16e} {:.16e} {:.16e} {:.16e}",
                n, c.re, c.im, l.re, l.im
            );
        }
        out
    }
}
