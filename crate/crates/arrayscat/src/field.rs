//! Wave fields on rectangular grids and the sound-pressure-level metric.

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::geometry::ProblemSpec;
use crate::kernel::polylog::polylog_half;
use crate::kernel::{Kernel, KernelError};
use crate::solver::ScatteringSolution;
use crate::specfun::hankel0_real;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("SPL region contains no unmasked grid samples")]
    EmptyRegion,
    #[error("grid resolution must be at least 2x2")]
    DegenerateGrid,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Rectangular sample grid with an exclusion mask around scatterers.
#[derive(Debug, Clone)]
pub struct FieldGrid {
    pub xmin: f64,
    pub xmax: f64,
    pub ymin: f64,
    pub ymax: f64,
    pub nx: usize,
    pub ny: usize,
    /// Row-major samples, index iy * nx + ix. Masked points hold 0.
    pub values: Vec<Complex64>,
    /// true = inside an exclusion disk; no field value there.
    pub mask: Vec<bool>,
}

impl FieldGrid {
    pub fn x(&self, ix: usize) -> f64 {
        self.xmin + (self.xmax - self.xmin) * ix as f64 / (self.nx - 1) as f64
    }

    pub fn y(&self, iy: usize) -> f64 {
        self.ymin + (self.ymax - self.ymin) * iy as f64 / (self.ny - 1) as f64
    }

    pub fn idx(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn cell_diagonal(&self) -> f64 {
        let hx = (self.xmax - self.xmin) / (self.nx - 1) as f64;
        let hy = (self.ymax - self.ymin) / (self.ny - 1) as f64;
        hx.hypot(hy)
    }
}

/// Builds the empty grid and its mask: every scatterer up to index `n`
/// on every array masks a disk of radius max(a_j, 1.1 cell diagonals).
pub fn make_grid(
    spec: &ProblemSpec,
    bounds: (f64, f64, f64, f64),
    nx: usize,
    ny: usize,
    n: usize,
) -> Result<FieldGrid, FieldError> {
    if nx < 2 || ny < 2 {
        return Err(FieldError::DegenerateGrid);
    }
    let (xmin, xmax, ymin, ymax) = bounds;
    let mut grid = FieldGrid {
        xmin,
        xmax,
        ymin,
        ymax,
        nx,
        ny,
        values: vec![Complex64::new(0.0, 0.0); nx * ny],
        mask: vec![false; nx * ny],
    };
    let diag = grid.cell_diagonal();
    let hx = (xmax - xmin) / (nx - 1) as f64;
    let hy = (ymax - ymin) / (ny - 1) as f64;
    for j in 0..spec.array_count() {
        let rr = spec.arrays[j].radius.max(1.1 * diag);
        for m in 0..=n {
            let (sx, sy) = spec.scatterer_position(j, m).expect("index in range");
            if sx < xmin - rr || sx > xmax + rr || sy < ymin - rr || sy > ymax + rr {
                continue;
            }
            let ix0 = (((sx - rr - xmin) / hx).floor().max(0.0)) as usize;
            let ix1 = ((((sx + rr - xmin) / hx).ceil()) as usize).min(nx - 1);
            let iy0 = (((sy - rr - ymin) / hy).floor().max(0.0)) as usize;
            let iy1 = ((((sy + rr - ymin) / hy).ceil()) as usize).min(ny - 1);
            for iy in iy0..=iy1 {
                for ix in ix0..=ix1 {
                    if (grid.x(ix) - sx).hypot(grid.y(iy) - sy) <= rr {
                        let id = grid.idx(ix, iy);
                        grid.mask[id] = true;
                    }
                }
            }
        }
    }
    Ok(grid)
}

fn incident_at(spec: &ProblemSpec, x: f64, y: f64) -> Complex64 {
    // e^{-i k r cos(theta - theta_I)} = e^{-i k (x cos theta_I + y sin theta_I)}
    let phase = -spec.wavenumber * (x * spec.incident_angle.cos() + y * spec.incident_angle.sin());
    Complex64::from_polar(1.0, phase)
}

/// Plane-wave field on the grid (masked points stay zero).
pub fn incident_field(spec: &ProblemSpec, grid: &FieldGrid) -> FieldGrid {
    let mut out = grid.clone();
    out.values = (0..grid.values.len())
        .into_par_iter()
        .map(|id| {
            if grid.mask[id] {
                Complex64::new(0.0, 0.0)
            } else {
                incident_at(spec, grid.x(id % grid.nx), grid.y(id / grid.nx))
            }
        })
        .collect();
    out
}

/// Total field: incident plus every scatterer's monopole. The per-point
/// summation order is fixed (array index, then scatterer index), so the
/// result does not depend on the thread count.
pub fn total_field(spec: &ProblemSpec, sol: &ScatteringSolution, grid: &FieldGrid) -> FieldGrid {
    let n = sol.truncation();
    let k = spec.wavenumber;
    let positions: Vec<(f64, f64)> = (0..spec.array_count())
        .flat_map(|j| (0..=n).map(move |m| (j, m)))
        .map(|(j, m)| spec.scatterer_position(j, m).expect("index in range"))
        .collect();
    let amps: Vec<Complex64> = (0..spec.array_count())
        .flat_map(|j| sol.amplitudes[j].iter().copied())
        .collect();
    let mut out = grid.clone();
    out.values = (0..grid.values.len())
        .into_par_iter()
        .map(|id| {
            if grid.mask[id] {
                return Complex64::new(0.0, 0.0);
            }
            let x = grid.x(id % grid.nx);
            let y = grid.y(id / grid.nx);
            let mut phi = incident_at(spec, x, y);
            for (&(sx, sy), &a) in positions.iter().zip(&amps) {
                phi += a * hankel0_real(k * (x - sx).hypot(y - sy));
            }
            phi
        })
        .collect();
    out
}

/// Coefficients of the large-argument Hankel expansion
/// H0(x) ~ sqrt(2/(pi x)) e^{i(x - pi/4)} sum_r a_r (-i/x)^r.
const HANKEL_ASYM: [f64; 4] = [1.0, 0.125, 9.0 / 128.0, 75.0 / 1024.0];

/// Asymptotic continuation of every array beyond its truncation.
///
/// Deep down a semi-infinite array the coefficients approach the
/// infinite-array limit A_q -> -Phi_I(R_q)/K(z_j), where z_j is the
/// driving pole. The remaining monopole sum over q > n then telescopes
/// onto half-integer polylogarithms of w = e^{i k s (1 - cos(alpha -
/// theta_I))}: expanding the Hankel functions for large argument and the
/// distance |R_q - x| ~ s q - a (a = signed coordinate of x along the
/// array, measured from its start) to first order in a/(s q) gives
///
///   T_j(x) ~ amp_j e^{-i k a} sum_r c_r [S_{r+1/2} + (r+1/2)(a/s) S_{r+3/2}],
///
/// with S_nu = Li_nu(w) - sum_{q<=n} w^q q^{-nu}. The result is accurate
/// when every evaluation point is much closer to the array starts than
/// the truncated length s n (transverse phase error ~ k |x|^2 / (2 s n))
/// and when A_n has essentially reached the infinite-array limit. That
/// limit is the uncoupled one: when another array lies along the beam a
/// near-resonant continuation radiates, the true deep coefficients can
/// differ, so treat the correction as a model of the isolated arrays.
/// Returns the correction alone; add it to `total_field` values.
pub fn tail_field(spec: &ProblemSpec, n: usize, grid: &FieldGrid) -> Result<FieldGrid, FieldError> {
    use std::f64::consts::{FRAC_PI_4, PI};

    struct ArrayTail {
        ox: f64,
        oy: f64,
        ex: f64,
        ey: f64,
        inv_s: f64,
        amp: Complex64,
        coeff: [Complex64; 4],
        s_tail: [Complex64; 4],
    }

    let k = spec.wavenumber;
    let mut tails = Vec::with_capacity(spec.array_count());
    for (j, arr) in spec.arrays.iter().enumerate() {
        let ks = k * arr.spacing;
        let theta = ks * (1.0 - (arr.angle - spec.incident_angle).cos());
        let z = spec.driving_pole(j).expect("index in range");
        let kernel = Kernel::new(k, arr.spacing, arr.radius);
        // errors out when the driving pole sits on a kernel singularity
        // (grazing incidence), where no infinite-array limit exists
        let kv = kernel.eval(z)?;
        let amp = -spec.incident_phase(j, 0).expect("index in range") / kv;
        let prefactor = Complex64::from_polar((2.0 / (PI * ks)).sqrt(), -FRAC_PI_4);
        let mut rot = Complex64::new(1.0, 0.0);
        let mut coeff = [Complex64::new(0.0, 0.0); 4];
        for (r, c) in coeff.iter_mut().enumerate() {
            *c = prefactor * rot * HANKEL_ASYM[r] / ks.powi(r as i32);
            rot *= -Complex64::i();
        }
        // S_nu = Li_nu(e^{i theta}) - sum_{q=1..n} e^{i q theta} q^{-nu}
        let w = Complex64::from_polar(1.0, theta);
        let mut partial = [Complex64::new(0.0, 0.0); 4];
        let mut wq = Complex64::new(1.0, 0.0);
        for q in 1..=n {
            wq *= w;
            let inv = 1.0 / q as f64;
            let mut p = inv.sqrt();
            for s in &mut partial {
                *s += wq * p;
                p *= inv;
            }
        }
        let mut s_tail = [Complex64::new(0.0, 0.0); 4];
        for (r, s) in s_tail.iter_mut().enumerate() {
            *s = polylog_half(r, theta) - partial[r];
        }
        let (ox, oy) = arr.origin();
        tails.push(ArrayTail {
            ox,
            oy,
            ex: arr.angle.cos(),
            ey: arr.angle.sin(),
            inv_s: 1.0 / arr.spacing,
            amp,
            coeff,
            s_tail,
        });
    }

    let mut out = grid.clone();
    out.values = (0..grid.values.len())
        .into_par_iter()
        .map(|id| {
            if grid.mask[id] {
                return Complex64::new(0.0, 0.0);
            }
            let x = grid.x(id % grid.nx);
            let y = grid.y(id / grid.nx);
            let mut t = Complex64::new(0.0, 0.0);
            for tail in &tails {
                let a = (x - tail.ox) * tail.ex + (y - tail.oy) * tail.ey;
                let delta = a * tail.inv_s;
                let mut sum = Complex64::new(0.0, 0.0);
                for r in 0..4 {
                    let mut v = tail.s_tail[r];
                    if r < 3 {
                        v += (r as f64 + 0.5) * delta * tail.s_tail[r + 1];
                    }
                    sum += tail.coeff[r] * v;
                }
                t += tail.amp * Complex64::from_polar(1.0, -k * a) * sum;
            }
            t
        })
        .collect();
    Ok(out)
}

/// 20 log10(RMS |phi|) over the unmasked samples inside the disk.
pub fn spl(grid: &FieldGrid, cx: f64, cy: f64, radius: f64) -> Result<f64, FieldError> {
    let mut sum = 0.0f64;
    let mut count = 0usize;
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let id = grid.idx(ix, iy);
            if grid.mask[id] {
                continue;
            }
            if (grid.x(ix) - cx).hypot(grid.y(iy) - cy) <= radius {
                sum += grid.values[id].norm_sqr();
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(FieldError::EmptyRegion);
    }
    Ok(20.0 * ((sum / count as f64).sqrt()).log10())
}

/// Default shielding-metric region: a disk at the centroid of the array
/// start points. The radius backs off from the nearest scatterer by two
/// spacings when that leaves room, and to half the clearance otherwise
/// (start points on a circle around the centroid would otherwise give a
/// degenerate zero-radius region).
pub fn default_spl_region(spec: &ProblemSpec) -> (f64, f64, f64) {
    let jn = spec.array_count() as f64;
    let (mut cx, mut cy) = (0.0, 0.0);
    for arr in &spec.arrays {
        let (x, y) = arr.origin();
        cx += x;
        cy += y;
    }
    cx /= jn;
    cy /= jn;
    let mut min_dist = f64::INFINITY;
    let mut s_max = 0.0f64;
    for (j, arr) in spec.arrays.iter().enumerate() {
        s_max = s_max.max(arr.spacing);
        for m in 0..=spec.truncation.min(64) {
            let (x, y) = spec.scatterer_position(j, m).expect("index in range");
            min_dist = min_dist.min((x - cx).hypot(y - cy));
        }
    }
    let radius = (min_dist - 2.0 * s_max).max(min_dist / 2.0);
    (cx, cy, radius)
}
