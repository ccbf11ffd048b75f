//! Independent oracles: the exact doubly-infinite-array solution, a
//! dense solve of the literal truncated point-scatterer system, a
//! monopole least-squares collocation solver, and comparison reports.

use faer::linalg::solvers::{ColPivQr, PartialPivLu, Solve, SolveLstsq};
use faer::{c64, Mat};
use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::ProblemSpec;
use crate::kernel::{Kernel, KernelError};
use crate::solver::{MethodTag, ScatteringSolution};
use crate::specfun::hankel0_real;

/// Unknown-count cap for the dense oracles.
pub const DIRECT_CAP: usize = 8192;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("dense oracle refused: {0} unknowns exceeds cap {DIRECT_CAP}")]
    TooLarge(usize),
    #[error("rank-deficient collocation matrix (pivot ratio {0:e})")]
    RankDeficient(f64),
    #[error("singular dense system")]
    Singular,
    #[error("solutions have mismatched shapes: {0} vs {1} coefficients")]
    ShapeMismatch(usize, usize),
    #[error("comparison ordering defined for 1 or 2 arrays, got {0}")]
    BadArrayCount(usize),
    #[error("collocation needs at least 2 points per scatterer")]
    TooFewCollocationPoints,
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Exact coefficient of the doubly-infinite line built from two
/// back-to-back semi-infinite arrays. `branch` 1 is the array running
/// toward +x from the origin, branch 2 its mirror starting at -s.
pub fn infinite_array_exact(
    kernel: &Kernel,
    theta_i: f64,
    m: usize,
    branch: u8,
) -> Result<Complex64, KernelError> {
    let ks = kernel.k * kernel.s;
    let z = Complex64::from_polar(1.0, ks * theta_i.cos());
    let kv = kernel.eval(z)?;
    let phase = match branch {
        1 => -(ks * m as f64 * theta_i.cos()),
        2 => ks * (m as f64 + 1.0) * theta_i.cos(),
        _ => panic!("branch must be 1 or 2"),
    };
    Ok(-Complex64::from_polar(1.0, phase) / kv)
}

/// Both coefficient vectors of the exact solution, packaged like a
/// two-array solve for comparison purposes.
pub fn infinite_line_exact_solution(
    spec: &ProblemSpec,
    n: usize,
) -> Result<ScatteringSolution, ReferenceError> {
    let arr = &spec.arrays[0];
    let kernel = Kernel::new(spec.wavenumber, arr.spacing, arr.radius);
    let a1 = (0..=n)
        .map(|m| infinite_array_exact(&kernel, spec.incident_angle, m, 1))
        .collect::<Result<Vec<_>, _>>()?;
    let a2 = (0..=n)
        .map(|m| infinite_array_exact(&kernel, spec.incident_angle, m, 2))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ScatteringSolution {
        amplitudes: vec![a1, a2],
        method: MethodTag::DirectFoldy,
        condition_estimate: None,
    })
}

/// Dense solve of the literal truncated point-scatterer system: the
/// ground truth the fast solver is measured against at small N.
pub fn direct_foldy_solve(spec: &ProblemSpec, n: usize) -> Result<ScatteringSolution, ReferenceError> {
    let jn = spec.array_count();
    let n1 = n + 1;
    let d = jn * n1;
    if d > DIRECT_CAP {
        return Err(ReferenceError::TooLarge(d));
    }
    let k = spec.wavenumber;
    let mut mat: Mat<c64> = Mat::zeros(d, d);
    let mut rhs: Mat<c64> = Mat::zeros(d, 1);
    for j in 0..jn {
        let self_term = hankel0_real(k * spec.arrays[j].radius);
        for m in 0..n1 {
            let row = j * n1 + m;
            rhs[(row, 0)] = -spec.incident_phase(j, m).expect("index in range");
            for l in 0..jn {
                for q in 0..n1 {
                    let col = l * n1 + q;
                    mat[(row, col)] = if row == col {
                        self_term
                    } else {
                        hankel0_real(k * spec.pair_distance(j, m, l, q).expect("index in range"))
                    };
                }
            }
        }
    }
    let lu = PartialPivLu::new(mat.as_ref());
    let u = lu.U();
    if (0..d).any(|i| u[(i, i)].norm() == 0.0) {
        return Err(ReferenceError::Singular);
    }
    let x = lu.solve(rhs.as_ref());
    let amplitudes = (0..jn)
        .map(|j| (0..n1).map(|m| x[(j * n1 + m, 0)]).collect())
        .collect();
    Ok(ScatteringSolution {
        amplitudes,
        method: MethodTag::DirectFoldy,
        condition_estimate: None,
    })
}

/// Monopole least-squares collocation: enforce a vanishing total field
/// at `q_pts` equally spaced points on every scatterer circle and solve
/// the overdetermined system by orthogonal decomposition.
pub fn lsc_solve(
    spec: &ProblemSpec,
    n: usize,
    q_pts: usize,
) -> Result<ScatteringSolution, ReferenceError> {
    if q_pts < 2 {
        return Err(ReferenceError::TooFewCollocationPoints);
    }
    let jn = spec.array_count();
    let n1 = n + 1;
    let d = jn * n1;
    if d > DIRECT_CAP {
        return Err(ReferenceError::TooLarge(d));
    }
    let k = spec.wavenumber;
    let positions: Vec<(f64, f64)> = (0..jn)
        .flat_map(|j| (0..n1).map(move |m| (j, m)))
        .map(|(j, m)| spec.scatterer_position(j, m).expect("index in range"))
        .collect();
    let rows = d * q_pts;
    let mut mat: Mat<c64> = Mat::zeros(rows, d);
    let mut rhs: Mat<c64> = Mat::zeros(rows, 1);
    let (ci, si) = (spec.incident_angle.cos(), spec.incident_angle.sin());
    for (scat, &(sx, sy)) in positions.iter().enumerate() {
        let radius = spec.arrays[scat / n1].radius;
        for i in 0..q_pts {
            let ang = 2.0 * std::f64::consts::PI * i as f64 / q_pts as f64;
            let (px, py) = (sx + radius * ang.cos(), sy + radius * ang.sin());
            let row = scat * q_pts + i;
            rhs[(row, 0)] = -Complex64::from_polar(1.0, -k * (px * ci + py * si));
            for (col, &(ox, oy)) in positions.iter().enumerate() {
                mat[(row, col)] = hankel0_real(k * (px - ox).hypot(py - oy));
            }
        }
    }
    let qr = ColPivQr::new(mat.as_ref());
    let r = qr.R();
    let (r0, rn) = (r[(0, 0)].norm(), r[(d - 1, d - 1)].norm());
    if rn < 1e-12 * r0 {
        return Err(ReferenceError::RankDeficient(rn / r0));
    }
    let x = qr.solve_lstsq(rhs.as_ref());
    let amplitudes = (0..jn)
        .map(|j| (0..n1).map(|m| x[(j * n1 + m, 0)]).collect())
        .collect();
    Ok(ScatteringSolution {
        amplitudes,
        method: MethodTag::Lsc,
        condition_estimate: Some(r0 / rn),
    })
}

/// Per-index coefficient differences between two solutions under the
/// two-array interleaved ordering: index n >= 0 maps to A^(1)_n and
/// n < 0 to A^(2)_(-n-1), so a back-to-back pair reads as one line.
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub indices: Vec<i64>,
    /// (label, per-index |difference|), one entry per method pair.
    pub columns: Vec<(String, Vec<f64>)>,
    pub truncation: usize,
    pub array_count: usize,
}

fn flatten(sol: &ScatteringSolution) -> Result<(Vec<i64>, Vec<Complex64>), ReferenceError> {
    let n = sol.truncation();
    match sol.amplitudes.len() {
        1 => Ok(((0..=n as i64).collect(), sol.amplitudes[0].clone())),
        2 => {
            let mut idx = Vec::with_capacity(2 * (n + 1));
            let mut val = Vec::with_capacity(2 * (n + 1));
            for m in (0..=n).rev() {
                idx.push(-(m as i64) - 1);
                val.push(sol.amplitudes[1][m]);
            }
            for m in 0..=n {
                idx.push(m as i64);
                val.push(sol.amplitudes[0][m]);
            }
            Ok((idx, val))
        }
        j => Err(ReferenceError::BadArrayCount(j)),
    }
}

pub fn compare(a: &ScatteringSolution, b: &ScatteringSolution) -> Result<ComparisonReport, ReferenceError> {
    let (ia, va) = flatten(a)?;
    let (_, vb) = flatten(b)?;
    if va.len() != vb.len() || a.amplitudes.len() != b.amplitudes.len() {
        return Err(ReferenceError::ShapeMismatch(va.len(), vb.len()));
    }
    let label = format!("|{}-{}|", a.method.as_str(), b.method.as_str());
    let diffs = va.iter().zip(&vb).map(|(x, y)| (x - y).norm()).collect();
    Ok(ComparisonReport {
        indices: ia,
        columns: vec![(label, diffs)],
        truncation: a.truncation(),
        array_count: a.amplitudes.len(),
    })
}

impl ComparisonReport {
    /// Adds the columns of another report over the same index set.
    pub fn merge(mut self, other: ComparisonReport) -> Result<Self, ReferenceError> {
        if other.indices != self.indices {
            return Err(ReferenceError::ShapeMismatch(
                self.indices.len(),
                other.indices.len(),
            ));
        }
        self.columns.extend(other.columns);
        Ok(self)
    }

    /// Largest difference in a column over indices with |n| (or n, for a
    /// single array) in [lo, hi].
    pub fn max_in(&self, column: usize, lo: i64, hi: i64) -> f64 {
        let mut best = 0.0f64;
        for (&n, &d) in self.indices.iter().zip(&self.columns[column].1) {
            let key = if self.array_count == 2 { map_abs(n) } else { n };
            if key >= lo && key <= hi {
                best = best.max(d);
            }
        }
        best
    }

    pub fn max(&self, column: usize) -> f64 {
        self.columns[column].1.iter().cloned().fold(0.0, f64::max)
    }
}

/// Distance from the array start under the interleaved ordering:
/// n >= 0 is scatterer n of array 1; n < 0 is scatterer -n-1 of array 2.
fn map_abs(n: i64) -> i64 {
    if n >= 0 { n } else { -n - 1 }
}
