//! Array configuration: scatterer positions, pair distances, incident
//! phases, admissibility checks and resonance detection.
//!
//! All operations are pure functions of immutable specs. Array indices
//! are 0-based throughout the crate.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default tolerance on the distance-to-integer used for resonance flags.
pub const RESONANCE_TOL: f64 = 1e-6;

/// Modeling-assumption threshold: ka above this triggers a warning.
pub const KA_WARN_THRESHOLD: f64 = 0.1;

/// One semi-infinite periodic array of identical scatterers.
///
/// The n-th scatterer sits at `origin + n * spacing * (cos angle, sin angle)`
/// where `origin` is given in polar form (`origin_radius`, `origin_angle`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    /// Scatterer spacing s_j [m], > 0.
    pub spacing: f64,
    /// Scatterer radius a_j [m], > 0.
    pub radius: f64,
    /// Array direction alpha_j [rad].
    pub angle: f64,
    /// Polar radius of the array start R0_j [m], >= 0.
    pub origin_radius: f64,
    /// Polar angle of the array start theta0_j [rad].
    pub origin_angle: f64,
}

impl ArraySpec {
    /// Cartesian origin of the array.
    pub fn origin(&self) -> (f64, f64) {
        (
            self.origin_radius * self.origin_angle.cos(),
            self.origin_radius * self.origin_angle.sin(),
        )
    }
}

/// Full scattering problem: incident plane wave plus the array list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Wavenumber k [1/m], > 0.
    pub wavenumber: f64,
    /// Incident angle theta_I [rad].
    pub incident_angle: f64,
    /// At least one array.
    pub arrays: Vec<ArraySpec>,
    /// Truncation N: coefficients m = 0..N are kept per array.
    pub truncation: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("array index {j} out of range (have {count} arrays)")]
    ArrayIndexOutOfRange { j: usize, count: usize },
}

/// A non-overlap violation found by [`validate`]. Violations are data,
/// not exceptions.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    /// a_j >= s_j / 2 within one array.
    IntraArray { j: usize },
    /// a_j + a_l >= distance between scatterer m of array j and
    /// scatterer n of array l.
    CrossArray {
        j: usize,
        m: usize,
        l: usize,
        n: usize,
        distance: f64,
    },
    /// Non-positive spacing or radius.
    BadParameter { j: usize, what: &'static str },
}

/// Per-array resonance status.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResonanceFlags {
    /// (ks/2pi)(1 + cos(alpha - theta_I)) within tolerance of an integer.
    pub inward: bool,
    /// (ks/2pi)(1 - cos(alpha - theta_I)) within tolerance of an integer.
    pub outward: bool,
    /// |inward quantity - nearest integer|.
    pub inward_distance: f64,
    /// |outward quantity - nearest integer|.
    pub outward_distance: f64,
}

impl ProblemSpec {
    pub fn array_count(&self) -> usize {
        self.arrays.len()
    }

    fn array(&self, j: usize) -> Result<&ArraySpec, GeometryError> {
        self.arrays.get(j).ok_or(GeometryError::ArrayIndexOutOfRange {
            j,
            count: self.arrays.len(),
        })
    }

    /// Position of the n-th scatterer of array j.
    pub fn scatterer_position(&self, j: usize, n: usize) -> Result<(f64, f64), GeometryError> {
        let arr = self.array(j)?;
        let (ox, oy) = arr.origin();
        let step = n as f64 * arr.spacing;
        Ok((ox + step * arr.angle.cos(), oy + step * arr.angle.sin()))
    }

    /// Distance between scatterer m of array j and scatterer n of array l.
    pub fn pair_distance(&self, j: usize, m: usize, l: usize, n: usize) -> Result<f64, GeometryError> {
        let (xa, ya) = self.scatterer_position(j, m)?;
        let (xb, yb) = self.scatterer_position(l, n)?;
        Ok((xa - xb).hypot(ya - yb))
    }

    /// Pairwise non-overlap check over indices 0..=check_depth.
    ///
    /// Empty result iff a_j < s_j/2 for all arrays and
    /// a_j + a_l < distance for all cross pairs tested.
    pub fn validate(&self, check_depth: usize) -> Vec<Violation> {
        let mut out = Vec::new();
        for (j, arr) in self.arrays.iter().enumerate() {
            if !(arr.spacing > 0.0) {
                out.push(Violation::BadParameter { j, what: "spacing" });
            }
            if !(arr.radius > 0.0) {
                out.push(Violation::BadParameter { j, what: "radius" });
            }
            if arr.radius >= arr.spacing / 2.0 {
                out.push(Violation::IntraArray { j });
            }
        }
        for j in 0..self.arrays.len() {
            for l in (j + 1)..self.arrays.len() {
                let limit = self.arrays[j].radius + self.arrays[l].radius;
                for m in 0..=check_depth {
                    for n in 0..=check_depth {
                        let d = self.pair_distance(j, m, l, n).expect("indices checked");
                        if d <= limit {
                            out.push(Violation::CrossArray { j, m, l, n, distance: d });
                        }
                    }
                }
            }
        }
        out
    }

    /// True when any array has ka above the Foldy modeling threshold.
    pub fn ka_warning(&self) -> bool {
        self.arrays
            .iter()
            .any(|a| self.wavenumber * a.radius > KA_WARN_THRESHOLD)
    }

    /// Incident phase e^{i k . R_m^{(j)}} at scatterer m of array j.
    pub fn incident_phase(&self, j: usize, m: usize) -> Result<num_complex::Complex64, GeometryError> {
        let arr = self.array(j)?;
        let k = self.wavenumber;
        let phase = -k * arr.origin_radius * (arr.origin_angle - self.incident_angle).cos()
            - k * arr.spacing * m as f64 * (arr.angle - self.incident_angle).cos();
        Ok(num_complex::Complex64::from_polar(1.0, phase))
    }

    /// Incident phase at the array start, e^{i k . R_0^{(j)}}.
    pub fn origin_phase(&self, j: usize) -> Result<num_complex::Complex64, GeometryError> {
        self.incident_phase(j, 0)
    }

    /// The driving pole z_j = e^{i k s_j cos(alpha_j - theta_I)}.
    pub fn driving_pole(&self, j: usize) -> Result<num_complex::Complex64, GeometryError> {
        let arr = self.array(j)?;
        let phase = self.wavenumber * arr.spacing * (arr.angle - self.incident_angle).cos();
        Ok(num_complex::Complex64::from_polar(1.0, phase))
    }

    /// Resonance flags for every array at tolerance `tol`.
    pub fn resonance_report(&self, tol: f64) -> Vec<ResonanceFlags> {
        self.arrays
            .iter()
            .map(|arr| {
                let base = self.wavenumber * arr.spacing / (2.0 * std::f64::consts::PI);
                let c = (arr.angle - self.incident_angle).cos();
                let inward_q = base * (1.0 + c);
                let outward_q = base * (1.0 - c);
                let dist = |q: f64| (q - q.round()).abs();
                ResonanceFlags {
                    inward: dist(inward_q) < tol,
                    outward: dist(outward_q) < tol,
                    inward_distance: dist(inward_q),
                    outward_distance: dist(outward_q),
                }
            })
            .collect()
    }
}
