//! Configuration files, presets, command dispatch, and output formats.
//!
//! Angles in config files are written as exact multiples of pi in a
//! small string grammar ("5pi/6", "-pi", "7.5pi", "0.3") so preset
//! geometry survives serialization bit-for-bit.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::field::{default_spl_region, make_grid, spl, total_field, FieldError};
use crate::geometry::{ArraySpec, ProblemSpec};
use crate::kernel::KernelError;
use crate::reference::{compare, infinite_line_exact_solution, lsc_solve, ComparisonReport, ReferenceError};
use crate::solver::{
    build_system, diagnostics, energy_residual, foldy_residual, ScatteringSolution, SolverError,
};

pub const PRESET_NAMES: [&str; 8] = [
    "single",
    "wedge",
    "wedge-gaps",
    "wedge-extra",
    "faraday-cage",
    "lattice-stop",
    "lattice-pass",
    "infinite-line",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown preset `{0}` (see `presets` for the list)")]
    UnknownPreset(String),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config is missing both a preset name and a problem section")]
    NoProblem,
    #[error("coefficient file header mismatch: {0}")]
    HeaderMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

impl CliError {
    /// 2 = validation/config, 3 = resonance refusal, 4 = numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Solver(SolverError::OutwardResonance { .. }) => 3,
            CliError::Solver(SolverError::Validation(_))
            | CliError::UnknownPreset(_)
            | CliError::Parse(_)
            | CliError::NoProblem
            | CliError::HeaderMismatch(_)
            | CliError::Io { .. } => 2,
            _ => 4,
        }
    }
}

// ---------------------------------------------------------------- angles

/// A number carried as an exact multiple of pi when possible.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiValue(pub f64);

pub fn parse_pi(s: &str) -> Result<f64, String> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    if t.is_empty() {
        return Err("empty angle".into());
    }
    if let Ok(v) = t.parse::<f64>() {
        return Ok(v);
    }
    let Some(pos) = t.find("pi") else {
        return Err(format!("cannot parse `{s}` as a number or multiple of pi"));
    };
    let (head, tail) = (&t[..pos], &t[pos + 2..]);
    let coef = match head {
        "" | "+" => 1.0,
        "-" => -1.0,
        other => other
            .parse::<f64>()
            .map_err(|_| format!("bad coefficient `{other}` in `{s}`"))?,
    };
    let den = match tail {
        "" => 1.0,
        d if d.starts_with('/') => d[1..]
            .parse::<f64>()
            .map_err(|_| format!("bad denominator in `{s}`"))?,
        _ => return Err(format!("trailing `{tail}` in `{s}`")),
    };
    Ok(coef * std::f64::consts::PI / den)
}

pub fn format_pi(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    for den in 1..=48u32 {
        let num = (v * den as f64 / std::f64::consts::PI).round();
        if num != 0.0 && num.abs() < 1e6 && num * std::f64::consts::PI / den as f64 == v {
            let n = num as i64;
            return match (n, den) {
                (1, 1) => "pi".to_string(),
                (-1, 1) => "-pi".to_string(),
                (_, 1) => format!("{n}pi"),
                (1, _) => format!("pi/{den}"),
                (-1, _) => format!("-pi/{den}"),
                _ => format!("{n}pi/{den}"),
            };
        }
    }
    format!("{v:.17e}")
}

impl Serialize for PiValue {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format_pi(self.0))
    }
}

impl<'de> Deserialize<'de> for PiValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = PiValue;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a number or a pi-multiple string like \"5pi/6\"")
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<PiValue, E> {
                parse_pi(v).map(PiValue).map_err(E::custom)
            }
            fn visit_f64<E>(self, v: f64) -> Result<PiValue, E> {
                Ok(PiValue(v))
            }
            fn visit_i64<E>(self, v: i64) -> Result<PiValue, E> {
                Ok(PiValue(v as f64))
            }
        }
        d.deserialize_any(V)
    }
}

// ---------------------------------------------------------------- config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub spacing: f64,
    pub radius: f64,
    pub angle: PiValue,
    pub origin_radius: f64,
    pub origin_angle: PiValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemConfig {
    pub wavenumber: PiValue,
    pub incident_angle: PiValue,
    pub arrays: Vec<ArrayConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub truncation: usize,
    /// Inner truncation P; defaults to the outer truncation.
    pub inner_truncation: Option<usize>,
    /// Initial unit-circle sample count for the factorization.
    pub contour_size: Option<usize>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            truncation: 200,
            inner_truncation: None,
            contour_size: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct FieldOptions {
    /// xmin, xmax, ymin, ymax.
    pub bounds: Option<[f64; 4]>,
    /// nx, ny.
    pub resolution: Option<[usize; 2]>,
    /// cx, cy, radius; omitted = geometry-derived default region.
    pub spl_region: Option<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub problem: Option<ProblemConfig>,
    pub solver: SolverOptions,
    pub field: FieldOptions,
}

impl RunConfig {
    pub fn problem_spec(&self) -> Result<ProblemSpec, CliError> {
        let pc = match (&self.problem, &self.preset) {
            (Some(p), _) => p.clone(),
            (None, Some(name)) => preset_problem(name)?,
            (None, None) => return Err(CliError::NoProblem),
        };
        Ok(ProblemSpec {
            wavenumber: pc.wavenumber.0,
            incident_angle: pc.incident_angle.0,
            arrays: pc
                .arrays
                .iter()
                .map(|a| ArraySpec {
                    spacing: a.spacing,
                    radius: a.radius,
                    angle: a.angle.0,
                    origin_radius: a.origin_radius,
                    origin_angle: a.origin_angle.0,
                })
                .collect(),
            truncation: self.solver.truncation,
        })
    }
}

pub fn load_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::Parse(e.to_string()))
}

pub fn write_config(cfg: &RunConfig) -> String {
    toml::to_string_pretty(cfg).expect("config serializes")
}

// ---------------------------------------------------------------- presets

fn pi(num: f64, den: f64) -> PiValue {
    PiValue(num * std::f64::consts::PI / den)
}

fn arr(spacing: f64, angle: PiValue, origin_angle: PiValue, origin_radius: f64) -> ArrayConfig {
    ArrayConfig {
        spacing,
        radius: 0.001,
        angle,
        origin_radius,
        origin_angle,
    }
}

/// The built-in configurations (the published test cases plus a bare
/// single array and the back-to-back pair forming one infinite line).
pub fn preset_problem(name: &str) -> Result<ProblemConfig, CliError> {
    let k5 = pi(5.0, 1.0);
    let quarter = pi(1.0, 4.0);
    let cfg = match name {
        "single" => ProblemConfig {
            wavenumber: k5,
            incident_angle: quarter,
            arrays: vec![arr(0.1, pi(0.0, 1.0), pi(0.0, 1.0), 0.0)],
        },
        "wedge" => ProblemConfig {
            wavenumber: k5,
            incident_angle: quarter,
            arrays: vec![
                arr(0.1, pi(5.0, 6.0), pi(0.0, 1.0), 0.0),
                arr(0.1, pi(-5.0, 6.0), pi(-5.0, 6.0), 0.1),
            ],
        },
        "wedge-gaps" => ProblemConfig {
            wavenumber: k5,
            incident_angle: quarter,
            arrays: vec![
                arr(0.1, pi(5.0, 6.0), pi(5.0, 6.0), 0.3),
                arr(0.1, pi(-5.0, 6.0), pi(-5.0, 6.0), 0.3),
            ],
        },
        "wedge-extra" => ProblemConfig {
            wavenumber: k5,
            incident_angle: quarter,
            arrays: vec![
                arr(0.1, pi(5.0, 6.0), pi(-1.0, 6.0), 0.45),
                arr(0.1, pi(-5.0, 6.0), pi(1.0, 6.0), 0.45),
            ],
        },
        "faraday-cage" => ProblemConfig {
            wavenumber: k5,
            incident_angle: quarter,
            arrays: (1..=12)
                .map(|j| {
                    let ang = if j <= 7 {
                        pi((j - 1) as f64, 6.0)
                    } else {
                        pi((j - 13) as f64, 6.0)
                    };
                    arr(0.05, ang, ang, 0.1)
                })
                .collect(),
        },
        "lattice-stop" | "lattice-pass" => ProblemConfig {
            wavenumber: if name == "lattice-pass" { pi(7.5, 1.0) } else { k5 },
            incident_angle: quarter,
            arrays: (1..=12)
                .map(|j| {
                    if j % 2 == 1 {
                        arr(0.1, pi(0.0, 1.0), pi(-1.0, 2.0), 0.1 * ((j - 1) as f64 / 2.0))
                    } else {
                        let t = j as f64 / 2.0 - 1.0;
                        arr(
                            0.1,
                            pi(1.0, 1.0),
                            PiValue(-std::f64::consts::PI + t.atan()),
                            0.1 * (1.0 + t * t).sqrt(),
                        )
                    }
                })
                .collect(),
        },
        "infinite-line" => ProblemConfig {
            wavenumber: k5,
            incident_angle: quarter,
            arrays: vec![
                arr(0.1, pi(0.0, 1.0), pi(-1.0, 2.0), 0.0),
                arr(0.1, pi(1.0, 1.0), pi(-1.0, 1.0), 0.1),
            ],
        },
        other => return Err(CliError::UnknownPreset(other.to_string())),
    };
    Ok(cfg)
}

pub fn preset_config(name: &str) -> Result<RunConfig, CliError> {
    Ok(RunConfig {
        preset: Some(name.to_string()),
        problem: Some(preset_problem(name)?),
        solver: SolverOptions::default(),
        field: FieldOptions::default(),
    })
}

/// ProblemSpec for a named preset at truncation `n`.
pub fn preset(name: &str, n: usize) -> Result<ProblemSpec, CliError> {
    let mut cfg = preset_config(name)?;
    cfg.solver.truncation = n;
    cfg.problem_spec()
}

// ---------------------------------------------------------------- file formats

pub fn coefficients_text(spec: &ProblemSpec, sol: &ScatteringSolution) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "# arrayscat coefficients J={} N={} k={:.17e} theta_i={:.17e} method={}",
        spec.array_count(),
        sol.truncation(),
        spec.wavenumber,
        spec.incident_angle,
        sol.method.as_str()
    );
    let _ = writeln!(out, "# j m re im");
    for (j, amps) in sol.amplitudes.iter().enumerate() {
        for (m, a) in amps.iter().enumerate() {
            let _ = writeln!(out, "{} {} {:.17e} {:.17e}", j, m, a.re, a.im);
        }
    }
    out
}

/// Reads a coefficient file back and checks its header against `spec`.
pub fn read_coefficients(text: &str, spec: &ProblemSpec) -> Result<Vec<Vec<Complex64>>, CliError> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let get = |key: &str| -> Option<String> {
        header
            .split_whitespace()
            .find_map(|tok| tok.strip_prefix(&format!("{key}=")).map(str::to_string))
    };
    let jn: usize = get("J")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::HeaderMismatch("missing J".into()))?;
    let n: usize = get("N")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| CliError::HeaderMismatch("missing N".into()))?;
    if jn != spec.array_count() {
        return Err(CliError::HeaderMismatch(format!(
            "file has J={jn}, config has J={}",
            spec.array_count()
        )));
    }
    let mut amps = vec![vec![Complex64::new(0.0, 0.0); n + 1]; jn];
    for line in lines.filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let mut it = line.split_whitespace();
        let parse = |t: Option<&str>| -> Result<f64, CliError> {
            t.and_then(|v| v.parse().ok())
                .ok_or_else(|| CliError::Parse(format!("bad coefficient row `{line}`")))
        };
        let j = parse(it.next())? as usize;
        let m = parse(it.next())? as usize;
        let re = parse(it.next())?;
        let im = parse(it.next())?;
        if j >= jn || m > n {
            return Err(CliError::Parse(format!("row index out of range: `{line}`")));
        }
        amps[j][m] = Complex64::new(re, im);
    }
    Ok(amps)
}

pub fn comparison_text(rep: &ComparisonReport) -> String {
    let mut out = String::new();
    let labels: Vec<&str> = rep.columns.iter().map(|(l, _)| l.as_str()).collect();
    let _ = writeln!(
        out,
        "# arrayscat comparison N={} J={} columns: n {}",
        rep.truncation,
        rep.array_count,
        labels.join(" ")
    );
    for (row, &n) in rep.indices.iter().enumerate() {
        let _ = write!(out, "{n}");
        for (_, col) in &rep.columns {
            let _ = write!(out, " {:.17e}", col[row]);
        }
        let _ = writeln!(out);
    }
    out
}

// ---------------------------------------------------------------- commands

#[derive(Parser, Debug)]
#[command(name = "arrayscat", about = "Multiple semi-infinite scatterer arrays via the discrete Wiener-Hopf technique", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// TOML config file; presets can be used instead.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in configuration name (see `presets`).
    #[arg(long)]
    pub preset: Option<String>,
    /// Override the truncation N.
    #[arg(long)]
    pub truncation: Option<usize>,
    /// Worker threads; 1 guarantees bit-reproducible output.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Output file or directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Solve for the scattering coefficients and write diagnostics.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Also dump kernel factorization data (c_n, lambda_n, K0).
        #[arg(long)]
        dump_kernel: bool,
        /// Also dump the uncoupled driving vectors next to the solution.
        #[arg(long)]
        dump_driving: bool,
    },
    /// Evaluate the total field on a grid (solves first if no
    /// coefficient file is given).
    Field {
        #[command(flatten)]
        common: CommonArgs,
        /// Previously written coefficient file.
        #[arg(long)]
        coefficients: Option<PathBuf>,
        /// SPL disk as cx,cy,r (default: geometry-derived central disk).
        #[arg(long, value_delimiter = ',', num_args = 3)]
        spl_region: Option<Vec<f64>>,
        /// Add the asymptotic continuation of each array beyond its
        /// truncation (valid near the array starts; see field::tail_field).
        #[arg(long)]
        tails: bool,
    },
    /// Cross-validate solution methods per coefficient index.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// Collocation points per scatterer for the LSC oracle.
        #[arg(long, default_value_t = 8)]
        collocation: usize,
    },
    /// Determinant identities, condition and spectral-radius estimates.
    Diagnose {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// List the built-in configurations.
    Presets,
}

fn effective_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match (&common.config, &common.preset) {
        (Some(path), _) => load_config(path)?,
        (None, Some(name)) => preset_config(name)?,
        (None, None) => return Err(CliError::NoProblem),
    };
    if let (Some(name), None) = (&common.preset, &cfg.problem) {
        cfg.problem = Some(preset_problem(name)?);
    }
    if let Some(n) = common.truncation {
        cfg.solver.truncation = n;
    }
    Ok(cfg)
}

fn write_out(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
    }
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn out_dir(common: &CommonArgs) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn solve_once(cfg: &RunConfig) -> Result<(ProblemSpec, crate::solver::BlockSystem, ScatteringSolution), CliError> {
    let spec = cfg.problem_spec()?;
    let n = cfg.solver.truncation;
    let p = cfg.solver.inner_truncation.unwrap_or(n.max(crate::solver::INNER_TRUNCATION_FLOOR));
    let sys = crate::solver::build_system_with(&spec, n, p)?;
    let sol = sys.assemble_and_solve()?;
    Ok((spec, sys, sol))
}

fn diagnostics_text(
    spec: &ProblemSpec,
    sys: &crate::solver::BlockSystem,
    sol: &ScatteringSolution,
    elapsed: std::time::Duration,
) -> String {
    let fr = foldy_residual(spec, sol);
    let er = energy_residual(spec, sol);
    let mut out = String::new();
    let _ = writeln!(out, "# arrayscat diagnostics");
    let _ = writeln!(out, "method {}", sol.method.as_str());
    if let Some(c) = sol.condition_estimate {
        let _ = writeln!(out, "condition_estimate {c:.6e}");
    }
    let _ = writeln!(
        out,
        "foldy_residual_interior {:.6e} (edge window {})",
        fr.interior_max, fr.edge_window
    );
    let _ = writeln!(out, "foldy_residual_max {:.6e}", fr.max_all);
    let _ = writeln!(out, "energy_residual_max {:.6e}", er.max_residual);
    for (j, flags) in spec
        .resonance_report(crate::geometry::RESONANCE_TOL)
        .iter()
        .enumerate()
    {
        let _ = writeln!(
            out,
            "resonance array={} inward_distance={:.3e} outward_distance={:.3e}",
            j, flags.inward_distance, flags.outward_distance
        );
    }
    for w in &sys.warnings {
        let _ = writeln!(out, "warning {w}");
    }
    let _ = writeln!(out, "elapsed_seconds {:.3}", elapsed.as_secs_f64());
    out
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Presets => {
            for name in PRESET_NAMES {
                let cfg = preset_config(name)?;
                let jn = cfg.problem.as_ref().map(|p| p.arrays.len()).unwrap_or(0);
                println!("{name}: {jn} array(s)");
            }
            Ok(())
        }
        Command::Solve {
            common,
            dump_kernel,
            dump_driving,
        } => {
            init_threads(common.threads);
            let cfg = effective_config(&common)?;
            let start = std::time::Instant::now();
            let (spec, sys, sol) = solve_once(&cfg)?;
            let dir = out_dir(&common);
            write_out(&dir.join("coefficients.txt"), &coefficients_text(&spec, &sol))?;
            write_out(
                &dir.join("diagnostics.txt"),
                &diagnostics_text(&spec, &sys, &sol, start.elapsed()),
            )?;
            if dump_driving {
                let driving_sol = ScatteringSolution {
                    amplitudes: sys.driving.clone(),
                    method: sol.method,
                    condition_estimate: None,
                };
                write_out(&dir.join("driving.txt"), &coefficients_text(&spec, &driving_sol))?;
            }
            if dump_kernel {
                let mut seen = std::collections::HashSet::new();
                for j in 0..spec.array_count() {
                    let arr = &spec.arrays[j];
                    if seen.insert((arr.spacing.to_bits(), arr.radius.to_bits())) {
                        write_out(
                            &dir.join(format!("kernel_{j}.txt")),
                            &sys.kernel(j).dump_text(),
                        )?;
                    }
                }
            }
            Ok(())
        }
        Command::Field {
            common,
            coefficients,
            spl_region,
            tails,
        } => {
            init_threads(common.threads);
            let cfg = effective_config(&common)?;
            let spec = cfg.problem_spec()?;
            let sol = match &coefficients {
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                        path: path.clone(),
                        source,
                    })?;
                    let amplitudes = read_coefficients(&text, &spec)?;
                    ScatteringSolution {
                        amplitudes,
                        method: crate::solver::MethodTag::BlockSolve,
                        condition_estimate: None,
                    }
                }
                None => solve_once(&cfg)?.2,
            };
            let bounds = cfg.field.bounds.unwrap_or([-1.0, 1.0, -1.0, 1.0]);
            let [nx, ny] = cfg.field.resolution.unwrap_or([201, 201]);
            let grid = make_grid(
                &spec,
                (bounds[0], bounds[1], bounds[2], bounds[3]),
                nx,
                ny,
                sol.truncation(),
            )?;
            let mut f = total_field(&spec, &sol, &grid);
            if tails {
                let tail = crate::field::tail_field(&spec, sol.truncation(), &grid)?;
                for (v, t) in f.values.iter_mut().zip(&tail.values) {
                    *v += t;
                }
            }
            let region = spl_region
                .as_deref()
                .map(|v| [v[0], v[1], v[2]])
                .or(cfg.field.spl_region)
                .unwrap_or_else(|| {
                    let (cx, cy, r) = default_spl_region(&spec);
                    [cx, cy, r]
                });
            let spl_value = spl(&f, region[0], region[1], region[2])?;
            let mut out = String::new();
            let _ = writeln!(
                out,
                "# arrayscat field J={} N={} k={:.17e} theta_i={:.17e} tails={}",
                spec.array_count(),
                sol.truncation(),
                spec.wavenumber,
                spec.incident_angle,
                tails
            );
            let _ = writeln!(
                out,
                "# bounds {:.17e} {:.17e} {:.17e} {:.17e} nx={} ny={}",
                bounds[0], bounds[1], bounds[2], bounds[3], nx, ny
            );
            let _ = writeln!(
                out,
                "# spl region cx={:.17e} cy={:.17e} r={:.17e} value_db={:.6}",
                region[0], region[1], region[2], spl_value
            );
            let _ = writeln!(out, "# x y re im mask");
            for iy in 0..ny {
                for ix in 0..nx {
                    let id = f.idx(ix, iy);
                    let _ = writeln!(
                        out,
                        "{:.17e} {:.17e} {:.17e} {:.17e} {}",
                        f.x(ix),
                        f.y(iy),
                        f.values[id].re,
                        f.values[id].im,
                        f.mask[id] as u8
                    );
                }
            }
            let path = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("field.txt"));
            write_out(&path, &out)?;
            println!("SPL {spl_value:.4} dB over disk ({}, {}, {})", region[0], region[1], region[2]);
            Ok(())
        }
        Command::Compare { common, collocation } => {
            init_threads(common.threads);
            let cfg = effective_config(&common)?;
            let spec = cfg.problem_spec()?;
            let n = cfg.solver.truncation;
            let p = cfg.solver.inner_truncation.unwrap_or(n.max(crate::solver::INNER_TRUNCATION_FLOOR));
            let sys = crate::solver::build_system_with(&spec, n, p)?;
            let wh = sys.assemble_and_solve()?;
            let lsc = lsc_solve(&spec, n, collocation)?;
            let mut rep = compare(&wh, &lsc)?;
            if cfg.preset.as_deref() == Some("infinite-line") {
                let exact = infinite_line_exact_solution(&spec, n)?;
                rep = rep
                    .merge(compare(&wh, &exact)?)?
                    .merge(compare(&lsc, &exact)?)?;
            }
            let path = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("comparison.txt"));
            write_out(&path, &comparison_text(&rep))?;
            Ok(())
        }
        Command::Diagnose { common } => {
            init_threads(common.threads);
            let cfg = effective_config(&common)?;
            let spec = cfg.problem_spec()?;
            let n = cfg.solver.truncation;
            let sys = build_system(&spec, n)?;
            let diag = diagnostics(&sys, n.min(64))?;
            let mut out = String::new();
            let _ = writeln!(out, "# arrayscat diagnose N={} probed={}", n, diag.truncation_probed);
            for &((j, l), r) in &diag.det_identity_residual {
                let _ = writeln!(out, "det_identity block=({j},{l}) residual={r:.6e}");
            }
            for &((j, l), v) in &diag.log_det_m {
                let _ = writeln!(out, "log_abs_det block=({j},{l}) value={v:.6e}");
            }
            if let Some(c) = diag.condition_estimate {
                let _ = writeln!(out, "condition_estimate {c:.6e}");
            }
            if let Some(r) = diag.spectral_radius {
                let _ = writeln!(out, "spectral_radius {r:.6e}");
            }
            match &common.out {
                Some(path) => write_out(path, &out)?,
                None => print!("{out}"),
            }
            Ok(())
        }
    }
}

fn init_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        if t == 1 {
            faer::set_global_parallelism(faer::Par::Seq);
        }
    }
}
