//! Line-oriented scenario files.
//!
//! ```text
//! # perturbed sphere
//! id = sphere
//! geometry = icosphere(4)
//! perturbation = 0.2 * linear_x
//! T = 2
//! dt = 1e-3
//! stride = 10
//! k = 3
//! trace = sphere.csv
//! ```
//!
//! Geometries: `icosphere(level)`, `torus_grid(Nx, Ny, Lx, Ly)`,
//! `off_file(path)`, `product_spheres(p, q, a0, b0)`. Lengths accept `pi`
//! multiples such as `2pi` or `1.6*pi`.
//!
//! A perturbation is a `+`-separated sum of `[amplitude *] field` terms, with
//! fields `linear_x`, `linear_y`, `linear_z`, `sin_x`, `sin_y`,
//! `sin_x_sin_y`, `cos_kx(k)`, `cos_ky(k)` evaluated at vertex positions, or
//! `file(path)` holding one value per vertex. Relative paths are resolved
//! against the scenario file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::homogeneous::{run_product, ProductSphereState};
use crate::mesh::{assemble_operators, icosphere, read_off, torus_grid, DiscreteOperators, TriangleMesh};
use crate::spectrum::DEFAULT_TOL;
use crate::surface_flow::{run_with_operators, FlowConfig, RunError};
use crate::trace::FlowTrace;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("scenario line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenario: {0}")]
    Invalid(String),
    #[error("I/O error: {0}")]
    Io(String),
}

fn parse_err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Icosphere { level: u32 },
    TorusGrid { nx: usize, ny: usize, lx: f64, ly: f64 },
    OffFile { path: PathBuf },
    ProductSpheres { p: usize, q: usize, a0: f64, b0: f64 },
}

impl Geometry {
    pub fn label(&self) -> String {
        match self {
            Geometry::Icosphere { level } => format!("icosphere({level})"),
            Geometry::TorusGrid { nx, ny, lx, ly } => format!("torus_grid({nx},{ny},{lx},{ly})"),
            Geometry::OffFile { path } => format!("off_file({})", path.display()),
            Geometry::ProductSpheres { p, q, .. } => format!("product_spheres({p},{q})"),
        }
    }

    pub fn is_surface(&self) -> bool {
        !matches!(self, Geometry::ProductSpheres { .. })
    }

    pub fn build_mesh(&self) -> Result<TriangleMesh, ScenarioError> {
        let invalid = |e: crate::mesh::MeshError| ScenarioError::Invalid(e.to_string());
        match self {
            Geometry::Icosphere { level } => Ok(icosphere(*level)),
            Geometry::TorusGrid { nx, ny, lx, ly } => torus_grid(*nx, *ny, *lx, *ly).map_err(invalid),
            Geometry::OffFile { path } => read_off(path).map_err(invalid),
            Geometry::ProductSpheres { .. } => Err(ScenarioError::Invalid(
                "product_spheres has no mesh".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Field {
    Linear(usize),
    SinX,
    SinY,
    SinXSinY,
    CosKx(f64),
    CosKy(f64),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub amplitude: f64,
    pub field: Field,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub geometry: Geometry,
    pub perturbation: Vec<Term>,
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
    pub k: usize,
    pub eig_tol: f64,
    /// Zero-based branch for the rate check.
    pub rate_branch: usize,
    pub trace_path: Option<PathBuf>,
    /// Where `rate-check` writes its table.
    pub report_path: Option<PathBuf>,
}

const KEYS: [&str; 11] = [
    "id", "geometry", "perturbation", "T", "dt", "stride", "k", "eig_tol", "rate_branch", "trace",
    "report",
];

/// A number, optionally a multiple of π: `2`, `1e-3`, `pi`, `2pi`, `1.6*pi`.
pub fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some(prefix) = s.strip_suffix("pi") {
        let prefix = prefix.trim().trim_end_matches('*').trim();
        let factor = if prefix.is_empty() {
            1.0
        } else {
            prefix.parse::<f64>().ok()?
        };
        return Some(factor * std::f64::consts::PI);
    }
    s.parse::<f64>().ok().filter(|x| x.is_finite())
}

/// `name(a, b, ...)` → (`name`, [`a`, `b`, ...]).
fn call(s: &str) -> Option<(&str, Vec<&str>)> {
    let s = s.trim();
    let open = s.find('(')?;
    let inner = s[open + 1..].strip_suffix(')')?;
    let args = if inner.trim().is_empty() {
        Vec::new()
    } else {
        inner.split(',').map(str::trim).collect()
    };
    Some((s[..open].trim(), args))
}

fn resolve(base: &Path, raw: &str) -> PathBuf {
    let path = PathBuf::from(raw.trim());
    if path.is_absolute() {
        path
    } else {
        base.join(path)
    }
}

fn parse_geometry(value: &str, line: usize, base: &Path) -> Result<Geometry, ScenarioError> {
    let (name, args) =
        call(value).ok_or_else(|| parse_err(line, format!("expected name(args), got {value:?}")))?;
    let arity = |n: usize| {
        if args.len() == n {
            Ok(())
        } else {
            Err(parse_err(line, format!("{name} takes {n} argument(s), got {}", args.len())))
        }
    };
    let int = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| parse_err(line, format!("expected a nonnegative integer, got {s:?}")))
    };
    let real = |s: &str| parse_number(s).ok_or_else(|| parse_err(line, format!("expected a number, got {s:?}")));
    match name {
        "icosphere" => {
            arity(1)?;
            let level = int(args[0])?;
            if level > 8 {
                return Err(parse_err(line, "icosphere level above 8 is not supported"));
            }
            Ok(Geometry::Icosphere { level: level as u32 })
        }
        "torus_grid" => {
            arity(4)?;
            Ok(Geometry::TorusGrid {
                nx: int(args[0])?,
                ny: int(args[1])?,
                lx: real(args[2])?,
                ly: real(args[3])?,
            })
        }
        "off_file" => {
            arity(1)?;
            Ok(Geometry::OffFile {
                path: resolve(base, args[0]),
            })
        }
        "product_spheres" => {
            arity(4)?;
            Ok(Geometry::ProductSpheres {
                p: int(args[0])?,
                q: int(args[1])?,
                a0: real(args[2])?,
                b0: real(args[3])?,
            })
        }
        other => Err(parse_err(line, format!("unknown geometry {other:?}"))),
    }
}

/// Splits on `+` outside parentheses, leaving exponents like `1e+3` intact.
fn split_terms(s: &str) -> Vec<&str> {
    let bytes = s.as_bytes();
    let mut terms = Vec::new();
    let (mut depth, mut start) = (0i32, 0);
    for (i, &c) in bytes.iter().enumerate() {
        match c {
            b'(' => depth += 1,
            b')' => depth -= 1,
            b'+' if depth == 0 => {
                let exponent = i >= 2
                    && matches!(bytes[i - 1], b'e' | b'E')
                    && bytes[i - 2].is_ascii_digit();
                if !exponent {
                    terms.push(&s[start..i]);
                    start = i + 1;
                }
            }
            _ => {}
        }
    }
    terms.push(&s[start..]);
    terms
}

fn parse_perturbation(value: &str, line: usize, base: &Path) -> Result<Vec<Term>, ScenarioError> {
    if value.trim() == "none" {
        return Ok(Vec::new());
    }
    split_terms(value)
        .into_iter()
        .map(|term| {
            let (amplitude, field) = match term.split_once('*') {
                Some((a, f)) if !f.trim_start().starts_with("pi") => {
                    let a = parse_number(a)
                        .ok_or_else(|| parse_err(line, format!("bad amplitude {a:?}")))?;
                    (a, f.trim())
                }
                _ => (1.0, term.trim()),
            };
            let field = match field {
                "linear_x" => Field::Linear(0),
                "linear_y" => Field::Linear(1),
                "linear_z" => Field::Linear(2),
                "sin_x" => Field::SinX,
                "sin_y" => Field::SinY,
                "sin_x_sin_y" => Field::SinXSinY,
                _ => match call(field) {
                    Some(("cos_kx", args)) if args.len() == 1 => Field::CosKx(
                        parse_number(args[0]).ok_or_else(|| parse_err(line, "bad wavenumber"))?,
                    ),
                    Some(("cos_ky", args)) if args.len() == 1 => Field::CosKy(
                        parse_number(args[0]).ok_or_else(|| parse_err(line, "bad wavenumber"))?,
                    ),
                    Some(("file", args)) if args.len() == 1 => Field::File(resolve(base, args[0])),
                    _ => return Err(parse_err(line, format!("unknown perturbation field {field:?}"))),
                },
            };
            Ok(Term { amplitude, field })
        })
        .collect()
}

impl Scenario {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        Self::parse(&text, base, &stem)
    }

    /// Parses scenario text; `base` anchors relative paths and `default_id`
    /// names the scenario when no `id` key is given.
    pub fn parse(text: &str, base: &Path, default_id: &str) -> Result<Self, ScenarioError> {
        let mut entries: BTreeMap<&str, (usize, &str)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or_else(|| parse_err(line, "expected key = value"))?;
            let key = key.trim();
            let key = KEYS
                .iter()
                .find(|k| **k == key)
                .ok_or_else(|| parse_err(line, format!("unknown key {key:?}")))?;
            if entries.insert(key, (line, value.trim())).is_some() {
                return Err(parse_err(line, format!("duplicate key {key:?}")));
            }
        }
        let required = |key: &str| {
            entries
                .get(key)
                .copied()
                .ok_or_else(|| ScenarioError::Invalid(format!("missing required key {key:?}")))
        };
        let number = |key: &str, (line, v): (usize, &str)| {
            parse_number(v).ok_or_else(|| parse_err(line, format!("{key}: expected a number, got {v:?}")))
        };
        let count = |key: &str, default: usize| -> Result<usize, ScenarioError> {
            match entries.get(key) {
                None => Ok(default),
                Some(&(line, v)) => v
                    .parse()
                    .map_err(|_| parse_err(line, format!("{key}: expected an integer, got {v:?}"))),
            }
        };

        let (gline, gvalue) = required("geometry")?;
        let geometry = parse_geometry(gvalue, gline, base)?;
        let perturbation = match entries.get("perturbation") {
            Some(&(line, v)) => parse_perturbation(v, line, base)?,
            None => Vec::new(),
        };
        let t_end = number("T", required("T")?)?;
        let dt = number("dt", required("dt")?)?;
        let eig_tol = match entries.get("eig_tol") {
            Some(&entry) => number("eig_tol", entry)?,
            None => DEFAULT_TOL,
        };
        let rate_branch = count("rate_branch", 1)?;

        let scenario = Scenario {
            id: entries.get("id").map_or(default_id.to_string(), |e| e.1.to_string()),
            geometry,
            perturbation,
            t_end,
            dt,
            stride: count("stride", 1)?,
            k: count("k", 3)?,
            eig_tol,
            rate_branch: rate_branch.checked_sub(1).ok_or_else(|| {
                ScenarioError::Invalid("rate_branch counts from 1".into())
            })?,
            trace_path: entries.get("trace").map(|e| resolve(base, e.1)),
            report_path: entries.get("report").map(|e| resolve(base, e.1)),
        };
        scenario.validate()?;
        Ok(scenario)
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |m: &str| Err(ScenarioError::Invalid(m.into()));
        if !(self.t_end > 0.0) {
            return invalid("T must be positive");
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return invalid("dt must be positive and at most T");
        }
        if self.stride == 0 {
            return invalid("stride must be at least 1");
        }
        if self.k == 0 {
            return invalid("k must be at least 1");
        }
        if !(self.eig_tol > 0.0) {
            return invalid("eig_tol must be positive");
        }
        if !self.geometry.is_surface() && !self.perturbation.is_empty() {
            return invalid("product_spheres takes no perturbation");
        }
        Ok(())
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            scenario: self.id.clone(),
            geometry: self.geometry.label(),
            t_end: self.t_end,
            dt: self.dt,
            stride: self.stride,
            k: self.k,
            eig_tol: self.eig_tol,
        }
    }

    /// Evaluates the initial conformal factor at the mesh vertices.
    pub fn initial_factor(&self, mesh: &TriangleMesh) -> Result<Vec<f64>, ScenarioError> {
        let mut u = vec![0.0; mesh.num_vertices()];
        for term in &self.perturbation {
            let values: Vec<f64> = match &term.field {
                Field::File(path) => {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
                    let values = text
                        .split_whitespace()
                        .map(|s| s.parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|_| {
                            ScenarioError::Invalid(format!("{}: non-numeric value", path.display()))
                        })?;
                    if values.len() != u.len() {
                        return Err(ScenarioError::Invalid(format!(
                            "{}: {} values for {} vertices",
                            path.display(),
                            values.len(),
                            u.len()
                        )));
                    }
                    values
                }
                field => mesh
                    .vertices()
                    .iter()
                    .map(|p| match field {
                        Field::Linear(axis) => p[*axis],
                        Field::SinX => p[0].sin(),
                        Field::SinY => p[1].sin(),
                        Field::SinXSinY => p[0].sin() * p[1].sin(),
                        Field::CosKx(k) => (k * p[0]).cos(),
                        Field::CosKy(k) => (k * p[1]).cos(),
                        Field::File(_) => unreachable!(),
                    })
                    .collect(),
            };
            for (ui, v) in u.iter_mut().zip(values) {
                *ui += term.amplitude * v;
            }
        }
        Ok(u)
    }

    /// Mesh, operators and initial factor of a surface scenario.
    pub fn surface(&self) -> Result<(DiscreteOperators, Vec<f64>), ScenarioError> {
        let mesh = self.geometry.build_mesh()?;
        let u0 = self.initial_factor(&mesh)?;
        Ok((assemble_operators(&mesh), u0))
    }
}

#[derive(Debug, Error)]
pub enum SimulateError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Run(#[from] RunError),
}

/// Runs a scenario on its geometry: the conformal flow on a mesh or the radii
/// flow on a product of spheres.
pub fn simulate(scenario: &Scenario) -> Result<FlowTrace, SimulateError> {
    let config = scenario.flow_config();
    match scenario.geometry {
        Geometry::ProductSpheres { p, q, a0, b0 } => {
            let initial = ProductSphereState::new(p, q, a0, b0)
                .map_err(|e| ScenarioError::Invalid(e.to_string()))?;
            Ok(run_product(initial, &config)?)
        }
        _ => {
            let (ops, u0) = scenario.surface()?;
            Ok(run_with_operators(&ops, u0, &config)?)
        }
    }
}
