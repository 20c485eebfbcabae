//! Weighted eigenvalue quantities, monotonicity verdicts and the eigenvalue
//! rate check.
//!
//! Four quantities are formed per tracked branch `λ(t)`:
//!
//! | kind      | weight                                  | expected      |
//! |-----------|-----------------------------------------|---------------|
//! | `Q1plus`  | `exp ∫₀ᵗ [(2/n) r − φ]`                 | nondecreasing |
//! | `Q1minus` | `exp((2/n) σ(t) − ∫₀ᵗ ψ)`               | nonincreasing |
//! | `Q2plus`  | surface closed form started at ρ0       | nondecreasing |
//! | `Q2minus` | surface closed form started at δ0       | nonincreasing |
//!
//! The `Q1` kinds require their curvature hypothesis and are evaluated only
//! where it holds.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use thiserror::Error;

use crate::bounds::{BoundError, BoundsState, RSeries};
use crate::mesh::{area_and_mass, curvature, mean_from_parts, DiscreteOperators, MeshError};
use crate::spectrum::{EigenPair, SpectralSolver, SpectrumError};
use crate::surface_flow::{self, ConformalState, FlowConfig, FlowError};
use crate::trace::{FlagSpan, FlowTrace, WeightForm};

/// Values below this magnitude are compared absolutely.
pub const MAGNITUDE_FLOOR: f64 = 1e-8;
/// Largest relative gap between the finite-difference rate and the formula.
pub const RATE_GAP_TOL: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonotoneError {
    #[error("{kind} needs a dimension-{expected} surface trace, got n = {got}")]
    DimensionMismatch {
        kind: QuantityKind,
        expected: usize,
        got: usize,
    },
    #[error("the hypothesis for {kind} fails at t = 0; no verdict")]
    FlagNeverHolds { kind: QuantityKind },
    #[error("{kind} has {count} sample(s) in its valid interval; need at least 2")]
    TooFewSamples { kind: QuantityKind, count: usize },
    #[error("eigenvalue {value} is not simple (gap {gap:e}, residual {residual:e})")]
    DegenerateEigenvalue { value: f64, gap: f64, residual: f64 },
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum QuantityKind {
    Q1Plus,
    Q1Minus,
    Q2Plus,
    Q2Minus,
}

impl QuantityKind {
    pub const ALL: [QuantityKind; 4] = [
        QuantityKind::Q1Plus,
        QuantityKind::Q1Minus,
        QuantityKind::Q2Plus,
        QuantityKind::Q2Minus,
    ];

    pub fn direction(self) -> Direction {
        match self {
            QuantityKind::Q1Plus | QuantityKind::Q2Plus => Direction::Nondecreasing,
            QuantityKind::Q1Minus | QuantityKind::Q2Minus => Direction::Nonincreasing,
        }
    }

    fn is_plus(self) -> bool {
        matches!(self, QuantityKind::Q1Plus | QuantityKind::Q2Plus)
    }
}

impl fmt::Display for QuantityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuantityKind::Q1Plus => "Q1plus",
            QuantityKind::Q1Minus => "Q1minus",
            QuantityKind::Q2Plus => "Q2plus",
            QuantityKind::Q2Minus => "Q2minus",
        })
    }
}

impl FromStr for QuantityKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        QuantityKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown quantity {s:?} (expected Q1plus, Q1minus, Q2plus or Q2minus)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Nondecreasing,
    Nonincreasing,
}

impl Direction {
    pub fn opposite(self) -> Self {
        match self {
            Direction::Nondecreasing => Direction::Nonincreasing,
            Direction::Nonincreasing => Direction::Nondecreasing,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::Nondecreasing => "nondecreasing",
            Direction::Nonincreasing => "nonincreasing",
        })
    }
}

/// One weighted branch `weight(t)·λ_b(t)` over its valid interval.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantitySeries {
    pub kind: QuantityKind,
    /// Zero-based branch index.
    pub branch: usize,
    pub samples: Vec<(f64, f64)>,
}

impl QuantitySeries {
    /// `Q2plus_1` style identifier (branches count from 1).
    pub fn id(&self) -> String {
        format!("{}_{}", self.kind, self.branch + 1)
    }
}

fn flag_for(trace: &FlowTrace, kind: QuantityKind) -> FlagSpan {
    match kind {
        QuantityKind::Q1Plus => trace.meta.einstein_nonneg,
        QuantityKind::Q1Minus => trace.meta.ricci_pinched,
        // in two dimensions both weights hold unconditionally
        QuantityKind::Q2Plus | QuantityKind::Q2Minus => FlagSpan::Always,
    }
}

/// Per-branch weights for `kind` at every trace row (NaN past a horizon).
fn weights(trace: &FlowTrace, kind: QuantityKind) -> Result<Vec<f64>, MonotoneError> {
    let meta = &trace.meta;
    let general_columns = meta.weights == WeightForm::General;
    match kind {
        QuantityKind::Q2Plus | QuantityKind::Q2Minus => {
            if meta.n != 2 || general_columns {
                return Err(MonotoneError::DimensionMismatch {
                    kind,
                    expected: 2,
                    got: meta.n,
                });
            }
        }
        QuantityKind::Q1Plus | QuantityKind::Q1Minus if !general_columns => {
            let series = RSeries::new(
                trace.rows.iter().map(|r| r.t).collect(),
                trace.rows.iter().map(|r| r.r).collect(),
            )?;
            let state = BoundsState::new(meta.n, meta.rho0, meta.delta0, series)?;
            return Ok(if kind.is_plus() {
                state.weights_plus()
            } else {
                state.weights_minus()
            });
        }
        _ => {}
    }
    Ok(trace
        .rows
        .iter()
        .map(|r| if kind.is_plus() { r.w_plus } else { r.w_minus })
        .collect())
}

/// `weight(t)·λ_b(t)` for every tracked branch, restricted to the interval
/// where the weight is finite and the hypothesis for `kind` holds.
pub fn quantity_series(
    trace: &FlowTrace,
    kind: QuantityKind,
) -> Result<Vec<QuantitySeries>, MonotoneError> {
    let flag = flag_for(trace, kind);
    if flag == FlagSpan::Never {
        return Err(MonotoneError::FlagNeverHolds { kind });
    }
    let w = weights(trace, kind)?;
    let valid = trace
        .rows
        .iter()
        .zip(&w)
        .take_while(|(row, w)| w.is_finite() && flag.holds_at(row.t))
        .count();
    if valid < 2 {
        return Err(MonotoneError::TooFewSamples { kind, count: valid });
    }
    Ok((0..trace.k())
        .map(|b| QuantitySeries {
            kind,
            branch: b,
            samples: trace.rows[..valid]
                .iter()
                .zip(&w)
                .map(|(row, w)| (row.t, w * row.lambda[b]))
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonotoneReport {
    pub quantity: String,
    pub direction: Direction,
    pub tol: f64,
    /// Largest step against `direction`, relative to `max(|previous|, floor)`.
    pub max_violation: f64,
    pub pass: bool,
    pub t_end: f64,
    pub samples: Vec<(f64, f64)>,
}

/// Default allowance `1e−6 + 10h² + 10Δt` for a trace with mesh size `h`.
pub fn default_tolerance(h: f64, dt: f64) -> f64 {
    1e-6 + 10.0 * h * h + 10.0 * dt
}

pub fn verdict(
    quantity: impl Into<String>,
    samples: &[(f64, f64)],
    direction: Direction,
    tol: f64,
) -> Result<MonotoneReport, MonotoneError> {
    if samples.len() < 2 {
        return Err(MonotoneError::InvalidInput(
            "a verdict needs at least two samples".into(),
        ));
    }
    let max_violation = samples
        .windows(2)
        .map(|w| {
            let (prev, next) = (w[0].1, w[1].1);
            let against = match direction {
                Direction::Nondecreasing => prev - next,
                Direction::Nonincreasing => next - prev,
            };
            against / prev.abs().max(MAGNITUDE_FLOOR)
        })
        .fold(0.0f64, f64::max);
    Ok(MonotoneReport {
        quantity: quantity.into(),
        direction,
        tol,
        max_violation,
        pass: max_violation <= tol,
        t_end: samples.last().unwrap().0,
        samples: samples.to_vec(),
    })
}

/// The outcome for one requested quantity kind.
#[derive(Debug, Clone, PartialEq)]
pub enum KindOutcome {
    Reports(Vec<MonotoneReport>),
    /// No verdict: the hypothesis fails at `t = 0`, the kind does not apply
    /// to this trace, or its valid interval holds fewer than two samples.
    Skipped(MonotoneError),
}

/// Verdicts for every branch of `kind` in its expected direction. For the χ = 0
/// `Q2minus` quantity `(1 − δ0 t) λ(t)` the opposite direction is reported
/// too, marked by its direction.
pub fn check_quantity(
    trace: &FlowTrace,
    kind: QuantityKind,
    tol: f64,
) -> Result<KindOutcome, MonotoneError> {
    let series = match quantity_series(trace, kind) {
        Ok(series) => series,
        Err(
            e @ (MonotoneError::FlagNeverHolds { .. }
            | MonotoneError::DimensionMismatch { .. }
            | MonotoneError::TooFewSamples { .. }),
        ) => return Ok(KindOutcome::Skipped(e)),
        Err(e) => return Err(e),
    };
    let both_ways = kind == QuantityKind::Q2Minus && trace.meta.chi == Some(0);
    let mut reports = Vec::new();
    for s in &series {
        reports.push(verdict(s.id(), &s.samples, kind.direction(), tol)?);
        if both_ways {
            reports.push(verdict(s.id(), &s.samples, kind.direction().opposite(), tol)?);
        }
    }
    Ok(KindOutcome::Reports(reports))
}

/// True for reports in a quantity's expected direction; the alternate χ = 0
/// reading is informational.
pub fn is_primary(report: &MonotoneReport) -> bool {
    let kind = report
        .quantity
        .split('_')
        .next()
        .and_then(|k| k.parse::<QuantityKind>().ok());
    kind.is_none_or(|k| k.direction() == report.direction)
}

pub fn reports_csv(reports: &[MonotoneReport]) -> String {
    let mut out = String::from("quantity,direction,tol,max_violation,verdict,t_end\n");
    for r in reports {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.quantity,
            r.direction,
            r.tol,
            r.max_violation,
            if r.pass { "pass" } else { "fail" },
            r.t_end
        )
        .unwrap();
    }
    out
}

pub fn summary(outcomes: &[(QuantityKind, KindOutcome)]) -> String {
    let mut out = String::new();
    for (kind, outcome) in outcomes {
        match outcome {
            KindOutcome::Skipped(e) => writeln!(out, "{kind}: skipped ({e})").unwrap(),
            KindOutcome::Reports(reports) => {
                for r in reports {
                    let note = if is_primary(r) { "" } else { " [alternate reading, informational]" };
                    writeln!(
                        out,
                        "{} {} on [0, {}]: max violation {:.3e} vs tol {:.3e} -> {}{note}",
                        r.quantity,
                        r.direction,
                        r.t_end,
                        r.max_violation,
                        r.tol,
                        if r.pass { "PASS" } else { "FAIL" },
                    )
                    .unwrap();
                }
            }
        }
    }
    out
}

/// Gap below which two eigenvalues are treated as one repeated value.
pub fn degeneracy_threshold(pair: &EigenPair) -> f64 {
    (10.0 * pair.residual).max(1e-9 * pair.value.abs())
}

/// `dλ/dt = λ Σ (R_i − r) v_i² m_i / Σ v_i² m_i` for the surface flow, with
/// `m_i = A_i e^{2u_i}`. `pairs` must contain the neighbours of `pairs[index]`
/// so the gap can be checked; the constant mode below `λ₁` is implied.
pub fn eigen_rate_rhs(
    ops: &DiscreteOperators,
    state: &ConformalState,
    pairs: &[EigenPair],
    index: usize,
) -> Result<f64, MonotoneError> {
    let pair = pairs
        .get(index)
        .ok_or_else(|| MonotoneError::InvalidInput(format!("no eigenpair at index {index}")))?;
    if index + 1 >= pairs.len() {
        return Err(MonotoneError::InvalidInput(
            "the pair above the checked one is needed to confirm a spectral gap".into(),
        ));
    }
    let gap = pairs
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != index)
        .map(|(_, p)| (p.value - pair.value).abs())
        .fold(pair.value.abs(), f64::min);
    if gap <= degeneracy_threshold(pair) {
        return Err(MonotoneError::DegenerateEigenvalue {
            value: pair.value,
            gap,
            residual: pair.residual,
        });
    }
    rate_formula(ops, state, pair)
}

/// The rate formula without the gap check.
fn rate_formula(
    ops: &DiscreteOperators,
    state: &ConformalState,
    pair: &EigenPair,
) -> Result<f64, MonotoneError> {
    let r_vertex = curvature(ops, &state.u)?;
    let (area, mass) = area_and_mass(ops, &state.u)?;
    let r = mean_from_parts(ops, &r_vertex, &mass, area);
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..mass.len() {
        let w = pair.vector[i] * pair.vector[i] * mass[i];
        num += (r_vertex[i] - r) * w;
        den += w;
    }
    Ok(pair.value * num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateRow {
    pub t: f64,
    pub finite_difference: f64,
    pub formula: f64,
    pub relative_gap: f64,
    /// Why the row was not compared, if it was not.
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    /// Zero-based branch checked.
    pub branch: usize,
    pub rows: Vec<RateRow>,
    pub max_gap: f64,
    pub pass: bool,
}

impl RateReport {
    pub fn compared(&self) -> usize {
        self.rows.iter().filter(|r| r.skipped.is_none()).count()
    }

    pub fn to_table(&self) -> String {
        let mut out = String::from("t,fd_rate,formula_rate,relative_gap,status\n");
        for r in &self.rows {
            let status = r.skipped.as_deref().map_or("ok".to_string(), |s| format!("skipped: {s}"));
            writeln!(
                out,
                "{},{},{},{},{}",
                r.t, r.finite_difference, r.formula, r.relative_gap, status
            )
            .unwrap();
        }
        out
    }
}

/// Compares the centred difference `[λ(t+Δt) − λ(t−Δt)] / 2Δt` of a tracked
/// branch with [`eigen_rate_rhs`] at every `stride`-th interior step.
pub fn rate_check(
    ops: &DiscreteOperators,
    u0: Vec<f64>,
    config: &FlowConfig,
    branch: usize,
) -> Result<RateReport, MonotoneError> {
    config.validate()?;
    let k = config.k.max(branch + 2);
    let solver = SpectralSolver::new(&ops.stiffness)?;
    let steps = config.num_steps();
    let dt = config.dt;
    let mass_at = |u: &[f64]| area_and_mass(ops, u).map(|(_, m)| m);

    let mut previous = ConformalState::new(u0);
    let mut current = surface_flow::step(ops, &previous, dt)?;
    let mut tracked = solver.smallest_eigenpairs(&mass_at(&previous.u)?, k, config.eig_tol)?;
    let mut rows = Vec::new();

    for i in 1..steps {
        let next = surface_flow::step(ops, &current, dt)?;
        if i % config.stride == 0 || i == steps - 1 {
            let t = i as f64 * dt;
            tracked = solver
                .track_eigenpairs(&tracked, &mass_at(&current.u)?, k, config.eig_tol)?
                .in_branch_order();
            let branch_value = |u: &[f64]| -> Result<f64, MonotoneError> {
                let step = solver.track_eigenpairs(&tracked, &mass_at(u)?, k, config.eig_tol)?;
                Ok(step.pairs[step.matching[branch]].value)
            };
            let fd = (branch_value(&next.u)? - branch_value(&previous.u)?) / (2.0 * dt);
            let row = match eigen_rate_rhs(ops, &current, &tracked, branch) {
                Ok(formula) => RateRow {
                    t,
                    finite_difference: fd,
                    formula,
                    relative_gap: (fd - formula).abs() / fd.abs().max(MAGNITUDE_FLOOR),
                    skipped: None,
                },
                Err(e @ MonotoneError::DegenerateEigenvalue { .. }) => RateRow {
                    t,
                    finite_difference: fd,
                    formula: rate_formula(ops, &current, &tracked[branch])?,
                    relative_gap: f64::NAN,
                    skipped: Some(e.to_string()),
                },
                Err(e) => return Err(e),
            };
            rows.push(row);
        }
        previous = std::mem::replace(&mut current, next);
    }
    let max_gap = rows
        .iter()
        .filter(|r| r.skipped.is_none())
        .map(|r| r.relative_gap)
        .fold(0.0f64, f64::max);
    Ok(RateReport {
        branch,
        pass: max_gap <= RATE_GAP_TOL,
        max_gap,
        rows,
    })
}
