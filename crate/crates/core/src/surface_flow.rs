//! The normalized flow on a closed surface in conformal-factor form.
//!
//! In two dimensions `Rc = ½Rg`, so `∂g/∂t = −2Rc + r g` keeps `g = e^{2u} g0`
//! in its conformal class and reduces to `∂u/∂t = (r − R)/2` per vertex. The
//! stiffness matrix is conformally invariant, so only the lumped mass changes
//! along a run.

use thiserror::Error;

use crate::bounds::{self, BoundError, BoundsState, RSeries};
use crate::mesh::{
    area_and_mass, curvature, mean_from_parts, DiscreteOperators, MeshError, TriangleMesh,
};
use crate::spectrum::{EigenPair, SpectralSolver, SpectrumError};
use crate::trace::{FlagSpan, FlowTrace, TraceMeta, TraceRow, WeightForm};

/// A step whose largest displacement `max|du/dt|·Δt` exceeds this is refused.
pub const MAX_STEP_DISPLACEMENT: f64 = 0.1;
/// Relative area drift allowed at any sample.
pub const AREA_TOL: f64 = 1e-6;
/// Drift of `r` allowed at any sample, times `max(1, |r0|)`.
pub const R_TOL: f64 = 1e-6;
/// Rounding allowance in the `R ≥ 0` hypothesis check, relative to `max(1, |maxR|)`.
pub const FLAG_SLACK: f64 = 1e-10;
/// Classical RK4 is stable for `Δt·μ ≤ 2.785` on a real negative eigenvalue `−μ`.
const RK4_REAL_AXIS_LIMIT: f64 = 2.78;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Spectrum(#[from] SpectrumError),
    #[error(transparent)]
    Bound(#[from] BoundError),
    #[error("step rejected at t = {t}: max|du/dt|·Δt = {displacement} exceeds {MAX_STEP_DISPLACEMENT}; reduce Δt")]
    StepRejected { t: f64, displacement: f64 },
    #[error("Δt = {dt} exceeds the explicit stability limit {limit} at t = {t}")]
    UnstableTimeStep { t: f64, dt: f64, limit: f64 },
    #[error("{quantity} drifted by {drift:e} at t = {t}")]
    ConservationViolated {
        t: f64,
        quantity: &'static str,
        drift: f64,
    },
    #[error("invalid flow configuration: {0}")]
    InvalidConfig(String),
}

/// A failed run: the error plus every sample recorded before it.
#[derive(Debug, Error)]
#[error("flow aborted at t = {t}: {error}")]
pub struct RunError {
    pub t: f64,
    #[source]
    pub error: FlowError,
    pub partial: Option<Box<FlowTrace>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConformalState {
    pub u: Vec<f64>,
    pub t: f64,
}

impl ConformalState {
    pub fn new(u: Vec<f64>) -> Self {
        Self { u, t: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    pub scenario: String,
    pub geometry: String,
    pub t_end: f64,
    pub dt: f64,
    /// Record every `stride`-th step (the last step is always recorded).
    pub stride: usize,
    /// Tracked eigenvalue branches.
    pub k: usize,
    pub eig_tol: f64,
}

impl FlowConfig {
    pub fn validate(&self) -> Result<(), FlowError> {
        let bad = |m: &str| Err(FlowError::InvalidConfig(m.into()));
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return bad("T must be positive");
        }
        if !(self.dt > 0.0 && self.dt <= self.t_end) {
            return bad("dt must be positive and at most T");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if !(self.eig_tol > 0.0) {
            return bad("eigen tolerance must be positive");
        }
        Ok(())
    }

    pub fn num_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// `du/dt = (r − R)/2`.
pub fn flow_rhs(ops: &DiscreteOperators, u: &[f64]) -> Result<Vec<f64>, MeshError> {
    let r_vertex = curvature(ops, u)?;
    let (area, mass) = area_and_mass(ops, u)?;
    let r = mean_from_parts(ops, &r_vertex, &mass, area);
    Ok(r_vertex.iter().map(|ri| 0.5 * (r - ri)).collect())
}

fn axpy(u: &[f64], a: f64, k: &[f64]) -> Vec<f64> {
    u.iter().zip(k).map(|(x, y)| x + a * y).collect()
}

/// One classical RK4 step of size `dt`.
pub fn step(
    ops: &DiscreteOperators,
    state: &ConformalState,
    dt: f64,
) -> Result<ConformalState, FlowError> {
    let k1 = flow_rhs(ops, &state.u)?;
    let displacement = k1.iter().fold(0.0f64, |m, x| m.max(x.abs())) * dt;
    if displacement > MAX_STEP_DISPLACEMENT {
        return Err(FlowError::StepRejected {
            t: state.t,
            displacement,
        });
    }
    let k2 = flow_rhs(ops, &axpy(&state.u, 0.5 * dt, &k1))?;
    let k3 = flow_rhs(ops, &axpy(&state.u, 0.5 * dt, &k2))?;
    let k4 = flow_rhs(ops, &axpy(&state.u, dt, &k3))?;
    let u = (0..state.u.len())
        .map(|i| state.u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    Ok(ConformalState {
        u,
        t: state.t + dt,
    })
}

/// Largest eigenvalue of `A⁻¹S` for the base mass, by power iteration.
pub fn max_base_frequency(ops: &DiscreteOperators) -> f64 {
    let n = ops.num_vertices();
    let a = &ops.base_mass;
    let mut x: Vec<f64> = (0..n).map(|i| (1.3 * i as f64).sin() + 0.1).collect();
    let mut estimate = 0.0;
    for _ in 0..2000 {
        let sx = ops.stiffness.mul_vec(&x);
        let y: Vec<f64> = sx.iter().zip(a).map(|(s, m)| s / m).collect();
        // Rayleigh quotient in the A inner product
        let num: f64 = x.iter().zip(&sx).map(|(xi, si)| xi * si).sum();
        let den: f64 = x.iter().zip(a).map(|(xi, m)| xi * xi * m).sum();
        let next = num / den;
        let norm = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if norm == 0.0 {
            return 0.0;
        }
        x = y.into_iter().map(|v| v / norm).collect();
        if (next - estimate).abs() <= 1e-6 * next.abs() {
            return next;
        }
        estimate = next;
    }
    estimate
}

/// Largest stable RK4 step for the linearized flow at `u`.
pub fn stable_dt_limit(base_frequency: f64, u: &[f64]) -> f64 {
    let max_contraction = u.iter().fold(0.0f64, |m, x| m.max((-2.0 * x).exp()));
    // the power iterate slightly underestimates λ_max
    RK4_REAL_AXIS_LIMIT / (1.02 * base_frequency * max_contraction)
}

/// Per-vertex quantities of one sample.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub r: f64,
    pub min_r: f64,
    pub max_r: f64,
    pub area: f64,
    pub mass: Vec<f64>,
    pub curvature: Vec<f64>,
}

pub fn snapshot(ops: &DiscreteOperators, u: &[f64]) -> Result<Snapshot, MeshError> {
    let curvature = curvature(ops, u)?;
    let (area, mass) = area_and_mass(ops, u)?;
    let r = mean_from_parts(ops, &curvature, &mass, area);
    let min_r = curvature.iter().copied().fold(f64::INFINITY, f64::min);
    let max_r = curvature.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(Snapshot {
        r,
        min_r,
        max_r,
        area,
        mass,
        curvature,
    })
}

struct Sample {
    t: f64,
    snap: Snapshot,
    lambda: Vec<f64>,
}

/// Integrates from `u0` to `config.t_end`, recording a trace every `stride` steps.
pub fn run(mesh: &TriangleMesh, u0: Vec<f64>, config: &FlowConfig) -> Result<FlowTrace, RunError> {
    let ops = crate::mesh::assemble_operators(mesh);
    run_with_operators(&ops, u0, config)
}

pub fn run_with_operators(
    ops: &DiscreteOperators,
    u0: Vec<f64>,
    config: &FlowConfig,
) -> Result<FlowTrace, RunError> {
    let abort = |t: f64, error: FlowError| RunError {
        t,
        error,
        partial: None,
    };
    config.validate().map_err(|e| abort(0.0, e))?;
    if u0.len() != ops.num_vertices() {
        return Err(abort(
            0.0,
            FlowError::InvalidConfig(format!(
                "initial factor has {} entries for {} vertices",
                u0.len(),
                ops.num_vertices()
            )),
        ));
    }
    let solver = SpectralSolver::new(&ops.stiffness).map_err(|e| abort(0.0, e.into()))?;
    let base_frequency = max_base_frequency(ops);

    let mut samples: Vec<Sample> = Vec::new();
    let mut ambiguities = 0;
    let mut state = ConformalState::new(u0);
    let mut pairs: Vec<EigenPair> = Vec::new();
    let steps = config.num_steps();

    let result = (|| -> Result<(), FlowError> {
        let mut reference: Option<(f64, f64)> = None;
        for i in 0..=steps {
            if i % config.stride == 0 || i == steps {
                let snap = snapshot(ops, &state.u)?;
                let (area0, r0) = *reference.get_or_insert((snap.area, snap.r));
                let area_drift = (snap.area - area0).abs() / area0;
                if area_drift > AREA_TOL {
                    return Err(FlowError::ConservationViolated {
                        t: state.t,
                        quantity: "area",
                        drift: area_drift,
                    });
                }
                let r_drift = (snap.r - r0).abs();
                if r_drift > R_TOL * r0.abs().max(1.0) {
                    return Err(FlowError::ConservationViolated {
                        t: state.t,
                        quantity: "r",
                        drift: r_drift,
                    });
                }
                pairs = if pairs.is_empty() {
                    solver.smallest_eigenpairs(&snap.mass, config.k, config.eig_tol)?
                } else {
                    let tracked =
                        solver.track_eigenpairs(&pairs, &snap.mass, config.k, config.eig_tol)?;
                    if !tracked.ambiguities.is_empty() {
                        ambiguities += 1;
                    }
                    tracked.in_branch_order()
                };
                samples.push(Sample {
                    t: state.t,
                    snap,
                    lambda: pairs.iter().map(|p| p.value).collect(),
                });
            }
            if i == steps {
                break;
            }
            let limit = stable_dt_limit(base_frequency, &state.u);
            if config.dt > limit {
                return Err(FlowError::UnstableTimeStep {
                    t: state.t,
                    dt: config.dt,
                    limit,
                });
            }
            let next = step(ops, &state, config.dt)?;
            // exact multiples of Δt keep sample times reproducible
            state = ConformalState {
                u: next.u,
                t: (i + 1) as f64 * config.dt,
            };
        }
        Ok(())
    })();

    let build = |samples: &[Sample], truncated: Option<String>| {
        build_surface_trace(ops, config, samples, ambiguities, truncated)
    };
    match result {
        Ok(()) => build(&samples, None).map_err(|e| abort(state.t, e)),
        Err(error) => {
            let partial = if samples.is_empty() {
                None
            } else {
                build(&samples, Some(error.to_string())).ok().map(Box::new)
            };
            Err(RunError {
                t: state.t,
                error,
                partial,
            })
        }
    }
}

fn build_surface_trace(
    ops: &DiscreteOperators,
    config: &FlowConfig,
    samples: &[Sample],
    branch_ambiguities: usize,
    truncated: Option<String>,
) -> Result<FlowTrace, FlowError> {
    let first = &samples[0].snap;
    let (rho0, delta0, r0) = (first.min_r, first.max_r, first.r);
    let chi = ops.euler_characteristic;
    let chi_zero = chi == 0;
    let times: Vec<f64> = samples.iter().map(|s| s.t).collect();
    let series = RSeries::new(times.clone(), samples.iter().map(|s| s.snap.r).collect())?;
    let general = BoundsState::new(2, rho0, delta0, series)?;
    // χ = 0 forces r0 = 0 exactly; rounding leaves ~1e-15
    let r0_closed = if chi_zero { 0.0 } else { r0 };

    let phi_blowup = bounds::blowup_2d(rho0, r0_closed, chi_zero);
    let psi_blowup = bounds::blowup_2d(delta0, r0_closed, chi_zero);
    let before = |horizon: Option<f64>, t: f64| horizon.is_none_or(|h| t < h);
    let nan_unless = |ok: bool, v: Result<f64, BoundError>| -> Result<f64, BoundError> {
        if ok {
            v
        } else {
            Ok(f64::NAN)
        }
    };

    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let t = s.t;
        let lower_ok = before(phi_blowup, t);
        let upper_ok = before(psi_blowup, t);
        let phi = nan_unless(lower_ok, bounds::phi_2d(rho0, r0_closed, chi_zero, t))?;
        let psi = nan_unless(upper_ok, bounds::psi_2d(delta0, r0_closed, chi_zero, t))?;
        let w_plus = nan_unless(lower_ok, bounds::weight_2d_plus(rho0, r0_closed, chi_zero, t))?;
        let w_minus =
            nan_unless(upper_ok, bounds::weight_2d_minus(delta0, r0_closed, chi_zero, t))?;
        rows.push(TraceRow {
            t,
            r: s.snap.r,
            min_r: s.snap.min_r,
            max_r: s.snap.max_r,
            area: s.snap.area,
            sigma: general.sigma[i],
            phi,
            psi,
            w_plus,
            w_minus,
            q_plus: s.lambda.iter().map(|l| w_plus * l).collect(),
            q_minus: s.lambda.iter().map(|l| w_minus * l).collect(),
            lambda: s.lambda.clone(),
        });
    }

    let nonneg: Vec<bool> = samples
        .iter()
        .map(|s| s.snap.min_r >= -FLAG_SLACK * s.snap.max_r.abs().max(1.0))
        .collect();
    let meta = TraceMeta {
        scenario: config.scenario.clone(),
        geometry: config.geometry.clone(),
        n: 2,
        chi: Some(chi),
        rho0,
        delta0,
        r0,
        h: ops.h,
        dt: config.dt,
        t_requested: config.t_end,
        weights: WeightForm::Surface,
        phi_blowup,
        psi_blowup,
        // the Einstein tensor of a surface vanishes identically
        einstein_nonneg: FlagSpan::Always,
        ricci_pinched: FlagSpan::from_samples(&times, &nonneg),
        truncated,
        branch_ambiguities,
        branch_labels: None,
    };
    Ok(FlowTrace { meta, rows })
}
