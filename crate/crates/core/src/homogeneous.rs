//! The normalized flow on `S^p(a) × S^q(b)` with product metric.
//!
//! Each factor stays round, so the flow reduces to the radii:
//! `d(a²)/dt = −2(p−1) + (2r/n) a²` and likewise for `b`, with
//! `r = R = p(p−1)/a² + q(q−1)/b²`. The Ricci tensor has eigenvalue
//! `(p−1)/a²` on the first factor and `(q−1)/b²` on the second, and the
//! Laplacian spectrum is `l(l+p−1)/a² + m(m+q−1)/b²`.

use std::f64::consts::PI;

use crate::bounds::{BoundsState, RSeries};
use crate::surface_flow::{FlowConfig, FlowError, RunError};
use crate::trace::{FlagSpan, FlowTrace, TraceMeta, TraceRow, WeightForm};

/// Relative volume drift allowed at any sample.
pub const VOLUME_TOL: f64 = 1e-8;
/// A run stops (truncated, not failed) once `Δt·max(|a'/a|, |b'/b|)` exceeds this.
pub const COLLAPSE_DISPLACEMENT: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductSphereState {
    pub p: usize,
    pub q: usize,
    pub a: f64,
    pub b: f64,
    pub t: f64,
}

/// Volume of the unit `m`-sphere, `2π^{(m+1)/2} / Γ((m+1)/2)`.
pub fn unit_sphere_volume(m: usize) -> f64 {
    // Γ(k/2) from Γ(1/2) = √π and Γ(1) = 1
    let k = m + 1;
    let mut gamma = if k.is_multiple_of(2) { 1.0 } else { PI.sqrt() };
    let mut x = if k.is_multiple_of(2) { 1.0 } else { 0.5 };
    while x < k as f64 / 2.0 {
        gamma *= x;
        x += 1.0;
    }
    2.0 * PI.powf(k as f64 / 2.0) / gamma
}

impl ProductSphereState {
    pub fn new(p: usize, q: usize, a: f64, b: f64) -> Result<Self, FlowError> {
        if p < 1 || q < 2 {
            return Err(FlowError::InvalidConfig(format!(
                "need p ≥ 1 and q ≥ 2, got p = {p}, q = {q}"
            )));
        }
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(FlowError::InvalidConfig(format!(
                "radii must be positive, got a = {a}, b = {b}"
            )));
        }
        Ok(Self { p, q, a, b, t: 0.0 })
    }

    pub fn n(&self) -> usize {
        self.p + self.q
    }

    /// Ricci eigenvalues on the two factors.
    pub fn ricci(&self) -> (f64, f64) {
        (
            (self.p as f64 - 1.0) / (self.a * self.a),
            (self.q as f64 - 1.0) / (self.b * self.b),
        )
    }

    pub fn scalar_curvature(&self) -> f64 {
        let (ra, rb) = self.ricci();
        self.p as f64 * ra + self.q as f64 * rb
    }

    pub fn volume(&self) -> f64 {
        unit_sphere_volume(self.p)
            * self.a.powi(self.p as i32)
            * unit_sphere_volume(self.q)
            * self.b.powi(self.q as i32)
    }
}

/// `(da/dt, db/dt)`.
pub fn product_rhs(state: &ProductSphereState) -> (f64, f64) {
    product_rhs_at(state, state.a, state.b)
}

fn product_rhs_at(state: &ProductSphereState, a: f64, b: f64) -> (f64, f64) {
    let (p, q) = (state.p as f64, state.q as f64);
    let r = p * (p - 1.0) / (a * a) + q * (q - 1.0) / (b * b);
    let scale = r / state.n() as f64;
    ((-(p - 1.0) + scale * a * a) / a, (-(q - 1.0) + scale * b * b) / b)
}

fn rk4(state: &ProductSphereState, dt: f64) -> ProductSphereState {
    let (a, b) = (state.a, state.b);
    let k1 = product_rhs_at(state, a, b);
    let k2 = product_rhs_at(state, a + 0.5 * dt * k1.0, b + 0.5 * dt * k1.1);
    let k3 = product_rhs_at(state, a + 0.5 * dt * k2.0, b + 0.5 * dt * k2.1);
    let k4 = product_rhs_at(state, a + dt * k3.0, b + dt * k3.1);
    ProductSphereState {
        a: a + dt / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0),
        b: b + dt / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1),
        t: state.t + dt,
        ..*state
    }
}

/// A Laplacian eigenvalue `l(l+p−1)/a² + m(m+q−1)/b²` with its mode numbers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductMode {
    pub l: usize,
    pub m: usize,
    pub value: f64,
}

impl ProductMode {
    pub fn value_at(&self, state: &ProductSphereState) -> f64 {
        mode_value(state, self.l, self.m)
    }
}

fn mode_value(state: &ProductSphereState, l: usize, m: usize) -> f64 {
    let (l, m) = (l as f64, m as f64);
    l * (l + state.p as f64 - 1.0) / (state.a * state.a)
        + m * (m + state.q as f64 - 1.0) / (state.b * state.b)
}

/// The `k` smallest distinct nonzero eigenvalues, each with the first
/// `(l, m)` (in lexicographic order) attaining it.
pub fn product_modes(state: &ProductSphereState, k: usize) -> Vec<ProductMode> {
    // the modes (1,0), ..., (k,0) alone give k distinct values, so l, m ≤ k
    let mut modes: Vec<ProductMode> = (0..=k)
        .flat_map(|l| (0..=k).map(move |m| (l, m)))
        .filter(|&(l, m)| (l, m) != (0, 0))
        .map(|(l, m)| ProductMode {
            l,
            m,
            value: mode_value(state, l, m),
        })
        .collect();
    modes.sort_by(|x, y| x.value.total_cmp(&y.value).then((x.l, x.m).cmp(&(y.l, y.m))));
    modes.dedup_by(|later, kept| (later.value - kept.value).abs() <= 1e-12 * kept.value);
    modes.truncate(k);
    modes
}

pub fn product_spectrum(state: &ProductSphereState, k: usize) -> Vec<f64> {
    product_modes(state, k).iter().map(|m| m.value).collect()
}

/// Hypotheses for the `+` and `−` quantities: `Rc − ½Rg ≥ 0` and
/// `0 ≤ Rc ≤ ½Rg`. Equality counts as satisfied.
pub fn condition_flags(state: &ProductSphereState) -> (bool, bool) {
    let (ra, rb) = state.ricci();
    let half = 0.5 * state.scalar_curvature();
    let slack = 1e-12 * half.abs();
    let plus = ra >= half - slack && rb >= half - slack;
    let minus = [ra, rb].iter().all(|&x| x >= -slack && x <= half + slack);
    (plus, minus)
}

/// Integrates the radii with RK4 and records bounds, weights and the
/// closed-form eigenvalue branches every `stride` steps.
///
/// The branches are the `k` lowest distinct modes at `t = 0`, followed by
/// their `(l, m)` labels. The run stops early, recording why, if a radius
/// collapses.
pub fn run_product(initial: ProductSphereState, config: &FlowConfig) -> Result<FlowTrace, RunError> {
    let abort = |t: f64, error: FlowError| RunError {
        t,
        error,
        partial: None,
    };
    config.validate().map_err(|e| abort(0.0, e))?;
    ProductSphereState::new(initial.p, initial.q, initial.a, initial.b)
        .map_err(|e| abort(0.0, e))?;

    let modes = product_modes(&initial, config.k);
    let volume0 = initial.volume();
    let steps = config.num_steps();
    let mut states = Vec::new();
    let mut state = ProductSphereState { t: 0.0, ..initial };
    let mut truncated = None;
    let mut failure = None;

    for i in 0..=steps {
        if i % config.stride == 0 || i == steps {
            let drift = (state.volume() - volume0).abs() / volume0;
            if !(drift <= VOLUME_TOL) {
                failure = Some(FlowError::ConservationViolated {
                    t: state.t,
                    quantity: "volume",
                    drift,
                });
                break;
            }
            states.push(state);
        }
        if i == steps {
            break;
        }
        let (da, db) = product_rhs(&state);
        let displacement = config.dt * (da / state.a).abs().max((db / state.b).abs());
        if displacement > COLLAPSE_DISPLACEMENT {
            truncated = Some(format!(
                "radius collapse: relative step {displacement:.3e} at t = {}",
                state.t
            ));
            if states.last().map(|s| s.t) != Some(state.t) {
                states.push(state);
            }
            break;
        }
        let next = rk4(&state, config.dt);
        state = ProductSphereState {
            t: (i + 1) as f64 * config.dt,
            ..next
        };
    }

    let trace = build_product_trace(&initial, config, &modes, &states, truncated);
    match (failure, trace) {
        (None, Ok(trace)) => Ok(trace),
        (None, Err(e)) => Err(abort(state.t, e)),
        (Some(error), trace) => Err(RunError {
            t: state.t,
            error,
            partial: trace.ok().map(Box::new),
        }),
    }
}

fn build_product_trace(
    initial: &ProductSphereState,
    config: &FlowConfig,
    modes: &[ProductMode],
    states: &[ProductSphereState],
    truncated: Option<String>,
) -> Result<FlowTrace, FlowError> {
    let n = initial.n();
    let times: Vec<f64> = states.iter().map(|s| s.t).collect();
    let r: Vec<f64> = states.iter().map(|s| s.scalar_curvature()).collect();
    let r0 = r[0];
    let bounds = BoundsState::new(n, r0, r0, RSeries::new(times.clone(), r.clone())?)?;
    let w_plus = bounds.weights_plus();
    let w_minus = bounds.weights_minus();

    let rows = states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let lambda: Vec<f64> = modes.iter().map(|m| m.value_at(s)).collect();
            TraceRow {
                t: s.t,
                r: r[i],
                min_r: r[i],
                max_r: r[i],
                area: s.volume(),
                sigma: bounds.sigma[i],
                phi: bounds.phi[i],
                psi: bounds.psi[i],
                w_plus: w_plus[i],
                w_minus: w_minus[i],
                q_plus: lambda.iter().map(|l| w_plus[i] * l).collect(),
                q_minus: lambda.iter().map(|l| w_minus[i] * l).collect(),
                lambda,
            }
        })
        .collect();

    let flags: Vec<(bool, bool)> = states.iter().map(condition_flags).collect();
    let plus: Vec<bool> = flags.iter().map(|f| f.0).collect();
    let minus: Vec<bool> = flags.iter().map(|f| f.1).collect();
    let labels = modes
        .iter()
        .map(|m| format!("({},{})", m.l, m.m))
        .collect::<Vec<_>>()
        .join(" ");
    let meta = TraceMeta {
        scenario: config.scenario.clone(),
        geometry: format!("product_spheres({},{})", initial.p, initial.q),
        n,
        chi: None,
        rho0: r0,
        delta0: r0,
        r0,
        h: 0.0,
        dt: config.dt,
        t_requested: config.t_end,
        weights: WeightForm::General,
        phi_blowup: bounds.phi_blowup,
        psi_blowup: bounds.psi_blowup,
        einstein_nonneg: FlagSpan::from_samples(&times, &plus),
        ricci_pinched: FlagSpan::from_samples(&times, &minus),
        truncated,
        branch_ambiguities: 0,
        branch_labels: Some(labels),
    };
    Ok(FlowTrace { meta, rows })
}
