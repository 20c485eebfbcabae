//! Scalar-curvature bounds along the normalized flow and the integrating
//! factors built from them.
//!
//! With `σ(t) = ∫₀ᵗ r` and `J(t) = ∫₀ᵗ e^{−(2/n)σ}`, the lower bound solving
//! `φ' = (2/n) φ (φ − r)`, `φ(0) = ρ0` is
//!
//! ```text
//! φ(t) = e^{−(2/n)σ} / D(t),   D(t) = 1/ρ0 − (2/n) J(t)
//! ```
//!
//! and the upper bound solving `ψ' = 2ψ (ψ − r/n)`, `ψ(0) = δ0` is the same
//! expression with `D(t) = 1/δ0 − 2 J(t)`. Since `D' = −c e^{−(2/n)σ}` for the
//! inner coefficient `c`, the bound integrates in closed form:
//! `∫₀ᵗ bound = −ln(initial · D(t)) / c`. The weights therefore need no
//! quadrature beyond `σ` and `J`.
//!
//! `r(t)` is known at samples and modelled as piecewise linear, so `σ` is the
//! trapezoid rule on the samples (exact for that model) and `J` is integrated
//! per interval with Gauss-Legendre.

use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BoundError {
    #[error("bound escapes to infinity at t* = {t_star}")]
    BoundBlowup { t_star: f64 },
    #[error("t = {t} outside the sampled range [{t_min}, {t_max}]")]
    OutOfRange { t: f64, t_min: f64, t_max: f64 },
    #[error("invalid r series: {0}")]
    InvalidSeries(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Bisection stops once the bracket is this narrow.
pub const BLOWUP_TOL: f64 = 1e-12;

/// Samples `(t_i, r_i)` of the average scalar curvature, strictly increasing
/// in `t`, starting at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RSeries {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl RSeries {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self, BoundError> {
        if times.is_empty() || times.len() != values.len() {
            return Err(BoundError::InvalidSeries(format!(
                "{} times but {} values",
                times.len(),
                values.len()
            )));
        }
        if times[0] != 0.0 {
            return Err(BoundError::InvalidSeries("series must start at t = 0".into()));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(BoundError::InvalidSeries("times must strictly increase".into()));
        }
        if !values.iter().all(|r| r.is_finite()) {
            return Err(BoundError::InvalidSeries("r must be finite".into()));
        }
        Ok(Self { times, values })
    }

    /// `r ≡ value` sampled at `samples` equally spaced points on `[0, t_end]`.
    pub fn constant(value: f64, t_end: f64, samples: usize) -> Self {
        let samples = samples.max(2);
        let times = (0..samples)
            .map(|i| t_end * i as f64 / (samples - 1) as f64)
            .collect();
        Self {
            times,
            values: vec![value; samples],
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Interval index `i` with `t_i ≤ t ≤ t_{i+1}` (last interval for `t_end`).
    fn locate(&self, t: f64) -> Result<usize, BoundError> {
        if !(t >= 0.0 && t <= self.t_end()) {
            return Err(BoundError::OutOfRange {
                t,
                t_min: 0.0,
                t_max: self.t_end(),
            });
        }
        if self.times.len() == 1 {
            return Ok(0);
        }
        let i = self.times.partition_point(|&x| x <= t);
        Ok(i.saturating_sub(1).min(self.times.len() - 2))
    }
}

fn gauss_legendre_8() -> &'static [(f64, f64)] {
    static RULE: OnceLock<Vec<(f64, f64)>> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(8))
}

/// Nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let k = k as f64;
                    let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Which comparison ODE the curve solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    /// `φ' = (2/n) φ (φ − r)`
    Lower,
    /// `ψ' = 2 ψ (ψ − r/n)`
    Upper,
}

/// One bound curve over a sampled `r` series.
#[derive(Debug, Clone)]
pub struct BoundCurve {
    kind: BoundKind,
    exponent: f64,
    inner: f64,
    initial: f64,
    series: RSeries,
    sigma: Vec<f64>,
    integral: Vec<f64>,
    blowup: Option<f64>,
}

impl BoundCurve {
    pub fn new(n: usize, kind: BoundKind, initial: f64, series: &RSeries) -> Result<Self, BoundError> {
        if n < 2 {
            return Err(BoundError::InvalidInput(format!("dimension {n} < 2")));
        }
        if !initial.is_finite() {
            return Err(BoundError::InvalidInput("initial value must be finite".into()));
        }
        let exponent = 2.0 / n as f64;
        let inner = match kind {
            BoundKind::Lower => exponent,
            BoundKind::Upper => 2.0,
        };
        let mut curve = Self {
            kind,
            exponent,
            inner,
            initial,
            series: series.clone(),
            sigma: vec![0.0],
            integral: vec![0.0],
            blowup: None,
        };
        for i in 0..series.times.len() - 1 {
            let h = series.times[i + 1] - series.times[i];
            let s = curve.sigma[i] + 0.5 * h * (series.values[i] + series.values[i + 1]);
            let j = curve.integral[i] + curve.partial_integral(i, series.times[i + 1]);
            curve.sigma.push(s);
            curve.integral.push(j);
        }
        curve.blowup = curve.find_blowup();
        Ok(curve)
    }

    pub fn kind(&self) -> BoundKind {
        self.kind
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }

    /// Horizon `t*` where the bound escapes, if it does within the series.
    pub fn blowup(&self) -> Option<f64> {
        self.blowup
    }

    fn sigma_in(&self, i: usize, t: f64) -> f64 {
        let s = t - self.series.times[i];
        if self.series.times.len() == 1 {
            return self.series.values[0] * t;
        }
        let h = self.series.times[i + 1] - self.series.times[i];
        let (r0, r1) = (self.series.values[i], self.series.values[i + 1]);
        self.sigma[i] + r0 * s + (r1 - r0) * s * s / (2.0 * h)
    }

    /// `∫_{t_i}^{t} e^{−(2/n)σ}`
    fn partial_integral(&self, i: usize, t: f64) -> f64 {
        let a = self.series.times[i];
        let width = t - a;
        if width <= 0.0 {
            return 0.0;
        }
        let rmax = self.series.values[i]
            .abs()
            .max(self.series.values.get(i + 1).copied().unwrap_or(0.0).abs());
        let pieces = ((self.exponent * rmax * width).ceil() as usize).clamp(1, 1 << 16);
        let piece = width / pieces as f64;
        let rule = gauss_legendre_8();
        let mut total = 0.0;
        for p in 0..pieces {
            let lo = a + p as f64 * piece;
            let mut acc = 0.0;
            for &(x, w) in rule {
                let tau = lo + 0.5 * piece * (x + 1.0);
                acc += w * (-self.exponent * self.sigma_in(i, tau)).exp();
            }
            total += 0.5 * piece * acc;
        }
        total
    }

    pub fn sigma_at(&self, t: f64) -> Result<f64, BoundError> {
        let i = self.series.locate(t)?;
        Ok(self.sigma_in(i, t))
    }

    fn denominator_in(&self, i: usize, t: f64) -> f64 {
        let j = self.integral[i] + self.partial_integral(i, t);
        1.0 / self.initial - self.inner * j
    }

    fn find_blowup(&self) -> Option<f64> {
        if !(self.initial > 0.0) {
            return None;
        }
        let times = &self.series.times;
        let node = |i: usize| 1.0 / self.initial - self.inner * self.integral[i];
        let i = (1..times.len()).find(|&i| node(i) <= 0.0)?;
        let (mut lo, mut hi) = (times[i - 1], times[i]);
        while hi - lo > BLOWUP_TOL {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.denominator_in(i - 1, mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Some(0.5 * (lo + hi))
    }

    fn check_horizon(&self, t: f64) -> Result<usize, BoundError> {
        let i = self.series.locate(t)?;
        match self.blowup {
            Some(t_star) if t >= t_star => Err(BoundError::BoundBlowup { t_star }),
            _ => Ok(i),
        }
    }

    /// φ(t) or ψ(t).
    pub fn value(&self, t: f64) -> Result<f64, BoundError> {
        let i = self.check_horizon(t)?;
        if self.initial == 0.0 {
            return Ok(0.0);
        }
        let d = self.denominator_in(i, t);
        if self.initial > 0.0 && !(d > 0.0) {
            // just inside the bisection bracket
            return Err(BoundError::BoundBlowup {
                t_star: self.blowup.unwrap_or(t),
            });
        }
        Ok((-self.exponent * self.sigma_in(i, t)).exp() / d)
    }

    /// `∫₀ᵗ` of the bound.
    pub fn integral(&self, t: f64) -> Result<f64, BoundError> {
        let i = self.check_horizon(t)?;
        if self.initial == 0.0 {
            return Ok(0.0);
        }
        let scaled = self.initial * self.denominator_in(i, t);
        if !(scaled > 0.0) {
            return Err(BoundError::BoundBlowup {
                t_star: self.blowup.unwrap_or(t),
            });
        }
        Ok(-scaled.ln() / self.inner)
    }

    /// `exp((2/n)σ(t) − ∫₀ᵗ bound)`, the integrating factor of the matching
    /// monotone quantity.
    pub fn weight(&self, t: f64) -> Result<f64, BoundError> {
        let integral = self.integral(t)?;
        let i = self.series.locate(t)?;
        Ok((self.exponent * self.sigma_in(i, t) - integral).exp())
    }
}

pub fn phi_general(n: usize, rho0: f64, series: &RSeries, t: f64) -> Result<f64, BoundError> {
    BoundCurve::new(n, BoundKind::Lower, rho0, series)?.value(t)
}

pub fn psi_general(n: usize, delta0: f64, series: &RSeries, t: f64) -> Result<f64, BoundError> {
    BoundCurve::new(n, BoundKind::Upper, delta0, series)?.value(t)
}

/// `exp(∫₀ᵗ [(2/n) r − φ])`
pub fn weight_plus(n: usize, rho0: f64, series: &RSeries, t: f64) -> Result<f64, BoundError> {
    BoundCurve::new(n, BoundKind::Lower, rho0, series)?.weight(t)
}

/// `exp((2/n) σ(t) − ∫₀ᵗ ψ)`
pub fn weight_minus(n: usize, delta0: f64, series: &RSeries, t: f64) -> Result<f64, BoundError> {
    BoundCurve::new(n, BoundKind::Upper, delta0, series)?.weight(t)
}

/// Horizon of the surface bound `r0 / (1 − (1 − r0/b0) e^{r0 t})` (or
/// `b0 / (1 − b0 t)` when χ = 0), if it is finite.
pub fn blowup_2d(initial: f64, r0: f64, chi_zero: bool) -> Option<f64> {
    if initial == 0.0 {
        return None;
    }
    if chi_zero {
        return (initial > 0.0).then(|| 1.0 / initial);
    }
    // (1 − r0/b0) e^{r0 t} = 1  ⇔  e^{r0 t} = b0 / (b0 − r0)
    let ratio = initial / (initial - r0);
    let t = ratio.ln() / r0;
    (ratio > 0.0 && t > 0.0 && t.is_finite()).then_some(t)
}

fn check_2d(r0: f64, chi_zero: bool) -> Result<(), BoundError> {
    if chi_zero && r0.abs() > 1e-8 {
        return Err(BoundError::InvalidInput(format!(
            "χ = 0 requires r0 = 0, got {r0}"
        )));
    }
    if !chi_zero && r0 == 0.0 {
        return Err(BoundError::InvalidInput("χ ≠ 0 requires r0 ≠ 0".into()));
    }
    Ok(())
}

/// Solution of `b' = b (b − r0)`, `b(0) = initial`: the 2D curvature bound.
fn bound_2d(initial: f64, r0: f64, chi_zero: bool, t: f64) -> Result<f64, BoundError> {
    check_2d(r0, chi_zero)?;
    if let Some(t_star) = blowup_2d(initial, r0, chi_zero) {
        if t >= t_star {
            return Err(BoundError::BoundBlowup { t_star });
        }
    }
    if initial == 0.0 || t == 0.0 {
        return Ok(initial);
    }
    if chi_zero {
        return Ok(initial / (1.0 - initial * t));
    }
    let denominator = 1.0 - (1.0 - r0 / initial) * (r0 * t).exp();
    debug_assert!(initial * r0 <= 0.0 || denominator * initial / r0 > 0.0);
    Ok(r0 / denominator)
}

/// Lower curvature bound on a surface: `r0 / (1 − (1 − r0/ρ0) e^{r0 t})`, or
/// `ρ0 / (1 − ρ0 t)` when χ = 0.
pub fn phi_2d(rho0: f64, r0: f64, chi_zero: bool, t: f64) -> Result<f64, BoundError> {
    bound_2d(rho0, r0, chi_zero, t)
}

/// Upper curvature bound on a surface, the same formula started at δ0.
pub fn psi_2d(delta0: f64, r0: f64, chi_zero: bool, t: f64) -> Result<f64, BoundError> {
    bound_2d(delta0, r0, chi_zero, t)
}

fn weight_2d(initial: f64, r0: f64, chi_zero: bool, t: f64) -> Result<f64, BoundError> {
    check_2d(r0, chi_zero)?;
    if chi_zero {
        return Ok(1.0 - initial * t);
    }
    let q = initial / r0;
    Ok((q - q * (r0 * t).exp() + (r0 * t).exp()).abs())
}

/// `|ρ0/r0 − (ρ0/r0) e^{r0 t} + e^{r0 t}|`, or `1 − ρ0 t` when χ = 0.
pub fn weight_2d_plus(rho0: f64, r0: f64, chi_zero: bool, t: f64) -> Result<f64, BoundError> {
    weight_2d(rho0, r0, chi_zero, t)
}

/// `|δ0/r0 − (δ0/r0) e^{r0 t} + e^{r0 t}|`, or `1 − δ0 t` when χ = 0.
pub fn weight_2d_minus(delta0: f64, r0: f64, chi_zero: bool, t: f64) -> Result<f64, BoundError> {
    weight_2d(delta0, r0, chi_zero, t)
}

/// Sampled bound machinery for one trace.
#[derive(Debug, Clone)]
pub struct BoundsState {
    pub n: usize,
    pub rho0: f64,
    pub delta0: f64,
    pub r0: f64,
    pub series: RSeries,
    pub sigma: Vec<f64>,
    /// NaN past the horizon.
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub int_phi: Vec<f64>,
    pub int_psi: Vec<f64>,
    pub phi_blowup: Option<f64>,
    pub psi_blowup: Option<f64>,
    lower: BoundCurve,
    upper: BoundCurve,
}

impl BoundsState {
    pub fn new(n: usize, rho0: f64, delta0: f64, series: RSeries) -> Result<Self, BoundError> {
        let lower = BoundCurve::new(n, BoundKind::Lower, rho0, &series)?;
        let upper = BoundCurve::new(n, BoundKind::Upper, delta0, &series)?;
        let times = series.times().to_vec();
        let or_nan = |r: Result<f64, BoundError>| r.unwrap_or(f64::NAN);
        Ok(Self {
            n,
            rho0,
            delta0,
            r0: series.values()[0],
            sigma: lower.sigma.clone(),
            phi: times.iter().map(|&t| or_nan(lower.value(t))).collect(),
            psi: times.iter().map(|&t| or_nan(upper.value(t))).collect(),
            int_phi: times.iter().map(|&t| or_nan(lower.integral(t))).collect(),
            int_psi: times.iter().map(|&t| or_nan(upper.integral(t))).collect(),
            phi_blowup: lower.blowup(),
            psi_blowup: upper.blowup(),
            series,
            lower,
            upper,
        })
    }

    pub fn lower(&self) -> &BoundCurve {
        &self.lower
    }

    pub fn upper(&self) -> &BoundCurve {
        &self.upper
    }

    /// `weight_plus` at every sample (NaN past the φ horizon).
    pub fn weights_plus(&self) -> Vec<f64> {
        self.series
            .times()
            .iter()
            .map(|&t| self.lower.weight(t).unwrap_or(f64::NAN))
            .collect()
    }

    pub fn weights_minus(&self) -> Vec<f64> {
        self.series
            .times()
            .iter()
            .map(|&t| self.upper.weight(t).unwrap_or(f64::NAN))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;

    #[test]
    fn gauss_legendre_integrates_degree_fifteen() {
        let exact = 2.0 / 15.0; // ∫ x^14 on [-1, 1]
        let approx: f64 = gauss_legendre_8().iter().map(|(x, w)| w * x.powi(14)).sum();
        assert!((approx - exact).abs() < 1e-15);
    }

    #[test]
    fn logistic_lower_bound() {
        let series = RSeries::constant(2.0, 1.0, 11);
        let phi = phi_general(2, 1.0, &series, 1.0).unwrap();
        assert!((phi - 2.0 / (1.0 + E * E)).abs() < 1e-13);
        assert!((phi - 0.238405844).abs() < 1e-9);
    }

    #[test]
    fn zero_initial_value_is_a_fixed_point() {
        let series = RSeries::new(vec![0.0, 0.5, 1.0], vec![3.0, -1.0, 2.0]).unwrap();
        for t in [0.0, 0.3, 1.0] {
            assert_eq!(phi_general(3, 0.0, &series, t).unwrap(), 0.0);
            assert_eq!(psi_general(3, 0.0, &series, t).unwrap(), 0.0);
        }
    }

    #[test]
    fn flat_lower_bound_matches_surface_formula() {
        let series = RSeries::constant(0.0, 1.0, 5);
        let phi = phi_general(2, -1.0, &series, 1.0).unwrap();
        assert!((phi + 0.5).abs() < 1e-14);
        assert!((phi_2d(-1.0, 0.0, true, 1.0).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn upper_bound_value_and_horizon() {
        let series = RSeries::constant(2.0, 0.3, 31);
        let psi = psi_general(2, 3.0, &series, 0.1).unwrap();
        assert!((psi - 1.0 / (1.0 - (2.0 / 3.0) * 0.2f64.exp())).abs() < 1e-12);
        assert!((psi - 5.38413).abs() < 5e-5);
        let t_star = (1.5f64).ln() / 2.0;
        match psi_general(2, 3.0, &series, 0.21) {
            Err(BoundError::BoundBlowup { t_star: got }) => assert!((got - t_star).abs() < 1e-10),
            other => panic!("expected blowup, got {other:?}"),
        }
    }

    #[test]
    fn surface_bounds() {
        assert!((phi_2d(1.0, 2.0, false, 1.0).unwrap() - 2.0 / (1.0 + E * E)).abs() < 1e-15);
        assert_eq!(phi_2d(2.0, 2.0, false, 0.7).unwrap(), 2.0);
        assert_eq!(psi_2d(1.5, 1.5, false, 3.0).unwrap(), 1.5);
        assert!((psi_2d(1.0, 0.0, true, 0.5).unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(
            psi_2d(1.0, 0.0, true, 1.0),
            Err(BoundError::BoundBlowup { t_star: 1.0 })
        );
        assert!(psi_2d(1.0, 0.5, true, 0.1).is_err());
    }

    #[test]
    fn weights_at_time_zero_are_one() {
        let series = RSeries::new(vec![0.0, 1.0], vec![1.0, 2.0]).unwrap();
        assert_eq!(weight_plus(3, 0.5, &series, 0.0).unwrap(), 1.0);
        assert_eq!(weight_minus(3, 0.5, &series, 0.0).unwrap(), 1.0);
        assert_eq!(weight_2d_plus(0.5, 2.0, false, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn surface_weights() {
        let w = weight_2d_plus(1.0, 2.0, false, 1.0).unwrap();
        assert!((w - (0.5 + 0.5 * E * E)).abs() < 1e-14);
        assert!((w - 4.1945280).abs() < 1e-7);
        assert_eq!(weight_2d_plus(3.0, 3.0, false, 2.0).unwrap(), 1.0);
        assert_eq!(weight_2d_minus(1.0, 0.0, true, 0.25).unwrap(), 0.75);
    }

    #[test]
    fn general_plus_weight_matches_closed_form() {
        let series = RSeries::constant(2.0, 1.0, 101);
        let w = weight_plus(2, 1.0, &series, 1.0).unwrap();
        assert!((w - (1.0 + E * E) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn flat_weights_are_identically_one() {
        let series = RSeries::constant(0.0, 2.0, 21);
        for &t in series.times() {
            assert_eq!(weight_plus(2, 0.0, &series, t).unwrap(), 1.0);
            assert_eq!(weight_minus(2, 0.0, &series, t).unwrap(), 1.0);
        }
    }

    #[test]
    fn surface_horizons() {
        assert_eq!(blowup_2d(2.0, 0.0, true), Some(0.5));
        assert_eq!(blowup_2d(-2.0, 0.0, true), None);
        assert_eq!(blowup_2d(1.0, 2.0, false), None);
        let t = blowup_2d(3.0, 2.0, false).unwrap();
        assert!((t - 3f64.ln() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn series_validation() {
        assert!(RSeries::new(vec![0.0, 0.0], vec![1.0, 1.0]).is_err());
        assert!(RSeries::new(vec![0.1, 0.2], vec![1.0, 1.0]).is_err());
        assert!(RSeries::new(vec![0.0], vec![]).is_err());
        let s = RSeries::constant(1.0, 1.0, 3);
        assert!(matches!(
            phi_general(2, 1.0, &s, 1.5),
            Err(BoundError::OutOfRange { .. })
        ));
    }

    #[test]
    fn sampled_state_tracks_horizon() {
        let state = BoundsState::new(2, 1.0, 3.0, RSeries::constant(2.0, 0.5, 51)).unwrap();
        assert_eq!(state.phi[0], 1.0);
        assert_eq!(state.psi[0], 3.0);
        assert!(state.phi_blowup.is_none());
        let t_star = state.psi_blowup.unwrap();
        assert!((t_star - 1.5f64.ln() / 2.0).abs() < 1e-10);
        for (i, &t) in state.series.times().iter().enumerate() {
            assert_eq!(state.psi[i].is_nan(), t >= t_star);
        }
    }
}
