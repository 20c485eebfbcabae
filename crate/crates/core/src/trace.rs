//! Time-indexed flow samples and their CSV form.
//!
//! A trace file is a block of `# key=value` metadata lines followed by the
//! header
//!
//! ```text
//! t,r,min_R,max_R,area,sigma,phi,psi,w_plus,w_minus,lam_1,...,lam_k,Q_plus_1,...,Q_plus_k,Q_minus_1,...,Q_minus_k
//! ```
//!
//! and one row per sample. Floats are written in shortest round-trip form;
//! bound columns past their blowup horizon hold `NaN`.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TraceError {
    #[error("malformed trace (line {line}): {message}")]
    Malformed { line: usize, message: String },
    #[error("I/O error: {0}")]
    Io(String),
}

fn malformed(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Malformed {
        line,
        message: message.into(),
    }
}

/// How the `phi`, `psi`, `w_*` and `Q_*` columns were formed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightForm {
    /// Surface closed forms: bounds solve `b' = b (b − r0)` and the weights are
    /// `|b0/r0 − (b0/r0) e^{r0 t} + e^{r0 t}|` (or `1 − b0 t` when χ = 0).
    Surface,
    /// Dimension-`n` bounds and exponential weights from the sampled `r`.
    General,
}

impl fmt::Display for WeightForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WeightForm::Surface => "surface",
            WeightForm::General => "general",
        })
    }
}

impl FromStr for WeightForm {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "surface" => Ok(WeightForm::Surface),
            "general" => Ok(WeightForm::General),
            other => Err(format!("unknown weight form {other:?}")),
        }
    }
}

/// Where a curvature hypothesis holds along a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlagSpan {
    Always,
    Never,
    /// Holds on samples with `t` strictly before this time.
    Until(f64),
}

impl FlagSpan {
    /// Span from per-sample flags.
    pub fn from_samples(times: &[f64], flags: &[bool]) -> Self {
        match flags.iter().position(|&ok| !ok) {
            None => FlagSpan::Always,
            Some(0) => FlagSpan::Never,
            Some(i) => FlagSpan::Until(times[i]),
        }
    }

    pub fn holds_at(&self, t: f64) -> bool {
        match *self {
            FlagSpan::Always => true,
            FlagSpan::Never => false,
            FlagSpan::Until(end) => t < end,
        }
    }
}

impl fmt::Display for FlagSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlagSpan::Always => f.write_str("always"),
            FlagSpan::Never => f.write_str("never"),
            FlagSpan::Until(t) => write!(f, "until:{t}"),
        }
    }
}

impl FromStr for FlagSpan {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "always" => Ok(FlagSpan::Always),
            "never" => Ok(FlagSpan::Never),
            _ => s
                .strip_prefix("until:")
                .and_then(|t| t.parse().ok())
                .map(FlagSpan::Until)
                .ok_or_else(|| format!("bad flag span {s:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub scenario: String,
    pub geometry: String,
    /// Manifold dimension.
    pub n: usize,
    /// Euler characteristic, for surfaces.
    pub chi: Option<i64>,
    pub rho0: f64,
    pub delta0: f64,
    pub r0: f64,
    /// Mesh size (longest edge); zero for the homogeneous reduction.
    pub h: f64,
    pub dt: f64,
    pub t_requested: f64,
    pub weights: WeightForm,
    pub phi_blowup: Option<f64>,
    pub psi_blowup: Option<f64>,
    /// Hypothesis of the `+` quantities, `Rc − ½Rg ≥ 0`.
    pub einstein_nonneg: FlagSpan,
    /// Hypothesis of the `−` quantities, `0 ≤ Rc ≤ ½Rg`.
    pub ricci_pinched: FlagSpan,
    /// Why the run stopped before `t_requested`, if it did.
    pub truncated: Option<String>,
    /// Samples at which some branch matched with overlap below the threshold.
    pub branch_ambiguities: usize,
    /// Labels of the eigenvalue branches when they are known in closed form.
    pub branch_labels: Option<String>,
}

impl TraceMeta {
    fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let opt = |x: Option<f64>| x.map_or("none".to_string(), |v| v.to_string());
        vec![
            ("scenario", self.scenario.clone()),
            ("geometry", self.geometry.clone()),
            ("n", self.n.to_string()),
            ("chi", self.chi.map_or("none".into(), |c| c.to_string())),
            ("rho0", self.rho0.to_string()),
            ("delta0", self.delta0.to_string()),
            ("r0", self.r0.to_string()),
            ("h", self.h.to_string()),
            ("dt", self.dt.to_string()),
            ("t_requested", self.t_requested.to_string()),
            ("weights", self.weights.to_string()),
            ("phi_blowup", opt(self.phi_blowup)),
            ("psi_blowup", opt(self.psi_blowup)),
            ("einstein_nonneg", self.einstein_nonneg.to_string()),
            ("ricci_pinched", self.ricci_pinched.to_string()),
            ("truncated", self.truncated.clone().unwrap_or_else(|| "none".into())),
            ("branch_ambiguities", self.branch_ambiguities.to_string()),
            ("branch_labels", self.branch_labels.clone().unwrap_or_else(|| "none".into())),
        ]
    }

    fn from_pairs(pairs: &BTreeMap<String, (usize, String)>) -> Result<Self, TraceError> {
        fn field<T: FromStr>(
            pairs: &BTreeMap<String, (usize, String)>,
            key: &str,
        ) -> Result<T, TraceError> {
            let (line, raw) = pairs
                .get(key)
                .ok_or_else(|| malformed(0, format!("missing metadata key {key:?}")))?;
            raw.parse()
                .map_err(|_| malformed(*line, format!("bad value {raw:?} for {key}")))
        }
        fn optional<T: FromStr>(
            pairs: &BTreeMap<String, (usize, String)>,
            key: &str,
        ) -> Result<Option<T>, TraceError> {
            match pairs.get(key) {
                Some((_, raw)) if raw == "none" => Ok(None),
                Some(_) => field(pairs, key).map(Some),
                None => Err(malformed(0, format!("missing metadata key {key:?}"))),
            }
        }
        Ok(Self {
            scenario: field(pairs, "scenario")?,
            geometry: field(pairs, "geometry")?,
            n: field(pairs, "n")?,
            chi: optional(pairs, "chi")?,
            rho0: field(pairs, "rho0")?,
            delta0: field(pairs, "delta0")?,
            r0: field(pairs, "r0")?,
            h: field(pairs, "h")?,
            dt: field(pairs, "dt")?,
            t_requested: field(pairs, "t_requested")?,
            weights: field(pairs, "weights")?,
            phi_blowup: optional(pairs, "phi_blowup")?,
            psi_blowup: optional(pairs, "psi_blowup")?,
            einstein_nonneg: field(pairs, "einstein_nonneg")?,
            ricci_pinched: field(pairs, "ricci_pinched")?,
            truncated: optional(pairs, "truncated")?,
            branch_ambiguities: field(pairs, "branch_ambiguities")?,
            branch_labels: optional(pairs, "branch_labels")?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub r: f64,
    pub min_r: f64,
    pub max_r: f64,
    pub area: f64,
    pub sigma: f64,
    pub phi: f64,
    pub psi: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Tracked eigenvalue branches.
    pub lambda: Vec<f64>,
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

pub fn header(k: usize) -> String {
    let mut cols: Vec<String> = [
        "t", "r", "min_R", "max_R", "area", "sigma", "phi", "psi", "w_plus", "w_minus",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    cols.extend((1..=k).map(|i| format!("lam_{i}")));
    cols.extend((1..=k).map(|i| format!("Q_plus_{i}")));
    cols.extend((1..=k).map(|i| format!("Q_minus_{i}")));
    cols.join(",")
}

impl FlowTrace {
    /// Number of tracked eigenvalue branches.
    pub fn k(&self) -> usize {
        self.rows.first().map_or(0, |r| r.lambda.len())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t).collect()
    }

    pub fn t_end(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for (key, value) in self.meta.to_pairs() {
            writeln!(out, "# {key}={value}").unwrap();
        }
        writeln!(out, "{}", header(self.k())).unwrap();
        for row in &self.rows {
            let scalars = [
                row.t, row.r, row.min_r, row.max_r, row.area, row.sigma, row.phi, row.psi,
                row.w_plus, row.w_minus,
            ];
            let fields: Vec<String> = scalars
                .iter()
                .chain(&row.lambda)
                .chain(&row.q_plus)
                .chain(&row.q_minus)
                .map(|v| v.to_string())
                .collect();
            writeln!(out, "{}", fields.join(",")).unwrap();
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TraceError> {
        std::fs::write(path.as_ref(), self.to_csv())
            .map_err(|e| TraceError::Io(format!("{}: {e}", path.as_ref().display())))
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self, TraceError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| TraceError::Io(format!("{}: {e}", path.as_ref().display())))?;
        text.parse()
    }
}

impl FromStr for FlowTrace {
    type Err = TraceError;

    fn from_str(text: &str) -> Result<Self, TraceError> {
        let mut meta_pairs = BTreeMap::new();
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let (header_line, header_text) = loop {
            let (no, line) = lines
                .next()
                .ok_or_else(|| malformed(0, "no header row"))?;
            if line.is_empty() {
                continue;
            }
            match line.strip_prefix('#') {
                Some(rest) => {
                    let (k, v) = rest
                        .split_once('=')
                        .ok_or_else(|| malformed(no, "metadata line needs key=value"))?;
                    meta_pairs.insert(k.trim().to_string(), (no, v.trim().to_string()));
                }
                None => break (no, line),
            }
        };
        let meta = TraceMeta::from_pairs(&meta_pairs)?;

        let columns = header_text.split(',').count();
        if columns < 10 || (columns - 10) % 3 != 0 {
            return Err(malformed(header_line, "unexpected column count"));
        }
        let k = (columns - 10) / 3;
        if header_text != header(k) {
            return Err(malformed(header_line, "header does not match the trace schema"));
        }

        let mut rows: Vec<TraceRow> = Vec::new();
        for (no, line) in lines.filter(|(_, l)| !l.is_empty()) {
            let v: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| malformed(no, "non-numeric field"))?;
            if v.len() != columns {
                return Err(malformed(no, format!("{} fields, expected {columns}", v.len())));
            }
            let row = TraceRow {
                t: v[0],
                r: v[1],
                min_r: v[2],
                max_r: v[3],
                area: v[4],
                sigma: v[5],
                phi: v[6],
                psi: v[7],
                w_plus: v[8],
                w_minus: v[9],
                lambda: v[10..10 + k].to_vec(),
                q_plus: v[10 + k..10 + 2 * k].to_vec(),
                q_minus: v[10 + 2 * k..].to_vec(),
            };
            if let Some(prev) = rows.last() {
                if !(row.t > prev.t) {
                    return Err(malformed(no, "times must strictly increase"));
                }
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(malformed(header_line, "trace has no rows"));
        }
        Ok(FlowTrace { meta, rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn sample_trace() -> FlowTrace {
        let meta = TraceMeta {
            scenario: "unit".into(),
            geometry: "icosphere(1)".into(),
            n: 2,
            chi: Some(2),
            rho0: 1.5,
            delta0: 2.5,
            r0: 2.0,
            h: 0.6,
            dt: 1e-3,
            t_requested: 0.2,
            weights: WeightForm::Surface,
            phi_blowup: None,
            psi_blowup: Some(0.45),
            einstein_nonneg: FlagSpan::Always,
            ricci_pinched: FlagSpan::Until(0.1),
            truncated: None,
            branch_ambiguities: 0,
            branch_labels: None,
        };
        let rows = (0..3)
            .map(|i| {
                let t = 0.1 * i as f64;
                TraceRow {
                    t,
                    r: 2.0,
                    min_r: 1.5,
                    max_r: 2.5,
                    area: 4.0 * std::f64::consts::PI,
                    sigma: 2.0 * t,
                    phi: 1.5,
                    psi: if i == 2 { f64::NAN } else { 2.5 },
                    w_plus: 1.0 + t / 3.0,
                    w_minus: 1.0 - t,
                    lambda: vec![2.0, 2.0 + t],
                    q_plus: vec![2.0, 2.1],
                    q_minus: vec![1.9, 1.8],
                }
            })
            .collect();
        FlowTrace { meta, rows }
    }

    #[test]
    fn header_layout() {
        assert_eq!(
            header(2),
            "t,r,min_R,max_R,area,sigma,phi,psi,w_plus,w_minus,lam_1,lam_2,Q_plus_1,Q_plus_2,Q_minus_1,Q_minus_2"
        );
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let trace = sample_trace();
        let text = trace.to_csv();
        let back: FlowTrace = text.parse().unwrap();
        assert_eq!(back.meta, trace.meta);
        assert_eq!(back.to_csv(), text);
        assert_eq!(back.rows[1].w_plus.to_bits(), trace.rows[1].w_plus.to_bits());
        assert!(back.rows[2].psi.is_nan());
    }

    #[test]
    fn rejects_wrong_header() {
        let text = sample_trace().to_csv().replace("w_minus", "w_neg");
        assert!(matches!(text.parse::<FlowTrace>(), Err(TraceError::Malformed { .. })));
    }

    #[test]
    fn rejects_missing_metadata() {
        let text: String = sample_trace()
            .to_csv()
            .lines()
            .filter(|l| !l.starts_with("# rho0"))
            .map(|l| format!("{l}\n"))
            .collect();
        assert!(text.parse::<FlowTrace>().is_err());
    }

    #[test]
    fn flag_spans() {
        let span = FlagSpan::from_samples(&[0.0, 0.5, 1.0], &[true, true, false]);
        assert_eq!(span, FlagSpan::Until(1.0));
        assert!(span.holds_at(0.5) && !span.holds_at(1.0));
        assert_eq!(FlagSpan::from_samples(&[0.0], &[false]), FlagSpan::Never);
        assert_eq!("until:0.25".parse::<FlagSpan>().unwrap(), FlagSpan::Until(0.25));
    }
}
