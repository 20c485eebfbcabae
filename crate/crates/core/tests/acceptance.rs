//! End-to-end acceptance criteria. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

mod common;

use std::f64::consts::{E, PI};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use ricci_monotone::bounds::{
    phi_2d, phi_general, weight_2d_plus, weight_plus, BoundCurve, BoundKind, RSeries,
};
use ricci_monotone::mesh::{assemble_operators, icosphere, torus_grid};
use ricci_monotone::monotone::{
    check_quantity, default_tolerance, is_primary, rate_check, KindOutcome, MonotoneReport,
    QuantityKind,
};
use ricci_monotone::scenario::{simulate, Scenario};
use ricci_monotone::spectrum::{smallest_eigenpairs, DEFAULT_TOL};
use ricci_monotone::trace::FlowTrace;

type Outcome = Result<String, String>;

fn scenario(name: &str) -> Scenario {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name);
    Scenario::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn run(name: &str) -> FlowTrace {
    simulate(&scenario(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn reports(trace: &FlowTrace, kind: QuantityKind, tol: f64) -> Result<Vec<MonotoneReport>, String> {
    match check_quantity(trace, kind, tol).map_err(|e| e.to_string())? {
        KindOutcome::Reports(r) => Ok(r),
        KindOutcome::Skipped(e) => Err(format!("{kind} skipped on {}: {e}", trace.meta.scenario)),
    }
}

fn r_constancy(traces: &[&FlowTrace]) -> Outcome {
    let mut worst = 0.0f64;
    for trace in traces {
        let chi = trace.meta.chi.ok_or("surface trace without χ")? as f64;
        let scale = trace.meta.r0.abs().max(1.0);
        for row in &trace.rows {
            worst = worst.max((row.r - 4.0 * PI * chi / row.area).abs() / scale);
        }
    }
    ensure(worst <= 1e-6, format!("max |r − 4πχ/Area| / max(1,|r0|) = {worst:.2e}"))
}

fn volume(traces: &[&FlowTrace]) -> Outcome {
    let mut worst = 0.0f64;
    for trace in traces {
        let a0 = trace.rows[0].area;
        for row in &trace.rows {
            worst = worst.max((row.area - a0).abs() / a0);
        }
        if trace.t_end() < 2.0 - 1e-9 {
            return Err(format!("{} stopped at t = {}", trace.meta.scenario, trace.t_end()));
        }
    }
    ensure(worst <= 1e-6, format!("max relative area drift {worst:.2e} over T = 2"))
}

fn envelope(traces: &[&FlowTrace]) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for trace in traces {
        let first = &trace.rows[0];
        let eps = 0.02 * (first.max_r - first.min_r) + 10.0 * trace.meta.h * trace.meta.h;
        let mut lower = f64::NEG_INFINITY;
        let mut upper = f64::NEG_INFINITY;
        for row in &trace.rows {
            lower = lower.max(row.phi - eps - row.min_r);
            // past the ψ horizon the upper bound is +∞
            if row.psi.is_finite() {
                upper = upper.max(row.max_r - row.psi - eps);
            }
        }
        ok &= lower <= 0.0 && upper <= 0.0;
        details.push(format!(
            "{}: max(φ−ε−minR) = {lower:.3e}, max(maxR−ψ−ε) = {upper:.3e}, ε = {eps:.3e}",
            trace.meta.scenario
        ));
    }
    ensure(ok, details.join("; "))
}

fn monotone_2d(traces: &[&FlowTrace], kind: QuantityKind) -> Outcome {
    let mut details = Vec::new();
    let mut ok = true;
    for trace in traces {
        let tol = default_tolerance(trace.meta.h, trace.meta.dt);
        for r in reports(trace, kind, tol)? {
            if is_primary(&r) {
                ok &= r.pass;
                details.push(format!("{} {} {}: {:.2e}", trace.meta.scenario, r.quantity, r.direction, r.max_violation));
            } else {
                details.push(format!(
                    "{} {} alternate {} (informational): {:.2e} {}",
                    trace.meta.scenario,
                    r.quantity,
                    r.direction,
                    r.max_violation,
                    if r.pass { "pass" } else { "fail" }
                ));
            }
        }
    }
    ensure(ok, details.join("; "))
}

fn product_q1_minus(trace: &FlowTrace) -> Outcome {
    use ricci_monotone::trace::FlagSpan;
    if trace.meta.ricci_pinched != FlagSpan::Always {
        return Err(format!("ricci_pinched flag is {}", trace.meta.ricci_pinched));
    }
    let tol = 1e-6 + 10.0 * trace.meta.dt;
    let reports = reports(trace, QuantityKind::Q1Minus, tol)?;
    let worst = reports.iter().map(|r| r.max_violation).fold(0.0, f64::max);
    let t_valid = reports.iter().map(|r| r.t_end).fold(0.0, f64::max);
    let horizon = trace.meta.psi_blowup.map_or("none".into(), |t| format!("{t:.4}"));
    let truncated = trace.meta.truncated.as_deref().unwrap_or("no");
    ensure(
        reports.iter().all(|r| r.pass),
        format!(
            "max violation {worst:.2e} ≤ {tol:.2e}; weight defined up to the ψ horizon {horizon}, \
             last valid sample t = {t_valid:.3}; run end t = {:.3} (truncated: {truncated})",
            trace.t_end()
        ),
    )
}

fn rate() -> Outcome {
    let s = scenario("torus_rate.scn");
    let (ops, u0) = s.surface().map_err(|e| e.to_string())?;
    let report = rate_check(&ops, u0, &s.flow_config(), s.rate_branch).map_err(|e| e.to_string())?;
    ensure(
        report.pass && report.compared() > 0,
        format!(
            "branch {}: max relative gap {:.2e} over {} rows ({} skipped)",
            report.branch + 1,
            report.max_gap,
            report.compared(),
            report.rows.len() - report.compared()
        ),
    )
}

fn closed_form_oracle() -> Outcome {
    let series = RSeries::constant(2.0, 1.0, 1001);
    let want = 2.0 / (1.0 + E * E);
    let quad = phi_general(2, 1.0, &series, 1.0).map_err(|e| e.to_string())?;
    let closed = phi_2d(1.0, 2.0, false, 1.0).map_err(|e| e.to_string())?;
    let oracle = common::dopri5(|_, y| y * (y - 2.0), 0.0, 1.0, 1.0, 1e-13).ok_or("oracle diverged")?;
    let upper = BoundCurve::new(2, BoundKind::Upper, 3.0, &RSeries::constant(2.0, 1.0, 1001))
        .map_err(|e| e.to_string())?;
    let horizon = upper.blowup().ok_or("no ψ horizon")?;
    let horizon_err = (horizon - 1.5f64.ln() / 2.0).abs();
    let errs = [(quad - want).abs(), (closed - want).abs(), (oracle - quad).abs(), (oracle - closed).abs()];
    ensure(
        errs.iter().all(|e| *e <= 1e-8) && horizon_err <= 1e-10,
        format!(
            "φ(1): quadrature {quad:.12}, closed {closed:.12}, ODE {oracle:.12}; ψ horizon {horizon:.12} (err {horizon_err:.1e})"
        ),
    )
}

fn weight_identity(sphere: &FlowTrace) -> Outcome {
    let mut worst = 0.0f64;
    for &(rho0, r0) in &[(1.0, 2.0), (-0.5, 2.0), (1.7885, 1.94998), (3.0, 1.0)] {
        let t_end = ricci_monotone::bounds::blowup_2d(rho0, r0, false).map_or(2.0, |t| 0.9 * t);
        let series = RSeries::constant(r0, t_end, 2001);
        for i in 0..100 {
            let t = t_end * i as f64 / 99.0;
            let w = weight_plus(2, rho0, &series, t).map_err(|e| e.to_string())?;
            let w2 = weight_2d_plus(rho0, r0, false, t).map_err(|e| e.to_string())?;
            worst = worst.max((w - w2).abs() / w2);
        }
    }
    let tol = default_tolerance(sphere.meta.h, sphere.meta.dt);
    let q1 = reports(sphere, QuantityKind::Q1Plus, tol)?;
    let q2 = reports(sphere, QuantityKind::Q2Plus, tol)?;
    let agree = q1.len() == q2.len() && q1.iter().zip(&q2).all(|(a, b)| a.pass == b.pass);
    ensure(
        worst <= 1e-10 && agree,
        format!("max relative weight gap {worst:.2e}; Q1plus/Q2plus verdicts agree on {} branches: {agree}", q1.len()),
    )
}

fn spectral() -> Outcome {
    let mut dense_worst = 0.0f64;
    for mesh in [icosphere(2), torus_grid(16, 14, 2.0 * PI, 1.7 * PI).unwrap()] {
        let ops = assemble_operators(&mesh);
        let dense = common::dense_generalized_eigenvalues(&ops.stiffness, &ops.base_mass);
        let pairs = smallest_eigenpairs(&ops.stiffness, &ops.base_mass, 6, DEFAULT_TOL).map_err(|e| e.to_string())?;
        for (p, d) in pairs.iter().zip(&dense[1..]) {
            dense_worst = dense_worst.max((p.value - d).abs() / d);
        }
    }
    let sphere: Vec<f64> = (2..=4)
        .map(|l| {
            let ops = assemble_operators(&icosphere(l));
            smallest_eigenpairs(&ops.stiffness, &ops.base_mass, 3, DEFAULT_TOL).map(|p| p[0].value)
        })
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let sphere_err: Vec<f64> = sphere.iter().map(|l| (l - 2.0).abs() / 2.0).collect();
    let converging = sphere_err.windows(2).all(|w| w[1] < w[0]);
    let mut torus_ok = true;
    let mut torus = Vec::new();
    for n in [16, 32, 64] {
        let ops = assemble_operators(&torus_grid(n, n, 2.0 * PI, 2.0 * PI).unwrap());
        let l = smallest_eigenpairs(&ops.stiffness, &ops.base_mass, 4, DEFAULT_TOL).map_err(|e| e.to_string())?[0].value;
        torus_ok &= (l - 1.0).abs() <= ops.h * ops.h;
        torus.push(format!("{n}²: {:.2e} (h² {:.2e})", (l - 1.0).abs(), ops.h * ops.h));
    }
    ensure(
        dense_worst <= 1e-7 && sphere_err[2] <= 0.02 && converging && torus_ok,
        format!(
            "dense gap {dense_worst:.1e}; icosphere λ₁ rel err {:.2e}/{:.2e}/{:.2e}; torus |λ₁−1| {}",
            sphere_err[0],
            sphere_err[1],
            sphere_err[2],
            torus.join(", ")
        ),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let (sphere, torus, product) = std::thread::scope(|s| {
        let a = s.spawn(|| run("sphere.scn"));
        let b = s.spawn(|| run("torus.scn"));
        let c = s.spawn(|| run("circle_sphere.scn"));
        (a.join().unwrap(), b.join().unwrap(), c.join().unwrap())
    });
    let surfaces = [&sphere, &torus];
    println!("scenario runs finished in {:.1}s", start.elapsed().as_secs_f64());

    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("r constancy", Box::new(|| r_constancy(&surfaces))),
        ("volume constancy", Box::new(|| volume(&surfaces))),
        ("maximum-principle envelope", Box::new(|| envelope(&surfaces))),
        ("Q2plus nondecreasing", Box::new(|| monotone_2d(&surfaces, QuantityKind::Q2Plus))),
        ("Q2minus nonincreasing", Box::new(|| monotone_2d(&surfaces, QuantityKind::Q2Minus))),
        ("S1xS2 Q1minus nonincreasing", Box::new(|| product_q1_minus(&product))),
        ("eigenvalue rate formula", Box::new(rate)),
        ("closed form vs ODE oracle", Box::new(closed_form_oracle)),
        ("weight identity", Box::new(|| weight_identity(&sphere))),
        ("spectral correctness", Box::new(spectral)),
    ];

    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {p:?}")));
        let (verdict, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {:>2} {verdict} {name}: {detail}", i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
