use ricci_monotone::homogeneous::{condition_flags, product_spectrum, run_product, ProductSphereState};
use ricci_monotone::monotone::{check_quantity, KindOutcome, MonotoneError, QuantityKind};
use ricci_monotone::surface_flow::FlowConfig;
use ricci_monotone::trace::FlagSpan;

fn config(t_end: f64, dt: f64, stride: usize, k: usize) -> FlowConfig {
    FlowConfig {
        scenario: "product".into(),
        geometry: "product".into(),
        t_end,
        dt,
        stride,
        k,
        eig_tol: 1e-9,
    }
}

fn state(p: usize, q: usize, a: f64, b: f64) -> ProductSphereState {
    ProductSphereState::new(p, q, a, b).unwrap()
}

/// On S¹(1)×S²(1), `b² = 1 − 2t/3` and `a = 1/b²` solve the radii equations.
#[test]
fn circle_sphere_matches_the_exact_solution() {
    let trace = run_product(state(1, 2, 1.0, 1.0), &config(1.0, 1e-3, 50, 3)).unwrap();
    assert_eq!(trace.meta.branch_labels.as_deref(), Some("(1,0) (0,1) (1,1)"));
    assert!(trace.meta.truncated.is_none());
    for row in &trace.rows {
        let b2 = 1.0 - 2.0 * row.t / 3.0;
        let exact = [b2 * b2, 2.0 / b2, b2 * b2 + 2.0 / b2];
        for (got, want) in row.lambda.iter().zip(exact) {
            assert!((got - want).abs() <= 1e-8 * want, "t={}: {got} vs {want}", row.t);
        }
        assert!((row.r - 2.0 / b2).abs() <= 1e-8 * row.r);
    }
}

#[test]
fn volume_is_conserved_and_integrator_converges() {
    for (p, q, a, b) in [(1, 2, 1.0, 1.0), (2, 3, 1.0, 1.5), (3, 2, 1.5, 1.0), (1, 3, 3.0, 2.0)] {
        let coarse = run_product(state(p, q, a, b), &config(1.0, 2e-3, 10, 2)).unwrap();
        let fine = run_product(state(p, q, a, b), &config(1.0, 1e-3, 20, 2)).unwrap();
        let v0 = coarse.rows[0].area;
        for row in &fine.rows {
            assert!((row.area - v0).abs() <= 1e-8 * v0);
        }
        let (x, y) = (coarse.rows.last().unwrap(), fine.rows.last().unwrap());
        assert!(x.t == 1.0 && y.t == 1.0, "({p},{q}) truncated");
        for (l1, l2) in x.lambda.iter().zip(&y.lambda) {
            assert!((l1 - l2).abs() <= 1e-6 * l2, "({p},{q}): {l1} vs {l2}");
        }
    }
}

#[test]
fn curvature_lies_between_the_bounds() {
    let trace = run_product(state(1, 2, 1.0, 1.0), &config(1.5, 1e-3, 5, 3)).unwrap();
    for row in &trace.rows {
        assert!(row.phi <= row.r * (1.0 + 1e-6));
        if row.psi.is_finite() {
            assert!(row.r <= row.psi * (1.0 + 1e-6));
        }
    }
    assert_eq!(trace.rows[0].phi, trace.rows[0].r);
    assert_eq!(trace.rows[0].psi, trace.rows[0].r);
}

#[test]
fn einstein_product_has_strictly_decreasing_q1minus() {
    let start = state(2, 2, 1.0, 1.0);
    let trace = run_product(start, &config(0.14, 1e-3, 5, 2)).unwrap();
    let l0 = trace.rows[0].lambda[0];
    assert!(trace.rows.iter().all(|r| (r.lambda[0] - l0).abs() < 1e-12));
    assert_eq!(trace.meta.ricci_pinched, FlagSpan::Always);
    let KindOutcome::Reports(reports) = check_quantity(&trace, QuantityKind::Q1Minus, 1e-6 + 10.0 * 1e-3).unwrap() else {
        panic!("Q1minus should be checked");
    };
    assert!(reports.iter().all(|r| r.pass));
    for w in reports[0].samples.windows(2) {
        assert!(w[1].1 < w[0].1);
    }
    // ψ(0) = 4, ψ' = 2ψ(ψ − 1) escapes at ln(4/3)/2 ≈ 0.1438, just past T
    assert!(trace.meta.psi_blowup.is_none());
    assert!(trace.rows.windows(2).all(|w| w[1].psi > w[0].psi));
}

#[test]
fn circle_three_sphere_flags() {
    let s = state(1, 3, 1.0, 1.0);
    assert_eq!(s.ricci(), (0.0, 2.0));
    assert_eq!(s.scalar_curvature(), 6.0);
    assert_eq!(condition_flags(&s), (false, true));
    let trace = run_product(s, &config(0.2, 1e-3, 10, 2)).unwrap();
    let outcome = check_quantity(&trace, QuantityKind::Q1Plus, 1e-6).unwrap();
    assert!(matches!(outcome, KindOutcome::Skipped(MonotoneError::FlagNeverHolds { .. })));
    let outcome = check_quantity(&trace, QuantityKind::Q2Plus, 1e-6).unwrap();
    assert!(matches!(outcome, KindOutcome::Skipped(MonotoneError::DimensionMismatch { .. })));
}

#[test]
fn spectrum_scaling() {
    let s = state(1, 2, 1.0, 1.0);
    assert_eq!(product_spectrum(&s, 2), vec![1.0, 2.0]);
    let wide = state(1, 2, 2.0, 1.0);
    assert_eq!(product_spectrum(&wide, 3), vec![0.25, 1.0, 2.0]);
    assert_eq!(product_spectrum(&state(2, 2, 1.0, 1.0), 1), vec![2.0]);
}
