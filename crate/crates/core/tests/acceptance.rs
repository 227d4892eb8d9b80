//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! on stderr (outside the test harness capture).

use std::io::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stabfem::assembly::{
    apply_dirichlet, assemble_galerkin, assemble_stabilized, solve_stabilized, ProblemSpec, StabilizationMethod, TauField,
};
use stabfem::benchmarks::{convergence_study, run_test1, run_test2, ConvergenceSpec, ManufacturedProblem, Test1Spec, Test2Spec};
use stabfem::calibration::{CalibrationProblem, Calibrator, MinimizeOptions, TrainingConfig};
use stabfem::fe_space::FeSpace;
use stabfem::mesh::{Mesh, StructuredGrid};
use stabfem::phi_table::{build_table, node_indices, Axis, PhiTable, TableBuildSpec};
use stabfem::tau::{
    p_coth_p_minus_one, tau_codina, tau_field, tau_franca_valentin, tau_hauke, tau_one_d, ElementFlowData, TauFormula,
};

fn report(n: u32, name: &str, pass: bool, detail: &str, start: Instant) {
    let status = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(
        std::io::stderr(),
        "acceptance {n} {status} {name}: {detail} ({:.1} s)",
        start.elapsed().as_secs_f64()
    );
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Solution of `a u' − μ u'' = 1` on `(0, 1)` with zero end values.
fn exact_1d(a: f64, mu: f64, x: f64) -> f64 {
    let r = a / mu;
    // (e^{rx} − 1)/(e^{r} − 1) written without overflow
    let ratio = (r * (x - 1.0)).exp() * (-(-r * x).exp_m1()) / (-(-r).exp_m1());
    (x - ratio) / a
}

#[test]
fn criterion_1_nodal_exactness_1d() {
    let start = Instant::now();
    let mesh = Arc::new(Mesh::interval(0.0, 1.0, 20).unwrap());
    let space = Arc::new(FeSpace::new(mesh, 1).unwrap());
    let mut worst: f64 = 0.0;
    for mu in [0.3, 0.05, 0.005] {
        let p = ProblemSpec::constant([1.0, 0.0], mu, 1.0);
        let tau = tau_field(&space, &p, &TauFormula::OneD).unwrap();
        let (u, _) = solve_stabilized(&space, &p, StabilizationMethod::TermByTerm, &tau).unwrap();
        for (i, x) in space.dof_coords().iter().enumerate() {
            worst = worst.max((u.values[i] - exact_1d(1.0, mu, x[0])).abs());
        }
    }
    report(1, "1D nodal exactness", worst <= 1e-9, &format!("max nodal error {worst:.3e} (limit 1e-9)"), start);
}

#[test]
fn criterion_2_calibration_recovers_1d_optimum() {
    let start = Instant::now();
    let mut worst_tau: f64 = 0.0;
    let mut worst_j: f64 = 0.0;
    for pe in [0.5, 1.6667, 5.0, 20.0, 100.0] {
        let cp = CalibrationProblem::training(1, &[pe], StabilizationMethod::TermByTerm, &TrainingConfig::default()).unwrap();
        let cal = Calibrator::new(&cp).unwrap();
        let r = cal.minimize(&MinimizeOptions::default()).unwrap();
        worst_tau = worst_tau.max(rel(r.tau_opt, tau_one_d(cal.flow())));
        worst_j = worst_j.max(r.j_min / cal.target_norm_sq());
    }
    let pass = worst_tau <= 1e-3 && worst_j <= 1e-12;
    report(
        2,
        "calibration recovers the 1D optimum",
        pass,
        &format!("max rel tau error {worst_tau:.3e} (limit 1e-3), max J/|Pi u|^2 {worst_j:.3e} (limit 1e-12)"),
        start,
    );
}

#[test]
fn criterion_3_convexity_and_derivatives() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_611);
    let (mut min_d2, mut worst_d1, mut worst_d2) = (f64::INFINITY, 0.0f64, 0.0f64);
    for _ in 0..5 {
        let pe = [rng.random_range(2.0..100.0), rng.random_range(2.0..100.0)];
        let cp = CalibrationProblem::training(1, &pe, StabilizationMethod::TermByTerm, &TrainingConfig::default()).unwrap();
        let cal = Calibrator::new(&cp).unwrap();
        let (lo, hi) = cal.bracket();
        for i in 0..20 {
            let t = lo * (hi / lo).powf(i as f64 / 19.0);
            let d = cal.derivatives(t).unwrap();
            min_d2 = min_d2.min(d.d2j / d.j.max(f64::MIN_POSITIVE) * t * t);
        }
        let opt = cal.minimize(&MinimizeOptions::default()).unwrap().tau_opt;
        for t in [0.5 * opt, 2.0 * opt] {
            let d = cal.derivatives(t).unwrap();
            let h = 1e-4 * t;
            let fd1 = (cal.functional(t + h).unwrap() - cal.functional(t - h).unwrap()) / (2.0 * h);
            worst_d1 = worst_d1.max(rel(d.dj, fd1));
        }
        for t in [0.5 * opt, opt, 2.0 * opt] {
            let d = cal.derivatives(t).unwrap();
            let h = 1e-4 * t;
            let fd2 = (cal.derivatives(t + h).unwrap().dj - cal.derivatives(t - h).unwrap().dj) / (2.0 * h);
            worst_d2 = worst_d2.max(rel(d.d2j, fd2));
        }
    }
    let pass = min_d2 > 0.0 && worst_d1 <= 1e-5 && worst_d2 <= 1e-4;
    report(
        3,
        "convexity and derivative checks",
        pass,
        &format!("min scaled J'' {min_d2:.3e} (> 0), J' fd rel {worst_d1:.2e} (1e-5), J'' fd rel {worst_d2:.2e} (1e-4)"),
        start,
    );
}

#[test]
fn criterion_4_formula_suite() {
    let start = Instant::now();
    let mut fails: Vec<String> = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok {
            fails.push(name.to_string());
        }
    };
    let d = |a: f64, mu: f64, h: f64| ElementFlowData::isotropic(2, [a, 0.0], mu, h, 1);

    // 1D: P coth P − 1 at P = 5/3 (independent high-precision value).
    let (mu, h) = (0.3, 1.0);
    let a = 2.0 * mu * (5.0 / 3.0) / h;
    let expect = mu / (a * a) * 0.789_979_021_966_785_1;
    check("one_d at Pe=5/3", rel(tau_one_d(&ElementFlowData::isotropic(1, [a, 0.0], mu, h, 1)), expect) < 1e-12);
    check("one_d zero velocity", tau_one_d(&d(0.0, 1.0, 0.1)) == 0.0);
    let small = d(2.0 * 1e-4 / 0.1, 1.0, 0.1);
    check("one_d diffusive limit", rel(tau_one_d(&small), 0.1 * 0.1 / 12.0) < 1e-7);
    check("one_d advective limit", rel(tau_one_d(&d(2e8, 1.0, 0.01)), (1e6 - 1.0) / 4e16) < 1e-12);
    check("P coth P - 1 closed form", rel(p_coth_p_minus_one(3.0), 3.0 / 3f64.tanh() - 1.0) < 1e-12);

    // Codina: 1/hypot(4μ/h², 2‖a‖/h).
    let c = tau_codina(&ElementFlowData::isotropic(2, [100.0, 100.0], 1.0, 1.0 / 120.0, 1));
    check("codina value", rel(c, 1.495_746_163_786_954_4e-5) < 1e-12);
    check("codina diffusive", rel(tau_codina(&d(0.0, 2.0, 0.1)), 0.1 * 0.1 / 8.0) < 1e-12);

    // Hauke: branch crossover at h‖a‖/μ = 24.24/√3 (up to rounding).
    let h = 0.1;
    let a_cross = 24.24 * 1.0 / (3f64.sqrt() * h);
    let x = tau_hauke(&d(a_cross, 1.0, h));
    check("hauke crossover", rel(x, h * h / 24.24) < 1e-12 && rel(x, h / (3f64.sqrt() * a_cross)) < 1e-12);

    // Franca–Valentin knot at m‖a‖h/μ = 1 with m = 1/3.
    let a_knot = 3.0 / h;
    let fv = tau_franca_valentin(&d(a_knot, 1.0, h));
    check("fv knot", rel(fv, h * h / 6.0) < 1e-12 && rel(fv, h / (2.0 * a_knot)) < 1e-12);

    // Scaling τ(λ a, λ μ) = τ(a, μ)/λ.
    let base = ElementFlowData::new(2, [37.0, -12.5], 0.013, 0.05, 0.041, 2);
    for lam in [1e-3, 0.7, 3.0, 250.0] {
        let s = ElementFlowData::new(2, [37.0 * lam, -12.5 * lam], 0.013 * lam, 0.05, 0.041, 2);
        for f in TauFormula::analytic() {
            check(&format!("scaling {} at {lam}", f.name()), rel(f.eval(&s) * lam, f.eval(&base)) < 1e-12);
        }
    }
    let detail = if fails.is_empty() { "all identities hold".to_string() } else { format!("failed: {}", fails.join(", ")) };
    report(4, "formula unit suite", fails.is_empty(), &detail, start);
}

#[test]
fn criterion_5_table_fidelity() {
    let start = Instant::now();
    // synthetic biquadratic table
    let axes = vec![Axis::new(60.0, 6).with_refinement(vec![1.0, 2.5, 5.0]); 2];
    let nodes: Vec<Vec<f64>> = axes.iter().map(Axis::nodes).collect();
    let f = |x: f64, y: f64| (0.3 + 0.02 * x + 1e-4 * x * x) * (1.1 - 0.01 * y + 2e-4 * y * y);
    let shape: Vec<usize> = nodes.iter().map(Vec::len).collect();
    let values = node_indices(&shape).iter().map(|i| f(nodes[0][i[0]], nodes[1][i[1]])).collect();
    let t = PhiTable::new(2, 1, StabilizationMethod::TermByTerm, axes, values, vec![]).unwrap();
    let mut quad_err: f64 = 0.0;
    for i in 0..=40 {
        for j in 0..=40 {
            let (x, y) = (60.0 * i as f64 / 40.0 + 0.013, 60.0 * j as f64 / 40.0 * 0.999);
            let (x, y) = (x.min(60.0), y);
            quad_err = quad_err.max((t.interpolate(&[x, y]) - f(x, y)).abs() / f(x, y));
        }
    }
    let text = t.to_text();
    let round_trip = PhiTable::from_text(&text).unwrap().to_text() == text;

    // 1D calibrated table against direct calibration at mid-cells
    let mut spec = TableBuildSpec::new(1, 1, StabilizationMethod::TermByTerm);
    spec.axes = vec![Axis::new(100.0, 10).with_refinement(vec![0.625, 1.25, 2.5, 5.0])];
    let table = build_table(&spec).unwrap();
    let x = table.axis_nodes(0).to_vec();
    let mut worst_mid: f64 = 0.0;
    for w in x.windows(2).skip(1).take(10) {
        let p = 0.5 * (w[0] + w[1]);
        let cp = CalibrationProblem::training(1, &[p], StabilizationMethod::TermByTerm, &spec.training).unwrap();
        let direct = Calibrator::new(&cp).unwrap().minimize(&MinimizeOptions::default()).unwrap().phi;
        worst_mid = worst_mid.max(rel(table.interpolate(&[p]), direct));
    }
    let pass = quad_err <= 1e-13 && round_trip && worst_mid <= 0.05;
    report(
        5,
        "table fidelity",
        pass,
        &format!("quadratic rel err {quad_err:.2e} (1e-13), byte round trip {round_trip}, mid-cell rel {worst_mid:.2e} (0.05)"),
        start,
    );
}

#[test]
fn criterion_6_convergence_orders() {
    let start = Instant::now();
    let mp = ManufacturedProblem::smooth();
    let need = [1.9, 2.9, 3.8];
    let mut slopes = Vec::new();
    for l in 1..=3 {
        slopes.push(convergence_study(&mp, &ConvergenceSpec::new(l)).unwrap().slope);
    }
    let pass = slopes.iter().zip(need).all(|(s, n)| *s >= n);
    report(
        6,
        "convergence orders",
        pass,
        &format!("L2 slopes P1 {:.3} P2 {:.3} P3 {:.3} (need 1.9/2.9/3.8)", slopes[0], slopes[1], slopes[2]),
        start,
    );
}

/// Desk-scale φ table for 2D P1 term-by-term: 18 nodes per axis, training
/// references refined six times.
fn desk_table() -> PhiTable {
    let mut spec = TableBuildSpec::new(2, 1, StabilizationMethod::TermByTerm);
    spec.axes = vec![Axis::new(700.0, 10).with_refinement(vec![0.625, 1.25, 2.5, 5.0, 10.0, 20.0, 35.0]); 2];
    spec.training = TrainingConfig {
        fine_factor: Some(6),
        ..Default::default()
    };
    build_table(&spec).unwrap()
}

#[test]
fn criterion_7_desk_test1_ranking() {
    let start = Instant::now();
    let table = Arc::new(desk_table());
    let table_time = start.elapsed().as_secs_f64();
    let mut formulas = TauFormula::analytic();
    formulas.push(TauFormula::LeastSquares(table));
    let result = run_test1(&Test1Spec::desk(1), &formulas).unwrap();
    let ls = result.mean_for("ls").unwrap().l2;
    let best = result
        .means()
        .into_iter()
        .filter(|m| m.formula != "ls")
        .map(|m| m.l2)
        .fold(f64::INFINITY, f64::min);
    let mut worst_sym: f64 = 0.0;
    for f in result.formulas() {
        let by_angle = result.means_by_param1(&f);
        for i in 0..5 {
            worst_sym = worst_sym.max(rel(by_angle[i].1, by_angle[i + 5].1));
        }
    }
    let pass = ls <= 1.05 * best && worst_sym <= 0.01;
    report(
        7,
        "desk Test 1 ranking",
        pass,
        &format!(
            "LS mean L2 {ls:.4e} vs best other {best:.4e} (ratio {:.3}, limit 1.05), alpha/alpha+pi spread {worst_sym:.2e} (0.01), table {table_time:.0} s",
            ls / best
        ),
        start,
    );
}

#[test]
#[ignore = "full-scale run, hours of compute"]
fn criterion_8_full_scale_test2() {
    let start = Instant::now();
    let mut spec = TableBuildSpec::new(2, 1, StabilizationMethod::TermByTerm);
    spec.jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let table = Arc::new(build_table(&spec).unwrap());
    let formulas = vec![
        TauFormula::LeastSquares(table.clone()),
        TauFormula::LeastSquaresFlow(table),
        TauFormula::Codina,
        TauFormula::Hauke,
        TauFormula::FrancaValentin,
    ];
    let mut t2 = Test2Spec::full(1);
    t2.jobs = spec.jobs;
    let result = run_test2(&t2, &formulas).unwrap();
    let m = |f: &str| result.mean_for(f).unwrap().l2;
    let ordering = m("ls") < m("fv") && m("fv") < m("hauke").min(m("codina"));
    let close = rel(m("ls"), 0.044698) <= 0.2;
    report(
        8,
        "full-scale Test 2",
        ordering && close,
        &format!(
            "ls {:.5} lsflow {:.5} fv {:.5} hauke {:.5} codina {:.5}",
            m("ls"),
            m("lsflow"),
            m("fv"),
            m("hauke"),
            m("codina")
        ),
        start,
    );
}

#[test]
fn criterion_9_galerkin_reduction_and_skew_symmetry() {
    let start = Instant::now();
    let mut bitwise = true;
    let mut worst_skew: f64 = 0.0;
    for l in 1..=3 {
        let space = FeSpace::new(Arc::new(StructuredGrid::unit_square(5).mesh().unwrap()), l).unwrap();
        let p = ProblemSpec::new(|x| [1.0 + x[1], 2.0 - x[0]], |_| 0.01, |x| x[0] - x[1]);
        let zero = TauField::constant(space.mesh().element_count(), 0.0).unwrap();
        let gal = apply_dirichlet(assemble_galerkin(&space, &p).unwrap(), &space, &|_| 0.0).unwrap();
        for m in StabilizationMethod::ALL {
            bitwise &= assemble_stabilized(&space, &p, m, &zero).unwrap() == gal;
        }
        let a = [2.5, -1.5];
        let with = assemble_galerkin(&space, &ProblemSpec::constant(a, 1.0, 0.0)).unwrap().matrix;
        let mut c = assemble_galerkin(&space, &ProblemSpec::constant([0.0, 0.0], 1.0, 0.0)).unwrap().matrix;
        c.axpy(-1.0, &with);
        let scale = (a[0] * a[0] + a[1] * a[1]).sqrt() * space.mesh().element_geometry(0).h_k;
        let free: Vec<usize> = (0..space.ndofs()).filter(|&i| !space.is_dirichlet(i)).collect();
        for &i in &free {
            for &j in &free {
                worst_skew = worst_skew.max((c.get(i, j) + c.get(j, i)).abs() / scale);
            }
        }
    }
    let pass = bitwise && worst_skew <= 1e-12;
    report(
        9,
        "Galerkin reduction and skew symmetry",
        pass,
        &format!("tau = 0 bitwise Galerkin {bitwise}, scaled skew residual {worst_skew:.2e} (1e-12)"),
        start,
    );
}
