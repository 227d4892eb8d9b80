use std::sync::Arc;

use proptest::prelude::*;

use stabfem::assembly::{assemble_stabilization, ProblemSpec, StabilizationMethod, TauField};
use stabfem::benchmarks::{SweepRow, SweepTable};
use stabfem::calibration::{CalibrationProblem, Calibrator, MinimizeOptions, TrainingConfig};
use stabfem::fe_space::FeSpace;
use stabfem::mesh::{BoxDomain, Mesh};
use stabfem::phi_table::{node_indices, Axis, PhiTable};
use stabfem::tau::{p_coth_p_minus_one, ElementFlowData, TauFormula};

fn log_uniform(lo: f64, hi: f64) -> impl Strategy<Value = f64> {
    (lo.ln()..hi.ln()).prop_map(f64::exp)
}

fn training_1d(degree: usize, pe: f64) -> Calibrator {
    let cp = CalibrationProblem::training(degree, &[pe], StabilizationMethod::TermByTerm, &TrainingConfig::default()).unwrap();
    Calibrator::new(&cp).unwrap()
}

proptest! {
    #[test]
    fn analytic_tau_is_finite_and_nonnegative(
        a1 in -1e4f64..1e4, a2 in -1e4f64..1e4, mu in log_uniform(1e-8, 1e2),
        h in log_uniform(1e-4, 1.0), shrink in 0.05f64..1.0, degree in 1usize..=3,
    ) {
        let d = ElementFlowData::new(2, [a1, a2], mu, h, h * shrink, degree);
        for f in TauFormula::analytic() {
            let t = f.eval(&d);
            prop_assert!(t.is_finite() && t >= 0.0, "{} gave {t}", f.name());
        }
    }

    #[test]
    fn p_coth_p_minus_one_increases(p in 1e-6f64..1e3, dp in 1e-3f64..10.0) {
        prop_assert!(p_coth_p_minus_one(p + dp) > p_coth_p_minus_one(p));
    }

    #[test]
    fn mesh_export_import_round_trip(nx in 1usize..6, ny in 1usize..6, x0 in -2.0f64..2.0, w in 0.1f64..3.0) {
        let m = Mesh::structured(BoxDomain::new(x0, x0 + w, 0.0, w / 3.0), nx, ny).unwrap();
        prop_assert_eq!(Mesh::import_str(&m.export()).unwrap(), m);
    }

    #[test]
    fn table_interpolant_is_continuous(vals in proptest::collection::vec(0.0f64..1.0, 13), x in 0.0f64..50.0) {
        let t = PhiTable::new(1, 1, StabilizationMethod::TermByTerm, vec![Axis::new(50.0, 10).with_refinement(vec![1.0, 2.5])], vals, vec![]).unwrap();
        let nodes = t.axis_nodes(0).to_vec();
        for &n in &nodes {
            // a jump would survive the vanishing offset; the slope term is below 1e-10
            let (l, r) = (t.interpolate(&[n - 1e-12]), t.interpolate(&[n + 1e-12]));
            prop_assert!((l - r).abs() <= 1e-9, "jump {} at {n}", l - r);
        }
        prop_assert!(t.interpolate(&[x]).is_finite());
    }

    #[test]
    fn sweep_means_ignore_row_order(l2 in proptest::collection::vec(0.0f64..1.0, 12), seed in any::<u64>()) {
        let rows: Vec<SweepRow> = l2.iter().enumerate().map(|(i, &e)| SweepRow {
            formula: ["a", "b", "c"][i % 3].into(), param1: (i / 3) as f64, param2: 0.0, peclet: 1.0, l2: e, linf: e * 2.0,
        }).collect();
        let mut shuffled = rows.clone();
        let n = shuffled.len();
        for i in 0..n {
            shuffled.swap(i, (seed as usize).wrapping_mul(i + 7) % n);
        }
        let a = SweepTable { rows, ..Default::default() };
        let b = SweepTable { rows: shuffled, ..Default::default() };
        for f in ["a", "b", "c"] {
            let (ma, mb) = (a.mean_for(f).unwrap(), b.mean_for(f).unwrap());
            prop_assert!((ma.l2 - mb.l2).abs() <= 1e-15 && (ma.linf - mb.linf).abs() <= 1e-15);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn stabilization_forms_are_positive_or_symmetric(
        v in proptest::collection::vec(-1.0f64..1.0, 49), taus in proptest::collection::vec(0.0f64..0.1, 18), degree in 1usize..=2,
    ) {
        let mesh = Arc::new(Mesh::structured(BoxDomain::unit_square(), 3, 3).unwrap());
        let space = FeSpace::new(mesh, degree).unwrap();
        let p = ProblemSpec::new(|x| [1.0 + x[1], -0.5 + x[0]], |_| 0.05, |_| 1.0);
        let tau = TauField::new(taus).unwrap();
        let v = &v[..space.ndofs()];
        let s = assemble_stabilization(&space, &p, StabilizationMethod::TermByTerm, &tau).unwrap().matrix;
        let scale = s.values().iter().fold(0.0f64, |m, x| m.max(x.abs())) * space.ndofs() as f64;
        prop_assert!(s.dot_form(v, v) >= -1e-12 * scale);
        let ls = assemble_stabilization(&space, &p, StabilizationMethod::LeastSquares, &tau).unwrap().matrix;
        for i in 0..space.ndofs() {
            for j in 0..space.ndofs() {
                prop_assert!((ls.get(i, j) - ls.get(j, i)).abs() <= 1e-13 * scale);
            }
        }
        prop_assert!(ls.dot_form(v, v) >= -1e-12 * scale);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10))]

    #[test]
    fn functional_derivatives_match_finite_differences(pe in log_uniform(0.3, 300.0), s in 0.3f64..3.0) {
        let cal = training_1d(2, pe);
        let opt = cal.minimize(&MinimizeOptions::default()).unwrap().tau_opt;
        let t = opt * s;
        let d = cal.derivatives(t).unwrap();
        let h = 1e-4 * t;
        let j = |x: f64| cal.functional(x).unwrap();
        prop_assert!(d.j >= 0.0);
        if (s - 1.0).abs() > 0.1 {
            let fd1 = (j(t + h) - j(t - h)) / (2.0 * h);
            prop_assert!((d.dj - fd1).abs() <= 1e-5 * fd1.abs(), "J' {} vs {}", d.dj, fd1);
        }
        let fd2 = (cal.derivatives(t + h).unwrap().dj - cal.derivatives(t - h).unwrap().dj) / (2.0 * h);
        prop_assert!((d.d2j - fd2).abs() <= 1e-4 * fd2.abs(), "J'' {} vs {}", d.d2j, fd2);
    }

    #[test]
    fn minimizer_beats_bracket_samples(pe in log_uniform(0.5, 500.0), degree in 1usize..=3) {
        let cal = training_1d(degree, pe);
        let r = cal.minimize(&MinimizeOptions::default()).unwrap();
        let (lo, hi) = cal.bracket();
        for i in 0..50 {
            let t = lo + (hi - lo) * i as f64 / 49.0;
            let j = cal.functional(t).unwrap();
            prop_assert!(j.is_finite() && j >= 0.0);
            prop_assert!(r.j_min <= j * (1.0 + 1e-9) + 1e-300);
        }
    }
}

#[test]
fn tbt_table_values_are_reused_by_the_formula() {
    let axes = vec![Axis::new(10.0, 2)];
    let shape: Vec<usize> = axes.iter().map(|a| a.nodes().len()).collect();
    let values: Vec<f64> = node_indices(&shape).iter().map(|i| 0.1 * (i[0] + 1) as f64).collect();
    let t = Arc::new(PhiTable::new(1, 1, StabilizationMethod::TermByTerm, axes, values, vec![]).unwrap());
    // P = 5 sits on a node, so τ = φ h / ‖a‖ exactly
    let d = ElementFlowData::isotropic(1, [10.0, 0.0], 1.0, 1.0, 1);
    let tau = TauFormula::LeastSquares(t).eval(&d);
    assert!((tau - 0.2 * 1.0 / 10.0).abs() < 1e-15);
}
