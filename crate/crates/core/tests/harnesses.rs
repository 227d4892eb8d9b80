use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stabfem::benchmarks::{
    run_test1, run_test2, run_unstructured, test1_velocity, NodalVelocity, SourceTerm, Test1Spec, Test2Spec, UnstructuredSpec,
};
use stabfem::mesh::{Mesh, StructuredGrid};
use stabfem::tau::TauFormula;

fn jittered_square(n: usize, amount: f64, seed: u64) -> Mesh {
    let base = StructuredGrid::unit_square(n).mesh().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = 1.0 / n as f64;
    let nodes = base
        .nodes()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            if base.is_boundary_node(i) {
                *p
            } else {
                [p[0] + amount * h * rng.random_range(-1.0..1.0), p[1] + amount * h * rng.random_range(-1.0..1.0)]
            }
        })
        .collect();
    let cells = base.elements().flatten().copied().collect();
    Mesh::from_parts(2, nodes, cells).unwrap()
}

#[test]
fn zero_velocity_gives_identical_term_by_term_errors() {
    let mesh = Arc::new(jittered_square(6, 0.2, 7));
    let v = NodalVelocity::constant(mesh.node_count(), 2, [0.0, 0.0]);
    let mut spec = UnstructuredSpec::new(mesh, v, 1);
    spec.mus = vec![1e-3, 1e-2];
    let t = run_unstructured(&spec, &TauFormula::analytic()).unwrap();
    for mu in [1e-3, 1e-2] {
        let rows: Vec<_> = t.rows.iter().filter(|r| r.param1 == mu).collect();
        assert!(rows.iter().all(|r| r.l2 == rows[0].l2 && r.linf == rows[0].linf));
    }
}

fn single_angle(cells: usize) -> Test1Spec {
    Test1Spec {
        cells,
        angles: vec![2],
        magnitudes: vec![40.0],
        fine_factor: 2,
        ..Test1Spec::desk(1)
    }
}

fn imported_run(mesh: Mesh) -> f64 {
    let mesh = Arc::new(mesh);
    let a = test1_velocity(40.0, 2.0 * std::f64::consts::PI / 10.0);
    let mut spec = UnstructuredSpec::new(mesh.clone(), NodalVelocity::constant(mesh.node_count(), 2, a), 1);
    spec.mus = vec![1.0];
    spec.source = SourceTerm::Test1;
    run_unstructured(&spec, &[TauFormula::Codina]).unwrap().rows[0].l2
}

#[test]
fn imported_meshes_agree_with_structured_run() {
    let structured = run_test1(&single_angle(10), &[TauFormula::Codina]).unwrap().rows[0].l2;
    let grid = StructuredGrid::unit_square(10).mesh().unwrap();
    let same = imported_run(Mesh::import_str(&grid.export()).unwrap());
    assert!((same - structured).abs() <= 1e-6 * structured, "{same} vs {structured}");
    let jittered = imported_run(jittered_square(10, 0.15, 3));
    assert!((jittered - structured).abs() <= 0.1 * structured, "{jittered} vs {structured}");
}

#[test]
fn sign_flip_symmetry_and_finite_reports() {
    let spec = Test1Spec {
        cells: 8,
        angles: vec![2, 12, 4, 14],
        magnitudes: vec![400.0, 3200.0],
        fine_factor: 3,
        ..Test1Spec::desk(2)
    };
    let t = run_test1(&spec, &TauFormula::analytic()).unwrap();
    assert!(t.rows.iter().all(|r| r.l2.is_finite() && r.linf.is_finite() && r.l2 > 0.0));
    for f in t.formulas() {
        let m = t.means_by_param1(&f);
        for (a, b) in [(0, 1), (2, 3)] {
            assert!((m[a].1 - m[b].1).abs() <= 0.01 * m[a].1, "{f}: {:?} {:?}", m[a], m[b]);
        }
    }
    let csv = t.to_csv();
    assert!(csv.contains("\nformula,degree,test,param1,param2,l2,linf\n"));
    assert_eq!(csv.lines().filter(|l| l.contains(",MEAN,MEAN,")).count(), 5);
}

#[test]
fn small_test2_run() {
    let spec = Test2Spec {
        cells: 16,
        mus: vec![4e-4, 1.6e-3],
        fine_factor: 2,
        ..Test2Spec::desk(1)
    };
    let t = run_test2(&spec, &[TauFormula::Codina, TauFormula::FrancaValentin]).unwrap();
    assert_eq!(t.rows.len(), 4);
    assert!(t.rows.iter().all(|r| r.l2.is_finite() && r.param2 > 0.0));
    // the Péclet number scales like 1/μ
    assert!((t.rows[0].peclet / t.rows[2].peclet - 4.0).abs() < 1e-9);
}
