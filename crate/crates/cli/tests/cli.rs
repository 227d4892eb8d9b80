use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stabfem::benchmarks::NodalVelocity;
use stabfem::mesh::{BoxDomain, Mesh};
use stabfem::phi_table::PhiTable;

fn stabfem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stabfem"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn small_table(dir: &Path, name: &str, jobs: &str) -> Vec<u8> {
    let o = stabfem(
        dir,
        &["build-table", "--dim", "1", "--degree", "1", "--pmax", "50", "--nodes", "10", "--kind", "tbt", "--out", name, "--jobs", jobs],
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    fs::read(dir.join(name)).unwrap()
}

const TEST1_RUN: &str = "\
[problem]
catalog = test1
angle = 3
magnitude = 1600
[discretization]
degree = 1
cells = 10
[stabilization]
formula = codina
[reference]
fine_factor = 3
";

#[test]
fn build_table_has_eleven_nodes_and_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let a = small_table(d.path(), "t1.tab", "1");
    let t = PhiTable::from_text(&text(&a)).unwrap();
    assert_eq!(t.shape(), vec![11]);
    assert_eq!(small_table(d.path(), "t1.tab", "1"), a);
    assert_eq!(small_table(d.path(), "t8.tab", "8"), a);
    let log = fs::read_to_string(d.path().join("t1.tab.log.csv")).unwrap();
    let ok: std::collections::BTreeSet<&str> =
        log.lines().filter(|l| l.split(',').nth(2) == Some("ok")).filter_map(|l| l.split(',').next()).collect();
    assert_eq!(ok.len(), 10);
}

#[test]
fn failed_build_exits_2_and_keeps_the_trace() {
    let d = tempfile::tempdir().unwrap();
    let o = stabfem(d.path(), &["build-table", "--pmax", "10", "--nodes", "2", "--out", "bad.tab", "--bracket", "0.5,1"]);
    assert_eq!(o.status.code(), Some(2), "{}", text(&o.stderr));
    assert!(!d.path().join("bad.tab").exists());
    let log = fs::read_to_string(d.path().join("bad.tab.log.csv")).unwrap();
    assert!(log.lines().skip(1).any(|l| l.contains("failed")));
}

#[test]
fn solve_writes_one_error_row_deterministically() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.cfg"), TEST1_RUN).unwrap();
    let run = |out: &str| {
        let o = stabfem(d.path(), &["solve", "--config", "run.cfg", "--out", out]);
        assert!(o.status.success(), "{}", text(&o.stderr));
        (fs::read(d.path().join(out).join("solution.csv")).unwrap(), fs::read_to_string(d.path().join(out).join("errors.csv")).unwrap())
    };
    let (sol_a, err_a) = run("a");
    let (sol_b, err_b) = run("b");
    assert_eq!((sol_a.clone(), err_a.clone()), (sol_b, err_b));
    assert_eq!(err_a.lines().count(), 2);
    assert!(err_a.lines().nth(1).unwrap().starts_with("codina,1,"));
    // 11 × 11 P1 nodes plus the header
    assert_eq!(text(&sol_a).lines().count(), 122);
}

#[test]
fn ls_formula_needs_the_table_flag() {
    let d = tempfile::tempdir().unwrap();
    fs::write(d.path().join("run.cfg"), TEST1_RUN).unwrap();
    let o = stabfem(d.path(), &["solve", "--config", "run.cfg", "--formula", "ls"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("--table"), "{}", text(&o.stderr));

    // a 1D table drives a 1D imported problem
    small_table(d.path(), "t.tab", "1");
    let mesh = Mesh::interval(0.0, 1.0, 20).unwrap();
    fs::write(d.path().join("i.mesh"), mesh.export()).unwrap();
    fs::write(d.path().join("v.txt"), NodalVelocity::constant(mesh.node_count(), 1, [1.0, 0.0]).to_text()).unwrap();
    fs::write(
        d.path().join("line.cfg"),
        "[problem]\ncatalog = imported\nmesh = i.mesh\nvelocity = v.txt\nmu = 0.005\n[reference]\nrefinements = 2\n",
    )
    .unwrap();
    let o = stabfem(d.path(), &["solve", "--config", "line.cfg", "--formula", "ls", "--table", "t.tab", "--out", "ls"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(fs::read_to_string(d.path().join("ls/errors.csv")).unwrap().contains("\nls,1,"));
}

#[test]
fn imported_problem_solves_against_a_refined_reference() {
    let d = tempfile::tempdir().unwrap();
    let mesh = Mesh::structured(BoxDomain::unit_square(), 6, 6).unwrap();
    fs::write(d.path().join("m.mesh"), mesh.export()).unwrap();
    fs::write(d.path().join("v.txt"), NodalVelocity::constant(mesh.node_count(), 2, [1.0, 0.5]).to_text()).unwrap();
    fs::write(
        d.path().join("run.cfg"),
        "[problem]\ncatalog = imported\nmesh = m.mesh\nvelocity = v.txt\nmu = 0.01\n[stabilization]\nformula = hauke\n[reference]\nrefinements = 1\n",
    )
    .unwrap();
    let o = stabfem(d.path(), &["solve", "--config", "run.cfg", "--out", "o"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    assert!(fs::read_to_string(d.path().join("o/errors.csv")).unwrap().contains("\nhauke,1,"));
}

#[test]
fn convergence_bench_reports_the_expected_slope() {
    let d = tempfile::tempdir().unwrap();
    let o = stabfem(d.path(), &["bench", "--suite", "convergence", "--degree", "2", "--out", "b"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    let slope: f64 = out
        .split("L2 slope ")
        .nth(1)
        .and_then(|s| s.split_whitespace().next())
        .and_then(|s| s.parse().ok())
        .unwrap_or_else(|| panic!("no slope in {out}"));
    assert!(slope >= 2.9, "slope {slope}");
    assert!(d.path().join("b/convergence_p2.csv").exists());
}

#[test]
fn test2_bench_prints_one_line_per_formula() {
    let d = tempfile::tempdir().unwrap();
    let o = stabfem(
        d.path(),
        &["bench", "--suite", "test2", "--cells", "8", "--mus", "1e-3", "--fine-factor", "2", "--jobs", "2", "--out", "b"],
    );
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    for f in ["1d", "codina", "cc", "hauke", "fv"] {
        assert_eq!(out.lines().filter(|l| l.starts_with(&format!("{f} "))).count(), 1, "{out}");
    }
    let csv = fs::read_to_string(d.path().join("b/test2_p1.csv")).unwrap();
    assert!(csv.contains("formula,degree,test,param1,param2,l2,linf"));
}

#[test]
fn inspect_table_prints_axes_and_values() {
    let d = tempfile::tempdir().unwrap();
    small_table(d.path(), "t.tab", "1");
    let o = stabfem(d.path(), &["inspect-table", "--table", "t.tab", "--at", "7.5"]);
    assert!(o.status.success(), "{}", text(&o.stderr));
    let out = text(&o.stdout);
    assert!(out.contains("axis 0: pmax 50 count 10"));
    assert!(out.contains("phi([7.5]) = "));
    let o = stabfem(d.path(), &["inspect-table", "--table", "t.tab", "--at", "1,2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_1() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(stabfem(d.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(stabfem(d.path(), &["build-table"]).status.code(), Some(1));
    assert_eq!(stabfem(d.path(), &["--help"]).status.code(), Some(0));
    fs::write(d.path().join("bad.cfg"), "[problem]\ncolour = red\n").unwrap();
    let o = stabfem(d.path(), &["solve", "--config", "bad.cfg", "--formula", "codina"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("unknown key 'problem.colour'"));
    fs::write(d.path().join("run.cfg"), TEST1_RUN).unwrap();
    let o = stabfem(d.path(), &["solve", "--config", "run.cfg", "--table", "missing.tab"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(text(&o.stderr).contains("missing.tab"));
    let o = stabfem(d.path(), &["build-table", "--out", "nodir/t.tab"]);
    assert_eq!(o.status.code(), Some(1));
}
