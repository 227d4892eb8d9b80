//! Builds a reduced 2D P1 table and compares every formula on the desk
//! sweep of the unit-square suite.
//!
//! ```text
//! cargo run --release --example desk_comparison -- [out_dir]
//! ```
//!
//! Takes about eight minutes on one core in release mode.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use stabfem::assembly::StabilizationMethod;
use stabfem::benchmarks::{run_test1, Test1Spec};
use stabfem::calibration::TrainingConfig;
use stabfem::phi_table::{build_table, Axis, TableBuildSpec};
use stabfem::tau::TauFormula;

fn main() -> stabfem::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| ".".into()));
    std::fs::create_dir_all(&out)?;
    let jobs = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);

    let t = Instant::now();
    let mut spec = TableBuildSpec::new(2, 1, StabilizationMethod::TermByTerm);
    spec.axes = vec![Axis::new(700.0, 10).with_refinement(vec![0.625, 1.25, 2.5, 5.0, 10.0, 20.0, 35.0]); 2];
    spec.training = TrainingConfig {
        fine_factor: Some(6),
        ..Default::default()
    };
    spec.jobs = jobs;
    let table = build_table(&spec)?;
    std::fs::write(out.join("desk_p1.tab"), table.to_text())?;
    println!("table built in {:.0?}", t.elapsed());

    let t = Instant::now();
    let mut formulas = TauFormula::analytic();
    formulas.push(TauFormula::LeastSquares(Arc::new(table)));
    let mut run = Test1Spec::desk(1);
    run.jobs = jobs;
    let sweep = run_test1(&run, &formulas)?;
    println!("sweep finished in {:.0?}", t.elapsed());
    for line in sweep.summary_lines() {
        println!("{line}");
    }
    std::fs::write(out.join("desk_test1_p1.csv"), sweep.to_csv())?;
    Ok(())
}
