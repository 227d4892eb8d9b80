use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use log::{info, warn};

use stabfem::assembly::{solve_stabilized, ProblemSpec, StabilizationMethod};
use stabfem::benchmarks::{
    run_test1, run_test2, run_unstructured, convergence_study, test1_velocity, test2_velocity, ConvergenceSpec,
    ErrorReport, ManufacturedProblem, NodalVelocity, SourceTerm, Test1Spec, Test2Spec, UnstructuredSpec,
};
use stabfem::calibration::{default_fine_factor, reference_solution, ReferenceConfig};
use stabfem::fe_space::{DiscreteFunction, FeSpace};
use stabfem::mesh::{BoxDomain, Mesh, StructuredGrid};
use stabfem::phi_table::{assemble_table, build_log_csv, calibrate_nodes, Axis, PhiTable, TableBuildSpec};
use stabfem::tau::{flow_data, tau_field, TauFormula};

use crate::config::{parse_list, RunConfig};
use crate::output::{check_input, check_writable_target, write_atomic};

#[derive(Debug, Args)]
pub struct BuildTableArgs {
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    /// Largest Péclet number per axis.
    #[arg(long, default_value_t = 700.0)]
    pub pmax: f64,
    /// Uniform intervals per axis; the axis has `nodes + 1` uniform nodes.
    #[arg(long, default_value_t = 35)]
    pub nodes: usize,
    #[arg(long, default_value = "tbt")]
    pub kind: StabilizationMethod,
    #[arg(long)]
    pub out: PathBuf,
    /// Calibration trace; defaults to `<out>.log.csv`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Extra nodes added to every axis, e.g. `0.625,1.25,2.5`.
    #[arg(long, value_delimiter = ',')]
    pub refine: Vec<f64>,
    /// Reference refinement of the training mesh.
    #[arg(long)]
    pub fine_factor: Option<usize>,
    /// Training cells per axis for P1 (divided by the degree).
    #[arg(long)]
    pub training_cells: Option<usize>,
    /// Bracket expansion `LO,HI`: τ is searched in
    /// `[min analytic τ / LO, HI · max analytic τ]`.
    #[arg(long, value_delimiter = ',')]
    pub bracket: Vec<f64>,
    /// Fill failed nodes from their nearest successful neighbour.
    #[arg(long)]
    pub skip_failed: bool,
}

pub fn build_table(args: &BuildTableArgs) -> Result<()> {
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.log.csv", args.out.display())));
    check_writable_target(&args.out)?;
    check_writable_target(&log_path)?;
    let mut spec = TableBuildSpec::new(args.dim, args.degree, args.kind);
    spec.axes = vec![Axis::new(args.pmax, args.nodes).with_refinement(args.refine.clone()); args.dim];
    spec.training.fine_factor = args.fine_factor;
    if let Some(c) = args.training_cells {
        spec.training.cells_p1 = c;
    }
    match args.bracket[..] {
        [] => {}
        [lo, hi] => spec.training.bracket_expansion = (lo, hi),
        _ => bail!("--bracket takes two factors LO,HI"),
    }
    spec.jobs = args.jobs;
    spec.skip_failed = args.skip_failed;
    spec.validate()?;

    info!("calibrating {} nodes", spec.axes.iter().map(|a| a.nodes().len()).product::<usize>());
    let reports = calibrate_nodes(&spec)?;
    write_atomic(&log_path, build_log_csv(&reports).as_bytes())?;
    let table = assemble_table(&spec, &reports).with_context(|| format!("build log kept at {}", log_path.display()))?;
    write_atomic(&args.out, table.to_text().as_bytes())?;
    let failed = reports
        .iter()
        .filter(|r| r.outcome.is_err() && r.index.iter().any(|&i| i > 0))
        .count();
    println!(
        "wrote {} ({} nodes, shape {:?}, {} failed) and {}",
        args.out.display(),
        table.values().len(),
        table.shape(),
        failed,
        log_path.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Evaluate the interpolant at a Péclet point, e.g. `--at 12.5,3`.
    #[arg(long, value_delimiter = ',')]
    pub at: Vec<f64>,
}

pub fn inspect_table(args: &InspectArgs) -> Result<()> {
    let t = load_table(&args.table)?;
    println!("dim {}  degree {}  kind {}", t.dim(), t.degree(), t.kind());
    for (i, a) in t.axes().iter().enumerate() {
        println!("axis {i}: pmax {} count {} refinement {:?} ({} nodes)", a.pmax, a.count, a.refinement, t.axis_nodes(i).len());
    }
    let (lo, hi) = t.values().iter().fold((f64::INFINITY, 0.0f64), |(l, h), &v| (l.min(v), h.max(v)));
    println!("phi range {lo:e} .. {hi:e}");
    for (k, v) in t.metadata() {
        println!("{k} = {v}");
    }
    if !args.at.is_empty() {
        if args.at.len() != t.dim() {
            bail!("--at needs {} coordinates, got {}", t.dim(), args.at.len());
        }
        println!("phi({:?}) = {:e}", args.at, t.interpolate(&args.at));
    }
    Ok(())
}

fn load_table(path: &Path) -> Result<PhiTable> {
    check_input(path, "table")?;
    let f = fs::File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    PhiTable::load(std::io::BufReader::new(f)).with_context(|| format!("cannot load table {}", path.display()))
}

pub const SOLVE_KEYS: &[&str] = &[
    "problem.catalog",
    "problem.angle",
    "problem.magnitude",
    "problem.mu",
    "problem.mesh",
    "problem.velocity",
    "problem.source",
    "discretization.degree",
    "discretization.cells",
    "discretization.method",
    "stabilization.formula",
    "stabilization.table",
    "reference.fine_factor",
    "reference.refinements",
    "output.dir",
];

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Run file with `[problem]`, `[discretization]`, `[stabilization]`,
    /// `[reference]` and `[output]` sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub formula: Option<String>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override a config entry: `--set problem.mu=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

enum Domain {
    Structured(StructuredGrid),
    Imported { mesh: Arc<Mesh>, refinements: usize },
}

pub fn solve(args: &SolveArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p, SOLVE_KEYS)?,
        None => RunConfig::empty(SOLVE_KEYS),
    };
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{o}'"))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let table_path = args.table.clone().or_else(|| cfg.path("stabilization.table"));
    let out_dir = args.out.clone().or_else(|| cfg.path("output.dir")).unwrap_or_else(|| PathBuf::from("."));
    let formula_name = args.formula.clone().or_else(|| cfg.get("stabilization.formula").map(str::to_string));
    let formula_name = formula_name.ok_or_else(|| anyhow!("no formula given (--formula or stabilization.formula)"))?;
    let catalog = cfg.require("problem.catalog")?.to_string();
    let degree: usize = cfg.parsed_or("discretization.degree", 1)?;
    let method: StabilizationMethod = cfg.parsed_or("discretization.method", StabilizationMethod::TermByTerm)?;

    // paths first, then the formula, before any numerical work
    if let Some(p) = &table_path {
        check_input(p, "table")?;
    }
    for key in ["problem.mesh", "problem.velocity"] {
        if let Some(p) = cfg.path(key) {
            check_input(&p, key)?;
        }
    }
    fs::create_dir_all(&out_dir).with_context(|| format!("cannot create {}", out_dir.display()))?;
    let table = table_path.as_deref().map(load_table).transpose()?.map(Arc::new);
    if let Some(t) = &table {
        if t.degree() != degree {
            warn!("table was built for degree {}, solving with degree {degree}", t.degree());
        }
    }
    let formula = TauFormula::parse(&formula_name, table)?;

    let (problem, domain) = match catalog.as_str() {
        "test1" => {
            let n: usize = cfg.parsed_or("problem.angle", 0)?;
            let k: f64 = cfg.parsed_or("problem.magnitude", 1600.0)?;
            let cells = cfg.parsed_or("discretization.cells", 20)?;
            let p = ProblemSpec::constant(test1_velocity(k, n as f64 * PI / 10.0), 1.0, 0.0)
                .with_source(|x| (PI * x[0]).sin() * (PI * x[1]).cos());
            (p, Domain::Structured(StructuredGrid::unit_square(cells)))
        }
        "test2" => {
            let mu: f64 = cfg.parsed("problem.mu")?.ok_or_else(|| anyhow!("test2 needs problem.mu"))?;
            let cells: usize = cfg.parsed_or("discretization.cells", 32)?;
            let grid = StructuredGrid::Rectangle {
                domain: BoxDomain::new(0.0, 1.0, 0.0, 0.5),
                nx: cells,
                ny: cells / 2,
            };
            (ProblemSpec::new(test2_velocity, move |_| mu, |_| 1.0), Domain::Structured(grid))
        }
        "imported" => {
            let mu: f64 = cfg.parsed("problem.mu")?.ok_or_else(|| anyhow!("imported needs problem.mu"))?;
            let mesh_path = cfg.path("problem.mesh").ok_or_else(|| anyhow!("imported needs problem.mesh"))?;
            let vel_path = cfg.path("problem.velocity").ok_or_else(|| anyhow!("imported needs problem.velocity"))?;
            let mesh = Arc::new(Mesh::import(fs::File::open(&mesh_path)?).with_context(|| format!("in {}", mesh_path.display()))?);
            let vel = NodalVelocity::parse(&fs::read_to_string(&vel_path)?).with_context(|| format!("in {}", vel_path.display()))?;
            let source = parse_source(cfg.get("problem.source").unwrap_or("1"))?;
            let mut p = ProblemSpec::constant([0.0; 2], mu, 0.0).with_source(move |x| source.eval(x));
            p.velocity = vel.field(mesh.clone())?;
            let refinements = cfg.parsed_or("reference.refinements", 1)?;
            (p, Domain::Imported { mesh, refinements })
        }
        other => bail!("unknown catalog entry '{other}' (expected test1, test2 or imported)"),
    };

    let mesh = match &domain {
        Domain::Structured(g) => Arc::new(g.mesh()?),
        Domain::Imported { mesh, .. } => mesh.clone(),
    };
    let space = Arc::new(FeSpace::new(mesh, degree)?);
    let tau = tau_field(&space, &problem, &formula)?;
    let (u, report) = solve_stabilized(&space, &problem, method, &tau)?;
    info!("solved {} dofs, residual {:e}", space.ndofs(), report.relative_residual);
    write_atomic(&out_dir.join("solution.csv"), solution_csv(&u).as_bytes())?;

    if cfg.has_section("reference") {
        let reference = match &domain {
            Domain::Structured(grid) => {
                let rc = ReferenceConfig {
                    fine_factor: cfg.parsed_or("reference.fine_factor", default_fine_factor(degree))?,
                    formula: TauFormula::Codina,
                    degree: None,
                };
                reference_solution(grid, degree, &problem, method, &rc)?
            }
            Domain::Imported { mesh, refinements } => {
                let mut fine = (**mesh).clone();
                for _ in 0..*refinements {
                    fine = fine.refine_uniform()?;
                }
                let fs = Arc::new(FeSpace::new(Arc::new(fine), degree)?);
                let t = tau_field(&fs, &problem, &TauFormula::Codina)?;
                solve_stabilized(&fs, &problem, method, &t)?.0
            }
        };
        let pe = flow_data(&space, &problem)?.iter().map(|d| d.peclet()).fold(0.0, f64::max);
        let r = ErrorReport::compute(&u, &reference, formula.name(), format!("{pe:e}"))?;
        let csv = format!(
            "formula,degree,peclet,mesh,l2,linf\n{},{},{},\"{}\",{:e},{:e}\n",
            r.formula, r.degree, r.peclet, r.mesh, r.l2, r.linf
        );
        write_atomic(&out_dir.join("errors.csv"), csv.as_bytes())?;
        println!("{} P{}: L2 {:.4e}  Linf {:.4e}  max Pe {}", r.formula, r.degree, r.l2, r.linf, r.peclet);
    } else {
        println!("{} P{}: {} dofs written to {}", formula.name(), degree, space.ndofs(), out_dir.display());
    }
    Ok(())
}

fn parse_source(s: &str) -> Result<SourceTerm> {
    if s == "test1" {
        return Ok(SourceTerm::Test1);
    }
    s.parse::<f64>()
        .map(SourceTerm::Constant)
        .map_err(|_| anyhow!("source must be a number or 'test1', got '{s}'"))
}

fn solution_csv(u: &DiscreteFunction) -> String {
    let mut s = String::from("dof,x,y,u\n");
    for (i, (p, v)) in u.space.dof_coords().iter().zip(&u.values).enumerate() {
        s.push_str(&format!("{i},{},{},{:e}\n", p[0], p[1], v));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Test1,
    Test2,
    Unstructured,
    Convergence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Scale {
    Desk,
    #[value(alias = "paper")]
    Full,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_enum)]
    pub suite: Suite,
    #[arg(long, value_enum, default_value = "desk")]
    pub scale: Scale,
    #[arg(long, default_value_t = 1)]
    pub degree: usize,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Adds `ls` and `lsflow` to the compared formulas.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Restrict the compared formulas, e.g. `codina,ls`.
    #[arg(long, value_delimiter = ',')]
    pub formulas: Vec<String>,
    #[arg(long, default_value = "tbt")]
    pub method: StabilizationMethod,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub fine_factor: Option<usize>,
    /// Imported mesh for the unstructured suite.
    #[arg(long)]
    pub mesh: Option<PathBuf>,
    /// Nodal velocity for the unstructured suite.
    #[arg(long)]
    pub velocity: Option<PathBuf>,
    #[arg(long)]
    pub mus: Option<String>,
    #[arg(long)]
    pub refinements: Option<usize>,
}

pub fn bench(args: &BenchArgs) -> Result<()> {
    if let Some(p) = &args.table {
        check_input(p, "table")?;
    }
    if args.suite == Suite::Unstructured {
        let m = args.mesh.as_ref().ok_or_else(|| anyhow!("the unstructured suite needs --mesh"))?;
        check_input(m, "mesh")?;
        if let Some(v) = &args.velocity {
            check_input(v, "velocity")?;
        }
    }
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    let mus = args.mus.as_deref().map(parse_list::<f64>).transpose()?;

    if args.suite == Suite::Convergence {
        let mut spec = ConvergenceSpec::new(args.degree);
        if let Some(t) = args.table.as_deref() {
            let t = Arc::new(load_table(t)?);
            if let Some(name) = args.formulas.first() {
                spec.formula = TauFormula::parse(name, Some(t))?;
            }
        } else if let Some(name) = args.formulas.first() {
            spec.formula = TauFormula::parse(name, None)?;
        }
        let r = convergence_study(&ManufacturedProblem::smooth(), &spec)?;
        write_atomic(&args.out.join(format!("convergence_p{}.csv", args.degree)), r.to_csv().as_bytes())?;
        println!(
            "convergence P{} {}: L2 slope {:.3} (interpolation {:.3})",
            args.degree,
            spec.formula.name(),
            r.slope,
            r.interpolation_slope
        );
        return Ok(());
    }

    let table = args.table.as_deref().map(load_table).transpose()?.map(Arc::new);
    let formulas = select_formulas(&args.formulas, table)?;
    let sweep = match args.suite {
        Suite::Test1 => {
            let mut s = match args.scale {
                Scale::Desk => Test1Spec::desk(args.degree),
                Scale::Full => Test1Spec::full(args.degree),
            };
            s.method = args.method;
            s.jobs = args.jobs;
            s.cells = args.cells.unwrap_or(s.cells);
            s.fine_factor = args.fine_factor.unwrap_or(s.fine_factor);
            run_test1(&s, &formulas)?
        }
        Suite::Test2 => {
            let mut s = match args.scale {
                Scale::Desk => Test2Spec::desk(args.degree),
                Scale::Full => Test2Spec::full(args.degree),
            };
            s.method = args.method;
            s.jobs = args.jobs;
            s.cells = args.cells.unwrap_or(s.cells);
            s.fine_factor = args.fine_factor.unwrap_or(s.fine_factor);
            if let Some(m) = mus {
                s.mus = m;
            }
            run_test2(&s, &formulas)?
        }
        Suite::Unstructured => {
            let mesh_path = args.mesh.as_ref().expect("checked above");
            let mesh = Arc::new(Mesh::import(fs::File::open(mesh_path)?).with_context(|| format!("in {}", mesh_path.display()))?);
            let velocity = match &args.velocity {
                Some(p) => NodalVelocity::parse(&fs::read_to_string(p)?).with_context(|| format!("in {}", p.display()))?,
                None => {
                    warn!("no --velocity given, using the test2 field at the mesh nodes");
                    NodalVelocity {
                        dim: mesh.dim(),
                        values: mesh.nodes().iter().map(|&p| test2_velocity(p)).collect(),
                    }
                }
            };
            let mut s = UnstructuredSpec::new(mesh, velocity, args.degree);
            s.method = args.method;
            s.jobs = args.jobs;
            s.refinements = args.refinements.unwrap_or(s.refinements);
            if let Some(m) = mus {
                s.mus = m;
            }
            run_unstructured(&s, &formulas)?
        }
        Suite::Convergence => unreachable!(),
    };
    let name = format!("{}_p{}.csv", sweep.test, args.degree);
    write_atomic(&args.out.join(&name), sweep.to_csv().as_bytes())?;
    println!("{} P{} ({} rows) -> {}", sweep.test, args.degree, sweep.rows.len(), args.out.join(&name).display());
    for line in sweep.summary_lines() {
        println!("{line}");
    }
    Ok(())
}

fn select_formulas(names: &[String], table: Option<Arc<PhiTable>>) -> Result<Vec<TauFormula>> {
    if names.is_empty() {
        let mut f = TauFormula::analytic();
        match table {
            Some(t) => {
                f.push(TauFormula::LeastSquares(t.clone()));
                f.push(TauFormula::LeastSquaresFlow(t));
            }
            None => warn!("no --table given, comparing analytic formulas only"),
        }
        return Ok(f);
    }
    Ok(names.iter().map(|n| TauFormula::parse(n, table.clone())).collect::<stabfem::Result<_>>()?)
}
