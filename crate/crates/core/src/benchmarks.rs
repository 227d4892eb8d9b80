//! Error metrics and benchmark harnesses.
//!
//! Every sweep point computes one reference solution on a refined grid and
//! compares each formula against its interpolant `Π_h u_ref` on the coarse
//! space. `L²` uses the coarse mass matrix; `L∞` is the maximum over the
//! coarse Lagrange nodes.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;

use crate::assembly::{assemble_mass, element_qps, solve_stabilized, ProblemSpec, ScalarField, StabilizationMethod, VectorField};
use crate::calibration::{reference_solution, ReferenceConfig};
use crate::error::{invalid, parse_err, Error, Result};
use crate::fe_space::{quadrature_for, DiscreteFunction, FeSpace, Purpose};
use crate::linear_solver::CsrMatrix;
use crate::mesh::{BoxDomain, Mesh, Point, PointLocator, StructuredGrid};
use crate::tau::{flow_data, tau_field, TauFormula};

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub l2: f64,
    pub linf: f64,
    pub formula: String,
    pub peclet: String,
    pub mesh: String,
    pub degree: usize,
}

/// `(‖e‖_{L²}, max_i |e_i|)` for a coefficient vector `e` and mass matrix `M`.
fn norms_of(e: &[f64], mass: &CsrMatrix) -> (f64, f64) {
    let l2 = mass.dot_form(e, e).max(0.0).sqrt();
    let linf = e.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (l2, linf)
}

/// `L²` and nodal `L∞` norms of `u_h − Π_h u_ref`. The reference may live on
/// any mesh covering the coarse one; it is sampled at coarse nodes.
pub fn error_norms(u_h: &DiscreteFunction, u_ref: &DiscreteFunction) -> Result<(f64, f64)> {
    let space = &u_h.space;
    let pi = u_ref.interpolate_onto(space)?;
    let mass = assemble_mass(space)?;
    let e: Vec<f64> = u_h.values.iter().zip(&pi.values).map(|(a, b)| a - b).collect();
    Ok(norms_of(&e, &mass))
}

impl ErrorReport {
    pub fn compute(
        u_h: &DiscreteFunction,
        u_ref: &DiscreteFunction,
        formula: impl Into<String>,
        peclet: impl Into<String>,
    ) -> Result<Self> {
        let (l2, linf) = error_norms(u_h, u_ref)?;
        let m = u_h.space.mesh();
        Ok(ErrorReport {
            l2,
            linf,
            formula: formula.into(),
            peclet: peclet.into(),
            mesh: format!("{} nodes, {} elements", m.node_count(), m.element_count()),
            degree: u_h.space.degree(),
        })
    }
}

/// One (formula, sweep point) result.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub formula: String,
    pub param1: f64,
    pub param2: f64,
    /// Largest element Péclet number `h_K‖ā‖/(2lμ)` at this point.
    pub peclet: f64,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormulaMean {
    pub formula: String,
    pub l2: f64,
    pub linf: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SweepTable {
    pub test: String,
    pub degree: usize,
    pub rows: Vec<SweepRow>,
    pub metadata: Vec<(String, String)>,
    /// Emit per-`param1` aggregate rows (angles in Test 1).
    pub group_by_param1: bool,
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a SweepRow>) -> (f64, f64) {
    let (mut s2, mut si, mut n) = (0.0, 0.0, 0usize);
    for r in rows {
        s2 += r.l2;
        si += r.linf;
        n += 1;
    }
    (s2 / n.max(1) as f64, si / n.max(1) as f64)
}

impl SweepTable {
    pub fn formulas(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.formula) {
                out.push(r.formula.clone());
            }
        }
        out
    }

    /// Arithmetic means over all sweep points, per formula.
    pub fn means(&self) -> Vec<FormulaMean> {
        self.formulas()
            .into_iter()
            .map(|f| {
                let (l2, linf) = mean_of(self.rows.iter().filter(|r| r.formula == f));
                FormulaMean { formula: f, l2, linf }
            })
            .collect()
    }

    pub fn mean_for(&self, formula: &str) -> Option<FormulaMean> {
        self.means().into_iter().find(|m| m.formula == formula)
    }

    /// Means over rows sharing `param1`, in first-appearance order.
    pub fn means_by_param1(&self, formula: &str) -> Vec<(f64, f64, f64)> {
        let mut keys: Vec<f64> = Vec::new();
        for r in self.rows.iter().filter(|r| r.formula == formula) {
            if !keys.contains(&r.param1) {
                keys.push(r.param1);
            }
        }
        keys.into_iter()
            .map(|k| {
                let (l2, linf) = mean_of(self.rows.iter().filter(|r| r.formula == formula && r.param1 == k));
                (k, l2, linf)
            })
            .collect()
    }

    pub fn peclet_range(&self) -> (f64, f64) {
        self.rows
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.peclet), hi.max(r.peclet)))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s.push_str("formula,degree,test,param1,param2,l2,linf\n");
        let (t, d) = (&self.test, self.degree);
        for r in &self.rows {
            let _ = writeln!(s, "{},{d},{t},{},{},{:e},{:e}", r.formula, r.param1, r.param2, r.l2, r.linf);
        }
        for f in self.formulas() {
            if self.group_by_param1 {
                for (p, l2, linf) in self.means_by_param1(&f) {
                    let _ = writeln!(s, "{f},{d},{t},{p},MEAN,{l2:e},{linf:e}");
                }
            }
            let m = self.mean_for(&f).expect("formula present");
            let _ = writeln!(s, "{f},{d},{t},MEAN,MEAN,{:e},{:e}", m.l2, m.linf);
        }
        s
    }

    /// One line per formula, best mean `L²` first.
    pub fn summary_lines(&self) -> Vec<String> {
        let mut m = self.means();
        m.sort_by(|a, b| a.l2.total_cmp(&b.l2));
        m.iter()
            .map(|m| format!("{:<8} mean L2 {:.4e}  mean Linf {:.4e}", m.formula, m.l2, m.linf))
            .collect()
    }
}

fn par_map<T: Send>(jobs: usize, n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Result<Vec<T>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| (0..n).into_par_iter().map(f).collect()))
}

/// Solves every formula on `space` and compares against `reference`.
fn evaluate_formulas(
    space: &Arc<FeSpace>,
    problem: &ProblemSpec,
    method: StabilizationMethod,
    formulas: &[TauFormula],
    reference: &DiscreteFunction,
) -> Result<(f64, Vec<(f64, f64)>)> {
    let pi = reference.interpolate_onto(space)?;
    let mass = assemble_mass(space)?;
    let pe = flow_data(space, problem)?.iter().map(|d| d.peclet()).fold(0.0, f64::max);
    let mut out = Vec::with_capacity(formulas.len());
    for f in formulas {
        let tau = tau_field(space, problem, f)?;
        let (u, _) = solve_stabilized(space, problem, method, &tau)?;
        let e: Vec<f64> = u.values.iter().zip(&pi.values).map(|(a, b)| a - b).collect();
        let (l2, linf) = norms_of(&e, &mass);
        if !(l2.is_finite() && linf.is_finite()) {
            return Err(Error::NonFinite {
                value: l2,
                x: f64::NAN,
                y: f64::NAN,
                context: format!("error norm for formula {}", f.name()),
            });
        }
        out.push((l2, linf));
    }
    Ok((pe, out))
}

fn check_formulas(formulas: &[TauFormula]) -> Result<()> {
    if formulas.is_empty() {
        return Err(invalid("formula list is empty"));
    }
    Ok(())
}

/// `(k√2 cos α, k√2 sin α)`.
pub fn test1_velocity(k: f64, alpha: f64) -> [f64; 2] {
    let s = k * 2f64.sqrt();
    [s * alpha.cos(), s * alpha.sin()]
}

/// Piecewise rotational field, slowed down inside the disc of radius 0.01
/// around `(0.5, 0.5)`.
pub fn test2_velocity(p: Point) -> [f64; 2] {
    let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
    let s = if dx.hypot(dy) < 0.01 { 0.1 } else { 2.0 };
    [-s * dy, s * dx]
}

/// Constant velocity at angles `α = nπ/10` and magnitudes `k`.
#[derive(Debug, Clone)]
pub struct Test1Spec {
    pub degree: usize,
    pub cells: usize,
    /// Angle indices `n`, `α = nπ/10`.
    pub angles: Vec<usize>,
    pub magnitudes: Vec<f64>,
    pub fine_factor: usize,
    pub method: StabilizationMethod,
    pub jobs: usize,
}

pub fn full_magnitudes() -> Vec<f64> {
    (0..9).map(|j| 400.0 * 2f64.powi(j)).collect()
}

impl Test1Spec {
    /// Meshes `1/120, 1/60, 1/40`, `k = 400 … 102400`, reference `h/10`.
    pub fn full(degree: usize) -> Self {
        Test1Spec {
            degree,
            cells: [120, 60, 40][degree.clamp(1, 3) - 1],
            angles: (0..10).map(|i| 2 * i).collect(),
            magnitudes: full_magnitudes(),
            fine_factor: 10,
            method: StabilizationMethod::TermByTerm,
            jobs: 1,
        }
    }

    /// Meshes three times coarser, `k ∈ {1600, 6400, 25600}`, reference `h/6`.
    pub fn desk(degree: usize) -> Self {
        Test1Spec {
            cells: [40, 20, 14][degree.clamp(1, 3) - 1],
            magnitudes: vec![1600.0, 6400.0, 25600.0],
            fine_factor: 6,
            ..Self::full(degree)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.angles.is_empty() || self.magnitudes.is_empty() || self.cells == 0 {
            return Err(invalid("test1 needs angles, magnitudes and a positive cell count"));
        }
        Ok(())
    }
}

/// Unit square, `μ = 1`, `f = sin(πx)cos(πy)`. `param1 = α`, `param2 = k`.
pub fn run_test1(spec: &Test1Spec, formulas: &[TauFormula]) -> Result<SweepTable> {
    spec.validate()?;
    check_formulas(formulas)?;
    let grid = StructuredGrid::unit_square(spec.cells);
    let space = Arc::new(FeSpace::new(Arc::new(grid.mesh()?), spec.degree)?);
    let points: Vec<(f64, f64)> = spec
        .angles
        .iter()
        .flat_map(|&n| spec.magnitudes.iter().map(move |&k| (n as f64 * PI / 10.0, k)))
        .collect();
    let cfg = ReferenceConfig {
        fine_factor: spec.fine_factor,
        formula: TauFormula::Codina,
        degree: None,
    };
    let results = par_map(spec.jobs, points.len(), |i| {
        let (alpha, k) = points[i];
        let problem = ProblemSpec::constant(test1_velocity(k, alpha), 1.0, 0.0).with_source(|p: Point| (PI * p[0]).sin() * (PI * p[1]).cos());
        let reference = reference_solution(&grid, spec.degree, &problem, spec.method, &cfg)?;
        evaluate_formulas(&space, &problem, spec.method, formulas, &reference)
    })?;
    let mut table = SweepTable {
        test: "test1".into(),
        degree: spec.degree,
        group_by_param1: true,
        ..Default::default()
    };
    for ((alpha, k), res) in points.iter().zip(results) {
        let (pe, errs) = res?;
        for (f, (l2, linf)) in formulas.iter().zip(errs) {
            table.rows.push(SweepRow {
                formula: f.name().into(),
                param1: *alpha,
                param2: *k,
                peclet: pe,
                l2,
                linf,
            });
        }
    }
    let (lo, hi) = table.peclet_range();
    let leg = spec.cells as f64 * spec.degree as f64;
    let pe_leg = |k: f64| k * 2f64.sqrt() / (2.0 * leg);
    let kmin = spec.magnitudes.iter().cloned().fold(f64::INFINITY, f64::min);
    let kmax = spec.magnitudes.iter().cloned().fold(0.0, f64::max);
    table.metadata = vec![
        ("cells".into(), spec.cells.to_string()),
        ("method".into(), spec.method.name().into()),
        ("reference".into(), format!("codina fine_factor {}", spec.fine_factor)),
        ("linf".into(), "max over coarse Lagrange nodes".into()),
        ("param1".into(), "angle alpha (rad)".into()),
        ("param2".into(), "magnitude k".into()),
        ("peclet_range_diameter".into(), format!("{lo:e} {hi:e}")),
        ("peclet_range_leg".into(), format!("{:e} {:e}", pe_leg(kmin), pe_leg(kmax))),
    ];
    Ok(table)
}

pub fn full_mus_test2() -> Vec<f64> {
    (0..8).map(|j| 1.25e-5 * 2f64.powi(j)).collect()
}

#[derive(Debug, Clone)]
pub struct Test2Spec {
    pub degree: usize,
    /// Cells along `x`; the rectangle has half as many along `y`.
    pub cells: usize,
    pub mus: Vec<f64>,
    pub fine_factor: usize,
    pub method: StabilizationMethod,
    pub jobs: usize,
}

impl Test2Spec {
    /// `N = 96` with references `12N`, `6N`, `4N`.
    pub fn full(degree: usize) -> Self {
        Test2Spec {
            degree,
            cells: 96,
            mus: full_mus_test2(),
            fine_factor: [12, 6, 4][degree.clamp(1, 3) - 1],
            method: StabilizationMethod::TermByTerm,
            jobs: 1,
        }
    }

    pub fn desk(degree: usize) -> Self {
        Test2Spec {
            cells: 32,
            mus: full_mus_test2().into_iter().skip(1).step_by(2).collect(),
            fine_factor: [6, 4, 3][degree.clamp(1, 3) - 1],
            ..Self::full(degree)
        }
    }
}

/// Rectangle `(0,1)×(0,1/2)`, `f = 1`. `param1 = μ`, `param2 =` largest
/// degree-scaled element Péclet number.
pub fn run_test2(spec: &Test2Spec, formulas: &[TauFormula]) -> Result<SweepTable> {
    check_formulas(formulas)?;
    if spec.mus.is_empty() || spec.cells < 2 {
        return Err(invalid("test2 needs a diffusion list and at least 2 cells"));
    }
    let grid = StructuredGrid::Rectangle {
        domain: BoxDomain::new(0.0, 1.0, 0.0, 0.5),
        nx: spec.cells,
        ny: spec.cells / 2,
    };
    let space = Arc::new(FeSpace::new(Arc::new(grid.mesh()?), spec.degree)?);
    let cfg = ReferenceConfig {
        fine_factor: spec.fine_factor,
        formula: TauFormula::Codina,
        degree: None,
    };
    let results = par_map(spec.jobs, spec.mus.len(), |i| {
        let mu = spec.mus[i];
        let problem = ProblemSpec::new(test2_velocity, move |_| mu, |_| 1.0);
        let reference = reference_solution(&grid, spec.degree, &problem, spec.method, &cfg)?;
        evaluate_formulas(&space, &problem, spec.method, formulas, &reference)
    })?;
    let mut table = SweepTable {
        test: "test2".into(),
        degree: spec.degree,
        ..Default::default()
    };
    for (mu, res) in spec.mus.iter().zip(results) {
        let (pe, errs) = res?;
        for (f, (l2, linf)) in formulas.iter().zip(errs) {
            table.rows.push(SweepRow {
                formula: f.name().into(),
                param1: *mu,
                param2: pe,
                peclet: pe,
                l2,
                linf,
            });
        }
    }
    let (lo, hi) = table.peclet_range();
    let l = spec.degree as f64;
    table.metadata = vec![
        ("cells".into(), format!("{} x {}", spec.cells, spec.cells / 2)),
        ("method".into(), spec.method.name().into()),
        ("reference".into(), format!("codina fine_factor {}", spec.fine_factor)),
        ("linf".into(), "max over coarse Lagrange nodes".into()),
        ("param1".into(), "diffusion mu".into()),
        ("param2".into(), "max element Peclet, h_K/l scaling".into()),
        ("peclet_range_scaled".into(), format!("{lo:e} {hi:e}")),
        ("peclet_range_raw".into(), format!("{:e} {:e}", lo * l, hi * l)),
    ];
    Ok(table)
}

/// Per-node velocity for an imported mesh, interpolated linearly in
/// each element.
///
/// ```text
/// velocity <node_count> <d>
/// <a_1> [<a_2>]          (one line per mesh node)
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct NodalVelocity {
    pub dim: usize,
    pub values: Vec<[f64; 2]>,
}

impl NodalVelocity {
    pub fn constant(nodes: usize, dim: usize, a: [f64; 2]) -> Self {
        NodalVelocity {
            dim,
            values: vec![a; nodes],
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (ln, head) = lines.next().ok_or_else(|| parse_err(1, "empty velocity file"))?;
        let t: Vec<&str> = head.split_whitespace().collect();
        if t.len() != 3 || t[0] != "velocity" {
            return Err(parse_err(ln, "expected 'velocity <node_count> <d>'"));
        }
        let n: usize = t[1].parse().map_err(|_| parse_err(ln, "bad node count"))?;
        let dim: usize = t[2].parse().map_err(|_| parse_err(ln, "bad dimension"))?;
        if !(1..=2).contains(&dim) {
            return Err(parse_err(ln, format!("unsupported dimension {dim}")));
        }
        let mut values = Vec::with_capacity(n);
        for (ln, l) in lines {
            let c: Vec<f64> = l
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| parse_err(ln, format!("bad number '{v}'"))))
                .collect::<Result<_>>()?;
            if c.len() != dim {
                return Err(parse_err(ln, format!("expected {dim} components, found {}", c.len())));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(parse_err(ln, "non-finite velocity"));
            }
            values.push([c[0], if dim == 2 { c[1] } else { 0.0 }]);
        }
        if values.len() != n {
            return Err(parse_err(0, format!("header announces {n} nodes, found {}", values.len())));
        }
        Ok(NodalVelocity { dim, values })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("velocity {} {}\n", self.values.len(), self.dim);
        for v in &self.values {
            if self.dim == 1 {
                let _ = writeln!(s, "{:e}", v[0]);
            } else {
                let _ = writeln!(s, "{:e} {:e}", v[0], v[1]);
            }
        }
        s
    }

    /// Field defined by linear interpolation on `mesh`.
    pub fn field(&self, mesh: Arc<Mesh>) -> Result<VectorField> {
        if self.values.len() != mesh.node_count() {
            return Err(Error::Validation(format!(
                "velocity file has {} nodes but the mesh has {}",
                self.values.len(),
                mesh.node_count()
            )));
        }
        if self.dim != mesh.dim() {
            return Err(Error::Validation(format!("velocity dimension {} does not match mesh dimension {}", self.dim, mesh.dim())));
        }
        let locator = PointLocator::new(&mesh);
        let values = self.values.clone();
        Ok(Arc::new(move |p: Point| match locator.locate(&mesh, p) {
            Some((k, lam)) => {
                let mut a = [0.0; 2];
                for (i, &v) in mesh.element(k).iter().enumerate() {
                    a[0] += lam[i] * values[v][0];
                    a[1] += lam[i] * values[v][1];
                }
                a
            }
            None => [f64::NAN; 2],
        }))
    }
}

/// `5e-6, 7.5e-6, 1e-5, 2.5e-5, …, 5e-4`.
pub fn default_mus_unstructured() -> Vec<f64> {
    vec![5.0e-6, 7.5e-6, 1.0e-5, 2.5e-5, 5.0e-5, 7.5e-5, 1.0e-4, 2.5e-4, 5.0e-4]
}

/// Source terms available to imported-mesh runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SourceTerm {
    Constant(f64),
    /// `sin(πx) cos(πy)`.
    Test1,
}

impl SourceTerm {
    pub fn eval(&self, p: Point) -> f64 {
        match *self {
            SourceTerm::Constant(c) => c,
            SourceTerm::Test1 => (PI * p[0]).sin() * (PI * p[1]).cos(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct UnstructuredSpec {
    pub mesh: Arc<Mesh>,
    pub velocity: NodalVelocity,
    pub mus: Vec<f64>,
    pub degree: usize,
    pub source: SourceTerm,
    /// Number of uniform splits producing the reference mesh.
    pub refinements: usize,
    pub method: StabilizationMethod,
    pub jobs: usize,
}

impl UnstructuredSpec {
    pub fn new(mesh: Arc<Mesh>, velocity: NodalVelocity, degree: usize) -> Self {
        UnstructuredSpec {
            mesh,
            velocity,
            mus: default_mus_unstructured(),
            degree,
            source: SourceTerm::Constant(1.0),
            refinements: 1,
            method: StabilizationMethod::TermByTerm,
            jobs: 1,
        }
    }
}

/// Imported mesh and velocity; the reference splits every triangle into
/// four `refinements` times. `param1 = μ`, `param2 =` largest element
/// Péclet number.
pub fn run_unstructured(spec: &UnstructuredSpec, formulas: &[TauFormula]) -> Result<SweepTable> {
    check_formulas(formulas)?;
    if spec.mus.is_empty() || spec.refinements == 0 {
        return Err(invalid("unstructured run needs a diffusion list and at least one refinement"));
    }
    let velocity = spec.velocity.field(spec.mesh.clone())?;
    let space = Arc::new(FeSpace::new(spec.mesh.clone(), spec.degree)?);
    let mut fine = (*spec.mesh).clone();
    for _ in 0..spec.refinements {
        fine = fine.refine_uniform()?;
    }
    let fine_space = Arc::new(FeSpace::new(Arc::new(fine), spec.degree)?);
    let results = par_map(spec.jobs, spec.mus.len(), |i| {
        let (mu, f) = (spec.mus[i], spec.source);
        let mut problem = ProblemSpec::constant([0.0; 2], mu, 0.0).with_source(move |p| f.eval(p));
        problem.velocity = velocity.clone();
        let tau = tau_field(&fine_space, &problem, &TauFormula::Codina)?;
        let (reference, _) = solve_stabilized(&fine_space, &problem, spec.method, &tau)?;
        evaluate_formulas(&space, &problem, spec.method, formulas, &reference)
    })?;
    let mut table = SweepTable {
        test: "unstructured".into(),
        degree: spec.degree,
        ..Default::default()
    };
    for (mu, res) in spec.mus.iter().zip(results) {
        let (pe, errs) = res?;
        for (f, (l2, linf)) in formulas.iter().zip(errs) {
            table.rows.push(SweepRow {
                formula: f.name().into(),
                param1: *mu,
                param2: pe,
                peclet: pe,
                l2,
                linf,
            });
        }
    }
    let (lo, hi) = table.peclet_range();
    table.metadata = vec![
        ("mesh".into(), format!("{} nodes, {} elements", spec.mesh.node_count(), spec.mesh.element_count())),
        ("method".into(), spec.method.name().into()),
        ("reference".into(), format!("codina, {} uniform refinement(s)", spec.refinements)),
        ("source".into(), format!("{:?}", spec.source)),
        ("linf".into(), "max over coarse Lagrange nodes".into()),
        ("param1".into(), "diffusion mu".into()),
        ("param2".into(), "max element Peclet, h_K/l scaling".into()),
        ("peclet_range_scaled".into(), format!("{lo:e} {hi:e}")),
    ];
    Ok(table)
}

/// Problem with a known smooth solution.
#[derive(Clone)]
pub struct ManufacturedProblem {
    pub problem: ProblemSpec,
    pub exact: ScalarField,
}

impl ManufacturedProblem {
    /// `u = sin(πx) sin(πy)` on the unit square, `μ = 1`, `a = (1, 1/2)`.
    pub fn smooth() -> Self {
        let (a1, a2, mu) = (1.0, 0.5, 1.0);
        let f = move |p: Point| {
            let (sx, cx) = (PI * p[0]).sin_cos();
            let (sy, cy) = (PI * p[1]).sin_cos();
            2.0 * PI * PI * mu * sx * sy + PI * (a1 * cx * sy + a2 * sx * cy)
        };
        ManufacturedProblem {
            problem: ProblemSpec::constant([a1, a2], mu, 0.0).with_source(f),
            exact: Arc::new(|p: Point| (PI * p[0]).sin() * (PI * p[1]).sin()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceSpec {
    pub degree: usize,
    pub cells: Vec<usize>,
    pub method: StabilizationMethod,
    pub formula: TauFormula,
}

impl ConvergenceSpec {
    /// `nx ∈ {8, 16, 32, 64}` with SUPG and the Codina coefficient.
    pub fn new(degree: usize) -> Self {
        ConvergenceSpec {
            degree,
            cells: vec![8, 16, 32, 64],
            method: StabilizationMethod::Supg,
            formula: TauFormula::Codina,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub degree: usize,
    pub h: Vec<f64>,
    pub l2: Vec<f64>,
    pub interpolation_l2: Vec<f64>,
    pub slope: f64,
    pub interpolation_slope: f64,
}

impl ConvergenceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("degree,h,l2,interpolation_l2\n");
        for i in 0..self.h.len() {
            let _ = writeln!(s, "{},{:e},{:e},{:e}", self.degree, self.h[i], self.l2[i], self.interpolation_l2[i]);
        }
        let _ = writeln!(s, "{},SLOPE,{},{}", self.degree, self.slope, self.interpolation_slope);
        s
    }
}

/// Least-squares slope of `log e` against `log h`.
pub fn loglog_slope(h: &[f64], e: &[f64]) -> f64 {
    let n = h.len() as f64;
    let x: Vec<f64> = h.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = e.iter().map(|v| v.ln()).collect();
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// `‖u_h − u‖_{L²}` by high-order quadrature.
pub fn l2_error_exact(u_h: &DiscreteFunction, exact: &dyn Fn(Point) -> f64) -> f64 {
    let space = &u_h.space;
    let rule = quadrature_for(space.dim(), space.degree(), Purpose::Error);
    let tabs = space.tabulate(&rule);
    let mut acc = 0.0;
    for k in 0..space.mesh().element_count() {
        let dofs = space.element_dofs(k);
        for q in element_qps(space, k, &rule, &tabs) {
            let uh: f64 = dofs.iter().zip(&q.phi).map(|(&d, p)| u_h.values[d] * p).sum();
            acc += q.w * (uh - exact(q.x)).powi(2);
        }
    }
    acc.sqrt()
}

pub fn convergence_study(mp: &ManufacturedProblem, spec: &ConvergenceSpec) -> Result<ConvergenceReport> {
    if spec.cells.len() < 2 {
        return Err(invalid("convergence study needs at least two meshes"));
    }
    let (mut h, mut l2, mut il2) = (Vec::new(), Vec::new(), Vec::new());
    for &n in &spec.cells {
        let space = Arc::new(FeSpace::new(Arc::new(StructuredGrid::unit_square(n).mesh()?), spec.degree)?);
        let tau = tau_field(&space, &mp.problem, &spec.formula)?;
        let (u, _) = solve_stabilized(&space, &mp.problem, spec.method, &tau)?;
        let exact = mp.exact.clone();
        let iu = space.interpolate(move |p| exact(p))?;
        h.push(1.0 / n as f64);
        l2.push(l2_error_exact(&u, &*mp.exact));
        il2.push(l2_error_exact(&iu, &*mp.exact));
    }
    Ok(ConvergenceReport {
        degree: spec.degree,
        slope: loglog_slope(&h, &l2),
        interpolation_slope: loglog_slope(&h, &il2),
        h,
        l2,
        interpolation_l2: il2,
    })
}
