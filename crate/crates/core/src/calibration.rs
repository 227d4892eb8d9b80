//! Least-squares calibration of a constant stabilization coefficient.
//!
//! For a constant-coefficient problem every element carries the same τ.
//! The calibrated value minimizes `J(τ) = ½ ‖u_h(τ) − Π_h u_ref‖²` over a
//! bracket `[τ_min, τ_max]`, where `u_ref` is a stabilized solution on a
//! nested fine grid.
//!
//! Writing the state problem as `(A + τS) u = b + τc` (with `c = 0` for
//! term-by-term), the sensitivities `z = du/dτ` and `w = d²u/dτ²` solve
//!
//! ```text
//! (A + τS) z = c − S u
//! (A + τS) w = −2 S z
//! ```
//!
//! with the state matrix, so `J' = (e, z)` and `J'' = ‖z‖² + (e, w)` with
//! `e = u_h(τ) − Π_h u_ref` cost two extra back-substitutions.

use std::fmt::Write as _;
use std::sync::Arc;

use crate::assembly::{apply_dirichlet, assemble_mass, solve_stabilized, ProblemSpec, SplitSystem, StabilizationMethod, TauField};
use crate::error::{invalid, Error, Result};
use crate::fe_space::{DiscreteFunction, FeSpace};
use crate::linear_solver::{relative_residual, CsrMatrix, Factorization};
use crate::mesh::StructuredGrid;
use crate::tau::{flow_data, ElementFlowData, TauFormula};

/// How the high-fidelity solution is produced.
#[derive(Debug, Clone)]
pub struct ReferenceConfig {
    pub fine_factor: usize,
    pub formula: TauFormula,
    /// Degree of the reference space; `None` uses the coarse degree.
    pub degree: Option<usize>,
}

/// Refinement factor used for references at each degree.
pub fn default_fine_factor(degree: usize) -> usize {
    match degree {
        1 => 10,
        2 => 6,
        _ => 4,
    }
}

impl ReferenceConfig {
    /// Codina on the refined grid in 2D. In 1D the reference is the P1
    /// solution with the nodally exact coefficient, so `Π_h u_ref` is the
    /// exact solution at the coarse nodes.
    pub fn default_for(dim: usize, degree: usize) -> Self {
        if dim == 1 {
            ReferenceConfig {
                fine_factor: default_fine_factor(degree),
                formula: TauFormula::OneD,
                degree: Some(1),
            }
        } else {
            ReferenceConfig {
                fine_factor: default_fine_factor(degree),
                formula: TauFormula::Codina,
                degree: None,
            }
        }
    }
}

/// Stabilized solution on `grid` refined by the reference factor. When the
/// reference degree is lower than `degree` the grid is refined by another
/// factor `degree` so that coarse Lagrange nodes stay on fine nodes.
pub fn reference_solution(
    grid: &StructuredGrid,
    degree: usize,
    problem: &ProblemSpec,
    method: StabilizationMethod,
    cfg: &ReferenceConfig,
) -> Result<DiscreteFunction> {
    if cfg.fine_factor == 0 {
        return Err(invalid("fine factor must be at least 1"));
    }
    let rdeg = cfg.degree.unwrap_or(degree);
    let extra = if rdeg == degree { 1 } else { degree };
    let fine = grid.refined(cfg.fine_factor * extra);
    let space = Arc::new(FeSpace::new(Arc::new(fine.mesh()?), rdeg)?);
    let tau = crate::tau::tau_field(&space, problem, &cfg.formula)?;
    let (u, rep) = solve_stabilized(&space, problem, method, &tau)?;
    log::debug!("reference solve: {} unknowns, relative residual {:e}", rep.unknowns, rep.relative_residual);
    Ok(u)
}

/// A constant-coefficient training instance.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    pub grid: StructuredGrid,
    pub degree: usize,
    pub problem: ProblemSpec,
    pub method: StabilizationMethod,
    pub reference: ReferenceConfig,
    /// Explicit `[τ_min, τ_max]`; `None` derives it from the analytic formulas.
    pub bracket: Option<(f64, f64)>,
    /// Factors `(below, above)` widening the adaptive bracket.
    pub bracket_expansion: (f64, f64),
}

/// Coarse cells per side for P1 training meshes.
pub const TRAINING_CELLS_P1: usize = 40;
/// `J` stays convex up to about five times the largest analytic τ on the
/// training instances, so the upper side is widened less.
pub const DEFAULT_BRACKET_EXPANSION: (f64, f64) = (10.0, 2.0);

/// Settings shared by all training instances of a table build.
#[derive(Debug, Clone)]
pub struct TrainingConfig {
    pub cells_p1: usize,
    pub fine_factor: Option<usize>,
    pub bracket_expansion: (f64, f64),
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            cells_p1: TRAINING_CELLS_P1,
            fine_factor: None,
            bracket_expansion: DEFAULT_BRACKET_EXPANSION,
        }
    }
}

impl CalibrationProblem {
    /// Unit interval or square with `μ = 1`, homogeneous Dirichlet data,
    /// `f = 1` (1D) or `f = sin(πx)cos(πy)` (2D), and the constant velocity
    /// that realizes the directional Péclet numbers `peclet`.
    pub fn training(degree: usize, peclet: &[f64], method: StabilizationMethod, cfg: &TrainingConfig) -> Result<Self> {
        let dim = peclet.len();
        if !(1..=2).contains(&dim) {
            return Err(invalid(format!("training problems exist for d = 1, 2, got {dim}")));
        }
        if !(1..=3).contains(&degree) {
            return Err(invalid(format!("unsupported polynomial degree {degree}")));
        }
        if peclet.iter().all(|p| *p == 0.0) {
            return Err(invalid("cannot calibrate at zero Péclet number"));
        }
        let n = cfg.cells_p1.div_ceil(degree).max(1);
        let grid = if dim == 1 {
            StructuredGrid::unit_interval(n)
        } else {
            StructuredGrid::unit_square(n)
        };
        let h = grid.h_k() / degree as f64;
        let mu = 1.0;
        let a = [2.0 * mu * peclet[0] / h, if dim == 2 { 2.0 * mu * peclet[1] / h } else { 0.0 }];
        let problem = if dim == 1 {
            ProblemSpec::constant(a, mu, 1.0)
        } else {
            use std::f64::consts::PI;
            ProblemSpec::constant(a, mu, 0.0).with_source(|x| (PI * x[0]).sin() * (PI * x[1]).cos())
        };
        let mut reference = ReferenceConfig::default_for(dim, degree);
        if let Some(f) = cfg.fine_factor {
            reference.fine_factor = f;
        }
        Ok(CalibrationProblem {
            grid,
            degree,
            problem,
            method,
            reference,
            bracket: None,
            bracket_expansion: cfg.bracket_expansion,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iterate: usize,
    pub tau: f64,
    pub j: f64,
    pub dj: f64,
    pub d2j: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationResult {
    pub tau_opt: f64,
    pub j_min: f64,
    /// `‖a‖ τ̃ / h` with the effective element length.
    pub phi: f64,
    pub tau_min: f64,
    pub tau_max: f64,
    pub trace: Vec<TraceRow>,
    pub boundary_hit: bool,
}

impl CalibrationResult {
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("iterate,tau,J,dJ,d2J\n");
        for r in &self.trace {
            let _ = writeln!(s, "{},{:e},{:e},{:e},{:e}", r.iterate, r.tau, r.j, r.dj, r.d2j);
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub tau: f64,
    pub j: f64,
    pub dj: f64,
    pub d2j: f64,
}

/// Solutions of the state and sensitivity problems at one τ.
#[derive(Debug, Clone)]
pub struct Sensitivities {
    pub u: Vec<f64>,
    pub z: Vec<f64>,
    pub w: Vec<f64>,
    /// Relative residuals of the state, `z` and `w` systems.
    pub residuals: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinimizeOptions {
    /// Relative tolerance on τ.
    pub tol_tau: f64,
    pub max_iter: usize,
    /// Use Newton on `(J', J'')`; otherwise golden section on `log τ`.
    pub use_derivatives: bool,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions {
            tol_tau: 1e-10,
            max_iter: 100,
            use_derivatives: true,
        }
    }
}

/// Precomputed forms of one calibration instance.
pub struct Calibrator {
    space: Arc<FeSpace>,
    split: SplitSystem,
    mass: CsrMatrix,
    /// Stabilization matrix and load with Dirichlet rows and columns removed.
    s_free: CsrMatrix,
    c_free: Vec<f64>,
    target: Vec<f64>,
    flow: ElementFlowData,
    bracket: (f64, f64),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl Calibrator {
    pub fn new(cp: &CalibrationProblem) -> Result<Self> {
        let space = Arc::new(FeSpace::new(Arc::new(cp.grid.mesh()?), cp.degree)?);
        let reference = reference_solution(&cp.grid, cp.degree, &cp.problem, cp.method, &cp.reference)?;
        let target = reference.interpolate_onto(&space)?;
        let mut cal = Self::with_target(space, &cp.problem, cp.method, target)?;
        cal.bracket = match cp.bracket {
            Some(b) => b,
            None => cal.adaptive_bracket(&cp.problem, cp.bracket_expansion)?,
        };
        if !(cal.bracket.0 > 0.0 && cal.bracket.1 > cal.bracket.0) {
            return Err(invalid(format!("invalid bracket {:?}", cal.bracket)));
        }
        Ok(cal)
    }

    /// Calibrator against a given target on `space` (the bracket defaults
    /// to the adaptive rule with the default expansion).
    pub fn with_target(space: Arc<FeSpace>, problem: &ProblemSpec, method: StabilizationMethod, target: DiscreteFunction) -> Result<Self> {
        if target.values.len() != space.ndofs() {
            return Err(invalid("target does not live on the calibration space"));
        }
        let split = SplitSystem::assemble(&space, problem, method)?;
        let mass = assemble_mass(&space)?;
        let stab = apply_dirichlet(split.stabilization.clone(), &space, &|_| 0.0)?;
        let mut s_free = stab.matrix;
        let mut c_free = stab.rhs;
        for &d in space.dirichlet_dofs() {
            c_free[d] = 0.0;
            let (_, vals) = s_free.row_mut(d);
            vals.iter_mut().for_each(|v| *v = 0.0);
        }
        let flow = flow_data(&space, problem)?[0];
        let mut cal = Calibrator {
            space,
            split,
            mass,
            s_free,
            c_free,
            target: target.values,
            flow,
            bracket: (0.0, 0.0),
        };
        cal.bracket = cal.adaptive_bracket(problem, DEFAULT_BRACKET_EXPANSION)?;
        Ok(cal)
    }

    /// Smallest and largest analytic τ over all elements, divided and
    /// multiplied by the two expansion factors.
    fn adaptive_bracket(&self, problem: &ProblemSpec, expansion: (f64, f64)) -> Result<(f64, f64)> {
        if !(expansion.0 >= 1.0 && expansion.1 >= 1.0) {
            return Err(invalid(format!("bracket expansion factors must be >= 1, got {expansion:?}")));
        }
        let data = flow_data(&self.space, problem)?;
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for d in &data {
            for f in TauFormula::analytic() {
                let t = f.eval(d);
                if t > 0.0 {
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
            }
        }
        if !(lo.is_finite() && hi > 0.0) {
            return Err(invalid("cannot derive a bracket: analytic coefficients vanish"));
        }
        Ok((lo / expansion.0, hi * expansion.1))
    }

    pub fn space(&self) -> &Arc<FeSpace> {
        &self.space
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn bracket(&self) -> (f64, f64) {
        self.bracket
    }

    pub fn set_bracket(&mut self, tau_min: f64, tau_max: f64) {
        self.bracket = (tau_min, tau_max);
    }

    /// `‖Π_h u_ref‖²`.
    pub fn target_norm_sq(&self) -> f64 {
        self.mass.dot_form(&self.target, &self.target)
    }

    pub fn flow(&self) -> &ElementFlowData {
        &self.flow
    }

    fn factor(&self, tau: f64) -> Result<(Factorization, Vec<f64>)> {
        let sys = self.split.at(&self.space, tau)?;
        let fac = Factorization::new(&sys.matrix).map_err(|e| Error::Calibration {
            tau,
            msg: e.to_string(),
        })?;
        Ok((fac, sys.rhs))
    }

    fn solve(&self, fac: &Factorization, b: &[f64], tau: f64) -> Result<(Vec<f64>, f64)> {
        let (x, rep) = fac.solve(b).map_err(|e| Error::Calibration {
            tau,
            msg: e.to_string(),
        })?;
        Ok((x, rep.relative_residual))
    }

    pub fn state(&self, tau: f64) -> Result<Vec<f64>> {
        let (fac, b) = self.factor(tau)?;
        Ok(self.solve(&fac, &b, tau)?.0)
    }

    fn functional_of(&self, u: &[f64], tau: f64) -> Result<f64> {
        let e: Vec<f64> = u.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let j = 0.5 * self.mass.dot_form(&e, &e);
        if !j.is_finite() {
            return Err(Error::Calibration {
                tau,
                msg: format!("non-finite functional value {j}"),
            });
        }
        Ok(j)
    }

    pub fn functional(&self, tau: f64) -> Result<f64> {
        let u = self.state(tau)?;
        self.functional_of(&u, tau)
    }

    pub fn sensitivities(&self, tau: f64) -> Result<Sensitivities> {
        let (fac, b) = self.factor(tau)?;
        let (u, ru) = self.solve(&fac, &b, tau)?;
        let su = self.s_free.matvec(&u);
        let bz: Vec<f64> = self.c_free.iter().zip(&su).map(|(c, s)| c - s).collect();
        let (z, rz) = self.solve(&fac, &bz, tau)?;
        let bw: Vec<f64> = self.s_free.matvec(&z).iter().map(|v| -2.0 * v).collect();
        let (w, rw) = self.solve(&fac, &bw, tau)?;
        Ok(Sensitivities {
            u,
            z,
            w,
            residuals: [ru, rz, rw],
        })
    }

    pub fn derivatives(&self, tau: f64) -> Result<Derivatives> {
        let s = self.sensitivities(tau)?;
        let j = self.functional_of(&s.u, tau)?;
        let e: Vec<f64> = s.u.iter().zip(&self.target).map(|(a, b)| a - b).collect();
        let me = self.mass.matvec(&e);
        let dj = dot(&me, &s.z);
        let d2j = self.mass.dot_form(&s.z, &s.z) + dot(&me, &s.w);
        if !(dj.is_finite() && d2j.is_finite()) {
            return Err(Error::Calibration {
                tau,
                msg: "non-finite derivative".into(),
            });
        }
        Ok(Derivatives { tau, j, dj, d2j })
    }

    /// Residuals of the `z` and `w` systems recomputed from scratch.
    pub fn sensitivity_residuals(&self, tau: f64) -> Result<[f64; 2]> {
        let s = self.sensitivities(tau)?;
        let sys = self.split.at(&self.space, tau)?;
        let su = self.s_free.matvec(&s.u);
        let bz: Vec<f64> = self.c_free.iter().zip(&su).map(|(c, v)| c - v).collect();
        let bw: Vec<f64> = self.s_free.matvec(&s.z).iter().map(|v| -2.0 * v).collect();
        Ok([relative_residual(&sys.matrix, &s.z, &bz), relative_residual(&sys.matrix, &s.w, &bw)])
    }

    fn result(&self, tau: f64, j: f64, trace: Vec<TraceRow>, boundary_hit: bool) -> CalibrationResult {
        CalibrationResult {
            tau_opt: tau,
            j_min: j,
            phi: self.flow.a_norm * tau / self.flow.h(),
            tau_min: self.bracket.0,
            tau_max: self.bracket.1,
            trace,
            boundary_hit,
        }
    }

    pub fn minimize(&self, opts: &MinimizeOptions) -> Result<CalibrationResult> {
        if opts.use_derivatives {
            self.minimize_newton(opts)
        } else {
            self.minimize_golden(opts)
        }
    }

    /// Newton on `J' = 0` safeguarded by a sign bracket; falls back to a
    /// geometric bisection step when `J'' ≤ 0` or the step leaves the bracket.
    fn minimize_newton(&self, opts: &MinimizeOptions) -> Result<CalibrationResult> {
        let (tmin, tmax) = self.bracket;
        let mut trace = Vec::new();
        let record = |d: &Derivatives, trace: &mut Vec<TraceRow>| {
            trace.push(TraceRow {
                iterate: trace.len(),
                tau: d.tau,
                j: d.j,
                dj: d.dj,
                d2j: d.d2j,
            })
        };
        let dlo = self.derivatives(tmin)?;
        record(&dlo, &mut trace);
        if dlo.dj >= 0.0 {
            return Ok(self.result(tmin, dlo.j, trace, true));
        }
        let dhi = self.derivatives(tmax)?;
        record(&dhi, &mut trace);
        if dhi.dj <= 0.0 {
            return Ok(self.result(tmax, dhi.j, trace, true));
        }
        let (mut lo, mut hi) = (tmin, tmax);
        let start = crate::tau::tau_codina(&self.flow);
        let mut x = if start > lo && start < hi { start } else { (lo * hi).sqrt() };
        for _ in 0..opts.max_iter {
            let d = self.derivatives(x)?;
            record(&d, &mut trace);
            if d.dj == 0.0 {
                return Ok(self.result(x, d.j, trace, false));
            }
            if d.dj < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let newton = x - d.dj / d.d2j;
            let next = if d.d2j > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                (lo * hi).sqrt()
            };
            let done = (next - x).abs() <= opts.tol_tau * x || hi - lo <= opts.tol_tau * x;
            x = next;
            if done {
                let d = self.derivatives(x)?;
                record(&d, &mut trace);
                return Ok(self.result(x, d.j, trace, false));
            }
        }
        Err(Error::Calibration {
            tau: x,
            msg: format!("no convergence in {} iterations", opts.max_iter),
        })
    }

    /// Golden-section search on `log τ` using function values only.
    fn minimize_golden(&self, opts: &MinimizeOptions) -> Result<CalibrationResult> {
        let (tmin, tmax) = self.bracket;
        let g = (5f64.sqrt() - 1.0) / 2.0;
        let (mut a, mut b) = (tmin.ln(), tmax.ln());
        let mut trace = Vec::new();
        let eval = |t: f64, trace: &mut Vec<TraceRow>| -> Result<f64> {
            let tau = t.exp();
            let j = self.functional(tau)?;
            trace.push(TraceRow {
                iterate: trace.len(),
                tau,
                j,
                dj: f64::NAN,
                d2j: f64::NAN,
            });
            Ok(j)
        };
        let mut c = b - g * (b - a);
        let mut d = a + g * (b - a);
        let mut fc = eval(c, &mut trace)?;
        let mut fd = eval(d, &mut trace)?;
        let tol = opts.tol_tau.max(1e-14);
        let mut it = 0;
        while b - a > tol && it < 10 * opts.max_iter {
            if fc <= fd {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = eval(c, &mut trace)?;
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = eval(d, &mut trace)?;
            }
            it += 1;
        }
        let t = 0.5 * (a + b);
        let tau = t.exp();
        let j = eval(t, &mut trace)?;
        let hit = (t - tmin.ln()).abs() <= 2.0 * tol || (tmax.ln() - t).abs() <= 2.0 * tol;
        Ok(self.result(tau, j, trace, hit))
    }
}

/// Convenience: build, then minimize with default options.
pub fn calibrate(cp: &CalibrationProblem) -> Result<CalibrationResult> {
    Calibrator::new(cp)?.minimize(&MinimizeOptions::default())
}

/// `u_h(τ)` as a discrete function on the coarse space.
pub fn solve_at(cal: &Calibrator, problem: &ProblemSpec, method: StabilizationMethod, tau: f64) -> Result<DiscreteFunction> {
    let n = cal.space().mesh().element_count();
    let (u, _) = solve_stabilized(cal.space(), problem, method, &TauField::constant(n, tau)?)?;
    Ok(u)
}
