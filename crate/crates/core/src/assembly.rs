//! Galerkin and stabilization forms for `a·∇u − ∇·(μ∇u) = f`.
//!
//! The discrete problem is
//! `(a·∇u,v) + (μ∇u,∇v) + Σ_K τ_K (P u, Q v)_K = (f,v) + Σ_K τ_K (f, Q v)_K`
//! where `P u = a·∇u − μΔu` and `Q v = a·∇v + εμΔv` for the residual
//! family, and `P = Q = a·∇` with an unmodified load for term-by-term.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::fe_space::{bary_gradients, bary_to_point, quadrature_for, BasisTab, DiscreteFunction, FeSpace, Purpose, QuadratureRule};
use crate::linear_solver::{self, CsrMatrix, SolverMode, SolverReport};
use crate::mesh::Point;

pub type ScalarField = Arc<dyn Fn(Point) -> f64 + Send + Sync>;
pub type VectorField = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// Coefficients and boundary data of one advection-diffusion instance.
#[derive(Clone)]
pub struct ProblemSpec {
    pub velocity: VectorField,
    pub diffusion: ScalarField,
    pub source: ScalarField,
    pub dirichlet: ScalarField,
}

impl fmt::Debug for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ProblemSpec { .. }")
    }
}

impl ProblemSpec {
    /// Homogeneous Dirichlet problem with the given fields.
    pub fn new(
        velocity: impl Fn(Point) -> [f64; 2] + Send + Sync + 'static,
        diffusion: impl Fn(Point) -> f64 + Send + Sync + 'static,
        source: impl Fn(Point) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ProblemSpec {
            velocity: Arc::new(velocity),
            diffusion: Arc::new(diffusion),
            source: Arc::new(source),
            dirichlet: Arc::new(|_| 0.0),
        }
    }

    pub fn constant(a: [f64; 2], mu: f64, f: f64) -> Self {
        Self::new(move |_| a, move |_| mu, move |_| f)
    }

    pub fn with_source(mut self, f: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.source = Arc::new(f);
        self
    }

    pub fn with_dirichlet(mut self, g: impl Fn(Point) -> f64 + Send + Sync + 'static) -> Self {
        self.dirichlet = Arc::new(g);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StabilizationMethod {
    /// Residual form with ε = −1.
    LeastSquares,
    /// Residual form with ε = 0.
    Supg,
    /// Residual form with ε = +1.
    Adjoint,
    TermByTerm,
}

impl StabilizationMethod {
    pub const ALL: [StabilizationMethod; 4] = [Self::TermByTerm, Self::LeastSquares, Self::Supg, Self::Adjoint];

    /// ε of the residual family; `None` for term-by-term.
    pub fn epsilon(self) -> Option<f64> {
        match self {
            Self::LeastSquares => Some(-1.0),
            Self::Supg => Some(0.0),
            Self::Adjoint => Some(1.0),
            Self::TermByTerm => None,
        }
    }

    pub fn rhs_stabilized(self) -> bool {
        self.epsilon().is_some()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::LeastSquares => "ls",
            Self::Supg => "supg",
            Self::Adjoint => "adjoint",
            Self::TermByTerm => "tbt",
        }
    }
}

impl fmt::Display for StabilizationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StabilizationMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| invalid(format!("unknown stabilization kind '{s}' (expected tbt, ls, supg or adjoint)")))
    }
}

/// One nonnegative coefficient per element.
#[derive(Debug, Clone, PartialEq)]
pub struct TauField {
    values: Vec<f64>,
}

impl TauField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some((k, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(invalid(format!("tau on element {k} must be finite and nonnegative, got {v}")));
        }
        Ok(TauField { values })
    }

    pub fn constant(n: usize, tau: f64) -> Result<Self> {
        Self::new(vec![tau; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    /// Constrained DOFs and their prescribed values.
    pub constraints: Vec<(usize, f64)>,
}

/// Zero matrix on the element-coupling pattern of `space`.
pub fn sparsity(space: &FeSpace) -> CsrMatrix {
    let nel = space.mesh().element_count();
    let nd = space.dofs_per_element();
    let mut pat = Vec::with_capacity(nel * nd * nd);
    for k in 0..nel {
        let dofs = space.element_dofs(k);
        for &i in dofs {
            for &j in dofs {
                pat.push((i, j));
            }
        }
    }
    CsrMatrix::from_pattern(space.ndofs(), pat)
}

/// Physical data of the local basis at one quadrature point.
pub(crate) struct Qp {
    pub w: f64,
    pub x: Point,
    pub phi: Vec<f64>,
    pub grad: Vec<[f64; 2]>,
    pub lap: Vec<f64>,
}

fn element_measure_factor(space: &FeSpace, k: usize) -> f64 {
    let mesh = space.mesh();
    let c = mesh.element(k);
    let n = mesh.nodes();
    if mesh.dim() == 1 {
        (n[c[1]][0] - n[c[0]][0]).abs()
    } else {
        let (p0, p1, p2) = (n[c[0]], n[c[1]], n[c[2]]);
        ((p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1])).abs()
    }
}

pub(crate) fn element_qps(space: &FeSpace, k: usize, rule: &QuadratureRule, tabs: &[BasisTab]) -> Vec<Qp> {
    let mesh = space.mesh();
    let nb = space.dim() + 1;
    let gl = bary_gradients(mesh, k);
    let jac = element_measure_factor(space, k);
    rule.points
        .iter()
        .zip(&rule.weights)
        .zip(tabs)
        .map(|((&lam, &w), tab)| {
            let (grad, lap) = tab.physical(&gl, nb);
            Qp {
                w: w * jac,
                x: bary_to_point(mesh, k, lam),
                phi: tab.values.clone(),
                grad,
                lap,
            }
        })
        .collect()
}

fn check_coefficients(k: usize, x: Point, a: [f64; 2], mu: f64, f: f64) -> Result<()> {
    for (v, what) in [(a[0], "velocity"), (a[1], "velocity"), (mu, "diffusion"), (f, "source")] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                value: v,
                x: x[0],
                y: x[1],
                context: format!("{what} at a quadrature point of element {k}"),
            });
        }
    }
    if mu <= 0.0 {
        return Err(Error::Validation(format!(
            "non-positive diffusion {mu} at quadrature point ({}, {}) of element {k}",
            x[0], x[1]
        )));
    }
    Ok(())
}

const CHUNK: usize = 4096;

/// Runs `local` on every element (in parallel, by chunks) and scatters the
/// results in element order, so the sums are independent of scheduling.
fn assemble_elements<F>(space: &FeSpace, local: F) -> Result<(CsrMatrix, Vec<f64>)>
where
    F: Fn(usize) -> Result<Option<(Vec<f64>, Vec<f64>)>> + Sync,
{
    let nel = space.mesh().element_count();
    let mut matrix = sparsity(space);
    let mut rhs = vec![0.0; space.ndofs()];
    for start in (0..nel).step_by(CHUNK) {
        let end = (start + CHUNK).min(nel);
        let locals: Vec<_> = (start..end).into_par_iter().map(&local).collect::<Result<Vec<_>>>()?;
        for (k, loc) in (start..end).zip(locals) {
            if let Some((m, b)) = loc {
                let dofs = space.element_dofs(k);
                matrix.add_local(dofs, &m);
                for (&d, v) in dofs.iter().zip(b) {
                    rhs[d] += v;
                }
            }
        }
    }
    Ok((matrix, rhs))
}

/// `A_ij = (a·∇φ_j, φ_i) + (μ∇φ_j, ∇φ_i)` and `b_i = (f, φ_i)`.
pub fn assemble_galerkin(space: &FeSpace, problem: &ProblemSpec) -> Result<LinearSystem> {
    let dim = space.dim();
    let l = space.degree();
    let mrule = quadrature_for(dim, l, Purpose::Stiffness);
    let frule = quadrature_for(dim, l, Purpose::Load);
    let mtabs = space.tabulate(&mrule);
    let ftabs = space.tabulate(&frule);
    let nd = space.dofs_per_element();
    let (matrix, rhs) = assemble_elements(space, |k| {
        let mut m = vec![0.0; nd * nd];
        for q in element_qps(space, k, &mrule, &mtabs) {
            let a = (problem.velocity)(q.x);
            let mu = (problem.diffusion)(q.x);
            check_coefficients(k, q.x, a, mu, 0.0)?;
            for j in 0..nd {
                let adv = a[0] * q.grad[j][0] + a[1] * q.grad[j][1];
                for i in 0..nd {
                    let diff = q.grad[j][0] * q.grad[i][0] + q.grad[j][1] * q.grad[i][1];
                    m[i * nd + j] += q.w * (adv * q.phi[i] + mu * diff);
                }
            }
        }
        let mut b = vec![0.0; nd];
        for q in element_qps(space, k, &frule, &ftabs) {
            let f = (problem.source)(q.x);
            check_coefficients(k, q.x, [0.0; 2], 1.0, f)?;
            for i in 0..nd {
                b[i] += q.w * f * q.phi[i];
            }
        }
        Ok(Some((m, b)))
    })?;
    Ok(LinearSystem {
        matrix,
        rhs,
        constraints: Vec::new(),
    })
}

/// `S_ij = Σ_K τ_K (P φ_j, Q φ_i)_K`; the load part is `τ_K (f, Q φ_i)_K` for
/// residual kinds and zero for term-by-term.
pub fn assemble_stabilization(
    space: &FeSpace,
    problem: &ProblemSpec,
    method: StabilizationMethod,
    tau: &TauField,
) -> Result<LinearSystem> {
    let nel = space.mesh().element_count();
    if tau.len() != nel {
        return Err(invalid(format!("tau field has {} entries for {nel} elements", tau.len())));
    }
    let rule = quadrature_for(space.dim(), space.degree(), Purpose::Stabilization);
    let tabs = space.tabulate(&rule);
    let nd = space.dofs_per_element();
    let eps = method.epsilon();
    let (matrix, rhs) = assemble_elements(space, |k| {
        let t = tau.values()[k];
        if t == 0.0 {
            return Ok(None);
        }
        let mut m = vec![0.0; nd * nd];
        let mut b = vec![0.0; nd];
        let mut pv = vec![0.0; nd];
        let mut qv = vec![0.0; nd];
        for q in element_qps(space, k, &rule, &tabs) {
            let a = (problem.velocity)(q.x);
            let mu = (problem.diffusion)(q.x);
            let f = if eps.is_some() { (problem.source)(q.x) } else { 0.0 };
            check_coefficients(k, q.x, a, mu, f)?;
            for i in 0..nd {
                let adv = a[0] * q.grad[i][0] + a[1] * q.grad[i][1];
                match eps {
                    Some(e) => {
                        pv[i] = adv - mu * q.lap[i];
                        qv[i] = adv + e * mu * q.lap[i];
                    }
                    None => {
                        pv[i] = adv;
                        qv[i] = adv;
                    }
                }
            }
            let w = t * q.w;
            for i in 0..nd {
                for j in 0..nd {
                    m[i * nd + j] += w * pv[j] * qv[i];
                }
                b[i] += w * f * qv[i];
            }
        }
        Ok(Some((m, b)))
    })?;
    Ok(LinearSystem {
        matrix,
        rhs,
        constraints: Vec::new(),
    })
}

/// `M_ij = (φ_j, φ_i)`.
pub fn assemble_mass(space: &FeSpace) -> Result<CsrMatrix> {
    let rule = quadrature_for(space.dim(), space.degree(), Purpose::Mass);
    let tabs = space.tabulate(&rule);
    let nd = space.dofs_per_element();
    let (m, _) = assemble_elements(space, |k| {
        let mut m = vec![0.0; nd * nd];
        for q in element_qps(space, k, &rule, &tabs) {
            for i in 0..nd {
                for j in 0..nd {
                    m[i * nd + j] += q.w * q.phi[i] * q.phi[j];
                }
            }
        }
        Ok(Some((m, vec![0.0; nd])))
    })?;
    Ok(m)
}

fn dirichlet_values(space: &FeSpace, g: &dyn Fn(Point) -> f64) -> Result<Vec<(usize, f64)>> {
    space
        .dirichlet_dofs()
        .iter()
        .map(|&d| {
            let p = space.dof_coords()[d];
            let v = g(p);
            if v.is_finite() {
                Ok((d, v))
            } else {
                Err(Error::NonFinite {
                    value: v,
                    x: p[0],
                    y: p[1],
                    context: "Dirichlet data".into(),
                })
            }
        })
        .collect()
}

/// Strong Dirichlet conditions by row and column elimination: constrained
/// rows become identity rows and known values move to the right-hand side.
pub fn apply_dirichlet(mut system: LinearSystem, space: &FeSpace, g: &dyn Fn(Point) -> f64) -> Result<LinearSystem> {
    let cons = dirichlet_values(space, g)?;
    let n = space.ndofs();
    let mut value = vec![None; n];
    for &(d, v) in &cons {
        value[d] = Some(v);
    }
    for i in 0..n {
        let (cols, vals) = system.matrix.row_mut(i);
        if let Some(gi) = value[i] {
            for (&j, a) in cols.iter().zip(vals.iter_mut()) {
                *a = if j == i { 1.0 } else { 0.0 };
            }
            system.rhs[i] = gi;
        } else {
            for (&j, a) in cols.iter().zip(vals.iter_mut()) {
                if let Some(gj) = value[j] {
                    system.rhs[i] -= *a * gj;
                    *a = 0.0;
                }
            }
        }
    }
    system.constraints = cons;
    Ok(system)
}

/// Row replacement only; columns of constrained DOFs are left in place.
pub fn apply_dirichlet_rows_only(mut system: LinearSystem, space: &FeSpace, g: &dyn Fn(Point) -> f64) -> Result<LinearSystem> {
    let cons = dirichlet_values(space, g)?;
    for &(i, gi) in &cons {
        let (cols, vals) = system.matrix.row_mut(i);
        for (&j, a) in cols.iter().zip(vals.iter_mut()) {
            *a = if j == i { 1.0 } else { 0.0 };
        }
        system.rhs[i] = gi;
    }
    system.constraints = cons;
    Ok(system)
}

/// Galerkin plus stabilization with Dirichlet conditions applied.
pub fn assemble_stabilized(
    space: &FeSpace,
    problem: &ProblemSpec,
    method: StabilizationMethod,
    tau: &TauField,
) -> Result<LinearSystem> {
    let mut sys = assemble_galerkin(space, problem)?;
    let stab = assemble_stabilization(space, problem, method, tau)?;
    sys.matrix.axpy(1.0, &stab.matrix);
    for (b, c) in sys.rhs.iter_mut().zip(&stab.rhs) {
        *b += c;
    }
    apply_dirichlet(sys, space, &*problem.dirichlet)
}

pub fn solve_stabilized(
    space: &Arc<FeSpace>,
    problem: &ProblemSpec,
    method: StabilizationMethod,
    tau: &TauField,
) -> Result<(DiscreteFunction, SolverReport)> {
    solve_stabilized_with(space, problem, method, tau, SolverMode::Direct)
}

pub fn solve_stabilized_with(
    space: &Arc<FeSpace>,
    problem: &ProblemSpec,
    method: StabilizationMethod,
    tau: &TauField,
    mode: SolverMode,
) -> Result<(DiscreteFunction, SolverReport)> {
    let sys = assemble_stabilized(space, problem, method, tau)?;
    let (x, report) = linear_solver::solve_with(&sys.matrix, &sys.rhs, mode)?;
    Ok((DiscreteFunction::new(space.clone(), x), report))
}

/// The τ-independent pieces of a system with a single constant τ:
/// `(A + τS) u = b + τc`, stored before boundary conditions.
#[derive(Debug, Clone)]
pub struct SplitSystem {
    pub galerkin: LinearSystem,
    /// Stabilization form at τ ≡ 1.
    pub stabilization: LinearSystem,
}

impl SplitSystem {
    pub fn assemble(space: &FeSpace, problem: &ProblemSpec, method: StabilizationMethod) -> Result<Self> {
        let ones = TauField::constant(space.mesh().element_count(), 1.0)?;
        Ok(SplitSystem {
            galerkin: assemble_galerkin(space, problem)?,
            stabilization: assemble_stabilization(space, problem, method, &ones)?,
        })
    }

    /// System at constant τ with homogeneous Dirichlet conditions.
    pub fn at(&self, space: &FeSpace, tau: f64) -> Result<LinearSystem> {
        let mut sys = self.galerkin.clone();
        sys.matrix.axpy(tau, &self.stabilization.matrix);
        for (b, c) in sys.rhs.iter_mut().zip(&self.stabilization.rhs) {
            *b += tau * c;
        }
        apply_dirichlet(sys, space, &|_| 0.0)
    }
}
