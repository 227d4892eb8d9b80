//! Lagrange finite-element spaces of degree 1, 2 and 3 on simplicial meshes.
//!
//! Basis functions are written in barycentric coordinates on the principal
//! lattice: the function attached to the lattice multi-index `α` (with
//! `|α| = l`) is
//!
//! ```text
//! φ_α(λ) = Π_m Π_{s < α_m} (l λ_m − s) / (s + 1)
//! ```
//!
//! which is one at its own node and zero at all other lattice nodes.
//! Physical gradients and Laplacians follow from the chain rule with the
//! constant gradients `∇λ_m` of the affine element map.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{invalid, Error, Result};
use crate::mesh::{Mesh, Point, PointLocator};

/// Quadrature on the reference simplex, in barycentric coordinates.
/// Weights sum to the reference measure (1/2 for triangles, 1 for intervals).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub dim: usize,
    /// Polynomial degree integrated exactly.
    pub order: usize,
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

/// What an integrand is used for; selects the quadrature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Mass,
    Stiffness,
    Stabilization,
    /// Right-hand sides with non-polynomial data.
    Load,
    /// Error norms against non-polynomial fields.
    Error,
}

/// Quadrature order used for a degree/purpose pair.
pub fn quadrature_order(degree: usize, purpose: Purpose) -> usize {
    match purpose {
        Purpose::Mass | Purpose::Stiffness | Purpose::Stabilization => 2 * degree,
        Purpose::Load | Purpose::Error => 2 * degree + 2,
    }
}

pub fn quadrature_for(dim: usize, degree: usize, purpose: Purpose) -> QuadratureRule {
    let order = quadrature_order(degree, purpose);
    if dim == 1 {
        interval_rule(order)
    } else {
        triangle_rule(order)
    }
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (t * pn - pm) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[n - 1 - i] = 0.5 * (1.0 + t);
        w[n - 1 - i] = 1.0 / ((1.0 - t * t) * dp * dp);
    }
    (x, w)
}

pub fn interval_rule(order: usize) -> QuadratureRule {
    let n = order / 2 + 1;
    let (x, w) = gauss_legendre(n);
    QuadratureRule {
        dim: 1,
        order,
        points: x.iter().map(|&t| [1.0 - t, t, 0.0]).collect(),
        weights: w,
    }
}

/// Collapsed (Duffy) tensor Gauss rule on the reference triangle.
pub fn triangle_rule(order: usize) -> QuadratureRule {
    let n = (order + 2).div_ceil(2).max(1);
    let (x, w) = gauss_legendre(n);
    let mut points = Vec::with_capacity(n * n);
    let mut weights = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let (xi, eta) = (x[i], x[j]);
            let (px, py) = (xi * (1.0 - eta), eta);
            points.push([1.0 - px - py, px, py]);
            weights.push(w[i] * w[j] * (1.0 - eta));
        }
    }
    QuadratureRule {
        dim: 2,
        order,
        points,
        weights,
    }
}

/// Lattice multi-indices of the local nodes: vertices, then edge nodes,
/// then interior nodes.
pub fn local_lattice(dim: usize, degree: usize) -> Vec<[usize; 3]> {
    let l = degree;
    let mut out = Vec::new();
    if dim == 1 {
        out.push([l, 0, 0]);
        out.push([0, l, 0]);
        for s in 1..l {
            out.push([l - s, s, 0]);
        }
        return out;
    }
    out.push([l, 0, 0]);
    out.push([0, l, 0]);
    out.push([0, 0, l]);
    for e in 0..3 {
        for s in 1..l {
            let mut a = [0; 3];
            a[e] = l - s;
            a[(e + 1) % 3] = s;
            out.push(a);
        }
    }
    for i in 1..l {
        for j in 1..l {
            if i + j < l {
                out.push([l - i - j, i, j]);
            }
        }
    }
    out
}

/// Values and barycentric derivatives of every local basis function at one
/// reference point.
#[derive(Debug, Clone)]
pub struct BasisTab {
    pub values: Vec<f64>,
    pub dlam: Vec<[f64; 3]>,
    pub d2lam: Vec<[[f64; 3]; 3]>,
}

fn univariate(n: usize, l: usize, t: f64) -> (f64, f64, f64) {
    let (mut g, mut g1, mut g2) = (1.0, 0.0, 0.0);
    for s in 0..n {
        let f = (l as f64 * t - s as f64) / (s + 1) as f64;
        let f1 = l as f64 / (s + 1) as f64;
        g2 = g2 * f + 2.0 * g1 * f1;
        g1 = g1 * f + g * f1;
        g *= f;
    }
    (g, g1, g2)
}

impl BasisTab {
    pub fn new(lattice: &[[usize; 3]], degree: usize, nbary: usize, lam: [f64; 3]) -> Self {
        let mut values = Vec::with_capacity(lattice.len());
        let mut dlam = Vec::with_capacity(lattice.len());
        let mut d2lam = Vec::with_capacity(lattice.len());
        for alpha in lattice {
            let g: Vec<(f64, f64, f64)> = (0..nbary).map(|m| univariate(alpha[m], degree, lam[m])).collect();
            let prod_except = |skip: &[usize]| {
                (0..nbary)
                    .filter(|m| !skip.contains(m))
                    .map(|m| g[m].0)
                    .product::<f64>()
            };
            values.push(prod_except(&[]));
            let mut d = [0.0; 3];
            let mut dd = [[0.0; 3]; 3];
            for m in 0..nbary {
                d[m] = g[m].1 * prod_except(&[m]);
                for n in 0..nbary {
                    dd[m][n] = if m == n {
                        g[m].2 * prod_except(&[m])
                    } else {
                        g[m].1 * g[n].1 * prod_except(&[m, n])
                    };
                }
            }
            dlam.push(d);
            d2lam.push(dd);
        }
        BasisTab { values, dlam, d2lam }
    }

    /// Physical gradients and Laplacians given the barycentric gradients.
    pub fn physical(&self, grad_lam: &[[f64; 2]; 3], nbary: usize) -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut dots = [[0.0; 3]; 3];
        for m in 0..nbary {
            for n in 0..nbary {
                dots[m][n] = grad_lam[m][0] * grad_lam[n][0] + grad_lam[m][1] * grad_lam[n][1];
            }
        }
        let grads = self
            .dlam
            .iter()
            .map(|d| {
                let mut g = [0.0; 2];
                for m in 0..nbary {
                    g[0] += d[m] * grad_lam[m][0];
                    g[1] += d[m] * grad_lam[m][1];
                }
                g
            })
            .collect();
        let laps = self
            .d2lam
            .iter()
            .map(|dd| {
                let mut s = 0.0;
                for m in 0..nbary {
                    for n in 0..nbary {
                        s += dd[m][n] * dots[m][n];
                    }
                }
                s
            })
            .collect();
        (grads, laps)
    }
}

/// Gradients of the barycentric coordinates of element `k`.
pub fn bary_gradients(mesh: &Mesh, k: usize) -> [[f64; 2]; 3] {
    let cell = mesh.element(k);
    let n = mesh.nodes();
    if mesh.dim() == 1 {
        let g = 1.0 / (n[cell[1]][0] - n[cell[0]][0]);
        [[-g, 0.0], [g, 0.0], [0.0, 0.0]]
    } else {
        let (p0, p1, p2) = (n[cell[0]], n[cell[1]], n[cell[2]]);
        let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
        let g1 = [(p2[1] - p0[1]) / det, -(p2[0] - p0[0]) / det];
        let g2 = [-(p1[1] - p0[1]) / det, (p1[0] - p0[0]) / det];
        [[-g1[0] - g2[0], -g1[1] - g2[1]], g1, g2]
    }
}

/// Maps barycentric coordinates on element `k` to a physical point.
pub fn bary_to_point(mesh: &Mesh, k: usize, lam: [f64; 3]) -> Point {
    let mut p = [0.0; 2];
    for (m, &v) in mesh.element(k).iter().enumerate() {
        let q = mesh.nodes()[v];
        p[0] += lam[m] * q[0];
        p[1] += lam[m] * q[1];
    }
    p
}

/// Basis values, gradients and Laplacians at a point of one element.
#[derive(Debug, Clone)]
pub struct BasisEval {
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 2]>,
    pub laplacians: Vec<f64>,
}

/// A conforming Lagrange space `V_h` of degree 1..=3.
#[derive(Debug, Clone)]
pub struct FeSpace {
    mesh: Arc<Mesh>,
    degree: usize,
    lattice: Vec<[usize; 3]>,
    dof_coords: Vec<Point>,
    element_dofs: Vec<usize>,
    dirichlet: Vec<usize>,
    on_boundary: Vec<bool>,
}

impl FeSpace {
    pub fn new(mesh: Arc<Mesh>, degree: usize) -> Result<Self> {
        if !(1..=3).contains(&degree) {
            return Err(invalid(format!("unsupported polynomial degree {degree}")));
        }
        let dim = mesh.dim();
        let l = degree;
        let lattice = local_lattice(dim, l);
        let nloc = lattice.len();
        let nn = mesh.node_count();
        let ne = mesh.element_count();

        // Edge numbering in first-encounter order.
        let mut edge_id: HashMap<(usize, usize), usize> = HashMap::new();
        if dim == 2 && l > 1 {
            for cell in mesh.elements() {
                for e in 0..3 {
                    let (a, b) = (cell[e], cell[(e + 1) % 3]);
                    let next = edge_id.len();
                    edge_id.entry((a.min(b), a.max(b))).or_insert(next);
                }
            }
        }
        let per_edge = if dim == 2 { l - 1 } else { 0 };
        let n_interior = nloc - (dim + 1) - if dim == 2 { 3 * per_edge } else { 0 };
        let edge_base = nn;
        let interior_base = nn + edge_id.len() * per_edge;
        let ndofs = interior_base + ne * n_interior;

        let mut element_dofs = Vec::with_capacity(ne * nloc);
        let mut dof_coords = vec![[f64::NAN; 2]; ndofs];
        for (k, cell) in mesh.elements().enumerate() {
            let mut interior_seen = 0;
            for alpha in &lattice {
                let nz: Vec<usize> = (0..dim + 1).filter(|&m| alpha[m] > 0).collect();
                let dof = if nz.len() == 1 {
                    cell[nz[0]]
                } else if dim == 2 && nz.len() == 2 {
                    // local edge joining nz[0], nz[1]
                    let (m0, m1) = if (nz[0] + 1) % 3 == nz[1] { (nz[0], nz[1]) } else { (nz[1], nz[0]) };
                    let (ga, gb) = (cell[m0], cell[m1]);
                    let steps_from_a = alpha[m1];
                    let steps_from_lo = if ga < gb { steps_from_a } else { l - steps_from_a };
                    let id = edge_id[&(ga.min(gb), ga.max(gb))];
                    edge_base + id * per_edge + steps_from_lo - 1
                } else {
                    interior_seen += 1;
                    interior_base + k * n_interior + interior_seen - 1
                };
                element_dofs.push(dof);
                if dof_coords[dof][0].is_nan() {
                    let lam = [
                        alpha[0] as f64 / l as f64,
                        alpha[1] as f64 / l as f64,
                        alpha[2] as f64 / l as f64,
                    ];
                    dof_coords[dof] = bary_to_point(&mesh, k, lam);
                }
            }
        }

        let mut on_boundary = vec![false; ndofs];
        for v in 0..nn {
            on_boundary[v] = mesh.is_boundary_node(v);
        }
        if dim == 2 && l > 1 {
            for ((a, b), c) in mesh.edge_counts() {
                if c == 1 {
                    let id = edge_id[&(a, b)];
                    for s in 0..per_edge {
                        on_boundary[edge_base + id * per_edge + s] = true;
                    }
                }
            }
        }
        let dirichlet = (0..ndofs).filter(|&i| on_boundary[i]).collect();
        Ok(FeSpace {
            mesh,
            degree,
            lattice,
            dof_coords,
            element_dofs,
            dirichlet,
            on_boundary,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn ndofs(&self) -> usize {
        self.dof_coords.len()
    }

    pub fn dofs_per_element(&self) -> usize {
        self.lattice.len()
    }

    pub fn lattice(&self) -> &[[usize; 3]] {
        &self.lattice
    }

    pub fn dof_coords(&self) -> &[Point] {
        &self.dof_coords
    }

    pub fn element_dofs(&self, k: usize) -> &[usize] {
        let n = self.lattice.len();
        &self.element_dofs[k * n..(k + 1) * n]
    }

    pub fn dirichlet_dofs(&self) -> &[usize] {
        &self.dirichlet
    }

    pub fn is_dirichlet(&self, i: usize) -> bool {
        self.on_boundary[i]
    }

    /// Reference tabulation of the local basis at the points of `rule`.
    pub fn tabulate(&self, rule: &QuadratureRule) -> Vec<BasisTab> {
        rule.points
            .iter()
            .map(|&lam| BasisTab::new(&self.lattice, self.degree, self.dim() + 1, lam))
            .collect()
    }

    pub fn eval_basis(&self, k: usize, lam: [f64; 3]) -> BasisEval {
        let nb = self.dim() + 1;
        let tab = BasisTab::new(&self.lattice, self.degree, nb, lam);
        let (grads, laplacians) = tab.physical(&bary_gradients(&self.mesh, k), nb);
        BasisEval {
            values: tab.values,
            grads,
            laplacians,
        }
    }

    /// Lagrange interpolation `Π_h f`. Boundary values are not modified.
    pub fn interpolate(self: &Arc<Self>, f: impl Fn(Point) -> f64) -> Result<DiscreteFunction> {
        let values = self
            .dof_coords
            .iter()
            .map(|&p| {
                let v = f(p);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite {
                        value: v,
                        x: p[0],
                        y: p[1],
                        context: "interpolated field".into(),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscreteFunction::new(self.clone(), values))
    }
}

/// Coefficient vector over a finite-element space.
#[derive(Debug, Clone)]
pub struct DiscreteFunction {
    pub space: Arc<FeSpace>,
    pub values: Vec<f64>,
}

impl DiscreteFunction {
    pub fn new(space: Arc<FeSpace>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), space.ndofs(), "coefficient vector length must equal DOF count");
        DiscreteFunction { space, values }
    }

    pub fn zeros(space: Arc<FeSpace>) -> Self {
        let n = space.ndofs();
        Self::new(space, vec![0.0; n])
    }

    /// Value at barycentric point `lam` of element `k`.
    pub fn eval_in_element(&self, k: usize, lam: [f64; 3]) -> f64 {
        let s = &self.space;
        let tab = BasisTab::new(s.lattice(), s.degree(), s.dim() + 1, lam);
        s.element_dofs(k)
            .iter()
            .zip(&tab.values)
            .map(|(&d, &phi)| self.values[d] * phi)
            .sum()
    }

    pub fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            f: self,
            locator: PointLocator::new(self.space.mesh()),
        }
    }

    /// Lagrange interpolant of this function on another space, by point
    /// evaluation at that space's nodes.
    pub fn interpolate_onto(&self, target: &Arc<FeSpace>) -> Result<DiscreteFunction> {
        let ev = self.evaluator();
        let values = target
            .dof_coords()
            .iter()
            .map(|&p| {
                ev.eval(p).ok_or_else(|| Error::NonFinite {
                    value: f64::NAN,
                    x: p[0],
                    y: p[1],
                    context: "target node outside source mesh".into(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(DiscreteFunction::new(target.clone(), values))
    }
}

/// Point evaluation backed by a spatial index.
pub struct Evaluator<'a> {
    f: &'a DiscreteFunction,
    locator: PointLocator,
}

impl Evaluator<'_> {
    pub fn eval(&self, p: Point) -> Option<f64> {
        let mesh = self.f.space.mesh();
        self.locator
            .locate(mesh, p)
            .map(|(k, lam)| self.f.eval_in_element(k, lam))
    }
}
