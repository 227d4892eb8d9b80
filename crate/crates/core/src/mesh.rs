//! Simplicial meshes in one and two dimensions.
//!
//! A [`Mesh`] stores node coordinates, element connectivity and the set of
//! boundary nodes. One-dimensional meshes reuse the same container with
//! two-node elements and `y = 0` coordinates, so everything downstream is
//! written once for both dimensions.
//!
//! The text format is line oriented:
//!
//! ```text
//! mesh <dimension> <node_count> <element_count>
//! <x> [<y>]                 (node_count lines)
//! <i0> <i1> [<i2>]          (element_count lines, 1-based)
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Read;

use crate::error::{invalid, parse_err, Error, Result};

/// A point in the plane. One-dimensional meshes keep `y = 0`.
pub type Point = [f64; 2];

/// Axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxDomain {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl BoxDomain {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Self { x0, x1, y0, y1 }
    }

    pub fn unit_square() -> Self {
        Self::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }
}

/// Parameters of a structured mesh, kept so that nested refinements can be
/// rebuilt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StructuredGrid {
    Interval { a: f64, b: f64, n: usize },
    Rectangle { domain: BoxDomain, nx: usize, ny: usize },
}

impl StructuredGrid {
    pub fn unit_interval(n: usize) -> Self {
        Self::Interval { a: 0.0, b: 1.0, n }
    }

    pub fn unit_square(n: usize) -> Self {
        Self::Rectangle {
            domain: BoxDomain::unit_square(),
            nx: n,
            ny: n,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Interval { .. } => 1,
            Self::Rectangle { .. } => 2,
        }
    }

    pub fn mesh(&self) -> Result<Mesh> {
        match *self {
            Self::Interval { a, b, n } => Mesh::interval(a, b, n),
            Self::Rectangle { domain, nx, ny } => Mesh::structured(domain, nx, ny),
        }
    }

    /// The same grid with every cell split `factor` times per direction.
    pub fn refined(&self, factor: usize) -> Self {
        match *self {
            Self::Interval { a, b, n } => Self::Interval { a, b, n: n * factor },
            Self::Rectangle { domain, nx, ny } => Self::Rectangle {
                domain,
                nx: nx * factor,
                ny: ny * factor,
            },
        }
    }

    /// Element diameter (all elements are congruent).
    pub fn h_k(&self) -> f64 {
        match *self {
            Self::Interval { a, b, n } => (b - a) / n as f64,
            Self::Rectangle { domain, nx, ny } => {
                let hx = (domain.x1 - domain.x0) / nx as f64;
                let hy = (domain.y1 - domain.y0) / ny as f64;
                hx.hypot(hy)
            }
        }
    }

    pub fn measure(&self) -> f64 {
        match *self {
            Self::Interval { a, b, .. } => b - a,
            Self::Rectangle { domain, .. } => domain.area(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    nodes: Vec<Point>,
    /// Flattened connectivity, `dim + 1` vertices per element.
    cells: Vec<usize>,
    boundary: Vec<bool>,
}

/// Geometric quantities of one element.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementGeometry {
    pub dim: usize,
    /// Diameter: the longest edge.
    pub h_k: f64,
    /// Length in 1D, area in 2D.
    pub area: f64,
    pub barycenter: Point,
    pub vertices: Vec<Point>,
}

fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Builds a mesh from raw parts, normalizing 2D orientation to
    /// counter-clockwise and recomputing boundary nodes.
    pub fn from_parts(dim: usize, nodes: Vec<Point>, mut cells: Vec<usize>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(invalid(format!("unsupported mesh dimension {dim}")));
        }
        let nv = dim + 1;
        if !cells.len().is_multiple_of(nv) {
            return Err(invalid("connectivity length is not a multiple of vertices per element"));
        }
        for (k, cell) in cells.chunks_mut(nv).enumerate() {
            validate_cell(k, cell, &nodes, dim)?;
        }
        let mut mesh = Mesh {
            dim,
            nodes,
            cells,
            boundary: Vec::new(),
        };
        mesh.boundary = mesh.compute_boundary();
        Ok(mesh)
    }

    /// Uniform partition of `[a, b]` into `n` intervals.
    pub fn interval(a: f64, b: f64, n: usize) -> Result<Self> {
        if n == 0 || !(b > a) {
            return Err(invalid(format!("interval needs n >= 1 and b > a, got n={n}, [{a}, {b}]")));
        }
        let nodes = (0..=n)
            .map(|i| [a + (b - a) * i as f64 / n as f64, 0.0])
            .collect();
        let cells = (0..n).flat_map(|i| [i, i + 1]).collect();
        Self::from_parts(1, nodes, cells)
    }

    /// Structured triangulation of a box: each of the `nx × ny` cells is
    /// split into two right triangles along the lower-left to upper-right
    /// diagonal.
    pub fn structured(domain: BoxDomain, nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(invalid(format!("structured mesh needs nx, ny >= 1, got {nx}x{ny}")));
        }
        if !(domain.x1 > domain.x0 && domain.y1 > domain.y0) {
            return Err(invalid(format!("box has non-positive side lengths: {domain:?}")));
        }
        let hx = (domain.x1 - domain.x0) / nx as f64;
        let hy = (domain.y1 - domain.y0) / ny as f64;
        let mut nodes = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let x = if i == nx { domain.x1 } else { domain.x0 + hx * i as f64 };
                let y = if j == ny { domain.y1 } else { domain.y0 + hy * j as f64 };
                nodes.push([x, y]);
            }
        }
        let id = |i: usize, j: usize| j * (nx + 1) + i;
        let mut cells = Vec::with_capacity(6 * nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let (n00, n10, n01, n11) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
                cells.extend_from_slice(&[n00, n10, n11]);
                cells.extend_from_slice(&[n00, n11, n01]);
            }
        }
        Self::from_parts(2, nodes, cells)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes(&self) -> &[Point] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn element_count(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertices_per_element(&self) -> usize {
        self.dim + 1
    }

    pub fn element(&self, k: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[k * nv..(k + 1) * nv]
    }

    pub fn elements(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks(self.dim + 1)
    }

    pub fn is_boundary_node(&self, i: usize) -> bool {
        self.boundary[i]
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.boundary[i]).collect()
    }

    /// Edges as sorted vertex pairs, each mapped to the number of elements
    /// sharing it. Only meaningful in 2D.
    pub fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut counts = HashMap::new();
        if self.dim == 2 {
            for cell in self.elements() {
                for e in 0..3 {
                    let (a, b) = (cell[e], cell[(e + 1) % 3]);
                    *counts.entry((a.min(b), a.max(b))).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    fn compute_boundary(&self) -> Vec<bool> {
        let mut boundary = vec![false; self.nodes.len()];
        match self.dim {
            1 => {
                let mut count = vec![0usize; self.nodes.len()];
                for &v in &self.cells {
                    count[v] += 1;
                }
                for (b, c) in boundary.iter_mut().zip(&count) {
                    *b = *c == 1;
                }
            }
            _ => {
                for ((a, b), c) in self.edge_counts() {
                    if c == 1 {
                        boundary[a] = true;
                        boundary[b] = true;
                    }
                }
            }
        }
        boundary
    }

    pub fn element_geometry(&self, k: usize) -> ElementGeometry {
        let cell = self.element(k);
        let vertices: Vec<Point> = cell.iter().map(|&v| self.nodes[v]).collect();
        let nv = vertices.len() as f64;
        let barycenter = [
            vertices.iter().map(|p| p[0]).sum::<f64>() / nv,
            vertices.iter().map(|p| p[1]).sum::<f64>() / nv,
        ];
        let (h_k, area) = if self.dim == 1 {
            let h = (vertices[1][0] - vertices[0][0]).abs();
            (h, h)
        } else {
            let h = dist(vertices[0], vertices[1])
                .max(dist(vertices[1], vertices[2]))
                .max(dist(vertices[2], vertices[0]));
            (h, signed_area(vertices[0], vertices[1], vertices[2]))
        };
        ElementGeometry {
            dim: self.dim,
            h_k,
            area,
            barycenter,
            vertices,
        }
    }

    /// Splits every element uniformly: triangles into four (edge midpoints),
    /// intervals into two. Existing nodes keep their indices.
    pub fn refine_uniform(&self) -> Result<Mesh> {
        let mut nodes = self.nodes.clone();
        let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
        let mut mid = |a: usize, b: usize, nodes: &mut Vec<Point>| -> usize {
            *midpoint.entry((a.min(b), a.max(b))).or_insert_with(|| {
                let (p, q) = (nodes[a], nodes[b]);
                nodes.push([0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])]);
                nodes.len() - 1
            })
        };
        let mut cells = Vec::with_capacity(self.cells.len() * 4);
        for cell in self.elements() {
            if self.dim == 1 {
                let m = mid(cell[0], cell[1], &mut nodes);
                cells.extend_from_slice(&[cell[0], m, m, cell[1]]);
            } else {
                let (a, b, c) = (cell[0], cell[1], cell[2]);
                let ab = mid(a, b, &mut nodes);
                let bc = mid(b, c, &mut nodes);
                let ca = mid(c, a, &mut nodes);
                cells.extend_from_slice(&[a, ab, ca, ab, b, bc, ca, bc, c, ab, bc, ca]);
            }
        }
        Mesh::from_parts(self.dim, nodes, cells)
    }

    /// Writes the mesh in the text format described in the module docs.
    pub fn export(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "mesh {} {} {}", self.dim, self.node_count(), self.element_count());
        for p in &self.nodes {
            if self.dim == 1 {
                let _ = writeln!(out, "{:e}", p[0]);
            } else {
                let _ = writeln!(out, "{:e} {:e}", p[0], p[1]);
            }
        }
        for cell in self.elements() {
            let line: Vec<String> = cell.iter().map(|v| (v + 1).to_string()).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn import<R: Read>(mut source: R) -> Result<Mesh> {
        let mut text = String::new();
        source.read_to_string(&mut text)?;
        Self::import_str(&text)
    }

    pub fn import_str(text: &str) -> Result<Mesh> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or_else(|| parse_err(1, "empty mesh file"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 4 || fields[0] != "mesh" {
            return Err(parse_err(hline, "expected `mesh <dimension> <node_count> <element_count>`"));
        }
        let parse_count = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| parse_err(hline, format!("malformed count `{s}`")))
        };
        let dim = parse_count(fields[1])?;
        if dim != 1 && dim != 2 {
            return Err(parse_err(hline, format!("unsupported dimension {dim}")));
        }
        let nn = parse_count(fields[2])?;
        let ne = parse_count(fields[3])?;

        let mut nodes = Vec::with_capacity(nn);
        for i in 0..nn {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(hline, format!("expected {nn} nodes, found {i}")))?;
            let vals: Vec<f64> = l
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(ln, "malformed coordinate"))?;
            if vals.len() != dim {
                return Err(parse_err(ln, format!("expected {dim} coordinates, found {}", vals.len())));
            }
            nodes.push([vals[0], if dim == 2 { vals[1] } else { 0.0 }]);
        }

        let mut cells = Vec::with_capacity(ne * (dim + 1));
        for k in 0..ne {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| parse_err(hline, format!("expected {ne} elements, found {k}")))?;
            let idx: Vec<usize> = l
                .split_whitespace()
                .map(|s| s.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(ln, "malformed vertex index"))?;
            if idx.len() != dim + 1 {
                return Err(parse_err(ln, format!("expected {} vertex indices, found {}", dim + 1, idx.len())));
            }
            let mut cell = Vec::with_capacity(dim + 1);
            for &i in &idx {
                if i == 0 || i > nn {
                    return Err(parse_err(ln, format!("vertex index {i} out of range 1..={nn}")));
                }
                cell.push(i - 1);
            }
            validate_cell(k, &mut cell, &nodes, dim).map_err(|e| parse_err(ln, e.to_string()))?;
            cells.extend_from_slice(&cell);
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content after element list"));
        }
        Mesh::from_parts(dim, nodes, cells)
    }
}

fn validate_cell(k: usize, cell: &mut [usize], nodes: &[Point], dim: usize) -> Result<()> {
    for &v in cell.iter() {
        if v >= nodes.len() {
            return Err(Error::Validation(format!("element {k}: vertex {v} out of range")));
        }
    }
    for a in 0..cell.len() {
        for b in a + 1..cell.len() {
            if cell[a] == cell[b] {
                return Err(Error::Validation(format!(
                    "element {k}: repeated vertex index {}",
                    cell[a] + 1
                )));
            }
        }
    }
    if dim == 1 {
        if nodes[cell[0]][0] > nodes[cell[1]][0] {
            cell.swap(0, 1);
        }
        if nodes[cell[1]][0] - nodes[cell[0]][0] <= 0.0 {
            return Err(Error::Validation(format!("element {k}: zero length")));
        }
    } else {
        let area = signed_area(nodes[cell[0]], nodes[cell[1]], nodes[cell[2]]);
        if area == 0.0 || !area.is_finite() {
            return Err(Error::Validation(format!("element {k}: degenerate triangle")));
        }
        if area < 0.0 {
            cell.swap(1, 2);
        }
    }
    Ok(())
}

/// Length of the chord through the barycenter along `a`, clipped to the
/// element. Falls back to `h_K` when `a` vanishes or in 1D.
pub fn h_flow(geom: &ElementGeometry, a: [f64; 2]) -> f64 {
    let norm = (a[0] * a[0] + a[1] * a[1]).sqrt();
    if geom.dim == 1 || norm == 0.0 || !norm.is_finite() {
        return geom.h_k;
    }
    let d = [a[0] / norm, a[1] / norm];
    let b = geom.barycenter;
    let v = &geom.vertices;
    let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
    for e in 0..3 {
        let (p, q, r) = (v[e], v[(e + 1) % 3], v[(e + 2) % 3]);
        let mut n = [-(q[1] - p[1]), q[0] - p[0]];
        if n[0] * (r[0] - p[0]) + n[1] * (r[1] - p[1]) < 0.0 {
            n = [-n[0], -n[1]];
        }
        let c0 = n[0] * (b[0] - p[0]) + n[1] * (b[1] - p[1]);
        let c1 = n[0] * d[0] + n[1] * d[1];
        if c1 > 0.0 {
            tmin = tmin.max(-c0 / c1);
        } else if c1 < 0.0 {
            tmax = tmax.min(-c0 / c1);
        }
    }
    (tmax - tmin).min(geom.h_k)
}

/// Barycentric coordinates of `p` in element `k` (only the first `dim + 1`
/// entries are meaningful).
pub fn barycentric(mesh: &Mesh, k: usize, p: Point) -> [f64; 3] {
    let cell = mesh.element(k);
    let n = mesh.nodes();
    if mesh.dim() == 1 {
        let (x0, x1) = (n[cell[0]][0], n[cell[1]][0]);
        let t = (p[0] - x0) / (x1 - x0);
        [1.0 - t, t, 0.0]
    } else {
        let (a, b, c) = (n[cell[0]], n[cell[1]], n[cell[2]]);
        let total = signed_area(a, b, c);
        let l1 = signed_area(a, p, c) / total;
        let l2 = signed_area(a, b, p) / total;
        [1.0 - l1 - l2, l1, l2]
    }
}

/// Bucket grid used to find the element containing a point.
#[derive(Debug, Clone)]
pub struct PointLocator {
    origin: Point,
    cell_size: [f64; 2],
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl PointLocator {
    pub fn new(mesh: &Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for p in mesh.nodes() {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        let ne = mesh.element_count().max(1);
        let per_side = if mesh.dim() == 1 { ne } else { (ne as f64).sqrt().ceil() as usize };
        let dims = [per_side.max(1), if mesh.dim() == 1 { 1 } else { per_side.max(1) }];
        let cell_size = [
            ((hi[0] - lo[0]) / dims[0] as f64).max(f64::MIN_POSITIVE),
            ((hi[1] - lo[1]) / dims[1] as f64).max(f64::MIN_POSITIVE),
        ];
        let mut loc = PointLocator {
            origin: lo,
            cell_size,
            dims,
            buckets: vec![Vec::new(); dims[0] * dims[1]],
        };
        for (k, cell) in mesh.elements().enumerate() {
            let (mut blo, mut bhi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
            for &v in cell {
                let p = mesh.nodes()[v];
                for c in 0..2 {
                    blo[c] = blo[c].min(p[c]);
                    bhi[c] = bhi[c].max(p[c]);
                }
            }
            let (i0, j0) = loc.bucket_of(blo);
            let (i1, j1) = loc.bucket_of(bhi);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    loc.buckets[j * dims[0] + i].push(k);
                }
            }
        }
        loc
    }

    fn bucket_of(&self, p: Point) -> (usize, usize) {
        let f = |c: usize| {
            let t = ((p[c] - self.origin[c]) / self.cell_size[c]).floor();
            (t.max(0.0) as usize).min(self.dims[c] - 1)
        };
        (f(0), f(1))
    }

    /// Returns the element containing `p` with its barycentric coordinates.
    /// Points marginally outside (round-off) snap to the closest element.
    pub fn locate(&self, mesh: &Mesh, p: Point) -> Option<(usize, [f64; 3])> {
        let nv = mesh.dim() + 1;
        let score = |k: usize| {
            let lam = barycentric(mesh, k, p);
            (lam[..nv].iter().cloned().fold(f64::INFINITY, f64::min), lam)
        };
        let (i, j) = self.bucket_of(p);
        let mut best: Option<(usize, f64, [f64; 3])> = None;
        for &k in &self.buckets[j * self.dims[0] + i] {
            let (s, lam) = score(k);
            if best.is_none_or(|b| s > b.1) {
                best = Some((k, s, lam));
            }
        }
        if best.is_none_or(|b| b.1 < -1e-10) {
            for k in 0..mesh.element_count() {
                let (s, lam) = score(k);
                if best.is_none_or(|b| s > b.1) {
                    best = Some((k, s, lam));
                }
            }
        }
        best.filter(|b| b.1 > -1e-6).map(|(k, _, lam)| (k, lam))
    }
}
