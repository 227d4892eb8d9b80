//! Tabulated dimensionless coefficient `φ(P_1, …, P_d) = ‖a‖τ/h`.
//!
//! Each axis carries the uniform nodes `k 𝒫 / M` for `k = 0..=M` merged
//! with optional refinement nodes. Values are stored row-major (last axis
//! fastest). Lookup uses, per axis, the quadratic Lagrange polynomial on
//! nodes `{i−1, i, i+1}` for the cell `[x_i, x_{i+1}]` containing the query
//! (`{0, 1, 2}` in the first cell), so the interpolant is exact at nodes,
//! reproduces quadratics and is continuous across cells.
//!
//! File format:
//!
//! ```text
//! stabtable 1
//! dim <d> degree <l> kind <tbt|ls|supg|adjoint>
//! axis <i> pmax <P_i> count <M_i>
//! axisref <i> <node> <node> ...          (optional)
//! <i_1> ... <i_d> <phi>                  (one line per node, 0-based)
//! # <key> = <value>                      (metadata)
//! ```

use std::fmt::Write as _;
use std::io::Read;

use rayon::prelude::*;

use crate::assembly::StabilizationMethod;
use crate::calibration::{CalibrationProblem, CalibrationResult, Calibrator, MinimizeOptions, TrainingConfig};
use crate::error::{invalid, parse_err, Error, Result};
use crate::fe_space::{quadrature_order, Purpose};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub pmax: f64,
    pub count: usize,
    pub refinement: Vec<f64>,
}

impl Axis {
    pub fn new(pmax: f64, count: usize) -> Self {
        Axis {
            pmax,
            count,
            refinement: Vec::new(),
        }
    }

    pub fn with_refinement(mut self, nodes: Vec<f64>) -> Self {
        self.refinement = nodes;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pmax > 0.0 && self.pmax.is_finite()) || self.count < 2 {
            return Err(invalid(format!("axis needs pmax > 0 and count >= 2, got pmax={} count={}", self.pmax, self.count)));
        }
        if let Some(r) = self.refinement.iter().find(|r| !(**r > 0.0 && **r < self.pmax)) {
            return Err(invalid(format!("refinement node {r} outside (0, {})", self.pmax)));
        }
        Ok(())
    }

    /// Sorted node coordinates.
    pub fn nodes(&self) -> Vec<f64> {
        let mut v: Vec<f64> = (0..=self.count)
            .map(|k| self.pmax * k as f64 / self.count as f64)
            .chain(self.refinement.iter().copied())
            .collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiTable {
    dim: usize,
    degree: usize,
    kind: StabilizationMethod,
    axes: Vec<Axis>,
    nodes: Vec<Vec<f64>>,
    values: Vec<f64>,
    metadata: Vec<(String, String)>,
}

/// Weights of the quadratic (or linear, for two nodes) stencil at `p`.
fn stencil(x: &[f64], p: f64) -> (usize, [f64; 3], usize) {
    let n = x.len();
    let p = p.clamp(x[0], x[n - 1]);
    if n == 2 {
        let t = (p - x[0]) / (x[1] - x[0]);
        return (0, [1.0 - t, t, 0.0], 2);
    }
    let cell = (x.partition_point(|&v| v <= p).max(1) - 1).min(n - 2);
    let s = cell.saturating_sub(1).min(n - 3);
    let (a, b, c) = (x[s], x[s + 1], x[s + 2]);
    let w = [
        (p - b) * (p - c) / ((a - b) * (a - c)),
        (p - a) * (p - c) / ((b - a) * (b - c)),
        (p - a) * (p - b) / ((c - a) * (c - b)),
    ];
    (s, w, 3)
}

impl PhiTable {
    pub fn new(
        dim: usize,
        degree: usize,
        kind: StabilizationMethod,
        axes: Vec<Axis>,
        values: Vec<f64>,
        metadata: Vec<(String, String)>,
    ) -> Result<Self> {
        if !(1..=2).contains(&dim) || axes.len() != dim {
            return Err(Error::Validation(format!("table of dimension {dim} needs {dim} axes, got {}", axes.len())));
        }
        if !(1..=3).contains(&degree) {
            return Err(Error::Validation(format!("unsupported degree {degree}")));
        }
        for a in &axes {
            a.validate().map_err(|e| Error::Validation(e.to_string()))?;
        }
        let nodes: Vec<Vec<f64>> = axes.iter().map(Axis::nodes).collect();
        let expected: usize = nodes.iter().map(Vec::len).product();
        if values.len() != expected {
            return Err(Error::Validation(format!("expected {expected} values, found {}", values.len())));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Validation(format!("phi at node {i} is {v}; values must be finite and nonnegative")));
        }
        Ok(PhiTable {
            dim,
            degree,
            kind,
            axes,
            nodes,
            values,
            metadata,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn kind(&self) -> StabilizationMethod {
        self.kind
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis_nodes(&self, i: usize) -> &[f64] {
        &self.nodes[i]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.nodes.iter().map(Vec::len).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn metadata(&self) -> &[(String, String)] {
        &self.metadata
    }

    pub fn metadata_value(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.nodes).fold(0, |acc, (&i, n)| acc * n.len() + i)
    }

    pub fn value_at(&self, idx: &[usize]) -> f64 {
        self.values[self.linear_index(idx)]
    }

    /// `φ(P)` for `P ≥ 0` componentwise; queries outside the box are clamped.
    pub fn interpolate(&self, p: &[f64]) -> f64 {
        assert_eq!(p.len(), self.dim, "query dimension must match the table");
        if self.dim == 1 {
            let (s, w, m) = stencil(&self.nodes[0], p[0]);
            (0..m).map(|a| w[a] * self.values[s + a]).sum()
        } else {
            let (sx, wx, mx) = stencil(&self.nodes[0], p[0]);
            let (sy, wy, my) = stencil(&self.nodes[1], p[1]);
            let ny = self.nodes[1].len();
            let mut acc = 0.0;
            for a in 0..mx {
                let mut row = 0.0;
                for b in 0..my {
                    row += wy[b] * self.values[(sx + a) * ny + sy + b];
                }
                acc += wx[a] * row;
            }
            acc
        }
    }

    fn indices(&self) -> Vec<Vec<usize>> {
        node_indices(&self.shape())
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "stabtable {FORMAT_VERSION}");
        let _ = writeln!(s, "dim {} degree {} kind {}", self.dim, self.degree, self.kind.name());
        for (i, a) in self.axes.iter().enumerate() {
            let _ = writeln!(s, "axis {} pmax {:e} count {}", i + 1, a.pmax, a.count);
        }
        for (i, a) in self.axes.iter().enumerate() {
            if !a.refinement.is_empty() {
                let list: Vec<String> = a.refinement.iter().map(|v| format!("{v:e}")).collect();
                let _ = writeln!(s, "axisref {} {}", i + 1, list.join(" "));
            }
        }
        for (idx, v) in self.indices().iter().zip(&self.values) {
            let list: Vec<String> = idx.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "{} {v:e}", list.join(" "));
        }
        for (k, v) in &self.metadata {
            let _ = writeln!(s, "# {k} = {v}");
        }
        s
    }

    pub fn save<W: std::io::Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn load<R: Read>(mut source: R) -> Result<Self> {
        let mut s = String::new();
        source.read_to_string(&mut s)?;
        Self::from_text(&s)
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let mut next = |what: &str| lines.next().ok_or_else(|| parse_err(0, format!("unexpected end of file, expected {what}")));

        let (ln, head) = next("header")?;
        let head: Vec<&str> = head.split_whitespace().collect();
        if head.first() != Some(&"stabtable") || head.len() != 2 {
            return Err(parse_err(ln, "expected 'stabtable <version>'"));
        }
        if head[1] != FORMAT_VERSION.to_string() {
            return Err(parse_err(ln, format!("unsupported table version {} (expected {FORMAT_VERSION})", head[1])));
        }

        let (ln, l2) = next("dimension line")?;
        let t: Vec<&str> = l2.split_whitespace().collect();
        if t.len() != 6 || t[0] != "dim" || t[2] != "degree" || t[4] != "kind" {
            return Err(parse_err(ln, "expected 'dim <d> degree <l> kind <name>'"));
        }
        let dim: usize = t[1].parse().map_err(|_| parse_err(ln, "bad dimension"))?;
        let degree: usize = t[3].parse().map_err(|_| parse_err(ln, "bad degree"))?;
        let kind: StabilizationMethod = t[5].parse().map_err(|e: Error| parse_err(ln, e.to_string()))?;
        if !(1..=2).contains(&dim) {
            return Err(parse_err(ln, format!("unsupported dimension {dim}")));
        }

        let mut axes = Vec::with_capacity(dim);
        for i in 0..dim {
            let (ln, l) = next("axis line")?;
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != 6 || t[0] != "axis" || t[2] != "pmax" || t[4] != "count" || t[1] != (i + 1).to_string() {
                return Err(parse_err(ln, format!("expected 'axis {} pmax <P> count <M>'", i + 1)));
            }
            let pmax: f64 = t[3].parse().map_err(|_| parse_err(ln, "bad pmax"))?;
            let count: usize = t[5].parse().map_err(|_| parse_err(ln, "bad count"))?;
            axes.push(Axis::new(pmax, count));
        }

        let mut values = Vec::new();
        let mut metadata = Vec::new();
        let mut expected: Option<Vec<Vec<usize>>> = None;
        let mut last_line = 0;
        for (ln, l) in lines {
            last_line = ln;
            if let Some(rest) = l.strip_prefix('#') {
                let (k, v) = rest.split_once('=').ok_or_else(|| parse_err(ln, "metadata lines look like '# key = value'"))?;
                metadata.push((k.trim().to_string(), v.trim().to_string()));
                continue;
            }
            if let Some(rest) = l.strip_prefix("axisref") {
                if expected.is_some() {
                    return Err(parse_err(ln, "axisref must precede node lines"));
                }
                let mut t = rest.split_whitespace();
                let i: usize = t.next().and_then(|v| v.parse().ok()).ok_or_else(|| parse_err(ln, "bad axis index"))?;
                if i == 0 || i > dim {
                    return Err(parse_err(ln, format!("axis index {i} out of range")));
                }
                axes[i - 1].refinement = t.map(|v| v.parse::<f64>().map_err(|_| parse_err(ln, format!("bad node '{v}'")))).collect::<Result<_>>()?;
                continue;
            }
            if expected.is_none() {
                for a in &axes {
                    a.validate().map_err(|e| parse_err(ln, e.to_string()))?;
                }
                let shape: Vec<usize> = axes.iter().map(|a| a.nodes().len()).collect();
                expected = Some(node_indices(&shape));
            }
            let want = expected.as_ref().expect("set above");
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.len() != dim + 1 {
                return Err(parse_err(ln, format!("node line needs {dim} indices and a value")));
            }
            let k = values.len();
            if k >= want.len() {
                return Err(parse_err(ln, format!("more node lines than the {} expected", want.len())));
            }
            for (a, tok) in t[..dim].iter().enumerate() {
                let i: usize = tok.parse().map_err(|_| parse_err(ln, format!("bad index '{tok}'")))?;
                if i != want[k][a] {
                    return Err(parse_err(ln, format!("node indices out of order: expected {:?}", want[k])));
                }
            }
            let v: f64 = t[dim].parse().map_err(|_| parse_err(ln, format!("bad value '{}'", t[dim])))?;
            if v < 0.0 || !v.is_finite() {
                return Err(parse_err(ln, format!("phi must be finite and nonnegative, got {v}")));
            }
            values.push(v);
        }
        let expected_count: usize = axes.iter().map(|a| a.nodes().len()).product();
        if values.len() != expected_count {
            return Err(parse_err(
                last_line,
                format!("expected {expected_count} node values, found {}", values.len()),
            ));
        }
        PhiTable::new(dim, degree, kind, axes, values, metadata)
    }
}

/// Row-major multi-indices of a grid of the given shape.
pub fn node_indices(shape: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &n in shape {
        out = out
            .into_iter()
            .flat_map(|p| {
                (0..n).map(move |i| {
                    let mut q = p.clone();
                    q.push(i);
                    q
                })
            })
            .collect();
    }
    out
}

#[derive(Debug, Clone)]
pub struct TableBuildSpec {
    pub dim: usize,
    pub degree: usize,
    pub kind: StabilizationMethod,
    pub axes: Vec<Axis>,
    pub training: TrainingConfig,
    pub minimize: MinimizeOptions,
    pub jobs: usize,
    pub skip_failed: bool,
}

pub const DEFAULT_PMAX: f64 = 700.0;
pub const DEFAULT_COUNT: usize = 35;
pub const DEFAULT_REFINEMENT: [f64; 5] = [0.625, 1.25, 2.5, 5.0, 10.0];

impl TableBuildSpec {
    pub fn new(dim: usize, degree: usize, kind: StabilizationMethod) -> Self {
        TableBuildSpec {
            dim,
            degree,
            kind,
            axes: vec![Axis::new(DEFAULT_PMAX, DEFAULT_COUNT).with_refinement(DEFAULT_REFINEMENT.to_vec()); dim],
            training: TrainingConfig::default(),
            minimize: MinimizeOptions::default(),
            jobs: 1,
            skip_failed: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dim) || self.axes.len() != self.dim {
            return Err(invalid(format!("need {} axes for dimension {}", self.dim, self.dim)));
        }
        if !(1..=3).contains(&self.degree) {
            return Err(invalid(format!("unsupported degree {}", self.degree)));
        }
        if self.jobs == 0 {
            return Err(invalid("jobs must be at least 1"));
        }
        self.axes.iter().try_for_each(Axis::validate)
    }
}

/// Outcome of the calibration at one grid node.
#[derive(Debug, Clone)]
pub struct NodeReport {
    pub index: Vec<usize>,
    pub peclet: Vec<f64>,
    pub outcome: std::result::Result<CalibrationResult, String>,
}

impl NodeReport {
    fn is_origin(&self) -> bool {
        self.peclet.iter().all(|p| *p == 0.0)
    }
}

/// Per-node summary followed by every Newton iterate.
pub fn build_log_csv(reports: &[NodeReport]) -> String {
    let mut s = String::from("node,peclet,status,tau,J,phi,boundary_hit,iterate,trace_tau,trace_J,trace_dJ,trace_d2J\n");
    for r in reports {
        let node: Vec<String> = r.index.iter().map(usize::to_string).collect();
        let pe: Vec<String> = r.peclet.iter().map(|v| format!("{v:e}")).collect();
        let (node, pe) = (node.join(":"), pe.join(":"));
        match &r.outcome {
            Ok(c) => {
                for t in &c.trace {
                    let _ = writeln!(
                        s,
                        "{node},{pe},ok,{:e},{:e},{:e},{},{},{:e},{:e},{:e},{:e}",
                        c.tau_opt, c.j_min, c.phi, c.boundary_hit, t.iterate, t.tau, t.j, t.dj, t.d2j
                    );
                }
            }
            Err(e) if r.is_origin() => {
                let _ = writeln!(s, "{node},{pe},{},,,,,,,,,", e.replace(',', ";"));
            }
            Err(e) => {
                let _ = writeln!(s, "{node},{pe},failed: {},,,,,,,,,", e.replace(',', ";"));
            }
        }
    }
    s
}

/// Runs the calibration at every node except the origin.
pub fn calibrate_nodes(spec: &TableBuildSpec) -> Result<Vec<NodeReport>> {
    spec.validate()?;
    let nodes: Vec<Vec<f64>> = spec.axes.iter().map(Axis::nodes).collect();
    let shape: Vec<usize> = nodes.iter().map(Vec::len).collect();
    let indices = node_indices(&shape);
    let run = || {
        indices
            .par_iter()
            .map(|idx| {
                let peclet: Vec<f64> = idx.iter().zip(&nodes).map(|(&i, n)| n[i]).collect();
                let outcome = if peclet.iter().all(|p| *p == 0.0) {
                    Err("extrapolated origin".to_string())
                } else {
                    CalibrationProblem::training(spec.degree, &peclet, spec.kind, &spec.training)
                        .and_then(|cp| Calibrator::new(&cp))
                        .and_then(|cal| cal.minimize(&spec.minimize))
                        .map_err(|e| e.to_string())
                };
                NodeReport {
                    index: idx.clone(),
                    peclet,
                    outcome,
                }
            })
            .collect::<Vec<_>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs)
        .build()
        .map_err(|e| invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(run))
}

/// Quadratic through three points, evaluated at 0 (linear for two).
fn extrapolate_to_zero(pts: &[(f64, f64)]) -> f64 {
    match pts {
        [(x1, y1), (x2, y2)] => y1 - x1 * (y2 - y1) / (x2 - x1),
        [(a, fa), (b, fb), (c, fc), ..] => {
            fa * b * c / ((a - b) * (a - c)) + fb * a * c / ((b - a) * (b - c)) + fc * a * b / ((c - a) * (c - b))
        }
        _ => 0.0,
    }
}

/// Assembles the table from node reports. Failed nodes abort unless
/// `skip_failed` is set, in which case they take the value of the nearest
/// successful node in Péclet space.
pub fn assemble_table(spec: &TableBuildSpec, reports: &[NodeReport]) -> Result<PhiTable> {
    let mut values = vec![f64::NAN; reports.len()];
    let mut failed = Vec::new();
    let mut origin = None;
    let mut boundary_hits = 0;
    for (k, r) in reports.iter().enumerate() {
        match &r.outcome {
            Ok(c) => {
                values[k] = c.phi;
                boundary_hits += c.boundary_hit as usize;
            }
            Err(_) if r.is_origin() => origin = Some(k),
            Err(e) => {
                if !spec.skip_failed {
                    return Err(Error::TableNode {
                        node: r.index.clone(),
                        source: Box::new(Error::Calibration { tau: f64::NAN, msg: e.clone() }),
                    });
                }
                failed.push(k);
            }
        }
    }
    for &k in &failed {
        let p = &reports[k].peclet;
        let best = reports
            .iter()
            .enumerate()
            .filter(|(_, r)| r.outcome.is_ok())
            .min_by(|(_, a), (_, b)| {
                let d = |r: &NodeReport| r.peclet.iter().zip(p).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
                d(a).total_cmp(&d(b))
            })
            .map(|(i, _)| i)
            .ok_or_else(|| Error::Calibration { tau: f64::NAN, msg: "every node failed".into() })?;
        values[k] = reports[best].outcome.as_ref().map(|c| c.phi).unwrap_or(0.0);
    }
    let nodes: Vec<Vec<f64>> = spec.axes.iter().map(Axis::nodes).collect();
    let shape: Vec<usize> = nodes.iter().map(Vec::len).collect();
    let lin = |idx: &[usize]| idx.iter().zip(&shape).fold(0, |acc, (&i, &n)| acc * n + i);
    if let Some(k) = origin {
        let mut est = Vec::new();
        for axis in 0..spec.dim {
            let pts: Vec<(f64, f64)> = (1..nodes[axis].len().min(4))
                .map(|i| {
                    let mut idx = vec![0; spec.dim];
                    idx[axis] = i;
                    (nodes[axis][i], values[lin(&idx)])
                })
                .collect();
            est.push(extrapolate_to_zero(&pts));
        }
        values[k] = (est.iter().sum::<f64>() / est.len() as f64).max(0.0);
    }

    let mut metadata = vec![
        ("training_cells_p1".to_string(), spec.training.cells_p1.to_string()),
        (
            "training_cells".to_string(),
            spec.training.cells_p1.div_ceil(spec.degree).to_string(),
        ),
        (
            "reference".to_string(),
            {
                let r = crate::calibration::ReferenceConfig::default_for(spec.dim, spec.degree);
                let f = spec.training.fine_factor.unwrap_or(r.fine_factor);
                format!("{} fine_factor {} degree {}", r.formula.name(), f, r.degree.unwrap_or(spec.degree))
            },
        ),
        ("bracket_expansion".to_string(), format!("{} {}", spec.training.bracket_expansion.0, spec.training.bracket_expansion.1)),
        (
            "quadrature_orders".to_string(),
            format!(
                "mass {} stiffness {} stabilization {} load {}",
                quadrature_order(spec.degree, Purpose::Mass),
                quadrature_order(spec.degree, Purpose::Stiffness),
                quadrature_order(spec.degree, Purpose::Stabilization),
                quadrature_order(spec.degree, Purpose::Load)
            ),
        ),
        ("stencil".to_string(), "quadratic 3-node per axis".to_string()),
        ("extrapolated_origin".to_string(), "true".to_string()),
        ("boundary_hits".to_string(), boundary_hits.to_string()),
    ];
    if !failed.is_empty() {
        let list: Vec<String> = failed
            .iter()
            .map(|&k| reports[k].index.iter().map(usize::to_string).collect::<Vec<_>>().join("-"))
            .collect();
        metadata.push(("failed_nodes".to_string(), list.join(" ")));
    }
    if spec.kind == StabilizationMethod::TermByTerm {
        let mut bad = Vec::new();
        for axis in 0..spec.dim {
            let along: Vec<f64> = (0..shape[axis])
                .map(|i| {
                    let mut idx = vec![0; spec.dim];
                    idx[axis] = i;
                    values[lin(&idx)]
                })
                .collect();
            if along.windows(2).any(|w| w[1] < w[0]) {
                bad.push((axis + 1).to_string());
            }
        }
        if bad.is_empty() {
            metadata.push(("monotone_axes".to_string(), "true".to_string()));
        } else {
            log::warn!("phi is not monotone along axes {}", bad.join(", "));
            metadata.push(("warning".to_string(), format!("phi not monotone along axis {}", bad.join(" "))));
        }
    }
    if let Ok(t) = std::env::var("SOURCE_DATE_EPOCH") {
        metadata.push(("build_timestamp".to_string(), t));
    }
    PhiTable::new(spec.dim, spec.degree, spec.kind, spec.axes.clone(), values, metadata)
}

pub fn build_table(spec: &TableBuildSpec) -> Result<PhiTable> {
    let reports = calibrate_nodes(spec)?;
    assemble_table(spec, &reports)
}
