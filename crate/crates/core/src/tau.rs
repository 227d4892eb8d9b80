//! Stabilization coefficient formulas.
//!
//! Every formula works with the effective lengths `h_K / l` and
//! `h_flow / l` for degree `l`, the spacing of Lagrange nodes on an edge.

use std::fmt;
use std::sync::Arc;

use crate::assembly::{element_qps, ProblemSpec, TauField};
use crate::error::{invalid, Result};
use crate::fe_space::{quadrature_for, FeSpace, Purpose};
use crate::mesh::h_flow;
use crate::phi_table::PhiTable;

/// Element-averaged flow data entering the coefficient formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementFlowData {
    pub dim: usize,
    pub a_bar: [f64; 2],
    pub a_norm: f64,
    pub mu: f64,
    pub h_k: f64,
    pub h_flow: f64,
    pub degree: usize,
}

pub fn effective_h(h: f64, degree: usize) -> f64 {
    h / degree as f64
}

impl ElementFlowData {
    pub fn new(dim: usize, a_bar: [f64; 2], mu: f64, h_k: f64, h_flow: f64, degree: usize) -> Self {
        let a_bar = if dim == 1 { [a_bar[0], 0.0] } else { a_bar };
        ElementFlowData {
            dim,
            a_bar,
            a_norm: (a_bar[0] * a_bar[0] + a_bar[1] * a_bar[1]).sqrt(),
            mu,
            h_k,
            h_flow,
            degree,
        }
    }

    /// Data with `h_flow = h_k`.
    pub fn isotropic(dim: usize, a_bar: [f64; 2], mu: f64, h_k: f64, degree: usize) -> Self {
        Self::new(dim, a_bar, mu, h_k, h_k, degree)
    }

    /// Quadrature means of `a` and `μ` over element `k`.
    pub fn from_element(space: &FeSpace, problem: &ProblemSpec, k: usize) -> Result<Self> {
        let rule = quadrature_for(space.dim(), space.degree(), Purpose::Mass);
        let tabs = space.tabulate(&rule);
        Self::from_element_with(space, problem, k, &rule, &tabs)
    }

    fn from_element_with(
        space: &FeSpace,
        problem: &ProblemSpec,
        k: usize,
        rule: &crate::fe_space::QuadratureRule,
        tabs: &[crate::fe_space::BasisTab],
    ) -> Result<Self> {
        let (mut a, mut mu, mut wsum) = ([0.0; 2], 0.0, 0.0);
        for q in element_qps(space, k, rule, tabs) {
            let v = (problem.velocity)(q.x);
            a[0] += q.w * v[0];
            a[1] += q.w * v[1];
            mu += q.w * (problem.diffusion)(q.x);
            wsum += q.w;
        }
        let a = [a[0] / wsum, a[1] / wsum];
        let mu = mu / wsum;
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(invalid(format!("element {k}: mean diffusion {mu} is not positive")));
        }
        let geom = space.mesh().element_geometry(k);
        let hf = h_flow(&geom, a);
        Ok(Self::new(space.dim(), a, mu, geom.h_k, hf, space.degree()))
    }

    pub fn h(&self) -> f64 {
        effective_h(self.h_k, self.degree)
    }

    pub fn h_flow_eff(&self) -> f64 {
        effective_h(self.h_flow, self.degree)
    }

    /// Directional Péclet numbers `ā_i h / (2μ)`.
    pub fn peclet_vector(&self) -> Vec<f64> {
        let s = self.h() / (2.0 * self.mu);
        self.a_bar[..self.dim].iter().map(|a| a * s).collect()
    }

    /// `h ‖ā‖ / (2μ)`.
    pub fn peclet(&self) -> f64 {
        self.h() * self.a_norm / (2.0 * self.mu)
    }
}

/// `P coth P − 1`, with a series near zero.
pub fn p_coth_p_minus_one(p: f64) -> f64 {
    let p = p.abs();
    if p < 1e-2 {
        let p2 = p * p;
        p2 * (1.0 / 3.0 - p2 * (1.0 / 45.0 - p2 * (2.0 / 945.0 - p2 / 4725.0)))
    } else {
        p / p.tanh() - 1.0
    }
}

pub fn tau_one_d(d: &ElementFlowData) -> f64 {
    if d.a_norm == 0.0 {
        return 0.0;
    }
    d.mu / (d.a_norm * d.a_norm) * p_coth_p_minus_one(d.peclet())
}

pub fn tau_codina(d: &ElementFlowData) -> f64 {
    let h = d.h();
    let diff = 4.0 * d.mu / (h * h);
    let adv = 2.0 * d.a_norm / h;
    1.0 / diff.hypot(adv)
}

pub fn tau_codina_colomes(d: &ElementFlowData) -> f64 {
    let h = d.h();
    let diff = 4.0 * d.mu / (h * h);
    let adv = 2.0 * d.a_norm / d.h_flow_eff();
    1.0 / diff.hypot(adv)
}

pub fn tau_hauke(d: &ElementFlowData) -> f64 {
    let h = d.h();
    let diffusive = h * h / (24.24 * d.mu);
    if d.a_norm == 0.0 {
        return diffusive;
    }
    (d.h_flow_eff() / (3f64.sqrt() * d.a_norm)).min(diffusive)
}

pub fn tau_franca_valentin(d: &ElementFlowData) -> f64 {
    let m = 1.0 / 3.0;
    let h = d.h();
    let pe = m * d.a_norm * h / d.mu;
    if pe <= 1.0 {
        m * h * h / (2.0 * d.mu)
    } else {
        h / (2.0 * d.a_norm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LsVariant {
    Isotropic,
    Flow,
}

/// `τ = (h or h_flow)/‖ā‖ · φ(|P|)`; falls back to Codina when `ā = 0`.
pub fn tau_least_squares(d: &ElementFlowData, table: &PhiTable, variant: LsVariant) -> f64 {
    if d.a_norm == 0.0 {
        return tau_codina(d);
    }
    let p: Vec<f64> = d.peclet_vector().iter().map(|v| v.abs()).collect();
    let phi = table.interpolate(&p);
    let h = match variant {
        LsVariant::Isotropic => d.h(),
        LsVariant::Flow => d.h_flow_eff(),
    };
    h / d.a_norm * phi
}

#[derive(Clone)]
pub enum TauFormula {
    OneD,
    Codina,
    CodinaColomes,
    Hauke,
    FrancaValentin,
    LeastSquares(Arc<PhiTable>),
    LeastSquaresFlow(Arc<PhiTable>),
}

impl fmt::Debug for TauFormula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl TauFormula {
    pub const ANALYTIC_NAMES: [&'static str; 5] = ["1d", "codina", "cc", "hauke", "fv"];
    pub const TABLE_NAMES: [&'static str; 2] = ["ls", "lsflow"];

    pub fn analytic() -> Vec<TauFormula> {
        vec![Self::OneD, Self::Codina, Self::CodinaColomes, Self::Hauke, Self::FrancaValentin]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::OneD => "1d",
            Self::Codina => "codina",
            Self::CodinaColomes => "cc",
            Self::Hauke => "hauke",
            Self::FrancaValentin => "fv",
            Self::LeastSquares(_) => "ls",
            Self::LeastSquaresFlow(_) => "lsflow",
        }
    }

    /// Parses a formula name; `ls` and `lsflow` need a table.
    pub fn parse(name: &str, table: Option<Arc<PhiTable>>) -> Result<Self> {
        let need = |t: Option<Arc<PhiTable>>| t.ok_or_else(|| invalid(format!("formula '{name}' needs a phi table (--table)")));
        Ok(match name {
            "1d" => Self::OneD,
            "codina" => Self::Codina,
            "cc" => Self::CodinaColomes,
            "hauke" => Self::Hauke,
            "fv" => Self::FrancaValentin,
            "ls" => Self::LeastSquares(need(table)?),
            "lsflow" => Self::LeastSquaresFlow(need(table)?),
            _ => {
                return Err(invalid(format!(
                    "unknown tau formula '{name}' (expected one of 1d, codina, cc, hauke, fv, ls, lsflow)"
                )))
            }
        })
    }

    pub fn eval(&self, d: &ElementFlowData) -> f64 {
        match self {
            Self::OneD => tau_one_d(d),
            Self::Codina => tau_codina(d),
            Self::CodinaColomes => tau_codina_colomes(d),
            Self::Hauke => tau_hauke(d),
            Self::FrancaValentin => tau_franca_valentin(d),
            Self::LeastSquares(t) => tau_least_squares(d, t, LsVariant::Isotropic),
            Self::LeastSquaresFlow(t) => tau_least_squares(d, t, LsVariant::Flow),
        }
    }
}

/// Flow data of every element.
pub fn flow_data(space: &FeSpace, problem: &ProblemSpec) -> Result<Vec<ElementFlowData>> {
    let rule = quadrature_for(space.dim(), space.degree(), Purpose::Mass);
    let tabs = space.tabulate(&rule);
    (0..space.mesh().element_count())
        .map(|k| ElementFlowData::from_element_with(space, problem, k, &rule, &tabs))
        .collect()
}

/// Per-element coefficients of `formula` on `space`.
pub fn tau_field(space: &FeSpace, problem: &ProblemSpec, formula: &TauFormula) -> Result<TauField> {
    let data = flow_data(space, problem)?;
    if let TauFormula::LeastSquares(t) | TauFormula::LeastSquaresFlow(t) = formula {
        if t.dim() != space.dim() {
            return Err(invalid(format!("phi table has dimension {} but the mesh has dimension {}", t.dim(), space.dim())));
        }
        let flipped = data.iter().filter(|d| d.peclet_vector().iter().any(|p| *p < 0.0)).count();
        if flipped > 0 {
            log::debug!("{flipped} elements have negative Péclet components; phi looked up at absolute values");
        }
    }
    TauField::new(data.iter().map(|d| formula.eval(d)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn data(a: f64, mu: f64, h: f64) -> ElementFlowData {
        ElementFlowData::isotropic(2, [a, 0.0], mu, h, 1)
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn effective_h_divides_by_degree() {
        assert_eq!(effective_h(0.3, 1), 0.3);
        assert!((effective_h(1.0 / 60.0, 2) - 1.0 / 120.0).abs() < 1e-18);
        assert!((effective_h(1.0 / 40.0, 3) - 1.0 / 120.0).abs() < 1e-18);
    }

    #[test]
    fn peclet_numbers() {
        let d = data(1.0, 0.05, 0.1);
        assert!((d.peclet_vector()[0] - 1.0).abs() < 1e-15);
        assert_eq!(d.peclet_vector()[1], 0.0);
        let k = 102400.0 * 2f64.sqrt();
        let d = data(k, 1.0, 1.0 / 120.0);
        assert!((d.peclet() - 603.398).abs() < 1e-3);
        let p = ElementFlowData::isotropic(2, [-3.0, 2.0], 0.1, 0.2, 1).peclet_vector();
        let q = ElementFlowData::isotropic(2, [3.0, 2.0], 0.1, 0.2, 1).peclet_vector();
        assert_eq!(p[0], -q[0]);
        assert_eq!(p[1], q[1]);
    }

    #[test]
    fn one_d_limits_and_values() {
        let (h, mu) = (0.01, 1.0);
        // Pe = 1000
        let a = 2.0 * mu * 1000.0 / h;
        let d = data(a, mu, h);
        assert!(rel(tau_one_d(&d), h / (2.0 * a) - mu / (a * a)) < 1e-6);
        // Pe = 1e-8
        let a = 2.0 * mu * 1e-8 / h;
        let d = data(a, mu, h);
        let t = tau_one_d(&d);
        assert!(t.is_finite() && rel(t, mu / (a * a) * 1e-16 / 3.0) < 1e-12);
        // Pe = 5/3 against the exponential form of coth and a
        // 30-digit evaluation of P coth P − 1.
        let d = data(100.0, 1.0, 1.0 / 30.0);
        let e = (10.0f64 / 3.0).exp();
        let expect = 1e-4 * (5.0 / 3.0 * (e + 1.0) / (e - 1.0) - 1.0);
        assert!(rel(tau_one_d(&d), expect) < 1e-14);
        assert!(rel(tau_one_d(&d), 1e-4 * 0.789_979_021_966_785_1) < 1e-13);
        assert_eq!(tau_one_d(&data(0.0, 1.0, 0.1)), 0.0);
    }

    #[test]
    fn one_d_series_matches_closed_form_at_switch() {
        for p in [0.0099, 0.01, 0.0101] {
            let closed = p / f64::tanh(p) - 1.0;
            assert!(rel(p_coth_p_minus_one(p), closed) < 1e-11, "{p}");
        }
    }

    #[test]
    fn p_coth_p_minus_one_is_increasing() {
        let mut prev = 0.0;
        for i in 1..=5000 {
            let v = p_coth_p_minus_one(i as f64 * 0.01);
            assert!(v > prev);
            prev = v;
        }
    }

    #[test]
    fn codina_limits_and_value() {
        let (h, mu) = (0.1, 0.7);
        assert!(rel(tau_codina(&data(0.0, mu, h)), h * h / (4.0 * mu)) < 1e-15);
        let a = 3.0;
        assert!(rel(tau_codina(&data(a, 1e-12, h)), h / (2.0 * a)) < 1e-10);
        // μ=1, ‖a‖=100√2, h=1/120: (4·14400)² + (240·100√2)² = 57600² + 2·24000²
        let d = data(100.0 * 2f64.sqrt(), 1.0, 1.0 / 120.0);
        let expect = 1.0 / (57600.0f64.powi(2) + 2.0 * 24000.0f64.powi(2)).sqrt();
        assert!(rel(tau_codina(&d), expect) < 1e-14);
        assert!(rel(tau_codina(&d), 1.495_746_163_786_954_4e-5) < 1e-13);
    }

    #[test]
    fn codina_colomes_reduction_and_limit() {
        let d = data(5.0, 0.01, 0.2);
        assert_eq!(tau_codina_colomes(&d), tau_codina(&d));
        let hf = 2.0 / 3.0 * 0.2;
        let d = ElementFlowData::new(2, [5.0, 0.0], 1e-12, 0.2, hf, 1);
        assert!(rel(tau_codina_colomes(&d), hf / 10.0) < 1e-10);
        // right triangle legs 1, a = (1, 0), μ = 1: h = √2, h_flow = 2/3
        let d = ElementFlowData::new(2, [1.0, 0.0], 1.0, 2f64.sqrt(), 2.0 / 3.0, 1);
        let expect = 1.0 / ((4.0f64 / 2.0).powi(2) + 3.0f64.powi(2)).sqrt();
        assert!(rel(tau_codina_colomes(&d), expect) < 1e-15);
    }

    #[test]
    fn hauke_branches_and_crossover() {
        let (h, hf, mu) = (0.1, 0.06, 0.02);
        let big = ElementFlowData::new(2, [1e4, 0.0], mu, h, hf, 1);
        assert!(rel(tau_hauke(&big), hf / (3f64.sqrt() * 1e4)) < 1e-15);
        let zero = ElementFlowData::new(2, [0.0, 0.0], mu, h, hf, 1);
        assert!(rel(tau_hauke(&zero), h * h / (24.24 * mu)) < 1e-15);
        let star = 24.24 * mu * hf / (3f64.sqrt() * h * h);
        let at = ElementFlowData::new(2, [star, 0.0], mu, h, hf, 1);
        let adv = hf / (3f64.sqrt() * star);
        assert!(rel(adv, h * h / (24.24 * mu)) < 1e-14);
        assert!(rel(tau_hauke(&at), adv) < 1e-14);
    }

    #[test]
    fn franca_valentin_branches_and_knot() {
        let (h, mu) = (0.3, 0.4);
        assert!(rel(tau_franca_valentin(&data(0.0, mu, h)), h * h / (6.0 * mu)) < 1e-15);
        let a10 = 10.0 * mu / (h / 3.0);
        assert!(rel(tau_franca_valentin(&data(a10, mu, h)), h / (2.0 * a10)) < 1e-15);
        let a1 = mu / (h / 3.0);
        let left = h * h / (6.0 * mu);
        let right = h / (2.0 * a1);
        assert!((left - right).abs() < 1e-15);
        let nudge = data(a1 * (1.0 + 1e-15), mu, h);
        assert!((tau_franca_valentin(&data(a1, mu, h)) - tau_franca_valentin(&nudge)).abs() < 1e-15);
    }

    #[test]
    fn advective_limits_at_huge_peclet() {
        let (h, mu) = (0.01, 1.0);
        let a = 2.0 * mu * 1e6 / h;
        let d = data(a, mu, h);
        for t in [tau_codina(&d), tau_franca_valentin(&d), tau_one_d(&d)] {
            assert!(rel(t, h / (2.0 * a)) <= 1.01e-6);
        }
    }

    #[test]
    fn table_formulas_need_a_table() {
        let e = TauFormula::parse("ls", None).unwrap_err().to_string();
        assert!(e.contains("--table"), "{e}");
        assert!(TauFormula::parse("vms", None).is_err());
        for n in TauFormula::ANALYTIC_NAMES {
            assert_eq!(TauFormula::parse(n, None).unwrap().name(), n);
        }
    }

    proptest! {
        #[test]
        fn scaling_law(
            ax in -1e3f64..1e3, ay in -1e3f64..1e3, mu in 1e-4f64..10.0,
            h in 1e-3f64..1.0, ratio in 0.1f64..1.0, lambda in 1e-3f64..1e3, deg in 1usize..=3,
        ) {
            let d = ElementFlowData::new(2, [ax, ay], mu, h, ratio * h, deg);
            let s = ElementFlowData::new(2, [lambda * ax, lambda * ay], lambda * mu, h, ratio * h, deg);
            for f in TauFormula::analytic() {
                let (t, ts) = (f.eval(&d), f.eval(&s));
                prop_assert!(t.is_finite() && t >= 0.0);
                prop_assert!((ts * lambda - t).abs() <= 1e-12 * t.abs().max(f64::MIN_POSITIVE), "{} {} {}", f.name(), t, ts * lambda);
            }
        }
    }
}
