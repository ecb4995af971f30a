//! One-dimensional rules and their tensor products on truncated domains.
//!
//! The default rule is composite Gauss-Legendre with 8-point panels. Every
//! rule used here is symmetric about the origin and never places a node at 0,
//! so `d(x) = |x|` stays differentiable at every node.

use crate::error::{Error, Result};
use crate::model::Phase;

/// Points per Gauss-Legendre panel.
pub const PANEL_POINTS: usize = 8;
/// Default nodes per site for single-site and two-site grids.
pub const DEFAULT_NODES_PER_SITE: usize = 128;
/// Default cap on the number of sites in a tensor grid.
pub const DEFAULT_MAX_SITES: usize = 4;
/// Default cap on the total node count of a tensor grid.
pub const DEFAULT_MAX_NODES: usize = 1 << 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    GaussLegendre,
    Midpoint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    l_trunc: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    rule: Rule,
}

impl Grid1D {
    /// Composite Gauss-Legendre on `[-l, l]` with `panels` panels of 8 points.
    pub fn gauss_legendre(l_trunc: f64, panels: usize) -> Result<Self> {
        check_radius(l_trunc)?;
        if panels == 0 {
            return Err(Error::Config("panel count must be positive".into()));
        }
        let (ref_nodes, ref_weights) = gauss_legendre_reference(PANEL_POINTS);
        let width = 2.0 * l_trunc / panels as f64;
        let mut nodes = Vec::with_capacity(panels * PANEL_POINTS);
        let mut weights = Vec::with_capacity(panels * PANEL_POINTS);
        for p in 0..panels {
            let a = -l_trunc + p as f64 * width;
            let mid = a + 0.5 * width;
            for (t, w) in ref_nodes.iter().zip(&ref_weights) {
                nodes.push(mid + 0.5 * width * t);
                weights.push(0.5 * width * w);
            }
        }
        Ok(Self { l_trunc, nodes, weights, rule: Rule::GaussLegendre })
    }

    /// Gauss-Legendre grid with `n` total nodes (`n` must be a multiple of 8).
    pub fn with_nodes(l_trunc: f64, n: usize) -> Result<Self> {
        if n == 0 || n % PANEL_POINTS != 0 {
            return Err(Error::Config(format!(
                "nodes per site must be a positive multiple of {PANEL_POINTS}, got {n}"
            )));
        }
        Self::gauss_legendre(l_trunc, n / PANEL_POINTS)
    }

    /// Midpoint rule with `n` cells; `n` must be even so that 0 is a cell edge.
    pub fn midpoint(l_trunc: f64, n: usize) -> Result<Self> {
        check_radius(l_trunc)?;
        if n == 0 || n % 2 != 0 {
            return Err(Error::Config(format!("midpoint cell count must be even, got {n}")));
        }
        let h = 2.0 * l_trunc / n as f64;
        let nodes = (0..n).map(|k| -l_trunc + (k as f64 + 0.5) * h).collect();
        Ok(Self { l_trunc, nodes, weights: vec![h; n], rule: Rule::Midpoint })
    }

    pub fn l_trunc(&self) -> f64 {
        self.l_trunc
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn rule(&self) -> Rule {
        self.rule
    }

    /// Same rule with twice the node count.
    pub fn refined(&self) -> Result<Self> {
        match self.rule {
            Rule::GaussLegendre => Self::with_nodes(self.l_trunc, 2 * self.len()),
            Rule::Midpoint => Self::midpoint(self.l_trunc, 2 * self.len()),
        }
    }
}

fn check_radius(l: f64) -> Result<()> {
    if !(l.is_finite() && l > 0.0) {
        return Err(Error::Config(format!("truncation radius must be positive, got {l}")));
    }
    Ok(())
}

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre_reference(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Product grid over an ordered list of sites, all sharing one 1-D rule.
///
/// Node `idx` has per-site digits `k_s = (idx / n^s) % n`, site position 0
/// varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorGrid {
    sites: Vec<usize>,
    grid: Grid1D,
    total: usize,
}

impl TensorGrid {
    pub fn new(sites: Vec<usize>, grid: Grid1D) -> Result<Self> {
        Self::with_limits(sites, grid, DEFAULT_MAX_SITES, DEFAULT_MAX_NODES)
    }

    pub fn with_limits(
        sites: Vec<usize>,
        grid: Grid1D,
        max_sites: usize,
        max_nodes: usize,
    ) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Config("tensor grid needs at least one site".into()));
        }
        if sites.len() > max_sites {
            return Err(Error::Infeasible(format!(
                "{} sites exceeds the exact-engine limit of {max_sites}; use the mcmc engine",
                sites.len()
            )));
        }
        let total = (grid.len() as u128).pow(sites.len() as u32);
        if total > max_nodes as u128 {
            return Err(Error::Infeasible(format!(
                "{} sites x {} nodes = {total} nodes exceeds the limit of {max_nodes}",
                sites.len(),
                grid.len()
            )));
        }
        Ok(Self { sites, grid, total: total as usize })
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn nodes_per_site(&self) -> usize {
        self.grid.len()
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn stride(&self, pos: usize) -> usize {
        self.grid.len().pow(pos as u32)
    }

    #[inline]
    pub fn digit(&self, idx: usize, pos: usize) -> usize {
        (idx / self.stride(pos)) % self.grid.len()
    }

    /// Per-site node digits of a flat index.
    pub fn digits(&self, idx: usize) -> Vec<usize> {
        let n = self.grid.len();
        let mut rest = idx;
        (0..self.sites.len())
            .map(|_| {
                let d = rest % n;
                rest /= n;
                d
            })
            .collect()
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.digits(idx).into_iter().map(|k| self.grid.nodes()[k]).collect()
    }

    /// Product quadrature weights, one per node.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.grid.len();
        let w = self.grid.weights();
        let mut out = vec![1.0; self.total];
        let mut stride = 1;
        for _ in 0..self.sites.len() {
            for (idx, o) in out.iter_mut().enumerate() {
                *o *= w[(idx / stride) % n];
            }
            stride *= n;
        }
        out
    }

    /// Local position of a lattice site within this grid.
    pub fn position(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }
}

/// Pairwise (tree) summation with a fixed split, so results do not depend on
/// thread scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Pairwise sum of `a[i] * b[i]`.
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    debug_assert_eq!(a.len(), b.len());
    if a.len() <= BLOCK {
        let mut s = 0.0;
        for (x, y) in a.iter().zip(b) {
            s += x * y;
        }
        return s;
    }
    let mid = a.len() / 2;
    pairwise_dot(&a[..mid], &b[..mid]) + pairwise_dot(&a[mid..], &b[mid..])
}

/// `sum_k weight_k * f(node_k)` over a tensor grid.
pub fn integrate(values: &[f64], grid: &TensorGrid) -> Result<f64> {
    if values.len() != grid.total() {
        return Err(Error::DimensionMismatch { expected: grid.total(), got: values.len() });
    }
    if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { value: values[idx], coords: grid.coords(idx) });
    }
    Ok(pairwise_dot(values, &grid.weights()))
}

/// Integrate a closure over a tensor grid.
pub fn integrate_fn(grid: &TensorGrid, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
    let values: Vec<f64> = (0..grid.total()).map(|idx| f(&grid.coords(idx))).collect();
    integrate(&values, grid)
}

/// Smallest radius `L` (rounded up to 0.01) with `exp(-phi(L))` times the
/// interaction tilt bound below `tol` relative to the central density.
///
/// `log_tilt(L)` bounds the log-density gain from interactions at radius `L`;
/// nonnegative couplings give `0`.
pub fn choose_truncation_tilted(
    phase: &Phase,
    tol: f64,
    log_tilt: impl Fn(f64) -> f64,
) -> Result<f64> {
    if !(tol > 0.0 && tol < 1.0) {
        return Err(Error::OutOfRange { name: "tol", detail: format!("{tol} not in (0, 1)") });
    }
    if !(phase.alpha() > 0.0 && phase.p() > 0.0) {
        return Err(Error::ModelRejected("phase is not confining".into()));
    }
    let target = -tol.ln();
    let base = (target / phase.alpha()).powf(1.0 / phase.p());
    let excess = |l: f64| phase.value(l) - log_tilt(l) - target;
    let mut l = base;
    if excess(l) < 0.0 {
        let mut hi = l;
        let mut tries = 0;
        while excess(hi) < 0.0 {
            hi *= 2.0;
            tries += 1;
            if tries > 60 || !hi.is_finite() {
                return Err(Error::ModelRejected(
                    "interaction tilt overwhelms the phase; density is not confined".into(),
                ));
            }
        }
        let mut lo = l;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        l = hi;
    }
    // never below the zero-interaction radius
    let l = l.max(base);
    Ok((l * 100.0 - 1e-9).ceil() / 100.0)
}

/// Truncation radius for the bare phase.
pub fn choose_truncation(phase: &Phase, tol: f64) -> Result<f64> {
    choose_truncation_tilted(phase, tol, |_| 0.0)
}

/// Grid settings shared by the exact engines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadConfig {
    pub trunc_tol: f64,
    pub nodes_per_site: usize,
    /// Largest tensor grid the exact torus engine may build.
    pub state_budget: usize,
}

impl Default for QuadConfig {
    fn default() -> Self {
        Self { trunc_tol: 1e-14, nodes_per_site: DEFAULT_NODES_PER_SITE, state_budget: 1 << 20 }
    }
}

impl QuadConfig {
    /// Single-site grid at full resolution.
    pub fn site_grid(&self, phase: &Phase) -> Result<Grid1D> {
        Grid1D::with_nodes(choose_truncation(phase, self.trunc_tol)?, self.nodes_per_site)
    }

    /// Grid for an exact measure on `n_sites` sites, coarsened to the budget.
    pub fn region_grid(&self, phase: &Phase, n_sites: usize) -> Result<Grid1D> {
        Grid1D::with_nodes(choose_truncation(phase, self.trunc_tol)?, self.region_nodes(n_sites))
    }

    /// Largest multiple of the panel size, at most `nodes_per_site`, whose
    /// `n_sites`-fold tensor power fits the state budget.
    pub fn region_nodes(&self, n_sites: usize) -> usize {
        let mut n = self.nodes_per_site;
        while n > PANEL_POINTS && (n as f64).powi(n_sites as i32) > self.state_budget as f64 {
            n -= PANEL_POINTS;
        }
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quartic() -> Phase {
        Phase::new(1.0, 4.0, 4.0, 3.0).unwrap()
    }

    fn one_site(grid: Grid1D) -> TensorGrid {
        TensorGrid::new(vec![0], grid).unwrap()
    }

    #[test]
    fn reference_rule_integrates_degree_15_exactly() {
        let (x, w) = gauss_legendre_reference(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(s, 2.0 / 15.0, epsilon = 1e-14);
        assert!(x.iter().all(|&t| t != 0.0));
    }

    #[test]
    fn constant_integrates_to_length() {
        let g = one_site(Grid1D::gauss_legendre(3.0, 16).unwrap());
        let v = integrate(&vec![1.0; g.total()], &g).unwrap();
        assert_relative_eq!(v, 6.0, max_relative = 1e-12);
        let m = Grid1D::midpoint(3.0, 128).unwrap();
        assert_relative_eq!(pairwise_sum(m.weights()), 6.0, max_relative = 1e-12);
    }

    #[test]
    fn gaussian_integral_matches_sqrt_pi() {
        let g = one_site(Grid1D::gauss_legendre(8.0, 32).unwrap());
        let v = integrate_fn(&g, |x| (-x[0] * x[0]).exp()).unwrap();
        assert!((v - std::f64::consts::PI.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn odd_integrand_vanishes() {
        let g = one_site(Grid1D::gauss_legendre(3.0, 16).unwrap());
        let v = integrate_fn(&g, |x| x[0] * (-x[0].powi(4)).exp()).unwrap();
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn no_node_at_origin() {
        for panels in 1..20 {
            let g = Grid1D::gauss_legendre(2.5, panels).unwrap();
            assert!(g.nodes().iter().all(|&x| x != 0.0));
        }
        assert!(Grid1D::midpoint(1.0, 7).is_err());
    }

    #[test]
    fn non_finite_value_reports_coordinates() {
        let g = one_site(Grid1D::gauss_legendre(1.0, 1).unwrap());
        let mut v = vec![1.0; g.total()];
        v[3] = f64::NAN;
        match integrate(&v, &g) {
            Err(Error::NonFinite { coords, .. }) => assert_eq!(coords, vec![g.grid().nodes()[3]]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn tensor_guard_refuses_large_grids() {
        let g = Grid1D::with_nodes(2.0, 128).unwrap();
        assert!(TensorGrid::new(vec![0, 1, 2, 3, 4], g.clone()).is_err());
        assert!(TensorGrid::new(vec![0, 1, 2, 3], g.clone()).is_err());
        let t = TensorGrid::new(vec![0, 1], g).unwrap();
        assert_eq!(t.total(), 128 * 128);
        assert_eq!(t.digits(5 + 128 * 7), vec![5, 7]);
    }

    #[test]
    fn truncation_for_quartic_phase() {
        // exp(-L^4) = 1e-16  <=>  L = 36.84^(1/4) = 2.4637
        let l = choose_truncation(&quartic(), 1e-16).unwrap();
        let exact = (16.0 * std::f64::consts::LN_10).powf(0.25);
        assert!(l >= exact && l >= 2.47 && l < exact + 0.011, "{l}");
        let loose = choose_truncation(&quartic(), 0.5).unwrap();
        assert!(loose < l);
        assert!(choose_truncation(&quartic(), 1.5).is_err());
    }

    #[test]
    fn tilt_never_shrinks_radius() {
        let base = choose_truncation(&quartic(), 1e-12).unwrap();
        let tilted = choose_truncation_tilted(&quartic(), 1e-12, |l| 0.3 * l * l).unwrap();
        assert!(tilted > base);
        let negative = choose_truncation_tilted(&quartic(), 1e-12, |l| -l).unwrap();
        assert_eq!(negative, base);
    }

    #[test]
    fn refinement_is_stable_for_polynomial_tilts() {
        let l = choose_truncation(&quartic(), 1e-14).unwrap();
        let g = Grid1D::with_nodes(l, 128).unwrap();
        let fine = g.refined().unwrap();
        for k in 0..=6 {
            let f = |x: &[f64]| x[0].powi(k) * (-x[0].powi(4)).exp();
            let a = integrate_fn(&one_site(g.clone()), f).unwrap();
            let b = integrate_fn(&one_site(fine.clone()), f).unwrap();
            if k % 2 == 0 {
                assert!(((a - b) / b).abs() < 1e-8, "k={k}: {a} vs {b}");
            } else {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn integral_of_nonnegative_values_is_nonnegative(
            vals in proptest::collection::vec(0.0f64..10.0, 16)
        ) {
            let g = one_site(Grid1D::gauss_legendre(1.5, 2).unwrap());
            proptest::prop_assert!(integrate(&vals, &g).unwrap() >= 0.0);
        }
    }
}
