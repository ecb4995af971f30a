//! Grid certification of the phase/interaction hypotheses.
//!
//! Every check is a finite scan: the report carries the resolution it was
//! certified at, and a margin that is the worst normalised slack
//! `(bound - value) / max(1, |bound|)` seen on the scan.

use std::collections::BTreeMap;

use super::{powr, ModelSpec};
use crate::error::{Error, Result};
use crate::functionals::Weighted;
use crate::measures::ConditionalMeasure;
use crate::quadrature::{choose_truncation, Grid1D, DEFAULT_NODES_PER_SITE};

const PASS_TOL: f64 = 1e-12;
/// Margin used for strict membership in the (M, N) region.
pub const REGION_DELTA: f64 = 1e-9;

/// Boundary values used to build neighbour configurations.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaGrid {
    pub values: Vec<f64>,
}

impl OmegaGrid {
    /// `n` evenly spaced values on `[-max, max]`.
    pub fn uniform(max: f64, n: usize) -> Result<Self> {
        if n == 0 || !(max >= 0.0) {
            return Err(Error::Config("omega grid must be nonempty with nonnegative range".into()));
        }
        if n == 1 {
            return Ok(Self { values: vec![0.0] });
        }
        let values = (0..n).map(|k| -max + 2.0 * max * k as f64 / (n - 1) as f64).collect();
        Ok(Self { values })
    }

    /// Same range with `2n - 1` points (every old point kept).
    pub fn refined(&self) -> Self {
        let mut values = Vec::with_capacity(2 * self.values.len());
        for w in self.values.windows(2) {
            values.push(w[0]);
            values.push(0.5 * (w[0] + w[1]));
        }
        values.extend(self.values.last());
        Self { values }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Neighbour configurations for a site of the given degree: the first half
    /// of the neighbours take value `a`, the rest `b`, over all pairs.
    pub fn configurations(&self, degree: usize) -> Vec<Vec<f64>> {
        let half = degree.div_ceil(2);
        let mut out = Vec::with_capacity(self.values.len().pow(2));
        for &a in &self.values {
            if degree == 1 {
                out.push(vec![a]);
                continue;
            }
            for &b in &self.values {
                out.push((0..degree).map(|k| if k < half { a } else { b }).collect());
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisScan {
    /// Distances `d > 0` at which the pointwise conditions are tested.
    pub d_values: Vec<f64>,
    pub omega: OmegaGrid,
    pub nodes_per_site: usize,
    pub trunc_tol: f64,
}

impl HypothesisScan {
    /// Offset midpoints of `(0, d_max]` and a uniform boundary grid.
    pub fn uniform(d_max: f64, n_d: usize, omega_max: f64, n_omega: usize) -> Result<Self> {
        if n_d == 0 || !(d_max > 0.0) {
            return Err(Error::Config("distance scan must be nonempty".into()));
        }
        let h = d_max / n_d as f64;
        Ok(Self {
            d_values: (0..n_d).map(|k| (k as f64 + 0.5) * h).collect(),
            omega: OmegaGrid::uniform(omega_max, n_omega)?,
            nodes_per_site: DEFAULT_NODES_PER_SITE,
            trunc_tol: 1e-14,
        })
    }

    pub fn resolution(&self) -> String {
        format!(
            "n_d={} d_max={} n_omega={} omega_max={} nodes={}",
            self.d_values.len(),
            self.d_values.iter().cloned().fold(0.0, f64::max),
            self.omega.values.len(),
            self.omega.max_abs(),
            self.nodes_per_site
        )
    }
}

impl Default for HypothesisScan {
    fn default() -> Self {
        Self::uniform(6.0, 600, 3.0, 13).expect("valid default scan")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisResult {
    pub name: String,
    pub pass: bool,
    pub margin: f64,
    pub witness: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisReport {
    pub results: Vec<HypothesisResult>,
    /// Smallest constants that the scan certifies (k0, k1, k2, kgrowth).
    pub certified: BTreeMap<String, f64>,
    pub resolution: String,
}

impl HypothesisReport {
    pub fn all_pass(&self) -> bool {
        self.results.iter().all(|r| r.pass)
    }

    pub fn get(&self, name: &str) -> Option<&HypothesisResult> {
        self.results.iter().find(|r| r.name == name)
    }

    pub fn failures(&self) -> Vec<&HypothesisResult> {
        self.results.iter().filter(|r| !r.pass).collect()
    }
}

struct Worst {
    margin: f64,
    witness: String,
}

impl Worst {
    fn new() -> Self {
        Self { margin: f64::INFINITY, witness: String::from("-") }
    }

    fn update(&mut self, bound: f64, value: f64, witness: impl FnOnce() -> String) {
        let m = (bound - value) / bound.abs().max(1.0);
        let m = if m.is_nan() { f64::NEG_INFINITY } else { m };
        if m < self.margin {
            self.margin = m;
            self.witness = witness();
        }
    }

    fn finish(self, name: &str) -> HypothesisResult {
        HypothesisResult {
            name: name.to_string(),
            pass: self.margin >= -PASS_TOL,
            margin: self.margin,
            witness: self.witness,
        }
    }
}

fn fmt_omega(w: &[f64]) -> String {
    let parts: Vec<String> = w.iter().map(|v| format!("{v}")).collect();
    format!("[{}]", parts.join(";"))
}

fn scan_sites(spec: &ModelSpec) -> Vec<usize> {
    if spec.coupling.has_overrides() {
        (0..spec.lattice.n_sites()).collect()
    } else {
        vec![0]
    }
}

/// Certify every hypothesis on the scan.
pub fn check_hypotheses(spec: &ModelSpec, scan: &HypothesisScan) -> Result<HypothesisReport> {
    if scan.d_values.is_empty() || scan.omega.values.is_empty() {
        return Err(Error::Config("hypothesis scan grid is empty".into()));
    }
    let phase = &spec.phase;
    let it = &spec.interaction;
    let p = phase.p();
    let s = it.s;
    let k = it.k;
    let mut certified = BTreeMap::new();
    let mut results = Vec::new();

    // d/dd phi >= k0 d^(p-1)
    let mut w = Worst::new();
    let mut k0_cert = f64::INFINITY;
    for &d in &scan.d_values {
        let lhs = phase.d1(d);
        let rhs = phase.k0() * powr(d, p - 1.0);
        w.update(lhs, rhs, || format!("d={d}"));
        k0_cert = k0_cert.min(lhs / powr(d, p - 1.0));
    }
    certified.insert("k0".into(), k0_cert);
    results.push(w.finish("H1.1"));

    // |d2 phi| <= k1 + k1 d1 phi
    let mut w = Worst::new();
    let mut k1_cert: f64 = 0.0;
    for &d in &scan.d_values {
        let bound = phase.k1() * (1.0 + phase.d1(d));
        w.update(bound, phase.d2(d).abs(), || format!("d={d}"));
        k1_cert = k1_cert.max(phase.d2(d).abs() / (1.0 + phase.d1(d)));
    }
    certified.insert("k1".into(), k1_cert);
    results.push(w.finish("H1.2"));

    // d/dd(x) U(x, y) >= 0
    let mut w = Worst::new();
    for &d in &scan.d_values {
        for &y in &scan.omega.values {
            w.update(it.edge_d1(d, y), 0.0, || format!("d={d} y={y}"));
        }
    }
    results.push(w.finish("H1.3"));

    // |d2 U| <= k2 + k2 d1 U for d > M*
    let mut w = Worst::new();
    let mut k2_cert: f64 = 0.0;
    for &d in scan.d_values.iter().filter(|&&d| d > it.m_star) {
        for &y in &scan.omega.values {
            let a = it.edge_d2(d, y).abs();
            let b = it.edge_d1(d, y);
            w.update(it.k2 * (1.0 + b), a, || format!("d={d} y={y}"));
            k2_cert = k2_cert.max(a / (1.0 + b));
        }
    }
    certified.insert("k2".into(), k2_cert);
    results.push(w.finish("H1.4"));

    // exponent range, then the five growth conditions
    let in_range = s > 0.0 && s <= p - 1.0;
    results.push(HypothesisResult {
        name: "H1.5".into(),
        pass: in_range,
        margin: (p - 1.0 - s) / (p - 1.0).abs().max(1.0),
        witness: if in_range {
            format!("s={s} <= p-1={}", p - 1.0)
        } else if s <= 0.0 {
            "s<=0".into()
        } else {
            "s>p-1".into()
        },
    });

    let mut k_cert: f64 = 0.0;
    let growth = |a: f64, b: f64| 1.0 + powr(a.abs(), s) + powr(b.abs(), s);

    // (c) |d/dy U(x, y)|^2 <= k + k (d^s(x) + d^s(y)); (d) |U| <= same
    let mut wc = Worst::new();
    let mut wd = Worst::new();
    for &d in &scan.d_values {
        for &y in &scan.omega.values {
            let g = growth(d, y);
            let grad2 = it.edge_grad_y(d, y).powi(2);
            let u = it.edge(d, y).abs();
            wc.update(k * g, grad2, || format!("d={d} y={y}"));
            wd.update(k * g, u, || format!("d={d} y={y}"));
            k_cert = k_cert.max(grad2 / g).max(u / g);
        }
    }

    // (a), (b), (e) by single-site quadrature at every boundary configuration
    let l = choose_truncation(phase, scan.trunc_tol)?;
    let grid = Grid1D::with_nodes(l, scan.nodes_per_site)?;
    let mut wa = Worst::new();
    let mut wb = Worst::new();
    let mut we = Worst::new();
    for site in scan_sites(spec) {
        for omega in scan.omega.configurations(spec.lattice.degree()) {
            let mu = ConditionalMeasure::single_site(spec, site, &omega, grid.clone())?;
            let xs = grid.nodes();
            let probs = mu.probs();
            let sum_ds: f64 = omega.iter().map(|w| powr(w.abs(), s)).sum();
            let bound_lin = 1.0 + sum_ds;
            let mean_d: f64 = probs.iter().zip(xs).map(|(p, x)| p * x.abs()).sum();
            wb.update(k * bound_lin, mean_d, || format!("site={site} w={}", fmt_omega(&omega)));
            k_cert = k_cert.max(mean_d / bound_lin);
            for &wi in &omega {
                // W = d/dw_i U(x_j, w_i), integrated over x_j
                let w2: Vec<f64> = xs.iter().map(|&x| it.edge_grad_y(x, wi).powi(2)).collect();
                let mean_w2: f64 = probs.iter().zip(&w2).map(|(p, v)| p * v).sum();
                wa.update(k * bound_lin, mean_w2, || format!("site={site} w={}", fmt_omega(&omega)));
                k_cert = k_cert.max(mean_w2 / bound_lin);
                let log_mgf = log_mean_exp(probs, &w2, it.eps_h);
                we.update(k * bound_lin, log_mgf, || {
                    format!("site={site} w={} eps_h={}", fmt_omega(&omega), it.eps_h)
                });
                k_cert = k_cert.max(log_mgf / bound_lin);
            }
        }
    }
    results.push(wa.finish("H1.5a"));
    results.push(wb.finish("H1.5b"));
    results.push(wc.finish("H1.5c"));
    results.push(wd.finish("H1.5d"));
    results.push(we.finish("H1.5e"));
    certified.insert("kgrowth".into(), k_cert);

    // |J_ij| <= J < 1
    let jmax = spec.coupling.max_abs(spec.lattice.edges()).max(spec.coupling.bound());
    results.push(HypothesisResult {
        name: "H1.6".into(),
        pass: jmax < 1.0,
        margin: 1.0 - jmax,
        witness: format!("J={jmax}"),
    });

    Ok(HypothesisReport { results, certified, resolution: scan.resolution() })
}

/// `log sum_k p_k exp(t v_k)`, computed in log space.
pub(crate) fn log_mean_exp(probs: &[f64], v: &[f64], t: f64) -> f64 {
    let terms: Vec<f64> = probs
        .iter()
        .zip(v)
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, x)| p.ln() + t * x)
        .collect();
    let m = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + terms.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionReport {
    pub m: f64,
    pub n: f64,
    /// Supremum of `2 (|D| Lap d + B |grad d|^2) / (|D|^2 |grad d|^2)` over the
    /// region, clipped below at 0; `None` when the region is empty.
    pub zeta: Option<f64>,
    pub pass: bool,
    pub witness: Option<String>,
    pub empty_region: bool,
    pub points_in_region: usize,
    /// Points of the region with `D = 0`, where the ratio is undefined.
    pub excluded_points: usize,
}

/// Scan the region `O = {d phi > M} u ({d phi < M} n {sum J dU >= N})` and
/// report the smallest admissible `zeta`.
pub fn region_check(
    spec: &ModelSpec,
    m: f64,
    n: f64,
    scan: &HypothesisScan,
) -> Result<RegionReport> {
    if !(m > 0.0 && n > 0.0) {
        return Err(Error::Config("region constants M and N must be positive".into()));
    }
    let geo = spec.geometry;
    let mut zeta: f64 = 0.0;
    let mut witness = None;
    let mut count = 0usize;
    let mut excluded = 0usize;
    for site in scan_sites(spec) {
        for omega in scan.omega.configurations(spec.lattice.degree()) {
            for &d in &scan.d_values {
                let a = spec.phase.d1(d);
                let field = spec.interaction_drift(site, d, &omega);
                let inside = a > m + REGION_DELTA || (a < m - REGION_DELTA && field > n + REGION_DELTA);
                if !inside {
                    continue;
                }
                count += 1;
                let big_d = spec.radial_drift(site, d, &omega);
                let big_b = spec.radial_curvature(site, d, &omega);
                let grad = geo.grad_distance(d).abs();
                let denom = big_d * big_d * grad * grad;
                if denom == 0.0 {
                    excluded += 1;
                    continue;
                }
                let num = 2.0 * (big_d.abs() * geo.laplacian_distance(d) + big_b * grad * grad);
                let ratio = (num / denom).max(0.0);
                if ratio > zeta || witness.is_none() {
                    if ratio >= zeta {
                        zeta = ratio;
                    }
                    witness = Some(format!("site={site} d={d} w={}", fmt_omega(&omega)));
                }
            }
        }
    }
    let empty = count == excluded;
    Ok(RegionReport {
        m,
        n,
        zeta: (!empty).then_some(zeta),
        pass: !empty && zeta < 1.0,
        witness,
        empty_region: empty,
        points_in_region: count,
        excluded_points: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CouplingMatrix, Interaction, LatticeTorus, Phase};

    fn spec(s: f64, j: f64) -> ModelSpec {
        ModelSpec::new(
            Phase::new(1.0, 4.0, 4.0, 3.0).unwrap(),
            Interaction::new(1.0, 0.5, s).unwrap().with_constants(2.5, 12.5, 1.0, 0.05).unwrap(),
            CouplingMatrix::uniform(j).unwrap(),
            LatticeTorus::new(1, 4).unwrap(),
        )
        .unwrap()
    }

    fn small_scan() -> HypothesisScan {
        let mut s = HypothesisScan::uniform(6.0, 120, 3.0, 7).unwrap();
        s.nodes_per_site = 64;
        s
    }

    #[test]
    fn reference_model_passes() {
        let r = check_hypotheses(&spec(2.0, 0.05), &small_scan()).unwrap();
        assert!(r.all_pass(), "{:?}", r.failures());
        assert!((r.certified["k0"] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn quartic_k1_oracle() {
        // brute-force maximisation of 12 d^2 / (1 + 4 d^3) on a fine grid
        let oracle = (1..200_000)
            .map(|k| k as f64 * 3e-5)
            .map(|d| 12.0 * d * d / (1.0 + 4.0 * d.powi(3)))
            .fold(0.0, f64::max);
        assert!(oracle < 3.0);
        let r = check_hypotheses(&spec(2.0, 0.05), &small_scan()).unwrap();
        assert!(r.certified["k1"] <= oracle + 1e-12);
        assert!(r.certified["k1"] > oracle - 1e-2);
    }

    #[test]
    fn interaction_exponent_at_p_fails_h15() {
        let r = check_hypotheses(&spec(4.0, 0.05), &small_scan()).unwrap();
        let h15 = r.get("H1.5").unwrap();
        assert!(!h15.pass);
        assert_eq!(h15.witness, "s>p-1");
        for name in ["H1.1", "H1.2", "H1.3", "H1.4", "H1.6"] {
            assert!(r.get(name).unwrap().pass, "{name}");
        }
        assert!(r.failures().iter().all(|f| f.name.starts_with("H1.5")));
    }

    #[test]
    fn strong_coupling_fails_h16() {
        let r = check_hypotheses(&spec(2.0, 1.2), &small_scan()).unwrap();
        assert!(!r.get("H1.6").unwrap().pass);
    }

    #[test]
    fn enlarging_the_scan_never_hides_a_failure() {
        let base = spec(3.5, 0.05);
        let coarse = HypothesisScan { d_values: vec![0.5, 1.0], ..small_scan() };
        let fine = small_scan();
        let rc = check_hypotheses(&base, &coarse).unwrap();
        let rf = check_hypotheses(&base, &fine).unwrap();
        for (c, f) in rc.results.iter().zip(&rf.results) {
            assert!(f.margin <= c.margin + 1e-15, "{}", c.name);
            if !c.pass {
                assert!(!f.pass);
            }
        }
    }

    #[test]
    fn region_check_at_zero_coupling() {
        // ratio on {4 d^3 > 10} is 1.5 d^-4, worst at d = (10/4)^(1/3)
        let boundary = (10.0f64 / 4.0).powf(1.0 / 3.0);
        let bound = 1.5 * boundary.powi(-4);
        let r = region_check(&spec(2.0, 0.0), 10.0, 1.0, &small_scan()).unwrap();
        assert!(r.pass);
        let z = r.zeta.unwrap();
        assert!(z <= bound + 1e-12 && z > 0.9 * bound, "{z} vs {bound}");
    }

    #[test]
    fn region_check_with_small_constants_fails_near_origin() {
        let r = region_check(&spec(2.0, 0.1), 0.01, 0.01, &small_scan()).unwrap();
        assert!(!r.pass);
        assert!(r.zeta.unwrap() >= 1.0);
        let w = r.witness.unwrap();
        let d: f64 = w.split("d=").nth(1).unwrap().split(' ').next().unwrap().parse().unwrap();
        assert!(d < 0.5, "{w}");
    }

    #[test]
    fn degenerate_drift_is_excluded_not_failed() {
        let scan = HypothesisScan { d_values: vec![0.0, 2.0], ..small_scan() };
        let r = region_check(&spec(2.0, 0.1), 1.0, 0.5, &scan).unwrap();
        assert!(r.excluded_points == 0 || r.pass);
        let r0 = region_check(&spec(2.0, 0.0), 1e-3, 1.0, &HypothesisScan {
            d_values: vec![0.0],
            ..small_scan()
        })
        .unwrap();
        assert!(r0.empty_region);
    }

    #[test]
    fn omega_refinement_keeps_old_points() {
        let g = OmegaGrid::uniform(3.0, 13).unwrap();
        let r = g.refined();
        assert_eq!(r.values.len(), 25);
        assert!(g.values.iter().all(|v| r.values.iter().any(|w| (v - w).abs() < 1e-15)));
        assert_eq!(g.configurations(2).len(), 169);
    }
}
