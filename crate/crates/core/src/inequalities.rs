//! Empirical constants of the inequality chain.
//!
//! Every constant is a maximum of ratios over a finite test family, so each
//! reported value is a lower bound on the best constant.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::{
    dirichlet, entropy, mean, variance, ConstantLedger, Family, GridFunction, TestFunction, Weighted,
};
use crate::measures::{ConditionalMeasure, GibbsProxy};
use crate::model::{log_mean_exp, powr, Class, ModelSpec, OmegaGrid};
use crate::quadrature::QuadConfig;

/// Offsets `t` (in units of the standard deviation) of the shifted members
/// `f - mu f + t sd(f)` added to LS estimates.
pub const ROTHAUS_SHIFTS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 16.0];

/// Relative size below which a Dirichlet term counts as zero.
const NEGLIGIBLE: f64 = 1e-13;

/// Size, relative to the largest triple of a fit, below which a triple is
/// treated as identically zero.
const NULL_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, PartialEq)]
pub struct LsSgPoint {
    pub omega: Vec<f64>,
    pub c_ls: f64,
    pub c_sg: f64,
    /// `1 / lambda_1` of the discretised single-site generator.
    pub c_sg_eigen: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsSgReport {
    pub points: Vec<LsSgPoint>,
    pub c_ls: f64,
    pub c_sg: f64,
    pub c_sg_eigen: f64,
    pub family_size: usize,
    pub resolution: String,
}

/// `(max Ent/Dirichlet, max Var/Dirichlet)` over the family on `mu`.
pub fn ls_sg_ratios(mu: &ConditionalMeasure, family: &[TestFunction]) -> Result<(f64, f64)> {
    let positions: Vec<usize> = (0..mu.sites().len()).collect();
    let mut c_ls: f64 = 0.0;
    let mut c_sg: f64 = 0.0;
    let mut used = 0usize;
    for t in family {
        let f = t.materialize(mu)?;
        let d = dirichlet(mu, &f, &positions)?;
        let f2: Vec<f64> = f.values().iter().map(|v| v * v).collect();
        if !(d > NEGLIGIBLE * mean(mu, &f2)?) {
            continue;
        }
        used += 1;
        let var = variance(mu, f.values())?;
        c_sg = c_sg.max(var / d);
        c_ls = c_ls.max(entropy(mu, f.values())? / d);
        let m = mean(mu, f.values())?;
        let sd = var.sqrt();
        if sd > 0.0 {
            for t in ROTHAUS_SHIFTS {
                let g: Vec<f64> = f.values().iter().map(|v| v - m + t * sd).collect();
                c_ls = c_ls.max(entropy(mu, &g)? / d);
            }
        }
    }
    if used == 0 {
        return Err(Error::Degenerate("test family has no member with positive Dirichlet form".into()));
    }
    Ok((c_ls, c_sg))
}

/// Spectral-gap constant `1 / lambda_1` of the three-point discretisation of
/// `L = d^2 - H' d` for one site on a uniform grid of `n` cells on `[-l, l]`.
pub fn eigen_spectral_gap(spec: &ModelSpec, site: usize, neighbors: &[f64], l: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::Config("eigen grid needs at least 3 cells".into()));
    }
    let h = 2.0 * l / n as f64;
    let x: Vec<f64> = (0..n).map(|k| -l + (k as f64 + 0.5) * h).collect();
    let lw: Vec<f64> = x.iter().map(|&v| -spec.site_energy(site, v, neighbors)).collect();
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = w.iter().sum();
    let pi: Vec<f64> = w.iter().map(|v| v / z).collect();
    let c: Vec<f64> = (0..n - 1).map(|k| 0.5 * (pi[k] + pi[k + 1]) / (h * h)).collect();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        let left = if k > 0 { c[k - 1] } else { 0.0 };
        let right = if k + 1 < n { c[k] } else { 0.0 };
        s[(k, k)] = (left + right) / pi[k];
        if k + 1 < n {
            let off = -c[k] / (pi[k] * pi[k + 1]).sqrt();
            s[(k, k + 1)] = off;
            s[(k + 1, k)] = off;
        }
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(s).eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    if !(ev[1] > 0.0) {
        return Err(Error::Degenerate("discretised generator has no spectral gap".into()));
    }
    Ok(1.0 / ev[1])
}

/// Single-site LS and SG lower bounds at every boundary configuration of the
/// grid, plus their suprema (the candidate uniform constant `c`).
pub fn estimate_ls_sg(spec: &ModelSpec, omega: &OmegaGrid, family_name: &str, quad: &QuadConfig) -> Result<LsSgReport> {
    let site = 0;
    let family = Family::single_site(family_name, site)?;
    family.check_nondegenerate()?;
    let grid = quad.site_grid(&spec.phase)?;
    let configs = omega.configurations(spec.lattice.degree());
    let points = configs
        .par_iter()
        .map(|w| {
            let mu = ConditionalMeasure::single_site(spec, site, w, grid.clone())?;
            let (c_ls, c_sg) = ls_sg_ratios(&mu, &family.functions)?;
            let c_sg_eigen = eigen_spectral_gap(spec, site, w, grid.l_trunc(), 256)?;
            Ok(LsSgPoint { omega: w.clone(), c_ls, c_sg, c_sg_eigen })
        })
        .collect::<Result<Vec<_>>>()?;
    let sup = |g: fn(&LsSgPoint) -> f64| points.iter().map(g).fold(0.0, f64::max);
    Ok(LsSgReport {
        c_ls: sup(|p| p.c_ls),
        c_sg: sup(|p| p.c_sg),
        c_sg_eigen: sup(|p| p.c_sg_eigen),
        family_size: family.len(),
        resolution: format!("n_omega={} nodes={} L={}", omega.values.len(), grid.len(), grid.l_trunc()),
        points,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UBoundReport {
    pub r: f64,
    pub c: f64,
    pub profile: Vec<(Vec<f64>, f64)>,
    pub resolution: String,
}

/// `max E(d^r f^2) / (E|f'|^2 + E f^2)` over the family and the constant 1.
pub fn ubound_ratio(mu: &ConditionalMeasure, r: f64, family: &[TestFunction]) -> Result<f64> {
    let dr = mu.site_values(0, |x| powr(x.abs(), r));
    let mut best: f64 = 0.0;
    let one = TestFunction::constant(1.0);
    for t in family.iter().chain(std::iter::once(&one)) {
        let f = t.materialize(mu)?;
        let f2: Vec<f64> = f.values().iter().map(|v| v * v).collect();
        let num: Vec<f64> = f2.iter().zip(&dr).map(|(a, b)| a * b).collect();
        let den = dirichlet(mu, &f, &[0])? + mean(mu, &f2)?;
        if den > 0.0 {
            best = best.max(mean(mu, &num)? / den);
        }
    }
    Ok(best)
}

pub fn ubound_constant(
    spec: &ModelSpec,
    r: f64,
    omega: &OmegaGrid,
    family_name: &str,
    quad: &QuadConfig,
) -> Result<UBoundReport> {
    let ceiling = 2.0 * (spec.phase.p() - 1.0);
    if !(r >= 0.0 && r <= ceiling) {
        return Err(Error::OutOfRange { name: "r", detail: format!("{r} outside [0, 2(p-1)] = [0, {ceiling}]") });
    }
    let family = Family::single_site(family_name, 0)?;
    let grid = quad.site_grid(&spec.phase)?;
    let profile = omega
        .configurations(spec.lattice.degree())
        .into_par_iter()
        .map(|w| {
            let mu = ConditionalMeasure::single_site(spec, 0, &w, grid.clone())?;
            Ok((w, ubound_ratio(&mu, r, &family.functions)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(UBoundReport {
        r,
        c: profile.iter().map(|p| p.1).fold(0.0, f64::max),
        profile,
        resolution: format!("n_omega={} nodes={}", omega.values.len(), grid.len()),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTriple {
    pub name: String,
    pub a: f64,
    pub b1: f64,
    pub b2: f64,
}

/// Fit of `a <= K1 b1 + K2 b2` over a family of triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoConstantFit {
    pub triples: Vec<FitTriple>,
    /// Lower-left Pareto set of `(K1, K2)`, sorted by increasing `K2`.
    pub frontier: Vec<(f64, f64)>,
    scale: f64,
}

/// `{0}` and 61 geometric points from `1e-6` to `1`.
pub fn k2_grid() -> Vec<f64> {
    std::iter::once(0.0).chain((0..=60).map(|k| 10f64.powf(-6.0 + k as f64 / 10.0))).collect()
}

impl TwoConstantFit {
    pub fn new(triples: Vec<FitTriple>) -> Self {
        let scale = triples.iter().map(|t| t.a + t.b1 + t.b2).fold(0.0, f64::max);
        let mut fit = Self { triples, frontier: Vec::new(), scale };
        let mut pts: Vec<(f64, f64)> = k2_grid()
            .into_iter()
            .map(|k2| (fit.k1_at(k2), k2))
            .filter(|p| p.0.is_finite())
            .collect();
        pts.sort_by(|a, b| a.1.total_cmp(&b.1));
        let mut frontier: Vec<(f64, f64)> = Vec::new();
        for p in pts {
            if frontier.last().is_none_or(|last| p.0 < last.0) {
                frontier.push(p);
            }
        }
        fit.frontier = frontier;
        fit
    }

    /// Smallest `K1 >= 0` admissible with this `K2`, or infinity.
    /// Rounding allowance for a triple: relative to its own size plus a
    /// floor relative to the largest triple of the family.
    fn allowance(&self, t: &FitTriple) -> f64 {
        NEGLIGIBLE * (t.a + t.b1 + t.b2) + NULL_FLOOR * self.scale
    }

    pub fn k1_at(&self, k2: f64) -> f64 {
        let mut k1: f64 = 0.0;
        for t in &self.triples {
            let tol = self.allowance(t);
            let rest = t.a - k2 * t.b2;
            if t.b1 > tol {
                k1 = k1.max(rest / t.b1);
            } else if rest > tol {
                return f64::INFINITY;
            }
        }
        k1
    }

    /// Smallest `K2 >= 0` admissible with `K1 <= cap`, or infinity.
    pub fn min_k2(&self, cap: f64) -> f64 {
        let mut k2: f64 = 0.0;
        for t in &self.triples {
            let tol = self.allowance(t);
            let rest = t.a - cap * t.b1;
            if t.b2 > tol {
                k2 = k2.max(rest / t.b2);
            } else if rest > tol {
                return f64::INFINITY;
            }
        }
        k2
    }

    /// Worst slack `K1 b1 + K2 b2 - a`, relative to `max(1, a)`.
    pub fn slack(&self, k1: f64, k2: f64) -> f64 {
        self.triples
            .iter()
            .map(|t| (k1 * t.b1 + k2 * t.b2 - t.a) / t.a.abs().max(1.0))
            .fold(f64::INFINITY, f64::min)
    }

    /// Union of two fits' triples.
    pub fn merged(&self, other: &Self) -> Self {
        let mut t = self.triples.clone();
        t.extend(other.triples.iter().cloned());
        Self::new(t)
    }
}

/// Fit of `a <= K b` over the family.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleConstantFit {
    pub ratios: Vec<(String, f64)>,
    pub value: f64,
}

impl SingleConstantFit {
    fn new(pairs: Vec<(String, f64, f64)>) -> Self {
        let ratios: Vec<(String, f64)> = pairs
            .into_iter()
            .filter(|(_, _, b)| *b > 0.0)
            .map(|(n, a, b)| (n, a / b))
            .collect();
        let value = ratios.iter().map(|r| r.1).fold(0.0, f64::max);
        Self { ratios, value }
    }
}

fn each_function<T: Send>(
    proxy: &GibbsProxy,
    family: &Family,
    per: impl Fn(&GridFunction) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    family.check_nondegenerate()?;
    family
        .functions
        .par_iter()
        .map(|t| per(&t.materialize(proxy.measure())?))
        .collect()
}

fn grad_sq(mu: &ConditionalMeasure, f: &GridFunction, positions: &[usize]) -> Result<f64> {
    dirichlet(mu, f, positions)
}

fn require_neighbors(proxy: &GibbsProxy, i: usize, j: usize) -> Result<()> {
    if !proxy.spec().lattice.are_neighbors(i, j) {
        return Err(Error::Config(format!("sites {i} and {j} are not neighbours")));
    }
    Ok(())
}

/// `nu|grad_j(E^i f)|^2 <= D1 nu|grad_j f|^2 + D2 nu|grad_i f|^2`.
pub fn sweepout_fit(proxy: &GibbsProxy, i: usize, j: usize, family: &Family) -> Result<TwoConstantFit> {
    require_neighbors(proxy, i, j)?;
    let mu = proxy.measure();
    let block = proxy.site_block(i)?;
    let triples = each_function(proxy, family, |f| {
        let g = mu.conditional_fn(&block, f)?;
        Ok(FitTriple {
            name: f.name.clone(),
            a: grad_sq(mu, &g, &[j])?,
            b1: grad_sq(mu, f, &[j])?,
            b2: grad_sq(mu, f, &[i])?,
        })
    })?;
    Ok(TwoConstantFit::new(triples))
}

/// `nu((f - E^i f)^2 d^s(x_j)) <= D3 (nu|grad_j f|^2 + nu|grad_i f|^2)`.
pub fn weighted_variance_fit(proxy: &GibbsProxy, i: usize, j: usize, family: &Family) -> Result<SingleConstantFit> {
    require_neighbors(proxy, i, j)?;
    let mu = proxy.measure();
    let block = proxy.site_block(i)?;
    let s = proxy.spec().interaction.s;
    let ds = mu.site_values(j, |x| powr(x.abs(), s));
    let pairs = each_function(proxy, family, |f| {
        let ef = mu.conditional(&block, f.values());
        let lhs: Vec<f64> = f.values().iter().zip(&ef).zip(&ds).map(|((a, b), w)| (a - b).powi(2) * w).collect();
        Ok((f.name.clone(), mean(mu, &lhs)?, grad_sq(mu, f, &[i, j])?))
    })?;
    Ok(SingleConstantFit::new(pairs))
}

/// `nu|grad_G1(E^G0 f)|^2 <= R1 nu|grad_G1 f|^2 + R2 nu|grad_G0 f|^2`.
pub fn checkerboard_fit(proxy: &GibbsProxy, family: &Family) -> Result<TwoConstantFit> {
    let mu = proxy.measure();
    let g0 = proxy.class_positions(Class::Gamma0);
    let g1 = proxy.class_positions(Class::Gamma1);
    let block = proxy.class_block(Class::Gamma0);
    let triples = each_function(proxy, family, |f| {
        let g = mu.conditional_fn(block, f)?;
        Ok(FitTriple { name: f.name.clone(), a: grad_sq(mu, &g, g1)?, b1: grad_sq(mu, f, g1)?, b2: grad_sq(mu, f, g0)? })
    })?;
    Ok(TwoConstantFit::new(triples))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockSqrtReport {
    /// Orientation `(i, j) = (1, 0)`: gradient over Gamma1 of `(E^G0 f^2)^{1/2}`.
    pub g1_of_g0: TwoConstantFit,
    /// Orientation `(i, j) = (0, 1)`.
    pub g0_of_g1: TwoConstantFit,
    /// Both orientations with shared constants.
    pub combined: TwoConstantFit,
    /// Largest floor applied under the square root.
    pub sqrt_floor: f64,
}

fn block_sqrt_orientation(proxy: &GibbsProxy, family: &Family, outer: Class) -> Result<(TwoConstantFit, f64)> {
    let mu = proxy.measure();
    let gi = proxy.class_positions(outer);
    let gj = proxy.class_positions(outer.other());
    let block = proxy.class_block(outer.other());
    let rows = each_function(proxy, family, |f| {
        let cond = mu.conditional_fn(block, &f.squared())?;
        let (root, floor) = cond.sqrt_floored();
        Ok((
            FitTriple { name: f.name.clone(), a: grad_sq(mu, &root, gi)?, b1: grad_sq(mu, f, gi)?, b2: grad_sq(mu, f, gj)? },
            floor,
        ))
    })?;
    let floor = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    Ok((TwoConstantFit::new(rows.into_iter().map(|r| r.0).collect()), floor))
}

/// `nu|grad_Gi (E^Gj f^2)^{1/2}|^2 <= C1 nu|grad_Gi f|^2 + C2 nu|grad_Gj f|^2`.
pub fn block_sqrt_fit(proxy: &GibbsProxy, family: &Family) -> Result<BlockSqrtReport> {
    let (a, fa) = block_sqrt_orientation(proxy, family, Class::Gamma1)?;
    let (b, fb) = block_sqrt_orientation(proxy, family, Class::Gamma0)?;
    Ok(BlockSqrtReport { combined: a.merged(&b), g1_of_g0: a, g0_of_g1: b, sqrt_floor: fa.max(fb) })
}

/// Per-edge form: `nu|grad_i (E^j f^2)^{1/2}|^2 <= G1 nu|grad_i f|^2 +
/// G2 (nu|grad_j f|^2 + sum_{t ~ j, t != i} nu|grad_t f|^2)`.
pub fn edge_sqrt_fit(proxy: &GibbsProxy, i: usize, j: usize, family: &Family) -> Result<TwoConstantFit> {
    require_neighbors(proxy, i, j)?;
    let mu = proxy.measure();
    let block = proxy.site_block(j)?;
    let mut others: Vec<usize> = proxy.spec().lattice.neighbors(j).iter().copied().filter(|&t| t != i).collect();
    others.sort_unstable();
    others.dedup();
    others.push(j);
    let triples = each_function(proxy, family, |f| {
        let (root, _) = mu.conditional_fn(&block, &f.squared())?.sqrt_floored();
        Ok(FitTriple { name: f.name.clone(), a: grad_sq(mu, &root, &[i])?, b1: grad_sq(mu, f, &[i])?, b2: grad_sq(mu, f, &others)? })
    })?;
    Ok(TwoConstantFit::new(triples))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMomentReport {
    pub m0: SingleConstantFit,
    /// `log E^{j,w} exp(eps_H |W|^2)` per boundary configuration.
    pub exp_moments: Vec<(Vec<f64>, f64)>,
    pub eps_h: f64,
    /// Some exponential moment was not finite on the grid.
    pub divergent: bool,
}

/// `nu A^j_i(f) <= m0 (nu|grad_j f|^2 + sum_{t ~ j} nu|grad_t f|^2)` with
/// `A^j_i(f) = |E^j(f^2; W)|^2 / E^j f^2`, `W = d/dx_i U(x_j, x_i)`.
pub fn covariance_moment_bound(
    proxy: &GibbsProxy,
    i: usize,
    j: usize,
    family: &Family,
    omega: &OmegaGrid,
    quad: &QuadConfig,
) -> Result<CovarianceMomentReport> {
    require_neighbors(proxy, i, j)?;
    let spec = proxy.spec();
    let mu = proxy.measure();
    let block = proxy.site_block(j)?;
    let it = spec.interaction;
    let nodes = mu.grid().nodes();
    let (ci, cj) = (mu.digit_column(i), mu.digit_column(j));
    let w: Vec<f64> =
        (0..mu.n_states()).map(|k| it.edge_grad_y(nodes[cj[k] as usize], nodes[ci[k] as usize])).collect();
    let ew = mu.conditional(&block, &w);
    let mut nbhd: Vec<usize> = spec.lattice.neighbors(j).to_vec();
    nbhd.sort_unstable();
    nbhd.dedup();
    nbhd.push(j);
    let pairs = each_function(proxy, family, |f| {
        let f2: Vec<f64> = f.values().iter().map(|v| v * v).collect();
        let ef2 = mu.conditional(&block, &f2);
        let f2w: Vec<f64> = f2.iter().zip(&w).map(|(a, b)| a * b).collect();
        let ef2w = mu.conditional(&block, &f2w);
        let a: Vec<f64> = (0..f2.len())
            .map(|k| {
                let cov = ef2w[k] - ef2[k] * ew[k];
                if ef2[k] > 0.0 {
                    cov * cov / ef2[k]
                } else {
                    0.0
                }
            })
            .collect();
        Ok((f.name.clone(), mean(mu, &a)?, grad_sq(mu, f, &nbhd)?))
    })?;
    let grid = quad.site_grid(&spec.phase)?;
    let mut exp_moments = Vec::new();
    let mut divergent = false;
    for cfg in omega.configurations(spec.lattice.degree()) {
        let single = ConditionalMeasure::single_site(spec, j, &cfg, grid.clone())?;
        let mut worst = f64::NEG_INFINITY;
        for &wi in &cfg {
            let w2: Vec<f64> = grid.nodes().iter().map(|&x| it.edge_grad_y(x, wi).powi(2)).collect();
            let lm = log_mean_exp(single.probs(), &w2, it.eps_h);
            if !lm.is_finite() {
                divergent = true;
            }
            worst = worst.max(lm);
        }
        exp_moments.push((cfg, worst));
    }
    Ok(CovarianceMomentReport { m0: SingleConstantFit::new(pairs), exp_moments, eps_h: it.eps_h, divergent })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assembly {
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
    /// `A = 1 / (1 - C2^2)`.
    pub a: f64,
    /// `max{c A (C1/C2 + C2 + C1), c A}`.
    pub frak_b: f64,
}

pub fn assemble(c: f64, c1: f64, c2: f64) -> Result<Assembly> {
    if !(c2 < 1.0) {
        return Err(Error::Divergent(format!("C2 = {c2} >= 1: the geometric series for A diverges")));
    }
    if !(c2 > 0.0) {
        return Err(Error::Degenerate(format!("C2 = {c2} must be positive for the C1/C2 term")));
    }
    if !(c > 0.0 && c1 >= 0.0) {
        return Err(Error::Degenerate(format!("need c > 0 and C1 >= 0, got c = {c}, C1 = {c1}")));
    }
    let a = 1.0 / (1.0 - c2 * c2);
    let frak_b = (c * a * (c1 / c2 + c2 + c1)).max(c * a);
    Ok(Assembly { c, c1, c2, a, frak_b })
}

/// `A` and `B` from the ledger entries `c`, `C1`, `C2`.
pub fn assemble_constants(ledger: &ConstantLedger) -> Result<Assembly> {
    assemble(ledger.value("c")?, ledger.value("C1")?, ledger.value("C2")?)
}

/// Point of the `(C1, C2)` fit minimising `B`, scanned over a dense
/// geometric grid of `C2` in `(0, 1)`.
pub fn minimize_frak_b(c: f64, fit: &TwoConstantFit) -> Result<Assembly> {
    let mut best: Option<Assembly> = None;
    let candidates = (0..=2000)
        .map(|k| 10f64.powf(-8.0 + 8.0 * k as f64 / 2000.0) * (1.0 - 1e-9))
        .chain(fit.frontier.iter().map(|p| p.1));
    for c2 in candidates {
        if !(c2 > 0.0 && c2 < 1.0) {
            continue;
        }
        let c1 = fit.k1_at(c2);
        if !c1.is_finite() {
            continue;
        }
        let asm = assemble(c, c1, c2)?;
        if best.is_none_or(|b| asm.frak_b < b.frak_b) {
            best = Some(asm);
        }
    }
    best.ok_or_else(|| Error::Divergent("no admissible (C1, C2) with 0 < C2 < 1".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::Basis;
    use crate::model::{CouplingMatrix, Interaction, LatticeTorus, Phase};

    fn spec(j: f64, side: usize) -> ModelSpec {
        ModelSpec::new(
            Phase::new(1.0, 4.0, 4.0, 3.0).unwrap(),
            Interaction::new(1.0, 0.5, 2.0).unwrap(),
            CouplingMatrix::uniform(j).unwrap(),
            LatticeTorus::new(1, side).unwrap(),
        )
        .unwrap()
    }

    fn small_quad() -> QuadConfig {
        QuadConfig { state_budget: 1 << 12, nodes_per_site: 64, ..QuadConfig::default() }
    }

    #[test]
    fn assembly_arithmetic() {
        let a = assemble(1.0, 1.0, 0.5).unwrap();
        assert!((a.a - 4.0 / 3.0).abs() < 1e-15);
        let b = assemble(2.0, 1.0, 0.5).unwrap();
        assert!((b.frak_b - 28.0 / 3.0).abs() < 1e-12);
        assert!(matches!(assemble(1.0, 1.0, 1.0), Err(Error::Divergent(_))));
        let mut ledger = ConstantLedger::new();
        ledger.record("c", 2.0, "test", "-");
        ledger.record("C1", 1.0, "test", "-");
        ledger.record("C2", 0.5, "test", "-");
        assert_eq!(assemble_constants(&ledger).unwrap(), b);
    }

    #[test]
    fn frak_b_blows_up_as_c2_vanishes() {
        let tiny = assemble(1.0, 1.0, 1e-6).unwrap().frak_b;
        let mid = assemble(1.0, 1.0, 0.3).unwrap().frak_b;
        assert!(tiny > 1e5 && mid < tiny);
    }

    #[test]
    fn fit_frontier_is_monotone_and_replays() {
        let triples = vec![
            FitTriple { name: "a".into(), a: 1.0, b1: 1.0, b2: 1.0 },
            FitTriple { name: "b".into(), a: 0.5, b1: 0.2, b2: 1.0 },
            FitTriple { name: "c".into(), a: 0.0, b1: 0.0, b2: 2.0 },
        ];
        let fit = TwoConstantFit::new(triples);
        for w in fit.frontier.windows(2) {
            assert!(w[1].1 > w[0].1 && w[1].0 < w[0].0);
        }
        for &(k1, k2) in &fit.frontier {
            assert!(fit.slack(k1, k2) >= -1e-10);
        }
        let k2 = fit.min_k2(1.0);
        assert!((k2 - 0.3).abs() < 1e-12);
        assert!(fit.slack(1.0, k2) >= -1e-12);
    }

    #[test]
    fn zero_coupling_sweepout_decouples() {
        let s = spec(0.0, 2);
        let proxy = GibbsProxy::exact(&s, &small_quad()).unwrap();
        let fam = Family::build("default", &[0, 1], &s.lattice).unwrap();
        let fit = sweepout_fit(&proxy, 0, 1, &fam).unwrap();
        assert_eq!(fit.frontier[0].1, 0.0);
        assert!(fit.frontier[0].0 <= 1.0 + 1e-9);
        let r = checkerboard_fit(&proxy, &fam).unwrap();
        assert!(r.k1_at(0.0) <= 1.0 + 1e-9);
    }

    #[test]
    fn functions_of_the_outer_site_pass_through() {
        let s = spec(0.1, 2);
        let proxy = GibbsProxy::exact(&s, &small_quad()).unwrap();
        let fam = Family { name: "j".into(), functions: vec![TestFunction::single(1, Basis::Exp(0.5))] };
        let fit = sweepout_fit(&proxy, 0, 1, &fam).unwrap();
        let t = &fit.triples[0];
        assert!((t.a - t.b1).abs() <= 1e-10 * t.b1);
        assert_eq!(t.b2, 0.0);
    }

    #[test]
    fn ubound_range_and_order() {
        let s = spec(0.0, 4);
        let om = OmegaGrid::uniform(1.0, 3).unwrap();
        let q = QuadConfig { nodes_per_site: 64, ..QuadConfig::default() };
        assert!(matches!(ubound_constant(&s, 7.0, &om, "default", &q), Err(Error::OutOfRange { .. })));
        let r0 = ubound_constant(&s, 0.0, &om, "default", &q).unwrap();
        assert!(r0.c <= 1.0 + 1e-12);
    }

    #[test]
    fn ls_dominates_sg_and_eigen_agrees() {
        let s = spec(0.05, 4);
        let om = OmegaGrid::uniform(2.0, 3).unwrap();
        let q = QuadConfig { nodes_per_site: 64, ..QuadConfig::default() };
        let r = estimate_ls_sg(&s, &om, "default", &q).unwrap();
        for p in &r.points {
            assert!(p.c_sg <= p.c_ls);
            assert!(p.c_sg <= p.c_sg_eigen * (1.0 + 1e-2), "{} vs {}", p.c_sg, p.c_sg_eigen);
            assert!(p.c_sg >= 0.8 * p.c_sg_eigen);
        }
    }

    #[test]
    fn degenerate_family_is_rejected() {
        let s = spec(0.05, 4);
        let g = QuadConfig::default().site_grid(&s.phase).unwrap();
        let mu = ConditionalMeasure::single_site(&s, 0, &[0.0, 0.0], g).unwrap();
        assert!(matches!(
            ls_sg_ratios(&mu, &[TestFunction::constant(1.0)]),
            Err(Error::Degenerate(_))
        ));
    }
}
