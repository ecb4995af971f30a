//! Model class: phase, pair interaction, couplings, site geometry and lattice.
//!
//! Sites live on the real line with `d(x) = |x|`. The pair interaction is
//! `V(x, y) = eps * (|x| + rho |y|)^s`. Every bond `{i, j}` carries the
//! symmetric edge potential `U(x_i, x_j) = V(x_i, x_j) + V(x_j, x_i)`, so the
//! conditional measures form a consistent specification.

mod config;
mod hypotheses;
mod lattice;

pub use config::ModelConfig;
pub use hypotheses::{
    check_hypotheses, region_check, HypothesisReport, HypothesisResult, HypothesisScan,
    OmegaGrid, RegionReport,
};
pub use lattice::{Class, LatticeTorus};
pub(crate) use hypotheses::log_mean_exp;

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[inline]
pub(crate) fn powr(base: f64, e: f64) -> f64 {
    if e == 0.0 {
        1.0
    } else if e.fract() == 0.0 && e.abs() <= 32.0 {
        base.powi(e as i32)
    } else {
        base.powf(e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// One-site space: the real line with `d(x) = |x|`, so `|grad d| = 1` and
/// `Laplacian d = 0` away from the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiteGeometry {
    pub xi: f64,
    pub tau: f64,
    pub theta: f64,
}

impl Default for SiteGeometry {
    fn default() -> Self {
        Self { xi: 1.0, tau: 1.0, theta: 0.0 }
    }
}

impl SiteGeometry {
    #[inline]
    pub fn distance(&self, x: f64) -> f64 {
        x.abs()
    }

    #[inline]
    pub fn grad_distance(&self, x: f64) -> f64 {
        sign(x)
    }

    #[inline]
    pub fn laplacian_distance(&self, _x: f64) -> f64 {
        0.0
    }
}

/// Phase `phi(x) = alpha * d(x)^p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    alpha: f64,
    p: f64,
    k0: f64,
    k1: f64,
    oracle: bool,
}

impl Phase {
    /// Phase with `p >= 3`.
    pub fn new(alpha: f64, p: f64, k0: f64, k1: f64) -> Result<Self> {
        if p < 3.0 {
            return Err(Error::Config(format!(
                "phase exponent p = {p} < 3; use Phase::oracle for calibration models"
            )));
        }
        Self::build(alpha, p, k0, k1, false)
    }

    /// Calibration phase that admits `p < 3` (e.g. the Gaussian `x^2 / 2`).
    pub fn oracle(alpha: f64, p: f64, k0: f64, k1: f64) -> Result<Self> {
        Self::build(alpha, p, k0, k1, true)
    }

    /// Standard Gaussian phase `x^2 / 2`.
    pub fn gaussian() -> Self {
        Self { alpha: 0.5, p: 2.0, k0: 1.0, k1: 1.0, oracle: true }
    }

    fn build(alpha: f64, p: f64, k0: f64, k1: f64, oracle: bool) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Config(format!("phase amplitude alpha must be positive, got {alpha}")));
        }
        if !(p.is_finite() && p >= 1.0) {
            return Err(Error::ModelRejected(format!("phase exponent p = {p} is not confining")));
        }
        if !(k0 > 0.0 && k1 > 0.0) {
            return Err(Error::Config("k0 and k1 must be positive".into()));
        }
        Ok(Self { alpha, p, k0, k1, oracle })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn p(&self) -> f64 {
        self.p
    }
    pub fn k0(&self) -> f64 {
        self.k0
    }
    pub fn k1(&self) -> f64 {
        self.k1
    }
    pub fn is_oracle(&self) -> bool {
        self.oracle
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        self.alpha * powr(x.abs(), self.p)
    }

    /// `d/dd phi` at distance `d`.
    #[inline]
    pub fn d1(&self, d: f64) -> f64 {
        self.alpha * self.p * powr(d, self.p - 1.0)
    }

    /// `d^2/dd^2 phi` at distance `d`.
    #[inline]
    pub fn d2(&self, d: f64) -> f64 {
        self.alpha * self.p * (self.p - 1.0) * powr(d, self.p - 2.0)
    }

    /// `phi'(x)` along the line.
    #[inline]
    pub fn grad(&self, x: f64) -> f64 {
        sign(x) * self.d1(x.abs())
    }
}

/// Pair interaction `V(x, y) = eps * (d(x) + rho d(y))^s` and its constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interaction {
    pub epsilon: f64,
    pub rho: f64,
    pub s: f64,
    /// Curvature bound constant of `U`.
    pub k2: f64,
    /// Growth constant of `U`.
    pub k: f64,
    /// Distance beyond which the curvature bound applies.
    pub m_star: f64,
    /// Exponential-moment parameter.
    pub eps_h: f64,
}

impl Interaction {
    pub fn new(epsilon: f64, rho: f64, s: f64) -> Result<Self> {
        let it = Self { epsilon, rho, s, k2: 1.0, k: 1.0, m_star: 1.0, eps_h: 0.05 };
        it.validate()?;
        Ok(it)
    }

    pub fn with_constants(mut self, k2: f64, k: f64, m_star: f64, eps_h: f64) -> Result<Self> {
        self.k2 = k2;
        self.k = k;
        self.m_star = m_star;
        self.eps_h = eps_h;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(Error::Config(format!("epsilon must be nonnegative, got {}", self.epsilon)));
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(Error::Config(format!("rho must be nonnegative, got {}", self.rho)));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::Config(format!("interaction exponent s must be positive, got {}", self.s)));
        }
        if !(self.k2 > 0.0 && self.k > 0.0 && self.m_star > 0.0 && self.eps_h > 0.0) {
            return Err(Error::Config("k2, kgrowth, Mstar and eps_h must be positive".into()));
        }
        Ok(())
    }

    /// `V(x, y)`.
    #[inline]
    pub fn v(&self, x: f64, y: f64) -> f64 {
        self.epsilon * powr(x.abs() + self.rho * y.abs(), self.s)
    }

    /// `U(x, y) = V(x, y) + V(y, x)`.
    #[inline]
    pub fn edge(&self, x: f64, y: f64) -> f64 {
        self.v(x, y) + self.v(y, x)
    }

    /// `d/dd(x) U(x, y)`.
    #[inline]
    pub fn edge_d1(&self, x: f64, y: f64) -> f64 {
        let (a, b) = (x.abs(), y.abs());
        let s = self.s;
        self.epsilon * s * (powr(a + self.rho * b, s - 1.0) + self.rho * powr(b + self.rho * a, s - 1.0))
    }

    /// `d^2/dd(x)^2 U(x, y)`.
    #[inline]
    pub fn edge_d2(&self, x: f64, y: f64) -> f64 {
        let (a, b) = (x.abs(), y.abs());
        let s = self.s;
        self.epsilon
            * s
            * (s - 1.0)
            * (powr(a + self.rho * b, s - 2.0) + self.rho * self.rho * powr(b + self.rho * a, s - 2.0))
    }

    /// `d/dx U(x, y)` along the line.
    #[inline]
    pub fn edge_grad_x(&self, x: f64, y: f64) -> f64 {
        sign(x) * self.edge_d1(x, y)
    }

    /// `d/dy U(x, y)` along the line.
    #[inline]
    pub fn edge_grad_y(&self, x: f64, y: f64) -> f64 {
        self.edge_grad_x(y, x)
    }
}

/// Nearest-neighbour couplings: uniform `J` with optional per-bond overrides.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingMatrix {
    j: f64,
    overrides: BTreeMap<(usize, usize), f64>,
}

impl CouplingMatrix {
    pub fn uniform(j: f64) -> Result<Self> {
        if !(j.is_finite() && j >= 0.0) {
            return Err(Error::Config(format!("coupling J must be a nonnegative number, got {j}")));
        }
        Ok(Self { j, overrides: BTreeMap::new() })
    }

    /// Override the coupling on bond `{a, b}`; requires `|j_ab| <= J`.
    pub fn with_override(mut self, a: usize, b: usize, j_ab: f64) -> Result<Self> {
        if !(j_ab.is_finite() && j_ab.abs() <= self.j) {
            return Err(Error::Config(format!(
                "override |J_{a}{b}| = {} exceeds uniform bound J = {}",
                j_ab.abs(),
                self.j
            )));
        }
        self.overrides.insert((a.min(b), a.max(b)), j_ab);
        Ok(self)
    }

    pub fn bound(&self) -> f64 {
        self.j
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        if self.overrides.is_empty() {
            return self.j;
        }
        *self.overrides.get(&(a.min(b), a.max(b))).unwrap_or(&self.j)
    }

    pub fn has_overrides(&self) -> bool {
        !self.overrides.is_empty()
    }

    /// Largest `|J_ij|` over the given bonds.
    pub fn max_abs(&self, edges: &[(usize, usize)]) -> f64 {
        edges.iter().map(|&(a, b)| self.get(a, b).abs()).fold(0.0, f64::max)
    }

    /// Largest negative-coupling magnitude, 0 if all couplings are nonnegative.
    pub fn max_negative(&self) -> f64 {
        self.overrides.values().filter(|v| **v < 0.0).map(|v| -v).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub geometry: SiteGeometry,
    pub phase: Phase,
    pub interaction: Interaction,
    pub coupling: CouplingMatrix,
    pub lattice: LatticeTorus,
}

impl ModelSpec {
    pub fn new(
        phase: Phase,
        interaction: Interaction,
        coupling: CouplingMatrix,
        lattice: LatticeTorus,
    ) -> Result<Self> {
        let spec = Self { geometry: SiteGeometry::default(), phase, interaction, coupling, lattice };
        spec.check_integrable()?;
        Ok(spec)
    }

    /// Same model with a different uniform coupling (overrides dropped).
    pub fn with_coupling(&self, j: f64) -> Result<Self> {
        Self::new(self.phase, self.interaction, CouplingMatrix::uniform(j)?, self.lattice.clone())
    }

    pub fn with_lattice(&self, lattice: LatticeTorus) -> Result<Self> {
        Self::new(self.phase, self.interaction, self.coupling.clone(), lattice)
    }

    /// `exp(-H)` must be integrable for every finite region and bounded
    /// boundary. Nonnegative couplings always qualify; a negative coupling is
    /// only admitted while the phase still dominates the interaction growth.
    fn check_integrable(&self) -> Result<()> {
        let neg = self.coupling.max_negative();
        if neg == 0.0 || self.interaction.epsilon == 0.0 {
            return Ok(());
        }
        let (p, s) = (self.phase.p(), self.interaction.s);
        let deg = self.lattice.degree() as f64;
        let growth = self.interaction.epsilon * (1.0 + powr(self.interaction.rho, s)) * 2f64.powf(s);
        if s > p || (s == p && deg * neg * growth >= self.phase.alpha()) {
            return Err(Error::ModelRejected(format!(
                "negative coupling {neg} with s = {s} >= p = {p} makes exp(-H) non-integrable"
            )));
        }
        Ok(())
    }

    /// Single-site energy of `x` at `site` with the given neighbour values
    /// (one per entry of `lattice.neighbors(site)`).
    pub fn site_energy(&self, site: usize, x: f64, neighbors: &[f64]) -> f64 {
        let nb = self.lattice.neighbors(site);
        let mut e = self.phase.value(x);
        for (&j, &y) in nb.iter().zip(neighbors) {
            e += self.coupling.get(site, j) * self.interaction.edge(x, y);
        }
        e
    }

    /// `D^{i,w}`: radial derivative of the single-site energy.
    pub fn radial_drift(&self, site: usize, d: f64, neighbors: &[f64]) -> f64 {
        let nb = self.lattice.neighbors(site);
        let mut v = self.phase.d1(d);
        for (&j, &y) in nb.iter().zip(neighbors) {
            v += self.coupling.get(site, j) * self.interaction.edge_d1(d, y);
        }
        v
    }

    /// `B^{i,w}`: radial second derivative of the single-site energy.
    pub fn radial_curvature(&self, site: usize, d: f64, neighbors: &[f64]) -> f64 {
        let nb = self.lattice.neighbors(site);
        let mut v = self.phase.d2(d);
        for (&j, &y) in nb.iter().zip(neighbors) {
            v += self.coupling.get(site, j) * self.interaction.edge_d2(d, y);
        }
        v
    }

    /// Interaction part of the radial drift, `sum_j J_ij d/dd U(x, w_j)`.
    pub fn interaction_drift(&self, site: usize, d: f64, neighbors: &[f64]) -> f64 {
        self.radial_drift(site, d, neighbors) - self.phase.d1(d)
    }
}
