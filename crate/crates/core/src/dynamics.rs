//! The checkerboard kernel `P = E^{G1} E^{G0}`: exact iteration on the torus
//! grid, entropy telescoping, the global LS verdict, and a block heat-bath
//! sampler for lattices beyond the tensor engine.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::functionals::{dirichlet, entropy, entropy_of, mean, variance, Family, GridFunction};
use crate::inequalities::ROTHAUS_SHIFTS;
use crate::measures::GibbsProxy;
use crate::model::{Class, ModelSpec};
use crate::quadrature::Grid1D;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    Exact,
    Mcmc,
}

impl FromStr for Engine {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "mcmc" | "sampler" => Ok(Self::Mcmc),
            other => Err(Error::Config(format!("unknown engine {other:?} (exact|mcmc)"))),
        }
    }
}

impl fmt::Display for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Exact => "exact",
            Self::Mcmc => "mcmc",
        })
    }
}

/// Exact kernel on a torus tensor grid.
#[derive(Debug, Clone, Copy)]
pub struct BlockKernel<'a> {
    proxy: &'a GibbsProxy,
}

impl<'a> BlockKernel<'a> {
    pub fn new(proxy: &'a GibbsProxy) -> Self {
        Self { proxy }
    }

    pub fn proxy(&self) -> &GibbsProxy {
        self.proxy
    }

    /// `P f = E^{G1}(E^{G0} f)`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mu = self.proxy.measure();
        let half = mu.conditional(self.proxy.class_block(Class::Gamma0), f);
        mu.conditional(self.proxy.class_block(Class::Gamma1), &half)
    }

    /// `P f` with gradients carried through both conditionings.
    pub fn apply_fn(&self, f: &GridFunction) -> Result<GridFunction> {
        let mu = self.proxy.measure();
        let half = mu.conditional_fn(self.proxy.class_block(Class::Gamma0), f)?;
        mu.conditional_fn(self.proxy.class_block(Class::Gamma1), &half)
    }

    /// `P^n f` for `n = 0..=n_max`.
    pub fn iterate(&self, f: &[f64], n_max: usize) -> Vec<Vec<f64>> {
        let mut out = vec![f.to_vec()];
        for _ in 0..n_max {
            let next = self.apply(out.last().expect("nonempty"));
            out.push(next);
        }
        out
    }
}

fn l2_norm(proxy: &GibbsProxy, f: &[f64]) -> Result<f64> {
    let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
    Ok(mean(proxy.measure(), &sq)?.sqrt())
}

/// Constants entering the convergence bound
/// `nu|P^n f - P^{n+1} f|^2 <= 4c(1+R2)(R1 R2^{2n-1} nu|grad_G1 f|^2 + R2^{2n} nu|grad_G0 f|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateConstants {
    pub c: f64,
    pub r1: f64,
    pub r2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    /// `||P^n f - nu f||` in `L^2(nu)` for `n = 0..=n_max`.
    pub residuals: Vec<f64>,
    /// `nu|P^n f - P^{n+1} f|^2` for `n = 0..n_max`.
    pub increments: Vec<f64>,
    /// Right-hand side of the increment bound, when constants are given.
    pub bound: Vec<f64>,
    /// Per-sweep contraction factor `exp(slope)` of the log-residuals.
    pub rate: f64,
    pub r_squared: f64,
    pub monotone: bool,
    /// Sweeps used in the fit.
    pub fit_range: (usize, usize),
}

impl ConvergenceReport {
    pub fn bound_holds(&self) -> bool {
        self.bound.is_empty()
            || self.increments.iter().zip(&self.bound).all(|(a, b)| *a <= b * (1.0 + 1e-9) + 1e-300)
    }
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, R^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, my - slope * mx, r2)
}

/// Iterates `P` on `f - nu f`, re-centring after every sweep so the iterates
/// keep full relative precision, and fits the geometric decay over `1..=n_max`.
pub fn convergence_fit(
    proxy: &GibbsProxy,
    f: &GridFunction,
    n_max: usize,
    constants: Option<RateConstants>,
) -> Result<ConvergenceReport> {
    let mu = proxy.measure();
    let kernel = BlockKernel::new(proxy);
    let var = variance(mu, f.values())?;
    let m = mean(mu, f.values())?;
    if !(var > 1e-24 * m * m) {
        return Err(Error::Degenerate(format!("{} is constant under nu", f.name)));
    }
    let mut g: Vec<f64> = f.values().iter().map(|v| v - m).collect();
    let mut residuals = vec![l2_norm(proxy, &g)?];
    let mut increments = Vec::with_capacity(n_max);
    for _ in 0..n_max {
        let mut next = kernel.apply(&g);
        let drift = mean(mu, &next)?;
        next.iter_mut().for_each(|v| *v -= drift);
        let diff: Vec<f64> = g.iter().zip(&next).map(|(a, b)| a - b).collect();
        increments.push(l2_norm(proxy, &diff)?.powi(2));
        residuals.push(l2_norm(proxy, &next)?);
        g = next;
    }
    let floor = residuals[0] * 1e-250;
    let usable: Vec<usize> = (1..=n_max).filter(|&n| residuals[n] > floor).collect();
    if usable.len() < 3 {
        return Err(Error::InsufficientDecay(format!(
            "only {} of {} sweeps above the numerical floor",
            usable.len(),
            n_max
        )));
    }
    let xs: Vec<f64> = usable.iter().map(|&n| n as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|&n| residuals[n].ln()).collect();
    let (slope, _, r_squared) = linear_fit(&xs, &ys);
    let monotone = residuals.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12));
    let bound = match constants {
        Some(k) => {
            let g1 = dirichlet(mu, f, proxy.class_positions(Class::Gamma1))?;
            let g0 = dirichlet(mu, f, proxy.class_positions(Class::Gamma0))?;
            (0..n_max)
                .map(|n| {
                    let e = 2 * n as i32;
                    4.0 * k.c * (1.0 + k.r2) * (k.r1 * k.r2.powi(e - 1) * g1 + k.r2.powi(e) * g0)
                })
                .collect()
        }
        None => Vec::new(),
    };
    Ok(ConvergenceReport {
        residuals,
        increments,
        bound,
        rate: slope.exp(),
        r_squared,
        monotone,
        fit_range: (usable[0], *usable.last().expect("nonempty")),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelescopeLevel {
    pub block: Class,
    /// `nu E^B(g log(g / E^B g))` with `g` the running conditioned `f^2`.
    pub term: f64,
    /// `nu|grad_B sqrt(g)|^2`.
    pub dirichlet: f64,
    /// `term <= c * dirichlet` (block LS through the product property).
    pub within: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TelescopeReport {
    pub levels: Vec<TelescopeLevel>,
    /// `Ent_nu` of the last conditioned function.
    pub remainder: f64,
    /// `Ent_nu(f^2)`.
    pub total: f64,
    /// `|total - sum(levels) - remainder|`.
    pub residual: f64,
    pub c: f64,
}

fn local_entropy(proxy: &GibbsProxy, g: &[f64], eg: &[f64]) -> Result<f64> {
    let terms: Vec<f64> = g
        .iter()
        .zip(eg)
        .map(|(&a, &b)| if a > 0.0 { a * (a / b).ln() } else { 0.0 })
        .collect();
    mean(proxy.measure(), &terms)
}

/// Entropy decomposition along `n` full sweeps (`2n` block conditionings),
/// each level compared with `c` times its block Dirichlet form.
pub fn entropy_telescope(proxy: &GibbsProxy, f: &GridFunction, n: usize, c: f64) -> Result<TelescopeReport> {
    let mu = proxy.measure();
    let total = entropy(mu, f.values())?;
    let mut g = f.squared();
    let mut levels = Vec::with_capacity(2 * n);
    for k in 0..2 * n {
        let class = if k % 2 == 0 { Class::Gamma0 } else { Class::Gamma1 };
        let next = mu.conditional_fn(proxy.class_block(class), &g)?;
        let term = local_entropy(proxy, g.values(), next.values())?;
        let (root, _) = g.sqrt_floored();
        let d = dirichlet(mu, &root, proxy.class_positions(class))?;
        levels.push(TelescopeLevel { block: class, term, dirichlet: d, within: term <= c * d * (1.0 + 1e-9) + 1e-14 });
        g = next;
    }
    let remainder = entropy_of(mu, g.values())?;
    let sum: f64 = levels.iter().map(|l| l.term).sum();
    Ok(TelescopeReport { residual: (total - sum - remainder).abs(), levels, remainder, total, c })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerdictRow {
    pub name: String,
    pub entropy: f64,
    pub dirichlet: f64,
    /// `B nu|grad f|^2 - Ent_nu(f^2)`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalVerdict {
    pub rows: Vec<VerdictRow>,
    pub frak_b: f64,
    /// Largest `Ent / Dirichlet` over the rows (a lower bound on the best
    /// global constant).
    pub empirical: f64,
    pub pass: bool,
}

/// `Ent_nu(f^2) <= B nu|grad f|^2` over the family and its shifted members.
pub fn global_ls_verdict(proxy: &GibbsProxy, frak_b: f64, family: &Family) -> Result<GlobalVerdict> {
    let mu = proxy.measure();
    let all: Vec<usize> = (0..mu.sites().len()).collect();
    let rows = family
        .functions
        .par_iter()
        .map(|t| {
            let f = t.materialize(mu)?;
            let d = dirichlet(mu, &f, &all)?;
            let mut rows = vec![VerdictRow {
                name: f.name.clone(),
                entropy: entropy(mu, f.values())?,
                dirichlet: d,
                slack: 0.0,
            }];
            let var = variance(mu, f.values())?;
            let m = mean(mu, f.values())?;
            if var > 1e-24 * m * m && var > 0.0 {
                let sd = var.sqrt();
                for s in ROTHAUS_SHIFTS {
                    let g: Vec<f64> = f.values().iter().map(|v| v - m + s * sd).collect();
                    rows.push(VerdictRow {
                        name: format!("{}~{s}", f.name),
                        entropy: entropy(mu, &g)?,
                        dirichlet: d,
                        slack: 0.0,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows: Vec<VerdictRow> = rows.into_iter().flatten().collect();
    let mut empirical: f64 = 0.0;
    for r in rows.iter_mut() {
        r.slack = frak_b * r.dirichlet - r.entropy;
        if r.dirichlet > 0.0 {
            empirical = empirical.max(r.entropy / r.dirichlet);
        }
    }
    let pass = rows.iter().all(|r| r.slack >= -1e-12 * r.entropy.abs().max(1.0));
    Ok(GlobalVerdict { rows, frak_b, empirical, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub chains: usize,
    /// Recorded sweeps per chain, after burn-in.
    pub sweeps: usize,
    pub burn_in: usize,
    pub seed: u64,
    /// Batches per chain for batch-means standard errors.
    pub batches: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { chains: 10, sweeps: 10_000, burn_in: 1_000, seed: 0, batches: 20 }
    }
}

/// One chain: node indices per site, its RNG stream and sweep count.
#[derive(Debug, Clone)]
pub struct ChainState {
    pub nodes: Vec<u16>,
    pub stream: u64,
    pub sweeps: u64,
    rng: ChaCha8Rng,
}

impl ChainState {
    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Block heat-bath sampler for the torus measure on a per-site node grid
/// (the same discrete measure as the exact engine on that grid).
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: ModelSpec,
    grid: Grid1D,
    /// `log w_k - phi(x_k)`.
    site_part: Vec<f64>,
    /// `U(x_k, x_l)` at `k * n + l`.
    bond: Vec<f64>,
    classes: [Vec<usize>; 2],
    /// Neighbours with couplings, per site.
    links: Vec<Vec<(usize, f64)>>,
}

impl Sampler {
    pub fn new(spec: &ModelSpec, grid: Grid1D) -> Result<Self> {
        if grid.len() > u16::MAX as usize {
            return Err(Error::Config("sampler grid too large".into()));
        }
        let nodes = grid.nodes();
        let n = nodes.len();
        let site_part = (0..n).map(|k| grid.weights()[k].ln() - spec.phase.value(nodes[k])).collect();
        let mut bond = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                bond[k * n + l] = spec.interaction.edge(nodes[k], nodes[l]);
            }
        }
        let lat = &spec.lattice;
        let links = (0..lat.n_sites())
            .map(|i| lat.neighbors(i).iter().map(|&t| (t, spec.coupling.get(i, t))).collect())
            .collect();
        Ok(Self {
            spec: spec.clone(),
            site_part,
            bond,
            classes: [lat.class_sites(Class::Gamma0), lat.class_sites(Class::Gamma1)],
            links,
            grid,
        })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    /// Chain `stream` of base `seed`, started from an independent draw of the
    /// uncoupled single-site marginals.
    pub fn init_chain(&self, seed: u64, stream: u64) -> ChainState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let n_sites = self.spec.lattice.n_sites();
        let mut state = ChainState { nodes: vec![0; n_sites], stream, sweeps: 0, rng };
        let lw = self.site_part.clone();
        for i in 0..n_sites {
            state.nodes[i] = draw(&lw, &mut state.rng) as u16;
        }
        state
    }

    fn conditional_log_weights(&self, site: usize, nodes: &[u16], out: &mut [f64]) {
        let n = self.grid.len();
        out.copy_from_slice(&self.site_part);
        for &(t, j) in &self.links[site] {
            if j == 0.0 {
                continue;
            }
            let l = nodes[t] as usize;
            for (k, o) in out.iter_mut().enumerate() {
                *o -= j * self.bond[k * n + l];
            }
        }
    }

    /// Resamples every site of `class` from its single-site conditional given
    /// the current neighbours.
    pub fn block_heatbath_step(&self, state: &mut ChainState, class: Class) {
        let mut lw = vec![0.0; self.grid.len()];
        for &i in &self.classes[class as usize] {
            self.conditional_log_weights(i, &state.nodes, &mut lw);
            state.nodes[i] = draw(&lw, &mut state.rng) as u16;
        }
    }

    /// One transition of the kernel `P = E^{G1} E^{G0}`: as a chain step this
    /// resamples `G1` first, then `G0`.
    pub fn sweep(&self, state: &mut ChainState) {
        self.block_heatbath_step(state, Class::Gamma1);
        self.block_heatbath_step(state, Class::Gamma0);
        state.sweeps += 1;
    }

    pub fn values(&self, state: &ChainState) -> Vec<f64> {
        let x = self.grid.nodes();
        state.nodes.iter().map(|&k| x[k as usize]).collect()
    }

    /// Site values of chain `stream` after each of `sweeps` sweeps following
    /// the burn-in; replays the same trajectory as chain `stream` of `run`.
    pub fn trajectory(&self, seed: u64, stream: u64, burn_in: usize, sweeps: usize) -> Vec<Vec<f64>> {
        let mut st = self.init_chain(seed, stream);
        for _ in 0..burn_in {
            self.sweep(&mut st);
        }
        (0..sweeps)
            .map(|_| {
                self.sweep(&mut st);
                self.values(&st)
            })
            .collect()
    }

    /// Runs `cfg.chains` independent chains and records `observe(x)` after
    /// every post-burn-in sweep. Chains run in parallel; results do not depend
    /// on the thread count.
    pub fn run<F>(&self, cfg: &SamplerConfig, n_obs: usize, observe: F) -> Result<ChainTraces>
    where
        F: Fn(&[f64], &mut [f64]) + Sync,
    {
        if cfg.chains < 2 || cfg.sweeps < cfg.batches || cfg.batches < 2 {
            return Err(Error::Config("need >= 2 chains, >= 2 batches and sweeps >= batches".into()));
        }
        let traces = (0..cfg.chains as u64)
            .into_par_iter()
            .map(|c| {
                let mut st = self.init_chain(cfg.seed, c);
                for _ in 0..cfg.burn_in {
                    self.sweep(&mut st);
                }
                let mut out = vec![0.0; cfg.sweeps * n_obs];
                for s in 0..cfg.sweeps {
                    self.sweep(&mut st);
                    observe(&self.values(&st), &mut out[s * n_obs..(s + 1) * n_obs]);
                }
                out
            })
            .collect();
        Ok(ChainTraces { n_obs, sweeps: cfg.sweeps, batches: cfg.batches, traces })
    }
}

/// Inverse-CDF draw from unnormalised log-weights.
fn draw(lw: &[f64], rng: &mut impl Rng) -> usize {
    let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut cdf = Vec::with_capacity(lw.len());
    let mut acc = 0.0;
    for v in lw {
        acc += (v - m).exp();
        cdf.push(acc);
    }
    let u = rng.random::<f64>() * acc;
    cdf.partition_point(|&c| c <= u).min(lw.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    /// Batch-means standard error over all chains.
    pub se: f64,
    /// Gelman-Rubin potential scale reduction.
    pub r_hat: f64,
}

/// Recorded observables, `traces[chain][sweep * n_obs + k]`.
#[derive(Debug, Clone)]
pub struct ChainTraces {
    pub n_obs: usize,
    pub sweeps: usize,
    pub batches: usize,
    pub traces: Vec<Vec<f64>>,
}

impl ChainTraces {
    pub fn series(&self, chain: usize, k: usize) -> impl Iterator<Item = f64> + '_ {
        self.traces[chain].iter().skip(k).step_by(self.n_obs).copied()
    }

    /// Estimate of `nu(g(obs_k))`.
    pub fn estimate_with(&self, k: usize, g: impl Fn(f64) -> f64) -> McEstimate {
        let per = self.sweeps / self.batches;
        let mut batch_means = Vec::new();
        let mut chain_means = Vec::new();
        let mut within = 0.0;
        for c in 0..self.traces.len() {
            let v: Vec<f64> = self.series(c, k).take(per * self.batches).map(&g).collect();
            for b in v.chunks(per) {
                batch_means.push(b.iter().sum::<f64>() / per as f64);
            }
            let m = v.iter().sum::<f64>() / v.len() as f64;
            within += v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
            chain_means.push(m);
        }
        let nb = batch_means.len() as f64;
        let mean = batch_means.iter().sum::<f64>() / nb;
        let bvar = batch_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nb - 1.0);
        let m = self.traces.len() as f64;
        let n = (per * self.batches) as f64;
        let w = within / m;
        let between = n * chain_means.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0);
        let r_hat = if w > 0.0 { (((n - 1.0) / n * w + between / n) / w).sqrt() } else { 1.0 };
        McEstimate { mean, se: (bvar / nb).sqrt(), r_hat }
    }

    pub fn estimate(&self, k: usize) -> McEstimate {
        self.estimate_with(k, |x| x)
    }
}

/// Monte Carlo `P^n f(x)` from a fixed start: `replicates` independent runs
/// of `n` sweeps each. Returns `(mean, standard error)`.
pub fn estimate_pnf(
    sampler: &Sampler,
    start: &[u16],
    n: usize,
    f: impl Fn(&[f64]) -> f64 + Sync,
    replicates: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if start.len() != sampler.spec.lattice.n_sites() || replicates < 2 {
        return Err(Error::Config("start must cover the torus and replicates >= 2".into()));
    }
    let vals: Vec<f64> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut st = sampler.init_chain(seed, r);
            st.nodes.copy_from_slice(start);
            for _ in 0..n {
                sampler.sweep(&mut st);
            }
            f(&sampler.values(&st))
        })
        .collect();
    let m = vals.iter().sum::<f64>() / replicates as f64;
    let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (replicates - 1) as f64;
    Ok((m, (v / replicates as f64).sqrt()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentRow {
    pub lambda: f64,
    pub estimate: McEstimate,
    /// `exp(lambda nu f + B lambda^2)` with the estimated `nu f`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub h: f64,
    /// Frequency of `|f - nu f| >= h`.
    pub estimate: McEstimate,
    /// `2 exp(-h^2 / B)`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationReport {
    pub mean_f: McEstimate,
    pub moments: Vec<MomentRow>,
    pub tails: Vec<TailRow>,
    pub max_r_hat: f64,
    pub grad_bound: f64,
    pub pass: bool,
}

/// Largest Gelman-Rubin value accepted as converged.
pub const R_HAT_LIMIT: f64 = 1.05;

/// Exponential-moment and tail bounds for `f = |L|^{-1/2} sum_i x_i`, whose
/// squared gradient is identically 1.
pub fn concentration_check(
    sampler: &Sampler,
    frak_b: f64,
    lambdas: &[f64],
    hs: &[f64],
    cfg: &SamplerConfig,
) -> Result<ConcentrationReport> {
    let n_sites = sampler.spec.lattice.n_sites();
    let scale = 1.0 / (n_sites as f64).sqrt();
    let grad_bound = n_sites as f64 * scale * scale;
    let traces = sampler.run(cfg, 1, |x, out| out[0] = scale * x.iter().sum::<f64>())?;
    let mean_f = traces.estimate(0);
    let mut max_r_hat = mean_f.r_hat;
    let moments: Vec<MomentRow> = lambdas
        .iter()
        .map(|&l| {
            let estimate = traces.estimate_with(0, |f| (l * f).exp());
            let bound = (l * mean_f.mean + frak_b * l * l).exp();
            MomentRow { lambda: l, estimate, bound, pass: bound >= estimate.mean - 2.0 * estimate.se }
        })
        .collect();
    let tails: Vec<TailRow> = hs
        .iter()
        .map(|&h| {
            let estimate = traces.estimate_with(0, |f| if (f - mean_f.mean).abs() >= h { 1.0 } else { 0.0 });
            let bound = 2.0 * (-h * h / frak_b).exp();
            TailRow { h, estimate, bound, pass: bound >= estimate.mean - 2.0 * estimate.se }
        })
        .collect();
    for m in &moments {
        max_r_hat = max_r_hat.max(m.estimate.r_hat);
    }
    if !(max_r_hat <= R_HAT_LIMIT) {
        return Err(Error::Unconverged(format!("Gelman-Rubin R-hat {max_r_hat:.4} exceeds {R_HAT_LIMIT}")));
    }
    let pass = grad_bound <= 1.0 + 1e-12 && moments.iter().all(|m| m.pass) && tails.iter().all(|t| t.pass);
    Ok(ConcentrationReport { mean_f, moments, tails, max_r_hat, grad_bound, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::functionals::{random_functions, Basis, TestFunction};
    use crate::model::{CouplingMatrix, Interaction, LatticeTorus, Phase};
    use crate::quadrature::QuadConfig;

    fn spec(j: f64, side: usize) -> ModelSpec {
        ModelSpec::new(
            Phase::new(1.0, 4.0, 4.0, 3.0).unwrap(),
            Interaction::new(1.0, 0.5, 2.0).unwrap(),
            CouplingMatrix::uniform(j).unwrap(),
            LatticeTorus::new(1, side).unwrap(),
        )
        .unwrap()
    }

    fn proxy(j: f64, side: usize) -> GibbsProxy {
        let q = QuadConfig { nodes_per_site: 48, state_budget: 1 << 16, ..QuadConfig::default() };
        GibbsProxy::exact(&spec(j, side), &q).unwrap()
    }

    #[test]
    fn kernel_is_unital_and_invariant() {
        let p = proxy(0.1, 2);
        let k = BlockKernel::new(&p);
        let one = vec![1.0; p.measure().n_states()];
        assert!(k.apply(&one).iter().all(|v| (v - 1.0).abs() < 1e-14));
        let f = TestFunction::product(0, Basis::Pow(1), 1, Basis::Pow(1)).materialize(p.measure()).unwrap();
        let mu = p.measure();
        let pf = k.apply(f.values());
        assert!((mean(mu, &pf).unwrap() - mean(mu, f.values()).unwrap()).abs() < 1e-12);
        let r = convergence_fit(&p, &f, 6, None).unwrap();
        assert!(r.monotone);
        assert!(r.residuals[1] < r.residuals[0]);
    }

    #[test]
    fn zero_coupling_collapses_in_one_sweep() {
        let p = proxy(0.0, 2);
        let k = BlockKernel::new(&p);
        let f = TestFunction::single(1, Basis::Exp(0.5)).materialize(p.measure()).unwrap();
        let nu = mean(p.measure(), f.values()).unwrap();
        assert!(k.apply(f.values()).iter().all(|v| (v - nu).abs() < 1e-13));
    }

    #[test]
    fn telescope_is_additive() {
        for (j, side) in [(0.0, 2), (0.3, 2), (0.05, 4)] {
            let p = proxy(j, side);
            let sites: Vec<usize> = (0..side).collect();
            for t in random_functions(3, &sites, 7) {
                let f = t.materialize(p.measure()).unwrap();
                let r = entropy_telescope(&p, &f, 2, 1.0).unwrap();
                assert!(r.residual < 1e-10 * r.total.max(1.0), "{}", r.residual);
                assert!(r.levels.iter().all(|l| l.term >= -1e-15));
            }
        }
    }

    #[test]
    fn constant_has_no_entropy_anywhere() {
        let p = proxy(0.05, 2);
        let f = TestFunction::constant(2.0).materialize(p.measure()).unwrap();
        let r = entropy_telescope(&p, &f, 1, 1.0).unwrap();
        assert!(r.total.abs() < 1e-14 && r.levels.iter().all(|l| l.term.abs() < 1e-14));
        assert!(matches!(convergence_fit(&p, &f, 4, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn verdict_slack_of_constants_is_zero() {
        let p = proxy(0.05, 2);
        let fam = Family { name: "c".into(), functions: vec![TestFunction::constant(1.0)] };
        let v = global_ls_verdict(&p, 3.0, &fam).unwrap();
        assert!(v.pass && v.rows[0].slack == 0.0);
    }

    #[test]
    fn sampler_replays_and_uncoupled_moments_match() {
        let s = spec(0.0, 4);
        let grid = QuadConfig::default().site_grid(&s.phase).unwrap();
        let sampler = Sampler::new(&s, grid.clone()).unwrap();
        let mut a = sampler.init_chain(3, 1);
        let mut b = sampler.init_chain(3, 1);
        for _ in 0..20 {
            sampler.sweep(&mut a);
            sampler.sweep(&mut b);
        }
        assert_eq!(a.nodes, b.nodes);
        let cfg = SamplerConfig { chains: 4, sweeps: 4000, burn_in: 100, seed: 11, batches: 20 };
        let tr = sampler.run(&cfg, 1, |x, o| o[0] = x[0] * x[0]).unwrap();
        let est = tr.estimate(0);
        let single = crate::measures::ConditionalMeasure::single_site(&s, 0, &[0.0, 0.0], grid).unwrap();
        let exact = single.expect_fn(|x| x[0] * x[0]).unwrap();
        assert!((est.mean - exact).abs() < 3.0 * est.se, "{} vs {exact} se {}", est.mean, est.se);
    }

    #[test]
    fn linear_fit_recovers_line() {
        let (s, i, r2) = linear_fit(&[1.0, 2.0, 3.0], &[1.0, 3.0, 5.0]);
        assert!((s - 2.0).abs() < 1e-14 && (i + 1.0).abs() < 1e-14 && (r2 - 1.0).abs() < 1e-14);
    }
}
