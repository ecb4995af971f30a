//! Experiment runner: one TOML config per run, one CSV per subcommand, and a
//! `summary.csv` collecting verdicts and headline constants.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::dynamics::{
    concentration_check, convergence_fit, entropy_telescope, global_ls_verdict, ConcentrationReport, Engine,
    GlobalVerdict, RateConstants, Sampler, SamplerConfig,
};
use crate::error::{Error, Result};
use crate::functionals::{random_functions, registry_basis, Basis, ConstantLedger, Family, TestFunction};
use crate::inequalities::{
    weighted_variance_fit, edge_sqrt_fit, estimate_ls_sg, covariance_moment_bound, minimize_frak_b, block_sqrt_fit, checkerboard_fit,
    sweepout_fit, ubound_constant, Assembly, LsSgReport, BlockSqrtReport, TwoConstantFit,
};
use crate::measures::GibbsProxy;
use crate::model::{check_hypotheses, region_check, HypothesisScan, LatticeTorus, ModelConfig, ModelSpec, OmegaGrid};
use crate::quadrature::QuadConfig;

/// Run keys, read from the `[run]` table of the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub omega_max: f64,
    pub omega_points: usize,
    pub d_max: f64,
    pub d_points: usize,
    pub j_list: Vec<f64>,
    pub r_list: Vec<f64>,
    pub lambda_list: Vec<f64>,
    pub h_list: Vec<f64>,
    pub family: String,
    pub seed: u64,
    pub engine: String,
    pub nodes_per_site: usize,
    pub state_budget: usize,
    pub trunc_tol: f64,
    pub chains: usize,
    pub sweeps: usize,
    pub burn_in: usize,
    pub batches: usize,
    pub n_iter: usize,
    pub d1_cap: f64,
    pub region_m: f64,
    pub region_n: f64,
    /// Skip the constant fits in `concentration` and use this value.
    pub frak_b: Option<f64>,
    /// Sweeps of chain 0 dumped by `concentration`; 0 disables the dump.
    pub trajectory_sweeps: usize,
    pub out: Option<PathBuf>,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            omega_max: 3.0,
            omega_points: 13,
            d_max: 6.0,
            d_points: 600,
            j_list: vec![0.0, 0.02, 0.05, 0.1],
            r_list: vec![1.0, 2.0, 4.0],
            lambda_list: vec![0.25, 0.5, 1.0],
            h_list: vec![0.5, 1.0, 2.0],
            family: "default".into(),
            seed: 0,
            engine: "exact".into(),
            nodes_per_site: 128,
            state_budget: 1 << 20,
            trunc_tol: 1e-14,
            chains: 10,
            sweeps: 10_000,
            burn_in: 1_000,
            batches: 20,
            n_iter: 6,
            d1_cap: 1.0,
            region_m: 10.0,
            region_n: 1.0,
            frak_b: None,
            trajectory_sweeps: 0,
            out: None,
        }
    }
}

impl RunSettings {
    pub fn validate(&self) -> Result<()> {
        registry_basis(&self.family)?;
        for (name, list) in [("j_list", &self.j_list), ("r_list", &self.r_list), ("lambda_list", &self.lambda_list), ("h_list", &self.h_list)] {
            if list.is_empty() {
                return Err(Error::Config(format!("{name} must not be empty")));
            }
        }
        if self.omega_points == 0 || self.d_points == 0 || self.n_iter == 0 {
            return Err(Error::Config("grid sizes must be positive".into()));
        }
        self.engine.parse::<Engine>()?;
        Ok(())
    }

    pub fn quad(&self) -> QuadConfig {
        QuadConfig { trunc_tol: self.trunc_tol, nodes_per_site: self.nodes_per_site, state_budget: self.state_budget }
    }

    pub fn omega(&self) -> Result<OmegaGrid> {
        OmegaGrid::uniform(self.omega_max, self.omega_points)
    }

    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig { chains: self.chains, sweeps: self.sweeps, burn_in: self.burn_in, seed: self.seed, batches: self.batches }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub run: RunSettings,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let model = ModelConfig::from_toml(text)?;
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let run = match table.get("run") {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(format!("[run]: {e}")))?,
            None => RunSettings::default(),
        };
        let cfg = Self { model, run };
        cfg.run.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }
}

#[derive(Debug, Parser)]
#[command(name = "lsi-bench", about = "Log-Sobolev constant workbench for lattice spin systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// exact | mcmc
    #[arg(long, global = true)]
    pub engine: Option<String>,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    CheckHypotheses,
    Region,
    EstimateLs,
    Ubound,
    Sweepout,
    Blockfit,
    Iterate,
    Pipeline,
    Concentration,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::CheckHypotheses => "check-hypotheses",
            Self::Region => "region",
            Self::EstimateLs => "estimate-ls",
            Self::Ubound => "ubound",
            Self::Sweepout => "sweepout",
            Self::Blockfit => "blockfit",
            Self::Iterate => "iterate",
            Self::Pipeline => "pipeline",
            Self::Concentration => "concentration",
        }
    }
}

/// Rows of one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub file: String,
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(file: &str, header: &[&'static str]) -> Self {
        Self { file: file.into(), header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// CSV body without the comment line.
    pub fn body(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let io = |e: csv::Error| Error::Io(e.to_string());
        w.write_record(&self.header).map_err(io)?;
        for r in &self.rows {
            w.write_record(r).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Outcome of one subcommand.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub pass: bool,
    pub tables: Vec<Table>,
    /// `(name, value)` pairs for `summary.csv`.
    pub headline: Vec<(String, f64)>,
    /// Human-readable lines for stdout.
    pub messages: Vec<String>,
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn flag(b: bool) -> String {
    if b { "pass" } else { "fail" }.to_string()
}

fn torus_family(spec: &ModelSpec, name: &str) -> Result<Family> {
    let sites: Vec<usize> = (0..spec.lattice.n_sites()).collect();
    Family::build(name, &sites, &spec.lattice)
}

fn require_exact(cmd: Command, engine: Engine) -> Result<()> {
    if engine != Engine::Exact {
        return Err(Error::Config(format!("{} runs on the exact engine only", cmd.name())));
    }
    Ok(())
}

/// Headline of a two-constant fit: smallest `K2` with `K1 <= cap`.
fn capped(fit: &TwoConstantFit, cap: f64) -> (f64, f64) {
    let k2 = fit.min_k2(cap);
    (fit.k1_at(k2).min(cap), k2)
}

fn frontier_rows(t: &mut Table, label: &str, j: f64, fit: &TwoConstantFit) {
    for &(k1, k2) in &fit.frontier {
        t.push(vec![label.into(), num(j), num(k1), num(k2), num(fit.slack(k1, k2))]);
    }
}

pub fn run_check_hypotheses(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let scan = HypothesisScan::uniform(r.d_max, r.d_points, r.omega_max, r.omega_points)?;
    let report = check_hypotheses(&spec, &scan)?;
    let mut t = Table::new("check-hypotheses.csv", &["hypothesis", "verdict", "margin", "witness"]);
    let mut messages = Vec::new();
    for h in &report.results {
        t.push(vec![h.name.clone(), flag(h.pass), num(h.margin), h.witness.clone()]);
        if !h.pass {
            messages.push(format!("{}: fail, {}", h.name, h.witness));
        }
    }
    Ok(Outcome {
        pass: report.all_pass(),
        tables: vec![t],
        headline: report.certified.iter().map(|(k, v)| (k.clone(), *v)).collect(),
        messages,
    })
}

pub fn run_region(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let scan = HypothesisScan::uniform(r.d_max, r.d_points, r.omega_max, r.omega_points)?;
    let rep = region_check(&spec, r.region_m, r.region_n, &scan)?;
    let mut t = Table::new(
        "region.csv",
        &["M", "N", "zeta", "verdict", "empty_region", "points_in_region", "excluded_points", "witness"],
    );
    t.push(vec![
        num(rep.m),
        num(rep.n),
        rep.zeta.map(num).unwrap_or_default(),
        flag(rep.pass),
        rep.empty_region.to_string(),
        rep.points_in_region.to_string(),
        rep.excluded_points.to_string(),
        rep.witness.clone().unwrap_or_default(),
    ]);
    Ok(Outcome {
        pass: rep.pass,
        tables: vec![t],
        headline: rep.zeta.map(|z| vec![("zeta".to_string(), z)]).unwrap_or_default(),
        messages: rep.witness.into_iter().collect(),
    })
}

fn ls_table(rep: &LsSgReport) -> Table {
    let mut t = Table::new("estimate-ls.csv", &["omega", "c_ls", "c_sg", "c_sg_eigen", "family_size", "resolution"]);
    for p in &rep.points {
        let w: Vec<String> = p.omega.iter().map(|v| num(*v)).collect();
        t.push(vec![
            w.join(" "),
            num(p.c_ls),
            num(p.c_sg),
            num(p.c_sg_eigen),
            rep.family_size.to_string(),
            rep.resolution.clone(),
        ]);
    }
    t
}

pub fn run_estimate_ls(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let rep = estimate_ls_sg(&spec, &r.omega()?, &r.family, &r.quad())?;
    let pass = rep.points.iter().all(|p| p.c_sg <= p.c_ls * (1.0 + 1e-9));
    Ok(Outcome {
        pass,
        headline: vec![("c".into(), rep.c_ls), ("c_SG".into(), rep.c_sg), ("c_SG_eigen".into(), rep.c_sg_eigen)],
        tables: vec![ls_table(&rep)],
        messages: Vec::new(),
    })
}

pub fn run_ubound(cfg: &RunConfig) -> Result<Outcome> {
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let omega = r.omega()?;
    let mut t = Table::new("ubound.csv", &["r", "omega", "C", "resolution"]);
    let mut headline = Vec::new();
    let mut cs = Vec::new();
    for &rr in &r.r_list {
        let rep = ubound_constant(&spec, rr, &omega, &r.family, &r.quad())?;
        for (w, c) in &rep.profile {
            let w: Vec<String> = w.iter().map(|v| num(*v)).collect();
            t.push(vec![num(rr), w.join(" "), num(*c), rep.resolution.clone()]);
        }
        headline.push((format!("C(r={rr})"), rep.c));
        cs.push((rr, rep.c));
    }
    cs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let pass = cs.iter().all(|c| c.1.is_finite()) && cs.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - 1e-12));
    Ok(Outcome { pass, tables: vec![t], headline, messages: Vec::new() })
}

pub fn run_sweepout(cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    require_exact(Command::Sweepout, engine)?;
    let base = cfg.model.build()?;
    let r = &cfg.run;
    let quad = r.quad();
    let family = torus_family(&base, &r.family)?;
    let (i, j) = (0, base.lattice.neighbors(0)[0]);
    let mut t = Table::new("sweepout.csv", &["kind", "J", "K1", "K2", "slack"]);
    let mut headline = Vec::new();
    let mut pass = true;
    for &jv in &r.j_list {
        let spec = base.with_coupling(jv)?;
        let proxy = GibbsProxy::exact(&spec, &quad)?;
        let fit = sweepout_fit(&proxy, i, j, &family)?;
        frontier_rows(&mut t, "frontier", jv, &fit);
        let (d1, d2) = capped(&fit, r.d1_cap);
        t.push(vec!["headline".into(), num(jv), num(d1), num(d2), num(fit.slack(d1, d2))]);
        let d3 = weighted_variance_fit(&proxy, i, j, &family)?;
        t.push(vec!["D3".into(), num(jv), num(d3.value), num(d3.value), String::new()]);
        headline.push((format!("D2(J={jv})"), d2));
        headline.push((format!("D3(J={jv})"), d3.value));
        if jv == cfg.model.j {
            pass &= d2 < 1.0;
        }
    }
    Ok(Outcome { pass, tables: vec![t], headline, messages: Vec::new() })
}

/// Every fitted constant of the chain on the exact torus proxy.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub ledger: ConstantLedger,
    pub ls: LsSgReport,
    pub sweepout: TwoConstantFit,
    pub checkerboard: TwoConstantFit,
    pub block_sqrt: BlockSqrtReport,
    pub assembly: Assembly,
    pub verdict: GlobalVerdict,
}

pub fn pipeline(spec: &ModelSpec, r: &RunSettings) -> Result<PipelineOutcome> {
    let quad = r.quad();
    let omega = r.omega()?;
    let proxy = GibbsProxy::exact(spec, &quad)?;
    let res = proxy.resolution();
    let family = torus_family(spec, &r.family)?;
    let (i, j) = (0, spec.lattice.neighbors(0)[0]);
    let mut ledger = ConstantLedger::new();

    let ls = estimate_ls_sg(spec, &omega, &r.family, &quad)?;
    ledger.record("c", ls.c_ls, "max Ent/Dirichlet, single site, over omega grid", &ls.resolution);
    ledger.record("c_SG", ls.c_sg, "max Var/Dirichlet, single site", &ls.resolution);
    let r_max = r.r_list.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ub = ubound_constant(spec, r_max, &omega, &r.family, &quad)?;
    ledger.record("C", ub.c, &format!("U-bound ratio at r={r_max}"), &ub.resolution);

    let sw = sweepout_fit(&proxy, i, j, &family)?;
    let (d1, d2) = capped(&sw, r.d1_cap);
    ledger.record("D1", d1, "sweep-out fit, capped", &res);
    ledger.record("D2", d2, "sweep-out fit, smallest K2 under cap", &res);
    let d3 = weighted_variance_fit(&proxy, i, j, &family)?;
    ledger.record("D3", d3.value, "weighted variance ratio", &res);

    let cb = checkerboard_fit(&proxy, &family)?;
    let (r1, r2) = capped(&cb, r.d1_cap);
    ledger.record("R1", r1, "checkerboard sweep-out fit, capped", &res);
    ledger.record("R2", r2, "checkerboard sweep-out fit, smallest K2 under cap", &res);

    let g = edge_sqrt_fit(&proxy, i, j, &family)?;
    let (g1, g2) = capped(&g, r.d1_cap);
    ledger.record("G1", g1, "per-edge square-root fit, capped", &res);
    ledger.record("G2", g2, "per-edge square-root fit", &res);
    let cm = covariance_moment_bound(&proxy, i, j, &family, &omega, &quad)?;
    ledger.record("m0", cm.m0.value, "covariance ratio", &res);

    let bs = block_sqrt_fit(&proxy, &family)?;
    let asm = minimize_frak_b(ls.c_ls, &bs.combined)?;
    ledger.record("C1", asm.c1, "square-root block fit at the B-minimising C2", &res);
    ledger.record("C2", asm.c2, "square-root block fit, both orientations", &res);
    ledger.record("A", asm.a, "1/(1-C2^2)", "-");
    ledger.record("B", asm.frak_b, "max{cA(C1/C2+C2+C1), cA}", "-");

    let verdict = global_ls_verdict(&proxy, asm.frak_b, &family)?;
    ledger.record("B_empirical", verdict.empirical, "max Ent/Dirichlet on the torus", &res);
    Ok(PipelineOutcome { ledger, ls, sweepout: sw, checkerboard: cb, block_sqrt: bs, assembly: asm, verdict })
}

fn ledger_table(file: &str, ledger: &ConstantLedger) -> Table {
    let mut t = Table::new(file, &["constant", "value", "method", "resolution"]);
    for (name, e) in ledger.iter() {
        t.push(vec![name.clone(), num(e.value), e.method.clone(), e.resolution.clone()]);
    }
    t
}

pub fn run_blockfit(cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    require_exact(Command::Blockfit, engine)?;
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let quad = r.quad();
    let proxy = GibbsProxy::exact(&spec, &quad)?;
    let family = torus_family(&spec, &r.family)?;
    let (i, j) = (0, spec.lattice.neighbors(0)[0]);
    let cb = checkerboard_fit(&proxy, &family)?;
    let bs = block_sqrt_fit(&proxy, &family)?;
    let g = edge_sqrt_fit(&proxy, i, j, &family)?;
    let cm = covariance_moment_bound(&proxy, i, j, &family, &r.omega()?, &quad)?;
    let mut t = Table::new("blockfit.csv", &["kind", "J", "K1", "K2", "slack"]);
    let jv = cfg.model.j;
    frontier_rows(&mut t, "R", jv, &cb);
    frontier_rows(&mut t, "C:G1(G0)", jv, &bs.g1_of_g0);
    frontier_rows(&mut t, "C:G0(G1)", jv, &bs.g0_of_g1);
    frontier_rows(&mut t, "C", jv, &bs.combined);
    frontier_rows(&mut t, "G", jv, &g);
    t.push(vec!["m0".into(), num(jv), num(cm.m0.value), num(cm.m0.value), String::new()]);
    let mut em = Table::new("blockfit_moments.csv", &["omega", "log_exp_moment", "eps_h"]);
    for (w, v) in &cm.exp_moments {
        let w: Vec<String> = w.iter().map(|x| num(*x)).collect();
        em.push(vec![w.join(" "), num(*v), num(cm.eps_h)]);
    }
    let (r1, r2) = capped(&cb, r.d1_cap);
    let c2 = bs.combined.frontier.iter().map(|p| p.1).filter(|k| bs.combined.k1_at(*k).is_finite()).fold(f64::INFINITY, f64::min);
    let (g1, g2) = capped(&g, r.d1_cap);
    let mut messages = Vec::new();
    if cm.divergent {
        messages.push("exponential moment diverges on the grid".into());
    }
    Ok(Outcome {
        pass: r2 < 1.0 && c2 < 1.0,
        tables: vec![t, em],
        headline: vec![
            ("R1".into(), r1),
            ("R2".into(), r2),
            ("C2_min".into(), c2),
            ("G1".into(), g1),
            ("G2".into(), g2),
            ("m0".into(), cm.m0.value),
            ("sqrt_floor".into(), bs.sqrt_floor),
        ],
        messages,
    })
}

/// Functions tracked by `iterate`: a bond product, the linear statistic and
/// seeded random members.
pub fn iterate_functions(spec: &ModelSpec, seed: u64) -> Vec<TestFunction> {
    let sites: Vec<usize> = (0..spec.lattice.n_sites()).collect();
    let j = spec.lattice.neighbors(0)[0];
    let mut out = vec![
        TestFunction::product(0, Basis::Pow(1), j, Basis::Pow(1)),
        TestFunction::sum(&sites, Basis::Pow(1)),
    ];
    out.extend(random_functions(10, &sites, seed));
    out
}

pub fn run_iterate(cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    require_exact(Command::Iterate, engine)?;
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let quad = r.quad();
    let proxy = GibbsProxy::exact(&spec, &quad)?;
    let family = torus_family(&spec, &r.family)?;
    let ls = estimate_ls_sg(&spec, &r.omega()?, &r.family, &quad)?;
    let cb = checkerboard_fit(&proxy, &family)?;
    let (r1, r2) = capped(&cb, r.d1_cap);
    let k = RateConstants { c: ls.c_ls, r1, r2 };
    let mut t = Table::new("iterate.csv", &["function", "n", "residual", "increment", "increment_bound"]);
    let mut tt = Table::new("iterate_telescope.csv", &["function", "level", "block", "term", "c_dirichlet", "within"]);
    let mut fits = Table::new("iterate_fit.csv", &["function", "rate", "r_squared", "monotone", "bound_holds", "telescope_residual"]);
    let mut pass = true;
    let mut worst_rate: f64 = 0.0;
    let mut worst_r2: f64 = 1.0;
    let mut worst_tel: f64 = 0.0;
    for (idx, tf) in iterate_functions(&spec, r.seed).iter().enumerate() {
        let f = tf.materialize(proxy.measure())?;
        let name = format!("f{idx}");
        let conv = convergence_fit(&proxy, &f, r.n_iter, Some(k))?;
        for n in 0..=r.n_iter {
            let inc = conv.increments.get(n).map(|v| num(*v)).unwrap_or_default();
            let b = conv.bound.get(n).map(|v| num(*v)).unwrap_or_default();
            t.push(vec![name.clone(), n.to_string(), num(conv.residuals[n]), inc, b]);
        }
        let tel = entropy_telescope(&proxy, &f, 1, ls.c_ls)?;
        for (l, lv) in tel.levels.iter().enumerate() {
            tt.push(vec![
                name.clone(),
                l.to_string(),
                format!("{:?}", lv.block),
                num(lv.term),
                num(tel.c * lv.dirichlet),
                lv.within.to_string(),
            ]);
        }
        fits.push(vec![
            name,
            num(conv.rate),
            num(conv.r_squared),
            conv.monotone.to_string(),
            conv.bound_holds().to_string(),
            num(tel.residual),
        ]);
        worst_rate = worst_rate.max(conv.rate);
        worst_r2 = worst_r2.min(conv.r_squared);
        worst_tel = worst_tel.max(tel.residual);
        pass &= conv.monotone && conv.r_squared >= 0.99 && conv.rate <= r2 * r2 + 0.05 && tel.residual < 1e-8;
    }
    Ok(Outcome {
        pass,
        tables: vec![t, tt, fits],
        headline: vec![
            ("rate_max".into(), worst_rate),
            ("R2".into(), r2),
            ("r_squared_min".into(), worst_r2),
            ("telescope_residual_max".into(), worst_tel),
        ],
        messages: Vec::new(),
    })
}

pub fn run_pipeline(cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    require_exact(Command::Pipeline, engine)?;
    let spec = cfg.model.build()?;
    let out = pipeline(&spec, &cfg.run)?;
    let mut vt = Table::new("pipeline_verdict.csv", &["function", "entropy", "dirichlet", "slack"]);
    for row in &out.verdict.rows {
        vt.push(vec![row.name.clone(), num(row.entropy), num(row.dirichlet), num(row.slack)]);
    }
    let pass = out.verdict.pass && out.verdict.empirical <= out.assembly.frak_b;
    let headline = ["c", "C", "D1", "D2", "R1", "R2", "C1", "C2", "A", "B", "B_empirical"]
        .iter()
        .filter_map(|n| out.ledger.get(n).map(|e| (n.to_string(), e.value)))
        .collect();
    Ok(Outcome { pass, tables: vec![ledger_table("pipeline.csv", &out.ledger), vt], headline, messages: Vec::new() })
}

/// `B` for the concentration run: constants fitted on the 1-D 4-site torus
/// with the run's model keys, and `c` the larger of the 1-D and actual
/// single-site LS constants.
pub fn concentration_constant(cfg: &RunConfig) -> Result<(f64, ConstantLedger)> {
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let mut ledger = ConstantLedger::new();
    if let Some(b) = r.frak_b {
        ledger.record("B", b, "config override", "-");
        return Ok((b, ledger));
    }
    let chain = spec.with_lattice(LatticeTorus::new(1, 4)?)?;
    let quad = r.quad();
    let proxy = GibbsProxy::exact(&chain, &quad)?;
    let family = torus_family(&chain, &r.family)?;
    let omega = r.omega()?;
    let c_chain = estimate_ls_sg(&chain, &omega, &r.family, &quad)?.c_ls;
    let c_own = if spec.lattice.degree() == chain.lattice.degree() {
        c_chain
    } else {
        estimate_ls_sg(&spec, &omega, &r.family, &quad)?.c_ls
    };
    let c = c_chain.max(c_own);
    let bs = block_sqrt_fit(&proxy, &family)?;
    let asm = minimize_frak_b(c, &bs.combined)?;
    ledger.record("c", c, "max of chain and lattice single-site LS", "-");
    ledger.record("C1", asm.c1, "1-D 4-site torus fit", &proxy.resolution());
    ledger.record("C2", asm.c2, "1-D 4-site torus fit", &proxy.resolution());
    ledger.record("A", asm.a, "1/(1-C2^2)", "-");
    ledger.record("B", asm.frak_b, "max{cA(C1/C2+C2+C1), cA}", "-");
    Ok((asm.frak_b, ledger))
}

pub fn concentration(cfg: &RunConfig, frak_b: f64) -> Result<ConcentrationReport> {
    let spec = cfg.model.build()?;
    let r = &cfg.run;
    let sampler = Sampler::new(&spec, r.quad().site_grid(&spec.phase)?)?;
    concentration_check(&sampler, frak_b, &r.lambda_list, &r.h_list, &r.sampler())
}

pub fn run_concentration(cfg: &RunConfig) -> Result<Outcome> {
    let (b, ledger) = concentration_constant(cfg)?;
    let rep = concentration(cfg, b)?;
    let mut t = Table::new("concentration.csv", &["kind", "parameter", "estimate", "se", "bound", "verdict"]);
    for m in &rep.moments {
        t.push(vec!["moment".into(), num(m.lambda), num(m.estimate.mean), num(m.estimate.se), num(m.bound), flag(m.pass)]);
    }
    for h in &rep.tails {
        t.push(vec!["tail".into(), num(h.h), num(h.estimate.mean), num(h.estimate.se), num(h.bound), flag(h.pass)]);
    }
    t.push(vec!["mean".into(), String::new(), num(rep.mean_f.mean), num(rep.mean_f.se), String::new(), String::new()]);
    let mut tables = vec![t, ledger_table("concentration_constants.csv", &ledger)];
    if cfg.run.trajectory_sweeps > 0 {
        let spec = cfg.model.build()?;
        let sampler = Sampler::new(&spec, cfg.run.quad().site_grid(&spec.phase)?)?;
        let sc = cfg.run.sampler();
        let mut tr = Table::new("concentration_trajectory.csv", &["sweep", "site", "value"]);
        for (k, x) in sampler.trajectory(sc.seed, 0, sc.burn_in, cfg.run.trajectory_sweeps).iter().enumerate() {
            for (site, v) in x.iter().enumerate() {
                tr.push(vec![(sc.burn_in + k + 1).to_string(), site.to_string(), num(*v)]);
            }
        }
        tables.push(tr);
    }
    Ok(Outcome {
        pass: rep.pass,
        tables,
        headline: vec![("B".into(), b), ("r_hat_max".into(), rep.max_r_hat), ("grad_bound".into(), rep.grad_bound)],
        messages: Vec::new(),
    })
}

pub fn execute(cmd: Command, cfg: &RunConfig, engine: Engine) -> Result<Outcome> {
    match cmd {
        Command::CheckHypotheses => run_check_hypotheses(cfg),
        Command::Region => run_region(cfg),
        Command::EstimateLs => run_estimate_ls(cfg),
        Command::Ubound => run_ubound(cfg),
        Command::Sweepout => run_sweepout(cfg, engine),
        Command::Blockfit => run_blockfit(cfg, engine),
        Command::Iterate => run_iterate(cfg, engine),
        Command::Pipeline => run_pipeline(cfg, engine),
        Command::Concentration => run_concentration(cfg),
    }
}

/// Writes every table with a timestamp comment line and appends the verdict
/// and headline constants to `summary.csv`.
pub fn write_outcome(dir: &Path, cmd: Command, outcome: &Outcome) -> Result<()> {
    let io = |e: std::io::Error| Error::Io(format!("{}: {e}", dir.display()));
    fs::create_dir_all(dir).map_err(io)?;
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    for t in &outcome.tables {
        let text = format!("# lsi-bench {} unix_time={stamp}\n{}", cmd.name(), t.body()?);
        fs::write(dir.join(&t.file), text).map_err(io)?;
    }
    let path = dir.join("summary.csv");
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
    let mut s = Table::new("summary.csv", &["subcommand", "verdict", "name", "value"]);
    for (n, v) in &outcome.headline {
        s.push(vec![cmd.name().into(), flag(outcome.pass), n.clone(), num(*v)]);
    }
    if outcome.headline.is_empty() {
        s.push(vec![cmd.name().into(), flag(outcome.pass), String::new(), String::new()]);
    }
    let body = s.body()?;
    let body = if fresh { body.as_str() } else { body.split_once('\n').map(|x| x.1).unwrap_or("") };
    f.write_all(body.as_bytes()).map_err(io)?;
    Ok(())
}

/// Exit code for an error: 2 for configuration and feasibility problems,
/// 1 for failed or undecidable verdicts.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Io(_)
        | Error::Infeasible(_)
        | Error::DimensionMismatch { .. }
        | Error::OutOfRange { .. }
        | Error::ModelRejected(_) => 2,
        _ => 1,
    }
}

/// Parses arguments, runs, writes reports; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(&cli) {
        Ok(pass) => i32::from(!pass),
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn run_cli(cli: &Cli) -> Result<bool> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig { model: ModelConfig::default(), run: RunSettings::default() },
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(e) = &cli.engine {
        cfg.run.engine = e.clone();
    }
    cfg.run.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let engine: Engine = cfg.run.engine.parse()?;
    let out = cli.out.clone().or_else(|| cfg.run.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let outcome = execute(cli.command, &cfg, engine)?;
    write_outcome(&out, cli.command, &outcome)?;
    for m in &outcome.messages {
        println!("{m}");
    }
    for (n, v) in &outcome.headline {
        println!("{n} = {v:e}");
    }
    println!("{}: {}", cli.command.name(), flag(outcome.pass));
    Ok(outcome.pass)
}
