//! Acceptance run: one PASS/FAIL line per criterion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use lsi_core::cli::iterate_functions;
use lsi_core::dynamics::{convergence_fit, entropy_telescope, RateConstants, Sampler, SamplerConfig};
use lsi_core::functionals::{random_functions, Family};
use lsi_core::inequalities::{
    estimate_ls_sg, ls_sg_ratios, checkerboard_fit, sweepout_fit, ubound_constant, ubound_ratio,
};
use lsi_core::measures::{dlr_check, ConditionalMeasure, GibbsProxy};
use lsi_core::model::{check_hypotheses, HypothesisScan, LatticeTorus, ModelConfig, ModelSpec, OmegaGrid, Phase};
use lsi_core::quadrature::{choose_truncation, Grid1D, QuadConfig};
use lsi_core::Error;
use nalgebra::{DMatrix, SymmetricEigen};

struct Line {
    pass: bool,
    detail: String,
}

fn line(pass: bool, detail: impl Into<String>) -> Line {
    Line { pass, detail: detail.into() }
}

fn default_spec() -> ModelSpec {
    ModelConfig::from_toml("").unwrap().build().unwrap()
}

fn quad_with_budget(budget: usize) -> QuadConfig {
    QuadConfig { state_budget: budget, ..QuadConfig::default() }
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_lsi-bench")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run_cli(args: &[&str], config: Option<&str>, out: &Path) -> i32 {
    let mut cmd = Command::new(bin());
    cmd.args(args).arg("--out").arg(out);
    if let Some(text) = config {
        let path = out.join("config.toml");
        fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.output().map(|o| o.status.code().unwrap_or(-1)).unwrap_or(-1)
}

/// CSV body without the leading comment line.
fn body(path: &Path) -> String {
    let text = fs::read_to_string(path).unwrap_or_default();
    text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path).unwrap();
    rdr.records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

fn c1_hypotheses() -> Line {
    let t = Instant::now();
    let spec = default_spec();
    let scan = HypothesisScan::uniform(6.0, 600, 3.0, 13).unwrap();
    let rep = check_hypotheses(&spec, &scan).unwrap();
    let margins: Vec<String> = rep.results.iter().map(|h| format!("{}={:.3e}", h.name, h.margin)).collect();
    let bad = ModelConfig::from_toml("s = 4").unwrap().build().unwrap();
    let failing: Vec<String> = check_hypotheses(&bad, &scan).unwrap().failures().iter().map(|h| h.name.clone()).collect();
    let secs = t.elapsed().as_secs_f64();
    // the lettered checks are the components of H1.5
    let only_h15 = !failing.is_empty() && failing.iter().all(|n| n.starts_with("H1.5"));
    let pass = rep.all_pass() && only_h15 && secs < 10.0;
    line(pass, format!("all pass={} margins [{}]; s=p fails {:?}; {secs:.1}s", rep.all_pass(), margins.join(" "), failing))
}

fn c2_gaussian() -> Line {
    let t = Instant::now();
    let base = default_spec();
    let spec = ModelSpec::new(Phase::gaussian(), base.interaction, base.coupling.clone(), base.lattice.clone())
        .unwrap()
        .with_coupling(0.0)
        .unwrap();
    let omega = OmegaGrid::uniform(3.0, 13).unwrap();
    let rep = estimate_ls_sg(&spec, &omega, "exponential", &QuadConfig::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let pass = (0.9..=1.0).contains(&rep.c_sg) && (1.8..=2.0).contains(&rep.c_ls) && secs < 30.0;
    line(pass, format!("c_SG={:.4} c_LS={:.4} (targets 1, 2); {secs:.1}s", rep.c_sg, rep.c_ls))
}

fn c3_product() -> Line {
    let spec = default_spec().with_coupling(0.5).unwrap().with_lattice(LatticeTorus::new(1, 8).unwrap()).unwrap();
    let grid = QuadConfig::default().site_grid(&spec.phase).unwrap();
    let boundary = [0.0, 0.5, 0.0, 2.0, 0.0, 2.5, 0.0, -0.5];
    let single = |site: usize| {
        let mu = ConditionalMeasure::build(&spec, &[site], &boundary, grid.clone()).unwrap();
        ls_sg_ratios(&mu, &Family::single_site("default", site).unwrap().functions).unwrap().0
    };
    let (a, b) = (single(0), single(4));
    let mu = ConditionalMeasure::build(&spec, &[0, 4], &boundary, grid.clone()).unwrap();
    let fam = Family::build("default", &[0, 4], &spec.lattice).unwrap();
    let prod = ls_sg_ratios(&mu, &fam.functions).unwrap().0;
    let rel = (prod - a.max(b)).abs() / a.max(b);
    line(rel <= 0.05, format!("singles {a:.4} {b:.4}, product {prod:.4}, rel diff {rel:.2e}"))
}

fn c4_dlr() -> Line {
    let spec = default_spec().with_lattice(LatticeTorus::new(1, 2).unwrap()).unwrap();
    let grid = Grid1D::with_nodes(choose_truncation(&spec.phase, 1e-14).unwrap(), 48).unwrap();
    let mut worst: f64 = 0.0;
    for (k, f) in random_functions(10, &[0, 1], 11).iter().enumerate() {
        let block: &[usize] = if k % 2 == 0 { &[0] } else { &[1] };
        worst = worst.max(dlr_check(&spec, &[0, 1], block, &[0.0, 0.0], f, grid.clone()).unwrap());
    }
    line(worst < 1e-8, format!("max residual {worst:.2e}"))
}

/// Largest `mu(|x|^r f^2) / (mu f'^2 + mu f^2)` over piecewise-linear `f`:
/// a generalized symmetric eigenproblem on a uniform cell grid.
fn ubound_eigen_oracle(spec: &ModelSpec, neighbors: &[f64], r: f64, l: f64, n: usize) -> f64 {
    let h = 2.0 * l / n as f64;
    let x: Vec<f64> = (0..=n).map(|k| -l + k as f64 * h).collect();
    let dens: Vec<f64> = x.iter().map(|&v| (-spec.site_energy(0, v, neighbors)).exp()).collect();
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    let mut b = DMatrix::<f64>::zeros(n + 1, n + 1);
    for k in 0..=n {
        let w = if k == 0 || k == n { 0.5 * h } else { h };
        a[(k, k)] = x[k].abs().powf(r) * dens[k] * w;
        b[(k, k)] += dens[k] * w;
    }
    for k in 0..n {
        let mid = (-spec.site_energy(0, 0.5 * (x[k] + x[k + 1]), neighbors)).exp() / h;
        b[(k, k)] += mid;
        b[(k + 1, k + 1)] += mid;
        b[(k, k + 1)] -= mid;
        b[(k + 1, k)] -= mid;
    }
    let chol = b.cholesky().unwrap();
    let linv = chol.l().try_inverse().unwrap();
    let m = &linv * a * linv.transpose();
    let m = (&m + m.transpose()) * 0.5;
    SymmetricEigen::new(m).eigenvalues.max()
}

fn c5_ubound() -> Line {
    let spec = default_spec();
    let quad = QuadConfig::default();
    let omega = OmegaGrid::uniform(3.0, 13).unwrap();
    let fine = omega.refined();
    let mut fitted = Vec::new();
    let mut stable = true;
    for r in [1.0, 2.0, 4.0] {
        let c = ubound_constant(&spec, r, &omega, "default", &quad).unwrap().c;
        let cf = ubound_constant(&spec, r, &fine, "default", &quad).unwrap().c;
        stable &= c.is_finite() && (cf - c).abs() <= 0.15 * c;
        fitted.push(c);
    }
    let finite = fitted.iter().all(|c| c.is_finite());
    let monotone = fitted.windows(2).all(|w| w[1] >= w[0]);
    let rejected = matches!(ubound_constant(&spec, 7.0, &omega, "default", &quad), Err(Error::OutOfRange { .. }));
    // best constants at the untilted boundary, from the oracle and from the family
    let grid = quad.site_grid(&spec.phase).unwrap();
    let mu0 = ConditionalMeasure::single_site(&spec, 0, &[0.0, 0.0], grid.clone()).unwrap();
    let fam = Family::single_site("default", 0).unwrap();
    let mut at0 = Vec::new();
    for r in [1.0, 2.0, 4.0] {
        let est = ubound_ratio(&mu0, r, &fam.functions).unwrap();
        let oracle = ubound_eigen_oracle(&spec, &[0.0, 0.0], r, grid.l_trunc(), 600);
        at0.push(format!("r={r}: family {est:.3} oracle {oracle:.3}"));
    }
    line(
        finite && monotone && stable && rejected,
        format!(
            "C(r=1,2,4)={:.3} {:.3} {:.3}; finite={finite} nondecreasing={monotone} stable={stable} r=7 rejected={rejected}; omega=0 [{}]",
            fitted[0],
            fitted[1],
            fitted[2],
            at0.join(", ")
        ),
    )
}

fn c6_sweepout() -> Line {
    let base = default_spec();
    let quad = quad_with_budget(1 << 16);
    let family = Family::build("default", &(0..4).collect::<Vec<_>>(), &base.lattice).unwrap();
    let mut d2s = Vec::new();
    let mut zero_point = false;
    for j in [0.0, 0.02, 0.05, 0.1] {
        let spec = base.with_coupling(j).unwrap();
        let proxy = GibbsProxy::exact(&spec, &quad).unwrap();
        let fit = sweepout_fit(&proxy, 0, 1, &family).unwrap();
        if j == 0.0 {
            zero_point = fit.frontier.iter().any(|&(k1, k2)| k2 == 0.0 && k1 <= 1.0 + 1e-9);
        }
        d2s.push(fit.min_k2(1.0));
    }
    let monotone = d2s.windows(2).all(|w| w[1] >= w[0]);
    let pass = zero_point && monotone && d2s[2] < 1.0;
    line(pass, format!("(1+tol,0) on J=0 frontier={zero_point}; D2 {:.2e} {:.2e} {:.2e} {:.2e}", d2s[0], d2s[1], d2s[2], d2s[3]))
}

fn c7_telescope() -> Line {
    let quad = quad_with_budget(1 << 16);
    let mut worst: f64 = 0.0;
    for side in [2, 4] {
        for j in [0.0, 0.05, 0.3] {
            let spec = default_spec().with_lattice(LatticeTorus::new(1, side).unwrap()).unwrap().with_coupling(j).unwrap();
            let proxy = GibbsProxy::exact(&spec, &quad).unwrap();
            let sites: Vec<usize> = (0..side).collect();
            for tf in random_functions(10, &sites, 7 + side as u64) {
                let f = tf.materialize(proxy.measure()).unwrap();
                let rep = entropy_telescope(&proxy, &f, 2, 1.0).unwrap();
                worst = worst.max(rep.residual);
            }
        }
    }
    line(worst < 1e-8, format!("max additivity residual {worst:.2e} over sides 2,4 and J 0,0.05,0.3"))
}

fn c8_convergence() -> Line {
    let spec = default_spec();
    let quad = QuadConfig::default();
    let proxy = GibbsProxy::exact(&spec, &quad).unwrap();
    let family = Family::build("default", &(0..4).collect::<Vec<_>>(), &spec.lattice).unwrap();
    let fit = checkerboard_fit(&proxy, &family).unwrap();
    let r2 = fit.min_k2(1.0);
    let k = RateConstants { c: 1.0, r1: fit.k1_at(r2).min(1.0), r2 };
    let mut worst_rate: f64 = 0.0;
    let mut worst_r2: f64 = 1.0;
    for tf in iterate_functions(&spec, 0) {
        let f = tf.materialize(proxy.measure()).unwrap();
        let conv = convergence_fit(&proxy, &f, 6, Some(k)).unwrap();
        worst_rate = worst_rate.max(conv.rate);
        worst_r2 = worst_r2.min(conv.r_squared);
    }
    let pass = worst_r2 >= 0.99 && worst_rate <= r2 * r2 + 0.05;
    line(pass, format!("min R^2 {worst_r2:.4}; max rate {worst_rate:.2e} vs R2^2+0.05 = {:.4}", r2 * r2 + 0.05))
}

fn c9_pipeline(frak_b: &mut Option<f64>) -> Line {
    let out = scratch("pipeline");
    let t = Instant::now();
    let code = run_cli(&["pipeline"], None, &out);
    let secs = t.elapsed().as_secs_f64();
    if code != 0 {
        return line(false, format!("exit code {code}"));
    }
    let consts: std::collections::BTreeMap<String, f64> =
        rows(&out.join("pipeline.csv")).into_iter().map(|r| (r[0].clone(), r[1].parse().unwrap())).collect();
    let (c, c1, c2) = (consts["c"], consts["C1"], consts["C2"]);
    let a = 1.0 / (1.0 - c2 * c2);
    let b = (c * a * (c1 / c2 + c2 + c1)).max(c * a);
    let arith = (a - consts["A"]).abs() <= 1e-12 * a && (b - consts["B"]).abs() <= 1e-12 * b;
    let verdict = rows(&out.join("pipeline_verdict.csv"));
    let slack_col = {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(out.join("pipeline_verdict.csv")).unwrap();
        rdr.headers().unwrap().iter().position(|h| h == "slack").unwrap()
    };
    let min_slack = verdict.iter().map(|r| r[slack_col].parse::<f64>().unwrap()).fold(f64::INFINITY, f64::min);
    let empirical = consts["B_empirical"];
    *frak_b = Some(consts["B"]);
    let pass = arith && min_slack >= 0.0 && empirical <= consts["B"] && secs < 300.0;
    line(
        pass,
        format!(
            "A={:.4} B={:.4} (recomputed match={arith}); min slack {min_slack:.3e} over {} rows; empirical {empirical:.4}; {secs:.0}s",
            consts["A"],
            consts["B"],
            verdict.len()
        ),
    )
}

fn concentration_config(frak_b: f64, sweeps: usize) -> String {
    format!("dim = 2\nside = 4\n[run]\nchains = 10\nsweeps = {sweeps}\nburn_in = 1000\nfrak_b = {frak_b:e}\n")
}

fn c10_concentration(frak_b: Option<f64>) -> Line {
    let Some(b) = frak_b else {
        return line(false, "no B from the pipeline");
    };
    let out = scratch("concentration");
    let code = run_cli(&["concentration", "--engine", "mcmc"], Some(&concentration_config(b, 10_000)), &out);
    if code != 0 {
        return line(false, format!("exit code {code}"));
    }
    let table = rows(&out.join("concentration.csv"));
    let checked: Vec<&Vec<String>> = table.iter().filter(|r| r[0] == "moment" || r[0] == "tail").collect();
    let mut worst = f64::INFINITY;
    for r in &checked {
        let (est, se, bound): (f64, f64, f64) = (r[2].parse().unwrap(), r[3].parse().unwrap(), r[4].parse().unwrap());
        worst = worst.min(bound + 2.0 * se - est);
    }
    let pass = checked.len() == 6 && worst >= 0.0;
    line(pass, format!("4x4 torus, 10 chains x 1e4 sweeps, B={b:.4}; {} checks, min margin {worst:.3e}", checked.len()))
}

fn c11_determinism(frak_b: Option<f64>) -> Line {
    let b = frak_b.unwrap_or(3.0);
    let cfg = concentration_config(b, 400);
    let mut same = true;
    let mut compared = 0;
    for (args, file) in [
        (vec!["concentration", "--engine", "mcmc", "--seed", "5"], "concentration.csv"),
        (vec!["estimate-ls"], "estimate-ls.csv"),
        (vec!["ubound"], "ubound.csv"),
    ] {
        let (a, b2) = (scratch("det_a"), scratch("det_b"));
        // verdicts may fail; only the exit codes and bodies must repeat
        let (ca, cb) = (run_cli(&args, Some(&cfg), &a), run_cli(&args, Some(&cfg), &b2));
        let (ba, bb) = (body(&a.join(file)), body(&b2.join(file)));
        same &= ca == cb && ca != 2 && !ba.is_empty() && ba == bb;
        compared += 1;
    }
    line(same, format!("{compared} subcommands run twice, CSV bodies identical={same}"))
}

fn c12_sampler() -> Line {
    let spec = default_spec().with_lattice(LatticeTorus::new(1, 2).unwrap()).unwrap();
    let grid = QuadConfig::default().site_grid(&spec.phase).unwrap();
    let mu = ConditionalMeasure::torus(&spec, grid.clone()).unwrap();
    let obs: Vec<(&str, fn(&[f64]) -> f64)> = vec![
        ("x0", |x| x[0]),
        ("x1", |x| x[1]),
        ("x0^2", |x| x[0] * x[0]),
        ("x1^2", |x| x[1] * x[1]),
        ("x0 x1", |x| x[0] * x[1]),
        ("|x0|^3", |x| x[0].abs().powi(3)),
        ("x0^4", |x| x[0].powi(4)),
        ("cos x1", |x| x[1].cos()),
        ("1{x0>0.5}", |x| f64::from(u8::from(x[0] > 0.5))),
        ("exp(x0+x1)/4", |x| ((x[0] + x[1]) / 4.0).exp()),
    ];
    let sampler = Sampler::new(&spec, grid).unwrap();
    let cfg = SamplerConfig { chains: 8, sweeps: 20_000, burn_in: 500, seed: 3, batches: 20 };
    let traces = sampler
        .run(&cfg, obs.len(), |x, o| {
            for (k, (_, g)) in obs.iter().enumerate() {
                o[k] = g(x);
            }
        })
        .unwrap();
    let mut worst: f64 = 0.0;
    for (k, (_, g)) in obs.iter().enumerate() {
        let exact = mu.expect_fn(|x| g(x)).unwrap();
        let est = traces.estimate(k);
        worst = worst.max((est.mean - exact).abs() / est.se);
    }
    line(worst <= 3.0, format!("{} observables, max |mc - exact| / SE = {worst:.2}", obs.len()))
}

fn main() {
    let mut frak_b = None;
    let results = vec![
        ("1 hypothesis suite", c1_hypotheses()),
        ("2 gaussian calibration", c2_gaussian()),
        ("3 product property", c3_product()),
        ("4 DLR consistency", c4_dlr()),
        ("5 U-bound", c5_ubound()),
        ("6 sweeping-out", c6_sweepout()),
        ("7 entropy telescope", c7_telescope()),
        ("8 convergence", c8_convergence()),
        ("9 end-to-end pipeline", c9_pipeline(&mut frak_b)),
        ("10 concentration", c10_concentration(frak_b)),
        ("11 determinism", c11_determinism(frak_b)),
        ("12 sampler validation", c12_sampler()),
    ];
    let mut failed = 0;
    for (name, l) in &results {
        println!("{} criterion {name}: {}", if l.pass { "PASS" } else { "FAIL" }, l.detail);
        failed += usize::from(!l.pass);
    }
    println!("{} of {} criteria pass", results.len() - failed, results.len());
}
