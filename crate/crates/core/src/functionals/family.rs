//! Built-in test functions: single-site bases, neighbour products and sums.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GridFunction;
use crate::error::{Error, Result};
use crate::measures::ConditionalMeasure;
use crate::model::LatticeTorus;

pub const FAMILY_NAMES: [&str; 4] = ["default", "polynomial", "exponential", "bump"];

/// One-variable building block with an analytic derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    One,
    Pow(i32),
    /// `x^k exp(-beta x^2)`
    GaussPoly { k: i32, beta: f64 },
    /// `1 + a x^2`
    Quad(f64),
    /// `1 + x`
    Affine,
    /// `sqrt(1 + x^2)`
    Sqrt1p,
    /// `exp(lambda x)`
    Exp(f64),
    /// `exp(-(x - c)^2 / (2 w^2))`
    Bump { center: f64, width: f64 },
    Cos(f64),
    Sin(f64),
}

impl Basis {
    /// `(b(x), b'(x))`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        match *self {
            Basis::One => (1.0, 0.0),
            Basis::Pow(k) => {
                if k == 0 {
                    (1.0, 0.0)
                } else {
                    (x.powi(k), k as f64 * x.powi(k - 1))
                }
            }
            Basis::GaussPoly { k, beta } => {
                let g = (-beta * x * x).exp();
                let xk = x.powi(k);
                let dxk = if k == 0 { 0.0 } else { k as f64 * x.powi(k - 1) };
                (xk * g, (dxk - 2.0 * beta * x * xk) * g)
            }
            Basis::Quad(a) => (1.0 + a * x * x, 2.0 * a * x),
            Basis::Affine => (1.0 + x, 1.0),
            Basis::Sqrt1p => {
                let r = (1.0 + x * x).sqrt();
                (r, x / r)
            }
            Basis::Exp(l) => {
                let e = (l * x).exp();
                (e, l * e)
            }
            Basis::Bump { center, width } => {
                let z = (x - center) / width;
                let e = (-0.5 * z * z).exp();
                (e, -z / width * e)
            }
            Basis::Cos(w) => ((w * x).cos(), -w * (w * x).sin()),
            Basis::Sin(w) => ((w * x).sin(), w * (w * x).cos()),
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Basis::One => "1".into(),
            Basis::Pow(k) => format!("x^{k}"),
            Basis::GaussPoly { k, beta } => format!("x^{k}e^(-{beta}x^2)"),
            Basis::Quad(a) => format!("1+{a}x^2"),
            Basis::Affine => "1+x".into(),
            Basis::Sqrt1p => "sqrt(1+x^2)".into(),
            Basis::Exp(l) => format!("e^({l}x)"),
            Basis::Bump { center, width } => format!("bump({center},{width})"),
            Basis::Cos(w) => format!("cos({w}x)"),
            Basis::Sin(w) => format!("sin({w}x)"),
        }
    }
}

/// Single-site bases of a registered family.
pub fn registry_basis(name: &str) -> Result<Vec<Basis>> {
    let polynomial = || {
        let mut v: Vec<Basis> = (1..=4).map(Basis::Pow).collect();
        v.extend((0..=3).map(|k| Basis::GaussPoly { k, beta: 0.5 }));
        v.extend([Basis::Quad(0.5), Basis::Affine, Basis::Sqrt1p]);
        v
    };
    let exponential =
        || [0.25, -0.25, 0.5, -0.5, 1.0, -1.0].into_iter().map(Basis::Exp).collect::<Vec<_>>();
    let bump = || {
        [-1.5, -0.75, 0.0, 0.75, 1.5]
            .into_iter()
            .map(|center| Basis::Bump { center, width: 0.5 })
            .collect::<Vec<_>>()
    };
    Ok(match name {
        "polynomial" => polynomial(),
        "exponential" => exponential(),
        "bump" => bump(),
        "default" => {
            let mut v = polynomial();
            v.extend(exponential());
            v.extend(bump());
            v.extend([Basis::Cos(1.0), Basis::Sin(1.0)]);
            v
        }
        other => {
            return Err(Error::Config(format!(
                "unknown test family {other:?}; known: {}",
                FAMILY_NAMES.join(", ")
            )))
        }
    })
}

const PAIR_BASIS: [Basis; 4] = [Basis::Pow(1), Basis::Pow(2), Basis::Exp(0.5), Basis::Exp(-1.0)];

#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coef: f64,
    pub factors: Vec<(usize, Basis)>,
}

/// `sum_terms coef * prod_factors b(x_site)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TestFunction {
    pub name: String,
    pub terms: Vec<Term>,
}

impl TestFunction {
    pub fn constant(c: f64) -> Self {
        Self { name: format!("const({c})"), terms: vec![Term { coef: c, factors: vec![] }] }
    }

    pub fn single(site: usize, b: Basis) -> Self {
        Self {
            name: format!("{}@{site}", b.name()),
            terms: vec![Term { coef: 1.0, factors: vec![(site, b)] }],
        }
    }

    pub fn product(a_site: usize, a: Basis, b_site: usize, b: Basis) -> Self {
        Self {
            name: format!("{}@{a_site}*{}@{b_site}", a.name(), b.name()),
            terms: vec![Term { coef: 1.0, factors: vec![(a_site, a), (b_site, b)] }],
        }
    }

    /// `sum_i b(x_i)` over the given sites.
    pub fn sum(sites: &[usize], b: Basis) -> Self {
        Self {
            name: format!("sum {}", b.name()),
            terms: sites.iter().map(|&s| Term { coef: 1.0, factors: vec![(s, b)] }).collect(),
        }
    }

    pub fn support(&self) -> BTreeSet<usize> {
        self.terms.iter().flat_map(|t| t.factors.iter().map(|f| f.0)).collect()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.factors.iter().all(|f| f.1 == Basis::One || f.1 == Basis::Pow(0)))
    }

    /// Value at a configuration given as a site lookup.
    pub fn eval(&self, x: impl Fn(usize) -> f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.coef * t.factors.iter().map(|(s, b)| b.eval(x(*s)).0).product::<f64>())
            .sum()
    }

    /// Values and analytic gradients on every state of `mu`.
    pub fn materialize(&self, mu: &ConditionalMeasure) -> Result<GridFunction> {
        let n_pos = mu.sites().len();
        let states = mu.n_states();
        let nodes = mu.grid().nodes();
        let mut values = vec![0.0; states];
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_pos];
        for term in &self.terms {
            // per-position (value, derivative) tables, merging repeated sites
            let mut tables: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for &(site, b) in &term.factors {
                let pos = mu.position(site).ok_or_else(|| {
                    Error::Config(format!("test function {} uses site {site} outside the grid", self.name))
                })?;
                let (v, d): (Vec<f64>, Vec<f64>) = nodes.iter().map(|&x| b.eval(x)).unzip();
                match tables.get_mut(&pos) {
                    None => {
                        tables.insert(pos, (v, d));
                    }
                    Some((v0, d0)) => {
                        for k in 0..nodes.len() {
                            let (a, da) = (v0[k], d0[k]);
                            v0[k] = a * v[k];
                            d0[k] = da * v[k] + a * d[k];
                        }
                    }
                }
            }
            let c = term.coef;
            let cols: Vec<(usize, &[u16], &[f64], &[f64])> = tables
                .iter()
                .map(|(&pos, (v, d))| (pos, mu.digit_column(pos), v.as_slice(), d.as_slice()))
                .collect();
            if cols.is_empty() {
                values.iter_mut().for_each(|v| *v += c);
                continue;
            }
            for (q, &(pos, col, _, d)) in cols.iter().enumerate() {
                if d.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let g = grads[pos].get_or_insert_with(|| vec![0.0; states]);
                for (idx, gi) in g.iter_mut().enumerate() {
                    let mut acc = c * d[col[idx] as usize];
                    for (r, &(_, col2, v2, _)) in cols.iter().enumerate() {
                        if r != q {
                            acc *= v2[col2[idx] as usize];
                        }
                    }
                    *gi += acc;
                }
            }
            for (idx, vi) in values.iter_mut().enumerate() {
                let mut prod = c;
                for &(_, col, v, _) in &cols {
                    prod *= v[col[idx] as usize];
                }
                *vi += prod;
            }
        }
        let mut f = GridFunction::new(self.name.clone(), values, n_pos);
        for (pos, g) in grads.into_iter().enumerate() {
            f = match g {
                Some(g) => f.with_grad(pos, g)?,
                None => f.with_zero_grad(pos)?,
            };
        }
        if let Some(idx) = f.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { value: f.values()[idx], coords: mu.coords(idx) });
        }
        Ok(f)
    }
}

/// Test functions over a site set: every basis on every site, products of a
/// small basis across neighbouring pairs, and sums over the set.
#[derive(Debug, Clone, PartialEq)]
pub struct Family {
    pub name: String,
    pub functions: Vec<TestFunction>,
}

impl Family {
    pub fn build(name: &str, sites: &[usize], lattice: &LatticeTorus) -> Result<Self> {
        let basis = registry_basis(name)?;
        let mut functions = Vec::new();
        for &s in sites {
            for &b in &basis {
                functions.push(TestFunction::single(s, b));
            }
        }
        let mut pairs = BTreeSet::new();
        for (ia, &a) in sites.iter().enumerate() {
            for &b in &sites[ia + 1..] {
                if lattice.are_neighbors(a, b) {
                    pairs.insert((a.min(b), a.max(b)));
                }
            }
        }
        let pair_basis: Vec<Basis> = if name == "default" {
            PAIR_BASIS.to_vec()
        } else {
            basis.iter().take(4).copied().collect()
        };
        for &(a, b) in &pairs {
            for &ba in &pair_basis {
                for &bb in &pair_basis {
                    functions.push(TestFunction::product(a, ba, b, bb));
                }
            }
        }
        if sites.len() > 1 {
            for &b in &basis {
                functions.push(TestFunction::sum(sites, b));
            }
        }
        Ok(Self { name: name.to_string(), functions })
    }

    /// Single-site functions on one site only.
    pub fn single_site(name: &str, site: usize) -> Result<Self> {
        Ok(Self {
            name: name.to_string(),
            functions: registry_basis(name)?.into_iter().map(|b| TestFunction::single(site, b)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn check_nondegenerate(&self) -> Result<()> {
        if self.functions.iter().all(|f| f.is_constant()) {
            return Err(Error::Degenerate(format!("family {} contains only constants", self.name)));
        }
        Ok(())
    }
}

/// Seeded random test functions on `sites`: a positive offset plus three
/// random products of one or two default-basis factors.
pub fn random_functions(n: usize, sites: &[usize], seed: u64) -> Vec<TestFunction> {
    let basis = registry_basis("default").expect("default family exists");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let mut terms = vec![Term { coef: rng.random_range(0.5..1.5), factors: vec![] }];
            for _ in 0..3 {
                let n_fac = rng.random_range(1..=2.min(sites.len()));
                let mut factors = Vec::new();
                for _ in 0..n_fac {
                    let s = sites[rng.random_range(0..sites.len())];
                    factors.push((s, basis[rng.random_range(0..basis.len())]));
                }
                terms.push(Term { coef: rng.random_range(-1.0..1.0), factors });
            }
            TestFunction { name: format!("random{k}"), terms }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_derivatives_match_finite_differences() {
        for b in registry_basis("default").unwrap() {
            for &x in &[-1.7, -0.3, 0.4, 1.9] {
                let h = 1e-6;
                let fd = (b.eval(x + h).0 - b.eval(x - h).0) / (2.0 * h);
                let an = b.eval(x).1;
                assert!((fd - an).abs() < 1e-5 * (1.0 + an.abs()), "{}: {fd} vs {an}", b.name());
            }
        }
    }

    #[test]
    fn registry_sizes() {
        assert_eq!(registry_basis("default").unwrap().len(), 24);
        assert!(registry_basis("nope").is_err());
        let lat = LatticeTorus::new(1, 4).unwrap();
        let fam = Family::build("default", &[0, 1, 2, 3], &lat).unwrap();
        assert_eq!(fam.len(), 4 * 24 + 4 * 16 + 24);
        assert!(Family { name: "c".into(), functions: vec![TestFunction::constant(2.0)] }
            .check_nondegenerate()
            .is_err());
    }

    #[test]
    fn random_functions_are_reproducible() {
        let a = random_functions(5, &[0, 1], 7);
        let b = random_functions(5, &[0, 1], 7);
        assert_eq!(a, b);
        assert_ne!(a, random_functions(5, &[0, 1], 8));
    }
}
