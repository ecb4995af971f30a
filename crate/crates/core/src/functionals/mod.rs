//! Entropy, Dirichlet forms, covariances and the ledger of measured constants.

mod family;

pub use family::{
    random_functions, registry_basis, Basis, Family, Term, TestFunction, FAMILY_NAMES,
};

use std::borrow::Cow;
use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::quadrature::pairwise_sum;

/// Anything that assigns probabilities to a finite list of states.
pub trait Weighted {
    fn probs(&self) -> &[f64];

    fn n_states(&self) -> usize {
        self.probs().len()
    }
}

/// Probability vector on explicit atoms, used for brute-force checks.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    probs: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: &[f64]) -> Result<Self> {
        if weights.is_empty() || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Degenerate("atom weights must be finite and nonnegative".into()));
        }
        let total = pairwise_sum(weights);
        if total <= 0.0 {
            return Err(Error::Degenerate("atom weights sum to zero".into()));
        }
        Ok(Self { probs: weights.iter().map(|w| w / total).collect() })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(&vec![1.0; n])
    }
}

impl Weighted for DiscreteMeasure {
    fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Gradient of a grid function along one position.
#[derive(Debug, Clone, PartialEq)]
enum Grad {
    Missing,
    Zero,
    Dense(Vec<f64>),
}

impl Grad {
    fn map(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        match self {
            Self::Dense(g) => Self::Dense(f(g)),
            other => other.clone(),
        }
    }
}

/// Values of a function on the states of a measure, with optional gradients
/// indexed by the measure's site positions.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub name: String,
    values: Vec<f64>,
    grads: Vec<Grad>,
}

impl GridFunction {
    /// Values only; `positions` is the number of coordinates of the grid.
    pub fn new(name: impl Into<String>, values: Vec<f64>, positions: usize) -> Self {
        Self { name: name.into(), values, grads: vec![Grad::Missing; positions] }
    }

    pub fn constant(value: f64, states: usize, positions: usize) -> Self {
        Self { name: format!("const({value})"), values: vec![value; states], grads: vec![Grad::Zero; positions] }
    }

    pub fn with_grad(self, pos: usize, grad: Vec<f64>) -> Result<Self> {
        if grad.len() != self.values.len() {
            return Err(Error::DimensionMismatch { expected: self.values.len(), got: grad.len() });
        }
        self.set(pos, Grad::Dense(grad))
    }

    /// Marks the gradient along `pos` as identically zero.
    pub fn with_zero_grad(self, pos: usize) -> Result<Self> {
        self.set(pos, Grad::Zero)
    }

    fn set(mut self, pos: usize, g: Grad) -> Result<Self> {
        if pos >= self.grads.len() {
            return Err(Error::DimensionMismatch { expected: self.grads.len(), got: pos + 1 });
        }
        self.grads[pos] = g;
        Ok(self)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn positions(&self) -> usize {
        self.grads.len()
    }

    /// Gradient along `pos`, expanded to one value per state.
    pub fn grad(&self, pos: usize) -> Result<Cow<'_, [f64]>> {
        Ok(match self.grad_sparse(pos)? {
            Some(g) => Cow::Borrowed(g),
            None => Cow::Owned(vec![0.0; self.values.len()]),
        })
    }

    /// Gradient along `pos`; `None` when it is identically zero.
    pub fn grad_sparse(&self, pos: usize) -> Result<Option<&[f64]>> {
        match self.grads.get(pos) {
            Some(Grad::Dense(g)) => Ok(Some(g)),
            Some(Grad::Zero) => Ok(None),
            _ => Err(Error::MissingGradient(pos)),
        }
    }

    pub fn has_grad(&self, pos: usize) -> bool {
        matches!(self.grads.get(pos), Some(Grad::Zero | Grad::Dense(_)))
    }

    /// Positions whose gradient is present and not identically zero.
    pub fn support(&self) -> Vec<usize> {
        (0..self.grads.len())
            .filter(|&p| matches!(&self.grads[p], Grad::Dense(g) if g.iter().any(|v| *v != 0.0)))
            .collect()
    }

    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            name: format!("{}*{lambda}", self.name),
            values: self.values.iter().map(|v| lambda * v).collect(),
            grads: self.grads.iter().map(|g| g.map(|g| g.iter().map(|v| lambda * v).collect())).collect(),
        }
    }

    /// `f + c`; gradients are unchanged.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            name: format!("{}+{c}", self.name),
            values: self.values.iter().map(|v| v + c).collect(),
            grads: self.grads.clone(),
        }
    }

    /// `f^2` with gradient `2 f grad f`.
    pub fn squared(&self) -> Self {
        let v = &self.values;
        Self {
            name: format!("({})^2", self.name),
            values: v.iter().map(|x| x * x).collect(),
            grads: self.grads.iter().map(|g| g.map(|g| g.iter().zip(v).map(|(d, x)| 2.0 * x * d).collect())).collect(),
        }
    }

    /// `sqrt(max(F, floor))` for a nonnegative `F`, with
    /// `grad sqrt F = grad F / (2 sqrt F)`. The floor is `eps * max F` and is
    /// returned so callers can record it.
    pub fn sqrt_floored(&self) -> (Self, f64) {
        let max = self.values.iter().cloned().fold(0.0, f64::max);
        let floor = f64::EPSILON * max;
        let roots: Vec<f64> = self.values.iter().map(|v| v.max(floor).sqrt()).collect();
        let grads = self
            .grads
            .iter()
            .map(|g| {
                g.map(|g| g.iter().zip(&roots).map(|(d, r)| if *r > 0.0 { d / (2.0 * r) } else { 0.0 }).collect())
            })
            .collect();
        (Self { name: format!("sqrt({})", self.name), values: roots, grads }, floor)
    }
}

fn check_len(mu: &impl Weighted, n: usize) -> Result<()> {
    if mu.n_states() != n {
        return Err(Error::DimensionMismatch { expected: mu.n_states(), got: n });
    }
    Ok(())
}

/// `mu(f)`.
pub fn mean(mu: &impl Weighted, f: &[f64]) -> Result<f64> {
    check_len(mu, f.len())?;
    Ok(crate::quadrature::pairwise_dot(mu.probs(), f))
}

fn mean_map(mu: &impl Weighted, f: &[f64], g: impl Fn(f64) -> f64) -> f64 {
    let terms: Vec<f64> = mu.probs().iter().zip(f).map(|(p, x)| p * g(*x)).collect();
    pairwise_sum(&terms)
}

/// `Ent_mu(g) = mu(g log(g / mu g))` for `g >= 0`, with `0 log 0 = 0`.
pub fn entropy_of(mu: &impl Weighted, g: &[f64]) -> Result<f64> {
    check_len(mu, g.len())?;
    let m = mean(mu, g)?;
    if !(m > 0.0) {
        return Err(Error::Degenerate("entropy of a function with zero mean".into()));
    }
    let ent = mean_map(mu, g, |x| if x > 0.0 { x * (x / m).ln() } else { 0.0 });
    Ok(ent.max(0.0))
}

/// `Ent_mu(f^2)`.
pub fn entropy(mu: &impl Weighted, f: &[f64]) -> Result<f64> {
    let g: Vec<f64> = f.iter().map(|x| x * x).collect();
    entropy_of(mu, &g)
}

/// `mu(f; h) = mu(f h) - mu(f) mu(h)`, centred before multiplying.
pub fn covariance(mu: &impl Weighted, f: &[f64], h: &[f64]) -> Result<f64> {
    check_len(mu, f.len())?;
    check_len(mu, h.len())?;
    let (mf, mh) = (mean(mu, f)?, mean(mu, h)?);
    let terms: Vec<f64> =
        mu.probs().iter().zip(f.iter().zip(h)).map(|(p, (a, b))| p * (a - mf) * (b - mh)).collect();
    Ok(pairwise_sum(&terms))
}

pub fn variance(mu: &impl Weighted, f: &[f64]) -> Result<f64> {
    Ok(covariance(mu, f, f)?.max(0.0))
}

/// `sum_{pos} mu |grad_pos f|^2`.
pub fn dirichlet(mu: &impl Weighted, f: &GridFunction, positions: &[usize]) -> Result<f64> {
    check_len(mu, f.len())?;
    let mut total = 0.0;
    for &pos in positions {
        if let Some(g) = f.grad_sparse(pos)? {
            total += mean_map(mu, g, |g| g * g);
        }
    }
    Ok(total)
}

/// Both sides of `mu(u v) <= (1/t) log mu(e^{t u}) + (1/t) mu(v log v)` after
/// normalising `v` to `mu v = 1`.
pub fn entropic_bound(mu: &impl Weighted, u: &[f64], v: &[f64], t: f64) -> Result<(f64, f64)> {
    check_len(mu, u.len())?;
    check_len(mu, v.len())?;
    if !(t > 0.0) {
        return Err(Error::OutOfRange { name: "t", detail: format!("must be positive, got {t}") });
    }
    if v.iter().any(|x| *x < 0.0) {
        return Err(Error::Degenerate("entropic bound needs v >= 0".into()));
    }
    let mv = mean(mu, v)?;
    if !(mv > 0.0) {
        return Err(Error::Degenerate("entropic bound needs mu v > 0".into()));
    }
    let vn: Vec<f64> = v.iter().map(|x| x / mv).collect();
    let lhs = pairwise_sum(&mu.probs().iter().zip(u.iter().zip(&vn)).map(|(p, (a, b))| p * a * b).collect::<Vec<_>>());
    let tu: Vec<f64> = u.iter().map(|x| t * x).collect();
    let log_mgf = crate::model::log_mean_exp(mu.probs(), &tu, 1.0);
    let vlogv = mean_map(mu, &vn, |x| if x > 0.0 { x * x.ln() } else { 0.0 });
    Ok((lhs, (log_mgf + vlogv) / t))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovarianceBound {
    /// `|mu(f^2; h)|`.
    pub lhs: f64,
    /// `(mu f^2)^{1/2} (mu(|f - mu f|^2 (h^2 + mu h^2)))^{1/2}`.
    pub scale: f64,
    /// Smallest `c0` making this pair admissible.
    pub c0: f64,
}

/// Terms of `|mu(f^2; h)| <= c0 (mu f^2)^{1/2} (mu(|f-mu f|^2 (|h|^2 + mu|h|^2)))^{1/2}`.
pub fn covariance_bound_check(mu: &impl Weighted, f: &[f64], h: &[f64]) -> Result<CovarianceBound> {
    let f2: Vec<f64> = f.iter().map(|x| x * x).collect();
    let lhs = covariance(mu, &f2, h)?.abs();
    let mf = mean(mu, f)?;
    let mf2 = mean(mu, &f2)?;
    let mh2 = mean_map(mu, h, |x| x * x);
    let weighted: Vec<f64> = f.iter().zip(h).map(|(a, b)| (a - mf).powi(2) * (b * b + mh2)).collect();
    let scale = (mf2 * mean(mu, &weighted)?).sqrt();
    let c0 = if lhs == 0.0 {
        0.0
    } else if scale > 0.0 {
        lhs / scale
    } else {
        f64::INFINITY
    };
    Ok(CovarianceBound { lhs, scale, c0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LedgerEntry {
    pub value: f64,
    /// How the value was obtained, e.g. `fit:max-ratio`.
    pub method: String,
    pub resolution: String,
}

/// Measured constants keyed by name (`c`, `C`, `D1`, ..., `A`, `B`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstantLedger {
    entries: BTreeMap<String, LedgerEntry>,
}

impl ConstantLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, name: &str, value: f64, method: &str, resolution: &str) {
        self.entries.insert(
            name.to_string(),
            LedgerEntry { value, method: method.to_string(), resolution: resolution.to_string() },
        );
    }

    pub fn get(&self, name: &str) -> Option<&LedgerEntry> {
        self.entries.get(name)
    }

    pub fn value(&self, name: &str) -> Result<f64> {
        self.entries
            .get(name)
            .map(|e| e.value)
            .ok_or_else(|| Error::Config(format!("constant {name} missing from ledger")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &LedgerEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_entropy() {
        let mu = DiscreteMeasure::uniform(2).unwrap();
        let ent = entropy(&mu, &[2f64.sqrt(), 0.0]).unwrap();
        assert!((ent - 2f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&mu, &[3.0, 3.0]).unwrap(), 0.0);
        assert!(matches!(entropy(&mu, &[0.0, 0.0]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn entropy_is_two_homogeneous() {
        let mu = DiscreteMeasure::new(&[0.1, 0.4, 0.2, 0.3]).unwrap();
        let f = [0.3, -1.2, 2.0, 0.7];
        let f3: Vec<f64> = f.iter().map(|x| 3.0 * x).collect();
        let (a, b) = (entropy(&mu, &f).unwrap(), entropy(&mu, &f3).unwrap());
        assert!((b - 9.0 * a).abs() < 1e-10);
    }

    #[test]
    fn covariance_basics() {
        let mu = DiscreteMeasure::uniform(4).unwrap();
        let x = [-1.5, -0.5, 0.5, 1.5];
        let x2: Vec<f64> = x.iter().map(|v| v * v).collect();
        assert_eq!(covariance(&mu, &x, &[2.0; 4]).unwrap(), 0.0);
        assert!(covariance(&mu, &x, &x2).unwrap().abs() < 1e-15);
        assert!(variance(&mu, &x).unwrap() > 0.0);
    }

    #[test]
    fn entropic_bound_special_cases() {
        let mu = DiscreteMeasure::new(&[0.2, 0.5, 0.3]).unwrap();
        let (l, r) = entropic_bound(&mu, &[0.0; 3], &[1.0, 2.0, 0.5], 1.3).unwrap();
        assert_eq!(l, 0.0);
        assert!(r >= 0.0);
        let u = [0.4, -1.0, 2.0];
        let (l, r) = entropic_bound(&mu, &u, &[1.0; 3], 0.7).unwrap();
        assert!(l <= r + 1e-15);
    }

    #[test]
    fn covariance_bound_vanishes_on_constants() {
        let mu = DiscreteMeasure::uniform(3).unwrap();
        assert_eq!(covariance_bound_check(&mu, &[1.0, 2.0, 3.0], &[5.0; 3]).unwrap().lhs, 0.0);
        assert!(covariance_bound_check(&mu, &[2.0; 3], &[1.0, 0.0, 4.0]).unwrap().lhs < 1e-15);
    }

    #[test]
    fn sqrt_floor_gradient() {
        let g = GridFunction::new("g", vec![4.0, 0.0], 1).with_grad(0, vec![2.0, 1.0]).unwrap();
        let (r, floor) = g.sqrt_floored();
        assert_eq!(r.values()[0], 2.0);
        assert_eq!(r.grad(0).unwrap()[0], 0.5);
        assert!(floor > 0.0 && r.values()[1] > 0.0);
        assert!(matches!(GridFunction::new("h", vec![1.0], 2).grad(1), Err(Error::MissingGradient(1))));
    }

    fn atoms(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
        (
            prop::collection::vec(0.01f64..1.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
            prop::collection::vec(-3.0f64..3.0, n),
        )
    }

    proptest! {
        #[test]
        fn entropic_inequality_on_16_atoms((w, u, v) in atoms(16), t in 0.05f64..4.0) {
            let mu = DiscreteMeasure::new(&w).unwrap();
            let v: Vec<f64> = v.iter().map(|x| x.abs() + 1e-3).collect();
            let (l, r) = entropic_bound(&mu, &u, &v, t).unwrap();
            prop_assert!(l <= r + 1e-12 * (1.0 + r.abs()));
        }

        #[test]
        fn covariance_constant_below_derived_bound((w, f, h) in atoms(8)) {
            let mu = DiscreteMeasure::new(&w).unwrap();
            let b = covariance_bound_check(&mu, &f, &h).unwrap();
            prop_assert!(b.c0.is_finite());
            prop_assert!(b.c0 <= 2.0 * 2f64.sqrt() + 1e-9);
        }

        #[test]
        fn entropy_and_variance_nonnegative((w, f, _h) in atoms(8)) {
            let mu = DiscreteMeasure::new(&w).unwrap();
            prop_assert!(entropy(&mu, &f).unwrap() >= 0.0);
            prop_assert!(variance(&mu, &f).unwrap() >= 0.0);
            let m = mean(&mu, &f).unwrap();
            let f2: Vec<f64> = f.iter().map(|x| x * x).collect();
            prop_assert!(m * m <= mean(&mu, &f2).unwrap() + 1e-12);
        }
    }
}
