use serde::{Deserialize, Serialize};

use super::{CouplingMatrix, Interaction, LatticeTorus, ModelSpec, Phase};
use crate::error::{Error, Result};

/// Model keys of a run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "one")]
    pub alpha: f64,
    #[serde(default = "four")]
    pub p: f64,
    #[serde(default = "four")]
    pub k0: f64,
    #[serde(default = "three")]
    pub k1: f64,
    #[serde(default = "one")]
    pub epsilon: f64,
    #[serde(default = "half")]
    pub rho: f64,
    #[serde(default = "two")]
    pub s: f64,
    #[serde(default = "two_and_half")]
    pub k2: f64,
    #[serde(default = "kgrowth")]
    pub kgrowth: f64,
    #[serde(rename = "Mstar", default = "one")]
    pub m_star: f64,
    #[serde(rename = "J", default = "coupling")]
    pub j: f64,
    #[serde(default = "eps_h")]
    pub eps_h: f64,
    #[serde(default = "dim")]
    pub dim: usize,
    #[serde(default = "side")]
    pub side: usize,
    /// Admit `p < 3` for calibration runs.
    #[serde(default)]
    pub oracle: bool,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn three() -> f64 {
    3.0
}
fn four() -> f64 {
    4.0
}
fn half() -> f64 {
    0.5
}
fn two_and_half() -> f64 {
    2.5
}
fn kgrowth() -> f64 {
    12.5
}
fn coupling() -> f64 {
    0.05
}
fn eps_h() -> f64 {
    0.05
}
fn dim() -> usize {
    1
}
fn side() -> usize {
    4
}

impl Default for ModelConfig {
    fn default() -> Self {
        toml::from_str("").expect("defaults deserialize")
    }
}

impl ModelConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let phase = if self.oracle {
            Phase::oracle(self.alpha, self.p, self.k0, self.k1)?
        } else {
            Phase::new(self.alpha, self.p, self.k0, self.k1)?
        };
        let interaction = Interaction::new(self.epsilon, self.rho, self.s)?.with_constants(
            self.k2,
            self.kgrowth,
            self.m_star,
            self.eps_h,
        )?;
        ModelSpec::new(
            phase,
            interaction,
            CouplingMatrix::uniform(self.j)?,
            LatticeTorus::new(self.dim, self.side)?,
        )
    }
}
