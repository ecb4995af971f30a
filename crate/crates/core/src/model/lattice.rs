use crate::error::{Error, Result};

/// Checkerboard class of a site.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Class {
    Gamma0,
    Gamma1,
}

impl Class {
    pub fn other(self) -> Self {
        match self {
            Class::Gamma0 => Class::Gamma1,
            Class::Gamma1 => Class::Gamma0,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Class::Gamma0 => "Gamma0",
            Class::Gamma1 => "Gamma1",
        }
    }
}

/// Periodic `side^dim` lattice, `dim` in {1, 2}, even `side`.
///
/// Sites are numbered `x + side * y`. Neighbour lists keep multiplicity, so
/// on a side-2 torus the two wrap-around bonds between a pair both appear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LatticeTorus {
    dim: usize,
    side: usize,
    neighbors: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
}

impl LatticeTorus {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::Config(format!("lattice dimension must be 1 or 2, got {dim}")));
        }
        if side == 0 || side % 2 != 0 {
            return Err(Error::Config(format!(
                "side length must be even and positive for the checkerboard split, got {side}"
            )));
        }
        let n = side.pow(dim as u32);
        let mut neighbors = vec![Vec::new(); n];
        let mut edges = Vec::new();
        for site in 0..n {
            let c = coords(site, dim, side);
            for axis in 0..dim {
                let mut fwd = c.clone();
                fwd[axis] = (c[axis] + 1) % side;
                let mut bwd = c.clone();
                bwd[axis] = (c[axis] + side - 1) % side;
                let f = index(&fwd, side);
                neighbors[site].push(f);
                neighbors[site].push(index(&bwd, side));
                edges.push((site, f));
            }
        }
        Ok(Self { dim, side, neighbors, edges })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_sites(&self) -> usize {
        self.neighbors.len()
    }

    pub fn degree(&self) -> usize {
        2 * self.dim
    }

    pub fn neighbors(&self, site: usize) -> &[usize] {
        &self.neighbors[site]
    }

    /// Undirected bonds with multiplicity, each listed once.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn coords(&self, site: usize) -> Vec<usize> {
        coords(site, self.dim, self.side)
    }

    pub fn class(&self, site: usize) -> Class {
        if self.coords(site).iter().sum::<usize>() % 2 == 0 {
            Class::Gamma0
        } else {
            Class::Gamma1
        }
    }

    pub fn class_sites(&self, class: Class) -> Vec<usize> {
        (0..self.n_sites()).filter(|&s| self.class(s) == class).collect()
    }

    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        self.neighbors[a].contains(&b)
    }

    /// Graph distance on the torus.
    pub fn distance(&self, a: usize, b: usize) -> usize {
        let (ca, cb) = (self.coords(a), self.coords(b));
        ca.iter()
            .zip(&cb)
            .map(|(&x, &y)| {
                let d = x.abs_diff(y);
                d.min(self.side - d)
            })
            .sum()
    }
}

fn coords(site: usize, dim: usize, side: usize) -> Vec<usize> {
    let mut rest = site;
    (0..dim)
        .map(|_| {
            let c = rest % side;
            rest /= side;
            c
        })
        .collect()
}

fn index(c: &[usize], side: usize) -> usize {
    c.iter().rev().fold(0, |acc, &x| acc * side + x)
}
