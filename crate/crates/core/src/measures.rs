//! Conditional measures `E^{L,w}` on truncated tensor grids, and the
//! periodic torus measure used as the proxy for the Gibbs measure.
//!
//! Everything is stored as log-weights and normalised by log-sum-exp. Block
//! conditionals are read off the joint grid probabilities, so the discrete
//! measures satisfy the DLR identities exactly up to rounding.

use crate::error::{Error, Result};
use crate::functionals::{GridFunction, TestFunction, Weighted};
use crate::model::{Class, ModelSpec};
use crate::quadrature::{
    pairwise_dot, pairwise_sum, Grid1D, TensorGrid, DEFAULT_MAX_NODES, DEFAULT_MAX_SITES,
    QuadConfig,
};

#[derive(Debug, Clone)]
pub struct ConditionalMeasure {
    spec: ModelSpec,
    sites: Vec<usize>,
    grid: TensorGrid,
    digits: Vec<Vec<u16>>,
    log_z: f64,
    log_probs: Vec<f64>,
    probs: Vec<f64>,
    /// Bonds with both ends inside the region: (position, position, J).
    internal: Vec<(usize, usize, f64)>,
    /// `d/dx U(node_k, node_l)` at `k * n + l`.
    dudx: Vec<f64>,
}

impl Weighted for ConditionalMeasure {
    fn probs(&self) -> &[f64] {
        &self.probs
    }
}

impl ConditionalMeasure {
    /// `E^{L,w}` for the region `sites` with boundary `boundary` (one value per
    /// lattice site; entries inside the region are ignored).
    pub fn build(spec: &ModelSpec, sites: &[usize], boundary: &[f64], grid: Grid1D) -> Result<Self> {
        Self::build_with_limits(spec, sites, boundary, grid, DEFAULT_MAX_SITES, DEFAULT_MAX_NODES)
    }

    pub fn build_with_limits(
        spec: &ModelSpec,
        sites: &[usize],
        boundary: &[f64],
        grid: Grid1D,
        max_sites: usize,
        max_nodes: usize,
    ) -> Result<Self> {
        let lat = &spec.lattice;
        if boundary.len() != lat.n_sites() {
            return Err(Error::DimensionMismatch { expected: lat.n_sites(), got: boundary.len() });
        }
        let pos_of = |s: usize| sites.iter().position(|&t| t == s);
        if let Some(&bad) = sites.iter().find(|&&s| s >= lat.n_sites()) {
            return Err(Error::Config(format!("site {bad} is not on the lattice")));
        }
        let nodes = grid.nodes().to_vec();
        let mut fields = vec![vec![0.0; nodes.len()]; sites.len()];
        let mut internal = Vec::new();
        for &(a, b) in lat.edges() {
            let j = spec.coupling.get(a, b);
            match (pos_of(a), pos_of(b)) {
                (Some(pa), Some(pb)) => internal.push((pa, pb, j)),
                (Some(pa), None) => add_field(&mut fields[pa], spec, &nodes, j, boundary[b]),
                (None, Some(pb)) => add_field(&mut fields[pb], spec, &nodes, j, boundary[a]),
                (None, None) => {}
            }
        }
        let tensor = TensorGrid::with_limits(sites.to_vec(), grid, max_sites, max_nodes)?;
        Self::assemble(spec, tensor, fields, internal)
    }

    /// `E^{i,w}` for one site with explicit neighbour values, one per entry of
    /// `lattice.neighbors(site)`.
    pub fn single_site(spec: &ModelSpec, site: usize, neighbors: &[f64], grid: Grid1D) -> Result<Self> {
        let nb = spec.lattice.neighbors(site);
        if nb.len() != neighbors.len() {
            return Err(Error::DimensionMismatch { expected: nb.len(), got: neighbors.len() });
        }
        let nodes = grid.nodes().to_vec();
        let mut field = vec![0.0; nodes.len()];
        for (&j, &w) in nb.iter().zip(neighbors) {
            add_field(&mut field, spec, &nodes, spec.coupling.get(site, j), w);
        }
        let tensor = TensorGrid::new(vec![site], grid)?;
        Self::assemble(spec, tensor, vec![field], Vec::new())
    }

    /// Torus measure: every lattice site, periodic closure, no boundary.
    pub fn torus(spec: &ModelSpec, grid: Grid1D) -> Result<Self> {
        Self::torus_with_limits(spec, grid, DEFAULT_MAX_SITES, DEFAULT_MAX_NODES)
    }

    pub fn torus_with_limits(spec: &ModelSpec, grid: Grid1D, max_sites: usize, max_nodes: usize) -> Result<Self> {
        let n = spec.lattice.n_sites();
        let sites: Vec<usize> = (0..n).collect();
        Self::build_with_limits(spec, &sites, &vec![0.0; n], grid, max_sites, max_nodes).map_err(|e| match e {
            Error::Infeasible(msg) => {
                Error::Infeasible(format!("{msg}; use the sampler engine for this lattice"))
            }
            other => other,
        })
    }

    fn assemble(
        spec: &ModelSpec,
        grid: TensorGrid,
        fields: Vec<Vec<f64>>,
        internal: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        let g1 = grid.grid();
        let n = g1.len();
        let nodes = g1.nodes();
        let it = &spec.interaction;
        let mut u = vec![0.0; n * n];
        let mut dudx = vec![0.0; n * n];
        for k in 0..n {
            for l in 0..n {
                u[k * n + l] = it.edge(nodes[k], nodes[l]);
                dudx[k * n + l] = it.edge_grad_x(nodes[k], nodes[l]);
            }
        }
        let site_part: Vec<Vec<f64>> = fields
            .iter()
            .map(|field| {
                (0..n)
                    .map(|k| g1.weights()[k].ln() - spec.phase.value(nodes[k]) - field[k])
                    .collect()
            })
            .collect();
        let n_pos = grid.sites().len();
        let total = grid.total();
        let mut digits = vec![vec![0u16; total]; n_pos];
        let mut lw = vec![0.0; total];
        let mut d = vec![0usize; n_pos];
        for idx in 0..total {
            let mut s = 0.0;
            for pos in 0..n_pos {
                digits[pos][idx] = d[pos] as u16;
                s += site_part[pos][d[pos]];
            }
            for &(a, b, j) in &internal {
                s -= j * u[d[a] * n + d[b]];
            }
            lw[idx] = s;
            for dp in d.iter_mut() {
                *dp += 1;
                if *dp < n {
                    break;
                }
                *dp = 0;
            }
        }
        if let Some(idx) = lw.iter().position(|v| v.is_nan()) {
            return Err(Error::NonFinite { value: lw[idx], coords: grid.coords(idx) });
        }
        let m = lw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Degenerate("density vanishes on the whole grid".into()));
        }
        let shifted: Vec<f64> = lw.iter().map(|v| (v - m).exp()).collect();
        let log_z = m + pairwise_sum(&shifted).ln();
        let log_probs: Vec<f64> = lw.iter().map(|v| v - log_z).collect();
        let probs = log_probs.iter().map(|v| v.exp()).collect();
        Ok(Self {
            spec: spec.clone(),
            sites: grid.sites().to_vec(),
            grid,
            digits,
            log_z,
            log_probs,
            probs,
            internal,
            dudx,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn sites(&self) -> &[usize] {
        &self.sites
    }

    pub fn position(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }

    pub fn grid(&self) -> &Grid1D {
        self.grid.grid()
    }

    pub fn tensor(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    /// `log Z^{L,w}`.
    pub fn log_z(&self) -> f64 {
        self.log_z
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    /// Node index of each state at a position.
    pub fn digit_column(&self, pos: usize) -> &[u16] {
        &self.digits[pos]
    }

    pub fn coords(&self, idx: usize) -> Vec<f64> {
        self.grid.coords(idx)
    }

    /// Values of a per-position node function, `g(x_pos)`, on every state.
    pub fn site_values(&self, pos: usize, g: impl Fn(f64) -> f64) -> Vec<f64> {
        let table: Vec<f64> = self.grid().nodes().iter().map(|&x| g(x)).collect();
        self.digits[pos].iter().map(|&k| table[k as usize]).collect()
    }

    /// Values of `f(coords)` on every state.
    pub fn values_of(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let nodes = self.grid().nodes();
        let mut x = vec![0.0; self.sites.len()];
        (0..self.n_states())
            .map(|idx| {
                for (pos, xp) in x.iter_mut().enumerate() {
                    *xp = nodes[self.digits[pos][idx] as usize];
                }
                f(&x)
            })
            .collect()
    }

    /// `E^{L,w} f`.
    pub fn expectation(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.n_states() {
            return Err(Error::DimensionMismatch { expected: self.n_states(), got: f.len() });
        }
        if let Some(idx) = f.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { value: f[idx], coords: self.coords(idx) });
        }
        Ok(pairwise_dot(&self.probs, f))
    }

    pub fn expect_fn(&self, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
        self.expectation(&self.values_of(f))
    }

    /// Region energy `H^{L,w}` at region coordinates, evaluated analytically
    /// with the symmetric bond potential (boundary taken from construction is
    /// not stored, so this covers internal bonds plus phase only).
    pub fn internal_energy(&self, x: &[f64]) -> f64 {
        let it = &self.spec.interaction;
        let mut e: f64 = x.iter().map(|&v| self.spec.phase.value(v)).sum();
        for &(a, b, j) in &self.internal {
            e += j * it.edge(x[a], x[b]);
        }
        e
    }

    /// Conditioning structure for a block of positions.
    pub fn block(&self, positions: &[usize]) -> Result<Block> {
        if let Some(&bad) = positions.iter().find(|&&p| p >= self.sites.len()) {
            return Err(Error::DimensionMismatch { expected: self.sites.len(), got: bad + 1 });
        }
        let total = self.n_states();
        let mut dense = vec![u32::MAX; total];
        let mut n_groups = 0u32;
        let groups: Vec<u32> = (0..total)
            .map(|idx| {
                let mut key = idx;
                for &p in positions {
                    key -= self.digits[p][idx] as usize * self.grid.stride(p);
                }
                if dense[key] == u32::MAX {
                    dense[key] = n_groups;
                    n_groups += 1;
                }
                dense[key]
            })
            .collect();
        drop(dense);
        let n_groups = n_groups as usize;
        let mut lmax = vec![f64::NEG_INFINITY; n_groups];
        for idx in 0..total {
            let g = groups[idx] as usize;
            lmax[g] = lmax[g].max(self.log_probs[idx]);
        }
        let rel: Vec<f64> = (0..total).map(|idx| (self.log_probs[idx] - lmax[groups[idx] as usize]).exp()).collect();
        let mut mass = vec![0.0; n_groups];
        for idx in 0..total {
            mass[groups[idx] as usize] += rel[idx];
        }
        let cprob = (0..total).map(|idx| rel[idx] / mass[groups[idx] as usize]).collect();
        let mut block = Block { positions: positions.to_vec(), groups, n_groups, cprob, forces: Vec::new() };
        block.forces = (0..self.sites.len())
            .map(|q| {
                if positions.contains(&q) {
                    return None;
                }
                self.block_force(&block, q).map(|force| {
                    let ef = self.conditional(&block, &force);
                    (force, ef)
                })
            })
            .collect();
        Ok(block)
    }

    /// Block over lattice sites (all must lie in the region).
    pub fn block_sites(&self, sites: &[usize]) -> Result<Block> {
        let pos = sites
            .iter()
            .map(|&s| self.position(s).ok_or_else(|| Error::Config(format!("site {s} outside the region"))))
            .collect::<Result<Vec<_>>>()?;
        self.block(&pos)
    }

    /// `E^M f` as a function of the remaining coordinates, one value per state.
    pub fn conditional(&self, block: &Block, f: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; block.n_groups];
        for ((&g, &p), &v) in block.groups.iter().zip(&block.cprob).zip(f) {
            acc[g as usize] += p * v;
        }
        block.groups.iter().map(|&g| acc[g as usize]).collect()
    }

    /// `x_q -> d/dx_q` of the block energy: `sum_{t in M, t ~ q} J d/dx U(x_q, x_t)`.
    fn block_force(&self, block: &Block, q: usize) -> Option<Vec<f64>> {
        let n = self.grid().len();
        let bonds: Vec<(usize, f64)> = self
            .internal
            .iter()
            .filter_map(|&(a, b, j)| {
                if a == q && block.positions.contains(&b) {
                    Some((b, j))
                } else if b == q && block.positions.contains(&a) {
                    Some((a, j))
                } else {
                    None
                }
            })
            .collect();
        if bonds.is_empty() {
            return None;
        }
        let dq = &self.digits[q];
        Some(
            (0..self.n_states())
                .map(|idx| {
                    bonds
                        .iter()
                        .map(|&(t, j)| j * self.dudx[dq[idx] as usize * n + self.digits[t][idx] as usize])
                        .sum()
                })
                .collect(),
        )
    }

    /// `E^M f` with gradients: zero on the block and
    /// `E^M(grad_q f) - Cov_{E^M}(f, grad_q H^M)` off it.
    pub fn conditional_fn(&self, block: &Block, f: &GridFunction) -> Result<GridFunction> {
        if f.len() != self.n_states() {
            return Err(Error::DimensionMismatch { expected: self.n_states(), got: f.len() });
        }
        let ef = self.conditional(block, f.values());
        let mut out = GridFunction::new(format!("E[{}]", f.name), ef.clone(), self.sites.len());
        for q in 0..self.sites.len() {
            if block.positions.contains(&q) {
                out = out.with_zero_grad(q)?;
                continue;
            }
            let Ok(dq) = f.grad_sparse(q) else { continue };
            let force = block.forces[q].as_ref();
            let mut g = match (dq, force) {
                (None, None) => {
                    out = out.with_zero_grad(q)?;
                    continue;
                }
                (Some(dq), _) => self.conditional(block, dq),
                (None, Some(_)) => vec![0.0; ef.len()],
            };
            if let Some((force, eg)) = force {
                let fg: Vec<f64> = f.values().iter().zip(force).map(|(a, b)| a * b).collect();
                let efg = self.conditional(block, &fg);
                for idx in 0..g.len() {
                    g[idx] -= efg[idx] - ef[idx] * eg[idx];
                }
            }
            out = out.with_grad(q, g)?;
        }
        Ok(out)
    }
}

fn add_field(field: &mut [f64], spec: &ModelSpec, nodes: &[f64], j: f64, w: f64) {
    if j == 0.0 {
        return;
    }
    for (f, &x) in field.iter_mut().zip(nodes) {
        *f += j * spec.interaction.edge(x, w);
    }
}

/// Per-state conditional probabilities for a block `M`: states sharing the
/// coordinates off `M` form one group.
#[derive(Debug, Clone)]
pub struct Block {
    positions: Vec<usize>,
    /// Dense group id of every state.
    groups: Vec<u32>,
    n_groups: usize,
    cprob: Vec<f64>,
    /// Per position off the block: the block force and its conditional.
    forces: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Block {
    pub fn positions(&self) -> &[usize] {
        &self.positions
    }
}

/// Torus measure standing in for the infinite-volume Gibbs measure, with the
/// checkerboard blocks precomputed.
#[derive(Debug, Clone)]
pub struct GibbsProxy {
    measure: ConditionalMeasure,
    classes: [Vec<usize>; 2],
    blocks: [Block; 2],
}

impl GibbsProxy {
    pub fn exact(spec: &ModelSpec, quad: &QuadConfig) -> Result<Self> {
        let n = spec.lattice.n_sites();
        let grid = quad.region_grid(&spec.phase, n)?;
        let measure = ConditionalMeasure::torus_with_limits(spec, grid, DEFAULT_MAX_SITES, quad.state_budget)?;
        Self::from_measure(measure)
    }

    pub fn from_measure(measure: ConditionalMeasure) -> Result<Self> {
        let lat = &measure.spec().lattice;
        if measure.sites().len() != lat.n_sites() {
            return Err(Error::Config("Gibbs proxy needs the whole torus".into()));
        }
        let classes = [
            lat.class_sites(Class::Gamma0),
            lat.class_sites(Class::Gamma1),
        ];
        let blocks = [measure.block(&classes[0])?, measure.block(&classes[1])?];
        Ok(Self { measure, classes, blocks })
    }

    pub fn measure(&self) -> &ConditionalMeasure {
        &self.measure
    }

    pub fn spec(&self) -> &ModelSpec {
        self.measure.spec()
    }

    /// Positions (equal to site indices on the torus) of a checkerboard class.
    pub fn class_positions(&self, class: Class) -> &[usize] {
        &self.classes[class as usize]
    }

    pub fn class_block(&self, class: Class) -> &Block {
        &self.blocks[class as usize]
    }

    pub fn site_block(&self, site: usize) -> Result<Block> {
        self.measure.block_sites(&[site])
    }

    pub fn resolution(&self) -> String {
        format!(
            "torus dim={} side={} nodes={} L={}",
            self.spec().lattice.dim(),
            self.spec().lattice.side(),
            self.measure.grid().len(),
            self.measure.grid().l_trunc()
        )
    }
}

/// `H^{L,w}(x)` with the symmetric bond potential `U`, as used by every
/// measure in this crate. `x` lists the region coordinates in `sites` order.
pub fn region_energy(spec: &ModelSpec, sites: &[usize], boundary: &[f64], x: &[f64]) -> f64 {
    let pos_of = |s: usize| sites.iter().position(|&t| t == s);
    let it = &spec.interaction;
    let mut e: f64 = x.iter().map(|&v| spec.phase.value(v)).sum();
    for &(a, b) in spec.lattice.edges() {
        let j = spec.coupling.get(a, b);
        e += match (pos_of(a), pos_of(b)) {
            (Some(pa), Some(pb)) => j * it.edge(x[pa], x[pb]),
            (Some(pa), None) => j * it.edge(x[pa], boundary[b]),
            (None, Some(pb)) => j * it.edge(x[pb], boundary[a]),
            (None, None) => 0.0,
        };
    }
    e
}

/// `sum_{i in L} phi(x_i) + sum_{i in L, j ~ i} J_ij V(x_i, z_j)`: the
/// one-sided form, with `z_j = x_j` inside the region and `w_j` outside.
pub fn one_sided_energy(spec: &ModelSpec, sites: &[usize], boundary: &[f64], x: &[f64]) -> f64 {
    let pos_of = |s: usize| sites.iter().position(|&t| t == s);
    let mut e = 0.0;
    for (pi, &i) in sites.iter().enumerate() {
        e += spec.phase.value(x[pi]);
        for &j in spec.lattice.neighbors(i) {
            let z = pos_of(j).map_or(boundary[j], |pj| x[pj]);
            e += spec.coupling.get(i, j) * spec.interaction.v(x[pi], z);
        }
    }
    e
}

/// `|E^{L,w}(E^{M,.} f) - E^{L,w} f|`, with every inner `E^{M,.}` built on
/// its own from the specification.
pub fn dlr_check(
    spec: &ModelSpec,
    region: &[usize],
    block: &[usize],
    boundary: &[f64],
    f: &TestFunction,
    grid: Grid1D,
) -> Result<f64> {
    if block.is_empty() || block.iter().any(|s| !region.contains(s)) {
        return Err(Error::Config("DLR block must be a nonempty subset of the region".into()));
    }
    let outer = ConditionalMeasure::build(spec, region, boundary, grid.clone())?;
    let direct = outer.expectation(f.materialize(&outer)?.values())?;
    let block_pos: Vec<usize> = block.iter().map(|&s| outer.position(s).unwrap()).collect();
    let rest: Vec<usize> = (0..region.len()).filter(|p| !block_pos.contains(p)).collect();
    let nodes = grid.nodes();
    let mut inner_cache = std::collections::HashMap::new();
    let mut nested_terms = Vec::with_capacity(outer.n_states());
    for idx in 0..outer.n_states() {
        let key: Vec<u16> = rest.iter().map(|&p| outer.digit_column(p)[idx]).collect();
        if !inner_cache.contains_key(&key) {
            let mut bnd = boundary.to_vec();
            for (&p, &k) in rest.iter().zip(&key) {
                bnd[region[p]] = nodes[k as usize];
            }
            let inner = ConditionalMeasure::build(spec, block, &bnd, grid.clone())?;
            let vals = inner.values_of(|xm| {
                f.eval(|s| match block.iter().position(|&b| b == s) {
                    Some(k) => xm[k],
                    None => bnd[s],
                })
            });
            inner_cache.insert(key.clone(), inner.expectation(&vals)?);
        }
        nested_terms.push(outer.probs()[idx] * inner_cache[&key]);
    }
    Ok((pairwise_sum(&nested_terms) - direct).abs())
}
