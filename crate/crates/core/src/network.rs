//! Potential theory on finite weighted graphs.
//!
//! Every quantity reduces to a Dirichlet problem for the weighted Laplacian
//! restricted to the free (non-boundary) vertices. That block is symmetric
//! positive definite as soon as every free component touches the boundary;
//! it is Jacobi-scaled (unit diagonal) before a sparse Cholesky
//! factorisation, which keeps weights spanning `eta ~ 1e-5` to `K ~ 1e12`
//! manageable. Solves are refined against residuals accumulated in
//! double-double arithmetic.

use std::collections::{BTreeMap, VecDeque};
use std::io::{Read, Write};

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::{Llt, SymbolicLlt};
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{EnvError, Environment};
use crate::lattice::{Edge, LatticePoint};

/// Largest network [`export_finite_network`] will build.
pub const MAX_EXPORT_EDGES: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum NetworkError {
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("free vertices {} have no path to the boundary", preview(.component))]
    Singular { component: Vec<usize> },
    #[error("{0} must be nonempty")]
    EmptySet(&'static str),
    #[error("A1 and A2 share vertex {0}")]
    Overlap(usize),
    #[error("vertex {vertex} has nonpositive value {value}")]
    Nonpositive { vertex: usize, value: f64 },
    #[error("measure has negative mass {value} at vertex {vertex}")]
    NegativeMass { vertex: usize, value: f64 },
    #[error("sparse factorisation failed: {0}")]
    Factorization(String),
    #[error("window has {edges} edges, above the limit {limit}")]
    TooLarge { edges: usize, limit: usize },
    #[error("window leaves the coordinate guard band")]
    OutsideGuard,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("no sign change of r(K) - target on [{lo}, {hi}]")]
    CalibrationInfeasible {
        lo: f64,
        hi: f64,
        probes: Vec<Probe>,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn preview(v: &[usize]) -> String {
    let head: Vec<String> = v.iter().take(8).map(|x| x.to_string()).collect();
    if v.len() > 8 {
        format!("{{{}, ... ({} total)}}", head.join(", "), v.len())
    } else {
        format!("{{{}}}", head.join(", "))
    }
}

/// An undirected graph with positive symmetric edge weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteNetwork {
    vertex_count: usize,
    /// `(u, v, weight)` with `u < v`, parallel edges merged.
    edges: Vec<(usize, usize, f64)>,
    adjacency: Vec<Vec<(usize, f64)>>,
    coords: Option<Vec<LatticePoint>>,
    boundary: Vec<bool>,
}

impl FiniteNetwork {
    pub fn new(vertex_count: usize, edges: Vec<(usize, usize, f64)>) -> Result<Self, NetworkError> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u >= vertex_count || v >= vertex_count {
                return Err(NetworkError::Invalid(format!(
                    "edge ({u}, {v}) outside {vertex_count} vertices"
                )));
            }
            if u == v {
                return Err(NetworkError::Invalid(format!("self-loop at {u}")));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(NetworkError::Invalid(format!("weight {w} on ({u}, {v})")));
            }
            *merged.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
        }
        let edges: Vec<(usize, usize, f64)> =
            merged.into_iter().map(|((u, v), w)| (u, v, w)).collect();
        let mut adjacency = vec![Vec::new(); vertex_count];
        for &(u, v, w) in &edges {
            adjacency[u].push((v, w));
            adjacency[v].push((u, w));
        }
        if let Some(x) = adjacency.iter().position(|a| a.is_empty()) {
            return Err(NetworkError::Invalid(format!(
                "vertex {x} has no incident edge"
            )));
        }
        Ok(Self {
            vertex_count,
            edges,
            adjacency,
            coords: None,
            boundary: vec![false; vertex_count],
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[(usize, usize, f64)] {
        &self.edges
    }

    pub fn neighbors(&self, x: usize) -> &[(usize, f64)] {
        &self.adjacency[x]
    }

    /// `mu_x = sum_y mu_xy`.
    pub fn total_weight(&self, x: usize) -> f64 {
        self.adjacency[x].iter().map(|&(_, w)| w).sum()
    }

    pub fn coords(&self) -> Option<&[LatticePoint]> {
        self.coords.as_deref()
    }

    /// Window-boundary marks set by [`export_finite_network`].
    pub fn boundary(&self) -> &[bool] {
        &self.boundary
    }

    pub fn vertex_at(&self, p: LatticePoint) -> Option<usize> {
        self.coords.as_ref()?.iter().position(|&q| q == p)
    }

    /// `sum_{xy} mu_xy (f(y) - f(x))^2` over edges.
    pub fn energy(&self, f: &[f64]) -> f64 {
        self.edges
            .iter()
            .map(|&(u, v, w)| w * (f[u] - f[v]).powi(2))
            .sum()
    }

    /// Writes `u,v,weight` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), NetworkError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["u", "v", "weight"])?;
        for &(u, v, wt) in &self.edges {
            w.write_record(&[u.to_string(), v.to_string(), wt.to_string()])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Reads `u,v,weight` rows; the vertex count is one more than the
    /// largest index.
    pub fn read_csv<R: Read>(input: R) -> Result<Self, NetworkError> {
        let mut r = csv::Reader::from_reader(input);
        let mut edges = Vec::new();
        for rec in r.deserialize() {
            let (u, v, w): (usize, usize, f64) = rec?;
            edges.push((u, v, w));
        }
        let n = edges
            .iter()
            .map(|&(u, v, _)| u.max(v) + 1)
            .max()
            .unwrap_or(0);
        Self::new(n, edges)
    }
}

/// Nonnegative masses on vertices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexMeasure {
    masses: BTreeMap<usize, f64>,
    total: f64,
}

impl VertexMeasure {
    pub fn new(masses: BTreeMap<usize, f64>) -> Result<Self, NetworkError> {
        if let Some((&vertex, &value)) = masses.iter().find(|(_, &m)| !(m >= 0.0)) {
            return Err(NetworkError::NegativeMass { vertex, value });
        }
        let total = masses.values().sum();
        Ok(Self { masses, total })
    }

    pub fn point_mass(x: usize) -> Self {
        Self {
            masses: BTreeMap::from([(x, 1.0)]),
            total: 1.0,
        }
    }

    pub fn masses(&self) -> &BTreeMap<usize, f64> {
        &self.masses
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn get(&self, x: usize) -> f64 {
        self.masses.get(&x).copied().unwrap_or(0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            masses: self.masses.iter().map(|(&k, &v)| (k, v * c)).collect(),
            total: self.total * c,
        }
    }

    pub fn supported_in(&self, set: &[usize]) -> bool {
        self.masses
            .iter()
            .all(|(x, &m)| m == 0.0 || set.contains(x))
    }
}

/// Factorised Laplacian block on the free vertices.
pub struct DirichletSystem<'a> {
    net: &'a FiniteNetwork,
    free: Vec<usize>,
    slot: Vec<Option<usize>>,
    scale: Vec<f64>,
    symbolic: SymbolicLlt<usize>,
    llt: Llt<usize, f64>,
}

impl<'a> DirichletSystem<'a> {
    /// Factorises the block for the complement of `fixed`.
    pub fn new(net: &'a FiniteNetwork, fixed: &[bool]) -> Result<Self, NetworkError> {
        Self::build(net, fixed, None)
    }

    /// As [`Self::new`], reusing the symbolic factorisation of a network
    /// with the same vertices, edges and `fixed` set.
    pub fn with_symbolic(
        net: &'a FiniteNetwork,
        fixed: &[bool],
        symbolic: &SymbolicLlt<usize>,
    ) -> Result<Self, NetworkError> {
        Self::build(net, fixed, Some(symbolic))
    }

    fn build(
        net: &'a FiniteNetwork,
        fixed: &[bool],
        symbolic: Option<&SymbolicLlt<usize>>,
    ) -> Result<Self, NetworkError> {
        let n = net.vertex_count();
        let mut slot = vec![None; n];
        let mut free = Vec::new();
        for x in 0..n {
            if !fixed[x] {
                slot[x] = Some(free.len());
                free.push(x);
            }
        }
        check_components(net, fixed, &free)?;
        let scale: Vec<f64> = free
            .iter()
            .map(|&x| 1.0 / net.total_weight(x).sqrt())
            .collect();
        let mut triplets = Vec::with_capacity(free.len() + net.edges().len());
        for (i, _) in free.iter().enumerate() {
            triplets.push(Triplet::new(i, i, 1.0));
        }
        for &(u, v, w) in net.edges() {
            if let (Some(i), Some(j)) = (slot[u], slot[v]) {
                let (r, c) = (i.max(j), i.min(j));
                triplets.push(Triplet::new(r, c, -w * scale[i] * scale[j]));
            }
        }
        let m = free.len();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, &triplets)
            .map_err(|e| NetworkError::Factorization(format!("{e:?}")))?;
        let symbolic = match symbolic {
            Some(s) => s.clone(),
            None => SymbolicLlt::try_new(mat.symbolic(), Side::Lower)
                .map_err(|e| NetworkError::Factorization(format!("{e:?}")))?,
        };
        let llt = Llt::try_new_with_symbolic(symbolic.clone(), mat.as_ref(), Side::Lower)
            .map_err(|e| NetworkError::Factorization(format!("{e:?}")))?;
        Ok(Self {
            net,
            free,
            slot,
            scale,
            symbolic,
            llt,
        })
    }

    pub fn symbolic(&self) -> &SymbolicLlt<usize> {
        &self.symbolic
    }

    pub fn free(&self) -> &[usize] {
        &self.free
    }

    pub fn slot(&self, x: usize) -> Option<usize> {
        self.slot[x]
    }

    /// `b - L_FF x` with `L = diag(mu) - W`, accumulated in double-double so
    /// that refinement can push the forward error below the conditioning
    /// limit of a plain working-precision residual.
    fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let mut acc = Dd::from(b[i]);
                for &(y, w) in self.net.neighbors(v) {
                    acc = acc.add_prod(-w, x[i]);
                    if let Some(j) = self.slot[y] {
                        acc = acc.add_prod(w, x[j]);
                    }
                }
                acc.value()
            })
            .collect()
    }

    fn raw_solve(&self, rhs: &mut Mat<f64>) {
        let m = self.free.len();
        for c in 0..rhs.ncols() {
            for i in 0..m {
                rhs[(i, c)] *= self.scale[i];
            }
        }
        self.llt.solve_in_place(rhs.as_mut());
        for c in 0..rhs.ncols() {
            for i in 0..m {
                rhs[(i, c)] *= self.scale[i];
            }
        }
    }

    /// Solves `L_FF x = b` for each column of `b`, refining until the
    /// correction drops to rounding level. Returns the solutions and the
    /// worst normwise backward error.
    pub fn solve_many(&self, b: &[Vec<f64>]) -> (Vec<Vec<f64>>, f64) {
        let m = self.free.len();
        let k = b.len();
        if m == 0 {
            return (vec![Vec::new(); k], 0.0);
        }
        let mut x = Mat::<f64>::from_fn(m, k, |i, c| b[c][i]);
        self.raw_solve(&mut x);
        let mut cols: Vec<Vec<f64>> = (0..k)
            .map(|c| (0..m).map(|i| x[(i, c)]).collect())
            .collect();
        let inf = |v: &[f64]| v.iter().fold(0.0f64, |a, x| a.max(x.abs()));
        let mut last = f64::INFINITY;
        for _ in 0..MAX_REFINEMENT_STEPS {
            let r: Vec<Vec<f64>> = cols
                .iter()
                .zip(b)
                .map(|(xc, bc)| self.residual(xc, bc))
                .collect();
            let mut corr = Mat::<f64>::from_fn(m, k, |i, c| r[c][i]);
            self.raw_solve(&mut corr);
            let mut size = 0.0f64;
            for (c, col) in cols.iter_mut().enumerate() {
                let scale = inf(col).max(f64::MIN_POSITIVE);
                for (i, v) in col.iter_mut().enumerate() {
                    *v += corr[(i, c)];
                    size = size.max(corr[(i, c)].abs() / scale);
                }
            }
            if size <= f64::EPSILON || size >= last {
                break;
            }
            last = size;
        }
        let r: Vec<Vec<f64>> = cols
            .iter()
            .zip(b)
            .map(|(xc, bc)| self.residual(xc, bc))
            .collect();
        let norm_l = self
            .free
            .iter()
            .map(|&v| 2.0 * self.net.total_weight(v))
            .fold(0.0, f64::max);
        let backward = cols
            .iter()
            .zip(&r)
            .zip(b)
            .map(|((xc, rc), bc)| {
                let denom = norm_l * inf(xc) + inf(bc);
                if denom == 0.0 {
                    0.0
                } else {
                    inf(rc) / denom
                }
            })
            .fold(0.0, f64::max);
        (cols, backward)
    }

    pub fn solve(&self, b: &[f64]) -> (Vec<f64>, f64) {
        let (mut cols, res) = self.solve_many(&[b.to_vec()]);
        (cols.pop().unwrap(), res)
    }
}

const MAX_REFINEMENT_STEPS: usize = 6;

/// Unevaluated sum `hi + lo`.
#[derive(Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl From<f64> for Dd {
    fn from(v: f64) -> Self {
        Dd { hi: v, lo: 0.0 }
    }
}

impl Dd {
    fn add(self, v: f64) -> Self {
        let s = self.hi + v;
        let bb = s - self.hi;
        let e = (self.hi - (s - bb)) + (v - bb) + self.lo;
        let hi = s + e;
        Dd {
            hi,
            lo: e - (hi - s),
        }
    }

    fn add_prod(self, a: f64, b: f64) -> Self {
        let p = a * b;
        self.add(p).add(a.mul_add(b, -p))
    }

    fn value(self) -> f64 {
        self.hi + self.lo
    }
}

fn check_components(
    net: &FiniteNetwork,
    fixed: &[bool],
    free: &[usize],
) -> Result<(), NetworkError> {
    let mut seen = vec![false; net.vertex_count()];
    for &s in free {
        if seen[s] {
            continue;
        }
        let mut comp = Vec::new();
        let mut touches = false;
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(x) = queue.pop_front() {
            comp.push(x);
            for &(y, _) in net.neighbors(x) {
                if fixed[y] {
                    touches = true;
                } else if !seen[y] {
                    seen[y] = true;
                    queue.push_back(y);
                }
            }
        }
        if !touches {
            comp.sort_unstable();
            return Err(NetworkError::Singular { component: comp });
        }
    }
    Ok(())
}

/// Potentials with the solver's backward error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub values: Vec<f64>,
    pub residual: f64,
}

fn fixed_mask(n: usize, sets: &[&[usize]]) -> Vec<bool> {
    let mut mask = vec![false; n];
    for set in sets {
        for &x in *set {
            mask[x] = true;
        }
    }
    mask
}

/// The function equal to `boundary` on its keys and harmonic elsewhere.
pub fn harmonic_extension(
    net: &FiniteNetwork,
    boundary: &BTreeMap<usize, f64>,
) -> Result<Potential, NetworkError> {
    if boundary.is_empty() {
        return Err(NetworkError::EmptySet("boundary"));
    }
    if let Some(&x) = boundary.keys().find(|&&x| x >= net.vertex_count()) {
        return Err(NetworkError::Invalid(format!(
            "boundary vertex {x} out of range"
        )));
    }
    let keys: Vec<usize> = boundary.keys().copied().collect();
    let fixed = fixed_mask(net.vertex_count(), &[&keys]);
    let sys = DirichletSystem::new(net, &fixed)?;
    let rhs: Vec<f64> = sys
        .free()
        .iter()
        .map(|&x| {
            net.neighbors(x)
                .iter()
                .filter_map(|&(y, w)| boundary.get(&y).map(|f| w * f))
                .sum()
        })
        .collect();
    let (sol, residual) = sys.solve(&rhs);
    let mut values = vec![0.0; net.vertex_count()];
    for (&x, &f) in boundary {
        values[x] = f;
    }
    for (i, &x) in sys.free().iter().enumerate() {
        values[x] = sol[i];
    }
    Ok(Potential { values, residual })
}

fn check_pair(net: &FiniteNetwork, a1: &[usize], a2: &[usize]) -> Result<(), NetworkError> {
    if a1.is_empty() {
        return Err(NetworkError::EmptySet("A1"));
    }
    if a2.is_empty() {
        return Err(NetworkError::EmptySet("A2"));
    }
    if let Some(&x) = a1.iter().chain(a2).find(|&&x| x >= net.vertex_count()) {
        return Err(NetworkError::Invalid(format!("vertex {x} out of range")));
    }
    if let Some(&x) = a1.iter().find(|x| a2.contains(x)) {
        return Err(NetworkError::Overlap(x));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resistance {
    /// `1 / (current out of A1)`.
    pub r: f64,
    /// `E(h, h)` computed edge by edge.
    pub energy: f64,
    /// Harmonic potential, 0 on A1 and 1 on A2.
    pub potential: Potential,
}

/// Effective resistance between `A1` and `A2`.
pub fn effective_resistance(
    net: &FiniteNetwork,
    a1: &[usize],
    a2: &[usize],
) -> Result<Resistance, NetworkError> {
    check_pair(net, a1, a2)?;
    let boundary: BTreeMap<usize, f64> = a1
        .iter()
        .map(|&x| (x, 0.0))
        .chain(a2.iter().map(|&x| (x, 1.0)))
        .collect();
    let potential = harmonic_extension(net, &boundary)?;
    let h = &potential.values;
    let flux: f64 = a1
        .iter()
        .map(|&z| {
            net.neighbors(z)
                .iter()
                .map(|&(y, w)| w * (h[y] - h[z]))
                .sum::<f64>()
        })
        .sum();
    let energy = net.energy(h);
    Ok(Resistance {
        r: 1.0 / flux,
        energy,
        potential,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Capacitary {
    /// Capacitary measure of `A1` for the walk killed on `A2`; total mass `1/r`.
    pub e12: VertexMeasure,
    /// `r e12`, a probability measure on `A1`.
    pub nu1: VertexMeasure,
    pub r: f64,
}

/// `e12(z) = sum_y mu_zy h(y)` on `A1`, where `h` is 0 on `A1` and 1 on `A2`.
pub fn capacitary_measure(
    net: &FiniteNetwork,
    a1: &[usize],
    a2: &[usize],
) -> Result<Capacitary, NetworkError> {
    let res = effective_resistance(net, a1, a2)?;
    let h = &res.potential.values;
    let masses: BTreeMap<usize, f64> = a1
        .iter()
        .map(|&z| (z, net.neighbors(z).iter().map(|&(y, w)| w * h[y]).sum()))
        .collect();
    let e12 = VertexMeasure::new(masses)?;
    let nu1 = e12.scaled(res.r);
    Ok(Capacitary { e12, nu1, r: res.r })
}

/// Green function of the walk killed on a set, restricted to the other
/// vertices: `g(x, y)` is the expected time spent at `y` before killing,
/// starting from `x`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GreenFunction {
    vertices: Vec<usize>,
    slot: Vec<Option<usize>>,
    values: Vec<f64>,
    pub residual: f64,
}

impl GreenFunction {
    pub fn vertices(&self) -> &[usize] {
        &self.vertices
    }

    /// `None` if either vertex is killed.
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let (i, j) = (self.slot[x]?, self.slot[y]?);
        Some(self.values[i * self.vertices.len() + j])
    }

    /// `E^x T = sum_y g(x, y)`; zero on the killed set.
    pub fn row_sum(&self, x: usize) -> f64 {
        match self.slot[x] {
            Some(i) => {
                let m = self.vertices.len();
                self.values[i * m..(i + 1) * m].iter().sum()
            }
            None => 0.0,
        }
    }
}

pub fn green_function(
    net: &FiniteNetwork,
    killed: &[usize],
) -> Result<GreenFunction, NetworkError> {
    if killed.is_empty() {
        return Err(NetworkError::EmptySet("killed set"));
    }
    let fixed = fixed_mask(net.vertex_count(), &[killed]);
    let sys = DirichletSystem::new(net, &fixed)?;
    let m = sys.free().len();
    let unit: Vec<Vec<f64>> = (0..m)
        .map(|c| (0..m).map(|i| if i == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let (cols, residual) = sys.solve_many(&unit);
    let mut values = vec![0.0; m * m];
    for (c, col) in cols.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[i * m + c] = v;
        }
    }
    let slot = (0..net.vertex_count()).map(|x| sys.slot(x)).collect();
    Ok(GreenFunction {
        vertices: sys.free().to_vec(),
        slot,
        values,
        residual,
    })
}

/// `E^x T_target` for every vertex, by solving `L h = 1` off the target.
pub fn hitting_times(net: &FiniteNetwork, target: &[usize]) -> Result<Potential, NetworkError> {
    if target.is_empty() {
        return Err(NetworkError::EmptySet("target"));
    }
    let fixed = fixed_mask(net.vertex_count(), &[target]);
    let sys = DirichletSystem::new(net, &fixed)?;
    let (sol, residual) = sys.solve(&vec![1.0; sys.free().len()]);
    let mut values = vec![0.0; net.vertex_count()];
    for (i, &x) in sys.free().iter().enumerate() {
        values[x] = sol[i];
    }
    Ok(Potential { values, residual })
}

/// `E^start T_target` for a starting distribution.
pub fn expected_hitting_time(
    net: &FiniteNetwork,
    start: &VertexMeasure,
    target: &[usize],
) -> Result<f64, NetworkError> {
    if (start.total() - 1.0).abs() > 1e-9 {
        return Err(NetworkError::Invalid(format!(
            "start measure has mass {}",
            start.total()
        )));
    }
    let h = hitting_times(net, target)?;
    Ok(start.masses().iter().map(|(&x, &m)| m * h.values[x]).sum())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommuteCheck {
    /// `E^{nu2} T_1`
    pub forward: f64,
    /// `E^{nu1} T_2`
    pub backward: f64,
    pub r: f64,
    pub vertex_count: usize,
    /// `|forward + backward - r |V|| / (r |V|)`
    pub relative_residual: f64,
}

/// Checks `E^{nu2} T_1 + E^{nu1} T_2 = r |V|`.
pub fn commute_identity_check(
    net: &FiniteNetwork,
    a1: &[usize],
    a2: &[usize],
) -> Result<CommuteCheck, NetworkError> {
    let c12 = capacitary_measure(net, a1, a2)?;
    let c21 = capacitary_measure(net, a2, a1)?;
    let backward = expected_hitting_time(net, &normalise(&c12.nu1), a2)?;
    let forward = expected_hitting_time(net, &normalise(&c21.nu1), a1)?;
    let rv = c12.r * net.vertex_count() as f64;
    Ok(CommuteCheck {
        forward,
        backward,
        r: c12.r,
        vertex_count: net.vertex_count(),
        relative_residual: ((forward + backward) - rv).abs() / rv,
    })
}

/// `nu1 = r e12` has mass one up to rounding; remove the rounding.
fn normalise(m: &VertexMeasure) -> VertexMeasure {
    m.scaled(1.0 / m.total())
}

/// `max / min` of `h` over `region`.
pub fn harnack_ratio(h: &[f64], region: &[usize]) -> Result<f64, NetworkError> {
    if region.is_empty() {
        return Err(NetworkError::EmptySet("region"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = 0.0f64;
    for &x in region {
        let v = h[x];
        if !(v > 0.0) {
            return Err(NetworkError::Nonpositive {
                vertex: x,
                value: v,
            });
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi / lo)
}

/// Closed lattice rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub x0: i64,
    pub y0: i64,
    pub x1: i64,
    pub y1: i64,
}

impl Window {
    pub fn square(corner: LatticePoint, side: i64) -> Self {
        Self {
            x0: corner.x,
            y0: corner.y,
            x1: corner.x + side,
            y1: corner.y + side,
        }
    }

    pub fn width(&self) -> i64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> i64 {
        self.y1 - self.y0
    }

    pub fn edge_count(&self) -> usize {
        let (w, h) = (self.width() as usize, self.height() as usize);
        w * (h + 1) + h * (w + 1)
    }

    /// Vertex index of `p` in row-major order.
    pub fn index(&self, p: LatticePoint) -> usize {
        ((p.y - self.y0) * (self.width() + 1) + (p.x - self.x0)) as usize
    }

    pub fn left_column(&self) -> Vec<usize> {
        (self.y0..=self.y1)
            .map(|y| self.index(LatticePoint::new(self.x0, y)))
            .collect()
    }

    pub fn right_column(&self) -> Vec<usize> {
        (self.y0..=self.y1)
            .map(|y| self.index(LatticePoint::new(self.x1, y)))
            .collect()
    }
}

/// The level-`n` conductances on the edges inside `window`.
pub fn export_finite_network(
    env: &Environment,
    n: usize,
    window: Window,
) -> Result<FiniteNetwork, NetworkError> {
    if window.width() < 0 || window.height() < 0 || window.edge_count() == 0 {
        return Err(NetworkError::Invalid(
            "window must contain at least one edge".into(),
        ));
    }
    let edges = window.edge_count();
    if edges > MAX_EXPORT_EDGES {
        return Err(NetworkError::TooLarge {
            edges,
            limit: MAX_EXPORT_EDGES,
        });
    }
    let corners = [
        LatticePoint::new(window.x0, window.y0),
        LatticePoint::new(window.x1, window.y1),
    ];
    if !corners.iter().all(|c| c.within_guard()) {
        return Err(NetworkError::OutsideGuard);
    }
    env.check_level(n)?;
    let mut list = Vec::with_capacity(edges);
    let mut coords = Vec::new();
    let mut boundary = Vec::new();
    for y in window.y0..=window.y1 {
        for x in window.x0..=window.x1 {
            let p = LatticePoint::new(x, y);
            coords.push(p);
            boundary.push(x == window.x0 || x == window.x1 || y == window.y0 || y == window.y1);
            let i = window.index(p);
            if x < window.x1 {
                let e = Edge::horizontal(p);
                list.push((i, i + 1, env.conductance(e, n)?));
            }
            if y < window.y1 {
                let e = Edge::vertical(p);
                list.push((i, i + window.width() as usize + 1, env.conductance(e, n)?));
            }
        }
    }
    let mut net = FiniteNetwork::new(coords.len(), list)?;
    net.coords = Some(coords);
    net.boundary = boundary;
    Ok(net)
}

/// One evaluation of the resistance curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub k: f64,
    pub resistance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsquareDiagnostic {
    pub label: String,
    pub window: Window,
    pub resistance: f64,
    /// Resistance of the same square with the level-`n` obstacles removed.
    pub reference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub level: usize,
    pub k: f64,
    pub bracket: [f64; 2],
    pub tolerance: f64,
    /// Left-right resistance of the level-`n` square without its obstacles.
    pub target: f64,
    pub window: Window,
    pub probes: Vec<Probe>,
    /// Whether the probed resistances are non-increasing in `K`.
    pub monotone: bool,
    pub subsquares: Vec<SubsquareDiagnostic>,
    pub solver: String,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Relative width of the final bracket.
    pub tolerance: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            lo: 1.0,
            hi: 1e12,
        }
    }
}

/// Finds `K_n` such that the left-right resistance of the level-`n` square
/// `O_n + [0, a_n]^2` equals that of the same square with the level-`n`
/// obstacles removed. Resistance is non-increasing in `K_n`, so a log-scale
/// bisection on `[lo, hi]` finds the crossing when one exists.
pub fn calibrate_k(
    env: &Environment,
    n: usize,
    opts: CalibrationOptions,
) -> Result<Calibration, NetworkError> {
    if n == 0 {
        return Err(NetworkError::Invalid(
            "calibration starts at level 1".into(),
        ));
    }
    env.check_level(n)?;
    let side = env.schedule().a(n) as i64;
    let window = Window::square(env.offset(n), side);
    let a1 = window.left_column();
    let a2 = window.right_column();
    let target =
        1.0 / effective_resistance(&export_finite_network(env, n - 1, window)?, &a1, &a2)?.energy;

    let at_k = |k: f64| -> Result<Environment, NetworkError> {
        Ok(env.with_schedule(env.schedule().clone().with_k(n, k))?)
    };
    let base = export_finite_network(&at_k(opts.lo)?, n, window)?;
    let fixed = fixed_mask(base.vertex_count(), &[&a1, &a2]);
    let symbolic = DirichletSystem::new(&base, &fixed)?.symbolic().clone();
    let mut probes = Vec::new();
    let mut probe = |k: f64| -> Result<f64, NetworkError> {
        let net = export_finite_network(&at_k(k)?, n, window)?;
        let sys = DirichletSystem::with_symbolic(&net, &fixed, &symbolic)?;
        let rhs: Vec<f64> = sys
            .free()
            .iter()
            .map(|&x| {
                net.neighbors(x)
                    .iter()
                    .filter(|(y, _)| fixed[*y] && a2.contains(y))
                    .map(|&(_, w)| w)
                    .sum()
            })
            .collect();
        let (sol, _) = sys.solve(&rhs);
        let mut h = vec![0.0; net.vertex_count()];
        for &x in &a2 {
            h[x] = 1.0;
        }
        for (i, &x) in sys.free().iter().enumerate() {
            h[x] = sol[i];
        }
        // The energy is stationary at the minimiser, so solver error enters
        // quadratically; the boundary flux degrades once K makes the bar
        // block ill-conditioned.
        let r = 1.0 / net.energy(&h);
        probes.push(Probe { k, resistance: r });
        Ok(r)
    };
    let (mut lo, mut hi) = (opts.lo, opts.hi);
    let f_lo = probe(lo)? - target;
    let f_hi = probe(hi)? - target;
    if f_lo == 0.0 {
        hi = lo;
    } else if f_hi == 0.0 {
        lo = hi;
    } else if f_lo.signum() == f_hi.signum() {
        return Err(NetworkError::CalibrationInfeasible { lo, hi, probes });
    }
    while hi / lo - 1.0 > opts.tolerance {
        let mid = (lo * hi).sqrt();
        let f = probe(mid)? - target;
        if f == 0.0 {
            lo = mid;
            hi = mid;
        } else if f.signum() == f_lo.signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = (lo * hi).sqrt();
    let mut sorted = probes.clone();
    sorted.sort_by(|a, b| a.k.total_cmp(&b.k));
    let monotone = sorted
        .windows(2)
        .all(|w| w[1].resistance <= w[0].resistance);

    let calibrated = at_k(k)?;
    let beta = env.schedule().beta(n) as i64;
    let half = side / 2;
    let o = env.offset(n);
    let squares = [
        (
            "vertical bar",
            LatticePoint::new(half - beta - beta / 2, half - beta / 2),
        ),
        (
            "horizontal bar",
            LatticePoint::new(half - beta / 2, half - beta - beta / 2),
        ),
    ];
    let mut subsquares = Vec::new();
    for (label, corner) in squares {
        let w = Window::square(o + corner, beta);
        let (l, r) = (w.left_column(), w.right_column());
        let resistance =
            effective_resistance(&export_finite_network(&calibrated, n, w)?, &l, &r)?.r;
        let reference = effective_resistance(&export_finite_network(env, n - 1, w)?, &l, &r)?.r;
        subsquares.push(SubsquareDiagnostic {
            label: label.into(),
            window: w,
            resistance,
            reference,
        });
    }
    Ok(Calibration {
        level: n,
        k,
        bracket: [lo, hi],
        tolerance: opts.tolerance,
        target,
        window,
        probes,
        monotone,
        subsquares,
        solver: "faer sparse Cholesky, Jacobi-scaled, refined with double-double residuals".into(),
    })
}

/// A network with two disjoint vertex sets for the potential-theory checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCase {
    pub net: FiniteNetwork,
    pub a1: Vec<usize>,
    pub a2: Vec<usize>,
}

/// Seeded connected networks: a random recursive spanning tree plus extra
/// random edges, weights log-uniform on `[1e-3, 1e3]`, sizes uniform on
/// `[2, max_vertices]`. `A1` and `A2` are disjoint random sets of size at most
/// a quarter of the vertices (at least one each).
pub fn random_network_suite(seed: u64, count: usize, max_vertices: usize) -> Vec<RandomCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weight = |rng: &mut ChaCha8Rng| 10f64.powf(rng.random_range(-3.0..=3.0));
    (0..count)
        .map(|_| {
            let n = rng.random_range(2..=max_vertices.max(2));
            let mut edges = Vec::new();
            for v in 1..n {
                let u = rng.random_range(0..v);
                edges.push((u, v, weight(&mut rng)));
            }
            let extra = rng.random_range(0..=n);
            for _ in 0..extra {
                let u = rng.random_range(0..n);
                let v = rng.random_range(0..n);
                if u != v {
                    edges.push((u, v, weight(&mut rng)));
                }
            }
            let net = FiniteNetwork::new(n, edges).expect("generated network is valid");
            let mut order: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                order.swap(i, rng.random_range(0..=i));
            }
            let quarter = (n / 4).max(1);
            let k1 = rng.random_range(1..=quarter);
            let k2 = rng.random_range(1..=quarter.min(n - k1));
            let mut a1 = order[..k1].to_vec();
            let mut a2 = order[k1..k1 + k2].to_vec();
            a1.sort_unstable();
            a2.sort_unstable();
            RandomCase { net, a1, a2 }
        })
        .collect()
}
