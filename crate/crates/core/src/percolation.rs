//! Monte Carlo percolation: union-find clustering with winding tracking,
//! independent samples at a single occupation probability, Newman–Ziff
//! sweeps for whole curves, and threshold crossings between sizes.
//!
//! Every trial owns a ChaCha8 stream selected by `(master_seed, trial)`, and
//! sweep results are accumulated as integer counts, so outputs do not depend
//! on how trials are scheduled across threads.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lattice::{
    self, build_honeycomb_with, ghz_transform, to_site_model, Boundary, Graph, LatticeError,
    SiteLattice,
};
use crate::locc::PairState;
use crate::swap;

/// Seed used when the caller does not supply one.
pub const DEFAULT_SEED: u64 = 0x5eed_0f_9e_7a;

/// Rule turning the per-axis wrapping (or spanning) events into the
/// reported spanning fraction.
pub const SPAN_RULE: SpanRule = SpanRule::X;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PercError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("interval [{lo}, {hi}] does not bracket a crossing (f = {f_lo:.3e}, {f_hi:.3e})")]
    NotBracketing { lo: f64, hi: f64, f_lo: f64, f_hi: f64 },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

pub type Result<T> = std::result::Result<T, PercError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Model {
    #[serde(rename = "tri-site")]
    TriSite,
    #[serde(rename = "hex-bond")]
    HexBond,
    #[serde(rename = "square-site")]
    SquareSite,
    /// Site model derived from a wrapped honeycomb by GHZ swapping.
    #[serde(rename = "qep-site")]
    QepSite,
}

impl Model {
    pub fn name(self) -> &'static str {
        match self {
            Model::TriSite => "tri-site",
            Model::HexBond => "hex-bond",
            Model::SquareSite => "square-site",
            Model::QepSite => "qep-site",
        }
    }

    /// Search interval for the threshold bisection.
    pub fn default_bracket(self) -> (f64, f64) {
        match self {
            Model::TriSite | Model::QepSite => (0.4, 0.6),
            Model::HexBond => (0.6, 0.7),
            Model::SquareSite => (0.55, 0.65),
        }
    }
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Model {
    type Err = PercError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tri-site" => Ok(Model::TriSite),
            "hex-bond" => Ok(Model::HexBond),
            "square-site" => Ok(Model::SquareSite),
            "qep-site" => Ok(Model::QepSite),
            other => Err(PercError::BadConfig(format!(
                "unknown lattice '{other}' (expected tri-site, hex-bond, square-site or qep-site)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Occupation {
    Site,
    Bond,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SpanRule {
    X,
    Y,
    Either,
    Both,
}

/// A graph ready for percolation: which elements are random, plus the
/// designated far pair and per-vertex boundary flags.
#[derive(Debug, Clone)]
pub struct PercLattice {
    name: &'static str,
    size: u32,
    boundary: Boundary,
    occupation: Occupation,
    graph: Graph,
    far_pair: (u32, u32),
    edge_flags: Vec<u8>,
}

impl PercLattice {
    pub fn new(name: &'static str, size: u32, boundary: Boundary, occupation: Occupation, graph: Graph) -> Self {
        let far_pair = lattice::far_pair(&graph, boundary);
        let [[x0, x1], [y0, y1]] = graph.extent();
        let edge_flags = graph
            .coords()
            .iter()
            .map(|&[x, y]| {
                (x == x0) as u8 | ((x == x1) as u8) << 1 | ((y == y0) as u8) << 2 | ((y == y1) as u8) << 3
            })
            .collect();
        Self {
            name,
            size,
            boundary,
            occupation,
            graph,
            far_pair,
            edge_flags,
        }
    }

    /// The `size × size` lattice of `model`.
    pub fn build(model: Model, size: u32, boundary: Boundary) -> Result<Self> {
        let pair = PairState::from_phi1(0.5).expect("valid");
        Ok(match model {
            Model::TriSite => Self::from_sites(&SiteLattice::triangular(size, boundary)?, "tri-site"),
            Model::SquareSite => Self::from_sites(&SiteLattice::square(size, boundary)?, "square-site"),
            Model::HexBond => {
                let h = build_honeycomb_with(size, size, pair, boundary)?;
                Self::new("hex-bond", size, boundary, Occupation::Bond, h.bond_graph())
            }
            Model::QepSite => {
                let h = build_honeycomb_with(size, size, pair, boundary)?;
                Self::from_sites(&to_site_model(&ghz_transform(&h), 0.0), "qep-site")
            }
        })
    }

    pub fn from_sites(s: &SiteLattice, name: &'static str) -> Self {
        Self::new(name, s.size(), s.boundary(), Occupation::Site, s.graph().clone())
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn occupation(&self) -> Occupation {
        self.occupation
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn far_pair(&self) -> (u32, u32) {
        self.far_pair
    }

    pub fn num_vertices(&self) -> usize {
        self.graph.num_vertices()
    }

    /// Number of randomly occupied elements (sites or bonds).
    pub fn num_elements(&self) -> usize {
        match self.occupation {
            Occupation::Site => self.graph.num_vertices(),
            Occupation::Bond => self.graph.links().len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Union {
    Merged { root: u32 },
    /// The two ends were already connected; `winding` is the net number of
    /// periods travelled around the closed loop.
    Cycle { root: u32, winding: [i32; 2] },
}

#[derive(Debug, Clone, Copy)]
struct Node {
    parent: u32,
    size: u32,
    // Displacement relative to the parent, exact modulo 2^16.
    offset: [i16; 2],
    flags: u8,
}

/// Disjoint sets with union by size, path compression, and per-vertex
/// displacement (in periods) relative to the parent.
#[derive(Debug, Clone)]
pub struct UnionFind {
    nodes: Vec<Node>,
}

#[inline]
fn add(a: [i16; 2], b: [i16; 2]) -> [i16; 2] {
    [a[0].wrapping_add(b[0]), a[1].wrapping_add(b[1])]
}

#[inline]
fn sub(a: [i16; 2], b: [i16; 2]) -> [i16; 2] {
    [a[0].wrapping_sub(b[0]), a[1].wrapping_sub(b[1])]
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        Self::with_flags(&vec![0; n])
    }

    /// Each root carries the OR of its members' flags.
    pub fn with_flags(flags: &[u8]) -> Self {
        let mut uf = Self { nodes: Vec::with_capacity(flags.len()) };
        uf.reset(flags);
        uf
    }

    /// Back to singletons carrying `flags`.
    pub fn reset(&mut self, flags: &[u8]) {
        self.nodes.clear();
        self.nodes.extend(flags.iter().enumerate().map(|(i, &f)| Node {
            parent: i as u32,
            size: 1,
            offset: [0, 0],
            flags: f,
        }));
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Root of `v` and the displacement of `v` relative to it.
    pub fn find_with_offset(&mut self, v: u32) -> (u32, [i16; 2]) {
        let mut root = v;
        let mut total = [0, 0];
        loop {
            let n = self.nodes[root as usize];
            if n.parent == root {
                break;
            }
            total = add(total, n.offset);
            root = n.parent;
        }
        let mut x = v;
        let mut rest = total;
        while x != root {
            let n = &mut self.nodes[x as usize];
            if n.parent == root {
                break;
            }
            let (next, o) = (n.parent, n.offset);
            n.parent = root;
            n.offset = rest;
            rest = sub(rest, o);
            x = next;
        }
        (root, total)
    }

    pub fn find(&mut self, v: u32) -> u32 {
        self.find_with_offset(v).0
    }

    /// Joins `a` and `b`, where `b`'s image lies `shift` periods from `a`.
    pub fn union(&mut self, a: u32, b: u32, shift: [i8; 2]) -> Union {
        let found = self.find_with_offset(a);
        self.union_from(found, b, shift).0
    }

    /// [`union`](Self::union) with `a` already resolved to `(root, offset)`;
    /// also returns `a`'s resolution afterwards.
    fn union_from(&mut self, (ra, da): (u32, [i16; 2]), b: u32, shift: [i8; 2]) -> (Union, (u32, [i16; 2])) {
        let (rb, db) = self.find_with_offset(b);
        let s = [shift[0] as i16, shift[1] as i16];
        let across = sub(add(da, s), db);
        if ra == rb {
            let u = Union::Cycle {
                root: ra,
                winding: [across[0] as i32, across[1] as i32],
            };
            return (u, (ra, da));
        }
        let (big, small, off) = if self.nodes[ra as usize].size >= self.nodes[rb as usize].size {
            (ra, rb, across)
        } else {
            (rb, ra, [across[0].wrapping_neg(), across[1].wrapping_neg()])
        };
        let sm = self.nodes[small as usize];
        self.nodes[small as usize].parent = big;
        self.nodes[small as usize].offset = off;
        let bg = &mut self.nodes[big as usize];
        bg.size += sm.size;
        bg.flags |= sm.flags;
        let a_now = if big == ra { (ra, da) } else { (rb, sub(da, across)) };
        (Union::Merged { root: big }, a_now)
    }

    /// Size of the set containing `v`.
    pub fn set_size(&mut self, v: u32) -> u32 {
        let r = self.find(v);
        self.nodes[r as usize].size
    }

    pub fn flags(&mut self, v: u32) -> u8 {
        let r = self.find(v);
        self.nodes[r as usize].flags
    }

    #[inline]
    fn root_size(&self, root: u32) -> u32 {
        self.nodes[root as usize].size
    }

    #[inline]
    fn root_flags(&self, root: u32) -> u8 {
        self.nodes[root as usize].flags
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrialConfig {
    /// Linear size `L`.
    pub size: u32,
    pub trials: u32,
    pub master_seed: u64,
    pub boundary: Boundary,
    /// Worker threads; `None` uses the ambient pool. Results do not depend
    /// on this value.
    pub threads: Option<usize>,
}

impl TrialConfig {
    pub fn new(size: u32, trials: u32, master_seed: u64) -> Self {
        Self {
            size,
            trials,
            master_seed,
            boundary: Boundary::Wrapping,
            threads: None,
        }
    }

    pub fn with_boundary(mut self, boundary: Boundary) -> Self {
        self.boundary = boundary;
        self
    }

    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(PercError::BadConfig("trials must be >= 1".into()));
        }
        if self.threads == Some(0) {
            return Err(PercError::BadConfig("threads must be >= 1".into()));
        }
        Ok(())
    }
}

/// The generator for one trial.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

/// Runs `f` on a dedicated pool of `threads` workers, or inline.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> T {
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
            .install(f),
        None => f(),
    }
}

/// Result of one independent sample.
#[derive(Debug, Clone)]
pub struct Clustering {
    occupied: Vec<bool>,
    uf: UnionFind,
    wrap: [bool; 2],
    boundary: Boundary,
}

impl Clustering {
    pub fn is_occupied(&self, v: u32) -> bool {
        self.occupied[v as usize]
    }

    pub fn occupied_count(&self) -> usize {
        self.occupied.iter().filter(|&&o| o).count()
    }

    /// Cluster representative of an occupied vertex.
    pub fn label(&mut self, v: u32) -> Option<u32> {
        self.occupied[v as usize].then(|| self.uf.find(v))
    }

    pub fn connected(&mut self, a: u32, b: u32) -> bool {
        match (self.label(a), self.label(b)) {
            (Some(x), Some(y)) => x == y,
            _ => false,
        }
    }

    /// Sizes of all clusters, largest first.
    pub fn cluster_sizes(&mut self) -> Vec<u32> {
        let mut sizes = Vec::new();
        for v in 0..self.occupied.len() as u32 {
            if self.occupied[v as usize] && self.uf.find(v) == v {
                sizes.push(self.uf.root_size(v));
            }
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        sizes
    }

    pub fn largest(&mut self) -> u32 {
        self.cluster_sizes().first().copied().unwrap_or(0)
    }

    /// Wrapping (torus) or side-to-side spanning (open) per axis.
    pub fn spans(&mut self) -> [bool; 2] {
        match self.boundary {
            Boundary::Wrapping => self.wrap,
            Boundary::Open => {
                let mut s = [false; 2];
                for v in 0..self.occupied.len() as u32 {
                    if self.occupied[v as usize] && self.uf.find(v) == v {
                        let f = self.uf.root_flags(v);
                        s[0] |= f & 0b11 == 0b11;
                        s[1] |= f & 0b1100 == 0b1100;
                    }
                }
                s
            }
        }
    }
}

fn rule(span: [bool; 2], r: SpanRule) -> bool {
    match r {
        SpanRule::X => span[0],
        SpanRule::Y => span[1],
        SpanRule::Either => span[0] || span[1],
        SpanRule::Both => span[0] && span[1],
    }
}

/// Occupies each element independently with probability `p` (one draw per
/// element in index order) and clusters the result.
pub fn sample_and_cluster<R: Rng + ?Sized>(lat: &PercLattice, p: f64, rng: &mut R) -> Clustering {
    let g = &lat.graph;
    let mut uf = UnionFind::with_flags(&lat.edge_flags);
    let mut wrap = [false; 2];
    let mut record = |u: Union| {
        if let Union::Cycle { winding, .. } = u {
            wrap[0] |= winding[0] != 0;
            wrap[1] |= winding[1] != 0;
        }
    };
    let occupied = match lat.occupation {
        Occupation::Site => {
            let occ: Vec<bool> = (0..g.num_vertices()).map(|_| rng.random::<f64>() < p).collect();
            for l in g.links() {
                if occ[l.a as usize] && occ[l.b as usize] {
                    record(uf.union(l.a, l.b, l.shift));
                }
            }
            occ
        }
        Occupation::Bond => {
            let open: Vec<bool> = (0..g.links().len()).map(|_| rng.random::<f64>() < p).collect();
            for (l, _) in g.links().iter().zip(&open).filter(|(_, &o)| o) {
                record(uf.union(l.a, l.b, l.shift));
            }
            vec![true; g.num_vertices()]
        }
    };
    Clustering {
        occupied,
        uf,
        wrap,
        boundary: lat.boundary,
    }
}

/// Observables at one occupation probability.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PercStats {
    pub lattice: String,
    #[serde(rename = "L")]
    pub size: u32,
    pub p: f64,
    pub trials: u32,
    pub spanning_fraction: f64,
    pub stderr: f64,
    /// Fraction of trials in which the far pair share a cluster.
    pub theta_hat: f64,
    pub theta_stderr: f64,
    pub largest_cluster_fraction: f64,
    pub largest_stderr: f64,
    pub seed: u64,
}

fn binomial_stderr(f: f64, n: u32) -> f64 {
    (f * (1.0 - f) / n as f64).max(0.0).sqrt()
}

fn check_p(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(PercError::BadConfig(format!("probability {p} outside [0, 1]")))
    }
}

/// Independent-sample estimate at a single `p`.
pub fn spanning_probability(model: Model, cfg: &TrialConfig, p: f64) -> Result<PercStats> {
    let lat = PercLattice::build(model, cfg.size, cfg.boundary)?;
    sample_stats(&lat, cfg, p)
}

/// [`spanning_probability`] on a prebuilt lattice.
pub fn sample_stats(lat: &PercLattice, cfg: &TrialConfig, p: f64) -> Result<PercStats> {
    cfg.validate()?;
    check_p(p)?;
    let nv = lat.num_vertices().max(1) as f64;
    let (span, theta, lsum, lsq) = with_threads(cfg.threads, || {
        (0..cfg.trials as u64)
            .into_par_iter()
            .map(|t| {
                let mut c = sample_and_cluster(lat, p, &mut trial_rng(cfg.master_seed, t));
                let s = rule(c.spans(), SPAN_RULE) as u64;
                let th = c.connected(lat.far_pair.0, lat.far_pair.1) as u64;
                let big = c.largest() as u64;
                (s, th, big, big * big)
            })
            .reduce(|| (0, 0, 0, 0), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2, a.3 + b.3))
    });
    let n = cfg.trials as f64;
    let spanning_fraction = span as f64 / n;
    let theta_hat = theta as f64 / n;
    let mean = lsum as f64 / n;
    let var = (lsq as f64 / n - mean * mean).max(0.0);
    Ok(PercStats {
        lattice: lat.name.to_string(),
        size: lat.size,
        p,
        trials: cfg.trials,
        spanning_fraction,
        stderr: binomial_stderr(spanning_fraction, cfg.trials),
        theta_hat,
        theta_stderr: binomial_stderr(theta_hat, cfg.trials),
        largest_cluster_fraction: mean / nv,
        largest_stderr: (var / n).sqrt() / nv,
        seed: cfg.master_seed,
    })
}

/// Entangling two far nodes at a given pair state: each triangle of the
/// swapped lattice is occupied with the average conversion probability.
pub fn end_to_end(pair: PairState, cfg: &TrialConfig) -> Result<PercStats> {
    let lat = PercLattice::build(Model::QepSite, cfg.size, cfg.boundary)?;
    sample_stats(&lat, cfg, swap::average_scp(pair))
}

/// Newman–Ziff accumulators: for each number `n` of occupied elements,
/// how many sweeps had first wrapped (per rule), first connected the far
/// pair, and the summed largest cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepCurves {
    pub lattice: &'static str,
    pub size: u32,
    pub trials: u32,
    pub seed: u64,
    pub num_elements: usize,
    pub num_vertices: usize,
    /// First-event histograms indexed by `n`: x, y, either, both, far pair.
    first: [Vec<u64>; 5],
    largest_sum: Vec<u64>,
    largest_sq: Vec<u64>,
}

#[derive(Clone)]
struct SweepAcc {
    first: [Vec<u64>; 5],
    largest_sum: Vec<u64>,
    largest_sq: Vec<u64>,
}

impl SweepAcc {
    fn new(n: usize) -> Self {
        Self {
            first: std::array::from_fn(|_| vec![0; n + 2]),
            largest_sum: vec![0; n + 1],
            largest_sq: vec![0; n + 1],
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.first.iter_mut().zip(&other.first) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.largest_sum.iter_mut().zip(&other.largest_sum).for_each(|(x, y)| *x += y);
        self.largest_sq.iter_mut().zip(&other.largest_sq).for_each(|(x, y)| *x += y);
        self
    }
}

/// Records one sweep into `acc`. Events that never happen land in the
/// overflow slot `n + 1`.
fn sweep_once(lat: &PercLattice, rng: &mut ChaCha8Rng, acc: &mut SweepAcc, uf: &mut UnionFind, order: &mut Vec<u32>, occ: &mut [bool]) {
    let g = &lat.graph;
    let n = lat.num_elements();
    order.clear();
    order.extend(0..n as u32);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i as u32) as usize;
        order.swap(i, j);
    }
    uf.reset(&lat.edge_flags);
    occ.fill(lat.occupation == Occupation::Bond);

    let never = n + 1;
    let mut first = [never; 5];
    let mut largest: u32 = match lat.occupation {
        Occupation::Site => 0,
        Occupation::Bond => (lat.num_vertices() > 0) as u32,
    };
    // Largest-cluster sums are kept as increments at the step where the
    // largest cluster grows.
    let mut recorded = largest;
    acc.largest_sum[0] += largest as u64;
    acc.largest_sq[0] += (largest as u64) * (largest as u64);
    let (fa, fb) = lat.far_pair;
    let wrapping = lat.boundary == Boundary::Wrapping;
    let mut span = [false; 2];

    let handle = |u: Union, uf: &mut UnionFind, span: &mut [bool; 2]| -> Option<u32> {
        match u {
            Union::Merged { root } => {
                if !wrapping {
                    let f = uf.root_flags(root);
                    span[0] |= f & 0b11 == 0b11;
                    span[1] |= f & 0b1100 == 0b1100;
                }
                Some(root)
            }
            Union::Cycle { winding, .. } => {
                if wrapping {
                    span[0] |= winding[0] != 0;
                    span[1] |= winding[1] != 0;
                }
                None
            }
        }
    };

    for (step, &e) in order.iter().enumerate() {
        let k = step + 1;
        let mut merged = false;
        match lat.occupation {
            Occupation::Site => {
                occ[e as usize] = true;
                if !wrapping {
                    let f = uf.root_flags(e);
                    span[0] |= f & 0b11 == 0b11;
                    span[1] |= f & 0b1100 == 0b1100;
                }
                let mut at = (e, [0i16, 0]);
                for &(v, shift) in g.neighbors(e as usize) {
                    if occ[v as usize] {
                        let (u, now) = uf.union_from(at, v, shift);
                        at = now;
                        merged |= handle(u, uf, &mut span).is_some();
                    }
                }
                largest = largest.max(uf.root_size(at.0));
            }
            Occupation::Bond => {
                let l = g.links()[e as usize];
                let u = uf.union(l.a, l.b, l.shift);
                if let Some(root) = handle(u, uf, &mut span) {
                    merged = true;
                    largest = largest.max(uf.root_size(root));
                }
            }
        }
        if first[0] == never && span[0] {
            first[0] = k;
        }
        if first[1] == never && span[1] {
            first[1] = k;
        }
        if first[4] == never
            && (merged || (lat.occupation == Occupation::Site && (e == fa || e == fb)))
            && occ[fa as usize]
            && occ[fb as usize]
            && uf.find(fa) == uf.find(fb)
        {
            first[4] = k;
        }
        if largest != recorded {
            let (new, old) = (largest as u64, recorded as u64);
            acc.largest_sum[k] += new - old;
            acc.largest_sq[k] += new * new - old * old;
            recorded = largest;
        }
    }
    first[2] = first[0].min(first[1]);
    first[3] = first[0].max(first[1]);
    for (h, &f) in acc.first.iter_mut().zip(&first) {
        h[f] += 1;
    }
}

/// Runs `cfg.trials` Newman–Ziff sweeps on `lat`.
pub fn sweep(lat: &PercLattice, cfg: &TrialConfig) -> Result<SweepCurves> {
    cfg.validate()?;
    let n = lat.num_elements();
    let nv = lat.num_vertices();
    let acc = with_threads(cfg.threads, || {
        (0..cfg.trials)
            .into_par_iter()
            .with_min_len(64)
            .fold(
                || {
                    let order: Vec<u32> = Vec::with_capacity(n);
                    (SweepAcc::new(n), UnionFind::with_flags(&lat.edge_flags), order, vec![false; nv])
                },
                |(mut acc, mut uf, mut order, mut occ), t| {
                    let mut rng = trial_rng(cfg.master_seed, t as u64);
                    sweep_once(lat, &mut rng, &mut acc, &mut uf, &mut order, &mut occ);
                    (acc, uf, order, occ)
                },
            )
            .map(|(acc, ..)| acc)
            .reduce(|| SweepAcc::new(n), SweepAcc::merge)
    });
    let prefix = |mut v: Vec<u64>| {
        for k in 1..v.len() {
            v[k] += v[k - 1];
        }
        v
    };
    Ok(SweepCurves {
        lattice: lat.name,
        size: lat.size,
        trials: cfg.trials,
        seed: cfg.master_seed,
        num_elements: n,
        num_vertices: nv,
        first: acc.first,
        largest_sum: prefix(acc.largest_sum),
        largest_sq: prefix(acc.largest_sq),
    })
}

/// Binomial(n, p) probabilities, computed outward from the mode.
pub fn binomial_weights(n: usize, p: f64) -> Vec<f64> {
    let mut w = vec![0.0; n + 1];
    if p <= 0.0 {
        w[0] = 1.0;
        return w;
    }
    if p >= 1.0 {
        w[n] = 1.0;
        return w;
    }
    let mode = (((n + 1) as f64 * p).floor() as usize).min(n);
    let ratio = p / (1.0 - p);
    w[mode] = 1.0;
    for k in mode..n {
        w[k + 1] = w[k] * ratio * (n - k) as f64 / (k + 1) as f64;
        if w[k + 1] < 1e-300 {
            break;
        }
    }
    for k in (1..=mode).rev() {
        w[k - 1] = w[k] / ratio * k as f64 / (n - k + 1) as f64;
        if w[k - 1] < 1e-300 {
            break;
        }
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);
    w
}

impl SweepCurves {
    fn cumulative(&self, which: usize) -> Vec<f64> {
        let t = self.trials as f64;
        let mut run = 0u64;
        self.first[which][..=self.num_elements]
            .iter()
            .map(|&c| {
                run += c;
                run as f64 / t
            })
            .collect()
    }

    fn canonical(&self, which: usize, w: &[f64]) -> f64 {
        self.cumulative(which).iter().zip(w).map(|(r, w)| r * w).sum::<f64>().clamp(0.0, 1.0)
    }

    fn rule_index(r: SpanRule) -> usize {
        match r {
            SpanRule::X => 0,
            SpanRule::Y => 1,
            SpanRule::Either => 2,
            SpanRule::Both => 3,
        }
    }

    /// Spanning (wrapping) probability at `p` under `r`.
    pub fn spanning(&self, p: f64, r: SpanRule) -> f64 {
        self.canonical(Self::rule_index(r), &binomial_weights(self.num_elements, p))
    }

    /// Far-pair connection probability at `p`.
    pub fn theta(&self, p: f64) -> f64 {
        self.canonical(4, &binomial_weights(self.num_elements, p))
    }

    /// All observables at `p`, with the default span rule.
    pub fn at(&self, p: f64) -> PercStats {
        let w = binomial_weights(self.num_elements, p);
        let span = self.canonical(Self::rule_index(SPAN_RULE), &w);
        let theta = self.canonical(4, &w);
        let t = self.trials as f64;
        let (mut mean, mut sq) = (0.0, 0.0);
        for (k, w) in w.iter().enumerate() {
            mean += w * self.largest_sum[k] as f64 / t;
            sq += w * self.largest_sq[k] as f64 / t;
        }
        let nv = self.num_vertices.max(1) as f64;
        PercStats {
            lattice: self.lattice.to_string(),
            size: self.size,
            p,
            trials: self.trials,
            spanning_fraction: span,
            stderr: binomial_stderr(span, self.trials),
            theta_hat: theta,
            theta_stderr: binomial_stderr(theta, self.trials),
            largest_cluster_fraction: mean / nv,
            largest_stderr: ((sq - mean * mean).max(0.0) / t).sqrt() / nv,
            seed: self.seed,
        }
    }
}

/// A crossing point located by bisection.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdEstimate {
    pub lattice: String,
    pub sizes: Vec<u32>,
    pub trials: u32,
    pub seed: u64,
    pub estimate: f64,
    /// Half-width of the final bisection interval.
    pub half_width: f64,
    /// Statistical uncertainty of the crossing from the binomial errors of
    /// both curves and their relative slope.
    pub stat_error: f64,
    pub iterations: u32,
    pub converged: bool,
}

/// Maximum number of bisection steps.
pub const MAX_BISECTIONS: u32 = 60;

/// Bisects `x ↦ R_large(map(x)) − R_small(map(x))` on `bracket`.
pub fn crossing(
    small: &SweepCurves,
    large: &SweepCurves,
    map: impl Fn(f64) -> f64,
    bracket: (f64, f64),
    tol: f64,
) -> Result<ThresholdEstimate> {
    if !(tol > 0.0) || !(bracket.0 < bracket.1) {
        return Err(PercError::BadConfig(format!("bad bracket {bracket:?} or tolerance {tol}")));
    }
    let f = |x: f64| large.spanning(map(x), SPAN_RULE) - small.spanning(map(x), SPAN_RULE);
    let (mut lo, mut hi) = bracket;
    let (f_lo, f_hi) = (f(lo), f(hi));
    if f_lo.signum() == f_hi.signum() || f_lo == 0.0 || f_hi == 0.0 {
        return Err(PercError::NotBracketing { lo, hi, f_lo, f_hi });
    }
    let rising = f_lo < 0.0;
    let mut iterations = 0;
    while (hi - lo) / 2.0 > tol && iterations < MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if (f(mid) < 0.0) == rising {
            lo = mid;
        } else {
            hi = mid;
        }
        iterations += 1;
    }
    let x = 0.5 * (lo + hi);
    let half_width = (hi - lo) / 2.0;
    let (rs, rl) = (small.spanning(map(x), SPAN_RULE), large.spanning(map(x), SPAN_RULE));
    let sigma = (binomial_stderr(rs, small.trials).powi(2) + binomial_stderr(rl, large.trials).powi(2)).sqrt();
    let h = (bracket.1 - bracket.0) * 1e-3;
    let slope = (f((x + h).min(bracket.1)) - f((x - h).max(bracket.0))) / (2.0 * h);
    let stat_error = if slope.abs() > 0.0 { sigma / slope.abs() } else { f64::INFINITY };
    Ok(ThresholdEstimate {
        lattice: small.lattice.to_string(),
        sizes: vec![small.size, large.size],
        trials: small.trials.min(large.trials),
        seed: small.seed,
        estimate: x,
        half_width,
        stat_error,
        iterations,
        converged: half_width <= tol,
    })
}

fn two_sizes(sizes: &[u32]) -> Result<(u32, u32)> {
    let mut s = sizes.to_vec();
    s.sort_unstable();
    s.dedup();
    if s.len() < 2 {
        return Err(PercError::BadConfig("need at least two distinct sizes".into()));
    }
    Ok((s[0], s[s.len() - 1]))
}

/// Sweep curves for each of two sizes. Both sizes share `cfg`'s seed but
/// differ in the lattice, so trials are independent between sizes.
pub fn sweep_pair(model: Model, sizes: &[u32], cfg: &TrialConfig) -> Result<(SweepCurves, SweepCurves)> {
    let (a, b) = two_sizes(sizes)?;
    let small = sweep(&PercLattice::build(model, a, cfg.boundary)?, &TrialConfig { size: a, ..cfg.clone() })?;
    let large = sweep(&PercLattice::build(model, b, cfg.boundary)?, &TrialConfig { size: b, ..cfg.clone() })?;
    Ok((small, large))
}

/// Occupation threshold of `model` from the crossing of the spanning
/// curves of the smallest and largest of `sizes`.
pub fn estimate_threshold(
    model: Model,
    sizes: &[u32],
    cfg: &TrialConfig,
    bracket: (f64, f64),
    tol: f64,
) -> Result<ThresholdEstimate> {
    let (small, large) = sweep_pair(model, sizes, cfg)?;
    crossing(&small, &large, |p| p, bracket, tol)
}

/// Threshold in φ₁ for the swapped lattice, where each site is occupied
/// with the average conversion probability of the pair.
pub fn qep_phi1_crossing(small: &SweepCurves, large: &SweepCurves, bracket: (f64, f64), tol: f64) -> Result<ThresholdEstimate> {
    crossing(
        small,
        large,
        |phi1| swap::average_scp(PairState::from_phi1(phi1.clamp(0.0, 0.5)).expect("clamped")),
        bracket,
        tol,
    )
}

/// Threshold in φ₁ when every bond is converted to a singlet with
/// probability `2φ₁` and the honeycomb is percolated directly.
pub fn cep_phi1_crossing(small: &SweepCurves, large: &SweepCurves, bracket: (f64, f64), tol: f64) -> Result<ThresholdEstimate> {
    crossing(small, large, |phi1| (2.0 * phi1).clamp(0.0, 1.0), bracket, tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(5);
        assert!(matches!(uf.union(0, 1, [0, 0]), Union::Merged { .. }));
        assert!(matches!(uf.union(2, 3, [0, 0]), Union::Merged { .. }));
        assert_eq!(uf.find(0), uf.find(1));
        assert_ne!(uf.find(0), uf.find(2));
        uf.union(1, 3, [0, 0]);
        assert_eq!(uf.set_size(2), 4);
        assert_eq!(uf.set_size(4), 1);
        assert_eq!(uf.union(0, 2, [0, 0]), Union::Cycle { root: uf.find(0), winding: [0, 0] });
    }

    #[test]
    fn ring_winding() {
        // A ring of 4 sites whose last link crosses the period boundary.
        let mut uf = UnionFind::new(4);
        for i in 0..3 {
            uf.union(i, i + 1, [0, 0]);
        }
        match uf.union(3, 0, [1, 0]) {
            Union::Cycle { winding, .. } => assert_eq!(winding, [1, 0]),
            other => panic!("{other:?}"),
        }
        let mut uf = UnionFind::new(4);
        uf.union(3, 0, [1, 0]);
        uf.union(1, 2, [0, 0]);
        uf.union(0, 1, [0, 0]);
        match uf.union(2, 3, [0, 0]) {
            Union::Cycle { winding, .. } => assert_eq!(winding, [1, 0]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn trivial_occupations() {
        let lat = PercLattice::build(Model::TriSite, 8, Boundary::Wrapping).unwrap();
        let mut rng = trial_rng(1, 0);
        let mut full = sample_and_cluster(&lat, 1.0, &mut rng);
        assert_eq!(full.cluster_sizes(), vec![64]);
        assert_eq!(full.spans(), [true, true]);
        let mut empty = sample_and_cluster(&lat, 0.0, &mut rng);
        assert_eq!(empty.occupied_count(), 0);
        assert!(empty.cluster_sizes().is_empty());
        assert_eq!(empty.spans(), [false, false]);
    }

    #[test]
    fn open_full_lattice_spans() {
        for model in [Model::TriSite, Model::SquareSite, Model::HexBond] {
            let lat = PercLattice::build(model, 6, Boundary::Open).unwrap();
            let mut c = sample_and_cluster(&lat, 1.0, &mut trial_rng(3, 0));
            assert_eq!(c.spans(), [true, true], "{model}");
            assert_eq!(c.largest() as usize, lat.num_vertices());
        }
    }

    #[test]
    fn sample_is_reproducible() {
        let lat = PercLattice::build(Model::TriSite, 8, Boundary::Wrapping).unwrap();
        let mut a = sample_and_cluster(&lat, 0.5, &mut trial_rng(42, 7));
        let mut b = sample_and_cluster(&lat, 0.5, &mut trial_rng(42, 7));
        let la: Vec<_> = (0..64).map(|v| a.label(v)).collect();
        let lb: Vec<_> = (0..64).map(|v| b.label(v)).collect();
        assert_eq!(la, lb);
        let cfg = TrialConfig::new(8, 200, 42);
        let s1 = sample_stats(&lat, &cfg.clone().with_threads(Some(1)), 0.5).unwrap();
        let s3 = sample_stats(&lat, &cfg.with_threads(Some(3)), 0.5).unwrap();
        assert_eq!(s1, s3);
    }

    #[test]
    fn binomial_weights_sum_and_mean() {
        for &(n, p) in &[(10usize, 0.3f64), (1000, 0.5), (49152, 0.653), (5, 0.0), (5, 1.0)] {
            let w = binomial_weights(n, p);
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let mean: f64 = w.iter().enumerate().map(|(k, w)| k as f64 * w).sum();
            assert!((mean - n as f64 * p).abs() < 1e-6 * n as f64, "{n} {p} {mean}");
        }
        let w = binomial_weights(4, 0.5);
        for (k, &c) in [1.0, 4.0, 6.0, 4.0, 1.0].iter().enumerate() {
            assert!((w[k] - c / 16.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sweep_endpoints_and_determinism() {
        let lat = PercLattice::build(Model::TriSite, 8, Boundary::Wrapping).unwrap();
        let cfg = TrialConfig::new(8, 100, 9);
        let c = sweep(&lat, &cfg.clone().with_threads(Some(1))).unwrap();
        assert_eq!(c, sweep(&lat, &cfg.clone().with_threads(Some(4))).unwrap());
        assert_eq!(c.at(1.0).spanning_fraction, 1.0);
        assert_eq!(c.at(1.0).theta_hat, 1.0);
        assert_eq!(c.at(1.0).largest_cluster_fraction, 1.0);
        assert_eq!(c.at(0.0).spanning_fraction, 0.0);
        assert_eq!(c.at(0.0).largest_cluster_fraction, 0.0);
    }

    #[test]
    fn sweep_agrees_with_independent_samples() {
        let lat = PercLattice::build(Model::TriSite, 16, Boundary::Wrapping).unwrap();
        let cfg = TrialConfig::new(16, 2000, 5);
        let curves = sweep(&lat, &cfg).unwrap();
        for &p in &[0.45, 0.5, 0.55] {
            let a = curves.at(p);
            let b = sample_stats(&lat, &TrialConfig::new(16, 2000, 6), p).unwrap();
            let tol = 4.0 * (a.stderr.powi(2) + b.stderr.powi(2)).sqrt() + 1e-3;
            assert!((a.spanning_fraction - b.spanning_fraction).abs() < tol, "{p}: {a:?} {b:?}");
            let tol = 4.0 * (a.theta_stderr.powi(2) + b.theta_stderr.powi(2)).sqrt() + 1e-3;
            assert!((a.theta_hat - b.theta_hat).abs() < tol, "{p}");
            let tol = 4.0 * (a.largest_stderr.powi(2) + b.largest_stderr.powi(2)).sqrt() + 1e-3;
            assert!((a.largest_cluster_fraction - b.largest_cluster_fraction).abs() < tol, "{p}");
        }
    }

    #[test]
    fn spanning_is_monotone_in_p() {
        let lat = PercLattice::build(Model::HexBond, 8, Boundary::Wrapping).unwrap();
        let c = sweep(&lat, &TrialConfig::new(8, 300, 1)).unwrap();
        let mut last = 0.0;
        for i in 0..=50 {
            let s = c.at(i as f64 / 50.0);
            assert!(s.spanning_fraction + 1e-12 >= last);
            last = s.spanning_fraction;
        }
    }

    #[test]
    fn qep_lattice_matches_direct_triangular() {
        let q = PercLattice::build(Model::QepSite, 8, Boundary::Wrapping).unwrap();
        let t = PercLattice::build(Model::TriSite, 8, Boundary::Wrapping).unwrap();
        assert_eq!(q.graph().canonical_links(), t.graph().canonical_links());
        assert_eq!(q.far_pair(), t.far_pair());
        assert_eq!(t.far_pair(), (0, 4 * 8 + 4));
    }

    #[test]
    fn small_threshold_brackets() {
        let cfg = TrialConfig::new(0, 400, 11);
        let est = estimate_threshold(Model::TriSite, &[8, 16], &cfg, (0.3, 0.7), 1e-3).unwrap();
        assert!((est.estimate - 0.5).abs() < 0.05, "{est:?}");
        assert!(est.converged);
        assert!(matches!(
            estimate_threshold(Model::TriSite, &[8, 16], &cfg, (0.6, 0.7), 1e-3),
            Err(PercError::NotBracketing { .. })
        ));
        assert!(estimate_threshold(Model::TriSite, &[8], &cfg, (0.3, 0.7), 1e-3).is_err());
    }

    #[test]
    fn model_names_round_trip() {
        for m in [Model::TriSite, Model::HexBond, Model::SquareSite, Model::QepSite] {
            assert_eq!(m.name().parse::<Model>().unwrap(), m);
        }
        assert!("kagome".parse::<Model>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn cluster_sizes_partition_occupied(seed in any::<u64>(), p in 0.0f64..1.0) {
            let lat = PercLattice::build(Model::TriSite, 8, Boundary::Wrapping).unwrap();
            let mut c = sample_and_cluster(&lat, p, &mut trial_rng(seed, 0));
            let total: u32 = c.cluster_sizes().iter().sum();
            prop_assert_eq!(total as usize, c.occupied_count());
            for l in lat.graph().links() {
                if c.is_occupied(l.a) && c.is_occupied(l.b) {
                    prop_assert_eq!(c.label(l.a), c.label(l.b));
                }
            }
        }

        #[test]
        fn union_joins_and_find_is_idempotent(pairs in proptest::collection::vec((0u32..20, 0u32..20), 0..40)) {
            let mut uf = UnionFind::new(20);
            for &(a, b) in &pairs {
                uf.union(a, b, [0, 0]);
                prop_assert_eq!(uf.find(a), uf.find(b));
            }
            for v in 0..20 {
                let r = uf.find(v);
                prop_assert_eq!(uf.find(r), r);
                prop_assert_eq!(uf.find(v), r);
            }
            let roots: std::collections::HashSet<u32> = (0..20).map(|v| uf.find(v)).collect();
            let total: u32 = roots.iter().map(|&r| uf.set_size(r)).sum();
            prop_assert_eq!(total, 20);
        }
    }
}
