//! Honeycomb lattices, their GHZ transformation into a lattice of
//! triangles, the equivalent triangular site model, cat-state planning, and
//! measurement accounting.
//!
//! # Coordinates
//!
//! The honeycomb is drawn as a brick wall: node `(col, row)` with
//! `col ∈ 0..2·width`, `row ∈ 0..height`. Every node has horizontal bonds to
//! its left and right neighbours; the vertical bond goes up from `(col, row)`
//! when `col + row` is even. Those nodes are colored red, the rest blue.
//!
//! ```text
//!   row 2   B───R   B───R
//!               │       │
//!   row 1   R───B───R───B
//!           │       │
//!   row 0   R───B───R───B
//!           col 0   2   (width = 2)
//! ```
//!
//! A `width × height` lattice therefore has `2·width·height` nodes. The
//! `l × l` counting box is `width = l`, `height = 2l`: two hexagon rows per
//! unit of breadth.
//!
//! Qubit slots on a node: 0 = left bond, 1 = right bond, 2 = vertical bond.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::locc::{self, Distilled, GghzState, PairState};
use crate::qstate::{self, pauli, PureState, StateError};
use crate::swap::{self, FUSION_CORRECTIONS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("invalid lattice size: {0}")]
    BadSize(String),
    #[error("fewer than two distinct targets")]
    TooFewTargets,
    #[error("target node {0} is not a corner of any occupied triangle")]
    TargetNotCovered(u32),
    #[error("targets lie in different clusters; the region does not percolate")]
    NotConnected,
    #[error("targets share a cluster but no fusion tree with distinct junction nodes reaches them")]
    JunctionConflict,
    #[error("plan outcome vector has the wrong length")]
    BadOutcomes,
    #[error(transparent)]
    State(#[from] StateError),
}

pub type Result<T> = std::result::Result<T, LatticeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Open,
    Wrapping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Blue,
}

/// An undirected link; `shift` is the periodic cell of `b`'s image
/// relative to `a`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Link {
    pub a: u32,
    pub b: u32,
    pub shift: [i8; 2],
}

impl Link {
    /// Orientation-independent form, for comparing link sets.
    pub fn normalized(&self) -> Link {
        if self.a <= self.b {
            *self
        } else {
            Link {
                a: self.b,
                b: self.a,
                shift: [-self.shift[0], -self.shift[1]],
            }
        }
    }
}

/// Flat adjacency for percolation: vertex coordinates, the undirected link
/// list, and CSR neighbour arrays with per-direction shifts.
#[derive(Debug, Clone, Serialize)]
pub struct Graph {
    coords: Vec<[u32; 2]>,
    links: Vec<Link>,
    #[serde(skip)]
    adj_start: Vec<u32>,
    #[serde(skip)]
    adj: Vec<(u32, [i8; 2])>,
}

impl Graph {
    pub fn new(coords: Vec<[u32; 2]>, links: Vec<Link>) -> Self {
        let n = coords.len();
        let mut degree = vec![0u32; n + 1];
        for l in &links {
            degree[l.a as usize] += 1;
            degree[l.b as usize] += 1;
        }
        let mut adj_start = vec![0u32; n + 1];
        for i in 0..n {
            adj_start[i + 1] = adj_start[i] + degree[i];
        }
        let mut fill = adj_start.clone();
        let mut adj = vec![(0u32, [0i8; 2]); adj_start[n] as usize];
        for l in &links {
            adj[fill[l.a as usize] as usize] = (l.b, l.shift);
            fill[l.a as usize] += 1;
            adj[fill[l.b as usize] as usize] = (l.a, [-l.shift[0], -l.shift[1]]);
            fill[l.b as usize] += 1;
        }
        Self {
            coords,
            links,
            adj_start,
            adj,
        }
    }

    pub fn num_vertices(&self) -> usize {
        self.coords.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn coords(&self) -> &[[u32; 2]] {
        &self.coords
    }

    /// Neighbours of `v` with the shift from `v` to each.
    #[inline]
    pub fn neighbors(&self, v: usize) -> &[(u32, [i8; 2])] {
        &self.adj[self.adj_start[v] as usize..self.adj_start[v + 1] as usize]
    }

    pub fn degree(&self, v: usize) -> usize {
        (self.adj_start[v + 1] - self.adj_start[v]) as usize
    }

    /// Sorted, orientation-normalized link list.
    pub fn canonical_links(&self) -> Vec<Link> {
        let mut v: Vec<Link> = self.links.iter().map(Link::normalized).collect();
        v.sort_by_key(|l| (l.a, l.b, l.shift));
        v
    }

    /// Inclusive `[min, max]` of each coordinate axis.
    pub fn extent(&self) -> [[u32; 2]; 2] {
        let mut e = [[u32::MAX, 0]; 2];
        for c in &self.coords {
            for axis in 0..2 {
                e[axis][0] = e[axis][0].min(c[axis]);
                e[axis][1] = e[axis][1].max(c[axis]);
            }
        }
        e
    }

    /// Vertex at exactly `coord`, if any.
    pub fn find(&self, coord: [u32; 2]) -> Option<u32> {
        self.coords.iter().position(|&c| c == coord).map(|i| i as u32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HoneyNode {
    pub col: u32,
    pub row: u32,
    pub color: Color,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HoneyEdge {
    pub a: u32,
    pub slot_a: u8,
    pub b: u32,
    pub slot_b: u8,
    pub shift: [i8; 2],
}

/// A honeycomb lattice with one identical two-qubit pair on every edge.
#[derive(Debug, Clone, Serialize)]
pub struct HoneycombLattice {
    width: u32,
    height: u32,
    boundary: Boundary,
    pair: PairState,
    nodes: Vec<HoneyNode>,
    edges: Vec<HoneyEdge>,
    #[serde(skip)]
    slots: Vec<[Option<u32>; 3]>,
}

/// Open-boundary honeycomb of `width × height` cells.
pub fn build_honeycomb(width: u32, height: u32, pair: PairState) -> Result<HoneycombLattice> {
    build_honeycomb_with(width, height, pair, Boundary::Open)
}

/// Honeycomb with the chosen boundary. Wrapping needs `width ≥ 2` and an
/// even `height ≥ 2` so the coloring closes consistently.
pub fn build_honeycomb_with(
    width: u32,
    height: u32,
    pair: PairState,
    boundary: Boundary,
) -> Result<HoneycombLattice> {
    if width == 0 || height == 0 {
        return Err(LatticeError::BadSize(format!("{width}x{height}")));
    }
    if boundary == Boundary::Wrapping && (width < 2 || height < 2 || height % 2 != 0) {
        return Err(LatticeError::BadSize(format!(
            "wrapping needs width >= 2 and even height >= 2, got {width}x{height}"
        )));
    }
    let cols = 2 * width;
    let index = |c: u32, r: u32| r * cols + c;
    let mut nodes = Vec::with_capacity((cols * height) as usize);
    for r in 0..height {
        for c in 0..cols {
            let color = if (c + r) % 2 == 0 { Color::Red } else { Color::Blue };
            nodes.push(HoneyNode { col: c, row: r, color });
        }
    }
    let mut edges = Vec::new();
    for r in 0..height {
        for c in 0..cols {
            if c + 1 < cols {
                edges.push(HoneyEdge { a: index(c, r), slot_a: 1, b: index(c + 1, r), slot_b: 0, shift: [0, 0] });
            } else if boundary == Boundary::Wrapping {
                edges.push(HoneyEdge { a: index(c, r), slot_a: 1, b: index(0, r), slot_b: 0, shift: [1, 0] });
            }
            if (c + r) % 2 == 0 {
                if r + 1 < height {
                    edges.push(HoneyEdge { a: index(c, r), slot_a: 2, b: index(c, r + 1), slot_b: 2, shift: [0, 0] });
                } else if boundary == Boundary::Wrapping {
                    edges.push(HoneyEdge { a: index(c, r), slot_a: 2, b: index(c, 0), slot_b: 2, shift: [0, 1] });
                }
            }
        }
    }
    let mut slots = vec![[None; 3]; nodes.len()];
    for (i, e) in edges.iter().enumerate() {
        slots[e.a as usize][e.slot_a as usize] = Some(i as u32);
        slots[e.b as usize][e.slot_b as usize] = Some(i as u32);
    }
    Ok(HoneycombLattice {
        width,
        height,
        boundary,
        pair,
        nodes,
        edges,
        slots,
    })
}

impl HoneycombLattice {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn pair(&self) -> PairState {
        self.pair
    }

    pub fn nodes(&self) -> &[HoneyNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[HoneyEdge] {
        &self.edges
    }

    pub fn node_index(&self, col: u32, row: u32) -> u32 {
        row * 2 * self.width + col
    }

    pub fn degree(&self, node: usize) -> usize {
        self.slots[node].iter().flatten().count()
    }

    /// Edge index on `slot` of `node`.
    pub fn edge_at(&self, node: usize, slot: usize) -> Option<&HoneyEdge> {
        self.slots[node][slot].map(|e| &self.edges[e as usize])
    }

    pub fn coloring_is_proper(&self) -> bool {
        self.edges
            .iter()
            .all(|e| self.nodes[e.a as usize].color != self.nodes[e.b as usize].color)
    }

    /// The bond graph used for bond percolation.
    pub fn bond_graph(&self) -> Graph {
        Graph::new(
            self.nodes.iter().map(|n| [n.col, n.row]).collect(),
            self.edges
                .iter()
                .map(|e| Link { a: e.a, b: e.b, shift: e.shift })
                .collect(),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json_string(self)
    }
}

/// One corner of a triangle: a blue node, the qubit slot there, and the
/// periodic cell of that node relative to the triangle's centre.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Corner {
    pub node: u32,
    pub slot: u8,
    pub shift: [i8; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Triangle {
    /// The measured red node the triangle replaces.
    pub center: u32,
    pub center_col: u32,
    pub center_row: u32,
    pub corners: [Corner; 3],
}

/// Lattice of three-qubit triangles left after GHZ-basis measurements at
/// every interior red node.
#[derive(Debug, Clone, Serialize)]
pub struct TriGhzLattice {
    width: u32,
    height: u32,
    boundary: Boundary,
    triangles: Vec<Triangle>,
    occupied: Vec<bool>,
    #[serde(skip)]
    states: Vec<Option<GghzState>>,
    #[serde(skip)]
    node_triangles: HashMap<u32, Vec<(u32, u8)>>,
    blue_nodes: usize,
}

/// Measures every red node of degree 3 in the GHZ basis. Each such node
/// becomes one triangle on its three blue neighbours; red nodes with a
/// missing bond produce nothing.
pub fn ghz_transform(h: &HoneycombLattice) -> TriGhzLattice {
    let mut triangles = Vec::new();
    for (i, node) in h.nodes.iter().enumerate() {
        if node.color != Color::Red || h.degree(i) < 3 {
            continue;
        }
        let mut corners = [Corner { node: 0, slot: 0, shift: [0, 0] }; 3];
        for (slot, corner) in corners.iter_mut().enumerate() {
            let e = h.edge_at(i, slot).expect("degree 3");
            *corner = if e.a as usize == i {
                Corner { node: e.b, slot: e.slot_b, shift: e.shift }
            } else {
                Corner { node: e.a, slot: e.slot_a, shift: [-e.shift[0], -e.shift[1]] }
            };
        }
        triangles.push(Triangle {
            center: i as u32,
            center_col: node.col,
            center_row: node.row,
            corners,
        });
    }
    let blue_nodes = h.nodes.iter().filter(|n| n.color == Color::Blue).count();
    TriGhzLattice::new(h.width, h.height, h.boundary, triangles, blue_nodes)
}

impl TriGhzLattice {
    fn new(width: u32, height: u32, boundary: Boundary, triangles: Vec<Triangle>, blue_nodes: usize) -> Self {
        let mut node_triangles: HashMap<u32, Vec<(u32, u8)>> = HashMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for (k, c) in tri.corners.iter().enumerate() {
                node_triangles.entry(c.node).or_default().push((t as u32, k as u8));
            }
        }
        let n = triangles.len();
        Self {
            width,
            height,
            boundary,
            triangles,
            occupied: vec![true; n],
            states: vec![None; n],
            node_triangles,
            blue_nodes,
        }
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn blue_node_count(&self) -> usize {
        self.blue_nodes
    }

    pub fn occupied(&self) -> &[bool] {
        &self.occupied
    }

    pub fn state(&self, t: usize) -> Option<&GghzState> {
        self.states[t].as_ref()
    }

    pub fn set_occupied(&mut self, occupied: Vec<bool>) {
        assert_eq!(occupied.len(), self.triangles.len());
        self.occupied = occupied;
    }

    /// `(triangle, corner)` pairs meeting at a blue node.
    pub fn triangles_at(&self, node: u32) -> &[(u32, u8)] {
        self.node_triangles.get(&node).map_or(&[], Vec::as_slice)
    }

    /// Triangles sharing at least one corner with `t`.
    pub fn neighbors(&self, t: usize) -> Vec<u32> {
        let mut out: Vec<u32> = self.triangles[t]
            .corners
            .iter()
            .flat_map(|c| self.triangles_at(c.node).iter().map(|&(u, _)| u))
            .filter(|&u| u as usize != t)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Samples each triangle's swap outcome and distillation: a triangle is
    /// occupied when distillation succeeds, holding the resulting GHZ state.
    pub fn realize<R: Rng + ?Sized>(&mut self, pair: PairState, rng: &mut R) {
        let table = swap::ghz_swap(pair);
        for t in 0..self.triangles.len() {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut chosen = table.outcomes.last().and_then(|o| o.state);
            for o in &table.outcomes {
                acc += o.probability;
                if u < acc {
                    chosen = o.state;
                    break;
                }
            }
            let result = chosen.map(|s| locc::distill_gghz(&s, rng.random()));
            match result.map(|d| d.outcome) {
                Some(Distilled::Ghz(s)) => {
                    self.occupied[t] = true;
                    self.states[t] = Some(s);
                }
                _ => {
                    self.occupied[t] = false;
                    self.states[t] = None;
                }
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json_string(self)
    }
}

fn serde_json_string<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("lattice types serialize")
}

/// Triangular site lattice; one site per triangle (or per lattice point for
/// the direct constructors) with an attached occupation probability.
#[derive(Debug, Clone, Serialize)]
pub struct SiteLattice {
    name: String,
    size: u32,
    boundary: Boundary,
    p0: f64,
    graph: Graph,
    far_pair: (u32, u32),
}

impl SiteLattice {
    fn with_graph(name: &str, size: u32, boundary: Boundary, p0: f64, graph: Graph) -> Self {
        let far_pair = far_pair(&graph, boundary);
        Self {
            name: name.to_string(),
            size,
            boundary,
            p0,
            graph,
            far_pair,
        }
    }

    /// `size × size` triangular lattice with the same indexing and links
    /// as the site model of a `size × size` wrapping honeycomb: site
    /// `(i, r)` sits at index `r·size + i`, rows are offset by half a site
    /// on odd `r`. Wrapping needs an even `size`.
    pub fn triangular(size: u32, boundary: Boundary) -> Result<Self> {
        if size == 0 || (boundary == Boundary::Wrapping && (size < 2 || size % 2 != 0)) {
            return Err(LatticeError::BadSize(format!("triangular size {size}")));
        }
        let n = size;
        let mut coords = Vec::with_capacity((n * n) as usize);
        for r in 0..n {
            for i in 0..n {
                coords.push([i, r]);
            }
        }
        let mut links = Vec::new();
        let wrap = boundary == Boundary::Wrapping;
        let mut add = |i: u32, r: u32, di: i64, dr: i64| {
            let (ti, tr) = (i as i64 + di, r as i64 + dr);
            let (sx, sy) = (ti.div_euclid(n as i64), tr.div_euclid(n as i64));
            if (sx != 0 || sy != 0) && !wrap {
                return;
            }
            let (ti, tr) = (ti.rem_euclid(n as i64) as u32, tr.rem_euclid(n as i64) as u32);
            links.push(Link { a: r * n + i, b: tr * n + ti, shift: [sx as i8, sy as i8] });
        };
        for r in 0..n {
            for i in 0..n {
                add(i, r, 1, 0);
                if r % 2 == 0 {
                    add(i, r, -1, 1);
                    add(i, r, 0, 1);
                } else {
                    add(i, r, 0, 1);
                    add(i, r, 1, 1);
                }
            }
        }
        Ok(Self::with_graph("tri-site", size, boundary, 0.0, Graph::new(coords, links)))
    }

    /// `size × size` square lattice, used as an engine self-check.
    pub fn square(size: u32, boundary: Boundary) -> Result<Self> {
        if size == 0 || (boundary == Boundary::Wrapping && size < 2) {
            return Err(LatticeError::BadSize(format!("square size {size}")));
        }
        let n = size;
        let mut coords = Vec::with_capacity((n * n) as usize);
        let mut links = Vec::new();
        for y in 0..n {
            for x in 0..n {
                coords.push([x, y]);
                let v = y * n + x;
                if x + 1 < n {
                    links.push(Link { a: v, b: v + 1, shift: [0, 0] });
                } else if boundary == Boundary::Wrapping {
                    links.push(Link { a: v, b: y * n, shift: [1, 0] });
                }
                if y + 1 < n {
                    links.push(Link { a: v, b: v + n, shift: [0, 0] });
                } else if boundary == Boundary::Wrapping {
                    links.push(Link { a: v, b: x, shift: [0, 1] });
                }
            }
        }
        Ok(Self::with_graph("square-site", size, boundary, 0.0, Graph::new(coords, links)))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn size(&self) -> u32 {
        self.size
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn p0(&self) -> f64 {
        self.p0
    }

    pub fn with_p0(mut self, p0: f64) -> Self {
        self.p0 = p0;
        self
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn num_sites(&self) -> usize {
        self.graph.num_vertices()
    }

    /// The two sites whose connectivity defines the two-point estimator.
    pub fn far_pair(&self) -> (u32, u32) {
        self.far_pair
    }
}

/// Maximally separated vertices: the lowest corner and the vertex half the
/// extent away on each axis on a torus, the first and last vertex otherwise.
pub fn far_pair(graph: &Graph, boundary: Boundary) -> (u32, u32) {
    let n = graph.num_vertices() as u32;
    if n == 0 {
        return (0, 0);
    }
    match boundary {
        Boundary::Wrapping => {
            let [[x0, x1], [y0, y1]] = graph.extent();
            let origin = graph.find([x0, y0]).unwrap_or(0);
            let target = [x0 + (x1 - x0 + 1) / 2, y0 + (y1 - y0 + 1) / 2];
            (origin, graph.find(target).unwrap_or(n - 1))
        }
        Boundary::Open => (0, n - 1),
    }
}

/// Site model of a triangle lattice: sites are triangles, adjacent when
/// they share a blue node.
pub fn to_site_model(t: &TriGhzLattice, p0: f64) -> SiteLattice {
    let coords = t
        .triangles
        .iter()
        .map(|tri| [tri.center_col / 2, tri.center_row])
        .collect();
    // Node-ordered iteration keeps link order reproducible.
    let mut nodes: Vec<&u32> = t.node_triangles.keys().collect();
    nodes.sort_unstable();
    let mut links = Vec::new();
    for node in nodes {
        let at = &t.node_triangles[node];
        for (x, &(ti, ki)) in at.iter().enumerate() {
            for &(tj, kj) in &at[x + 1..] {
                let si = t.triangles[ti as usize].corners[ki as usize].shift;
                let sj = t.triangles[tj as usize].corners[kj as usize].shift;
                links.push(Link { a: ti, b: tj, shift: [si[0] - sj[0], si[1] - sj[1]] });
            }
        }
    }
    let size = t.width.max(t.height);
    SiteLattice::with_graph("qep-site", size, t.boundary, p0, Graph::new(coords, links))
}

/// A Bell fusion between the qubit of `parent` and the qubit of `child`
/// sitting at the shared `node`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Fusion {
    pub node: u32,
    pub parent: (u32, u8),
    pub child: (u32, u8),
}

/// Ordered Bell fusions followed by σx removals that leave a cat state on
/// exactly the target nodes, one qubit each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MeasurementPlan {
    /// Triangles used, root first, in fusion order.
    pub triangles: Vec<u32>,
    pub fusions: Vec<Fusion>,
    pub removals: Vec<(u32, u8)>,
    /// `(node, triangle, corner)` holding each target's surviving qubit.
    pub targets: Vec<(u32, u32, u8)>,
}

/// Plans a cat state over `targets` inside one cluster of occupied triangles.
///
/// Fusions follow a breadth-first spanning tree in which every blue node is
/// a junction at most once and targets are never junctions; branches that
/// hold no target are pruned.
pub fn plan_cat_region(t: &TriGhzLattice, targets: &[u32]) -> Result<MeasurementPlan> {
    let mut uniq = Vec::new();
    for &x in targets {
        if !uniq.contains(&x) {
            uniq.push(x);
        }
    }
    if uniq.len() < 2 {
        return Err(LatticeError::TooFewTargets);
    }
    let covering = |node: u32| -> Vec<(u32, u8)> {
        t.triangles_at(node)
            .iter()
            .copied()
            .filter(|&(tri, _)| t.occupied[tri as usize])
            .collect()
    };
    for &x in &uniq {
        if covering(x).is_empty() {
            return Err(LatticeError::TargetNotCovered(x));
        }
    }

    // Plain cluster connectivity first, so non-percolation is reported as such.
    let root = covering(uniq[0])[0].0;
    let mut seen = HashSet::from([root]);
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for v in t.neighbors(u as usize) {
            if t.occupied[v as usize] && seen.insert(v) {
                queue.push_back(v);
            }
        }
    }
    if uniq.iter().any(|&x| !covering(x).iter().any(|(tri, _)| seen.contains(tri))) {
        return Err(LatticeError::NotConnected);
    }

    let is_target: HashSet<u32> = uniq.iter().copied().collect();
    let mut order = vec![root];
    let mut visited = HashSet::from([root]);
    let mut used = HashSet::new();
    let mut edges: Vec<Fusion> = Vec::new();
    let mut queue = VecDeque::from([root]);
    while let Some(u) = queue.pop_front() {
        for (k, c) in t.triangles[u as usize].corners.iter().enumerate() {
            if is_target.contains(&c.node) || used.contains(&c.node) {
                continue;
            }
            let next = t
                .triangles_at(c.node)
                .iter()
                .find(|&&(v, _)| t.occupied[v as usize] && !visited.contains(&v));
            if let Some(&(v, kv)) = next {
                used.insert(c.node);
                visited.insert(v);
                order.push(v);
                queue.push_back(v);
                edges.push(Fusion { node: c.node, parent: (u, k as u8), child: (v, kv) });
            }
        }
    }

    // Each target keeps its qubit on the earliest tree triangle touching it.
    let in_tree: HashSet<u32> = order.iter().copied().collect();
    let mut assigned = Vec::with_capacity(uniq.len());
    for &x in &uniq {
        let hit = order.iter().find_map(|&tri| {
            t.triangles[tri as usize]
                .corners
                .iter()
                .position(|c| c.node == x)
                .map(|k| (x, tri, k as u8))
        });
        assigned.push(hit.ok_or(LatticeError::JunctionConflict)?);
    }
    debug_assert!(assigned.iter().all(|(_, tri, _)| in_tree.contains(tri)));

    // Strip target-free leaves until none remain.
    let mut degree: HashMap<u32, usize> = order.iter().map(|&tri| (tri, 0)).collect();
    let mut incident: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, e) in edges.iter().enumerate() {
        *degree.get_mut(&e.parent.0).expect("tree") += 1;
        *degree.get_mut(&e.child.0).expect("tree") += 1;
        incident.entry(e.parent.0).or_default().push(i);
        incident.entry(e.child.0).or_default().push(i);
    }
    let keep: HashSet<u32> = assigned.iter().map(|&(_, tri, _)| tri).collect();
    let mut removed: HashSet<u32> = HashSet::new();
    let mut edge_live = vec![true; edges.len()];
    let mut stack: Vec<u32> = order
        .iter()
        .rev()
        .copied()
        .filter(|tri| degree[tri] <= 1 && !keep.contains(tri))
        .collect();
    while let Some(tri) = stack.pop() {
        if removed.contains(&tri) || degree[&tri] > 1 || order.len() - removed.len() <= 1 {
            continue;
        }
        removed.insert(tri);
        for &i in incident.get(&tri).map_or(&[][..], Vec::as_slice) {
            if !edge_live[i] {
                continue;
            }
            edge_live[i] = false;
            let other = if edges[i].parent.0 == tri { edges[i].child.0 } else { edges[i].parent.0 };
            let d = degree.get_mut(&other).expect("tree");
            *d -= 1;
            if *d <= 1 && !keep.contains(&other) {
                stack.push(other);
            }
        }
    }
    let alive: Vec<u32> = order.into_iter().filter(|tri| !removed.contains(tri)).collect();

    let fusions: Vec<Fusion> = edges
        .into_iter()
        .zip(edge_live)
        .filter_map(|(e, live)| live.then_some(e))
        .collect();
    let mut consumed: HashSet<(u32, u8)> = fusions.iter().flat_map(|f| [f.parent, f.child]).collect();
    consumed.extend(assigned.iter().map(|&(_, tri, k)| (tri, k)));
    let removals = alive
        .iter()
        .flat_map(|&tri| (0..3u8).map(move |k| (tri, k)))
        .filter(|q| !consumed.contains(q))
        .collect();
    Ok(MeasurementPlan {
        triangles: alive,
        fusions,
        removals,
        targets: assigned,
    })
}

/// Statevector execution of one measurement branch of a plan.
#[derive(Debug, Clone)]
pub struct Execution {
    /// Probability of the chosen outcome string.
    pub probability: f64,
    pub state: PureState,
    /// `(triangle, corner)` of each remaining qubit, in register order.
    pub qubits: Vec<(u32, u8)>,
}

impl MeasurementPlan {
    pub fn num_qubits(&self) -> usize {
        3 * self.triangles.len()
    }

    /// Runs the plan on canonical GHZ triangles with the given Bell
    /// outcomes (0..=3 per fusion) and σx outcomes (±1 per removal),
    /// applying the corrections as it goes.
    pub fn execute(&self, bell: &[usize], sigma_x: &[i8]) -> Result<Execution> {
        if bell.len() != self.fusions.len() || sigma_x.len() != self.removals.len() {
            return Err(LatticeError::BadOutcomes);
        }
        let ghz = PureState::cat(3)?;
        let mut state = qstate::tensor(&vec![ghz; self.triangles.len()])?;
        let mut qubits: Vec<(u32, u8)> = self
            .triangles
            .iter()
            .flat_map(|&tri| (0..3u8).map(move |k| (tri, k)))
            .collect();
        let mut group: HashMap<u32, u32> = self.triangles.iter().map(|&t| (t, t)).collect();
        let root = |group: &HashMap<u32, u32>, mut t: u32| {
            while group[&t] != t {
                t = group[&t];
            }
            t
        };
        let pos = |qubits: &[(u32, u8)], q: (u32, u8)| qubits.iter().position(|&x| x == q).expect("live qubit");
        let mut probability = 1.0;

        for (f, &outcome) in self.fusions.iter().zip(bell) {
            let (pa, pb) = (pos(&qubits, f.parent), pos(&qubits, f.child));
            let (lo, hi) = (pa.min(pb), pa.max(pb));
            let mut branches = qstate::project(&state, &qstate::bell_basis(), &[pa, pb])?;
            let branch = branches.swap_remove(outcome.min(3));
            probability *= branch.probability;
            state = branch.state.ok_or(LatticeError::BadOutcomes)?;
            qubits.remove(hi);
            qubits.remove(lo);
            let (ga, gb) = (root(&group, f.parent.0), root(&group, f.child.0));
            let fix = FUSION_CORRECTIONS[outcome.min(3)];
            for (i, &(tri, _)) in qubits.iter().enumerate() {
                if fix.flip_second && root(&group, tri) == gb {
                    state = qstate::apply_operator(&state, &pauli::x(), i)?.1;
                }
            }
            if fix.phase {
                let i = qubits
                    .iter()
                    .position(|&(tri, _)| {
                        let g = root(&group, tri);
                        g == ga || g == gb
                    })
                    .expect("merged cat keeps a qubit");
                state = qstate::apply_operator(&state, &pauli::z(), i)?.1;
            }
            group.insert(gb, ga);
        }

        for (&q, &outcome) in self.removals.iter().zip(sigma_x) {
            let p = pos(&qubits, q);
            let mut branches = qstate::project(&state, &qstate::x_basis(), &[p])?;
            let branch = branches.swap_remove(if outcome < 0 { 1 } else { 0 });
            probability *= branch.probability;
            state = branch.state.ok_or(LatticeError::BadOutcomes)?;
            qubits.remove(p);
            if outcome < 0 {
                let g = root(&group, q.0);
                let i = qubits
                    .iter()
                    .position(|&(tri, _)| root(&group, tri) == g)
                    .expect("cat keeps a qubit");
                state = qstate::apply_operator(&state, &pauli::z(), i)?.1;
            }
        }
        Ok(Execution {
            probability,
            state,
            qubits,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Cep,
    Qep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ResourceCount {
    pub l: u32,
    pub single_qubit: u64,
    pub two_qubit: u64,
    pub three_qubit: u64,
}

/// Measurements needed to entangle two opposite corners of an `l × l` box.
///
/// CEP converts every edge with one single-qubit measurement, then swaps
/// along a shortest path. QEP measures every interior red node in the GHZ
/// basis, distills every triangle with one single-qubit measurement, and
/// executes [`plan_cat_region`] between the two corner nodes.
pub fn count_measurements(l: u32, strategy: Strategy) -> Result<ResourceCount> {
    if l < 2 {
        return Err(LatticeError::BadSize(format!("box size {l} < 2")));
    }
    let pair = PairState::from_phi1(0.5).expect("valid");
    let h = build_honeycomb(l, 2 * l, pair)?;
    let t = ghz_transform(&h);
    let mut corners: Vec<u32> = t.node_triangles.keys().copied().collect();
    corners.sort_unstable();
    let (src, dst) = (corners[0], *corners.last().expect("non-empty box"));
    match strategy {
        Strategy::Cep => {
            let path = shortest_path_len(&h.bond_graph(), src, dst);
            Ok(ResourceCount {
                l,
                single_qubit: h.edges.len() as u64,
                two_qubit: path.saturating_sub(1) as u64,
                three_qubit: 0,
            })
        }
        Strategy::Qep => {
            let plan = plan_cat_region(&t, &[src, dst])?;
            Ok(ResourceCount {
                l,
                single_qubit: (t.len() + plan.removals.len()) as u64,
                two_qubit: plan.fusions.len() as u64,
                three_qubit: t.len() as u64,
            })
        }
    }
}

/// Number of edges on a shortest path.
fn shortest_path_len(g: &Graph, src: u32, dst: u32) -> usize {
    let mut dist = vec![usize::MAX; g.num_vertices()];
    dist[src as usize] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(u) = queue.pop_front() {
        if u == dst {
            break;
        }
        for &(v, _) in g.neighbors(u as usize) {
            if dist[v as usize] == usize::MAX {
                dist[v as usize] = dist[u as usize] + 1;
                queue.push_back(v);
            }
        }
    }
    dist[dst as usize]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair() -> PairState {
        PairState::from_phi1(0.4).unwrap()
    }

    #[test]
    fn unit_cell() {
        let h = build_honeycomb(1, 1, pair()).unwrap();
        assert_eq!(h.nodes().len(), 2);
        assert_eq!(h.nodes()[0].color, Color::Red);
        assert_eq!(h.nodes()[1].color, Color::Blue);
        assert_eq!(h.edges().len(), 1);
    }

    #[test]
    fn two_by_two_counts() {
        // 4 columns × 2 rows: 6 horizontal bonds, 2 vertical (cols 0 and 2).
        let h = build_honeycomb(2, 2, pair()).unwrap();
        assert_eq!(h.nodes().len(), 8);
        assert_eq!(h.edges().len(), 8);
        assert_eq!(h.edges().len() as u32, 3 * 2 * 2 - 2 - 2);
        assert!(h.coloring_is_proper());
    }

    #[test]
    fn wrapping_honeycomb_is_three_regular() {
        let h = build_honeycomb_with(4, 6, pair(), Boundary::Wrapping).unwrap();
        assert!(h.coloring_is_proper());
        assert!((0..h.nodes().len()).all(|i| h.degree(i) == 3));
        assert_eq!(h.edges().len(), 3 * 4 * 6);
        assert!(build_honeycomb_with(4, 5, pair(), Boundary::Wrapping).is_err());
        assert!(build_honeycomb(0, 3, pair()).is_err());
    }

    #[test]
    fn coloring_is_proper_for_many_sizes() {
        for w in 1..6 {
            for h in 1..6 {
                let lat = build_honeycomb(w, h, pair()).unwrap();
                assert!(lat.coloring_is_proper());
                assert!((0..lat.nodes().len()).all(|i| lat.degree(i) <= 3));
                assert_eq!(lat.edges().len() as u32, 3 * w * h - w - h);
            }
        }
    }

    #[test]
    fn interior_red_nodes_become_triangles() {
        // 4×4 open: the top row has no vertical bonds, and each of the
        // other three rows loses one red node at the left or right edge.
        let h = build_honeycomb(4, 4, pair()).unwrap();
        let t = ghz_transform(&h);
        assert_eq!(t.len(), 9);
        let interior = (0..h.nodes().len())
            .filter(|&i| h.nodes()[i].color == Color::Red && h.degree(i) == 3)
            .count();
        assert_eq!(t.len(), interior);
        for tri in t.triangles() {
            let nodes: HashSet<u32> = tri.corners.iter().map(|c| c.node).collect();
            assert_eq!(nodes.len(), 3);
            assert!(tri.corners.iter().all(|c| h.nodes()[c.node as usize].color == Color::Blue));
        }
    }

    #[test]
    fn boundary_red_node_makes_no_triangle() {
        let h = build_honeycomb(1, 1, pair()).unwrap();
        assert!(ghz_transform(&h).is_empty());
        assert_eq!(to_site_model(&ghz_transform(&h), 0.5).num_sites(), 0);
    }

    #[test]
    fn every_node_is_shared_by_at_most_three_triangles() {
        let h = build_honeycomb_with(6, 6, pair(), Boundary::Wrapping).unwrap();
        let t = ghz_transform(&h);
        assert_eq!(t.len(), 36);
        assert_eq!(t.blue_node_count(), 36);
        for (_, at) in t.node_triangles.iter() {
            assert_eq!(at.len(), 3);
        }
    }

    #[test]
    fn site_model_has_triangular_connectivity() {
        let h = build_honeycomb_with(8, 8, pair(), Boundary::Wrapping).unwrap();
        let s = to_site_model(&ghz_transform(&h), 0.7);
        assert_eq!(s.num_sites(), 64);
        assert!((0..64).all(|v| s.graph().degree(v) == 6));
        let direct = SiteLattice::triangular(8, Boundary::Wrapping).unwrap();
        assert_eq!(s.graph().canonical_links(), direct.graph().canonical_links());
        assert_eq!(s.far_pair(), direct.far_pair());
    }

    #[test]
    fn open_site_model_degree_histogram() {
        // 16×16 open honeycomb. Interior red rows are 0..=14; each row
        // drops one red on the left or right edge, so every row keeps 15
        // triangles (225 total). Bulk sites have 6 neighbours.
        let h = build_honeycomb(16, 16, pair()).unwrap();
        let s = to_site_model(&ghz_transform(&h), 0.5);
        assert_eq!(s.num_sites(), 225);
        let mut hist = [0usize; 7];
        for v in 0..s.num_sites() {
            hist[s.graph().degree(v)] += 1;
        }
        let direct = SiteLattice::triangular(15, Boundary::Open).unwrap();
        let mut expected = [0usize; 7];
        for v in 0..direct.num_sites() {
            expected[direct.graph().degree(v)] += 1;
        }
        assert_eq!(hist[6], 13 * 13);
        assert_eq!(hist.iter().sum::<usize>(), 225);
        assert_eq!(hist[6], expected[6]);
    }

    #[test]
    fn filled_triangles_neighbor_empty_ones() {
        // Each triangle shares a corner with six others, so across each of
        // its three sides lies an empty (unmeasured) triangle.
        let h = build_honeycomb_with(6, 6, pair(), Boundary::Wrapping).unwrap();
        let t = ghz_transform(&h);
        for i in 0..t.len() {
            assert_eq!(t.neighbors(i).len(), 6);
            for j in t.neighbors(i) {
                let a: HashSet<u32> = t.triangles()[i].corners.iter().map(|c| c.node).collect();
                let b: HashSet<u32> = t.triangles()[j as usize].corners.iter().map(|c| c.node).collect();
                assert_eq!(a.intersection(&b).count(), 1);
            }
        }
    }

    #[test]
    fn realized_occupation_matches_average_scp() {
        use rand::SeedableRng;
        let h = build_honeycomb_with(40, 40, pair(), Boundary::Wrapping).unwrap();
        let mut t = ghz_transform(&h);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        t.realize(pair(), &mut rng);
        let frac = t.occupied().iter().filter(|&&o| o).count() as f64 / t.len() as f64;
        // 1600 triangles, p0 = 0.704: σ ≈ 0.0114.
        assert!((frac - 0.704).abs() < 0.05, "{frac}");
        for i in 0..t.len() {
            assert_eq!(t.occupied()[i], t.state(i).is_some());
        }
    }

    fn all_branches(plan: &MeasurementPlan) -> Vec<(Vec<usize>, Vec<i8>)> {
        let (nf, nr) = (plan.fusions.len(), plan.removals.len());
        let mut out = Vec::new();
        for code in 0..(4usize.pow(nf as u32) << nr) {
            let bell = (0..nf).map(|i| (code >> (2 * i)) & 3).collect();
            let sx = (0..nr).map(|i| if (code >> (2 * nf + i)) & 1 == 0 { 1 } else { -1 }).collect();
            out.push((bell, sx));
        }
        out
    }

    fn check_plan(t: &TriGhzLattice, plan: &MeasurementPlan) {
        let target_qubits: HashSet<(u32, u8)> = plan.targets.iter().map(|&(_, tri, k)| (tri, k)).collect();
        let cat = PureState::cat(plan.targets.len()).unwrap();
        let mut total = 0.0;
        for (bell, sx) in all_branches(plan) {
            let run = plan.execute(&bell, &sx).unwrap();
            total += run.probability;
            let left: HashSet<(u32, u8)> = run.qubits.iter().copied().collect();
            assert_eq!(left, target_qubits);
            assert!(run.state.fidelity(&cat).unwrap() >= 1.0 - 1e-12);
        }
        assert!((total - 1.0).abs() < 1e-12);
        for &(node, tri, k) in &plan.targets {
            assert_eq!(t.triangles()[tri as usize].corners[k as usize].node, node);
        }
    }

    fn adjacent_pair() -> (TriGhzLattice, u32, u32) {
        let h = build_honeycomb_with(4, 4, pair(), Boundary::Wrapping).unwrap();
        let mut t = ghz_transform(&h);
        let a = 0u32;
        let b = t.neighbors(0)[0];
        let mut occ = vec![false; t.len()];
        occ[a as usize] = true;
        occ[b as usize] = true;
        t.set_occupied(occ);
        (t, a, b)
    }

    #[test]
    fn two_triangles_to_four_qubit_cat() {
        let (t, a, b) = adjacent_pair();
        let shared: Vec<u32> = t.triangles()[a as usize]
            .corners
            .iter()
            .map(|c| c.node)
            .filter(|n| t.triangles()[b as usize].corners.iter().any(|c| c.node == *n))
            .collect();
        let outer: Vec<u32> = [a, b]
            .iter()
            .flat_map(|&x| t.triangles()[x as usize].corners.iter().map(|c| c.node))
            .filter(|n| !shared.contains(n))
            .collect();
        assert_eq!(outer.len(), 4);
        let plan = plan_cat_region(&t, &outer).unwrap();
        assert_eq!(plan.fusions.len(), 1);
        assert!(plan.removals.is_empty());
        check_plan(&t, &plan);
    }

    #[test]
    fn single_triangle_to_bell_pair() {
        let (mut t, a, _) = adjacent_pair();
        let mut occ = vec![false; t.len()];
        occ[a as usize] = true;
        t.set_occupied(occ);
        let c = t.triangles()[a as usize].corners;
        let plan = plan_cat_region(&t, &[c[0].node, c[2].node]).unwrap();
        assert!(plan.fusions.is_empty());
        assert_eq!(plan.removals.len(), 1);
        check_plan(&t, &plan);
    }

    #[test]
    fn three_triangle_chains() {
        let h = build_honeycomb(4, 4, pair()).unwrap();
        let base = ghz_transform(&h);
        let mut checked = 0;
        for a in 0..base.len() as u32 {
            for b in base.neighbors(a as usize) {
                for c in base.neighbors(b as usize) {
                    if c == a || base.neighbors(a as usize).contains(&c) {
                        continue;
                    }
                    let mut t = base.clone();
                    let mut occ = vec![false; t.len()];
                    for x in [a, b, c] {
                        occ[x as usize] = true;
                    }
                    t.set_occupied(occ);
                    let ta = t.triangles()[a as usize].corners[0].node;
                    let tc = t.triangles()[c as usize].corners.iter().map(|k| k.node).max().unwrap();
                    if t.triangles()[b as usize].corners.iter().any(|k| k.node == ta || k.node == tc) {
                        continue;
                    }
                    let plan = match plan_cat_region(&t, &[ta, tc]) {
                        Ok(p) => p,
                        Err(LatticeError::JunctionConflict) => continue,
                        Err(e) => panic!("{e}"),
                    };
                    assert!(plan.num_qubits() <= 9);
                    check_plan(&t, &plan);
                    checked += 1;
                    if checked > 6 {
                        return;
                    }
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn disconnected_targets_fail() {
        let h = build_honeycomb_with(6, 6, pair(), Boundary::Wrapping).unwrap();
        let mut t = ghz_transform(&h);
        let far = (0..t.len() as u32)
            .find(|&x| x != 0 && !t.neighbors(0).contains(&x))
            .unwrap();
        let mut occ = vec![false; t.len()];
        occ[0] = true;
        occ[far as usize] = true;
        t.set_occupied(occ);
        let a = t.triangles()[0].corners[0].node;
        let b = t.triangles()[far as usize]
            .corners
            .iter()
            .map(|c| c.node)
            .find(|n| !t.triangles()[0].corners.iter().any(|c| c.node == *n))
            .unwrap();
        assert_eq!(plan_cat_region(&t, &[a, b]), Err(LatticeError::NotConnected));
        assert_eq!(plan_cat_region(&t, &[a]), Err(LatticeError::TooFewTargets));
    }

    #[test]
    fn counts_leading_coefficients() {
        let cep = count_measurements(64, Strategy::Cep).unwrap();
        let qep = count_measurements(64, Strategy::Qep).unwrap();
        let l2 = 64.0 * 64.0;
        assert!((cep.single_qubit as f64 / l2 - 6.0).abs() <= 0.3);
        assert!((qep.single_qubit as f64 / l2 - 2.0).abs() <= 0.1);
        assert!((qep.three_qubit as f64 / l2 - 2.0).abs() <= 0.1);
        assert!(count_measurements(1, Strategy::Qep).is_err());
    }

    #[test]
    fn counts_strictly_increase() {
        for strategy in [Strategy::Cep, Strategy::Qep] {
            let mut last = count_measurements(2, strategy).unwrap();
            for l in 3..=24 {
                let c = count_measurements(l, strategy).unwrap();
                assert!(c.single_qubit > last.single_qubit, "{strategy:?} l={l}");
                assert!(c.two_qubit > last.two_qubit, "{strategy:?} l={l}");
                if strategy == Strategy::Qep {
                    assert!(c.three_qubit > last.three_qubit);
                }
                assert_eq!(c, count_measurements(l, strategy).unwrap());
                last = c;
            }
        }
    }

    #[test]
    fn lattice_json_has_expected_keys() {
        let h = build_honeycomb(2, 2, pair()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&h.to_json()).unwrap();
        assert_eq!(v["nodes"].as_array().unwrap().len(), 8);
        assert_eq!(v["edges"].as_array().unwrap().len(), 8);
        assert_eq!(v["nodes"][0]["color"], "red");
        let t = ghz_transform(&build_honeycomb(4, 4, pair()).unwrap());
        let v: serde_json::Value = serde_json::from_str(&t.to_json()).unwrap();
        assert_eq!(v["triangles"].as_array().unwrap().len(), 9);
    }
}
