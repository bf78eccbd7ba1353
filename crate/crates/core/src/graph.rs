//! Directed labeled multigraphs with a three-color split structure.
//!
//! Vertices are `0..n` with a color in `{0, 1, 2}`; edges carry stable ids
//! that survive quotients. Reference graphs have every edge going from a
//! color-2 vertex to a color-1 vertex.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partitions::{first_mixed_block, SetPartition};
use crate::Rational;

/// Largest vertex count accepted by the cycle enumeration.
pub const MAX_CYCLE_VERTICES: usize = 24;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("vertex {0} does not exist")]
    NoSuchVertex(usize),
    #[error("color {0} is not in {{0, 1, 2}}")]
    BadColor(u8),
    #[error("partition over {partition} elements does not match {vertices} vertices")]
    SizeMismatch { partition: usize, vertices: usize },
    #[error("partition is not split: block {0:?} mixes colors")]
    NotSplit(Vec<usize>),
    #[error("edge {edge} does not go from a color-2 vertex to a color-1 vertex")]
    NotReference { edge: usize },
    #[error("graph is not connected")]
    Disconnected,
    #[error("edge {edge} has label {label}, labels must be at least 1")]
    BadLabel { edge: usize, label: u32 },
    #[error("graph has {0} vertices, above the cycle-search cap")]
    TooLarge(usize),
    #[error("duplicate identifier {0:?}")]
    DuplicateId(String),
    #[error("unknown vertex identifier {0:?}")]
    UnknownVertexId(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Edge<L> {
    pub id: usize,
    pub src: usize,
    pub dst: usize,
    pub label: L,
}

/// A directed multigraph with split coloring and labeled edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TestGraph<L> {
    colors: Vec<u8>,
    edges: Vec<Edge<L>>,
    next_id: usize,
}

/// A test graph with distinguished input and output vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GraphMonomial<L> {
    pub graph: TestGraph<L>,
    pub input: usize,
    pub output: usize,
}

impl<L> GraphMonomial<L> {
    pub fn new(graph: TestGraph<L>, input: usize, output: usize) -> Result<Self, GraphError> {
        for v in [input, output] {
            if v >= graph.num_vertices() {
                return Err(GraphError::NoSuchVertex(v));
            }
        }
        Ok(Self { graph, input, output })
    }
}

impl<L> Default for TestGraph<L> {
    fn default() -> Self {
        Self { colors: Vec::new(), edges: Vec::new(), next_id: 0 }
    }
}

impl<L> TestGraph<L> {
    pub fn num_vertices(&self) -> usize {
        self.colors.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn colors(&self) -> &[u8] {
        &self.colors
    }

    pub fn color(&self, v: usize) -> u8 {
        self.colors[v]
    }

    pub fn edges(&self) -> &[Edge<L>] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> Option<&Edge<L>> {
        self.edges.iter().find(|e| e.id == id)
    }

    /// Vertices of the given color.
    pub fn vertices_of_color(&self, color: u8) -> Vec<usize> {
        (0..self.colors.len()).filter(|&v| self.colors[v] == color).collect()
    }

    /// Vertex count per color.
    pub fn color_counts(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for &c in &self.colors {
            out[c as usize] += 1;
        }
        out
    }

}

impl<L: Clone> TestGraph<L> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_colors(colors: &[u8]) -> Result<Self, GraphError> {
        let mut g = Self::new();
        for &c in colors {
            g.add_vertex(c)?;
        }
        Ok(g)
    }

    pub fn add_vertex(&mut self, color: u8) -> Result<usize, GraphError> {
        if color > 2 {
            return Err(GraphError::BadColor(color));
        }
        self.colors.push(color);
        Ok(self.colors.len() - 1)
    }

    /// Adds an edge and returns its id.
    pub fn add_edge(&mut self, src: usize, dst: usize, label: L) -> Result<usize, GraphError> {
        let id = self.next_id;
        self.add_edge_with_id(id, src, dst, label)?;
        Ok(id)
    }

    pub fn add_edge_with_id(&mut self, id: usize, src: usize, dst: usize, label: L) -> Result<(), GraphError> {
        for v in [src, dst] {
            if v >= self.colors.len() {
                return Err(GraphError::NoSuchVertex(v));
            }
        }
        if self.edges.iter().any(|e| e.id == id) {
            return Err(GraphError::DuplicateId(id.to_string()));
        }
        self.edges.push(Edge { id, src, dst, label });
        self.next_id = self.next_id.max(id + 1);
        Ok(())
    }

    /// Same shape with labels transformed.
    pub fn map_labels<M, F: FnMut(&Edge<L>) -> M>(&self, mut f: F) -> TestGraph<M> {
        TestGraph {
            colors: self.colors.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge { id: e.id, src: e.src, dst: e.dst, label: f(e) })
                .collect(),
            next_id: self.next_id,
        }
    }

    /// Checks the reference structure: every edge runs from color 2 to color 1.
    pub fn validate_reference(&self) -> Result<(), GraphError> {
        for e in &self.edges {
            if self.colors[e.src] != 2 || self.colors[e.dst] != 1 {
                return Err(GraphError::NotReference { edge: e.id });
            }
        }
        Ok(())
    }

    pub fn component_labels(&self) -> (usize, Vec<usize>) {
        let n = self.colors.len();
        let mut uf = UnionFind::new(n);
        for e in &self.edges {
            uf.union(e.src, e.dst);
        }
        uf.labels()
    }

    pub fn num_components(&self) -> usize {
        self.component_labels().0
    }

    pub fn is_connected(&self) -> bool {
        self.num_components() <= 1
    }

    /// Quotient by a split partition of the vertices.
    pub fn quotient(&self, pi: &SetPartition) -> Result<TestGraph<L>, GraphError> {
        if pi.ground_size() != self.colors.len() {
            return Err(GraphError::SizeMismatch { partition: pi.ground_size(), vertices: self.colors.len() });
        }
        if let Some(block) = first_mixed_block(pi, &self.colors) {
            return Err(GraphError::NotSplit(block));
        }
        Ok(self.quotient_unchecked(pi))
    }

    /// Quotient without the splitness check; each block takes the color of
    /// its least vertex.
    pub(crate) fn quotient_unchecked(&self, pi: &SetPartition) -> TestGraph<L> {
        let mut colors = vec![0u8; pi.num_blocks()];
        for (v, &b) in pi.assignment().iter().enumerate().rev() {
            colors[b] = self.colors[v];
        }
        let edges = self
            .edges
            .iter()
            .map(|e| Edge { id: e.id, src: pi.block_of(e.src), dst: pi.block_of(e.dst), label: e.label.clone() })
            .collect();
        TestGraph { colors, edges, next_id: self.next_id }
    }
}

/// Minimal union-find over `0..n`.
#[derive(Clone, Debug)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }

    /// Number of classes and a dense class index per element.
    pub(crate) fn labels(&mut self) -> (usize, Vec<usize>) {
        let n = self.parent.len();
        let mut map = HashMap::new();
        let mut out = Vec::with_capacity(n);
        for v in 0..n {
            let r = self.find(v);
            let next = map.len();
            out.push(*map.entry(r).or_insert(next));
        }
        (map.len(), out)
    }
}

/// Underlying simple undirected graph with multiplicities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Skeleton {
    pub num_vertices: usize,
    /// Endpoint pairs `(u, v)` with `u <= v`.
    pub edges: Vec<(usize, usize)>,
    pub multiplicity: Vec<usize>,
    /// Ids of the original edges merged into each skeleton edge.
    pub members: Vec<Vec<usize>>,
}

pub fn skeleton<L>(g: &TestGraph<L>) -> Skeleton {
    let mut index: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for e in &g.edges {
        let key = (e.src.min(e.dst), e.src.max(e.dst));
        index.entry(key).or_default().push(e.id);
    }
    let (edges, members): (Vec<_>, Vec<_>) = index.into_iter().unzip();
    let multiplicity = members.iter().map(Vec::len).collect();
    Skeleton { num_vertices: g.colors.len(), edges, multiplicity, members }
}

/// `|V| − c − |E_skeleton|`, zero iff the skeleton is a forest.
pub fn forest_defect<L: Clone>(g: &TestGraph<L>) -> i64 {
    let sk = skeleton(g);
    g.num_vertices() as i64 - g.num_components() as i64 - sk.edges.len() as i64
}

/// Cut edges and simple cycles of a connected multigraph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrongComponentReport {
    pub cut_edges: Vec<usize>,
    pub loops: Vec<usize>,
    pub two_cycles: Vec<(usize, usize)>,
    /// Edge ids in cyclic order.
    pub long_cycles: Vec<Vec<usize>>,
    pub is_pseudo_cactus: bool,
    pub is_cactus: bool,
    pub is_tree: bool,
    pub is_double_tree: bool,
}

impl StrongComponentReport {
    pub fn num_cycles(&self) -> usize {
        self.loops.len() + self.two_cycles.len() + self.long_cycles.len()
    }
}

/// Enumerates every simple cycle as a sequence of edge ids, directions ignored.
pub fn simple_cycles<L>(g: &TestGraph<L>) -> Result<Vec<Vec<usize>>, GraphError> {
    let n = g.colors.len();
    if n > MAX_CYCLE_VERTICES {
        return Err(GraphError::TooLarge(n));
    }
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut cycles = Vec::new();
    for e in &g.edges {
        if e.src == e.dst {
            cycles.push(vec![e.id]);
            continue;
        }
        adj[e.src].push((e.dst, e.id));
        adj[e.dst].push((e.src, e.id));
    }
    let mut seen: BTreeSet<Vec<usize>> = BTreeSet::new();
    for start in 0..n {
        let mut on_path = vec![false; n];
        on_path[start] = true;
        let mut path_edges = Vec::new();
        cycle_dfs(start, start, &adj, &mut on_path, &mut path_edges, &mut |edges: &[usize]| {
            let mut key = edges.to_vec();
            key.sort_unstable();
            if seen.insert(key) {
                cycles.push(edges.to_vec());
            }
        });
    }
    Ok(cycles)
}

fn cycle_dfs(
    start: usize,
    at: usize,
    adj: &[Vec<(usize, usize)>],
    on_path: &mut [bool],
    path_edges: &mut Vec<usize>,
    emit: &mut dyn FnMut(&[usize]),
) {
    for &(next, eid) in &adj[at] {
        if path_edges.last() == Some(&eid) {
            continue;
        }
        if next == start && !path_edges.is_empty() {
            if path_edges.contains(&eid) {
                continue;
            }
            path_edges.push(eid);
            emit(path_edges);
            path_edges.pop();
        } else if next > start && !on_path[next] {
            on_path[next] = true;
            path_edges.push(eid);
            cycle_dfs(start, next, adj, on_path, path_edges, emit);
            path_edges.pop();
            on_path[next] = false;
        }
    }
}

/// Edges whose removal increases the number of components.
pub fn cut_edges<L: Clone>(g: &TestGraph<L>) -> Vec<usize> {
    let base = g.num_components();
    let n = g.colors.len();
    g.edges
        .iter()
        .filter(|e| e.src != e.dst)
        .filter(|e| {
            let mut uf = UnionFind::new(n);
            for f in g.edges.iter().filter(|f| f.id != e.id) {
                uf.union(f.src, f.dst);
            }
            uf.labels().0 > base
        })
        .map(|e| e.id)
        .collect()
}

/// Classifies a connected multigraph into the cactus family.
pub fn classify<L: Clone>(g: &TestGraph<L>) -> Result<StrongComponentReport, GraphError> {
    if !g.is_connected() {
        return Err(GraphError::Disconnected);
    }
    let cycles = simple_cycles(g)?;
    let cut = cut_edges(g);
    let mut cover: HashMap<usize, usize> = g.edges.iter().map(|e| (e.id, 0)).collect();
    for c in &cycles {
        for id in c {
            *cover.get_mut(id).expect("cycle edges exist") += 1;
        }
    }
    let mut loops = Vec::new();
    let mut two_cycles = Vec::new();
    let mut long_cycles = Vec::new();
    for c in cycles {
        match c.len() {
            1 => loops.push(c[0]),
            2 => two_cycles.push((c[0].min(c[1]), c[0].max(c[1]))),
            _ => long_cycles.push(c),
        }
    }
    two_cycles.sort_unstable();
    long_cycles.sort();
    let is_pseudo_cactus = cover.values().all(|&k| k <= 1);
    let is_cactus = cover.values().all(|&k| k == 1);
    let no_cycles = cover.values().all(|&k| k == 0);
    let is_double_tree = is_cactus && loops.is_empty() && long_cycles.is_empty();
    Ok(StrongComponentReport {
        cut_edges: cut,
        loops,
        two_cycles,
        long_cycles,
        is_pseudo_cactus,
        is_cactus,
        is_tree: no_cycles,
        is_double_tree,
    })
}

/// Edge label in an auxiliary graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AuxLabel {
    W,
    X,
}

/// Internal vertices and edges replacing one reference edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Niche {
    pub reference_edge: usize,
    pub internal: Vec<usize>,
    pub w_edges: Vec<usize>,
    pub x_edges: Vec<usize>,
}

/// The graph in which each reference edge labeled `n` is replaced by `n`
/// two-step paths through internal color-0 vertices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AuxiliaryGraph {
    pub graph: TestGraph<AuxLabel>,
    /// Reference vertices keep their indices `0..num_reference`.
    pub num_reference: usize,
    pub niches: Vec<Niche>,
    /// Involution pairing each w-edge id with its x-edge id and back.
    pub companion: BTreeMap<usize, usize>,
}

pub fn build_auxiliary(t: &TestGraph<u32>) -> Result<AuxiliaryGraph, GraphError> {
    t.validate_reference()?;
    let mut graph = TestGraph::with_colors(t.colors())?;
    let mut niches = Vec::new();
    let mut companion = BTreeMap::new();
    for e in t.edges() {
        if e.label < 1 {
            return Err(GraphError::BadLabel { edge: e.id, label: e.label });
        }
        let mut niche = Niche { reference_edge: e.id, internal: Vec::new(), w_edges: Vec::new(), x_edges: Vec::new() };
        for _ in 0..e.label {
            let u = graph.add_vertex(0)?;
            let w = graph.add_edge(u, e.dst, AuxLabel::W)?;
            let x = graph.add_edge(e.src, u, AuxLabel::X)?;
            niche.internal.push(u);
            niche.w_edges.push(w);
            niche.x_edges.push(x);
            companion.insert(w, x);
            companion.insert(x, w);
        }
        niches.push(niche);
    }
    Ok(AuxiliaryGraph { graph, num_reference: t.num_vertices(), niches, companion })
}

/// The exponent `η` and its two-part decomposition.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EtaValue {
    pub eta: Rational,
    pub eta1: Rational,
    pub eta2: Rational,
}

fn half(n: usize) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(2))
}

impl AuxiliaryGraph {
    fn check_split(&self, pi: &SetPartition) -> Result<(), GraphError> {
        let n = self.graph.num_vertices();
        if pi.ground_size() != n {
            return Err(GraphError::SizeMismatch { partition: pi.ground_size(), vertices: n });
        }
        match first_mixed_block(pi, self.graph.colors()) {
            Some(b) => Err(GraphError::NotSplit(b)),
            None => Ok(()),
        }
    }

    pub fn num_reference_edges(&self) -> usize {
        self.niches.len()
    }

    pub fn total_label(&self) -> usize {
        self.niches.iter().map(|n| n.internal.len()).sum()
    }

    /// Number of components of the w-part of the quotient (colors 0 and 1,
    /// w-edges only).
    fn w_components(&self, pi: &SetPartition) -> (usize, Vec<Option<usize>>) {
        let k = pi.num_blocks();
        let colors = self.graph.colors();
        let mut uf = UnionFind::new(k);
        for e in self.graph.edges().iter().filter(|e| e.label == AuxLabel::W) {
            uf.union(pi.block_of(e.src), pi.block_of(e.dst));
        }
        let mut in_w = vec![false; k];
        for (v, &c) in colors.iter().enumerate() {
            if c != 2 {
                in_w[pi.block_of(v)] = true;
            }
        }
        let mut roots = BTreeSet::new();
        let mut comp = vec![None; k];
        for b in 0..k {
            if in_w[b] {
                let r = uf.find(b);
                roots.insert(r);
                comp[b] = Some(r);
            }
        }
        (roots.len(), comp)
    }

    /// `η(π) = |V^π| − 1 − |E|/2 − Σ n(e)/2`.
    pub fn eta(&self, pi: &SetPartition) -> Result<EtaValue, GraphError> {
        self.check_split(pi)?;
        let e = self.num_reference_edges();
        let total = self.total_label();
        let blocks = pi.num_blocks();
        let eta = Rational::from_integer(BigInt::from(blocks as i64 - 1)) - half(e) - half(total);
        let (c, _) = self.w_components(pi);
        let colors = self.graph.colors();
        let mut block_color = vec![0u8; blocks];
        for (v, &b) in pi.assignment().iter().enumerate() {
            block_color[b] = colors[v];
        }
        let vw = block_color.iter().filter(|&&c| c != 2).count();
        let v2 = blocks - vw;
        let eta1 = Rational::from_integer(BigInt::from(vw as i64 - c as i64)) - half(total);
        let eta2 = Rational::from_integer(BigInt::from(c as i64 + v2 as i64 - 1)) - half(e);
        Ok(EtaValue { eta, eta1, eta2 })
    }

    /// Partition of the reference vertices: color-1 vertices merge when
    /// connected in the w-part of the quotient, color-2 vertices follow `π`.
    pub fn rho_tilde(&self, pi: &SetPartition) -> Result<SetPartition, GraphError> {
        self.check_split(pi)?;
        let (_, comp) = self.w_components(pi);
        let colors = self.graph.colors();
        let keys: Vec<(u8, usize)> = (0..self.num_reference)
            .map(|v| match colors[v] {
                1 => (1, comp[pi.block_of(v)].expect("color-1 blocks lie in the w-part")),
                c => (c, pi.block_of(v)),
            })
            .collect();
        Ok(SetPartition::from_assignment(&keys))
    }
}

/// JSON form of a vertex.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct VertexJson {
    pub id: serde_json::Value,
    pub color: u8,
}

/// JSON form of an edge.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct EdgeJson {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<serde_json::Value>,
    pub src: serde_json::Value,
    pub dst: serde_json::Value,
    pub label: String,
}

/// JSON form of a test graph with string labels.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct GraphJson {
    pub vertices: Vec<VertexJson>,
    pub edges: Vec<EdgeJson>,
}

fn id_key(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

impl GraphJson {
    pub fn to_graph(&self) -> Result<TestGraph<String>, GraphError> {
        let mut g = TestGraph::new();
        let mut index = HashMap::new();
        for v in &self.vertices {
            let key = id_key(&v.id);
            if index.contains_key(&key) {
                return Err(GraphError::DuplicateId(key));
            }
            index.insert(key, g.add_vertex(v.color)?);
        }
        let lookup = |v: &serde_json::Value| {
            let key = id_key(v);
            index.get(&key).copied().ok_or(GraphError::UnknownVertexId(key))
        };
        for (k, e) in self.edges.iter().enumerate() {
            let (src, dst) = (lookup(&e.src)?, lookup(&e.dst)?);
            match &e.id {
                Some(serde_json::Value::Number(n)) if n.as_u64().is_some() => {
                    let id = n.as_u64().expect("checked") as usize;
                    g.add_edge_with_id(id, src, dst, e.label.clone())?;
                }
                _ => {
                    let id = g.edges().iter().map(|e| e.id + 1).max().unwrap_or(0).max(k);
                    g.add_edge_with_id(id, src, dst, e.label.clone())?;
                }
            }
        }
        Ok(g)
    }

    pub fn from_graph(g: &TestGraph<String>) -> Self {
        Self {
            vertices: g.colors().iter().enumerate().map(|(v, &c)| VertexJson { id: v.into(), color: c }).collect(),
            edges: g
                .edges()
                .iter()
                .map(|e| EdgeJson { id: Some(e.id.into()), src: e.src.into(), dst: e.dst.into(), label: e.label.clone() })
                .collect(),
        }
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn multisets(items: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..items {
        cur.push(i);
        multisets(items, k, i, cur, out);
        cur.pop();
    }
}

/// Connected reference shapes with `1..=max_edges` edges, one per
/// isomorphism class. Color-2 vertices come first.
pub fn reference_shapes(max_edges: usize) -> Vec<TestGraph<()>> {
    let mut out = Vec::new();
    for e in 1..=max_edges {
        for v2 in 1..=e {
            for v1 in 1..=e {
                if v1 + v2 > e + 1 {
                    continue;
                }
                let pairs: Vec<(usize, usize)> = (0..v2).flat_map(|s| (0..v1).map(move |t| (s, t))).collect();
                let mut choices = Vec::new();
                multisets(pairs.len(), e, 0, &mut Vec::new(), &mut choices);
                let (p2, p1) = (permutations(v2), permutations(v1));
                let mut seen = BTreeSet::new();
                for choice in choices {
                    let edges: Vec<(usize, usize)> = choice.iter().map(|&i| pairs[i]).collect();
                    let canon = p2
                        .iter()
                        .flat_map(|a| p1.iter().map(move |b| (a, b)))
                        .map(|(a, b)| {
                            let mut m: Vec<(usize, usize)> = edges.iter().map(|&(s, t)| (a[s], b[t])).collect();
                            m.sort_unstable();
                            m
                        })
                        .min()
                        .expect("nonempty permutation set");
                    if !seen.insert(canon.clone()) {
                        continue;
                    }
                    let mut colors = vec![2u8; v2];
                    colors.extend(std::iter::repeat_n(1u8, v1));
                    let mut g = TestGraph::with_colors(&colors).expect("valid colors");
                    for (s, t) in canon {
                        g.add_edge(s, v2 + t, ()).expect("vertices exist");
                    }
                    if g.is_connected() {
                        out.push(g);
                    }
                }
            }
        }
    }
    out
}
