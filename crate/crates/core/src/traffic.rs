//! Traces of test graphs in families of block-rectangular matrices.
//!
//! Indices `[N]` are split into three consecutive blocks of sizes
//! `N0, N1, N2`. A labeled matrix of shape `N_target × N_source` stands for
//! its zero-padded embedding into an `N × N` matrix.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphMonomial, TestGraph};
use crate::partitions::set_partitions_unchecked;
use crate::Rational;

/// Largest vertex count accepted by the Möbius check.
pub const MAX_MOEBIUS_VERTICES: usize = 8;
/// Largest per-color injection count accepted by exact `δ⁰`.
pub const MAX_DELTA0_INJECTIONS: u128 = 1_000_000;
/// Largest number of maps enumerated by the brute-force fallback.
pub const MAX_ENUMERATED_MAPS: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("block sizes must be positive, got ({0}, {1}, {2})")]
    BadLayout(usize, usize, usize),
    #[error("block index {0} is not in {{0, 1, 2}}")]
    BadBlock(u8),
    #[error("label {0:?} has no matrix in the family")]
    UnresolvedLabel(String),
    #[error("matrix for {label:?} is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    DimensionMismatch { label: String, rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    #[error("graph with {0} vertices exceeds the size guard")]
    TooLarge(usize),
    #[error("enumeration of {0:e} maps exceeds the size guard")]
    TooManyMaps(f64),
    #[error("trials must be at least {min}, got {got}")]
    TooFewTrials { min: usize, got: usize },
    #[error("sampler is degenerate: {0}")]
    Degenerate(String),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Sizes of the three index blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BlockLayout {
    sizes: [usize; 3],
}

impl BlockLayout {
    pub fn new(n0: usize, n1: usize, n2: usize) -> Result<Self, TrafficError> {
        if n0 == 0 || n1 == 0 || n2 == 0 {
            return Err(TrafficError::BadLayout(n0, n1, n2));
        }
        Ok(Self { sizes: [n0, n1, n2] })
    }

    pub fn n(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    pub fn size(&self, block: u8) -> usize {
        self.sizes[block as usize]
    }

    pub fn offset(&self, block: u8) -> usize {
        self.sizes[..block as usize].iter().sum()
    }

    pub fn range(&self, block: u8) -> std::ops::Range<usize> {
        let o = self.offset(block);
        o..o + self.size(block)
    }

    /// Block containing a global index.
    pub fn block_of(&self, index: usize) -> u8 {
        if index < self.sizes[0] {
            0
        } else if index < self.sizes[0] + self.sizes[1] {
            1
        } else {
            2
        }
    }

    /// `ψ_b = N_b / N` exactly.
    pub fn psi(&self, block: u8) -> Rational {
        Rational::new(BigInt::from(self.size(block)), BigInt::from(self.n()))
    }

    pub fn psi_f64(&self, block: u8) -> f64 {
        self.size(block) as f64 / self.n() as f64
    }
}

/// Scalars usable in traces: integers, big integers, rationals and floats.
pub trait Ring:
    nalgebra::Scalar + Zero + One + nalgebra::ClosedAddAssign + nalgebra::ClosedMulAssign + Send + Sync
{
}

impl<T> Ring for T where
    T: nalgebra::Scalar + Zero + One + nalgebra::ClosedAddAssign + nalgebra::ClosedMulAssign + Send + Sync
{
}

/// A rectangular matrix placed in block `(target, source)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrix<T: Ring> {
    pub matrix: DMatrix<T>,
    pub source: u8,
    pub target: u8,
}

/// Association from labels to block-rectangular matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledMatrixFamily<T: Ring> {
    layout: BlockLayout,
    entries: BTreeMap<String, LabeledMatrix<T>>,
}

impl<T: Ring> LabeledMatrixFamily<T> {
    pub fn new(layout: BlockLayout) -> Self {
        Self { layout, entries: BTreeMap::new() }
    }

    pub fn layout(&self) -> BlockLayout {
        self.layout
    }

    /// Adds a matrix of shape `N_target × N_source`.
    pub fn insert(
        &mut self,
        label: impl Into<String>,
        matrix: DMatrix<T>,
        source: u8,
        target: u8,
    ) -> Result<(), TrafficError> {
        let label = label.into();
        for b in [source, target] {
            if b > 2 {
                return Err(TrafficError::BadBlock(b));
            }
        }
        let (er, ec) = (self.layout.size(target), self.layout.size(source));
        if matrix.nrows() != er || matrix.ncols() != ec {
            return Err(TrafficError::DimensionMismatch {
                label,
                rows: matrix.nrows(),
                cols: matrix.ncols(),
                expected_rows: er,
                expected_cols: ec,
            });
        }
        self.entries.insert(label, LabeledMatrix { matrix, source, target });
        Ok(())
    }

    pub fn get(&self, label: &str) -> Result<&LabeledMatrix<T>, TrafficError> {
        self.entries.get(label).ok_or_else(|| TrafficError::UnresolvedLabel(label.to_string()))
    }

    pub fn labels(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    /// Entry of the embedded matrix at global indices `(i, j)`.
    fn global_entry<'a>(&self, m: &'a LabeledMatrix<T>, i: usize, j: usize) -> Option<&'a T> {
        let (tr, sr) = (self.layout.range(m.target), self.layout.range(m.source));
        if tr.contains(&i) && sr.contains(&j) {
            Some(&m.matrix[(i - tr.start, j - sr.start)])
        } else {
            None
        }
    }
}

/// Places `a` in block `(target, source)` of an `N × N` zero matrix.
pub fn embed<T: Ring>(a: &DMatrix<T>, target: u8, source: u8, layout: &BlockLayout) -> Result<DMatrix<T>, TrafficError> {
    let (er, ec) = (layout.size(target), layout.size(source));
    if a.nrows() != er || a.ncols() != ec {
        return Err(TrafficError::DimensionMismatch {
            label: String::new(),
            rows: a.nrows(),
            cols: a.ncols(),
            expected_rows: er,
            expected_cols: ec,
        });
    }
    let n = layout.n();
    let mut out = DMatrix::zeros(n, n);
    out.view_mut((layout.offset(target), layout.offset(source)), (er, ec)).copy_from(a);
    Ok(out)
}

/// Block `(target, source)` of an `N × N` matrix.
pub fn extract_block<T: Ring>(m: &DMatrix<T>, target: u8, source: u8, layout: &BlockLayout) -> DMatrix<T> {
    m.view((layout.offset(target), layout.offset(source)), (layout.size(target), layout.size(source))).into_owned()
}

/// Block each vertex is forced into by its incident labels.
enum Forced {
    Free,
    Block(u8),
    Conflict,
}

fn forced_blocks<T: Ring, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<Vec<Forced>, TrafficError> {
    let mut out: Vec<Forced> = (0..g.num_vertices()).map(|_| Forced::Free).collect();
    let mut force = |v: usize, b: u8| {
        out[v] = match out[v] {
            Forced::Free => Forced::Block(b),
            Forced::Block(c) if c == b => Forced::Block(b),
            _ => Forced::Conflict,
        };
    };
    for e in g.edges() {
        let m = family.get(e.label.as_ref())?;
        force(e.dst, m.target);
        force(e.src, m.source);
    }
    Ok(out)
}

/// Enumerates maps `φ` with `φ(v) ∈ domains[v]` and sums edge products.
struct Enumerator<'a, T: Ring, L> {
    graph: &'a TestGraph<L>,
    family: &'a LabeledMatrixFamily<T>,
    order: Vec<usize>,
    closing: Vec<Vec<usize>>,
    domains: Vec<Vec<usize>>,
    injective: bool,
}

impl<'a, T: Ring, L: AsRef<str>> Enumerator<'a, T, L> {
    fn new(
        graph: &'a TestGraph<L>,
        family: &'a LabeledMatrixFamily<T>,
        domains: Vec<Vec<usize>>,
        injective: bool,
    ) -> Result<Self, TrafficError> {
        for e in graph.edges() {
            family.get(e.label.as_ref())?;
        }
        let n = graph.num_vertices();
        let mut adj = vec![Vec::new(); n];
        for e in graph.edges() {
            adj[e.src].push(e.dst);
            adj[e.dst].push(e.src);
        }
        let mut order = Vec::with_capacity(n);
        let mut seen = vec![false; n];
        let mut starts: Vec<usize> = (0..n).collect();
        starts.sort_by_key(|&v| domains[v].len());
        for s in starts {
            if seen[s] {
                continue;
            }
            seen[s] = true;
            let mut queue = std::collections::VecDeque::from([s]);
            while let Some(v) = queue.pop_front() {
                order.push(v);
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        let mut position = vec![0; n];
        for (k, &v) in order.iter().enumerate() {
            position[v] = k;
        }
        let mut closing = vec![Vec::new(); n];
        for (k, e) in graph.edges().iter().enumerate() {
            closing[position[e.src].max(position[e.dst])].push(k);
        }
        Ok(Self { graph, family, order, closing, domains, injective })
    }

    fn count(&self) -> f64 {
        self.domains.iter().map(|d| d.len() as f64).product()
    }

    fn sum(&self) -> T {
        let n = self.graph.num_vertices();
        let mut phi = vec![usize::MAX; n];
        let size = self.domains.iter().flatten().max().map_or(0, |m| m + 1);
        let mut used = vec![false; size];
        let mut total = T::zero();
        self.rec(0, T::one(), &mut phi, &mut used, &mut total);
        total
    }

    fn rec(&self, depth: usize, partial: T, phi: &mut [usize], used: &mut [bool], total: &mut T) {
        if depth == self.order.len() {
            *total += partial;
            return;
        }
        let v = self.order[depth];
        for &i in &self.domains[v] {
            if self.injective && used[i] {
                continue;
            }
            phi[v] = i;
            let mut value = partial.clone();
            let mut zero = false;
            for &k in &self.closing[depth] {
                let e = &self.graph.edges()[k];
                let m = self.family.get(e.label.as_ref()).expect("labels checked at construction");
                match self.family.global_entry(m, phi[e.dst], phi[e.src]) {
                    Some(x) if !x.is_zero() => value *= x.clone(),
                    _ => {
                        zero = true;
                        break;
                    }
                }
            }
            if zero {
                continue;
            }
            if self.injective {
                used[i] = true;
            }
            self.rec(depth + 1, value, phi, used, total);
            if self.injective {
                used[i] = false;
            }
        }
        phi[v] = usize::MAX;
    }
}

/// Domains from label-forced blocks; `None` when constraints conflict.
fn label_domains<T: Ring, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<Option<Vec<Vec<usize>>>, TrafficError> {
    let layout = family.layout();
    let mut out = Vec::with_capacity(g.num_vertices());
    for f in forced_blocks(g, family)? {
        match f {
            Forced::Free => out.push((0..layout.n()).collect()),
            Forced::Block(b) => out.push(layout.range(b).collect()),
            Forced::Conflict => return Ok(None),
        }
    }
    Ok(Some(out))
}

fn guard(count: f64) -> Result<(), TrafficError> {
    if count > MAX_ENUMERATED_MAPS {
        return Err(TrafficError::TooManyMaps(count));
    }
    Ok(())
}

/// `Σ_φ Π_e Ã_e(φ(target), φ(source))` over all maps `V → [N]`.
pub fn combinatorial_trace<T: Ring, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<T, TrafficError> {
    let Some(domains) = label_domains(g, family)? else {
        for e in g.edges() {
            family.get(e.label.as_ref())?;
        }
        return Ok(T::zero());
    };
    let en = Enumerator::new(g, family, domains, false)?;
    guard(en.count())?;
    Ok(en.sum())
}

/// The same sum restricted to injective maps.
pub fn injective_trace<T: Ring, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<T, TrafficError> {
    let Some(domains) = label_domains(g, family)? else {
        for e in g.edges() {
            family.get(e.label.as_ref())?;
        }
        return Ok(T::zero());
    };
    let en = Enumerator::new(g, family, domains, true)?;
    guard(en.count())?;
    Ok(en.sum())
}

/// Matrix whose `(i, j)` entry sums over maps with `φ(out) = i`, `φ(in) = j`.
pub fn eval_monomial<T: Ring, L: AsRef<str>>(
    g: &GraphMonomial<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<DMatrix<T>, TrafficError> {
    let n = family.layout().n();
    let mut out = DMatrix::zeros(n, n);
    let Some(base) = label_domains(&g.graph, family)? else {
        for e in g.graph.edges() {
            family.get(e.label.as_ref())?;
        }
        return Ok(out);
    };
    guard(base.iter().map(|d| d.len() as f64).product())?;
    for &i in &base[g.output] {
        for &j in &base[g.input] {
            if g.input == g.output && i != j {
                continue;
            }
            let mut domains = base.clone();
            domains[g.output] = vec![i];
            domains[g.input] = vec![j];
            out[(i, j)] = Enumerator::new(&g.graph, family, domains, false)?.sum();
        }
    }
    Ok(out)
}

/// Both sides of `Tr[T] = Σ_π Tr⁰[T^π]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MoebiusReport<T> {
    pub lhs: T,
    pub rhs: T,
    pub equal: bool,
}

/// Sums injective traces over quotients by partitions compatible with the
/// label-forced blocks and compares with the combinatorial trace.
pub fn moebius_check<T: Ring, L: AsRef<str> + Clone>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<MoebiusReport<T>, TrafficError> {
    let n = g.num_vertices();
    if n > MAX_MOEBIUS_VERTICES {
        return Err(TrafficError::TooLarge(n));
    }
    let lhs = combinatorial_trace(g, family)?;
    let forced = forced_blocks(g, family)?;
    let mut rhs = T::zero();
    for pi in set_partitions_unchecked(n) {
        let mut block_color: Vec<Option<u8>> = vec![None; pi.num_blocks()];
        let mut compatible = true;
        for (v, f) in forced.iter().enumerate() {
            let b = pi.block_of(v);
            match f {
                Forced::Free => {}
                Forced::Conflict => compatible = false,
                Forced::Block(c) => match block_color[b] {
                    None => block_color[b] = Some(*c),
                    Some(d) if d != *c => compatible = false,
                    _ => {}
                },
            }
        }
        if !compatible {
            continue;
        }
        rhs += injective_trace(&g.quotient_unchecked(&pi), family)?;
    }
    let equal = lhs == rhs;
    Ok(MoebiusReport { lhs, rhs, equal })
}

/// How `δ⁰` is computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Delta0Mode {
    Exact,
    MonteCarlo { trials: usize, seed: u64 },
}

/// Exact sum over injective split maps and their number.
#[derive(Clone, Debug, PartialEq)]
pub struct InjectiveAverage<T> {
    pub sum: T,
    pub count: BigInt,
}

impl<T: Clone + Into<BigInt>> InjectiveAverage<T> {
    pub fn ratio(&self) -> Rational {
        Rational::new(self.sum.clone().into(), self.count.clone())
    }
}

impl<T: ToPrimitive> InjectiveAverage<T> {
    pub fn mean_f64(&self) -> f64 {
        self.sum.to_f64().unwrap_or(f64::NAN) / self.count.to_f64().unwrap_or(f64::NAN)
    }
}

/// Falling factorial `(n)_k`.
pub fn falling_factorial(n: usize, k: usize) -> BigInt {
    if k > n {
        return BigInt::zero();
    }
    (n - k + 1..=n).fold(BigInt::one(), |acc, x| acc * BigInt::from(x))
}

fn color_domains(g_colors: &[u8], layout: &BlockLayout) -> Vec<Vec<usize>> {
    g_colors.iter().map(|&c| layout.range(c).collect()).collect()
}

/// Number of injective split maps for the stored coloring.
pub fn injective_split_count(colors: &[u8], layout: &BlockLayout) -> BigInt {
    let mut counts = [0usize; 3];
    for &c in colors {
        counts[c as usize] += 1;
    }
    (0..3u8).map(|b| falling_factorial(layout.size(b), counts[b as usize])).product()
}

fn check_delta0_guard(colors: &[u8], layout: &BlockLayout) -> Result<(), TrafficError> {
    let mut counts = [0usize; 3];
    for &c in colors {
        counts[c as usize] += 1;
    }
    for b in 0..3u8 {
        let per = falling_factorial(layout.size(b), counts[b as usize]);
        if per > BigInt::from(MAX_DELTA0_INJECTIONS) {
            return Err(TrafficError::TooManyMaps(per.to_f64().unwrap_or(f64::INFINITY)));
        }
    }
    Ok(())
}

/// `δ⁰` in exact mode: sum and count over injective maps respecting the
/// stored vertex colors.
pub fn delta0_exact<T: Ring, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<InjectiveAverage<T>, TrafficError> {
    let layout = family.layout();
    check_delta0_guard(g.colors(), &layout)?;
    let en = Enumerator::new(g, family, color_domains(g.colors(), &layout), true)?;
    Ok(InjectiveAverage { sum: en.sum(), count: injective_split_count(g.colors(), &layout) })
}

/// `δ⁰` averaged over uniformly sampled injective split maps.
pub fn delta0_monte_carlo<T: Ring + ToPrimitive, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
    trials: usize,
    seed: u64,
) -> Result<f64, TrafficError> {
    if trials == 0 {
        return Err(TrafficError::TooFewTrials { min: 1, got: 0 });
    }
    let layout = family.layout();
    let mats = g
        .edges()
        .iter()
        .map(|e| family.get(e.label.as_ref()))
        .collect::<Result<Vec<_>, _>>()?;
    let by_color: Vec<Vec<usize>> = (0..3u8).map(|c| g.vertices_of_color(c)).collect();
    for c in 0..3u8 {
        if by_color[c as usize].len() > layout.size(c) {
            return Ok(0.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phi = vec![0usize; g.num_vertices()];
    let mut acc = 0.0;
    for _ in 0..trials {
        for c in 0..3u8 {
            let vs = &by_color[c as usize];
            let picks = sample_indices(&mut rng, layout.size(c), vs.len());
            for (v, i) in vs.iter().zip(picks.iter()) {
                phi[*v] = layout.offset(c) + i;
            }
        }
        let mut prod = 1.0;
        for (e, m) in g.edges().iter().zip(&mats) {
            prod *= family.global_entry(m, phi[e.dst], phi[e.src]).and_then(|x| x.to_f64()).unwrap_or(0.0);
        }
        acc += prod;
    }
    Ok(acc / trials as f64)
}

/// Dispatches on the mode; exact results are converted to `f64`.
pub fn delta0<T: Ring + ToPrimitive, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
    mode: Delta0Mode,
) -> Result<f64, TrafficError> {
    match mode {
        Delta0Mode::Exact => Ok(delta0_exact(g, family)?.mean_f64()),
        Delta0Mode::MonteCarlo { trials, seed } => delta0_monte_carlo(g, family, trials, seed),
    }
}

/// Edge of a tensor network: contributes `m[(φ(to), φ(from))]`.
#[derive(Clone, Debug)]
struct NetEdge<T: Ring> {
    to: usize,
    from: usize,
    m: DMatrix<T>,
}

#[derive(Clone, Debug)]
struct Network<T: Ring> {
    weight: Vec<Option<DVector<T>>>,
    domain: Vec<usize>,
    alive: Vec<bool>,
    edges: Vec<NetEdge<T>>,
}

fn hadamard_vec<T: Ring>(slot: &mut Option<DVector<T>>, v: DVector<T>) {
    match slot {
        Some(w) => w.component_mul_assign(&v),
        None => *slot = Some(v),
    }
}

fn vec_sum<T: Ring>(w: &Option<DVector<T>>, domain: usize) -> T {
    match w {
        Some(v) => v.iter().fold(T::zero(), |a, b| a + b.clone()),
        None => (0..domain).fold(T::zero(), |a, _| a + T::one()),
    }
}

fn transpose_if<T: Ring>(e: &NetEdge<T>, to: usize) -> DMatrix<T> {
    if e.to == to {
        e.m.clone()
    } else {
        e.m.transpose()
    }
}

impl<T: Ring> Network<T> {
    fn merge_parallel(&mut self) {
        let mut by_pair: BTreeMap<(usize, usize), NetEdge<T>> = BTreeMap::new();
        for e in std::mem::take(&mut self.edges) {
            let key = (e.to.min(e.from), e.to.max(e.from));
            match by_pair.get_mut(&key) {
                None => {
                    by_pair.insert(key, e);
                }
                Some(acc) => {
                    let aligned = if e.to == acc.to { e.m } else { e.m.transpose() };
                    acc.m.component_mul_assign(&aligned);
                }
            }
        }
        for (_, e) in by_pair {
            if e.to == e.from {
                let diag = e.m.diagonal();
                hadamard_vec(&mut self.weight[e.to], diag);
            } else {
                self.edges.push(e);
            }
        }
    }

    fn degree(&self, v: usize) -> usize {
        self.edges.iter().filter(|e| e.to == v || e.from == v).count()
    }

    fn take_incident(&mut self, v: usize) -> Vec<NetEdge<T>> {
        let (inc, rest): (Vec<_>, Vec<_>) = std::mem::take(&mut self.edges).into_iter().partition(|e| e.to == v || e.from == v);
        self.edges = rest;
        inc
    }

    fn weighted(&self, v: usize) -> DVector<T> {
        self.weight[v].clone().unwrap_or_else(|| DVector::from_element(self.domain[v], T::one()))
    }

    fn contract(mut self) -> T {
        let mut scalar = T::one();
        loop {
            self.merge_parallel();
            let alive: Vec<usize> = (0..self.alive.len()).filter(|&v| self.alive[v]).collect();
            if alive.is_empty() {
                return scalar;
            }
            let (v, d) = alive.iter().map(|&v| (v, self.degree(v))).min_by_key(|&(_, d)| d).expect("nonempty");
            match d {
                0 => {
                    scalar *= vec_sum(&self.weight[v], self.domain[v]);
                    if scalar.is_zero() {
                        return scalar;
                    }
                    self.alive[v] = false;
                }
                1 => {
                    let e = self.take_incident(v).pop().expect("degree one");
                    let wv = self.weighted(v);
                    let (u, r) = if e.to == v { (e.from, e.m.transpose() * wv) } else { (e.to, e.m * wv) };
                    hadamard_vec(&mut self.weight[u], r);
                    self.alive[v] = false;
                }
                2 => {
                    let inc = self.take_incident(v);
                    let other = |e: &NetEdge<T>| if e.to == v { e.from } else { e.to };
                    let (u, x) = (other(&inc[0]), other(&inc[1]));
                    // rows u, cols v and rows x, cols v
                    let r1 = transpose_if(&inc[0], u);
                    let mut r2 = transpose_if(&inc[1], x);
                    if let Some(w) = &self.weight[v] {
                        for (j, wj) in w.iter().enumerate() {
                            for z in r2.column_mut(j).iter_mut() {
                                *z *= wj.clone();
                            }
                        }
                    }
                    let k = r2 * r1.transpose();
                    self.edges.push(NetEdge { to: x, from: u, m: k });
                    self.alive[v] = false;
                }
                _ => {
                    let (v, _) = alive.iter().map(|&v| (v, self.degree(v))).max_by_key(|&(_, d)| d).expect("nonempty");
                    let wv = self.weighted(v);
                    let mut base = self.clone();
                    let inc = base.take_incident(v);
                    base.alive[v] = false;
                    let mut total = T::zero();
                    for a in 0..self.domain[v] {
                        if wv[a].is_zero() {
                            continue;
                        }
                        let mut branch = base.clone();
                        for e in &inc {
                            if e.to == v {
                                hadamard_vec(&mut branch.weight[e.from], e.m.row(a).transpose());
                            } else {
                                hadamard_vec(&mut branch.weight[e.to], e.m.column(a).into_owned());
                            }
                        }
                        total += wv[a].clone() * branch.contract();
                    }
                    return scalar * total;
                }
            }
        }
    }
}

/// Combinatorial trace by series-parallel contraction with branching on
/// high-degree vertices.
pub fn contract_trace<T: Ring, L: AsRef<str>>(
    g: &TestGraph<L>,
    family: &LabeledMatrixFamily<T>,
) -> Result<T, TrafficError> {
    let layout = family.layout();
    let forced = forced_blocks(g, family)?;
    let mut domain = Vec::with_capacity(forced.len());
    for f in &forced {
        match f {
            Forced::Free => domain.push(layout.n()),
            Forced::Block(b) => domain.push(layout.size(*b)),
            Forced::Conflict => return Ok(T::zero()),
        }
    }
    let edges = g
        .edges()
        .iter()
        .map(|e| Ok(NetEdge { to: e.dst, from: e.src, m: family.get(e.label.as_ref())?.matrix.clone() }))
        .collect::<Result<Vec<_>, TrafficError>>()?;
    let n = g.num_vertices();
    let net = Network { weight: vec![None; n], domain, alive: vec![true; n], edges };
    Ok(net.contract())
}

/// `N⁻¹ · Tr[T(A)]` in double precision.
pub fn tau_f64<L: AsRef<str>>(g: &TestGraph<L>, family: &LabeledMatrixFamily<f64>) -> Result<f64, TrafficError> {
    Ok(contract_trace(g, family)? / family.layout().n() as f64)
}

/// Produces a fresh matrix family for each trial.
pub trait FamilySampler: Sync {
    fn sample(&self, seed: u64, trial: u64) -> Result<LabeledMatrixFamily<f64>, TrafficError>;
}

impl<F> FamilySampler for F
where
    F: Fn(u64, u64) -> Result<LabeledMatrixFamily<f64>, TrafficError> + Sync,
{
    fn sample(&self, seed: u64, trial: u64) -> Result<LabeledMatrixFamily<f64>, TrafficError> {
        self(seed, trial)
    }
}

/// Monte Carlo summary of per-trial values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    #[serde(skip)]
    pub values: Vec<f64>,
}

impl McEstimate {
    /// Mean and standard error `s / √n` with the `n − 1` sample deviation.
    pub fn from_values(values: Vec<f64>, seed: u64) -> Self {
        let n = values.len();
        let trials = n;
        if n == 0 {
            return Self { mean: f64::NAN, std_error: None, trials, seed, values };
        }
        if values.iter().all(|&v| v == values[0]) {
            let se = (n >= 2).then_some(0.0);
            return Self { mean: values[0], std_error: se, trials, seed, values };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std_error = (n >= 2).then(|| {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        });
        Self { mean, std_error, trials, seed, values }
    }
}

/// Runs `trials` evaluations, optionally on a dedicated thread pool, and
/// returns per-trial results in trial order.
pub fn run_trials<R: Send, F>(trials: usize, threads: Option<usize>, f: F) -> Result<Vec<R>, TrafficError>
where
    F: Fn(u64) -> Result<R, TrafficError> + Sync + Send,
{
    match threads {
        Some(t) if t > 1 => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(t)
                .build()
                .map_err(|e| TrafficError::ThreadPool(e.to_string()))?;
            pool.install(|| (0..trials as u64).into_par_iter().map(&f).collect())
        }
        _ => (0..trials as u64).map(f).collect(),
    }
}

/// Per-trial `N⁻¹ Tr` for several graphs on shared samples.
pub fn tau_samples<L: AsRef<str> + Sync>(
    graphs: &[TestGraph<L>],
    sampler: &dyn FamilySampler,
    trials: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<Vec<f64>>, TrafficError> {
    let per_trial = run_trials(trials, threads, |t| {
        let family = sampler.sample(seed, t)?;
        graphs
            .iter()
            .map(|g| {
                let v = tau_f64(g, &family)?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(TrafficError::Degenerate(format!("non-finite trace in trial {t}")))
                }
            })
            .collect::<Result<Vec<f64>, TrafficError>>()
    })?;
    Ok((0..graphs.len()).map(|k| per_trial.iter().map(|row| row[k]).collect()).collect())
}

/// Monte Carlo estimate of `E[N⁻¹ Tr T(A)]`.
pub fn tau_estimate<L: AsRef<str> + Sync>(
    g: &TestGraph<L>,
    sampler: &dyn FamilySampler,
    trials: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<McEstimate, TrafficError> {
    if trials < 2 {
        return Err(TrafficError::TooFewTrials { min: 2, got: trials });
    }
    let values = tau_samples(std::slice::from_ref(g), sampler, trials, seed, threads)?.pop().expect("one graph");
    Ok(McEstimate::from_values(values, seed))
}
