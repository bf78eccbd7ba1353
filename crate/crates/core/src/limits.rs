//! Exact large-`N` limits of injective traces for profiled Pennington-Worah
//! matrices and for their linear, chaos and deformation components.
//!
//! Sums run over split partitions `ρ0` of the reference vertices whose
//! quotient is a pseudo-cactus. For each one the auxiliary quotient `π0` is
//! built explicitly and its profile factor is evaluated exactly on the step
//! graphons.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_bigint::BigInt;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{build_auxiliary, classify, AuxLabel, AuxiliaryGraph, GraphError, StrongComponentReport, TestGraph};
use crate::hermite::{expect_derivative, expect_product, f_kernel, Polynomial};
use crate::models::{rational_str, EntryLaw, ProfiledEnsemble, StepProfile};
use crate::partitions::{restrict, split_partitions, SetPartition};
use crate::Rational;

/// Largest reference graph accepted by the limit formulas.
pub const MAX_LIMIT_EDGES: usize = 4;
/// Largest number of internal vertices in an η scan.
pub const MAX_SCAN_INTERNAL: usize = 11;
/// Largest number of graphon cell assignments summed in one profile factor.
pub const MAX_CELL_ASSIGNMENTS: usize = 1_000_000;

#[derive(Debug, Error)]
pub enum LimitError {
    #[error("invalid parameters: {0}")]
    Params(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("graph has {edges} edges, at most {max} are supported")]
    TooManyEdges { edges: usize, max: usize },
    #[error("graph has no edges")]
    NoEdges,
    #[error("edge {edge} has a label with a constant term")]
    ConstantTerm { edge: usize },
    #[error("edge {edge} has a label with even-degree terms")]
    EvenLabel { edge: usize },
    #[error("edge {edge} has label {label}, above the cap {max}")]
    LabelTooLarge { edge: usize, label: u32, max: u32 },
    #[error("{internal} internal vertices exceed the scan cap {max}")]
    ScanTooLarge { internal: usize, max: usize },
    #[error("profile factor needs {0} cell assignments")]
    TooManyCells(usize),
    #[error("auxiliary quotient has a {label:?}-edge between colors {src} and {dst}")]
    NotAuxiliary { label: AuxLabel, src: u8, dst: u8 },
}

/// Aspect ratios, third moments and graphon limits of the profiles.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "LimitParamsRaw", into = "LimitParamsRaw")]
pub struct LimitParams {
    psi: [Rational; 3],
    m3_w: Rational,
    m3_x: Rational,
    profile_w: StepProfile,
    profile_x: StepProfile,
}

#[derive(Serialize, Deserialize)]
struct LimitParamsRaw {
    psi: [RationalText; 3],
    #[serde(with = "rational_str")]
    m3_w: Rational,
    #[serde(with = "rational_str")]
    m3_x: Rational,
    profile_w: StepProfile,
    profile_x: StepProfile,
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct RationalText(#[serde(with = "rational_str")] Rational);

impl TryFrom<LimitParamsRaw> for LimitParams {
    type Error = LimitError;

    fn try_from(r: LimitParamsRaw) -> Result<Self, LimitError> {
        let [a, b, c] = r.psi;
        LimitParams::new([a.0, b.0, c.0], r.m3_w, r.m3_x, r.profile_w, r.profile_x)
    }
}

impl From<LimitParams> for LimitParamsRaw {
    fn from(p: LimitParams) -> Self {
        let [a, b, c] = p.psi;
        LimitParamsRaw {
            psi: [RationalText(a), RationalText(b), RationalText(c)],
            m3_w: p.m3_w,
            m3_x: p.m3_x,
            profile_w: p.profile_w,
            profile_x: p.profile_x,
        }
    }
}

impl LimitParams {
    pub fn new(
        psi: [Rational; 3],
        m3_w: Rational,
        m3_x: Rational,
        profile_w: StepProfile,
        profile_x: StepProfile,
    ) -> Result<Self, LimitError> {
        if psi.iter().any(|p| !p.is_positive()) {
            return Err(LimitError::Params("aspect ratios must be positive".into()));
        }
        if psi.iter().sum::<Rational>() != Rational::one() {
            return Err(LimitError::Params("aspect ratios must sum to 1".into()));
        }
        Ok(Self { psi, m3_w, m3_x, profile_w, profile_x })
    }

    /// Unit profiles.
    pub fn constant(psi: [Rational; 3], m3_w: Rational, m3_x: Rational) -> Result<Self, LimitError> {
        Self::new(psi, m3_w, m3_x, StepProfile::ones(), StepProfile::ones())
    }

    /// Limits matching a finite ensemble: its aspect ratios, laws and profiles.
    pub fn from_ensemble(ens: &ProfiledEnsemble) -> Result<Self, LimitError> {
        let psi = [ens.layout.psi(0), ens.layout.psi(1), ens.layout.psi(2)];
        Self::new(psi, ens.law_w.m3(), ens.law_x.m3(), ens.profile_w.clone(), ens.profile_x.clone())
    }

    pub fn with_laws(mut self, w: &EntryLaw, x: &EntryLaw) -> Self {
        self.m3_w = w.m3();
        self.m3_x = x.m3();
        self
    }

    pub fn psi(&self, block: u8) -> &Rational {
        &self.psi[block as usize]
    }

    pub fn m3_w(&self) -> &Rational {
        &self.m3_w
    }

    pub fn m3_x(&self) -> &Rational {
        &self.m3_x
    }

    pub fn profile_w(&self) -> &StepProfile {
        &self.profile_w
    }

    pub fn profile_x(&self) -> &StepProfile {
        &self.profile_x
    }
}

/// A graphon cell of one vertex color: its measure and the grid indices it
/// reads in `Γ_w` and `Γ_x`.
#[derive(Clone, Debug)]
struct Cell {
    measure: Rational,
    w: usize,
    x: usize,
}

fn uniform_cells(k: usize, as_w: bool) -> Vec<Cell> {
    (0..k)
        .map(|i| Cell {
            measure: Rational::new(BigInt::one(), BigInt::from(k)),
            w: if as_w { i } else { 0 },
            x: if as_w { 0 } else { i },
        })
        .collect()
}

/// Common refinement of the column cells of `Γ_w` and the row cells of `Γ_x`.
fn internal_cells(kw: usize, kx: usize) -> Vec<Cell> {
    let mut cuts: BTreeSet<Rational> = BTreeSet::new();
    for k in [kw, kx] {
        for i in 0..=k {
            cuts.insert(Rational::new(BigInt::from(i), BigInt::from(k)));
        }
    }
    let cuts: Vec<Rational> = cuts.into_iter().collect();
    cuts.windows(2)
        .map(|p| {
            let cell = |k: usize| (&p[0] * Rational::from_integer(BigInt::from(k))).floor().to_integer();
            Cell {
                measure: &p[1] - &p[0],
                w: usize::try_from(cell(kw)).expect("cell index fits"),
                x: usize::try_from(cell(kx)).expect("cell index fits"),
            }
        })
        .collect()
}

/// Limit of `δ⁰[T(Γ_w, Γ_x)]` for an auxiliary quotient: every vertex takes
/// an independent uniform position, injectivity is dropped.
pub fn delta0_graphon(g: &TestGraph<AuxLabel>, params: &LimitParams) -> Result<Rational, LimitError> {
    let colors = g.colors();
    for e in g.edges() {
        let (s, d) = (colors[e.src], colors[e.dst]);
        let ok = match e.label {
            AuxLabel::W => s == 0 && d == 1,
            AuxLabel::X => s == 2 && d == 0,
        };
        if !ok {
            return Err(LimitError::NotAuxiliary { label: e.label, src: s, dst: d });
        }
    }
    let gw = params.profile_w.grid();
    let gx = params.profile_x.grid();
    let (kw, kwc) = params.profile_w.shape();
    let (kxr, kx) = params.profile_x.shape();
    let cells1 = uniform_cells(kw, true);
    let cells2 = uniform_cells(kx, false);
    let cells0 = internal_cells(kwc, kxr);

    let refs: Vec<usize> = (0..g.num_vertices()).filter(|&v| colors[v] != 0).collect();
    let mut slot = vec![usize::MAX; g.num_vertices()];
    for (i, &v) in refs.iter().enumerate() {
        slot[v] = i;
    }
    let radix: Vec<usize> = refs.iter().map(|&v| if colors[v] == 1 { cells1.len() } else { cells2.len() }).collect();
    let total = radix.iter().try_fold(1usize, |acc, &r| acc.checked_mul(r)).unwrap_or(usize::MAX);
    if total > MAX_CELL_ASSIGNMENTS {
        return Err(LimitError::TooManyCells(total));
    }
    // Per internal vertex: (reference slot, label) of each incident edge.
    let mut stars: BTreeMap<usize, Vec<(usize, AuxLabel)>> = BTreeMap::new();
    for v in (0..g.num_vertices()).filter(|&v| colors[v] == 0) {
        stars.insert(v, Vec::new());
    }
    for e in g.edges() {
        match e.label {
            AuxLabel::W => stars.get_mut(&e.src).expect("internal").push((slot[e.dst], AuxLabel::W)),
            AuxLabel::X => stars.get_mut(&e.dst).expect("internal").push((slot[e.src], AuxLabel::X)),
        }
    }
    let stars: Vec<Vec<(usize, AuxLabel)>> = stars.into_values().filter(|s| !s.is_empty()).collect();

    let mut sum = Rational::zero();
    let mut digits = vec![0usize; refs.len()];
    for _ in 0..total {
        let mut weight = Rational::one();
        for (i, &v) in refs.iter().enumerate() {
            let cell = if colors[v] == 1 { &cells1[digits[i]] } else { &cells2[digits[i]] };
            weight *= &cell.measure;
        }
        for star in &stars {
            if weight.is_zero() {
                break;
            }
            let mut inner = Rational::zero();
            for c in &cells0 {
                let mut term = c.measure.clone();
                for &(r, label) in star {
                    let d = digits[r];
                    term *= match label {
                        AuxLabel::W => &gw[cells1[d].w][c.w],
                        AuxLabel::X => &gx[c.x][cells2[d].x],
                    };
                    if term.is_zero() {
                        break;
                    }
                }
                inner += term;
            }
            weight *= inner;
        }
        sum += weight;
        for (d, &r) in digits.iter_mut().zip(&radix) {
            *d += 1;
            if *d < r {
                break;
            }
            *d = 0;
        }
    }
    Ok(sum)
}

/// The limit formulas implemented here.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LimitKind {
    Pw,
    B,
    Lin,
    Per,
    EquivalentSum,
}

impl LimitKind {
    pub const ALL: [LimitKind; 5] = [LimitKind::Pw, LimitKind::B, LimitKind::Lin, LimitKind::Per, LimitKind::EquivalentSum];

    pub fn name(self) -> &'static str {
        match self {
            LimitKind::Pw => "pw",
            LimitKind::B => "b",
            LimitKind::Lin => "lin",
            LimitKind::Per => "per",
            LimitKind::EquivalentSum => "equivalent_sum",
        }
    }
}

/// Colour of an edge in the mixed limit of the three components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Lin,
    Per,
    B,
}

const CHANNELS: [Channel; 3] = [Channel::Lin, Channel::Per, Channel::B];

/// Contribution of one reference quotient.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotientTerm {
    pub rho0: SetPartition,
    pub cut_edges: Vec<usize>,
    pub two_cycles: Vec<(usize, usize)>,
    pub long_cycles: Vec<Vec<usize>>,
    #[serde(with = "rational_str")]
    pub value: Rational,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimitValue {
    pub kind: LimitKind,
    #[serde(with = "rational_str")]
    pub value: Rational,
    pub per_quotient_breakdown: Vec<QuotientTerm>,
}

/// A pseudo-cactus quotient of the reference graph.
#[derive(Clone, Debug)]
struct Quotient {
    rho0: SetPartition,
    report: StrongComponentReport,
    v1: usize,
    v2: usize,
}

fn check_reference(t: &TestGraph<Polynomial>, odd: bool) -> Result<(), LimitError> {
    t.validate_reference()?;
    if t.num_edges() == 0 {
        return Err(LimitError::NoEdges);
    }
    if t.num_edges() > MAX_LIMIT_EDGES {
        return Err(LimitError::TooManyEdges { edges: t.num_edges(), max: MAX_LIMIT_EDGES });
    }
    if !t.is_connected() {
        return Err(GraphError::Disconnected.into());
    }
    for e in t.edges() {
        if !e.label.coeff(0).is_zero() {
            return Err(LimitError::ConstantTerm { edge: e.id });
        }
        if odd && !e.label.is_odd() {
            return Err(LimitError::EvenLabel { edge: e.id });
        }
    }
    Ok(())
}

fn pseudo_cactus_quotients<L: Clone>(t: &TestGraph<L>) -> Result<Vec<Quotient>, LimitError> {
    let mut out = Vec::new();
    for rho0 in split_partitions(t.colors()) {
        let q = t.quotient(&rho0)?;
        let report = classify(&q)?;
        if report.is_pseudo_cactus {
            let [_, v1, v2] = q.color_counts();
            out.push(Quotient { rho0, report, v1, v2 });
        }
    }
    Ok(out)
}

fn rat(n: i64) -> Rational {
    Rational::from_integer(BigInt::from(n))
}

fn pow(r: &Rational, k: usize) -> Rational {
    (0..k).fold(Rational::one(), |acc, _| acc * r)
}

/// Number of pairings of `m` points.
fn pairings(m: usize) -> Rational {
    if m % 2 == 1 {
        return Rational::zero();
    }
    (1..m).step_by(2).fold(Rational::one(), |acc, k| acc * rat(k as i64))
}

fn binomial(n: usize, k: usize) -> Rational {
    if k > n {
        return Rational::zero();
    }
    (0..k).fold(Rational::one(), |acc, i| acc * rat((n - i) as i64) / rat((i + 1) as i64))
}

/// Ways to form one triple and pair the rest among `n` internal vertices.
pub fn cut_edge_count(n: usize) -> Rational {
    if n < 3 {
        return Rational::zero();
    }
    binomial(n, 3) * pairings(n - 3)
}

/// Ways to pair the `n + n′` internal vertices of a double edge.
pub fn two_cycle_count(n: usize, np: usize) -> Rational {
    pairings(n + np)
}

/// Ways to pick one central vertex per niche and pair the rest inside it.
pub fn long_cycle_count(labels: &[usize]) -> Rational {
    labels.iter().map(|&n| if n == 0 { Rational::zero() } else { rat(n as i64) * pairings(n - 1) }).product()
}

/// The auxiliary partition `π0` above `ρ0` for given monomial degrees.
fn build_pi0(aux: &AuxiliaryGraph, rho0: &SetPartition, report: &StrongComponentReport) -> SetPartition {
    let n = aux.graph.num_vertices();
    let mut keys: Vec<(u8, usize)> = vec![(0, 0); n];
    for (v, key) in keys.iter_mut().enumerate().take(aux.num_reference) {
        *key = (0, rho0.block_of(v));
    }
    let niche: HashMap<usize, &[usize]> = aux.niches.iter().map(|ni| (ni.reference_edge, ni.internal.as_slice())).collect();
    let mut next = 0usize;
    let mut fresh = || {
        next += 1;
        (1u8, next)
    };
    let pair_up = |verts: &[usize], keys: &mut Vec<(u8, usize)>, fresh: &mut dyn FnMut() -> (u8, usize)| {
        for chunk in verts.chunks(2) {
            let k = fresh();
            for &v in chunk {
                keys[v] = k;
            }
        }
    };
    for &e in &report.cut_edges {
        let u = niche[&e];
        let k = fresh();
        for &v in &u[..3.min(u.len())] {
            keys[v] = k;
        }
        if u.len() > 3 {
            pair_up(&u[3..], &mut keys, &mut fresh);
        }
    }
    for &(a, b) in &report.two_cycles {
        let all: Vec<usize> = niche[&a].iter().chain(niche[&b].iter()).copied().collect();
        pair_up(&all, &mut keys, &mut fresh);
    }
    for cycle in &report.long_cycles {
        let central = fresh();
        for &e in cycle {
            let u = niche[&e];
            keys[u[0]] = central;
            pair_up(&u[1..], &mut keys, &mut fresh);
        }
    }
    SetPartition::from_assignment(&keys)
}

/// Monomial expansion of the labels: `(degrees by edge position, coefficient)`.
fn monomial_expansion(t: &TestGraph<Polynomial>) -> Vec<(Vec<usize>, Rational)> {
    let mut out = vec![(Vec::new(), Rational::one())];
    for e in t.edges() {
        let mut next = Vec::new();
        for (degs, c) in &out {
            for (n, a) in e.label.terms() {
                let mut d = degs.clone();
                d.push(n);
                next.push((d, c * a));
            }
        }
        out = next;
    }
    out
}

/// Component weights for one quotient and one monomial labeling, without the
/// `ψ1ψ2` vertex factor and the profile factor.
type Weight<'a> = dyn Fn(&StrongComponentReport, &dyn Fn(usize) -> usize) -> Rational + 'a;

fn formula_sum(t: &TestGraph<Polynomial>, params: &LimitParams, kind: LimitKind, weight: &Weight<'_>) -> Result<LimitValue, LimitError> {
    let position: HashMap<usize, usize> = t.edges().iter().enumerate().map(|(i, e)| (e.id, i)).collect();
    let expansion = monomial_expansion(t);
    let mut total = Rational::zero();
    let mut breakdown = Vec::new();
    for q in pseudo_cactus_quotients(t)? {
        let mut value = Rational::zero();
        for (degrees, coeff) in &expansion {
            let deg = |id: usize| degrees[position[&id]];
            let w = weight(&q.report, &deg);
            if w.is_zero() {
                continue;
            }
            let mono = t.map_labels(|e| deg(e.id) as u32);
            let aux = build_auxiliary(&mono)?;
            let pi0 = build_pi0(&aux, &q.rho0, &q.report);
            let delta = delta0_graphon(&aux.graph.quotient(&pi0)?, params)?;
            value += coeff * w * delta;
        }
        if value.is_zero() {
            continue;
        }
        value *= pow(params.psi(1), q.v1) * pow(params.psi(2), q.v2);
        total += &value;
        breakdown.push(QuotientTerm {
            rho0: q.rho0,
            cut_edges: q.report.cut_edges,
            two_cycles: q.report.two_cycles,
            long_cycles: q.report.long_cycles,
            value,
        });
    }
    Ok(LimitValue { kind, value: total, per_quotient_breakdown: breakdown })
}

fn pw_weight(params: &LimitParams) -> impl Fn(&StrongComponentReport, &dyn Fn(usize) -> usize) -> Rational + '_ {
    move |r, deg| {
        let m3 = params.m3_w() * params.m3_x();
        let psi0 = params.psi(0);
        let mut w = Rational::one();
        for &e in &r.cut_edges {
            w *= &m3 * cut_edge_count(deg(e));
        }
        for &(a, b) in &r.two_cycles {
            w *= psi0 * two_cycle_count(deg(a), deg(b));
        }
        for c in &r.long_cycles {
            let labels: Vec<usize> = c.iter().map(|&e| deg(e)).collect();
            w *= psi0 * long_cycle_count(&labels);
        }
        w
    }
}

fn mono(n: usize) -> Polynomial {
    Polynomial::monomial(n)
}

/// Weight of a cut edge in the deformation channel.
fn b_edge(params: &LimitParams, n: usize) -> Rational {
    params.m3_w() * params.m3_x() / rat(6) * expect_derivative(&mono(n), 3)
}

/// Weight of a cycle in the linear channel.
fn lin_cycle(params: &LimitParams, labels: &[usize]) -> Rational {
    labels.iter().fold(params.psi(0).clone(), |acc, &n| acc * expect_derivative(&mono(n), 1))
}

/// Weight of a double edge in the chaos channel.
fn per_cycle(params: &LimitParams, n: usize, np: usize) -> Rational {
    params.psi(0) * f_kernel(&mono(n), &mono(np))
}

/// Sum over pseudo-cactus quotients of the explicit weight products.
pub fn limit_pw(t: &TestGraph<Polynomial>, params: &LimitParams) -> Result<Rational, LimitError> {
    Ok(limit_breakdown(LimitKind::Pw, t, params)?.value)
}

/// Deformation channel: tree quotients only.
pub fn limit_b(t: &TestGraph<Polynomial>, params: &LimitParams) -> Result<Rational, LimitError> {
    Ok(limit_breakdown(LimitKind::B, t, params)?.value)
}

/// Linear channel: cactus quotients only.
pub fn limit_lin(t: &TestGraph<Polynomial>, params: &LimitParams) -> Result<Rational, LimitError> {
    Ok(limit_breakdown(LimitKind::Lin, t, params)?.value)
}

/// Chaos channel: double-tree quotients only.
pub fn limit_per(t: &TestGraph<Polynomial>, params: &LimitParams) -> Result<Rational, LimitError> {
    Ok(limit_breakdown(LimitKind::Per, t, params)?.value)
}

/// Mixed limit of `lin + per + B`, summed over edge colourings.
pub fn limit_equivalent_sum(t: &TestGraph<Polynomial>, params: &LimitParams) -> Result<Rational, LimitError> {
    Ok(limit_breakdown(LimitKind::EquivalentSum, t, params)?.value)
}

/// Weight of one well-coloured quotient under the colouring `theta`, or zero.
fn coloured_weight(params: &LimitParams, r: &StrongComponentReport, deg: &dyn Fn(usize) -> usize, theta: &dyn Fn(usize) -> Channel) -> Rational {
    let mut w = Rational::one();
    for &e in &r.cut_edges {
        if theta(e) != Channel::B {
            return Rational::zero();
        }
        w *= b_edge(params, deg(e));
    }
    for &(a, b) in &r.two_cycles {
        w *= match (theta(a), theta(b)) {
            (Channel::Lin, Channel::Lin) => lin_cycle(params, &[deg(a), deg(b)]),
            (Channel::Per, Channel::Per) => per_cycle(params, deg(a), deg(b)),
            _ => return Rational::zero(),
        };
    }
    for c in &r.long_cycles {
        if c.iter().any(|&e| theta(e) != Channel::Lin) {
            return Rational::zero();
        }
        let labels: Vec<usize> = c.iter().map(|&e| deg(e)).collect();
        w *= lin_cycle(params, &labels);
    }
    w
}

/// Any of the limits with its per-quotient breakdown.
pub fn limit_breakdown(kind: LimitKind, t: &TestGraph<Polynomial>, params: &LimitParams) -> Result<LimitValue, LimitError> {
    check_reference(t, kind == LimitKind::EquivalentSum)?;
    match kind {
        LimitKind::Pw => formula_sum(t, params, kind, &pw_weight(params)),
        LimitKind::B => formula_sum(t, params, kind, &|r, deg| {
            if !r.is_tree {
                return Rational::zero();
            }
            r.cut_edges.iter().map(|&e| b_edge(params, deg(e))).product()
        }),
        LimitKind::Lin => formula_sum(t, params, kind, &|r, deg| {
            if !r.is_cactus {
                return Rational::zero();
            }
            let mut w = Rational::one();
            for &(a, b) in &r.two_cycles {
                w *= lin_cycle(params, &[deg(a), deg(b)]);
            }
            for c in &r.long_cycles {
                let labels: Vec<usize> = c.iter().map(|&e| deg(e)).collect();
                w *= lin_cycle(params, &labels);
            }
            w
        }),
        LimitKind::Per => formula_sum(t, params, kind, &|r, deg| {
            if !r.is_double_tree {
                return Rational::zero();
            }
            r.two_cycles.iter().map(|&(a, b)| per_cycle(params, deg(a), deg(b))).product()
        }),
        LimitKind::EquivalentSum => {
            let ids: Vec<usize> = t.edges().iter().map(|e| e.id).collect();
            formula_sum(t, params, kind, &|r, deg| {
                let mut sum = Rational::zero();
                let colourings = 3usize.pow(ids.len() as u32);
                for code in 0..colourings {
                    let theta = |id: usize| {
                        let pos = ids.iter().position(|&x| x == id).expect("edge id");
                        CHANNELS[code / 3usize.pow(pos as u32) % 3]
                    };
                    sum += coloured_weight(params, r, deg, &theta);
                }
                sum
            })
        }
    }
}

/// The second-moment check `E[h²] = E[h′]² + f(h, h)` behind a double edge.
pub fn two_cycle_split(h: &Polynomial) -> (Rational, Rational, Rational) {
    let d = expect_derivative(h, 1);
    (expect_product(h, h), &d * &d, f_kernel(h, h))
}

/// One `η = 0` partition found by the scan.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtaZero {
    pub pi: SetPartition,
    /// Restriction of `π` to the reference vertices.
    pub rho: SetPartition,
    pub is_pseudo_cactus: bool,
    /// No block mixes internal vertices of different strong components.
    pub respects_components: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EtaScanReport {
    pub partitions: u64,
    pub supported: u64,
    #[serde(with = "opt_rational")]
    pub max_eta: Option<Rational>,
    pub zero: Vec<EtaZero>,
    /// Every `η = 0` partition restricts to a pseudo-cactus and respects its
    /// strong components.
    pub support_ok: bool,
}

mod opt_rational {
    use crate::Rational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Option<Rational>, s: S) -> Result<S::Ok, S::Error> {
        match r {
            Some(r) => s.serialize_some(&r.to_string()),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Rational>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| crate::hermite::parse_rational(&t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

/// True iff every w-group and x-group of the quotient has multiplicity at
/// least two, so centered entries do not kill the term.
pub fn centered_support(aux: &AuxiliaryGraph, pi: &SetPartition) -> bool {
    let mut groups: HashMap<(AuxLabel, usize, usize), usize> = HashMap::new();
    for e in aux.graph.edges() {
        *groups.entry((e.label, pi.block_of(e.src), pi.block_of(e.dst))).or_insert(0) += 1;
    }
    groups.values().all(|&m| m >= 2)
}

/// Strong component index of each reference edge id.
fn component_of_edges(r: &StrongComponentReport) -> HashMap<usize, usize> {
    let mut out = HashMap::new();
    let mut next = 0;
    for &e in &r.cut_edges {
        out.insert(e, next);
        next += 1;
    }
    for &(a, b) in &r.two_cycles {
        out.insert(a, next);
        out.insert(b, next);
        next += 1;
    }
    for c in &r.long_cycles {
        for &e in c {
            out.insert(e, next);
        }
        next += 1;
    }
    out
}

/// Exhaustive scan of split partitions of the auxiliary graph: maximum `η`
/// over centered-supported partitions and the shape of the `η = 0` ones.
pub fn eta_support_scan(t: &TestGraph<u32>, max_label: u32) -> Result<EtaScanReport, LimitError> {
    t.validate_reference()?;
    if t.num_edges() > 3 {
        return Err(LimitError::TooManyEdges { edges: t.num_edges(), max: 3 });
    }
    if !t.is_connected() {
        return Err(GraphError::Disconnected.into());
    }
    let max_label = max_label.min(5);
    for e in t.edges() {
        if e.label > max_label {
            return Err(LimitError::LabelTooLarge { edge: e.id, label: e.label, max: max_label });
        }
        if e.label % 2 == 0 {
            return Err(LimitError::EvenLabel { edge: e.id });
        }
    }
    let aux = build_auxiliary(t)?;
    let internal = aux.total_label();
    if internal > MAX_SCAN_INTERNAL {
        return Err(LimitError::ScanTooLarge { internal, max: MAX_SCAN_INTERNAL });
    }
    let owner: HashMap<usize, usize> =
        aux.niches.iter().flat_map(|n| n.internal.iter().map(move |&v| (v, n.reference_edge))).collect();
    let refs: Vec<usize> = (0..aux.num_reference).collect();
    let mut report = EtaScanReport { partitions: 0, supported: 0, max_eta: None, zero: Vec::new(), support_ok: true };
    for pi in split_partitions(aux.graph.colors()) {
        report.partitions += 1;
        if !centered_support(&aux, &pi) {
            continue;
        }
        report.supported += 1;
        let eta = aux.eta(&pi)?.eta;
        if report.max_eta.as_ref().is_none_or(|m| eta > *m) {
            report.max_eta = Some(eta.clone());
        }
        if !eta.is_zero() {
            continue;
        }
        let rho = restrict(&pi, &refs).expect("reference vertices are in range");
        let class = classify(&t.quotient(&rho)?)?;
        let comp = component_of_edges(&class);
        let mut block_comp: HashMap<usize, usize> = HashMap::new();
        let mut respects = true;
        for (&v, e) in &owner {
            let c = comp.get(e).copied();
            match (c, block_comp.get(&pi.block_of(v))) {
                (None, _) => respects = false,
                (Some(c), Some(&prev)) if prev != c => respects = false,
                (Some(c), _) => {
                    block_comp.insert(pi.block_of(v), c);
                }
            }
        }
        report.support_ok &= class.is_pseudo_cactus && respects;
        report.zero.push(EtaZero { pi, rho, is_pseudo_cactus: class.is_pseudo_cactus, respects_components: respects });
    }
    Ok(report)
}
