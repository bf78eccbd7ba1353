//! Configuration-driven runs: Monte Carlo traces, exact limits, comparisons,
//! spectra and decomposition diagnostics, with self-contained reports.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, GraphJson, TestGraph, VertexJson, EdgeJson};
use crate::hermite::{hermite, Polynomial, PolynomialError};
use crate::limits::{limit_breakdown, LimitError, LimitKind, LimitParams, LimitValue};
use crate::models::{
    decompose, equivalent_def, equivalent_lin, equivalent_per, equivalent_sample, pw_matrix, rational_str,
    write_matrix_binary, EntryLaw, ModelError, ProfiledEnsemble, StepProfile,
};
use crate::partitions::IntegerPartition;
use crate::traffic::{tau_samples, BlockLayout, FamilySampler, LabeledMatrixFamily, McEstimate, TrafficError};
use crate::Rational;

/// Largest `N1` accepted by the dense eigensolver.
pub const MAX_SPECTRUM_ROWS: usize = 4000;
/// Largest number of histogram bins.
pub const MAX_BINS: usize = 10_000;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Polynomial(#[from] PolynomialError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Limit(#[from] LimitError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl ExperimentError {
    /// True for errors caused by the configuration rather than the run.
    pub fn is_validation(&self) -> bool {
        match self {
            ExperimentError::Io(_) | ExperimentError::Csv(_) => false,
            ExperimentError::Traffic(e) => !matches!(e, TrafficError::Degenerate(_) | TrafficError::ThreadPool(_)),
            ExperimentError::Model(e) => !matches!(e, ModelError::Io(_)),
            _ => true,
        }
    }
}

fn config_err(msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RationalText(#[serde(with = "rational_str")] pub Rational);

/// Sizes, laws and profiles. Either `sizes = [N0, N1, N2]` or `n` with `psi`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<[usize; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<[RationalText; 3]>,
    #[serde(default = "gaussian")]
    pub law_w: EntryLaw,
    #[serde(default = "gaussian")]
    pub law_x: EntryLaw,
    #[serde(default = "StepProfile::ones")]
    pub profile_w: StepProfile,
    #[serde(default = "StepProfile::ones")]
    pub profile_x: StepProfile,
}

fn gaussian() -> EntryLaw {
    EntryLaw::Gaussian
}

impl EnsembleConfig {
    pub fn resolve(&self) -> Result<ProfiledEnsemble, ExperimentError> {
        let sizes = match (&self.sizes, self.n, &self.psi) {
            (Some(s), None, None) => *s,
            (None, Some(n), Some(psi)) => {
                let mut out = [0usize; 3];
                for (o, p) in out.iter_mut().zip(psi) {
                    let v = &p.0 * Rational::from_integer(n.into());
                    if !v.is_integer() {
                        return Err(config_err(format!("n = {n} times psi = {} is not an integer", p.0)));
                    }
                    *o = v.to_integer().to_usize().ok_or_else(|| config_err("block size out of range"))?;
                }
                if out.iter().sum::<usize>() != n {
                    return Err(config_err("psi must sum to 1"));
                }
                out
            }
            _ => return Err(config_err("give either `sizes` or both `n` and `psi`")),
        };
        let layout = BlockLayout::new(sizes[0], sizes[1], sizes[2])?;
        Ok(ProfiledEnsemble::new(layout, self.law_w.clone(), self.law_x.clone(), self.profile_w.clone(), self.profile_x.clone())?)
    }
}

/// Either a named preset or an explicit graph.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GraphSpec {
    Preset {
        preset: String,
        #[serde(default = "default_label")]
        label: String,
    },
    Explicit(GraphJson),
}

fn default_label() -> String {
    "h".into()
}

/// A label polynomial: a spec object or a shorthand `h<n>` (monomial),
/// `g<n>` (Hermite) or `zero`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelSpec {
    Named(String),
    Spec(Polynomial),
}

impl LabelSpec {
    pub fn resolve(&self) -> Result<Polynomial, ExperimentError> {
        match self {
            LabelSpec::Spec(p) => Ok(p.clone()),
            LabelSpec::Named(s) => {
                let s = s.trim();
                if s == "zero" {
                    return Ok(Polynomial::zero());
                }
                let degree = |rest: &str| rest.parse::<usize>().map_err(|_| config_err(format!("unknown label shorthand {s:?}")));
                if let Some(rest) = s.strip_prefix('h') {
                    Ok(Polynomial::monomial(degree(rest)?))
                } else if let Some(rest) = s.strip_prefix('g') {
                    Ok(hermite(degree(rest)?))
                } else {
                    Err(config_err(format!("unknown label shorthand {s:?}")))
                }
            }
        }
    }
}

/// Which matrix each label is turned into.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    #[default]
    Pw,
    /// `lin + Σ per + def` of the Gaussian equivalent.
    Equivalent,
    EquivalentLin,
    EquivalentPer,
    EquivalentDef,
    /// Parts of the canonical decomposition of `Y(h)` itself.
    Lin,
    Per,
    Def,
    Eps,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Pw => "pw",
            Component::Equivalent => "equivalent",
            Component::EquivalentLin => "equivalent_lin",
            Component::EquivalentPer => "equivalent_per",
            Component::EquivalentDef => "equivalent_def",
            Component::Lin => "lin",
            Component::Per => "per",
            Component::Def => "def",
            Component::Eps => "eps",
        }
    }

    /// The exact limit matching this component, if one is implemented.
    fn limit_kind(self) -> Option<LimitKind> {
        match self {
            Component::Pw | Component::Equivalent => Some(LimitKind::Pw),
            Component::EquivalentLin => Some(LimitKind::Lin),
            Component::EquivalentPer => Some(LimitKind::Per),
            Component::EquivalentDef => Some(LimitKind::B),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumOptions {
    /// Label whose matrix is analysed; defaults to the first label.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    /// Fixed bin count; Freedman-Diaconis otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeOptions {
    /// Directory for binary matrix dumps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dump_dir: Option<String>,
}

/// One JSON document per run.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub ensemble: EnsembleConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default)]
    pub graphs: Vec<GraphSpec>,
    #[serde(default)]
    pub labels: BTreeMap<String, LabelSpec>,
    #[serde(default = "one")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default)]
    pub component: Component,
    #[serde(default)]
    pub spectrum: SpectrumOptions,
    #[serde(default)]
    pub decompose: DecomposeOptions,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, ExperimentError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn resolve(&self) -> Result<Resolved, ExperimentError> {
        if self.trials < 1 {
            return Err(config_err("trials must be at least 1"));
        }
        if self.threads == Some(0) {
            return Err(config_err("threads must be at least 1"));
        }
        let ensemble = self.ensemble.resolve()?;
        let labels = self
            .labels
            .iter()
            .map(|(k, v)| Ok((k.clone(), v.resolve()?)))
            .collect::<Result<BTreeMap<String, Polynomial>, ExperimentError>>()?;
        let mut graphs = Vec::new();
        for spec in self.graph.iter().chain(&self.graphs) {
            let json = match spec {
                GraphSpec::Preset { preset, label } => preset_graph(preset, label)?,
                GraphSpec::Explicit(g) => g.clone(),
            };
            let g = json.to_graph()?;
            g.validate_reference()?;
            if !g.is_connected() {
                return Err(GraphError::Disconnected.into());
            }
            for e in g.edges() {
                if !labels.contains_key(&e.label) {
                    return Err(config_err(format!("edge {} uses undefined label {:?}", e.id, e.label)));
                }
            }
            graphs.push((json, g));
        }
        Ok(Resolved { config: self.clone(), ensemble, labels, graphs })
    }
}

/// The alternating `2k`-cycle for `N⁻¹ Tr (ι(Y) ι(Y)ᵗ)ᵏ`, or the single edge.
pub fn preset_graph(name: &str, label: &str) -> Result<GraphJson, ExperimentError> {
    let vertex = |id: String, color: u8| VertexJson { id: id.into(), color };
    let edge = |src: String, dst: String| EdgeJson { id: None, src: src.into(), dst: dst.into(), label: label.to_string() };
    if name == "edge" {
        return Ok(GraphJson {
            vertices: vec![vertex("s1".into(), 2), vertex("t1".into(), 1)],
            edges: vec![edge("s1".into(), "t1".into())],
        });
    }
    let k: usize = name
        .strip_prefix("moment-")
        .and_then(|k| k.parse().ok())
        .filter(|&k| k >= 1)
        .ok_or_else(|| config_err(format!("unknown preset {name:?}, expected \"edge\" or \"moment-<k>\"")))?;
    let mut vertices = Vec::new();
    for i in 1..=k {
        vertices.push(vertex(format!("t{i}"), 1));
        vertices.push(vertex(format!("s{i}"), 2));
    }
    let mut edges = Vec::new();
    for i in 1..=k {
        edges.push(edge(format!("s{i}"), format!("t{i}")));
        edges.push(edge(format!("s{i}"), format!("t{}", i % k + 1)));
    }
    Ok(GraphJson { vertices, edges })
}

/// A validated configuration with presets expanded.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: ExperimentConfig,
    pub ensemble: ProfiledEnsemble,
    pub labels: BTreeMap<String, Polynomial>,
    pub graphs: Vec<(GraphJson, TestGraph<String>)>,
}

/// Echo of the resolved configuration embedded in every report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub sizes: [usize; 3],
    pub law_w: EntryLaw,
    pub law_x: EntryLaw,
    pub profile_w: StepProfile,
    pub profile_x: StepProfile,
    pub graphs: Vec<GraphJson>,
    pub labels: BTreeMap<String, ResolvedLabel>,
    pub trials: usize,
    pub seed: u64,
    pub threads: Option<usize>,
    pub component: Component,
    pub spectrum: SpectrumOptions,
    pub decompose: DecomposeOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedLabel {
    pub polynomial: Polynomial,
    pub display: String,
}

impl Resolved {
    pub fn echo(&self) -> ResolvedConfig {
        let c = &self.config;
        ResolvedConfig {
            sizes: self.ensemble.layout.sizes(),
            law_w: self.ensemble.law_w.clone(),
            law_x: self.ensemble.law_x.clone(),
            profile_w: self.ensemble.profile_w.clone(),
            profile_x: self.ensemble.profile_x.clone(),
            graphs: self.graphs.iter().map(|(j, _)| j.clone()).collect(),
            labels: self
                .labels
                .iter()
                .map(|(k, p)| (k.clone(), ResolvedLabel { polynomial: p.clone(), display: p.to_string() }))
                .collect(),
            trials: c.trials,
            seed: c.seed,
            threads: c.threads,
            component: c.component,
            spectrum: c.spectrum.clone(),
            decompose: c.decompose.clone(),
        }
    }

    fn require_graphs(&self) -> Result<(), ExperimentError> {
        if self.graphs.is_empty() {
            return Err(config_err("no graph configured"));
        }
        Ok(())
    }

    fn polynomial_graph(&self, g: &TestGraph<String>) -> TestGraph<Polynomial> {
        g.map_labels(|e| self.labels[&e.label].clone())
    }

    fn labels_used(&self) -> Vec<String> {
        let mut used: Vec<String> = self.graphs.iter().flat_map(|(_, g)| g.edges().iter().map(|e| e.label.clone())).collect();
        used.sort();
        used.dedup();
        used
    }
}

/// Matrix of one component for one label, given the trial's `(W, X)`.
pub fn component_matrix(
    component: Component,
    h: &Polynomial,
    ens: &ProfiledEnsemble,
    wx: (&DMatrix<f64>, &DMatrix<f64>),
    seed: u64,
    trial: u64,
) -> Result<DMatrix<f64>, ExperimentError> {
    let (w, x) = wx;
    let layout = &ens.layout;
    Ok(match component {
        Component::Pw => pw_matrix(h, w, x, layout)?,
        Component::Equivalent => equivalent_sample(h, ens, seed, trial)?.total(),
        Component::EquivalentLin => equivalent_lin(h, ens, seed, trial),
        Component::EquivalentPer => {
            let mut s = DMatrix::zeros(ens.n1(), ens.n2());
            for m in 2..=h.degree() {
                s += equivalent_per(h, ens, m, seed, trial)?;
            }
            s
        }
        Component::EquivalentDef => equivalent_def(h, ens),
        Component::Lin | Component::Per | Component::Def | Component::Eps => {
            let d = decompose(h, w, x, layout)?;
            match component {
                Component::Lin => d.lin,
                Component::Def => d.def,
                Component::Eps => d.eps,
                _ => d.per.values().fold(DMatrix::zeros(ens.n1(), ens.n2()), |acc, m| acc + m),
            }
        }
    })
}

/// Sampler turning each label into its component matrix, embedded as a
/// `N1 × N2` block.
pub struct ComponentSampler<'a> {
    pub ensemble: &'a ProfiledEnsemble,
    pub labels: BTreeMap<String, Polynomial>,
    pub component: Component,
}

impl FamilySampler for ComponentSampler<'_> {
    fn sample(&self, seed: u64, trial: u64) -> Result<LabeledMatrixFamily<f64>, TrafficError> {
        let ens = self.ensemble;
        let needs_wx = matches!(self.component, Component::Pw | Component::Lin | Component::Per | Component::Def | Component::Eps);
        let (w, x) = if needs_wx {
            ens.sample_trial(seed, trial)
        } else {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, 0))
        };
        let mut family = LabeledMatrixFamily::new(ens.layout);
        for (name, h) in &self.labels {
            let m = component_matrix(self.component, h, ens, (&w, &x), seed, trial)
                .map_err(|e| TrafficError::Degenerate(e.to_string()))?;
            family.insert(name, m, 2, 1)?;
        }
        Ok(family)
    }
}

/// Monte Carlo `τ_N` of several graphs on shared samples.
pub fn simulate_graphs(
    ensemble: &ProfiledEnsemble,
    labels: &BTreeMap<String, Polynomial>,
    graphs: &[TestGraph<String>],
    component: Component,
    trials: usize,
    seed: u64,
    threads: Option<usize>,
) -> Result<Vec<McEstimate>, ExperimentError> {
    if trials < 1 {
        return Err(config_err("trials must be at least 1"));
    }
    let sampler = ComponentSampler { ensemble, labels: labels.clone(), component };
    let samples = tau_samples(graphs, &sampler, trials, seed, threads)?;
    Ok(samples.into_iter().map(|v| McEstimate::from_values(v, seed)).collect())
}

/// One reported quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub quantity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub component: Option<String>,
    pub estimate: Option<f64>,
    pub std_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trials: Option<usize>,
    pub exact: Option<String>,
    pub exact_value: Option<f64>,
    pub z_score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Record {
    pub fn new(quantity: impl Into<String>) -> Self {
        Self {
            quantity: quantity.into(),
            graph: None,
            component: None,
            estimate: None,
            std_error: None,
            trials: None,
            exact: None,
            exact_value: None,
            z_score: None,
            note: None,
        }
    }

    pub fn graph(mut self, g: usize) -> Self {
        self.graph = Some(g);
        self
    }

    pub fn component(mut self, c: Component) -> Self {
        self.component = Some(c.name().into());
        self
    }

    pub fn estimate(mut self, mc: &McEstimate) -> Self {
        self.estimate = Some(mc.mean);
        self.std_error = mc.std_error;
        self.trials = Some(mc.trials);
        self.rescore()
    }

    pub fn value(mut self, v: f64, se: Option<f64>) -> Self {
        self.estimate = Some(v);
        self.std_error = se;
        self.rescore()
    }

    pub fn exact(mut self, r: &Rational) -> Self {
        self.exact = Some(r.to_string());
        self.exact_value = r.to_f64();
        self.rescore()
    }

    pub fn note(mut self, n: impl Into<String>) -> Self {
        self.note = Some(n.into());
        self
    }

    /// `z = (estimate − exact)/std_error` when all three exist; a zero
    /// standard error scores 0 on exact agreement and is left empty otherwise.
    fn rescore(mut self) -> Self {
        self.z_score = match (self.estimate, self.std_error, self.exact_value) {
            (Some(m), Some(se), Some(x)) if se > 0.0 => Some((m - x) / se),
            (Some(m), Some(_), Some(x)) if m == x => Some(0.0),
            _ => None,
        };
        self
    }
}

/// Exact limits of one graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLimits {
    pub graph: usize,
    pub values: Vec<LimitValue>,
    pub odd_labels: bool,
    pub mismatch: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub bin_left: Vec<f64>,
    pub count: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub label: String,
    /// First four moments `N1⁻¹ Tr (YYᵗ)ᵏ` of each matrix.
    pub moments_pw: [f64; 4],
    pub moments_equivalent: [f64; 4],
    pub max_singular_pw: f64,
    pub max_singular_equivalent: f64,
    pub histogram_pw: Histogram,
    pub histogram_equivalent: Histogram,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub label: String,
    pub norms: BTreeMap<String, f64>,
    /// `‖lin + Σ per + def + eps − Y‖ / ‖Y‖`.
    pub reassembly_residual: f64,
    /// `‖eps − eps_explicit‖ / ‖Y‖`.
    pub eps_cross_check: f64,
    pub eps_types: BTreeMap<usize, Vec<IntegerPartition>>,
    pub files: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub config: ResolvedConfig,
    pub seed: u64,
    pub records: Vec<Record>,
    /// Raised when an exact identity fails; nonempty means exit code 3.
    pub flags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub limits: Option<Vec<GraphLimits>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum: Option<SpectrumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decomposition: Option<Vec<DecompositionReport>>,
    pub wall_clock_seconds: f64,
}

impl Report {
    fn new(command: &str, resolved: &Resolved) -> Self {
        Self {
            command: command.into(),
            config: resolved.echo(),
            seed: resolved.config.seed,
            records: Vec::new(),
            flags: Vec::new(),
            limits: None,
            spectrum: None,
            decomposition: None,
            wall_clock_seconds: 0.0,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Records as CSV.
    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["quantity", "graph", "component", "estimate", "std_error", "trials", "exact", "z_score", "note"])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.records {
            w.write_record([
                r.quantity.clone(),
                opt(r.graph.map(|g| g.to_string())),
                opt(r.component.clone()),
                opt(r.estimate.map(|v| v.to_string())),
                opt(r.std_error.map(|v| v.to_string())),
                opt(r.trials.map(|v| v.to_string())),
                opt(r.exact.clone()),
                opt(r.z_score.map(|v| v.to_string())),
                opt(r.note.clone()),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| ExperimentError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

fn exact_limit(resolved: &Resolved, g: &TestGraph<String>, kind: LimitKind) -> Result<Rational, ExperimentError> {
    let params = LimitParams::from_ensemble(&resolved.ensemble)?;
    Ok(limit_breakdown(kind, &resolved.polynomial_graph(g), &params)?.value)
}

fn exact_for(resolved: &Resolved, g: &TestGraph<String>, component: Component) -> Result<Option<Rational>, ExperimentError> {
    if component == Component::Eps {
        let odd = g.edges().iter().all(|e| resolved.labels[&e.label].is_odd());
        return Ok(odd.then(Rational::zero));
    }
    match component.limit_kind() {
        Some(kind) => exact_limit(resolved, g, kind).map(Some),
        None => Ok(None),
    }
}

fn attach_exact(record: Record, exact: Result<Option<Rational>, ExperimentError>) -> Record {
    match exact {
        Ok(Some(r)) => record.exact(&r),
        Ok(None) => record,
        Err(e) => record.note(format!("no exact value: {e}")),
    }
}

fn finish(mut report: Report, start: Instant) -> Report {
    report.wall_clock_seconds = start.elapsed().as_secs_f64();
    report
}

/// Monte Carlo `τ_N` of each configured graph for the configured component.
pub fn cmd_simulate(config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let start = Instant::now();
    let r = config.resolve()?;
    r.require_graphs()?;
    let graphs: Vec<TestGraph<String>> = r.graphs.iter().map(|(_, g)| g.clone()).collect();
    let labels: BTreeMap<String, Polynomial> = r.labels_used().into_iter().map(|k| (k.clone(), r.labels[&k].clone())).collect();
    let c = config.component;
    let estimates = simulate_graphs(&r.ensemble, &labels, &graphs, c, config.trials, config.seed, config.threads)?;
    let mut report = Report::new("simulate", &r);
    for (k, (g, mc)) in graphs.iter().zip(&estimates).enumerate() {
        let rec = Record::new("tau").graph(k).component(c).estimate(mc);
        report.records.push(attach_exact(rec, exact_for(&r, g, c)));
    }
    Ok(finish(report, start))
}

/// Exact limits of each configured graph; flags `pw ≠ equivalent_sum` on
/// odd labels.
pub fn cmd_limit(config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let start = Instant::now();
    let r = config.resolve()?;
    r.require_graphs()?;
    let params = LimitParams::from_ensemble(&r.ensemble)?;
    let mut report = Report::new("limit", &r);
    let mut all = Vec::new();
    for (k, (_, g)) in r.graphs.iter().enumerate() {
        let tp = r.polynomial_graph(g);
        let odd = tp.edges().iter().all(|e| e.label.is_odd());
        let mut values = Vec::new();
        for kind in LimitKind::ALL {
            if kind == LimitKind::EquivalentSum && !odd {
                continue;
            }
            let v = limit_breakdown(kind, &tp, &params)?;
            report.records.push(Record::new(format!("limit_{}", kind.name())).graph(k).exact(&v.value));
            values.push(v);
        }
        let pw = values.iter().find(|v| v.kind == LimitKind::Pw).map(|v| v.value.clone());
        let sum = values.iter().find(|v| v.kind == LimitKind::EquivalentSum).map(|v| v.value.clone());
        let mismatch = odd && pw != sum;
        if mismatch {
            report.flags.push(format!("graph {k}: limit_pw differs from limit_equivalent_sum"));
        }
        all.push(GraphLimits { graph: k, values, odd_labels: odd, mismatch });
    }
    report.limits = Some(all);
    Ok(finish(report, start))
}

/// `Y(h)` against its assembled Gaussian equivalent on each graph.
pub fn cmd_compare(config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let start = Instant::now();
    let r = config.resolve()?;
    r.require_graphs()?;
    let graphs: Vec<TestGraph<String>> = r.graphs.iter().map(|(_, g)| g.clone()).collect();
    let labels: BTreeMap<String, Polynomial> = r.labels_used().into_iter().map(|k| (k.clone(), r.labels[&k].clone())).collect();
    let (trials, seed, threads) = (config.trials, config.seed, config.threads);
    let pw = simulate_graphs(&r.ensemble, &labels, &graphs, Component::Pw, trials, seed, threads)?;
    let eq = simulate_graphs(&r.ensemble, &labels, &graphs, Component::Equivalent, trials, seed, threads)?;
    let mut report = Report::new("compare", &r);
    for (k, g) in graphs.iter().enumerate() {
        let exact = exact_for(&r, g, Component::Pw);
        let exact_copy = exact.as_ref().map(Clone::clone).map_err(|e| config_err(e.to_string()));
        report.records.push(attach_exact(Record::new("tau").graph(k).component(Component::Pw).estimate(&pw[k]), exact));
        report.records.push(attach_exact(
            Record::new("tau").graph(k).component(Component::Equivalent).estimate(&eq[k]),
            exact_copy,
        ));
        let se = match (pw[k].std_error, eq[k].std_error) {
            (Some(a), Some(b)) => Some((a * a + b * b).sqrt()),
            _ => None,
        };
        report.records.push(Record::new("tau_difference").graph(k).value(pw[k].mean - eq[k].mean, se).exact(&Rational::zero()));
    }
    Ok(finish(report, start))
}

/// `[x_min, x_max]` split in bins of width `2·IQR·n^{-1/3}` unless `bins` is given.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: Option<usize>) -> Histogram {
    let n = values.len();
    let span = hi - lo;
    let count = match bins {
        Some(b) => b.clamp(1, MAX_BINS),
        None => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let q = |p: f64| {
                if sorted.is_empty() {
                    return 0.0;
                }
                let pos = p * (sorted.len() - 1) as f64;
                let (i, frac) = (pos.floor() as usize, pos - pos.floor());
                let next = sorted[(i + 1).min(sorted.len() - 1)];
                sorted[i] + frac * (next - sorted[i])
            };
            let width = 2.0 * (q(0.75) - q(0.25)) / (n.max(1) as f64).cbrt();
            if width > 0.0 && span > 0.0 {
                ((span / width).ceil() as usize).clamp(1, MAX_BINS)
            } else {
                1
            }
        }
    };
    let width = if span > 0.0 { span / count as f64 } else { 0.0 };
    let mut counts = vec![0usize; count];
    for &v in values {
        let i = if width > 0.0 { (((v - lo) / width).floor() as usize).min(count - 1) } else { 0 };
        counts[i] += 1;
    }
    Histogram { bin_width: width, bin_left: (0..count).map(|i| lo + i as f64 * width).collect(), count: counts }
}

fn write_histogram(path: &Path, h: &Histogram) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["bin_left", "count"])?;
    for (l, c) in h.bin_left.iter().zip(&h.count) {
        w.write_record([l.to_string(), c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn gram_eigenvalues(y: &DMatrix<f64>) -> Vec<f64> {
    let gram = y * y.transpose();
    let mut ev: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().map(|&v| v.max(0.0)).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

fn moments(ev: &[f64]) -> [f64; 4] {
    let n = ev.len().max(1) as f64;
    let mut out = [0.0; 4];
    for (k, o) in out.iter_mut().enumerate() {
        *o = ev.iter().map(|v| v.powi(k as i32 + 1)).sum::<f64>() / n;
    }
    out
}

/// Eigenvalues of `YYᵗ` for `Y(h)` and its equivalent in trial 0, binned
/// on a shared grid; histograms go to `<prefix>_pw.csv` and
/// `<prefix>_equivalent.csv` when a prefix is given.
pub fn cmd_spectrum(config: &ExperimentConfig, histogram_prefix: Option<&Path>) -> Result<Report, ExperimentError> {
    let start = Instant::now();
    let r = config.resolve()?;
    let ens = &r.ensemble;
    if ens.n1() > MAX_SPECTRUM_ROWS {
        return Err(config_err(format!("N1 = {} exceeds the eigensolver cap {MAX_SPECTRUM_ROWS}", ens.n1())));
    }
    let label = match &config.spectrum.label {
        Some(l) => l.clone(),
        None => r.labels.keys().next().cloned().ok_or_else(|| config_err("no label configured"))?,
    };
    let h = r.labels.get(&label).ok_or_else(|| config_err(format!("undefined label {label:?}")))?;
    let (w, x) = ens.sample_trial(config.seed, 0);
    let y = pw_matrix(h, &w, &x, &ens.layout)?;
    let yeq = equivalent_sample(h, ens, config.seed, 0)?.total();
    let ev = gram_eigenvalues(&y);
    let ev_eq = gram_eigenvalues(&yeq);
    let lo = ev.iter().chain(&ev_eq).copied().fold(f64::INFINITY, f64::min);
    let hi = ev.iter().chain(&ev_eq).copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = config.spectrum.bins.or_else(|| Some(histogram(&ev, lo, hi, None).count.len()));
    let hist = histogram(&ev, lo, hi, bins);
    let hist_eq = histogram(&ev_eq, lo, hi, bins);
    let mut files = Vec::new();
    if let Some(prefix) = histogram_prefix {
        for (suffix, hg) in [("pw", &hist), ("equivalent", &hist_eq)] {
            let path = prefix.with_file_name(format!(
                "{}_{suffix}.csv",
                prefix.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "spectrum".into())
            ));
            write_histogram(&path, hg)?;
            files.push(path.display().to_string());
        }
    }
    let m = moments(&ev);
    let m_eq = moments(&ev_eq);
    let mut report = Report::new("spectrum", &r);
    let scale = Rational::new(ens.layout.n().into(), ens.n1().into());
    for k in 1..=4 {
        let exact = if k <= 2 {
            let g = preset_graph(&format!("moment-{k}"), &label)?.to_graph()?;
            exact_limit(&r, &g, LimitKind::Pw).map(|v| Some(v * &scale))
        } else {
            Ok(None)
        };
        let rec = Record::new(format!("gram_moment_{k}")).component(Component::Pw).value(m[k - 1], None);
        report.records.push(attach_exact(rec, exact));
        report.records.push(Record::new(format!("gram_moment_{k}")).component(Component::Equivalent).value(m_eq[k - 1], None));
    }
    report.spectrum = Some(SpectrumReport {
        label,
        moments_pw: m,
        moments_equivalent: m_eq,
        max_singular_pw: ev.last().copied().unwrap_or(0.0).sqrt(),
        max_singular_equivalent: ev_eq.last().copied().unwrap_or(0.0).sqrt(),
        histogram_pw: hist,
        histogram_equivalent: hist_eq,
        files,
    });
    Ok(finish(report, start))
}

/// Frobenius norms of the decomposition parts of each label in trial 0.
pub fn cmd_decompose(config: &ExperimentConfig) -> Result<Report, ExperimentError> {
    let start = Instant::now();
    let r = config.resolve()?;
    if r.labels.is_empty() {
        return Err(config_err("no label configured"));
    }
    let ens = &r.ensemble;
    let (w, x) = ens.sample_trial(config.seed, 0);
    let mut report = Report::new("decompose", &r);
    let mut out = Vec::new();
    for (name, h) in &r.labels {
        let d = decompose(h, &w, &x, &ens.layout)?;
        let mut parts: Vec<(String, &DMatrix<f64>)> = vec![("y".into(), &d.y), ("lin".into(), &d.lin)];
        for (m, p) in &d.per {
            parts.push((format!("per_{m}"), p));
        }
        parts.push(("def".into(), &d.def));
        parts.push(("eps".into(), &d.eps));
        parts.push(("eps_explicit".into(), &d.eps_explicit));
        let norms: BTreeMap<String, f64> = parts.iter().map(|(k, m)| (k.clone(), m.norm())).collect();
        let scale = d.y.norm();
        let rel = |v: f64| if scale > 0.0 { v / scale } else { v };
        let residual = rel((d.reassembled() - &d.y).norm());
        let cross = rel((&d.eps - &d.eps_explicit).norm());
        let mut files = Vec::new();
        if let Some(dir) = &config.decompose.dump_dir {
            std::fs::create_dir_all(dir)?;
            for (k, m) in &parts {
                let path = Path::new(dir).join(format!("{name}_{k}.bin"));
                write_matrix_binary(&path, m)?;
                files.push(path.display().to_string());
            }
        }
        for (k, v) in &norms {
            report.records.push(Record::new(format!("norm_{k}")).note(format!("label {name}")).value(*v, None));
        }
        report.records.push(Record::new("reassembly_residual").note(format!("label {name}")).value(residual, None));
        out.push(DecompositionReport {
            label: name.clone(),
            norms,
            reassembly_residual: residual,
            eps_cross_check: cross,
            eps_types: d.eps_types.clone(),
            files,
        });
    }
    report.decomposition = Some(out);
    Ok(finish(report, start))
}
