//! Profiled Pennington-Worah matrices, their `Z(λ)` building blocks, the
//! canonical decomposition and the Gaussian equivalents.
//!
//! `W` is `N1 × N0` and `X` is `N0 × N2`; the nonlinear matrix is
//! `Y(h) = (√ψ0/√N) · h[WX/√N0]` applied entrywise.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hermite::{expect_derivative_scaled, Polynomial};
use crate::partitions::{count_of_type_unchecked, integer_partitions, IntegerPartition, RgsIter};
use crate::traffic::{BlockLayout, Ring, TrafficError};
use crate::Rational;

/// Largest number of parts accepted by [`z_lambda`].
pub const MAX_PARTS: usize = 8;
/// Largest degree accepted by [`decompose`].
pub const MAX_DECOMPOSE_DEGREE: usize = 7;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("entry law is invalid: {0}")]
    Law(String),
    #[error("profile is invalid: {0}")]
    Profile(String),
    #[error("{what} is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    DimensionMismatch { what: &'static str, rows: usize, cols: usize, expected_rows: usize, expected_cols: usize },
    #[error("partition has {parts} parts, at most {max} are supported")]
    TooManyParts { parts: usize, max: usize },
    #[error("polynomial has even-degree terms")]
    NotOdd,
    #[error("polynomial degree {degree} exceeds {max}")]
    DegreeTooLarge { degree: usize, max: usize },
    #[error("order {0} is not supported here")]
    BadOrder(usize),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

pub(crate) mod rational_str {
    use crate::hermite::parse_rational;
    use crate::Rational;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&r.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rational, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Text(String),
            Int(i64),
            Float(f64),
        }
        match Raw::deserialize(d)? {
            Raw::Text(t) => parse_rational(&t).map_err(serde::de::Error::custom),
            Raw::Int(i) => Ok(Rational::from_integer(i.into())),
            Raw::Float(f) => Rational::from_float(f).ok_or_else(|| serde::de::Error::custom("non-finite number")),
        }
    }
}

pub(crate) mod rational_grid {
    use crate::Rational;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Cell(#[serde(with = "super::rational_str")] Rational);

    pub fn serialize<S: Serializer>(g: &[Vec<Rational>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<String>> = g.iter().map(|r| r.iter().map(ToString::to_string).collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Rational>>, D::Error> {
        let rows: Vec<Vec<Cell>> = Vec::deserialize(d)?;
        Ok(rows.into_iter().map(|r| r.into_iter().map(|c| c.0).collect()).collect())
    }
}

/// Law of the standardized entries of `W′` and `X′`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EntryLaw {
    Gaussian,
    Rademacher,
    /// Value `a` with probability `p`, else `b`.
    SkewedTwoPoint {
        #[serde(with = "rational_str")]
        a: Rational,
        #[serde(with = "rational_str")]
        b: Rational,
        #[serde(with = "rational_str")]
        p: Rational,
    },
}

impl EntryLaw {
    /// Two-point law with the given values and probability of `a`.
    pub fn skewed(a: Rational, b: Rational, p: Rational) -> Result<Self, ModelError> {
        let law = EntryLaw::SkewedTwoPoint { a, b, p };
        law.validate()?;
        Ok(law)
    }

    /// Checks mean zero and unit variance exactly.
    pub fn validate(&self) -> Result<(), ModelError> {
        if let EntryLaw::SkewedTwoPoint { a, b, p } = self {
            if !p.is_positive() || *p >= Rational::one() {
                return Err(ModelError::Law(format!("probability {p} is not in (0, 1)")));
            }
            let q = Rational::one() - p;
            let mean = p * a + &q * b;
            let var = p * a * a + &q * b * b;
            if !mean.is_zero() {
                return Err(ModelError::Law(format!("mean is {mean}, expected 0")));
            }
            if !var.is_one() {
                return Err(ModelError::Law(format!("variance is {var}, expected 1")));
            }
        }
        Ok(())
    }

    pub fn m3(&self) -> Rational {
        match self {
            EntryLaw::Gaussian | EntryLaw::Rademacher => Rational::zero(),
            EntryLaw::SkewedTwoPoint { a, b, p } => p * a * a * a + (Rational::one() - p) * b * b * b,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EntryLaw::Gaussian => rng.sample(StandardNormal),
            EntryLaw::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            EntryLaw::SkewedTwoPoint { a, b, p } => {
                let p = p.to_f64().unwrap_or(0.5);
                if rng.random::<f64>() < p {
                    a.to_f64().unwrap_or(f64::NAN)
                } else {
                    b.to_f64().unwrap_or(f64::NAN)
                }
            }
        }
    }
}

/// Step-function variance profile on a `K × K′` grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "ProfileGrid", into = "ProfileGrid")]
pub struct StepProfile {
    grid: Vec<Vec<Rational>>,
}

#[derive(Serialize, Deserialize)]
#[serde(transparent)]
struct ProfileGrid(#[serde(with = "rational_grid")] Vec<Vec<Rational>>);

impl TryFrom<ProfileGrid> for StepProfile {
    type Error = ModelError;

    fn try_from(g: ProfileGrid) -> Result<Self, ModelError> {
        StepProfile::new(g.0)
    }
}

impl From<StepProfile> for ProfileGrid {
    fn from(p: StepProfile) -> Self {
        ProfileGrid(p.grid)
    }
}

/// 0-based grid cell of index `i` among `len` indices split into `k` cells.
pub fn cell_index(i: usize, len: usize, k: usize) -> usize {
    ((i + 1) * k).div_ceil(len) - 1
}

impl StepProfile {
    pub fn new(grid: Vec<Vec<Rational>>) -> Result<Self, ModelError> {
        let cols = grid.first().map_or(0, Vec::len);
        if grid.is_empty() || cols == 0 || grid.iter().any(|r| r.len() != cols) {
            return Err(ModelError::Profile("grid must be a nonempty rectangle".into()));
        }
        if grid.iter().flatten().any(Signed::is_negative) {
            return Err(ModelError::Profile("entries must be nonnegative".into()));
        }
        Ok(Self { grid })
    }

    pub fn constant(c: Rational) -> Self {
        Self { grid: vec![vec![c]] }
    }

    pub fn ones() -> Self {
        Self::constant(Rational::one())
    }

    pub fn grid(&self) -> &[Vec<Rational>] {
        &self.grid
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.grid.len(), self.grid[0].len())
    }

    pub fn value(&self, i: usize, j: usize, rows: usize, cols: usize) -> &Rational {
        let (k, kp) = self.shape();
        &self.grid[cell_index(i, rows, k)][cell_index(j, cols, kp)]
    }

    /// The `rows × cols` matrix `Γ`.
    pub fn realize(&self, rows: usize, cols: usize) -> DMatrix<f64> {
        let vals: Vec<Vec<f64>> =
            self.grid.iter().map(|r| r.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()).collect();
        let (k, kp) = self.shape();
        DMatrix::from_fn(rows, cols, |i, j| vals[cell_index(i, rows, k)][cell_index(j, cols, kp)])
    }
}

/// Sizes, entry laws and variance profiles of the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProfiledEnsemble {
    pub layout: BlockLayout,
    pub law_w: EntryLaw,
    pub law_x: EntryLaw,
    pub profile_w: StepProfile,
    pub profile_x: StepProfile,
}

/// Random stream tags; each tag owns a disjoint ChaCha stream per trial.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    W,
    X,
    GaussW,
    GaussX,
    Noise(usize),
    Aux(u64),
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::W => 1,
            Stream::X => 2,
            Stream::GaussW => 3,
            Stream::GaussX => 4,
            Stream::Noise(m) => 16 + m as u64,
            Stream::Aux(k) => 128 + k,
        }
    }
}

/// RNG for `(seed, trial, stream)`; the ChaCha stream id is
/// `trial · 256 + tag`.
pub fn stream_rng(seed: u64, trial: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial.wrapping_mul(256).wrapping_add(stream.tag()));
    rng
}

fn law_matrix(law: &EntryLaw, rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    // Row-major fill order.
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(law.sample(rng));
    }
    DMatrix::from_row_slice(rows, cols, &data)
}

fn gaussian_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    law_matrix(&EntryLaw::Gaussian, rows, cols, rng)
}

impl ProfiledEnsemble {
    pub fn new(
        layout: BlockLayout,
        law_w: EntryLaw,
        law_x: EntryLaw,
        profile_w: StepProfile,
        profile_x: StepProfile,
    ) -> Result<Self, ModelError> {
        law_w.validate()?;
        law_x.validate()?;
        Ok(Self { layout, law_w, law_x, profile_w, profile_x })
    }

    /// Gaussian entries and constant unit profiles.
    pub fn gaussian(layout: BlockLayout) -> Self {
        Self {
            layout,
            law_w: EntryLaw::Gaussian,
            law_x: EntryLaw::Gaussian,
            profile_w: StepProfile::ones(),
            profile_x: StepProfile::ones(),
        }
    }

    pub fn n0(&self) -> usize {
        self.layout.size(0)
    }

    pub fn n1(&self) -> usize {
        self.layout.size(1)
    }

    pub fn n2(&self) -> usize {
        self.layout.size(2)
    }

    pub fn gamma_w(&self) -> DMatrix<f64> {
        self.profile_w.realize(self.n1(), self.n0())
    }

    pub fn gamma_x(&self) -> DMatrix<f64> {
        self.profile_x.realize(self.n0(), self.n2())
    }

    /// `(W, X)` for one trial.
    pub fn sample_trial(&self, seed: u64, trial: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let w = law_matrix(&self.law_w, self.n1(), self.n0(), &mut stream_rng(seed, trial, Stream::W));
        let x = law_matrix(&self.law_x, self.n0(), self.n2(), &mut stream_rng(seed, trial, Stream::X));
        (self.gamma_w().component_mul(&w), self.gamma_x().component_mul(&x))
    }

    pub fn sample(&self, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        self.sample_trial(seed, 0)
    }

    /// Profiled Gaussian pair `(W^Gau, X^Gau)`, independent of `sample_trial`.
    pub fn sample_gaussian_trial(&self, seed: u64, trial: u64) -> (DMatrix<f64>, DMatrix<f64>) {
        let w = gaussian_matrix(self.n1(), self.n0(), &mut stream_rng(seed, trial, Stream::GaussW));
        let x = gaussian_matrix(self.n0(), self.n2(), &mut stream_rng(seed, trial, Stream::GaussX));
        (self.gamma_w().component_mul(&w), self.gamma_x().component_mul(&x))
    }
}

fn check_shapes(w: &DMatrix<f64>, x: &DMatrix<f64>, layout: &BlockLayout) -> Result<(), ModelError> {
    let (n0, n1, n2) = (layout.size(0), layout.size(1), layout.size(2));
    if w.shape() != (n1, n0) {
        return Err(ModelError::DimensionMismatch {
            what: "W",
            rows: w.nrows(),
            cols: w.ncols(),
            expected_rows: n1,
            expected_cols: n0,
        });
    }
    if x.shape() != (n0, n2) {
        return Err(ModelError::DimensionMismatch {
            what: "X",
            rows: x.nrows(),
            cols: x.ncols(),
            expected_rows: n0,
            expected_cols: n2,
        });
    }
    Ok(())
}

/// `γ = √ψ0/√N` and `γ0 = 1/√N0`.
pub fn scalings(layout: &BlockLayout) -> (f64, f64) {
    let n0 = layout.size(0) as f64;
    (n0.sqrt() / layout.n() as f64, 1.0 / n0.sqrt())
}

/// `Y(h) = γ · h[γ0 · WX]`.
pub fn pw_matrix(h: &Polynomial, w: &DMatrix<f64>, x: &DMatrix<f64>, layout: &BlockLayout) -> Result<DMatrix<f64>, ModelError> {
    check_shapes(w, x, layout)?;
    let (gamma, gamma0) = scalings(layout);
    let coeffs = h.power_coeffs_f64();
    let wx = w * x;
    Ok(wx.map(|v| gamma * crate::hermite::horner(&coeffs, gamma0 * v)))
}

/// Cache of `P_s = W^{∘s} × X^{∘s}`.
pub struct PowerProducts<'a, T: Ring> {
    w: &'a DMatrix<T>,
    x: &'a DMatrix<T>,
    cache: BTreeMap<usize, DMatrix<T>>,
}

fn entry_power<T: Ring>(m: &DMatrix<T>, s: usize) -> DMatrix<T> {
    m.map(|v| (1..s).fold(v.clone(), |acc, _| acc * v.clone()))
}

impl<'a, T: Ring> PowerProducts<'a, T> {
    pub fn new(w: &'a DMatrix<T>, x: &'a DMatrix<T>) -> Self {
        Self { w, x, cache: BTreeMap::new() }
    }

    pub fn get(&mut self, s: usize) -> &DMatrix<T> {
        let (w, x) = (self.w, self.x);
        self.cache.entry(s).or_insert_with(|| entry_power(w, s) * entry_power(x, s))
    }
}

/// Möbius coefficients of `Z(λ)` grouped by the multiset of merged part sums.
fn z_lambda_terms(lambda: &IntegerPartition) -> BTreeMap<Vec<usize>, i64> {
    let parts = lambda.parts();
    let mut terms: BTreeMap<Vec<usize>, i64> = BTreeMap::new();
    for rgs in RgsIter::new(parts.len()) {
        let k = rgs.iter().max().map_or(0, |m| m + 1);
        let mut sums = vec![0usize; k];
        let mut sizes = vec![0i64; k];
        for (b, &c) in rgs.iter().enumerate() {
            sums[c] += parts[b];
            sizes[c] += 1;
        }
        let mut coeff = 1i64;
        for &s in &sizes {
            let sign = if s % 2 == 1 { 1 } else { -1 };
            coeff *= sign * (1..s).product::<i64>();
        }
        sums.sort_unstable();
        *terms.entry(sums).or_insert(0) += coeff;
    }
    terms.retain(|_, c| *c != 0);
    terms
}

fn small<T: Ring + From<i32>>(c: i64) -> T {
    T::from(i32::try_from(c).expect("Möbius coefficients are small"))
}

/// `Z(λ)(i, j) = Σ_{d distinct} Π_b (W(i, d_b) X(d_b, j))^{λ_b}`.
pub fn z_lambda_cached<T: Ring + From<i32>>(
    lambda: &IntegerPartition,
    products: &mut PowerProducts<'_, T>,
) -> Result<DMatrix<T>, ModelError> {
    if lambda.len() > MAX_PARTS {
        return Err(ModelError::TooManyParts { parts: lambda.len(), max: MAX_PARTS });
    }
    let (r, c) = (products.w.nrows(), products.x.ncols());
    let mut out = DMatrix::<T>::zeros(r, c);
    if lambda.is_empty() {
        return Ok(out.map(|_| T::one()));
    }
    for (sums, coeff) in z_lambda_terms(lambda) {
        let mut term = products.get(sums[0]).clone();
        for &s in &sums[1..] {
            term.component_mul_assign(products.get(s));
        }
        let k: T = small(coeff);
        out += term.map(|v| v * k.clone());
    }
    Ok(out)
}

pub fn z_lambda<T: Ring + From<i32>>(
    lambda: &IntegerPartition,
    w: &DMatrix<T>,
    x: &DMatrix<T>,
) -> Result<DMatrix<T>, ModelError> {
    if w.ncols() != x.nrows() {
        return Err(ModelError::DimensionMismatch {
            what: "X",
            rows: x.nrows(),
            cols: x.ncols(),
            expected_rows: w.ncols(),
            expected_cols: x.ncols(),
        });
    }
    z_lambda_cached(lambda, &mut PowerProducts::new(w, x))
}

/// The four parts of `Y(h)` plus the residual checks.
#[derive(Clone, Debug)]
pub struct Decomposition {
    pub y: DMatrix<f64>,
    pub lin: DMatrix<f64>,
    pub per: BTreeMap<usize, DMatrix<f64>>,
    pub def: DMatrix<f64>,
    pub eps: DMatrix<f64>,
    /// The remainder summed directly over the leftover partition types.
    pub eps_explicit: DMatrix<f64>,
    /// Partition types feeding the remainder, per monomial degree.
    pub eps_types: BTreeMap<usize, Vec<IntegerPartition>>,
}

impl Decomposition {
    pub fn reassembled(&self) -> DMatrix<f64> {
        let mut s = &self.lin + &self.def + &self.eps;
        for m in self.per.values() {
            s += m;
        }
        s
    }
}

/// Which named part a partition type of `n` feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TypeRole {
    Lin,
    Per(usize),
    Def,
    Eps,
}

pub fn type_role(lambda: &IntegerPartition) -> TypeRole {
    let n = lambda.total();
    let ones = lambda.multiplicity(1);
    if Some(lambda) == IntegerPartition::pairs_with_singletons(n, 1).as_ref() {
        return TypeRole::Lin;
    }
    if ones >= 2 && Some(lambda) == IntegerPartition::pairs_with_singletons(n, ones).as_ref() {
        return TypeRole::Per(ones);
    }
    if Some(lambda) == IntegerPartition::triple_with_pairs(n).as_ref() {
        return TypeRole::Def;
    }
    TypeRole::Eps
}

/// Splits `Y(h)` into linear, chaos, deformation and remainder parts by
/// partition type of the index pattern in `(WX)ⁿ`.
pub fn decompose(
    h: &Polynomial,
    w: &DMatrix<f64>,
    x: &DMatrix<f64>,
    layout: &BlockLayout,
) -> Result<Decomposition, ModelError> {
    if !h.is_odd() {
        return Err(ModelError::NotOdd);
    }
    if h.degree() > MAX_DECOMPOSE_DEGREE {
        return Err(ModelError::DegreeTooLarge { degree: h.degree(), max: MAX_DECOMPOSE_DEGREE });
    }
    let y = pw_matrix(h, w, x, layout)?;
    let (gamma, gamma0) = scalings(layout);
    let shape = (w.nrows(), x.ncols());
    let zeros = || DMatrix::<f64>::zeros(shape.0, shape.1);
    let mut lin = zeros();
    let mut def = zeros();
    let mut eps_explicit = zeros();
    let mut per: BTreeMap<usize, DMatrix<f64>> = BTreeMap::new();
    let mut eps_types = BTreeMap::new();
    let mut products = PowerProducts::new(w, x);
    for (n, a) in h.terms() {
        let scale = a.to_f64().unwrap_or(f64::NAN) * gamma * gamma0.powi(n as i32);
        for lambda in integer_partitions(n) {
            let c = count_of_type_unchecked(&lambda).to_f64().unwrap_or(f64::NAN);
            let z = z_lambda_cached(&lambda, &mut products)? * (scale * c);
            match type_role(&lambda) {
                TypeRole::Lin => lin += z,
                TypeRole::Per(m) => *per.entry(m).or_insert_with(zeros) += z,
                TypeRole::Def => def += z,
                TypeRole::Eps => {
                    eps_types.entry(n).or_insert_with(Vec::new).push(lambda.clone());
                    eps_explicit += z;
                }
            }
        }
    }
    let mut eps = &y - &lin - &def;
    for m in per.values() {
        eps -= m;
    }
    Ok(Decomposition { y, lin, per, def, eps, eps_explicit, eps_types })
}

/// `Λ_ℓ = N⁻¹ Γ_w^{∘ℓ} × Γ_x^{∘ℓ}`.
pub fn lambda_ell(ens: &ProfiledEnsemble, ell: usize) -> Result<DMatrix<f64>, ModelError> {
    if !(2..=3).contains(&ell) {
        return Err(ModelError::BadOrder(ell));
    }
    let gw = ens.gamma_w().map(|v| v.powi(ell as i32));
    let gx = ens.gamma_x().map(|v| v.powi(ell as i32));
    Ok((gw * gx) / ens.layout.n() as f64)
}

/// `M2 = √(Λ2/ψ0)`, entrywise; identically one for unit profiles.
pub fn m2_matrix(ens: &ProfiledEnsemble) -> DMatrix<f64> {
    let psi0 = ens.layout.psi_f64(0);
    lambda_ell(ens, 2).expect("order 2 is supported").map(|v| (v / psi0).sqrt())
}

/// Applies an exact polynomial entrywise, evaluating once per distinct value.
pub fn coefficient_matrix(p: &Polynomial, at: &DMatrix<f64>) -> DMatrix<f64> {
    let coeffs = p.power_coeffs_f64();
    let mut cache: HashMap<u64, f64> = HashMap::new();
    at.map(|v| *cache.entry(v.to_bits()).or_insert_with(|| crate::hermite::horner(&coeffs, v)))
}

fn factorial_f64(m: usize) -> f64 {
    (1..=m).map(|k| k as f64).product()
}

/// `E[h′(ξ M2)] ∘ (W^Gau X^Gau / N)`.
pub fn equivalent_lin(h: &Polynomial, ens: &ProfiledEnsemble, seed: u64, trial: u64) -> DMatrix<f64> {
    let coef = coefficient_matrix(&expect_derivative_scaled(h, 1), &m2_matrix(ens));
    let (wg, xg) = ens.sample_gaussian_trial(seed, trial);
    coef.component_mul(&((wg * xg) / ens.layout.n() as f64))
}

/// Profiled noise of Hermite order `n`: `M2^{∘n} ∘ G_n` with `G_n` i.i.d.
/// centered Gaussian of variance `ψ0 · n!/N`; zero for `n < 2`.
pub fn per_noise(ens: &ProfiledEnsemble, n: usize, seed: u64, trial: u64) -> DMatrix<f64> {
    let (r, c) = (ens.n1(), ens.n2());
    if n < 2 {
        return DMatrix::zeros(r, c);
    }
    let sd = (ens.layout.psi_f64(0) * factorial_f64(n) / ens.layout.n() as f64).sqrt();
    let g = gaussian_matrix(r, c, &mut stream_rng(seed, trial, Stream::Noise(n)));
    m2_matrix(ens).map(|v| v.powi(n as i32)).component_mul(&g) * sd
}

/// Noise matrices for Hermite orders `2..=max_order`.
pub fn per_noise_family(ens: &ProfiledEnsemble, max_order: usize, seed: u64, trial: u64) -> BTreeMap<usize, DMatrix<f64>> {
    (2..=max_order).map(|n| (n, per_noise(ens, n, seed, trial))).collect()
}

/// Linear extension `Σ_n c_n(h) · noise_n` over the Hermite coefficients.
pub fn per_noise_apply(h: &Polynomial, family: &BTreeMap<usize, DMatrix<f64>>, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    for (n, c) in h.hermite_coeffs().iter().enumerate().skip(2) {
        if c.is_zero() {
            continue;
        }
        if let Some(m) = family.get(&n) {
            out += m * c.to_f64().unwrap_or(f64::NAN);
        }
    }
    out
}

/// `(E[h⁽ᵐ⁾(ξ M2)]/m!) ∘ noise_m`.
pub fn equivalent_per(h: &Polynomial, ens: &ProfiledEnsemble, m: usize, seed: u64, trial: u64) -> Result<DMatrix<f64>, ModelError> {
    if m < 2 {
        return Err(ModelError::BadOrder(m));
    }
    if h.degree() < m {
        return Ok(DMatrix::zeros(ens.n1(), ens.n2()));
    }
    let scaled = expect_derivative_scaled(h, m).scale(&Rational::new(BigInt::one(), (1..=m).map(BigInt::from).product()));
    let coef = coefficient_matrix(&scaled, &m2_matrix(ens));
    Ok(coef.component_mul(&per_noise(ens, m, seed, trial)))
}

/// `(m3_w m3_x / 6N) · (Λ3/ψ0) ∘ E[h‴(ξ M2)]`.
pub fn equivalent_def(h: &Polynomial, ens: &ProfiledEnsemble) -> DMatrix<f64> {
    let m3 = (ens.law_w.m3() * ens.law_x.m3()).to_f64().unwrap_or(f64::NAN);
    let (r, c) = (ens.n1(), ens.n2());
    if m3 == 0.0 || h.degree() < 3 {
        return DMatrix::zeros(r, c);
    }
    let psi0 = ens.layout.psi_f64(0);
    let coef = coefficient_matrix(&expect_derivative_scaled(h, 3), &m2_matrix(ens));
    let l3 = lambda_ell(ens, 3).expect("order 3 is supported") / psi0;
    l3.component_mul(&coef) * (m3 / (6.0 * ens.layout.n() as f64))
}

/// The assembled Gaussian equivalent of `Y(h)` for one trial.
#[derive(Clone, Debug)]
pub struct EquivalentSample {
    pub lin: DMatrix<f64>,
    pub per: BTreeMap<usize, DMatrix<f64>>,
    pub def: DMatrix<f64>,
}

impl EquivalentSample {
    pub fn total(&self) -> DMatrix<f64> {
        let mut s = &self.lin + &self.def;
        for m in self.per.values() {
            s += m;
        }
        s
    }
}

pub fn equivalent_sample(h: &Polynomial, ens: &ProfiledEnsemble, seed: u64, trial: u64) -> Result<EquivalentSample, ModelError> {
    let lin = equivalent_lin(h, ens, seed, trial);
    let mut per = BTreeMap::new();
    for m in 2..=h.degree() {
        if !expect_derivative_scaled(h, m).is_zero() {
            per.insert(m, equivalent_per(h, ens, m, seed, trial)?);
        }
    }
    Ok(EquivalentSample { lin, per, def: equivalent_def(h, ens) })
}

/// Writes a matrix as two little-endian `u32` dimensions followed by
/// row-major `f64` values.
pub fn write_matrix_binary(path: &Path, m: &DMatrix<f64>) -> Result<(), ModelError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&(m.nrows() as u32).to_le_bytes())?;
    f.write_all(&(m.ncols() as u32).to_le_bytes())?;
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            f.write_all(&m[(i, j)].to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn read_matrix_binary(path: &Path) -> Result<DMatrix<f64>, ModelError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || ModelError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, "truncated matrix file"));
    if bytes.len() < 8 {
        return Err(bad());
    }
    let rows = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 8 * rows * cols {
        return Err(bad());
    }
    let vals: Vec<f64> =
        bytes[8..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &vals))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hermite::hermite;
    use num_bigint::BigInt;
    use proptest::prelude::{any, prop_assert_eq, proptest, ProptestConfig};

    fn r(a: i64, b: i64) -> Rational {
        Rational::new(a.into(), b.into())
    }

    fn ip(p: &[usize]) -> IntegerPartition {
        IntegerPartition::new(p.to_vec()).unwrap()
    }

    /// Direct loop over tuples of pairwise distinct summation indices.
    fn z_oracle(lambda: &IntegerPartition, w: &DMatrix<i64>, x: &DMatrix<i64>) -> DMatrix<i64> {
        let k = w.ncols();
        let parts = lambda.parts();
        let p = parts.len();
        DMatrix::from_fn(w.nrows(), x.ncols(), |i, j| {
            let mut total = 0i64;
            for code in 0..k.pow(p as u32) {
                let d: Vec<usize> = (0..p).map(|b| code / k.pow(b as u32) % k).collect();
                let mut s = d.clone();
                s.sort();
                s.dedup();
                if s.len() != p {
                    continue;
                }
                total += parts.iter().zip(&d).map(|(&l, &db)| (w[(i, db)] * x[(db, j)]).pow(l as u32)).product::<i64>();
            }
            total
        })
    }

    fn int_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<i64> {
        DMatrix::from_fn(r, c, |_, _| rng.random_range(-2..=2))
    }

    #[test]
    fn laws() {
        let s = EntryLaw::skewed(r(2, 1), r(-1, 2), r(1, 5)).unwrap();
        assert_eq!(s.m3(), r(3, 2));
        assert!(EntryLaw::skewed(r(1, 1), r(-1, 2), r(1, 5)).is_err());
        assert_eq!(EntryLaw::Rademacher.m3(), r(0, 1));
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"kind":"skewed_two_point","a":"2","b":"-1/2","p":"1/5"}"#);
        assert_eq!(serde_json::from_str::<EntryLaw>(&json).unwrap(), s);
        assert_eq!(serde_json::from_str::<EntryLaw>(r#"{"kind":"gaussian"}"#).unwrap(), EntryLaw::Gaussian);
    }

    #[test]
    fn law_sample_moments() {
        let s = EntryLaw::skewed(r(2, 1), r(-1, 2), r(1, 5)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for law in [EntryLaw::Gaussian, EntryLaw::Rademacher, s] {
            let n = 200_000;
            let xs: Vec<f64> = (0..n).map(|_| law.sample(&mut rng)).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| x * x).sum::<f64>() / n as f64;
            let m3 = xs.iter().map(|x| x * x * x).sum::<f64>() / n as f64;
            assert!(mean.abs() < 0.02, "{law:?} mean {mean}");
            assert!((var - 1.0).abs() < 0.02, "{law:?} var {var}");
            assert!((m3 - law.m3().to_f64().unwrap()).abs() < 0.06, "{law:?} m3 {m3}");
        }
    }

    #[test]
    fn profiles() {
        assert_eq!(cell_index(0, 4, 2), 0);
        assert_eq!(cell_index(1, 4, 2), 0);
        assert_eq!(cell_index(2, 4, 2), 1);
        assert_eq!(cell_index(4, 5, 2), 1);
        let p = StepProfile::new(vec![vec![r(1, 1), r(2, 1)], vec![r(3, 1), r(0, 1)]]).unwrap();
        let m = p.realize(4, 2);
        assert_eq!(m[(0, 1)], 2.0);
        assert_eq!(m[(3, 0)], 3.0);
        assert!(StepProfile::new(vec![vec![r(-1, 1)]]).is_err());
        let json = serde_json::to_string(&p).unwrap();
        assert_eq!(json, r#"[["1","2"],["3","0"]]"#);
        assert_eq!(serde_json::from_str::<StepProfile>(&json).unwrap(), p);
        assert_eq!(serde_json::from_str::<StepProfile>("[[1, 0.5]]").unwrap().grid()[0][1], r(1, 2));
    }

    #[test]
    fn sampling() {
        let layout = BlockLayout::new(30, 20, 25).unwrap();
        let mut ens = ProfiledEnsemble::gaussian(layout);
        let (w, x) = ens.sample(5);
        assert_eq!((w.shape(), x.shape()), ((20, 30), (30, 25)));
        assert_eq!(ens.sample(5), (w.clone(), x.clone()));
        assert_ne!(ens.sample_trial(5, 1).0, w);
        let mean = w.mean();
        let var = w.map(|v| v * v).mean();
        assert!(mean.abs() < 0.1 && (var - 1.0).abs() < 0.15);
        ens.profile_w = StepProfile::constant(r(0, 1));
        ens.profile_x = StepProfile::constant(r(0, 1));
        let (w0, x0) = ens.sample(5);
        assert!(w0.iter().chain(x0.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn pw_matrix_examples() {
        let layout = BlockLayout::new(3, 2, 2).unwrap();
        let ens = ProfiledEnsemble::gaussian(layout);
        let (w, x) = ens.sample(1);
        assert!(pw_matrix(&Polynomial::zero(), &w, &x, &layout).unwrap().iter().all(|&v| v == 0.0));
        let y1 = pw_matrix(&Polynomial::monomial(1), &w, &x, &layout).unwrap();
        let wx = &w * &x;
        let scale = (3.0f64 / 7.0).sqrt() / (7.0f64.sqrt() * 3.0f64.sqrt());
        for i in 0..2 {
            for j in 0..2 {
                assert!((y1[(i, j)] - scale * wx[(i, j)]).abs() < 1e-14);
            }
        }
        let (a, b) = (r(3, 2), r(-2, 1));
        let combo = Polynomial::monomial(3).scale(&a).add(&Polynomial::monomial(5).scale(&b));
        let lhs = pw_matrix(&combo, &w, &x, &layout).unwrap();
        let rhs = pw_matrix(&Polynomial::monomial(3), &w, &x, &layout).unwrap() * 1.5
            - pw_matrix(&Polynomial::monomial(5), &w, &x, &layout).unwrap() * 2.0;
        assert!((lhs - rhs).amax() < 1e-12);
        assert!(pw_matrix(&Polynomial::monomial(1), &x, &w, &layout).is_err());
    }

    #[test]
    fn z_lambda_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let w = int_matrix(&mut rng, 2, 4);
        let x = int_matrix(&mut rng, 4, 3);
        assert_eq!(z_lambda(&ip(&[1]), &w, &x).unwrap(), &w * &x);
        let w1 = int_matrix(&mut rng, 1, 3);
        let x1 = int_matrix(&mut rng, 3, 1);
        let direct: i64 = (0..3).map(|d| w1[(0, d)].pow(2) * x1[(d, 0)].pow(2)).sum();
        assert_eq!(z_lambda(&ip(&[2]), &w1, &x1).unwrap()[(0, 0)], direct);
        let wx = &w * &x;
        let pattern = wx.component_mul(&wx) - w.map(|v| v * v) * x.map(|v| v * v);
        assert_eq!(z_lambda(&ip(&[1, 1]), &w, &x).unwrap(), pattern);
        assert!(z_lambda(&ip(&[1; 9]), &w, &x).is_err());
    }

    #[test]
    fn z_lambda_type_sum_is_power() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let w = int_matrix(&mut rng, 2, 5);
        let x = int_matrix(&mut rng, 5, 2);
        for n in 1..=5 {
            let mut total = DMatrix::<i64>::zeros(2, 2);
            for lambda in integer_partitions(n) {
                let c = count_of_type_unchecked(&lambda);
                let c: i64 = c.try_into().unwrap();
                total += z_lambda(&lambda, &w, &x).unwrap() * c;
            }
            assert_eq!(total, (&w * &x).map(|v| v.pow(n as u32)));
        }
    }

    #[test]
    fn z_lambda_big_integers() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let w = int_matrix(&mut rng, 2, 4);
        let x = int_matrix(&mut rng, 4, 2);
        let wb = w.map(BigInt::from);
        let xb = x.map(BigInt::from);
        let lambda = ip(&[2, 1, 1]);
        assert_eq!(z_lambda(&lambda, &wb, &xb).unwrap(), z_oracle(&lambda, &w, &x).map(BigInt::from));
    }

    #[test]
    fn type_roles() {
        assert_eq!(type_role(&ip(&[2, 1])), TypeRole::Lin);
        assert_eq!(type_role(&ip(&[1])), TypeRole::Lin);
        assert_eq!(type_role(&ip(&[1, 1, 1])), TypeRole::Per(3));
        assert_eq!(type_role(&ip(&[3])), TypeRole::Def);
        assert_eq!(type_role(&ip(&[2, 1, 1, 1])), TypeRole::Per(3));
        assert_eq!(type_role(&ip(&[3, 2])), TypeRole::Def);
        for l in [&[5][..], &[4, 1], &[3, 1, 1]] {
            assert_eq!(type_role(&ip(l)), TypeRole::Eps);
        }
    }

    #[test]
    fn decomposition_examples() {
        let layout = BlockLayout::new(12, 8, 10).unwrap();
        let ens = ProfiledEnsemble::gaussian(layout);
        let (w, x) = ens.sample(3);
        let d1 = decompose(&Polynomial::monomial(1), &w, &x, &layout).unwrap();
        assert!((&d1.lin - &d1.y).amax() < 1e-14);
        assert!(d1.per.is_empty() && d1.def.amax() == 0.0 && d1.eps.amax() < 1e-14);

        let d3 = decompose(&Polynomial::monomial(3), &w, &x, &layout).unwrap();
        assert!(d3.eps.amax() < 1e-12 * d3.y.amax());
        assert!(d3.eps_types.is_empty());

        let d5 = decompose(&Polynomial::monomial(5), &w, &x, &layout).unwrap();
        assert_eq!(d5.eps_types[&5], vec![ip(&[5]), ip(&[4, 1]), ip(&[3, 1, 1])]);
        assert!((&d5.eps - &d5.eps_explicit).amax() < 1e-10 * d5.y.amax());

        assert!(matches!(decompose(&Polynomial::monomial(2), &w, &x, &layout), Err(ModelError::NotOdd)));
        assert!(matches!(decompose(&Polynomial::monomial(9), &w, &x, &layout), Err(ModelError::DegreeTooLarge { .. })));
    }

    #[test]
    fn decomposition_reassembles() {
        let layout = BlockLayout::new(25, 15, 20).unwrap();
        let ens = ProfiledEnsemble::gaussian(layout);
        let (w, x) = ens.sample(4);
        for h in [Polynomial::monomial(1), Polynomial::monomial(3), Polynomial::monomial(5), hermite(3), hermite(5), hermite(7)] {
            let d = decompose(&h, &w, &x, &layout).unwrap();
            let scale = d.y.amax().max(1e-300);
            assert!((d.reassembled() - &d.y).amax() <= 1e-12 * scale);
            assert!((&d.eps - &d.eps_explicit).amax() <= 1e-9 * scale, "{h}");
        }
    }

    #[test]
    fn lambda_and_m2() {
        let layout = BlockLayout::new(4, 3, 5).unwrap();
        let ens = ProfiledEnsemble::gaussian(layout);
        let l2 = lambda_ell(&ens, 2).unwrap();
        assert!(l2.iter().all(|&v| (v - 4.0 / 12.0).abs() < 1e-15));
        assert!(m2_matrix(&ens).iter().all(|&v| (v - 1.0).abs() < 1e-15));
        let mut zero = ens.clone();
        zero.profile_w = StepProfile::constant(r(0, 1));
        assert!(lambda_ell(&zero, 3).unwrap().iter().all(|&v| v == 0.0));
        assert!(lambda_ell(&ens, 4).is_err());

        let layout = BlockLayout::new(4, 4, 4).unwrap();
        let mut step = ProfiledEnsemble::gaussian(layout);
        step.profile_w = StepProfile::new(vec![vec![r(1, 1), r(2, 1)], vec![r(1, 2), r(1, 1)]]).unwrap();
        step.profile_x = StepProfile::new(vec![vec![r(1, 1), r(1, 2)], vec![r(3, 2), r(1, 1)]]).unwrap();
        let gw = step.gamma_w();
        let gx = step.gamma_x();
        let dense = DMatrix::from_fn(4, 4, |i, j| (0..4).map(|k| gw[(i, k)].powi(3) * gx[(k, j)].powi(3)).sum::<f64>() / 12.0);
        assert!((lambda_ell(&step, 3).unwrap() - dense).amax() < 1e-14);
    }

    #[test]
    fn equivalent_examples() {
        let layout = BlockLayout::new(20, 10, 15).unwrap();
        let ens = ProfiledEnsemble::gaussian(layout);
        let lin1 = equivalent_lin(&hermite(1), &ens, 7, 0);
        let (wg, xg) = ens.sample_gaussian_trial(7, 0);
        assert!((lin1 - (wg * xg) / 45.0).amax() < 1e-14);
        assert!(equivalent_lin(&Polynomial::zero(), &ens, 7, 0).amax() == 0.0);
        // Per-entry coefficient for g3 at μ² = 1/3.
        let mu = DMatrix::from_element(1, 1, (1.0f64 / 3.0).sqrt());
        let c = coefficient_matrix(&expect_derivative_scaled(&hermite(3), 1), &mu);
        assert!((c[(0, 0)] + 2.0).abs() < 1e-14);

        assert!(equivalent_per(&hermite(1), &ens, 2, 7, 0).unwrap().amax() == 0.0);
        assert!(equivalent_per(&hermite(3), &ens, 1, 7, 0).is_err());
        assert!(equivalent_per(&Polynomial::monomial(3), &ens, 2, 7, 0).unwrap().amax() == 0.0);
        let p3 = equivalent_per(&hermite(3), &ens, 3, 7, 0).unwrap();
        assert!((p3 - per_noise(&ens, 3, 7, 0)).amax() < 1e-15);

        assert!(equivalent_def(&Polynomial::monomial(3), &ens).amax() == 0.0);
        let skew = EntryLaw::skewed(r(2, 1), r(-1, 2), r(1, 5)).unwrap();
        let mut sk = ens.clone();
        sk.law_w = skew.clone();
        sk.law_x = skew;
        let d = equivalent_def(&Polynomial::monomial(3), &sk);
        // (m3 m3 / 6N) · 6 per entry with unit profiles
        assert!(d.iter().all(|&v| (v - 2.25 / 45.0).abs() < 1e-15));
        assert!(equivalent_def(&Polynomial::monomial(1), &sk).amax() == 0.0);
    }

    #[test]
    fn per_noise_examples() {
        let layout = BlockLayout::new(30, 40, 50).unwrap();
        let ens = ProfiledEnsemble::gaussian(layout);
        let fam = per_noise_family(&ens, 5, 3, 0);
        let (r_, c_) = (40, 50);
        assert!(per_noise_apply(&hermite(1), &fam, r_, c_).amax() == 0.0);
        let y3 = per_noise_apply(&Polynomial::monomial(3), &fam, r_, c_);
        assert!((&y3 - &fam[&3]).amax() < 1e-15);
        // √6·Z1 with Z1 of variance ψ0/N
        let var = y3.map(|v| v * v).mean() / 6.0;
        let target = 0.25 / 120.0;
        assert!((var - target).abs() < 0.1 * target, "{var} vs {target}");
        let y5 = per_noise_apply(&Polynomial::monomial(5), &fam, r_, c_);
        let z1 = &fam[&3] / 6f64.sqrt();
        let z2 = &fam[&5] / 120f64.sqrt();
        let expected = &z1 * (10.0 * 6f64.sqrt()) + &z2 * (2.0 * 30f64.sqrt());
        assert!((y5 - expected).amax() < 1e-12);
    }

    #[test]
    fn binary_round_trip() {
        let dir = std::env::temp_dir().join(format!("pwt-bin-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.bin");
        let m = DMatrix::from_fn(3, 2, |i, j| i as f64 - 0.5 * j as f64);
        write_matrix_binary(&path, &m).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 + 48);
        assert_eq!(read_matrix_binary(&path).unwrap(), m);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn hermite_lin_coefficient_vanishes_at_unit_scale() {
        for n in 2..=7 {
            let p = expect_derivative_scaled(&hermite(n), 1);
            assert!(p.eval(&Rational::one()).is_zero(), "n = {n}");
            // Symbolic check: E[g_n'(ξμ)] = n E[g_{n-1}(ξμ)].
            let direct = Polynomial::from_power(
                hermite(n - 1)
                    .power_coeffs()
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * crate::hermite::gaussian_moment(k) * Rational::from_integer(BigInt::from(n)))
                    .collect(),
            );
            assert_eq!(p, direct);
            let half = r(1, 2);
            if n % 2 == 1 {
                assert!(!p.eval(&half).is_zero());
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn z_lambda_matches_loops(seed in any::<u64>(), n0 in 1usize..9, which in 0usize..11) {
            let all: Vec<IntegerPartition> = (1..=4).flat_map(integer_partitions).collect();
            let lambda = &all[which % all.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = int_matrix(&mut rng, 2, n0);
            let x = int_matrix(&mut rng, n0, 2);
            prop_assert_eq!(z_lambda(lambda, &w, &x).unwrap(), z_oracle(lambda, &w, &x));
        }

        #[test]
        fn samplers_are_deterministic(seed in any::<u64>(), trial in 0u64..50) {
            let layout = BlockLayout::new(4, 3, 2).unwrap();
            let ens = ProfiledEnsemble::gaussian(layout);
            prop_assert_eq!(ens.sample_trial(seed, trial), ens.sample_trial(seed, trial));
            let h = Polynomial::monomial(3);
            prop_assert_eq!(equivalent_lin(&h, &ens, seed, trial), equivalent_lin(&h, &ens, seed, trial));
            prop_assert_eq!(per_noise(&ens, 3, seed, trial), per_noise(&ens, 3, seed, trial));
        }
    }
}
