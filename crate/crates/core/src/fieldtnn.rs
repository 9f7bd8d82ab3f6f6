//! Vector fields built from `d × d` one-dimensional factor sources.
//!
//! Basis function `k` has components
//! `Ψ_{k,i}(x) = Π_j φ_{i,j,k}(x_j)`, and a field is `Σ_k u_k Ψ_k`.
//! Network factors are normalized on their own interval; in box domains the
//! tangential trace is then removed by multiplying component `i` with
//! `γ_j(x_j)` for every `j ≠ i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::Matrix;
use crate::error::{Error, Result};
use crate::quadrature::{CompositeRule, QuadratureGrid};
use crate::scalar::Real;
use crate::subnet::{
    Activation, FactorTable, SubnetConfig, SubnetGradient, Subnetwork, SupportWindow,
    TabulatedFactors, Tape,
};

/// Where the factors of one (component, coordinate) slot come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum FactorSource<T> {
    Network(Subnetwork<T>),
    Tabulated(TabulatedFactors),
}

impl<T: Real> FactorSource<T> {
    pub fn rank(&self) -> usize {
        match self {
            FactorSource::Network(n) => n.rank(),
            FactorSource::Tabulated(t) => t.rank(),
        }
    }

    pub fn num_params(&self) -> usize {
        match self {
            FactorSource::Network(n) => n.num_params(),
            FactorSource::Tabulated(_) => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskKind {
    /// `sin(π (x − a)/(b − a))`
    #[default]
    Sine,
    /// `4 (x − a)(b − x)/(b − a)²`
    Polynomial,
}

/// Endpoint-vanishing multipliers `γ_j` on a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryMask<T> {
    pub kind: MaskKind,
    pub bounds: Vec<(T, T)>,
}

impl<T: Real> BoundaryMask<T> {
    pub fn new(kind: MaskKind, bounds: Vec<(T, T)>) -> Self {
        Self { kind, bounds }
    }

    /// `(γ_j(x), γ_j'(x))`, exactly zero at and beyond the endpoints.
    pub fn gamma(&self, j: usize, x: T) -> (T, T) {
        let (a, b) = self.bounds[j];
        if x <= a || x >= b {
            return (T::zero(), T::zero());
        }
        let len = b - a;
        match self.kind {
            MaskKind::Sine => {
                let w = T::PI() / len;
                let (s, c) = (w * (x - a)).sin_cos();
                (s, w * c)
            }
            MaskKind::Polynomial => {
                let c = T::lit(4.0) / (len * len);
                (c * (x - a) * (b - x), c * (a + b - T::lit(2.0) * x))
            }
        }
    }

    /// Whether component `i` carries `γ_j`.
    fn carries(&self, component: usize, coordinate: usize) -> bool {
        component != coordinate
    }
}

/// One signed factor product of a linear differential operator:
/// `sign · ∂_{derivative} Ψ_component`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperatorTerm {
    pub sign: i8,
    pub component: usize,
    pub derivative: Option<usize>,
}

const fn term(sign: i8, component: usize, derivative: Option<usize>) -> OperatorTerm {
    OperatorTerm {
        sign,
        component,
        derivative,
    }
}

/// Output components of a linear operator, each a sum of terms.
pub type Operator = Vec<Vec<OperatorTerm>>;

/// Identity: output `n` is component `n`.
pub fn mass_operator(dim: usize) -> Operator {
    (0..dim).map(|n| vec![term(1, n, None)]).collect()
}

/// `∇·Ψ = Σ_i ∂_i Ψ_i`.
pub fn div_operator(dim: usize) -> Operator {
    vec![(0..dim).map(|i| term(1, i, Some(i))).collect()]
}

/// Scalar curl `∂_1Ψ_2 − ∂_2Ψ_1` in 2D, the vector curl in 3D.
pub fn curl_operator(dim: usize) -> Operator {
    match dim {
        2 => vec![vec![term(1, 1, Some(0)), term(-1, 0, Some(1))]],
        3 => vec![
            vec![term(1, 2, Some(1)), term(-1, 1, Some(2))],
            vec![term(1, 0, Some(2)), term(-1, 2, Some(0))],
            vec![term(1, 1, Some(0)), term(-1, 0, Some(1))],
        ],
        _ => panic!("curl is defined for d = 2, 3"),
    }
}

/// A `d`-component field `Σ_k u_k Ψ_k` of rank `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldTNN<T> {
    dim: usize,
    rank: usize,
    /// `sources[i][j]`: component `i`, coordinate `j`.
    sources: Vec<Vec<FactorSource<T>>>,
    support: Vec<(T, T)>,
    mask: Option<BoundaryMask<T>>,
    coefficients: Vec<T>,
    normalize: bool,
}

/// Architecture of the networks in a trainable field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub rank: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

/// How a compact-support field is restricted to its box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SupportKind {
    /// Every component vanishes on the whole box boundary.
    #[default]
    Full,
    /// Component `i` vanishes only on the faces tangential to it; along
    /// coordinate `i` it is cut off at the box without a boundary zero.
    Tangential,
}

/// Deterministic per-slot seed.
pub fn mix_seed(seed: u64, slot: u64) -> u64 {
    let mut z = seed ^ slot.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl<T: Real> FieldTNN<T> {
    /// Trainable field on the box `support` whose tangential trace vanishes
    /// on the box boundary.
    pub fn masked(
        support: Vec<(T, T)>,
        shape: &NetworkShape,
        mask: MaskKind,
        seed: u64,
    ) -> Result<Self> {
        let dim = support.len();
        let mut field = Self::networks(support.clone(), shape, None, seed)?;
        field.mask = Some(BoundaryMask::new(mask, support));
        debug_assert_eq!(field.dim, dim);
        Ok(field)
    }

    /// Trainable field whose factors all vanish outside the box `support`.
    pub fn compact(support: Vec<(T, T)>, shape: &NetworkShape, seed: u64) -> Result<Self> {
        Self::compact_with(support, shape, SupportKind::Full, seed)
    }

    /// Trainable field restricted to the box `support` in the given way.
    pub fn compact_with(
        support: Vec<(T, T)>,
        shape: &NetworkShape,
        kind: SupportKind,
        seed: u64,
    ) -> Result<Self> {
        let dim = support.len();
        let windows = (0..dim)
            .map(|i| {
                support
                    .iter()
                    .enumerate()
                    .map(|(j, &(a, b))| match kind {
                        SupportKind::Tangential if i == j => SupportWindow::cutoff(a, b),
                        _ => SupportWindow::compact(a, b),
                    })
                    .collect()
            })
            .collect();
        Self::networks(support, shape, Some(windows), seed)
    }

    fn networks(
        support: Vec<(T, T)>,
        shape: &NetworkShape,
        windows: Option<Vec<Vec<SupportWindow<T>>>>,
        seed: u64,
    ) -> Result<Self> {
        let dim = support.len();
        if !(2..=3).contains(&dim) {
            return Err(Error::InvalidArgument(format!("dimension {dim} not in {{2, 3}}")));
        }
        for &(a, b) in &support {
            if !(a < b) {
                return Err(Error::InvalidArgument(format!("empty interval [{a}, {b}]")));
            }
        }
        let mut sources = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut row = Vec::with_capacity(dim);
            for j in 0..dim {
                let mut cfg = SubnetConfig::new(shape.hidden.clone(), shape.rank, shape.activation);
                if let Some(w) = &windows {
                    cfg = cfg.with_support(w[i][j]);
                }
                let net = Subnetwork::init(&cfg, mix_seed(seed, (i * dim + j) as u64))?;
                row.push(FactorSource::Network(net));
            }
            sources.push(row);
        }
        Ok(Self {
            dim,
            rank: shape.rank,
            sources,
            support,
            mask: None,
            coefficients: vec![T::one(); shape.rank],
            normalize: true,
        })
    }

    /// Closed-form field used verbatim: no normalization, no mask.
    /// `forms[i][j]` are the factors of component `i` along coordinate `j`.
    pub fn tabulated(support: Vec<(T, T)>, forms: Vec<Vec<TabulatedFactors>>) -> Result<Self> {
        let dim = support.len();
        if forms.len() != dim || forms.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("need d × d factor sources".into()));
        }
        let rank = forms[0][0].rank();
        let sources = forms
            .into_iter()
            .map(|r| r.into_iter().map(FactorSource::Tabulated).collect())
            .collect();
        Self::from_sources(support, sources, None, false, vec![T::one(); rank])
    }

    pub fn from_sources(
        support: Vec<(T, T)>,
        sources: Vec<Vec<FactorSource<T>>>,
        mask: Option<BoundaryMask<T>>,
        normalize: bool,
        coefficients: Vec<T>,
    ) -> Result<Self> {
        let dim = support.len();
        if sources.len() != dim || sources.iter().any(|r| r.len() != dim) {
            return Err(Error::InvalidArgument("need d × d factor sources".into()));
        }
        let rank = sources[0][0].rank();
        if sources.iter().flatten().any(|s| s.rank() != rank) {
            return Err(Error::InvalidArgument("all factor sources must share the rank".into()));
        }
        if coefficients.len() != rank {
            return Err(Error::LengthMismatch {
                expected: rank,
                got: coefficients.len(),
            });
        }
        Ok(Self {
            dim,
            rank,
            sources,
            support,
            mask,
            coefficients,
            normalize,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn support(&self) -> &[(T, T)] {
        &self.support
    }

    pub fn mask(&self) -> Option<&BoundaryMask<T>> {
        self.mask.as_ref()
    }

    pub fn source(&self, component: usize, coordinate: usize) -> &FactorSource<T> {
        &self.sources[component][coordinate]
    }

    pub fn coefficients(&self) -> &[T] {
        &self.coefficients
    }

    pub fn set_coefficients(&mut self, u: &[T]) -> Result<()> {
        if u.len() != self.rank {
            return Err(Error::LengthMismatch {
                expected: self.rank,
                got: u.len(),
            });
        }
        self.coefficients.copy_from_slice(u);
        Ok(())
    }

    /// Returns the field with `mask` applied to its components.
    pub fn apply_boundary_mask(mut self, mask: BoundaryMask<T>) -> Result<Self> {
        if mask.bounds.len() != self.dim {
            return Err(Error::InvalidArgument("mask dimension mismatch".into()));
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn num_params(&self) -> usize {
        self.sources.iter().flatten().map(FactorSource::num_params).sum()
    }

    /// Network parameters in component-major, coordinate-minor order.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for s in self.sources.iter().flatten() {
            if let FactorSource::Network(n) = s {
                out.extend(n.params());
            }
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for s in self.sources.iter_mut().flatten() {
            if let FactorSource::Network(n) = s {
                let len = n.num_params();
                n.set_params(&flat[off..off + len])?;
                off += len;
            }
        }
        Ok(())
    }

    /// Factor tables on the per-coordinate rules of `grid`.
    pub fn eval_component_tables(&self, grid: &QuadratureGrid<T>) -> Result<FieldTables<T>> {
        if grid.dim() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "grid dimension {} does not match field dimension {}",
                grid.dim(),
                self.dim
            )));
        }
        let d = self.dim;
        let slots: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).collect();
        let evaluated: Vec<Result<SlotState<T>>> = slots
            .par_iter()
            .map(|&(i, j)| self.eval_slot(i, j, grid.axis(j)))
            .collect();
        let mut states = Vec::with_capacity(d);
        let mut it = evaluated.into_iter();
        for _ in 0..d {
            let mut row = Vec::with_capacity(d);
            for _ in 0..d {
                row.push(it.next().expect("one state per slot")?);
            }
            states.push(row);
        }
        Ok(FieldTables {
            dim: d,
            rank: self.rank,
            weights: grid.axes().iter().map(|r| r.weights().to_vec()).collect(),
            nodes: grid.axes().iter().map(|r| r.nodes().to_vec()).collect(),
            states,
        })
    }

    fn eval_slot(&self, i: usize, j: usize, rule: &CompositeRule<T>) -> Result<SlotState<T>> {
        let nodes = rule.nodes();
        let (raw, tape) = match &self.sources[i][j] {
            FactorSource::Network(n) => {
                let (t, tape) = n.forward_tape(nodes);
                (t, Some(tape))
            }
            FactorSource::Tabulated(t) => (t.tabulate(nodes), None),
        };
        let normalized = if self.normalize && tape.is_some() {
            raw.normalize(rule)?
        } else {
            raw
        };
        let gamma = match &self.mask {
            Some(m) if m.carries(i, j) => Some(
                nodes
                    .iter()
                    .map(|&x| m.gamma(j, x))
                    .unzip::<T, T, Vec<T>, Vec<T>>(),
            ),
            _ => None,
        };
        let table = match &gamma {
            None => normalized.clone(),
            Some((g, dg)) => {
                let mut t = normalized.clone();
                for k in 0..t.rank() {
                    let v = normalized.values.row(k);
                    let dv = normalized.derivatives.row(k);
                    let (tv, td) = (t.values.row_mut(k), &mut Vec::new());
                    for l in 0..v.len() {
                        tv[l] = v[l] * g[l];
                    }
                    td.extend((0..v.len()).map(|l| dv[l] * g[l] + v[l] * dg[l]));
                    t.derivatives.row_mut(k).copy_from_slice(td);
                }
                t
            }
        };
        Ok(SlotState {
            table,
            pre_mask: normalized,
            gamma,
            tape,
        })
    }

    /// Component values at arbitrary points, using the normalization
    /// recorded in `tables`.
    pub fn eval_points(&self, tables: &FieldTables<T>, points: &[Vec<T>]) -> Vec<Vec<T>> {
        let d = self.dim;
        let mut out = vec![vec![T::zero(); d]; points.len()];
        for (i, comp) in (0..d).map(|i| (i, self.point_component(tables, i, points))) {
            for (o, v) in out.iter_mut().zip(comp) {
                o[i] = v;
            }
        }
        out
    }

    fn point_component(&self, tables: &FieldTables<T>, i: usize, points: &[Vec<T>]) -> Vec<T> {
        let d = self.dim;
        let p = self.rank;
        let mut prod = Matrix::from_vec(p, points.len(), vec![T::one(); p * points.len()]);
        for j in 0..d {
            let xs: Vec<T> = points.iter().map(|x| x[j]).collect();
            let raw = match &self.sources[i][j] {
                FactorSource::Network(n) => n.forward_with_derivative(&xs).values,
                FactorSource::Tabulated(t) => t.tabulate(&xs).values,
            };
            let norms = tables.states[i][j].pre_mask.norms.as_ref();
            for k in 0..p {
                let inv = norms.map_or(T::one(), |n| T::one() / n[k]);
                for (l, &x) in xs.iter().enumerate() {
                    let g = match &self.mask {
                        Some(m) if m.carries(i, j) => m.gamma(j, x).0,
                        _ => T::one(),
                    };
                    prod[(k, l)] *= raw[(k, l)] * inv * g;
                }
            }
        }
        (0..points.len())
            .map(|l| (0..p).map(|k| self.coefficients[k] * prod[(k, l)]).sum())
            .collect()
    }

    /// Reverse pass: maps adjoints of the final tables to parameter
    /// gradients in [`params`](Self::params) order.
    pub fn backward(&self, tables: &FieldTables<T>, adjoints: &TableAdjoints<T>) -> Vec<T> {
        let d = self.dim;
        let slots: Vec<(usize, usize)> = (0..d).flat_map(|i| (0..d).map(move |j| (i, j))).collect();
        let grads: Vec<Option<SubnetGradient<T>>> = slots
            .par_iter()
            .map(|&(i, j)| self.backward_slot(tables, adjoints, i, j))
            .collect();
        let mut out = Vec::with_capacity(self.num_params());
        for g in grads.into_iter().flatten() {
            out.extend(g.flatten());
        }
        out
    }

    fn backward_slot(
        &self,
        tables: &FieldTables<T>,
        adjoints: &TableAdjoints<T>,
        i: usize,
        j: usize,
    ) -> Option<SubnetGradient<T>> {
        let net = match &self.sources[i][j] {
            FactorSource::Network(n) => n,
            FactorSource::Tabulated(_) => return None,
        };
        let st = &tables.states[i][j];
        let (av, ad) = &adjoints.slots[i][j];
        let (p, q) = (st.table.rank(), st.table.len());
        let (mut bv, mut bd) = match &st.gamma {
            None => (av.clone(), ad.clone()),
            Some((g, dg)) => {
                let mut bv = Matrix::zeros(p, q);
                let mut bd = Matrix::zeros(p, q);
                for k in 0..p {
                    for l in 0..q {
                        bv[(k, l)] = av[(k, l)] * g[l] + ad[(k, l)] * dg[l];
                        bd[(k, l)] = ad[(k, l)] * g[l];
                    }
                }
                (bv, bd)
            }
        };
        if self.normalize {
            if let Some(norms) = &st.pre_mask.norms {
                let (rv, rd) =
                    st.pre_mask
                        .normalize_backward(norms, &tables.weights[j], &bv, &bd);
                bv = rv;
                bd = rd;
            }
        }
        let tape = st.tape.as_ref().expect("network slot keeps its tape");
        Some(net.backward_tape(tape, &bv, &bd))
    }

    /// Factored form of every component.
    pub fn eval_components(&self, tables: &FieldTables<T>) -> Vec<FactoredField<T>> {
        self.apply_operator(tables, &mass_operator(self.dim))
    }

    /// Factored divergence.
    pub fn eval_divergence(&self, tables: &FieldTables<T>) -> FactoredField<T> {
        self.apply_operator(tables, &div_operator(self.dim))
            .pop()
            .expect("divergence has one output")
    }

    /// Factored curl: one output in 2D, three in 3D.
    pub fn eval_curl(&self, tables: &FieldTables<T>) -> Vec<FactoredField<T>> {
        self.apply_operator(tables, &curl_operator(self.dim))
    }

    pub fn apply_operator(&self, tables: &FieldTables<T>, op: &Operator) -> Vec<FactoredField<T>> {
        op.iter()
            .map(|terms| FactoredField {
                coefficients: self.coefficients.clone(),
                terms: terms
                    .iter()
                    .map(|t| {
                        let factors = (0..self.dim)
                            .map(|j| {
                                let tab = &tables.states[t.component][j].table;
                                if t.derivative == Some(j) {
                                    tab.derivatives.clone()
                                } else {
                                    tab.values.clone()
                                }
                            })
                            .collect();
                        (T::lit(f64::from(t.sign)), factors)
                    })
                    .collect(),
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
struct SlotState<T> {
    /// Final table, mask folded in.
    table: FactorTable<T>,
    /// Table before the mask (normalized for network sources).
    pre_mask: FactorTable<T>,
    gamma: Option<(Vec<T>, Vec<T>)>,
    tape: Option<Tape<T>>,
}

/// Evaluated factor tables of a field on a tensor grid, plus what the
/// reverse pass needs.
#[derive(Clone, Debug)]
pub struct FieldTables<T> {
    dim: usize,
    rank: usize,
    weights: Vec<Vec<T>>,
    nodes: Vec<Vec<T>>,
    states: Vec<Vec<SlotState<T>>>,
}

impl<T: Real> FieldTables<T> {
    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Final table of component `i` along coordinate `j`.
    #[inline]
    pub fn table(&self, i: usize, j: usize) -> &FactorTable<T> {
        &self.states[i][j].table
    }

    pub fn nodes(&self, j: usize) -> &[T] {
        &self.nodes[j]
    }

    pub fn weights(&self, j: usize) -> &[T] {
        &self.weights[j]
    }

    pub fn zero_adjoints(&self) -> TableAdjoints<T> {
        TableAdjoints {
            slots: self
                .states
                .iter()
                .map(|row| {
                    row.iter()
                        .map(|s| {
                            let (p, q) = (s.table.rank(), s.table.len());
                            (Matrix::zeros(p, q), Matrix::zeros(p, q))
                        })
                        .collect()
                })
                .collect(),
        }
    }
}

/// Adjoints `(values, derivatives)` for every final table.
#[derive(Clone, Debug, PartialEq)]
pub struct TableAdjoints<T> {
    pub slots: Vec<Vec<(Matrix<T>, Matrix<T>)>>,
}

/// `Σ_k u_k Σ_t s_t Π_j F_{t,j}[k, ·]` on a tensor grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FactoredField<T> {
    pub coefficients: Vec<T>,
    /// `(sign, per-coordinate p × Q_j factor samples)`
    pub terms: Vec<(T, Vec<Matrix<T>>)>,
}

impl<T: Real> FactoredField<T> {
    pub fn shape(&self) -> Vec<usize> {
        self.terms
            .first()
            .map(|(_, f)| f.iter().map(Matrix::cols).collect())
            .unwrap_or_default()
    }

    /// Value at the grid multi-index `idx`.
    pub fn at(&self, idx: &[usize]) -> T {
        let mut total = T::zero();
        for (sign, factors) in &self.terms {
            let mut s = T::zero();
            for (k, &u) in self.coefficients.iter().enumerate() {
                let mut prod = u;
                for (j, f) in factors.iter().enumerate() {
                    prod *= f[(k, idx[j])];
                }
                s += prod;
            }
            total += *sign * s;
        }
        total
    }

    /// All grid values, last coordinate fastest.
    pub fn materialize(&self) -> Vec<T> {
        let shape = self.shape();
        let total: usize = shape.iter().product();
        let mut idx = vec![0usize; shape.len()];
        let mut out = Vec::with_capacity(total);
        for _ in 0..total {
            out.push(self.at(&idx));
            for j in (0..shape.len()).rev() {
                idx[j] += 1;
                if idx[j] < shape[j] {
                    break;
                }
                idx[j] = 0;
            }
        }
        out
    }

    /// `∫ f²` with the tensor rule of `tables`, computed from 1D integrals.
    pub fn squared_norm(&self, tables: &FieldTables<T>) -> T {
        let p = self.coefficients.len();
        let mut total = T::zero();
        for (sa, fa) in &self.terms {
            for (sb, fb) in &self.terms {
                let mut gram = Matrix::from_vec(p, p, vec![T::one(); p * p]);
                for j in 0..fa.len() {
                    let w = tables.weights(j);
                    for k in 0..p {
                        for m in 0..p {
                            let s: T = (0..w.len())
                                .map(|l| w[l] * fa[j][(k, l)] * fb[j][(m, l)])
                                .sum();
                            gram[(k, m)] *= s;
                        }
                    }
                }
                total += *sa * *sb * gram.bilinear(&self.coefficients, &self.coefficients);
            }
        }
        total
    }
}

/// Writes sampled fields as CSV: `x1,x2[,x3],E1,E2[,E3],normE`.
pub fn write_field_csv<T: Real, W: std::io::Write>(
    mut out: W,
    points: &[Vec<T>],
    values: &[Vec<T>],
) -> Result<()> {
    let d = points.first().map_or(0, Vec::len);
    let mut header: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    header.extend((1..=d).map(|i| format!("E{i}")));
    header.push("normE".into());
    writeln!(out, "{}", header.join(","))?;
    for (x, e) in points.iter().zip(values) {
        let norm = e.iter().map(|&v| v * v).sum::<T>().sqrt();
        let row: Vec<String> = x
            .iter()
            .chain(e.iter())
            .chain(std::iter::once(&norm))
            .map(|v| format!("{:e}", v.as_f64()))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}
