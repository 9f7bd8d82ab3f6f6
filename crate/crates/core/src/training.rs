//! Loss, optimizer and training loops.
//!
//! Each step evaluates every basis group on its quadrature grid, assembles
//! `S`, `M`, `D`, solves the generalized problem and minimizes the sum of
//! the `𝓜` smallest single losses `λ_k + β ρ_k`, where
//! `ρ_k = U_kᵀ D U_k / U_kᵀ S U_k`. The coefficient vectors `U_k` are held
//! fixed inside `ρ_k`; `λ_k` is differentiated exactly through
//! `dλ = Uᵀ(dS − λ dM)U`.

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_backward, assemble_blocks, AssemblyCache, GroupView, Layout, SpectralSystem,
    SystemAdjoint,
};
use crate::dense::Matrix;
use crate::domains::{relative_error, DomainSpec};
use crate::error::{Error, Result};
use crate::fieldtnn::{mix_seed, FieldTNN, FieldTables, MaskKind, NetworkShape, SupportKind};
use crate::geig::{clusters, solve_generalized, EigenResult};
use crate::quadrature::QuadratureGrid;
use crate::scalar::Real;
use crate::subnet::Activation;

fn default_beta() -> f64 {
    1.0
}
fn default_lr() -> f64 {
    3e-4
}
fn default_cluster_tol() -> f64 {
    1e-6
}
fn default_threshold() -> f64 {
    10.0
}
fn default_cadence() -> usize {
    500
}
fn default_stabilization() -> f64 {
    1e-12
}
fn default_rank() -> usize {
    20
}
fn default_hidden() -> Vec<usize> {
    vec![40, 40]
}
fn default_panels() -> usize {
    16
}
fn default_points() -> usize {
    8
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// How derivatives of eigenvalues inside a numerical cluster are formed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterHandling {
    /// Differentiate the cluster trace, weighted by the tracked fraction.
    #[default]
    SubspaceTrace,
    /// Fail when a tracked eigenvalue is not simple.
    Reject,
}

/// How the filter-ratio term is differentiated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoGradient {
    /// Coefficient vectors held fixed; only `D` and `S` are differentiated.
    #[default]
    Frozen,
    /// Also differentiates the coefficient vectors through the eigenproblem.
    Full,
}

/// Network architecture and quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Rank of every group without its own rank.
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub mask: MaskKind,
    /// Panels per axis over the full domain extent.
    #[serde(default = "default_panels")]
    pub panels: usize,
    #[serde(default = "default_points")]
    pub points: usize,
    /// Restriction of the group fields on decomposed domains.
    #[serde(default)]
    pub support: SupportKind,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rank: default_rank(),
            hidden: default_hidden(),
            activation: Activation::Sine,
            mask: MaskKind::Sine,
            panels: default_panels(),
            points: default_points(),
            support: SupportKind::Full,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub model: ModelConfig,
    /// `𝓜`, the number of tracked eigenpairs.
    pub tracked: usize,
    /// `β`
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// `η`
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    /// `ℋ`
    pub steps: usize,
    #[serde(default)]
    pub adam: AdamParams,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cluster_tol")]
    pub cluster_tol: f64,
    #[serde(default)]
    pub cluster_handling: ClusterHandling,
    #[serde(default)]
    pub rho_gradient: RhoGradient,
    /// `ρ*`
    #[serde(default = "default_threshold")]
    pub spurious_threshold: f64,
    #[serde(default = "default_cadence")]
    pub cadence: usize,
    #[serde(default = "default_stabilization")]
    pub stabilization: f64,
    /// Written every `cadence` steps when set.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            tracked: 4,
            beta: default_beta(),
            learning_rate: default_lr(),
            steps: 20_000,
            adam: AdamParams::default(),
            seed: 0,
            cluster_tol: default_cluster_tol(),
            cluster_handling: ClusterHandling::default(),
            rho_gradient: RhoGradient::default(),
            spurious_threshold: default_threshold(),
            cadence: default_cadence(),
            stabilization: default_stabilization(),
            checkpoint: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, domain: &DomainSpec) -> Result<()> {
        let m = &self.model;
        let min_rank = domain
            .groups
            .iter()
            .map(|g| g.rank.unwrap_or(m.rank))
            .sum::<usize>();
        let bad = |s: &str| Err(Error::InvalidArgument(s.into()));
        if m.rank == 0 {
            return bad("rank must be positive");
        }
        if m.hidden.is_empty() || m.hidden.contains(&0) {
            return bad("hidden layers must be non-empty with positive widths");
        }
        if m.panels == 0 || m.points == 0 {
            return bad("quadrature panels and points must be positive");
        }
        if self.tracked == 0 || self.tracked > min_rank {
            return bad("tracked count must lie in 1..=total rank");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be non-negative");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.cluster_tol > 0.0 && self.stabilization > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.spurious_threshold > 0.0) {
            return bad("spurious threshold must be positive");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return bad("invalid Adam parameters");
        }
        domain.validate()
    }
}

/// Floor under which `U_kᵀ S U_k` counts as zero: `1e-12 · tr S / p`.
pub fn ratio_floor<T: Real>(s: &Matrix<T>) -> T {
    T::lit(1e-12) * s.trace().abs() / T::from_usize_lossy(s.rows().max(1))
}

/// `ρ = uᵀ D u / uᵀ S u`, or `+∞` when the denominator is below `floor`.
pub fn filter_ratio<T: Real>(u: &[T], d: &Matrix<T>, s: &Matrix<T>, floor: T) -> T {
    let den = s.bilinear(u, u);
    if den < floor {
        return T::infinity();
    }
    d.bilinear(u, u) / den
}

/// Sum of the `tracked` smallest `λ_k + β ρ_k` over entries with finite
/// `ρ`. Returns the loss and the chosen indices in order of single loss;
/// fewer indices than requested when too few are finite.
pub fn loss<T: Real>(lambda: &[T], rho: &[T], beta: T, tracked: usize) -> (T, Vec<usize>) {
    let mut idx: Vec<usize> = (0..lambda.len()).filter(|&k| rho[k].is_finite()).collect();
    let single = |k: usize| lambda[k] + beta * rho[k];
    idx.sort_by(|&a, &b| {
        single(a)
            .partial_cmp(&single(b))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(tracked);
    let total = idx.iter().map(|&k| single(k)).sum();
    (total, idx)
}

/// Adjoints of `S`, `M`, `D` for the loss.
#[allow(clippy::too_many_arguments)]
pub fn loss_adjoint<T: Real>(
    eig: &EigenResult<T>,
    system: &SpectralSystem<T>,
    rho_parts: &[(T, T)],
    chosen: &[usize],
    beta: T,
    cluster_tol: T,
    handling: ClusterHandling,
    rho_gradient: RhoGradient,
) -> Result<SystemAdjoint<T>> {
    let n = system.size();
    let mut adj = SystemAdjoint::zeros(n);
    let groups = clusters(&eig.values, cluster_tol);
    for range in &groups {
        let hits = chosen.iter().filter(|k| range.contains(k)).count();
        if hits == 0 {
            continue;
        }
        if range.len() > 1 && handling == ClusterHandling::Reject {
            let k = chosen.iter().copied().find(|k| range.contains(k)).unwrap_or(range.start);
            return Err(Error::ClusteredEigenvalue { index: k });
        }
        let weight = T::from_usize_lossy(hits) / T::from_usize_lossy(range.len());
        let mean = range.clone().map(|k| eig.values[k]).sum::<T>()
            / T::from_usize_lossy(range.len());
        for k in range.clone() {
            let u = &eig.vectors[k];
            adj.s.add_outer(weight, u, u);
            adj.m.add_outer(-weight * mean, u, u);
        }
    }
    if beta <= T::zero() {
        return Ok(adj);
    }
    let half = T::lit(0.5);
    for &k in chosen {
        let u = &eig.vectors[k];
        let (d, s) = rho_parts[k];
        adj.d.add_outer(beta / s, u, u);
        adj.s.add_outer(-beta * d / (s * s), u, u);
        if rho_gradient == RhoGradient::Frozen {
            continue;
        }
        // ∂ρ/∂u = 2 (D u − ρ S u) / s, pushed through
        // du = Σ_l u_l u_lᵀ (dS − λ dM) u / (λ − λ_l).
        let rho = d / s;
        let du = system.d.matvec(u);
        let su = system.s.matvec(u);
        let g: Vec<T> = du
            .iter()
            .zip(&su)
            .map(|(&a, &b)| T::lit(2.0) * (a - rho * b) / s)
            .collect();
        let own = groups.iter().find(|r| r.contains(&k)).cloned().unwrap_or(k..k + 1);
        let lam = eig.values[k];
        for (l, ul) in eig.vectors.iter().enumerate() {
            if own.contains(&l) {
                continue;
            }
            let c = beta * crate::dense::dot(ul, &g) / (lam - eig.values[l]);
            adj.s.add_outer(c * half, ul, u);
            adj.s.add_outer(c * half, u, ul);
            adj.m.add_outer(-lam * c * half, ul, u);
            adj.m.add_outer(-lam * c * half, u, ul);
        }
    }
    Ok(adj)
}

/// Adam moments and step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub params: AdamParams,
    pub m: Vec<T>,
    pub v: Vec<T>,
    pub t: u64,
}

impl<T: Real> Adam<T> {
    pub fn new(n: usize, params: AdamParams) -> Self {
        Self {
            params,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
            t: 0,
        }
    }

    /// One bias-corrected update. A non-finite gradient leaves parameters
    /// and state untouched.
    pub fn step(&mut self, x: &mut [T], grad: &[T], lr: T) -> Result<()> {
        if grad.len() != x.len() || x.len() != self.m.len() {
            return Err(Error::LengthMismatch {
                expected: self.m.len(),
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient"));
        }
        let (b1, b2) = (T::lit(self.params.beta1), T::lit(self.params.beta2));
        let eps = T::lit(self.params.epsilon);
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        for i in 0..x.len() {
            let g = grad[i];
            self.m[i] = b1 * self.m[i] + (T::one() - b1) * g;
            self.v[i] = b2 * self.v[i] + (T::one() - b2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            x[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }
}

/// One basis group: a field and where it lives on the layout.
#[derive(Clone, Debug)]
pub struct ModelGroup<T> {
    pub field: FieldTNN<T>,
    pub spans: Vec<Range<usize>>,
    pub grid: QuadratureGrid<T>,
}

/// All basis groups of a domain on a shared quadrature layout.
#[derive(Clone, Debug)]
pub struct Model<T> {
    pub layout: Layout<T>,
    pub groups: Vec<ModelGroup<T>>,
}

/// Everything one forward evaluation produces.
#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub tables: Vec<FieldTables<T>>,
    pub system: SpectralSystem<T>,
    cache: AssemblyCache<T>,
}

impl<T: Real> Model<T> {
    /// Freshly initialized networks for `domain`.
    pub fn new(domain: &DomainSpec, config: &ModelConfig, seed: u64) -> Result<Self> {
        let shape = |g: usize| NetworkShape {
            rank: domain.groups[g].rank.unwrap_or(config.rank),
            hidden: config.hidden.clone(),
            activation: config.activation,
        };
        let fields = (0..domain.groups.len())
            .map(|g| {
                let bounds = domain.group_bounds(g);
                let s = mix_seed(seed, 1000 + g as u64);
                if domain.decomposed {
                    FieldTNN::compact_with(bounds, &shape(g), config.support, s)
                } else {
                    FieldTNN::masked(bounds, &shape(g), config.mask, s)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_fields(domain, config.panels, config.points, fields)
    }

    /// Wraps given fields, one per group of `domain`.
    pub fn with_fields(
        domain: &DomainSpec,
        panels: usize,
        points: usize,
        fields: Vec<FieldTNN<T>>,
    ) -> Result<Self> {
        domain.validate()?;
        if fields.len() != domain.groups.len() {
            return Err(Error::LengthMismatch {
                expected: domain.groups.len(),
                got: fields.len(),
            });
        }
        let layout = Layout::new(&domain.layout_tiles(), panels, points)?;
        let groups = fields
            .into_iter()
            .enumerate()
            .map(|(g, field)| {
                let spans = layout.spans(&domain.group_bounds::<T>(g))?;
                let grid = layout.grid(&spans)?;
                Ok(ModelGroup { field, spans, grid })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { layout, groups })
    }

    pub fn size(&self) -> usize {
        self.groups.iter().map(|g| g.field.rank()).sum()
    }

    pub fn num_params(&self) -> usize {
        self.groups.iter().map(|g| g.field.num_params()).sum()
    }

    pub fn params(&self) -> Vec<T> {
        self.groups.iter().flat_map(|g| g.field.params()).collect()
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::LengthMismatch {
                expected: self.num_params(),
                got: flat.len(),
            });
        }
        let mut off = 0;
        for g in &mut self.groups {
            let n = g.field.num_params();
            g.field.set_params(&flat[off..off + n])?;
            off += n;
        }
        Ok(())
    }

    pub fn evaluate(&self) -> Result<Evaluation<T>> {
        let tables = self
            .groups
            .par_iter()
            .map(|g| g.field.eval_component_tables(&g.grid))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<GroupView<'_, T>> = tables
            .iter()
            .zip(&self.groups)
            .map(|(t, g)| GroupView {
                tables: t,
                spans: &g.spans,
            })
            .collect();
        let (system, cache) = assemble_blocks(&self.layout, &views)?;
        Ok(Evaluation {
            tables,
            system,
            cache,
        })
    }

    /// Parameter gradient for given adjoints of `S`, `M`, `D`.
    pub fn gradient(&self, eval: &Evaluation<T>, adj: &SystemAdjoint<T>) -> Vec<T> {
        let views: Vec<GroupView<'_, T>> = eval
            .tables
            .iter()
            .zip(&self.groups)
            .map(|(t, g)| GroupView {
                tables: t,
                spans: &g.spans,
            })
            .collect();
        let tadj = assemble_backward(&self.layout, &views, &eval.cache, adj);
        let per_group: Vec<Vec<T>> = self
            .groups
            .par_iter()
            .zip(eval.tables.par_iter())
            .zip(tadj.par_iter())
            .map(|((g, t), a)| g.field.backward(t, a))
            .collect();
        per_group.into_iter().flatten().collect()
    }

    /// Field values of eigenvector `u` at `points`, summed over groups.
    pub fn eval_points(&self, eval: &Evaluation<T>, u: &[T], points: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
        let dim = self.layout.dim();
        let mut out = vec![vec![T::zero(); dim]; points.len()];
        for (g, (grp, tables)) in self.groups.iter().zip(&eval.tables).enumerate() {
            let off = eval.system.offsets[g];
            let mut field = grp.field.clone();
            field.set_coefficients(&u[off..off + field.rank()])?;
            let vals = field.eval_points(tables, points);
            for (o, v) in out.iter_mut().zip(vals) {
                for i in 0..dim {
                    o[i] += v[i];
                }
            }
        }
        Ok(out)
    }
}

/// Result of one loss evaluation.
#[derive(Clone, Debug)]
pub struct StepState<T> {
    pub eval: Evaluation<T>,
    pub eig: EigenResult<T>,
    /// `(U_kᵀ D U_k, U_kᵀ S U_k)`
    pub rho_parts: Vec<(T, T)>,
    pub rho: Vec<T>,
    pub loss: T,
    pub chosen: Vec<usize>,
}

/// Forward pass: assemble, solve, ratios, loss.
pub fn forward<T: Real>(model: &Model<T>, config: &TrainConfig) -> Result<StepState<T>> {
    let eval = model.evaluate()?;
    let sys = &eval.system;
    let eig = solve_generalized(&sys.s, &sys.m, T::lit(config.stabilization))?;
    if eig.excessive_discards {
        return Err(Error::DegenerateBasis {
            discarded: eig.discarded,
            rank: sys.size(),
        });
    }
    let floor = ratio_floor(&sys.s);
    let rho_parts: Vec<(T, T)> = eig
        .vectors
        .iter()
        .map(|u| (sys.d.bilinear(u, u), sys.s.bilinear(u, u)))
        .collect();
    let rho = rho_parts
        .iter()
        .map(|&(d, s)| if s < floor { T::infinity() } else { d / s })
        .collect::<Vec<_>>();
    let (loss, chosen) = self::loss(&eig.values, &rho, T::lit(config.beta), config.tracked);
    Ok(StepState {
        eval,
        eig,
        rho_parts,
        rho,
        loss,
        chosen,
    })
}

/// Loss and its parameter gradient.
pub fn loss_gradient<T: Real>(
    model: &Model<T>,
    config: &TrainConfig,
) -> Result<(StepState<T>, Vec<T>)> {
    let st = forward(model, config)?;
    let adj = loss_adjoint(
        &st.eig,
        &st.eval.system,
        &st.rho_parts,
        &st.chosen,
        T::lit(config.beta),
        T::lit(config.cluster_tol),
        config.cluster_handling,
        config.rho_gradient,
    )?;
    let grad = model.gradient(&st.eval, &adj);
    Ok((st, grad))
}

/// Progress record written every `cadence` steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    /// Tracked eigenvalues, ascending.
    pub tracked: Vec<f64>,
    pub rho_min: f64,
    pub rho_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EigenEntry {
    /// 1-based rank among raw or filtered entries.
    pub k: usize,
    pub lambda: f64,
    pub lambda_ref: Option<f64>,
    pub rel_err: Option<f64>,
    pub div_seminorm: f64,
    pub curl_seminorm: f64,
    /// `f64::INFINITY` marks a curl-free pair.
    #[serde(with = "inf_as_null")]
    pub rho: f64,
    pub spurious: bool,
}

mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EigenReport {
    /// All pairs, ascending in `λ`.
    pub raw: Vec<EigenEntry>,
    /// Non-spurious pairs, re-ranked, with reference values attached.
    pub filtered: Vec<EigenEntry>,
    pub loss_history: Vec<f64>,
    pub logs: Vec<LogEntry>,
    pub diagnostics: Vec<String>,
    pub steps: usize,
    pub seconds: f64,
}

impl EigenReport {
    /// Best loss seen up to and including `step`.
    pub fn best_loss(&self) -> Option<f64> {
        self.loss_history.iter().copied().fold(None, |b, v| match b {
            Some(b) if b <= v => Some(b),
            _ => Some(v),
        })
    }

    pub fn filtered_values(&self) -> Vec<f64> {
        self.filtered.iter().map(|e| e.lambda).collect()
    }
}

/// Drops pairs with `ρ > ρ*` or sentinel `ρ`, re-ranks the rest and
/// attaches reference values in order.
pub fn filter_spurious(entries: &[EigenEntry], threshold: f64, reference: Option<&[f64]>) -> Vec<EigenEntry> {
    entries
        .iter()
        .filter(|e| e.rho.is_finite() && e.rho <= threshold)
        .enumerate()
        .map(|(i, e)| {
            let lambda_ref = reference.and_then(|r| r.get(i).copied());
            EigenEntry {
                k: i + 1,
                lambda_ref,
                rel_err: lambda_ref.and_then(|r| relative_error(e.lambda, r).ok()),
                spurious: false,
                ..e.clone()
            }
        })
        .collect()
}

/// Post-processing solve: every eigenpair with ratios, seminorms and flags.
pub fn build_report<T: Real>(
    state: &StepState<T>,
    config: &TrainConfig,
    reference: Option<&[f64]>,
) -> EigenReport {
    let raw: Vec<EigenEntry> = state
        .eig
        .values
        .iter()
        .enumerate()
        .map(|(k, &lam)| {
            let (d, s) = state.rho_parts[k];
            let rho = state.rho[k].as_f64();
            EigenEntry {
                k: k + 1,
                lambda: lam.as_f64(),
                lambda_ref: None,
                rel_err: None,
                div_seminorm: d.as_f64().max(0.0).sqrt(),
                curl_seminorm: s.as_f64().max(0.0).sqrt(),
                rho,
                spurious: !(rho.is_finite() && rho <= config.spurious_threshold),
            }
        })
        .collect();
    let filtered = filter_spurious(&raw, config.spurious_threshold, reference);
    EigenReport {
        raw,
        filtered,
        ..EigenReport::default()
    }
}

/// Resumable training state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint<T> {
    pub domain: DomainSpec,
    pub config: TrainConfig,
    pub step: usize,
    pub fields: Vec<FieldTNN<T>>,
    pub adam: Adam<T>,
    pub loss_history: Vec<f64>,
    pub logs: Vec<LogEntry>,
}

impl<T: Real> Checkpoint<T> {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let tmp = path.as_ref().with_extension("tmp");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn model(&self) -> Result<Model<T>> {
        Model::with_fields(
            &self.domain,
            self.config.model.panels,
            self.config.model.points,
            self.fields.clone(),
        )
    }
}

/// Final state of a run.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub report: EigenReport,
    pub model: Model<T>,
    pub checkpoint: Checkpoint<T>,
}

/// Training on a box domain with boundary-masked networks.
pub fn train_tensor<T: Real>(domain: &DomainSpec, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    if domain.decomposed {
        return Err(Error::InvalidArgument(format!(
            "domain `{}` is decomposed; use train_decomposed",
            domain.name
        )));
    }
    train(domain, config)
}

/// Training with one compact-support field per group.
pub fn train_decomposed<T: Real>(
    domain: &DomainSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    if !domain.decomposed {
        return Err(Error::InvalidArgument(format!(
            "domain `{}` has no decomposition; use train_tensor",
            domain.name
        )));
    }
    train(domain, config)
}

/// Either training mode, chosen by the domain.
pub fn train<T: Real>(domain: &DomainSpec, config: &TrainConfig) -> Result<TrainOutcome<T>> {
    config.validate(domain)?;
    let model = Model::new(domain, &config.model, config.seed)?;
    let adam = Adam::new(model.num_params(), config.adam);
    run(domain, config, model, adam, 0, Vec::new(), Vec::new())
}

/// Continues a checkpointed run up to `config.steps` total steps.
pub fn resume<T: Real>(checkpoint: Checkpoint<T>) -> Result<TrainOutcome<T>> {
    let model = checkpoint.model()?;
    run(
        &checkpoint.domain,
        &checkpoint.config,
        model,
        checkpoint.adam,
        checkpoint.step,
        checkpoint.loss_history,
        checkpoint.logs,
    )
}

fn log_entry<T: Real>(step: usize, st: &StepState<T>) -> LogEntry {
    let mut tracked: Vec<f64> = st.chosen.iter().map(|&k| st.eig.values[k].as_f64()).collect();
    tracked.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let rhos = st.chosen.iter().map(|&k| st.rho[k].as_f64());
    let rho_min = rhos.clone().fold(f64::INFINITY, f64::min);
    let rho_max = rhos.fold(0.0, f64::max);
    LogEntry {
        step,
        loss: st.loss.as_f64(),
        tracked,
        rho_min,
        rho_max,
    }
}

#[allow(clippy::too_many_arguments)]
fn run<T: Real>(
    domain: &DomainSpec,
    config: &TrainConfig,
    mut model: Model<T>,
    mut adam: Adam<T>,
    start: usize,
    mut loss_history: Vec<f64>,
    mut logs: Vec<LogEntry>,
) -> Result<TrainOutcome<T>> {
    let t0 = Instant::now();
    let lr = T::lit(config.learning_rate);
    let mut params = model.params();
    let mut diagnostics = Vec::new();
    let cadence = config.cadence.max(1);
    for step in start..config.steps {
        let (st, grad) = loss_gradient(&model, config)?;
        if st.chosen.len() < config.tracked {
            let msg = format!(
                "step {step}: only {} finite single losses, tracking fewer pairs",
                st.chosen.len()
            );
            if diagnostics.len() < 100 {
                warn!("{msg}");
                diagnostics.push(msg);
            }
        }
        loss_history.push(st.loss.as_f64());
        if step % cadence == 0 {
            let e = log_entry(step, &st);
            info!(
                "step {} loss {:.10e} lambda {:?} rho [{:.3e}, {:.3e}]",
                e.step, e.loss, e.tracked, e.rho_min, e.rho_max
            );
            logs.push(e);
        }
        if let Err(e) = adam.step(&mut params, &grad, lr) {
            let msg = format!("step {step}: update skipped ({e})");
            warn!("{msg}");
            diagnostics.push(msg);
            continue;
        }
        model.set_params(&params)?;
        if let Some(path) = &config.checkpoint {
            if (step + 1) % cadence == 0 {
                snapshot(domain, config, &model, &adam, step + 1, &loss_history, &logs).save(path)?;
            }
        }
    }
    let st = forward(&model, config)?;
    let final_step = config.steps.max(start);
    if logs.last().is_none_or(|l| l.step != final_step) {
        logs.push(log_entry(final_step, &st));
    }
    let reference = domain.reference_values(st.eig.len());
    let mut report = build_report(&st, config, reference.as_deref());
    report.loss_history = loss_history.clone();
    report.logs = logs.clone();
    report.diagnostics = diagnostics;
    report.steps = final_step;
    report.seconds = t0.elapsed().as_secs_f64();
    let checkpoint = snapshot(domain, config, &model, &adam, final_step, &loss_history, &logs);
    if let Some(path) = &config.checkpoint {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome {
        report,
        model,
        checkpoint,
    })
}

fn snapshot<T: Real>(
    domain: &DomainSpec,
    config: &TrainConfig,
    model: &Model<T>,
    adam: &Adam<T>,
    step: usize,
    loss_history: &[f64],
    logs: &[LogEntry],
) -> Checkpoint<T> {
    Checkpoint {
        domain: domain.clone(),
        config: config.clone(),
        step,
        fields: model.groups.iter().map(|g| g.field.clone()).collect(),
        adam: adam.clone(),
        loss_history: loss_history.to_vec(),
        logs: logs.to_vec(),
    }
}

/// Post-processing report of a fixed basis, no training.
pub fn evaluate_basis<T: Real>(
    domain: &DomainSpec,
    model: &Model<T>,
    config: &TrainConfig,
) -> Result<(EigenReport, StepState<T>)> {
    let st = forward(model, config)?;
    let reference = domain.reference_values(st.eig.len());
    let report = build_report(&st, config, reference.as_deref());
    Ok((report, st))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_examples() {
        let (l, idx) = loss(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 0.0, 2);
        assert_eq!(l, 3.0);
        assert_eq!(idx, vec![0, 1]);
        let (l, _) = loss(&[1.0, 2.0], &[0.5, 0.5], 2.0, 2);
        assert_eq!(l, 5.0);
        let (l, idx) = loss(&[1.0, 2.0, 3.0], &[0.0, f64::INFINITY, 0.0], 1.0, 2);
        assert_eq!(l, 4.0);
        assert_eq!(idx, vec![0, 2]);
        let (_, idx) = loss(&[1.0, 2.0], &[f64::INFINITY, 0.0], 1.0, 2);
        assert_eq!(idx, vec![1]);
    }

    #[test]
    fn adam_examples() {
        let mut a = Adam::new(2, AdamParams::default());
        let mut x = vec![1.0, -2.0];
        a.step(&mut x, &[0.0, 0.0], 0.1).unwrap();
        assert_eq!(x, vec![1.0, -2.0]);

        let mut a = Adam::new(2, AdamParams::default());
        let mut x = vec![0.0f64, 0.0];
        a.step(&mut x, &[3.0, -0.5], 0.01).unwrap();
        assert!((x[0] + 0.01).abs() < 1e-8);
        assert!((x[1] - 0.01).abs() < 1e-8);

        let mut a = Adam::new(1, AdamParams::default());
        let mut x = vec![1.0];
        assert!(a.step(&mut x, &[f64::NAN], 0.1).is_err());
        assert_eq!((x[0], a.t), (1.0, 0));
    }

    #[test]
    fn adam_minimizes_parabola() {
        let mut a = Adam::new(1, AdamParams::default());
        let mut x = vec![1.0f64];
        for _ in 0..500 {
            let g = 2.0 * x[0];
            a.step(&mut x, &[g], 0.05).unwrap();
        }
        assert!(x[0].abs() < 0.05, "{}", x[0]);
    }

    #[test]
    fn filter_rule() {
        let e = |rho: f64, lambda: f64| EigenEntry {
            k: 0,
            lambda,
            lambda_ref: None,
            rel_err: None,
            div_seminorm: 0.0,
            curl_seminorm: 1.0,
            rho,
            spurious: false,
        };
        let entries = vec![e(1e-6, 1.0), e(1e3, 2.0), e(f64::INFINITY, 0.0), e(1e-6, 3.0)];
        let f = filter_spurious(&entries, 10.0, Some(&[1.0, 2.9]));
        assert_eq!(f.len(), 2);
        assert_eq!(f[1].lambda, 3.0);
        assert_eq!(f[1].k, 2);
        assert_eq!(f[1].lambda_ref, Some(2.9));
        let clean = vec![e(1e-6, 1.0), e(2.0, 2.0)];
        assert_eq!(filter_spurious(&clean, 10.0, None).len(), 2);
    }

    #[test]
    fn ratio_sentinel() {
        let s = Matrix::<f64>::from_diag(&[0.0, 1.0]);
        let d = Matrix::from_diag(&[1.0, 0.0]);
        let floor = ratio_floor(&s);
        assert!(filter_ratio(&[1.0, 0.0], &d, &s, floor).is_infinite());
        assert_eq!(filter_ratio(&[0.0, 1.0], &d, &s, floor), 0.0);
    }

    #[test]
    fn entry_json_roundtrip_with_sentinel() {
        let e = EigenEntry {
            k: 1,
            lambda: 0.0,
            lambda_ref: None,
            rel_err: None,
            div_seminorm: 1.0,
            curl_seminorm: 0.0,
            rho: f64::INFINITY,
            spurious: true,
        };
        let s = serde_json::to_string(&e).unwrap();
        let back: EigenEntry = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }

    #[test]
    fn config_validation() {
        let d = DomainSpec::builtin("square").unwrap();
        let mut c = TrainConfig::default();
        c.validate(&d).unwrap();
        c.tracked = 100;
        assert!(c.validate(&d).is_err());
        let c = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(c.validate(&d).is_err());
    }
}
